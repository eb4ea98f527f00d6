#include "exfilscope/packet.hpp"

#include <cstdio>
#include <stdexcept>

namespace exfilscope {

std::string ipv4_to_string(std::uint32_t ip) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%u.%u.%u.%u", (ip >> 24) & 0xff, (ip >> 16) & 0xff,
                  (ip >> 8) & 0xff, ip & 0xff);
    return buf;
}

std::string mac_to_string(const MacAddr& mac) {
    char buf[18];
    std::snprintf(buf, sizeof buf, "%02x:%02x:%02x:%02x:%02x:%02x", mac[0], mac[1],
                  mac[2], mac[3], mac[4], mac[5]);
    return buf;
}

std::uint32_t parse_ipv4(const std::string& s) {
    unsigned a, b, c, d;
    char tail;
    if (std::sscanf(s.c_str(), "%u.%u.%u.%u%c", &a, &b, &c, &d, &tail) != 4 ||
        a > 255 || b > 255 || c > 255 || d > 255)
        throw std::invalid_argument("bad IPv4 address: " + s);
    return make_ipv4(std::uint8_t(a), std::uint8_t(b), std::uint8_t(c), std::uint8_t(d));
}

}  // namespace exfilscope
