#pragma once

#include <array>
#include <cstdint>
#include <string>

namespace exfilscope {

enum class Transport : std::uint8_t { Tcp, Udp, OtherIp, NonIp };

using MacAddr = std::array<std::uint8_t, 6>;

// Per-frame metadata, the unit of ingestion. Timestamps are seconds relative
// to the start of the capture and are non-decreasing within one capture.
// IP addresses are host-order IPv4. Ports are present only for TCP/UDP;
// addresses are absent only for NonIp frames.
struct PacketMeta {
    double timestamp = 0.0;
    MacAddr src_mac{};
    std::uint32_t src_ip = 0;
    std::uint32_t dst_ip = 0;
    std::uint16_t src_port = 0;
    std::uint16_t dst_port = 0;
    std::uint32_t frame_len = 0;  // original on-wire length, > 0
    Transport transport = Transport::NonIp;

    bool has_ips() const { return transport != Transport::NonIp; }
    bool has_ports() const {
        return transport == Transport::Tcp || transport == Transport::Udp;
    }

    bool operator==(const PacketMeta& o) const {
        if (timestamp != o.timestamp || frame_len != o.frame_len ||
            transport != o.transport || src_mac != o.src_mac)
            return false;
        if (has_ips() && (src_ip != o.src_ip || dst_ip != o.dst_ip)) return false;
        if (has_ports() && (src_port != o.src_port || dst_port != o.dst_port)) return false;
        return true;
    }
};

inline std::uint32_t make_ipv4(std::uint8_t a, std::uint8_t b, std::uint8_t c, std::uint8_t d) {
    return (std::uint32_t(a) << 24) | (std::uint32_t(b) << 16) | (std::uint32_t(c) << 8) | d;
}

std::string ipv4_to_string(std::uint32_t ip);
std::string mac_to_string(const MacAddr& mac);

// "a.b.c.d" -> host-order address; throws std::invalid_argument on bad input
std::uint32_t parse_ipv4(const std::string& s);

}  // namespace exfilscope
