#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "exfilscope/damped_stats.hpp"
#include "exfilscope/packet.hpp"

namespace exfilscope {

// Traffic aggregation key. The four 1D variants key a packet by its source
// fields; the two Pair variants key the direction-normalized flow shared by
// both endpoints.
struct ChannelKey {
    enum class Kind : std::uint8_t {
        SrcMacIp,      // 1D: source MAC + source IP
        SrcDstIp,      // 1D: source IP -> destination IP (directional)
        SrcIp,         // 1D: source IP
        SrcIpPort,     // 1D: source IP + source port
        IpPair,        // 2D: unordered {IP, IP}
        SocketPair,    // 2D: unordered {IP:port, IP:port}
    };

    Kind kind = Kind::SrcIp;
    MacAddr mac{};
    std::uint32_t ip_a = 0;
    std::uint32_t ip_b = 0;
    std::uint16_t port_a = 0;
    std::uint16_t port_b = 0;

    bool operator==(const ChannelKey&) const = default;
};

struct ChannelKeyHash {
    std::size_t operator()(const ChannelKey& k) const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        auto mix = [&h](std::uint64_t v) {
            h ^= v;
            h *= 0x100000001b3ULL;
        };
        mix(static_cast<std::uint64_t>(k.kind));
        std::uint64_t mac = 0;
        for (auto b : k.mac) mac = (mac << 8) | b;
        mix(mac);
        mix((std::uint64_t(k.ip_a) << 32) | k.ip_b);
        mix((std::uint64_t(k.port_a) << 16) | k.port_b);
        return static_cast<std::size_t>(h);
    }
};

// role of the packet against one key: plain 1D update, or which side of a
// normalized 2D pair it feeds
enum class KeyRole : std::uint8_t { OneD, PairSideI, PairSideJ };

struct KeyRef {
    ChannelKey key;
    KeyRole role;
};

// The keys a packet contributes to, in canonical feature order:
// SrcMacIp, SrcDstIp, SrcIp, SrcIpPort, IpPair, SocketPair. Port keys are
// omitted for OtherIp packets; NonIp packets key nothing.
std::vector<KeyRef> keys_for(const PacketMeta& pkt);

}  // namespace exfilscope
