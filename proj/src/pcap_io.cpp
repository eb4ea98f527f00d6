#include "exfilscope/pcap_io.hpp"

#include <cmath>
#include <cstring>

namespace exfilscope {

namespace {

constexpr std::uint32_t kMagicMicro = 0xa1b2c3d4;
constexpr std::uint32_t kMagicMicroSwapped = 0xd4c3b2a1;
constexpr std::uint32_t kMagicNano = 0xa1b23c4d;
constexpr std::uint32_t kMagicNanoSwapped = 0x4d3cb2a1;
constexpr std::uint32_t kLinkEthernet = 1;

constexpr std::uint16_t kEthertypeIpv4 = 0x0800;
constexpr std::uint16_t kEthertypeIpv6 = 0x86dd;
constexpr std::uint16_t kEthertypeVlan = 0x8100;
constexpr std::uint16_t kEthertypeQinQ = 0x88a8;
constexpr std::uint16_t kEthertypeLocalExp = 0x88b5;  // used for NonIp output

std::uint32_t swap32(std::uint32_t v) {
    return ((v & 0xff) << 24) | ((v & 0xff00) << 8) | ((v >> 8) & 0xff00) | (v >> 24);
}

std::uint16_t read_be16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>((p[0] << 8) | p[1]);
}

std::uint32_t read_be32(const std::uint8_t* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | p[3];
}

struct FrameFields {
    MacAddr src_mac{};
    std::uint32_t src_ip = 0, dst_ip = 0;
    std::uint16_t src_port = 0, dst_port = 0;
    Transport transport = Transport::NonIp;
};

// Decodes Ethernet / VLAN / IPv4 / TCP-UDP from one captured record body.
// Anything that cannot be decoded within the captured bytes degrades to
// NonIp; this function must never read past data.size().
FrameFields decode_frame(std::span<const std::uint8_t> data) {
    FrameFields f;
    if (data.size() < 14) return f;
    std::memcpy(f.src_mac.data(), data.data() + 6, 6);

    std::size_t off = 12;
    std::uint16_t ethertype = read_be16(data.data() + off);
    off += 2;
    // skip VLAN tags (possibly stacked)
    while ((ethertype == kEthertypeVlan || ethertype == kEthertypeQinQ) &&
           off + 4 <= data.size()) {
        ethertype = read_be16(data.data() + off + 2);
        off += 4;
    }

    if (ethertype == kEthertypeIpv4) {
        if (off + 20 > data.size()) return f;
        const std::uint8_t* ip = data.data() + off;
        std::uint8_t version = ip[0] >> 4;
        std::size_t ihl = std::size_t(ip[0] & 0x0f) * 4;
        if (version != 4 || ihl < 20 || off + ihl > data.size()) return f;
        f.src_ip = read_be32(ip + 12);
        f.dst_ip = read_be32(ip + 16);
        std::uint8_t proto = ip[9];
        std::size_t l4 = off + ihl;
        if (proto == 6 || proto == 17) {
            if (l4 + 4 > data.size()) {
                // IPs decoded but ports unreachable; degrade to OtherIp
                f.transport = Transport::OtherIp;
                return f;
            }
            f.src_port = read_be16(data.data() + l4);
            f.dst_port = read_be16(data.data() + l4 + 2);
            f.transport = proto == 6 ? Transport::Tcp : Transport::Udp;
        } else {
            f.transport = Transport::OtherIp;
        }
        return f;
    }

    if (ethertype == kEthertypeIpv6) {
        // IPv4-mapped addresses (::ffff:a.b.c.d) are the only IPv6 form that
        // fits the IPv4 address model; everything else stays NonIp.
        if (off + 40 > data.size()) return f;
        const std::uint8_t* ip6 = data.data() + off;
        auto v4_mapped = [](const std::uint8_t* a) -> bool {
            for (int i = 0; i < 10; ++i)
                if (a[i] != 0) return false;
            return a[10] == 0xff && a[11] == 0xff;
        };
        const std::uint8_t* src = ip6 + 8;
        const std::uint8_t* dst = ip6 + 24;
        if (v4_mapped(src) && v4_mapped(dst)) {
            f.src_ip = read_be32(src + 12);
            f.dst_ip = read_be32(dst + 12);
            f.transport = Transport::OtherIp;
        }
        return f;
    }

    return f;  // ARP and friends: NonIp
}

void put_le32(std::uint8_t* p, std::uint32_t v) {
    p[0] = v & 0xff;
    p[1] = (v >> 8) & 0xff;
    p[2] = (v >> 16) & 0xff;
    p[3] = (v >> 24) & 0xff;
}

void put_be16(std::uint8_t* p, std::uint16_t v) {
    p[0] = v >> 8;
    p[1] = v & 0xff;
}

void put_be32(std::uint8_t* p, std::uint32_t v) {
    p[0] = (v >> 24) & 0xff;
    p[1] = (v >> 16) & 0xff;
    p[2] = (v >> 8) & 0xff;
    p[3] = v & 0xff;
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

struct PcapReader::Impl {
    FilePtr file;
    std::string name;
    bool swapped = false;
    bool nanos = false;
    bool have_first = false;
    std::uint32_t first_sec = 0, first_frac = 0;
    double prev_t = 0.0;

    std::uint32_t fix32(std::uint32_t v) const { return swapped ? swap32(v) : v; }
};

PcapReader::PcapReader(const std::filesystem::path& path) : impl_(new Impl) {
    impl_->name = path.string();
    impl_->file.reset(std::fopen(path.string().c_str(), "rb"));
    if (!impl_->file) throw IoFailure("cannot open " + impl_->name);

    std::uint8_t hdr[24];
    if (std::fread(hdr, 1, sizeof hdr, impl_->file.get()) != sizeof hdr)
        throw BadMagic(impl_->name + ": too short for a pcap global header");

    std::uint32_t magic;
    std::memcpy(&magic, hdr, 4);
    switch (magic) {
        case kMagicMicro: break;
        case kMagicNano: impl_->nanos = true; break;
        case kMagicMicroSwapped: impl_->swapped = true; break;
        case kMagicNanoSwapped:
            impl_->swapped = true;
            impl_->nanos = true;
            break;
        default:
            throw BadMagic(impl_->name + ": not a pcap file");
    }

    std::uint32_t link;
    std::memcpy(&link, hdr + 20, 4);
    link = impl_->fix32(link);
    if (link != kLinkEthernet)
        throw NonEthernetLink(impl_->name + ": link type " + std::to_string(link) +
                              " is not Ethernet");
}

PcapReader::~PcapReader() = default;

std::optional<PacketMeta> PcapReader::next() {
    std::uint8_t rec[16];
    std::size_t got = std::fread(rec, 1, sizeof rec, impl_->file.get());
    if (got == 0) return std::nullopt;
    if (got != sizeof rec)
        throw TruncatedRecord(impl_->name + ": truncated record header");

    std::uint32_t raw[4];
    std::memcpy(raw, rec, 16);
    std::uint32_t ts_sec = impl_->fix32(raw[0]);
    std::uint32_t ts_frac = impl_->fix32(raw[1]);
    std::uint32_t incl_len = impl_->fix32(raw[2]);
    std::uint32_t orig_len = impl_->fix32(raw[3]);

    std::vector<std::uint8_t> body(incl_len);
    if (incl_len && std::fread(body.data(), 1, incl_len, impl_->file.get()) != incl_len)
        throw TruncatedRecord(impl_->name + ": record body declares " +
                              std::to_string(incl_len) + " bytes past end of file");

    if (!impl_->have_first) {
        impl_->have_first = true;
        impl_->first_sec = ts_sec;
        impl_->first_frac = ts_frac;
    }
    double frac_unit = impl_->nanos ? 1e-9 : 1e-6;
    double t = (double(ts_sec) - double(impl_->first_sec)) +
               (double(ts_frac) - double(impl_->first_frac)) * frac_unit;
    if (t < impl_->prev_t) t = impl_->prev_t;  // capture clock jitter
    impl_->prev_t = t;

    FrameFields f = decode_frame(body);
    PacketMeta pkt;
    pkt.timestamp = t;
    pkt.src_mac = f.src_mac;
    pkt.src_ip = f.src_ip;
    pkt.dst_ip = f.dst_ip;
    pkt.src_port = f.src_port;
    pkt.dst_port = f.dst_port;
    pkt.transport = f.transport;
    pkt.frame_len = orig_len > 0 ? orig_len : std::max<std::uint32_t>(incl_len, 1);
    return pkt;
}

std::vector<PacketMeta> parse_pcap(const std::filesystem::path& path) {
    PcapReader reader(path);
    std::vector<PacketMeta> out;
    while (auto pkt = reader.next()) out.push_back(*pkt);
    return out;
}

std::uint64_t write_pcap(std::span<const PacketMeta> packets,
                         const std::filesystem::path& path) {
    for (std::size_t i = 1; i < packets.size(); ++i)
        if (packets[i].timestamp < packets[i - 1].timestamp)
            throw UnorderedInput("packet " + std::to_string(i) +
                                 " decreases in timestamp");

    FilePtr file(std::fopen(path.string().c_str(), "wb"));
    if (!file) throw IoFailure("cannot open " + path.string() + " for writing");

    std::uint8_t hdr[24] = {};
    put_le32(hdr, kMagicMicro);
    hdr[4] = 2;  // version 2.4
    hdr[6] = 4;
    put_le32(hdr + 16, 65535);  // snaplen
    put_le32(hdr + 20, kLinkEthernet);
    if (std::fwrite(hdr, 1, sizeof hdr, file.get()) != sizeof hdr)
        throw IoFailure("write failed: " + path.string());
    std::uint64_t written = sizeof hdr;

    std::vector<std::uint8_t> frame;
    for (const PacketMeta& pkt : packets) {
        frame.clear();

        // Ethernet header: destination MAC derived from dst_ip (locally
        // administered), it is not part of PacketMeta and does not round-trip.
        MacAddr dst_mac = {0x02, 0x00, 0x00, 0x00, 0x00, 0x01};
        if (pkt.has_ips()) {
            dst_mac = {0x02, 0x00, std::uint8_t(pkt.dst_ip >> 24),
                       std::uint8_t(pkt.dst_ip >> 16), std::uint8_t(pkt.dst_ip >> 8),
                       std::uint8_t(pkt.dst_ip)};
        }
        frame.insert(frame.end(), dst_mac.begin(), dst_mac.end());
        frame.insert(frame.end(), pkt.src_mac.begin(), pkt.src_mac.end());
        frame.resize(frame.size() + 2);

        if (pkt.has_ips()) {
            put_be16(frame.data() + 12, kEthertypeIpv4);
            std::size_t l4_len = pkt.has_ports() ? (pkt.transport == Transport::Tcp ? 20 : 8) : 0;
            std::uint32_t total_len = pkt.frame_len > 14 ? pkt.frame_len - 14 : 20 + l4_len;
            if (total_len < 20 + l4_len) total_len = 20 + std::uint32_t(l4_len);
            if (total_len > 65535) total_len = 65535;

            std::uint8_t ip[20] = {};
            ip[0] = 0x45;
            put_be16(ip + 2, std::uint16_t(total_len));
            ip[8] = 64;  // TTL
            switch (pkt.transport) {
                case Transport::Tcp: ip[9] = 6; break;
                case Transport::Udp: ip[9] = 17; break;
                default: ip[9] = 253; break;  // RFC 3692 experimental
            }
            put_be32(ip + 12, pkt.src_ip);
            put_be32(ip + 16, pkt.dst_ip);
            frame.insert(frame.end(), ip, ip + 20);

            if (pkt.transport == Transport::Tcp) {
                std::uint8_t tcp[20] = {};
                put_be16(tcp, pkt.src_port);
                put_be16(tcp + 2, pkt.dst_port);
                tcp[12] = 0x50;  // data offset 5
                tcp[13] = 0x10;  // ACK
                frame.insert(frame.end(), tcp, tcp + 20);
            } else if (pkt.transport == Transport::Udp) {
                std::uint8_t udp[8] = {};
                put_be16(udp, pkt.src_port);
                put_be16(udp + 2, pkt.dst_port);
                std::uint16_t udp_len =
                    std::uint16_t(total_len >= 20 + 8 ? total_len - 20 : 8);
                put_be16(udp + 4, udp_len);
                frame.insert(frame.end(), udp, udp + 8);
            }
        } else {
            put_be16(frame.data() + 12, kEthertypeLocalExp);
        }

        // zero payload padding out to the on-wire length
        if (frame.size() < pkt.frame_len) frame.resize(pkt.frame_len, 0);

        double t = pkt.timestamp;
        auto sec = static_cast<std::uint64_t>(t);
        auto usec = static_cast<std::uint64_t>(std::llround((t - double(sec)) * 1e6));
        if (usec >= 1000000) {
            sec += usec / 1000000;
            usec %= 1000000;
        }

        std::uint8_t rec[16];
        put_le32(rec, std::uint32_t(sec));
        put_le32(rec + 4, std::uint32_t(usec));
        put_le32(rec + 8, std::uint32_t(frame.size()));
        put_le32(rec + 12, pkt.frame_len);
        if (std::fwrite(rec, 1, sizeof rec, file.get()) != sizeof rec ||
            std::fwrite(frame.data(), 1, frame.size(), file.get()) != frame.size())
            throw IoFailure("write failed: " + path.string());
        written += sizeof rec + frame.size();
    }

    if (std::fflush(file.get()) != 0) throw IoFailure("flush failed: " + path.string());
    return written;
}

}  // namespace exfilscope
