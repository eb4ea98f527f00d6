#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "exfilscope/pcap_io.hpp"
#include "exfilscope/rng.hpp"

using namespace exfilscope;

namespace {

std::filesystem::path temp_file(const char* name) {
    auto dir = std::filesystem::temp_directory_path() / "exfilscope_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

void put_le32(std::vector<std::uint8_t>& v, std::uint32_t x) {
    v.push_back(x & 0xff);
    v.push_back((x >> 8) & 0xff);
    v.push_back((x >> 16) & 0xff);
    v.push_back((x >> 24) & 0xff);
}

void put_be16v(std::vector<std::uint8_t>& v, std::uint16_t x) {
    v.push_back(x >> 8);
    v.push_back(x & 0xff);
}

void put_be32v(std::vector<std::uint8_t>& v, std::uint32_t x) {
    v.push_back((x >> 24) & 0xff);
    v.push_back((x >> 16) & 0xff);
    v.push_back((x >> 8) & 0xff);
    v.push_back(x & 0xff);
}

std::vector<std::uint8_t> global_header(std::uint32_t link = 1) {
    std::vector<std::uint8_t> v;
    put_le32(v, 0xa1b2c3d4);
    v.push_back(2);
    v.push_back(0);
    v.push_back(4);
    v.push_back(0);
    put_le32(v, 0);
    put_le32(v, 0);
    put_le32(v, 65535);
    put_le32(v, link);
    return v;
}

// hand-crafted 60-byte UDP frame 10.0.0.1:5000 -> 10.0.0.2:6000
std::vector<std::uint8_t> udp_frame() {
    std::vector<std::uint8_t> f;
    const std::uint8_t dst_mac[6] = {0xaa, 0xbb, 0xcc, 0xdd, 0xee, 0xff};
    const std::uint8_t src_mac[6] = {0x10, 0x20, 0x30, 0x40, 0x50, 0x60};
    f.insert(f.end(), dst_mac, dst_mac + 6);
    f.insert(f.end(), src_mac, src_mac + 6);
    put_be16v(f, 0x0800);
    // IPv4, no options, total length 46
    f.push_back(0x45);
    f.push_back(0);
    put_be16v(f, 46);
    put_be16v(f, 0x1234);  // id
    put_be16v(f, 0);
    f.push_back(64);  // ttl
    f.push_back(17);  // udp
    put_be16v(f, 0);  // checksum
    put_be32v(f, 0x0a000001);
    put_be32v(f, 0x0a000002);
    put_be16v(f, 5000);
    put_be16v(f, 6000);
    put_be16v(f, 26);  // udp length
    put_be16v(f, 0);
    while (f.size() < 60) f.push_back(0);
    return f;
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& v) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size()));
}

PacketMeta random_packet(Rng& rng, double t) {
    PacketMeta p;
    p.timestamp = t;
    for (auto& b : p.src_mac) b = std::uint8_t(rng.uniform_index(256));
    double pick = rng.uniform();
    if (pick < 0.4)
        p.transport = Transport::Tcp;
    else if (pick < 0.8)
        p.transport = Transport::Udp;
    else if (pick < 0.9)
        p.transport = Transport::OtherIp;
    else
        p.transport = Transport::NonIp;
    if (p.has_ips()) {
        p.src_ip = std::uint32_t(rng.next_u64());
        p.dst_ip = std::uint32_t(rng.next_u64());
    }
    if (p.has_ports()) {
        p.src_port = std::uint16_t(rng.uniform_index(65536));
        p.dst_port = std::uint16_t(rng.uniform_index(65536));
    }
    p.frame_len = std::uint32_t(60 + rng.uniform_index(1455));
    return p;
}

}  // namespace

TEST_CASE("pcap with zero records yields an empty stream") {
    auto path = temp_file("empty.pcap");
    write_bytes(path, global_header());
    CHECK(parse_pcap(path).empty());
}

TEST_CASE("hand-crafted UDP frame decodes field by field") {
    auto path = temp_file("one_udp.pcap");
    auto bytes = global_header();
    auto frame = udp_frame();
    put_le32(bytes, 7);  // ts_sec
    put_le32(bytes, 250000);
    put_le32(bytes, std::uint32_t(frame.size()));
    put_le32(bytes, std::uint32_t(frame.size()));
    bytes.insert(bytes.end(), frame.begin(), frame.end());
    write_bytes(path, bytes);

    auto packets = parse_pcap(path);
    REQUIRE(packets.size() == 1);
    const PacketMeta& p = packets[0];
    CHECK(p.timestamp == 0.0);  // rebased to the first packet
    CHECK(p.transport == Transport::Udp);
    CHECK(p.src_ip == make_ipv4(10, 0, 0, 1));
    CHECK(p.dst_ip == make_ipv4(10, 0, 0, 2));
    CHECK(p.src_port == 5000);
    CHECK(p.dst_port == 6000);
    CHECK(p.frame_len == 60);
    CHECK(p.src_mac == MacAddr{0x10, 0x20, 0x30, 0x40, 0x50, 0x60});
}

TEST_CASE("truncated record yields prior packets then throws") {
    auto path = temp_file("trunc.pcap");
    auto bytes = global_header();
    auto frame = udp_frame();
    put_le32(bytes, 0);
    put_le32(bytes, 0);
    put_le32(bytes, std::uint32_t(frame.size()));
    put_le32(bytes, std::uint32_t(frame.size()));
    bytes.insert(bytes.end(), frame.begin(), frame.end());
    // second record claims 100 bytes but only 40 follow
    put_le32(bytes, 1);
    put_le32(bytes, 0);
    put_le32(bytes, 100);
    put_le32(bytes, 100);
    for (int i = 0; i < 40; ++i) bytes.push_back(0);
    write_bytes(path, bytes);

    PcapReader reader(path);
    auto first = reader.next();
    REQUIRE(first.has_value());
    CHECK(first->transport == Transport::Udp);
    CHECK_THROWS_AS(reader.next(), TruncatedRecord);
}

TEST_CASE("not a pcap file") {
    auto path = temp_file("garbage.bin");
    write_bytes(path, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16,
                       17, 18, 19, 20, 21, 22, 23, 24});
    CHECK_THROWS_AS(parse_pcap(path), BadMagic);
}

TEST_CASE("non-Ethernet link type is rejected") {
    auto path = temp_file("linktype.pcap");
    write_bytes(path, global_header(101));  // raw IP
    CHECK_THROWS_AS(parse_pcap(path), NonEthernetLink);
}

TEST_CASE("VLAN tag is skipped transparently") {
    auto path = temp_file("vlan.pcap");
    auto bytes = global_header();
    auto frame = udp_frame();
    // splice a VLAN tag between the MACs and the ethertype
    std::vector<std::uint8_t> tagged(frame.begin(), frame.begin() + 12);
    put_be16v(tagged, 0x8100);
    put_be16v(tagged, 42);
    tagged.insert(tagged.end(), frame.begin() + 12, frame.end());
    put_le32(bytes, 0);
    put_le32(bytes, 0);
    put_le32(bytes, std::uint32_t(tagged.size()));
    put_le32(bytes, std::uint32_t(tagged.size()));
    bytes.insert(bytes.end(), tagged.begin(), tagged.end());
    write_bytes(path, bytes);

    auto packets = parse_pcap(path);
    REQUIRE(packets.size() == 1);
    CHECK(packets[0].transport == Transport::Udp);
    CHECK(packets[0].src_port == 5000);
}

TEST_CASE("malformed layer 3 degrades to NonIp, never a crash") {
    auto path = temp_file("mangled.pcap");
    auto bytes = global_header();
    Rng rng(99);
    for (int rec = 0; rec < 50; ++rec) {
        std::vector<std::uint8_t> frame;
        std::size_t len = 14 + rng.uniform_index(40);
        for (std::size_t i = 0; i < len; ++i)
            frame.push_back(std::uint8_t(rng.uniform_index(256)));
        // force an IPv4 ethertype with garbage after it half the time
        if (rec % 2 == 0 && frame.size() >= 14) {
            frame[12] = 0x08;
            frame[13] = 0x00;
        }
        put_le32(bytes, std::uint32_t(rec));
        put_le32(bytes, 0);
        put_le32(bytes, std::uint32_t(frame.size()));
        put_le32(bytes, std::uint32_t(frame.size()));
        bytes.insert(bytes.end(), frame.begin(), frame.end());
    }
    write_bytes(path, bytes);
    auto packets = parse_pcap(path);  // must not throw
    CHECK(packets.size() == 50);
    for (const auto& p : packets) CHECK(p.frame_len > 0);
}

TEST_CASE("write_pcap of an empty stream is a valid header-only file") {
    auto path = temp_file("header_only.pcap");
    CHECK(write_pcap({}, path) == 24);
    CHECK(std::filesystem::file_size(path) == 24);
    CHECK(parse_pcap(path).empty());
}

TEST_CASE("single packet round-trips identically") {
    auto path = temp_file("one_rt.pcap");
    PacketMeta p;
    p.timestamp = 0.0;
    p.src_mac = {1, 2, 3, 4, 5, 6};
    p.src_ip = make_ipv4(10, 1, 2, 3);
    p.dst_ip = make_ipv4(192, 0, 2, 9);
    p.src_port = 50123;
    p.dst_port = 443;
    p.frame_len = 1514;
    p.transport = Transport::Tcp;
    write_pcap(std::vector<PacketMeta>{p}, path);
    auto back = parse_pcap(path);
    REQUIRE(back.size() == 1);
    CHECK(back[0] == p);
}

TEST_CASE("1000 random packets round-trip within a microsecond") {
    auto path = temp_file("many_rt.pcap");
    Rng rng(4242);
    std::vector<PacketMeta> packets;
    double t = 0.0;
    for (int i = 0; i < 1000; ++i) {
        packets.push_back(random_packet(rng, t));
        t += rng.uniform(0.0, 0.01);
    }
    write_pcap(packets, path);
    auto back = parse_pcap(path);
    REQUIRE(back.size() == packets.size());
    for (std::size_t i = 0; i < packets.size(); ++i) {
        PacketMeta expect = packets[i];
        PacketMeta got = back[i];
        CHECK(std::fabs(expect.timestamp - got.timestamp) <= 1e-6);
        expect.timestamp = got.timestamp = 0.0;
        CHECK(expect == got);
    }
}

TEST_CASE("write_pcap rejects unordered input") {
    auto path = temp_file("unordered.pcap");
    PacketMeta a, b;
    a.timestamp = 1.0;
    a.frame_len = 60;
    b.timestamp = 0.5;
    b.frame_len = 60;
    std::vector<PacketMeta> v{a, b};
    CHECK_THROWS_AS(write_pcap(v, path), UnorderedInput);
}

TEST_CASE("nanosecond and big-endian variants parse") {
    auto path = temp_file("nano_be.pcap");
    std::vector<std::uint8_t> bytes;
    // big-endian nanosecond magic, written byte-reversed
    put_le32(bytes, 0xa1b23c4d);
    std::reverse(bytes.begin(), bytes.end());
    std::vector<std::uint8_t> rest = global_header();
    // reuse version/snaplen/link fields but byte-swap each 32-bit word
    for (std::size_t off = 4; off < 24; off += 4) {
        bytes.push_back(rest[off + 3]);
        bytes.push_back(rest[off + 2]);
        bytes.push_back(rest[off + 1]);
        bytes.push_back(rest[off]);
    }
    auto frame = udp_frame();
    auto put_be32_direct = [&bytes](std::uint32_t v) {
        bytes.push_back((v >> 24) & 0xff);
        bytes.push_back((v >> 16) & 0xff);
        bytes.push_back((v >> 8) & 0xff);
        bytes.push_back(v & 0xff);
    };
    put_be32_direct(3);
    put_be32_direct(500000000);  // 0.5 s in ns
    put_be32_direct(std::uint32_t(frame.size()));
    put_be32_direct(std::uint32_t(frame.size()));
    bytes.insert(bytes.end(), frame.begin(), frame.end());
    put_be32_direct(4);
    put_be32_direct(0);
    put_be32_direct(std::uint32_t(frame.size()));
    put_be32_direct(std::uint32_t(frame.size()));
    bytes.insert(bytes.end(), frame.begin(), frame.end());
    write_bytes(path, bytes);

    auto packets = parse_pcap(path);
    REQUIRE(packets.size() == 2);
    CHECK(packets[0].timestamp == 0.0);
    CHECK(packets[1].timestamp == doctest::Approx(0.5).epsilon(1e-12));
}
