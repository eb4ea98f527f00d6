#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "doctest.h"
#include "exfilscope/pcap_io.hpp"
#include "exfilscope/traffic_synth.hpp"

using namespace exfilscope;

namespace {

std::filesystem::path temp_dir(const char* name) {
    auto dir = std::filesystem::temp_directory_path() / "exfilscope_tests" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

double outbound_bytes(const std::vector<PacketMeta>& packets) {
    double total = 0.0;
    for (const PacketMeta& p : packets)
        if (p.has_ips() && p.src_ip == make_ipv4(10, 0, 0, 42)) total += p.frame_len;
    return total;
}

double inbound_bytes(const std::vector<PacketMeta>& packets) {
    double total = 0.0;
    for (const PacketMeta& p : packets)
        if (p.has_ips() && p.dst_ip == make_ipv4(10, 0, 0, 42)) total += p.frame_len;
    return total;
}

}  // namespace

TEST_CASE("rate conformance: sigma 0 lands within 1 percent of the limit") {
    SynthProfile p = default_profile("rclone-mega-5M");
    p.fluctuation_sigma = 0.0;
    p.seed = 11;
    Scenario sc{30.0, p.class_name};
    auto packets = generate_exfil(p, sc);
    double out = outbound_bytes(packets);
    double target = p.bandwidth_limit * 30.0;
    CHECK(std::fabs(out - target) / target < 0.01);
}

TEST_CASE("5 MB/s for 30 s totals 150 MB within one data packet plus overhead") {
    SynthProfile p = default_profile("rclone-gdrive-5M");
    p.fluctuation_sigma = 0.0;
    p.seed = 3;
    Scenario sc{30.0, p.class_name};
    auto packets = generate_exfil(p, sc);
    // subtract the fixed control chatter (handshakes + keepalives), then the
    // data stream itself must sit within one packet of 150 MB
    double control = 0.0, data = 0.0;
    for (const PacketMeta& pk : packets) {
        if (pk.src_ip != make_ipv4(10, 0, 0, 42)) continue;
        if (pk.frame_len <= 66)
            control += pk.frame_len;
        else
            data += pk.frame_len;
    }
    CHECK(std::fabs(data - 150e6) <= 1514.0);
    CHECK(control < 2000.0);
}

TEST_CASE("same seed reproduces the identical stream") {
    SynthProfile p = default_profile("rclone-mega-50M", 0.01);
    p.seed = 99;
    Scenario sc{30.0, p.class_name};
    auto a = generate_exfil(p, sc);
    auto b = generate_exfil(p, sc);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("packet totals increase strictly with the bandwidth limit") {
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        std::size_t last = 0;
        for (const char* cls :
             {"rclone-mega-5M", "rclone-mega-50M", "rclone-mega-100M"}) {
            SynthProfile p = default_profile(cls, 0.01);
            p.fluctuation_sigma = 0.0;
            p.seed = seed;
            auto packets = generate_exfil(p, Scenario{30.0, cls});
            CHECK(packets.size() > last);
            last = packets.size();
        }
    }
}

TEST_CASE("generated streams satisfy the ingestion invariants and round-trip") {
    for (const std::string& cls : all_class_names()) {
        SynthProfile p = default_profile(cls, 0.005);
        p.seed = 17;
        Scenario sc{30.0, cls};
        auto packets = generate(p, sc);
        REQUIRE(!packets.empty());
        CHECK(packets.front().timestamp == 0.0);
        double prev = 0.0;
        std::map<std::pair<std::uint32_t, std::uint16_t>, double> per_flow_t;
        for (const PacketMeta& pk : packets) {
            CHECK(pk.timestamp >= prev);
            prev = pk.timestamp;
            CHECK(pk.frame_len >= 60);
            CHECK(pk.frame_len <= 1514);
            CHECK(pk.timestamp < sc.duration);
            // strictly increasing inside each directed flow
            auto key = std::make_pair(pk.src_ip, pk.src_port);
            auto it = per_flow_t.find(key);
            if (it != per_flow_t.end()) CHECK(pk.timestamp > it->second);
            per_flow_t[key] = pk.timestamp;
        }

        auto path = std::filesystem::temp_directory_path() / "exfilscope_tests" /
                    (cls + "_rt.pcap");
        std::filesystem::create_directories(path.parent_path());
        write_pcap(packets, path);
        auto back = parse_pcap(path);
        REQUIRE(back.size() == packets.size());
        for (std::size_t i = 0; i < packets.size(); ++i) {
            PacketMeta want = packets[i], got = back[i];
            CHECK(std::fabs(want.timestamp - got.timestamp) <= 1e-6);
            want.timestamp = got.timestamp = 0.0;
            CHECK(want == got);
        }
    }
}

TEST_CASE("office traffic is a sliver of rclone-5M traffic") {
    Scenario sc{30.0, ""};
    SynthProfile rclone = default_profile("rclone-mega-5M");
    rclone.seed = 4;
    double rclone_total = 0.0;
    for (const PacketMeta& p : generate_exfil(rclone, sc)) rclone_total += p.frame_len;
    for (const char* cls : {"excel", "powerpoint", "word"}) {
        SynthProfile office = default_profile(cls);
        office.seed = 4;
        double total = 0.0;
        for (const PacketMeta& p : generate_benign(office, sc)) total += p.frame_len;
        CHECK(total < 0.01 * rclone_total);
        CHECK(total > 0.0);
    }
}

TEST_CASE("teleconference byte ratio stays near symmetric") {
    for (const char* cls : {"teams", "zoom"}) {
        SynthProfile p = default_profile(cls);
        p.seed = 21;
        auto packets = generate_benign(p, Scenario{30.0, cls});
        double in = inbound_bytes(packets), out = outbound_bytes(packets);
        double ratio = in / out;
        CHECK(ratio > 0.5);
        CHECK(ratio < 2.0);
    }
}

TEST_CASE("zero duration scenario produces an empty stream") {
    SynthProfile p = default_profile("zoom");
    CHECK(generate_benign(p, Scenario{0.0, "zoom"}).empty());
    SynthProfile e = default_profile("rclone-mega-5M");
    CHECK(generate_exfil(e, Scenario{0.0, ""}).empty());
}

TEST_CASE("class dispatch rejects the wrong generator") {
    SynthProfile p = default_profile("zoom");
    CHECK_THROWS_AS(generate_exfil(p, Scenario{30.0, "zoom"}), UnknownClass);
    SynthProfile e = default_profile("megasync");
    CHECK_THROWS_AS(generate_benign(e, Scenario{30.0, ""}), UnknownClass);
    CHECK_THROWS_AS(default_profile("solitaire"), UnknownClass);
}

TEST_CASE("build_corpus writes the labeled tree with manifest") {
    auto dir = temp_dir("corpus_small");
    CorpusConfig cfg;
    cfg.out_dir = dir;
    cfg.runs_per_class = 1;
    cfg.seed = 5;
    cfg.scale = 0.001;
    auto entries = build_corpus(cfg);
    CHECK(entries.size() == 13);
    for (const auto& e : entries) {
        CHECK(std::filesystem::exists(dir / e.file));
        CHECK(!parse_pcap(dir / e.file).empty());
    }
    std::ifstream manifest(dir / "manifest.csv");
    std::string line;
    std::getline(manifest, line);
    CHECK(line == "file,class,seed");
    int rows = 0;
    while (std::getline(manifest, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 13);
}

TEST_CASE("profile overrides load from JSON and apply over the defaults") {
    auto dir = temp_dir("profiles");
    auto path = dir / "profiles.json";
    {
        std::ofstream out(path);
        out << R"({"profiles": [
            {"class": "rclone-mega-5M", "bandwidth_limit": 9e6, "transfers": 7,
             "dst_ips": ["198.51.100.99"], "fluctuation_sigma": 0.0},
            {"class": "zoom", "symmetric_rate": 5e4}
        ]})";
    }
    auto profiles = load_profiles(path);
    REQUIRE(profiles.size() == 2);
    const SynthProfile& r = profiles.at("rclone-mega-5M");
    CHECK(r.bandwidth_limit == 9e6);
    CHECK(r.transfers == 7);
    CHECK(r.multi_thread_streams == 1);  // untouched default
    REQUIRE(r.dst_ips.size() == 1);
    CHECK(r.dst_ips[0] == make_ipv4(198, 51, 100, 99));
    CHECK(profiles.at("zoom").symmetric_rate == 5e4);

    // the override feeds corpus generation at the corpus scale
    SynthProfile scaled = r;
    apply_scale(scaled, 0.01);
    scaled.seed = 2;
    auto packets = generate_exfil(scaled, Scenario{30.0, "x"});
    double out_bytes = outbound_bytes(packets);
    CHECK(std::fabs(out_bytes - 9e4 * 30.0) / (9e4 * 30.0) < 0.01);

    auto bad = dir / "bad.json";
    std::ofstream(bad) << R"({"profiles": [{"bandwidth_limit": 1}]})";
    CHECK_THROWS_AS(load_profiles(bad), SynthError);
    auto worse = dir / "worse.json";
    std::ofstream(worse) << "{nope";
    CHECK_THROWS_AS(load_profiles(worse), SynthError);
}

TEST_CASE("identical corpus seeds give byte-identical files") {
    auto dir_a = temp_dir("corpus_a");
    auto dir_b = temp_dir("corpus_b");
    CorpusConfig cfg;
    cfg.runs_per_class = 1;
    cfg.seed = 31;
    cfg.scale = 0.001;
    cfg.classes = {"rclone-mega-5M", "zoom"};
    cfg.out_dir = dir_a;
    build_corpus(cfg);
    cfg.out_dir = dir_b;
    build_corpus(cfg);
    for (const char* name : {"rclone-mega-5M_0.pcap", "zoom_0.pcap", "manifest.csv"}) {
        std::ifstream fa(dir_a / name, std::ios::binary);
        std::ifstream fb(dir_b / name, std::ios::binary);
        std::string a((std::istreambuf_iterator<char>(fa)), {});
        std::string b((std::istreambuf_iterator<char>(fb)), {});
        CHECK(a == b);
        CHECK(!a.empty());
    }
}
