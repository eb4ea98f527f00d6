#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "exfilscope/packet.hpp"

namespace exfilscope {

struct SynthError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UnknownClass : SynthError {
    explicit UnknownClass(const std::string& what) : SynthError(what) {}
};

enum class SynthProtocol : std::uint8_t { TcpLike, UdpLike };

// Generator parameters for one traffic class. Bandwidths are outbound
// bytes/s after any desk-scale factor has been applied.
struct SynthProfile {
    std::string class_name;
    double upload_fraction = 1.0;    // share of bytes flowing outward
    double bandwidth_limit = 0.0;    // outbound bytes/s target
    int transfers = 1;               // parallel flows
    int multi_thread_streams = 1;    // sub-streams per flow
    double pkt_mean = 1400.0;        // data packet size model, clipped [60, 1514]
    double pkt_std = 80.0;
    double fluctuation_sigma = 0.0;  // log-normal sigma of per-second rate multiplier
    std::vector<std::uint32_t> dst_ips;
    std::vector<std::uint16_t> dst_ports;
    SynthProtocol protocol = SynthProtocol::TcpLike;
    std::uint64_t seed = 0;

    // benign-shape knobs, unused by the exfil generator
    double request_period = 0.0;     // office: seconds between request bursts
    double burst_rate = 0.0;         // firefox: bursts per second
    double symmetric_rate = 0.0;     // teleconference: bytes/s each way
};

struct Scenario {
    double duration = 30.0;
    std::string label;
};

inline constexpr int kClassCount = 13;

// the 13 application classes in canonical (dataset) order
const std::vector<std::string>& all_class_names();
bool is_exfil_class(const std::string& class_name);

// Built-in profile for one class; scale multiplies every rate so the corpus
// stays desk-sized while preserving all between-class ratios.
SynthProfile default_profile(const std::string& class_name, double scale = 1.0);

// scales the rate-valued fields of a profile in place
void apply_scale(SynthProfile& profile, double scale);

// JSON profile overrides, keyed by class name; unlisted fields keep the
// built-in defaults. Values are unscaled rates.
std::map<std::string, SynthProfile> load_profiles(const std::filesystem::path& path);

// Upload-dominated parallel flows toward the profile destinations with
// bandwidth-targeted byte accounting. Deterministic per seed; first packet
// at t = 0 so streams survive the pcap round-trip exactly.
std::vector<PacketMeta> generate_exfil(const SynthProfile& profile, const Scenario& scenario);

// Class-characteristic benign mixes (browser bursts, office request/response,
// symmetric teleconference streams). Deterministic per seed.
std::vector<PacketMeta> generate_benign(const SynthProfile& profile, const Scenario& scenario);

// dispatches on class name
std::vector<PacketMeta> generate(const SynthProfile& profile, const Scenario& scenario);

struct CorpusEntry {
    std::string file;
    std::string class_name;
    std::uint64_t seed;
};

struct CorpusConfig {
    std::filesystem::path out_dir;
    std::vector<std::string> classes;  // empty = all 13
    int runs_per_class = 10;
    std::uint64_t seed = 1;
    double scale = 1.0;
    double duration = 30.0;
    std::map<std::string, SynthProfile> profile_overrides;  // unscaled rates
};

// Writes one pcap per (class, run) plus manifest.csv (file, class, seed).
// Per-file seeds derive from the corpus seed; identical configs produce
// byte-identical trees.
std::vector<CorpusEntry> build_corpus(const CorpusConfig& config);

}  // namespace exfilscope
