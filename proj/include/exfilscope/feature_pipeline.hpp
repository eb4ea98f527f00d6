#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "exfilscope/channel_key.hpp"
#include "exfilscope/damped_stats.hpp"
#include "exfilscope/packet.hpp"

namespace exfilscope {

struct FeatureError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MalformedRow : FeatureError {
    MalformedRow(const std::string& what, std::size_t line)
        : FeatureError(what + " at line " + std::to_string(line)), line_number(line) {}
    std::size_t line_number;
};
struct AuxTooShort : FeatureError {
    explicit AuxTooShort(const std::string& what) : FeatureError(what) {}
};

inline constexpr std::size_t kKitsuneDim = 100;
inline constexpr std::size_t kStorageDim = 5;
inline constexpr std::size_t kMemoryDim = 18;
inline constexpr std::size_t kAuxDim = kStorageDim + kMemoryDim;
inline constexpr std::size_t kFeatureDim = kAuxDim + kKitsuneDim;  // 123
inline constexpr double kDefaultWindow = 0.1;
inline constexpr double kDefaultDuration = 30.0;

using KitsuneVector = std::array<double, kKitsuneDim>;

// opaque storage (5) + memory (18) feature row ingested from a trace file
struct AuxRow {
    std::array<double, kStorageDim> storage{};
    std::array<double, kMemoryDim> memory{};
};

// Per-sample statistics store: every observed channel key maps to one
// statistics value per decay rate. Discarded between samples.
class ChannelRegistry {
public:
    explicit ChannelRegistry(std::span<const double> lambdas = kDecayLambdas);

    // Updates every channel the packet touches across all decay rates and
    // returns the post-update Kitsune vector. NonIp packets leave the
    // statistics untouched and return zeros. Clock regressions are clamped
    // to the channel's last update time and counted.
    KitsuneVector process_packet(const PacketMeta& pkt);

    std::size_t channel_count() const { return one_d_.size() + two_d_.size(); }
    std::uint64_t packet_count() const { return packet_count_; }
    std::uint64_t non_ip_count() const { return non_ip_count_; }
    std::uint64_t clock_regressions() const { return clock_regressions_; }
    std::size_t lambda_count() const { return lambdas_.size(); }

private:
    std::vector<double> lambdas_;
    std::unordered_map<ChannelKey, std::vector<DampedStat1D>, ChannelKeyHash> one_d_;
    std::unordered_map<ChannelKey, std::vector<DampedPair2D>, ChannelKeyHash> two_d_;
    double last_t_ = 0.0;
    std::uint64_t packet_count_ = 0;
    std::uint64_t non_ip_count_ = 0;
    std::uint64_t clock_regressions_ = 0;
};

// Emits one Kitsune vector per closed time window: the last packet's vector,
// carried forward over empty windows, zeros until the first packet arrives.
class WindowSampler {
public:
    KitsuneVector close_window(const std::optional<KitsuneVector>& last_in_window) {
        if (last_in_window) carry_ = *last_in_window;
        return carry_;
    }

private:
    KitsuneVector carry_{};
};

// One 30 s labeled sample: 300 rows x 123 columns, row j covering
// [j * t_window, (j+1) * t_window).
struct FeatureMatrix {
    std::size_t rows = 0;
    std::vector<double> values;  // rows * kFeatureDim, row-major
    std::string label;
    std::string sample_id;
    double t_window = kDefaultWindow;
    double t_d = kDefaultDuration;

    std::span<double> row(std::size_t i) {
        return {values.data() + i * kFeatureDim, kFeatureDim};
    }
    std::span<const double> row(std::size_t i) const {
        return {values.data() + i * kFeatureDim, kFeatureDim};
    }
};

struct AssemblyCounters {
    std::uint64_t truncated_packets = 0;
    std::uint64_t clock_regressions = 0;
    std::uint64_t non_ip_packets = 0;
};

// Streams the packets through a fresh registry and assembles the behavioral
// feature matrix. aux, when present, must supply at least one row per window.
// lambdas must hold exactly five rates; the 123-column layout depends on it.
FeatureMatrix assemble_matrix(std::span<const PacketMeta> packets,
                              const std::vector<AuxRow>* aux,
                              const std::string& label,
                              const std::string& sample_id,
                              double t_window = kDefaultWindow,
                              double t_d = kDefaultDuration,
                              AssemblyCounters* counters = nullptr,
                              std::span<const double> lambdas = kDecayLambdas);

// Aux trace file: one row per line, 23 comma-separated finite decimals
// (5 storage then 18 memory), no header.
std::vector<AuxRow> load_aux_trace(const std::filesystem::path& path);

// Feature file: header line "label,<name>" then one comma-separated line per
// row. Doubles are printed with round-trip precision.
void write_features_csv(const FeatureMatrix& m, const std::filesystem::path& path);
FeatureMatrix read_features_csv(const std::filesystem::path& path);

}  // namespace exfilscope
