#include "exfilscope/feature_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace exfilscope {

namespace {

// endpoint ordering used to normalize 2D pair keys
bool endpoint_less(std::uint32_t ip_l, std::uint16_t port_l, std::uint32_t ip_r,
                   std::uint16_t port_r) {
    if (ip_l != ip_r) return ip_l < ip_r;
    return port_l < port_r;
}

}  // namespace

std::vector<KeyRef> keys_for(const PacketMeta& pkt) {
    std::vector<KeyRef> keys;
    if (!pkt.has_ips()) return keys;
    keys.reserve(6);

    ChannelKey k;
    k.kind = ChannelKey::Kind::SrcMacIp;
    k.mac = pkt.src_mac;
    k.ip_a = pkt.src_ip;
    keys.push_back({k, KeyRole::OneD});

    k = {};
    k.kind = ChannelKey::Kind::SrcDstIp;
    k.ip_a = pkt.src_ip;
    k.ip_b = pkt.dst_ip;
    keys.push_back({k, KeyRole::OneD});

    k = {};
    k.kind = ChannelKey::Kind::SrcIp;
    k.ip_a = pkt.src_ip;
    keys.push_back({k, KeyRole::OneD});

    if (pkt.has_ports()) {
        k = {};
        k.kind = ChannelKey::Kind::SrcIpPort;
        k.ip_a = pkt.src_ip;
        k.port_a = pkt.src_port;
        keys.push_back({k, KeyRole::OneD});
    }

    // Pair keys are normalized so both directions of a flow share one value;
    // side i is the traffic sent by the lower endpoint.
    bool src_is_low = endpoint_less(pkt.src_ip, 0, pkt.dst_ip, 0);
    k = {};
    k.kind = ChannelKey::Kind::IpPair;
    k.ip_a = src_is_low ? pkt.src_ip : pkt.dst_ip;
    k.ip_b = src_is_low ? pkt.dst_ip : pkt.src_ip;
    keys.push_back({k, src_is_low ? KeyRole::PairSideI : KeyRole::PairSideJ});

    if (pkt.has_ports()) {
        bool sock_is_low =
            endpoint_less(pkt.src_ip, pkt.src_port, pkt.dst_ip, pkt.dst_port);
        k = {};
        k.kind = ChannelKey::Kind::SocketPair;
        k.ip_a = sock_is_low ? pkt.src_ip : pkt.dst_ip;
        k.port_a = sock_is_low ? pkt.src_port : pkt.dst_port;
        k.ip_b = sock_is_low ? pkt.dst_ip : pkt.src_ip;
        k.port_b = sock_is_low ? pkt.dst_port : pkt.src_port;
        keys.push_back({k, sock_is_low ? KeyRole::PairSideI : KeyRole::PairSideJ});
    }
    return keys;
}

ChannelRegistry::ChannelRegistry(std::span<const double> lambdas)
    : lambdas_(lambdas.begin(), lambdas.end()) {}

KitsuneVector ChannelRegistry::process_packet(const PacketMeta& pkt) {
    ++packet_count_;
    KitsuneVector out{};
    if (!pkt.has_ips()) {
        ++non_ip_count_;
        return out;
    }

    // One monotone clock for the whole registry; channel updates then can
    // never see time run backwards.
    double t = pkt.timestamp;
    if (t < last_t_) {
        t = last_t_;
        ++clock_regressions_;
    }
    last_t_ = t;

    const auto keys = keys_for(pkt);
    const double x = static_cast<double>(pkt.frame_len);
    const std::size_t n_lambda = lambdas_.size();
    const std::size_t block = 20;  // 4 keys * 3 stats + 2 pairs * 4 stats

    for (const KeyRef& ref : keys) {
        if (ref.role == KeyRole::OneD) {
            auto [it, fresh] = one_d_.try_emplace(ref.key);
            if (fresh) it->second.resize(n_lambda);
            std::size_t base;
            switch (ref.key.kind) {
                case ChannelKey::Kind::SrcMacIp: base = 0; break;
                case ChannelKey::Kind::SrcDstIp: base = 3; break;
                case ChannelKey::Kind::SrcIp: base = 6; break;
                default: base = 9; break;  // SrcIpPort
            }
            for (std::size_t li = 0; li < n_lambda; ++li) {
                DampedStat1D& st = it->second[li];
                st.update(x, t, lambdas_[li]);
                Stats1D q = st.query();
                out[li * block + base + 0] = q.weight;
                out[li * block + base + 1] = q.mean;
                out[li * block + base + 2] = q.std_dev;
            }
        } else {
            auto [it, fresh] = two_d_.try_emplace(ref.key);
            if (fresh) it->second.resize(n_lambda);
            std::size_t base = ref.key.kind == ChannelKey::Kind::IpPair ? 12 : 16;
            PairSide side = ref.role == KeyRole::PairSideI ? PairSide::I : PairSide::J;
            for (std::size_t li = 0; li < n_lambda; ++li) {
                DampedPair2D& pr = it->second[li];
                pr.update(side, x, t, lambdas_[li]);
                Stats2D q = pr.query();
                out[li * block + base + 0] = q.magnitude;
                out[li * block + base + 1] = q.radius;
                out[li * block + base + 2] = q.covariance;
                out[li * block + base + 3] = q.correlation;
            }
        }
    }
    return out;
}

FeatureMatrix assemble_matrix(std::span<const PacketMeta> packets,
                              const std::vector<AuxRow>* aux,
                              const std::string& label,
                              const std::string& sample_id,
                              double t_window, double t_d,
                              AssemblyCounters* counters,
                              std::span<const double> lambdas) {
    if (lambdas.size() != kDecayLambdas.size())
        throw FeatureError("the feature layout requires exactly " +
                           std::to_string(kDecayLambdas.size()) + " decay rates");
    const auto n_windows = static_cast<std::size_t>(std::llround(t_d / t_window));
    if (aux && aux->size() < n_windows)
        throw AuxTooShort("aux trace has " + std::to_string(aux->size()) +
                          " rows, need " + std::to_string(n_windows));

    FeatureMatrix m;
    m.rows = n_windows;
    m.values.assign(n_windows * kFeatureDim, 0.0);
    m.label = label;
    m.sample_id = sample_id;
    m.t_window = t_window;
    m.t_d = t_d;

    ChannelRegistry registry(lambdas);
    WindowSampler sampler;
    AssemblyCounters local{};

    std::size_t window = 0;
    std::optional<KitsuneVector> last_in_window;
    auto emit = [&](const KitsuneVector& v) {
        double* row = m.values.data() + window * kFeatureDim;
        if (aux) {
            const AuxRow& a = (*aux)[window];
            std::copy(a.storage.begin(), a.storage.end(), row);
            std::copy(a.memory.begin(), a.memory.end(), row + kStorageDim);
        }
        std::copy(v.begin(), v.end(), row + kAuxDim);
    };

    double clamp_t = 0.0;
    for (const PacketMeta& raw : packets) {
        PacketMeta pkt = raw;
        if (pkt.timestamp < clamp_t) {
            pkt.timestamp = clamp_t;
            ++local.clock_regressions;
        }
        clamp_t = pkt.timestamp;
        if (pkt.timestamp >= t_d) {
            ++local.truncated_packets;
            continue;
        }
        auto pkt_window = static_cast<std::size_t>(pkt.timestamp / t_window);
        if (pkt_window >= n_windows) pkt_window = n_windows - 1;  // float edge
        while (window < pkt_window) {
            emit(sampler.close_window(last_in_window));
            last_in_window.reset();
            ++window;
        }
        last_in_window = registry.process_packet(pkt);
    }
    while (window < n_windows) {
        emit(sampler.close_window(last_in_window));
        last_in_window.reset();
        ++window;
    }

    local.clock_regressions += registry.clock_regressions();
    local.non_ip_packets = registry.non_ip_count();
    if (counters) *counters = local;
    return m;
}

std::vector<AuxRow> load_aux_trace(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FeatureError("cannot open aux trace " + path.string());
    std::vector<AuxRow> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        AuxRow row;
        const char* p = line.c_str();
        for (std::size_t i = 0; i < kAuxDim; ++i) {
            char* end = nullptr;
            double v = std::strtod(p, &end);
            if (end == p || !std::isfinite(v))
                throw MalformedRow("aux trace: bad value in column " + std::to_string(i + 1),
                                   line_no);
            if (i < kStorageDim)
                row.storage[i] = v;
            else
                row.memory[i - kStorageDim] = v;
            p = end;
            if (i + 1 < kAuxDim) {
                while (*p == ' ') ++p;
                if (*p != ',')
                    throw MalformedRow("aux trace: expected 23 comma-separated values",
                                       line_no);
                ++p;
            }
        }
        while (*p == ' ' || *p == '\r') ++p;
        if (*p != '\0')
            throw MalformedRow("aux trace: trailing data after 23 values", line_no);
        rows.push_back(row);
    }
    return rows;
}

void write_features_csv(const FeatureMatrix& m, const std::filesystem::path& path) {
    std::FILE* f = std::fopen(path.string().c_str(), "wb");
    if (!f) throw FeatureError("cannot open " + path.string() + " for writing");
    std::fprintf(f, "label,%s\n", m.label.c_str());
    char buf[32];
    for (std::size_t r = 0; r < m.rows; ++r) {
        auto row = m.row(r);
        std::string line;
        line.reserve(kFeatureDim * 10);
        for (std::size_t c = 0; c < kFeatureDim; ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", row[c]);
            if (c) line.push_back(',');
            line += buf;
        }
        line.push_back('\n');
        if (std::fwrite(line.data(), 1, line.size(), f) != line.size()) {
            std::fclose(f);
            throw FeatureError("write failed: " + path.string());
        }
    }
    std::fclose(f);
}

FeatureMatrix read_features_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FeatureError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line.rfind("label,", 0) != 0)
        throw FeatureError(path.string() + ": missing label header");
    if (!line.empty() && line.back() == '\r') line.pop_back();

    FeatureMatrix m;
    m.label = line.substr(6);
    m.sample_id = path.stem().string();
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const char* p = line.c_str();
        for (std::size_t c = 0; c < kFeatureDim; ++c) {
            char* end = nullptr;
            double v = std::strtod(p, &end);
            if (end == p || !std::isfinite(v))
                throw MalformedRow(path.string() + ": bad value", line_no);
            m.values.push_back(v);
            p = end;
            if (c + 1 < kFeatureDim) {
                if (*p != ',')
                    throw MalformedRow(path.string() + ": expected 123 columns", line_no);
                ++p;
            }
        }
        ++m.rows;
    }
    return m;
}

}  // namespace exfilscope
