#include "exfilscope/traffic_synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

#include "exfilscope/pcap_io.hpp"
#include "exfilscope/rng.hpp"

namespace exfilscope {

namespace {

// fixed lab endpoints (documentation address ranges)
constexpr std::uint32_t kVictimIp = 0x0a00002a;  // 10.0.0.42
const MacAddr kVictimMac = {0x0a, 0x1b, 0x2c, 0x3d, 0x4e, 0x5f};

MacAddr server_mac(std::uint32_t ip) {
    return {0x02, 0xff, std::uint8_t(ip >> 24), std::uint8_t(ip >> 16),
            std::uint8_t(ip >> 8), std::uint8_t(ip)};
}

std::vector<std::uint32_t> mega_ips() {
    return {make_ipv4(198, 51, 100, 10), make_ipv4(198, 51, 100, 11),
            make_ipv4(198, 51, 100, 12)};
}

std::vector<std::uint32_t> gdrive_ips() {
    return {make_ipv4(203, 0, 113, 20), make_ipv4(203, 0, 113, 21),
            make_ipv4(203, 0, 113, 22)};
}

double clip_size(double v) { return std::min(1514.0, std::max(60.0, v)); }

// accumulates events, then orders them into one capture-ready stream
class StreamBuilder {
public:
    void emit(double t, std::uint32_t size, bool outbound, std::uint32_t peer_ip,
              std::uint16_t local_port, std::uint16_t peer_port, SynthProtocol proto) {
        PacketMeta p;
        p.timestamp = t;
        p.frame_len = size;
        p.transport = proto == SynthProtocol::TcpLike ? Transport::Tcp : Transport::Udp;
        if (outbound) {
            p.src_mac = kVictimMac;
            p.src_ip = kVictimIp;
            p.dst_ip = peer_ip;
            p.src_port = local_port;
            p.dst_port = peer_port;
        } else {
            p.src_mac = server_mac(peer_ip);
            p.src_ip = peer_ip;
            p.dst_ip = kVictimIp;
            p.src_port = peer_port;
            p.dst_port = local_port;
        }
        packets_.push_back(p);
    }

    std::vector<PacketMeta> finish() {
        std::stable_sort(packets_.begin(), packets_.end(),
                         [](const PacketMeta& a, const PacketMeta& b) {
                             return a.timestamp < b.timestamp;
                         });
        return std::move(packets_);
    }

private:
    std::vector<PacketMeta> packets_;
};

struct SubStream {
    std::uint32_t dst_ip;
    std::uint16_t src_port;
    std::uint16_t dst_port;
    double next_free_t = 0.0;
};

}  // namespace

const std::vector<std::string>& all_class_names() {
    static const std::vector<std::string> names = {
        "rclone-gdrive-5M", "rclone-gdrive-50M", "rclone-gdrive-100M",
        "rclone-mega-5M",   "rclone-mega-50M",   "rclone-mega-100M",
        "megasync",         "firefox",           "excel",
        "powerpoint",       "word",              "teams",
        "zoom"};
    return names;
}

bool is_exfil_class(const std::string& class_name) {
    return class_name.rfind("rclone-", 0) == 0 || class_name == "megasync";
}

SynthProfile default_profile(const std::string& class_name, double scale) {
    SynthProfile p;
    p.class_name = class_name;

    auto rclone = [&](std::vector<std::uint32_t> ips, double bw) {
        p.upload_fraction = 0.97;
        p.bandwidth_limit = bw * scale;
        p.transfers = 3;            // Conti-playbook command line values
        p.multi_thread_streams = 1;
        p.pkt_mean = 1438.0;
        p.pkt_std = 70.0;
        p.fluctuation_sigma = 0.2;
        p.dst_ips = std::move(ips);
        p.dst_ports = {443};
        p.protocol = SynthProtocol::TcpLike;
    };

    if (class_name == "rclone-gdrive-5M") rclone(gdrive_ips(), 5e6);
    else if (class_name == "rclone-gdrive-50M") rclone(gdrive_ips(), 50e6);
    else if (class_name == "rclone-gdrive-100M") rclone(gdrive_ips(), 100e6);
    else if (class_name == "rclone-mega-5M") rclone(mega_ips(), 5e6);
    else if (class_name == "rclone-mega-50M") rclone(mega_ips(), 50e6);
    else if (class_name == "rclone-mega-100M") rclone(mega_ips(), 100e6);
    else if (class_name == "megasync") {
        // sync client runs unthrottled; best-effort link modeled as a capped
        // rate with strong fluctuation
        p.upload_fraction = 0.96;
        p.bandwidth_limit = 60e6 * scale;
        p.transfers = 6;
        p.multi_thread_streams = 2;
        p.pkt_mean = 1330.0;
        p.pkt_std = 150.0;
        p.fluctuation_sigma = 0.35;
        p.dst_ips = mega_ips();
        p.dst_ports = {443};
        p.protocol = SynthProtocol::TcpLike;
    } else if (class_name == "firefox") {
        p.upload_fraction = 0.08;
        p.bandwidth_limit = 80e3 * scale;  // mean download volume per second
        p.burst_rate = 0.4;
        p.pkt_mean = 1380.0;
        p.pkt_std = 130.0;
        std::vector<std::uint32_t> pool;
        for (int i = 0; i < 12; ++i) pool.push_back(make_ipv4(192, 0, 2, std::uint8_t(50 + i)));
        p.dst_ips = std::move(pool);
        p.dst_ports = {443, 80};
        p.protocol = SynthProtocol::TcpLike;
    } else if (class_name == "excel" || class_name == "powerpoint" || class_name == "word") {
        p.upload_fraction = 0.35;
        p.dst_ips = {make_ipv4(192, 0, 2, 30)};  // OneDrive front end
        p.dst_ports = {443};
        p.protocol = SynthProtocol::TcpLike;
        if (class_name == "excel") {
            p.bandwidth_limit = 1.7e3 * scale;
            p.request_period = 2.2;
            p.pkt_mean = 980.0;
            p.pkt_std = 240.0;
        } else if (class_name == "powerpoint") {
            p.bandwidth_limit = 6.5e3 * scale;
            p.request_period = 3.6;
            p.pkt_mean = 1310.0;
            p.pkt_std = 120.0;
        } else {
            p.bandwidth_limit = 3.2e3 * scale;
            p.request_period = 2.8;
            p.pkt_mean = 1130.0;
            p.pkt_std = 200.0;
        }
    } else if (class_name == "teams") {
        p.upload_fraction = 0.5;
        p.symmetric_rate = 120e3 * scale;
        p.pkt_mean = 1020.0;
        p.pkt_std = 170.0;
        p.dst_ips = {make_ipv4(192, 0, 2, 70)};
        p.dst_ports = {3478};
        p.protocol = SynthProtocol::UdpLike;
    } else if (class_name == "zoom") {
        p.upload_fraction = 0.5;
        p.symmetric_rate = 170e3 * scale;
        p.pkt_mean = 880.0;
        p.pkt_std = 210.0;
        p.dst_ips = {make_ipv4(192, 0, 2, 80)};
        p.dst_ports = {8801};
        p.protocol = SynthProtocol::UdpLike;
    } else {
        throw UnknownClass("no built-in profile for class " + class_name);
    }
    return p;
}

std::vector<PacketMeta> generate_exfil(const SynthProfile& profile,
                                       const Scenario& scenario) {
    if (!is_exfil_class(profile.class_name))
        throw UnknownClass(profile.class_name + " is not an exfiltration class");
    if (scenario.duration <= 0.0) return {};

    Rng rng(derive_seed(profile.seed, 0xe1f));
    StreamBuilder out;

    const int streams = std::max(1, profile.transfers) *
                        std::max(1, profile.multi_thread_streams);
    std::vector<SubStream> subs;
    subs.reserve(streams);
    for (int s = 0; s < streams; ++s) {
        SubStream ss;
        ss.dst_ip = profile.dst_ips[s % profile.dst_ips.size()];
        ss.src_port = std::uint16_t(49152 + s);
        ss.dst_port = profile.dst_ports[s % profile.dst_ports.size()];
        subs.push_back(ss);
    }

    // connection setup, one small outbound packet per sub-stream; anchors the
    // capture at t = 0
    for (int s = 0; s < streams; ++s)
        out.emit(s * 1e-4, 66, true, subs[s].dst_ip, subs[s].src_port, subs[s].dst_port,
                 profile.protocol);

    const auto whole_seconds = static_cast<std::size_t>(std::ceil(scenario.duration));
    double target_bytes = 0.0;
    double sent_bytes = 0.0;
    int rr = 0;           // round-robin sub-stream cursor
    int acks_pending = 0; // one inbound ack per two outbound data packets

    for (std::size_t sec = 0; sec < whole_seconds; ++sec) {
        double span = std::min(1.0, scenario.duration - double(sec));
        double mult = profile.fluctuation_sigma > 0.0
                          ? std::exp(profile.fluctuation_sigma * rng.gauss())
                          : 1.0;
        target_bytes += profile.bandwidth_limit * mult * span;

        // sizes of all data packets in this second, then even spacing
        std::vector<std::uint32_t> sizes;
        while (sent_bytes < target_bytes) {
            auto sz = static_cast<std::uint32_t>(
                std::llround(clip_size(rng.gauss(profile.pkt_mean, profile.pkt_std))));
            sizes.push_back(sz);
            sent_bytes += sz;
        }
        if (sizes.empty()) continue;
        double dt = span / double(sizes.size());
        for (std::size_t k = 0; k < sizes.size(); ++k) {
            SubStream& ss = subs[rr];
            rr = (rr + 1) % streams;
            double t = double(sec) + (double(k) + rng.uniform(0.1, 0.9)) * dt;
            out.emit(t, sizes[k], true, ss.dst_ip, ss.src_port, ss.dst_port,
                     profile.protocol);
            if (++acks_pending >= 2) {
                acks_pending = 0;
                double ta = t + 0.35 * dt;
                if (ta < scenario.duration)
                    out.emit(ta, 60, false, ss.dst_ip, ss.src_port, ss.dst_port,
                             profile.protocol);
            }
        }
    }

    // per-stream keepalive chatter every 10 s
    for (int s = 0; s < streams; ++s) {
        for (double t = 10.0 + s * 2e-4; t < scenario.duration; t += 10.0) {
            out.emit(t, 66, true, subs[s].dst_ip, subs[s].src_port, subs[s].dst_port,
                     profile.protocol);
            out.emit(t + 1e-4, 66, false, subs[s].dst_ip, subs[s].src_port,
                     subs[s].dst_port, profile.protocol);
        }
    }

    return out.finish();
}

namespace {

std::vector<PacketMeta> generate_browser(const SynthProfile& profile,
                                         const Scenario& scenario, Rng& rng) {
    StreamBuilder out;
    out.emit(0.0, 74, true, profile.dst_ips[0], 49200, profile.dst_ports[0],
             profile.protocol);

    double burst_volume = profile.bandwidth_limit / std::max(profile.burst_rate, 1e-9);
    int n_bursts = std::max(
        1, int(std::floor(profile.burst_rate * scenario.duration)));
    std::uint16_t next_port = 49201;
    for (int b = 0; b < n_bursts; ++b) {
        double t0 = rng.uniform(0.0, scenario.duration * 0.97);
        std::uint32_t dst = profile.dst_ips[rng.uniform_index(profile.dst_ips.size())];
        std::uint16_t sport = next_port++;
        std::uint16_t dport = profile.dst_ports[rng.uniform_index(profile.dst_ports.size())];
        double volume = burst_volume * rng.uniform(0.4, 1.8);

        double req = clip_size(rng.gauss(600.0, 120.0));
        out.emit(t0, std::uint32_t(req), true, dst, sport, dport, profile.protocol);
        double t = t0 + 0.03;
        double received = 0.0;
        int data_since_ack = 0;
        while (received < volume && t < scenario.duration) {
            double sz = clip_size(rng.gauss(profile.pkt_mean, profile.pkt_std));
            out.emit(t, std::uint32_t(sz), false, dst, sport, dport, profile.protocol);
            received += sz;
            if (++data_since_ack >= 2) {
                data_since_ack = 0;
                if (t + 4e-4 < scenario.duration)
                    out.emit(t + 4e-4, 60, true, dst, sport, dport, profile.protocol);
            }
            t += rng.uniform(0.8e-3, 1.6e-3);
        }
    }
    return out.finish();
}

std::vector<PacketMeta> generate_office(const SynthProfile& profile,
                                        const Scenario& scenario, Rng& rng) {
    StreamBuilder out;
    std::uint32_t dst = profile.dst_ips[0];
    std::uint16_t sport = 49300;
    std::uint16_t dport = profile.dst_ports[0];
    out.emit(0.0, 74, true, dst, sport, dport, profile.protocol);

    double response_volume = profile.bandwidth_limit * profile.request_period;
    for (double t = 0.25; t < scenario.duration; t += profile.request_period) {
        double jt = t + rng.uniform(0.0, 0.2);
        if (jt >= scenario.duration) break;
        double req = clip_size(rng.gauss(460.0, 90.0));
        out.emit(jt, std::uint32_t(req), true, dst, sport, dport, profile.protocol);
        double volume = response_volume * rng.uniform(0.5, 1.6);
        double rt = jt + rng.uniform(0.02, 0.06);
        double received = 0.0;
        while (received < volume && rt < scenario.duration) {
            double sz = clip_size(rng.gauss(profile.pkt_mean, profile.pkt_std));
            out.emit(rt, std::uint32_t(sz), false, dst, sport, dport, profile.protocol);
            received += sz;
            rt += rng.uniform(1e-3, 3e-3);
        }
        if (rt + 1e-3 < scenario.duration)
            out.emit(rt + 1e-3, 60, true, dst, sport, dport, profile.protocol);
    }

    // word autosaves push edits back out
    if (profile.class_name == "word") {
        for (double t = 9.0; t < scenario.duration; t += 9.0) {
            double upload = profile.bandwidth_limit * 3.0 * rng.uniform(0.6, 1.4);
            double ut = t + rng.uniform(0.0, 0.3);
            double sent = 0.0;
            while (sent < upload && ut < scenario.duration) {
                double sz = clip_size(rng.gauss(1200.0, 180.0));
                out.emit(ut, std::uint32_t(sz), true, dst, sport, dport, profile.protocol);
                sent += sz;
                ut += rng.uniform(1e-3, 2e-3);
            }
        }
    }
    return out.finish();
}

std::vector<PacketMeta> generate_teleconf(const SynthProfile& profile,
                                          const Scenario& scenario, Rng& rng) {
    StreamBuilder out;
    std::uint32_t dst = profile.dst_ips[0];
    std::uint16_t sport = 50000;
    std::uint16_t dport = profile.dst_ports[0];
    out.emit(0.0, 120, true, dst, sport, dport, profile.protocol);

    double mean_pkt = std::min(profile.pkt_mean, 1300.0);
    double spacing = mean_pkt / std::max(profile.symmetric_rate, 1.0);
    double t = spacing;
    while (t < scenario.duration) {
        double so = clip_size(rng.gauss(profile.pkt_mean, profile.pkt_std));
        out.emit(t, std::uint32_t(so), true, dst, sport, dport, profile.protocol);
        double si = clip_size(rng.gauss(profile.pkt_mean, profile.pkt_std));
        double ti = t + spacing * 0.5 * rng.uniform(0.6, 1.4);
        if (ti < scenario.duration)
            out.emit(ti, std::uint32_t(si), false, dst, sport, dport, profile.protocol);
        t += spacing * rng.uniform(0.7, 1.3);
    }
    return out.finish();
}

}  // namespace

std::vector<PacketMeta> generate_benign(const SynthProfile& profile,
                                        const Scenario& scenario) {
    static const std::vector<std::string> benign = {"firefox", "excel", "powerpoint",
                                                    "word",    "teams", "zoom"};
    if (std::find(benign.begin(), benign.end(), profile.class_name) == benign.end())
        throw UnknownClass(profile.class_name + " is not a benign class");
    if (scenario.duration <= 0.0) return {};

    Rng rng(derive_seed(profile.seed, 0xbe9));
    if (profile.class_name == "firefox") return generate_browser(profile, scenario, rng);
    if (profile.class_name == "teams" || profile.class_name == "zoom")
        return generate_teleconf(profile, scenario, rng);
    return generate_office(profile, scenario, rng);
}

std::vector<PacketMeta> generate(const SynthProfile& profile, const Scenario& scenario) {
    return is_exfil_class(profile.class_name) ? generate_exfil(profile, scenario)
                                              : generate_benign(profile, scenario);
}

void apply_scale(SynthProfile& profile, double scale) {
    profile.bandwidth_limit *= scale;
    profile.symmetric_rate *= scale;
}

std::map<std::string, SynthProfile> load_profiles(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw SynthError("cannot open profile file " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw SynthError(path.string() + ": " + e.what());
    }
    if (!doc.contains("profiles") || !doc["profiles"].is_array())
        throw SynthError(path.string() + ": expected a top-level \"profiles\" array");

    std::map<std::string, SynthProfile> out;
    for (const auto& entry : doc["profiles"]) {
        if (!entry.contains("class"))
            throw SynthError(path.string() + ": profile entry without \"class\"");
        std::string cls = entry["class"].get<std::string>();
        SynthProfile p = default_profile(cls);  // unlisted fields keep defaults
        if (entry.contains("bandwidth_limit"))
            p.bandwidth_limit = entry["bandwidth_limit"].get<double>();
        if (entry.contains("upload_fraction"))
            p.upload_fraction = entry["upload_fraction"].get<double>();
        if (entry.contains("transfers")) p.transfers = entry["transfers"].get<int>();
        if (entry.contains("multi_thread_streams"))
            p.multi_thread_streams = entry["multi_thread_streams"].get<int>();
        if (entry.contains("pkt_mean")) p.pkt_mean = entry["pkt_mean"].get<double>();
        if (entry.contains("pkt_std")) p.pkt_std = entry["pkt_std"].get<double>();
        if (entry.contains("fluctuation_sigma"))
            p.fluctuation_sigma = entry["fluctuation_sigma"].get<double>();
        if (entry.contains("request_period"))
            p.request_period = entry["request_period"].get<double>();
        if (entry.contains("burst_rate")) p.burst_rate = entry["burst_rate"].get<double>();
        if (entry.contains("symmetric_rate"))
            p.symmetric_rate = entry["symmetric_rate"].get<double>();
        if (entry.contains("protocol")) {
            std::string proto = entry["protocol"].get<std::string>();
            if (proto == "tcp")
                p.protocol = SynthProtocol::TcpLike;
            else if (proto == "udp")
                p.protocol = SynthProtocol::UdpLike;
            else
                throw SynthError(cls + ": protocol must be tcp or udp");
        }
        if (entry.contains("dst_ips")) {
            p.dst_ips.clear();
            for (const auto& ip : entry["dst_ips"])
                p.dst_ips.push_back(parse_ipv4(ip.get<std::string>()));
            if (p.dst_ips.empty()) throw SynthError(cls + ": dst_ips must not be empty");
        }
        if (entry.contains("dst_ports")) {
            p.dst_ports.clear();
            for (const auto& port : entry["dst_ports"])
                p.dst_ports.push_back(port.get<std::uint16_t>());
            if (p.dst_ports.empty())
                throw SynthError(cls + ": dst_ports must not be empty");
        }
        if (p.bandwidth_limit < 0 || p.transfers < 1 || p.fluctuation_sigma < 0)
            throw SynthError(cls + ": invalid profile values");
        out[cls] = std::move(p);
    }
    return out;
}

std::vector<CorpusEntry> build_corpus(const CorpusConfig& config) {
    std::filesystem::create_directories(config.out_dir);
    const std::vector<std::string>& classes =
        config.classes.empty() ? all_class_names() : config.classes;

    std::vector<CorpusEntry> entries;
    std::uint64_t stream = 0;
    for (const std::string& cls : classes) {
        for (int run = 0; run < config.runs_per_class; ++run) {
            SynthProfile profile;
            auto ov = config.profile_overrides.find(cls);
            if (ov != config.profile_overrides.end()) {
                profile = ov->second;
                apply_scale(profile, config.scale);
            } else {
                profile = default_profile(cls, config.scale);
            }
            profile.seed = derive_seed(config.seed, stream++);
            Scenario sc{config.duration, cls};
            std::vector<PacketMeta> packets = generate(profile, sc);
            std::string name = cls + "_" + std::to_string(run) + ".pcap";
            write_pcap(packets, config.out_dir / name);
            entries.push_back({name, cls, profile.seed});
        }
    }

    std::ofstream manifest(config.out_dir / "manifest.csv");
    if (!manifest) throw IoFailure("cannot write manifest in " + config.out_dir.string());
    manifest << "file,class,seed\n";
    for (const CorpusEntry& e : entries)
        manifest << e.file << ',' << e.class_name << ',' << e.seed << '\n';
    return entries;
}

}  // namespace exfilscope
