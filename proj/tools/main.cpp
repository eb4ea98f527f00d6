#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "exfilscope/checkpoint.hpp"
#include "exfilscope/feature_pipeline.hpp"
#include "exfilscope/metrics.hpp"
#include "exfilscope/model.hpp"
#include "exfilscope/pcap_io.hpp"
#include "exfilscope/traffic_synth.hpp"
#include "exfilscope/train.hpp"

namespace fs = std::filesystem;
using namespace exfilscope;

namespace {

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

std::vector<double> parse_lambdas(const std::string& s) {
    std::vector<double> out;
    for (const std::string& tok : split_csv(s)) {
        char* end = nullptr;
        double v = std::strtod(tok.c_str(), &end);
        if (end == tok.c_str() || v <= 0.0)
            throw CLI::ValidationError("--lambdas", "rates must be positive numbers");
        out.push_back(v);
    }
    if (out.empty()) throw CLI::ValidationError("--lambdas", "need at least one rate");
    return out;
}

// class labels for extraction: manifest.csv beside the pcaps wins, the
// filename stem (class_run) is the fallback
std::map<std::string, std::string> load_manifest_labels(const fs::path& dir) {
    std::map<std::string, std::string> labels;
    std::ifstream in(dir / "manifest.csv");
    if (!in) return labels;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        auto c1 = line.find(',');
        if (c1 == std::string::npos) continue;
        auto c2 = line.find(',', c1 + 1);
        labels[line.substr(0, c1)] =
            line.substr(c1 + 1, c2 == std::string::npos ? std::string::npos
                                                        : c2 - c1 - 1);
    }
    return labels;
}

std::string label_from_stem(std::string stem) {
    auto us = stem.find_last_of('_');
    if (us != std::string::npos &&
        stem.find_first_not_of("0123456789", us + 1) == std::string::npos)
        stem.resize(us);
    return stem;
}

std::vector<FeatureMatrix> read_feature_dir(const fs::path& dir) {
    std::vector<fs::path> files;
    if (!fs::is_directory(dir))
        throw FeatureError(dir.string() + " is not a directory");
    for (const auto& e : fs::directory_iterator(dir)) {
        std::string name = e.path().filename().string();
        if (name.size() > 13 && name.ends_with(".features.csv"))
            files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<FeatureMatrix> out;
    out.reserve(files.size());
    for (const fs::path& f : files) out.push_back(read_features_csv(f));
    return out;
}

std::map<std::string, std::string> load_class_remap(const fs::path& path) {
    std::map<std::string, std::string> remap;
    std::ifstream in(path);
    if (!in) throw FeatureError("cannot open classes file " + path.string());
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw FeatureError("classes file lines must be original=merged");
        remap[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return remap;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoFailure("cannot write " + path.string());
    out << text;
}

struct SynthOpts {
    std::string out;
    std::uint64_t seed = 1;
    int runs = 10;
    std::string classes;
    double scale = 0.01;
    double duration = kDefaultDuration;
    std::string profiles;
};

int cmd_synth(const SynthOpts& o) {
    CorpusConfig cfg;
    cfg.out_dir = o.out;
    cfg.seed = o.seed;
    cfg.runs_per_class = o.runs;
    cfg.scale = o.scale;
    cfg.duration = o.duration;
    if (!o.classes.empty()) cfg.classes = split_csv(o.classes);
    if (!o.profiles.empty()) cfg.profile_overrides = load_profiles(o.profiles);
    auto entries = build_corpus(cfg);
    std::map<std::string, int> per_class;
    for (const auto& e : entries) ++per_class[e.class_name];
    std::printf("wrote %zu pcaps to %s (scale %g, duration %gs)\n", entries.size(),
                cfg.out_dir.string().c_str(), o.scale, o.duration);
    for (const auto& [cls, n] : per_class) std::printf("  %-20s %d\n", cls.c_str(), n);
    return 0;
}

struct ExtractOpts {
    std::vector<std::string> inputs;
    std::string out;
    std::string aux_dir;
    bool zero_fill_missing = false;
    double window = kDefaultWindow;
    double duration = kDefaultDuration;
    std::string lambdas = "5,3,1,0.1,0.01";
    int trial = 0;
};

int cmd_extract(const ExtractOpts& o) {
    std::vector<double> lambdas = parse_lambdas(o.lambdas);
    std::vector<fs::path> pcaps;
    for (const std::string& input : o.inputs) {
        fs::path p(input);
        if (fs::is_directory(p)) {
            for (const auto& e : fs::directory_iterator(p))
                if (e.path().extension() == ".pcap") pcaps.push_back(e.path());
        } else {
            pcaps.push_back(p);
        }
    }
    std::sort(pcaps.begin(), pcaps.end());
    if (pcaps.empty()) {
        std::fprintf(stderr, "no pcap inputs found\n");
        return 1;
    }

    // aux traces must all exist up front unless zero-fill is allowed
    if (!o.aux_dir.empty() && !o.zero_fill_missing) {
        std::vector<std::string> missing;
        for (const fs::path& p : pcaps) {
            fs::path trace = fs::path(o.aux_dir) / (p.stem().string() + ".aux.csv");
            if (!fs::exists(trace)) missing.push_back(trace.string());
        }
        if (!missing.empty()) {
            std::fprintf(stderr, "missing aux traces:\n");
            for (const auto& m : missing) std::fprintf(stderr, "  %s\n", m.c_str());
            return 1;
        }
    }

    fs::create_directories(o.out);
    std::map<std::string, int> per_class;
    std::uint64_t truncated = 0, regressions = 0;
    for (const fs::path& p : pcaps) {
        auto labels = load_manifest_labels(p.parent_path());
        std::string stem = p.stem().string();
        auto it = labels.find(p.filename().string());
        std::string label = it != labels.end() ? it->second : label_from_stem(stem);

        std::vector<PacketMeta> packets = parse_pcap(p);
        std::vector<AuxRow> aux;
        bool have_aux = false;
        if (!o.aux_dir.empty()) {
            fs::path trace = fs::path(o.aux_dir) / (stem + ".aux.csv");
            if (fs::exists(trace)) {
                aux = load_aux_trace(trace);
                have_aux = true;
            }
        }
        AssemblyCounters counters;
        FeatureMatrix m =
            assemble_matrix(packets, have_aux ? &aux : nullptr, label, stem, o.window,
                            o.duration, &counters, lambdas);
        truncated += counters.truncated_packets;
        regressions += counters.clock_regressions;
        std::string out_name = stem + "_" + std::to_string(o.trial) + ".features.csv";
        write_features_csv(m, fs::path(o.out) / out_name);
        ++per_class[label];
    }

    std::printf("extracted %zu samples (window=%gs duration=%gs)\n", pcaps.size(),
                o.window, o.duration);
    for (const auto& [cls, n] : per_class) std::printf("  %-20s %d\n", cls.c_str(), n);
    if (truncated) std::printf("  truncated packets past duration: %llu\n",
                               static_cast<unsigned long long>(truncated));
    if (regressions) std::printf("  clamped clock regressions: %llu\n",
                                 static_cast<unsigned long long>(regressions));
    return 0;
}

struct TrainOpts {
    std::string features;
    std::string out = "model.ckpt";
    std::string report = "metrics.txt";
    int epochs = 50;
    double lr = 1e-3;
    int batch = 8;
    int trials = 5;
    double split = 0.7;
    std::uint64_t seed = 1;
    std::string grouping = "megasync,rclone-*";
    std::string classes_file;
    bool ablate_kitsune = false;
    bool serial = false;
    int conv_filters = 32;
    int conv_kernel = 5;
    int lstm1 = 64;
    int lstm2 = 64;
};

int cmd_train(const TrainOpts& o) {
    std::vector<FeatureMatrix> samples = read_feature_dir(o.features);
    if (samples.empty()) throw EmptyMatrix("no feature files in " + o.features);

    if (!o.classes_file.empty()) {
        auto remap = load_class_remap(o.classes_file);
        for (FeatureMatrix& m : samples) {
            auto it = remap.find(m.label);
            if (it != remap.end()) m.label = it->second;
        }
    }
    if (o.ablate_kitsune)
        for (FeatureMatrix& m : samples) zero_columns(m, kAuxDim, kFeatureDim - 1);

    LabeledDataset ds = build_dataset(std::move(samples));

    ModelConfig mc;
    mc.conv_filters = o.conv_filters;
    mc.conv_kernel = o.conv_kernel;
    mc.lstm1_hidden = o.lstm1;
    mc.lstm2_hidden = o.lstm2;
    mc.seed = o.seed;

    TrainConfig tc;
    tc.epochs = o.epochs;
    tc.learning_rate = o.lr;
    tc.batch_size = o.batch;
    tc.trials = o.trials;
    tc.split = o.split;
    tc.seed = o.seed;
    tc.parallel_trials = !o.serial;

    TrainOutput out = train(ds, mc, tc);

    Checkpoint ckpt{out.config, out.class_names, out.norm, out.params};
    save_checkpoint(ckpt, o.out);
    std::string report = render_report(out, split_csv(o.grouping));
    write_text(o.report, report);

    MetricsSummary s = compute_metrics(out.summed);
    std::printf("trained %d trial(s) on %zu samples, %zu classes\n", o.trials,
                ds.samples.size(), ds.class_names.size());
    std::printf("summed micro F: %.4f  summed macro F: %.4f\n", s.micro_f, s.macro_f);
    auto malicious = resolve_grouping(out.class_names, split_csv(o.grouping));
    if (!malicious.empty()) {
        MetricsSummary b =
            compute_metrics(collapse_binary(out.summed, out.class_names, malicious));
        std::printf("summed binary macro F: %.4f\n", b.macro_f);
    }
    std::printf("checkpoint: %s\nreport: %s\n", o.out.c_str(), o.report.c_str());
    return 0;
}

struct EvalOpts {
    std::string checkpoint;
    std::string features;
    std::string report = "eval.txt";
    std::string grouping = "megasync,rclone-*";
};

int cmd_eval(const EvalOpts& o) {
    Checkpoint ckpt = load_checkpoint(o.checkpoint);
    std::vector<FeatureMatrix> samples = read_feature_dir(o.features);
    if (samples.empty()) throw EmptyMatrix("no feature files in " + o.features);

    std::map<std::string, int> class_index;
    for (std::size_t i = 0; i < ckpt.class_names.size(); ++i)
        class_index[ckpt.class_names[i]] = int(i);
    for (const FeatureMatrix& m : samples) {
        if (!class_index.count(m.label))
            throw ShapeMismatch("label '" + m.label + "' (" + m.sample_id +
                                ") is not in the checkpoint's class table");
        if (int(m.rows) != ckpt.config.time_steps)
            throw ShapeMismatch(m.sample_id + " has " + std::to_string(m.rows) +
                                " rows, checkpoint expects " +
                                std::to_string(ckpt.config.time_steps));
    }

    Model model(ckpt.config);
    model.params() = ckpt.params;
    std::vector<int> preds = predict(model, ckpt.norm, samples);

    ConfusionMatrix cm(ckpt.class_names.size());
    for (std::size_t i = 0; i < samples.size(); ++i)
        ++cm.at(class_index[samples[i].label], preds[i]);

    TrainOutput shim;
    shim.config = ckpt.config;
    shim.class_names = ckpt.class_names;
    shim.summed = cm;
    TrialResult tr;
    tr.cm = cm;
    MetricsSummary s = compute_metrics(cm);
    tr.micro_f = s.micro_f;
    tr.macro_f = s.macro_f;
    tr.norm = ckpt.norm;
    shim.trials.push_back(std::move(tr));
    write_text(o.report, render_report(shim, split_csv(o.grouping)));

    std::printf("evaluated %zu samples\n", samples.size());
    std::printf("micro F: %.4f  macro F: %.4f\n", s.micro_f, s.macro_f);
    auto malicious = resolve_grouping(ckpt.class_names, split_csv(o.grouping));
    if (!malicious.empty()) {
        MetricsSummary b =
            compute_metrics(collapse_binary(cm, ckpt.class_names, malicious));
        std::printf("binary macro F: %.4f\n", b.macro_f);
    }
    std::printf("report: %s\n", o.report.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"exfilscope: synthesize exfiltration traffic, extract damped network "
                 "features, train and evaluate the detector"};
    app.require_subcommand(1);
    app.set_config("--config");

    SynthOpts so;
    CLI::App* synth = app.add_subcommand("synth", "generate the labeled pcap corpus");
    synth->add_option("--out", so.out, "output directory")->required();
    synth->add_option("--seed", so.seed, "corpus seed");
    synth->add_option("--runs", so.runs, "captures per class")
        ->check(CLI::PositiveNumber);
    synth->add_option("--classes", so.classes, "comma-separated class subset");
    synth->add_option("--scale", so.scale, "desk-scale bandwidth factor")
        ->check(CLI::PositiveNumber);
    synth->add_option("--duration", so.duration, "scenario seconds")
        ->check(CLI::PositiveNumber);
    synth->add_option("--profiles", so.profiles, "JSON profile overrides")
        ->check(CLI::ExistingFile);

    ExtractOpts eo;
    CLI::App* extract =
        app.add_subcommand("extract", "turn pcaps into 300x123 feature files");
    extract->add_option("inputs", eo.inputs, "pcap files or directories")->required();
    extract->add_option("--out", eo.out, "output directory")->required();
    extract->add_option("--aux", eo.aux_dir, "directory of <stem>.aux.csv traces");
    extract->add_flag("--zero-fill-missing-aux", eo.zero_fill_missing,
                      "zero-fill the aux block when a trace is absent");
    extract->add_option("--window", eo.window, "feature window seconds")
        ->check(CLI::PositiveNumber);
    extract->add_option("--duration", eo.duration, "sample seconds")
        ->check(CLI::PositiveNumber);
    extract->add_option("--lambdas", eo.lambdas, "five decay rates per second");
    extract->add_option("--trial", eo.trial, "trial tag in output names");

    TrainOpts to;
    CLI::App* tr = app.add_subcommand("train", "train the CNN+LSTM detector");
    tr->add_option("--features", to.features, "feature directory")->required();
    tr->add_option("--out", to.out, "checkpoint path");
    tr->add_option("--report", to.report, "metrics report path");
    tr->add_option("--epochs", to.epochs)->check(CLI::PositiveNumber);
    tr->add_option("--lr", to.lr)->check(CLI::PositiveNumber);
    tr->add_option("--batch", to.batch)->check(CLI::PositiveNumber);
    tr->add_option("--trials", to.trials)->check(CLI::PositiveNumber);
    tr->add_option("--split", to.split, "training fraction")
        ->check(CLI::Range(0.05, 0.95));
    tr->add_option("--seed", to.seed);
    tr->add_option("--grouping", to.grouping, "malicious class patterns");
    tr->add_option("--classes-file", to.classes_file, "original=merged label remap");
    tr->add_flag("--ablate-kitsune", to.ablate_kitsune,
                 "zero the network feature columns before training");
    tr->add_flag("--serial", to.serial, "run trials on one thread");
    tr->add_option("--conv-filters", to.conv_filters)->check(CLI::PositiveNumber);
    tr->add_option("--conv-kernel", to.conv_kernel)->check(CLI::PositiveNumber);
    tr->add_option("--lstm1", to.lstm1)->check(CLI::PositiveNumber);
    tr->add_option("--lstm2", to.lstm2)->check(CLI::PositiveNumber);

    EvalOpts vo;
    CLI::App* ev = app.add_subcommand("eval", "evaluate an existing checkpoint");
    ev->add_option("--checkpoint", vo.checkpoint)->required();
    ev->add_option("--features", vo.features)->required();
    ev->add_option("--report", vo.report);
    ev->add_option("--grouping", vo.grouping);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (synth->parsed()) return cmd_synth(so);
        if (extract->parsed()) return cmd_extract(eo);
        if (tr->parsed()) return cmd_train(to);
        if (ev->parsed()) return cmd_eval(vo);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
