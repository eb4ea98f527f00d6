#include "exfilscope/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace exfilscope {

namespace {

constexpr const char* kTag = "exfilscope-checkpoint v1";

void write_doubles(std::FILE* f, const char* name, const std::vector<double>& v) {
    std::fprintf(f, "%s %zu", name, v.size());
    char buf[40];
    for (double d : v) {
        std::snprintf(buf, sizeof buf, " %a", d);
        std::fputs(buf, f);
    }
    std::fputc('\n', f);
}

std::vector<double> read_doubles(std::istringstream& line, const std::string& name) {
    std::size_t n = 0;
    if (!(line >> n)) throw CheckpointError("bad count for " + name);
    std::vector<double> v(n);
    std::string tok;
    for (std::size_t i = 0; i < n; ++i) {
        if (!(line >> tok)) throw CheckpointError(name + " ends early");
        char* end = nullptr;
        v[i] = std::strtod(tok.c_str(), &end);
        if (end == tok.c_str()) throw CheckpointError("bad value in " + name);
    }
    return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    std::FILE* f = std::fopen(path.string().c_str(), "wb");
    if (!f) throw CheckpointError("cannot open " + path.string() + " for writing");
    const ModelConfig& c = ckpt.config;
    std::fprintf(f, "%s\n", kTag);
    std::fprintf(f, "config %d %d %d %d %d %d %d %llu\n", c.time_steps, c.features,
                 c.conv_filters, c.conv_kernel, c.lstm1_hidden, c.lstm2_hidden,
                 c.classes, static_cast<unsigned long long>(c.seed));
    std::fprintf(f, "classes %zu\n", ckpt.class_names.size());
    for (const std::string& name : ckpt.class_names) std::fprintf(f, "%s\n", name.c_str());
    write_doubles(f, "norm_mean", ckpt.norm.mean);
    write_doubles(f, "norm_std", ckpt.norm.stddev);
    write_doubles(f, "params", ckpt.params);
    std::fprintf(f, "end\n");
    if (std::fclose(f) != 0) throw CheckpointError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw CheckpointError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kTag)
        throw CheckpointError(path.string() + ": not an exfilscope checkpoint");

    Checkpoint ckpt;
    bool saw_end = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "config") {
            unsigned long long seed = 0;
            ModelConfig& c = ckpt.config;
            if (!(ls >> c.time_steps >> c.features >> c.conv_filters >> c.conv_kernel >>
                  c.lstm1_hidden >> c.lstm2_hidden >> c.classes >> seed))
                throw CheckpointError("bad config line");
            c.seed = seed;
        } else if (key == "classes") {
            std::size_t n = 0;
            if (!(ls >> n)) throw CheckpointError("bad classes line");
            for (std::size_t i = 0; i < n; ++i) {
                if (!std::getline(in, line) || line.empty())
                    throw CheckpointError("class table ends early");
                ckpt.class_names.push_back(line);
            }
        } else if (key == "norm_mean") {
            ckpt.norm.mean = read_doubles(ls, key);
        } else if (key == "norm_std") {
            ckpt.norm.stddev = read_doubles(ls, key);
        } else if (key == "params") {
            ckpt.params = read_doubles(ls, key);
        } else if (key == "end") {
            saw_end = true;
            break;
        } else {
            throw CheckpointError("unknown checkpoint key: " + key);
        }
    }
    if (!saw_end) throw CheckpointError(path.string() + ": truncated checkpoint");

    ParamLayout layout(ckpt.config);
    if (ckpt.params.size() != layout.total)
        throw CheckpointError("parameter count does not match the stored config");
    if (int(ckpt.class_names.size()) != ckpt.config.classes)
        throw CheckpointError("class table does not match the stored config");
    return ckpt;
}

}  // namespace exfilscope
