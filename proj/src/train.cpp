#include "exfilscope/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <thread>

#include "exfilscope/rng.hpp"

namespace exfilscope {

namespace {

std::vector<double> normalize_sample(const FeatureMatrix& m, const NormStats& norm) {
    std::vector<double> out(m.values.size());
    const std::size_t cols = kFeatureDim;
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double* src = m.values.data() + r * cols;
        double* dst = out.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) {
            double sd = std::max(norm.stddev[c], 1e-8);
            dst[c] = (src[c] - norm.mean[c]) / sd;
        }
    }
    return out;
}

NormStats compute_norm(const LabeledDataset& ds, const std::vector<std::size_t>& train_idx) {
    const std::size_t cols = kFeatureDim;
    NormStats norm;
    norm.mean.assign(cols, 0.0);
    norm.stddev.assign(cols, 0.0);
    std::size_t n_rows = 0;
    for (std::size_t i : train_idx) n_rows += ds.samples[i].rows;
    if (n_rows == 0) return norm;

    for (std::size_t i : train_idx) {
        const FeatureMatrix& m = ds.samples[i];
        for (std::size_t r = 0; r < m.rows; ++r) {
            const double* row = m.values.data() + r * cols;
            for (std::size_t c = 0; c < cols; ++c) norm.mean[c] += row[c];
        }
    }
    for (std::size_t c = 0; c < cols; ++c) norm.mean[c] /= double(n_rows);

    for (std::size_t i : train_idx) {
        const FeatureMatrix& m = ds.samples[i];
        for (std::size_t r = 0; r < m.rows; ++r) {
            const double* row = m.values.data() + r * cols;
            for (std::size_t c = 0; c < cols; ++c) {
                double d = row[c] - norm.mean[c];
                norm.stddev[c] += d * d;
            }
        }
    }
    for (std::size_t c = 0; c < cols; ++c)
        norm.stddev[c] = std::sqrt(norm.stddev[c] / double(n_rows));
    return norm;
}

TrialResult run_trial(const LabeledDataset& ds, const ModelConfig& mc,
                      const TrainConfig& tc, int trial,
                      std::vector<double>* params_out) {
    Rng rng(derive_seed(tc.seed, 0x117 + std::uint64_t(trial)));

    // stratified split
    std::vector<std::vector<std::size_t>> by_class(mc.classes);
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
        by_class[ds.labels[i]].push_back(i);
    std::vector<std::size_t> train_idx, test_idx;
    for (auto& idxs : by_class) {
        rng.shuffle(idxs);
        std::size_t n = idxs.size();
        auto n_train = std::size_t(std::llround(tc.split * double(n)));
        n_train = std::min(std::max<std::size_t>(n_train, 1), n - 1);
        train_idx.insert(train_idx.end(), idxs.begin(), idxs.begin() + n_train);
        test_idx.insert(test_idx.end(), idxs.begin() + n_train, idxs.end());
    }

    TrialResult result;
    result.norm = compute_norm(ds, train_idx);

    std::vector<std::vector<double>> train_x;
    train_x.reserve(train_idx.size());
    std::vector<int> train_y;
    for (std::size_t i : train_idx) {
        train_x.push_back(normalize_sample(ds.samples[i], result.norm));
        train_y.push_back(ds.labels[i]);
    }

    Model model(mc);
    model.init_params(derive_seed(tc.seed, 0x5eed + std::uint64_t(trial)));

    std::vector<std::size_t> order(train_x.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<double> grad(model.layout().total);

    double epoch_loss = 0.0;
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        rng.shuffle(order);
        epoch_loss = 0.0;
        for (std::size_t b = 0; b < order.size(); b += tc.batch_size) {
            std::size_t end = std::min(order.size(), b + tc.batch_size);
            std::fill(grad.begin(), grad.end(), 0.0);
            double batch_loss = 0.0;
            for (std::size_t s = b; s < end; ++s)
                batch_loss += model.loss_and_grad(train_x[order[s]], train_y[order[s]],
                                                  grad);
            double inv = 1.0 / double(end - b);
            if (!std::isfinite(batch_loss))
                throw DivergedLoss("non-finite loss in trial " + std::to_string(trial) +
                                   ", epoch " + std::to_string(epoch));
            std::vector<double>& p = model.params();
            double step = tc.learning_rate * inv;
            for (std::size_t i = 0; i < p.size(); ++i) p[i] -= step * grad[i];
            epoch_loss += batch_loss;
        }
    }
    result.final_loss = train_x.empty() ? 0.0 : epoch_loss / double(train_x.size());

    result.cm = ConfusionMatrix(mc.classes);
    for (std::size_t i : test_idx) {
        std::vector<double> x = normalize_sample(ds.samples[i], result.norm);
        int pred = model.predict_one(x);
        ++result.cm.at(ds.labels[i], pred);
    }
    MetricsSummary ms = compute_metrics(result.cm);
    result.micro_f = ms.micro_f;
    result.macro_f = ms.macro_f;

    if (params_out) *params_out = model.params();
    return result;
}

}  // namespace

LabeledDataset build_dataset(std::vector<FeatureMatrix> samples) {
    LabeledDataset ds;
    std::map<std::string, int> index;
    for (const FeatureMatrix& m : samples) index.emplace(m.label, 0);
    for (auto& [name, idx] : index) {
        idx = int(ds.class_names.size());
        ds.class_names.push_back(name);
    }
    ds.labels.reserve(samples.size());
    for (const FeatureMatrix& m : samples) ds.labels.push_back(index[m.label]);
    ds.samples = std::move(samples);
    return ds;
}

TrainOutput train(const LabeledDataset& dataset, ModelConfig model_config,
                  const TrainConfig& train_config) {
    if (dataset.samples.empty()) throw EmptyMatrix("no samples to train on");
    model_config.classes = int(dataset.class_names.size());
    if (model_config.classes < 2)
        throw ClassTooSmall("need at least 2 classes, have " +
                            std::to_string(model_config.classes));

    std::vector<std::size_t> per_class(model_config.classes, 0);
    for (int l : dataset.labels) ++per_class[l];
    for (int c = 0; c < model_config.classes; ++c)
        if (per_class[c] < 2)
            throw ClassTooSmall("class " + dataset.class_names[c] + " has " +
                                std::to_string(per_class[c]) +
                                " samples, need at least 2");

    if (!dataset.samples.front().values.empty()) {
        model_config.time_steps = int(dataset.samples.front().rows);
        model_config.features = int(kFeatureDim);
    }

    TrainOutput out;
    out.config = model_config;
    out.class_names = dataset.class_names;
    out.trials.resize(train_config.trials);
    std::vector<std::vector<double>> trial_params(train_config.trials);

    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const unsigned n_threads =
        train_config.parallel_trials
            ? std::min<unsigned>(hw, unsigned(train_config.trials))
            : 1;

    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(train_config.trials);
    auto worker = [&] {
        for (;;) {
            int t = next.fetch_add(1);
            if (t >= train_config.trials) return;
            try {
                out.trials[t] =
                    run_trial(dataset, model_config, train_config, t, &trial_params[t]);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        }
    };
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    out.summed = ConfusionMatrix(model_config.classes);
    for (const TrialResult& tr : out.trials) out.summed += tr.cm;
    out.params = std::move(trial_params.back());
    out.norm = out.trials.back().norm;
    return out;
}

std::vector<int> predict(const Model& model, const NormStats& norm,
                         std::span<const FeatureMatrix> samples) {
    std::vector<int> preds;
    preds.reserve(samples.size());
    for (const FeatureMatrix& m : samples) {
        std::vector<double> x = normalize_sample(m, norm);
        preds.push_back(model.predict_one(x));
    }
    return preds;
}

void zero_columns(FeatureMatrix& m, std::size_t first, std::size_t last) {
    for (std::size_t r = 0; r < m.rows; ++r) {
        auto row = m.row(r);
        for (std::size_t c = first; c <= last && c < row.size(); ++c) row[c] = 0.0;
    }
}

namespace {

void append_matrix(std::string& s, const ConfusionMatrix& cm,
                   const std::vector<std::string>& names) {
    char buf[64];
    for (std::size_t t = 0; t < cm.size(); ++t) {
        std::snprintf(buf, sizeof buf, "%-18s", names[t].c_str());
        s += buf;
        for (std::size_t p = 0; p < cm.size(); ++p) {
            std::snprintf(buf, sizeof buf, " %5llu",
                          static_cast<unsigned long long>(cm.at(t, p)));
            s += buf;
        }
        s += '\n';
    }
}

void append_scores(std::string& s, const ConfusionMatrix& cm,
                   const std::vector<std::string>& names,
                   const std::set<std::string>& malicious) {
    char buf[128];
    MetricsSummary ms = compute_metrics(cm);
    std::snprintf(buf, sizeof buf, "micro F (%zu-class): %.6f\n", cm.size(), ms.micro_f);
    s += buf;
    std::snprintf(buf, sizeof buf, "macro F (%zu-class): %.6f\n", cm.size(), ms.macro_f);
    s += buf;
    if (!malicious.empty()) {
        ConfusionMatrix binary = collapse_binary(cm, names, malicious);
        MetricsSummary bs = compute_metrics(binary);
        std::snprintf(buf, sizeof buf, "binary macro F (exfil vs benign): %.6f\n",
                      bs.macro_f);
        s += buf;
    }
}

}  // namespace

std::string render_report(const TrainOutput& out,
                          const std::vector<std::string>& grouping_patterns) {
    std::set<std::string> malicious =
        resolve_grouping(out.class_names, grouping_patterns);

    std::string s;
    char buf[160];
    s += "exfilscope metrics report\n";
    std::snprintf(buf, sizeof buf, "classes: %zu\n", out.class_names.size());
    s += buf;
    s += "class table:";
    for (const std::string& n : out.class_names) {
        s += ' ';
        s += n;
    }
    s += '\n';
    s += "grouping (malicious):";
    if (malicious.empty()) {
        s += " none";
    } else {
        for (const std::string& n : malicious) {
            s += ' ';
            s += n;
        }
    }
    s += '\n';
    std::snprintf(buf, sizeof buf, "trials: %zu\n\n", out.trials.size());
    s += buf;

    double sum_micro = 0.0, sum_macro = 0.0, sum_binary = 0.0;
    for (std::size_t t = 0; t < out.trials.size(); ++t) {
        const TrialResult& tr = out.trials[t];
        std::snprintf(buf, sizeof buf, "trial %zu (final mean loss %.6f)\n", t + 1,
                      tr.final_loss);
        s += buf;
        append_matrix(s, tr.cm, out.class_names);
        append_scores(s, tr.cm, out.class_names, malicious);
        sum_micro += tr.micro_f;
        sum_macro += tr.macro_f;
        if (!malicious.empty()) {
            MetricsSummary bs = compute_metrics(
                collapse_binary(tr.cm, out.class_names, malicious));
            sum_binary += bs.macro_f;
        }
        s += '\n';
    }

    s += "summed over trials\n";
    append_matrix(s, out.summed, out.class_names);
    append_scores(s, out.summed, out.class_names, malicious);
    s += '\n';

    double n = double(out.trials.size());
    std::snprintf(buf, sizeof buf, "per-trial mean micro F: %.6f\n", sum_micro / n);
    s += buf;
    std::snprintf(buf, sizeof buf, "per-trial mean macro F: %.6f\n", sum_macro / n);
    s += buf;
    if (!malicious.empty()) {
        std::snprintf(buf, sizeof buf, "per-trial mean binary macro F: %.6f\n",
                      sum_binary / n);
        s += buf;
    }
    return s;
}

}  // namespace exfilscope
