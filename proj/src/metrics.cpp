#include "exfilscope/metrics.hpp"

namespace exfilscope {

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t n = 0;
    for (std::uint64_t c : counts_) n += c;
    return n;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& o) {
    if (k_ != o.k_) throw std::invalid_argument("confusion matrix size mismatch");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
    return *this;
}

MetricsSummary compute_metrics(const ConfusionMatrix& cm) {
    const std::size_t k = cm.size();
    if (k == 0 || cm.total() == 0) throw EmptyMatrix("confusion matrix has no counts");

    MetricsSummary s;
    s.per_class_f.resize(k, 0.0);
    std::uint64_t tp_sum = 0, fp_sum = 0, fn_sum = 0;
    double macro_acc = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
        std::uint64_t tp = cm.at(c, c);
        std::uint64_t fp = 0, fn = 0;
        for (std::size_t i = 0; i < k; ++i) {
            if (i == c) continue;
            fp += cm.at(i, c);
            fn += cm.at(c, i);
        }
        tp_sum += tp;
        fp_sum += fp;
        fn_sum += fn;
        double denom = double(2 * tp + fp + fn);
        s.per_class_f[c] = denom > 0.0 ? 2.0 * double(tp) / denom : 0.0;
        macro_acc += s.per_class_f[c];
    }
    s.macro_f = macro_acc / double(k);

    double micro_p_den = double(tp_sum + fp_sum);
    double micro_r_den = double(tp_sum + fn_sum);
    double p = micro_p_den > 0.0 ? double(tp_sum) / micro_p_den : 0.0;
    double r = micro_r_den > 0.0 ? double(tp_sum) / micro_r_den : 0.0;
    s.micro_f = (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    return s;
}

ConfusionMatrix collapse_binary(const ConfusionMatrix& cm,
                                const std::vector<std::string>& class_names,
                                const std::set<std::string>& malicious) {
    if (class_names.size() != cm.size())
        throw std::invalid_argument("class name table does not match matrix size");
    ConfusionMatrix out(2);
    for (std::size_t t = 0; t < cm.size(); ++t) {
        std::size_t tb = malicious.count(class_names[t]) ? 0 : 1;
        for (std::size_t p = 0; p < cm.size(); ++p) {
            std::size_t pb = malicious.count(class_names[p]) ? 0 : 1;
            out.at(tb, pb) += cm.at(t, p);
        }
    }
    return out;
}

bool matches_grouping(const std::string& class_name,
                      const std::vector<std::string>& patterns) {
    for (const std::string& pat : patterns) {
        if (!pat.empty() && pat.back() == '*') {
            if (class_name.rfind(pat.substr(0, pat.size() - 1), 0) == 0) return true;
        } else if (class_name == pat) {
            return true;
        }
    }
    return false;
}

std::set<std::string> resolve_grouping(const std::vector<std::string>& class_names,
                                       const std::vector<std::string>& patterns) {
    std::set<std::string> out;
    for (const std::string& name : class_names)
        if (matches_grouping(name, patterns)) out.insert(name);
    return out;
}

}  // namespace exfilscope
