#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "exfilscope/feature_pipeline.hpp"
#include "exfilscope/metrics.hpp"
#include "exfilscope/model.hpp"

namespace exfilscope {

struct ClassTooSmall : ModelError {
    explicit ClassTooSmall(const std::string& what) : ModelError(what) {}
};
struct DivergedLoss : ModelError {
    explicit DivergedLoss(const std::string& what) : ModelError(what) {}
};

struct TrainConfig {
    int epochs = 50;
    double learning_rate = 1e-3;
    int batch_size = 8;
    double split = 0.7;  // training fraction, stratified per class
    std::uint64_t seed = 1;
    int trials = 5;
    bool parallel_trials = true;
};

// per-column standardization statistics, always computed on the training
// split only
struct NormStats {
    std::vector<double> mean;
    std::vector<double> stddev;  // floored at 1e-8 when applied
};

struct LabeledDataset {
    std::vector<FeatureMatrix> samples;
    std::vector<int> labels;
    std::vector<std::string> class_names;  // sorted, index = class id
};

// Sorts the label set into a class table and indexes every sample.
LabeledDataset build_dataset(std::vector<FeatureMatrix> samples);

struct TrialResult {
    ConfusionMatrix cm;  // held-out predictions
    double micro_f = 0.0;
    double macro_f = 0.0;
    double final_loss = 0.0;
    NormStats norm;
};

struct TrainOutput {
    ModelConfig config;
    std::vector<double> params;  // trained weights of the last trial
    NormStats norm;              // matching normalization
    std::vector<std::string> class_names;
    std::vector<TrialResult> trials;
    ConfusionMatrix summed;
};

// Repeats trials of: trial-seeded stratified split, per-column
// standardization from the training split, plain gradient descent on
// cross-entropy, held-out evaluation. Fully reproducible from the seed;
// trials run on independent state and may execute in parallel.
TrainOutput train(const LabeledDataset& dataset, ModelConfig model_config,
                  const TrainConfig& train_config);

// argmax predictions for raw (unnormalized) samples
std::vector<int> predict(const Model& model, const NormStats& norm,
                         std::span<const FeatureMatrix> samples);

// zeroes a column range in place; used for the network-feature ablation
void zero_columns(FeatureMatrix& m, std::size_t first, std::size_t last);

// deterministic text report: per-trial and summed confusion matrices,
// multiclass micro/macro F and the binary grouping scores
std::string render_report(const TrainOutput& out,
                          const std::vector<std::string>& grouping_patterns);

}  // namespace exfilscope
