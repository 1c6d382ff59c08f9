#pragma once

#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "demenscan/dataset.hpp"
#include "demenscan/model.hpp"

namespace demenscan {

struct TrainConfig {
    size_t epochs = 20;
    size_t batch_size = 32;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    uint64_t seed = 0;
    double train_fraction = 0.8;
    ModelSpec spec;

    void validate() const; // throws ParameterError
};

std::string train_config_to_json(const TrainConfig& cfg);
// Parses a config JSON on top of `base`; absent keys keep the base value.
TrainConfig train_config_from_json(const std::string& text, TrainConfig base = {});

struct EpochMetrics {
    size_t epoch = 0; // 1-based
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
};

struct Metrics {
    std::vector<EpochMetrics> epochs;
};

// One JSON object per epoch, newline-delimited.
std::string metrics_to_ndjson(const Metrics& metrics);

// True-class rows × predicted-class columns.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(size_t num_classes);
    void add(int true_label, int predicted);
    int64_t at(size_t true_label, size_t predicted) const;
    size_t num_classes() const { return n_; }
    int64_t total() const;
    int64_t diagonal() const;
    double accuracy() const; // diagonal / total
    std::vector<double> per_class_accuracy() const; // diagonal / row sum (0 for empty rows)
    // Header row and column of class names (canonical taxonomy when 4 classes).
    std::string to_csv() const;

private:
    size_t n_;
    std::vector<int64_t> counts_;
};

struct KFoldReport {
    std::vector<double> fold_accuracies;
    double mean = 0.0;
    double stddev = 0.0; // sample standard deviation (n-1)
};

std::string kfold_report_to_json(const KFoldReport& report);

// Decoded-image cache keyed by path; tensors come out resized to the model
// input and permuted to C×H×W. Thread-safe.
class ImageCache {
public:
    ImageCache(size_t target_h, size_t target_w);
    std::shared_ptr<const Tensor> get(const std::string& path);
    // Decodes every sample up front in parallel.
    void warm(const DatasetIndex& index);

private:
    size_t target_h_, target_w_;
    std::mutex mutex_;
    std::unordered_map<std::string, std::shared_ptr<const Tensor>> cache_;
};

struct AdamState {
    Parameters m, v;
    int64_t t = 0;
};

AdamState make_adam_state(const ModelSpec& spec);

// One Adam update with bias correction; increments state.t. Deterministic:
// parameters and moments are visited in declared order.
void adam_step(Parameters& params, const Parameters& grads, AdamState& state,
               const TrainConfig& cfg);

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
    ConfusionMatrix confusion;
};

// Eval-mode forward per sample; prediction is the argmax of the logits with
// ties broken toward the lowest class index.
EvalResult evaluate(const ModelSpec& spec, const Parameters& params, const DatasetIndex& index,
                    ImageCache& cache);

struct TrainResult {
    Parameters params;
    Metrics metrics;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

// Mini-batch training with Adam. Per epoch: shuffle via make_batches, average
// the batch loss gradient (accumulated in sample order for bit determinism),
// one adam_step per batch, then an eval-mode metric pass over both indices.
// A non-finite loss aborts with TrainError naming the epoch and batch.
TrainResult train(const TrainConfig& cfg, const DatasetIndex& train_index,
                  const DatasetIndex& val_index, ImageCache& cache,
                  const EpochCallback& on_epoch = {});

// Returns fold validation accuracy; used to stub training in tests and to
// let the CLI persist per-fold artifacts.
using FoldRunner = std::function<double(const TrainConfig& fold_cfg, const DatasetIndex& train,
                                        const DatasetIndex& val, size_t fold)>;

// Trains k independent models (fresh init, per-fold seed = seed ⊕ fold) on
// stratified folds and reports mean and sample standard deviation.
KFoldReport kfold_run(const TrainConfig& cfg, const DatasetIndex& index, size_t k,
                      const FoldRunner& runner = {});

} // namespace demenscan
