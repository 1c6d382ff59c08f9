#include "demenscan/train.hpp"

#include <cmath>
#include <sstream>

#include "json.hpp"

#include "demenscan/image.hpp"
#include "demenscan/parallel.hpp"

namespace demenscan {

namespace {

constexpr uint64_t kDropoutSalt = 0x44524f50u; // "DROP"

// Per-sample gradient contribution computed by a worker slot.
struct SampleGrad {
    double loss = 0.0;
    ParametersT<float> grads;
};

void check_labels(const DatasetIndex& index, size_t num_classes, const char* what) {
    for (const auto& s : index.samples) {
        if (s.label < 0 || static_cast<size_t>(s.label) >= num_classes) {
            throw ParameterError(std::string(what) + ": label " + std::to_string(s.label) +
                                 " out of range for " + std::to_string(num_classes) +
                                 "-class model (" + s.path + ")");
        }
    }
}

void accumulate(Parameters& acc, const Parameters& grads) {
    auto add_into = [](Tensor& dst, const Tensor& src) {
        for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    };
    for (size_t i = 0; i < acc.conv.size(); ++i) {
        add_into(acc.conv[i].w, grads.conv[i].w);
        add_into(acc.conv[i].b, grads.conv[i].b);
    }
    for (size_t i = 0; i < acc.dense.size(); ++i) {
        add_into(acc.dense[i].w, grads.dense[i].w);
        add_into(acc.dense[i].b, grads.dense[i].b);
    }
}

void scale_params(Parameters& p, float s) {
    for_each_tensor(p, [s](Tensor& t) {
        for (size_t i = 0; i < t.size(); ++i) t[i] *= s;
    });
}

} // namespace

void TrainConfig::validate() const {
    if (epochs < 1) throw ParameterError("config: epochs must be >= 1");
    if (batch_size < 1) throw ParameterError("config: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ParameterError("config: learning_rate must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ParameterError("config: adam betas must be in [0, 1)");
    }
    if (!(epsilon > 0.0)) throw ParameterError("config: adam epsilon must be > 0");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ParameterError("config: train_fraction must be in (0, 1)");
    }
    spec.validate();
}

std::string train_config_to_json(const TrainConfig& cfg) {
    nlohmann::json j;
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["learning_rate"] = cfg.learning_rate;
    j["beta1"] = cfg.beta1;
    j["beta2"] = cfg.beta2;
    j["epsilon"] = cfg.epsilon;
    j["seed"] = cfg.seed;
    j["train_fraction"] = cfg.train_fraction;
    j["model"] = nlohmann::json::parse(model_spec_to_json(cfg.spec));
    return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text, TrainConfig base) {
    try {
        const nlohmann::json j = nlohmann::json::parse(text);
        if (j.contains("epochs")) base.epochs = j.at("epochs").get<size_t>();
        if (j.contains("batch_size")) base.batch_size = j.at("batch_size").get<size_t>();
        if (j.contains("learning_rate")) base.learning_rate = j.at("learning_rate").get<double>();
        if (j.contains("beta1")) base.beta1 = j.at("beta1").get<double>();
        if (j.contains("beta2")) base.beta2 = j.at("beta2").get<double>();
        if (j.contains("epsilon")) base.epsilon = j.at("epsilon").get<double>();
        if (j.contains("seed")) base.seed = j.at("seed").get<uint64_t>();
        if (j.contains("train_fraction")) base.train_fraction = j.at("train_fraction").get<double>();
        if (j.contains("model")) base.spec = model_spec_from_json(j.at("model").dump());
    } catch (const nlohmann::json::exception& e) {
        throw ParameterError(std::string("train config json: ") + e.what());
    }
    base.validate();
    return base;
}

std::string metrics_to_ndjson(const Metrics& metrics) {
    std::ostringstream out;
    for (const auto& e : metrics.epochs) {
        nlohmann::json j;
        j["epoch"] = e.epoch;
        j["train_loss"] = e.train_loss;
        j["train_acc"] = e.train_acc;
        j["val_loss"] = e.val_loss;
        j["val_acc"] = e.val_acc;
        out << j.dump() << "\n";
    }
    return out.str();
}

ConfusionMatrix::ConfusionMatrix(size_t num_classes)
    : n_(num_classes), counts_(num_classes * num_classes, 0) {
    if (num_classes < 2) throw ParameterError("confusion matrix: need >= 2 classes");
}

void ConfusionMatrix::add(int true_label, int predicted) {
    if (true_label < 0 || static_cast<size_t>(true_label) >= n_ || predicted < 0 ||
        static_cast<size_t>(predicted) >= n_) {
        throw ParameterError("confusion matrix: class out of range");
    }
    counts_[static_cast<size_t>(true_label) * n_ + static_cast<size_t>(predicted)]++;
}

int64_t ConfusionMatrix::at(size_t true_label, size_t predicted) const {
    return counts_.at(true_label * n_ + predicted);
}

int64_t ConfusionMatrix::total() const {
    int64_t t = 0;
    for (int64_t c : counts_) t += c;
    return t;
}

int64_t ConfusionMatrix::diagonal() const {
    int64_t t = 0;
    for (size_t i = 0; i < n_; ++i) t += counts_[i * n_ + i];
    return t;
}

double ConfusionMatrix::accuracy() const {
    const int64_t tot = total();
    return tot == 0 ? 0.0 : static_cast<double>(diagonal()) / static_cast<double>(tot);
}

std::vector<double> ConfusionMatrix::per_class_accuracy() const {
    std::vector<double> acc(n_, 0.0);
    for (size_t i = 0; i < n_; ++i) {
        int64_t row = 0;
        for (size_t j = 0; j < n_; ++j) row += counts_[i * n_ + j];
        acc[i] = row == 0 ? 0.0
                          : static_cast<double>(counts_[i * n_ + i]) / static_cast<double>(row);
    }
    return acc;
}

std::string ConfusionMatrix::to_csv() const {
    auto name = [this](size_t i) {
        return n_ == 4 ? class_names()[i] : "Class" + std::to_string(i);
    };
    std::ostringstream out;
    out << "class";
    for (size_t j = 0; j < n_; ++j) out << "," << name(j);
    out << "\n";
    for (size_t i = 0; i < n_; ++i) {
        out << name(i);
        for (size_t j = 0; j < n_; ++j) out << "," << counts_[i * n_ + j];
        out << "\n";
    }
    return out.str();
}

std::string kfold_report_to_json(const KFoldReport& report) {
    nlohmann::json j;
    j["folds"] = report.fold_accuracies;
    j["mean"] = report.mean;
    j["std"] = report.stddev;
    return j.dump(2);
}

ImageCache::ImageCache(size_t target_h, size_t target_w)
    : target_h_(target_h), target_w_(target_w) {}

std::shared_ptr<const Tensor> ImageCache::get(const std::string& path) {
    {
        std::lock_guard<std::mutex> lock(mutex_);
        auto it = cache_.find(path);
        if (it != cache_.end()) return it->second;
    }
    auto decoded = std::make_shared<const Tensor>(decode_image(path, target_h_, target_w_));
    std::lock_guard<std::mutex> lock(mutex_);
    auto [it, _] = cache_.emplace(path, std::move(decoded));
    return it->second;
}

void ImageCache::warm(const DatasetIndex& index) {
    parallel_for(index.samples.size(),
                 [&](size_t i) { (void)get(index.samples[i].path); });
}

AdamState make_adam_state(const ModelSpec& spec) {
    return AdamState{parameters_like<float>(spec), parameters_like<float>(spec), 0};
}

void adam_step(Parameters& params, const Parameters& grads, AdamState& state,
               const TrainConfig& cfg) {
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    auto update = [&](Tensor& p, const Tensor& g, Tensor& m, Tensor& v) {
        if (p.shape() != g.shape()) {
            throw ShapeError("adam_step: gradient shape " + Tensor::shape_string(g.shape()) +
                             " does not match parameter " + Tensor::shape_string(p.shape()));
        }
        for (size_t i = 0; i < p.size(); ++i) {
            const double gi = static_cast<double>(g[i]);
            const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * gi;
            const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * gi * gi;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            p[i] = static_cast<float>(static_cast<double>(p[i]) -
                                      cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon));
        }
    };
    for (size_t i = 0; i < params.conv.size(); ++i) {
        update(params.conv[i].w, grads.conv[i].w, state.m.conv[i].w, state.v.conv[i].w);
        update(params.conv[i].b, grads.conv[i].b, state.m.conv[i].b, state.v.conv[i].b);
    }
    for (size_t i = 0; i < params.dense.size(); ++i) {
        update(params.dense[i].w, grads.dense[i].w, state.m.dense[i].w, state.v.dense[i].w);
        update(params.dense[i].b, grads.dense[i].b, state.m.dense[i].b, state.v.dense[i].b);
    }
}

EvalResult evaluate(const ModelSpec& spec, const Parameters& params, const DatasetIndex& index,
                    ImageCache& cache) {
    if (index.samples.empty()) throw ParameterError("evaluate: empty index");
    check_labels(index, spec.num_classes, "evaluate");
    const size_t n = index.samples.size();

    struct Slot {
        double loss = 0.0;
        int pred = 0;
    };
    std::vector<Slot> slots(n);
    parallel_for(n, [&](size_t i) {
        const auto img = cache.get(index.samples[i].path);
        const ForwardTrace trace = model_forward(spec, params, *img, RunMode::Eval);
        const auto lr = softmax_cross_entropy(trace.logits, index.samples[i].label);
        int pred = 0;
        for (size_t c = 1; c < trace.logits.size(); ++c) {
            if (trace.logits[c] > trace.logits[static_cast<size_t>(pred)]) {
                pred = static_cast<int>(c);
            }
        }
        slots[i] = {lr.loss, pred};
    });

    EvalResult r{0.0, 0.0, ConfusionMatrix(spec.num_classes)};
    double loss_sum = 0.0;
    int64_t correct = 0;
    for (size_t i = 0; i < n; ++i) {
        loss_sum += slots[i].loss;
        r.confusion.add(index.samples[i].label, slots[i].pred);
        if (slots[i].pred == index.samples[i].label) correct++;
    }
    r.loss = loss_sum / static_cast<double>(n);
    r.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    return r;
}

TrainResult train(const TrainConfig& cfg, const DatasetIndex& train_index,
                  const DatasetIndex& val_index, ImageCache& cache,
                  const EpochCallback& on_epoch) {
    cfg.validate();
    if (train_index.samples.empty()) throw ParameterError("train: empty training index");
    if (val_index.samples.empty()) throw ParameterError("train: empty validation index");
    check_labels(train_index, cfg.spec.num_classes, "train");
    check_labels(val_index, cfg.spec.num_classes, "train");

    cache.warm(train_index);
    cache.warm(val_index);

    SeededRng init_rng(cfg.seed);
    Parameters params = init_parameters(cfg.spec, init_rng);
    AdamState adam = make_adam_state(cfg.spec);
    Metrics metrics;

    const size_t wave = static_cast<size_t>(thread_budget());
    Parameters grad_acc = parameters_like<float>(cfg.spec);

    for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto batches = make_batches(train_index, cfg.batch_size, cfg.seed, epoch);
        for (size_t bi = 0; bi < batches.size(); ++bi) {
            const auto& batch = batches[bi];
            for_each_tensor(grad_acc, [](Tensor& t) {
                std::fill(t.values().begin(), t.values().end(), 0.0f);
            });
            double loss_sum = 0.0;

            std::vector<SampleGrad> slots(std::min(wave, batch.size()));
            for (size_t start = 0; start < batch.size(); start += slots.size()) {
                const size_t count = std::min(slots.size(), batch.size() - start);
                parallel_for(count, [&](size_t k) {
                    const Sample& sample = train_index.samples[batch[start + k]];
                    const auto img = cache.get(sample.path);
                    // Dropout stream depends only on (seed, epoch, position in
                    // the epoch), never on worker scheduling.
                    SeededRng dropout_rng(mix_seed(
                        mix_seed(mix_seed(cfg.seed, kDropoutSalt), epoch),
                        bi * cfg.batch_size + start + k));
                    const ForwardTrace trace =
                        model_forward(cfg.spec, params, *img, RunMode::Train, &dropout_rng);
                    const auto lr = softmax_cross_entropy(trace.logits, sample.label);
                    auto back = model_backward(cfg.spec, params, trace, lr.grad_logits);
                    slots[k] = SampleGrad{lr.loss, std::move(back.grads)};
                });
                // Sample-index-order reduction keeps training bit-deterministic
                // for any worker count.
                for (size_t k = 0; k < count; ++k) {
                    loss_sum += slots[k].loss;
                    accumulate(grad_acc, slots[k].grads);
                }
            }

            const double batch_loss = loss_sum / static_cast<double>(batch.size());
            if (!std::isfinite(batch_loss)) {
                throw TrainError("non-finite loss at epoch " + std::to_string(epoch + 1) +
                                 ", batch " + std::to_string(bi + 1));
            }
            scale_params(grad_acc, 1.0f / static_cast<float>(batch.size()));
            adam_step(params, grad_acc, adam, cfg);
        }

        const EvalResult train_eval = evaluate(cfg.spec, params, train_index, cache);
        const EvalResult val_eval = evaluate(cfg.spec, params, val_index, cache);
        EpochMetrics em{epoch + 1, train_eval.loss, train_eval.accuracy, val_eval.loss,
                        val_eval.accuracy};
        metrics.epochs.push_back(em);
        if (on_epoch) on_epoch(em);
    }
    return TrainResult{std::move(params), std::move(metrics)};
}

KFoldReport kfold_run(const TrainConfig& cfg, const DatasetIndex& index, size_t k,
                      const FoldRunner& runner) {
    if (k < 2) throw ParameterError("kfold_run: k must be >= 2");
    const auto folds = stratified_kfold(index, static_cast<int>(k), cfg.seed);

    FoldRunner run = runner;
    if (!run) {
        run = [](const TrainConfig& fold_cfg, const DatasetIndex& tr, const DatasetIndex& va,
                 size_t) {
            ImageCache cache(fold_cfg.spec.input_h, fold_cfg.spec.input_w);
            TrainResult result = train(fold_cfg, tr, va, cache);
            return evaluate(fold_cfg.spec, result.params, va, cache).accuracy;
        };
    }

    KFoldReport report;
    for (size_t f = 0; f < folds.size(); ++f) {
        TrainConfig fold_cfg = cfg;
        fold_cfg.seed = cfg.seed ^ static_cast<uint64_t>(f);
        report.fold_accuracies.push_back(run(fold_cfg, folds[f].first, folds[f].second, f));
    }

    double sum = 0.0;
    for (double a : report.fold_accuracies) sum += a;
    report.mean = sum / static_cast<double>(k);
    double sq = 0.0;
    for (double a : report.fold_accuracies) sq += (a - report.mean) * (a - report.mean);
    report.stddev = std::sqrt(sq / static_cast<double>(k - 1));
    return report;
}

} // namespace demenscan
