// demenscan: train, evaluate, cross-validate, and explain the dementia MRI
// classifier. Every run writes its fully resolved configuration next to its
// outputs so it can be replayed without flags.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "demenscan/checkpoint.hpp"
#include "demenscan/dataset.hpp"
#include "demenscan/image.hpp"
#include "demenscan/train.hpp"
#include "demenscan/xai.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace demenscan;

namespace {

// Flag misuse detected after parsing (maps to exit code 2).
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

json load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file: " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw UsageError("config file " + path + " is not valid JSON: " + e.what());
    }
}

// Common data-source flags: a class-directory corpus or a manifest override.
struct DataSource {
    std::string data_dir;
    std::string manifest;

    DatasetIndex load() const {
        if (!manifest.empty()) return load_manifest(manifest);
        if (!data_dir.empty()) return scan_dataset(data_dir);
        throw UsageError("either --data-dir or --manifest is required");
    }
    void to_json(json& j) const {
        if (!data_dir.empty()) j["data_dir"] = data_dir;
        if (!manifest.empty()) j["manifest"] = manifest;
    }
    void from_json(const json& j) {
        if (j.contains("data_dir")) data_dir = j.at("data_dir").get<std::string>();
        if (j.contains("manifest")) manifest = j.at("manifest").get<std::string>();
    }
};

// Shared --config plumbing: flags override config-file values override
// built-in defaults, and the resolved merge is persisted with the outputs.
struct ConfigurableCli {
    std::string out_dir;
    std::string config_path;
    CLI::App* cmd = nullptr;
    CLI::Option* opt_out = nullptr;

    void attach_common(CLI::App& app, const char* name, const char* desc) {
        cmd = app.add_subcommand(name, desc);
        opt_out = cmd->add_option("--out", out_dir, "output directory for all run artifacts");
        cmd->add_option("--config", config_path,
                        "resolved-config JSON from a previous run; flags override it");
    }

    json config_file() const {
        return config_path.empty() ? json::object() : load_config_file(config_path);
    }

    void resolve_out(const json& file) {
        if (opt_out->count() == 0 && file.contains("out_dir")) {
            out_dir = file.at("out_dir").get<std::string>();
        }
        if (out_dir.empty()) throw UsageError("--out is required (or out_dir in --config)");
    }

    template <typename T>
    static void take(const CLI::Option* opt, T& field, const json& file, const char* key) {
        if (opt->count() == 0 && file.contains(key)) field = file.at(key).get<T>();
    }
};

struct TrainCli : ConfigurableCli {
    DataSource data;
    TrainConfig train_cfg;
    std::vector<size_t> filters_flag;
    std::vector<size_t> fc_flag;
    size_t input_size_flag = 0;
    double dropout_flag = -1.0;

    CLI::Option *opt_seed = nullptr, *opt_epochs = nullptr, *opt_batch = nullptr,
                *opt_lr = nullptr, *opt_fraction = nullptr, *opt_input = nullptr,
                *opt_filters = nullptr, *opt_fc = nullptr, *opt_dropout = nullptr,
                *opt_data = nullptr, *opt_manifest = nullptr;

    void attach(CLI::App& app, const char* name, const char* desc) {
        attach_common(app, name, desc);
        opt_data = cmd->add_option("--data-dir", data.data_dir,
                                   "corpus root with the four class directories");
        opt_manifest = cmd->add_option("--manifest", data.manifest,
                                       "JSON manifest of {path,label} entries");
        opt_seed = cmd->add_option("--seed", train_cfg.seed, "rng seed");
        opt_epochs = cmd->add_option("--epochs", train_cfg.epochs, "training epochs");
        opt_batch = cmd->add_option("--batch-size", train_cfg.batch_size, "mini-batch size");
        opt_lr = cmd->add_option("--lr", train_cfg.learning_rate, "adam learning rate");
        opt_fraction = cmd->add_option("--train-fraction", train_cfg.train_fraction,
                                       "stratified train share");
        opt_input = cmd->add_option("--input-size", input_size_flag,
                                    "square input edge (must be divisible by 16)");
        opt_filters = cmd->add_option("--filters", filters_flag,
                                      "conv filter counts, e.g. 32,64,128,64")
                          ->delimiter(',')
                          ->expected(4);
        opt_fc = cmd->add_option("--fc", fc_flag, "fully connected widths, e.g. 256,128")
                     ->delimiter(',')
                     ->expected(2);
        opt_dropout = cmd->add_option("--dropout", dropout_flag, "dropout rate in [0,1)");
    }

    // defaults < config file < explicitly passed flags
    void resolve() {
        const json file = config_file();
        resolve_out(file);
        DataSource file_data;
        file_data.from_json(file);
        if (opt_data->count() == 0 && opt_manifest->count() == 0) data = file_data;

        TrainConfig base; // defaults
        if (file.contains("train")) {
            base = train_config_from_json(file.at("train").dump(), base);
        }
        if (opt_seed->count() == 0) train_cfg.seed = base.seed;
        if (opt_epochs->count() == 0) train_cfg.epochs = base.epochs;
        if (opt_batch->count() == 0) train_cfg.batch_size = base.batch_size;
        if (opt_lr->count() == 0) train_cfg.learning_rate = base.learning_rate;
        if (opt_fraction->count() == 0) train_cfg.train_fraction = base.train_fraction;
        train_cfg.beta1 = base.beta1;
        train_cfg.beta2 = base.beta2;
        train_cfg.epsilon = base.epsilon;
        train_cfg.spec = base.spec;
        if (opt_input->count() > 0) {
            train_cfg.spec.input_h = train_cfg.spec.input_w = input_size_flag;
        }
        if (opt_filters->count() > 0) train_cfg.spec.conv_filters = filters_flag;
        if (opt_fc->count() > 0) train_cfg.spec.fc_widths = fc_flag;
        if (opt_dropout->count() > 0) train_cfg.spec.dropout_rate = dropout_flag;
        train_cfg.validate();
    }

    json resolved_json(const char* command) const {
        json j;
        j["command"] = command;
        data.to_json(j);
        j["out_dir"] = out_dir;
        j["train"] = json::parse(train_config_to_json(train_cfg));
        return j;
    }
};

void print_epoch(const EpochMetrics& e, size_t total) {
    std::printf("[epoch %zu/%zu] train_loss=%.4f train_acc=%.4f val_loss=%.4f val_acc=%.4f\n",
                e.epoch, total, e.train_loss, e.train_acc, e.val_loss, e.val_acc);
    std::fflush(stdout);
}

int cmd_train(TrainCli& cli) {
    cli.resolve();
    const DatasetIndex index = cli.data.load();
    const auto [train_idx, val_idx] =
        stratified_split(index, {cli.train_cfg.train_fraction, cli.train_cfg.seed});
    std::printf("corpus: %zu samples, train %zu / val %zu\n", index.size(), train_idx.size(),
                val_idx.size());

    fs::create_directories(cli.out_dir);
    write_text(fs::path(cli.out_dir) / "config.json", cli.resolved_json("train").dump(2) + "\n");

    ImageCache cache(cli.train_cfg.spec.input_h, cli.train_cfg.spec.input_w);
    const size_t total = cli.train_cfg.epochs;
    const TrainResult result = train(cli.train_cfg, train_idx, val_idx, cache,
                                     [total](const EpochMetrics& e) { print_epoch(e, total); });

    checkpoint_save(cli.train_cfg.spec, result.params, (fs::path(cli.out_dir) / "model.ckpt").string());
    write_text(fs::path(cli.out_dir) / "metrics.ndjson", metrics_to_ndjson(result.metrics));

    const EpochMetrics& last = result.metrics.epochs.back();
    std::printf("final: train_acc=%.4f train_loss=%.4f val_acc=%.4f val_loss=%.4f\n",
                last.train_acc, last.train_loss, last.val_acc, last.val_loss);
    std::printf("wrote %s/model.ckpt, metrics.ndjson, config.json\n", cli.out_dir.c_str());
    return 0;
}

int cmd_kfold(TrainCli& cli, const CLI::Option* opt_folds, size_t folds) {
    cli.resolve();
    if (opt_folds->count() == 0) {
        const json file = cli.config_file();
        if (file.contains("folds")) folds = file.at("folds").get<size_t>();
    }
    const DatasetIndex index = cli.data.load();
    fs::create_directories(cli.out_dir);
    json cfg_json = cli.resolved_json("kfold");
    cfg_json["folds"] = folds;
    write_text(fs::path(cli.out_dir) / "config.json", cfg_json.dump(2) + "\n");

    const KFoldReport report = kfold_run(
        cli.train_cfg, index, folds,
        [&cli](const TrainConfig& fold_cfg, const DatasetIndex& tr, const DatasetIndex& va,
               size_t fold) {
            std::printf("fold %zu: train %zu / val %zu\n", fold + 1, tr.size(), va.size());
            ImageCache cache(fold_cfg.spec.input_h, fold_cfg.spec.input_w);
            const TrainResult result = train(fold_cfg, tr, va, cache);
            write_text(fs::path(cli.out_dir) / ("metrics_fold" + std::to_string(fold + 1) +
                                                ".ndjson"),
                       metrics_to_ndjson(result.metrics));
            const double acc = evaluate(fold_cfg.spec, result.params, va, cache).accuracy;
            std::printf("fold %zu: val_acc=%.4f\n", fold + 1, acc);
            return acc;
        });

    write_text(fs::path(cli.out_dir) / "kfold_report.json", kfold_report_to_json(report) + "\n");
    std::printf("kfold: mean=%.4f std=%.4f over %zu folds\n", report.mean, report.stddev, folds);
    return 0;
}

struct EvaluateCli : ConfigurableCli {
    DataSource data;
    std::string model_path;
    std::string split = "all";
    double train_fraction = 0.8;
    uint64_t seed = 0;

    CLI::Option *opt_data = nullptr, *opt_manifest = nullptr, *opt_model = nullptr,
                *opt_split = nullptr, *opt_fraction = nullptr, *opt_seed = nullptr;

    void attach(CLI::App& app) {
        attach_common(app, "evaluate", "confusion matrix and accuracy");
        opt_data = cmd->add_option("--data-dir", data.data_dir, "corpus root");
        opt_manifest = cmd->add_option("--manifest", data.manifest, "JSON manifest");
        opt_model = cmd->add_option("--model", model_path, "checkpoint path");
        opt_split = cmd->add_option("--split", split, "all, train, or val")
                        ->check(CLI::IsMember({"all", "train", "val"}));
        opt_fraction = cmd->add_option("--train-fraction", train_fraction, "split fraction");
        opt_seed = cmd->add_option("--seed", seed, "split seed");
    }

    void resolve() {
        const json file = config_file();
        resolve_out(file);
        DataSource file_data;
        file_data.from_json(file);
        if (opt_data->count() == 0 && opt_manifest->count() == 0) data = file_data;
        take(opt_model, model_path, file, "model");
        take(opt_split, split, file, "split");
        take(opt_fraction, train_fraction, file, "train_fraction");
        take(opt_seed, seed, file, "seed");
        if (model_path.empty()) throw UsageError("--model is required");
    }
};

int cmd_evaluate(EvaluateCli& cli) {
    cli.resolve();
    const auto [spec, params] = checkpoint_load(cli.model_path);
    DatasetIndex index = cli.data.load();
    if (cli.split != "all") {
        auto [tr, va] = stratified_split(index, {cli.train_fraction, cli.seed});
        index = cli.split == "train" ? std::move(tr) : std::move(va);
    }

    ImageCache cache(spec.input_h, spec.input_w);
    const EvalResult ev = evaluate(spec, params, index, cache);

    fs::create_directories(cli.out_dir);
    json cfg;
    cfg["command"] = "evaluate";
    cli.data.to_json(cfg);
    cfg["model"] = cli.model_path;
    cfg["out_dir"] = cli.out_dir;
    cfg["split"] = cli.split;
    cfg["train_fraction"] = cli.train_fraction;
    cfg["seed"] = cli.seed;
    write_text(fs::path(cli.out_dir) / "config.json", cfg.dump(2) + "\n");
    write_text(fs::path(cli.out_dir) / "confusion.csv", ev.confusion.to_csv());

    json per_class;
    const auto accs = ev.confusion.per_class_accuracy();
    for (size_t c = 0; c < accs.size(); ++c) {
        const std::string name =
            accs.size() == 4 ? class_names()[c] : "Class" + std::to_string(c);
        per_class[name] = accs[c];
    }
    json report;
    report["overall_accuracy"] = ev.accuracy;
    report["loss"] = ev.loss;
    report["per_class_accuracy"] = per_class;
    write_text(fs::path(cli.out_dir) / "per_class_accuracy.json", report.dump(2) + "\n");

    std::printf("evaluate: %zu samples, accuracy=%.4f loss=%.4f\n", index.size(), ev.accuracy,
                ev.loss);
    return 0;
}

struct ExplainCli : ConfigurableCli {
    std::string image_path;
    std::string model_path;
    int forced_class = -1;

    CLI::Option *opt_image = nullptr, *opt_model = nullptr, *opt_class = nullptr;

    void attach(CLI::App& app) {
        attach_common(app, "explain", "classification plus saliency and feature maps");
        opt_image = cmd->add_option("--image", image_path, "input image");
        opt_model = cmd->add_option("--model", model_path, "checkpoint path");
        opt_class = cmd->add_option("--class", forced_class,
                                    "force the saliency target class")
                        ->check(CLI::Range(0, 3));
    }

    void resolve() {
        const json file = config_file();
        resolve_out(file);
        take(opt_image, image_path, file, "image");
        take(opt_model, model_path, file, "model");
        if (opt_class->count() == 0 && file.contains("forced_class") &&
            !file.at("forced_class").is_null()) {
            forced_class = file.at("forced_class").get<int>();
        }
        if (image_path.empty()) throw UsageError("--image is required");
        if (model_path.empty()) throw UsageError("--model is required");
    }
};

int cmd_explain(ExplainCli& cli) {
    cli.resolve();
    const auto [spec, params] = checkpoint_load(cli.model_path);
    if (cli.forced_class >= static_cast<int>(spec.num_classes)) {
        throw UsageError("--class " + std::to_string(cli.forced_class) +
                         " out of range for a " + std::to_string(spec.num_classes) +
                         "-class model");
    }
    const Tensor x = decode_image(cli.image_path, spec.input_h, spec.input_w);

    const ForwardTrace trace = model_forward(spec, params, x, RunMode::Eval);
    const Tensor probs = softmax(trace.logits);
    int argmax = 0;
    for (size_t c = 1; c < probs.size(); ++c) {
        if (trace.logits[c] > trace.logits[static_cast<size_t>(argmax)]) {
            argmax = static_cast<int>(c);
        }
    }
    const int target = cli.forced_class >= 0 ? cli.forced_class : argmax;

    fs::create_directories(cli.out_dir);
    const SaliencyMap sal = guided_backprop(spec, params, x, target);
    write_png_gray8((fs::path(cli.out_dir) / "saliency.png").string(), spec.input_h,
                    spec.input_w, sal.rendered);

    json outputs;
    outputs["saliency"] = {{"file", "saliency.png"}, {"class", target}};
    for (size_t layer = 1; layer <= spec.blocks(); ++layer) {
        const size_t n = std::min<size_t>(6, spec.conv_filters[layer - 1]);
        const FeatureMapSet set = feature_maps(spec, params, x, layer, n);
        const std::string dir_name = "layer" + std::to_string(layer);
        fs::create_directories(fs::path(cli.out_dir) / dir_name);
        json maps = json::array();
        for (size_t f = 0; f < n; ++f) {
            const std::string rel = dir_name + "/map" + std::to_string(f) + ".png";
            write_png_gray8((fs::path(cli.out_dir) / rel).string(), set.map_h, set.map_w,
                            set.rendered[f]);
            maps.push_back({{"file", rel}, {"layer", layer}, {"filter", f}});
        }
        outputs["feature_maps"][dir_name] = maps;
    }

    json j;
    j["command"] = "explain";
    j["image"] = cli.image_path;
    j["model"] = cli.model_path;
    j["out_dir"] = cli.out_dir;
    j["class_index"] = argmax;
    j["class_name"] = spec.num_classes == 4 ? class_names()[static_cast<size_t>(argmax)]
                                            : "Class" + std::to_string(argmax);
    j["target_class"] = target;
    j["forced_class"] = cli.forced_class >= 0 ? json(cli.forced_class) : json(nullptr);
    std::vector<double> pvec(probs.size());
    for (size_t i = 0; i < probs.size(); ++i) pvec[i] = probs[i];
    j["probabilities"] = pvec;
    j["outputs"] = outputs;
    write_text(fs::path(cli.out_dir) / "explain.json", j.dump(2) + "\n");

    std::printf("explain: predicted class %d (%s), saliency target %d\n", argmax,
                j["class_name"].get<std::string>().c_str(), target);
    return 0;
}

struct FiltersCli : ConfigurableCli {
    std::string model_path;
    size_t layer = 1;
    size_t count = 6;

    CLI::Option *opt_model = nullptr, *opt_layer = nullptr, *opt_count = nullptr;

    void attach(CLI::App& app) {
        attach_common(app, "filters", "first-layer filter grid images");
        opt_model = cmd->add_option("--model", model_path, "checkpoint path");
        opt_layer = cmd->add_option("--layer", layer, "conv layer (1-based)");
        opt_count = cmd->add_option("--count", count, "filters to render")
                        ->check(CLI::Range(static_cast<size_t>(1), static_cast<size_t>(1024)));
    }

    void resolve() {
        const json file = config_file();
        resolve_out(file);
        take(opt_model, model_path, file, "model");
        take(opt_layer, layer, file, "layer");
        take(opt_count, count, file, "count");
        if (model_path.empty()) throw UsageError("--model is required");
    }
};

int cmd_filters(FiltersCli& cli) {
    cli.resolve();
    const auto [spec, params] = checkpoint_load(cli.model_path);
    if (cli.layer < 1 || cli.layer > spec.blocks()) {
        throw UsageError("--layer must be in 1.." + std::to_string(spec.blocks()));
    }
    if (cli.count > spec.conv_filters[cli.layer - 1]) {
        throw UsageError("--count " + std::to_string(cli.count) + " exceeds the " +
                         std::to_string(spec.conv_filters[cli.layer - 1]) +
                         " filters of layer " + std::to_string(cli.layer));
    }
    const auto cells = visualize_filters(spec, params, cli.layer, cli.count);
    const size_t channels = cells.size() / cli.count;
    const size_t upscale = 16;

    fs::create_directories(fs::path(cli.out_dir) / "cells");
    json index;
    index["command"] = "filters";
    index["model"] = cli.model_path;
    index["out_dir"] = cli.out_dir;
    index["layer"] = cli.layer;
    index["count"] = cli.count;
    index["grid"] = "filters_grid.png";
    json cell_list = json::array();

    std::vector<std::vector<uint8_t>> rendered;
    for (const auto& cell : cells) {
        rendered.push_back(cell.rendered);
        // Upscaled single-cell image alongside the grid.
        const GrayImage big = assemble_grid({cell.rendered}, 1, 1, spec.kernel, spec.kernel,
                                            upscale);
        const std::string rel = "cells/filter" + std::to_string(cell.filter) + "_channel" +
                                std::to_string(cell.channel) + ".png";
        write_png_gray8((fs::path(cli.out_dir) / rel).string(), big.height, big.width,
                        big.pixels);
        cell_list.push_back(
            {{"file", rel}, {"layer", cell.layer}, {"filter", cell.filter},
             {"channel", cell.channel}});
    }
    index["cells"] = cell_list;

    const GrayImage grid =
        assemble_grid(rendered, cli.count, channels, spec.kernel, spec.kernel, upscale);
    write_png_gray8((fs::path(cli.out_dir) / "filters_grid.png").string(), grid.height,
                    grid.width, grid.pixels);
    write_text(fs::path(cli.out_dir) / "index.json", index.dump(2) + "\n");

    std::printf("filters: wrote %zux%zu grid and %zu cells\n", cli.count, channels,
                cells.size());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"dementia MRI CNN: training, evaluation, and explainability"};
    app.require_subcommand(1);

    TrainCli train_cli;
    train_cli.attach(app, "train", "train the CNN on a class-directory corpus");

    TrainCli kfold_cli;
    kfold_cli.attach(app, "kfold", "stratified k-fold cross-validation");
    size_t folds = 5;
    CLI::Option* opt_folds =
        kfold_cli.cmd->add_option("--folds", folds, "number of folds")
            ->check(CLI::Range(static_cast<size_t>(2), static_cast<size_t>(100)));

    EvaluateCli eval_cli;
    eval_cli.attach(app);

    ExplainCli explain_cli;
    explain_cli.attach(app);

    FiltersCli filters_cli;
    filters_cli.attach(app);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (train_cli.cmd->parsed()) return cmd_train(train_cli);
        if (kfold_cli.cmd->parsed()) return cmd_kfold(kfold_cli, opt_folds, folds);
        if (eval_cli.cmd->parsed()) return cmd_evaluate(eval_cli);
        if (explain_cli.cmd->parsed()) return cmd_explain(explain_cli);
        if (filters_cli.cmd->parsed()) return cmd_filters(filters_cli);
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const ParameterError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
