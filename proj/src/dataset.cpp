#include "demenscan/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "json.hpp"

#include "demenscan/rng.hpp"

namespace fs = std::filesystem;

namespace demenscan {

namespace {

constexpr uint64_t kSplitSalt = 0x53504c49u; // "SPLI"
constexpr uint64_t kFoldSalt = 0x464f4c44u;  // "FOLD"

bool has_image_extension(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

void shuffle_indices(std::vector<size_t>& idx, SeededRng& rng) {
    for (size_t i = idx.size(); i > 1; --i) {
        const size_t j = static_cast<size_t>(rng.below(i));
        std::swap(idx[i - 1], idx[j]);
    }
}

// Class-partitioned sample positions, shuffled per class with a derived seed.
std::array<std::vector<size_t>, 4> shuffled_class_positions(const DatasetIndex& index,
                                                            uint64_t seed, uint64_t salt) {
    std::array<std::vector<size_t>, 4> by_class;
    for (size_t i = 0; i < index.samples.size(); ++i) {
        const int label = index.samples[i].label;
        if (label < 0 || label >= kNumClasses) {
            throw LayoutError("sample label " + std::to_string(label) + " out of range for " +
                              index.samples[i].path);
        }
        by_class[static_cast<size_t>(label)].push_back(i);
    }
    for (int c = 0; c < kNumClasses; ++c) {
        SeededRng rng(mix_seed(mix_seed(seed, salt), static_cast<uint64_t>(c)));
        shuffle_indices(by_class[static_cast<size_t>(c)], rng);
    }
    return by_class;
}

} // namespace

const std::array<std::string, 4>& class_names() {
    static const std::array<std::string, 4> names = {
        "NonDemented", "VeryMildDemented", "MildDemented", "ModerateDemented"};
    return names;
}

int class_index(const std::string& name) {
    const auto& names = class_names();
    for (int i = 0; i < kNumClasses; ++i) {
        if (names[static_cast<size_t>(i)] == name) return i;
    }
    return -1;
}

std::array<size_t, 4> DatasetIndex::per_class_counts() const {
    std::array<size_t, 4> counts{0, 0, 0, 0};
    for (const auto& s : samples) {
        if (s.label >= 0 && s.label < kNumClasses) counts[static_cast<size_t>(s.label)]++;
    }
    return counts;
}

DatasetIndex scan_dataset(const std::string& root_dir) {
    const fs::path root(root_dir);
    if (!fs::is_directory(root)) {
        throw LayoutError("dataset root is not a directory: " + root_dir);
    }
    DatasetIndex index;
    for (int c = 0; c < kNumClasses; ++c) {
        const fs::path class_dir = root / class_names()[static_cast<size_t>(c)];
        if (!fs::is_directory(class_dir)) {
            throw LayoutError("missing class directory: " + class_dir.string());
        }
        std::vector<std::string> paths;
        for (const auto& entry : fs::directory_iterator(class_dir)) {
            if (!has_image_extension(entry.path())) continue;
            if (entry.is_regular_file()) {
                paths.push_back(entry.path().generic_string());
            } else if (entry.is_symlink()) {
                // dangling link with an image extension
                throw LayoutError("unreadable image file: " + entry.path().generic_string());
            }
        }
        if (paths.empty()) {
            throw LayoutError("class directory has no images: " + class_dir.string());
        }
        std::sort(paths.begin(), paths.end());
        for (auto& p : paths) {
            std::ifstream probe(p, std::ios::binary);
            if (!probe) {
                throw LayoutError("unreadable image file: " + p);
            }
            index.samples.push_back({std::move(p), c});
        }
    }
    return index;
}

DatasetIndex load_manifest(const std::string& json_path) {
    std::ifstream in(json_path);
    if (!in) throw LayoutError("cannot open manifest: " + json_path);
    DatasetIndex index;
    std::set<std::string> seen;
    try {
        const nlohmann::json j = nlohmann::json::parse(in);
        if (!j.is_array()) throw LayoutError("manifest must be a JSON array: " + json_path);
        for (const auto& item : j) {
            Sample s;
            s.path = item.at("path").get<std::string>();
            s.label = item.at("label").get<int>();
            if (s.label < 0 || s.label >= kNumClasses) {
                throw LayoutError("manifest label out of range [0,3] for " + s.path);
            }
            if (!seen.insert(s.path).second) {
                throw LayoutError("manifest lists path twice: " + s.path);
            }
            index.samples.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw LayoutError("manifest parse error in " + json_path + ": " + e.what());
    }
    return index;
}

std::pair<DatasetIndex, DatasetIndex> stratified_split(const DatasetIndex& index,
                                                       const SplitSpec& spec) {
    if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
        throw ParameterError("split: train_fraction must be in (0, 1)");
    }
    auto by_class = shuffled_class_positions(index, spec.seed, kSplitSalt);
    for (int c = 0; c < kNumClasses; ++c) {
        if (by_class[static_cast<size_t>(c)].empty()) {
            throw LayoutError("split: class has 0 samples: " +
                              class_names()[static_cast<size_t>(c)]);
        }
    }
    DatasetIndex train, val;
    for (auto& positions : by_class) {
        const size_t n_train =
            static_cast<size_t>(std::floor(spec.train_fraction * static_cast<double>(positions.size())));
        for (size_t i = 0; i < positions.size(); ++i) {
            auto& dst = i < n_train ? train : val;
            dst.samples.push_back(index.samples[positions[i]]);
        }
    }
    return {std::move(train), std::move(val)};
}

std::vector<std::pair<DatasetIndex, DatasetIndex>> stratified_kfold(const DatasetIndex& index,
                                                                    int k, uint64_t seed) {
    if (k < 2) throw ParameterError("kfold: k must be >= 2, got " + std::to_string(k));
    auto by_class = shuffled_class_positions(index, seed, kFoldSalt);
    for (int c = 0; c < kNumClasses; ++c) {
        if (by_class[static_cast<size_t>(c)].size() < static_cast<size_t>(k)) {
            throw ParameterError("kfold: class " + class_names()[static_cast<size_t>(c)] +
                                 " has " + std::to_string(by_class[static_cast<size_t>(c)].size()) +
                                 " samples, fewer than k=" + std::to_string(k));
        }
    }
    // fold_of[position in index.samples] = validation fold
    std::vector<int> fold_of(index.samples.size(), 0);
    for (const auto& positions : by_class) {
        for (size_t i = 0; i < positions.size(); ++i) {
            fold_of[positions[i]] = static_cast<int>(i % static_cast<size_t>(k));
        }
    }
    std::vector<std::pair<DatasetIndex, DatasetIndex>> folds(static_cast<size_t>(k));
    for (size_t pos = 0; pos < index.samples.size(); ++pos) {
        for (int f = 0; f < k; ++f) {
            auto& dst = fold_of[pos] == f ? folds[static_cast<size_t>(f)].second
                                          : folds[static_cast<size_t>(f)].first;
            dst.samples.push_back(index.samples[pos]);
        }
    }
    return folds;
}

std::vector<std::vector<size_t>> make_batches(const DatasetIndex& index, size_t batch_size,
                                              uint64_t seed, uint64_t epoch) {
    if (batch_size == 0) throw ParameterError("make_batches: batch_size must be >= 1");
    std::vector<size_t> order(index.samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    SeededRng rng(seed ^ epoch);
    shuffle_indices(order, rng);
    std::vector<std::vector<size_t>> batches;
    for (size_t start = 0; start < order.size(); start += batch_size) {
        const size_t end = std::min(order.size(), start + batch_size);
        batches.emplace_back(order.begin() + static_cast<long>(start),
                             order.begin() + static_cast<long>(end));
    }
    return batches;
}

} // namespace demenscan
