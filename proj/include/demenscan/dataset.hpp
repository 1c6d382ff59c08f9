#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "demenscan/errors.hpp"

namespace demenscan {

// Canonical 4-class taxonomy; index i maps to the i-th directory name.
inline constexpr int kNumClasses = 4;
const std::array<std::string, 4>& class_names();
int class_index(const std::string& name); // -1 if unknown

struct Sample {
    std::string path;
    int label = 0;
};

struct DatasetIndex {
    std::vector<Sample> samples;

    std::array<size_t, 4> per_class_counts() const;
    size_t size() const { return samples.size(); }
};

// Indexes `<root>/{NonDemented,VeryMildDemented,MildDemented,ModerateDemented}`
// with *.png / *.jpg / *.jpeg files, lexicographically ordered per class.
// Missing or empty class directories and unopenable files raise LayoutError.
DatasetIndex scan_dataset(const std::string& root_dir);

// Manifest override for nonstandard layouts: JSON array of {"path", "label"}.
DatasetIndex load_manifest(const std::string& json_path);

struct SplitSpec {
    double train_fraction = 0.8;
    uint64_t seed = 0;
};

// Per class: seeded shuffle, then the first floor(fraction·n_c) samples go to
// train and the remainder to validation. Exact partition of the input.
std::pair<DatasetIndex, DatasetIndex> stratified_split(const DatasetIndex& index,
                                                       const SplitSpec& spec);

// Per class: seeded shuffle, then deal round-robin into k folds; per-class
// fold sizes differ by at most one. Pair i holds (train, validation) for
// validation fold i.
std::vector<std::pair<DatasetIndex, DatasetIndex>> stratified_kfold(const DatasetIndex& index,
                                                                    int k, uint64_t seed);

// Full shuffle seeded by (seed ⊕ epoch), then consecutive chunks of
// batch_size; the final short batch is kept. Returns positions into
// index.samples.
std::vector<std::vector<size_t>> make_batches(const DatasetIndex& index, size_t batch_size,
                                              uint64_t seed, uint64_t epoch);

} // namespace demenscan
