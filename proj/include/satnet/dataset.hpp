#pragma once

// Dataset ingestion and splitting. Images live in memory as float32 CHW
// tensors scaled to [0,1]; labels index into the lexicographically sorted
// class-name list.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "satnet/errors.hpp"
#include "satnet/rng.hpp"
#include "satnet/tensor.hpp"

namespace satnet {

struct LabeledDataset {
    struct Sample {
        TensorF image; // [3, H, W], values in [0,1]
        int label = 0;
        std::string rel_path; // "<ClassName>/<file>"
    };

    std::vector<Sample> samples;
    std::vector<std::string> class_names; // sorted lexicographically
    int skipped_unreadable = 0;
    int resized = 0;

    std::size_t size() const { return samples.size(); }
    int num_classes() const { return static_cast<int>(class_names.size()); }

    std::vector<int> labels() const {
        std::vector<int> out;
        out.reserve(samples.size());
        for (const auto& s : samples) out.push_back(s.label);
        return out;
    }
};

struct SplitSpec {
    std::array<double, 3> fractions = {0.70, 0.15, 0.15}; // train, val, test
    std::uint64_t seed = 42;
    bool stratified = true;

    void validate() const {
        double sum = 0;
        for (const double f : fractions) {
            if (f < 0.0) throw ConfigError("split: fractions must be non-negative");
            sum += f;
        }
        if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split: fractions must sum to 1");
    }
};

struct SplitIndices {
    std::vector<std::size_t> train, val, test;
};

/// Deterministic (seeded) split of sample indices. Stratified mode splits each
/// class independently; val/test sizes round down and the remainder goes to
/// train. The three parts always form an exact partition of the input.
SplitIndices split_indices(const std::vector<int>& labels, int num_classes, const SplitSpec& spec);

inline SplitIndices split(const LabeledDataset& ds, const SplitSpec& spec) {
    if (ds.samples.empty()) throw DataError("split: dataset is empty");
    return split_indices(ds.labels(), ds.num_classes(), spec);
}

/// Load `<root>/<ClassName>/*.png|jpg|...`. Class names come from the sorted
/// subdirectory list; files are visited in sorted order, so labels do not
/// depend on filesystem enumeration order. Unreadable files are skipped with a
/// warning count; images that are not `image_size` square are resized (and
/// counted). A class directory with no usable image is a hard error.
LabeledDataset load_directory(const std::filesystem::path& root, int image_size = 64);

/// Four-class synthetic task separating spatial from spectral cues:
///   LineAcross    horizontal light stripe on gray noise
///   LineDiagonal  diagonal light stripe on gray noise (same color statistics)
///   TexGreen      green-dominant smooth texture
///   TexRed        red-dominant texture with matched spatial statistics
/// The line pair differs only in orientation, the texture pair only in color.
/// Additive Gaussian pixel noise sigma=0.1 on every image.
LabeledDataset synth_generate(int n_per_class, std::uint64_t seed, int image_size = 64);

/// Materialise a dataset as class-subdirectory PNG files (the inverse of
/// load_directory).
void write_dataset_as_images(const LabeledDataset& ds, const std::filesystem::path& root);

/// One line per sample: "<relative-path>\t<split>\t<label>".
void write_split_manifest(const std::filesystem::path& path, const LabeledDataset& ds,
                          const SplitIndices& idx);

} // namespace satnet
