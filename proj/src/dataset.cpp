#include "satnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "imageio.hpp"

namespace satnet {

namespace fs = std::filesystem;

SplitIndices split_indices(const std::vector<int>& labels, int num_classes, const SplitSpec& spec) {
    spec.validate();
    if (labels.empty()) throw DataError("split: no samples");

    SplitIndices out;
    auto cut = [&](std::vector<std::size_t>& pool) {
        // val/test round down, the remainder stays in train
        const std::size_t n = pool.size();
        const auto n_val = static_cast<std::size_t>(std::floor(spec.fractions[1] * static_cast<double>(n)));
        const auto n_test = static_cast<std::size_t>(std::floor(spec.fractions[2] * static_cast<double>(n)));
        const std::size_t n_train = n - n_val - n_test;
        out.train.insert(out.train.end(), pool.begin(), pool.begin() + static_cast<long>(n_train));
        out.val.insert(out.val.end(), pool.begin() + static_cast<long>(n_train),
                       pool.begin() + static_cast<long>(n_train + n_val));
        out.test.insert(out.test.end(), pool.begin() + static_cast<long>(n_train + n_val), pool.end());
    };

    if (spec.stratified) {
        std::vector<std::vector<std::size_t>> per_class(static_cast<std::size_t>(num_classes));
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const int y = labels[i];
            if (y < 0 || y >= num_classes)
                throw ContractError("split: label " + std::to_string(y) + " out of range");
            per_class[static_cast<std::size_t>(y)].push_back(i);
        }
        for (int c = 0; c < num_classes; ++c) {
            auto& pool = per_class[static_cast<std::size_t>(c)];
            if (pool.size() < 3)
                throw DataError("split: class " + std::to_string(c) + " has only " +
                                std::to_string(pool.size()) + " samples, need >= 3 for stratification");
            Rng rng = Rng::substream(spec.seed, "split", static_cast<std::uint64_t>(c));
            rng.shuffle(pool);
            cut(pool);
        }
    } else {
        std::vector<std::size_t> pool(labels.size());
        std::iota(pool.begin(), pool.end(), 0);
        Rng rng = Rng::substream(spec.seed, "split");
        rng.shuffle(pool);
        cut(pool);
    }
    return out;
}

namespace {

bool has_image_extension(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".tif" ||
           ext == ".tiff";
}

} // namespace

LabeledDataset load_directory(const fs::path& root, int image_size) {
    if (!fs::is_directory(root)) throw DataError("dataset root is not a directory: " + root.string());

    std::vector<std::string> class_names;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) class_names.push_back(entry.path().filename().string());
    if (class_names.empty()) throw DataError("no class subdirectories under " + root.string());
    std::sort(class_names.begin(), class_names.end());

    LabeledDataset ds;
    ds.class_names = class_names;
    for (int label = 0; label < static_cast<int>(class_names.size()); ++label) {
        const fs::path class_dir = root / class_names[static_cast<std::size_t>(label)];
        std::vector<std::string> files;
        for (const auto& entry : fs::directory_iterator(class_dir))
            if (entry.is_regular_file() && has_image_extension(entry.path()))
                files.push_back(entry.path().filename().string());
        std::sort(files.begin(), files.end());

        std::size_t loaded = 0;
        for (const std::string& file : files) {
            bool resized = false;
            TensorF img = read_image_rgb((class_dir / file).string(), image_size, resized);
            if (!img.defined()) {
                ++ds.skipped_unreadable;
                std::fprintf(stderr, "warning: skipping unreadable image %s\n",
                             (class_dir / file).string().c_str());
                continue;
            }
            if (resized) {
                ++ds.resized;
                std::fprintf(stderr, "warning: resized %s to %dx%d\n",
                             (class_dir / file).string().c_str(), image_size, image_size);
            }
            ds.samples.push_back({std::move(img), label,
                                  class_names[static_cast<std::size_t>(label)] + "/" + file});
            ++loaded;
        }
        if (loaded == 0)
            throw DataError("class directory has no readable images: " + class_dir.string());
    }
    return ds;
}

namespace {

// Isotropic-in-distribution smooth texture: a few random plane waves, then
// normalised to mean 0.5 and moderate contrast.
void fill_texture(std::vector<float>& t, int size, Rng& rng) {
    const int waves = 6;
    std::vector<double> amp(waves), freq(waves), theta(waves), phase(waves);
    for (int k = 0; k < waves; ++k) {
        amp[k] = rng.uniform(0.5, 1.0);
        freq[k] = rng.uniform(1.0, 6.0);
        theta[k] = rng.uniform(0.0, 3.14159265358979323846);
        phase[k] = rng.uniform(0.0, 6.28318530717958647692);
    }
    double mean = 0;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            double v = 0;
            for (int k = 0; k < waves; ++k)
                v += amp[k] * std::cos(6.28318530717958647692 * freq[k] *
                                           (x * std::cos(theta[k]) + y * std::sin(theta[k])) / size +
                                       phase[k]);
            t[static_cast<std::size_t>(y * size + x)] = static_cast<float>(v);
            mean += v;
        }
    mean /= static_cast<double>(size) * size;
    double var = 0;
    for (const float v : t) var += (v - mean) * (v - mean);
    var /= static_cast<double>(size) * size;
    const double inv = var > 0 ? 1.0 / std::sqrt(var) : 0.0;
    for (auto& v : t)
        v = static_cast<float>(std::clamp(0.5 + 0.25 * (v - mean) * inv, 0.0, 1.0));
}

} // namespace

LabeledDataset synth_generate(int n_per_class, std::uint64_t seed, int image_size) {
    if (n_per_class < 1) throw ConfigError("synth_generate: n_per_class must be >= 1");
    const int size = image_size;
    const long long plane = static_cast<long long>(size) * size;

    LabeledDataset ds;
    ds.class_names = {"LineAcross", "LineDiagonal", "TexGreen", "TexRed"};

    const float bg = 0.45f, line = 0.85f;
    const int thickness = 3;

    for (int label = 0; label < 4; ++label) {
        for (int i = 0; i < n_per_class; ++i) {
            Rng rng = Rng::substream(seed, "synth", static_cast<std::uint64_t>(label),
                                     static_cast<std::uint64_t>(i));
            TensorF img({3, size, size});
            float* d = img.data();

            if (label <= 1) {
                for (long long p = 0; p < 3 * plane; ++p) d[p] = bg;
                if (label == 0) {
                    const int r0 = rng.uniform_int(size - thickness + 1);
                    for (int dy = 0; dy < thickness; ++dy)
                        for (int x = 0; x < size; ++x)
                            for (int c = 0; c < 3; ++c)
                                d[c * plane + static_cast<long long>(r0 + dy) * size + x] = line;
                } else {
                    // wrapped 45-degree stripe: exactly `thickness` pixels per column,
                    // same pixel count (and thus color statistics) as the horizontal stripe
                    const int off = rng.uniform_int(size);
                    for (int x = 0; x < size; ++x)
                        for (int dy = 0; dy < thickness; ++dy) {
                            const int y = (x + off + dy) % size;
                            for (int c = 0; c < 3; ++c)
                                d[c * plane + static_cast<long long>(y) * size + x] = line;
                        }
                }
            } else {
                std::vector<float> t(static_cast<std::size_t>(plane));
                fill_texture(t, size, rng);
                const bool green = (label == 2);
                for (long long p = 0; p < plane; ++p) {
                    const float dominant = 0.30f + 0.45f * t[static_cast<std::size_t>(p)];
                    const float secondary = 0.30f + 0.18f * t[static_cast<std::size_t>(p)];
                    const float blue = 0.30f + 0.10f * t[static_cast<std::size_t>(p)];
                    d[0 * plane + p] = green ? secondary : dominant;
                    d[1 * plane + p] = green ? dominant : secondary;
                    d[2 * plane + p] = blue;
                }
            }

            for (long long p = 0; p < 3 * plane; ++p)
                d[p] = static_cast<float>(std::clamp(d[p] + 0.1 * rng.normal(), 0.0, 1.0));

            char name[64];
            std::snprintf(name, sizeof(name), "sample_%05d.png", i);
            ds.samples.push_back({std::move(img), label,
                                  ds.class_names[static_cast<std::size_t>(label)] + "/" + name});
        }
    }
    return ds;
}

void write_dataset_as_images(const LabeledDataset& ds, const fs::path& root) {
    fs::create_directories(root);
    for (const std::string& name : ds.class_names) fs::create_directories(root / name);
    for (const auto& sample : ds.samples) {
        const fs::path path = root / sample.rel_path;
        if (!write_image_rgb(sample.image, path.string()))
            throw DataError("failed to write image " + path.string());
    }
}

void write_split_manifest(const fs::path& path, const LabeledDataset& ds, const SplitIndices& idx) {
    std::vector<const char*> split_of(ds.size(), "train");
    for (const std::size_t i : idx.val) split_of[i] = "val";
    for (const std::size_t i : idx.test) split_of[i] = "test";
    std::ofstream out(path);
    if (!out) throw DataError("cannot write split manifest " + path.string());
    for (std::size_t i = 0; i < ds.size(); ++i)
        out << ds.samples[i].rel_path << '\t' << split_of[i] << '\t' << ds.samples[i].label << '\n';
}

} // namespace satnet
