#pragma once

// The three classifier architectures, assembled from the engine, attention and
// regularization primitives:
//
//   baseline    3 conv blocks [32,64,128], flatten -> FC(256) -> Dropout(0.5) -> FC(K)
//   cbam7       7 conv blocks [32,64,128,256,512,512,512], CBAM on blocks 2-7,
//               flatten -> FC(512) -> Dropout(0.4) -> FC(K)
//   balanced12  stem + 4 residual stages [64,128,256,512] x [3,3,3,2] blocks,
//               balanced attention on every residual branch, progressive
//               DropBlock per stage, global-avg-pool -> FC(K)
//
// plus binary checkpoints with bit-exact round-trips.

#include <bit>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "satnet/attention.hpp"
#include "satnet/nn.hpp"
#include "satnet/regularization.hpp"

namespace satnet {

enum class Variant { Baseline, Cbam7, Balanced12 };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::Baseline: return "baseline";
        case Variant::Cbam7: return "cbam7";
        case Variant::Balanced12: return "balanced12";
    }
    return "?";
}

inline Variant variant_from_name(const std::string& name) {
    if (name == "baseline") return Variant::Baseline;
    if (name == "cbam7") return Variant::Cbam7;
    if (name == "balanced12") return Variant::Balanced12;
    throw ConfigError("unknown model variant '" + name + "' (expected baseline|cbam7|balanced12)");
}

struct ModelSpec {
    Variant variant = Variant::Baseline;
    int num_classes = 10;
    double width_scale = 1.0; // balanced12 stage widths scale with this
    double dropout = 0.5;
    std::vector<double> dropblock_rates = {0.05, 0.10, 0.15, 0.20};
    int dropblock_size = 7;

    static ModelSpec make(Variant v, int num_classes = 10, double width_scale = 1.0) {
        ModelSpec spec;
        spec.variant = v;
        spec.num_classes = num_classes;
        spec.width_scale = width_scale;
        spec.dropout = v == Variant::Baseline ? 0.5 : (v == Variant::Cbam7 ? 0.4 : 0.0);
        if (v != Variant::Balanced12) spec.dropblock_rates.clear();
        return spec;
    }

    void validate() const {
        if (num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
        if (width_scale <= 0.0) throw ConfigError("model: width_scale must be positive");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: dropout must be in [0,1)");
        if (variant == Variant::Balanced12 && dropblock_rates.size() != 4)
            throw ConfigError("model: balanced12 needs one dropblock rate per stage");
    }

    std::string canonical() const {
        char buf[256];
        std::string rates;
        for (std::size_t i = 0; i < dropblock_rates.size(); ++i) {
            if (i) rates += ",";
            std::snprintf(buf, sizeof(buf), "%.17g", dropblock_rates[i]);
            rates += buf;
        }
        std::snprintf(buf, sizeof(buf), "variant=%s;classes=%d;width=%.17g;dropout=%.17g;dropblock=%s;block=%d",
                      variant_name(variant), num_classes, width_scale, dropout, rates.c_str(),
                      dropblock_size);
        return buf;
    }

    std::uint64_t digest() const {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (const char c : canonical()) {
            h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
            h *= 0x100000001b3ull;
        }
        return h;
    }

    static ModelSpec parse(const std::string& text);
};

inline ModelSpec ModelSpec::parse(const std::string& text) {
    ModelSpec spec;
    spec.dropblock_rates.clear();
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find(';', pos);
        if (end == std::string::npos) end = text.size();
        const std::string item = text.substr(pos, end - pos);
        pos = end + 1;
        const std::size_t eq = item.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
        if (key == "variant") spec.variant = variant_from_name(value);
        else if (key == "classes") spec.num_classes = std::stoi(value);
        else if (key == "width") spec.width_scale = std::stod(value);
        else if (key == "dropout") spec.dropout = std::stod(value);
        else if (key == "block") spec.dropblock_size = std::stoi(value);
        else if (key == "dropblock" && !value.empty()) {
            std::size_t p = 0;
            while (p < value.size()) {
                std::size_t e = value.find(',', p);
                if (e == std::string::npos) e = value.size();
                spec.dropblock_rates.push_back(std::stod(value.substr(p, e - p)));
                p = e + 1;
            }
        } else if (key != "dropblock") {
            throw ConfigError("checkpoint spec: unknown key '" + key + "'");
        }
    }
    return spec;
}

// ---------------------------------------------------------------------------

template <typename T>
class ModelBase {
public:
    virtual ~ModelBase() = default;

    /// Forward pass. The generator feeds dropout/dropblock when training.
    virtual Tensor<T> forward(const Tensor<T>& batch, bool training, Rng& rng) = 0;

    Tensor<T> forward(const Tensor<T>& batch) {
        Rng unused(0);
        return forward(batch, false, unused);
    }

    virtual void collect(std::vector<NamedTensor<T>>& params,
                         std::vector<NamedTensor<T>>& buffers) const = 0;

    /// sigmoid(fusion_logit) per residual block; balanced12 only.
    virtual std::vector<double> fusion_weights() const {
        throw ContractError("fusion weights exist only on the balanced12 variant");
    }
    virtual std::vector<double> fusion_logits() const {
        throw ContractError("fusion logits exist only on the balanced12 variant");
    }

    const ModelSpec& spec() const { return spec_; }

    std::vector<NamedTensor<T>> parameters() const {
        std::vector<NamedTensor<T>> p, b;
        collect(p, b);
        return p;
    }
    std::vector<NamedTensor<T>> buffers() const {
        std::vector<NamedTensor<T>> p, b;
        collect(p, b);
        return b;
    }
    std::size_t parameter_count() const { return total_numel(parameters()); }

protected:
    void check_input(const Tensor<T>& batch, int expected_hw) const {
        detail::require_rank(batch, 4, "model input");
        if (batch.dim(1) != 3 || (expected_hw > 0 && (batch.dim(2) != expected_hw || batch.dim(3) != expected_hw)))
            throw ShapeError(std::string("model input must be [b,3,") +
                             std::to_string(expected_hw) + "," + std::to_string(expected_hw) +
                             "], got " + shape_str(batch.shape()));
    }

    ModelSpec spec_;
};

template <typename T>
using Model = std::unique_ptr<ModelBase<T>>;

// ---------------------------------------------------------------------------

template <typename T>
class BaselineNet : public ModelBase<T> {
public:
    BaselineNet(const ModelSpec& spec, Rng& rng) {
        this->spec_ = spec;
        const int chans[4] = {3, 32, 64, 128};
        for (int i = 0; i < 3; ++i) {
            conv_[i] = Conv2d<T>(chans[i], chans[i + 1], 3, 1, 1, false, rng);
            bn_[i] = BatchNorm2d<T>(chans[i + 1]);
        }
        fc1_ = Linear<T>(128 * 8 * 8, 256, rng);
        fc2_ = Linear<T>(256, spec.num_classes, rng);
    }

    Tensor<T> forward(const Tensor<T>& batch, bool training, Rng& rng) override {
        this->check_input(batch, 64);
        Tensor<T> x = batch;
        for (int i = 0; i < 3; ++i) x = max_pool2d(relu(bn_[i].forward(conv_[i].forward(x), training)));
        x = relu(fc1_.forward(flatten(x)));
        x = dropout(x, this->spec_.dropout, training, rng);
        return fc2_.forward(x);
    }

    void collect(std::vector<NamedTensor<T>>& params, std::vector<NamedTensor<T>>& buffers) const override {
        for (int i = 0; i < 3; ++i) {
            const std::string prefix = "block" + std::to_string(i + 1);
            conv_[i].collect(prefix + ".conv", params);
            bn_[i].collect(prefix + ".bn", params, buffers);
        }
        fc1_.collect("head.fc1", params);
        fc2_.collect("head.fc2", params);
    }

private:
    Conv2d<T> conv_[3];
    BatchNorm2d<T> bn_[3];
    Linear<T> fc1_, fc2_;
};

template <typename T>
class Cbam7Net : public ModelBase<T> {
public:
    Cbam7Net(const ModelSpec& spec, Rng& rng) {
        this->spec_ = spec;
        const int chans[8] = {3, 32, 64, 128, 256, 512, 512, 512};
        for (int i = 0; i < 7; ++i) {
            conv_[i] = Conv2d<T>(chans[i], chans[i + 1], 3, 1, 1, false, rng);
            bn_[i] = BatchNorm2d<T>(chans[i + 1]);
            if (i >= 1) cbam_[i] = CBAMBlock<T>(chans[i + 1], rng, 16);
        }
        fc1_ = Linear<T>(512 * 2 * 2, 512, rng);
        fc2_ = Linear<T>(512, spec.num_classes, rng);
    }

    Tensor<T> forward(const Tensor<T>& batch, bool training, Rng& rng) override {
        this->check_input(batch, 64);
        Tensor<T> x = batch;
        for (int i = 0; i < 7; ++i) {
            x = relu(bn_[i].forward(conv_[i].forward(x), training));
            if (i >= 1) x = cbam_[i].forward(x);
            if (i <= 4) x = max_pool2d(x); // 64 -> 2 over the first five blocks
        }
        x = relu(fc1_.forward(flatten(x)));
        x = dropout(x, this->spec_.dropout, training, rng);
        return fc2_.forward(x);
    }

    void collect(std::vector<NamedTensor<T>>& params, std::vector<NamedTensor<T>>& buffers) const override {
        for (int i = 0; i < 7; ++i) {
            const std::string prefix = "block" + std::to_string(i + 1);
            conv_[i].collect(prefix + ".conv", params);
            bn_[i].collect(prefix + ".bn", params, buffers);
            if (i >= 1) cbam_[i].collect(prefix + ".cbam", params);
        }
        fc1_.collect("head.fc1", params);
        fc2_.collect("head.fc2", params);
    }

private:
    Conv2d<T> conv_[7];
    BatchNorm2d<T> bn_[7];
    CBAMBlock<T> cbam_[7]; // index 0 unused
    Linear<T> fc1_, fc2_;
};

/// Residual block: conv3x3 (stride s) -> BN -> ReLU -> conv3x3 (channel
/// expansion) -> BN -> balanced attention on the branch -> skip addition ->
/// ReLU -> DropBlock. The skip is a 1x1 projection (+BN) on any channel or
/// stride mismatch.
template <typename T>
struct ResidualBlock {
    Conv2d<T> conv1, conv2;
    BatchNorm2d<T> bn1, bn2;
    BalancedAttnBlock<T> attn;
    bool projected = false;
    Conv2d<T> skip_conv;
    BatchNorm2d<T> skip_bn;
    double dropblock_rate = 0.0;
    int dropblock_size = 7;

    ResidualBlock() = default;
    ResidualBlock(int in_ch, int out_ch, int stride, double db_rate, int db_size, Rng& rng)
        : dropblock_rate(db_rate), dropblock_size(db_size) {
        conv1 = Conv2d<T>(in_ch, in_ch, 3, stride, 1, false, rng);
        bn1 = BatchNorm2d<T>(in_ch);
        conv2 = Conv2d<T>(in_ch, out_ch, 3, 1, 1, false, rng);
        bn2 = BatchNorm2d<T>(out_ch);
        attn = BalancedAttnBlock<T>(out_ch, rng);
        projected = (in_ch != out_ch || stride != 1);
        if (projected) {
            skip_conv = Conv2d<T>(in_ch, out_ch, 1, stride, 0, false, rng);
            skip_bn = BatchNorm2d<T>(out_ch);
        }
    }

    Tensor<T> forward(const Tensor<T>& x, bool training, Rng& rng) {
        Tensor<T> h = relu(bn1.forward(conv1.forward(x), training));
        h = bn2.forward(conv2.forward(h), training);
        h = attn.forward(h, training);
        Tensor<T> s = projected ? skip_bn.forward(skip_conv.forward(x), training) : x;
        Tensor<T> y = relu(add(h, s));
        return dropblock(y, dropblock_rate, dropblock_size, training, rng);
    }

    void collect(const std::string& prefix, std::vector<NamedTensor<T>>& params,
                 std::vector<NamedTensor<T>>& buffers) const {
        conv1.collect(prefix + ".conv1", params);
        bn1.collect(prefix + ".bn1", params, buffers);
        conv2.collect(prefix + ".conv2", params);
        bn2.collect(prefix + ".bn2", params, buffers);
        attn.collect(prefix + ".attn", params, buffers);
        if (projected) {
            skip_conv.collect(prefix + ".skip", params);
            skip_bn.collect(prefix + ".skip_bn", params, buffers);
        }
    }
};

template <typename T>
class Balanced12Net : public ModelBase<T> {
public:
    static int scaled(int base, double width_scale) {
        return std::max(1, static_cast<int>(std::lround(base * width_scale)));
    }

    Balanced12Net(const ModelSpec& spec, Rng& rng) {
        this->spec_ = spec;
        const int base[4] = {64, 128, 256, 512};
        const int blocks[4] = {3, 3, 3, 2};
        int ch[4];
        for (int s = 0; s < 4; ++s) ch[s] = scaled(base[s], spec.width_scale);

        stem_ = Conv2d<T>(3, ch[0], 3, 1, 1, false, rng);
        stem_bn_ = BatchNorm2d<T>(ch[0]);

        const std::vector<double> rates =
            spec.dropblock_rates.empty() ? std::vector<double>{0, 0, 0, 0} : spec.dropblock_rates;
        int in_ch = ch[0];
        for (int s = 0; s < 4; ++s) {
            for (int b = 0; b < blocks[s]; ++b) {
                const int stride = (b == 0 && s > 0) ? 2 : 1;
                blocks_.emplace_back(in_ch, ch[s], stride, rates[static_cast<std::size_t>(s)],
                                     spec.dropblock_size, rng);
                stage_of_.push_back(s);
                in_ch = ch[s];
            }
        }
        fc_ = Linear<T>(ch[3], spec.num_classes, rng);
    }

    Tensor<T> forward(const Tensor<T>& batch, bool training, Rng& rng) override {
        this->check_input(batch, 0); // fully convolutional up to the head
        Tensor<T> x = relu(stem_bn_.forward(stem_.forward(batch), training));
        for (auto& block : blocks_) x = block.forward(x, training, rng);
        return fc_.forward(flatten(global_avg_pool(x)));
    }

    void collect(std::vector<NamedTensor<T>>& params, std::vector<NamedTensor<T>>& buffers) const override {
        stem_.collect("stem.conv", params);
        stem_bn_.collect("stem.bn", params, buffers);
        for (std::size_t i = 0; i < blocks_.size(); ++i)
            blocks_[i].collect("stage" + std::to_string(stage_of_[i] + 1) + ".block" +
                                   std::to_string(block_index_in_stage(i) + 1),
                               params, buffers);
        fc_.collect("head.fc", params);
    }

    std::vector<double> fusion_weights() const override {
        std::vector<double> w;
        for (const auto& block : blocks_) w.push_back(block.attn.fusion_weight());
        return w;
    }

    std::vector<double> fusion_logits() const override {
        std::vector<double> w;
        for (const auto& block : blocks_) w.push_back(block.attn.raw_fusion_logit());
        return w;
    }

    std::vector<ResidualBlock<T>>& residual_blocks() { return blocks_; }

private:
    std::size_t block_index_in_stage(std::size_t i) const {
        std::size_t n = 0;
        for (std::size_t j = 0; j < i; ++j)
            if (stage_of_[j] == stage_of_[i]) ++n;
        return n;
    }

    Conv2d<T> stem_;
    BatchNorm2d<T> stem_bn_;
    std::vector<ResidualBlock<T>> blocks_;
    std::vector<int> stage_of_;
    Linear<T> fc_;
};

/// Build a model from its spec; all weight initialisation draws from `rng`.
template <typename T>
Model<T> build_model(const ModelSpec& spec, Rng& rng) {
    spec.validate();
    switch (spec.variant) {
        case Variant::Baseline: return std::make_unique<BaselineNet<T>>(spec, rng);
        case Variant::Cbam7: return std::make_unique<Cbam7Net<T>>(spec, rng);
        case Variant::Balanced12: return std::make_unique<Balanced12Net<T>>(spec, rng);
    }
    throw ConfigError("unknown model variant");
}

/// Mean of the per-block fusion weights.
inline double mean_of(const std::vector<double>& v) {
    double acc = 0;
    for (const double x : v) acc += x;
    return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

struct CheckpointMeta {
    ModelSpec spec;
    int epoch = 0;
    double best_val_acc = 0.0;
    std::vector<double> fusion_logits;
};

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'S', 'A', 'T', 'N', 'E', 'T', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename V>
void write_pod(std::FILE* f, const V& v) {
    std::fwrite(&v, sizeof(V), 1, f);
}

template <typename V>
V read_pod(std::FILE* f) {
    V v{};
    if (std::fread(&v, sizeof(V), 1, f) != 1) throw DataError("checkpoint: unexpected end of file");
    return v;
}

template <typename T>
constexpr std::uint8_t dtype_tag() {
    return std::is_same_v<T, float> ? 0 : 1;
}

} // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const ModelBase<T>& model, int epoch,
                     double best_val_acc) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw DataError("cannot write checkpoint " + path);
    std::fwrite(detail::kCheckpointMagic, 1, 8, f);
    detail::write_pod(f, detail::kCheckpointVersion);
    const std::string spec = model.spec().canonical();
    detail::write_pod(f, static_cast<std::uint32_t>(spec.size()));
    std::fwrite(spec.data(), 1, spec.size(), f);
    detail::write_pod(f, model.spec().digest());
    detail::write_pod(f, static_cast<std::uint32_t>(epoch));
    detail::write_pod(f, best_val_acc);

    std::vector<double> logits;
    if (model.spec().variant == Variant::Balanced12) logits = model.fusion_logits();
    detail::write_pod(f, static_cast<std::uint32_t>(logits.size()));
    for (const double v : logits) detail::write_pod(f, v);

    std::vector<NamedTensor<T>> tensors, buffers;
    model.collect(tensors, buffers);
    tensors.insert(tensors.end(), buffers.begin(), buffers.end());
    detail::write_pod(f, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        detail::write_pod(f, static_cast<std::uint32_t>(name.size()));
        std::fwrite(name.data(), 1, name.size(), f);
        detail::write_pod(f, detail::dtype_tag<T>());
        detail::write_pod(f, static_cast<std::uint8_t>(t.rank()));
        for (int d = 0; d < t.rank(); ++d) detail::write_pod(f, static_cast<std::uint32_t>(t.dim(d)));
        std::fwrite(t.data(), sizeof(T), t.numel(), f);
    }
    std::fclose(f);
}

template <typename T>
Model<T> load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw DataError("cannot open checkpoint " + path);
    struct Closer {
        std::FILE* f;
        ~Closer() { std::fclose(f); }
    } closer{f};

    char magic[8];
    if (std::fread(magic, 1, 8, f) != 8 || std::memcmp(magic, detail::kCheckpointMagic, 8) != 0)
        throw DataError("not a checkpoint file: " + path);
    const auto version = detail::read_pod<std::uint32_t>(f);
    if (version != detail::kCheckpointVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version));

    const auto spec_len = detail::read_pod<std::uint32_t>(f);
    std::string spec_text(spec_len, '\0');
    if (std::fread(spec_text.data(), 1, spec_len, f) != spec_len)
        throw DataError("checkpoint: truncated spec");
    const auto digest = detail::read_pod<std::uint64_t>(f);
    const ModelSpec spec = ModelSpec::parse(spec_text);
    if (spec.digest() != digest) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "checkpoint spec digest mismatch: file %016llx, parsed %016llx",
                      static_cast<unsigned long long>(digest),
                      static_cast<unsigned long long>(spec.digest()));
        throw ConfigError(std::string(buf) + " (spec: " + spec_text + ")");
    }

    CheckpointMeta local;
    local.spec = spec;
    local.epoch = static_cast<int>(detail::read_pod<std::uint32_t>(f));
    local.best_val_acc = detail::read_pod<double>(f);
    const auto n_logits = detail::read_pod<std::uint32_t>(f);
    for (std::uint32_t i = 0; i < n_logits; ++i)
        local.fusion_logits.push_back(detail::read_pod<double>(f));

    Rng rng(0);
    Model<T> model = build_model<T>(spec, rng);
    std::vector<NamedTensor<T>> tensors, buffers;
    model->collect(tensors, buffers);
    tensors.insert(tensors.end(), buffers.begin(), buffers.end());

    std::vector<char> filled(tensors.size(), 0);
    const auto n_tensors = detail::read_pod<std::uint32_t>(f);
    if (n_tensors != tensors.size())
        throw ConfigError("checkpoint holds " + std::to_string(n_tensors) + " tensors, model needs " +
                          std::to_string(tensors.size()));
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        const auto name_len = detail::read_pod<std::uint32_t>(f);
        std::string name(name_len, '\0');
        if (std::fread(name.data(), 1, name_len, f) != name_len)
            throw DataError("checkpoint: truncated tensor name");
        const auto dtype = detail::read_pod<std::uint8_t>(f);
        if (dtype != detail::dtype_tag<T>())
            throw ConfigError("checkpoint tensor '" + name + "' has dtype tag " +
                              std::to_string(dtype) + ", build expects " +
                              std::to_string(detail::dtype_tag<T>()));
        const auto rank = detail::read_pod<std::uint8_t>(f);
        std::vector<int> dims;
        for (std::uint8_t d = 0; d < rank; ++d)
            dims.push_back(static_cast<int>(detail::read_pod<std::uint32_t>(f)));

        std::size_t slot = tensors.size();
        for (std::size_t j = 0; j < tensors.size(); ++j)
            if (tensors[j].first == name) { slot = j; break; }
        if (slot == tensors.size()) throw ConfigError("checkpoint tensor '" + name + "' not in model");
        if (filled[slot]) throw ConfigError("checkpoint tensor '" + name + "' appears twice");
        Tensor<T>& dst = tensors[slot].second;
        if (dims != dst.shape())
            throw ConfigError("checkpoint tensor '" + name + "' has shape " + shape_str(dims) +
                              ", model expects " + shape_str(dst.shape()));
        if (std::fread(dst.data(), sizeof(T), dst.numel(), f) != dst.numel())
            throw DataError("checkpoint: truncated tensor data for '" + name + "'");
        filled[slot] = 1;
    }
    for (std::size_t j = 0; j < tensors.size(); ++j)
        if (!filled[j]) throw ConfigError("checkpoint missing tensor '" + tensors[j].first + "'");

    if (meta) *meta = local;
    return model;
}

} // namespace satnet
