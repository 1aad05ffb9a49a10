#pragma once

// Losses, optimizers, learning-rate schedules, early stopping and the epoch
// loop. The three named presets mirror the training configurations of the
// three architectures.

#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "satnet/dataset.hpp"
#include "satnet/models.hpp"
#include "satnet/ops.hpp"
#include "satnet/regularization.hpp"

namespace satnet {

// ---------------------------------------------------------------------------
// class weights
// ---------------------------------------------------------------------------

/// Fixed per-class loss weights keyed by class name. Classes missing from the
/// table weigh 1.0, so the EuroSAT defaults are inert on other datasets.
struct ClassWeightTable {
    std::map<std::string, double> by_name;

    static ClassWeightTable uniform() { return {}; }

    /// 1.3 for the frequently confused classes, 0.8 for the consistently easy
    /// ones, 1.0 otherwise.
    static ClassWeightTable defaults() {
        ClassWeightTable t;
        t.by_name = {{"HerbaceousVegetation", 1.3}, {"PermanentCrop", 1.3}, {"Industrial", 1.3},
                     {"Forest", 0.8},              {"SeaLake", 0.8},       {"Residential", 0.8}};
        return t;
    }

    void validate() const {
        for (const auto& [name, w] : by_name)
            if (w <= 0.0) throw ConfigError("class weight for '" + name + "' must be positive");
    }

    template <typename T>
    std::vector<T> resolve(const std::vector<std::string>& class_names) const {
        validate();
        std::vector<T> out;
        out.reserve(class_names.size());
        for (const auto& name : class_names) {
            const auto it = by_name.find(name);
            out.push_back(static_cast<T>(it == by_name.end() ? 1.0 : it->second));
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// optimizers
// ---------------------------------------------------------------------------

enum class OptimizerKind { Adam, AdamW };

inline const char* optimizer_name(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "adamw"; }

inline OptimizerKind optimizer_from_name(const std::string& name) {
    if (name == "adam") return OptimizerKind::Adam;
    if (name == "adamw") return OptimizerKind::AdamW;
    throw ConfigError("unknown optimizer '" + name + "' (expected adam|adamw)");
}

template <typename T>
class OptimizerBase {
public:
    explicit OptimizerBase(std::vector<Tensor<T>> params) : params_(std::move(params)) {
        for (const auto& p : params_) {
            m_.emplace_back(p.numel(), T(0));
            v_.emplace_back(p.numel(), T(0));
        }
    }
    virtual ~OptimizerBase() = default;
    virtual void step(double lr) = 0;

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

protected:
    /// Bias-corrected Adam update direction for parameter i, element j.
    void moments(std::size_t i, double beta1, double beta2) {
        Tensor<T>& p = params_[i];
        const std::vector<T>& g = p.grad();
        std::vector<T>& m = m_[i];
        std::vector<T>& v = v_[i];
        for (std::size_t j = 0; j < m.size(); ++j) {
            m[j] = static_cast<T>(beta1 * m[j] + (1.0 - beta1) * g[j]);
            v[j] = static_cast<T>(beta2 * v[j] + (1.0 - beta2) * g[j] * g[j]);
        }
    }

    std::vector<Tensor<T>> params_;
    std::vector<std::vector<T>> m_, v_;
    long long t_ = 0;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
};

template <typename T>
class Adam : public OptimizerBase<T> {
public:
    using OptimizerBase<T>::OptimizerBase;

    void step(double lr) override {
        ++this->t_;
        const double bc1 = 1.0 - std::pow(this->beta1_, static_cast<double>(this->t_));
        const double bc2 = 1.0 - std::pow(this->beta2_, static_cast<double>(this->t_));
        for (std::size_t i = 0; i < this->params_.size(); ++i) {
            this->moments(i, this->beta1_, this->beta2_);
            T* p = this->params_[i].data();
            const std::vector<T>& m = this->m_[i];
            const std::vector<T>& v = this->v_[i];
            for (std::size_t j = 0; j < m.size(); ++j) {
                const double mhat = static_cast<double>(m[j]) / bc1;
                const double vhat = static_cast<double>(v[j]) / bc2;
                p[j] = static_cast<T>(static_cast<double>(p[j]) - lr * mhat / (std::sqrt(vhat) + this->eps_));
            }
        }
    }
};

/// AdamW: identical moment updates, but weight decay is decoupled — applied
/// directly to the parameter, never through the gradient moments.
template <typename T>
class AdamW : public OptimizerBase<T> {
public:
    AdamW(std::vector<Tensor<T>> params, double weight_decay)
        : OptimizerBase<T>(std::move(params)), weight_decay_(weight_decay) {}

    void step(double lr) override {
        ++this->t_;
        const double bc1 = 1.0 - std::pow(this->beta1_, static_cast<double>(this->t_));
        const double bc2 = 1.0 - std::pow(this->beta2_, static_cast<double>(this->t_));
        for (std::size_t i = 0; i < this->params_.size(); ++i) {
            this->moments(i, this->beta1_, this->beta2_);
            T* p = this->params_[i].data();
            const std::vector<T>& m = this->m_[i];
            const std::vector<T>& v = this->v_[i];
            for (std::size_t j = 0; j < m.size(); ++j) {
                const double decayed = static_cast<double>(p[j]) * (1.0 - lr * weight_decay_);
                const double mhat = static_cast<double>(m[j]) / bc1;
                const double vhat = static_cast<double>(v[j]) / bc2;
                p[j] = static_cast<T>(decayed - lr * mhat / (std::sqrt(vhat) + this->eps_));
            }
        }
    }

private:
    double weight_decay_ = 0.0;
};

template <typename T>
std::unique_ptr<OptimizerBase<T>> make_optimizer(OptimizerKind kind, std::vector<Tensor<T>> params,
                                                 double weight_decay) {
    if (kind == OptimizerKind::Adam) return std::make_unique<Adam<T>>(std::move(params));
    return std::make_unique<AdamW<T>>(std::move(params), weight_decay);
}

// ---------------------------------------------------------------------------
// learning-rate schedules
// ---------------------------------------------------------------------------

enum class ScheduleKind { Constant, Plateau, Cosine, WarmRestarts };

struct Schedule {
    ScheduleKind kind = ScheduleKind::Constant;
    int patience = 3;      // plateau
    double factor = 0.5;   // plateau
    int t_max = 40;        // cosine
    int t0 = 15;           // warm restarts
    int t_mult = 2;        // warm restarts
    double eta_min = 0.0;

    static Schedule constant() { return {}; }
    static Schedule plateau(int patience, double factor) {
        Schedule s;
        s.kind = ScheduleKind::Plateau;
        s.patience = patience;
        s.factor = factor;
        return s;
    }
    static Schedule cosine(int t_max) {
        Schedule s;
        s.kind = ScheduleKind::Cosine;
        s.t_max = t_max;
        return s;
    }
    static Schedule warm_restarts(int t0, int t_mult) {
        Schedule s;
        s.kind = ScheduleKind::WarmRestarts;
        s.t0 = t0;
        s.t_mult = t_mult;
        return s;
    }

    void validate() const {
        switch (kind) {
            case ScheduleKind::Plateau:
                if (patience < 1 || factor <= 0.0 || factor >= 1.0)
                    throw ConfigError("plateau schedule needs patience >= 1 and factor in (0,1)");
                break;
            case ScheduleKind::Cosine:
                if (t_max < 1) throw ConfigError("cosine schedule needs t_max >= 1");
                break;
            case ScheduleKind::WarmRestarts:
                if (t0 < 1 || t_mult < 1)
                    throw ConfigError("warm-restart schedule needs t0 >= 1 and t_mult >= 1");
                break;
            case ScheduleKind::Constant: break;
        }
    }
};

/// eta_min + (eta0 - eta_min) * (1 + cos(pi * t / t_max)) / 2, t clamped at t_max.
inline double cosine_lr(double eta0, double eta_min, int t, int t_max) {
    t = std::min(t, t_max);
    return eta_min + (eta0 - eta_min) * 0.5 *
                         (1.0 + std::cos(3.14159265358979323846 * static_cast<double>(t) /
                                         static_cast<double>(t_max)));
}

/// Cosine decay within cycles of length t0, t0*t_mult, t0*t_mult^2, ...; the
/// rate returns to eta0 exactly at every restart epoch.
inline double warm_restart_lr(double eta0, double eta_min, int epoch, int t0, int t_mult) {
    int cycle_len = t0, start = 0;
    while (epoch >= start + cycle_len) {
        start += cycle_len;
        cycle_len *= t_mult;
    }
    return cosine_lr(eta0, eta_min, epoch - start, cycle_len);
}

/// Rate for a given epoch under a stateless schedule (constant/cosine/warm
/// restarts). Plateau depends on the observed metric; use LrScheduler.
inline double lr_at(const Schedule& schedule, double base_lr, int epoch) {
    schedule.validate();
    if (epoch < 0) throw ContractError("lr_at: epoch must be >= 0");
    switch (schedule.kind) {
        case ScheduleKind::Constant: return base_lr;
        case ScheduleKind::Cosine: return cosine_lr(base_lr, schedule.eta_min, epoch, schedule.t_max);
        case ScheduleKind::WarmRestarts:
            return warm_restart_lr(base_lr, schedule.eta_min, epoch, schedule.t0, schedule.t_mult);
        case ScheduleKind::Plateau:
            throw ContractError("lr_at: plateau schedule is stateful, use LrScheduler");
    }
    return base_lr;
}

/// Stateful wrapper used by the training loop. Plateau mode multiplies the
/// rate by `factor` whenever the monitored metric fails to improve for
/// `patience` consecutive epochs.
class LrScheduler {
public:
    LrScheduler(const Schedule& schedule, double base_lr) : schedule_(schedule), base_lr_(base_lr) {
        schedule.validate();
    }

    double lr_for_epoch(int epoch) const {
        if (schedule_.kind == ScheduleKind::Plateau) return base_lr_ * plateau_mult_;
        return lr_at(schedule_, base_lr_, epoch);
    }

    /// Call once per epoch with the monitored metric (higher is better).
    void observe(double metric) {
        if (schedule_.kind != ScheduleKind::Plateau) return;
        if (!seen_ || metric > best_) {
            best_ = metric;
            seen_ = true;
            bad_epochs_ = 0;
        } else if (++bad_epochs_ >= schedule_.patience) {
            plateau_mult_ *= schedule_.factor;
            bad_epochs_ = 0;
        }
    }

private:
    Schedule schedule_;
    double base_lr_;
    double plateau_mult_ = 1.0;
    double best_ = 0.0;
    bool seen_ = false;
    int bad_epochs_ = 0;
};

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
    OptimizerKind optimizer = OptimizerKind::Adam;
    double lr = 1e-3;
    double weight_decay = 0.0;
    Schedule schedule;
    int epochs = 30;
    int batch_size = 64;
    std::optional<int> early_stop_patience;
    std::uint64_t seed = 42;
    ClassWeightTable class_weights;
    bool augment_enabled = false;
    AugmentConfig augment; // normalisation applies even when the stochastic parts are off

    void validate() const {
        if (lr <= 0.0) throw ConfigError("train: lr must be positive");
        if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
        if (early_stop_patience && *early_stop_patience < 1)
            throw ConfigError("train: early_stop_patience must be >= 1");
        schedule.validate();
        class_weights.validate();
        augment.validate();
    }
};

/// The per-variant training recipes: baseline = Adam(1e-3) + plateau(3, 0.5)
/// for 30 epochs; cbam7 = Adam(1e-3) + cosine(40) for 40 epochs; balanced12 =
/// AdamW(1e-3, 0.05) + warm restarts(15, 2) with early stopping at patience 15.
inline TrainConfig preset_config(Variant variant) {
    TrainConfig cfg;
    switch (variant) {
        case Variant::Baseline:
            cfg.optimizer = OptimizerKind::Adam;
            cfg.schedule = Schedule::plateau(3, 0.5);
            cfg.epochs = 30;
            break;
        case Variant::Cbam7:
            cfg.optimizer = OptimizerKind::Adam;
            cfg.schedule = Schedule::cosine(40);
            cfg.epochs = 40;
            break;
        case Variant::Balanced12:
            cfg.optimizer = OptimizerKind::AdamW;
            cfg.weight_decay = 0.05;
            cfg.schedule = Schedule::warm_restarts(15, 2);
            cfg.epochs = 60;
            cfg.early_stop_patience = 15;
            break;
    }
    return cfg;
}

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0, train_acc = 0;
    double val_loss = 0, val_acc = 0;
    double lr = 0;
    std::vector<double> alpha; // per-block fusion weights (balanced12 only)
    double alpha_mean = 0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    int best_epoch = -1;
    double best_val_acc = 0.0;
    bool stopped_early = false;
};

inline std::string history_csv_header() {
    return "epoch,train_loss,train_acc,val_loss,val_acc,lr,alpha_mean,alpha_per_block";
}

inline std::string history_csv_row(const EpochRecord& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%d,%.8g,%.8g,%.8g,%.8g,%.8g,", r.epoch, r.train_loss,
                  r.train_acc, r.val_loss, r.val_acc, r.lr);
    std::string row = buf;
    if (!r.alpha.empty()) {
        std::snprintf(buf, sizeof(buf), "%.8g", r.alpha_mean);
        row += buf;
        row += ",";
        for (std::size_t i = 0; i < r.alpha.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.8g", r.alpha[i]);
            if (i) row += ";";
            row += buf;
        }
    } else {
        row += ",";
    }
    return row;
}

inline std::string history_csv(const std::vector<EpochRecord>& history) {
    std::string out = history_csv_header() + "\n";
    for (const auto& r : history) out += history_csv_row(r) + "\n";
    return out;
}

namespace detail {

/// Copy one dataset image (with optional augmentation) into a batch slot.
template <typename T>
void fill_batch_slot(Tensor<T>& batch, int slot, const TensorF& image, bool augment_on,
                     const AugmentConfig& aug, Rng& rng) {
    TensorF transformed = augment_on ? augment(image, aug, rng)
                                     : normalize_image(image, aug.normalize_mean, aug.normalize_std);
    T* dst = batch.data() + static_cast<long long>(slot) * transformed.numel();
    const float* src = transformed.data();
    for (std::size_t i = 0; i < transformed.numel(); ++i) dst[i] = static_cast<T>(src[i]);
}

} // namespace detail

template <typename T>
struct EvalResult {
    std::vector<int> labels, preds;
    std::vector<double> probs; // row-major n x num_classes
    double mean_loss = 0;
    double accuracy = 0;
};

/// Deterministic eval-mode pass over the given samples.
template <typename T>
EvalResult<T> evaluate(ModelBase<T>& model, const LabeledDataset& ds,
                       const std::vector<std::size_t>& indices, int batch_size,
                       const std::vector<T>& class_weights, const AugmentConfig& normalization) {
    if (indices.empty()) throw ContractError("evaluate: no samples");
    const int k = ds.num_classes();
    EvalResult<T> result;
    Rng unused(0);
    double loss_sum = 0;
    long long correct = 0;
    for (std::size_t pos = 0; pos < indices.size(); pos += static_cast<std::size_t>(batch_size)) {
        const int b = static_cast<int>(std::min<std::size_t>(batch_size, indices.size() - pos));
        const auto& first = ds.samples[indices[pos]].image;
        Tensor<T> batch({b, 3, first.dim(1), first.dim(2)});
        std::vector<int> labels(static_cast<std::size_t>(b));
        for (int i = 0; i < b; ++i) {
            const auto& sample = ds.samples[indices[pos + static_cast<std::size_t>(i)]];
            detail::fill_batch_slot(batch, i, sample.image, false, normalization, unused);
            labels[static_cast<std::size_t>(i)] = sample.label;
        }
        Tensor<T> logits = model.forward(batch, false, unused);
        Tensor<T> loss = weighted_cross_entropy(logits, labels, class_weights);
        loss_sum += static_cast<double>(loss.value()) * b;
        Tensor<T> probs = softmax(logits);
        const std::vector<int> preds = argmax_rows(logits);
        for (int i = 0; i < b; ++i) {
            result.labels.push_back(labels[static_cast<std::size_t>(i)]);
            result.preds.push_back(preds[static_cast<std::size_t>(i)]);
            correct += preds[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(i)];
            for (int c = 0; c < k; ++c)
                result.probs.push_back(static_cast<double>(probs.data()[static_cast<long long>(i) * k + c]));
        }
    }
    result.mean_loss = loss_sum / static_cast<double>(indices.size());
    result.accuracy = static_cast<double>(correct) / static_cast<double>(indices.size());
    return result;
}

/// Full training run. Keeps the parameters of the best-validation-accuracy
/// epoch and restores them into the model before returning. Aborts with
/// NumericError (and a batch diagnostic) if the loss goes non-finite.
template <typename T>
TrainResult train(ModelBase<T>& model, const LabeledDataset& ds,
                  std::vector<std::size_t> train_idx, const std::vector<std::size_t>& val_idx,
                  const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch = nullptr) {
    cfg.validate();
    if (train_idx.empty() || val_idx.empty())
        throw ContractError("train: train and val sets must be non-empty");

    const std::vector<T> class_weights = cfg.class_weights.resolve<T>(ds.class_names);
    std::vector<NamedTensor<T>> named_params, named_buffers;
    model.collect(named_params, named_buffers);
    std::vector<Tensor<T>> params;
    for (auto& [name, t] : named_params) params.push_back(t);
    auto optimizer = make_optimizer<T>(cfg.optimizer, params, cfg.weight_decay);
    LrScheduler scheduler(cfg.schedule, cfg.lr);

    const bool track_alpha = model.spec().variant == Variant::Balanced12;
    TrainResult result;
    std::vector<std::vector<T>> best_params, best_buffers;
    int epochs_since_best = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = scheduler.lr_for_epoch(epoch);
        Rng shuffle_rng = Rng::substream(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch));
        shuffle_rng.shuffle(train_idx);

        double loss_sum = 0;
        long long correct = 0;
        int batch_index = 0;
        for (std::size_t pos = 0; pos < train_idx.size();
             pos += static_cast<std::size_t>(cfg.batch_size), ++batch_index) {
            const int b = static_cast<int>(std::min<std::size_t>(cfg.batch_size, train_idx.size() - pos));
            const auto& first = ds.samples[train_idx[pos]].image;
            Tensor<T> batch({b, 3, first.dim(1), first.dim(2)});
            std::vector<int> labels(static_cast<std::size_t>(b));
            for (int i = 0; i < b; ++i) {
                const std::size_t ds_index = train_idx[pos + static_cast<std::size_t>(i)];
                const auto& sample = ds.samples[ds_index];
                Rng aug_rng = Rng::substream(cfg.seed, "augment", static_cast<std::uint64_t>(epoch),
                                             static_cast<std::uint64_t>(ds_index));
                detail::fill_batch_slot(batch, i, sample.image, cfg.augment_enabled, cfg.augment, aug_rng);
                labels[static_cast<std::size_t>(i)] = sample.label;
            }
            Rng reg_rng = Rng::substream(cfg.seed, "regularize", static_cast<std::uint64_t>(epoch),
                                         static_cast<std::uint64_t>(batch_index));

            GradTape<T> tape;
            Tensor<T> logits = model.forward(batch, true, reg_rng);
            Tensor<T> loss = weighted_cross_entropy(logits, labels, class_weights);
            const double loss_value = static_cast<double>(loss.value());
            if (!std::isfinite(loss_value)) {
                double mn = batch.data()[0], mx = batch.data()[0], mean = 0;
                for (std::size_t i = 0; i < batch.numel(); ++i) {
                    mn = std::min(mn, static_cast<double>(batch.data()[i]));
                    mx = std::max(mx, static_cast<double>(batch.data()[i]));
                    mean += static_cast<double>(batch.data()[i]);
                }
                mean /= static_cast<double>(batch.numel());
                std::string label_list;
                for (const int y : labels) label_list += std::to_string(y) + " ";
                char buf[256];
                std::snprintf(buf, sizeof(buf),
                              "non-finite loss %g at epoch %d batch %d (batch size %d, input "
                              "min/mean/max = %g/%g/%g, labels: ",
                              loss_value, epoch, batch_index, b, mn, mean, mx);
                throw NumericError(std::string(buf) + label_list + ")");
            }
            tape.backward(loss);
            optimizer->step(lr);
            optimizer->zero_grad();

            loss_sum += loss_value * b;
            const std::vector<int> preds = argmax_rows(logits);
            for (int i = 0; i < b; ++i)
                correct += preds[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(i)];
        }

        EvalResult<T> val =
            evaluate(model, ds, val_idx, cfg.batch_size, class_weights, cfg.augment);

        EpochRecord record;
        record.epoch = epoch;
        record.train_loss = loss_sum / static_cast<double>(train_idx.size());
        record.train_acc = static_cast<double>(correct) / static_cast<double>(train_idx.size());
        record.val_loss = val.mean_loss;
        record.val_acc = val.accuracy;
        record.lr = lr;
        if (track_alpha) {
            record.alpha = model.fusion_weights();
            record.alpha_mean = mean_of(record.alpha);
        }
        result.history.push_back(record);
        if (on_epoch) on_epoch(record);
        scheduler.observe(val.accuracy);

        if (result.best_epoch < 0 || val.accuracy > result.best_val_acc) {
            result.best_epoch = epoch;
            result.best_val_acc = val.accuracy;
            best_params.clear();
            best_buffers.clear();
            for (const auto& [name, t] : named_params) best_params.push_back(t.values());
            for (const auto& [name, t] : named_buffers) best_buffers.push_back(t.values());
            epochs_since_best = 0;
        } else if (cfg.early_stop_patience && ++epochs_since_best >= *cfg.early_stop_patience) {
            result.stopped_early = true;
            break;
        }
    }

    for (std::size_t i = 0; i < named_params.size(); ++i) named_params[i].second.values() = best_params[i];
    for (std::size_t i = 0; i < named_buffers.size(); ++i) named_buffers[i].second.values() = best_buffers[i];
    return result;
}

} // namespace satnet
