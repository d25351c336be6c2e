#pragma once

#if defined(__x86_64__) && defined(__SSE2__)
#include <immintrin.h>
#endif

#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "gseunet/losses.hpp"
#include "gseunet/metrics.hpp"
#include "gseunet/model.hpp"
#include "gseunet/optim.hpp"
#include "gseunet/rng.hpp"

// Training protocol: seeded 4:1 train/validation split, Adam over shuffled
// mini-batches, one loss/mIoU record per epoch. Identical (seed, config,
// dataset) triples reproduce the records bit for bit.

namespace gseunet {

struct Sample {
    Tensor input;   // [1,1,H,W], grayscale scaled to [0,1]
    Tensor target;  // [1,H,W], class ids 0/1
};

struct TrainConfig {
    int epochs = 50;
    double lr = 1e-4;
    int batch_size = 2;
    std::uint64_t seed = 0;
    LossKind loss = LossKind::cross_entropy;

    // lr = 0 is allowed so a no-op optimizer run stays expressible; only
    // negative or non-finite rates are rejected.
    void validate() const {
        if (epochs < 1) throw ConfigError("epochs must be at least 1");
        if (!(lr >= 0) || !std::isfinite(lr)) throw ConfigError("learning rate must be non-negative");
        if (batch_size < 1) throw ConfigError("batch size must be at least 1");
    }
};

struct MetricRecord {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_miou = 0.0;
};

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
};

// Seeded uniform shuffle of 0..n-1; the first ceil(0.8 n) ids train, the
// rest validate, so any remainder lands on the training side.
inline SplitIndices split_dataset(std::size_t n, std::uint64_t seed) {
    if (n < 5) {
        throw ConfigError("need at least 5 samples for a 4:1 split, got " + std::to_string(n));
    }
    std::vector<std::size_t> ids(n);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(ids);
    const std::size_t n_train = (n * 4 + 4) / 5;
    SplitIndices split;
    split.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
    return split;
}

namespace detail {

// Adam's second moments decay into subnormal territory, and x86 handles
// subnormal arithmetic in microcode at a ~100x penalty, which can dominate the
// whole run. Flush them to zero while training; they sit ~30 orders of
// magnitude below anything the update can use. Restored on scope exit so
// inference keeps default arithmetic.
#if defined(__x86_64__) && defined(__SSE2__)
class FlushSubnormals {
  public:
    FlushSubnormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040); }
    ~FlushSubnormals() { _mm_setcsr(saved_); }
    FlushSubnormals(const FlushSubnormals&) = delete;
    FlushSubnormals& operator=(const FlushSubnormals&) = delete;

  private:
    unsigned saved_;
};
#else
class FlushSubnormals {};
#endif

inline void check_dataset(const std::vector<Sample>& dataset) {
    if (dataset.empty()) throw DataError("dataset is empty");
    const Tensor& first = dataset.front().input;
    if (first.rank() != 4 || first.dim(0) != 1 || first.dim(1) != 1) {
        throw DataError("sample 0 input must be [1,1,H,W], got " + first.shape_str());
    }
    const int h = first.dim(2);
    const int w = first.dim(3);
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const Tensor& in = dataset[i].input;
        const Tensor& tg = dataset[i].target;
        if (in.rank() != 4 || in.dim(0) != 1 || in.dim(1) != 1 || in.dim(2) != h ||
            in.dim(3) != w) {
            throw DataError("sample " + std::to_string(i) + " input shape " + in.shape_str() +
                            " does not match the first sample's " + first.shape_str());
        }
        if (tg.rank() != 3 || tg.dim(0) != 1 || tg.dim(1) != h || tg.dim(2) != w) {
            throw DataError("sample " + std::to_string(i) + " target shape " + tg.shape_str() +
                            " does not match its input");
        }
    }
}

inline Tensor stack_inputs(const std::vector<Sample>& dataset,
                           const std::vector<std::size_t>& ids, std::size_t from,
                           std::size_t to) {
    const int h = dataset[ids[from]].input.dim(2);
    const int w = dataset[ids[from]].input.dim(3);
    auto out = Tensor::zeros({static_cast<int>(to - from), 1, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    for (std::size_t i = from; i < to; ++i) {
        const auto& src = dataset[ids[i]].input.data();
        std::memcpy(out.data().data() + (i - from) * plane, src.data(), plane * sizeof(float));
    }
    return out;
}

inline Tensor stack_targets(const std::vector<Sample>& dataset,
                            const std::vector<std::size_t>& ids, std::size_t from,
                            std::size_t to) {
    const int h = dataset[ids[from]].target.dim(1);
    const int w = dataset[ids[from]].target.dim(2);
    auto out = Tensor::zeros({static_cast<int>(to - from), h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    for (std::size_t i = from; i < to; ++i) {
        const auto& src = dataset[ids[i]].target.data();
        std::memcpy(out.data().data() + (i - from) * plane, src.data(), plane * sizeof(float));
    }
    return out;
}

inline GrayImage target_mask(const Tensor& target) {
    GrayImage img = make_gray(target.dim(2), target.dim(1));
    const auto& v = target.data();
    for (std::size_t i = 0; i < v.size(); ++i) img.pixels[i] = v[i] != 0.0f ? 1 : 0;
    return img;
}

}  // namespace detail

struct EvalResult {
    double mean_loss = 0.0;
    double mean_miou = 0.0;
};

// Frozen per-sample forward passes; loss and mIoU averaged in id order.
inline EvalResult evaluate(const Model& model, const std::vector<Sample>& dataset,
                           const std::vector<std::size_t>& ids,
                           LossKind loss = LossKind::cross_entropy) {
    if (ids.empty()) throw UsageError("evaluate needs at least one sample");
    double loss_sum = 0.0;
    double miou_sum = 0.0;
    for (std::size_t id : ids) {
        if (id >= dataset.size()) throw UsageError("evaluate: sample id out of range");
        const Sample& s = dataset[id];
        const Tensor logits = model_forward(model, s.input);
        loss_sum += segmentation_loss(loss, logits, s.target).item();
        miou_sum += miou(argmax_mask(logits), detail::target_mask(s.target));
    }
    const double n = static_cast<double>(ids.size());
    return {loss_sum / n, miou_sum / n};
}

inline EvalResult evaluate(const Model& model, const std::vector<Sample>& samples,
                           LossKind loss = LossKind::cross_entropy) {
    std::vector<std::size_t> ids(samples.size());
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    return evaluate(model, samples, ids, loss);
}

using EpochCallback = std::function<void(const MetricRecord&)>;

// Splits the dataset 4:1, then runs `cfg.epochs` passes of shuffled
// mini-batches (shuffle reseeded per epoch from (seed, epoch)) with Adam
// updates, validating after every epoch. The epoch's train_loss is the
// batch-size-weighted mean of batch losses. Any non-finite loss or gradient
// aborts with the offending epoch/batch named.
inline std::vector<MetricRecord> train(Model& model, const std::vector<Sample>& dataset,
                                       const TrainConfig& cfg,
                                       const EpochCallback& on_epoch = {}) {
    cfg.validate();
    detail::check_dataset(dataset);
    const detail::FlushSubnormals ftz;
    const SplitIndices split = split_dataset(dataset.size(), cfg.seed);
    for (auto& [name, t] : model.params) {
        (void)name;
        t.set_requires_grad(true);
    }
    Optimizer opt(OptimizerKind::adam, cfg.lr);
    std::vector<MetricRecord> records;
    records.reserve(static_cast<std::size_t>(cfg.epochs));
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<std::size_t> order = split.train;
        Rng shuffle_rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        int batch_index = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            ++batch_index;
            const Tensor input = detail::stack_inputs(dataset, order, start, stop);
            const Tensor target = detail::stack_targets(dataset, order, start, stop);
            for (auto& [name, t] : model.params) {
                (void)name;
                t.zero_grad();
            }
            Tape tape;
            const Tensor logits = model_forward(model, input, &tape);
            const Tensor loss = segmentation_loss(cfg.loss, logits, target, &tape);
            const double batch_loss = static_cast<double>(loss.item());
            if (!std::isfinite(batch_loss)) {
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                                   " batch " + std::to_string(batch_index));
            }
            backward(loss, tape);
            try {
                opt.step(model.params);
            } catch (const NumericError& err) {
                throw NumericError("epoch " + std::to_string(epoch) + " batch " +
                                   std::to_string(batch_index) + ": " + err.what());
            }
            loss_sum += batch_loss * static_cast<double>(stop - start);
        }
        const EvalResult val = evaluate(model, dataset, split.val, cfg.loss);
        MetricRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(order.size());
        rec.val_loss = val.mean_loss;
        rec.val_miou = val.mean_miou;
        records.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    return records;
}

}  // namespace gseunet
