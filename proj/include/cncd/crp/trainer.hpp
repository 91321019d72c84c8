#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cncd/core/autodiff.hpp"
#include "cncd/core/optim.hpp"
#include "cncd/core/random.hpp"
#include "cncd/crp/networks.hpp"
#include "cncd/crp/prototypes.hpp"
#include "cncd/scene/scene.hpp"

namespace cncd {

struct CrpConfig {
    std::size_t hidden = 32;
    std::size_t adversary_hidden = 16;
    std::size_t feature_dim = 16;
    double leaky_slope = 0.01;
    double head_scale = 10.0;  // cosine-head logit scale
    /// Re-center features on the training sample mean at every epoch start and at the end.
    bool center_features = true;

    std::size_t epochs = 60;
    std::size_t steps_per_scene = 1;
    std::size_t batch_points = 256;
    LrSchedule lr;
    double weight_decay = 1e-4;

    double lambda_adv = 0.5;
    /// Linear ramp of lambda_adv over the first 10% of epochs.
    bool lambda_adv_warmup = false;
    bool adversary_enabled = true;
    std::size_t adversary_steps = 5;  // adversary steps per extractor step
    /// Constant adversary learning rate; 0 makes the adversary follow `lr`.
    double adversary_lr = 1e-2;
    double prediction_clamp = 1e-7;

    bool use_prototype_loss = true;
    double lambda_proto = 0.02;        // λ in the matching loss
    double prototype_loss_weight = 1.0;
    std::size_t prototype_warmup_epochs = 1;
    /// Softmax temperature of the similarity weights, used by the matching loss and the
    /// final prototype iteration. At 1 the iteration drifts every prototype onto the
    /// principal feature axis.
    double prototype_temperature = 0.06;
    double prototype_tolerance = 1e-6;
    std::size_t prototype_max_iterations = 200;
    std::size_t prototype_sample_points = 4096;

    std::uint64_t seed = 0;

    double lambda_adv_at(std::size_t epoch) const {
        if (!lambda_adv_warmup) return lambda_adv;
        const double ramp = std::max(1.0, 0.1 * static_cast<double>(epochs));
        return lambda_adv * std::min(1.0, (static_cast<double>(epoch) + 1.0) / ramp);
    }
};

struct LossReport {
    double l_cls = 0.0;
    double l_adv = 0.0;
    double l_pro = 0.0;
    double l_total = 0.0;
    std::size_t epoch = 0;
};

/// Labeled base points with their confounder tags.
struct PointBatch {
    Matrix x;
    std::vector<int> labels;
    std::vector<int> tags;
};

struct CrpOptimizers {
    OptimState extractor;
    OptimState adversary;
};

inline CrpOptimizers make_crp_optimizers(const ExtractorParams& e, const AdversaryParams& a, const CrpConfig& cfg) {
    return {make_optim_state(e.tensors, cfg.lr.initial, cfg.weight_decay),
            make_optim_state(a.tensors, cfg.lr.initial, cfg.weight_decay)};
}

/// Adversary update on frozen features: minimizes L_adv over φ. Returns the loss before the step.
inline double adversary_update(const Matrix& z, std::span<const int> tags, AdversaryParams& adversary, OptimState& opt,
                               const CrpConfig& cfg) {
    ad::Tape tape;
    BoundParams a = bind_params(tape, adversary.tensors, true);
    ad::Var p = adversary_predict(a, adversary.slope, tape.constant(z));
    ad::Var loss = ad::binary_cross_entropy(p, tags, cfg.prediction_clamp);
    tape.backward(loss);
    std::vector<Matrix> grads;
    for (const auto& v : a.vars) grads.push_back(tape.grad(v));
    optim_step(adversary.tensors, grads, opt);
    return loss.scalar();
}

/// Adversary update with the extractor frozen.
inline double adversary_step(const PointBatch& batch, const ExtractorParams& extractor, AdversaryParams& adversary,
                             OptimState& opt, const CrpConfig& cfg) {
    return adversary_update(features(extractor, batch.x), batch.tags, adversary, opt, cfg);
}

/// The extractor objective L_cls - λ_adv·L_adv (+ weighted matching loss) on a tape.
struct ExtractorObjective {
    ad::Var total;
    ad::Var l_cls;
    std::optional<ad::Var> l_adv;
    std::optional<ad::Var> l_pro;
};

inline ExtractorObjective extractor_objective(ad::Tape& tape, const BoundParams& e, double slope, const Matrix& center,
                                              const AdversaryParams* adversary, const PointBatch& batch,
                                              double lambda_adv, const PrototypeSet* prototypes,
                                              const CrpConfig& cfg) {
    ad::Var z = extract_features(e, slope, center, tape.constant(batch.x));
    ExtractorObjective obj;
    obj.l_cls = ad::cross_entropy(classify(e, cfg.head_scale, z), batch.labels);
    obj.total = obj.l_cls;
    if (adversary) {
        ad::Var p = adversary_predict(bind_params(tape, adversary->tensors, false), adversary->slope, z);
        obj.l_adv = ad::binary_cross_entropy(p, batch.tags, cfg.prediction_clamp);
        obj.total = ad::sub(obj.total, ad::scale(*obj.l_adv, lambda_adv));
    }
    if (prototypes) {
        // Per-point normalization keeps the term on the scale of the other losses.
        ad::Var pro = prototype_matching_loss(z, tape.constant(prototypes->prototypes), cfg.lambda_proto,
                                              cfg.prototype_temperature);
        obj.l_pro = pro;
        obj.total = ad::add(obj.total,
                            ad::scale(pro, cfg.prototype_loss_weight / static_cast<double>(batch.x.rows())));
    }
    return obj;
}

/// One alternating min-max step: adversary update(s), then extractor update.
inline LossReport train_step(const PointBatch& batch, ExtractorParams& extractor, AdversaryParams& adversary,
                             CrpOptimizers& opt, const CrpConfig& cfg, double lambda_adv,
                             const PrototypeSet* prototypes = nullptr) {
    if (batch.x.rows() == 0 || batch.labels.empty()) throw UsageError("train_step: batch has no labeled points");
    if (batch.labels.size() != batch.x.rows() || batch.tags.size() != batch.x.rows())
        throw UsageError("train_step: batch field lengths differ");

    LossReport rep;
    if (cfg.adversary_enabled && cfg.adversary_steps > 0) {
        const Matrix z = features(extractor, batch.x);  // θ is frozen for all adversary steps
        for (std::size_t s = 0; s < cfg.adversary_steps; ++s)
            adversary_update(z, batch.tags, adversary, opt.adversary, cfg);
    }

    ad::Tape tape;
    BoundParams e = bind_params(tape, extractor.tensors, true);
    ExtractorObjective obj = extractor_objective(tape, e, extractor.slope, extractor.center, cfg.adversary_enabled ? &adversary : nullptr,
                                                 batch, lambda_adv, prototypes, cfg);
    tape.backward(obj.total);
    std::vector<Matrix> grads;
    for (const auto& v : e.vars) grads.push_back(tape.grad(v));
    optim_step(extractor.tensors, grads, opt.extractor);

    rep.l_cls = obj.l_cls.scalar();
    rep.l_adv = obj.l_adv ? obj.l_adv->scalar() : 0.0;
    rep.l_pro = obj.l_pro ? obj.l_pro->scalar() / static_cast<double>(batch.x.rows()) : 0.0;
    rep.l_total = obj.total.scalar();
    return rep;
}

/// All labeled base points of the given scenes, in scene order.
inline PointBatch collect_base_points(std::span<const PointScene> scenes) {
    std::size_t n = 0, d = 0;
    for (const auto& s : scenes) {
        d = s.attrs.cols();
        for (std::size_t i = 0; i < s.size(); ++i) n += s.is_novel(i) ? 0 : 1;
    }
    PointBatch b{Matrix(n, d), {}, {}};
    std::size_t r = 0;
    for (const auto& s : scenes)
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s.is_novel(i)) continue;
            std::copy(s.attrs.row(i).begin(), s.attrs.row(i).end(), b.x.row(r++).begin());
            b.labels.push_back(s.base_labels[i]);
            b.tags.push_back(s.confounder_tags[i]);
        }
    return b;
}

/// All novel points of the given scenes, in scene order; labels are the hidden novel labels.
inline PointBatch collect_novel_points(std::span<const PointScene> scenes) {
    std::size_t n = 0, d = 0;
    for (const auto& s : scenes) {
        d = s.attrs.cols();
        for (std::size_t i = 0; i < s.size(); ++i) n += s.is_novel(i) ? 1 : 0;
    }
    PointBatch b{Matrix(n, d), {}, {}};
    std::size_t r = 0;
    for (const auto& s : scenes)
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (!s.is_novel(i)) continue;
            std::copy(s.attrs.row(i).begin(), s.attrs.row(i).end(), b.x.row(r++).begin());
            b.labels.push_back(s.novel_labels[i]);
            b.tags.push_back(s.confounder_tags[i]);
        }
    return b;
}

/// Deterministic subsample of `n` rows (all rows when n >= size).
inline PointBatch subsample(const PointBatch& all, std::size_t n, Rng& rng) {
    if (n >= all.x.rows()) return all;
    std::vector<std::size_t> idx(all.x.rows());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + rng.index(idx.size() - i)]);
    idx.resize(n);
    PointBatch b{select_rows(all.x, idx), {}, {}};
    for (std::size_t i : idx) {
        b.labels.push_back(all.labels[i]);
        b.tags.push_back(all.tags[i]);
    }
    return b;
}

/// Shifts the extractor's output offset so features of `x` have zero mean.
inline void recenter(ExtractorParams& extractor, const Matrix& x) {
    const Matrix z = features(extractor, x);
    for (std::size_t c = 0; c < z.cols(); ++c) {
        double m = 0.0;
        for (std::size_t r = 0; r < z.rows(); ++r) m += z(r, c);
        extractor.center(0, c) += m / static_cast<double>(z.rows());
    }
}

struct CrpResult {
    ExtractorParams extractor;
    AdversaryParams adversary;
    PrototypeSet prototypes;
    std::vector<LossReport> trace;
    bool prototypes_converged = false;
    std::size_t prototype_iterations = 0;
};

inline std::vector<PointScene> train_scenes_of(std::span<const PointScene> dataset) {
    std::vector<PointScene> out;
    for (const auto& s : dataset)
        if (s.split == Split::Train) out.push_back(s);
    return out;
}

/// Adversarial training over the train scenes, then prototype refinement.
inline CrpResult fit_crp(std::span<const PointScene> dataset, const CrpConfig& cfg) {
    std::vector<PointBatch> per_scene;
    for (const auto& s : dataset)
        if (s.split == Split::Train) per_scene.push_back(collect_base_points(std::span<const PointScene>(&s, 1)));
    if (per_scene.empty()) throw UsageError("fit_crp: dataset has no train scenes");
    const std::size_t input_dim = per_scene.front().x.cols();
    const std::size_t num_classes = [&] {
        int mx = -1;
        for (const auto& b : per_scene)
            for (int y : b.labels) mx = std::max(mx, y);
        return static_cast<std::size_t>(mx + 1);
    }();

    CrpResult res;
    res.extractor = init_extractor(input_dim, cfg.hidden, cfg.feature_dim, num_classes, derive_seed(cfg.seed, 2),
                                   cfg.leaky_slope);
    res.extractor.head_scale = cfg.head_scale;
    res.adversary = init_adversary(cfg.feature_dim, cfg.adversary_hidden, derive_seed(cfg.seed, 3), cfg.leaky_slope);
    CrpOptimizers opt = make_crp_optimizers(res.extractor, res.adversary, cfg);

    Rng batch_rng(derive_seed(cfg.seed, 1));
    Rng sample_rng(derive_seed(cfg.seed, 4));
    PointBatch all_base;
    {
        std::vector<const Matrix*> parts;
        for (const auto& b : per_scene) parts.push_back(&b.x);
        all_base.x = vstack(parts);
        for (const auto& b : per_scene) {
            all_base.labels.insert(all_base.labels.end(), b.labels.begin(), b.labels.end());
            all_base.tags.insert(all_base.tags.end(), b.tags.begin(), b.tags.end());
        }
    }
    const PointBatch proto_sample = subsample(all_base, cfg.prototype_sample_points, sample_rng);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (cfg.center_features) recenter(res.extractor, proto_sample.x);
        opt.extractor.learning_rate = cfg.lr.at(epoch);
        opt.adversary.learning_rate = cfg.adversary_lr > 0.0 ? cfg.adversary_lr : cfg.lr.at(epoch);
        std::optional<PrototypeSet> protos;
        if (cfg.use_prototype_loss && epoch >= cfg.prototype_warmup_epochs)
            protos = class_mean_prototypes(features(res.extractor, proto_sample.x), proto_sample.labels, num_classes);
        const double lambda_adv = cfg.lambda_adv_at(epoch);

        LossReport acc;
        std::size_t steps = 0;
        for (const auto& scene_points : per_scene) {
            for (std::size_t s = 0; s < cfg.steps_per_scene; ++s) {
                const PointBatch batch = subsample(scene_points, cfg.batch_points, batch_rng);
                const LossReport r = train_step(batch, res.extractor, res.adversary, opt, cfg, lambda_adv,
                                                protos ? &*protos : nullptr);
                if (!std::isfinite(r.l_total)) throw DivergenceError("fit_crp: non-finite loss", epoch);
                acc.l_cls += r.l_cls;
                acc.l_adv += r.l_adv;
                acc.l_pro += r.l_pro;
                acc.l_total += r.l_total;
                ++steps;
            }
        }
        const double n = static_cast<double>(steps);
        acc.l_cls /= n;
        acc.l_adv /= n;
        acc.l_pro /= n;
        acc.l_total /= n;
        acc.epoch = epoch;
        res.trace.push_back(acc);
    }

    if (cfg.center_features) recenter(res.extractor, proto_sample.x);
    const Matrix z = features(res.extractor, proto_sample.x);
    PrototypeIterationResult it = iterate_prototypes(z, class_mean_prototypes(z, proto_sample.labels, num_classes),
                                                     cfg.prototype_tolerance, cfg.prototype_max_iterations,
                                                     cfg.prototype_temperature);
    res.prototypes = std::move(it.prototypes);
    res.prototypes_converged = it.converged;
    res.prototype_iterations = it.iterations;
    return res;
}

/// Fraction of points where the adversary's thresholded prediction equals the tag.
inline double adversary_accuracy(const AdversaryParams& adversary, const Matrix& z, std::span<const int> tags) {
    const Matrix p = adversary_probabilities(adversary, z);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < tags.size(); ++i) hits += ((p(i, 0) >= 0.5) == (tags[i] == 1)) ? 1 : 0;
    return tags.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(tags.size());
}

/// Trains a fresh adversary on frozen features; measures how much confounder
/// information the features still carry.
inline AdversaryParams fit_probe_adversary(const Matrix& z, std::span<const int> tags, std::size_t hidden,
                                           std::size_t steps, std::size_t batch, std::uint64_t seed,
                                           double lr = 3e-3) {
    AdversaryParams adv = init_adversary(z.cols(), hidden, derive_seed(seed, 11));
    OptimState opt = make_optim_state(adv.tensors, lr);
    Rng rng(derive_seed(seed, 12));
    PointBatch all{z, std::vector<int>(z.rows(), 0), std::vector<int>(tags.begin(), tags.end())};
    for (std::size_t s = 0; s < steps; ++s) {
        const PointBatch b = subsample(all, batch, rng);
        ad::Tape tape;
        BoundParams a = bind_params(tape, adv.tensors, true);
        ad::Var loss = ad::binary_cross_entropy(adversary_predict(a, adv.slope, tape.constant(b.x)), b.tags);
        tape.backward(loss);
        std::vector<Matrix> grads;
        for (const auto& v : a.vars) grads.push_back(tape.grad(v));
        optim_step(adv.tensors, grads, opt);
    }
    return adv;
}

}  // namespace cncd
