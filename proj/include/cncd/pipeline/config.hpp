#pragma once

// Run configuration: flat `key = value` text with dotted section prefixes.
// Blank lines and lines starting with '#' are ignored. Unknown keys are errors.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "cncd/core/errors.hpp"
#include "cncd/core/hash.hpp"
#include "cncd/crg/graph.hpp"
#include "cncd/crp/trainer.hpp"
#include "cncd/gcn/labeler.hpp"
#include "cncd/scene/scene.hpp"

namespace cncd {

/// The four ablation rows: plain classifier, + deconfounded prototypes,
/// + causal graph (Sinkhorn labels), + graph-propagated pseudo-labels.
enum class Row { Baseline, Crp, CrpCrg, Full };

inline const char* to_string(Row r) {
    switch (r) {
        case Row::Baseline: return "baseline";
        case Row::Crp: return "crp";
        case Row::CrpCrg: return "crp-crg";
        case Row::Full: return "full";
    }
    return "?";
}

inline Row parse_row(const std::string& s) {
    for (Row r : {Row::Baseline, Row::Crp, Row::CrpCrg, Row::Full})
        if (s == to_string(r)) return r;
    throw ParameterError("unknown row '" + s + "' (baseline|crp|crp-crg|full)");
}

inline constexpr Row kAllRows[] = {Row::Baseline, Row::Crp, Row::CrpCrg, Row::Full};

struct RunConfig {
    SceneSpec scene;  // scene.seed is replaced by `seed` when the dataset is built
    std::size_t train_scenes = 40;
    std::size_t test_scenes = 10;

    double tau = 0.06;  // graph attention and prototype softmax temperature
    double lambda = 0.02;
    double lambda_adv = 0.5;
    double theta_init = 0.5;
    std::size_t gcn_layers = 3;
    double leaky_slope = 0.01;
    double lr = 1e-3;
    double lr_floor = 1e-5;
    std::size_t lr_decay_every = 5;
    double lr_decay_factor = 0.7;
    std::size_t epochs = 60;
    double sinkhorn_epsilon = 0.05;

    std::size_t hidden = 32;
    std::size_t feature_dim = 16;
    std::size_t adversary_hidden = 16;
    std::size_t batch_points = 256;
    std::size_t adversary_steps = 5;
    double adversary_lr = 1e-2;
    double weight_decay = 1e-4;
    double head_scale = 10.0;
    double prototype_loss_weight = 1.0;

    std::size_t graph_steps = 100;
    double graph_lr = 0.05;
    double surrogate_eps = 0.01;

    std::size_t sinkhorn_max_iters = 1000;
    std::size_t novel_sample_points = 4096;
    std::size_t kmeans_restarts = 10;
    bool gcn_argmin = false;

    bool use_crp = true;
    bool use_crg = true;
    bool use_gcpl = true;

    std::uint64_t seed = 0;
    std::string output_dir = "out";

    void set_row(Row r) {
        use_crp = r != Row::Baseline;
        use_crg = r == Row::CrpCrg || r == Row::Full;
        use_gcpl = r == Row::Full;
    }

    /// Row name for the four canonical flag combinations; "custom" otherwise.
    std::string row_name() const {
        for (Row r : kAllRows) {
            RunConfig c = *this;
            c.set_row(r);
            if (c.use_crp == use_crp && c.use_crg == use_crg && c.use_gcpl == use_gcpl) return to_string(r);
        }
        return "custom";
    }

    SceneSpec dataset_spec() const {
        SceneSpec s = scene;
        s.seed = seed;
        return s;
    }

    void validate() const {
        dataset_spec().validate();
        if (train_scenes < 1 || test_scenes < 1) throw ParameterError("config: scene counts must be >= 1");
        if (!(tau > 0.0)) throw ParameterError("config: hyper.tau must be > 0");
        if (!(lambda > 0.0)) throw ParameterError("config: hyper.lambda must be > 0");
        if (!(lambda_adv >= 0.0)) throw ParameterError("config: hyper.lambda_adv must be >= 0");
        if (!(theta_init > 0.0 && theta_init < 1.0)) throw ParameterError("config: hyper.theta must be in (0, 1)");
        if (gcn_layers < 1) throw ParameterError("config: hyper.gcn_layers must be >= 1");
        if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) throw ParameterError("config: hyper.leaky_slope must be in (0, 1)");
        if (!(lr > 0.0)) throw ParameterError("config: hyper.lr must be > 0");
        if (!(lr_floor > 0.0 && lr_floor <= lr)) throw ParameterError("config: hyper.lr_floor must be in (0, lr]");
        if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0))
            throw ParameterError("config: hyper.lr_decay_factor must be in (0, 1]");
        if (epochs < 1) throw ParameterError("config: hyper.epochs must be >= 1");
        if (!(sinkhorn_epsilon > 0.0)) throw ParameterError("config: hyper.sinkhorn_epsilon must be > 0");
        if (hidden < feature_dim) throw ParameterError("config: train.hidden must be >= train.feature_dim");
        if (feature_dim < 1 || adversary_hidden < 1 || batch_points < 1)
            throw ParameterError("config: network sizes must be >= 1");
        if (!(adversary_lr >= 0.0)) throw ParameterError("config: train.adversary_lr must be >= 0");
        if (!(weight_decay >= 0.0)) throw ParameterError("config: train.weight_decay must be >= 0");
        if (!(head_scale > 0.0)) throw ParameterError("config: train.head_scale must be > 0");
        if (!(prototype_loss_weight >= 0.0)) throw ParameterError("config: train.prototype_loss_weight must be >= 0");
        if (!(graph_lr > 0.0)) throw ParameterError("config: graph.learning_rate must be > 0");
        if (!(surrogate_eps > 0.0)) throw ParameterError("config: graph.surrogate_eps must be > 0");
        if (sinkhorn_max_iters < 1) throw ParameterError("config: label.sinkhorn_max_iters must be >= 1");
        if (novel_sample_points < scene.num_novel)
            throw ParameterError("config: label.novel_sample_points must be >= number of novel classes");
        if (kmeans_restarts < 1) throw ParameterError("config: label.kmeans_restarts must be >= 1");
        if (use_gcpl && !use_crg) throw ParameterError("config: ablation.use_gcpl requires ablation.use_crg");
        if (output_dir.empty()) throw ParameterError("config: output_dir must not be empty");
    }

    CrpConfig crp_config() const {
        CrpConfig c;
        c.hidden = hidden;
        c.adversary_hidden = adversary_hidden;
        c.feature_dim = feature_dim;
        c.leaky_slope = leaky_slope;
        c.head_scale = head_scale;
        c.epochs = epochs;
        c.batch_points = batch_points;
        c.lr = {lr, lr_floor, lr_decay_every, lr_decay_factor};
        c.weight_decay = weight_decay;
        c.lambda_adv = use_crp ? lambda_adv : 0.0;
        c.adversary_enabled = use_crp;
        c.adversary_steps = adversary_steps;
        c.adversary_lr = adversary_lr;
        c.use_prototype_loss = use_crp;
        c.lambda_proto = lambda;
        c.prototype_loss_weight = prototype_loss_weight;
        c.prototype_temperature = tau;
        c.seed = seed;
        return c;
    }

    GraphConfig graph_config() const {
        GraphConfig g;
        g.tau = tau;
        g.theta_init = theta_init;
        g.surrogate_eps = surrogate_eps;
        g.learning_rate = graph_lr;
        g.steps = graph_steps;
        return g;
    }

    GcnParams gcn_params() const { return {gcn_layers, leaky_slope}; }
};

namespace detail {

struct ConfigField {
    std::string key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

inline double parse_real(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(x))
        throw ParameterError("config: " + key + ": '" + v + "' is not a finite number");
    return x;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    std::uint64_t x = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (v.empty() || ec != std::errc() || ptr != v.data() + v.size())
        throw ParameterError("config: " + key + ": '" + v + "' is not a non-negative integer");
    return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ParameterError("config: " + key + ": '" + v + "' is not a boolean");
}

template <class T, class Access>
ConfigField field(std::string key, Access access) {
    ConfigField f;
    f.key = key;
    f.set = [key, access](RunConfig& c, const std::string& v) {
        T& ref = access(c);
        if constexpr (std::is_same_v<T, double>) ref = parse_real(key, v);
        else if constexpr (std::is_same_v<T, bool>) ref = parse_bool(key, v);
        else if constexpr (std::is_same_v<T, std::string>) ref = v;
        else ref = static_cast<T>(parse_uint(key, v));
    };
    f.get = [access](const RunConfig& c) -> std::string {
        const T& ref = access(const_cast<RunConfig&>(c));
        if constexpr (std::is_same_v<T, double>) return exact_double(ref);
        else if constexpr (std::is_same_v<T, bool>) return ref ? "true" : "false";
        else if constexpr (std::is_same_v<T, std::string>) return ref;
        else return std::to_string(ref);
    };
    return f;
}

#define CNCD_FIELD(T, key, expr) field<T>(key, [](RunConfig& c) -> T& { return c.expr; })

inline const std::vector<ConfigField>& config_fields() {
    using std::size_t;
    static const std::vector<ConfigField> fields = {
        CNCD_FIELD(std::uint64_t, "seed", seed),
        CNCD_FIELD(std::string, "output_dir", output_dir),
        CNCD_FIELD(size_t, "scene.num_base", scene.num_base),
        CNCD_FIELD(size_t, "scene.num_novel", scene.num_novel),
        CNCD_FIELD(size_t, "scene.points", scene.points),
        CNCD_FIELD(size_t, "scene.dim", scene.dim),
        CNCD_FIELD(size_t, "scene.confounded_channels", scene.confounded_channels),
        CNCD_FIELD(double, "scene.confounder_strength", scene.confounder_strength),
        CNCD_FIELD(double, "scene.confounder_flip_rate", scene.confounder_flip_rate),
        CNCD_FIELD(double, "scene.signature_scale", scene.signature_scale),
        CNCD_FIELD(double, "scene.noise_sigma", scene.noise_sigma),
        CNCD_FIELD(double, "scene.shortcut_common", scene.shortcut_common),
        CNCD_FIELD(size_t, "data.train_scenes", train_scenes),
        CNCD_FIELD(size_t, "data.test_scenes", test_scenes),
        CNCD_FIELD(double, "hyper.tau", tau),
        CNCD_FIELD(double, "hyper.lambda", lambda),
        CNCD_FIELD(double, "hyper.lambda_adv", lambda_adv),
        CNCD_FIELD(double, "hyper.theta", theta_init),
        CNCD_FIELD(size_t, "hyper.gcn_layers", gcn_layers),
        CNCD_FIELD(double, "hyper.leaky_slope", leaky_slope),
        CNCD_FIELD(double, "hyper.lr", lr),
        CNCD_FIELD(double, "hyper.lr_floor", lr_floor),
        CNCD_FIELD(size_t, "hyper.lr_decay_every", lr_decay_every),
        CNCD_FIELD(double, "hyper.lr_decay_factor", lr_decay_factor),
        CNCD_FIELD(size_t, "hyper.epochs", epochs),
        CNCD_FIELD(double, "hyper.sinkhorn_epsilon", sinkhorn_epsilon),
        CNCD_FIELD(size_t, "train.hidden", hidden),
        CNCD_FIELD(size_t, "train.feature_dim", feature_dim),
        CNCD_FIELD(size_t, "train.adversary_hidden", adversary_hidden),
        CNCD_FIELD(size_t, "train.batch_points", batch_points),
        CNCD_FIELD(size_t, "train.adversary_steps", adversary_steps),
        CNCD_FIELD(double, "train.adversary_lr", adversary_lr),
        CNCD_FIELD(double, "train.weight_decay", weight_decay),
        CNCD_FIELD(double, "train.head_scale", head_scale),
        CNCD_FIELD(double, "train.prototype_loss_weight", prototype_loss_weight),
        CNCD_FIELD(size_t, "graph.steps", graph_steps),
        CNCD_FIELD(double, "graph.learning_rate", graph_lr),
        CNCD_FIELD(double, "graph.surrogate_eps", surrogate_eps),
        CNCD_FIELD(size_t, "label.sinkhorn_max_iters", sinkhorn_max_iters),
        CNCD_FIELD(size_t, "label.novel_sample_points", novel_sample_points),
        CNCD_FIELD(size_t, "label.kmeans_restarts", kmeans_restarts),
        CNCD_FIELD(bool, "label.gcn_argmin", gcn_argmin),
        CNCD_FIELD(bool, "ablation.use_crp", use_crp),
        CNCD_FIELD(bool, "ablation.use_crg", use_crg),
        CNCD_FIELD(bool, "ablation.use_gcpl", use_gcpl),
    };
    return fields;
}

#undef CNCD_FIELD

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Sets one key; throws ParameterError for unknown keys or malformed values.
inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& f : detail::config_fields())
        if (f.key == key) return f.set(cfg, value);
    throw ParameterError("config: unknown key '" + key + "'");
}

/// Applies `text` on top of `base`. Malformed lines raise ParseError with their byte offset.
inline RunConfig parse_config(const std::string& text, RunConfig base = {}) {
    std::size_t offset = 0;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const std::size_t line_start = offset;
        offset += line.size() + 1;
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ParseError("config: expected key = value", line_start);
        const std::string key = detail::trim(t.substr(0, eq));
        const std::string value = detail::trim(t.substr(eq + 1));
        if (key.empty()) throw ParseError("config: empty key", line_start);
        try {
            set_config_value(base, key, value);
        } catch (const ParameterError& e) {
            throw ParseError(e.what(), line_start);
        }
    }
    return base;
}

/// Every key in a fixed order; parse_config(format_config(c)) == c for all exposed fields.
inline std::string format_config(const RunConfig& cfg, bool include_output_dir = true) {
    std::ostringstream os;
    for (const auto& f : detail::config_fields()) {
        if (!include_output_dir && f.key == "output_dir") continue;
        os << f.key << " = " << f.get(cfg) << '\n';
    }
    return os.str();
}

/// Stable digest of everything that affects results (the output directory does not).
inline std::string config_hash(const RunConfig& cfg) {
    return hex64(fnv1a64(format_config(cfg, false) + cfg.dataset_spec().canonical()));
}

}  // namespace cncd
