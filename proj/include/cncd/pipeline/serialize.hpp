#pragma once

// JSON documents written by a run: checkpoint, graph dump, pseudo-label export.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cncd/core/errors.hpp"
#include "cncd/crg/graph.hpp"
#include "cncd/crg/kmeans.hpp"
#include "cncd/crp/networks.hpp"
#include "cncd/crp/prototypes.hpp"
#include "cncd/io/json_io.hpp"

namespace cncd {

inline constexpr const char* kCheckpointFormat = "cncd.checkpoint/1";
inline constexpr const char* kGraphFormat = "cncd.graph/1";
inline constexpr const char* kLabelsFormat = "cncd.labels/1";

namespace detail {

inline io::json tensors_to_json(const std::vector<Matrix>& ts) {
    io::json arr = io::json::array();
    for (const auto& t : ts) arr.push_back(io::to_json(t));
    return arr;
}

inline std::vector<Matrix> tensors_from_json(const io::json& j, std::size_t expected) {
    std::vector<Matrix> out;
    for (const auto& t : j) out.push_back(io::matrix_from_json(t));
    if (out.size() != expected)
        throw DataError("expected " + std::to_string(expected) + " tensors, found " + std::to_string(out.size()));
    return out;
}

/// Wraps nlohmann access errors as DataError so callers see one error family.
template <class F>
auto guarded(const char* what, F&& f) {
    try {
        return f();
    } catch (const io::json::exception& e) {
        throw DataError(std::string(what) + ": " + e.what());
    }
}

}  // namespace detail

inline io::json to_json(const ExtractorParams& e) {
    return {{"tensors", detail::tensors_to_json(e.tensors)},
            {"slope", e.slope},
            {"head_scale", e.head_scale},
            {"center", io::to_json(e.center)}};
}

inline ExtractorParams extractor_from_json(const io::json& j) {
    return detail::guarded("extractor", [&] {
        ExtractorParams e;
        e.tensors = detail::tensors_from_json(j.at("tensors"), ExtractorParams::Count);
        e.slope = j.at("slope").get<double>();
        e.head_scale = j.at("head_scale").get<double>();
        e.center = io::matrix_from_json(j.at("center"));
        return e;
    });
}

inline io::json to_json(const AdversaryParams& a) {
    return {{"tensors", detail::tensors_to_json(a.tensors)}, {"slope", a.slope}};
}

inline AdversaryParams adversary_from_json(const io::json& j) {
    return detail::guarded("adversary", [&] {
        AdversaryParams a;
        a.tensors = detail::tensors_from_json(j.at("tensors"), AdversaryParams::Count);
        a.slope = j.at("slope").get<double>();
        return a;
    });
}

inline io::json to_json(const AttentionParams& p) {
    return {{"query", io::to_json(p.query)}, {"key", io::to_json(p.key)}, {"tau", p.tau}};
}

inline AttentionParams attention_from_json(const io::json& j) {
    return detail::guarded("attention", [&] {
        AttentionParams p{io::matrix_from_json(j.at("query")), io::matrix_from_json(j.at("key")), j.at("tau").get<double>()};
        p.validate();
        return p;
    });
}

/// Graph dump: nodes, weights, θ, pruned mask, fallbacks and degrees.
inline io::json to_json(const CausalGraph& g) {
    return {{"format", kGraphFormat},
            {"base_nodes", io::to_json(g.base_nodes)},
            {"novel_nodes", io::to_json(g.novel_nodes)},
            {"adjacency", io::to_json(g.adjacency)},
            {"novel_weights", io::to_json(g.novel_weights)},
            {"theta", g.theta},
            {"edge_mask", g.edge_mask},
            {"fallback", g.fallback},
            {"base_degrees", g.base_degrees},
            {"novel_degrees", g.novel_degrees}};
}

inline CausalGraph graph_from_json(const io::json& j) {
    return detail::guarded("graph", [&] {
        if (j.at("format").get<std::string>() != kGraphFormat) throw DataError("graph: unsupported format");
        CausalGraph g;
        g.base_nodes = io::matrix_from_json(j.at("base_nodes"));
        g.novel_nodes = io::matrix_from_json(j.at("novel_nodes"));
        g.adjacency = io::matrix_from_json(j.at("adjacency"));
        g.novel_weights = io::matrix_from_json(j.at("novel_weights"));
        g.theta = j.at("theta").get<double>();
        g.edge_mask = j.at("edge_mask").get<std::vector<std::uint8_t>>();
        g.fallback = j.at("fallback").get<std::vector<std::uint8_t>>();
        g.base_degrees = j.at("base_degrees").get<std::vector<double>>();
        g.novel_degrees = j.at("novel_degrees").get<std::vector<double>>();
        const std::size_t M = g.num_base(), K = g.num_novel();
        if (g.edge_mask.size() != M * K || g.fallback.size() != K || g.base_degrees.size() != M ||
            g.novel_degrees.size() != K || g.base_nodes.rows() != M || g.novel_nodes.rows() != K ||
            g.novel_weights.rows() != K || g.novel_weights.cols() != K)
            throw DataError("graph: inconsistent sizes");
        return g;
    });
}

struct Checkpoint {
    ExtractorParams extractor;
    AdversaryParams adversary;
    PrototypeSet prototypes;
    NovelPrototypeSet novel_prototypes;
    std::optional<CausalGraph> graph;
    std::optional<AttentionParams> attention;
    std::size_t epoch = 0;
    std::string config_hash;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline io::json to_json(const Checkpoint& c) {
    io::json j{{"format", kCheckpointFormat},
               {"extractor", to_json(c.extractor)},
               {"adversary", to_json(c.adversary)},
               {"prototypes", {{"matrix", io::to_json(c.prototypes.prototypes)}, {"iteration", c.prototypes.iteration}}},
               {"novel_prototypes", io::to_json(c.novel_prototypes.prototypes)},
               {"graph", c.graph ? to_json(*c.graph) : io::json(nullptr)},
               {"attention", c.attention ? to_json(*c.attention) : io::json(nullptr)},
               {"epoch", c.epoch},
               {"config_hash", c.config_hash}};
    return j;
}

inline Checkpoint checkpoint_from_json(const io::json& j) {
    return detail::guarded("checkpoint", [&] {
        if (j.at("format").get<std::string>() != kCheckpointFormat) throw DataError("checkpoint: unsupported format");
        Checkpoint c;
        c.extractor = extractor_from_json(j.at("extractor"));
        c.adversary = adversary_from_json(j.at("adversary"));
        c.prototypes.prototypes = io::matrix_from_json(j.at("prototypes").at("matrix"));
        c.prototypes.iteration = j.at("prototypes").at("iteration").get<std::size_t>();
        c.novel_prototypes.prototypes = io::matrix_from_json(j.at("novel_prototypes"));
        if (!j.at("graph").is_null()) c.graph = graph_from_json(j.at("graph"));
        if (!j.at("attention").is_null()) c.attention = attention_from_json(j.at("attention"));
        c.epoch = j.at("epoch").get<std::size_t>();
        c.config_hash = j.at("config_hash").get<std::string>();
        return c;
    });
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
    io::write_text_file(path, to_json(c).dump(1) + "\n");
}

/// Loads a checkpoint. A non-empty `expected_hash` that differs from the stored one
/// is an error unless `force` is set.
inline Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_hash = {},
                                  bool force = false) {
    Checkpoint c = checkpoint_from_json(io::parse_json(io::read_text_file(path)));
    if (!expected_hash.empty() && c.config_hash != expected_hash && !force)
        throw DataError(path.string() + ": checkpoint config hash " + c.config_hash + " does not match " +
                        expected_hash + " (use force to load anyway)");
    return c;
}

/// Pseudo-labels of one scene. Base points carry the classifier prediction;
/// novel points carry their pseudo-label and its confidence.
struct SceneLabels {
    std::uint64_t scene_seed = 0;
    std::vector<std::size_t> point_index;  // novel points only
    std::vector<int> pseudo_label;
    std::vector<double> confidence;
    std::vector<int> base_prediction;  // one per point of the scene

    friend bool operator==(const SceneLabels&, const SceneLabels&) = default;
};

inline io::json to_json(const SceneLabels& s) {
    io::json pts = io::json::array();
    for (std::size_t t = 0; t < s.point_index.size(); ++t)
        pts.push_back({{"point_index", s.point_index[t]}, {"pseudo_label", s.pseudo_label[t]}, {"confidence", s.confidence[t]}});
    return {{"format", kLabelsFormat}, {"scene_seed", s.scene_seed}, {"novel", std::move(pts)}, {"base_prediction", s.base_prediction}};
}

inline SceneLabels labels_from_json(const io::json& j) {
    return detail::guarded("labels", [&] {
        if (j.at("format").get<std::string>() != kLabelsFormat) throw DataError("labels: unsupported format");
        SceneLabels s;
        s.scene_seed = j.at("scene_seed").get<std::uint64_t>();
        for (const auto& p : j.at("novel")) {
            s.point_index.push_back(p.at("point_index").get<std::size_t>());
            s.pseudo_label.push_back(p.at("pseudo_label").get<int>());
            s.confidence.push_back(p.at("confidence").get<double>());
        }
        s.base_prediction = j.at("base_prediction").get<std::vector<int>>();
        return s;
    });
}

}  // namespace cncd
