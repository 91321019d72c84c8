#pragma once

// End-to-end runs: dataset → representation → novel prototypes → (graph) →
// pseudo-labels → evaluation, plus the four-row ablation suite.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cncd/baselines/labelers.hpp"
#include "cncd/core/log.hpp"
#include "cncd/crg/graph.hpp"
#include "cncd/crg/kmeans.hpp"
#include "cncd/crp/trainer.hpp"
#include "cncd/eval/metrics.hpp"
#include "cncd/gcn/labeler.hpp"
#include "cncd/pipeline/config.hpp"
#include "cncd/pipeline/serialize.hpp"
#include "cncd/scene/scene.hpp"

namespace cncd {

struct Dataset {
    std::vector<PointScene> train;
    std::vector<PointScene> test;
};

inline Dataset build_dataset(const RunConfig& cfg) {
    std::vector<PointScene> all = generate_dataset(cfg.dataset_spec(), cfg.train_scenes, cfg.test_scenes);
    Dataset d;
    for (auto& s : all) (s.split == Split::Train ? d.train : d.test).push_back(std::move(s));
    return d;
}

/// Base-point sample used for prototypes and self-checks; identical to the one fit_crp draws.
inline PointBatch base_sample(const RunConfig& cfg, const Dataset& data) {
    Rng rng(derive_seed(cfg.seed, 4));
    return subsample(collect_base_points(data.train), CrpConfig{}.prototype_sample_points, rng);
}

/// Trains the extractor. Without CRP this is a plain classifier (no adversary, no
/// matching loss) whose base prototypes are k-means centroids of its features.
inline CrpResult fit_representation(const RunConfig& cfg, const Dataset& data) {
    CrpResult res = fit_crp(data.train, cfg.crp_config());
    if (!cfg.use_crp) {
        const Matrix z = features(res.extractor, base_sample(cfg, data).x);
        const KMeansResult km = kmeans(z, cfg.scene.num_base, derive_seed(cfg.seed, 31), 100, cfg.kmeans_restarts);
        res.prototypes = PrototypeSet{km.centroids.prototypes, 0};
        res.prototypes_converged = true;
        res.prototype_iterations = km.iterations;
    }
    return res;
}

/// k-means over features of a sample of unlabeled train points.
inline NovelPrototypeSet discover_novel(const RunConfig& cfg, const ExtractorParams& extractor, const Dataset& data) {
    Rng rng(derive_seed(cfg.seed, 21));
    const PointBatch sample = subsample(collect_novel_points(data.train), cfg.novel_sample_points, rng);
    const Matrix z = features(extractor, sample.x);
    return kmeans(z, cfg.scene.num_novel, derive_seed(cfg.seed, 22), 100, cfg.kmeans_restarts).centroids;
}

struct SelfCheck {
    std::string name;
    bool passed = false;
    double value = 0.0;  // worst observed deviation
};

struct MetricsReport {
    std::string row;
    std::uint64_t seed = 0;
    std::string config_hash;
    IoUReport iou;
    std::vector<LossReport> crp_trace;
    std::vector<GraphTracePoint> graph_trace;
    std::vector<SelfCheck> checks;
    std::vector<int> prototype_labels;  // ŷ per novel prototype when graph labels are used
    std::optional<double> theta;
    std::size_t pruned_edges = 0;
    std::size_t prototype_iterations = 0;
    bool prototypes_converged = false;
    double wall_time = 0.0;

    bool checks_passed() const {
        for (const auto& c : checks)
            if (!c.passed) return false;
        return true;
    }
};

/// Everything one row produces before it is written to disk.
struct RunArtifacts {
    MetricsReport report;
    Checkpoint checkpoint;
    std::optional<GraphFit> graph;
    std::vector<SceneLabels> labels;
};

namespace detail {

inline void check_prototype_normalization(const Matrix& z, const PrototypeSet& c, double tau,
                                          std::vector<SelfCheck>& out) {
    const SoftAssignment w = similarity_weights(z, c, tau);
    double row_err = 0.0;
    for (std::size_t r = 0; r < w.weights.rows(); ++r) {
        double s = 0.0;
        for (double v : w.weights.row(r)) s += v;
        row_err = std::max(row_err, std::abs(s - 1.0));
    }
    out.push_back({"similarity_rows_sum_to_one", row_err <= 1e-9, row_err});

    const PrototypeSet next = update_prototypes(z, c, w);
    double hull = 0.0;
    for (std::size_t k = 0; k < z.cols(); ++k) {
        double lo = z(0, k), hi = z(0, k);
        for (std::size_t r = 1; r < z.rows(); ++r) {
            lo = std::min(lo, z(r, k));
            hi = std::max(hi, z(r, k));
        }
        for (std::size_t i = 0; i < next.count(); ++i)
            hull = std::max({hull, lo - next.prototypes(i, k), next.prototypes(i, k) - hi});
    }
    out.push_back({"prototype_convex_hull", hull <= 1e-9, std::max(hull, 0.0)});
}

inline double adjacency_column_error(const CausalGraph& g) {
    double err = 0.0;
    for (std::size_t j = 0; j < g.num_novel(); ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < g.num_base(); ++i) s += g.adjacency(i, j);
        err = std::max(err, std::abs(s - 1.0));
    }
    return err;
}

inline double max_softmax(std::span<const double> sims, double tau) {
    const Vector p = softmax(sims, tau);
    return *std::max_element(p.begin(), p.end());
}

}  // namespace detail

/// One ablation row on an already trained representation and novel prototype set.
inline RunArtifacts run_row(const RunConfig& cfg, const Dataset& data, const CrpResult& rep,
                            const NovelPrototypeSet& novel) {
    cfg.validate();
    RunArtifacts out;
    MetricsReport& report = out.report;
    report.row = cfg.row_name();
    report.seed = cfg.seed;
    report.config_hash = config_hash(cfg);
    report.crp_trace = rep.trace;
    report.prototype_iterations = rep.prototype_iterations;
    report.prototypes_converged = rep.prototypes_converged;

    const Matrix z_base = features(rep.extractor, base_sample(cfg, data).x);
    detail::check_prototype_normalization(z_base, rep.prototypes, cfg.tau, report.checks);

    std::optional<Matrix> n_final;
    if (cfg.use_crg) {
        out.graph = fit_graph(normalize_rows(rep.prototypes.prototypes), normalize_rows(novel.prototypes),
                              cfg.graph_config());
        const CausalGraph& g = out.graph->graph;
        report.graph_trace = out.graph->trace;
        report.theta = g.theta;
        for (auto m : g.edge_mask) report.pruned_edges += m ? 0 : 1;
        const double col = detail::adjacency_column_error(g);
        report.checks.push_back({"adjacency_columns_sum_to_one", col <= 1e-9, col});
        if (cfg.use_gcpl) {
            n_final = propagate(g, g.base_nodes, g.novel_nodes, cfg.gcn_params());
            report.prototype_labels = assign_pseudo_labels(*n_final, g.base_nodes, {}, cfg.gcn_argmin).prototype_labels;
        }
    }

    double marginal = 0.0;
    bool used_sinkhorn = false;
    std::vector<ScenePredictions> preds;
    for (const auto& sc : data.test) {
        const Matrix z = features(rep.extractor, sc.attrs);
        const std::vector<int> base_pred = predict_classes(rep.extractor, z);
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < sc.size(); ++i)
            if (sc.is_novel(i)) idx.push_back(i);

        SceneLabels lab;
        lab.scene_seed = sc.seed;
        lab.base_prediction = base_pred;
        lab.point_index = idx;
        if (!idx.empty()) {
            const Matrix zn = select_rows(z, idx);
            if (!cfg.use_crg) {
                const Matrix sims = cosine_matrix(zn, novel.prototypes);
                lab.pseudo_label = nearest_prototype_labels(zn, novel.prototypes);
                for (std::size_t t = 0; t < idx.size(); ++t) lab.confidence.push_back(detail::max_softmax(sims.row(t), cfg.tau));
            } else {
                const SinkhornResult sk = sinkhorn_labels(zn, novel.prototypes, cfg.sinkhorn_epsilon, cfg.sinkhorn_max_iters);
                used_sinkhorn = true;
                marginal = std::max(marginal, sk.transport.marginal_error);
                if (!sk.transport.converged)
                    log::warn("sinkhorn did not converge on scene ", sc.seed, " (marginal error ",
                              sk.transport.marginal_error, ")");
                if (n_final) {
                    // Points keep their transport assignment; the prototype's graph label replaces its id.
                    const PseudoLabeling pl =
                        assign_pseudo_labels(*n_final, out.graph->graph.base_nodes, sk.labels, cfg.gcn_argmin);
                    lab.pseudo_label = pl.point_labels;
                    lab.confidence = pl.confidence;
                } else {
                    lab.pseudo_label = sk.labels;
                    const double P = static_cast<double>(idx.size());
                    for (std::size_t t = 0; t < idx.size(); ++t)
                        lab.confidence.push_back(P * sk.transport.plan(t, static_cast<std::size_t>(sk.labels[t])));
                }
            }
        }
        ScenePredictions p{base_pred, std::vector<int>(sc.size(), -1)};
        for (std::size_t t = 0; t < idx.size(); ++t) p.novel[idx[t]] = lab.pseudo_label[t];
        preds.push_back(std::move(p));
        out.labels.push_back(std::move(lab));
    }
    if (used_sinkhorn) report.checks.push_back({"sinkhorn_marginals", marginal < 1e-6, marginal});

    report.iou = evaluate(data.test, preds, cfg.scene.num_base, cfg.scene.num_novel);
    const bool finite = std::isfinite(report.iou.novel_miou) && std::isfinite(report.iou.known_miou);
    report.checks.push_back({"finite_metrics", finite, 0.0});

    out.checkpoint.extractor = rep.extractor;
    out.checkpoint.adversary = rep.adversary;
    out.checkpoint.prototypes = rep.prototypes;
    out.checkpoint.novel_prototypes = novel;
    if (out.graph) {
        out.checkpoint.graph = out.graph->graph;
        out.checkpoint.attention = out.graph->attention;
    }
    out.checkpoint.epoch = rep.trace.size();
    out.checkpoint.config_hash = report.config_hash;
    return out;
}

// ---- output documents ----

inline std::string metrics_csv(const IoUReport& r, const std::string& split = "test") {
    std::ostringstream os;
    os << "split,class,iou,group\n";
    for (const auto& c : r.classes) os << split << ',' << c.name << ',' << exact_double(c.iou) << ',' << c.group << '\n';
    return os.str();
}

/// Summary document. Holds no timing so repeated runs stay byte-identical.
inline io::json summary_json(const MetricsReport& r) {
    io::json checks = io::json::object();
    for (const auto& c : r.checks) checks[c.name] = {{"passed", c.passed}, {"value", c.value}};
    io::json j{{"format", "cncd.summary/1"},
               {"row", r.row},
               {"seed", r.seed},
               {"config_hash", r.config_hash},
               {"novel_miou", r.iou.novel_miou},
               {"known_miou", r.iou.known_miou},
               {"all_miou", r.iou.all_miou},
               {"cluster_to_class", r.iou.cluster_to_class},
               {"prototype_iterations", r.prototype_iterations},
               {"prototypes_converged", r.prototypes_converged},
               {"self_checks", std::move(checks)},
               {"self_checks_passed", r.checks_passed()}};
    if (r.theta) {
        j["theta"] = *r.theta;
        j["pruned_edges"] = r.pruned_edges;
    }
    if (!r.prototype_labels.empty()) j["prototype_pseudo_labels"] = r.prototype_labels;
    return j;
}

inline std::string crp_trace_csv(const std::vector<LossReport>& trace) {
    std::ostringstream os;
    os << "epoch,l_cls,l_adv,l_pro,l_total\n";
    for (const auto& t : trace)
        os << t.epoch << ',' << exact_double(t.l_cls) << ',' << exact_double(t.l_adv) << ',' << exact_double(t.l_pro)
           << ',' << exact_double(t.l_total) << '\n';
    return os.str();
}

inline std::string graph_trace_csv(const std::vector<GraphTracePoint>& trace) {
    std::ostringstream os;
    os << "step,l_direction,l_pruning,theta\n";
    for (const auto& t : trace)
        os << t.step << ',' << exact_double(t.l_direction) << ',' << exact_double(t.l_pruning) << ','
           << exact_double(t.theta) << '\n';
    return os.str();
}

inline std::string label_file_name(std::size_t test_index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "test_%03zu.json", test_index);
    return buf;
}

/// config.txt, metrics.csv, summary.json, checkpoint.json, labels/, loss traces,
/// graph.json (graph rows) and timing.json.
inline void write_run(const std::filesystem::path& dir, const RunConfig& cfg, const RunArtifacts& a) {
    io::write_text_file(dir / "config.txt", format_config(cfg));
    io::write_text_file(dir / "metrics.csv", metrics_csv(a.report.iou));
    io::write_text_file(dir / "summary.json", summary_json(a.report).dump(2) + "\n");
    save_checkpoint(a.checkpoint, dir / "checkpoint.json");
    io::write_text_file(dir / "trace_crp.csv", crp_trace_csv(a.report.crp_trace));
    if (a.graph) {
        io::write_text_file(dir / "graph.json", to_json(a.graph->graph).dump(1) + "\n");
        io::write_text_file(dir / "trace_graph.csv", graph_trace_csv(a.report.graph_trace));
    }
    for (std::size_t s = 0; s < a.labels.size(); ++s)
        io::write_text_file(dir / "labels" / label_file_name(s), to_json(a.labels[s]).dump() + "\n");
    io::write_text_file(dir / "timing.json", io::json{{"wall_time_seconds", a.report.wall_time}}.dump() + "\n");
}

/// Full pipeline for one config; writes to cfg.output_dir when `write` is set.
inline RunArtifacts run_pipeline(const RunConfig& cfg, bool write = true) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    log::info("run ", cfg.row_name(), " seed ", cfg.seed, " config ", config_hash(cfg));
    const Dataset data = build_dataset(cfg);
    const CrpResult rep = fit_representation(cfg, data);
    const NovelPrototypeSet novel = discover_novel(cfg, rep.extractor, data);
    RunArtifacts a = run_row(cfg, data, rep, novel);
    a.report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (write) write_run(cfg.output_dir, cfg, a);
    log::info("novel mIoU ", a.report.iou.novel_miou, " known mIoU ", a.report.iou.known_miou);
    return a;
}

/// Re-scores the label files of a finished run against regenerated test scenes.
inline IoUReport rescore_run(const std::filesystem::path& run_dir, const RunConfig& cfg) {
    const Dataset data = build_dataset(cfg);
    std::vector<ScenePredictions> preds;
    for (std::size_t s = 0; s < data.test.size(); ++s) {
        const auto path = run_dir / "labels" / label_file_name(s);
        const SceneLabels lab = labels_from_json(io::parse_json(io::read_text_file(path)));
        const PointScene& sc = data.test[s];
        if (lab.scene_seed != sc.seed) throw DataError(path.string() + ": labels belong to a different scene");
        if (lab.base_prediction.size() != sc.size()) throw DataError(path.string() + ": wrong number of points");
        if (lab.point_index.size() != lab.pseudo_label.size()) throw DataError(path.string() + ": ragged labels");
        ScenePredictions p{lab.base_prediction, std::vector<int>(sc.size(), -1)};
        for (std::size_t t = 0; t < lab.point_index.size(); ++t) {
            if (lab.point_index[t] >= sc.size()) throw DataError(path.string() + ": point index out of range");
            p.novel[lab.point_index[t]] = lab.pseudo_label[t];
        }
        preds.push_back(std::move(p));
    }
    return evaluate(data.test, preds, cfg.scene.num_base, cfg.scene.num_novel);
}

// ---- ablation suite ----

struct AblationCell {
    std::uint64_t seed = 0;
    Row row = Row::Baseline;
    std::optional<MetricsReport> report;
    std::string error;  // set when the cell failed
};

struct AblationRowSummary {
    Row row = Row::Baseline;
    double mean_novel_miou = 0.0;
    double stddev_novel_miou = 0.0;
    std::size_t completed = 0;
    std::size_t failed = 0;
};

struct AblationResult {
    std::vector<AblationCell> cells;
    std::vector<AblationRowSummary> rows;
};

inline AblationRowSummary summarize_row(Row row, const std::vector<AblationCell>& cells) {
    AblationRowSummary s;
    s.row = row;
    std::vector<double> v;
    for (const auto& c : cells) {
        if (c.row != row) continue;
        if (c.report) v.push_back(c.report->iou.novel_miou);
        else ++s.failed;
    }
    s.completed = v.size();
    s.mean_novel_miou = mean_of(v);
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - s.mean_novel_miou) * (x - s.mean_novel_miou);
        s.stddev_novel_miou = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return s;
}

inline std::string ablation_csv(const AblationResult& r) {
    std::ostringstream os;
    os << "row,mean_novel_miou,stddev_novel_miou,completed,failed\n";
    for (const auto& s : r.rows)
        os << to_string(s.row) << ',' << exact_double(s.mean_novel_miou) << ',' << exact_double(s.stddev_novel_miou)
           << ',' << s.completed << ',' << s.failed << '\n';
    return os.str();
}

inline std::string ablation_runs_csv(const AblationResult& r) {
    std::ostringstream os;
    os << "seed,row,novel_miou,known_miou,all_miou,status\n";
    for (const auto& c : r.cells) {
        os << c.seed << ',' << to_string(c.row) << ',';
        if (c.report)
            os << exact_double(c.report->iou.novel_miou) << ',' << exact_double(c.report->iou.known_miou) << ','
               << exact_double(c.report->iou.all_miou) << ",ok\n";
        else
            os << ",,,failed\n";
    }
    return os.str();
}

/// Runs `rows` for every seed. Rows that share a representation (all CRP rows of one
/// seed) reuse a single trained extractor and novel prototype set; a failing cell is
/// recorded and the suite moves on. With `write`, each cell goes to
/// <output_dir>/seed_<s>/<row>/ and the aggregate tables to <output_dir>.
inline AblationResult run_ablation_suite(const RunConfig& base, std::span<const std::uint64_t> seeds, bool write = true,
                                         std::span<const Row> rows = kAllRows) {
    if (seeds.size() < 2) throw UsageError("run_ablation_suite: at least 2 seeds required");
    AblationResult res;
    const std::filesystem::path root = base.output_dir;
    for (std::uint64_t seed : seeds) {
        RunConfig seed_cfg = base;
        seed_cfg.seed = seed;
        std::optional<Dataset> data;
        std::map<bool, std::pair<CrpResult, NovelPrototypeSet>> cache;  // keyed by use_crp
        for (Row row : rows) {
            AblationCell cell{seed, row, std::nullopt, {}};
            try {
                const auto t0 = std::chrono::steady_clock::now();
                RunConfig cfg = seed_cfg;
                cfg.set_row(row);
                cfg.output_dir = (root / ("seed_" + std::to_string(seed)) / to_string(row)).string();
                cfg.validate();
                if (!data) data = build_dataset(cfg);
                auto it = cache.find(cfg.use_crp);
                if (it == cache.end()) {
                    CrpResult rep = fit_representation(cfg, *data);
                    NovelPrototypeSet novel = discover_novel(cfg, rep.extractor, *data);
                    it = cache.emplace(cfg.use_crp, std::make_pair(std::move(rep), std::move(novel))).first;
                }
                RunArtifacts a = run_row(cfg, *data, it->second.first, it->second.second);
                a.report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                if (write) write_run(cfg.output_dir, cfg, a);
                log::info("ablate seed ", seed, " ", to_string(row), " novel mIoU ", a.report.iou.novel_miou);
                cell.report = std::move(a.report);
            } catch (const std::exception& e) {
                cell.error = e.what();
                log::error("ablate seed ", seed, " ", to_string(row), ": ", e.what());
            }
            res.cells.push_back(std::move(cell));
        }
    }
    for (Row row : rows) res.rows.push_back(summarize_row(row, res.cells));
    if (write) {
        io::write_text_file(root / "ablation.csv", ablation_csv(res));
        io::write_text_file(root / "ablation_runs.csv", ablation_runs_csv(res));
    }
    return res;
}

// ---- inspection ----

inline std::string inspect_checkpoint(const Checkpoint& c) {
    std::ostringstream os;
    auto norm = [](std::span<const double> r) {
        double s = 0.0;
        for (double v : r) s += v * v;
        return std::sqrt(s);
    };
    os << "config_hash: " << c.config_hash << "\nepoch: " << c.epoch << '\n';
    const Matrix& B = c.prototypes.prototypes;
    const Matrix& N = c.novel_prototypes.prototypes;
    os << "base prototypes: " << B.rows() << '\n';
    for (std::size_t i = 0; i < B.rows(); ++i) os << "  base_" << i << " norm " << exact_double(norm(B.row(i))) << '\n';
    os << "novel prototypes: " << N.rows() << '\n';
    for (std::size_t j = 0; j < N.rows(); ++j) os << "  novel_" << j << " norm " << exact_double(norm(N.row(j))) << '\n';

    if (c.graph) {
        const CausalGraph& g = *c.graph;
        os << "theta: " << exact_double(g.theta) << '\n';
        os << "adjacency (base x novel, * = pruned):\n";
        for (std::size_t i = 0; i < g.num_base(); ++i) {
            os << "  base_" << i << ':';
            for (std::size_t j = 0; j < g.num_novel(); ++j)
                os << ' ' << exact_double(g.adjacency(i, j)) << (g.active(i, j) ? "" : "*");
            os << '\n';
        }
        os << "pruned edges:\n";
        std::size_t pruned = 0;
        for (std::size_t i = 0; i < g.num_base(); ++i)
            for (std::size_t j = 0; j < g.num_novel(); ++j)
                if (!g.active(i, j)) {
                    os << "  base_" << i << " -> novel_" << j << " weight " << exact_double(g.adjacency(i, j)) << '\n';
                    ++pruned;
                }
        if (pruned == 0) os << "  (none)\n";
        for (std::size_t j = 0; j < g.num_novel(); ++j)
            if (g.fallback[j]) os << "fallback edge kept for novel_" << j << '\n';
    } else {
        os << "graph: none\n";
    }

    if (B.rows() + N.rows() > 0 && B.cols() == N.cols()) {
        std::vector<const Matrix*> parts{&B, &N};
        const Matrix all = vstack(parts);
        const Matrix cos = cosine_matrix(all, all);
        os << "prototype cosine matrix (base then novel):\n";
        char buf[32];
        for (std::size_t r = 0; r < cos.rows(); ++r) {
            os << ' ';
            for (std::size_t q = 0; q < cos.cols(); ++q) {
                std::snprintf(buf, sizeof buf, " %7.4f", cos(r, q));
                os << buf;
            }
            os << '\n';
        }
    }
    return os.str();
}

}  // namespace cncd
