// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: cncd_acceptance <path to cncd CLI> [scratch dir]

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "cncd/baselines/labelers.hpp"
#include "cncd/core/gradcheck.hpp"
#include "cncd/crp/prototypes.hpp"
#include "cncd/crp/trainer.hpp"
#include "cncd/eval/hungarian.hpp"
#include "cncd/gcn/labeler.hpp"
#include "cncd/io/json_io.hpp"
#include "cncd/pipeline/pipeline.hpp"
#include "support/instances.hpp"
#include "support/oracles.hpp"

using namespace cncd;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool passed = false;
    std::string detail;
};

struct Criterion {
    int id;
    std::string name;
    double budget_seconds;
    std::function<Outcome()> run;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

Outcome gradient_suite() {
    const char* names[] = {"classification", "adversarial", "prototype matching", "direction", "soft pruning"};
    const auto families = fixtures::all_gradient_families();
    Rng rng(20240601);
    double worst = 0.0;
    std::string worst_family;
    for (std::size_t f = 0; f < families.size(); ++f)
        for (int t = 0; t < 50; ++t) {
            const fixtures::GradInstance inst = families[f](rng);
            const double e = max_relative_error(grad_check(inst.loss, inst.params, 1e-5));
            if (!(e <= worst)) {
                worst = e;
                worst_family = names[f];
            }
        }
    return {worst <= 1e-4, "5 families x 50 instances, worst relative error " + fmt("%.2e", worst) + " (" + worst_family + ")"};
}

Outcome assignment_oracle() {
    Rng rng(7);
    std::size_t mismatches = 0;
    auto trial = [&](std::size_t n) {
        Matrix cost(n, n);
        for (double& v : cost.data()) v = static_cast<double>(rng.index(1000)) - 500.0;
        if (hungarian_match(cost).total_cost != fixtures::brute_force_assignment(cost)) ++mismatches;
    };
    for (int t = 0; t < 100; ++t) trial(5);
    for (int t = 0; t < 20; ++t) trial(7);
    return {mismatches == 0, "120 integer cost matrices, " + std::to_string(mismatches) + " differ from exhaustive minimum"};
}

Outcome transport_marginals() {
    Rng rng(11);
    double worst = 0.0;
    bool all_converged = true;
    for (int t = 0; t < 20; ++t) {
        const Matrix z = fixtures::random_matrix(rng, 64, 8), n = fixtures::random_matrix(rng, 4, 8);
        const TransportPlan p = sinkhorn_labels(z, n, 0.05).transport;
        all_converged = all_converged && p.converged;
        for (std::size_t i = 0; i < 64; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < 4; ++j) s += p.plan(i, j);
            worst = std::max(worst, std::abs(s - 1.0 / 64.0));
        }
        for (std::size_t j = 0; j < 4; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < 64; ++i) s += p.plan(i, j);
            worst = std::max(worst, std::abs(s - 0.25));
        }
    }
    return {worst <= 1e-6 && all_converged, "20 instances 64x4, worst marginal deviation " + fmt("%.2e", worst)};
}

Outcome normalization_suite() {
    Rng rng(13);
    double row_err = 0.0, col_err = 0.0, hull_violation = 0.0;
    for (int t = 0; t < 1000; ++t) {
        const std::size_t P = 2 + rng.index(40), M = 1 + rng.index(6), d = 1 + rng.index(8);
        const Matrix z = fixtures::random_matrix(rng, P, d, rng.uniform(0.1, 5.0));
        const PrototypeSet c{fixtures::random_matrix(rng, M, d), 0};
        const double temperature = t % 2 == 0 ? 1.0 : rng.uniform(0.05, 2.0);
        const SoftAssignment w = similarity_weights(z, c, temperature);
        for (std::size_t p = 0; p < P; ++p) {
            double s = 0.0;
            for (std::size_t i = 0; i < M; ++i) s += w.weights(p, i);
            row_err = std::max(row_err, std::abs(s - 1.0));
        }
        const PrototypeSet next = update_prototypes(z, c, w);
        for (std::size_t k = 0; k < d; ++k) {
            double lo = z(0, k), hi = z(0, k);
            for (std::size_t p = 1; p < P; ++p) lo = std::min(lo, z(p, k)), hi = std::max(hi, z(p, k));
            for (std::size_t i = 0; i < M; ++i)
                hull_violation = std::max({hull_violation, lo - next.prototypes(i, k), next.prototypes(i, k) - hi});
        }

        const std::size_t K = 1 + rng.index(5), da = 1 + rng.index(6);
        const AttentionParams ap{fixtures::random_matrix(rng, d, da), fixtures::random_matrix(rng, d, da),
                                 rng.uniform(0.02, 2.0)};
        const CausalGraph g = build_adjacency(fixtures::random_matrix(rng, M, d), fixtures::random_matrix(rng, K, d), ap);
        for (std::size_t j = 0; j < K; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < M; ++i) s += g.adjacency(i, j);
            col_err = std::max(col_err, std::abs(s - 1.0));
        }
    }
    // hull bound holds up to the rounding of a convex combination
    const bool ok = row_err <= 1e-9 && col_err <= 1e-9 && hull_violation <= 1e-12;
    return {ok, "1000 trials, row error " + fmt("%.1e", row_err) + ", column error " + fmt("%.1e", col_err) +
                    ", hull violation " + fmt("%.1e", std::max(hull_violation, 0.0))};
}

Outcome structural_zeros() {
    Rng rng(17);
    double dir = 0.0, pru = 0.0, gcn = 0.0;
    for (int t = 0; t < 200; ++t) {
        const std::size_t M = 1 + rng.index(5), K = 1 + rng.index(5);
        std::vector<EdgeCandidate> forward;
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t j = 0; j < K; ++j) forward.push_back({i, M + j, rng.uniform(0.0, 1.0), M});
        dir = std::max(dir, direction_loss(forward));

        Matrix w(M, K);
        for (double& v : w.data()) v = rng.uniform(0.01, 1.0);
        const double lo = *std::min_element(w.data().begin(), w.data().end());
        pru = std::max({pru, pruning_loss(w, lo), pruning_loss(w, rng.uniform(0.0, lo))});

        const std::size_t d = 1 + rng.index(8);
        CausalGraph g;
        g.base_nodes = fixtures::random_matrix(rng, M, d);
        g.novel_nodes = Matrix(K, d);
        for (double& v : g.novel_nodes.data()) v = rng.uniform(0.0, 3.0);
        g.adjacency = Matrix(M, K);
        g.novel_weights = Matrix::identity(K);
        g.edge_mask.assign(M * K, 1);
        g.fallback.assign(K, 0);
        recompute_degrees(g);
        const Matrix out = propagate(g, g.base_nodes, g.novel_nodes);
        for (std::size_t q = 0; q < out.size(); ++q) gcn = std::max(gcn, std::abs(out.data()[q] - g.novel_nodes.data()[q]));
    }
    return {dir == 0.0 && pru == 0.0 && gcn == 0.0, "200 trials each, max direction loss " + fmt("%g", dir) +
                                                        ", max pruning loss " + fmt("%g", pru) + ", max GCN deviation " +
                                                        fmt("%g", gcn)};
}

Outcome deconfounding() {
    std::size_t good = 0;
    std::ostringstream per_seed;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        RunConfig cfg;
        cfg.seed = seed;
        const Dataset data = build_dataset(cfg);
        const PointBatch held = collect_base_points(data.test);
        PointBatch held_all = held;
        {
            const PointBatch nov = collect_novel_points(data.test);
            held_all.x = vstack({&held.x, &nov.x});
            held_all.tags.insert(held_all.tags.end(), nov.tags.begin(), nov.tags.end());
        }
        const double ones = static_cast<double>(std::count(held_all.tags.begin(), held_all.tags.end(), 1));
        const double chance = std::max(ones, static_cast<double>(held_all.tags.size()) - ones) /
                              static_cast<double>(held_all.tags.size());

        double acc[2];
        for (int variant = 0; variant < 2; ++variant) {
            RunConfig c = cfg;
            if (variant == 1) c.lambda_adv = 0.0;
            const CrpResult r = fit_crp(data.train, c.crp_config());
            acc[variant] = adversary_accuracy(r.adversary, features(r.extractor, held_all.x), held_all.tags);
        }
        const bool ok = std::abs(acc[0] - chance) <= 0.10 && acc[1] > chance + 0.25;
        good += ok ? 1 : 0;
        per_seed << ' ' << seed << ':' << fmt("%.3f/%.3f", acc[0], acc[1]) << (ok ? "" : "!");
    }
    return {good >= 8, std::to_string(good) + "/10 seeds hold (adversary accuracy full/lambda_adv=0):" + per_seed.str()};
}

Outcome ablation_ordering() {
    RunConfig cfg;
    std::vector<std::uint64_t> seeds;
    for (std::uint64_t s = 1; s <= 10; ++s) seeds.push_back(s);
    const AblationResult r = run_ablation_suite(cfg, seeds, false);
    bool monotone = true, complete = true;
    std::ostringstream os;
    for (std::size_t i = 0; i < r.rows.size(); ++i) {
        os << (i ? ", " : "") << to_string(r.rows[i].row) << ' ' << fmt("%.4f", r.rows[i].mean_novel_miou);
        complete = complete && r.rows[i].completed == seeds.size();
        if (i > 0 && !(r.rows[i - 1].mean_novel_miou < r.rows[i].mean_novel_miou)) monotone = false;
    }
    return {monotone && complete, "mean novel mIoU over 10 seeds: " + os.str()};
}

Outcome determinism(const std::string& cli, const fs::path& scratch) {
    std::vector<fs::path> dirs{scratch / "det_a", scratch / "det_b"};
    for (const auto& d : dirs) {
        fs::remove_all(d);
        const std::string cmd = "CNCD_LOG=quiet \"" + cli + "\" run --seed 7 --row full --out \"" + d.string() + "\" > /dev/null";
        if (std::system(cmd.c_str()) != 0) return {false, "command failed: " + cmd};
    }
    bool same = true;
    for (const char* f : {"metrics.csv", "summary.json"})
        same = same && io::read_text_file(dirs[0] / f) == io::read_text_file(dirs[1] / f);
    for (const auto& d : dirs) fs::remove_all(d);
    return {same, std::string("two `run --seed 7 --row full` executions: metrics.csv and summary.json ") +
                      (same ? "byte-identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: %s <cncd executable> [scratch dir]\n", argv[0]);
        return 2;
    }
    const std::string cli = argv[1];
    const fs::path scratch = argc > 2 ? fs::path(argv[2]) : fs::temp_directory_path() / "cncd_acceptance";
    fs::create_directories(scratch);

    const std::vector<Criterion> criteria = {
        {1, "gradient suite", 30, gradient_suite},
        {2, "assignment oracle", 10, assignment_oracle},
        {3, "transport marginals", 5, transport_marginals},
        {4, "normalization suite", 0, normalization_suite},
        {5, "structural zero-loss cases", 0, structural_zeros},
        {6, "deconfounding effect", 120, deconfounding},
        {7, "ablation ordering", 300, ablation_ordering},
        {8, "determinism", 0, [&] { return determinism(cli, scratch); }},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_budget = c.budget_seconds <= 0 || secs < c.budget_seconds;
        const bool passed = o.passed && in_budget;
        failures += passed ? 0 : 1;
        std::printf("[%s] %d %s: %s; %.2f s", passed ? "PASS" : "FAIL", c.id, c.name.c_str(), o.detail.c_str(), secs);
        if (c.budget_seconds > 0) std::printf(" (budget %.0f s%s)", c.budget_seconds, in_budget ? "" : ", exceeded");
        std::printf("\n");
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
