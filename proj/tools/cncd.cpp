// Command-line driver: generate, run, ablate, eval, inspect.
// Log verbosity comes from CNCD_LOG (quiet|error|warn|info|debug).

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "cncd/core/log.hpp"
#include "cncd/io/json_io.hpp"
#include "cncd/pipeline/pipeline.hpp"
#include "cncd/scene/scene_io.hpp"

namespace fs = std::filesystem;
using namespace cncd;

namespace {

enum Exit : int { kOk = 0, kCheckFailed = 1, kUsage = 2, kRuntime = 3 };

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* app, Common& c, bool with_out = true) {
    app->add_option("--config", c.config_path, "key = value config file")->check(CLI::ExistingFile);
    app->add_option("--seed", c.seed, "master seed (overrides the config)");
    if (with_out) app->add_option("--out", c.out, "output directory (overrides the config)");
}

RunConfig load_config(const Common& c) {
    RunConfig cfg;
    if (!c.config_path.empty()) cfg = parse_config(io::read_text_file(c.config_path));
    if (c.seed) cfg.seed = *c.seed;
    if (!c.out.empty()) cfg.output_dir = c.out;
    return cfg;
}

void print_report(const MetricsReport& r) {
    std::cout << "row " << r.row << " seed " << r.seed << " config " << r.config_hash << '\n'
              << "novel mIoU " << r.iou.novel_miou << "  known mIoU " << r.iou.known_miou << "  all mIoU "
              << r.iou.all_miou << '\n';
    for (const auto& c : r.checks)
        std::cout << "check " << c.name << ": " << (c.passed ? "ok" : "FAILED") << " (" << c.value << ")\n";
}

int cmd_generate(const Common& c) {
    RunConfig cfg = load_config(c);
    cfg.validate();
    const fs::path out = cfg.output_dir;
    const Dataset data = build_dataset(cfg);
    io::json manifest{{"spec_hash", cfg.dataset_spec().hash()}, {"seed", cfg.seed}, {"scenes", io::json::array()}};
    auto emit = [&](const std::vector<PointScene>& scenes, const char* prefix) {
        for (std::size_t i = 0; i < scenes.size(); ++i) {
            char name[48];
            std::snprintf(name, sizeof name, "%s_%03zu.json", prefix, i);
            save_scene(scenes[i], out / "scenes" / name);
            manifest["scenes"].push_back(std::string("scenes/") + name);
        }
    };
    emit(data.train, "train");
    emit(data.test, "test");
    io::write_text_file(out / "config.txt", format_config(cfg));
    io::write_text_file(out / "dataset.json", manifest.dump(2) + "\n");
    std::cout << "wrote " << data.train.size() << " train and " << data.test.size() << " test scenes to " << out
              << '\n';
    return kOk;
}

int cmd_run(const Common& c, const std::string& row) {
    RunConfig cfg = load_config(c);
    if (!row.empty()) cfg.set_row(parse_row(row));
    const RunArtifacts a = run_pipeline(cfg, true);
    print_report(a.report);
    std::cout << "outputs in " << cfg.output_dir << '\n';
    return a.report.checks_passed() ? kOk : kCheckFailed;
}

int cmd_ablate(const Common& c, std::size_t num_seeds, const std::vector<std::string>& row_names) {
    RunConfig cfg = load_config(c);
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < num_seeds; ++i) seeds.push_back(cfg.seed + i);
    std::vector<Row> rows;
    for (const auto& r : row_names) rows.push_back(parse_row(r));
    if (rows.empty()) rows.assign(std::begin(kAllRows), std::end(kAllRows));
    const AblationResult res = run_ablation_suite(cfg, seeds, true, rows);
    std::cout << ablation_csv(res);
    bool ok = true;
    for (const auto& cell : res.cells) ok = ok && cell.report && cell.report->checks_passed();
    return ok ? kOk : kCheckFailed;
}

int cmd_eval(const Common& c, const std::string& run_dir, bool force) {
    Common cc = c;
    if (cc.config_path.empty()) cc.config_path = (fs::path(run_dir) / "config.txt").string();
    const RunConfig cfg = load_config(cc);
    cfg.validate();
    const fs::path ckpt = fs::path(run_dir) / "checkpoint.json";
    if (fs::exists(ckpt)) load_checkpoint(ckpt, config_hash(cfg), force);
    const IoUReport rep = rescore_run(run_dir, cfg);
    const std::string csv = metrics_csv(rep);
    io::write_text_file(fs::path(run_dir) / "metrics_rescored.csv", csv);
    std::cout << "novel mIoU " << rep.novel_miou << "  known mIoU " << rep.known_miou << "  all mIoU "
              << rep.all_miou << '\n';
    const fs::path saved = fs::path(run_dir) / "metrics.csv";
    if (fs::exists(saved)) {
        const bool same = io::read_text_file(saved) == csv;
        std::cout << "saved metrics.csv " << (same ? "matches" : "DIFFERS") << '\n';
        if (!same) return kCheckFailed;
    }
    return kOk;
}

int cmd_inspect(const Common& c, std::string path, bool force) {
    if (fs::is_directory(path)) path = (fs::path(path) / "checkpoint.json").string();
    std::string expected;
    if (!c.config_path.empty()) expected = config_hash(load_config(c));
    const Checkpoint ck = load_checkpoint(path, expected, force);
    std::cout << "checkpoint: " << path << '\n' << inspect_checkpoint(ck);
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Causal novel class discovery on synthetic point scenes"};
    app.require_subcommand(1);

    Common gen_opts, run_opts, abl_opts, eval_opts, insp_opts;
    std::string row, run_dir, ckpt;
    std::vector<std::string> rows;
    std::size_t num_seeds = 10;
    bool force_eval = false, force_insp = false;

    auto* gen = app.add_subcommand("generate", "write the synthetic dataset to disk");
    add_common(gen, gen_opts);

    auto* run = app.add_subcommand("run", "run one pipeline row and write its outputs");
    add_common(run, run_opts);
    run->add_option("--row", row, "baseline | crp | crp-crg | full (overrides ablation.* keys)");

    auto* abl = app.add_subcommand("ablate", "run the four-row ablation over consecutive seeds");
    add_common(abl, abl_opts);
    abl->add_option("--seeds", num_seeds, "number of seeds, starting at --seed")->check(CLI::Range(2, 1000));
    abl->add_option("--row", rows, "restrict to these rows (repeatable)");

    auto* ev = app.add_subcommand("eval", "re-score the saved labels of a run directory");
    add_common(ev, eval_opts, false);
    ev->add_option("run_dir", run_dir, "run output directory")->required()->check(CLI::ExistingDirectory);
    ev->add_flag("--force", force_eval, "accept a checkpoint whose config hash differs");

    auto* insp = app.add_subcommand("inspect", "dump a checkpoint in readable form");
    add_common(insp, insp_opts, false);
    insp->add_option("checkpoint", ckpt, "checkpoint file or run directory")->required()->check(CLI::ExistingPath);
    insp->add_flag("--force", force_insp, "accept a checkpoint whose config hash differs from --config");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUsage;
    }

    try {
        if (*gen) return cmd_generate(gen_opts);
        if (*run) return cmd_run(run_opts, row);
        if (*abl) return cmd_ablate(abl_opts, num_seeds, rows);
        if (*ev) return cmd_eval(eval_opts, run_dir, force_eval);
        if (*insp) return cmd_inspect(insp_opts, ckpt, force_insp);
    } catch (const ParameterError& e) {
        cncd::log::error(e.what());
        return kUsage;
    } catch (const ParseError& e) {
        cncd::log::error(e.what());
        return kUsage;
    } catch (const std::exception& e) {
        cncd::log::error(e.what());
        return kRuntime;
    }
    return kUsage;
}
