// Trains a short full-pipeline run in memory and prints the three mIoUs.
// Usage: sample_quickstart [seed]

#include <cstdint>
#include <iostream>
#include <string>

#include "cncd/pipeline/pipeline.hpp"

int main(int argc, char** argv) {
    cncd::RunConfig cfg;
    cfg.seed = argc > 1 ? std::stoull(argv[1]) : 7;
    cfg.epochs = 15;  // shorter than the default so the sample finishes in a couple of seconds
    cfg.train_scenes = 20;
    cfg.test_scenes = 5;
    cfg.set_row(cncd::Row::Full);

    const cncd::RunArtifacts run = cncd::run_pipeline(cfg, /*write=*/false);
    const auto& r = run.report;
    std::cout << "novel mIoU " << r.iou.novel_miou << "\nknown mIoU " << r.iou.known_miou << "\nall mIoU "
              << r.iou.all_miou << "\nnovel prototype -> base label:";
    for (int y : r.prototype_labels) std::cout << ' ' << y;
    std::cout << "\ntheta " << r.theta.value_or(0.0) << "\n\n" << cncd::inspect_checkpoint(run.checkpoint);
    return r.checks_passed() ? 0 : 1;
}
