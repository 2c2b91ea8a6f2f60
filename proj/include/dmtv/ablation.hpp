#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmtv/evalkit.hpp"
#include "dmtv/pilot.hpp"
#include "dmtv/trainer.hpp"

namespace dmtv {

// One loss combination, measured with the pilot sensitivity probe on its
// motion encoder and with the sampling metrics on its outputs.
struct AblationRow {
    std::string variant;
    double motion_sensitivity = 0.0;   // pilot mean over motion slots
    double content_sensitivity = 0.0;  // pilot mean over content slots
    double motion_dynamics = 0.0;
    double flow_score = 0.0;
    double direction_agreement = 0.0;
    double alignment = 0.0;
    std::string checkpoint;
};

struct AblationReport {
    std::vector<AblationRow> rows;
    uint64_t train_seed = 0;
    uint64_t eval_seed = 0;
    int64_t n_contexts = 0;
};

struct AblationOptions {
    TrainConfig train;                // shared by every trained variant; stage forced to demo
    std::string init_checkpoint;      // pretraining fixture every variant starts from
    std::string baseline_checkpoint;  // finished full-objective run, reported as "demo"
    std::vector<std::string> prompts; // sampling prompts, each with a direction word
    PilotOptions pilot;
    EvalOptions eval;                 // out_dir is replaced with <out_dir>/eval
    std::string out_dir = "ablation_out";
};

// Report order: the untouched initialization first, the freshly trained loss
// combinations, then the supplied full-objective run.
std::vector<std::string> ablation_variant_names();

// Trains the loss-combination variants (text-motion only, reg only, both, and
// full weights with gamma = 0) from the shared initialization, then probes
// every variant plus the init and the supplied baseline. The "pretrained" row
// reports the content encoder's sensitivity, which is what the motion encoder
// starts as, and samples through untouched motion blocks. Writes the
// comparative CSV and charts under out_dir.
AblationReport run_ablation_suite(Models& m, const TrainSet& corpus,
                                  const AblationOptions& opts);

std::string ablation_csv_header();
void write_ablation_csv(const std::string& path, const AblationReport& report);
void write_ablation_charts(const std::string& dir, const AblationReport& report);

}  // namespace dmtv
