#include "dmtv/ablation.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <utility>

#include "dmtv/io_util.hpp"

namespace dmtv {

namespace {

struct VariantPlan {
    std::string name;
    bool trained = false;
    bool text_motion = true;
    bool reg = true;
    bool video_motion = true;
    bool zero_gamma = false;
};

// The two bookend rows reuse supplied checkpoints; the middle four train.
const std::vector<VariantPlan>& plans() {
    static const std::vector<VariantPlan> p = {
        {"pretrained", false, true, true, true, false},
        {"text_motion_only", true, true, false, false, false},
        {"reg_only", true, false, true, false, false},
        {"both", true, true, true, false, false},
        {"gamma_zero", true, true, true, true, true},
        {"demo", false, true, true, true, false},
    };
    return p;
}

TrainConfig variant_config(const TrainConfig& base, const VariantPlan& plan) {
    TrainConfig cfg = base;
    cfg.stage = TrainStage::demo;
    cfg.ablation.text_motion = plan.text_motion;
    cfg.ablation.reg = plan.reg;
    cfg.ablation.video_motion = plan.video_motion;
    if (plan.zero_gamma) cfg.weights.gamma = 0.0;
    return cfg;
}

}  // namespace

std::vector<std::string> ablation_variant_names() {
    std::vector<std::string> names;
    names.reserve(plans().size());
    for (const auto& p : plans()) names.push_back(p.name);
    return names;
}

AblationReport run_ablation_suite(Models& m, const TrainSet& corpus,
                                  const AblationOptions& opts) {
    if (opts.init_checkpoint.empty() || !file_exists(opts.init_checkpoint))
        throw std::runtime_error("run_ablation_suite: missing init checkpoint " +
                                 opts.init_checkpoint);
    if (opts.baseline_checkpoint.empty() || !file_exists(opts.baseline_checkpoint))
        throw std::runtime_error("run_ablation_suite: missing baseline checkpoint " +
                                 opts.baseline_checkpoint);
    if (opts.prompts.empty())
        throw std::invalid_argument("run_ablation_suite: no sampling prompts");

    AblationReport report;
    report.train_seed = opts.train.seed;
    report.eval_seed = opts.eval.seed;
    report.n_contexts = opts.pilot.n_contexts;

    std::vector<EvalVariant> eval_variants;
    for (const auto& plan : plans()) {
        AblationRow row;
        row.variant = plan.name;
        if (plan.trained) {
            TrainRunOptions run;
            run.out_dir = opts.out_dir + "/" + plan.name;
            run.init_checkpoint = opts.init_checkpoint;
            row.checkpoint =
                run_training(m, variant_config(opts.train, plan), corpus, run)
                    .final_checkpoint;
        } else {
            row.checkpoint = plan.name == "pretrained" ? opts.init_checkpoint
                                                       : opts.baseline_checkpoint;
        }
        eval_variants.push_back({plan.name, row.checkpoint});
        report.rows.push_back(std::move(row));
    }

    // Sensitivity probe per variant. The init's motion tower never saw the
    // content weights (the copy happens at the start of training), so the
    // pretrained reference reads the content encoder instead.
    const PosGrammar grammar = corpus_grammar();
    const auto motion_names = motion_slots(grammar);
    const auto content_names = content_slots(grammar);
    for (AblationRow& row : report.rows) {
        load_checkpoint(row.checkpoint, m);
        const TextEncoder& probe = row.variant == "pretrained" ? m.content : m.motion;
        const SensitivityReport sens = run_pilot(grammar, probe, m.vocab, opts.pilot);
        row.motion_sensitivity = mean_slot_sensitivity(sens, motion_names);
        row.content_sensitivity = mean_slot_sensitivity(sens, content_names);
    }

    EvalOptions eval = opts.eval;
    eval.out_dir = opts.out_dir + "/eval";
    const EvalReport metrics = compare_variants(m, eval_variants, opts.prompts, eval);
    for (size_t i = 0; i < report.rows.size(); ++i) {
        report.rows[i].motion_dynamics = metrics.variants[i].motion_dynamics;
        report.rows[i].flow_score = metrics.variants[i].flow_score;
        report.rows[i].direction_agreement = metrics.variants[i].direction_agreement;
        report.rows[i].alignment = metrics.variants[i].alignment;
    }

    write_ablation_csv(opts.out_dir + "/ablation.csv", report);
    write_ablation_charts(opts.out_dir, report);
    return report;
}

std::string ablation_csv_header() {
    return "variant,motion_sensitivity,content_sensitivity,motion_dynamics,flow_score,"
           "direction_agreement,alignment";
}

void write_ablation_csv(const std::string& path, const AblationReport& report) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_ablation_csv: cannot open " + path);
    os << ablation_csv_header() << '\n';
    for (const auto& r : report.rows)
        os << r.variant << ',' << format_double(r.motion_sensitivity) << ','
           << format_double(r.content_sensitivity) << ','
           << format_double(r.motion_dynamics) << ',' << format_double(r.flow_score)
           << ',' << format_double(r.direction_agreement) << ','
           << format_double(r.alignment) << '\n';
    if (!os) throw std::runtime_error("write_ablation_csv: write failed for " + path);
}

void write_ablation_charts(const std::string& dir, const AblationReport& report) {
    if (report.rows.empty())
        throw std::invalid_argument("write_ablation_charts: empty report");
    std::filesystem::create_directories(dir);
    std::vector<std::string> groups;
    std::vector<std::vector<double>> sens, dyn;
    for (const auto& r : report.rows) {
        groups.push_back(r.variant);
        sens.push_back({r.motion_sensitivity, r.content_sensitivity});
        dyn.push_back({r.motion_dynamics});
    }
    write_bar_chart_bmp(dir + "/sensitivity.bmp", groups,
                        {"motion_sensitivity", "content_sensitivity"}, sens);
    write_bar_chart_bmp(dir + "/motion_dynamics.bmp", groups, {"motion_dynamics"}, dyn);
}

}  // namespace dmtv
