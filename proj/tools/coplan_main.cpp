#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "coplan/harness.hpp"

using namespace coplan;

int main(int argc, char** argv) {
    CLI::App app{"coplan: collaborative planner/executor training harness"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "generate a task suite");
    std::uint64_t gen_seed = 0;
    int seen_per_type = 0, ood_per_type = 0;
    bool ood_default = false, stuck = false;
    std::string gen_out = "suite.tsv";
    gen->add_option("--seed", gen_seed, "suite seed");
    gen->add_option("--seen-per-type", seen_per_type, "seen tasks per type");
    gen->add_option("--ood-per-type", ood_per_type, "OOD tasks per type");
    gen->add_flag("--ood-default", ood_default, "use the 134-task OOD split");
    gen->add_flag("--stuck", stuck, "stuck-receptacle subsuite");
    gen->add_option("--out", gen_out, "output path");

    // train
    auto* train = app.add_subcommand("train", "run the training loop");
    std::string config_path, suite_path, out_dir = "run", backend = "oracle", resume;
    train->add_option("--config", config_path, "config file")->required();
    train->add_option("--suite", suite_path, "suite file")->required();
    train->add_option("--out", out_dir, "output run directory");
    train->add_option("--backend", backend, "planner backend: oracle|wire");
    train->add_option("--resume", resume, "resume from a run directory");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ckpt, eval_suite, eval_out = "eval.csv", channel = "none";
    double noise = 0.0;
    std::uint64_t eval_seed = 0;
    eval->add_option("--checkpoint", ckpt, "policy checkpoint")->required();
    eval->add_option("--suite", eval_suite, "suite file")->required();
    eval->add_option("--noise", noise, "noise rate in [0,1]");
    eval->add_option("--channel", channel, "noise channel: visual|textual|both|none");
    eval->add_option("--seed", eval_seed, "evaluation seed");
    eval->add_option("--out", eval_out, "output CSV path");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "noise-rate sweep");
    std::string sweep_ckpt, sweep_suite, sweep_out = "sweep.csv";
    std::vector<double> rates{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
    int sweep_seeds = 10;
    sweep->add_option("--checkpoint", sweep_ckpt, "policy checkpoint")->required();
    sweep->add_option("--suite", sweep_suite, "suite file")->required();
    sweep->add_option("--rates", rates, "noise rates");
    sweep->add_option("--seeds", sweep_seeds, "seeds to average over");
    sweep->add_option("--out", sweep_out, "output CSV path");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "matched-seed ablation pair");
    std::string mode, ablate_config, ablate_suite, ablate_out = "ablation";
    ablate->add_option("--mode", mode, "no-replan|ce-loss")->required();
    ablate->add_option("--config", ablate_config, "config file")->required();
    ablate->add_option("--suite", ablate_suite, "suite file")->required();
    ablate->add_option("--out", ablate_out, "output directory");

    // errors
    auto* errors = app.add_subcommand("errors", "planner-error table for a run");
    std::string run_dir, errors_out = "errors.csv";
    errors->add_option("--run", run_dir, "run directory")->required();
    errors->add_option("--out", errors_out, "output CSV path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            harness::SuiteSpec spec;
            if (ood_default) {
                spec = harness::default_ood_suite(gen_seed);
            } else {
                spec.seed = gen_seed;
                for (int i = 0; i < world::kNumTaskTypes; ++i) {
                    auto type = static_cast<world::TaskType>(i);
                    if (seen_per_type > 0) spec.seen_counts[type] = seen_per_type;
                    if (ood_per_type > 0) spec.ood_counts[type] = ood_per_type;
                }
            }
            spec.stuck = stuck;
            return harness::cmd_gen(spec, gen_out);
        }
        if (train->parsed())
            return harness::cmd_train(config_path, suite_path, out_dir, backend, resume);
        if (eval->parsed())
            return harness::cmd_eval(ckpt, eval_suite, noise, channel, eval_out,
                                     eval_seed);
        if (sweep->parsed())
            return harness::cmd_sweep(sweep_ckpt, sweep_suite, rates, sweep_seeds,
                                      sweep_out);
        if (ablate->parsed())
            return harness::cmd_ablate(mode, ablate_config, ablate_suite, ablate_out);
        if (errors->parsed()) return harness::cmd_errors(run_dir, errors_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
