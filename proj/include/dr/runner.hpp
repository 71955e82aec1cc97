#ifndef DR_RUNNER_HPP
#define DR_RUNNER_HPP

#include <optional>
#include <string>
#include <vector>

#include "dr/data.hpp"
#include "dr/eval.hpp"
#include "dr/guidance.hpp"
#include "dr/model.hpp"
#include "dr/sampler.hpp"
#include "dr/train.hpp"

namespace dr {

// Effective configuration for one CLI invocation. Flags override config-file
// values; the resolved struct is echoed into the output directory.
struct run_config {
    run_mode mode = run_mode::dr_full;
    std::string checkpoint;
    std::string dataset;
    std::string out_dir;
    int jobs = 0;

    sampler_config sampler;
    train_config train;
    int gen_scenes = 2000;

    std::string scenario = "dominance";
    int cases = 200;
    uint64_t bench_seed = 7;
    bool save_images = false;

    // sample subcommand
    std::vector<int> prompt_ids;
    std::vector<condition_input> conditions;
    std::vector<std::vector<int>> bindings;  // token indices per condition
    int count = 1;
    bool emit_trace = false;
};

struct case_result {
    uint64_t case_hash = 0;
    bool presence = false;
    double distance = 1.0;
    int duplicates = 0;       // extra instances of the bound class
    bool bound_iou_ok = false;  // bound object on the mask with IoU > 0.5
};

struct bench_result {
    run_mode mode = run_mode::dr_full;
    std::vector<case_result> cases;
    method_metrics aggregate() const;
};

// Samples every benchmark case under `mode` and scores it with the oracle
// detectors. Case i derives its noise stream from (sampler.seed, case_seed),
// so different modes see identical initial latents. Parallel across cases.
bench_result run_benchmark_mode(const denoiser& den, const std::vector<benchmark_case>& cases,
                                run_mode mode, const sampler_config& base,
                                const std::string& image_dir = "");

// Per-case sampler invocation shared by benchmark and sample paths.
sample_output run_case(const denoiser& den, const benchmark_case& bc, run_mode mode,
                       const sampler_config& base);

// operations behind the CLI verbs; each writes its artifacts under
// cfg.out_dir and records provenance
void op_dataset_gen(const run_config& cfg);
void op_train(run_config cfg);
void op_train_adapter(run_config cfg, int adapter_id);
void op_sample(const run_config& cfg);
metric_report op_eval(const run_config& cfg, const std::vector<run_mode>& modes);
metric_report op_ablate(const run_config& cfg);
void op_sweep(const run_config& cfg, const std::vector<double>& w0_grid,
              const std::vector<double>& wk_grid,
              const std::vector<std::pair<int, int>>& ranges);

// full command-line dispatch; returns a process exit code
// (0 ok, 2 config, 3 divergence, 4 i/o)
int run_cli(int argc, const char** argv);

}  // namespace dr

#endif
