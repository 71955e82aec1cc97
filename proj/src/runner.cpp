#include "dr/runner.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dr/checkpoint.hpp"
#include "dr/image_io.hpp"
#include "dr/threading.hpp"

#include "CLI11.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace dr {

namespace {

tensor decoded_to_tensor(const std::vector<uint8_t>& planes) {
    tensor t({3, kImageSize, kImageSize});
    for (size_t i = 0; i < planes.size(); i++)
        t.data[i] = (float)planes[i] / 127.5f - 1.0f;
    return t;
}

uint64_t mix_seed(uint64_t base, uint64_t case_seed) {
    uint64_t b[2] = {base, case_seed};
    return fnv1a64(b, sizeof b);
}

case_result score_case(const benchmark_case& bc, const sample_output& out) {
    case_result r;
    r.case_hash = bc.content_hash();
    tensor img = decoded_to_tensor(out.image);
    auto dets = detect_objects(img);

    r.presence = presence_rate_detections({dets}, {bc.gold}) > 0.5;

    const auto& bound = bc.gold[bc.bound_object];
    r.distance = condition_distance_detections(dets, bc.conditions[0], bound.color, bound.shape);

    int bound_class = 0;
    double best_iou = -1;
    for (auto& d : dets) {
        if (d.color == bound.color && d.shape == bound.shape) {
            bound_class++;
            int inter = 0, uni = 0;
            for (int i = 0; i < kImageSize * kImageSize; i++) {
                bool pa = d.mask[i] != 0;
                bool pb = bc.conditions[0].mask.data[i] > 0.5f;
                inter += pa && pb;
                uni += pa || pb;
            }
            best_iou = std::max(best_iou, uni ? (double)inter / uni : 0.0);
        }
    }
    r.duplicates = std::max(0, bound_class - 1);
    r.bound_iou_ok = best_iou > 0.5;
    return r;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f)
        throw io_error("cannot write: " + path);
    f << text;
}

void write_provenance(const run_config& cfg, const std::string& command,
                      const std::string& echo) {
    if (cfg.out_dir.empty())
        return;
    fs::create_directories(cfg.out_dir);
    ordered_json j;
    j["command"] = command;
    j["seed"] = cfg.sampler.seed;
    j["jobs"] = cfg.jobs;
    if (!cfg.checkpoint.empty() && fs::exists(cfg.checkpoint))
        j["checkpoint_hash"] = hex64(file_hash(cfg.checkpoint));
    write_text((fs::path(cfg.out_dir) / "run_meta.json").string(), j.dump(2) + "\n");
    if (!echo.empty())
        write_text((fs::path(cfg.out_dir) / "effective_config.toml").string(), echo);
}

std::vector<scene> training_scenes(const run_config& cfg) {
    if (!cfg.dataset.empty())
        return load_dataset(cfg.dataset);
    return gen_dataset(cfg.train.seed, cfg.gen_scenes);
}

void write_case_rows(const std::string& path, const bench_result& br) {
    std::ofstream f(path, std::ios::trunc);
    if (!f)
        throw io_error("cannot write: " + path);
    for (auto& c : br.cases) {
        ordered_json j;
        j["case"] = hex64(c.case_hash);
        j["presence"] = c.presence;
        j["distance"] = c.distance;
        j["duplicates"] = c.duplicates;
        j["bound_iou_ok"] = c.bound_iou_ok;
        f << j.dump() << "\n";
    }
}

void write_report_files(const std::string& out_dir, const metric_report& rep) {
    fs::create_directories(out_dir);
    write_text((fs::path(out_dir) / "report.txt").string(), format_report_table(rep));
    std::ofstream f(fs::path(out_dir) / "report.jsonl", std::ios::trunc);
    for (auto& r : rep.rows) {
        ordered_json j;
        j["method"] = r.method;
        j["presence"] = r.presence;
        j["mean_distance"] = r.mean_distance;
        j["duplicate_rate"] = r.duplicate_rate;
        j["bound_iou_rate"] = r.bound_iou_rate;
        j["relative_presence_pct"] = rep.relative_presence.at(r.method);
        j["relative_distance_pct"] = rep.relative_distance.at(r.method);
        j["cases"] = r.cases;
        j["baseline"] = rep.baseline;
        f << j.dump() << "\n";
    }
}

}  // namespace

method_metrics bench_result::aggregate() const {
    method_metrics m;
    m.method = run_mode_name(mode);
    m.cases = (int)cases.size();
    if (cases.empty())
        return m;
    double dist = 0;
    int pres = 0, dup = 0, iou = 0;
    for (auto& c : cases) {
        pres += c.presence;
        dist += c.distance;
        dup += c.duplicates > 0;
        iou += c.bound_iou_ok;
    }
    m.presence = (double)pres / m.cases;
    m.mean_distance = dist / m.cases;
    m.duplicate_rate = (double)dup / m.cases;
    m.bound_iou_rate = (double)iou / m.cases;
    return m;
}

sample_output run_case(const denoiser& den, const benchmark_case& bc, run_mode mode,
                       const sampler_config& base) {
    sampler_config sc = base;
    sc.seed = mix_seed(base.seed, bc.case_seed);
    if (sc.guidance.wk.size() != bc.conditions.size())
        sc.guidance.wk.assign(bc.conditions.size(), 3.0f);
    pair_binding binding({pair_binding::pair{bc.bound_tokens, 0}}, (int)bc.prompt_ids.size());
    return run_algorithm1(den, mode, bc.prompt_ids, bc.conditions, binding, sc,
                          /*keep_trace=*/false);
}

bench_result run_benchmark_mode(const denoiser& den, const std::vector<benchmark_case>& cases,
                                run_mode mode, const sampler_config& base,
                                const std::string& image_dir) {
    bench_result out;
    out.mode = mode;
    out.cases.resize(cases.size());
    std::vector<std::vector<uint8_t>> images;
    if (!image_dir.empty()) {
        fs::create_directories(image_dir);
        images.resize(cases.size());
    }
    parallel_for((int64_t)cases.size(), [&](int64_t i) {
        auto res = run_case(den, cases[i], mode, base);
        out.cases[i] = score_case(cases[i], res);
        if (!image_dir.empty())
            images[i] = std::move(res.image);
    });
    if (!image_dir.empty()) {
        for (size_t i = 0; i < cases.size(); i++) {
            char name[64];
            snprintf(name, sizeof name, "case_%04zu_%s.ppm", i, run_mode_name(mode));
            write_ppm((fs::path(image_dir) / name).string(), kImageSize, kImageSize,
                      planes_to_interleaved(images[i], kImageSize, kImageSize));
        }
    }
    return out;
}

void op_dataset_gen(const run_config& cfg) {
    if (cfg.out_dir.empty())
        throw config_error("dataset gen: --out is required");
    auto scenes = gen_dataset(cfg.train.seed, cfg.gen_scenes);
    save_dataset(cfg.out_dir, scenes);
    ordered_json j;
    j["seed"] = cfg.train.seed;
    j["count"] = cfg.gen_scenes;
    write_text((fs::path(cfg.out_dir) / "dataset_meta.json").string(), j.dump(2) + "\n");
}

void op_train(run_config cfg) {
    if (cfg.out_dir.empty())
        throw config_error("train: --out is required");
    fs::create_directories(cfg.out_dir);
    set_job_count(cfg.jobs);
    auto scenes = training_scenes(cfg);

    denoiser den = cfg.checkpoint.empty() ? denoiser::init(model_config{}, cfg.train.seed)
                                          : checkpoint_load(cfg.checkpoint);
    cfg.train.checkpoint_dir = cfg.out_dir;
    std::ofstream log(fs::path(cfg.out_dir) / "train_log.jsonl", std::ios::trunc);
    train_denoiser(den, cfg.train, scenes, [&](int step, double loss, double lr) {
        ordered_json j;
        j["step"] = step;
        j["loss"] = loss;
        j["lr"] = lr;
        log << j.dump() << "\n";
        log.flush();
    });
    checkpoint_save(den, (fs::path(cfg.out_dir) / "model.drck").string());
}

void op_train_adapter(run_config cfg, int adapter_id) {
    if (cfg.checkpoint.empty())
        throw config_error("train-adapter: --checkpoint is required");
    if (cfg.out_dir.empty())
        throw config_error("train-adapter: --out is required");
    fs::create_directories(cfg.out_dir);
    set_job_count(cfg.jobs);
    auto scenes = training_scenes(cfg);
    denoiser den = checkpoint_load(cfg.checkpoint);
    cfg.train.checkpoint_dir = cfg.out_dir;
    std::ofstream log(fs::path(cfg.out_dir) / "train_adapter_log.jsonl", std::ios::trunc);
    train_adapter(den, adapter_id, cfg.train, scenes, [&](int step, double loss, double lr) {
        ordered_json j;
        j["step"] = step;
        j["loss"] = loss;
        j["lr"] = lr;
        log << j.dump() << "\n";
        log.flush();
    });
    checkpoint_save(den, (fs::path(cfg.out_dir) / "model.drck").string());
}

void op_sample(const run_config& cfg) {
    if (cfg.checkpoint.empty())
        throw config_error("sample: --checkpoint is required");
    if (cfg.out_dir.empty())
        throw config_error("sample: --out is required");
    if (cfg.prompt_ids.empty() && cfg.mode != run_mode::unconditional)
        throw config_error("sample: --prompt is required for conditional modes");
    fs::create_directories(cfg.out_dir);
    set_job_count(cfg.jobs);
    denoiser den = checkpoint_load(cfg.checkpoint);

    std::vector<pair_binding::pair> pairs;
    for (size_t k = 0; k < cfg.conditions.size(); k++) {
        if (k >= cfg.bindings.size())
            throw config_error("sample: every condition needs a --bind entry");
        pairs.push_back({cfg.bindings[k], (int)k});
    }
    pair_binding binding(pairs, (int)cfg.prompt_ids.size());

    std::vector<sample_output> outs(cfg.count);
    parallel_for(cfg.count, [&](int64_t i) {
        sampler_config sc = cfg.sampler;
        sc.seed = cfg.sampler.seed + (uint64_t)i;
        if (sc.guidance.wk.size() != cfg.conditions.size())
            sc.guidance.wk.assign(cfg.conditions.size(), 3.0f);
        outs[i] = run_algorithm1(den, cfg.mode, cfg.prompt_ids, cfg.conditions, binding, sc,
                                 cfg.emit_trace);
    });
    for (int i = 0; i < cfg.count; i++) {
        char name[64];
        snprintf(name, sizeof name, "sample_%04d.ppm", i);
        write_ppm((fs::path(cfg.out_dir) / name).string(), kImageSize, kImageSize,
                  planes_to_interleaved(outs[i].image, kImageSize, kImageSize));
        if (cfg.emit_trace) {
            snprintf(name, sizeof name, "trace_%04d.jsonl", i);
            std::ofstream tf(fs::path(cfg.out_dir) / name, std::ios::trunc);
            for (auto& tr : outs[i].trace) {
                ordered_json j;
                j["step"] = tr.step;
                j["t"] = tr.t;
                j["eps_null_norm"] = tr.eps_null_norm;
                j["eps_unified_norm"] = tr.eps_unified_norm;
                j["eps_individual_norms"] = tr.eps_individual_norms;
                j["injected"] = tr.injected;
                j["replaced_columns"] = tr.replaced_columns;
                tf << j.dump() << "\n";
            }
        }
    }
}

metric_report op_eval(const run_config& cfg, const std::vector<run_mode>& modes) {
    if (cfg.checkpoint.empty())
        throw config_error("eval: --checkpoint is required");
    set_job_count(cfg.jobs);
    denoiser den = checkpoint_load(cfg.checkpoint);

    scenario_kind scen;
    if (cfg.scenario == "dominance")
        scen = scenario_kind::dominance;
    else if (cfg.scenario == "ambiguity")
        scen = scenario_kind::ambiguity;
    else
        throw config_error("unknown scenario: " + cfg.scenario);
    auto cases = make_benchmark(scen, cfg.cases, cfg.bench_seed);

    std::vector<method_metrics> rows;
    for (run_mode m : modes) {
        auto br = run_benchmark_mode(den, cases, m, cfg.sampler,
                                     cfg.save_images && !cfg.out_dir.empty()
                                         ? (fs::path(cfg.out_dir) / "images").string()
                                         : "");
        rows.push_back(br.aggregate());
        if (!cfg.out_dir.empty()) {
            fs::create_directories(cfg.out_dir);
            write_case_rows(
                (fs::path(cfg.out_dir) / ("cases_" + std::string(run_mode_name(m)) + ".jsonl"))
                    .string(),
                br);
        }
    }
    std::string baseline = run_mode_name(run_mode::baseline_joint);
    bool have_base = false;
    for (auto& r : rows)
        have_base |= r.method == baseline;
    if (!have_base)
        baseline = rows.front().method;
    auto rep = relative_report(rows, baseline);
    rep.seed = cfg.bench_seed;
    if (!cfg.out_dir.empty())
        write_report_files(cfg.out_dir, rep);
    return rep;
}

metric_report op_ablate(const run_config& cfg) {
    return op_eval(cfg, {run_mode::unconditional, run_mode::baseline_joint,
                         run_mode::decompose_only, run_mode::realign_only, run_mode::dr_full});
}

void op_sweep(const run_config& cfg, const std::vector<double>& w0_grid,
              const std::vector<double>& wk_grid,
              const std::vector<std::pair<int, int>>& ranges) {
    if (cfg.checkpoint.empty())
        throw config_error("sweep: --checkpoint is required");
    if (cfg.out_dir.empty())
        throw config_error("sweep: --out is required");
    if (w0_grid.empty() || wk_grid.empty() || ranges.empty())
        throw config_error("sweep: empty grid axis");
    fs::create_directories(cfg.out_dir);
    set_job_count(cfg.jobs);
    denoiser den = checkpoint_load(cfg.checkpoint);
    auto cases = make_benchmark(cfg.scenario == "ambiguity" ? scenario_kind::ambiguity
                                                            : scenario_kind::dominance,
                                cfg.cases, cfg.bench_seed);

    std::ofstream f(fs::path(cfg.out_dir) / "sweep.jsonl", std::ios::trunc);
    if (!f)
        throw io_error("cannot write sweep.jsonl");
    for (double w0 : w0_grid)
        for (double wk : wk_grid)
            for (auto [start, end] : ranges) {
                sampler_config sc = cfg.sampler;
                sc.guidance.w0 = (float)w0;
                sc.guidance.wk.assign(1, (float)wk);
                sc.realign.step_start = start;
                sc.realign.step_end = end;
                sc.realign.enabled = end > start;
                auto br = run_benchmark_mode(den, cases, run_mode::dr_full, sc);
                auto m = br.aggregate();
                ordered_json j;
                j["w0"] = w0;
                j["wk"] = wk;
                j["realign_start"] = start;
                j["realign_end"] = end;
                j["presence"] = m.presence;
                j["mean_distance"] = m.mean_distance;
                j["duplicate_rate"] = m.duplicate_rate;
                j["bound_iou_rate"] = m.bound_iou_rate;
                f << j.dump() << "\n";
                f.flush();
            }
}

// ---------------------------------------------------------------------------
// CLI
// ---------------------------------------------------------------------------

namespace {

std::vector<int> parse_prompt_words(const std::string& prompt) {
    std::vector<int> ids;
    std::istringstream ss(prompt);
    std::string w;
    while (ss >> w) {
        try {
            ids.push_back(token_from_word(w));
        } catch (const std::invalid_argument& e) {
            throw config_error(std::string("--prompt: ") + e.what());
        }
    }
    return ids;
}

std::vector<int> parse_int_list(const std::string& s, const char* flag) {
    std::vector<int> out;
    std::istringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stoi(item));
        } catch (...) {
            throw config_error(std::string(flag) + ": bad integer '" + item + "'");
        }
    }
    if (out.empty())
        throw config_error(std::string(flag) + ": empty list");
    return out;
}

std::pair<int, int> parse_range(const std::string& s) {
    auto colon = s.find(':');
    if (colon == std::string::npos)
        throw config_error("--range: expected start:end, got '" + s + "'");
    try {
        return {std::stoi(s.substr(0, colon)), std::stoi(s.substr(colon + 1))};
    } catch (...) {
        throw config_error("--range: bad integers in '" + s + "'");
    }
}

condition_input load_mask_condition(const std::string& path) {
    auto img = read_pgm(path);
    if (img.w != kImageSize || img.h != kImageSize)
        throw config_error("--cond-mask: mask must be 32x32: " + path);
    condition_input c;
    c.kind = condition_kind::layout_map;
    c.adapter_id = 0;
    c.mask = tensor({1, kImageSize, kImageSize});
    for (int i = 0; i < kImageSize * kImageSize; i++)
        c.mask.data[i] = img.gray[i] > 127 ? 1.0f : 0.0f;
    return c;
}

condition_input parse_box_condition(const std::string& spec) {
    std::istringstream ss(spec);
    std::string item;
    std::vector<std::string> parts;
    while (std::getline(ss, item, ','))
        parts.push_back(item);
    if (parts.size() != 5)
        throw config_error("--cond-box: expected x0,y0,x1,y1,word");
    condition_input c;
    c.kind = condition_kind::grounding_box;
    c.adapter_id = 1;
    try {
        c.box.x0 = std::stof(parts[0]);
        c.box.y0 = std::stof(parts[1]);
        c.box.x1 = std::stof(parts[2]);
        c.box.y1 = std::stof(parts[3]);
    } catch (...) {
        throw config_error("--cond-box: bad coordinates in '" + spec + "'");
    }
    try {
        c.box.token_id = token_from_word(parts[4]);
    } catch (const std::invalid_argument& e) {
        throw config_error(std::string("--cond-box: ") + e.what());
    }
    return c;
}

}  // namespace

int run_cli(int argc, const char** argv) {
    run_config cfg;
    CLI::App app{"Decompose-and-Realign diffusion engine"};
    app.set_config("--config", "", "TOML config file; flags override file values");
    app.require_subcommand(1);
    app.fallthrough();

    // shared options live on the parent and flow into subcommands
    uint64_t seed = 0;
    bool seed_given = false;
    app.add_option("--jobs", cfg.jobs, "worker threads (0 = hardware)");
    auto* seed_opt = app.add_option("--seed", seed, "global seed (falls back to DR_SEED)");
    app.add_option("--out", cfg.out_dir, "output directory");
    app.add_option("--checkpoint", cfg.checkpoint, "model checkpoint path");
    app.add_option("--dataset", cfg.dataset, "dataset directory (scenes.jsonl)");

    // sampler family
    std::string mode_name = "dr_full";
    app.add_option("--mode", mode_name,
                   "baseline_joint|decompose_only|dr_full|realign_only|unconditional");
    app.add_option("--steps", cfg.sampler.num_steps, "sampling steps");
    app.add_option("--w0", cfg.sampler.guidance.w0, "unified-control weight");
    double wk_flag = 3.0;
    app.add_option("--wk", wk_flag, "individual-control weight (applied to every pair)");
    app.add_option("--wjoint", cfg.sampler.guidance.w_joint, "joint CFG weight");
    app.add_option("--realign-start", cfg.sampler.realign.step_start, "realign window start");
    app.add_option("--realign-end", cfg.sampler.realign.step_end, "realign window end");
    app.add_option("--realign-threshold", cfg.sampler.realign.resolution_threshold,
                   "max attention resolution for replacement");
    app.add_flag("--realign-encoder", cfg.sampler.realign.include_encoder_blocks,
                 "also inject encoder-half attention blocks");
    app.add_flag("--renormalize-rows", cfg.sampler.realign.renormalize_rows,
                 "renormalize rows after column replacement");
    std::string refine_name = "none";
    app.add_option("--refine", refine_name, "none|focus|blur|both");
    app.add_option("--refine-topk", cfg.sampler.realign.refine_top_k, "focus: top-k per column");
    app.add_option("--refine-radius", cfg.sampler.realign.refine_radius, "blur radius");
    app.add_option("--refine-sigma", cfg.sampler.realign.refine_sigma, "blur sigma");

    // train family
    app.add_option("--train-steps", cfg.train.steps, "optimizer steps");
    app.add_option("--batch", cfg.train.batch, "batch size");
    app.add_option("--lr", cfg.train.lr, "peak learning rate (cosine decay)");
    app.add_option("--dropout", cfg.train.prompt_dropout, "prompt dropout rate");
    app.add_option("--gen-scenes", cfg.gen_scenes, "in-memory dataset size when --dataset absent");

    // benchmark family
    app.add_option("--scenario", cfg.scenario, "dominance|ambiguity");
    app.add_option("--cases", cfg.cases, "benchmark case count");
    app.add_option("--bench-seed", cfg.bench_seed, "benchmark construction seed");
    app.add_flag("--save-images", cfg.save_images, "write per-case images");

    auto* dataset_cmd = app.add_subcommand("dataset", "dataset operations");
    auto* dataset_gen = dataset_cmd->add_subcommand("gen", "generate a synthetic dataset");
    dataset_cmd->require_subcommand(1);

    auto* train_cmd = app.add_subcommand("train", "train the denoiser");
    int adapter_id = 0;
    auto* train_adapter_cmd =
        app.add_subcommand("train-adapter", "train one adapter with the denoiser frozen");
    train_adapter_cmd->add_option("adapter", adapter_id, "adapter index")->required();

    auto* sample_cmd = app.add_subcommand("sample", "draw samples");
    std::string prompt_str;
    std::vector<std::string> cond_masks, cond_boxes, binds;
    sample_cmd->add_option("--prompt", prompt_str, "space-separated vocabulary words");
    sample_cmd->add_option("--cond-mask", cond_masks, "layout mask (32x32 PGM), repeatable");
    sample_cmd->add_option("--cond-box", cond_boxes, "x0,y0,x1,y1,word grounding box, repeatable");
    sample_cmd->add_option("--bind", binds,
                           "comma-separated prompt token indices per condition, in order");
    sample_cmd->add_option("--count", cfg.count, "number of samples (seeds seed..seed+count-1)");
    sample_cmd->add_flag("--trace", cfg.emit_trace, "write per-step trace JSONL");

    auto* eval_cmd = app.add_subcommand("eval", "run benchmark metrics for one mode");
    auto* ablate_cmd =
        app.add_subcommand("ablate", "run every mode on one benchmark and report");
    auto* sweep_cmd = app.add_subcommand("sweep", "grid sweep over guidance weights");
    std::vector<double> w0_grid, wk_grid;
    std::vector<std::string> range_specs;
    sweep_cmd->add_option("--w0-grid", w0_grid, "unified weights to sweep");
    sweep_cmd->add_option("--wk-grid", wk_grid, "individual weights to sweep");
    sweep_cmd->add_option("--range", range_specs, "realign ranges start:end, repeatable");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        (void)app.exit(e);
        return 2;
    }

    try {
        seed_given = seed_opt->count() > 0;
        if (!seed_given) {
            if (const char* env = std::getenv("DR_SEED"))
                seed = std::strtoull(env, nullptr, 10);
        }
        cfg.sampler.seed = seed;
        cfg.train.seed = seed;

        cfg.mode = run_mode_from_name(mode_name);
        cfg.sampler.guidance.wk.assign(1, (float)wk_flag);
        if (refine_name == "none")
            cfg.sampler.realign.refine = refine_mode::none;
        else if (refine_name == "focus")
            cfg.sampler.realign.refine = refine_mode::confidence_focus;
        else if (refine_name == "blur")
            cfg.sampler.realign.refine = refine_mode::concentration_refine;
        else if (refine_name == "both")
            cfg.sampler.realign.refine = refine_mode::both;
        else
            throw config_error("unknown refine mode: " + refine_name);

        std::string echo = app.config_to_str(true, true);

        if (dataset_gen->parsed()) {
            op_dataset_gen(cfg);
            write_provenance(cfg, "dataset gen", echo);
        } else if (train_cmd->parsed()) {
            op_train(cfg);
            write_provenance(cfg, "train", echo);
        } else if (train_adapter_cmd->parsed()) {
            if (cfg.train.steps == 10000 && !app.count("--train-steps"))
                cfg.train.steps = 5000;  // adapter default
            cfg.train.prompt_dropout = app.count("--dropout") ? cfg.train.prompt_dropout : 0.0;
            op_train_adapter(cfg, adapter_id);
            write_provenance(cfg, "train-adapter", echo);
        } else if (sample_cmd->parsed()) {
            cfg.prompt_ids = parse_prompt_words(prompt_str);
            for (auto& m : cond_masks)
                cfg.conditions.push_back(load_mask_condition(m));
            for (auto& b : cond_boxes)
                cfg.conditions.push_back(parse_box_condition(b));
            for (auto& b : binds)
                cfg.bindings.push_back(parse_int_list(b, "--bind"));
            op_sample(cfg);
            write_provenance(cfg, "sample", echo);
        } else if (eval_cmd->parsed()) {
            auto rep = op_eval(cfg, {run_mode::baseline_joint, cfg.mode});
            printf("%s", format_report_table(rep).c_str());
            write_provenance(cfg, "eval", echo);
        } else if (ablate_cmd->parsed()) {
            auto rep = op_ablate(cfg);
            printf("%s", format_report_table(rep).c_str());
            write_provenance(cfg, "ablate", echo);
        } else if (sweep_cmd->parsed()) {
            std::vector<std::pair<int, int>> ranges;
            for (auto& r : range_specs)
                ranges.push_back(parse_range(r));
            op_sweep(cfg, w0_grid, wk_grid, ranges);
            write_provenance(cfg, "sweep", echo);
        }
        return 0;
    } catch (const config_error& e) {
        fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::invalid_argument& e) {
        fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const divergence_error& e) {
        fprintf(stderr, "divergence: %s\n", e.what());
        return 3;
    } catch (const io_error& e) {
        fprintf(stderr, "i/o error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

}  // namespace dr
