// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

// milcascade command-line entry point.
//
// Exit codes: 0 success, 1 user error (bad arguments, bad config, missing or
// malformed input), 2 numeric failure (divergence, infeasible calibration,
// failed gradient check).

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "config_file.hpp"
#include "milcascade/ablation.hpp"
#include "milcascade/checkpoint.hpp"
#include "milcascade/gradcheck.hpp"
#include "milcascade/infersim.hpp"
#include "milcascade/reports.hpp"
#include "milcascade/synthgen.hpp"
#include "milcascade/trainer.hpp"
#include "milcascade/version.hpp"

namespace fs = std::filesystem;
using namespace milcascade;

namespace {

struct Common {
    std::uint64_t seed = 0;
    std::string out;
    int jobs = 1;
};

struct SplitOpts {
    int fold = 0;
    double train = 0.8;
    double valid = 0.1;

    SplitFractions fractions() const { return {train, valid}; }
};

struct DminOpts {
    TrainConfig cfg = TrainConfig::defaults(TrainStage::kDmin);
    DminHyper hyper;
    std::string head = "cka";
};

struct LipnOpts {
    TrainConfig cfg = TrainConfig::defaults(TrainStage::kLipn);
    LipnHyper hyper;
    std::string manner = "mask";
};

// Options shared by every subcommand.
void add_common(CLI::App* s, Common& c) {
    s->add_option("--seed", c.seed, "Seed for all randomness");
    s->add_option("--out", c.out, "Output directory")->required();
    s->add_option("--jobs", c.jobs, "Parallel training runs")->check(CLI::PositiveNumber);
    // Consumed before parsing; declared so it shows up in --help.
    s->add_option("--config", "Flat key = value file; command-line values win")->configurable(false);
}

void add_split(CLI::App* s, SplitOpts& o) {
    s->add_option("--fold", o.fold, "Monte Carlo fold index")->check(CLI::NonNegativeNumber);
    s->add_option("--train-frac", o.train, "Training share per class");
    s->add_option("--valid-frac", o.valid, "Validation share per class");
}

void add_train_common(CLI::App* s, TrainConfig& c) {
    s->add_option("--momentum", c.momentum, "SGD momentum");
    s->add_option("--weight-decay", c.weight_decay, "L2 weight decay");
    s->add_option("--clip-norm", c.clip_norm, "Gradient-norm clip, 0 disables");
    s->add_option("--patience", c.patience, "Early-stopping patience in epochs, 0 disables");
}

void add_dmin(CLI::App* s, DminOpts& o) {
    TrainConfig& c = o.cfg;
    s->add_option("--epochs", c.epochs, "DMIN training epochs");
    s->add_option("--lr", c.learning_rate, "DMIN base learning rate");
    s->add_option("--q-dim", c.q_dim, "Projection width Q");
    s->add_option("--attn-dim", c.attn_dim, "Attention hidden width");
    s->add_option("--head", o.head, "Classifier head: cka, fc, mlp, ka-lite");
    s->add_option("--order", c.order, "Chebyshev order K");
    s->add_flag("--self-distill,!--no-self-distill", c.self_distill, "Train and score the student branch")
        ->default_str(c.self_distill ? "true" : "false");
    s->add_option("--r", c.r, "Target retention ratio");
    s->add_option("--tau", o.hyper.tau, "Gumbel temperature");
    s->add_option("--gamma", o.hyper.gamma, "Mask threshold");
    s->add_option("--topk", o.hyper.topk, "Clustering top-k");
    s->add_option("--alpha-cls", o.hyper.alphas.cls, "Teacher cross-entropy weight");
    s->add_option("--alpha-clu", o.hyper.alphas.clu, "Clustering weight");
    s->add_option("--alpha-dis1", o.hyper.alphas.dis1, "Representation distillation weight");
    s->add_option("--alpha-dis2", o.hyper.alphas.dis2, "Logit distillation weight");
    s->add_option("--alpha-rate", o.hyper.alphas.rate, "Retention penalty weight");
    add_train_common(s, c);
}

void add_lipn(CLI::App* s, LipnOpts& o) {
    s->add_option("--lipn-epochs", o.cfg.epochs, "LIPN training epochs");
    s->add_option("--lipn-lr", o.cfg.learning_rate, "LIPN base learning rate");
    s->add_option("--lipn-hidden", o.cfg.lipn_hidden, "LIPN hidden width");
    s->add_option("--manner", o.manner, "Distillation target: mask or attention");
    s->add_option("--beta1", o.hyper.beta1, "Mask agreement weight");
    s->add_option("--beta2", o.hyper.beta2, "Retention penalty weight");
}

void finalize(DminOpts& o) {
    o.cfg.head = parse_head_kind(o.head);
    o.hyper = dmin_hyper_for(o.cfg, o.hyper);
    o.hyper.validate();
    o.cfg.validate();
}

void finalize(LipnOpts& o, const TrainConfig& dmin) {
    o.cfg.manner = parse_distill_manner(o.manner);
    o.cfg.momentum = dmin.momentum;
    o.cfg.weight_decay = dmin.weight_decay;
    o.cfg.clip_norm = dmin.clip_norm;
    o.cfg.patience = dmin.patience;
    o.cfg.r = dmin.r;
    o.hyper = lipn_hyper_for(o.cfg, o.hyper);
    o.hyper.validate();
    o.cfg.validate();
}

/// Refuses output directories that hold one of the run's inputs.
void check_out_dir(const Common& c, const std::vector<fs::path>& inputs) {
    const fs::path out = fs::weakly_canonical(c.out);
    for (const auto& in : inputs) {
        if (in.empty()) continue;
        const fs::path dir = fs::is_directory(in) ? fs::weakly_canonical(in) : fs::weakly_canonical(in).parent_path();
        if (dir == out) throw UserError("--out '" + c.out + "' holds an input of this run; choose a fresh directory");
    }
    fs::create_directories(out);
}

std::vector<BagPair> load_data(const std::string& path) {
    if (path.empty()) throw UserError("--data is required");
    return read_dataset(path);
}

DminCheckpoint load_dmin(const std::string& path) {
    if (path.empty()) throw UserError("missing DMIN checkpoint: pass --dmin <file> (run train-dmin first)");
    if (!fs::exists(path)) throw UserError("missing DMIN checkpoint '" + path + "' (run train-dmin first)");
    return load_dmin_checkpoint(path);
}

LipnCheckpoint load_lipn(const std::string& path) {
    if (path.empty()) throw UserError("missing LIPN checkpoint: pass --lipn <file> (run train-lipn first)");
    if (!fs::exists(path)) throw UserError("missing LIPN checkpoint '" + path + "' (run train-lipn first)");
    return load_lipn_checkpoint(path);
}

StageCostModel load_costs(const std::string& path) {
    return path.empty() ? reference_cost_model() : load_cost_model(path);
}

SplitSpec make_split(const std::vector<BagPair>& bags, const Common& c, const SplitOpts& s) {
    SplitSpec split = monte_carlo_split(bags, s.fold, c.seed, s.fractions());
    split.fold_index = s.fold;
    return split;
}

std::vector<const BagPair*> held_out(const std::vector<BagPair>& bags, const SplitSpec& split) {
    return select_bags(bags, split.test_ids.empty() ? split.valid_ids : split.test_ids);
}

std::string safe_file_name(std::string id) {
    for (char& ch : id) {
        if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.')) ch = '_';
    }
    return id;
}

void write_manifest(const CLI::App& sub, const Common& c, const std::vector<std::string>& argv,
                    const std::string& config_path, const std::vector<std::string>& outputs) {
    const std::string resolved = sub.config_to_str(true, false);
    {
        std::ofstream cfg(fs::path(c.out) / "config.ini", std::ios::trunc);
        cfg << resolved;
    }
    nlohmann::ordered_json j;
    j["program"] = "milcascade";
    j["version"] = kVersion;
    j["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                 std::to_string(EIGEN_MINOR_VERSION);
    j["compiler"] = __VERSION__;
    j["command"] = sub.get_name();
    j["argv"] = argv;
    j["config_file"] = config_path;
    j["config_hash"] = hex_hash(fnv1a64(resolved));
    j["seed"] = c.seed;
    j["resolved_config"] = "config.ini";
    j["reproduce"] = "milcascade " + sub.get_name() + " --config <out>/config.ini";
    j["outputs"] = outputs;
    std::ofstream out(fs::path(c.out) / "manifest.json", std::ios::trunc);
    out << j.dump(2) << '\n';
}

FoldMetrics summarize(const std::vector<const BagPair*>& bags, const std::vector<InferenceResult>& results) {
    FoldMetrics m;
    std::vector<double> scores;
    std::vector<int> labels, predictions;
    double r = 0.0, t = 0.0;
    for (std::size_t i = 0; i < bags.size(); ++i) {
        scores.push_back(results[i].score());
        labels.push_back(bags[i]->label());
        predictions.push_back(results[i].predicted_label());
        r += results[i].r_realized;
        t += results[i].simulated_time;
    }
    const double n = static_cast<double>(bags.size());
    bool pos = false, neg = false;
    for (int l : labels) (l == 1 ? pos : neg) = true;
    if (pos && neg) m.auc = compute_auc(scores, labels);
    m.acc = accuracy(predictions, labels);
    m.r_hat = r / n;
    m.sim_time = t / n;
    return m;
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::string> raw(argv + 1, argv + argc);

    CLI::App app{"Two-stage dynamic multiple instance learning with low-resolution pre-screening", "milcascade"};
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    Common common;
    SplitOpts split_opts;
    DminOpts dmin;
    LipnOpts lipn;

    // synth
    SynthConfig synth;
    auto* s_synth = app.add_subcommand("synth", "Generate a synthetic paired-resolution dataset");
    add_common(s_synth, common);
    s_synth->add_option("--n-bags", synth.n_bags, "Number of bags, labels alternate");
    s_synth->add_option("--min-instances", synth.min_instances, "Smallest bag size");
    s_synth->add_option("--max-instances", synth.max_instances, "Largest bag size");
    s_synth->add_option("--d-hi", synth.d_hi, "High-resolution feature width");
    s_synth->add_option("--d-lo", synth.d_lo, "Low-resolution feature width");
    s_synth->add_option("--relevant-fraction", synth.relevant_fraction, "Share of signal instances per bag");
    s_synth->add_option("--separation", synth.class_separation, "Distance between the two class signal centres");
    s_synth->add_option("--lo-fidelity", synth.lo_fidelity,
                        "Linear-probe accuracy of relevance from low-resolution features");
    s_synth->add_option("--noise-sigma", synth.noise_sigma, "Isotropic instance noise");
    s_synth->add_option("--salience", synth.salience, "Offset of signal instances from background");
    s_synth->add_option("--extra-background", synth.extra_background_fraction,
                        "Extra background instances as a share of bag size");

    // train-dmin
    std::string data;
    bool export_attention = false;
    auto* s_dmin = app.add_subcommand("train-dmin", "Self-distillation training of DMIN");
    add_common(s_dmin, common);
    s_dmin->add_option("--data", data, "Dataset directory or bags.tsv");
    add_split(s_dmin, split_opts);
    add_dmin(s_dmin, dmin);
    s_dmin->add_flag("--export-attention", export_attention, "Write per-bag attention/mask CSVs for held-out bags");

    // train-lipn
    std::string dmin_path, lipn_path;
    bool export_screening = false;
    auto* s_lipn = app.add_subcommand("train-lipn", "Cross-distill LIPN from a frozen DMIN");
    add_common(s_lipn, common);
    s_lipn->add_option("--data", data, "Dataset directory or bags.tsv");
    s_lipn->add_option("--dmin", dmin_path, "DMIN checkpoint");
    add_split(s_lipn, split_opts);
    add_lipn(s_lipn, lipn);
    add_train_common(s_lipn, dmin.cfg);
    s_lipn->add_flag("--export-screening", export_screening, "Write per-bag keep/discard CSVs for held-out bags");

    // eval
    std::string mode = "hdmil", costs_path, subset = "test", kept_mask = "lipn";
    bool teacher = false;
    auto* s_eval = app.add_subcommand("eval", "Cascade or DMIN-only inference with simulated stage times");
    add_common(s_eval, common);
    s_eval->add_option("--data", data, "Dataset directory or bags.tsv");
    s_eval->add_option("--dmin", dmin_path, "DMIN checkpoint");
    s_eval->add_option("--lipn", lipn_path, "LIPN checkpoint (hdmil mode)");
    s_eval->add_option("--mode", mode, "hdmil or dmin")->check(CLI::IsMember({"hdmil", "dmin"}));
    s_eval->add_option("--costs", costs_path, "Cost-model JSON (default: reference calibration)");
    s_eval->add_option("--subset", subset, "test, valid or all")->check(CLI::IsMember({"test", "valid", "all"}));
    s_eval->add_option("--kept-mask", kept_mask, "Student masks on kept instances: lipn, ones, recompute")
        ->check(CLI::IsMember({"lipn", "ones", "recompute"}));
    s_eval->add_flag("--teacher", teacher, "DMIN-only mode: score with the teacher branch");
    add_split(s_eval, split_opts);

    // ablate
    std::string preset = "table3";
    int folds = 5;
    auto* s_ablate = app.add_subcommand("ablate", "Run an ablation grid over shared folds");
    add_common(s_ablate, common);
    s_ablate->add_option("--data", data, "Dataset directory or bags.tsv");
    s_ablate->add_option("--preset", preset, "table3, table4, order, table5 or fig4");
    s_ablate->add_option("--folds", folds, "Monte Carlo folds")->check(CLI::PositiveNumber);
    s_ablate->add_option("--train-frac", split_opts.train);
    s_ablate->add_option("--valid-frac", split_opts.valid);
    s_ablate->add_option("--costs", costs_path, "Cost-model JSON (default: reference calibration)");
    add_dmin(s_ablate, dmin);
    add_lipn(s_ablate, lipn);

    // sweep-r
    std::vector<double> r_values{0.1, 0.3, 0.5, 0.7, 0.9};
    auto* s_sweep = app.add_subcommand("sweep-r", "Train per retention ratio and sweep inference cost");
    add_common(s_sweep, common);
    s_sweep->add_option("--data", data, "Dataset directory or bags.tsv");
    s_sweep->add_option("--r-values", r_values, "Retention targets")->delimiter(',');
    s_sweep->add_option("--costs", costs_path, "Cost-model JSON (default: reference calibration)");
    add_split(s_sweep, split_opts);
    add_dmin(s_sweep, dmin);
    add_lipn(s_sweep, lipn);

    // calibrate
    std::vector<double> baseline(kReferenceBaselineTimes.begin(), kReferenceBaselineTimes.end());
    std::vector<double> reduced(kReferenceReducedTimes.begin(), kReferenceReducedTimes.end());
    double keep = kReferenceKeepFraction;
    auto* s_cal = app.add_subcommand("calibrate", "Fit a staged cost model from two measured operating points");
    add_common(s_cal, common);
    s_cal->add_option("--baseline", baseline, "screen,crop,feature,classify seconds without screening")
        ->delimiter(',')
        ->expected(4);
    s_cal->add_option("--reduced", reduced, "screen,crop,feature,classify seconds with screening")
        ->delimiter(',')
        ->expected(4);
    s_cal->add_option("--keep", keep, "Kept instance fraction of the reduced run");

    // grad-check
    std::vector<std::string> targets{"dmin", "cka", "fc", "mlp", "ka-lite", "lipn"};
    double tolerance = 0.0;
    int seeds = 20;
    auto* s_grad = app.add_subcommand("grad-check", "Compare analytic gradients with central differences");
    add_common(s_grad, common);
    s_grad->add_option("--target", targets, "dmin, cka, fc, mlp, ka-lite, lipn")->delimiter(',');
    s_grad->add_option("--tolerance", tolerance, "Max relative error; 0 uses per-target defaults");
    s_grad->add_option("--seeds", seeds, "Random instances per target")->check(CLI::PositiveNumber);

    std::vector<std::string> args;
    std::string config_path;
    try {
        auto expanded = cli::expand_config(raw);
        args = std::move(expanded.args);
        config_path = std::move(expanded.config_path);
    } catch (const UserError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        if (rc != 0 && app.get_subcommands().empty()) std::cerr << app.help();
        return rc == 0 ? 0 : 1;
    }

    CLI::App* sub = app.get_subcommands().front();
    std::vector<std::string> outputs;
    try {
        if (sub == s_synth) {
            synth.seed = common.seed;
            synth.validate();
            check_out_dir(common, {});
            write_dataset(generate(synth), common.out);
            outputs = {"bags.tsv", "features/"};
        } else if (sub == s_dmin) {
            finalize(dmin);
            check_out_dir(common, {data});
            const auto bags = load_data(data);
            const SplitSpec split = make_split(bags, common, split_opts);
            TrainConfig cfg = dmin.cfg;
            cfg.seed = fold_seed(common.seed, split_opts.fold);
            const DminRun run = train_dmin(bags, split, cfg, dmin.hyper);
            const fs::path out = common.out;
            save_dmin_checkpoint(out / "dmin.ckpt", run.params, run.hyper);
            write_metrics_csv(out / "metrics.csv", {{"dmin", hex_hash(cfg.hash()), run.metrics}});
            write_timing_csv(out / "timing.csv", {{"dmin", hex_hash(cfg.hash()), run.metrics}});
            write_dmin_history_csv(out / "history.csv", run.history);
            outputs = {"dmin.ckpt", "metrics.csv", "timing.csv", "history.csv"};
            if (export_attention) {
                for (const BagPair* bag : held_out(bags, split)) {
                    write_attention_csv(out / "attention" / (safe_file_name(bag->id()) + ".csv"), *bag,
                                        dmin_forward_eval(run.params, bag->hi().values(), run.hyper));
                }
                outputs.push_back("attention/");
            }
            std::cout << "held-out AUC " << format_number(run.metrics.auc) << ", ACC " << format_number(run.metrics.acc)
                      << ", retention " << format_number(run.metrics.r_hat) << '\n';
        } else if (sub == s_lipn) {
            const DminCheckpoint ck = load_dmin(dmin_path);
            finalize(lipn, dmin.cfg);
            lipn.cfg.r = ck.hyper.r;
            lipn.hyper.r = ck.hyper.r;
            check_out_dir(common, {data, dmin_path});
            const auto bags = load_data(data);
            const SplitSpec split = make_split(bags, common, split_opts);
            TrainConfig cfg = lipn.cfg;
            cfg.seed = fold_seed(common.seed, split_opts.fold);
            const LipnRun run = train_lipn(bags, split, ck.params, ck.hyper, cfg, lipn.hyper);
            const fs::path out = common.out;
            save_lipn_checkpoint(out / "lipn.ckpt", run.params, run.hyper);
            write_metrics_csv(out / "metrics.csv", {{"lipn", hex_hash(cfg.hash()), run.metrics}});
            write_timing_csv(out / "timing.csv", {{"lipn", hex_hash(cfg.hash()), run.metrics}});
            write_lipn_history_csv(out / "history.csv", run.history);
            outputs = {"lipn.ckpt", "metrics.csv", "timing.csv", "history.csv"};
            if (export_screening) {
                for (const BagPair* bag : held_out(bags, split)) {
                    const Matrix p = lipn_forward(bag->lo().values(), run.params);
                    write_screening_csv(out / "screening" / (safe_file_name(bag->id()) + ".csv"), *bag, p,
                                        lipn_binarize(p, run.hyper.gamma));
                }
                outputs.push_back("screening/");
            }
            std::cout << "held-out mask agreement " << format_number(run.metrics.agreement) << ", retention "
                      << format_number(run.metrics.r_hat) << ", cascade AUC " << format_number(run.metrics.auc)
                      << '\n';
        } else if (sub == s_eval) {
            const DminCheckpoint dck = load_dmin(dmin_path);
            const bool cascade = mode == "hdmil";
            LipnCheckpoint lck;
            if (cascade) lck = load_lipn(lipn_path);
            check_out_dir(common, {data, dmin_path, lipn_path});
            const StageCostModel costs = load_costs(costs_path);
            const auto bags = load_data(data);
            std::vector<const BagPair*> chosen;
            if (subset == "all") {
                for (const auto& b : bags) chosen.push_back(&b);
            } else {
                const SplitSpec split = make_split(bags, common, split_opts);
                chosen = select_bags(bags, subset == "test" ? split.test_ids : split.valid_ids);
            }
            if (chosen.empty()) throw UserError("the selected subset holds no bags");
            InferenceOptions opts;
            opts.policy = kept_mask == "ones"        ? KeptMaskPolicy::kAllOnes
                          : kept_mask == "recompute" ? KeptMaskPolicy::kDminRecompute
                                                     : KeptMaskPolicy::kLipnMasks;
            opts.teacher_branch = teacher;
            std::vector<BagInference> rows;
            std::vector<InferenceResult> results;
            for (const BagPair* bag : chosen) {
                InferenceResult r = cascade ? infer_hdmil(*bag, dck.params, lck.params, dck.hyper, costs, opts)
                                            : infer_dmin_only(*bag, dck.params, dck.hyper, costs, opts);
                results.push_back(r);
                rows.push_back({bag->id(), bag->label(), std::move(r)});
            }
            const fs::path out = common.out;
            write_inference_csv(out / "inference.csv", rows);
            FoldMetrics m = summarize(chosen, results);
            m.fold = split_opts.fold;
            write_metrics_csv(out / "metrics.csv", {{"eval-" + mode, hex_hash(fnv1a64(mode + kept_mask)), m}});
            outputs = {"inference.csv", "metrics.csv"};
            std::cout << mode << " AUC " << format_number(m.auc) << ", ACC " << format_number(m.acc)
                      << ", retention " << format_number(m.r_hat) << ", simulated s/bag " << format_number(m.sim_time)
                      << '\n';
        } else if (sub == s_ablate) {
            finalize(dmin);
            finalize(lipn, dmin.cfg);
            check_out_dir(common, {data});
            const auto bags = load_data(data);
            AblationOptions o;
            o.folds = folds;
            o.seed = common.seed;
            o.jobs = common.jobs;
            o.fractions = split_opts.fractions();
            o.dmin_hyper = dmin.hyper;
            o.lipn_hyper = lipn.hyper;
            o.costs = load_costs(costs_path);
            const auto rows = run_ablation(bags, ablation_preset(preset, dmin.cfg, lipn.cfg), o);
            const fs::path out = common.out;
            write_metrics_csv(out / "metrics.csv", rows);
            write_timing_csv(out / "timing.csv", rows);
            outputs = {"metrics.csv", "timing.csv"};
            for (std::size_t i = 0; i < rows.size(); i += static_cast<std::size_t>(folds)) {
                std::vector<double> aucs;
                for (int f = 0; f < folds; ++f) aucs.push_back(rows[i + static_cast<std::size_t>(f)].metrics.auc);
                const MeanStd ms = mean_std(aucs);
                std::cout << rows[i].config << ": AUC " << format_number(ms.mean) << " +- " << format_number(ms.std)
                          << '\n';
            }
        } else if (sub == s_sweep) {
            finalize(dmin);
            finalize(lipn, dmin.cfg);
            check_out_dir(common, {data});
            const auto bags = load_data(data);
            const SplitSpec split = make_split(bags, common, split_opts);
            std::vector<RetentionModel> models;
            std::vector<AblationRow> train_rows;
            for (double r : r_values) {
                TrainConfig dc = dmin.cfg, lc = lipn.cfg;
                dc.r = r;
                lc.r = r;
                dc.seed = lc.seed = fold_seed(common.seed, split_opts.fold);
                const DminRun dr = train_dmin(bags, split, dc, dmin_hyper_for(dc, dmin.hyper));
                const LipnRun lr = train_lipn(bags, split, dr.params, dr.hyper, lc, lipn_hyper_for(lc, lipn.hyper));
                models.push_back({r, dr.params, lr.params, dr.hyper});
                train_rows.push_back({"r" + format_number(r), hex_hash(dc.hash()), lr.metrics});
            }
            const auto rows = sweep_retention(held_out(bags, split), models, load_costs(costs_path));
            const fs::path out = common.out;
            write_sweep_csv(out / "sweep.csv", rows);
            write_timing_csv(out / "timing.csv", train_rows);
            outputs = {"sweep.csv", "timing.csv"};
            for (const auto& r : rows) {
                std::cout << "r=" << format_number(r.r) << " retention " << format_number(r.hdmil_retention)
                          << " time " << format_number(r.hdmil_time) << " (dmin-only " << format_number(r.dmin_time)
                          << ")\n";
            }
        } else if (sub == s_cal) {
            check_out_dir(common, {});
            std::array<double, kStages> b{}, rd{};
            std::copy(baseline.begin(), baseline.end(), b.begin());
            std::copy(reduced.begin(), reduced.end(), rd.begin());
            const StageCostModel m = calibrate_costs(b, rd, keep);
            const fs::path out = common.out;
            save_cost_model(m, out / "cost_model.json");
            const StageTimes base = m.simulate(false, 1.0, 1.0);
            const StageTimes red = m.simulate(true, 1.0, keep);
            std::ofstream csv(out / "calibration.csv", std::ios::trunc);
            csv << "stage,fixed,per_patch,baseline,reduced,saving\n";
            for (int s = 0; s < kStages; ++s) {
                const auto i = static_cast<std::size_t>(s);
                const double saving = base.seconds[i] > 0.0 ? 1.0 - red.seconds[i] / base.seconds[i] : 0.0;
                csv << to_string(static_cast<Stage>(s)) << ',' << format_number(m.fixed[i]) << ','
                    << format_number(m.per_patch[i]) << ',' << format_number(base.seconds[i]) << ','
                    << format_number(red.seconds[i]) << ',' << format_number(saving) << '\n';
            }
            const double total_saving = 1.0 - red.total() / base.total();
            csv << "total,,," << format_number(base.total()) << ',' << format_number(red.total()) << ','
                << format_number(total_saving) << '\n';
            outputs = {"cost_model.json", "calibration.csv"};
            std::cout << "total " << format_number(base.total()) << " s -> " << format_number(red.total())
                      << " s, reduction " << format_number(100.0 * total_saving) << "%\n";
        } else if (sub == s_grad) {
            check_out_dir(common, {});
            std::ofstream csv(fs::path(common.out) / "gradcheck.csv", std::ios::trunc);
            csv << "target,seed,max_rel_error,worst_tensor,tolerance,passed\n";
            bool all = true;
            for (const auto& name : targets) {
                const GradTarget t = parse_grad_target(name);
                const double tol =
                    tolerance > 0.0 ? tolerance : (t == GradTarget::kDmin || t == GradTarget::kLipn ? 1e-4 : 1e-6);
                double worst = 0.0;
                for (int k = 0; k < seeds; ++k) {
                    GradCheckOptions o;
                    o.seed = derive_seed(common.seed, {static_cast<std::uint64_t>(k)});
                    const GradCheckReport rep = grad_check(t, tol, o);
                    worst = std::max(worst, rep.max_rel_error);
                    all = all && rep.passed;
                    csv << name << ',' << k << ',' << format_number(rep.max_rel_error) << ',' << rep.worst_tensor
                        << ',' << format_number(tol) << ',' << (rep.passed ? 1 : 0) << '\n';
                }
                std::cout << name << ": max relative error " << format_number(worst) << " (tolerance "
                          << format_number(tol) << ")\n";
            }
            outputs = {"gradcheck.csv"};
            if (!all) {
                write_manifest(*sub, common, raw, config_path, outputs);
                std::cerr << "error: gradient check failed\n";
                return 2;
            }
        }
        write_manifest(*sub, common, raw, config_path, outputs);
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const UserError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
