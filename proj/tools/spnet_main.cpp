#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "spnet/allocator.hpp"
#include "spnet/data.hpp"
#include "spnet/model.hpp"
#include "spnet/pruner.hpp"
#include "spnet/sensitivity.hpp"
#include "spnet/serialize.hpp"
#include "spnet/trainer.hpp"
#include "spnet/verify.hpp"

using json = nlohmann::json;
using namespace spnet;

namespace {

constexpr int kExitUsage = 64;
constexpr int kExitNoInput = 66;
constexpr int kExitGuaranteeFail = 2;
constexpr int kExitInconclusive = 3;

struct DataOptions {
    std::string mnist_dir;
    std::string csv_path;
    std::string label_col = "label";
    std::string synth;
    std::size_t synth_n = 2048;
    std::size_t limit = 0;
};

void add_data_options(CLI::App* cmd, DataOptions& d) {
    cmd->add_option("--mnist", d.mnist_dir, "Directory with the four MNIST IDX files");
    cmd->add_option("--csv", d.csv_path, "CSV dataset (header row)");
    cmd->add_option("--label-col", d.label_col, "CSV label column name");
    cmd->add_option("--synth", d.synth,
                    "Synthetic activations, e.g. uniform:dim=16 or pathological:k=0,mass=0.001,dim=32");
    cmd->add_option("--synth-n", d.synth_n, "Synthetic sample count");
    cmd->add_option("--limit", d.limit, "Use only the first N samples");
}

Dataset apply_limit(Dataset ds, std::size_t limit) {
    if (limit == 0 || limit >= ds.count()) return ds;
    std::vector<std::size_t> idx(limit);
    for (std::size_t i = 0; i < limit; ++i) idx[i] = i;
    return subset(ds, idx);
}

Dataset load_split(const DataOptions& d, bool test_split, std::uint64_t seed) {
    if (!d.mnist_dir.empty()) {
        const std::string img =
            d.mnist_dir + (test_split ? "/t10k-images-idx3-ubyte" : "/train-images-idx3-ubyte");
        const std::string lab =
            d.mnist_dir + (test_split ? "/t10k-labels-idx1-ubyte" : "/train-labels-idx1-ubyte");
        Dataset ds = load_idx(img, lab);
        ds.split = test_split ? "test" : "train";
        return apply_limit(std::move(ds), d.limit);
    }
    if (!d.csv_path.empty()) {
        return apply_limit(load_csv(d.csv_path, d.label_col), d.limit);
    }
    if (!d.synth.empty()) {
        // distinct stream for held-out synthetic data
        Dataset ds = synth_activations(d.synth_n, parse_synth_spec(d.synth), seed + (test_split ? 1 : 0));
        // a learnable labeling so classification flows work end to end:
        // the class is the argmax of the first few coordinates
        const std::size_t dim = ds.inputs.dim(1);
        const std::size_t classes = std::min<std::size_t>(dim, 4);
        ds.labels.resize(ds.count());
        for (std::size_t i = 0; i < ds.count(); ++i) {
            std::size_t arg = 0;
            for (std::size_t c = 1; c < classes; ++c) {
                if (ds.inputs[i * dim + c] > ds.inputs[i * dim + arg]) arg = c;
            }
            ds.labels[i] = static_cast<int>(arg);
        }
        return ds;
    }
    throw std::invalid_argument("no dataset given: use --mnist, --csv, or --synth");
}

Dataset shaped_for(const NetworkModel& model, Dataset ds) {
    if (ds.sample_shape() == model.input_shape) return ds;
    return with_sample_shape(ds, model.input_shape);
}

std::string iso_now() {
    char buf[32];
    const std::time_t t = std::time(nullptr);
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

void write_json(const std::string& path, const json& j) {
    if (const auto dir = std::filesystem::path(path).parent_path(); !dir.empty()) {
        std::filesystem::create_directories(dir);
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot write " + path);
    out << j.dump(2) << "\n";
}

json file_entry(const std::string& path) {
    return json{{"path", path}, {"sha256", sha256_file(path)}};
}

// Every run records the argv it can be replayed from plus output hashes.
void write_run_manifest(const std::string& out_dir, const std::string& subcommand,
                        const std::vector<std::string>& argv, const std::vector<std::string>& outputs) {
    json j;
    j["tool"] = "spnet";
    j["subcommand"] = subcommand;
    j["argv"] = argv;
    j["written"] = iso_now();
    j["outputs"] = json::array();
    for (const std::string& p : outputs) j["outputs"].push_back(file_entry(p));
    write_json(out_dir.empty() ? ("run-" + subcommand + ".json")
                               : (out_dir + "/run-" + subcommand + ".json"),
               j);
}

json sensitivity_json(const SensitivityReport& rep) {
    json j;
    j["calib_size"] = rep.calib_size;
    j["K"] = rep.K;
    j["K_prime"] = rep.K_prime;
    j["layers"] = json::array();
    for (const LayerSensitivity& l : rep.layers) {
        json e;
        e["producer"] = l.producer;
        e["consumer"] = l.consumer;
        e["eta"] = l.eta;
        e["units"] = l.units;
        e["s"] = l.s;
        e["s_sum"] = l.s_sum;
        e["p"] = l.p;
        e["all_zero"] = l.all_zero;
        e["nonnegative"] = l.nonnegative;
        j["layers"].push_back(std::move(e));
    }
    return j;
}

struct PruneSummary {
    double pr = 0.0;  // % parameters pruned
    double fr = 0.0;  // % multiply-accumulates removed
    std::size_t params_before = 0, params_after = 0;
    std::size_t macs_before = 0, macs_after = 0;
};

PruneSummary summarize_prune(const NetworkModel& before, const NetworkModel& after) {
    PruneSummary s;
    s.params_before = size_of(before);
    s.params_after = size_of(after);
    s.macs_before = mac_count(before);
    s.macs_after = mac_count(compact(after));
    s.pr = 100.0 * (1.0 - double(s.params_after) / double(s.params_before));
    s.fr = 100.0 * (1.0 - double(s.macs_after) / double(s.macs_before));
    return s;
}

json prune_outcome_json(const PruneOutcome& out, const PruneSummary& s) {
    json j;
    j["pr_percent"] = s.pr;
    j["fr_percent"] = s.fr;
    j["params_before"] = s.params_before;
    j["params_after"] = s.params_after;
    j["macs_before"] = s.macs_before;
    j["macs_after"] = s.macs_after;
    j["layers"] = json::array();
    for (const LayerPruneResult& l : out.layers) {
        json e;
        e["producer"] = l.producer;
        e["kept"] = l.kept;
        e["multiplicity"] = l.multiplicity;
        e["reweight"] = l.reweight;
        e["unique_kept"] = l.unique_kept;
        e["realized_m"] = l.realized_m;
        e["incompressible"] = l.incompressible;
        j["layers"].push_back(std::move(e));
    }
    return j;
}

NetworkModel build_preset(const std::string& preset, std::uint64_t seed) {
    if (preset == "lenet300") return make_lenet300(seed);
    if (preset == "lenet5") return make_lenet5(seed);
    if (preset.rfind("mlp:", 0) == 0) {
        std::vector<std::size_t> dims;
        std::stringstream ss(preset.substr(4));
        std::string part;
        while (std::getline(ss, part, '-')) dims.push_back(std::stoul(part));
        return make_mlp(dims, seed);
    }
    throw std::invalid_argument("unknown preset: " + preset +
                                " (want lenet300, lenet5, or mlp:IN-H1-...-OUT)");
}

TrainConfig preset_train_config(const std::string& preset, bool finetune_phase) {
    if (preset == "lenet5") return finetune_phase ? lenet5_finetune_config() : lenet5_train_config();
    return finetune_phase ? lenet300_finetune_config() : lenet300_train_config();
}

// Sensitivity report, amplification profile, and budget inputs bundled for
// the allocate/prune flows.
struct AllocContext {
    SensitivityReport report;
    DeltaProfile profile;
    std::vector<LayerBudgetInput> inputs;
    std::size_t total_filters = 0;
};

AllocContext make_alloc_context(const NetworkModel& model, const Dataset& calib, double K, double tau) {
    AllocContext ctx;
    ctx.report = compute_report(model, calib, K);
    ctx.profile = delta_profile(model, calib, tau);
    ctx.inputs = budget_inputs(model, ctx.report, ctx.profile);
    for (const auto& l : ctx.inputs) ctx.total_filters += l.eta;
    return ctx;
}

// Parameters surviving when each layer keeps its top-n feature maps.
std::size_t params_for_allocation(const NetworkModel& model, const AllocContext& ctx,
                                  const Allocation& alloc) {
    NetworkModel probe = model;
    const auto pairs = prunable_pairs(model);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& sens = ctx.report.layers[i];
        const auto keep = top_k_by_sensitivity(sens.s, alloc.layers[i].n);
        std::vector<bool> kept(sens.eta, false);
        for (std::size_t j : keep) kept[j] = true;
        for (std::size_t j = 0; j < sens.eta; ++j) {
            if (kept[j]) continue;
            zero_producer_filter(probe.layers[pairs[i].producer], j);
            zero_consumer_channel(probe.layers[pairs[i].consumer], pairs[i], j);
        }
    }
    return size_of(probe);
}

// Largest feature-map budget whose allocation still meets the target prune
// ratio (surviving parameters are monotone in the budget).
Allocation allocate_for_ratio(const NetworkModel& model, const AllocContext& ctx, double ratio,
                              double delta, double K) {
    const std::size_t params_before = size_of(model);
    const auto target = static_cast<std::size_t>(double(params_before) * (1.0 - ratio));
    std::size_t lo = ctx.inputs.size(), hi = ctx.total_filters;
    std::optional<Allocation> best;
    while (lo <= hi) {
        const std::size_t mid = lo + (hi - lo) / 2;
        Allocation alloc = allocate(ctx.inputs, mid, delta, K);
        if (params_for_allocation(model, ctx, alloc) <= target) {
            best = std::move(alloc);
            if (mid == hi) break;
            lo = mid + 1;
        } else {
            if (mid == lo) break;
            hi = mid - 1;
        }
    }
    if (!best) return allocate(ctx.inputs, ctx.inputs.size(), delta, K);
    return *best;
}

json allocation_json(const Allocation& a) {
    json j;
    j["eps_star"] = a.eps_star;
    j["budget"] = a.budget;
    j["total"] = a.total;
    j["feasible"] = a.feasible;
    if (!a.feasible) j["min_achievable"] = a.min_achievable;
    j["layers"] = json::array();
    for (const LayerAllocation& l : a.layers) {
        j["layers"].push_back(json{{"eps", l.eps_layer}, {"m", l.m}, {"n", l.n}});
    }
    j["trace"] = json::array();
    for (const auto& [eps, tot] : a.trace) j["trace"].push_back(json{{"eps", eps}, {"total", tot}});
    return j;
}

std::vector<PrunePlan> plans_from_allocation(const AllocContext& ctx, const Allocation& alloc,
                                             double delta, PruneMode mode,
                                             std::optional<std::size_t> k, double K,
                                             std::uint64_t seed) {
    std::size_t eta_star = 1;
    for (const auto& l : ctx.inputs) eta_star = std::max(eta_star, l.eta);
    const double per_layer_delta = delta / double(ctx.inputs.size());
    std::vector<PrunePlan> plans;
    for (std::size_t i = 0; i < ctx.report.layers.size(); ++i) {
        plans.push_back(make_plan(ctx.report.layers[i], alloc.layers[i].eps_layer, per_layer_delta,
                                  mode, k, K, eta_star, seed));
    }
    return plans;
}

int run_verify(const NetworkModel& model, const std::optional<NetworkModel>& pruned,
               const Dataset& fresh, double eps, double delta, std::size_t trials,
               std::uint64_t seed, double K, std::size_t calib_size, const std::string& out_dir) {
    const Dataset calib = draw_calibration(fresh, std::max<std::size_t>(calib_size, 1), seed + 17);
    const SensitivityReport report = compute_report(model, calib, K);
    const auto pairs = prunable_pairs(model);
    const double per_layer_delta = delta / double(pairs.size());

    GuaranteeVerdict verdict;
    verdict.delta = delta;
    bool all_pass = true, low_power = false;
    for (const auto& pair : pairs) {
        const LayerCheck c =
            check_layer(model, pair.producer, report, eps, per_layer_delta, trials, seed, fresh);
        all_pass &= c.pass;
        low_power |= c.low_power;
        verdict.layers.push_back(c);
    }
    if (pruned) {
        verdict.network = check_network(model, *pruned, eps, fresh);
        const double slack = binomial_slack(delta, fresh.count());
        all_pass &= verdict.network.violation_rate <= delta + slack;
    }
    verdict.pass = all_pass;

    json j;
    j["eps"] = eps;
    j["delta"] = delta;
    j["trials"] = trials;
    j["pass"] = verdict.pass;
    j["layers"] = json::array();
    for (const LayerCheck& c : verdict.layers) {
        j["layers"].push_back(json{{"producer", c.producer},
                                   {"m", c.m},
                                   {"violation_rate", c.violation_rate},
                                   {"delta", c.delta},
                                   {"slack", c.slack},
                                   {"pass", c.pass},
                                   {"denominator", c.denominator},
                                   {"low_power", c.low_power}});
    }
    if (pruned) {
        j["network"] = json{{"inputs", verdict.network.inputs},
                            {"violation_rate", verdict.network.violation_rate},
                            {"eps", verdict.network.eps},
                            {"floored_entries", verdict.network.floored_entries}};
    }
    write_json(out_dir.empty() ? "verdict.json" : out_dir + "/verdict.json", j);
    for (const LayerCheck& c : verdict.layers) {
        std::cout << "layer " << c.producer << ": m=" << c.m << " violation_rate=" << c.violation_rate
                  << " bound=" << c.delta << "+" << c.slack << (c.pass ? " PASS" : " FAIL") << "\n";
    }
    if (pruned) {
        std::cout << "network: violation_rate=" << verdict.network.violation_rate << " at eps=" << eps
                  << "\n";
    }
    std::cout << (verdict.pass ? "verdict: PASS" : "verdict: FAIL") << "\n";
    if (!verdict.pass) return kExitGuaranteeFail;
    if (low_power) return kExitInconclusive;
    return 0;
}

int dispatch(std::vector<std::string> args);

int cmd_replay(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw io_error("cannot open " + manifest_path);
    json j;
    in >> j;
    std::vector<std::string> argv = j.at("argv").get<std::vector<std::string>>();
    std::cout << "replaying " << j.at("subcommand").get<std::string>() << "\n";
    return dispatch(std::move(argv));
}

int dispatch(std::vector<std::string> args) {
    CLI::App app{"Structured pruning with sampled filter importance"};
    app.require_subcommand(1);

    struct TrainArgs {
        DataOptions data;
        std::string preset = "lenet300";
        std::string model_in, model_out = "model.spnet", history_out, out_dir;
        TrainConfig cfg;
        bool frozen_support = true;
        std::uint64_t seed = 0;
    } ta, fa;

    const auto add_train_options = [](CLI::App* cmd, TrainArgs& a, bool finetune_phase) {
        add_data_options(cmd, a.data);
        cmd->add_option("--preset", a.preset, "lenet300 | lenet5 | mlp:IN-H1-...-OUT");
        cmd->add_option("--out", a.model_out, "Output model path");
        cmd->add_option("--out-dir", a.out_dir, "Directory for manifests");
        cmd->add_option("--history", a.history_out, "Per-epoch history JSON");
        cmd->add_option("--seed", a.seed, "Master seed");
        cmd->add_option("--epochs", a.cfg.epochs);
        cmd->add_option("--batch-size", a.cfg.batch_size);
        cmd->add_option("--lr", a.cfg.lr);
        cmd->add_option("--momentum", a.cfg.momentum);
        cmd->add_option("--weight-decay", a.cfg.weight_decay);
        cmd->add_option("--lr-decay-factor", a.cfg.lr_decay_factor);
        cmd->add_option("--lr-decay-epochs", a.cfg.lr_decay_epochs);
        cmd->add_flag("--verbose", a.cfg.verbose);
        if (finetune_phase) {
            cmd->add_option("--model", a.model_in, "Model to fine-tune")->required();
            cmd->add_flag("!--no-frozen-support", a.frozen_support, "Allow pruned channels to regrow");
        } else {
            cmd->add_option("--model", a.model_in, "Resume from an existing model");
        }
    };

    CLI::App* train_cmd = app.add_subcommand("train", "Train a model");
    add_train_options(train_cmd, ta, false);
    CLI::App* finetune_cmd = app.add_subcommand("finetune", "Fine-tune a (pruned) model");
    add_train_options(finetune_cmd, fa, true);

    struct EvalArgs {
        DataOptions data;
        std::string model, out_dir;
        std::uint64_t seed = 0;
    } ea;
    CLI::App* eval_cmd = app.add_subcommand("eval", "Report test error / loss");
    eval_cmd->add_option("--model", ea.model)->required();
    eval_cmd->add_option("--out-dir", ea.out_dir);
    eval_cmd->add_option("--seed", ea.seed);
    add_data_options(eval_cmd, ea.data);

    struct SensArgs {
        DataOptions data;
        std::string model, out = "sensitivity.json", out_dir;
        std::size_t calib_size = 0;
        double K = 1.0, K_prime = 1.0;
        bool suggest = false;
        std::uint64_t seed = 0;
    } sa;
    CLI::App* sens_cmd = app.add_subcommand("sensitivity", "Empirical feature-map sensitivities");
    sens_cmd->add_option("--model", sa.model)->required();
    sens_cmd->add_option("--out", sa.out);
    sens_cmd->add_option("--out-dir", sa.out_dir);
    sens_cmd->add_option("--calib-size", sa.calib_size, "0 = bound-derived default");
    sens_cmd->add_option("--K", sa.K);
    sens_cmd->add_option("--K-prime", sa.K_prime);
    sens_cmd->add_flag("--suggest-K", sa.suggest, "Fit the tail condition and report a K estimate");
    sens_cmd->add_option("--seed", sa.seed);
    add_data_options(sens_cmd, sa.data);

    struct AllocArgs {
        DataOptions data;
        std::string model, out = "allocation.json", out_dir;
        std::size_t budget = 0;
        double prune_ratio = 0.0;
        double delta = 1e-6, K = 1.0, tau = 1e-12;
        std::size_t calib_size = 0;
        std::uint64_t seed = 0;
    } aa;
    CLI::App* alloc_cmd = app.add_subcommand("allocate", "Budget allocation via eps search");
    alloc_cmd->add_option("--model", aa.model)->required();
    alloc_cmd->add_option("--budget", aa.budget, "Total feature maps to keep");
    alloc_cmd->add_option("--prune-ratio", aa.prune_ratio, "Target parameter prune ratio in (0,1)");
    alloc_cmd->add_option("--delta", aa.delta);
    alloc_cmd->add_option("--K", aa.K);
    alloc_cmd->add_option("--tau", aa.tau);
    alloc_cmd->add_option("--calib-size", aa.calib_size);
    alloc_cmd->add_option("--out", aa.out);
    alloc_cmd->add_option("--out-dir", aa.out_dir);
    alloc_cmd->add_option("--seed", aa.seed);
    add_data_options(alloc_cmd, aa.data);

    struct PruneArgs {
        DataOptions data;
        std::string model, out = "pruned.spnet", out_dir;
        double eps = 0.0, prune_ratio = 0.0;
        std::size_t budget = 0;
        double delta = 1e-6, K = 1.0, tau = 1e-12;
        std::string mode = "rand", k = "0";
        std::size_t calib_size = 0;
        std::uint64_t seed = 0;
    } pa;
    CLI::App* prune_cmd = app.add_subcommand("prune", "Sample-and-reweigh channel pruning");
    prune_cmd->add_option("--model", pa.model)->required();
    prune_cmd->add_option("--out", pa.out);
    prune_cmd->add_option("--out-dir", pa.out_dir);
    prune_cmd->add_option("--eps", pa.eps, "Per-layer relative error");
    prune_cmd->add_option("--budget", pa.budget, "Total feature maps to keep");
    prune_cmd->add_option("--prune-ratio", pa.prune_ratio, "Target parameter prune ratio in (0,1)");
    prune_cmd->add_option("--delta", pa.delta);
    prune_cmd->add_option("--mode", pa.mode, "rand | partial | derand");
    prune_cmd->add_option("--k", pa.k, "Deterministic keeps for partial mode: a count or 'auto'");
    prune_cmd->add_option("--K", pa.K);
    prune_cmd->add_option("--tau", pa.tau);
    prune_cmd->add_option("--calib-size", pa.calib_size);
    prune_cmd->add_option("--seed", pa.seed);
    add_data_options(prune_cmd, pa.data);

    struct BaselineArgs {
        DataOptions data;
        std::string model, out = "baseline.spnet", out_dir, method = "ft";
        double keep_fraction = 0.5;
        std::size_t calib_size = 64;
        std::uint64_t seed = 0;
    } ba;
    CLI::App* base_cmd = app.add_subcommand("baseline", "FT / SoftNet / ThiNet comparison pruners");
    base_cmd->add_option("--model", ba.model)->required();
    base_cmd->add_option("--method", ba.method, "ft | softnet | thinet");
    base_cmd->add_option("--keep-fraction", ba.keep_fraction);
    base_cmd->add_option("--out", ba.out);
    base_cmd->add_option("--out-dir", ba.out_dir);
    base_cmd->add_option("--calib-size", ba.calib_size);
    base_cmd->add_option("--seed", ba.seed);
    add_data_options(base_cmd, ba.data);

    struct VerifyArgs {
        DataOptions data;
        std::string model, pruned, out_dir;
        double eps = 0.5, delta = 0.1, K = 1.0;
        std::size_t trials = 500, calib_size = 64;
        std::uint64_t seed = 0;
    } va;
    CLI::App* verify_cmd = app.add_subcommand("verify", "Empirical (eps, delta) certification");
    verify_cmd->add_option("--model", va.model)->required();
    verify_cmd->add_option("--pruned", va.pruned, "Pruned model for the end-to-end check");
    verify_cmd->add_option("--eps", va.eps);
    verify_cmd->add_option("--delta", va.delta);
    verify_cmd->add_option("--trials", va.trials);
    verify_cmd->add_option("--calib-size", va.calib_size);
    verify_cmd->add_option("--out-dir", va.out_dir);
    verify_cmd->add_option("--seed", va.seed);
    verify_cmd->add_option("--K", va.K);
    add_data_options(verify_cmd, va.data);

    struct PipelineArgs {
        DataOptions data;
        std::string preset = "lenet300", model_in, out_dir = "runs";
        double prune_ratio = 0.5, delta = 1e-6, K = 1.0, tau = 1e-12;
        std::string mode = "rand", k = "0", schedule;
        std::size_t calib_size = 0, finetune_epochs = 0;
        bool skip_finetune = false, verbose = false;
        double verify_eps = 0.5;
        std::uint64_t seed = 0;
    } pl;
    CLI::App* pipe_cmd = app.add_subcommand(
        "pipeline", "train -> sensitivity -> allocate -> prune -> finetune -> verify -> report");
    pipe_cmd->add_option("--preset", pl.preset);
    pipe_cmd->add_option("--model", pl.model_in, "Start from an existing model (skips training)");
    pipe_cmd->add_option("--out-dir", pl.out_dir);
    pipe_cmd->add_option("--prune-ratio", pl.prune_ratio);
    pipe_cmd->add_option("--delta", pl.delta);
    pipe_cmd->add_option("--mode", pl.mode);
    pipe_cmd->add_option("--k", pl.k);
    pipe_cmd->add_option("--K", pl.K);
    pipe_cmd->add_option("--tau", pl.tau);
    pipe_cmd->add_option("--schedule", pl.schedule, "alpha,steps for the iterative ratio schedule");
    pipe_cmd->add_option("--calib-size", pl.calib_size);
    pipe_cmd->add_option("--finetune-epochs", pl.finetune_epochs);
    pipe_cmd->add_flag("--skip-finetune", pl.skip_finetune);
    pipe_cmd->add_flag("--verbose", pl.verbose);
    pipe_cmd->add_option("--verify-eps", pl.verify_eps);
    pipe_cmd->add_option("--seed", pl.seed);
    add_data_options(pipe_cmd, pl.data);

    std::string replay_manifest;
    CLI::App* replay_cmd = app.add_subcommand("replay", "Re-run a recorded run manifest");
    replay_cmd->add_option("manifest", replay_manifest)->required();

    std::vector<const char*> cargs;
    cargs.push_back("spnet");
    for (const std::string& a : args) cargs.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(cargs.size()), cargs.data());
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }

    const auto out_path = [](const std::string& dir, const std::string& name) {
        return dir.empty() ? name : dir + "/" + name;
    };

    if (app.got_subcommand(train_cmd) || app.got_subcommand(finetune_cmd)) {
        const bool ft = app.got_subcommand(finetune_cmd);
        TrainArgs& a = ft ? fa : ta;
        CLI::App* cmd = ft ? finetune_cmd : train_cmd;
        // CLI overrides sit on top of the preset's defaults
        TrainConfig cfg = preset_train_config(a.preset, ft);
        if (cmd->count("--epochs")) cfg.epochs = a.cfg.epochs;
        if (cmd->count("--batch-size")) cfg.batch_size = a.cfg.batch_size;
        if (cmd->count("--lr")) cfg.lr = a.cfg.lr;
        if (cmd->count("--momentum")) cfg.momentum = a.cfg.momentum;
        if (cmd->count("--weight-decay")) cfg.weight_decay = a.cfg.weight_decay;
        if (cmd->count("--lr-decay-factor")) cfg.lr_decay_factor = a.cfg.lr_decay_factor;
        if (cmd->count("--lr-decay-epochs")) cfg.lr_decay_epochs = a.cfg.lr_decay_epochs;
        cfg.verbose = a.cfg.verbose;
        cfg.seed = a.seed;

        NetworkModel model =
            a.model_in.empty() ? build_preset(a.preset, a.seed) : load_model(a.model_in);
        Dataset full = shaped_for(model, load_split(a.data, false, a.seed));
        auto [train_ds, val_ds] = split_train_val(full, 0.9, a.seed);
        TrainHistory hist;
        const NetworkModel trained = ft
                                         ? finetune(model, train_ds, val_ds, cfg, a.frozen_support, &hist)
                                         : train(model, train_ds, val_ds, cfg, &hist);
        const std::string model_path = out_path(a.out_dir, a.model_out);
        if (const auto dir = std::filesystem::path(model_path).parent_path(); !dir.empty()) {
            std::filesystem::create_directories(dir);
        }
        save_model(trained, model_path);
        json hj;
        hj["epochs"] = json::array();
        for (const EpochStats& e : hist.epochs) {
            hj["epochs"].push_back(json{{"epoch", e.epoch},
                                        {"train_loss", e.train_loss},
                                        {"val_metric", e.val_metric},
                                        {"lr", e.lr}});
        }
        const std::string hist_path =
            a.history_out.empty()
                ? out_path(a.out_dir, ft ? "finetune-history.json" : "train-history.json")
                : out_path(a.out_dir, a.history_out);
        write_json(hist_path, hj);
        write_run_manifest(a.out_dir, ft ? "finetune" : "train", args,
                           {model_path, model_path + ".bin", hist_path});
        if (!hist.epochs.empty()) {
            std::cout << "final train loss " << hist.epochs.back().train_loss << ", val metric "
                      << hist.epochs.back().val_metric << "\n";
        }
        std::cout << "model written to " << model_path << "\n";
        return 0;
    }

    if (app.got_subcommand(eval_cmd)) {
        const NetworkModel model = load_model(ea.model);
        Dataset test = shaped_for(model, load_split(ea.data, true, ea.seed));
        json j;
        if (!test.labels.empty()) {
            const double err = evaluate_error(model, test);
            j["test_error"] = err;
            j["test_loss"] = evaluate_loss(model, test, LossKind::cross_entropy);
            std::cout << "test error " << 100.0 * err << "% on " << test.count() << " samples\n";
        } else if (!test.targets.empty()) {
            j["test_loss"] = evaluate_loss(model, test, LossKind::mse);
            std::cout << "test mse " << j["test_loss"] << "\n";
        } else {
            throw std::invalid_argument("eval: dataset has neither labels nor targets");
        }
        j["samples"] = test.count();
        j["params"] = size_of(model);
        j["macs"] = mac_count(model);
        write_json(out_path(ea.out_dir, "eval.json"), j);
        write_run_manifest(ea.out_dir, "eval", args, {out_path(ea.out_dir, "eval.json")});
        return 0;
    }

    if (app.got_subcommand(sens_cmd)) {
        const NetworkModel model = load_model(sa.model);
        Dataset pool = shaped_for(model, load_split(sa.data, false, sa.seed));
        auto [train_ds, val_ds] = split_train_val(pool, 0.9, sa.seed);
        const std::size_t t =
            sa.calib_size ? sa.calib_size : default_calib_size(model, 1e-6, sa.K_prime);
        const Dataset calib = draw_calibration(val_ds, t, sa.seed);
        const SensitivityReport rep = compute_report(model, calib, sa.K, sa.K_prime);
        json j = sensitivity_json(rep);
        if (sa.suggest) j["suggested_K"] = suggest_K(model, calib, sa.K_prime);
        const std::string path = out_path(sa.out_dir, sa.out);
        write_json(path, j);
        write_run_manifest(sa.out_dir, "sensitivity", args, {path});
        for (const auto& l : rep.layers) {
            std::cout << "layer " << l.producer << ": eta=" << l.eta << " S=" << l.s_sum
                      << (l.all_zero ? " (all-zero WARNING)" : "") << "\n";
        }
        return 0;
    }

    if (app.got_subcommand(alloc_cmd)) {
        if ((aa.budget == 0) == (aa.prune_ratio == 0.0)) {
            std::cerr << "allocate: give exactly one of --budget or --prune-ratio\n";
            return kExitUsage;
        }
        if (aa.prune_ratio < 0.0 || aa.prune_ratio >= 1.0) {
            std::cerr << "allocate: prune ratio must lie in (0,1)\n";
            return kExitUsage;
        }
        const NetworkModel model = load_model(aa.model);
        Dataset pool = shaped_for(model, load_split(aa.data, false, aa.seed));
        auto [train_ds, val_ds] = split_train_val(pool, 0.9, aa.seed);
        const std::size_t t = aa.calib_size ? aa.calib_size : default_calib_size(model, aa.delta, 1.0);
        const Dataset calib = draw_calibration(val_ds, t, aa.seed);
        const AllocContext ctx = make_alloc_context(model, calib, aa.K, aa.tau);
        const Allocation alloc = aa.budget
                                     ? allocate(ctx.inputs, aa.budget, aa.delta, aa.K)
                                     : allocate_for_ratio(model, ctx, aa.prune_ratio, aa.delta, aa.K);
        json j = allocation_json(alloc);
        j["delta_hat"] = ctx.profile.delta_hat;
        j["delta_forward"] = ctx.profile.delta_forward;
        const std::string path = out_path(aa.out_dir, aa.out);
        write_json(path, j);
        write_run_manifest(aa.out_dir, "allocate", args, {path});
        std::cout << "eps_star " << alloc.eps_star << ", total " << alloc.total << "/" << alloc.budget
                  << (alloc.feasible ? "" : " (infeasible; minimum achievable reported)") << "\n";
        return 0;
    }

    if (app.got_subcommand(prune_cmd)) {
        const int given = (pa.eps > 0.0) + (pa.budget > 0) + (pa.prune_ratio > 0.0);
        if (given != 1) {
            std::cerr << "prune: give exactly one of --eps, --budget, --prune-ratio\n";
            return kExitUsage;
        }
        if (pa.prune_ratio < 0.0 || pa.prune_ratio >= 1.0) {
            std::cerr << "prune: prune ratio must lie in (0,1)\n";
            return kExitUsage;
        }
        const NetworkModel model = load_model(pa.model);
        Dataset pool = shaped_for(model, load_split(pa.data, false, pa.seed));
        auto [train_ds, val_ds] = split_train_val(pool, 0.9, pa.seed);
        const std::size_t t = pa.calib_size ? pa.calib_size : default_calib_size(model, pa.delta, 1.0);
        const Dataset calib = draw_calibration(val_ds, t, pa.seed);
        const AllocContext ctx = make_alloc_context(model, calib, pa.K, pa.tau);

        const PruneMode mode = prune_mode_from_name(pa.mode);
        std::optional<std::size_t> k;
        if (pa.k != "auto") k = std::stoul(pa.k);

        Allocation alloc;
        if (pa.eps > 0.0) {
            alloc.eps_star = pa.eps;
            for (std::size_t i = 0; i < ctx.inputs.size(); ++i) {
                alloc.layers.push_back({pa.eps, 0.0, 0});
            }
        } else if (pa.budget > 0) {
            alloc = allocate(ctx.inputs, pa.budget, pa.delta, pa.K);
        } else {
            alloc = allocate_for_ratio(model, ctx, pa.prune_ratio, pa.delta, pa.K);
        }
        const auto plans = plans_from_allocation(ctx, alloc, pa.delta, mode, k, pa.K, pa.seed);
        const PruneOutcome out = prune_model(model, ctx.report, plans);
        const PruneSummary summary = summarize_prune(model, out.model);

        const std::string model_path = out_path(pa.out_dir, pa.out);
        if (const auto dir = std::filesystem::path(model_path).parent_path(); !dir.empty()) {
            std::filesystem::create_directories(dir);
        }
        save_model(out.model, model_path);
        json j = prune_outcome_json(out, summary);
        j["eps_star"] = alloc.eps_star;
        j["mode"] = pa.mode;
        j["seed"] = pa.seed;
        const std::string report_path = out_path(pa.out_dir, "prune.json");
        write_json(report_path, j);
        write_run_manifest(pa.out_dir, "prune", args, {model_path, model_path + ".bin", report_path});
        std::cout << "PR " << summary.pr << "%  FR " << summary.fr << "%  (params "
                  << summary.params_before << " -> " << summary.params_after << ")\n";
        std::cout << "pruned model written to " << model_path << "\n";
        return 0;
    }

    if (app.got_subcommand(base_cmd)) {
        const NetworkModel model = load_model(ba.model);
        Dataset pool = shaped_for(model, load_split(ba.data, false, ba.seed));
        auto [train_ds, val_ds] = split_train_val(pool, 0.9, ba.seed);
        const Dataset calib = draw_calibration(val_ds, ba.calib_size, ba.seed);
        const BaselineMethod method = baseline_from_name(ba.method);
        PruneOutcome out;
        out.model = model;
        for (const PrunePair& pair : prunable_pairs(model)) {
            PruneOutcome step = baseline_prune(out.model, pair.producer, method, ba.keep_fraction, calib);
            out.model = std::move(step.model);
            out.layers.push_back(step.layers[0]);
        }
        const PruneSummary summary = summarize_prune(model, out.model);
        const std::string model_path = out_path(ba.out_dir, ba.out);
        if (const auto dir = std::filesystem::path(model_path).parent_path(); !dir.empty()) {
            std::filesystem::create_directories(dir);
        }
        save_model(out.model, model_path);
        const std::string report_path = out_path(ba.out_dir, "baseline.json");
        json j = prune_outcome_json(out, summary);
        j["method"] = ba.method;
        write_json(report_path, j);
        write_run_manifest(ba.out_dir, "baseline", args, {model_path, model_path + ".bin", report_path});
        std::cout << ba.method << ": PR " << summary.pr << "%  FR " << summary.fr << "%\n";
        return 0;
    }

    if (app.got_subcommand(verify_cmd)) {
        const NetworkModel model = load_model(va.model);
        std::optional<NetworkModel> pruned;
        if (!va.pruned.empty()) pruned = load_model(va.pruned);
        Dataset fresh = shaped_for(model, load_split(va.data, true, va.seed));
        const int rc = run_verify(model, pruned, fresh, va.eps, va.delta, va.trials, va.seed, va.K,
                                  va.calib_size, va.out_dir);
        write_run_manifest(va.out_dir, "verify", args,
                           {va.out_dir.empty() ? "verdict.json" : va.out_dir + "/verdict.json"});
        return rc;
    }

    if (app.got_subcommand(pipe_cmd)) {
        std::filesystem::create_directories(pl.out_dir);
        const std::string dir = pl.out_dir;

        NetworkModel model =
            pl.model_in.empty() ? build_preset(pl.preset, pl.seed) : load_model(pl.model_in);
        Dataset full = shaped_for(model, load_split(pl.data, false, pl.seed));
        auto [train_ds, val_ds] = split_train_val(full, 0.9, pl.seed);

        if (pl.model_in.empty()) {
            TrainConfig tcfg = preset_train_config(pl.preset, false);
            tcfg.seed = pl.seed;
            tcfg.verbose = pl.verbose;
            TrainHistory hist;
            model = train(model, train_ds, val_ds, tcfg, &hist);
            save_model(model, dir + "/trained.spnet");
            std::cout << "trained: final val metric " << hist.epochs.back().val_metric << "\n";
        }

        // hyperharmonic ratio schedule: the i-th target is 1 - 1/(i+1)^alpha
        std::vector<double> ratios;
        if (!pl.schedule.empty()) {
            const auto comma = pl.schedule.find(',');
            if (comma == std::string::npos) {
                std::cerr << "pipeline: --schedule wants alpha,steps\n";
                return kExitUsage;
            }
            const double alpha = std::stod(pl.schedule.substr(0, comma));
            const int steps = std::stoi(pl.schedule.substr(comma + 1));
            for (int i = 1; i <= steps; ++i) {
                const double r = 1.0 - 1.0 / std::pow(double(i + 1), alpha);
                if (r < pl.prune_ratio) ratios.push_back(r);
            }
            ratios.push_back(pl.prune_ratio);
        } else {
            ratios.push_back(pl.prune_ratio);
        }

        const PruneMode mode = prune_mode_from_name(pl.mode);
        std::optional<std::size_t> k;
        if (pl.k != "auto") k = std::stoul(pl.k);

        const NetworkModel original = model;
        TrainConfig fcfg = preset_train_config(pl.preset, true);
        fcfg.seed = pl.seed + 1;
        fcfg.verbose = pl.verbose;
        if (pl.finetune_epochs) fcfg.epochs = pl.finetune_epochs;

        json step_reports = json::array();
        for (std::size_t step = 0; step < ratios.size(); ++step) {
            const double ratio = ratios[step];
            const std::size_t t =
                pl.calib_size ? pl.calib_size : default_calib_size(model, pl.delta, 1.0);
            const Dataset calib = draw_calibration(val_ds, t, pl.seed + 31 * step);
            // importance is re-evaluated on the current model at every step
            const AllocContext ctx = make_alloc_context(model, calib, pl.K, pl.tau);
            const Allocation alloc = allocate_for_ratio(original, ctx, ratio, pl.delta, pl.K);
            const auto plans =
                plans_from_allocation(ctx, alloc, pl.delta, mode, k, pl.K, pl.seed + 97 * step);
            PruneOutcome out = prune_model(model, ctx.report, plans);
            model = pl.skip_finetune ? out.model : finetune(out.model, train_ds, val_ds, fcfg, true);
            const PruneSummary summary = summarize_prune(original, model);
            json sj = prune_outcome_json(out, summary);
            sj["step"] = step;
            sj["target_ratio"] = ratio;
            sj["eps_star"] = alloc.eps_star;
            step_reports.push_back(std::move(sj));
            std::cout << "step " << step + 1 << "/" << ratios.size() << ": target PR " << 100 * ratio
                      << "% -> PR " << summary.pr << "%, FR " << summary.fr << "%\n";
        }
        save_model(model, dir + "/pruned.spnet");

        Dataset fresh = shaped_for(model, load_split(pl.data, true, pl.seed));
        const NetworkCheck net = check_network(original, model, pl.verify_eps, fresh);

        json j;
        j["steps"] = std::move(step_reports);
        const PruneSummary summary = summarize_prune(original, model);
        j["pr_percent"] = summary.pr;
        j["fr_percent"] = summary.fr;
        j["network_violation_rate"] = net.violation_rate;
        j["verify_eps"] = pl.verify_eps;
        if (!fresh.labels.empty()) {
            j["test_error_original"] = evaluate_error(original, fresh);
            j["test_error_pruned"] = evaluate_error(model, fresh);
            std::cout << "test error: original " << 100.0 * j["test_error_original"].get<double>()
                      << "%, pruned " << 100.0 * j["test_error_pruned"].get<double>() << "%\n";
        }
        write_json(dir + "/pipeline.json", j);
        write_run_manifest(dir, "pipeline", args,
                           {dir + "/pruned.spnet", dir + "/pruned.spnet.bin", dir + "/pipeline.json"});
        std::cout << "summary: PR " << summary.pr << "%  FR " << summary.fr << "%\n";
        return 0;
    }

    if (app.got_subcommand(replay_cmd)) {
        return cmd_replay(replay_manifest);
    }

    return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    try {
        return dispatch(std::move(args));
    } catch (const io_error& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitNoInput;
    } catch (const format_error& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return kExitNoInput;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
