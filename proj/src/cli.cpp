#include "d3hr/cli.hpp"

#include <filesystem>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "d3hr/ddim.hpp"
#include "d3hr/distill.hpp"
#include "d3hr/error.hpp"
#include "d3hr/eval.hpp"
#include "d3hr/gmm_world.hpp"
#include "d3hr/rng.hpp"
#include "d3hr/serialize.hpp"

namespace d3hr::cli {

namespace fs = std::filesystem;

namespace {

// Usage problems detected after CLI11 parsing (conflicting or missing inputs).
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ScheduleOpts {
    int train_steps = kDefaultTrainSteps;
    double beta_start = kDefaultBetaStart;
    double beta_end = kDefaultBetaEnd;
    int steps = kDefaultInferenceSteps;
    std::optional<int> terminal_step;

    void add(CLI::App& app, bool with_steps = true) {
        app.add_option("--train-steps", train_steps, "Training timesteps T' of the noise schedule")->capture_default_str();
        app.add_option("--beta-start", beta_start, "First beta of the linear schedule")->capture_default_str();
        app.add_option("--beta-end", beta_end, "Last beta of the linear schedule")->capture_default_str();
        if (with_steps) app.add_option("--steps", steps, "DDIM inversion/sampling steps K")->capture_default_str();
        app.add_option("--terminal-step", terminal_step,
                       "Last training timestep reached by the grid (default: train-steps; smaller truncates)");
    }
    NoiseSchedule build(int k) const { return build_schedule(train_steps, beta_start, beta_end, k, terminal_step); }
};

struct DistillOpts {
    std::string weights = "1,1,0.5";
    std::size_t ipc = 10;
    std::size_t m = 10000;

    void add(CLI::App& app) {
        app.add_option("--ipc", ipc, "Distilled points per class")->capture_default_str();
        app.add_option("--m", m, "Candidate subsets per class for group sampling")->capture_default_str();
        app.add_option("--weights", weights, "Loss weights lambda_mu,lambda_sigma,lambda_skew")->capture_default_str();
    }
};

LossWeights parse_weights(const std::string& text) {
    std::vector<double> v;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            v.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError("--weights expects three comma-separated numbers, got '" + text + "'");
        }
    }
    if (v.size() != 3) throw UsageError("--weights expects three comma-separated numbers, got '" + text + "'");
    D3HR_REQUIRE(v[0] >= 0 && v[1] >= 0 && v[2] >= 0, "loss weights must be nonnegative");
    return {v[0], v[1], v[2]};
}

std::vector<int> parse_int_list(const std::string& text, const char* flag) {
    std::vector<int> v;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            v.push_back(std::stoi(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError(std::string(flag) + " expects comma-separated integers, got '" + text + "'");
        }
    }
    if (v.empty()) throw UsageError(std::string(flag) + " must not be empty");
    return v;
}

std::vector<std::uint64_t> seed_list(std::uint64_t base, std::size_t count) {
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < count; ++i) seeds.push_back(base + i);
    return seeds;
}

Dataset load_dataset(const std::string& path) { return dataset_from_json(read_json_file(path)); }

GmmSpec resolve_world(const std::string& world_path, bool default_flag, const Dataset* data) {
    if (!world_path.empty()) return gmm_spec_from_json(read_json_file(world_path));
    if (default_flag) return default_world();
    if (data && data->world) return *data->world;
    throw UsageError("no world available: pass --world, --default-world, or a dataset that embeds its world");
}

fs::path sibling_test(const std::string& data_path, const std::string& test_path) {
    if (!test_path.empty()) return test_path;
    fs::path guess = fs::path(data_path).parent_path() / "test.json";
    if (!fs::exists(guess)) throw UsageError("no --test given and " + guess.string() + " does not exist");
    return guess;
}

fs::path with_extension(fs::path p, const char* ext) { return p.replace_extension(ext); }

void check_world_matches(const GmmSpec& world, const Dataset& data) {
    D3HR_REQUIRE(world.dimension == data.dimension, "world dimension differs from dataset dimension");
    for (const auto& p : data.points) D3HR_REQUIRE(p.label < world.num_classes(), "dataset label outside world classes");
}

ExperimentConfig experiment(const Dataset& train, const Dataset& test, GmmSpec world, const ScheduleOpts& sched,
                            const DistillOpts& dist, double var_scale) {
    D3HR_REQUIRE(train.dimension == test.dimension, "train and test dimensions differ");
    check_world_matches(world, train);
    check_world_matches(world, test);
    ExperimentConfig cfg;
    cfg.train = train;
    cfg.test = test;
    cfg.world = std::move(world);
    cfg.train_steps = sched.train_steps;
    cfg.beta_start = sched.beta_start;
    cfg.beta_end = sched.beta_end;
    cfg.steps = sched.steps;
    cfg.terminal_step = sched.terminal_step;
    cfg.ipc = dist.ipc;
    cfg.m = dist.m;
    cfg.weights = parse_weights(dist.weights);
    cfg.var_scale = var_scale;
    // Validates the schedule parameters before any work starts.
    (void)cfg.schedule(cfg.steps);
    return cfg;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Dataset distillation by DDIM inversion, Gaussian matching and group sampling", "d3hr"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Sample train and test datasets from a Gaussian-mixture world");
    std::string gen_world, gen_out;
    bool gen_default = false;
    std::size_t gen_n = 500;
    std::optional<std::size_t> gen_n_test;
    std::uint64_t gen_seed = 0;
    auto* gen_world_opt = gen->add_option("--world", gen_world, "World spec JSON");
    gen->add_flag("--default-world", gen_default, "Use the built-in 8-D, 4-class world")->excludes(gen_world_opt);
    gen->add_option("--n-per-class", gen_n, "Training points per class")->capture_default_str();
    gen->add_option("--n-test-per-class", gen_n_test, "Test points per class (default: --n-per-class)");
    gen->add_option("--seed", gen_seed, "Sampling seed")->capture_default_str();
    gen->add_option("--out", gen_out, "Output directory for train.json and test.json")->required();

    // distill
    auto* dist = app.add_subcommand("distill", "Distill a dataset into a few points per class");
    std::string dist_data, dist_world, dist_out, dist_stats_out, dist_mode = "group";
    bool dist_default = false;
    std::uint64_t dist_seed = 0;
    double dist_var_scale = 1.0;
    ScheduleOpts dist_sched;
    DistillOpts dist_opts;
    dist->add_option("--data", dist_data, "Training dataset JSON")->required();
    auto* dist_world_opt = dist->add_option("--world", dist_world, "World spec JSON (default: the one embedded in --data)");
    dist->add_flag("--default-world", dist_default, "Use the built-in world")->excludes(dist_world_opt);
    dist->add_option("--mode", dist_mode, "group (full method), random (Base-RS) or ddpm (Base-DDPM)")
        ->check(CLI::IsMember({"group", "random", "ddpm"}))
        ->capture_default_str();
    dist_opts.add(*dist);
    dist_sched.add(*dist);
    dist->add_option("--seed", dist_seed, "Run seed")->capture_default_str();
    dist->add_option("--var-scale", dist_var_scale, "Multiply the fitted variance before sampling (ablation)")
        ->capture_default_str();
    dist->add_option("--out", dist_out, "Distilled set JSON")->required();
    dist->add_option("--stats-out", dist_stats_out, "Also write the per-class stats bundle here");

    // regen
    auto* regen = app.add_subcommand("regen", "Regenerate a distilled set from a stats bundle alone");
    std::string regen_stats, regen_world, regen_out;
    bool regen_default = false;
    std::size_t regen_ipc = 10;
    std::uint64_t regen_seed = 0;
    regen->add_option("--stats", regen_stats, "Stats bundle JSON")->required();
    auto* regen_world_opt = regen->add_option("--world", regen_world, "World spec JSON (default: built-in world)");
    regen->add_flag("--default-world", regen_default, "Use the built-in world")->excludes(regen_world_opt);
    regen->add_option("--ipc", regen_ipc, "Distilled points per class")->capture_default_str();
    regen->add_option("--seed", regen_seed, "Run seed")->capture_default_str();
    regen->add_option("--out", regen_out, "Distilled set JSON")->required();

    // eval
    auto* ev = app.add_subcommand("eval", "Train the classifier on one dataset and score it on another");
    std::string ev_train, ev_test, ev_report;
    TrainConfig ev_cfg;
    ev->add_option("--train", ev_train, "Training dataset or distilled set JSON")->required();
    ev->add_option("--test", ev_test, "Test dataset JSON")->required();
    ev->add_option("--report", ev_report, "Report JSON path; a .csv is written next to it")->required();
    ev->add_option("--epochs", ev_cfg.epochs, "Full-batch gradient steps")->capture_default_str();
    ev->add_option("--lr", ev_cfg.learning_rate, "Learning rate")->capture_default_str();
    ev->add_option("--l2", ev_cfg.l2, "L2 strength on non-bias weights")->capture_default_str();

    // sweep-steps
    auto* sweep = app.add_subcommand("sweep-steps", "Normality, round-trip error and accuracy per inversion step count");
    std::string sw_data, sw_test, sw_world, sw_out, sw_steps = "4,8,16,31,64";
    std::size_t sw_seeds = 1;
    std::uint64_t sw_seed = 0;
    ScheduleOpts sw_sched;
    DistillOpts sw_opts;
    sweep->add_option("--data", sw_data, "Training dataset JSON")->required();
    sweep->add_option("--test", sw_test, "Test dataset JSON (default: test.json next to --data)");
    sweep->add_option("--world", sw_world, "World spec JSON (default: embedded in --data)");
    sweep->add_option("--steps-list", sw_steps, "Comma-separated step counts K")->capture_default_str();
    sweep->add_option("--seeds", sw_seeds, "Number of distillation seeds per row")->capture_default_str();
    sweep->add_option("--seed", sw_seed, "First seed")->capture_default_str();
    sw_opts.add(*sweep);
    sw_sched.add(*sweep, false);
    sweep->add_option("--out", sw_out, "CSV path; a .json is written next to it")->required();

    // ablate
    auto* abl = app.add_subcommand("ablate", "Base-DDPM / Base-RS / group ablation over seeds");
    std::string ab_data, ab_test, ab_world, ab_out;
    std::size_t ab_seeds = 20;
    std::uint64_t ab_seed = 0;
    bool ab_grid = false;
    double ab_var_scale = 1.0;
    ScheduleOpts ab_sched;
    DistillOpts ab_opts;
    abl->add_option("--data", ab_data, "Training dataset JSON")->required();
    abl->add_option("--test", ab_test, "Test dataset JSON (default: test.json next to --data)");
    abl->add_option("--world", ab_world, "World spec JSON (default: embedded in --data)");
    abl->add_option("--seeds", ab_seeds, "Number of seeds")->capture_default_str();
    abl->add_option("--seed", ab_seed, "First seed")->capture_default_str();
    abl->add_flag("--weight-grid", ab_grid, "Add one group row per loss-term combination");
    abl->add_option("--var-scale", ab_var_scale, "Multiply the fitted variance before sampling")->capture_default_str();
    ab_opts.add(*abl);
    ab_sched.add(*abl);
    abl->add_option("--out", ab_out, "CSV path; a .json is written next to it")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
            return kSuccess;
        }
        err << "d3hr: " << e.what() << "\n";
        return kUsage;
    }

    try {
        if (gen->parsed()) {
            if (gen_world.empty() && !gen_default) throw UsageError("gen-data needs --world or --default-world");
            const GmmSpec world = resolve_world(gen_world, gen_default, nullptr);
            const Dataset train = sample_dataset(world, gen_n, gen_seed);
            const Dataset test = sample_dataset(world, gen_n_test.value_or(gen_n), derived_seed(gen_seed, 0, 1));
            const std::string train_text = to_json(train).dump() + "\n";
            const std::string test_text = to_json(test).dump() + "\n";
            write_file_atomic(fs::path(gen_out) / "train.json", train_text);
            write_file_atomic(fs::path(gen_out) / "test.json", test_text);
            err << "d3hr gen-data: " << train.points.size() << " train / " << test.points.size() << " test points -> "
                << gen_out << "\n";
        } else if (dist->parsed()) {
            const Dataset data = load_dataset(dist_data);
            const GmmSpec world = resolve_world(dist_world, dist_default, &data);
            check_world_matches(world, data);
            DistillConfig cfg;
            cfg.schedule = dist_sched.build(dist_sched.steps);
            cfg.ipc = dist_opts.ipc;
            cfg.m = dist_opts.m;
            cfg.weights = parse_weights(dist_opts.weights);
            cfg.mode = parse_mode(dist_mode);
            cfg.seed = dist_seed;
            cfg.var_scale = dist_var_scale;
            D3HR_REQUIRE(cfg.ipc >= 1 && cfg.m >= 1, "--ipc and --m must be at least 1");
            D3HR_REQUIRE(cfg.var_scale > 0.0, "--var-scale must be positive");
            Dataset anchored = data;
            anchored.world = world;
            const DistilledSet set = distill_dataset(anchored, analytic_epsilon_fn(world), cfg);
            const std::string set_text = to_json(set).dump() + "\n";
            std::string stats_text;
            if (!dist_stats_out.empty()) stats_text = to_json(make_stats_bundle(set)).dump() + "\n";
            write_file_atomic(dist_out, set_text);
            if (!dist_stats_out.empty()) write_file_atomic(dist_stats_out, stats_text);
            err << "d3hr distill: " << mode_name(cfg.mode) << ", " << set.data.points.size() << " points -> " << dist_out
                << "\n";
        } else if (regen->parsed()) {
            const StatsBundle bundle = stats_bundle_from_json(read_json_file(regen_stats));
            const GmmSpec world = resolve_world(regen_world, true, nullptr);
            D3HR_REQUIRE(regen_ipc >= 1, "--ipc must be at least 1");
            const DistilledSet set = regenerate_from_stats(bundle, regen_ipc, world, regen_seed);
            write_file_atomic(regen_out, to_json(set).dump() + "\n");
            err << "d3hr regen: " << set.data.points.size() << " points -> " << regen_out << "\n";
        } else if (ev->parsed()) {
            const Json train_json = read_json_file(ev_train);
            const Dataset train = dataset_from_json(train_json);
            const Dataset test = dataset_from_json(read_json_file(ev_test));
            D3HR_REQUIRE(!test.points.empty(), "test set is empty");
            D3HR_REQUIRE(train.dimension == test.dimension, "train and test dimensions differ");
            EvalReport report;
            report.mode = train_json.contains("mode") ? train_json.at("mode").get<std::string>() : "full";
            report.seed = train.seed;
            if (train_json.contains("provenance"))
                report.weights = {train_json["provenance"]["weights"][0].get<double>(),
                                  train_json["provenance"]["weights"][1].get<double>(),
                                  train_json["provenance"]["weights"][2].get<double>()};
            const auto model = train_classifier(train, ev_cfg);
            report.accuracy = evaluate_classifier(model, test);
            report.energy_distance = class_energy_distance(train, test);
            const EvalReport reports[] = {report};
            const std::string json_text = to_json(report).dump(2) + "\n";
            const std::string csv_text = eval_report_csv(reports);
            write_file_atomic(ev_report, json_text);
            write_file_atomic(with_extension(ev_report, ".csv"), csv_text);
            err << "d3hr eval: accuracy " << format_sig9(report.accuracy) << " -> " << ev_report << "\n";
        } else if (sweep->parsed()) {
            const Dataset train = load_dataset(sw_data);
            const Dataset test = load_dataset(sibling_test(sw_data, sw_test).string());
            const auto steps = parse_int_list(sw_steps, "--steps-list");
            D3HR_REQUIRE(sw_seeds >= 1, "--seeds must be at least 1");
            const auto cfg = experiment(train, test, resolve_world(sw_world, false, &train), sw_sched, sw_opts, 1.0);
            for (int k : steps) (void)cfg.schedule(k);
            const auto seeds = seed_list(sw_seed, sw_seeds);
            const auto rows = timestep_sweep(cfg, steps, seeds);
            write_file_atomic(sw_out, sweep_csv(rows));
            write_file_atomic(with_extension(sw_out, ".json"), to_json(std::span<const SweepRow>(rows)).dump(2) + "\n");
            err << "d3hr sweep-steps: " << rows.size() << " rows -> " << sw_out << "\n";
        } else if (abl->parsed()) {
            const Dataset train = load_dataset(ab_data);
            const Dataset test = load_dataset(sibling_test(ab_data, ab_test).string());
            D3HR_REQUIRE(ab_seeds >= 2, "--seeds must be at least 2");
            D3HR_REQUIRE(ab_var_scale > 0.0, "--var-scale must be positive");
            const auto cfg =
                experiment(train, test, resolve_world(ab_world, false, &train), ab_sched, ab_opts, ab_var_scale);
            const auto seeds = seed_list(ab_seed, ab_seeds);
            const auto rows = ablation_run(cfg, seeds, ab_grid);
            write_file_atomic(ab_out, ablation_csv(rows));
            write_file_atomic(with_extension(ab_out, ".json"), to_json(std::span<const AblationRow>(rows)).dump(2) + "\n");
            err << "d3hr ablate: " << rows.size() << " rows -> " << ab_out << "\n";
        }
    } catch (const UsageError& e) {
        err << "d3hr: " << e.what() << "\n";
        return kUsage;
    } catch (const ValidationError& e) {
        err << "d3hr: " << e.what() << "\n";
        return kValidation;
    } catch (const IoError& e) {
        err << "d3hr: " << e.what() << "\n";
        return kIo;
    } catch (const std::exception& e) {
        err << "d3hr: " << e.what() << "\n";
        return kValidation;
    }
    return kSuccess;
}

}  // namespace d3hr::cli
