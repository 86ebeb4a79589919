#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tsa/classifier.hpp"
#include "tsa/csv.hpp"
#include "tsa/data_model.hpp"
#include "tsa/errors.hpp"
#include "tsa/laki.hpp"
#include "tsa/pipeline.hpp"
#include "tsa/report.hpp"
#include "tsa/rng.hpp"
#include "tsa/shapley.hpp"
#include "tsa/synthfab.hpp"

namespace tsa::cli {

struct RunConfig {
    std::string measurements = "measurements.csv";
    std::string labels = "labels.csv";
    std::string ops = "ops.csv";
    std::vector<double> lambda_grid = default_lambda_grid();
    std::size_t folds = 5;
    pipeline::Imputation imputation = pipeline::Imputation::laki;
    std::string method = "tsa";  // "baseline" | "ce" | "tsa"
    pipeline::FMode f_mode = pipeline::FMode::probability;
    std::string out_dir = "out";
    std::uint64_t seed = 42;
};

inline nlohmann::json run_config_to_json(const RunConfig& c) {
    return {{"measurements", c.measurements},
            {"labels", c.labels},
            {"ops", c.ops},
            {"lambda_grid", c.lambda_grid},
            {"folds", c.folds},
            {"imputation", c.imputation == pipeline::Imputation::laki ? "laki" : "column_mean"},
            {"method", c.method},
            {"f", c.f_mode == pipeline::FMode::probability ? "probability" : "logit"},
            {"out_dir", c.out_dir},
            {"seed", c.seed}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig c;
    if (!j.is_object()) throw ConfigError("run config: expected a JSON object");
    const nlohmann::json known = run_config_to_json(c);
    for (const auto& [key, val] : j.items()) {
        if (!known.contains(key)) throw ConfigError("run config: unknown field '" + key + "'");
    }
    try {
        if (j.contains("measurements")) c.measurements = j.at("measurements").get<std::string>();
        if (j.contains("labels")) c.labels = j.at("labels").get<std::string>();
        if (j.contains("ops")) c.ops = j.at("ops").get<std::string>();
        if (j.contains("lambda_grid")) {
            c.lambda_grid = j.at("lambda_grid").get<std::vector<double>>();
        }
        if (j.contains("folds")) c.folds = j.at("folds").get<std::size_t>();
        if (j.contains("imputation")) {
            const std::string mode = j.at("imputation").get<std::string>();
            if (mode == "laki") {
                c.imputation = pipeline::Imputation::laki;
            } else if (mode == "column_mean") {
                c.imputation = pipeline::Imputation::column_mean;
            } else {
                throw ConfigError("run config: imputation must be 'laki' or 'column_mean'");
            }
        }
        if (j.contains("method")) {
            c.method = j.at("method").get<std::string>();
            if (c.method != "tsa" && c.method != "baseline" && c.method != "ce") {
                throw ConfigError("run config: method must be 'tsa', 'baseline', or 'ce'");
            }
        }
        if (j.contains("f")) {
            const std::string f = j.at("f").get<std::string>();
            if (f == "probability") {
                c.f_mode = pipeline::FMode::probability;
            } else if (f == "logit") {
                c.f_mode = pipeline::FMode::logit;
            } else {
                throw ConfigError("run config: f must be 'probability' or 'logit'");
            }
        }
        if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
        if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    }
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    try {
        return run_config_from_json(nlohmann::json::parse(csv::read_file(path)));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

namespace detail {

constexpr double kTestFraction = 1.0 / 3.0;

inline TrainOptions train_options(const RunConfig& config) {
    TrainOptions opts;
    opts.lambda_grid = config.lambda_grid;
    opts.folds = config.folds;
    return opts;
}

inline int cmd_synth(const RunConfig& config, const std::string& spec_path,
                     const std::optional<std::uint64_t>& seed_override) {
    SynthSpec spec;
    if (!spec_path.empty()) {
        try {
            spec = synth_spec_from_json(nlohmann::json::parse(csv::read_file(spec_path)));
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(spec_path + ": " + e.what());
        }
    }
    if (seed_override) spec.seed = *seed_override;
    const SynthOutput out = generate(spec);
    write_synth_csvs(out, config.out_dir);
    std::cout << "synth: wrote " << out.records.size() << " records for " << out.labels.size()
              << " wafers to " << config.out_dir << "\n";
    return 0;
}

inline int cmd_train(const RunConfig& config, bool compare_imputation) {
    const auto loaded = pipeline::load_dataset(config.measurements, config.labels, config.ops);
    const TrajectoryDataset& ds = loaded.ds;
    const TrainOptions opts = train_options(config);
    const LotKernel kernel = build_lot_kernel(ds);

    EvalReport primary;
    std::optional<EvalReport> secondary;
    if (compare_imputation) {
        auto [with_kernel, with_mean] =
            pipeline::compare_imputation(ds, opts, kTestFraction, config.seed);
        primary = with_kernel;
        secondary = with_mean;
    } else {
        const auto split = pipeline::make_holdout_split(ds, kTestFraction, config.seed);
        primary = pipeline::evaluate_holdout(
            ds, pipeline::fill_matrix(ds, kernel, config.imputation), split, opts);
    }

    const ImputedDataset filled = pipeline::fill_matrix(ds, kernel, config.imputation);
    std::vector<std::pair<double, double>> cv;
    const LogisticModel model = pipeline::train_full(ds, filled, opts, &cv);
    primary.fold_lambdas = cv;

    const std::filesystem::path out(config.out_dir);
    save_model(model, out / "model.json");
    csv::write_file_atomic(out / "eval.csv", eval_report_csv(primary, secondary));
    std::cout << "train: lambda " << csv::format_double(model.lambda) << ", held-out tpr "
              << csv::format_double(primary.tpr) << ", wrote model.json and eval.csv\n";
    return 0;
}

inline int cmd_attribute(const RunConfig& config, const std::string& wafer,
                         const std::string& model_path) {
    const auto loaded = pipeline::load_dataset(config.measurements, config.labels, config.ops);
    const TrajectoryDataset& ds = loaded.ds;
    if (config.method == "tsa" && config.imputation != pipeline::Imputation::laki) {
        throw ConfigError("attribute: the tsa method defines both x_t and the baseline through "
                          "the lot kernel; set imputation to 'laki'");
    }
    const LotKernel kernel = build_lot_kernel(ds);
    const ImputedDataset filled = pipeline::fill_matrix(ds, kernel, config.imputation);
    const std::filesystem::path out(config.out_dir);
    const LogisticModel model =
        load_model(model_path.empty() ? (out / "model.json").string() : model_path);
    if (model.item_order.items != ds.order.items) {
        throw ConfigError("attribute: model items do not match the dataset");
    }

    if (config.method == "tsa") {
        const auto result =
            pipeline::attribute_wafer(ds, kernel, filled, model, wafer, config.f_mode);
        csv::write_file_atomic(out / "attr.csv", attribution_csv(result.attr, ds.order));
        csv::write_file_atomic(out / "curve.csv", curve_csv(result.curve));
        csv::write_file_atomic(out / "jumps.csv", jumps_csv(result.curve, result.jumps));
        render_curve_svg(result.curve, out / "curve.svg",
                         config.f_mode == pipeline::FMode::probability);
        std::cout << "attribute: wafer " << wafer << ", sum rule residual "
                  << csv::format_double(result.attr.sum_rule_residual())
                  << (result.deviation.large_residual ? " (large prediction residual)" : "")
                  << ", wrote attr.csv curve.csv jumps.csv curve.svg\n";
        return 0;
    }

    const auto row = ds.wafer_index(wafer);
    if (!row) throw MissingEntityError("attribute: unknown wafer " + wafer);
    ValueFunctionSpec spec;
    if (config.f_mode == pipeline::FMode::probability) {
        spec.f = [&model](std::span<const double> x) { return predict_proba(model, x); };
    } else {
        spec.f = [&model](std::span<const double> x) { return score(model, x); };
    }
    if (config.method == "baseline") {
        spec.mode = ValueMode::baseline_mean;
        spec.baseline_means.assign(filled.x_filled.cols, 0.0);
        for (std::size_t k = 0; k < filled.x_filled.cols; ++k) {
            double sum = 0.0;
            for (std::size_t i = 0; i < filled.x_filled.rows; ++i) sum += filled.x_filled(i, k);
            spec.baseline_means[k] = sum / static_cast<double>(filled.x_filled.rows);
        }
    } else {
        spec.mode = ValueMode::conditional_expectation;
        spec.background = &filled.x_filled;
    }
    const AttributionVector attr = shapley_exact(spec, filled.x_filled.row(*row), wafer);
    csv::write_file_atomic(out / "attr.csv", attribution_csv(attr, ds.order));
    std::cout << "attribute: wafer " << wafer << ", method " << attr.method
              << ", wrote attr.csv (curves are defined only for tsa)\n";
    return 0;
}

inline int cmd_univariate(const RunConfig& config) {
    const auto loaded = pipeline::load_dataset(config.measurements, config.labels, config.ops);
    const auto rows = univariate_screen(loaded.ds);
    csv::write_file_atomic(std::filesystem::path(config.out_dir) / "auc.csv",
                           univariate_csv(rows));
    std::cout << "univariate: screened " << rows.size() << " items (in-sample AUC), wrote "
              << "auc.csv\n";
    return 0;
}

/// Random-instance checks of the attribution engines: closed form vs prefix
/// oracle (exact), evaluation count, sum rule, and enumeration efficiency.
/// inject_fault deliberately corrupts one score to prove the harness trips.
inline int cmd_validate(const RunConfig& config, std::size_t max_d, std::size_t trials,
                        bool inject_fault) {
    if (max_d < 1 || max_d > kOracleMaxD) {
        throw ConfigError("validate: max_d must be in [1, 12]");
    }
    for (std::size_t t = 0; t < trials; ++t) {
        const std::uint64_t trial_seed = config.seed + t;
        Rng rng(trial_seed);
        const std::size_t d = 1 + rng.below(max_d);
        std::vector<double> x_t(d), x0(d), w(d);
        for (auto& v : x_t) v = rng.normal();
        for (auto& v : x0) v = rng.normal();
        for (auto& v : w) v = rng.normal();
        const double b = 0.5 * rng.normal();
        const bool quadratic = rng.bernoulli(0.5);

        ValueFunctionSpec spec;
        spec.mode = ValueMode::laki_trajectory;
        spec.baseline_override = x0;
        spec.f = [w, b, quadratic](std::span<const double> x) {
            double s = b;
            for (std::size_t k = 0; k < x.size(); ++k) s += w[k] * x[k];
            if (quadratic && x.size() >= 2) s += 0.3 * x[0] * x[1];
            return 1.0 / (1.0 + std::exp(-s));
        };

        auto fail = [&](const std::string& what) {
            std::cerr << "validate: FAIL (" << what << "); failing seed " << trial_seed << "\n";
            return 1;
        };

        AttributionVector closed = trajectory_shapley(spec, x_t, "validate");
        if (inject_fault && !closed.scores.empty()) closed.scores[0] += 1e-6;
        std::size_t evals = 0;
        const AttributionVector oracle = trajectory_shapley_oracle(spec, x_t, "validate", &evals);
        if (evals != d + 1) return fail("oracle evaluation count");
        for (std::size_t k = 0; k < d; ++k) {
            if (!(std::abs(closed.scores[k] - oracle.scores[k]) <= 1e-12)) {
                return fail("closed form deviates from prefix oracle");
            }
        }
        if (std::abs(closed.sum_rule_residual()) > 1e-9) return fail("sum rule");

        if (d <= 8) {
            ValueFunctionSpec enum_spec;
            enum_spec.mode = ValueMode::baseline_mean;
            enum_spec.baseline_means = x0;
            enum_spec.f = spec.f;
            const AttributionVector sv = shapley_exact(enum_spec, x_t, "validate");
            double total = 0.0;
            for (double s : sv.scores) total += s;
            if (std::abs(total - (sv.v_full - sv.v_empty)) > 1e-9) {
                return fail("enumeration efficiency");
            }
        }
    }
    std::cout << "validate: " << trials << " trials up to D=" << max_d << ", all checks passed\n";
    return 0;
}

}  // namespace detail

/// Front end; args exclude the program name. Returns the process exit code.
inline int run(const std::vector<std::string>& args) {
    CLI::App app{"Trajectory Shapley attribution over sparse wafer measurement trajectories"};
    app.require_subcommand(1);
    // Let `tsa synth --out DIR --seed N` work: unmatched options inside a
    // subcommand climb back to the app, where --config/--out/--seed live.
    app.fallthrough();

    std::string config_path, out_override, spec_path, wafer, model_path;
    std::optional<std::uint64_t> seed_override;
    bool compare_imputation = false, inject_fault = false;
    std::size_t max_d = 12, trials = 100;

    app.add_option("--config", config_path, "run config JSON; flags override its fields")
        ->check(CLI::ExistingFile);
    app.add_option("--out", out_override, "output directory");
    app.add_option("--seed", seed_override, "seed overriding config and synth spec");

    auto* synth = app.add_subcommand("synth", "generate a synthetic fab dataset");
    synth->add_option("--spec", spec_path, "synth spec JSON")->check(CLI::ExistingFile);

    auto* train_cmd = app.add_subcommand("train", "train the good/bad classifier");
    train_cmd->add_flag("--compare-imputation", compare_imputation,
                        "also evaluate column-mean imputation on the same split");

    auto* attribute = app.add_subcommand("attribute", "attribution scores for one wafer");
    attribute->add_option("--wafer", wafer, "wafer id")->required();
    attribute->add_option("--model", model_path, "model JSON (default <out_dir>/model.json)");

    app.add_subcommand("univariate", "per-item univariate AUC screen");

    auto* validate_cmd = app.add_subcommand("validate", "self-check the attribution engines");
    validate_cmd->add_option("--max-d", max_d, "largest instance dimension (<= 12)");
    validate_cmd->add_option("--trials", trials, "number of random instances");
    validate_cmd->add_flag("--inject-fault", inject_fault)->group("");

    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("tsa");
    for (const auto& a : args) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        RunConfig config;
        if (!config_path.empty()) config = load_run_config(config_path);
        if (!out_override.empty()) config.out_dir = out_override;
        if (seed_override) config.seed = *seed_override;

        if (app.got_subcommand("synth")) return detail::cmd_synth(config, spec_path, seed_override);
        if (app.got_subcommand("train")) return detail::cmd_train(config, compare_imputation);
        if (app.got_subcommand("attribute")) {
            return detail::cmd_attribute(config, wafer, model_path);
        }
        if (app.got_subcommand("univariate")) return detail::cmd_univariate(config);
        if (app.got_subcommand("validate")) {
            return detail::cmd_validate(config, max_d, trials, inject_fault);
        }
        throw ConfigError("no subcommand");  // unreachable: require_subcommand(1)
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const MissingEntityError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace tsa::cli
