#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tsa/classifier.hpp"
#include "tsa/data_model.hpp"
#include "tsa/errors.hpp"
#include "tsa/laki.hpp"
#include "tsa/report.hpp"
#include "tsa/rng.hpp"
#include "tsa/shapley.hpp"
#include "tsa/synthfab.hpp"

namespace tsa::pipeline {

enum class Imputation { laki, column_mean };
enum class FMode { probability, logit };

struct LoadedData {
    TrajectoryDataset ds;
    IngestReport report;
};

inline LoadedData load_dataset(const std::filesystem::path& measurements,
                               const std::filesystem::path& labels,
                               const std::filesystem::path& ops) {
    LoadedData data;
    data.ds = ingest(read_measurements_csv(measurements), read_labels_csv(labels),
                     read_ops_csv(ops), &data.report);
    return data;
}

inline ImputedDataset fill_matrix(const TrajectoryDataset& ds, const LotKernel& kernel,
                                  Imputation mode) {
    return mode == Imputation::laki ? impute(ds, kernel) : impute_column_mean(ds);
}

struct HoldoutSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// Label-stratified wafer split; the same seed always yields the same split,
/// so rival imputation modes can be evaluated on identical folds.
inline HoldoutSplit make_holdout_split(const TrajectoryDataset& ds, double test_fraction,
                                       std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
        throw ConfigError("holdout: test fraction must be in (0, 1)");
    }
    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < ds.wafer_count(); ++i) by_class[ds.y[i]].push_back(i);
    if (by_class[0].size() < 2 || by_class[1].size() < 2) {
        throw DataError("holdout: need at least 2 wafers per class");
    }
    Rng rng(seed);
    HoldoutSplit split;
    for (auto& members : by_class) {
        rng.shuffle(members);
        const auto want = static_cast<std::size_t>(
            std::llround(test_fraction * static_cast<double>(members.size())));
        const std::size_t take = std::clamp<std::size_t>(want, 1, members.size() - 1);
        for (std::size_t j = 0; j < members.size(); ++j) {
            (j < take ? split.test : split.train).push_back(members[j]);
        }
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

namespace detail {

inline std::vector<std::string> lot_groups(const TrajectoryDataset& ds,
                                           const std::vector<std::size_t>& rows) {
    std::vector<std::string> groups;
    groups.reserve(rows.size());
    for (std::size_t i : rows) groups.push_back(ds.lots.at(ds.wafers[i]));
    return groups;
}

inline Grid<double> pick_rows(const Grid<double>& x, const std::vector<std::size_t>& rows) {
    Grid<double> out(rows.size(), x.cols, 0.0);
    for (std::size_t j = 0; j < rows.size(); ++j) {
        for (std::size_t k = 0; k < x.cols; ++k) out(j, k) = x(rows[j], k);
    }
    return out;
}

}  // namespace detail

/// Trains on the split's training rows (standardizing with observed values
/// of those rows only) and reports metrics on the held-out rows.
inline EvalReport evaluate_holdout(const TrajectoryDataset& ds, const ImputedDataset& filled,
                                   const HoldoutSplit& split, const TrainOptions& opts) {
    TrainOptions train_opts = opts;
    train_opts.standardizer = observed_standardizer(ds, &split.train);
    std::vector<int> y_train;
    for (std::size_t i : split.train) y_train.push_back(ds.y[i]);
    std::vector<std::pair<double, double>> cv;
    const LogisticModel model =
        train(detail::pick_rows(filled.x_filled, split.train), y_train,
              detail::lot_groups(ds, split.train), train_opts, &cv);

    std::vector<double> probs;
    std::vector<int> y_test;
    for (std::size_t i : split.test) {
        probs.push_back(predict_proba(model, filled.x_filled.row(i)));
        y_test.push_back(ds.y[i]);
    }
    EvalReport report;
    report.auc = roc_auc(probs, y_test);
    report.normalized_auc = std::abs(2.0 * report.auc - 1.0);
    report.threshold = 0.5;
    report.tpr = tpr_at(probs, y_test, report.threshold);
    report.fold_lambdas = std::move(cv);
    return report;
}

/// Held-out comparison of the two imputation modes on one shared split.
inline std::pair<EvalReport, EvalReport> compare_imputation(const TrajectoryDataset& ds,
                                                            const TrainOptions& opts,
                                                            double test_fraction,
                                                            std::uint64_t seed) {
    const LotKernel kernel = build_lot_kernel(ds);
    const HoldoutSplit split = make_holdout_split(ds, test_fraction, seed);
    const EvalReport with_kernel =
        evaluate_holdout(ds, impute(ds, kernel), split, opts);
    const EvalReport with_mean =
        evaluate_holdout(ds, impute_column_mean(ds), split, opts);
    return {with_kernel, with_mean};
}

/// Final model over all wafers; item order and timestamps travel with it.
inline LogisticModel train_full(const TrajectoryDataset& ds, const ImputedDataset& filled,
                                const TrainOptions& opts,
                                std::vector<std::pair<double, double>>* cv_losses = nullptr) {
    TrainOptions train_opts = opts;
    if (!train_opts.standardizer) train_opts.standardizer = observed_standardizer(ds);
    std::vector<std::size_t> all(ds.wafer_count());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    LogisticModel model = train(filled.x_filled, ds.y, detail::lot_groups(ds, all), train_opts,
                                cv_losses);
    model.item_order = ds.order;
    return model;
}

struct WaferAttribution {
    AttributionVector attr;
    CumulativeCurve curve;
    std::vector<CurveStep> jumps;
    DeviationReport deviation;
};

/// Trajectory attribution of one wafer: x_t is its kernel-imputed row, x⁰
/// its leave-self-out baseline, f the model probability or raw logit.
inline WaferAttribution attribute_wafer(const TrajectoryDataset& ds, const LotKernel& kernel,
                                        const ImputedDataset& filled, const LogisticModel& model,
                                        const std::string& wafer, FMode f_mode,
                                        std::size_t max_jumps = 10) {
    const auto row = ds.wafer_index(wafer);
    if (!row) throw MissingEntityError("attribute: unknown wafer " + wafer);
    if (model.item_order.items != ds.order.items) {
        throw ConfigError("attribute: model items do not match the dataset");
    }

    ValueFunctionSpec spec;
    spec.mode = ValueMode::laki_trajectory;
    spec.dataset = &ds;
    spec.kernel = &kernel;
    spec.baseline_override = baseline_trajectory(ds, kernel, wafer);
    if (f_mode == FMode::probability) {
        spec.f = [&model](std::span<const double> x) { return predict_proba(model, x); };
    } else {
        spec.f = [&model](std::span<const double> x) { return score(model, x); };
    }

    WaferAttribution out;
    out.attr = trajectory_shapley(spec, filled.x_filled.row(*row), wafer);
    out.curve = cumulative_curve(out.attr, ds.order);
    out.jumps = top_jumps(out.curve, max_jumps);
    out.deviation = deviation_report(out.attr, ds.y[*row]);
    return out;
}

}  // namespace tsa::pipeline
