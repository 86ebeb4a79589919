#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tsa/csv.hpp"
#include "tsa/data_model.hpp"
#include "tsa/errors.hpp"
#include "tsa/grid.hpp"

namespace tsa {

/// Per-column affine transform z = (x - mean) / std. Degenerate columns
/// (no data or zero variance) carry std = 1 so the transform stays finite.
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> std;

    std::size_t size() const { return mean.size(); }

    friend bool operator==(const Standardizer&, const Standardizer&) = default;
};

/// Statistics from observed entries only; imputed values do not shrink the
/// scale. `rows` restricts the statistics to a subset of wafers.
inline Standardizer observed_standardizer(const TrajectoryDataset& ds,
                                          const std::vector<std::size_t>* rows = nullptr) {
    const std::size_t d = ds.item_count();
    Standardizer s;
    s.mean.assign(d, 0.0);
    s.std.assign(d, 1.0);
    std::vector<std::size_t> all;
    if (!rows) {
        all.resize(ds.wafer_count());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        rows = &all;
    }
    for (std::size_t k = 0; k < d; ++k) {
        double sum = 0.0;
        std::size_t count = 0;
        for (std::size_t i : *rows) {
            if (ds.mask(i, k)) {
                sum += ds.x(i, k);
                ++count;
            }
        }
        if (count == 0) continue;
        const double mean = sum / static_cast<double>(count);
        double ss = 0.0;
        for (std::size_t i : *rows) {
            if (ds.mask(i, k)) {
                const double dxy = ds.x(i, k) - mean;
                ss += dxy * dxy;
            }
        }
        s.mean[k] = mean;
        const double sd = std::sqrt(ss / static_cast<double>(count));
        if (sd > 0.0) s.std[k] = sd;
    }
    return s;
}

inline Standardizer matrix_standardizer(const Grid<double>& x) {
    Standardizer s;
    s.mean.assign(x.cols, 0.0);
    s.std.assign(x.cols, 1.0);
    if (x.rows == 0) return s;
    for (std::size_t k = 0; k < x.cols; ++k) {
        double sum = 0.0;
        for (std::size_t i = 0; i < x.rows; ++i) sum += x(i, k);
        const double mean = sum / static_cast<double>(x.rows);
        double ss = 0.0;
        for (std::size_t i = 0; i < x.rows; ++i) {
            const double dxy = x(i, k) - mean;
            ss += dxy * dxy;
        }
        s.mean[k] = mean;
        const double sd = std::sqrt(ss / static_cast<double>(x.rows));
        if (sd > 0.0) s.std[k] = sd;
    }
    return s;
}

struct LogisticModel {
    ItemOrder item_order;
    std::vector<double> weights;
    double bias = 0.0;
    double lambda = 0.0;
    Standardizer standardizer;

    friend bool operator==(const LogisticModel&, const LogisticModel&) = default;
};

inline std::vector<double> default_lambda_grid() {
    std::vector<double> grid(10);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        grid[i] = std::pow(10.0, -4.0 + 7.0 * static_cast<double>(i) / 9.0);
    }
    return grid;
}

struct TrainOptions {
    std::vector<double> lambda_grid = default_lambda_grid();
    std::size_t folds = 5;
    double tol = 1e-8;
    std::size_t max_iters = 10000;
    std::optional<Standardizer> standardizer;  // default: statistics of the input matrix
};

namespace detail {

inline double sigmoid(double s) { return 1.0 / (1.0 + std::exp(-s)); }

// log(1 + exp(s)) without overflow for large |s|.
inline double log1pexp(double s) {
    return std::max(s, 0.0) + std::log1p(std::exp(-std::abs(s)));
}

}  // namespace detail

/// Mean cross-entropy over rows of z plus (lambda/2)·‖w‖²; bias unpenalized.
inline double logistic_loss(const Grid<double>& z, const std::vector<int>& y,
                            std::span<const double> w, double b, double lambda) {
    double loss = 0.0;
    for (std::size_t i = 0; i < z.rows; ++i) {
        double s = b;
        for (std::size_t k = 0; k < z.cols; ++k) s += w[k] * z(i, k);
        loss += detail::log1pexp(s) - static_cast<double>(y[i]) * s;
    }
    loss /= static_cast<double>(z.rows);
    double penalty = 0.0;
    for (double wk : w) penalty += wk * wk;
    return loss + 0.5 * lambda * penalty;
}

/// Analytic gradient of logistic_loss; returns (d/dw, d/db).
inline std::pair<std::vector<double>, double> logistic_loss_gradient(
    const Grid<double>& z, const std::vector<int>& y, std::span<const double> w, double b,
    double lambda) {
    std::vector<double> gw(z.cols, 0.0);
    double gb = 0.0;
    for (std::size_t i = 0; i < z.rows; ++i) {
        double s = b;
        for (std::size_t k = 0; k < z.cols; ++k) s += w[k] * z(i, k);
        const double r = detail::sigmoid(s) - static_cast<double>(y[i]);
        for (std::size_t k = 0; k < z.cols; ++k) gw[k] += r * z(i, k);
        gb += r;
    }
    const double inv_n = 1.0 / static_cast<double>(z.rows);
    for (std::size_t k = 0; k < z.cols; ++k) gw[k] = gw[k] * inv_n + lambda * w[k];
    return {std::move(gw), gb * inv_n};
}

struct FitResult {
    std::vector<double> weights;
    double bias = 0.0;
    std::vector<double> loss_trace;  // non-increasing under the line search
    double grad_norm = 0.0;
    std::size_t iterations = 0;
};

/// Full-batch gradient descent with backtracking (Armijo) line search.
/// Deterministic: no randomness, fixed iteration order. Stops at gradient
/// norm <= tol, at max_iters, or when no decreasing step remains.
inline FitResult fit_logistic(const Grid<double>& z, const std::vector<int>& y, double lambda,
                              double tol = 1e-8, std::size_t max_iters = 10000) {
    if (z.rows == 0 || z.rows != y.size()) {
        throw ConfigError("fit_logistic: matrix/label size mismatch");
    }
    FitResult res;
    res.weights.assign(z.cols, 0.0);
    // Start the bias at the class-prior log-odds: it is the exact optimum of
    // the w = 0 slice, which keeps the search well-behaved at large lambda.
    double pos = 0.0;
    for (int yi : y) pos += yi;
    const double prior = std::clamp(pos / static_cast<double>(z.rows), 1e-12, 1.0 - 1e-12);
    res.bias = std::log(prior / (1.0 - prior));

    double loss = logistic_loss(z, y, res.weights, res.bias, lambda);
    res.loss_trace.push_back(loss);
    double step = 1.0;
    constexpr double kArmijo = 1e-4;

    for (std::size_t it = 0; it < max_iters; ++it) {
        auto [gw, gb] = logistic_loss_gradient(z, y, res.weights, res.bias, lambda);
        double g2 = gb * gb;
        for (double g : gw) g2 += g * g;
        res.grad_norm = std::sqrt(g2);
        res.iterations = it;
        if (res.grad_norm <= tol) return res;

        double eta = std::min(4.0, step * 2.0);
        bool moved = false;
        std::vector<double> wt(z.cols);
        for (int halvings = 0; halvings < 200; ++halvings) {
            for (std::size_t k = 0; k < z.cols; ++k) wt[k] = res.weights[k] - eta * gw[k];
            const double bt = res.bias - eta * gb;
            const double lt = logistic_loss(z, y, wt, bt, lambda);
            if (lt <= loss - kArmijo * eta * g2) {
                res.weights = wt;
                res.bias = bt;
                loss = lt;
                step = eta;
                moved = true;
                break;
            }
            eta *= 0.5;
        }
        if (!moved) return res;  // at the numerical floor
        res.loss_trace.push_back(loss);
    }
    res.iterations = max_iters;
    return res;
}

/// Round-robin assignment of sorted distinct groups to folds; rows of one
/// group never split across folds.
inline std::vector<std::size_t> group_folds(const std::vector<std::string>& groups,
                                            std::size_t folds) {
    std::vector<std::string> distinct(groups.begin(), groups.end());
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    const std::size_t k = std::min(folds, distinct.size());
    std::map<std::string, std::size_t> fold_of;
    for (std::size_t i = 0; i < distinct.size(); ++i) fold_of[distinct[i]] = i % k;
    std::vector<std::size_t> out(groups.size());
    for (std::size_t i = 0; i < groups.size(); ++i) out[i] = fold_of.at(groups[i]);
    return out;
}

namespace detail {

inline Grid<double> standardize_matrix(const Grid<double>& x, const Standardizer& s) {
    if (s.size() != x.cols) throw ConfigError("standardizer dimension mismatch");
    Grid<double> z(x.rows, x.cols, 0.0);
    for (std::size_t i = 0; i < x.rows; ++i) {
        for (std::size_t k = 0; k < x.cols; ++k) {
            z(i, k) = (x(i, k) - s.mean[k]) / s.std[k];
        }
    }
    return z;
}

inline Grid<double> select_columns(const Grid<double>& z, const std::vector<std::size_t>& cols) {
    Grid<double> out(z.rows, cols.size(), 0.0);
    for (std::size_t i = 0; i < z.rows; ++i) {
        for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = z(i, cols[j]);
    }
    return out;
}

inline Grid<double> select_rows(const Grid<double>& z, const std::vector<std::size_t>& rows) {
    Grid<double> out(rows.size(), z.cols, 0.0);
    for (std::size_t j = 0; j < rows.size(); ++j) {
        for (std::size_t k = 0; k < z.cols; ++k) out(j, k) = z(rows[j], k);
    }
    return out;
}

inline bool both_classes(const std::vector<int>& y) {
    bool has0 = false, has1 = false;
    for (int yi : y) (yi ? has1 : has0) = true;
    return has0 && has1;
}

// Mean unregularized cross-entropy of a fitted (w, b) on validation rows.
inline double validation_loss(const Grid<double>& z, const std::vector<int>& y,
                              std::span<const double> w, double b) {
    return logistic_loss(z, y, w, b, 0.0);
}

}  // namespace detail

/// Trains the regularized model. Columns constant after standardization are
/// excluded from optimization and receive weight exactly 0. Lambda is picked
/// by group-aware CV (ascending grid, ties to the smaller lambda); a
/// single-element grid skips CV. `cv_losses` receives (lambda, mean
/// validation loss) pairs when CV runs.
inline LogisticModel train(const Grid<double>& x, const std::vector<int>& y,
                           const std::vector<std::string>& groups, const TrainOptions& opts = {},
                           std::vector<std::pair<double, double>>* cv_losses = nullptr) {
    const std::size_t n = x.rows;
    if (n == 0 || y.size() != n || groups.size() != n) {
        throw ConfigError("train: rows, labels, and groups must align");
    }
    for (double v : x.cells) {
        if (!std::isfinite(v)) throw DataError("train: non-finite entry in input matrix");
    }
    if (!detail::both_classes(y)) throw DataError("train: both classes required");
    if (opts.folds < 2) throw ConfigError("train: folds must be at least 2");
    if (opts.folds > n) throw ConfigError("train: folds exceed row count");
    if (opts.lambda_grid.empty()) throw ConfigError("train: empty lambda grid");
    for (double l : opts.lambda_grid) {
        if (!(l > 0.0)) throw ConfigError("train: lambda values must be positive");
    }

    const Standardizer stdz = opts.standardizer ? *opts.standardizer : matrix_standardizer(x);
    const Grid<double> z = detail::standardize_matrix(x, stdz);

    std::vector<std::size_t> active;
    for (std::size_t k = 0; k < z.cols; ++k) {
        double lo = z(0, k), hi = z(0, k);
        for (std::size_t i = 1; i < n; ++i) {
            lo = std::min(lo, z(i, k));
            hi = std::max(hi, z(i, k));
        }
        if (hi > lo) active.push_back(k);
    }
    const Grid<double> za = detail::select_columns(z, active);

    std::vector<double> grid = opts.lambda_grid;
    std::sort(grid.begin(), grid.end());
    double chosen = grid.front();

    if (grid.size() > 1) {
        const std::vector<std::size_t> fold_of = group_folds(groups, opts.folds);
        const std::size_t k_folds = *std::max_element(fold_of.begin(), fold_of.end()) + 1;
        if (k_folds < 2) {
            throw ConfigError("train: cross-validation over a lambda grid needs >= 2 groups");
        }
        double best = std::numeric_limits<double>::infinity();
        for (double lambda : grid) {
            double total = 0.0;
            std::size_t evaluated = 0;
            for (std::size_t f = 0; f < k_folds; ++f) {
                std::vector<std::size_t> tr, va;
                for (std::size_t i = 0; i < n; ++i) (fold_of[i] == f ? va : tr).push_back(i);
                if (va.empty()) continue;
                std::vector<int> ytr, yva;
                for (std::size_t i : tr) ytr.push_back(y[i]);
                for (std::size_t i : va) yva.push_back(y[i]);
                if (!detail::both_classes(ytr)) continue;
                const auto fit = fit_logistic(detail::select_rows(za, tr), ytr, lambda,
                                              opts.tol, opts.max_iters);
                total += detail::validation_loss(detail::select_rows(za, va), yva, fit.weights,
                                                 fit.bias);
                ++evaluated;
            }
            if (evaluated == 0) {
                throw ConfigError("train: no usable cross-validation fold (single-class folds)");
            }
            const double mean_loss = total / static_cast<double>(evaluated);
            if (cv_losses) cv_losses->emplace_back(lambda, mean_loss);
            if (mean_loss < best) {
                best = mean_loss;
                chosen = lambda;
            }
        }
    }

    const auto fit = fit_logistic(za, y, chosen, opts.tol, opts.max_iters);
    LogisticModel model;
    model.weights.assign(x.cols, 0.0);
    for (std::size_t j = 0; j < active.size(); ++j) model.weights[active[j]] = fit.weights[j];
    model.bias = fit.bias;
    model.lambda = chosen;
    model.standardizer = stdz;
    return model;
}

inline double score(const LogisticModel& model, std::span<const double> x) {
    if (x.size() != model.weights.size() || x.size() != model.standardizer.size()) {
        throw ConfigError("score: dimension mismatch");
    }
    double s = model.bias;
    for (std::size_t k = 0; k < x.size(); ++k) {
        s += model.weights[k] * (x[k] - model.standardizer.mean[k]) / model.standardizer.std[k];
    }
    return s;
}

inline double predict_proba(const LogisticModel& model, std::span<const double> x) {
    return std::clamp(detail::sigmoid(score(model, x)), 1e-12, 1.0 - 1e-12);
}

/// Mann-Whitney AUC with average ranks for ties.
inline double roc_auc(std::span<const double> scores, const std::vector<int>& y) {
    if (scores.size() != y.size()) throw ConfigError("roc_auc: size mismatch");
    std::size_t n_pos = 0, n_neg = 0;
    for (int yi : y) (yi ? n_pos : n_neg) += 1;
    if (n_pos == 0 || n_neg == 0) throw DataError("roc_auc: both classes required");

    std::vector<std::size_t> idx(scores.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based
        for (std::size_t t = i; t <= j; ++t) {
            if (y[idx[t]]) rank_sum_pos += avg_rank;
        }
        i = j + 1;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

/// Fraction of true positives with probability >= threshold.
inline double tpr_at(std::span<const double> probs, const std::vector<int>& y,
                     double threshold = 0.5) {
    if (probs.size() != y.size()) throw ConfigError("tpr_at: size mismatch");
    std::size_t pos = 0, hit = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i]) {
            ++pos;
            if (probs[i] >= threshold) ++hit;
        }
    }
    if (pos == 0) throw DataError("tpr_at: no positive labels");
    return static_cast<double>(hit) / static_cast<double>(pos);
}

struct EvalReport {
    double auc = 0.0;
    double normalized_auc = 0.0;
    double tpr = 0.0;
    double threshold = 0.5;
    std::vector<std::pair<double, double>> fold_lambdas;
};

struct UnivariateRow {
    std::string item_id;
    std::size_t sample_size = 0;
    double auc = 0.5;
    double normalized_auc = 0.0;
    bool unreliable = false;
};

/// Per-item 1-D logistic fit over only the wafers where the item is
/// observed; no imputation. Items with fewer than 2 wafers in either class
/// are flagged unreliable with normalized_auc pinned to 0.
inline std::vector<UnivariateRow> univariate_screen(const TrajectoryDataset& ds) {
    std::vector<UnivariateRow> rows;
    rows.reserve(ds.item_count());
    for (std::size_t k = 0; k < ds.item_count(); ++k) {
        UnivariateRow row;
        row.item_id = ds.order.items[k];
        std::vector<double> values;
        std::vector<int> labels;
        for (std::size_t i = 0; i < ds.wafer_count(); ++i) {
            if (ds.mask(i, k)) {
                values.push_back(ds.x(i, k));
                labels.push_back(ds.y[i]);
            }
        }
        row.sample_size = values.size();
        std::size_t pos = 0;
        for (int yi : labels) pos += yi;
        const std::size_t neg = labels.size() - pos;
        if (pos < 2 || neg < 2) {
            row.unreliable = true;
            rows.push_back(std::move(row));
            continue;
        }
        Grid<double> col(values.size(), 1, 0.0);
        for (std::size_t i = 0; i < values.size(); ++i) col(i, 0) = values[i];
        const Grid<double> z = detail::standardize_matrix(col, matrix_standardizer(col));
        const auto fit = fit_logistic(z, labels, 1e-6, 1e-8, 1000);
        std::vector<double> scores(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) {
            scores[i] = fit.weights[0] * z(i, 0) + fit.bias;
        }
        row.auc = roc_auc(scores, labels);
        row.normalized_auc = std::abs(2.0 * row.auc - 1.0);
        rows.push_back(std::move(row));
    }
    return rows;
}

// --- persistence -----------------------------------------------------------

inline nlohmann::json model_to_json(const LogisticModel& model) {
    nlohmann::json j;
    j["items"] = model.item_order.items;
    j["weights"] = model.weights;
    j["bias"] = model.bias;
    j["lambda"] = model.lambda;
    j["standardizer"] = {{"mean", model.standardizer.mean}, {"std", model.standardizer.std}};
    return j;
}

inline LogisticModel model_from_json(const nlohmann::json& j) {
    LogisticModel model;
    try {
        model.item_order.items = j.at("items").get<std::vector<std::string>>();
        model.weights = j.at("weights").get<std::vector<double>>();
        model.bias = j.at("bias").get<double>();
        model.lambda = j.at("lambda").get<double>();
        model.standardizer.mean = j.at("standardizer").at("mean").get<std::vector<double>>();
        model.standardizer.std = j.at("standardizer").at("std").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model json: ") + e.what());
    }
    if (model.weights.size() != model.item_order.items.size() ||
        model.weights.size() != model.standardizer.size() ||
        model.standardizer.mean.size() != model.standardizer.std.size()) {
        throw ConfigError("model json: inconsistent dimensions");
    }
    return model;
}

inline void save_model(const LogisticModel& model, const std::filesystem::path& path) {
    csv::write_file_atomic(path, model_to_json(model).dump(2) + "\n");
}

inline LogisticModel load_model(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(csv::read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return model_from_json(j);
}

inline std::string eval_report_csv(const EvalReport& report,
                                   const std::optional<EvalReport>& mean_mode = std::nullopt) {
    std::string out = "metric,value\n";
    auto add = [&out](const std::string& name, double v) {
        out += name + "," + csv::format_double(v) + "\n";
    };
    add("auc", report.auc);
    add("normalized_auc", report.normalized_auc);
    add("tpr", report.tpr);
    add("threshold", report.threshold);
    if (mean_mode) {
        add("auc_column_mean", mean_mode->auc);
        add("normalized_auc_column_mean", mean_mode->normalized_auc);
        add("tpr_column_mean", mean_mode->tpr);
    }
    for (const auto& [lambda, loss] : report.fold_lambdas) {
        out += "cv_loss_lambda_" + csv::format_double(lambda) + "," + csv::format_double(loss) +
               "\n";
    }
    return out;
}

inline std::string univariate_csv(const std::vector<UnivariateRow>& rows) {
    std::string out = "item_id,sample_size,auc,normalized_auc,flag\n";
    for (const auto& r : rows) {
        out += r.item_id + "," + std::to_string(r.sample_size) + "," + csv::format_double(r.auc) +
               "," + csv::format_double(r.normalized_auc) + "," +
               (r.unreliable ? "unreliable" : "ok") + "\n";
    }
    return out;
}

}  // namespace tsa
