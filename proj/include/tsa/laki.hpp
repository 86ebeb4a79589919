#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsa/data_model.hpp"
#include "tsa/errors.hpp"
#include "tsa/grid.hpp"

namespace tsa {

/// Lot-sharing counts and the Jaccard kernel derived from them.
/// shared_ops(n, m) = operations wafers n and m spent in the same lot;
/// the diagonal holds each wafer's total pre-label operation count.
struct LotKernel {
    Grid<std::int64_t> shared_ops;  // C
    Grid<double> weight;            // W, symmetric, zero diagonal, in [0,1]

    friend bool operator==(const LotKernel&, const LotKernel&) = default;
};

enum class Provenance : std::uint8_t { observed, kernel_imputed, column_mean_fallback };

struct ImputedDataset {
    Grid<double> x_filled;
    Grid<Provenance> provenance;
    std::vector<double> column_means;  // x̄_k; 0 for columns with no observations

    friend bool operator==(const ImputedDataset&, const ImputedDataset&) = default;
};

inline LotKernel build_lot_kernel(const TrajectoryDataset& ds) {
    const std::size_t n = ds.wafer_count();
    LotKernel kernel;
    kernel.shared_ops = Grid<std::int64_t>(n, n, 0);
    kernel.weight = Grid<double>(n, n, 0.0);

    std::vector<const std::vector<WaferOp>*> ops(n);
    for (std::size_t i = 0; i < n; ++i) {
        ops[i] = &ds.ops.at(ds.wafers[i]);
        if (ops[i]->empty()) {
            throw DataError("build_lot_kernel: wafer " + ds.wafers[i] + " has no operations");
        }
        kernel.shared_ops(i, i) = static_cast<std::int64_t>(ops[i]->size());
    }

    // Every logged op precedes its wafer's label point, so a merge over
    // aligned op indices already counts only ops before both label points.
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = a + 1; b < n; ++b) {
            const auto& oa = *ops[a];
            const auto& ob = *ops[b];
            std::int64_t shared = 0;
            std::size_t i = 0, j = 0;
            while (i < oa.size() && j < ob.size()) {
                if (oa[i].op_index < ob[j].op_index) {
                    ++i;
                } else if (ob[j].op_index < oa[i].op_index) {
                    ++j;
                } else {
                    if (oa[i].lot_id == ob[j].lot_id) ++shared;
                    ++i;
                    ++j;
                }
            }
            kernel.shared_ops(a, b) = shared;
            kernel.shared_ops(b, a) = shared;
            const std::int64_t denom =
                kernel.shared_ops(a, a) + kernel.shared_ops(b, b) - shared;
            const double w = static_cast<double>(shared) / static_cast<double>(denom);
            kernel.weight(a, b) = w;
            kernel.weight(b, a) = w;
        }
    }
    return kernel;
}

inline std::vector<double> column_means(const TrajectoryDataset& ds) {
    const std::size_t n = ds.wafer_count();
    const std::size_t d = ds.item_count();
    std::vector<double> means(d, 0.0);
    for (std::size_t k = 0; k < d; ++k) {
        double sum = 0.0;
        std::size_t count = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (ds.mask(i, k)) {
                sum += ds.x(i, k);
                ++count;
            }
        }
        means[k] = count > 0 ? sum / static_cast<double>(count) : 0.0;
    }
    return means;
}

namespace detail {

/// Kernel-weighted average of item `col` over observed peers of `row`.
/// nullopt when no peer carries positive weight. Shared by impute and
/// baseline_trajectory so that both produce bit-identical values.
inline std::optional<double> kernel_estimate(const TrajectoryDataset& ds,
                                             const LotKernel& kernel,
                                             std::size_t row, std::size_t col) {
    double num = 0.0, den = 0.0;
    for (std::size_t m = 0; m < ds.wafer_count(); ++m) {
        if (m == row || !ds.mask(m, col)) continue;
        const double w = kernel.weight(row, m);
        num += w * ds.x(m, col);
        den += w;
    }
    if (den > 0.0) return num / den;
    return std::nullopt;
}

}  // namespace detail

inline ImputedDataset impute(const TrajectoryDataset& ds, const LotKernel& kernel) {
    const std::size_t n = ds.wafer_count();
    const std::size_t d = ds.item_count();
    ImputedDataset out;
    out.x_filled = Grid<double>(n, d, 0.0);
    out.provenance = Grid<Provenance>(n, d, Provenance::observed);
    out.column_means = column_means(ds);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < d; ++k) {
            if (ds.mask(i, k)) {
                out.x_filled(i, k) = ds.x(i, k);
                continue;
            }
            if (auto est = detail::kernel_estimate(ds, kernel, i, k)) {
                out.x_filled(i, k) = *est;
                out.provenance(i, k) = Provenance::kernel_imputed;
            } else {
                out.x_filled(i, k) = out.column_means[k];
                out.provenance(i, k) = Provenance::column_mean_fallback;
            }
        }
    }
    return out;
}

/// Comparison mode: every missing entry gets the column mean, no kernel.
inline ImputedDataset impute_column_mean(const TrajectoryDataset& ds) {
    const std::size_t n = ds.wafer_count();
    const std::size_t d = ds.item_count();
    ImputedDataset out;
    out.x_filled = Grid<double>(n, d, 0.0);
    out.provenance = Grid<Provenance>(n, d, Provenance::observed);
    out.column_means = column_means(ds);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < d; ++k) {
            if (ds.mask(i, k)) {
                out.x_filled(i, k) = ds.x(i, k);
            } else {
                out.x_filled(i, k) = out.column_means[k];
                out.provenance(i, k) = Provenance::column_mean_fallback;
            }
        }
    }
    return out;
}

/// The wafer's counterfactual non-participation trajectory x⁰: every item
/// imputed as if the wafer's own entry were missing. Missing entries of the
/// wafer therefore reproduce impute()'s values exactly.
inline std::vector<double> baseline_trajectory(const TrajectoryDataset& ds,
                                               const LotKernel& kernel,
                                               const std::string& wafer) {
    const auto row = ds.wafer_index(wafer);
    if (!row) throw MissingEntityError("baseline_trajectory: unknown wafer " + wafer);
    const std::vector<double> means = column_means(ds);
    std::vector<double> x0(ds.item_count());
    for (std::size_t k = 0; k < ds.item_count(); ++k) {
        if (auto est = detail::kernel_estimate(ds, kernel, *row, k)) {
            x0[k] = *est;
        } else {
            x0[k] = means[k];
        }
    }
    return x0;
}

inline nlohmann::json imputed_to_json(const TrajectoryDataset& ds, const ImputedDataset& imp) {
    nlohmann::json j = dataset_to_json(ds);
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < imp.x_filled.rows; ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t k = 0; k < imp.x_filled.cols; ++k) {
            row.push_back(imp.x_filled(i, k));
        }
        rows.push_back(std::move(row));
    }
    j["X"] = std::move(rows);
    nlohmann::json prov = nlohmann::json::array();
    for (std::size_t i = 0; i < imp.provenance.rows; ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t k = 0; k < imp.provenance.cols; ++k) {
            switch (imp.provenance(i, k)) {
                case Provenance::observed: row.push_back("observed"); break;
                case Provenance::kernel_imputed: row.push_back("kernel_imputed"); break;
                case Provenance::column_mean_fallback: row.push_back("column_mean_fallback"); break;
            }
        }
        prov.push_back(std::move(row));
    }
    j["provenance"] = std::move(prov);
    return j;
}

}  // namespace tsa
