#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tsa/data_model.hpp"
#include "tsa/errors.hpp"
#include "tsa/grid.hpp"
#include "tsa/laki.hpp"

namespace tsa {

/// Set of participating item indices (0-based). Trajectory-admissible
/// coalitions are exactly the prefixes {0..k-1}.
struct Coalition {
    std::vector<std::size_t> members;  // sorted ascending, no duplicates

    static Coalition prefix(std::size_t k) {
        Coalition c;
        c.members.resize(k);
        for (std::size_t i = 0; i < k; ++i) c.members[i] = i;
        return c;
    }

    bool is_prefix() const {
        for (std::size_t i = 0; i < members.size(); ++i) {
            if (members[i] != i) return false;
        }
        return true;
    }

    friend bool operator==(const Coalition&, const Coalition&) = default;
};

enum class ValueMode { baseline_mean, conditional_expectation, laki_trajectory };

inline std::string value_mode_name(ValueMode mode) {
    switch (mode) {
        case ValueMode::baseline_mean: return "baseline";
        case ValueMode::conditional_expectation: return "ce";
        case ValueMode::laki_trajectory: return "tsa";
    }
    return "?";
}

/// The coalition value v(S): f applied to x_t on S and mode-dependent
/// background off S. Exactly one background kind must match the mode:
/// column means, a training matrix, or a kernel + dataset (or an explicit
/// precomputed baseline trajectory).
struct ValueFunctionSpec {
    ValueMode mode = ValueMode::baseline_mean;
    std::function<double(std::span<const double>)> f;
    std::vector<double> baseline_means;                     // baseline_mean
    const Grid<double>* background = nullptr;               // conditional_expectation
    const TrajectoryDataset* dataset = nullptr;             // laki_trajectory
    const LotKernel* kernel = nullptr;                      // laki_trajectory
    std::optional<std::vector<double>> baseline_override;   // laki_trajectory
};

namespace detail {

inline void require_f(const ValueFunctionSpec& spec) {
    if (!spec.f) throw ConfigError("value function: no scoring function set");
}

/// x⁰ for the wafer under a laki_trajectory spec.
inline std::vector<double> resolve_baseline(const ValueFunctionSpec& spec,
                                            const std::string& wafer, std::size_t d) {
    if (spec.mode != ValueMode::laki_trajectory) {
        throw ConfigError("value function: baseline trajectory requested for a non-trajectory mode");
    }
    if (spec.baseline_override) {
        if (spec.baseline_override->size() != d) {
            throw ConfigError("value function: baseline override dimension mismatch");
        }
        return *spec.baseline_override;
    }
    if (!spec.dataset || !spec.kernel) {
        throw ConfigError("value function: laki_trajectory needs a dataset and kernel");
    }
    if (wafer.empty()) {
        throw ConfigError("value function: laki_trajectory needs a wafer id");
    }
    return baseline_trajectory(*spec.dataset, *spec.kernel, wafer);
}

}  // namespace detail

inline double value(const ValueFunctionSpec& spec, const Coalition& coalition,
                    std::span<const double> x_t, const std::string& wafer = {}) {
    detail::require_f(spec);
    const std::size_t d = x_t.size();
    for (std::size_t m : coalition.members) {
        if (m >= d) throw ConfigError("value function: coalition member out of range");
    }
    std::vector<std::uint8_t> in(d, 0);
    for (std::size_t m : coalition.members) in[m] = 1;

    switch (spec.mode) {
        case ValueMode::baseline_mean: {
            if (spec.baseline_means.size() != d) {
                throw ConfigError("value function: baseline means dimension mismatch");
            }
            std::vector<double> blend(d);
            for (std::size_t k = 0; k < d; ++k) {
                blend[k] = in[k] ? x_t[k] : spec.baseline_means[k];
            }
            return spec.f(blend);
        }
        case ValueMode::conditional_expectation: {
            if (!spec.background || spec.background->cols != d) {
                throw ConfigError("value function: background matrix missing or mismatched");
            }
            if (spec.background->rows == 0) {
                throw ConfigError("value function: empty background matrix");
            }
            std::vector<double> blend(d);
            double total = 0.0;
            for (std::size_t n = 0; n < spec.background->rows; ++n) {
                for (std::size_t k = 0; k < d; ++k) {
                    blend[k] = in[k] ? x_t[k] : (*spec.background)(n, k);
                }
                total += spec.f(blend);
            }
            return total / static_cast<double>(spec.background->rows);
        }
        case ValueMode::laki_trajectory: {
            const std::vector<double> x0 = detail::resolve_baseline(spec, wafer, d);
            std::vector<double> blend(d);
            for (std::size_t k = 0; k < d; ++k) blend[k] = in[k] ? x_t[k] : x0[k];
            return spec.f(blend);
        }
    }
    throw ConfigError("value function: unknown mode");
}

struct AttributionVector {
    std::string wafer_id;
    std::vector<double> scores;
    double v_full = 0.0;   // v over the full coalition, f(x_t)
    double v_empty = 0.0;  // v over the empty coalition
    std::string method;    // "baseline" | "ce" | "tsa" | "sv_laki"

    double sum_rule_residual() const {
        double total = 0.0;
        for (double s : scores) total += s;
        return total - (v_full - v_empty);
    }

    friend bool operator==(const AttributionVector&, const AttributionVector&) = default;
};

namespace detail {

inline void check_sum_rule(const AttributionVector& attr) {
    const double residual = std::abs(attr.sum_rule_residual());
    const double scale = std::max(1.0, std::abs(attr.v_full - attr.v_empty));
    if (!(residual <= 1e-9 * scale)) {
        throw ValidationError("attribution: sum rule violated for wafer " + attr.wafer_id +
                              " (residual " + std::to_string(residual) + ")");
    }
}

}  // namespace detail

inline constexpr std::size_t kExactEnumerationMaxD = 20;

/// Classical Shapley values by full subset enumeration. Exponential in D;
/// guarded. For large D use trajectory_shapley, which needs D+1 evaluations.
inline AttributionVector shapley_exact(const ValueFunctionSpec& spec,
                                       std::span<const double> x_t,
                                       const std::string& wafer = {}) {
    detail::require_f(spec);
    const std::size_t d = x_t.size();
    if (d == 0) throw ConfigError("shapley_exact: empty input");
    if (d > kExactEnumerationMaxD) {
        throw ConfigError("shapley_exact: D > 20; use trajectory_shapley or a sampling scheme");
    }

    const std::uint32_t full = (1u << d) - 1u;
    std::vector<double> v(static_cast<std::size_t>(full) + 1);
    Coalition c;
    for (std::uint32_t s = 0; s <= full; ++s) {
        c.members.clear();
        for (std::size_t k = 0; k < d; ++k) {
            if (s & (1u << k)) c.members.push_back(k);
        }
        v[s] = value(spec, c, x_t, wafer);
    }

    // weight(k) = k! (D-1-k)! / D! = 1 / (D * C(D-1, k)), the marginal weight
    // for a coalition of size k not containing the player.
    std::vector<double> weight(d);
    for (std::size_t k = 0; k < d; ++k) {
        double comb = 1.0;  // C(D-1, k), exact in double for D <= 20
        for (std::size_t j = 1; j <= k; ++j) {
            comb = comb * static_cast<double>(d - j) / static_cast<double>(j);
        }
        weight[k] = 1.0 / (static_cast<double>(d) * comb);
    }

    AttributionVector attr;
    attr.wafer_id = wafer;
    attr.method = spec.mode == ValueMode::laki_trajectory ? "sv_laki" : value_mode_name(spec.mode);
    attr.scores.assign(d, 0.0);
    attr.v_full = v[full];
    attr.v_empty = v[0];
    for (std::size_t i = 0; i < d; ++i) {
        const std::uint32_t bit = 1u << i;
        double sv = 0.0;
        for (std::uint32_t s = 0; s <= full; ++s) {
            if (s & bit) continue;
            const std::size_t k = static_cast<std::size_t>(std::popcount(s));
            sv += weight[k] * (v[s | bit] - v[s]);
        }
        attr.scores[i] = sv;
    }
    detail::check_sum_rule(attr);
    return attr;
}

/// Closed-form trajectory attribution: s_i is f's gain when item i joins the
/// prefix of items before it, all later items held at the baseline x⁰.
/// Exactly D+1 evaluations of f.
inline AttributionVector trajectory_shapley(const ValueFunctionSpec& spec,
                                            std::span<const double> x_t,
                                            const std::string& wafer) {
    detail::require_f(spec);
    if (spec.mode != ValueMode::laki_trajectory) {
        throw ConfigError("trajectory_shapley: spec mode must be laki_trajectory");
    }
    const std::size_t d = x_t.size();
    const std::vector<double> x0 = detail::resolve_baseline(spec, wafer, d);

    AttributionVector attr;
    attr.wafer_id = wafer;
    attr.method = "tsa";
    attr.scores.assign(d, 0.0);

    std::vector<double> blend(x0);
    double prev = spec.f(blend);
    attr.v_empty = prev;
    for (std::size_t i = 0; i < d; ++i) {
        blend[i] = x_t[i];
        const double cur = spec.f(blend);
        attr.scores[i] = cur - prev;
        prev = cur;
    }
    attr.v_full = prev;
    detail::check_sum_rule(attr);
    return attr;
}

inline constexpr std::size_t kOracleMaxD = 12;

/// Validation oracle: computes the same attribution from scratch by
/// enumerating all admissible prefix coalitions through the generic value()
/// path. Uses exactly D+1 coalition evaluations (reported via eval_count).
inline AttributionVector trajectory_shapley_oracle(const ValueFunctionSpec& spec,
                                                   std::span<const double> x_t,
                                                   const std::string& wafer,
                                                   std::size_t* eval_count = nullptr) {
    detail::require_f(spec);
    if (spec.mode != ValueMode::laki_trajectory) {
        throw ConfigError("trajectory_shapley_oracle: spec mode must be laki_trajectory");
    }
    const std::size_t d = x_t.size();
    if (d > kOracleMaxD) throw ConfigError("trajectory_shapley_oracle: D > 12");

    std::vector<double> v(d + 1);
    std::size_t evals = 0;
    for (std::size_t k = 0; k <= d; ++k) {
        v[k] = value(spec, Coalition::prefix(k), x_t, wafer);
        ++evals;
    }
    if (eval_count) *eval_count = evals;

    AttributionVector attr;
    attr.wafer_id = wafer;
    attr.method = "tsa";
    attr.scores.assign(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) attr.scores[i] = v[i + 1] - v[i];
    attr.v_empty = v[0];
    attr.v_full = v[d];
    detail::check_sum_rule(attr);
    return attr;
}

/// Attribution scores explain f(x_t), not the error; the residual flag marks
/// wafers where the two diverge and scores should be read with care.
struct DeviationReport {
    double residual = 0.0;  // f(x_t) - y
    bool large_residual = false;
};

inline DeviationReport deviation_report(const AttributionVector& attr, int y_true) {
    if (y_true != 0 && y_true != 1) throw ConfigError("deviation_report: label must be 0 or 1");
    DeviationReport rep;
    rep.residual = attr.v_full - static_cast<double>(y_true);
    rep.large_residual = std::abs(rep.residual) > 0.5;
    return rep;
}

/// CSV rows `wafer_id,item_id,timestamp,score,method,v_full,v_empty`, one
/// per item, with the sum-rule residual in a trailing comment row.
inline std::string attribution_csv(const AttributionVector& attr, const ItemOrder& order) {
    if (order.size() != attr.scores.size()) {
        throw ConfigError("attribution_csv: item order does not match score count");
    }
    std::string out = "wafer_id,item_id,timestamp,score,method,v_full,v_empty\n";
    for (std::size_t k = 0; k < order.size(); ++k) {
        out += attr.wafer_id + "," + order.items[k] + "," +
               csv::format_double(order.timestamps[k]) + "," +
               csv::format_double(attr.scores[k]) + "," + attr.method + "," +
               csv::format_double(attr.v_full) + "," + csv::format_double(attr.v_empty) + "\n";
    }
    out += "# sum_rule_residual," + csv::format_double(attr.sum_rule_residual()) + "\n";
    return out;
}

}  // namespace tsa
