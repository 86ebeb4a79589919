#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tsa/csv.hpp"
#include "tsa/data_model.hpp"
#include "tsa/errors.hpp"
#include "tsa/grid.hpp"
#include "tsa/rng.hpp"

namespace tsa {

struct SynthSpec {
    std::uint64_t seed = 42;
    std::size_t n_lots = 6;
    std::size_t wafers_per_lot = 8;
    std::size_t n_items = 40;
    double missing_rate_target = 0.94;
    std::size_t n_causal_items = 3;
    double causal_effect_size = 1.4;
    double label_noise = 0.0;
    double lot_effect_sd = 1.5;
    double reentrant_rate = 0.1;

    friend bool operator==(const SynthSpec&, const SynthSpec&) = default;
};

inline void validate(const SynthSpec& spec) {
    if (spec.n_lots < 1) throw ConfigError("synth spec: n_lots must be >= 1");
    if (spec.wafers_per_lot < 1) throw ConfigError("synth spec: wafers_per_lot must be >= 1");
    if (spec.n_lots * spec.wafers_per_lot < 2) {
        throw ConfigError("synth spec: need at least 2 wafers");
    }
    if (spec.n_items < 1) throw ConfigError("synth spec: n_items must be >= 1");
    if (!(spec.missing_rate_target >= 0.0 && spec.missing_rate_target < 1.0)) {
        throw ConfigError("synth spec: missing_rate_target must be in [0, 1)");
    }
    if (spec.n_causal_items > spec.n_items) {
        throw ConfigError("synth spec: n_causal_items exceeds n_items");
    }
    if (!std::isfinite(spec.causal_effect_size)) {
        throw ConfigError("synth spec: causal_effect_size must be finite");
    }
    if (!(spec.label_noise >= 0.0 && spec.label_noise < 0.5)) {
        throw ConfigError("synth spec: label_noise must be in [0, 0.5)");
    }
    if (!(spec.lot_effect_sd >= 0.0) || !std::isfinite(spec.lot_effect_sd)) {
        throw ConfigError("synth spec: lot_effect_sd must be nonnegative");
    }
    if (!(spec.reentrant_rate >= 0.0 && spec.reentrant_rate <= 1.0)) {
        throw ConfigError("synth spec: reentrant_rate must be in [0, 1]");
    }
}

inline nlohmann::json synth_spec_to_json(const SynthSpec& s) {
    return {{"seed", s.seed},
            {"n_lots", s.n_lots},
            {"wafers_per_lot", s.wafers_per_lot},
            {"n_items", s.n_items},
            {"missing_rate_target", s.missing_rate_target},
            {"n_causal_items", s.n_causal_items},
            {"causal_effect_size", s.causal_effect_size},
            {"label_noise", s.label_noise},
            {"lot_effect_sd", s.lot_effect_sd},
            {"reentrant_rate", s.reentrant_rate}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
    SynthSpec s;
    if (!j.is_object()) throw ConfigError("synth spec: expected a JSON object");
    const nlohmann::json defaults = synth_spec_to_json(s);
    for (const auto& [key, val] : j.items()) {
        if (!defaults.contains(key)) throw ConfigError("synth spec: unknown field '" + key + "'");
    }
    try {
        if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("n_lots")) s.n_lots = j.at("n_lots").get<std::size_t>();
        if (j.contains("wafers_per_lot")) {
            s.wafers_per_lot = j.at("wafers_per_lot").get<std::size_t>();
        }
        if (j.contains("n_items")) s.n_items = j.at("n_items").get<std::size_t>();
        if (j.contains("missing_rate_target")) {
            s.missing_rate_target = j.at("missing_rate_target").get<double>();
        }
        if (j.contains("n_causal_items")) {
            s.n_causal_items = j.at("n_causal_items").get<std::size_t>();
        }
        if (j.contains("causal_effect_size")) {
            s.causal_effect_size = j.at("causal_effect_size").get<double>();
        }
        if (j.contains("label_noise")) s.label_noise = j.at("label_noise").get<double>();
        if (j.contains("lot_effect_sd")) s.lot_effect_sd = j.at("lot_effect_sd").get<double>();
        if (j.contains("reentrant_rate")) s.reentrant_rate = j.at("reentrant_rate").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("synth spec: ") + e.what());
    }
    validate(s);
    return s;
}

struct GroundTruth {
    std::vector<std::string> causal_item_ids;       // sorted
    std::vector<double> true_logit_weights;         // per item index, 0 off the causal set
    std::map<std::string, double> true_logits;      // per wafer, before label noise

    friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

struct SynthOutput {
    std::vector<MeasurementRecord> records;
    std::map<std::string, int> labels;
    std::map<std::string, std::vector<WaferOp>> ops_log;
    GroundTruth truth;
};

namespace detail {

inline std::string padded(std::size_t value, std::size_t width) {
    std::string s = std::to_string(value);
    while (s.size() < width) s.insert(s.begin(), '0');
    return s;
}

inline std::size_t digits_for(std::size_t count, std::size_t min_width) {
    std::size_t width = 1, v = count;
    while (v >= 10) {
        v /= 10;
        ++width;
    }
    return std::max(width, min_width);
}

// Wafer- and noise-level standard deviations, fixed relative to the
// configurable lot effect so the lot signal stays recoverable by imputation.
inline constexpr double kWaferEffectSd = 0.5;
inline constexpr double kNoiseSd = 0.5;
inline constexpr double kCausalObserveRate = 0.85;  // wafer-level rate of planted items
inline constexpr double kSamplingSpreadSd = 0.9;    // lognormal spread of per-item rates
inline constexpr double kDecoyOffset = 3.0;         // shift separating decoys from true values

}  // namespace detail

/// Deterministic synthetic fab: wafers walk operations 0..D-1 (item k is
/// measured at op k), lots occasionally split or borrow a neighbor lot's id
/// over an op range to vary the sharing counts, values decompose into
/// lot + wafer + noise effects, labels follow a logistic model on the
/// planted causal items, and missingness mixes lot-level and wafer-level
/// sampling policies per item with an exact global observation quota.
inline SynthOutput generate(const SynthSpec& spec) {
    validate(spec);
    Rng rng(spec.seed);

    const std::size_t n_lots = spec.n_lots;
    const std::size_t per_lot = spec.wafers_per_lot;
    const std::size_t n = n_lots * per_lot;
    const std::size_t d = spec.n_items;

    const std::size_t wafer_width = detail::digits_for(n, 3);
    const std::size_t lot_width = detail::digits_for(n_lots, 2);
    const std::size_t item_width = detail::digits_for(d, 3);

    std::vector<std::string> wafer_ids(n);
    std::vector<std::string> lot_ids(n_lots);
    std::vector<std::string> item_ids(d);
    for (std::size_t i = 0; i < n; ++i) wafer_ids[i] = "W" + detail::padded(i + 1, wafer_width);
    for (std::size_t g = 0; g < n_lots; ++g) lot_ids[g] = "L" + detail::padded(g + 1, lot_width);
    for (std::size_t k = 0; k < d; ++k) item_ids[k] = "item_" + detail::padded(k + 1, item_width);
    const auto home_lot = [per_lot](std::size_t wafer) { return wafer / per_lot; };

    // Phase 1: routes. lot_at(wafer, op) starts at the home lot; splits move
    // the back half of a lot into a sub-lot over an op range, merges let a
    // whole lot ride in the previous lot over a range.
    Grid<std::string> lot_at(n, d, std::string{});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < d; ++k) lot_at(i, k) = lot_ids[home_lot(i)];
    }
    const std::size_t span = std::max<std::size_t>(1, d / 4);
    for (std::size_t g = 0; g < n_lots; ++g) {
        if (rng.bernoulli(0.5)) {
            const std::size_t start = rng.below(d);
            const std::size_t len = 1 + rng.below(span);
            const std::string sub = lot_ids[g] + "S";
            for (std::size_t i = g * per_lot + per_lot / 2; i < (g + 1) * per_lot; ++i) {
                for (std::size_t k = start; k < std::min(d, start + len); ++k) lot_at(i, k) = sub;
            }
        }
    }
    for (std::size_t g = 1; g < n_lots; ++g) {
        if (rng.bernoulli(0.4)) {
            const std::size_t start = rng.below(d);
            const std::size_t len = 1 + rng.below(span);
            for (std::size_t i = g * per_lot; i < (g + 1) * per_lot; ++i) {
                for (std::size_t k = start; k < std::min(d, start + len); ++k) {
                    lot_at(i, k) = lot_ids[g - 1];
                }
            }
        }
    }
    std::vector<std::size_t> tail_ops(n_lots);
    for (std::size_t g = 0; g < n_lots; ++g) tail_ops[g] = rng.below(4);

    SynthOutput out;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<WaferOp> ops(d);
        for (std::size_t k = 0; k < d; ++k) {
            ops[k] = {static_cast<std::int64_t>(k), lot_at(i, k)};
        }
        for (std::size_t t = 0; t < tail_ops[home_lot(i)]; ++t) {
            ops.push_back({static_cast<std::int64_t>(d + t), lot_ids[home_lot(i)]});
        }
        out.ops_log[wafer_ids[i]] = std::move(ops);
    }

    // Phase 2: effects and values.
    Grid<double> lot_effect(n_lots, d, 0.0);
    for (std::size_t g = 0; g < n_lots; ++g) {
        for (std::size_t k = 0; k < d; ++k) lot_effect(g, k) = spec.lot_effect_sd * rng.normal();
    }
    std::vector<double> wafer_effect(n);
    for (std::size_t i = 0; i < n; ++i) wafer_effect[i] = detail::kWaferEffectSd * rng.normal();
    Grid<double> value(n, d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < d; ++k) {
            value(i, k) =
                lot_effect(home_lot(i), k) + wafer_effect[i] + detail::kNoiseSd * rng.normal();
        }
    }

    // Phase 3: planted causes, evenly spread over the sequence.
    std::set<std::size_t> causal;
    for (std::size_t j = 0; j < spec.n_causal_items; ++j) {
        std::size_t k = ((j + 1) * d) / (spec.n_causal_items + 1);
        if (k >= d) k = d - 1;
        while (causal.contains(k)) k = (k + 1) % d;
        causal.insert(k);
    }
    out.truth.true_logit_weights.assign(d, 0.0);
    for (std::size_t k : causal) {
        out.truth.true_logit_weights[k] = spec.causal_effect_size;
        out.truth.causal_item_ids.push_back(item_ids[k]);
    }
    std::sort(out.truth.causal_item_ids.begin(), out.truth.causal_item_ids.end());

    // Phase 4: labels. Centering at the median raw score keeps the positive
    // rate near one half for any effect size.
    std::vector<double> raw(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k : causal) raw[i] += spec.causal_effect_size * value(i, k);
    }
    const double center = detail::median_of(raw);
    for (std::size_t i = 0; i < n; ++i) {
        const double logit = raw[i] - center;
        out.truth.true_logits[wafer_ids[i]] = logit;
        int label = rng.bernoulli(1.0 / (1.0 + std::exp(-logit))) ? 1 : 0;
        if (rng.bernoulli(spec.label_noise)) label = 1 - label;
        out.labels[wafer_ids[i]] = label;
    }

    // Phase 5: missingness. Planted items are sampled at a high wafer-level
    // rate across all lots; the rest get lognormally spread rates, realized
    // as lot-level participation times wafer-level sampling, then adjusted
    // to the exact observation quota (planted cells toggled only as a last
    // resort so their sampling policy survives adjustment).
    const double total_cells = static_cast<double>(n) * static_cast<double>(d);
    const std::size_t quota = static_cast<std::size_t>(
        std::llround((1.0 - spec.missing_rate_target) * total_cells));
    if (quota == 0) {
        throw DataError("generate: missing_rate_target leaves every wafer with no items");
    }

    std::vector<double> spread(d, 0.0);
    double spread_sum = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
        if (causal.contains(k)) continue;
        spread[k] = std::exp(detail::kSamplingSpreadSd * rng.normal());
        spread_sum += spread[k];
    }
    const double causal_budget =
        detail::kCausalObserveRate * static_cast<double>(causal.size());
    const double noncausal_budget =
        std::max(0.0, static_cast<double>(quota) / static_cast<double>(n) - causal_budget);
    std::vector<double> rate(d, 0.0);
    for (std::size_t k = 0; k < d; ++k) {
        if (causal.contains(k)) {
            rate[k] = detail::kCausalObserveRate;
        } else if (spread_sum > 0.0) {
            rate[k] = std::clamp(noncausal_budget * spread[k] / spread_sum, 0.005, 1.0);
        }
    }

    Grid<std::uint8_t> observed(n, d, 0);
    for (std::size_t k = 0; k < d; ++k) {
        const bool planted = causal.contains(k);
        const double lot_p = planted ? 1.0 : std::pow(rate[k], 2.0 / 3.0);
        const double wafer_p = planted ? rate[k] : rate[k] / lot_p;
        for (std::size_t g = 0; g < n_lots; ++g) {
            if (!rng.bernoulli(lot_p)) continue;
            for (std::size_t i = g * per_lot; i < (g + 1) * per_lot; ++i) {
                if (rng.bernoulli(wafer_p)) observed(i, k) = 1;
            }
        }
    }

    std::size_t have = 0;
    for (auto o : observed.cells) have += o;

    // Every item must surface on at least one wafer: an item with zero
    // measurements produces no column at ingest, which silently shrinks the
    // matrix and drags the realized missing rate below its target. Feasible
    // whenever the quota can spare one cell per item.
    std::vector<std::size_t> col_count(d, 0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < d; ++k) col_count[k] += observed(i, k);
    }
    const bool cover_all = quota >= d;
    if (cover_all) {
        for (std::size_t k = 0; k < d; ++k) {
            if (col_count[k] > 0) continue;
            observed(rng.below(n), k) = 1;
            col_count[k] = 1;
            ++have;
        }
    }

    const auto collect = [&](bool want_observed, bool include_causal) {
        std::vector<std::pair<std::size_t, std::size_t>> cells;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < d; ++k) {
                if (static_cast<bool>(observed(i, k)) != want_observed) continue;
                if (causal.contains(k) != include_causal) continue;
                cells.emplace_back(i, k);
            }
        }
        return cells;
    };
    if (have > quota) {
        auto cells = collect(true, false);
        rng.shuffle(cells);
        auto extra = collect(true, true);
        rng.shuffle(extra);
        cells.insert(cells.end(), extra.begin(), extra.end());
        for (std::size_t t = 0; t < cells.size() && have > quota; ++t) {
            const auto [i, k] = cells[t];
            if (cover_all && col_count[k] <= 1) continue;
            observed(i, k) = 0;
            --col_count[k];
            --have;
        }
    } else if (have < quota) {
        auto cells = collect(false, false);
        rng.shuffle(cells);
        auto extra = collect(false, true);
        rng.shuffle(extra);
        for (std::size_t t = 0; t < cells.size() && have < quota; ++t) {
            const auto [i, k] = cells[t];
            observed(i, k) = 1;
            ++col_count[k];
            ++have;
        }
        for (std::size_t t = 0; t < extra.size() && have < quota; ++t) {
            const auto [i, k] = extra[t];
            observed(i, k) = 1;
            ++col_count[k];
            ++have;
        }
    }

    // Phase 6: measurement records, plus early decoy measurements on a
    // fraction of items; deduplication keeps the later (true) op.
    const std::size_t n_reentrant = static_cast<std::size_t>(
        std::llround(spec.reentrant_rate * static_cast<double>(d)));
    std::vector<std::size_t> reentrant_pool;
    for (std::size_t k = 1; k < d; ++k) reentrant_pool.push_back(k);
    rng.shuffle(reentrant_pool);
    std::set<std::size_t> reentrant(
        reentrant_pool.begin(),
        reentrant_pool.begin() +
            std::min(n_reentrant, reentrant_pool.size()));

    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < d; ++k) {
            if (!observed(i, k)) continue;
            MeasurementRecord r;
            r.wafer_id = wafer_ids[i];
            r.lot_id = lot_at(i, k);
            r.item_id = item_ids[k];
            r.op_index = static_cast<std::int64_t>(k);
            r.timestamp = static_cast<double>(k + 1) * 3600.0;
            r.value = value(i, k);
            out.records.push_back(std::move(r));
            if (reentrant.contains(k)) {
                const std::size_t early = k >= 3 ? k - 3 : 0;
                MeasurementRecord decoy;
                decoy.wafer_id = wafer_ids[i];
                decoy.lot_id = lot_at(i, early);
                decoy.item_id = item_ids[k];
                decoy.op_index = static_cast<std::int64_t>(early);
                decoy.timestamp = static_cast<double>(early + 1) * 3600.0;
                decoy.value = value(i, k) + detail::kDecoyOffset + 0.5 * rng.normal();
                out.records.push_back(std::move(decoy));
            }
        }
    }
    return out;
}

inline SynthOutput replay(const SynthSpec& spec, std::uint64_t seed) {
    SynthSpec s = spec;
    s.seed = seed;
    return generate(s);
}

inline nlohmann::json ground_truth_to_json(const GroundTruth& truth) {
    return {{"causal_item_ids", truth.causal_item_ids},
            {"true_logit_weights", truth.true_logit_weights}};
}

/// Writes measurements.csv, labels.csv, ops.csv, and ground_truth.json.
inline void write_synth_csvs(const SynthOutput& out, const std::filesystem::path& dir) {
    std::string meas = "wafer_id,lot_id,item_id,op_index,timestamp,value\n";
    for (const auto& r : out.records) {
        meas += r.wafer_id + "," + r.lot_id + "," + r.item_id + "," +
                std::to_string(r.op_index) + "," + csv::format_double(r.timestamp) + "," +
                csv::format_double(r.value) + "\n";
    }
    csv::write_file_atomic(dir / "measurements.csv", meas);

    std::string labels = "wafer_id,label\n";
    for (const auto& [wafer, label] : out.labels) {
        labels += wafer + "," + std::to_string(label) + "\n";
    }
    csv::write_file_atomic(dir / "labels.csv", labels);

    std::string ops = "wafer_id,op_index,lot_id\n";
    for (const auto& [wafer, wafer_ops] : out.ops_log) {
        for (const auto& op : wafer_ops) {
            ops += wafer + "," + std::to_string(op.op_index) + "," + op.lot_id + "\n";
        }
    }
    csv::write_file_atomic(dir / "ops.csv", ops);

    csv::write_file_atomic(dir / "ground_truth.json",
                           ground_truth_to_json(out.truth).dump(2) + "\n");
}

}  // namespace tsa
