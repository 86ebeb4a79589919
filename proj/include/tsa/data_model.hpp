#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tsa/csv.hpp"
#include "tsa/errors.hpp"
#include "tsa/grid.hpp"

namespace tsa {

/// One raw in-line measurement, prior to reentrant-step deduplication.
struct MeasurementRecord {
    std::string wafer_id;
    std::string lot_id;
    std::string item_id;
    std::int64_t op_index = 0;  // position in the wafer's operation sequence
    double timestamp = 0.0;     // seconds, nonnegative, non-decreasing in op_index
    double value = 0.0;

    friend bool operator==(const MeasurementRecord&, const MeasurementRecord&) = default;
};

struct WaferOp {
    std::int64_t op_index = 0;
    std::string lot_id;

    friend auto operator<=>(const WaferOp&, const WaferOp&) = default;
};

/// The D measurement items in process order, each with one representative
/// timestamp (median observed timestamp across wafers).
struct ItemOrder {
    std::vector<std::string> items;
    std::vector<double> timestamps;

    std::size_t size() const { return items.size(); }

    std::optional<std::size_t> index_of(const std::string& item) const {
        auto it = std::find(items.begin(), items.end(), item);
        if (it == items.end()) return std::nullopt;
        return static_cast<std::size_t>(it - items.begin());
    }

    friend bool operator==(const ItemOrder&, const ItemOrder&) = default;
};

/// Fixed-dimensional N x D dataset of deduplicated measurements with an
/// explicit missingness mask. Immutable after construction; masked-out cells
/// hold 0.0 and must never feed downstream math except through imputation.
struct TrajectoryDataset {
    std::vector<std::string> wafers;             // sorted wafer ids
    std::map<std::string, std::string> lots;     // wafer -> lot at its first op
    Grid<double> x;                              // N x D
    Grid<std::uint8_t> mask;                     // 1 = observed
    std::vector<int> y;                          // 1 = bad wafer
    std::map<std::string, std::vector<WaferOp>> ops;  // per wafer, sorted, pre-label ops
    ItemOrder order;

    std::size_t wafer_count() const { return wafers.size(); }
    std::size_t item_count() const { return order.size(); }

    std::optional<std::size_t> wafer_index(const std::string& id) const {
        auto it = std::lower_bound(wafers.begin(), wafers.end(), id);
        if (it == wafers.end() || *it != id) return std::nullopt;
        return static_cast<std::size_t>(it - wafers.begin());
    }

    friend bool operator==(const TrajectoryDataset&, const TrajectoryDataset&) = default;
};

struct IngestReport {
    std::size_t dropped_unlabeled_wafers = 0;
    std::size_t deduplicated_records = 0;
};

struct SummaryStats {
    std::size_t n = 0;
    std::size_t d = 0;
    double missing_rate = 0.0;
    double label_rate = 0.0;
};

namespace detail {

inline std::string describe(const MeasurementRecord& r) {
    return "(wafer=" + r.wafer_id + ", item=" + r.item_id +
           ", op_index=" + std::to_string(r.op_index) + ")";
}

inline double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    if (n % 2 == 1) return v[n / 2];
    return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

/// Builds a TrajectoryDataset from raw records. Reentrant measurements are
/// deduplicated per (wafer, item) keeping the record with the largest
/// op_index; wafers without labels are dropped (counted in the report);
/// items are ordered by median op_index with lexicographic tie-break.
inline TrajectoryDataset ingest(const std::vector<MeasurementRecord>& records,
                                const std::map<std::string, int>& labels,
                                const std::map<std::string, std::vector<WaferOp>>& ops_log,
                                IngestReport* report = nullptr) {
    if (records.empty()) throw DataError("ingest: no measurement records");
    if (labels.empty()) throw DataError("ingest: no labels");
    for (const auto& [wafer, label] : labels) {
        if (label != 0 && label != 1) {
            throw DataError("ingest: label for wafer " + wafer + " must be 0 or 1");
        }
        if (!ops_log.contains(wafer)) {
            throw DataError("ingest: labeled wafer " + wafer + " missing from ops log");
        }
    }
    for (const auto& r : records) {
        if (!std::isfinite(r.value)) {
            throw DataError("ingest: non-finite value " + detail::describe(r));
        }
        if (!std::isfinite(r.timestamp) || r.timestamp < 0.0) {
            throw DataError("ingest: bad timestamp " + detail::describe(r));
        }
        if (r.op_index < 0) {
            throw DataError("ingest: negative op_index " + detail::describe(r));
        }
    }

    // Drop records of unlabeled wafers.
    std::set<std::string> dropped;
    std::vector<const MeasurementRecord*> kept;
    kept.reserve(records.size());
    for (const auto& r : records) {
        if (labels.contains(r.wafer_id)) {
            kept.push_back(&r);
        } else {
            dropped.insert(r.wafer_id);
        }
    }
    if (report) report->dropped_unlabeled_wafers = dropped.size();
    if (kept.empty()) throw DataError("ingest: no records belong to labeled wafers");

    // Timestamps must be non-decreasing in op_index within each wafer.
    {
        std::map<std::string, std::vector<const MeasurementRecord*>> by_wafer;
        for (const auto* r : kept) by_wafer[r->wafer_id].push_back(r);
        for (auto& [wafer, rs] : by_wafer) {
            std::sort(rs.begin(), rs.end(), [](const auto* a, const auto* b) {
                return a->op_index < b->op_index;
            });
            double running_max = -1.0;
            std::size_t i = 0;
            while (i < rs.size()) {
                std::size_t j = i;
                double lo = rs[i]->timestamp, hi = rs[i]->timestamp;
                while (j + 1 < rs.size() && rs[j + 1]->op_index == rs[i]->op_index) {
                    ++j;
                    lo = std::min(lo, rs[j]->timestamp);
                    hi = std::max(hi, rs[j]->timestamp);
                }
                if (lo < running_max) {
                    throw DataError("ingest: timestamp decreases with op_index for wafer " +
                                    wafer);
                }
                running_max = std::max(running_max, hi);
                i = j + 1;
            }
        }
    }

    // Detect conflicting duplicates on identical (wafer, item, op_index).
    {
        std::map<std::tuple<std::string, std::string, std::int64_t>, double> seen;
        for (const auto* r : kept) {
            auto key = std::make_tuple(r->wafer_id, r->item_id, r->op_index);
            auto [it, inserted] = seen.emplace(key, r->value);
            if (!inserted && it->second != r->value) {
                throw DataError("ingest: conflicting duplicate record " + detail::describe(*r));
            }
        }
    }

    // Deduplicate: per (wafer, item) keep the record with the largest op_index.
    std::map<std::pair<std::string, std::string>, const MeasurementRecord*> surviving;
    for (const auto* r : kept) {
        auto key = std::make_pair(r->wafer_id, r->item_id);
        auto it = surviving.find(key);
        if (it == surviving.end() || r->op_index > it->second->op_index) {
            surviving[key] = r;
        }
    }
    if (report) report->deduplicated_records = kept.size() - surviving.size();

    // Item order: median op_index across wafers, ties by item_id; per-item
    // representative timestamp is the median observed timestamp.
    std::map<std::string, std::vector<double>> op_samples;
    std::map<std::string, std::vector<double>> ts_samples;
    for (const auto& [key, r] : surviving) {
        op_samples[r->item_id].push_back(static_cast<double>(r->op_index));
        ts_samples[r->item_id].push_back(r->timestamp);
    }
    std::vector<std::pair<double, std::string>> ranked;
    ranked.reserve(op_samples.size());
    for (const auto& [item, ops_of_item] : op_samples) {
        ranked.emplace_back(detail::median_of(ops_of_item), item);
    }
    std::sort(ranked.begin(), ranked.end());

    TrajectoryDataset ds;
    for (const auto& [med, item] : ranked) {
        ds.order.items.push_back(item);
        ds.order.timestamps.push_back(detail::median_of(ts_samples[item]));
    }

    for (const auto& [wafer, label] : labels) ds.wafers.push_back(wafer);
    std::sort(ds.wafers.begin(), ds.wafers.end());

    const std::size_t n = ds.wafers.size();
    const std::size_t d = ds.order.size();
    ds.x = Grid<double>(n, d, 0.0);
    ds.mask = Grid<std::uint8_t>(n, d, 0);
    ds.y.resize(n);

    std::map<std::string, std::size_t> item_index;
    for (std::size_t k = 0; k < d; ++k) item_index[ds.order.items[k]] = k;

    for (std::size_t i = 0; i < n; ++i) ds.y[i] = labels.at(ds.wafers[i]);
    for (const auto& [key, r] : surviving) {
        const std::size_t row = *ds.wafer_index(r->wafer_id);
        const std::size_t col = item_index.at(r->item_id);
        ds.x(row, col) = r->value;
        ds.mask(row, col) = 1;
    }

    // Operation log: sorted per wafer, identical duplicates collapsed,
    // conflicting lot assignments at one op rejected.
    for (const auto& wafer : ds.wafers) {
        std::vector<WaferOp> wafer_ops = ops_log.at(wafer);
        std::sort(wafer_ops.begin(), wafer_ops.end());
        std::vector<WaferOp> cleaned;
        for (const auto& op : wafer_ops) {
            if (op.op_index < 0) {
                throw DataError("ingest: negative op_index in ops log for wafer " + wafer);
            }
            if (!cleaned.empty() && cleaned.back().op_index == op.op_index) {
                if (cleaned.back().lot_id != op.lot_id) {
                    throw DataError("ingest: conflicting lot for wafer " + wafer +
                                    " at op " + std::to_string(op.op_index));
                }
                continue;
            }
            cleaned.push_back(op);
        }
        ds.lots[wafer] = cleaned.empty() ? std::string{} : cleaned.front().lot_id;
        ds.ops[wafer] = std::move(cleaned);
    }

    return ds;
}

inline SummaryStats summary_stats(const TrajectoryDataset& ds) {
    SummaryStats s;
    s.n = ds.wafer_count();
    s.d = ds.item_count();
    const std::size_t total = s.n * s.d;
    if (total > 0) {
        std::size_t observed = 0;
        for (auto m : ds.mask.cells) observed += m;
        s.missing_rate = 1.0 - static_cast<double>(observed) / static_cast<double>(total);
    }
    if (s.n > 0) {
        double sum = 0.0;
        for (int label : ds.y) sum += label;
        s.label_rate = sum / static_cast<double>(s.n);
    }
    return s;
}

// --- canonical JSON serialization ---------------------------------------

inline nlohmann::json dataset_to_json(const TrajectoryDataset& ds) {
    nlohmann::json j;
    j["items"] = ds.order.items;
    j["timestamps"] = ds.order.timestamps;
    j["wafers"] = ds.wafers;
    j["lots"] = ds.lots;
    j["y"] = ds.y;
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < ds.wafer_count(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t k = 0; k < ds.item_count(); ++k) {
            if (ds.mask(i, k)) {
                row.push_back(ds.x(i, k));
            } else {
                row.push_back(nullptr);
            }
        }
        rows.push_back(std::move(row));
    }
    j["X"] = std::move(rows);
    nlohmann::json ops = nlohmann::json::object();
    for (const auto& [wafer, wafer_ops] : ds.ops) {
        nlohmann::json list = nlohmann::json::array();
        for (const auto& op : wafer_ops) list.push_back({op.op_index, op.lot_id});
        ops[wafer] = std::move(list);
    }
    j["ops"] = std::move(ops);
    return j;
}

inline TrajectoryDataset dataset_from_json(const nlohmann::json& j) {
    TrajectoryDataset ds;
    try {
        ds.order.items = j.at("items").get<std::vector<std::string>>();
        ds.order.timestamps = j.at("timestamps").get<std::vector<double>>();
        ds.wafers = j.at("wafers").get<std::vector<std::string>>();
        ds.lots = j.at("lots").get<std::map<std::string, std::string>>();
        ds.y = j.at("y").get<std::vector<int>>();
        const auto& rows = j.at("X");
        const std::size_t n = ds.wafers.size();
        const std::size_t d = ds.order.items.size();
        if (rows.size() != n) throw ConfigError("dataset json: X row count mismatch");
        ds.x = Grid<double>(n, d, 0.0);
        ds.mask = Grid<std::uint8_t>(n, d, 0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& row = rows[i];
            if (row.size() != d) throw ConfigError("dataset json: X column count mismatch");
            for (std::size_t k = 0; k < d; ++k) {
                if (!row[k].is_null()) {
                    ds.x(i, k) = row[k].get<double>();
                    ds.mask(i, k) = 1;
                }
            }
        }
        if (j.contains("ops")) {
            for (const auto& [wafer, list] : j.at("ops").items()) {
                std::vector<WaferOp> wafer_ops;
                for (const auto& entry : list) {
                    wafer_ops.push_back({entry.at(0).get<std::int64_t>(),
                                         entry.at(1).get<std::string>()});
                }
                ds.ops[wafer] = std::move(wafer_ops);
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("dataset json: ") + e.what());
    }
    return ds;
}

// --- CSV ingestion interfaces --------------------------------------------

inline std::vector<MeasurementRecord> read_measurements_csv(const std::filesystem::path& path) {
    const auto table = csv::read_table(path, "wafer_id,lot_id,item_id,op_index,timestamp,value");
    std::vector<MeasurementRecord> records;
    records.reserve(table.rows.size());
    for (const auto& row : table.rows) {
        MeasurementRecord r;
        r.wafer_id = row[0];
        r.lot_id = row[1];
        r.item_id = row[2];
        r.op_index = csv::parse_int(row[3], path.string());
        r.timestamp = csv::parse_double(row[4], path.string());
        r.value = csv::parse_double(row[5], path.string());
        records.push_back(std::move(r));
    }
    return records;
}

inline std::map<std::string, int> read_labels_csv(const std::filesystem::path& path) {
    const auto table = csv::read_table(path, "wafer_id,label");
    std::map<std::string, int> labels;
    for (const auto& row : table.rows) {
        const std::int64_t label = csv::parse_int(row[1], path.string());
        if (label != 0 && label != 1) {
            throw ConfigError(path.string() + ": label must be 0 or 1 for wafer " + row[0]);
        }
        labels[row[0]] = static_cast<int>(label);
    }
    return labels;
}

inline std::map<std::string, std::vector<WaferOp>> read_ops_csv(const std::filesystem::path& path) {
    const auto table = csv::read_table(path, "wafer_id,op_index,lot_id");
    std::map<std::string, std::vector<WaferOp>> ops;
    for (const auto& row : table.rows) {
        ops[row[0]].push_back({csv::parse_int(row[1], path.string()), row[2]});
    }
    return ops;
}

}  // namespace tsa
