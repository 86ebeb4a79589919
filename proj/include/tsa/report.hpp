#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tsa/csv.hpp"
#include "tsa/errors.hpp"
#include "tsa/shapley.hpp"

namespace tsa {

struct CurvePoint {
    double tau = 0.0;
    double beta = 0.0;

    friend bool operator==(const CurvePoint&, const CurvePoint&) = default;
};

struct CurveStep {
    double tau = 0.0;
    double increment = 0.0;                // sum of scores of the items at this tau
    std::vector<std::string> item_ids;

    friend bool operator==(const CurveStep&, const CurveStep&) = default;
};

/// Right-continuous running total of attribution scores along the process
/// timeline: beta(tau) = v(empty) + sum of s_k over items with t_k <= tau.
/// points[0] is (0, start); one further point per distinct item timestamp.
struct CumulativeCurve {
    std::string wafer_id;
    std::vector<CurvePoint> points;
    std::vector<CurveStep> steps;  // aligned with points[1..]
    double start = 0.0;            // v(empty coalition)
    double end = 0.0;              // f(x_t)

    friend bool operator==(const CumulativeCurve&, const CumulativeCurve&) = default;
};

/// Builds the curve for a trajectory attribution. Items sharing a timestamp
/// contribute one joint step. Timestamps must be positive and finite so the
/// tau = 0 point is strictly before every step and equals the baseline value.
inline CumulativeCurve cumulative_curve(const AttributionVector& attr, const ItemOrder& order) {
    if (attr.method != "tsa") {
        throw ConfigError("cumulative_curve: only trajectory attributions order along tau "
                          "(got method '" + attr.method + "')");
    }
    if (order.size() != attr.scores.size() || order.timestamps.size() != order.size()) {
        throw ConfigError("cumulative_curve: item order does not match score count");
    }
    for (std::size_t k = 0; k < order.size(); ++k) {
        const double t = order.timestamps[k];
        if (!std::isfinite(t)) {
            throw ConfigError("cumulative_curve: missing timestamp for item " + order.items[k]);
        }
        if (t <= 0.0) {
            throw DataError("cumulative_curve: item " + order.items[k] +
                            " has timestamp <= 0; the curve must start before every step");
        }
    }

    std::map<double, std::vector<std::size_t>> by_tau;
    for (std::size_t k = 0; k < order.size(); ++k) by_tau[order.timestamps[k]].push_back(k);

    CumulativeCurve curve;
    curve.wafer_id = attr.wafer_id;
    curve.start = attr.v_empty;
    curve.end = attr.v_full;
    curve.points.push_back({0.0, attr.v_empty});
    double beta = attr.v_empty;
    for (const auto& [tau, items] : by_tau) {
        CurveStep step;
        step.tau = tau;
        for (std::size_t k : items) {
            step.increment += attr.scores[k];
            step.item_ids.push_back(order.items[k]);
        }
        beta += step.increment;
        curve.points.push_back({tau, beta});
        curve.steps.push_back(std::move(step));
    }
    return curve;
}

/// The k largest steps by |increment|, zero steps omitted; ties broken by
/// earlier tau.
inline std::vector<CurveStep> top_jumps(const CumulativeCurve& curve, std::size_t k) {
    if (k == 0) throw ConfigError("top_jumps: k must be positive");
    std::vector<CurveStep> jumps;
    for (const auto& step : curve.steps) {
        if (step.increment != 0.0) jumps.push_back(step);
    }
    std::sort(jumps.begin(), jumps.end(), [](const CurveStep& a, const CurveStep& b) {
        if (std::abs(a.increment) != std::abs(b.increment)) {
            return std::abs(a.increment) > std::abs(b.increment);
        }
        return a.tau < b.tau;
    });
    if (jumps.size() > k) jumps.resize(k);
    return jumps;
}

struct RankedItem {
    std::size_t rank = 0;  // 1-based
    std::string item_id;
    double score = 0.0;
    double timestamp = 0.0;

    friend bool operator==(const RankedItem&, const RankedItem&) = default;
};

/// Items sorted by |score| descending; ties by earlier timestamp, then id.
inline std::vector<RankedItem> rank_attribution(const AttributionVector& attr,
                                                const ItemOrder& order) {
    if (order.size() != attr.scores.size()) {
        throw ConfigError("rank_attribution: item order does not match score count");
    }
    std::vector<RankedItem> ranked(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) {
        ranked[k] = {0, order.items[k], attr.scores[k], order.timestamps[k]};
    }
    std::sort(ranked.begin(), ranked.end(), [](const RankedItem& a, const RankedItem& b) {
        if (std::abs(a.score) != std::abs(b.score)) return std::abs(a.score) > std::abs(b.score);
        if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
        return a.item_id < b.item_id;
    });
    for (std::size_t r = 0; r < ranked.size(); ++r) ranked[r].rank = r + 1;
    return ranked;
}

inline std::string curve_csv(const CumulativeCurve& curve) {
    std::string out = "wafer_id,tau,beta\n";
    for (const auto& p : curve.points) {
        out += curve.wafer_id + "," + csv::format_double(p.tau) + "," +
               csv::format_double(p.beta) + "\n";
    }
    return out;
}

inline std::string jumps_csv(const CumulativeCurve& curve, const std::vector<CurveStep>& jumps) {
    std::string out = "wafer_id,tau,increment,item_ids\n";
    for (const auto& j : jumps) {
        std::string ids;
        for (const auto& id : j.item_ids) {
            if (!ids.empty()) ids += ';';
            ids += id;
        }
        out += curve.wafer_id + "," + csv::format_double(j.tau) + "," +
               csv::format_double(j.increment) + "," + ids + "\n";
    }
    return out;
}

namespace detail {

inline std::string svg_num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

inline std::string svg_label(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

}  // namespace detail

/// Deterministic step plot of the curve: fixed canvas, fixed formatting, no
/// randomness, so identical curves render to identical bytes. The y axis is
/// pinned to [0, 1] when the value function is a probability.
/// Note: pass a std::filesystem::path (not a string literal) to hit the file
/// overload; a char pointer converts to bool first.
[[nodiscard]] inline std::string render_curve_svg(const CumulativeCurve& curve,
                                                  bool probability_axis = true) {
    constexpr double kWidth = 800.0, kHeight = 500.0;
    constexpr double kLeft = 70.0, kRight = 770.0, kTop = 50.0, kBottom = 450.0;

    double tau_max = 1.0;
    for (const auto& p : curve.points) tau_max = std::max(tau_max, p.tau);
    tau_max *= 1.05;

    double y_lo = 0.0, y_hi = 1.0;
    if (!probability_axis) {
        y_lo = curve.points.front().beta;
        y_hi = y_lo;
        for (const auto& p : curve.points) {
            y_lo = std::min(y_lo, p.beta);
            y_hi = std::max(y_hi, p.beta);
        }
        const double pad = (y_hi - y_lo) > 0.0 ? 0.1 * (y_hi - y_lo) : 0.5;
        y_lo -= pad;
        y_hi += pad;
    }

    const auto sx = [&](double tau) { return kLeft + (kRight - kLeft) * tau / tau_max; };
    const auto sy = [&](double beta) {
        return kBottom - (kBottom - kTop) * (beta - y_lo) / (y_hi - y_lo);
    };

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::svg_num(kWidth) +
           "\" height=\"" + detail::svg_num(kHeight) + "\" viewBox=\"0 0 800 500\">\n";
    svg += "<rect width=\"800\" height=\"500\" fill=\"white\"/>\n";
    svg += "<text x=\"70\" y=\"30\" font-family=\"monospace\" font-size=\"16\">cumulative "
           "attribution, wafer " + curve.wafer_id + "</text>\n";

    for (int i = 0; i <= 5; ++i) {
        const double beta = y_lo + (y_hi - y_lo) * i / 5.0;
        const double y = sy(beta);
        svg += "<line x1=\"" + detail::svg_num(kLeft) + "\" y1=\"" + detail::svg_num(y) +
               "\" x2=\"" + detail::svg_num(kRight) + "\" y2=\"" + detail::svg_num(y) +
               "\" stroke=\"#dddddd\"/>\n";
        svg += "<text x=\"10\" y=\"" + detail::svg_num(y + 4.0) +
               "\" font-family=\"monospace\" font-size=\"12\">" + detail::svg_label(beta) +
               "</text>\n";
    }
    for (int i = 0; i <= 5; ++i) {
        const double tau = tau_max * i / 5.0;
        const double x = sx(tau);
        svg += "<line x1=\"" + detail::svg_num(x) + "\" y1=\"" + detail::svg_num(kBottom) +
               "\" x2=\"" + detail::svg_num(x) + "\" y2=\"" + detail::svg_num(kBottom + 6.0) +
               "\" stroke=\"#333333\"/>\n";
        svg += "<text x=\"" + detail::svg_num(x - 14.0) + "\" y=\"" +
               detail::svg_num(kBottom + 22.0) +
               "\" font-family=\"monospace\" font-size=\"12\">" + detail::svg_label(tau) +
               "</text>\n";
    }
    svg += "<line x1=\"" + detail::svg_num(kLeft) + "\" y1=\"" + detail::svg_num(kTop) +
           "\" x2=\"" + detail::svg_num(kLeft) + "\" y2=\"" + detail::svg_num(kBottom) +
           "\" stroke=\"#333333\"/>\n";
    svg += "<line x1=\"" + detail::svg_num(kLeft) + "\" y1=\"" + detail::svg_num(kBottom) +
           "\" x2=\"" + detail::svg_num(kRight) + "\" y2=\"" + detail::svg_num(kBottom) +
           "\" stroke=\"#333333\"/>\n";
    svg += "<text x=\"380\" y=\"485\" font-family=\"monospace\" font-size=\"14\">tau</text>\n";
    svg += "<text x=\"10\" y=\"45\" font-family=\"monospace\" font-size=\"14\">beta</text>\n";

    // Step-after path: hold each level until the next step's tau.
    std::string path = "M " + detail::svg_num(sx(curve.points.front().tau)) + " " +
                       detail::svg_num(sy(curve.points.front().beta));
    for (std::size_t i = 1; i < curve.points.size(); ++i) {
        path += " L " + detail::svg_num(sx(curve.points[i].tau)) + " " +
                detail::svg_num(sy(curve.points[i - 1].beta));
        path += " L " + detail::svg_num(sx(curve.points[i].tau)) + " " +
                detail::svg_num(sy(curve.points[i].beta));
    }
    path += " L " + detail::svg_num(kRight) + " " +
            detail::svg_num(sy(curve.points.back().beta));
    svg += "<path d=\"" + path + "\" fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"2\"/>\n";

    for (const auto& p : curve.points) {
        svg += "<circle cx=\"" + detail::svg_num(sx(p.tau)) + "\" cy=\"" +
               detail::svg_num(sy(p.beta)) + "\" r=\"3\" fill=\"#1f6fb2\"/>\n";
    }
    svg += "</svg>\n";
    return svg;
}

inline void render_curve_svg(const CumulativeCurve& curve, const std::filesystem::path& out_path,
                             bool probability_axis = true) {
    csv::write_file_atomic(out_path, render_curve_svg(curve, probability_axis));
}

}  // namespace tsa
