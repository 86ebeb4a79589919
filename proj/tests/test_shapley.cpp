#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <vector>

#include "tsa/rng.hpp"
#include "tsa/shapley.hpp"

#include "test_util.hpp"

using namespace tsa;

namespace {

std::function<double(std::span<const double>)> linear_f(std::vector<double> w, double b) {
    return [w = std::move(w), b](std::span<const double> x) {
        double s = b;
        for (std::size_t i = 0; i < x.size(); ++i) s += w[i] * x[i];
        return s;
    };
}

ValueFunctionSpec mean_spec(std::vector<double> w, double b, std::vector<double> baseline) {
    ValueFunctionSpec spec;
    spec.mode = ValueMode::baseline_mean;
    spec.baseline_means = std::move(baseline);
    spec.f = linear_f(std::move(w), b);
    return spec;
}

// Trajectory spec with an explicit x⁰, bypassing the kernel machinery.
ValueFunctionSpec traj_spec(std::function<double(std::span<const double>)> f,
                            std::vector<double> baseline) {
    ValueFunctionSpec spec;
    spec.mode = ValueMode::laki_trajectory;
    spec.baseline_override = std::move(baseline);
    spec.f = std::move(f);
    return spec;
}

std::vector<double> random_vec(Rng& rng, std::size_t d, double scale = 1.0) {
    std::vector<double> v(d);
    for (auto& x : v) x = scale * rng.normal();
    return v;
}

}  // namespace

TEST_CASE("coalition prefixes", "[shapley]") {
    const auto c = Coalition::prefix(3);
    REQUIRE(c.members == std::vector<std::size_t>{0, 1, 2});
    REQUIRE(c.is_prefix());
    Coalition holed;
    holed.members = {0, 2};
    REQUIRE_FALSE(holed.is_prefix());
    REQUIRE(Coalition::prefix(0).members.empty());
}

TEST_CASE("the value function blends coalition and baseline coordinates", "[shapley]") {
    ValueFunctionSpec spec;
    spec.mode = ValueMode::baseline_mean;
    spec.baseline_means = {10.0, 20.0, 30.0};
    spec.f = [](std::span<const double> x) { return x[0] + x[1] + x[2]; };
    const std::vector<double> x_t = {1.0, 2.0, 3.0};

    REQUIRE(value(spec, Coalition::prefix(0), x_t) == 60.0);
    REQUIRE(value(spec, Coalition::prefix(3), x_t) == 6.0);
    Coalition mid;
    mid.members = {1};
    REQUIRE(value(spec, mid, x_t) == 10.0 + 2.0 + 30.0);
}

TEST_CASE("conditional expectation averages over the background", "[shapley]") {
    Grid<double> bg(2, 2);
    bg(0, 0) = 0.0;
    bg(0, 1) = 10.0;
    bg(1, 0) = 4.0;
    bg(1, 1) = 20.0;
    ValueFunctionSpec spec;
    spec.mode = ValueMode::conditional_expectation;
    spec.background = &bg;
    spec.f = [](std::span<const double> x) { return x[0] + x[1]; };
    const std::vector<double> x_t = {1.0, 2.0};

    // Coalition {0}: average of f(1, 10) and f(1, 20) = (11 + 21) / 2.
    Coalition c;
    c.members = {0};
    REQUIRE(value(spec, c, x_t) == 16.0);
    REQUIRE(value(spec, Coalition::prefix(2), x_t) == 3.0);
    REQUIRE(value(spec, Coalition::prefix(0), x_t) == 17.0);
}

TEST_CASE("exhaustive shapley on a linear function is the weighted gap", "[shapley]") {
    Rng rng(201);
    for (int trial = 0; trial < 5; ++trial) {
        const std::size_t d = 1 + rng.below(6);
        const auto w = random_vec(rng, d);
        const auto base = random_vec(rng, d, 2.0);
        const auto x_t = random_vec(rng, d, 2.0);
        const auto spec = mean_spec(w, 0.5, base);
        const auto attr = shapley_exact(spec, x_t, "W");
        for (std::size_t i = 0; i < d; ++i) {
            REQUIRE(attr.scores[i] ==
                    Catch::Approx(w[i] * (x_t[i] - base[i])).margin(1e-9));
        }
        REQUIRE(std::abs(attr.sum_rule_residual()) < 1e-9);
        REQUIRE(attr.method == "baseline");
    }
}

TEST_CASE("a constant function attributes nothing", "[shapley]") {
    ValueFunctionSpec spec;
    spec.mode = ValueMode::baseline_mean;
    spec.baseline_means = {0.0, 0.0};
    spec.f = [](std::span<const double>) { return 0.25; };
    const auto attr = shapley_exact(spec, std::vector<double>{5.0, -3.0}, "W");
    for (const double s : attr.scores) REQUIRE(std::abs(s) < 1e-15);
}

TEST_CASE("one-item games give the full gap to the item", "[shapley]") {
    const auto spec = mean_spec({2.0}, 0.0, {1.0});
    const auto attr = shapley_exact(spec, std::vector<double>{4.0}, "W");
    REQUIRE(attr.scores[0] == Catch::Approx(6.0).epsilon(1e-15));
    REQUIRE(attr.v_full == 8.0);
    REQUIRE(attr.v_empty == 2.0);
}

TEST_CASE("exhaustive shapley satisfies the classical axioms", "[shapley][property]") {
    Rng rng(211);
    for (int trial = 0; trial < 8; ++trial) {
        const std::size_t d = 2 + rng.below(5);  // up to 6
        auto w = random_vec(rng, d);
        w[0] = 0.0;               // dummy coordinate
        if (d >= 3) w[2] = w[1];  // symmetric pair candidate
        auto base = random_vec(rng, d);
        auto x_t = random_vec(rng, d);
        if (d >= 3) {
            base[2] = base[1];
            x_t[2] = x_t[1];
        }
        ValueFunctionSpec spec;
        spec.mode = ValueMode::baseline_mean;
        spec.baseline_means = base;
        // Nonlinear but with coordinate 0 dummy and coordinates 1, 2 exchangeable.
        spec.f = [w](std::span<const double> x) {
            double s = 0.0;
            for (std::size_t i = 0; i < x.size(); ++i) s += w[i] * x[i];
            return std::tanh(s) + 0.1 * s * s;
        };
        const auto attr = shapley_exact(spec, x_t, "W");

        // Efficiency.
        const double total = std::accumulate(attr.scores.begin(), attr.scores.end(), 0.0);
        REQUIRE(total == Catch::Approx(attr.v_full - attr.v_empty).margin(1e-9));
        // Dummy.
        REQUIRE(std::abs(attr.scores[0]) < 1e-9);
        // Symmetry.
        if (d >= 3) {
            REQUIRE(attr.scores[1] == Catch::Approx(attr.scores[2]).margin(1e-9));
        }
    }
}

TEST_CASE("trajectory scores on a linear score are exact", "[shapley]") {
    Rng rng(221);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t d = 1 + rng.below(10);
        const auto w = random_vec(rng, d);
        const auto base = random_vec(rng, d, 3.0);
        const auto x_t = random_vec(rng, d, 3.0);
        const auto spec = traj_spec(linear_f(w, rng.normal()), base);
        const auto attr = trajectory_shapley(spec, x_t, "W");
        REQUIRE(attr.method == "tsa");
        for (std::size_t i = 0; i < d; ++i) {
            const double want = w[i] * (x_t[i] - base[i]);
            REQUIRE(std::abs(attr.scores[i] - want) <= 1e-12 * std::max(1.0, std::abs(want)));
        }
    }
}

TEST_CASE("unmoved coordinates score exactly zero", "[shapley]") {
    const auto f = [](std::span<const double> x) {
        return std::sin(x[0]) * x[1] + std::exp(0.1 * x[2]);
    };
    const std::vector<double> base = {1.0, 2.0, 3.0};
    const auto spec = traj_spec(f, base);
    const std::vector<double> x_t = {1.0, 5.0, 3.0};  // coords 0, 2 unchanged
    const auto attr = trajectory_shapley(spec, x_t, "W");
    REQUIRE(attr.scores[0] == 0.0);
    REQUIRE(attr.scores[2] == 0.0);
    REQUIRE(attr.scores[1] != 0.0);

    SECTION("identical trajectory and baseline gives all zeros") {
        const auto zero = trajectory_shapley(spec, base, "W");
        for (const double s : zero.scores) REQUIRE(s == 0.0);
        REQUIRE(zero.v_full == zero.v_empty);
    }
}

TEST_CASE("trajectory attributions telescope to the prediction gap", "[shapley][property]") {
    Rng rng(231);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t d = 1 + rng.below(20);
        const auto w = random_vec(rng, d);
        const auto base = random_vec(rng, d);
        const auto x_t = random_vec(rng, d);
        const auto f = [w](std::span<const double> x) {
            double s = 0.0;
            for (std::size_t i = 0; i < x.size(); ++i) s += w[i] * x[i];
            return 1.0 / (1.0 + std::exp(-s));
        };
        const auto spec = traj_spec(f, base);
        const auto attr = trajectory_shapley(spec, x_t, "W");
        REQUIRE(std::abs(attr.sum_rule_residual()) <= 1e-9);
        REQUIRE(attr.v_full == spec.f(x_t));
    }
}

TEST_CASE("closed form agrees with the prefix oracle to machine precision",
          "[shapley][property]") {
    Rng rng(241);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t d = 1 + rng.below(12);
        const auto w = random_vec(rng, d);
        const auto base = random_vec(rng, d);
        const auto x_t = random_vec(rng, d);
        const bool quad = rng.bernoulli(0.5);
        const auto f = [w, quad](std::span<const double> x) {
            double s = 0.0;
            for (std::size_t i = 0; i < x.size(); ++i) s += w[i] * x[i];
            if (quad && x.size() >= 2) s += 0.3 * x[0] * x[1];
            return 1.0 / (1.0 + std::exp(-s));
        };
        const auto spec = traj_spec(f, base);
        const auto closed = trajectory_shapley(spec, x_t, "W");
        std::size_t evals = 0;
        const auto oracle = trajectory_shapley_oracle(spec, x_t, "W", &evals);
        REQUIRE(evals == d + 1);
        for (std::size_t i = 0; i < d; ++i) {
            REQUIRE(std::abs(closed.scores[i] - oracle.scores[i]) <= 1e-12);
        }
        REQUIRE(closed.v_full == oracle.v_full);
        REQUIRE(closed.v_empty == oracle.v_empty);
    }
}

TEST_CASE("dimension guards are enforced", "[shapley]") {
    const auto big = mean_spec(std::vector<double>(21, 1.0), 0.0,
                               std::vector<double>(21, 0.0));
    REQUIRE_THROWS_AS(shapley_exact(big, std::vector<double>(21, 1.0), "W"), ConfigError);

    const auto spec13 = traj_spec(linear_f(std::vector<double>(13, 1.0), 0.0),
                                  std::vector<double>(13, 0.0));
    REQUIRE_THROWS_AS(trajectory_shapley_oracle(spec13, std::vector<double>(13, 1.0), "W"),
                      ConfigError);
    // The closed form has no such ceiling.
    REQUIRE_NOTHROW(trajectory_shapley(spec13, std::vector<double>(13, 1.0), "W"));
}

TEST_CASE("trajectory order matters while enumeration is order-free", "[shapley]") {
    // f couples coordinates 0 and 1, so walking them in a different order
    // redistributes credit; full enumeration cannot care.
    const auto f = [](std::span<const double> x) {
        const double s = x[0] * x[1] + x[2];
        return 1.0 / (1.0 + std::exp(-s));
    };
    const std::vector<double> base = {0.0, 0.5, 0.0};
    const std::vector<double> x_t = {2.0, 3.0, 1.0};

    // Swap coordinates 0 and 1 everywhere.
    const auto f_swapped = [f](std::span<const double> x) {
        const std::vector<double> un = {x[1], x[0], x[2]};
        return f(un);
    };
    const std::vector<double> base_sw = {base[1], base[0], base[2]};
    const std::vector<double> x_t_sw = {x_t[1], x_t[0], x_t[2]};

    ValueFunctionSpec enum_spec;
    enum_spec.mode = ValueMode::baseline_mean;
    enum_spec.baseline_means = base;
    enum_spec.f = f;
    ValueFunctionSpec enum_spec_sw;
    enum_spec_sw.mode = ValueMode::baseline_mean;
    enum_spec_sw.baseline_means = base_sw;
    enum_spec_sw.f = f_swapped;

    const auto enum_a = shapley_exact(enum_spec, x_t, "W");
    const auto enum_b = shapley_exact(enum_spec_sw, x_t_sw, "W");
    REQUIRE(enum_a.scores[0] == Catch::Approx(enum_b.scores[1]).margin(1e-9));
    REQUIRE(enum_a.scores[1] == Catch::Approx(enum_b.scores[0]).margin(1e-9));

    const auto traj_a = trajectory_shapley(traj_spec(f, base), x_t, "W");
    const auto traj_b = trajectory_shapley(traj_spec(f_swapped, base_sw), x_t_sw, "W");
    REQUIRE(std::abs(traj_a.scores[0] - traj_b.scores[1]) > 1e-3);
}

TEST_CASE("enumeration under a trajectory spec is labeled sv_laki", "[shapley]") {
    const auto spec = traj_spec(linear_f({1.0, 1.0}, 0.0), {0.0, 0.0});
    const auto attr = shapley_exact(spec, std::vector<double>{1.0, 2.0}, "W");
    REQUIRE(attr.method == "sv_laki");
    REQUIRE(attr.scores[0] == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(attr.scores[1] == Catch::Approx(2.0).margin(1e-12));
}

TEST_CASE("deviation report flags implausible residuals", "[shapley]") {
    AttributionVector attr;
    attr.wafer_id = "W";
    attr.scores = {0.2, 0.1};
    attr.v_full = 0.9;
    attr.v_empty = 0.6;
    attr.method = "tsa";

    const auto ok = deviation_report(attr, 1);
    REQUIRE(ok.residual == Catch::Approx(0.9 - 1.0).margin(1e-12));
    REQUIRE_FALSE(ok.large_residual);

    attr.v_full = 0.1;
    const auto bad = deviation_report(attr, 1);
    REQUIRE(bad.large_residual);
    REQUIRE(bad.residual == Catch::Approx(-0.9).margin(1e-12));

    REQUIRE_THROWS_AS(deviation_report(attr, 2), ConfigError);
}

TEST_CASE("attribution csv is pinned", "[shapley]") {
    AttributionVector attr;
    attr.wafer_id = "W7";
    attr.scores = {0.5, -0.25};
    attr.v_full = 0.75;
    attr.v_empty = 0.5;
    attr.method = "tsa";
    ItemOrder order;
    order.items = {"a", "b"};
    order.timestamps = {10.0, 20.0};

    const auto text = attribution_csv(attr, order);
    REQUIRE(text.rfind("wafer_id,item_id,timestamp,score,method,v_full,v_empty\n", 0) == 0);
    REQUIRE(text.find("W7,a,10,0.5,tsa,0.75,0.5\n") != std::string::npos);
    REQUIRE(text.find("W7,b,20,-0.25,tsa,0.75,0.5\n") != std::string::npos);
    REQUIRE(text.find("# sum_rule_residual,") != std::string::npos);
}

TEST_CASE("value specs are validated", "[shapley]") {
    SECTION("missing f") {
        ValueFunctionSpec spec;
        spec.mode = ValueMode::baseline_mean;
        spec.baseline_means = {0.0};
        REQUIRE_THROWS_AS(value(spec, Coalition::prefix(0), std::vector<double>{1.0}),
                          ConfigError);
    }
    SECTION("baseline length mismatch") {
        ValueFunctionSpec spec;
        spec.mode = ValueMode::baseline_mean;
        spec.baseline_means = {0.0};
        spec.f = [](std::span<const double>) { return 0.0; };
        REQUIRE_THROWS_AS(value(spec, Coalition::prefix(0), std::vector<double>{1.0, 2.0}),
                          ConfigError);
    }
    SECTION("conditional expectation needs a background") {
        ValueFunctionSpec spec;
        spec.mode = ValueMode::conditional_expectation;
        spec.f = [](std::span<const double>) { return 0.0; };
        REQUIRE_THROWS_AS(value(spec, Coalition::prefix(0), std::vector<double>{1.0}),
                          ConfigError);
    }
    SECTION("trajectory mode without any baseline source") {
        ValueFunctionSpec spec;
        spec.mode = ValueMode::laki_trajectory;
        spec.f = [](std::span<const double>) { return 0.0; };
        REQUIRE_THROWS_AS(trajectory_shapley(spec, std::vector<double>{1.0}, "W"),
                          ConfigError);
    }
    SECTION("override dimension mismatch") {
        auto spec = traj_spec([](std::span<const double>) { return 0.0; }, {0.0, 0.0});
        REQUIRE_THROWS_AS(trajectory_shapley(spec, std::vector<double>{1.0}, "W"),
                          ConfigError);
    }
}
