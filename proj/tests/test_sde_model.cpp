#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include <nsde/sde_model.hpp>

using namespace nsde;

namespace {

SdeModel zero_drift_model(std::size_t d, std::uint64_t seed = 1) {
    RngStream rng(seed);
    auto m = make_sde_model(d, {8}, TimeEncoding{}, rng);
    auto drift = m.drift_net();
    assign_parameters(drift, std::vector<double>(parameter_count(drift), 0.0));
    return SdeModel(d, drift, m.diffusion_net(), m.time_encoding());
}

FunctionalSde linear_field(double a, double b) {
    return {1, [a](std::span<const double> x, double) { return Vector{a * x[0]}; },
            [b](std::span<const double>, double) { return Vector{b}; }};
}

double truncated_exp_series(double x, int n) {
    double term = 1.0, sum = 1.0;
    for (int k = 1; k <= n; ++k) {
        term *= x / k;
        sum += term;
    }
    return sum;
}

}  // namespace

TEST(SdeModel, ZeroWeightDriftIsZeroEverywhere) {
    const auto m = zero_drift_model(3);
    for (double t : {0.0, 0.5, 3.0}) EXPECT_EQ(m.drift(Vector{0.1, -2.0, 5.0}, t), (Vector{0, 0, 0}));
}

TEST(SdeModel, OutputShapesFollowDimension) {
    for (std::size_t d : {1u, 2u, 8u}) {
        RngStream rng(d);
        const auto m = make_sde_model(d, {16, 16}, TimeEncoding{}, rng);
        const Vector x(d, 0.3);
        EXPECT_EQ(drift(m, x, 0.2).size(), d);
        EXPECT_EQ(diffusion(m, x, 0.2).size(), d);
    }
}

TEST(SdeModel, FreshDiffusionIsPositive) {
    RngStream rng(4);
    const auto m = make_sde_model(4, {8}, TimeEncoding{}, rng);
    for (int i = 0; i < 50; ++i) {
        Vector x(4);
        for (auto& v : x) v = rng.uniform(-5, 5);
        for (double s : m.diffusion(x, rng.uniform())) ASSERT_GT(s, 0.0);
    }
}

TEST(SdeModel, DimensionMismatchThrows) {
    RngStream rng(4);
    const auto m = make_sde_model(2, {4}, TimeEncoding{}, rng);
    EXPECT_THROW(m.drift(Vector{1.0}, 0.0), DimensionError);
    EXPECT_THROW(m.diffusion(Vector{1.0, 2.0, 3.0}, 0.0), DimensionError);
}

TEST(SdeModel, ConstructorChecksWidthsAndHead) {
    RngStream rng(4);
    const auto m = make_sde_model(2, {4}, TimeEncoding{}, rng);
    EXPECT_THROW(SdeModel(3, m.drift_net(), m.diffusion_net(), m.time_encoding()), DimensionError);
    TimeEncoding none{TimeEncoding::Kind::none, 0, 1.0};
    EXPECT_THROW(SdeModel(2, m.drift_net(), m.diffusion_net(), none), DimensionError);
    EXPECT_THROW(SdeModel(2, m.drift_net(), m.drift_net(), m.time_encoding()), ValidationError);
}

TEST(TimeEncoding, WidthsAndValues) {
    TimeEncoding scalar{TimeEncoding::Kind::scalar_normalized, 0, 4.0};
    Vector out;
    scalar.append(2.0, out);
    EXPECT_EQ(out, Vector{0.5});

    TimeEncoding sin{TimeEncoding::Kind::sinusoidal, 3, 1.0};
    EXPECT_EQ(sin.width(), 6u);
    out.clear();
    sin.append(0.0, out);
    EXPECT_EQ(out, (Vector{0, 1, 0, 1, 0, 1}));

    RngStream rng(2);
    const auto m = make_sde_model(2, {4}, sin, rng);
    EXPECT_EQ(m.drift_net().input_dim(), 8u);
}

TEST(EulerMaruyama, ZeroCoefficientsLeaveStateUnchanged) {
    const auto m = constant_sde({0.0, 0.0}, {0.0, 0.0});
    EXPECT_EQ(euler_maruyama_step(m, Vector{1.5, -2.0}, 0.0, 0.1, Vector{0.3, 0.4}),
              (Vector{1.5, -2.0}));
}

TEST(EulerMaruyama, ConstantDriftArithmetic) {
    const auto m = constant_sde({1.0}, {0.0});
    EXPECT_DOUBLE_EQ(euler_maruyama_step(m, Vector{0.0}, 0.0, 0.1, Vector{0.7})[0], 0.1);
}

TEST(EulerMaruyama, LinearDriftWithNoiseArithmetic) {
    const auto m = linear_field(-1.0, 0.5);
    EXPECT_NEAR(euler_maruyama_step(m, Vector{1.0}, 0.0, 0.04, Vector{0.2})[0], 1.06, 1e-15);
}

TEST(EulerMaruyama, NonFiniteResultReportsStep) {
    const auto m = constant_sde({std::numeric_limits<double>::infinity()}, {0.0});
    try {
        euler_maruyama_step(m, Vector{0.0}, 0.0, 0.1, Vector{0.0}, 7);
        FAIL() << "expected IntegrationError";
    } catch (const IntegrationError& e) {
        EXPECT_EQ(e.step(), 7u);
    }
}

TEST(EulerMaruyama, RejectsBadInputs) {
    const auto m = constant_sde({0.0}, {0.0});
    EXPECT_THROW(euler_maruyama_step(m, Vector{0.0, 1.0}, 0.0, 0.1, Vector{0.0}), DimensionError);
    EXPECT_THROW(euler_maruyama_step(m, Vector{0.0}, 0.0, 0.0, Vector{0.0}), ValidationError);
}

TEST(Simulate, ZeroCoefficientsGiveConstantTrajectory) {
    const auto m = constant_sde({0.0, 0.0}, {0.0, 0.0});
    const auto tr = simulate(m, Vector{0.5, 0.25}, 10, 0.1, 99);
    ASSERT_EQ(tr.size(), 11u);
    for (const auto& s : tr.states) EXPECT_EQ(s, (Vector{0.5, 0.25}));
}

TEST(Simulate, TimesAreMultiplesOfDt) {
    const auto m = constant_sde({0.0}, {1.0});
    const auto tr = simulate(m, Vector{0.0}, 5, 0.25, 1);
    EXPECT_EQ(tr.times, (std::vector<double>{0, 0.25, 0.5, 0.75, 1.0, 1.25}));
    EXPECT_TRUE(tr.uniform_spacing());
}

TEST(Simulate, DeterministicLinearMatchesEulerRecurrence) {
    const LinearSdeSpec spec(-1.0, 0.0);
    const auto tr = simulate(spec, Vector{1.0}, 100, 0.01, 3);
    double x = 1.0;
    for (std::size_t k = 1; k <= 100; ++k) {
        x *= (1.0 - 0.01);
        ASSERT_NEAR(tr.states[k][0], x, 1e-12);
    }
    EXPECT_NEAR(tr.states.back()[0], std::pow(0.99, 100), 1e-12);
    // Euler's value sits within the discretisation gap of exp(-1)
    EXPECT_LE(std::abs(tr.states.back()[0] - std::exp(-1.0)),
              std::abs(std::pow(0.99, 100) - std::exp(-1.0)) + 1e-12);
}

TEST(Simulate, SameSeedBitIdentical) {
    const LinearSdeSpec spec(-1.0, 0.5, 3);
    const auto a = simulate(spec, Vector{1, 2, 3}, 50, 0.02, 1234);
    const auto b = simulate(spec, Vector{1, 2, 3}, 50, 0.02, 1234);
    const auto c = simulate(spec, Vector{1, 2, 3}, 50, 0.02, 1235);
    EXPECT_EQ(a, b);
    EXPECT_NE(a.states, c.states);
}

TEST(Simulate, NoisePathReplayMatchesSeededRun) {
    const LinearSdeSpec spec(-0.5, 0.3, 2);
    const auto noise = make_noise_path(2, 20, 0.05, 77);
    EXPECT_EQ(simulate(spec, Vector{1, -1}, noise), simulate(spec, Vector{1, -1}, 20, 0.05, 77));
    for (const auto& inc : noise.increments) EXPECT_EQ(inc.size(), 2u);
}

TEST(Simulate, BlowUpAbortsWithFinitePrefix) {
    const LinearSdeSpec spec(50.0, 0.0);
    try {
        simulate(spec, Vector{1.0}, 100, 0.1, 0);
        FAIL() << "expected IntegrationError";
    } catch (const IntegrationError& e) {
        // 6^k exceeds 1e6 first at k = 8
        EXPECT_EQ(e.step(), 7u);
        ASSERT_EQ(e.prefix().size(), 8u);
        for (const auto& s : e.prefix()) EXPECT_LE(std::abs(s[0]), 1e6);
    }
}

TEST(Simulate, RejectsBadArguments) {
    const LinearSdeSpec spec(-1.0, 0.5);
    EXPECT_THROW(simulate(spec, Vector{1.0, 2.0}, 10, 0.1, 0), DimensionError);
    EXPECT_THROW(simulate(spec, Vector{1.0}, 0, 0.1, 0), ValidationError);
    EXPECT_THROW(simulate(spec, Vector{1.0}, 10, -0.1, 0), ValidationError);
}

TEST(GenerateAnswer, SingletonStartsAtQuestion) {
    const auto m = constant_sde({0.1, 0.1}, {0.2, 0.2});
    const std::vector<Vector> q{{0.3, -0.4}};
    const auto tr = generate_answer(m, q, 6, 1.0, 5);
    EXPECT_EQ(tr.states.front(), q[0]);
    EXPECT_EQ(tr.size(), 7u);
}

TEST(GenerateAnswer, StartsAtArithmeticMean) {
    const auto m = constant_sde({0.0, 0.0}, {1.0, 1.0});
    const std::vector<Vector> q{{0, 0}, {2, 4}};
    EXPECT_EQ(generate_answer(m, q, 3, 1.0, 0).states.front(), (Vector{1, 2}));
}

TEST(GenerateAnswer, NoiselessRunUnrollsToRepeatedSteps) {
    const FunctionalSde m{2,
                          [](std::span<const double> x, double t) {
                              return Vector{-0.5 * x[0] + 0.1 * t, 0.2 * x[1] - x[0]};
                          },
                          [](std::span<const double>, double) { return Vector{0.0, 0.0}; }};
    std::vector<Vector> q;
    for (int i = 0; i < 6; ++i) q.push_back({0.1 * i, 1.0 - 0.2 * i});
    const auto tr = generate_answer(m, q, 6, 1.0, 42);

    Vector x{0.0, 0.0};
    for (const auto& v : q) x = x + v;
    x = (1.0 / 6.0) * x;
    ASSERT_EQ(tr.states[0], x);
    for (int k = 0; k < 6; ++k) {
        const double t = k;
        x = Vector{x[0] + (-0.5 * x[0] + 0.1 * t), x[1] + (0.2 * x[1] - x[0])};
        EXPECT_NEAR(tr.states[k + 1][0], x[0], 1e-15);
        EXPECT_NEAR(tr.states[k + 1][1], x[1], 1e-15);
    }
}

TEST(GenerateAnswer, EmptyOrMismatchedQuestionsThrow) {
    const auto m = constant_sde({0.0}, {1.0});
    EXPECT_THROW(generate_answer(m, std::vector<Vector>{}, 3, 1.0, 0), ValidationError);
    EXPECT_THROW(generate_answer(m, std::vector<Vector>{{1.0, 2.0}}, 3, 1.0, 0), DimensionError);
}

TEST(Picard, TenthIterateMatchesTruncatedSeries) {
    const auto res = picard_iterates(LinearSdeSpec(-1.0, 0.0), Vector{1.0}, uniform_grid(0, 1, 1000), 10);
    ASSERT_EQ(res.iterates.size(), 11u);
    const double at_one = res.iterates[10].back()[0];
    EXPECT_NEAR(at_one, truncated_exp_series(-1.0, 10), 1e-5);
    EXPECT_NEAR(at_one, 0.367879, 1e-5);
    // every iterate tracks its own truncated series at several times
    for (std::size_t n = 0; n <= 10; ++n)
        for (std::size_t j : {250u, 500u, 1000u})
            ASSERT_NEAR(res.iterates[n][j][0], truncated_exp_series(-res.t_grid[j], static_cast<int>(n)), 1e-6);
}

TEST(Picard, ZeroDriftIteratesAreConstant) {
    const auto res = picard_iterates(LinearSdeSpec(0.0, 0.0, 2), Vector{0.5, -3.0}, uniform_grid(0, 2, 50), 5);
    for (const auto& it : res.iterates)
        for (const auto& x : it) EXPECT_EQ(x, (Vector{0.5, -3.0}));
    for (double g : res.gaps) EXPECT_EQ(g, 0.0);
}

TEST(Picard, GapsDecreaseMonotonically) {
    const auto res = picard_iterates(LinearSdeSpec(-1.0, 0.0), Vector{1.0}, uniform_grid(0, 1, 1000), 12);
    ASSERT_EQ(res.gaps.size(), 12u);
    for (std::size_t n = 1; n < res.gaps.size(); ++n) EXPECT_LT(res.gaps[n], res.gaps[n - 1]);
    // gap_n = 1/(n+1)! up to quadrature error
    EXPECT_NEAR(res.gaps[0], 1.0, 1e-6);
    EXPECT_NEAR(res.gaps[2], 1.0 / 6.0, 1e-6);
}

TEST(Picard, RejectsStochasticOrNonUniformInput) {
    EXPECT_THROW(picard_iterates(LinearSdeSpec(-1.0, 0.5), Vector{1.0}, uniform_grid(0, 1, 10), 3),
                 ValidationError);
    EXPECT_THROW(picard_iterates(LinearSdeSpec(-1.0, 0.0), Vector{1.0}, {0.0, 0.1, 0.3}, 3),
                 ValidationError);
}

TEST(EmbeddingTrajectory, ValidateCatchesBrokenInvariants) {
    EmbeddingTrajectory tr{{{1.0}, {2.0}}, {0.0, 0.0}, std::nullopt};
    EXPECT_THROW(tr.validate(), ValidationError);
    tr.times = {0.0, 1.0};
    EXPECT_NO_THROW(tr.validate());
    tr.states[1] = {1.0, 2.0};
    EXPECT_THROW(tr.validate(), DimensionError);
}
