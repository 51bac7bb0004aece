#include <doctest.h>

#include <cmath>
#include <limits>

#include "gazeflow/error.h"
#include "gazeflow/scoring.h"
#include "support/oracles.h"

using namespace gazeflow;
using namespace gazeflow::scoring;
namespace gt = gazeflow::testing;

TEST_CASE("zone boundaries are half-open") {
    CHECK(classify_zone(0.0) == Zone::calm);
    CHECK(classify_zone(std::nextafter(0.25, 0.0)) == Zone::calm);
    CHECK(classify_zone(0.25) == Zone::mild);
    CHECK(classify_zone(std::nextafter(0.5, 0.0)) == Zone::mild);
    CHECK(classify_zone(0.5) == Zone::alert);
    CHECK(classify_zone(std::nextafter(0.75, 0.0)) == Zone::alert);
    CHECK(classify_zone(0.75) == Zone::urgent);
    CHECK(classify_zone(1.0) == Zone::urgent);
    for (int i = 0; i <= 1000; ++i) {
        const double a = i / 1000.0;
        const Zone expected = a < 0.25 ? Zone::calm : a < 0.5 ? Zone::mild : a < 0.75 ? Zone::alert : Zone::urgent;
        CHECK(classify_zone(a) == expected);
    }
    CHECK(to_string(Zone::urgent) == "urgent");
}

TEST_CASE("noisy-or and clamping") {
    CHECK(noisy_or(0.2, 0.2, 0.2) == doctest::Approx(1.0 - 0.8 * 0.8 * 0.8).epsilon(1e-15));
    CHECK(noisy_or(1.0, 0.0, 0.0) == 1.0);
    CHECK(noisy_or(0.0, 0.0, 0.0) == 0.0);

    const auto neg = scores_from_z({-1.0, -3.0, 0.0}, 6.0);
    CHECK(neg.a_verg == 0.0);
    CHECK(neg.a_sacc == 0.0);
    CHECK(neg.a_fix == 0.0);
    CHECK(neg.a_overall == 0.0);

    const auto one = scores_from_z({6.0, -1.0, -1.0}, 6.0);
    CHECK(one.a_verg == 1.0);
    CHECK(one.a_overall == 1.0);

    const auto mid = scores_from_z({1.2, 1.2, 1.2}, 6.0);
    CHECK(mid.a_overall == doctest::Approx(0.488).epsilon(1e-12));
    CHECK(scores_from_z({100.0, 0.0, 0.0}, 6.0).a_verg == 1.0);
}

TEST_CASE("noisy-or is monotone in each input") {
    for (int i = 0; i < 10; ++i)
        for (int j = 0; j < 10; ++j) {
            const double a = i / 10.0, b = j / 10.0;
            CHECK(noisy_or(a + 0.1, b, 0.3) >= noisy_or(a, b, 0.3));
            CHECK(noisy_or(a, b + 0.1, 0.3) >= noisy_or(a, b, 0.3));
        }
}

TEST_CASE("exponential smoothing") {
    SUBCASE("step response") {
        SmoothState s;
        AnomalyScores one;
        one.a_verg = one.a_sacc = one.a_fix = one.a_overall = 1.0;
        const auto first = smooth(s, one);
        CHECK(first.a_overall == 0.15);
        const auto second = smooth(s, one);
        CHECK(second.a_overall == doctest::Approx(0.2775).epsilon(1e-15));
        CHECK(second.a_verg == doctest::Approx(0.2775).epsilon(1e-15));
    }
    SUBCASE("distance to a constant input contracts by 0.85 per tick") {
        SmoothState s;
        s.value = {0.9, 0.9, 0.9, 0.9};
        AnomalyScores c;
        c.a_overall = 0.3;
        double gap = 0.6;
        for (int i = 0; i < 20; ++i) {
            const double next = smooth(s, c).a_overall;
            CHECK(std::abs(next - 0.3) == doctest::Approx(0.85 * gap).epsilon(1e-12));
            gap = std::abs(next - 0.3);
        }
    }
    SUBCASE("constant input is a fixed point") {
        SmoothState s;
        s.value = {0.4, 0.4, 0.4, 0.4};
        AnomalyScores c;
        c.a_verg = c.a_sacc = c.a_fix = c.a_overall = 0.4;
        CHECK(smooth(s, c).a_overall == doctest::Approx(0.4).epsilon(1e-15));
    }
    SUBCASE("a 0.3 s spike peaks below 0.386 and decays below 0.25 within six updates") {
        SmoothState s;
        AnomalyScores spike, zero;
        spike.a_overall = 1.0;
        double peak = 0.0;
        for (int i = 0; i < 3; ++i) peak = std::max(peak, smooth(s, spike).a_overall);
        CHECK(peak <= 0.386);
        int below_after = -1;
        for (int i = 1; i <= 6; ++i) {
            if (smooth(s, zero).a_overall < 0.25 && below_after < 0) below_after = i;
        }
        CHECK(below_after > 0);
        CHECK(below_after <= 6);
    }
    SUBCASE("zone follows the smoothed score") {
        SmoothState s;
        AnomalyScores one;
        one.a_overall = 1.0;
        one.zone = Zone::urgent;
        CHECK(smooth(s, one).zone == Zone::calm);
    }
    SUBCASE("alpha outside (0, 1] is rejected") {
        SmoothState s;
        s.alpha = 0.0;
        CHECK_THROWS_AS(smooth(s, AnomalyScores{}), UsageError);
    }
}

TEST_CASE("baseline fitting") {
    Rng rng(3);
    const Eigen::MatrixXd mu = gt::random_matrix(24, 25, rng);
    const Eigen::VectorXd rec = (gt::random_matrix(25, 1, rng, 0.1).array() + 1.0).matrix().col(0);
    const auto b = fit_baseline(mu, rec);

    SUBCASE("calibration scored against itself has mean z near zero") {
        std::array<double, kFactors> zbar{};
        for (Eigen::Index j = 0; j < 25; ++j) {
            const auto z = raw_z(b, mu.col(j), rec[j]);
            for (int g = 0; g < kFactors; ++g) zbar[g] += z[g] / 25.0;
        }
        for (double v : zbar) CHECK(std::abs(v) < 0.3);
    }
    SUBCASE("refitting the same set is identical") {
        const auto c = fit_baseline(mu, rec);
        for (int g = 0; g < kFactors; ++g) {
            CHECK(c.group_center[g] == b.group_center[g]);
            CHECK(c.dev_mean[g] == b.dev_mean[g]);
            CHECK(c.dev_sd[g] == b.dev_sd[g]);
        }
        CHECK(c.rec_sd == b.rec_sd);
    }
    SUBCASE("constant inputs keep strictly positive spreads") {
        const auto flat = fit_baseline(Eigen::MatrixXd::Ones(24, 5), Eigen::VectorXd::Ones(5));
        for (double sd : flat.dev_sd) CHECK(sd > 0.0);
        CHECK(flat.rec_sd > 0.0);
    }
    SUBCASE("raw z blends latent deviation and reconstruction") {
        const Eigen::VectorXd x = gt::random_matrix(24, 1, rng).col(0);
        const auto z = raw_z(b, x, 1.7);
        const double zr = (1.7 - b.rec_mean) / b.rec_sd;
        for (int g = 0; g < kFactors; ++g) {
            const double dev = (x.segment(8 * g, 8) - b.group_center[g]).norm();
            CHECK(z[g] == doctest::Approx(0.5 * (dev - b.dev_mean[g]) / b.dev_sd[g] + 0.5 * zr));
        }
    }
}

TEST_CASE("window metrics") {
    auto window = [](double a, features::WindowLabel l, std::array<double, 3> z = {0, 0, 0}) {
        ScoredWindow w;
        w.scores.a_overall = a;
        w.scores.z = z;
        w.label = l;
        return w;
    };
    using features::WindowLabel;
    SUBCASE("perfect predictions") {
        const auto m = evaluate({window(0.9, WindowLabel::vergence_drift, {3, 0, 0}), window(0.1, WindowLabel::normal),
                                 window(0.5, WindowLabel::fixation_instability, {0, 0, 2})});
        CHECK(m.precision == 1.0);
        CHECK(m.recall == 1.0);
        CHECK(m.f1 == 1.0);
        CHECK(m.attribution == 1.0);
    }
    SUBCASE("flipped predictions") {
        const auto m = evaluate({window(0.1, WindowLabel::vergence_drift), window(0.1, WindowLabel::saccadic_dysmetria),
                                 window(0.9, WindowLabel::normal), window(0.8, WindowLabel::normal),
                                 window(0.9, WindowLabel::fixation_instability)});
        // tp 1, fp 2, fn 2: P = 1/3, R = 1/3.
        CHECK(m.tp == 1);
        CHECK(m.fp == 2);
        CHECK(m.fn == 2);
        CHECK(m.f1 == doctest::Approx(2.0 * (1.0 / 3) * (1.0 / 3) / (2.0 / 3)));
    }
    SUBCASE("attribution counts the dominant raw z") {
        const auto m = evaluate({window(0.9, WindowLabel::saccadic_dysmetria, {1, 2, 0}),
                                 window(0.9, WindowLabel::saccadic_dysmetria, {3, 2, 0})});
        CHECK(m.attribution == 0.5);
        CHECK(m.attribution_by_kind[1] == 0.5);
        CHECK(m.anomalies_by_kind[1] == 2);
    }
    CHECK_THROWS_AS(evaluate({}), DomainError);
    CHECK(factor_for(features::WindowLabel::fixation_instability) == 2);
}
