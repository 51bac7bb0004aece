#include <doctest.h>

#include <cmath>

#include "gazeflow/error.h"
#include "gazeflow/features.h"
#include "support/oracles.h"

using namespace gazeflow;
using namespace gazeflow::features;
namespace gt = gazeflow::testing;

TEST_CASE("still symmetric eyes give flat features") {
    const auto f = extract_features(gt::still_session(5.0, 30.0));
    for (const auto& s : f) {
        CHECK(s.velocity == 0.0);
        CHECK(s.h_dev == 0.0);
        CHECK(s.v_dev == 0.0);
        CHECK(s.fix_stability == 0.0);
        CHECK(s.pupil_ratio == 1.0);
        CHECK(s.vergence == 2.0);
    }
}

TEST_CASE("a one-eye ramp") {
    auto s = gt::still_session(6.0, 30.0);
    for (auto& g : s.samples) g.lx += g.t;  // +1 deg/s
    const auto f = extract_features(s, InterocularBaseline{2.0, 0.0});
    for (std::size_t i = 1; i + 1 < f.size(); ++i) {
        CHECK(f[i].h_dev == doctest::Approx(f[i].t).epsilon(1e-9));
        CHECK(f[i].velocity == doctest::Approx(0.5).epsilon(1e-9));
    }
}

TEST_CASE("interocular baseline is the early median") {
    auto s = gt::still_session(10.0, 30.0, 1.5);
    for (auto& g : s.samples) g.ly = g.ry + 0.25;
    const auto b = interocular_baseline(s);
    CHECK(b.horizontal == doctest::Approx(1.5));
    CHECK(b.vertical == doctest::Approx(0.25));
    CHECK_THROWS_AS(extract_features(gt::still_session(5.0, 1000.0)), DomainError);
}

TEST_CASE("invalid samples are interpolated") {
    auto s = gt::still_session(5.0, 30.0);
    for (auto& g : s.samples) g.lx = g.rx + 2.0 + 0.1 * g.t;
    s.samples[40].valid = false;
    s.samples[40].lx = 30.0;
    const auto f = extract_features(s, InterocularBaseline{2.0, 0.0});
    CHECK(f[40].h_dev == doctest::Approx(0.1 * s.samples[40].t).epsilon(1e-9));
}

TEST_CASE("windowing") {
    const auto f = extract_features(gt::still_session(6.0, 30.0));
    CHECK(make_windows(f, 3.0, "a").size() == 2);
    CHECK(make_windows(f, 1.5, "a").size() == 3);

    SUBCASE("labels need more than half the window") {
        const std::vector<io::AnomalySpan> spans = {{1.0, 3.0, io::AnomalyKind::saccadic_dysmetria}};
        const auto w = make_windows(f, 3.0, "a", spans);
        REQUIRE(w[0].label.has_value());
        CHECK(*w[0].label == WindowLabel::saccadic_dysmetria);
        CHECK(*w[1].label == WindowLabel::normal);
        const std::vector<io::AnomalySpan> half = {{1.5, 3.0, io::AnomalyKind::saccadic_dysmetria}};
        CHECK(*make_windows(f, 3.0, "a", half)[0].label == WindowLabel::normal);
    }
    SUBCASE("padding replicates the last real row") {
        auto s = gt::still_session(6.0, 30.0);
        for (auto& g : s.samples) g.lx += 0.3 * g.t;
        const auto w = make_windows(extract_features(s), 3.0, "a").front();
        for (int r = 90; r < 96; ++r) CHECK(w.matrix.row(r) == w.matrix.row(89));
        CHECK(w.matrix(88, h_dev) != w.matrix(89, h_dev));
    }
    SUBCASE("tail window") {
        const auto w = window_from_tail(f, "a");
        CHECK(w.t_start == doctest::Approx(f[f.size() - 90].t));
        CHECK_THROWS_AS(window_from_tail(std::vector<FeatureSample>(10), "a"), DomainError);
    }
}

TEST_CASE("standardizer") {
    auto windows = gt::random_windows(8, 3);
    for (auto& w : windows) {
        w.matrix.col(velocity) = w.matrix.col(velocity).array().abs() * 20.0;
        w.matrix.col(fix_stability) = w.matrix.col(fix_stability).array().abs() * 0.1;
    }
    const auto s = fit_standardizer(windows);

    SUBCASE("the fitted set comes out centred and unit scale") {
        for (int c = 0; c < kChannels; ++c) {
            double sum = 0.0, sq = 0.0;
            for (const auto& w : windows) {
                const auto z = s.apply(w).matrix.col(c);
                sum += z.sum();
                sq += z.squaredNorm();
            }
            const double n = 8.0 * kWindowRows;
            CHECK(std::abs(sum / n) < 1e-6);
            CHECK(std::abs(std::sqrt(sq / n - (sum / n) * (sum / n)) - 1.0) < 1e-6);
        }
    }
    SUBCASE("apply then unapply restores the window") {
        for (const auto& w : windows) CHECK((s.unapply(s.apply(w)).matrix - w.matrix).cwiseAbs().maxCoeff() < 1e-9);
    }
    SUBCASE("a constant channel is floored") {
        auto flat = windows;
        for (auto& w : flat) w.matrix.col(pupil_ratio).setConstant(1.02);
        const auto f = fit_standardizer(flat);
        CHECK(f.sd[pupil_ratio] == Standardizer::kSdFloor);
        CHECK(f.apply(flat[0]).matrix.col(pupil_ratio).cwiseAbs().maxCoeff() < 1e-6);
    }
    SUBCASE("magnitude channels are standardized in log space") {
        FeatureWindow w = windows[0];
        const double v = w.matrix(10, velocity);
        CHECK(s.apply(w).matrix(10, velocity) ==
              doctest::Approx((std::log(v + kLogOffset[velocity]) - s.mean[velocity]) / s.sd[velocity]));
    }
    CHECK_THROWS_AS(fit_standardizer({}), UsageError);
}
