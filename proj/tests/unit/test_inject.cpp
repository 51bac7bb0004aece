#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gazeflow/error.h"
#include "gazeflow/features.h"
#include "gazeflow/maml.h"
#include "support/oracles.h"

using namespace gazeflow;
using maml::AnomalySpec;
using io::AnomalyKind;
namespace gt = gazeflow::testing;

namespace {

double cyc(const io::GazeSample& g) { return 0.5 * (g.lx + g.rx); }

const io::GazeSample& at(const io::GazeSession& s, double t) {
    const auto i = static_cast<std::size_t>(std::llround((t - s.samples.front().t) * s.rate_hz));
    return s.samples.at(i);
}

// Variance of cyclopean x around each fixation's own mean, inside [a, b).
double within_fixation_variance(const io::GazeSession& s, const std::vector<bool>& mask, double a, double b) {
    double sq = 0.0;
    long n = 0;
    std::size_t i = 0;
    while (i < s.samples.size()) {
        if (mask[i] || s.samples[i].t < a || s.samples[i].t >= b) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < s.samples.size() && !mask[j] && s.samples[j].t < b) ++j;
        double m = 0.0;
        for (std::size_t k = i; k < j; ++k) m += cyc(s.samples[k]);
        m /= static_cast<double>(j - i);
        for (std::size_t k = i; k < j; ++k) {
            sq += (cyc(s.samples[k]) - m) * (cyc(s.samples[k]) - m);
            ++n;
        }
        i = j;
    }
    return sq / static_cast<double>(n);
}

double peak_speed(const io::GazeSession& s) {
    double peak = 0.0;
    for (std::size_t i = 1; i < s.samples.size(); ++i)
        peak = std::max(peak, std::abs(cyc(s.samples[i]) - cyc(s.samples[i - 1])) * s.rate_hz);
    return peak;
}

std::vector<double> channel_values(const io::GazeSession& s, features::Channel c, double a, double b,
                                   const features::InterocularBaseline& base) {
    const auto f = features::extract_features(io::resample_to_30hz(s), base);
    std::vector<double> v;
    for (const auto& row : f)
        if (row.t >= a && row.t < b) v.push_back(row.as_array()[c]);
    return v;
}

// Mean of one feature channel over [a, b) after 30 Hz resampling.
double channel_mean(const io::GazeSession& s, features::Channel c, double a, double b,
                    const features::InterocularBaseline& base) {
    const auto v = channel_values(s, c, a, b, base);
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Median, which follows the fixation periods rather than the saccades.
double channel_median(const io::GazeSession& s, features::Channel c, double a, double b,
                      const features::InterocularBaseline& base) {
    auto v = channel_values(s, c, a, b, base);
    std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
    return v[v.size() / 2];
}

}  // namespace

TEST_CASE("magnitude ranges") {
    auto spec = [](AnomalyKind k, double m) { return AnomalySpec{k, m, 1.0, 3.0}; };
    CHECK_NOTHROW(maml::check_magnitude(spec(AnomalyKind::vergence_drift, 2.0)));
    CHECK_NOTHROW(maml::check_magnitude(spec(AnomalyKind::vergence_drift, 5.0)));
    CHECK_THROWS_AS(maml::check_magnitude(spec(AnomalyKind::vergence_drift, 1.9)), ValidationError);
    CHECK_THROWS_AS(maml::check_magnitude(spec(AnomalyKind::vergence_drift, 5.1)), ValidationError);
    CHECK_NOTHROW(maml::check_magnitude(spec(AnomalyKind::fixation_instability, 2.0)));
    CHECK_NOTHROW(maml::check_magnitude(spec(AnomalyKind::fixation_instability, 4.0)));
    CHECK_THROWS_AS(maml::check_magnitude(spec(AnomalyKind::fixation_instability, 1.5)), ValidationError);
    CHECK_THROWS_AS(maml::check_magnitude(spec(AnomalyKind::fixation_instability, 4.5)), ValidationError);
    CHECK_NOTHROW(maml::check_magnitude(spec(AnomalyKind::saccadic_dysmetria, 0.2)));
    CHECK_NOTHROW(maml::check_magnitude(spec(AnomalyKind::saccadic_dysmetria, -0.5)));
    CHECK_THROWS_AS(maml::check_magnitude(spec(AnomalyKind::saccadic_dysmetria, 0.1)), ValidationError);
    CHECK_THROWS_AS(maml::check_magnitude(spec(AnomalyKind::saccadic_dysmetria, -0.6)), ValidationError);
    CHECK(maml::magnitude_range(AnomalyKind::fixation_instability) == std::pair{2.0, 4.0});
}

TEST_CASE("span bookkeeping") {
    const auto s = gt::still_session(20.0, 250.0);
    const auto r = maml::inject(s, {AnomalyKind::vergence_drift, 3.0, 10.0, 5.0});
    REQUIRE(r.session.anomaly_spans.size() == 1);
    CHECK(r.session.anomaly_spans[0].start_s == 10.0);
    CHECK(r.session.anomaly_spans[0].end_s == 15.0);
    CHECK(maml::parse_spec(r.session.metadata.at("injection.0")).magnitude == 3.0);

    CHECK_THROWS_AS(maml::inject(r.session, {AnomalyKind::fixation_instability, 3.0, 14.0, 2.0}), DomainError);
    CHECK_THROWS_AS(maml::inject(s, {AnomalyKind::vergence_drift, 3.0, 18.0, 5.0}), DomainError);
    CHECK_THROWS_AS(maml::inject(s, {AnomalyKind::vergence_drift, 3.0, 5.0, 0.6}), DomainError);
    const auto two = maml::inject(r.session, {AnomalyKind::fixation_instability, 3.0, 2.0, 3.0});
    CHECK(two.session.anomaly_spans.front().kind == AnomalyKind::fixation_instability);
    CHECK(two.session.metadata.count("injection.1") == 1);

    const auto spec = maml::parse_spec("saccadic_dysmetria,-0.3,4,2.5");
    CHECK(spec.kind == AnomalyKind::saccadic_dysmetria);
    CHECK(spec.magnitude == -0.3);
    CHECK(maml::format_spec(spec) == "saccadic_dysmetria,-0.3,4,2.5");
    CHECK_THROWS_AS(maml::parse_spec("vergence_drift,3"), ParseError);
}

TEST_CASE("vergence drift") {
    const auto s = gt::still_session(20.0, 1000.0);
    const auto r = maml::inject(s, {AnomalyKind::vergence_drift, 3.0, 10.0, 5.0}).session;
    auto verg = [](const io::GazeSample& g) { return g.lx - g.rx; };
    CHECK(std::abs(verg(at(r, 10.5)) - verg(at(s, 10.5))) == doctest::Approx(3.0).epsilon(1e-9));
    CHECK(std::abs(verg(at(r, 12.0)) - verg(at(s, 12.0))) == doctest::Approx(3.0).epsilon(1e-9));
    CHECK(std::abs(verg(at(r, 10.25)) - verg(at(s, 10.25))) == doctest::Approx(1.5).epsilon(1e-9));
    CHECK(verg(at(r, 9.9)) == verg(at(s, 9.9)));
    CHECK(verg(at(r, 15.5)) == verg(at(s, 15.5)));
    // The left eye is untouched.
    for (std::size_t i = 0; i < s.samples.size(); i += 101) CHECK(r.samples[i].lx == s.samples[i].lx);
}

TEST_CASE("fixation instability") {
    io::IdentityProfile profile;
    const auto s = io::synthesize_session(profile, 30.0, 1000.0, 21);
    const auto mask = maml::saccade_mask(s);
    const double before = within_fixation_variance(s, mask, 10.0, 20.0);

    const auto four = maml::inject(s, {AnomalyKind::fixation_instability, 4.0, 10.0, 10.0}).session;
    const double ratio = within_fixation_variance(four, mask, 10.0, 20.0) / before;
    CHECK(ratio >= 3.0);
    CHECK(ratio <= 5.0);
    // Outside the span nothing moves.
    for (std::size_t i = 0; i < s.samples.size(); ++i) {
        if (s.samples[i].t < 10.0 || s.samples[i].t > 20.0) {
            CHECK(four.samples[i].lx == s.samples[i].lx);
            if (four.samples[i].lx != s.samples[i].lx) break;
        }
    }

    const auto one = maml::inject(s, {AnomalyKind::fixation_instability, 1.0, 10.0, 10.0}, false).session;
    for (std::size_t i = 0; i < s.samples.size(); i += 7) CHECK(one.samples[i].lx == doctest::Approx(s.samples[i].lx));
    CHECK_THROWS_AS(maml::inject(s, {AnomalyKind::fixation_instability, 0.0, 10.0, 10.0}, false), ValidationError);
}

TEST_CASE("saccadic dysmetria") {
    const auto s = gt::one_saccade_session(8.0, 1000.0, 3.0, 10.0);
    SUBCASE("hypermetric gain scales the landing and the peak velocity") {
        const auto r = maml::inject(s, {AnomalyKind::saccadic_dysmetria, 0.5, 2.0, 4.0});
        CHECK(r.modified_saccades == 1);
        CHECK(r.warning.empty());
        CHECK(std::abs(cyc(at(r.session, 4.0)) - 15.0) < 0.2);
        CHECK(peak_speed(r.session) / peak_speed(s) == doctest::Approx(1.5).epsilon(0.03));
        // The landing error is removed by the end of the span.
        CHECK(cyc(at(r.session, 6.5)) == doctest::Approx(cyc(at(s, 6.5))));
    }
    SUBCASE("hypometric gain") {
        const auto r = maml::inject(s, {AnomalyKind::saccadic_dysmetria, -0.3, 2.0, 4.0});
        CHECK(std::abs(cyc(at(r.session, 4.0)) - 7.0) < 0.2);
    }
    SUBCASE("zero gain is the identity") {
        const auto r = maml::inject(s, {AnomalyKind::saccadic_dysmetria, 0.0, 2.0, 4.0}, false);
        for (std::size_t i = 0; i < s.samples.size(); ++i) CHECK(r.session.samples[i].lx == s.samples[i].lx);
    }
    SUBCASE("no saccade in the span is a warning, not an error") {
        const auto r = maml::inject(s, {AnomalyKind::saccadic_dysmetria, 0.4, 4.5, 3.0});
        CHECK(r.modified_saccades == 0);
        CHECK(!r.warning.empty());
    }
}

TEST_CASE("each fixture shifts its intended feature channel") {
    io::IdentityProfile profile;
    const auto s = io::synthesize_session(profile, 40.0, 1000.0, 5);
    const auto base = features::interocular_baseline(s);
    const double a = 15.0, b = 25.0;

    SUBCASE("vergence drift moves the horizontal deviation by the drift") {
        const auto r = maml::inject(s, {AnomalyKind::vergence_drift, 3.0, a - 0.5, 11.0}).session;
        const double shift = channel_mean(r, features::h_dev, a, b, base) - channel_mean(s, features::h_dev, a, b, base);
        CHECK(std::abs(shift) == doctest::Approx(3.0).epsilon(0.02));
        CHECK(std::abs(channel_mean(r, features::velocity, a, b, base) -
                       channel_mean(s, features::velocity, a, b, base)) < 0.2);
    }
    SUBCASE("fixation instability raises fixation spread") {
        const auto r = maml::inject(s, {AnomalyKind::fixation_instability, 4.0, a, b - a}).session;
        const double ratio = channel_median(r, features::fix_stability, a, b, base) /
                             channel_median(s, features::fix_stability, a, b, base);
        CHECK(ratio > 1.3);
        CHECK(std::abs(channel_mean(r, features::h_dev, a, b, base) - channel_mean(s, features::h_dev, a, b, base)) <
              0.05);
    }
    SUBCASE("dysmetria raises saccadic velocity and leaves vergence alone") {
        const auto r = maml::inject(s, {AnomalyKind::saccadic_dysmetria, 0.5, a, b - a});
        REQUIRE(r.modified_saccades > 0);
        CHECK(channel_mean(r.session, features::velocity, a, b, base) >
              1.1 * channel_mean(s, features::velocity, a, b, base));
        CHECK(std::abs(channel_mean(r.session, features::vergence, a, b, base) -
                       channel_mean(s, features::vergence, a, b, base)) < 1e-9);
    }
}

TEST_CASE("saccade mask") {
    const auto s = gt::one_saccade_session(2.0, 1000.0, 1.0, 10.0);
    const auto m = maml::saccade_mask(s);
    CHECK(m[1020]);
    CHECK(!m[500]);
    CHECK(!m[1500]);
    // 45 ms of movement plus the 10 ms dilation on each side.
    const auto flagged = std::count(m.begin(), m.end(), true);
    CHECK(flagged > 30);
    CHECK(flagged < 80);
    const auto still = maml::saccade_mask(gt::still_session(2.0, 1000.0));
    CHECK(std::none_of(still.begin(), still.end(), [](bool v) { return v; }));
}
