#include "gazeflow/scoring.h"

#include <algorithm>
#include <cmath>

#include "gazeflow/error.h"

namespace gazeflow::scoring {

namespace {

double floored_sd(double var, double floor) { return std::sqrt(std::max(var, 0.0) + floor * floor); }

void mean_sd(const Eigen::VectorXd& v, double floor, double& mean, double& sd) {
    mean = v.mean();
    const double n = static_cast<double>(v.size());
    const double var = n > 1.0 ? (v.array() - mean).square().sum() / (n - 1.0) : 0.0;
    sd = floored_sd(var, floor);
}

}  // namespace

PersonalBaseline fit_baseline(const Eigen::MatrixXd& mu, const Eigen::VectorXd& rec, const ScoringConfig& config) {
    if (mu.rows() != btfd::kLatent || mu.cols() != rec.size() || mu.cols() == 0) {
        throw DomainError("fit_baseline: latent/reconstruction shape mismatch");
    }
    PersonalBaseline b;
    b.config = config;
    for (int g = 0; g < kFactors; ++g) {
        const auto block = mu.middleRows(g * btfd::kGroupSize, btfd::kGroupSize);
        const auto gi = static_cast<std::size_t>(g);
        b.group_center[gi] = block.rowwise().mean();
        const Eigen::VectorXd dev = (block.colwise() - b.group_center[gi]).colwise().norm().transpose();
        mean_sd(dev, config.sd_floor, b.dev_mean[gi], b.dev_sd[gi]);
    }
    mean_sd(rec, config.sd_floor, b.rec_mean, b.rec_sd);
    return b;
}

PersonalBaseline fit_baseline(const btfd::BtfdModel& model, const std::vector<features::FeatureWindow>& calibration,
                              const ScoringConfig& config) {
    if (calibration.size() < 5) throw DomainError("fit_baseline: need at least 5 calibration windows");
    const btfd::ModelInput input = btfd::make_input(calibration);
    const auto enc = btfd::encode_batch(model, input);
    const Eigen::MatrixXd out = model.decoder.forward(enc.mu);
    const Eigen::VectorXd rec =
        (out - input.temporal).colwise().squaredNorm().transpose() / static_cast<double>(btfd::kTemporalInput);
    return fit_baseline(enc.mu, rec, config);
}

std::string_view to_string(Zone zone) {
    switch (zone) {
        case Zone::calm: return "calm";
        case Zone::mild: return "mild";
        case Zone::alert: return "alert";
        case Zone::urgent: return "urgent";
    }
    return "calm";
}

Zone classify_zone(double a, const ZoneBounds& bounds) {
    if (a < bounds.mild) return Zone::calm;
    if (a < bounds.alert) return Zone::mild;
    if (a < bounds.urgent) return Zone::alert;
    return Zone::urgent;
}

int AnomalyScores::dominant_factor() const {
    return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
}

double noisy_or(double a, double b, double c) { return 1.0 - (1.0 - a) * (1.0 - b) * (1.0 - c); }

std::array<double, kFactors> raw_z(const PersonalBaseline& baseline, const Eigen::Ref<const Eigen::VectorXd>& mu,
                                   double rec) {
    const double w = baseline.config.latent_weight;
    const double z_rec = (rec - baseline.rec_mean) / baseline.rec_sd;
    std::array<double, kFactors> z{};
    for (int g = 0; g < kFactors; ++g) {
        const auto gi = static_cast<std::size_t>(g);
        const double dev = (mu.segment(g * btfd::kGroupSize, btfd::kGroupSize) - baseline.group_center[gi]).norm();
        const double z_lat = (dev - baseline.dev_mean[gi]) / baseline.dev_sd[gi];
        z[gi] = w * z_lat + (1.0 - w) * z_rec;
    }
    return z;
}

AnomalyScores scores_from_z(const std::array<double, kFactors>& z, double z_max, double t) {
    AnomalyScores s;
    s.t = t;
    s.z = z;
    auto squash = [z_max](double v) { return std::clamp(v / z_max, 0.0, 1.0); };
    s.a_verg = squash(z[0]);
    s.a_sacc = squash(z[1]);
    s.a_fix = squash(z[2]);
    s.a_overall = noisy_or(s.a_verg, s.a_sacc, s.a_fix);
    s.zone = classify_zone(s.a_overall);
    return s;
}

std::vector<AnomalyScores> score_windows(const btfd::BtfdModel& model, const PersonalBaseline& baseline,
                                         const std::vector<features::FeatureWindow>& windows) {
    std::vector<AnomalyScores> out;
    if (windows.empty()) return out;
    const btfd::ModelInput input = btfd::make_input(windows);
    const auto enc = btfd::encode_batch(model, input);
    const Eigen::MatrixXd recon = model.decoder.forward(enc.mu);
    out.reserve(windows.size());
    for (Eigen::Index j = 0; j < input.size(); ++j) {
        const double rec = (recon.col(j) - input.temporal.col(j)).squaredNorm() / btfd::kTemporalInput;
        out.push_back(scores_from_z(raw_z(baseline, enc.mu.col(j), rec), baseline.config.z_max,
                                    windows[static_cast<std::size_t>(j)].t_start));
    }
    return out;
}

AnomalyScores score_window(const btfd::BtfdModel& model, const PersonalBaseline& baseline,
                           const features::FeatureWindow& window) {
    return score_windows(model, baseline, {window}).front();
}

AnomalyScores smooth(SmoothState& state, const AnomalyScores& raw) {
    if (!(state.alpha > 0.0 && state.alpha <= 1.0)) throw UsageError("smooth: alpha must lie in (0, 1]");
    const std::array<double, 4> a = {raw.a_verg, raw.a_sacc, raw.a_fix, raw.a_overall};
    for (std::size_t i = 0; i < a.size(); ++i) {
        state.value[i] = state.alpha * a[i] + (1.0 - state.alpha) * state.value[i];
    }
    ++state.updates;
    AnomalyScores out = raw;
    out.a_verg = state.value[0];
    out.a_sacc = state.value[1];
    out.a_fix = state.value[2];
    out.a_overall = state.value[3];
    out.zone = classify_zone(out.a_overall, state.zones);
    return out;
}

int factor_for(features::WindowLabel label) {
    switch (label) {
        case features::WindowLabel::vergence_drift: return 0;
        case features::WindowLabel::saccadic_dysmetria: return 1;
        case features::WindowLabel::fixation_instability: return 2;
        case features::WindowLabel::normal: break;
    }
    return -1;
}

Metrics evaluate(const std::vector<ScoredWindow>& windows, double threshold) {
    if (windows.empty()) throw DomainError("evaluate: no labelled windows");
    Metrics m;
    std::array<long, kFactors> hits{};
    for (const auto& w : windows) {
        const bool predicted = w.scores.a_overall >= threshold;
        const bool actual = features::is_anomalous(w.label);
        if (predicted && actual) ++m.tp;
        else if (predicted) ++m.fp;
        else if (actual) ++m.fn;
        else ++m.tn;
        if (actual) {
            const int g = factor_for(w.label);
            const auto gi = static_cast<std::size_t>(g);
            ++m.anomalies_by_kind[gi];
            if (w.scores.dominant_factor() == g) ++hits[gi];
        }
    }
    m.precision = (m.tp + m.fp) > 0 ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp) : 0.0;
    m.recall = (m.tp + m.fn) > 0 ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn) : 0.0;
    m.f1 = (m.precision + m.recall) > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    long total = 0, total_hits = 0;
    for (std::size_t g = 0; g < kFactors; ++g) {
        m.attribution_by_kind[g] =
            m.anomalies_by_kind[g] > 0 ? static_cast<double>(hits[g]) / static_cast<double>(m.anomalies_by_kind[g]) : 0.0;
        total += m.anomalies_by_kind[g];
        total_hits += hits[g];
    }
    m.attribution = total > 0 ? static_cast<double>(total_hits) / static_cast<double>(total) : 0.0;
    return m;
}

}  // namespace gazeflow::scoring
