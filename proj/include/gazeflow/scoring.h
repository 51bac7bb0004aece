#pragma once

#include <array>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "gazeflow/btfd.h"
#include "gazeflow/features.h"

namespace gazeflow::scoring {

inline constexpr int kFactors = 3;  // vergence, saccadic, fixation

struct ScoringConfig {
    double z_max = 6.0;
    double latent_weight = 0.5;  // blend of latent-deviation z against reconstruction z
    double sd_floor = 1e-6;
};

// Per-user reference statistics, fitted on calibration windows.
struct PersonalBaseline {
    std::array<Eigen::VectorXd, kFactors> group_center;  // 8 values each
    std::array<double, kFactors> dev_mean{};
    std::array<double, kFactors> dev_sd{};
    double rec_mean = 0.0;
    double rec_sd = 1.0;
    ScoringConfig config;
};

// mu is 24 x N (columns are windows), rec holds the per-window reconstruction error.
PersonalBaseline fit_baseline(const Eigen::MatrixXd& mu, const Eigen::VectorXd& rec, const ScoringConfig& config = {});
PersonalBaseline fit_baseline(const btfd::BtfdModel& model, const std::vector<features::FeatureWindow>& calibration,
                              const ScoringConfig& config = {});

enum class Zone { calm, mild, alert, urgent };
std::string_view to_string(Zone zone);

// Lower edges of the mild, alert and urgent zones (half-open intervals).
struct ZoneBounds {
    double mild = 0.25;
    double alert = 0.50;
    double urgent = 0.75;
};

Zone classify_zone(double a_overall, const ZoneBounds& bounds = {});

struct AnomalyScores {
    double t = 0.0;
    double a_verg = 0.0;
    double a_sacc = 0.0;
    double a_fix = 0.0;
    double a_overall = 0.0;
    std::array<double, kFactors> z{};  // blended raw z per factor
    Zone zone = Zone::calm;

    double factor(int g) const { return g == 0 ? a_verg : (g == 1 ? a_sacc : a_fix); }
    // Index of the factor with the largest raw z.
    int dominant_factor() const;
};

double noisy_or(double a, double b, double c);

// Raw z values for one window (blend of latent deviation and reconstruction).
std::array<double, kFactors> raw_z(const PersonalBaseline& baseline, const Eigen::Ref<const Eigen::VectorXd>& mu,
                                   double rec);
AnomalyScores scores_from_z(const std::array<double, kFactors>& z, double z_max, double t = 0.0);

AnomalyScores score_window(const btfd::BtfdModel& model, const PersonalBaseline& baseline,
                           const features::FeatureWindow& window);
std::vector<AnomalyScores> score_windows(const btfd::BtfdModel& model, const PersonalBaseline& baseline,
                                         const std::vector<features::FeatureWindow>& windows);

inline constexpr double kSmoothAlpha = 0.15;
inline constexpr double kUpdateRateHz = 10.0;

struct SmoothState {
    double alpha = kSmoothAlpha;
    ZoneBounds zones;
    std::array<double, 4> value{};  // verg, sacc, fix, overall; starts at zero
    long updates = 0;
};

// Elementwise exponential smoothing; zone recomputed from the smoothed overall score.
AnomalyScores smooth(SmoothState& state, const AnomalyScores& raw);

struct ScoredWindow {
    AnomalyScores scores;
    features::WindowLabel label = features::WindowLabel::normal;
};

struct Metrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    long tp = 0, fp = 0, fn = 0, tn = 0;
    // Indexed by factor group: vergence drift, saccadic dysmetria, fixation instability.
    std::array<double, kFactors> attribution_by_kind{};
    std::array<long, kFactors> anomalies_by_kind{};
    double attribution = 0.0;
};

// Window-level metrics at `threshold` on a_overall, plus attribution accuracy
// (dominant factor == injected kind) over the anomalous windows.
Metrics evaluate(const std::vector<ScoredWindow>& windows, double threshold = 0.5);

// Factor group index addressed by an anomaly label.
int factor_for(features::WindowLabel label);

}  // namespace gazeflow::scoring
