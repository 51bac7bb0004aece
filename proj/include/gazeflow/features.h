#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gazeflow/gaze_io.h"

namespace gazeflow::features {

inline constexpr int kChannels = 6;
inline constexpr int kWindowReal = 90;  // 3 s at 30 Hz
inline constexpr int kWindowRows = 96;  // padded for a 4-level DWT
inline constexpr double kWindowSeconds = 3.0;
inline constexpr double kStabilityHorizonS = 0.25;
inline constexpr double kBaselineHorizonS = 5.0;

enum Channel : int { velocity = 0, h_dev, v_dev, vergence, pupil_ratio, fix_stability };

struct FeatureSample {
    double t = 0.0;
    double velocity = 0.0;
    double h_dev = 0.0;
    double v_dev = 0.0;
    double vergence = 0.0;
    double pupil_ratio = 1.0;
    double fix_stability = 0.0;

    std::array<double, kChannels> as_array() const {
        return {velocity, h_dev, v_dev, vergence, pupil_ratio, fix_stability};
    }
};

// Inter-ocular reference removed from the deviation channels.
struct InterocularBaseline {
    double horizontal = 0.0;
    double vertical = 0.0;
};

using WindowMatrix = Eigen::Matrix<double, kWindowRows, kChannels>;

enum class WindowLabel { normal, vergence_drift, fixation_instability, saccadic_dysmetria };

std::string_view to_string(WindowLabel label);
WindowLabel label_for(io::AnomalyKind kind);
bool is_anomalous(WindowLabel label);

struct FeatureWindow {
    WindowMatrix matrix = WindowMatrix::Zero();
    std::string identity_id;
    double t_start = 0.0;
    std::optional<WindowLabel> label;
};

// Median inter-ocular difference over the first five seconds of valid samples.
InterocularBaseline interocular_baseline(const io::GazeSession& session);

// One feature row per input sample. Invalid samples are linearly interpolated
// first. When `baseline` is absent it is taken from the session itself.
std::vector<FeatureSample> extract_features(const io::GazeSession& session,
                                            std::optional<InterocularBaseline> baseline = std::nullopt);

// Sliding 90-sample windows, edge-padded to 96 rows. Labels come from the
// session's anomaly spans (> 50% overlap); `spans` may be empty.
std::vector<FeatureWindow> make_windows(const std::vector<FeatureSample>& features, double hop_s,
                                        const std::string& identity_id,
                                        const std::vector<io::AnomalySpan>& spans = {});

// Builds one window from the last 90 rows of `features`.
FeatureWindow window_from_tail(const std::vector<FeatureSample>& features, const std::string& identity_id);

// Velocity and fixation stability are heavy-tailed magnitudes dominated by
// saccades; they enter the model as log(x + offset) so that changes during
// fixation stay visible next to saccadic peaks. Mean and sd are fitted in
// that compressed space.
inline constexpr std::array<double, kChannels> kLogOffset = {0.5, 0.0, 0.0, 0.0, 0.0, 0.01};
inline constexpr bool is_log_channel(int c) { return c == velocity || c == fix_stability; }

struct Standardizer {
    std::array<double, kChannels> mean{};
    std::array<double, kChannels> sd{};
    static constexpr double kSdFloor = 1e-6;

    FeatureWindow apply(const FeatureWindow& w) const;
    FeatureWindow unapply(const FeatureWindow& w) const;
};

Standardizer fit_standardizer(const std::vector<FeatureWindow>& windows);

}  // namespace gazeflow::features
