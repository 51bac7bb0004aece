#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gazeflow/btfd.h"
#include "gazeflow/features.h"
#include "gazeflow/gaze_io.h"
#include "gazeflow/scoring.h"

namespace gazeflow::maml {

// ---- synthetic anomaly injection ------------------------------------------

struct AnomalySpec {
    io::AnomalyKind kind = io::AnomalyKind::vergence_drift;
    // Degrees for vergence drift, variance multiplier for fixation instability,
    // signed fractional gain for saccadic dysmetria.
    double magnitude = 0.0;
    double onset_s = 0.0;
    double duration_s = 0.0;
};

inline constexpr double kVergenceRampS = 0.5;
inline constexpr double kSaccadeThresholdDegS = 30.0;

// Accepted magnitude interval; for dysmetria it bounds |gain|.
std::pair<double, double> magnitude_range(io::AnomalyKind kind);

// Throws ValidationError when the magnitude is outside the accepted range.
void check_magnitude(const AnomalySpec& spec);

struct InjectionResult {
    io::GazeSession session;
    int modified_saccades = 0;
    std::string warning;  // non-empty when nothing could be modified
};

// Every injector records the span in anomaly_spans and the spec in the
// session metadata. `enforce_range = false` admits test-only magnitudes such
// as a unit variance multiplier or a zero gain.
InjectionResult inject_vergence_drift(const io::GazeSession& session, const AnomalySpec& spec,
                                      bool enforce_range = true);
InjectionResult inject_fixation_instability(const io::GazeSession& session, const AnomalySpec& spec,
                                            bool enforce_range = true);
InjectionResult inject_saccadic_dysmetria(const io::GazeSession& session, const AnomalySpec& spec,
                                          bool enforce_range = true);
InjectionResult inject(const io::GazeSession& session, const AnomalySpec& spec, bool enforce_range = true);

// Per-sample saccade mask from the cyclopean speed (threshold in deg/s),
// dilated by the differencing half-span.
std::vector<bool> saccade_mask(const io::GazeSession& session, double threshold = kSaccadeThresholdDegS);

std::string format_spec(const AnomalySpec& spec);
AnomalySpec parse_spec(const std::string& text);

// ---- detection objective ---------------------------------------------------

struct DetectionConfig {
    double margin = 3.0;             // on the soft-max of the raw factor z values
    double attribution_margin = 0.5;
    double attribution_weight = 1.0;
    scoring::ScoringConfig scoring;
};

struct ScoreLoss {
    double loss = 0.0;
    Eigen::MatrixXd d_z;  // 3 x Q
};

// Mean over query windows of softplus(-y (s - margin)) with s = logsumexp(z),
// plus attribution margins for anomalous windows.
ScoreLoss detection_loss_from_z(const Eigen::MatrixXd& z, const std::vector<features::WindowLabel>& labels,
                                const DetectionConfig& config);

struct StatisticGradients {
    Eigen::MatrixXd d_mu_calibration;  // 24 x C
    Eigen::VectorXd d_rec_calibration;
    Eigen::MatrixXd d_mu_query;        // 24 x Q
    Eigen::VectorXd d_rec_query;
};

// Raw factor z of each query window against baseline statistics of the
// calibration encodings (the scoring module's formulas), then the loss above.
double detection_objective(const Eigen::MatrixXd& mu_calibration, const Eigen::VectorXd& rec_calibration,
                           const Eigen::MatrixXd& mu_query, const Eigen::VectorXd& rec_query,
                           const std::vector<features::WindowLabel>& labels, const DetectionConfig& config,
                           StatisticGradients* grads = nullptr);

// One identity's episode. All windows are standardized with the identity's
// own standardizer; `support` is the 5-window inner-loop set.
struct Task {
    std::string identity_id;
    btfd::ModelInput support;
    btfd::ModelInput calibration;
    btfd::ModelInput query;
    std::vector<features::WindowLabel> labels;
};

struct DetectionResult {
    double loss = 0.0;
    btfd::ModelGradients grads;
};

DetectionResult detection_loss(const btfd::BtfdModel& model, const Task& task, const DetectionConfig& config);

// ---- meta-training ---------------------------------------------------------

struct MetaConfig {
    double inner_lr = 0.01;
    double outer_lr = 0.001;
    int inner_steps = 1;
    int meta_batch = 4;
    bool first_order = true;
    int epochs = 12;  // one epoch = one shuffled pass over the task pool
    // Weight of the BTFD loss on the adapted model's normal query windows,
    // added to each task's query objective. It keeps the adapted model a
    // usable reconstructor; zero gives the bare detection objective.
    double btfd_weight = 0.1;
    DetectionConfig detection;
};

// theta - alpha * grad L_BTFD(support; theta).
btfd::BtfdModel inner_update(const btfd::BtfdModel& model, const btfd::ModelInput& support, double alpha,
                             std::uint64_t seed);

struct MetaResult {
    std::vector<double> curve;  // mean query loss per epoch
};

MetaResult meta_train(btfd::BtfdModel& model, const std::vector<Task>& tasks, const MetaConfig& config,
                      std::uint64_t seed);

inline constexpr int kShots = 5;

// One inner step on the first five calibration windows. Throws DomainError for
// fewer than five.
btfd::BtfdModel personalize(const btfd::BtfdModel& meta_model,
                            const std::vector<features::FeatureWindow>& calibration, double alpha,
                            std::uint64_t seed);

}  // namespace gazeflow::maml
