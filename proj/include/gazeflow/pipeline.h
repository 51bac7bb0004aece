#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "gazeflow/autoencoder.h"
#include "gazeflow/btfd.h"
#include "gazeflow/config.h"
#include "gazeflow/features.h"
#include "gazeflow/gaze_io.h"
#include "gazeflow/maml.h"
#include "gazeflow/scoring.h"

namespace gazeflow::harness {

// ---- cohort ------------------------------------------------------------------

struct Cohort {
    std::vector<io::IdentityProfile> profiles;  // training identities first
    std::vector<std::string> ids;
    int train_count = 0;

    std::vector<int> train_indices() const;
    std::vector<int> heldout_indices() const;
};

Cohort make_cohort(const RunConfig& config);

// k-th research-grade recording of identity i at the source rate.
io::GazeSession source_session(const RunConfig& config, const Cohort& cohort, int identity, int k);

// Writes every identity's recordings as gazeflow_csv + sidecar. Returns the paths.
std::vector<std::filesystem::path> write_cohort(const RunConfig& config, const std::filesystem::path& dir,
                                                double rate_hz);

// Sample standard deviation over mean of the cohort's fixation noise.
double fixation_noise_cv(const Cohort& cohort);

// ---- calibration and windows ---------------------------------------------------

// The 15 s calibration prefix of a 30 Hz session, already turned into windows.
struct Calibration {
    features::InterocularBaseline interocular;
    features::Standardizer standardizer;      // fitted on the 5 support windows, sd floored by the population
    std::vector<features::FeatureWindow> support;    // 5 non-overlapping, standardized
    std::vector<features::FeatureWindow> reference;  // overlapping (hop 0.5 s), standardized
};

// Throws DomainError when the session is shorter than calibration_s.
// The user's standardizer takes its means from the support windows; each sd is
// the larger of the support spread and the population spread, since 15 s
// under-samples the slow channels.
Calibration calibrate(const io::GazeSession& session30, double calibration_s, const features::Standardizer& population);

// Labelled hop-3 s windows starting at calibration_s, standardized with `standardizer`.
std::vector<features::FeatureWindow> query_windows(const io::GazeSession& session30, const Calibration& calibration,
                                                   const features::Standardizer& standardizer, double calibration_s);

// Non-overlapping anomaly spans on the 3 s window grid after calibration, at
// least one grid cell apart, kinds cycled `per_kind` times, random magnitudes.
std::vector<maml::AnomalySpec> plan_anomalies(double session_s, double calibration_s, double span_s, int per_kind,
                                              std::uint64_t seed);

io::GazeSession apply_anomalies(const io::GazeSession& session, const std::vector<maml::AnomalySpec>& specs);

// ---- stages ------------------------------------------------------------------

struct StageArtifacts {
    btfd::BtfdModel model;
    features::Standardizer population;
    std::vector<std::vector<double>> curve;  // one row per epoch
    std::vector<std::string> curve_columns;
};

// Population-standardized windows from every training identity's recordings.
struct PretrainData {
    std::vector<io::GazeSession> sessions;  // source rate
    std::vector<features::FeatureWindow> windows;
    features::Standardizer standardizer;
};

PretrainData pretrain_data(const RunConfig& config, const Cohort& cohort);

StageArtifacts run_btfd_stage(const RunConfig& config, const PretrainData& data);
StageArtifacts run_cbp_stage(const RunConfig& config, const PretrainData& data, const btfd::BtfdModel& init);

std::vector<maml::Task> task_pool(const RunConfig& config, const Cohort& cohort,
                                  const features::Standardizer& population);
StageArtifacts run_maml_stage(const RunConfig& config, const std::vector<maml::Task>& tasks,
                              const btfd::BtfdModel& init, const features::Standardizer& population);

// Checkpoint + JSON manifest (hyperparameters, standardizer) + loss-curve CSV.
void save_stage(const std::filesystem::path& dir, const std::string& stage, const RunConfig& config,
                const StageArtifacts& artifacts);
// Throws UsageError naming the stage when its checkpoint is missing.
StageArtifacts load_stage(const std::filesystem::path& dir, const std::string& stage, const RunConfig& config);
bool stage_exists(const std::filesystem::path& dir, const std::string& stage);

// ---- personalization ---------------------------------------------------------

struct UserModel {
    std::string identity_id;
    btfd::BtfdModel model;
    features::Standardizer standardizer;
    features::InterocularBaseline interocular;
    scoring::PersonalBaseline baseline;
    double wall_ms = 0.0;
};

UserModel personalize_user(const btfd::BtfdModel& meta_model, const features::Standardizer& population,
                           const io::GazeSession& calibration_session, const RunConfig& config, double alpha);

void save_user(const std::filesystem::path& dir, const UserModel& user, const RunConfig& config);
UserModel load_user(const std::filesystem::path& dir, const RunConfig& config);

// ---- evaluation ----------------------------------------------------------------

enum class Split { same, cross };
std::string_view to_string(Split split);

// Held-out evaluation recording at the model rate with labelled spans.
io::GazeSession evaluation_session(const RunConfig& config, const Cohort& cohort, int identity, Split split);

struct MethodRow {
    std::string method;
    Split split = Split::same;
    scoring::Metrics metrics;
    double calib_ms = 0.0;  // mean per-user calibration time
};

struct ExperimentReport {
    std::vector<MethodRow> rows;  // {Pop-AE, P-AE-5s, GazeFlow} x {same, cross}
    std::array<double, 2> f1_alpha0{};                 // GazeFlow without the inner step, per split
    double personalization_win_fraction = 0.0;         // theta'_user recon <= theta* recon
    std::vector<double> recon_theta_star;              // per held-out identity, same split
    std::vector<double> recon_adapted;

    const MethodRow& row(const std::string& method, Split split) const;
};

struct PopulationAe {
    ae::Autoencoder model;
    features::Standardizer standardizer;
    double rec_mean = 0.0;
    double rec_sd = 1.0;
};

PopulationAe train_population_ae(const RunConfig& config, const PretrainData& data);

ExperimentReport evaluate(const RunConfig& config, const Cohort& cohort, const btfd::BtfdModel& meta_model,
                          const features::Standardizer& population, const PopulationAe& pop);

std::string format_report(const ExperimentReport& report);
std::string report_csv(const ExperimentReport& report);
std::string summary_csv(const ExperimentReport& report);

}  // namespace gazeflow::harness
