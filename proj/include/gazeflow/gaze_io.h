#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gazeflow::io {

enum class AnomalyKind { vergence_drift, fixation_instability, saccadic_dysmetria };

inline constexpr AnomalyKind kAllAnomalyKinds[] = {
    AnomalyKind::vergence_drift, AnomalyKind::fixation_instability,
    AnomalyKind::saccadic_dysmetria};

std::string_view to_string(AnomalyKind kind);
AnomalyKind parse_anomaly_kind(std::string_view name);

struct AnomalySpan {
    double start_s = 0.0;
    double end_s = 0.0;
    AnomalyKind kind = AnomalyKind::vergence_drift;

    double overlap(double a, double b) const;
};

// One binocular sample. Angles in degrees of visual angle, pupils in mm.
struct GazeSample {
    double t = 0.0;
    double lx = 0.0, ly = 0.0;
    double rx = 0.0, ry = 0.0;
    double pl = 0.0, pr = 0.0;
    bool valid = true;
};

struct GazeSession {
    std::string identity_id;
    double rate_hz = 0.0;
    std::vector<GazeSample> samples;
    std::vector<AnomalySpan> anomaly_spans;
    // Free-form provenance (right-eye synthesis flag, injection records, ...).
    std::map<std::string, std::string> metadata;

    double duration() const;
    bool empty() const { return samples.empty(); }
};

// Throws ValidationError naming the first violated invariant.
void validate(const GazeSession& session);

struct IdentityProfile {
    double fixation_noise_sd = 0.12;    // degrees
    double saccade_rate = 2.0;          // saccades per second
    double saccade_amp_mean = 6.0;      // degrees
    double vergence_baseline = 2.0;     // degrees, lx - rx
    double pupil_ratio_baseline = 1.0;  // pl / pr
    double drift_tendency = 0.05;       // degrees per second, scales vergence wander
    double blink_rate = 0.2;            // blinks per second, 0.1 - 0.3
};

// Additive per-sample measurement noise of the capture device. Zero for
// research-grade trackers; webcam-class capture is noisier.
struct CaptureNoise {
    double gaze_sd = 0.0;   // degrees, independent per eye and axis
    double pupil_sd = 0.0;  // mm
};

// Population from which cohort identities are drawn.
struct CohortSpec {
    double fixation_noise_median = 0.12;
    double fixation_noise_cv = 0.34;
    double saccade_rate_mean = 2.0;
    double saccade_amp_mean = 6.0;
    double vergence_baseline_mean = 2.0;
    double pupil_ratio_sd = 0.05;
    double drift_tendency_mean = 0.05;
};

std::vector<IdentityProfile> sample_profiles(const CohortSpec& spec, int count, std::uint64_t seed);

double main_sequence_duration_s(double amplitude_deg);

GazeSession synthesize_session(const IdentityProfile& profile, double duration_s, double rate_hz,
                               std::uint64_t seed, const CaptureNoise& capture = {},
                               std::string identity_id = "synthetic");

// Keeps every factor-th sample. factor must lie in [2, 33] and leave >= 30 Hz.
GazeSession decimate(const GazeSession& session, int factor);

// Samples with t in [start_s, end_s). Timestamps are kept; spans are clipped.
GazeSession slice(const GazeSession& session, double start_s, double end_s);

// Linear interpolation onto a uniform 30 Hz grid starting at the first sample.
GazeSession resample_to_30hz(const GazeSession& session);

inline constexpr double kModelRateHz = 30.0;

enum class FileFormat { gazeflow_csv, gazebase_csv };

FileFormat parse_file_format(std::string_view name);

GazeSession import_session(const std::filesystem::path& path, FileFormat format);

// Writes `path` plus the `.meta` sidecar next to it.
void export_gazeflow_csv(const GazeSession& session, const std::filesystem::path& path);

// Monocular GazeBase-shaped export (left eye only, n in milliseconds). Used to
// build importer fixtures.
void export_gazebase_csv(const GazeSession& session, const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& csv_path);

// Inter-ocular offset used when synthesising the right eye of monocular recordings.
struct MonocularBridge {
    double offset_mean = 0.5;
    double offset_sd = 0.2;
    double noise_sd = 0.05;
};

}  // namespace gazeflow::io
