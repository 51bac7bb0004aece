#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "gazeflow/btfd.h"
#include "gazeflow/cbp.h"
#include "gazeflow/gaze_io.h"
#include "gazeflow/maml.h"
#include "gazeflow/scoring.h"
#include "gazeflow/sonification.h"

namespace gazeflow::harness {

struct CohortConfig {
    int train_identities = 20;
    int heldout_identities = 10;
    double session_s = 120.0;
    double source_rate_hz = 1000.0;
    int sessions_per_identity = 2;  // pre-training recordings per training identity
    double calibration_s = 15.0;
    io::CohortSpec population;
    io::CaptureNoise webcam{0.05, 0.02};  // native 30 Hz capture of the cross-resolution split
    int task_sessions = 64;          // meta-training episodes per training identity
    double task_session_s = 60.0;
    int task_spans_per_kind = 1;
};

struct BtfdStageConfig {
    btfd::BtfdConfig model;
    btfd::TrainOptions train{20, 1e-3, 32, 0};
    double window_hop_s = 1.5;
};

struct EvalConfig {
    int spans_per_kind = 2;
    double span_s = 6.0;
    double threshold = 0.5;
    int ae_hidden = 64;
    int ae_latent = 24;
    int ae_epochs = 20;
    double ae_lr = 1e-3;
    int pae_epochs = 20;
    double pae_lr = 1e-3;
};

struct RunConfig {
    std::uint64_t seed = 20240611;
    CohortConfig cohort;
    BtfdStageConfig btfd;
    bool cbp_enabled = true;
    cbp::CbpConfig cbp;
    maml::MetaConfig maml;
    scoring::ScoringConfig scoring;
    scoring::ZoneBounds zones;
    double smooth_alpha = scoring::kSmoothAlpha;
    double update_hz = scoring::kUpdateRateHz;
    sonify::AudioEndpoints audio;
    EvalConfig eval;
    std::filesystem::path out_dir = "run";
};

// Reads an INI file with sections [seed] [cohort] [btfd] [cbp] [maml]
// [scoring] [audio] [eval] [paths]. Keys absent from the file keep their
// defaults. Unknown sections or keys and out-of-range values throw UsageError;
// an unreadable or malformed file throws ParseError.
RunConfig load_config(const std::filesystem::path& path);
RunConfig parse_config(const std::string& ini_text);

// Range checks shared by the loader and programmatic callers.
void validate(const RunConfig& config);

// Full INI rendering of every key; parse_config(to_ini(c)) reproduces c.
std::string to_ini(const RunConfig& config);

}  // namespace gazeflow::harness
