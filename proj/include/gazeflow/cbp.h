#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "gazeflow/btfd.h"
#include "gazeflow/features.h"
#include "gazeflow/gaze_io.h"

namespace gazeflow::cbp {

struct AugmentOptions {
    int factor_min = 2;
    int factor_max = 33;
    double mask_min = 0.10;  // fraction of the 90 real rows
    double mask_max = 0.20;
    double crop_s = 4.0;     // source span cut before decimation
};

// Cut `crop_s` seconds at `crop_start_s`, decimate by a random factor, resample
// to 30 Hz, extract features with the session's inter-ocular baseline, take one
// window and mask a random contiguous span by linear interpolation.
features::FeatureWindow augment_cross_resolution(const io::GazeSession& session, double crop_start_s,
                                                 std::uint64_t seed, const AugmentOptions& options = {},
                                                 std::optional<features::InterocularBaseline> baseline = std::nullopt);
// Same, with the crop start drawn from the seed.
features::FeatureWindow augment_cross_resolution(const io::GazeSession& session, std::uint64_t seed,
                                                 const AugmentOptions& options = {});

// Linear fill of rows [begin, end) of the real part of the window, then re-pad.
void mask_rows(features::FeatureWindow& window, int begin, int end);

struct InfoNceResult {
    double loss = 0.0;
    Eigen::MatrixXd d_anchors;
    Eigen::MatrixXd d_positives;
};

// Symmetric InfoNCE over cosine similarities. Column i of `anchors` pairs with
// column i of `positives`; every other column of the opposite view is a negative.
InfoNceResult info_nce_loss(const Eigen::MatrixXd& anchors, const Eigen::MatrixXd& positives, double temperature);

struct ProjectionHead {
    nn::DenseNet net;  // 24 -> 16, tanh

    static ProjectionHead make(int output_dim, std::uint64_t seed);
    // L2-normalised projection of each column.
    Eigen::MatrixXd project(const Eigen::MatrixXd& mu) const;
};

struct CbpConfig {
    double temperature = 0.1;
    int projection_dim = 16;
    double btfd_weight = 0.5;
    int epochs = 30;
    int batches_per_epoch = 8;
    int pairs_per_batch = 16;
    double lr = 1e-3;
    double min_separation_s = 60.0;
    AugmentOptions augment;
};

struct CbpEpoch {
    double info_nce = 0.0;
    double btfd = 0.0;
};

struct CbpResult {
    ProjectionHead head;
    std::vector<CbpEpoch> curve;
};

// One entry per source recording (rate >= 60 Hz). Identities may repeat.
struct CbpCorpus {
    std::vector<io::GazeSession> sessions;
};

// Joint objective InfoNCE + btfd_weight * btfd_loss. `standardizer` is the
// population standardizer applied to every augmented window.
CbpResult pretrain_cbp(btfd::BtfdModel& model, const CbpCorpus& corpus, const features::Standardizer& standardizer,
                       const CbpConfig& config, std::uint64_t seed);

// Mean mu over the given standardized windows.
Eigen::VectorXd biometric_signature(const btfd::BtfdModel& model, const std::vector<features::FeatureWindow>& windows);

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

}  // namespace gazeflow::cbp
