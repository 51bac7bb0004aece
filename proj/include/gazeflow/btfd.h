#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "gazeflow/features.h"
#include "gazeflow/nn.h"
#include "gazeflow/wavelet.h"

namespace gazeflow::btfd {

inline constexpr int kLatent = 24;
inline constexpr int kTemporalInput = features::kWindowRows * features::kChannels;  // 576
inline constexpr int kGroupSize = 8;

enum class FactorGroup : int { vergence = 0, saccadic = 1, fixation = 2 };
inline constexpr FactorGroup kGroups[] = {FactorGroup::vergence, FactorGroup::saccadic, FactorGroup::fixation};

std::string_view to_string(FactorGroup g);
constexpr int group_begin(FactorGroup g) { return static_cast<int>(g) * kGroupSize; }

struct BtfdConfig {
    double beta_kl = 4.0;
    double gamma_tc = 2.0;
    int hidden = 64;
    double log_var_min = -10.0;
    double log_var_max = 10.0;
};

// Temporal encoder (576 -> hidden, tanh), frequency encoder (354 -> hidden, tanh),
// fusion head (2*hidden -> mu|log_var) and decoder (24 -> hidden -> 576).
struct BtfdModel {
    BtfdConfig config;
    nn::DenseNet temporal;
    nn::DenseNet frequency;
    nn::DenseNet fusion;
    nn::DenseNet decoder;

    static BtfdModel make(const BtfdConfig& config, std::uint64_t seed);

    std::size_t parameter_count() const;
    Eigen::VectorXd params() const;
    void set_params(const Eigen::Ref<const Eigen::VectorXd>& params);

    std::vector<nn::NamedNet> named_nets() const;
    static BtfdModel from_named_nets(const std::vector<nn::NamedNet>& nets, const BtfdConfig& config);
};

struct ModelGradients {
    nn::Gradients temporal;
    nn::Gradients frequency;
    nn::Gradients fusion;
    nn::Gradients decoder;

    static ModelGradients zeros(const BtfdModel& model);
    Eigen::VectorXd flatten() const;
};

// Column-per-window network inputs built from standardized windows.
struct ModelInput {
    Eigen::MatrixXd temporal;  // 576 x B
    Eigen::MatrixXd frequency;  // 354 x B

    Eigen::Index size() const { return temporal.cols(); }
    ModelInput select(const std::vector<int>& columns) const;
};

Eigen::VectorXd flatten_window(const features::WindowMatrix& m);
features::WindowMatrix unflatten_window(const Eigen::Ref<const Eigen::VectorXd>& v);

ModelInput make_input(const std::vector<features::FeatureWindow>& standardized);
ModelInput make_input(const features::FeatureWindow& standardized, const wavelet::DwtPyramid& pyramid);

struct EncoderPass {
    Eigen::MatrixXd mu;       // 24 x B
    Eigen::MatrixXd log_var;  // 24 x B, clamped
    Eigen::MatrixXd raw_log_var;
    nn::ForwardCache temporal_cache;
    nn::ForwardCache frequency_cache;
    nn::ForwardCache fusion_cache;
};

EncoderPass encode_batch(const BtfdModel& model, const ModelInput& input);
// Accumulates encoder gradients for upstream d/dmu and d/dlog_var (clamp-masked).
void encoder_backward(const BtfdModel& model, const EncoderPass& pass, const Eigen::MatrixXd& d_mu,
                      const Eigen::MatrixXd& d_log_var, ModelGradients& grads);

struct DecoderPass {
    Eigen::MatrixXd output;  // 576 x B
    nn::ForwardCache cache;
};

DecoderPass decode_batch(const BtfdModel& model, const Eigen::MatrixXd& z);
// Accumulates decoder gradients and returns d/dz.
Eigen::MatrixXd decoder_backward(const BtfdModel& model, const DecoderPass& pass, const Eigen::MatrixXd& d_output,
                                 ModelGradients& grads);

struct LatentCode {
    Eigen::VectorXd mu;
    Eigen::VectorXd log_var;
    Eigen::VectorXd sample;

    Eigen::VectorXd group(FactorGroup g) const { return mu.segment(group_begin(g), kGroupSize); }
};

LatentCode encode(const BtfdModel& model, const features::FeatureWindow& standardized,
                  const wavelet::DwtPyramid& pyramid, std::uint64_t seed);
features::WindowMatrix decode(const BtfdModel& model, const Eigen::Ref<const Eigen::VectorXd>& z);

struct BtfdLossReport {
    double recon = 0.0;
    double kl = 0.0;
    double tc = 0.0;
    double total = 0.0;
};

struct BtfdLossResult {
    BtfdLossReport report;
    ModelGradients grads;
};

// Closed-form KL(q || N(0, I)) averaged over the batch, with gradients.
double kl_divergence(const Eigen::MatrixXd& mu, const Eigen::MatrixXd& log_var, Eigen::MatrixXd* d_mu = nullptr,
                     Eigen::MatrixXd* d_log_var = nullptr);

// Minibatch-weighted-sampling total-correlation estimate, using the batch as
// the reference population. Gradients are w.r.t. samples z, mu and log_var.
double total_correlation(const Eigen::MatrixXd& z, const Eigen::MatrixXd& mu, const Eigen::MatrixXd& log_var,
                         Eigen::MatrixXd* d_z = nullptr, Eigen::MatrixXd* d_mu = nullptr,
                         Eigen::MatrixXd* d_log_var = nullptr);

// recon (squared error per temporal input element, batch mean) + beta*KL + gamma*TC. `scale`
// multiplies the report and gradients, for use inside composite objectives.
BtfdLossResult btfd_loss(const BtfdModel& model, const ModelInput& batch, Rng& rng, double scale = 1.0);
BtfdLossResult btfd_loss(const BtfdModel& model, const ModelInput& batch, std::uint64_t seed);

// Deterministic reconstruction error (mean squared error per element) of decode(mu).
Eigen::VectorXd reconstruction_errors(const BtfdModel& model, const ModelInput& input);

struct TrainOptions {
    int epochs = 50;
    double lr = 1e-3;
    int batch_size = 32;
    std::uint64_t seed = 1;
};

std::vector<BtfdLossReport> train_btfd(BtfdModel& model, const std::vector<features::FeatureWindow>& standardized,
                                       const TrainOptions& options);

}  // namespace gazeflow::btfd
