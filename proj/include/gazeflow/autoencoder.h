#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "gazeflow/nn.h"

namespace gazeflow::ae {

// Plain deterministic autoencoder over flattened 576-value windows, used by the
// population and few-shot baselines.
struct Autoencoder {
    nn::DenseNet net;  // 576 -> hidden (tanh) -> latent -> hidden (tanh) -> 576

    static Autoencoder make(int hidden, int latent, std::uint64_t seed);
};

struct AeTrainOptions {
    int epochs = 30;
    double lr = 1e-3;
    int batch_size = 32;
    std::uint64_t seed = 1;
};

// Mean squared error per element for each column of x (576 x N).
Eigen::VectorXd reconstruction_errors(const Autoencoder& model, const Eigen::MatrixXd& x);

// Adam on the batch-mean per-window squared error. Returns the mean
// per-element error after each epoch.
std::vector<double> train(Autoencoder& model, const Eigen::MatrixXd& x, const AeTrainOptions& options);

}  // namespace gazeflow::ae
