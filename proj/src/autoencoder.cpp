#include "gazeflow/autoencoder.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "gazeflow/error.h"

namespace gazeflow::ae {

namespace {
constexpr int kInput = 576;
}

Autoencoder Autoencoder::make(int hidden, int latent, std::uint64_t seed) {
    Rng rng(seed);
    using nn::Activation;
    return {nn::DenseNet::make({kInput, hidden, latent, hidden, kInput},
                               {Activation::tanh, Activation::identity, Activation::tanh, Activation::identity}, rng)};
}

Eigen::VectorXd reconstruction_errors(const Autoencoder& model, const Eigen::MatrixXd& x) {
    const Eigen::MatrixXd out = model.net.forward(x);
    return (out - x).colwise().squaredNorm().transpose() / static_cast<double>(x.rows());
}

std::vector<double> train(Autoencoder& model, const Eigen::MatrixXd& x, const AeTrainOptions& options) {
    if (x.cols() == 0) throw UsageError("autoencoder train: empty dataset");
    if (x.rows() != kInput) throw DomainError("autoencoder train: expected 576-value windows");
    Rng rng(options.seed);
    Eigen::VectorXd params = nn::flatten(model.net);
    nn::AdamState adam(params.size(), options.lr);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(x.cols()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);
    const auto batch = static_cast<std::size_t>(std::max(1, options.batch_size));

    std::vector<double> curve;
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
        }
        double sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t end = std::min(order.size(), start + batch);
            Eigen::MatrixXd xb(x.rows(), static_cast<Eigen::Index>(end - start));
            for (std::size_t k = start; k < end; ++k) xb.col(static_cast<Eigen::Index>(k - start)) = x.col(order[k]);
            nn::ForwardCache cache;
            const Eigen::MatrixXd out = model.net.forward(xb, &cache);
            const Eigen::MatrixXd resid = out - xb;
            const double b = static_cast<double>(xb.cols());
            const double loss = resid.squaredNorm() / b;
            if (!std::isfinite(loss)) throw TrainingError("autoencoder train: non-finite loss at epoch " + std::to_string(epoch));
            const auto grads = model.net.backward(cache, (2.0 / b) * resid);
            nn::adam_step(adam, params, nn::flatten(grads));
            nn::unflatten(model.net, params);
            sum += resid.squaredNorm();
        }
        curve.push_back(sum / static_cast<double>(x.size()));
    }
    return curve;
}

}  // namespace gazeflow::ae
