#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gazeflow/rng.h"

namespace gazeflow::nn {

enum class Activation { identity, tanh, relu };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view name);

struct Layer {
    Eigen::MatrixXd weight;  // out x in
    Eigen::VectorXd bias;    // out
    Activation activation = Activation::identity;
};

struct LayerGrad {
    Eigen::MatrixXd weight;
    Eigen::VectorXd bias;
};

using Gradients = std::vector<LayerGrad>;

// Per-call activations kept for the backward pass. Columns are batch items.
struct ForwardCache {
    std::vector<Eigen::MatrixXd> inputs;
    std::vector<Eigen::MatrixXd> outputs;
};

class DenseNet {
public:
    DenseNet() = default;
    explicit DenseNet(std::vector<Layer> layers);

    // Glorot-uniform weights, zero biases. widths has one more entry than activations.
    static DenseNet make(const std::vector<int>& widths, const std::vector<Activation>& activations, Rng& rng);

    int input_width() const;
    int output_width() const;
    std::size_t parameter_count() const;

    const std::vector<Layer>& layers() const { return layers_; }
    std::vector<Layer>& layers() { return layers_; }

    // x is (input_width x batch). Fills `cache` when given.
    Eigen::MatrixXd forward(const Eigen::MatrixXd& x, ForwardCache* cache = nullptr) const;

    // Reverse-mode pass for d(loss)/d(output) = upstream. Writes d(loss)/d(input)
    // into `input_grad` when non-null.
    Gradients backward(const ForwardCache& cache, const Eigen::MatrixXd& upstream,
                       Eigen::MatrixXd* input_grad = nullptr) const;

    Gradients zero_gradients() const;

private:
    std::vector<Layer> layers_;
};

void accumulate(Gradients& into, const Gradients& add);

// Flattened parameters. Layout per layer: weight (column-major) then bias.
Eigen::VectorXd flatten(const DenseNet& net);
Eigen::VectorXd flatten(const Gradients& grads);
void unflatten(DenseNet& net, const Eigen::Ref<const Eigen::VectorXd>& params);

struct AdamState {
    Eigen::VectorXd m;
    Eigen::VectorXd v;
    long step = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    AdamState() = default;
    AdamState(Eigen::Index size, double learning_rate);
};

// Bias-corrected Adam update in place. Throws TrainingError on non-finite gradients.
void adam_step(AdamState& state, Eigen::VectorXd& params, const Eigen::VectorXd& grads);

// mean + exp(0.5 * log_var) * eps with eps ~ N(0, I). Also returns eps through `noise`.
Eigen::VectorXd gaussian_sample(const Eigen::VectorXd& mean, const Eigen::VectorXd& log_var, Rng& rng,
                                Eigen::VectorXd* noise = nullptr);
Eigen::VectorXd gaussian_sample(const Eigen::VectorXd& mean, const Eigen::VectorXd& log_var, std::uint64_t seed);

using NamedNet = std::pair<std::string, DenseNet>;

// Text checkpoint: version tag, layer shapes, then every parameter in %.17g.
void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedNet>& nets);
std::vector<NamedNet> load_checkpoint(const std::filesystem::path& path);

inline constexpr int kCheckpointVersion = 1;

}  // namespace gazeflow::nn
