#include "gazeflow/nn.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "gazeflow/error.h"

namespace gazeflow::nn {

std::string_view to_string(Activation a) {
    switch (a) {
        case Activation::identity: return "identity";
        case Activation::tanh: return "tanh";
        case Activation::relu: return "relu";
    }
    return "identity";
}

Activation parse_activation(std::string_view name) {
    if (name == "identity") return Activation::identity;
    if (name == "tanh") return Activation::tanh;
    if (name == "relu") return Activation::relu;
    throw ParseError("unknown activation '" + std::string(name) + "'");
}

DenseNet::DenseNet(std::vector<Layer> layers) : layers_(std::move(layers)) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (layers_[i].bias.size() != layers_[i].weight.rows()) throw UsageError("DenseNet: bias/weight mismatch");
        if (i > 0 && layers_[i].weight.cols() != layers_[i - 1].weight.rows()) {
            throw UsageError("DenseNet: adjacent layer widths incompatible");
        }
    }
}

DenseNet DenseNet::make(const std::vector<int>& widths, const std::vector<Activation>& activations, Rng& rng) {
    if (widths.size() != activations.size() + 1) throw UsageError("DenseNet::make: widths/activations mismatch");
    std::vector<Layer> layers;
    for (std::size_t i = 0; i < activations.size(); ++i) {
        const int in = widths[i];
        const int out = widths[i + 1];
        const double limit = std::sqrt(6.0 / (in + out));
        Layer l;
        l.weight.resize(out, in);
        // Column-major fill keeps the draw order aligned with the flattened layout.
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
            for (Eigen::Index r = 0; r < l.weight.rows(); ++r) l.weight(r, c) = rng.uniform(-limit, limit);
        l.bias = Eigen::VectorXd::Zero(out);
        l.activation = activations[i];
        layers.push_back(std::move(l));
    }
    return DenseNet(std::move(layers));
}

int DenseNet::input_width() const { return layers_.empty() ? 0 : static_cast<int>(layers_.front().weight.cols()); }
int DenseNet::output_width() const { return layers_.empty() ? 0 : static_cast<int>(layers_.back().weight.rows()); }

std::size_t DenseNet::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
}

Eigen::MatrixXd DenseNet::forward(const Eigen::MatrixXd& x, ForwardCache* cache) const {
    if (x.rows() != input_width()) {
        throw DomainError("DenseNet::forward: input has " + std::to_string(x.rows()) + " rows, expected " +
                          std::to_string(input_width()));
    }
    if (cache) {
        cache->inputs.clear();
        cache->outputs.clear();
    }
    Eigen::MatrixXd h = x;
    for (const auto& l : layers_) {
        if (cache) cache->inputs.push_back(h);
        Eigen::MatrixXd z = l.weight * h;
        z.colwise() += l.bias;
        switch (l.activation) {
            case Activation::identity: break;
            case Activation::tanh: z = z.array().tanh(); break;
            case Activation::relu: z = z.array().max(0.0); break;
        }
        if (cache) cache->outputs.push_back(z);
        h = std::move(z);
    }
    return h;
}

Gradients DenseNet::backward(const ForwardCache& cache, const Eigen::MatrixXd& upstream,
                             Eigen::MatrixXd* input_grad) const {
    if (cache.inputs.size() != layers_.size() || cache.outputs.size() != layers_.size()) {
        throw UsageError("DenseNet::backward: forward cache missing");
    }
    Gradients grads(layers_.size());
    Eigen::MatrixXd delta = upstream;
    for (std::size_t i = layers_.size(); i-- > 0;) {
        const auto& l = layers_[i];
        const auto& out = cache.outputs[i];
        if (delta.rows() != out.rows() || delta.cols() != out.cols()) {
            throw DomainError("DenseNet::backward: upstream gradient shape mismatch");
        }
        switch (l.activation) {
            case Activation::identity: break;
            case Activation::tanh: delta = delta.array() * (1.0 - out.array().square()); break;
            case Activation::relu: delta = delta.array() * (out.array() > 0.0).cast<double>(); break;
        }
        grads[i].weight = delta * cache.inputs[i].transpose();
        grads[i].bias = delta.rowwise().sum();
        if (i > 0 || input_grad) {
            Eigen::MatrixXd next = l.weight.transpose() * delta;
            delta = std::move(next);
        }
    }
    if (input_grad) *input_grad = std::move(delta);
    return grads;
}

Gradients DenseNet::zero_gradients() const {
    Gradients g(layers_.size());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        g[i].weight = Eigen::MatrixXd::Zero(layers_[i].weight.rows(), layers_[i].weight.cols());
        g[i].bias = Eigen::VectorXd::Zero(layers_[i].bias.size());
    }
    return g;
}

void accumulate(Gradients& into, const Gradients& add) {
    if (into.size() != add.size()) throw UsageError("accumulate: gradient layouts differ");
    for (std::size_t i = 0; i < into.size(); ++i) {
        into[i].weight += add[i].weight;
        into[i].bias += add[i].bias;
    }
}

Eigen::VectorXd flatten(const DenseNet& net) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(net.parameter_count()));
    Eigen::Index pos = 0;
    for (const auto& l : net.layers()) {
        out.segment(pos, l.weight.size()) = Eigen::Map<const Eigen::VectorXd>(l.weight.data(), l.weight.size());
        pos += l.weight.size();
        out.segment(pos, l.bias.size()) = l.bias;
        pos += l.bias.size();
    }
    return out;
}

Eigen::VectorXd flatten(const Gradients& grads) {
    Eigen::Index total = 0;
    for (const auto& g : grads) total += g.weight.size() + g.bias.size();
    Eigen::VectorXd out(total);
    Eigen::Index pos = 0;
    for (const auto& g : grads) {
        out.segment(pos, g.weight.size()) = Eigen::Map<const Eigen::VectorXd>(g.weight.data(), g.weight.size());
        pos += g.weight.size();
        out.segment(pos, g.bias.size()) = g.bias;
        pos += g.bias.size();
    }
    return out;
}

void unflatten(DenseNet& net, const Eigen::Ref<const Eigen::VectorXd>& params) {
    if (params.size() != static_cast<Eigen::Index>(net.parameter_count())) {
        throw UsageError("unflatten: parameter vector has wrong length");
    }
    Eigen::Index pos = 0;
    for (auto& l : net.layers()) {
        Eigen::Map<Eigen::VectorXd>(l.weight.data(), l.weight.size()) = params.segment(pos, l.weight.size());
        pos += l.weight.size();
        l.bias = params.segment(pos, l.bias.size());
        pos += l.bias.size();
    }
}

AdamState::AdamState(Eigen::Index size, double learning_rate)
    : m(Eigen::VectorXd::Zero(size)), v(Eigen::VectorXd::Zero(size)), lr(learning_rate) {}

void adam_step(AdamState& state, Eigen::VectorXd& params, const Eigen::VectorXd& grads) {
    if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
        throw UsageError("adam_step: shape mismatch");
    }
    if (!grads.allFinite()) {
        Eigen::Index bad = 0;
        for (Eigen::Index i = 0; i < grads.size(); ++i) {
            if (!std::isfinite(grads(i))) {
                bad = i;
                break;
            }
        }
        throw TrainingError("adam_step: non-finite gradient at parameter " + std::to_string(bad) + " (step " +
                            std::to_string(state.step) + ")");
    }
    ++state.step;
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads;
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads.cwiseProduct(grads);
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    params.array() -= state.lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + state.eps);
}

Eigen::VectorXd gaussian_sample(const Eigen::VectorXd& mean, const Eigen::VectorXd& log_var, Rng& rng,
                                Eigen::VectorXd* noise) {
    if (mean.size() != log_var.size()) throw DomainError("gaussian_sample: shape mismatch");
    Eigen::VectorXd eps(mean.size());
    for (Eigen::Index i = 0; i < eps.size(); ++i) eps(i) = rng.normal();
    Eigen::VectorXd z = mean.array() + (0.5 * log_var.array()).exp() * eps.array();
    if (noise) *noise = std::move(eps);
    return z;
}

Eigen::VectorXd gaussian_sample(const Eigen::VectorXd& mean, const Eigen::VectorXd& log_var, std::uint64_t seed) {
    Rng rng(seed);
    return gaussian_sample(mean, log_var, rng);
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedNet>& nets) {
    std::ostringstream os;
    char buf[40];
    os << "gazeflow-checkpoint " << kCheckpointVersion << '\n';
    os << "nets " << nets.size() << '\n';
    for (const auto& [name, net] : nets) {
        os << "net " << name << ' ' << net.layers().size() << '\n';
        for (const auto& l : net.layers()) {
            os << "layer " << l.weight.cols() << ' ' << l.weight.rows() << ' ' << to_string(l.activation) << '\n';
        }
        const auto params = flatten(net);
        os << "params " << params.size() << '\n';
        for (Eigen::Index i = 0; i < params.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", params(i));
            os << buf << '\n';
        }
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    out << os.str();
}

std::vector<NamedNet> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open checkpoint " + path.string());
    std::string tag;
    int version = 0;
    if (!(in >> tag >> version) || tag != "gazeflow-checkpoint") throw ParseError("not a gazeflow checkpoint");
    if (version != kCheckpointVersion) throw ParseError("unsupported checkpoint version " + std::to_string(version));
    std::string word;
    std::size_t count = 0;
    if (!(in >> word >> count) || word != "nets") throw ParseError("checkpoint: expected 'nets'");
    std::vector<NamedNet> out;
    for (std::size_t n = 0; n < count; ++n) {
        std::string name;
        std::size_t layer_count = 0;
        if (!(in >> word >> name >> layer_count) || word != "net") throw ParseError("checkpoint: expected 'net'");
        std::vector<Layer> layers;
        for (std::size_t i = 0; i < layer_count; ++i) {
            Eigen::Index fan_in = 0, fan_out = 0;
            std::string act;
            if (!(in >> word >> fan_in >> fan_out >> act) || word != "layer") {
                throw ParseError("checkpoint: expected 'layer'");
            }
            Layer l;
            l.weight = Eigen::MatrixXd::Zero(fan_out, fan_in);
            l.bias = Eigen::VectorXd::Zero(fan_out);
            l.activation = parse_activation(act);
            layers.push_back(std::move(l));
        }
        DenseNet net(std::move(layers));
        Eigen::Index pcount = 0;
        if (!(in >> word >> pcount) || word != "params" ||
            pcount != static_cast<Eigen::Index>(net.parameter_count())) {
            throw ParseError("checkpoint: parameter count mismatch for net " + name);
        }
        Eigen::VectorXd params(pcount);
        for (Eigen::Index i = 0; i < pcount; ++i) {
            std::string v;
            if (!(in >> v)) throw ParseError("checkpoint: truncated parameters");
            params(i) = std::strtod(v.c_str(), nullptr);
        }
        unflatten(net, params);
        out.emplace_back(name, std::move(net));
    }
    return out;
}

}  // namespace gazeflow::nn
