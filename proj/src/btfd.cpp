#include "gazeflow/btfd.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gazeflow/error.h"

namespace gazeflow::btfd {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

void accumulate_into(nn::Gradients& into, const nn::Gradients& add) { nn::accumulate(into, add); }

}  // namespace

std::string_view to_string(FactorGroup g) {
    switch (g) {
        case FactorGroup::vergence: return "vergence";
        case FactorGroup::saccadic: return "saccadic";
        case FactorGroup::fixation: return "fixation";
    }
    return "unknown";
}

BtfdModel BtfdModel::make(const BtfdConfig& config, std::uint64_t seed) {
    Rng rng(seed);
    using nn::Activation;
    BtfdModel m;
    m.config = config;
    const int h = config.hidden;
    m.temporal = nn::DenseNet::make({kTemporalInput, h}, {Activation::tanh}, rng);
    m.frequency = nn::DenseNet::make({wavelet::kFreqVectorSize, h}, {Activation::tanh}, rng);
    m.fusion = nn::DenseNet::make({2 * h, 2 * kLatent}, {Activation::identity}, rng);
    m.decoder = nn::DenseNet::make({kLatent, h, kTemporalInput}, {Activation::tanh, Activation::identity}, rng);
    return m;
}

std::size_t BtfdModel::parameter_count() const {
    return temporal.parameter_count() + frequency.parameter_count() + fusion.parameter_count() +
           decoder.parameter_count();
}

Eigen::VectorXd BtfdModel::params() const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(parameter_count()));
    Eigen::Index pos = 0;
    for (const auto* net : {&temporal, &frequency, &fusion, &decoder}) {
        const auto p = nn::flatten(*net);
        out.segment(pos, p.size()) = p;
        pos += p.size();
    }
    return out;
}

void BtfdModel::set_params(const Eigen::Ref<const Eigen::VectorXd>& params) {
    if (params.size() != static_cast<Eigen::Index>(parameter_count())) {
        throw UsageError("BtfdModel::set_params: wrong parameter count");
    }
    Eigen::Index pos = 0;
    for (auto* net : {&temporal, &frequency, &fusion, &decoder}) {
        const auto n = static_cast<Eigen::Index>(net->parameter_count());
        nn::unflatten(*net, params.segment(pos, n));
        pos += n;
    }
}

std::vector<nn::NamedNet> BtfdModel::named_nets() const {
    return {{"temporal_encoder", temporal}, {"frequency_encoder", frequency}, {"fusion_head", fusion},
            {"decoder", decoder}};
}

BtfdModel BtfdModel::from_named_nets(const std::vector<nn::NamedNet>& nets, const BtfdConfig& config) {
    BtfdModel m;
    m.config = config;
    bool seen[4] = {false, false, false, false};
    for (const auto& [name, net] : nets) {
        if (name == "temporal_encoder") {
            m.temporal = net;
            seen[0] = true;
        } else if (name == "frequency_encoder") {
            m.frequency = net;
            seen[1] = true;
        } else if (name == "fusion_head") {
            m.fusion = net;
            seen[2] = true;
        } else if (name == "decoder") {
            m.decoder = net;
            seen[3] = true;
        }
    }
    if (!(seen[0] && seen[1] && seen[2] && seen[3])) throw ParseError("checkpoint lacks a BTFD sub-network");
    if (m.temporal.input_width() != kTemporalInput || m.frequency.input_width() != wavelet::kFreqVectorSize ||
        m.fusion.output_width() != 2 * kLatent || m.decoder.input_width() != kLatent ||
        m.decoder.output_width() != kTemporalInput) {
        throw ParseError("checkpoint BTFD shapes do not match the model layout");
    }
    m.config.hidden = m.temporal.output_width();
    return m;
}

ModelGradients ModelGradients::zeros(const BtfdModel& model) {
    return {model.temporal.zero_gradients(), model.frequency.zero_gradients(), model.fusion.zero_gradients(),
            model.decoder.zero_gradients()};
}

Eigen::VectorXd ModelGradients::flatten() const {
    const auto a = nn::flatten(temporal);
    const auto b = nn::flatten(frequency);
    const auto c = nn::flatten(fusion);
    const auto d = nn::flatten(decoder);
    Eigen::VectorXd out(a.size() + b.size() + c.size() + d.size());
    out << a, b, c, d;
    return out;
}

ModelInput ModelInput::select(const std::vector<int>& columns) const {
    ModelInput out;
    out.temporal.resize(temporal.rows(), static_cast<Eigen::Index>(columns.size()));
    out.frequency.resize(frequency.rows(), static_cast<Eigen::Index>(columns.size()));
    for (std::size_t i = 0; i < columns.size(); ++i) {
        out.temporal.col(static_cast<Eigen::Index>(i)) = temporal.col(columns[i]);
        out.frequency.col(static_cast<Eigen::Index>(i)) = frequency.col(columns[i]);
    }
    return out;
}

Eigen::VectorXd flatten_window(const features::WindowMatrix& m) {
    return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
}

features::WindowMatrix unflatten_window(const Eigen::Ref<const Eigen::VectorXd>& v) {
    if (v.size() != kTemporalInput) throw DomainError("unflatten_window: expected 576 values");
    features::WindowMatrix m;
    Eigen::Map<Eigen::VectorXd>(m.data(), m.size()) = v;
    return m;
}

ModelInput make_input(const features::FeatureWindow& standardized, const wavelet::DwtPyramid& pyramid) {
    ModelInput in;
    in.temporal = flatten_window(standardized.matrix);
    in.frequency = wavelet::freq_vector(pyramid);
    return in;
}

ModelInput make_input(const std::vector<features::FeatureWindow>& standardized) {
    ModelInput in;
    const auto n = static_cast<Eigen::Index>(standardized.size());
    in.temporal.resize(kTemporalInput, n);
    in.frequency.resize(wavelet::kFreqVectorSize, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& w = standardized[static_cast<std::size_t>(i)];
        in.temporal.col(i) = flatten_window(w.matrix);
        in.frequency.col(i) = wavelet::freq_vector(wavelet::pyramid(w.matrix));
    }
    return in;
}

EncoderPass encode_batch(const BtfdModel& model, const ModelInput& input) {
    if (input.temporal.rows() != kTemporalInput || input.frequency.rows() != wavelet::kFreqVectorSize ||
        input.temporal.cols() != input.frequency.cols()) {
        throw DomainError("encode: input shape mismatch");
    }
    EncoderPass pass;
    const Eigen::MatrixXd ht = model.temporal.forward(input.temporal, &pass.temporal_cache);
    const Eigen::MatrixXd hf = model.frequency.forward(input.frequency, &pass.frequency_cache);
    Eigen::MatrixXd joint(ht.rows() + hf.rows(), ht.cols());
    joint << ht, hf;
    const Eigen::MatrixXd out = model.fusion.forward(joint, &pass.fusion_cache);
    pass.mu = out.topRows(kLatent);
    pass.raw_log_var = out.bottomRows(kLatent);
    pass.log_var = pass.raw_log_var.cwiseMax(model.config.log_var_min).cwiseMin(model.config.log_var_max);
    return pass;
}

void encoder_backward(const BtfdModel& model, const EncoderPass& pass, const Eigen::MatrixXd& d_mu,
                      const Eigen::MatrixXd& d_log_var, ModelGradients& grads) {
    Eigen::MatrixXd d_out(2 * kLatent, d_mu.cols());
    const auto inside = ((pass.raw_log_var.array() >= model.config.log_var_min) &&
                         (pass.raw_log_var.array() <= model.config.log_var_max))
                            .cast<double>();
    d_out << d_mu, (d_log_var.array() * inside).matrix();
    Eigen::MatrixXd d_joint;
    accumulate_into(grads.fusion, model.fusion.backward(pass.fusion_cache, d_out, &d_joint));
    const Eigen::Index h = model.temporal.output_width();
    accumulate_into(grads.temporal, model.temporal.backward(pass.temporal_cache, d_joint.topRows(h)));
    accumulate_into(grads.frequency, model.frequency.backward(pass.frequency_cache, d_joint.bottomRows(h)));
}

DecoderPass decode_batch(const BtfdModel& model, const Eigen::MatrixXd& z) {
    DecoderPass pass;
    pass.output = model.decoder.forward(z, &pass.cache);
    return pass;
}

Eigen::MatrixXd decoder_backward(const BtfdModel& model, const DecoderPass& pass, const Eigen::MatrixXd& d_output,
                                 ModelGradients& grads) {
    Eigen::MatrixXd d_z;
    accumulate_into(grads.decoder, model.decoder.backward(pass.cache, d_output, &d_z));
    return d_z;
}

LatentCode encode(const BtfdModel& model, const features::FeatureWindow& standardized,
                  const wavelet::DwtPyramid& pyramid, std::uint64_t seed) {
    const auto pass = encode_batch(model, make_input(standardized, pyramid));
    LatentCode code;
    code.mu = pass.mu.col(0);
    code.log_var = pass.log_var.col(0);
    code.sample = nn::gaussian_sample(code.mu, code.log_var, seed);
    return code;
}

features::WindowMatrix decode(const BtfdModel& model, const Eigen::Ref<const Eigen::VectorXd>& z) {
    if (z.size() != kLatent) throw DomainError("decode: latent must have 24 values");
    const Eigen::MatrixXd out = model.decoder.forward(Eigen::MatrixXd(z));
    return unflatten_window(out.col(0));
}

double kl_divergence(const Eigen::MatrixXd& mu, const Eigen::MatrixXd& log_var, Eigen::MatrixXd* d_mu,
                     Eigen::MatrixXd* d_log_var) {
    const double b = static_cast<double>(mu.cols());
    const auto var = log_var.array().exp();
    const double kl = 0.5 * (mu.array().square() + var - 1.0 - log_var.array()).sum() / b;
    if (d_mu) *d_mu = mu / b;
    if (d_log_var) *d_log_var = (0.5 * (var - 1.0) / b).matrix();
    return kl;
}

double total_correlation(const Eigen::MatrixXd& z, const Eigen::MatrixXd& mu, const Eigen::MatrixXd& log_var,
                         Eigen::MatrixXd* d_z, Eigen::MatrixXd* d_mu, Eigen::MatrixXd* d_log_var) {
    const Eigen::Index dims = z.rows();
    const Eigen::Index m = z.cols();
    if (m < 2) throw DomainError("total_correlation: the estimator needs at least two samples");
    const Eigen::MatrixXd inv_var = (-log_var.array()).exp();
    const double log_m = std::log(static_cast<double>(m));

    const bool want_grad = d_z || d_mu || d_log_var;
    Eigen::MatrixXd gz, gmu, glv;
    if (want_grad) {
        gz = Eigen::MatrixXd::Zero(dims, m);
        gmu = Eigen::MatrixXd::Zero(dims, m);
        glv = Eigen::MatrixXd::Zero(dims, m);
    }

    // l(d, j) = log q(z_id | x_j) for the current i.
    Eigen::MatrixXd l(dims, m);
    Eigen::MatrixXd e(dims, m);
    Eigen::VectorXd joint(m);
    Eigen::MatrixXd v(dims, m);
    double tc = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j < m; ++j) {
            const auto diff = z.col(i) - mu.col(j);
            e.col(j) = diff.cwiseProduct(inv_var.col(j));
            l.col(j) = -0.5 * (kLog2Pi + log_var.col(j).array() + diff.array() * e.col(j).array()).matrix();
        }
        joint = l.colwise().sum().transpose();
        const double jmax = joint.maxCoeff();
        const Eigen::VectorXd w_unnorm = (joint.array() - jmax).exp();
        const double jsum = w_unnorm.sum();
        const double lse_joint = jmax + std::log(jsum);

        const Eigen::VectorXd row_max = l.rowwise().maxCoeff();
        v = (l.colwise() - row_max).array().exp();
        const Eigen::VectorXd row_sum = v.rowwise().sum();
        const double lse_marg = (row_max.array() + row_sum.array().log()).sum();
        tc += lse_joint - lse_marg;

        if (want_grad) {
            const Eigen::VectorXd w = w_unnorm / jsum;
            v = v.array().colwise() / row_sum.array();
            // G(d, j) = dTC/dl_ijd = (w_j - v_dj) / m
            const Eigen::MatrixXd g = ((-v).rowwise() + w.transpose()) / static_cast<double>(m);
            const Eigen::MatrixXd ge = g.cwiseProduct(e);
            gz.col(i) -= ge.rowwise().sum();
            gmu += ge;
            const Eigen::MatrixXd diff_e = (-(mu.colwise() - z.col(i))).cwiseProduct(e);
            glv += (g.array() * (-0.5 + 0.5 * diff_e.array())).matrix();
        }
    }
    tc = tc / static_cast<double>(m) + static_cast<double>(dims - 1) * log_m;
    if (d_z) *d_z = std::move(gz);
    if (d_mu) *d_mu = std::move(gmu);
    if (d_log_var) *d_log_var = std::move(glv);
    return tc;
}

BtfdLossResult btfd_loss(const BtfdModel& model, const ModelInput& batch, Rng& rng, double scale) {
    const Eigen::Index b = batch.size();
    if (b < 2) throw DomainError("btfd_loss: minibatch of at least 2 windows required by the TC estimator");
    BtfdLossResult result{{}, ModelGradients::zeros(model)};
    const EncoderPass enc = encode_batch(model, batch);

    Eigen::MatrixXd eps(kLatent, b);
    for (Eigen::Index j = 0; j < b; ++j)
        for (Eigen::Index d = 0; d < kLatent; ++d) eps(d, j) = rng.normal();
    const Eigen::MatrixXd sd = (0.5 * enc.log_var.array()).exp();
    const Eigen::MatrixXd z = enc.mu + sd.cwiseProduct(eps);

    const DecoderPass dec = decode_batch(model, z);
    const Eigen::MatrixXd resid = dec.output - batch.temporal;
    const double bd = static_cast<double>(b);
    const double n = bd * kTemporalInput;
    result.report.recon = resid.squaredNorm() / n;

    Eigen::MatrixXd kl_dmu, kl_dlv;
    result.report.kl = kl_divergence(enc.mu, enc.log_var, &kl_dmu, &kl_dlv);

    Eigen::MatrixXd tc_dz, tc_dmu, tc_dlv;
    result.report.tc = total_correlation(z, enc.mu, enc.log_var, &tc_dz, &tc_dmu, &tc_dlv);

    const double beta = model.config.beta_kl;
    const double gamma = model.config.gamma_tc;
    result.report.total = result.report.recon + beta * result.report.kl + gamma * result.report.tc;

    Eigen::MatrixXd d_z = decoder_backward(model, dec, (2.0 * scale / n) * resid, result.grads);
    d_z += scale * gamma * tc_dz;
    Eigen::MatrixXd d_mu = d_z + scale * (beta * kl_dmu + gamma * tc_dmu);
    Eigen::MatrixXd d_lv = d_z.cwiseProduct(0.5 * (z - enc.mu)) + scale * (beta * kl_dlv + gamma * tc_dlv);
    encoder_backward(model, enc, d_mu, d_lv, result.grads);

    result.report.recon *= scale;
    result.report.kl *= scale;
    result.report.tc *= scale;
    result.report.total *= scale;
    return result;
}

BtfdLossResult btfd_loss(const BtfdModel& model, const ModelInput& batch, std::uint64_t seed) {
    Rng rng(seed);
    return btfd_loss(model, batch, rng);
}

Eigen::VectorXd reconstruction_errors(const BtfdModel& model, const ModelInput& input) {
    const EncoderPass enc = encode_batch(model, input);
    const Eigen::MatrixXd out = model.decoder.forward(enc.mu);
    return (out - input.temporal).colwise().squaredNorm().transpose() / static_cast<double>(kTemporalInput);
}

std::vector<BtfdLossReport> train_btfd(BtfdModel& model, const std::vector<features::FeatureWindow>& standardized,
                                       const TrainOptions& options) {
    if (standardized.empty()) throw UsageError("train_btfd: empty dataset");
    const ModelInput all = make_input(standardized);
    Rng rng(options.seed);
    Eigen::VectorXd params = model.params();
    nn::AdamState adam(params.size(), options.lr);
    std::vector<int> order(standardized.size());
    std::iota(order.begin(), order.end(), 0);
    const int batch = std::max(2, options.batch_size);

    std::vector<BtfdLossReport> curve;
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
        }
        BtfdLossReport sum;
        int batches = 0;
        for (std::size_t start = 0; start + 2 <= order.size(); start += static_cast<std::size_t>(batch)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch));
            if (end - start < 2) break;
            std::vector<int> cols(order.begin() + static_cast<std::ptrdiff_t>(start),
                                  order.begin() + static_cast<std::ptrdiff_t>(end));
            auto res = btfd_loss(model, all.select(cols), rng);
            if (!std::isfinite(res.report.total)) {
                throw TrainingError("train_btfd: non-finite loss at epoch " + std::to_string(epoch));
            }
            adam_step(adam, params, res.grads.flatten());
            model.set_params(params);
            sum.recon += res.report.recon;
            sum.kl += res.report.kl;
            sum.tc += res.report.tc;
            sum.total += res.report.total;
            ++batches;
        }
        if (batches > 0) {
            sum.recon /= batches;
            sum.kl /= batches;
            sum.tc /= batches;
            sum.total /= batches;
        }
        curve.push_back(sum);
    }
    return curve;
}

}  // namespace gazeflow::btfd
