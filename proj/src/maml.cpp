#include "gazeflow/maml.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "gazeflow/error.h"

namespace gazeflow::maml {

namespace {

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

constexpr double kNormEps2 = 1e-12;

// z = (q - mean(c)) / sd(c) with the floored unbiased sd, plus its adjoint.
struct Zscore {
    double mean = 0.0;
    double sd = 1.0;
    Eigen::VectorXd z;

    Zscore(const Eigen::VectorXd& c, const Eigen::VectorXd& q, double floor) {
        const double n = static_cast<double>(c.size());
        mean = c.mean();
        const double var = n > 1.0 ? (c.array() - mean).square().sum() / (n - 1.0) : 0.0;
        sd = std::sqrt(var + floor * floor);
        z = (q.array() - mean) / sd;
    }

    // Accumulates d/dc and d/dq for upstream dz.
    void backward(const Eigen::VectorXd& c, const Eigen::VectorXd& dz, Eigen::VectorXd& dc, Eigen::VectorXd& dq) const {
        const double n = static_cast<double>(c.size());
        dq += dz / sd;
        const double d_mean = -dz.sum() / sd;
        const double d_sd = -dz.dot(z) / sd;
        dc.array() += d_mean / n;
        if (n > 1.0) {
            const double d_var = d_sd / (2.0 * sd);
            dc.array() += d_var * 2.0 * (c.array() - mean) / (n - 1.0);
        }
    }
};

}  // namespace

ScoreLoss detection_loss_from_z(const Eigen::MatrixXd& z, const std::vector<features::WindowLabel>& labels,
                                const DetectionConfig& config) {
    const Eigen::Index q = z.cols();
    if (z.rows() != scoring::kFactors || static_cast<std::size_t>(q) != labels.size() || q == 0) {
        throw DomainError("detection loss: score/label shape mismatch");
    }
    bool any_normal = false, any_anomalous = false;
    for (auto l : labels) (features::is_anomalous(l) ? any_anomalous : any_normal) = true;
    if (!(any_normal && any_anomalous)) throw DomainError("detection loss: query must contain both classes");

    ScoreLoss out;
    out.d_z = Eigen::MatrixXd::Zero(z.rows(), q);
    const double inv_q = 1.0 / static_cast<double>(q);
    for (Eigen::Index j = 0; j < q; ++j) {
        const auto col = z.col(j);
        const double zmax = col.maxCoeff();
        const Eigen::Vector3d e = (col.array() - zmax).exp();
        const double s = zmax + std::log(e.sum());
        const Eigen::Vector3d soft = e / e.sum();
        const auto label = labels[static_cast<std::size_t>(j)];
        const double y = features::is_anomalous(label) ? 1.0 : -1.0;
        const double arg = -y * (s - config.margin);
        out.loss += softplus(arg) * inv_q;
        out.d_z.col(j) += (-y * sigmoid(arg) * inv_q) * soft;

        if (y > 0.0 && config.attribution_weight != 0.0) {
            const int k = scoring::factor_for(label);
            for (int g = 0; g < scoring::kFactors; ++g) {
                if (g == k) continue;
                const double u = -(col(k) - col(g) - config.attribution_margin);
                out.loss += config.attribution_weight * softplus(u) * inv_q;
                const double d = config.attribution_weight * sigmoid(u) * inv_q;
                out.d_z(k, j) -= d;
                out.d_z(g, j) += d;
            }
        }
    }
    return out;
}

double detection_objective(const Eigen::MatrixXd& mu_c, const Eigen::VectorXd& rec_c, const Eigen::MatrixXd& mu_q,
                           const Eigen::VectorXd& rec_q, const std::vector<features::WindowLabel>& labels,
                           const DetectionConfig& config, StatisticGradients* grads) {
    const Eigen::Index c = mu_c.cols();
    const Eigen::Index q = mu_q.cols();
    if (c < 2 || rec_c.size() != c || rec_q.size() != q || mu_c.rows() != btfd::kLatent ||
        mu_q.rows() != btfd::kLatent) {
        throw DomainError("detection objective: bad calibration/query shapes");
    }
    const double floor = config.scoring.sd_floor;
    const double w = config.scoring.latent_weight;

    // Forward: latent deviations per group, then z against calibration stats.
    std::array<Eigen::VectorXd, scoring::kFactors> center;
    std::array<Eigen::VectorXd, scoring::kFactors> dev_c, dev_q;
    std::vector<Zscore> lat;
    lat.reserve(scoring::kFactors);
    for (int g = 0; g < scoring::kFactors; ++g) {
        const auto gi = static_cast<std::size_t>(g);
        const auto bc = mu_c.middleRows(g * btfd::kGroupSize, btfd::kGroupSize);
        const auto bq = mu_q.middleRows(g * btfd::kGroupSize, btfd::kGroupSize);
        center[gi] = bc.rowwise().mean();
        dev_c[gi] = ((bc.colwise() - center[gi]).colwise().squaredNorm().array() + kNormEps2).sqrt().transpose();
        dev_q[gi] = ((bq.colwise() - center[gi]).colwise().squaredNorm().array() + kNormEps2).sqrt().transpose();
        lat.emplace_back(dev_c[gi], dev_q[gi], floor);
    }
    const Zscore rz(rec_c, rec_q, floor);

    Eigen::MatrixXd z(scoring::kFactors, q);
    for (int g = 0; g < scoring::kFactors; ++g) {
        z.row(g) = (w * lat[static_cast<std::size_t>(g)].z + (1.0 - w) * rz.z).transpose();
    }
    const ScoreLoss sl = detection_loss_from_z(z, labels, config);
    if (!grads) return sl.loss;

    grads->d_mu_calibration = Eigen::MatrixXd::Zero(btfd::kLatent, c);
    grads->d_mu_query = Eigen::MatrixXd::Zero(btfd::kLatent, q);
    grads->d_rec_calibration = Eigen::VectorXd::Zero(c);
    grads->d_rec_query = Eigen::VectorXd::Zero(q);

    const Eigen::VectorXd dz_rec = (1.0 - w) * sl.d_z.colwise().sum().transpose();
    rz.backward(rec_c, dz_rec, grads->d_rec_calibration, grads->d_rec_query);

    for (int g = 0; g < scoring::kFactors; ++g) {
        const auto gi = static_cast<std::size_t>(g);
        const Eigen::VectorXd dz_lat = w * sl.d_z.row(g).transpose();
        Eigen::VectorXd d_dev_c = Eigen::VectorXd::Zero(c);
        Eigen::VectorXd d_dev_q = Eigen::VectorXd::Zero(q);
        lat[gi].backward(dev_c[gi], dz_lat, d_dev_c, d_dev_q);

        const auto bc = mu_c.middleRows(g * btfd::kGroupSize, btfd::kGroupSize);
        const auto bq = mu_q.middleRows(g * btfd::kGroupSize, btfd::kGroupSize);
        Eigen::VectorXd d_center = Eigen::VectorXd::Zero(btfd::kGroupSize);
        auto gq = grads->d_mu_query.middleRows(g * btfd::kGroupSize, btfd::kGroupSize);
        auto gc = grads->d_mu_calibration.middleRows(g * btfd::kGroupSize, btfd::kGroupSize);
        for (Eigen::Index j = 0; j < q; ++j) {
            const Eigen::VectorXd d = d_dev_q(j) * (bq.col(j) - center[gi]) / dev_q[gi](j);
            gq.col(j) += d;
            d_center -= d;
        }
        for (Eigen::Index j = 0; j < c; ++j) {
            const Eigen::VectorXd d = d_dev_c(j) * (bc.col(j) - center[gi]) / dev_c[gi](j);
            gc.col(j) += d;
            d_center -= d;
        }
        gc.colwise() += d_center / static_cast<double>(c);
    }
    return sl.loss;
}

DetectionResult detection_loss(const btfd::BtfdModel& model, const Task& task, const DetectionConfig& config) {
    const Eigen::Index c = task.calibration.size();
    const Eigen::Index q = task.query.size();
    btfd::ModelInput all;
    all.temporal.resize(btfd::kTemporalInput, c + q);
    all.frequency.resize(task.calibration.frequency.rows(), c + q);
    all.temporal << task.calibration.temporal, task.query.temporal;
    all.frequency << task.calibration.frequency, task.query.frequency;

    const btfd::EncoderPass enc = btfd::encode_batch(model, all);
    const btfd::DecoderPass dec = btfd::decode_batch(model, enc.mu);
    const Eigen::MatrixXd resid = dec.output - all.temporal;
    const Eigen::VectorXd rec = resid.colwise().squaredNorm().transpose() / static_cast<double>(btfd::kTemporalInput);

    StatisticGradients sg;
    DetectionResult out{detection_objective(enc.mu.leftCols(c), rec.head(c), enc.mu.rightCols(q), rec.tail(q),
                                            task.labels, config, &sg),
                        btfd::ModelGradients::zeros(model)};
    if (!std::isfinite(out.loss)) throw TrainingError("detection loss is not finite");

    Eigen::VectorXd d_rec(c + q);
    d_rec << sg.d_rec_calibration, sg.d_rec_query;
    const Eigen::MatrixXd d_out =
        resid.array().rowwise() * (2.0 / btfd::kTemporalInput * d_rec.transpose().array());
    Eigen::MatrixXd d_mu(btfd::kLatent, c + q);
    d_mu << sg.d_mu_calibration, sg.d_mu_query;
    d_mu += btfd::decoder_backward(model, dec, d_out, out.grads);
    btfd::encoder_backward(model, enc, d_mu, Eigen::MatrixXd::Zero(btfd::kLatent, c + q), out.grads);
    return out;
}

btfd::BtfdModel inner_update(const btfd::BtfdModel& model, const btfd::ModelInput& support, double alpha,
                             std::uint64_t seed) {
    if (alpha < 0.0) throw UsageError("inner_update: alpha must be non-negative");
    btfd::BtfdModel adapted = model;
    if (alpha == 0.0) return adapted;
    const auto res = btfd::btfd_loss(model, support, seed);
    const Eigen::VectorXd g = res.grads.flatten();
    if (!g.allFinite()) throw TrainingError("inner_update: non-finite support gradient");
    adapted.set_params(model.params() - alpha * g);
    return adapted;
}

namespace {

// Hessian-vector product of the support loss by central differences of its
// gradient, with the reparameterisation noise held fixed.
Eigen::VectorXd support_hvp(const btfd::BtfdModel& model, const btfd::ModelInput& support, std::uint64_t seed,
                            const Eigen::VectorXd& v) {
    const double vn = v.norm();
    if (vn == 0.0) return Eigen::VectorXd::Zero(v.size());
    const Eigen::VectorXd theta = model.params();
    const double eps = 1e-4 * (1.0 + theta.norm()) / vn;
    btfd::BtfdModel probe = model;
    probe.set_params(theta + eps * v);
    const Eigen::VectorXd gp = btfd::btfd_loss(probe, support, seed).grads.flatten();
    probe.set_params(theta - eps * v);
    const Eigen::VectorXd gm = btfd::btfd_loss(probe, support, seed).grads.flatten();
    return (gp - gm) / (2.0 * eps);
}

btfd::ModelInput normal_query(const Task& task) {
    std::vector<int> cols;
    for (std::size_t j = 0; j < task.labels.size(); ++j) {
        if (!features::is_anomalous(task.labels[j])) cols.push_back(static_cast<int>(j));
    }
    return task.query.select(cols);
}

}  // namespace

MetaResult meta_train(btfd::BtfdModel& model, const std::vector<Task>& tasks, const MetaConfig& config,
                      std::uint64_t seed) {
    std::set<std::string> ids;
    for (const auto& t : tasks) ids.insert(t.identity_id);
    if (ids.size() < 8) throw UsageError("meta_train: need at least 8 training identities");
    if (!(config.inner_lr >= 0.0) || !(config.outer_lr > 0.0)) throw UsageError("meta_train: learning rates");
    if (config.inner_steps != 1) throw UsageError("meta_train: exactly one inner step is supported");
    if (config.meta_batch < 1) throw UsageError("meta_train: meta_batch must be positive");

    Rng rng(seed);
    Eigen::VectorXd params = model.params();
    nn::AdamState adam(params.size(), config.outer_lr);
    std::vector<std::size_t> order(tasks.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    MetaResult result;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
        }
        double epoch_loss = 0.0;
        int counted = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.meta_batch)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.meta_batch));
            Eigen::VectorXd g = Eigen::VectorXd::Zero(params.size());
            for (std::size_t k = start; k < end; ++k) {
                const Task& task = tasks[order[k]];
                const std::uint64_t task_seed = rng.fork();
                const btfd::BtfdModel adapted = inner_update(model, task.support, config.inner_lr, task_seed);
                const DetectionResult det = detection_loss(adapted, task, config.detection);
                Eigen::VectorXd gi = det.grads.flatten();
                if (config.btfd_weight > 0.0) {
                    Rng reg_rng(mix_seed(task_seed, 1));
                    const auto reg = btfd::btfd_loss(adapted, normal_query(task), reg_rng, config.btfd_weight);
                    gi += reg.grads.flatten();
                    epoch_loss += reg.report.total;
                }
                if (!config.first_order && config.inner_lr > 0.0) {
                    gi -= config.inner_lr * support_hvp(model, task.support, task_seed, gi);
                }
                g += gi;
                epoch_loss += det.loss;
                ++counted;
            }
            g /= static_cast<double>(end - start);
            nn::adam_step(adam, params, g);
            model.set_params(params);
        }
        result.curve.push_back(epoch_loss / std::max(1, counted));
    }
    return result;
}

btfd::BtfdModel personalize(const btfd::BtfdModel& meta_model, const std::vector<features::FeatureWindow>& calibration,
                            double alpha, std::uint64_t seed) {
    if (calibration.size() < static_cast<std::size_t>(kShots)) {
        throw DomainError("personalize: need at least 5 calibration windows, got " +
                          std::to_string(calibration.size()));
    }
    const std::vector<features::FeatureWindow> shots(calibration.begin(), calibration.begin() + kShots);
    return inner_update(meta_model, btfd::make_input(shots), alpha, seed);
}

}  // namespace gazeflow::maml
