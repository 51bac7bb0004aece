#include "gazeflow/cbp.h"

#include <algorithm>
#include <cmath>
#include <map>

#include "gazeflow/error.h"

namespace gazeflow::cbp {

void mask_rows(features::FeatureWindow& window, int begin, int end) {
    using features::kWindowReal;
    using features::kWindowRows;
    if (begin >= end) return;
    if (begin < 1 || end > kWindowReal - 1) throw UsageError("mask_rows: span must leave an anchor row on each side");
    auto& m = window.matrix;
    const int left = begin - 1;
    const int right = end;
    for (int r = begin; r < end; ++r) {
        const double w = static_cast<double>(r - left) / static_cast<double>(right - left);
        m.row(r) = (1.0 - w) * m.row(left) + w * m.row(right);
    }
    for (int r = kWindowReal; r < kWindowRows; ++r) m.row(r) = m.row(kWindowReal - 1);
}

features::FeatureWindow augment_cross_resolution(const io::GazeSession& session, double crop_start_s,
                                                 std::uint64_t seed, const AugmentOptions& options,
                                                 std::optional<features::InterocularBaseline> baseline) {
    if (session.rate_hz < 60.0) throw DomainError("augment_cross_resolution: source rate must be at least 60 Hz");
    if (options.factor_min < 2 || options.factor_max > 33 || options.factor_min > options.factor_max) {
        throw UsageError("augment_cross_resolution: decimation factors must lie in [2, 33]");
    }
    if (options.mask_min < 0.0 || options.mask_max > 0.5 || options.mask_min > options.mask_max) {
        throw UsageError("augment_cross_resolution: bad mask fraction range");
    }
    Rng rng(seed);
    const int max_factor = std::min(options.factor_max, static_cast<int>(std::floor(session.rate_hz / 30.0 + 1e-9)));
    if (max_factor < options.factor_min) throw DomainError("augment_cross_resolution: rate too low to decimate");
    const int factor = rng.uniform_int(options.factor_min, max_factor);

    const double t0 = session.samples.empty() ? 0.0 : session.samples.front().t;
    const io::GazeSession crop = io::slice(session, t0 + crop_start_s, t0 + crop_start_s + options.crop_s);
    if (crop.samples.size() < 2) throw DomainError("augment_cross_resolution: crop outside session");
    const io::GazeSession low = io::resample_to_30hz(io::decimate(crop, factor));
    if (low.samples.size() < static_cast<std::size_t>(features::kWindowReal)) {
        throw DomainError("augment_cross_resolution: crop too short for a 3 s window after decimation");
    }
    const auto base = baseline ? *baseline : features::interocular_baseline(session);
    features::FeatureWindow w =
        features::window_from_tail(features::extract_features(low, base), session.identity_id);
    w.t_start = crop_start_s;

    const double frac = rng.uniform(options.mask_min, options.mask_max);
    const int len = static_cast<int>(std::lround(frac * features::kWindowReal));
    if (len > 0) {
        const int begin = rng.uniform_int(1, features::kWindowReal - 1 - len);
        mask_rows(w, begin, begin + len);
    }
    return w;
}

features::FeatureWindow augment_cross_resolution(const io::GazeSession& session, std::uint64_t seed,
                                                 const AugmentOptions& options) {
    const double room = session.duration() - options.crop_s;
    if (room < 0.0) throw DomainError("augment_cross_resolution: session shorter than the crop");
    Rng rng(mix_seed(seed, 0xC809));
    return augment_cross_resolution(session, rng.uniform(0.0, room), seed, options);
}

InfoNceResult info_nce_loss(const Eigen::MatrixXd& anchors, const Eigen::MatrixXd& positives, double temperature) {
    const Eigen::Index b = anchors.cols();
    if (b < 2) throw DomainError("info_nce_loss: need at least two pairs for in-batch negatives");
    if (positives.cols() != b || positives.rows() != anchors.rows()) {
        throw DomainError("info_nce_loss: anchor/positive shape mismatch");
    }
    if (!(temperature > 0.0)) throw UsageError("info_nce_loss: temperature must be positive");

    const Eigen::RowVectorXd na = anchors.colwise().norm();
    const Eigen::RowVectorXd np = positives.colwise().norm();
    if ((na.array() <= 0.0).any() || (np.array() <= 0.0).any()) {
        throw DomainError("info_nce_loss: zero-length embedding");
    }
    const Eigen::MatrixXd u = anchors.array().rowwise() / na.array();
    const Eigen::MatrixXd v = positives.array().rowwise() / np.array();
    const Eigen::MatrixXd s = (u.transpose() * v) / temperature;

    // Row softmax (anchor -> positives) and column softmax (positive -> anchors).
    Eigen::MatrixXd row_p(b, b), col_p(b, b);
    double loss = 0.0;
    for (Eigen::Index i = 0; i < b; ++i) {
        const double mr = s.row(i).maxCoeff();
        const Eigen::RowVectorXd er = (s.row(i).array() - mr).exp();
        const double zr = er.sum();
        row_p.row(i) = er / zr;
        loss += -(s(i, i) - mr - std::log(zr));

        const double mc = s.col(i).maxCoeff();
        const Eigen::VectorXd ec = (s.col(i).array() - mc).exp();
        const double zc = ec.sum();
        col_p.col(i) = ec / zc;
        loss += -(s(i, i) - mc - std::log(zc));
    }
    const double norm = 1.0 / (2.0 * static_cast<double>(b));
    InfoNceResult out;
    out.loss = loss * norm;

    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(b, b);
    const Eigen::MatrixXd ds = norm * ((row_p - eye) + (col_p - eye));
    const Eigen::MatrixXd du = v * ds.transpose() / temperature;
    const Eigen::MatrixXd dv = u * ds / temperature;

    // Through the normalisation: d/dx = (du - u (u.du)) / |x|.
    out.d_anchors.resize(anchors.rows(), b);
    out.d_positives.resize(positives.rows(), b);
    for (Eigen::Index i = 0; i < b; ++i) {
        out.d_anchors.col(i) = (du.col(i) - u.col(i) * u.col(i).dot(du.col(i))) / na(i);
        out.d_positives.col(i) = (dv.col(i) - v.col(i) * v.col(i).dot(dv.col(i))) / np(i);
    }
    return out;
}

ProjectionHead ProjectionHead::make(int output_dim, std::uint64_t seed) {
    Rng rng(seed);
    return {nn::DenseNet::make({btfd::kLatent, output_dim}, {nn::Activation::tanh}, rng)};
}

Eigen::MatrixXd ProjectionHead::project(const Eigen::MatrixXd& mu) const {
    Eigen::MatrixXd out = net.forward(mu);
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
        const double n = out.col(j).norm();
        if (n > 0.0) out.col(j) /= n;
    }
    return out;
}

namespace {

struct IdentityIndex {
    std::vector<std::string> ids;
    std::vector<std::vector<std::size_t>> sessions;  // per identity, into corpus.sessions
};

IdentityIndex index_identities(const CbpCorpus& corpus) {
    std::map<std::string, std::vector<std::size_t>> by_id;
    for (std::size_t i = 0; i < corpus.sessions.size(); ++i) by_id[corpus.sessions[i].identity_id].push_back(i);
    IdentityIndex idx;
    for (auto& [id, list] : by_id) {
        idx.ids.push_back(id);
        idx.sessions.push_back(std::move(list));
    }
    return idx;
}

}  // namespace

CbpResult pretrain_cbp(btfd::BtfdModel& model, const CbpCorpus& corpus, const features::Standardizer& standardizer,
                       const CbpConfig& config, std::uint64_t seed) {
    const IdentityIndex idx = index_identities(corpus);
    if (idx.ids.size() < 8) throw UsageError("pretrain_cbp: need at least 8 identities");
    for (const auto& s : corpus.sessions) {
        if (s.rate_hz < 60.0) throw DomainError("pretrain_cbp: corpus sessions must be at least 60 Hz");
        if (s.duration() < config.min_separation_s + config.augment.crop_s) {
            throw DomainError("pretrain_cbp: session " + s.identity_id + " too short for distant positive pairs");
        }
    }
    Rng rng(seed);
    CbpResult result{ProjectionHead::make(config.projection_dim, rng.fork()), {}};
    if (config.epochs <= 0) return result;

    std::vector<features::InterocularBaseline> baselines;
    baselines.reserve(corpus.sessions.size());
    for (const auto& s : corpus.sessions) baselines.push_back(features::interocular_baseline(s));

    const auto pairs = static_cast<std::size_t>(std::clamp<int>(config.pairs_per_batch, 2,
                                                                static_cast<int>(idx.ids.size())));
    const Eigen::Index model_size = static_cast<Eigen::Index>(model.parameter_count());
    Eigen::VectorXd params(model_size + static_cast<Eigen::Index>(result.head.net.parameter_count()));
    params << model.params(), nn::flatten(result.head.net);
    nn::AdamState adam(params.size(), config.lr);

    std::vector<std::size_t> order(idx.ids.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        CbpEpoch sum;
        for (int batch = 0; batch < config.batches_per_epoch; ++batch) {
            for (std::size_t i = order.size(); i > 1; --i) {
                std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
            }
            std::vector<features::FeatureWindow> views(2 * pairs);
            for (std::size_t p = 0; p < pairs; ++p) {
                const auto& list = idx.sessions[order[p]];
                const std::size_t si = list[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(list.size()) - 1))];
                const auto& session = corpus.sessions[si];
                const double last = session.duration() - config.augment.crop_s;
                const double a = rng.uniform(0.0, last - config.min_separation_s);
                const double b = rng.uniform(a + config.min_separation_s, last);
                views[p] = standardizer.apply(
                    augment_cross_resolution(session, a, rng.fork(), config.augment, baselines[si]));
                views[pairs + p] = standardizer.apply(
                    augment_cross_resolution(session, b, rng.fork(), config.augment, baselines[si]));
            }
            const btfd::ModelInput input = btfd::make_input(views);
            const btfd::EncoderPass enc = btfd::encode_batch(model, input);
            nn::ForwardCache head_cache;
            const Eigen::MatrixXd proj = result.head.net.forward(enc.mu, &head_cache);
            const auto n = static_cast<Eigen::Index>(pairs);
            const InfoNceResult nce = info_nce_loss(proj.leftCols(n), proj.rightCols(n), config.temperature);

            Eigen::MatrixXd d_proj(proj.rows(), proj.cols());
            d_proj << nce.d_anchors, nce.d_positives;
            Eigen::MatrixXd d_mu;
            const nn::Gradients head_grads = result.head.net.backward(head_cache, d_proj, &d_mu);
            btfd::ModelGradients grads = btfd::ModelGradients::zeros(model);
            btfd::encoder_backward(model, enc, d_mu, Eigen::MatrixXd::Zero(d_mu.rows(), d_mu.cols()), grads);

            const btfd::BtfdLossResult rec = btfd::btfd_loss(model, input, rng, config.btfd_weight);
            const double total = nce.loss + rec.report.total;
            if (!std::isfinite(total)) {
                throw TrainingError("pretrain_cbp: non-finite loss at epoch " + std::to_string(epoch));
            }
            Eigen::VectorXd g(params.size());
            g << grads.flatten() + rec.grads.flatten(), nn::flatten(head_grads);
            nn::adam_step(adam, params, g);
            model.set_params(params.head(model_size));
            nn::unflatten(result.head.net, params.tail(params.size() - model_size));
            sum.info_nce += nce.loss;
            sum.btfd += config.btfd_weight > 0.0 ? rec.report.total / config.btfd_weight : 0.0;
        }
        sum.info_nce /= config.batches_per_epoch;
        sum.btfd /= config.batches_per_epoch;
        result.curve.push_back(sum);
    }
    return result;
}

Eigen::VectorXd biometric_signature(const btfd::BtfdModel& model, const std::vector<features::FeatureWindow>& windows) {
    if (windows.empty()) throw UsageError("biometric_signature: need at least one window");
    const auto pass = btfd::encode_batch(model, btfd::make_input(windows));
    return pass.mu.rowwise().mean();
}

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double d = a.norm() * b.norm();
    return d > 0.0 ? a.dot(b) / d : 0.0;
}

}  // namespace gazeflow::cbp
