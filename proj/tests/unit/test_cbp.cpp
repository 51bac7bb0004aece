#include <doctest.h>

#include <cmath>

#include "gazeflow/cbp.h"
#include "gazeflow/error.h"
#include "gazeflow/pipeline.h"
#include "support/oracles.h"

using namespace gazeflow;
namespace gt = gazeflow::testing;

TEST_CASE("InfoNCE hand-computed cases") {
    Eigen::MatrixXd a(2, 2);
    a << 1.0, 0.0, 0.0, 1.0;
    const auto r = cbp::info_nce_loss(a, a, 0.1);
    const double expected = -std::log(std::exp(10.0) / (std::exp(10.0) + 1.0));
    CHECK(r.loss == doctest::Approx(expected).epsilon(1e-10));
    CHECK(r.loss < 5e-5);

    for (int b : {2, 5, 16}) {
        const Eigen::MatrixXd same = Eigen::MatrixXd::Constant(4, b, 0.3);
        CHECK(cbp::info_nce_loss(same, same, 0.1).loss == doctest::Approx(std::log(static_cast<double>(b))).epsilon(1e-12));
    }
}

TEST_CASE("InfoNCE is invariant to embedding scale") {
    Rng rng(1);
    const Eigen::MatrixXd a = gt::random_matrix(6, 5, rng);
    const Eigen::MatrixXd p = gt::random_matrix(6, 5, rng);
    CHECK(cbp::info_nce_loss(a, p, 0.1).loss == doctest::Approx(cbp::info_nce_loss(3.0 * a, 0.5 * p, 0.1).loss));
}

TEST_CASE("InfoNCE gradients match finite differences") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed);
        const Eigen::MatrixXd a = gt::random_matrix(16, 6, rng);
        const Eigen::MatrixXd p = a + 0.5 * gt::random_matrix(16, 6, rng);
        const auto r = cbp::info_nce_loss(a, p, 0.1);
        auto fa = [&](const Eigen::VectorXd& x) { return cbp::info_nce_loss(gt::as_matrix(x, 16, 6), p, 0.1).loss; };
        auto fp = [&](const Eigen::VectorXd& x) { return cbp::info_nce_loss(a, gt::as_matrix(x, 16, 6), 0.1).loss; };
        const auto all = gt::all_coords(96);
        CHECK(gt::relative_error(gt::as_vector(r.d_anchors), gt::central_difference(fa, gt::as_vector(a), all)) < 1e-4);
        CHECK(gt::relative_error(gt::as_vector(r.d_positives), gt::central_difference(fp, gt::as_vector(p), all)) < 1e-4);
    }
}

TEST_CASE("InfoNCE preconditions") {
    CHECK_THROWS_AS(cbp::info_nce_loss(Eigen::MatrixXd::Ones(3, 1), Eigen::MatrixXd::Ones(3, 1), 0.1), DomainError);
    CHECK_THROWS_AS(cbp::info_nce_loss(Eigen::MatrixXd::Ones(3, 2), Eigen::MatrixXd::Ones(3, 2), 0.0), UsageError);
    CHECK_THROWS_AS(cbp::info_nce_loss(Eigen::MatrixXd::Zero(3, 2), Eigen::MatrixXd::Ones(3, 2), 0.1), DomainError);
}

TEST_CASE("cross-resolution augmentation") {
    io::IdentityProfile profile;
    const auto session = io::synthesize_session(profile, 20.0, 1000.0, 5);

    SUBCASE("fixed seed gives an identical window") {
        const auto a = cbp::augment_cross_resolution(session, 17);
        const auto b = cbp::augment_cross_resolution(session, 17);
        CHECK(a.matrix == b.matrix);
    }
    SUBCASE("a 33x factor still yields a full window") {
        cbp::AugmentOptions o;
        o.factor_min = o.factor_max = 33;
        const auto w = cbp::augment_cross_resolution(session, 3.0, 4, o);
        CHECK(w.matrix.rows() == 96);
        CHECK(w.matrix.allFinite());
    }
    SUBCASE("an empty mask equals the unmasked pipeline") {
        cbp::AugmentOptions o;
        o.factor_min = o.factor_max = 33;
        o.mask_min = o.mask_max = 0.0;
        const auto w = cbp::augment_cross_resolution(session, 6.0, 8, o);

        const auto crop = io::slice(session, 6.0, 10.0);
        const auto low = io::resample_to_30hz(io::decimate(crop, 33));
        const auto feats = features::extract_features(low, features::interocular_baseline(session));
        CHECK(w.matrix == features::window_from_tail(feats, session.identity_id).matrix);
    }
    SUBCASE("rate below 60 Hz is rejected") {
        CHECK_THROWS_AS(cbp::augment_cross_resolution(io::resample_to_30hz(session), 1), DomainError);
    }
}

TEST_CASE("mask_rows interpolates linearly and re-pads") {
    auto w = gt::random_windows(1, 3).front();
    const auto before = w.matrix;
    cbp::mask_rows(w, 10, 20);
    for (int r = 10; r < 20; ++r) {
        const double f = (r - 9) / 11.0;
        CHECK((w.matrix.row(r) - ((1 - f) * before.row(9) + f * before.row(20))).cwiseAbs().maxCoeff() < 1e-12);
    }
    CHECK(w.matrix.row(9) == before.row(9));
    CHECK(w.matrix.row(20) == before.row(20));
    for (int r = 90; r < 96; ++r) CHECK(w.matrix.row(r) == w.matrix.row(89));
    CHECK_THROWS_AS(cbp::mask_rows(w, 0, 5), UsageError);
}

TEST_CASE("biometric signature") {
    const auto model = btfd::BtfdModel::make({}, 2);
    const auto ws = gt::random_windows(3, 4);
    const Eigen::VectorXd one = cbp::biometric_signature(model, {ws[0]});
    CHECK((one - btfd::encode(model, ws[0], wavelet::pyramid(ws[0].matrix), 1).mu).cwiseAbs().maxCoeff() < 1e-12);
    const Eigen::VectorXd s = cbp::biometric_signature(model, ws);
    const Eigen::VectorXd doubled = cbp::biometric_signature(model, {ws[0], ws[1], ws[2], ws[0], ws[1], ws[2]});
    CHECK((s - doubled).cwiseAbs().maxCoeff() < 1e-12);
    CHECK_THROWS_AS(cbp::biometric_signature(model, {}), UsageError);
}

TEST_CASE("contrastive pre-training") {
    harness::RunConfig config;
    config.cohort.train_identities = 20;
    config.cohort.heldout_identities = 2;
    const auto cohort = harness::make_cohort(config);
    const auto data = harness::pretrain_data(config, cohort);
    cbp::CbpCorpus corpus{data.sessions};

    SUBCASE("zero epochs leave the encoder unchanged") {
        auto model = btfd::BtfdModel::make({}, 1);
        const Eigen::VectorXd before = model.params();
        auto c = config.cbp;
        c.epochs = 0;
        cbp::pretrain_cbp(model, corpus, data.standardizer, c, 3);
        CHECK(model.params() == before);
    }
    SUBCASE("seeded reruns are identical") {
        auto a = btfd::BtfdModel::make({}, 1);
        auto b = btfd::BtfdModel::make({}, 1);
        auto c = config.cbp;
        c.epochs = 2;
        cbp::pretrain_cbp(a, corpus, data.standardizer, c, 3);
        cbp::pretrain_cbp(b, corpus, data.standardizer, c, 3);
        CHECK(a.params() == b.params());
    }
    SUBCASE("signatures separate identities after 30 epochs") {
        auto model = btfd::BtfdModel::make({}, 1);
        cbp::pretrain_cbp(model, corpus, data.standardizer, config.cbp, 3);

        // Two independent 30 s windows sets per identity, each from its own recording.
        const int n = static_cast<int>(cohort.train_indices().size());
        std::vector<std::array<Eigen::VectorXd, 2>> sig(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            for (int k = 0; k < 2; ++k) {
                const auto s30 = io::resample_to_30hz(harness::source_session(config, cohort, i, k));
                const auto feats = features::extract_features(io::slice(s30, 0.0, 30.0));
                auto ws = features::make_windows(feats, 3.0, cohort.ids[i]);
                for (auto& w : ws) w = data.standardizer.apply(w);
                sig[i][k] = cbp::biometric_signature(model, ws);
            }
        }
        double same = 0.0, cross = 0.0;
        long cross_n = 0;
        for (int i = 0; i < n; ++i) {
            same += cbp::cosine(sig[i][0], sig[i][1]);
            for (int j = 0; j < n; ++j) {
                if (j == i) continue;
                cross += cbp::cosine(sig[i][0], sig[j][1]);
                ++cross_n;
            }
        }
        same /= n;
        cross /= static_cast<double>(cross_n);
        MESSAGE("same-identity cosine " << same << ", cross-identity " << cross);
        CHECK(same - cross >= 0.2);
    }
}
