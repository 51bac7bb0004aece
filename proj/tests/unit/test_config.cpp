#include <doctest.h>

#include <filesystem>

#include "gazeflow/config.h"
#include "gazeflow/error.h"

using namespace gazeflow;
using namespace gazeflow::harness;

TEST_CASE("an empty file keeps every default") {
    const RunConfig c = parse_config("");
    const RunConfig d;
    CHECK(c.seed == d.seed);
    CHECK(c.maml.inner_lr == 0.01);
    CHECK(c.btfd.model.beta_kl == 4.0);
    CHECK(c.btfd.model.gamma_tc == 2.0);
    CHECK(c.smooth_alpha == 0.15);
    CHECK(c.zones.mild == 0.25);
    CHECK(c.zones.alert == 0.5);
    CHECK(c.zones.urgent == 0.75);
}

TEST_CASE("keys override defaults") {
    const RunConfig c = parse_config("[seed]\nmaster = 7\n[maml]\ninner_lr = 0.02\nfirst_order = false\n"
                                     "[paths]\nout_dir = /tmp/x\n");
    CHECK(c.seed == 7);
    CHECK(c.maml.inner_lr == 0.02);
    CHECK(!c.maml.first_order);
    CHECK(c.out_dir == std::filesystem::path("/tmp/x"));
}

TEST_CASE("rendering round-trips") {
    RunConfig c;
    c.seed = 99;
    c.cohort.train_identities = 12;
    c.maml.btfd_weight = 0.3;
    c.audio.cutoff_bright_hz = 2500.0;
    c.cbp_enabled = false;
    c.scoring.latent_weight = 1.0 / 3.0;
    const RunConfig r = parse_config(to_ini(c));
    CHECK(to_ini(r) == to_ini(c));
    CHECK(r.scoring.latent_weight == c.scoring.latent_weight);
    CHECK(r.seed == 99);
    CHECK(!r.cbp_enabled);
}

TEST_CASE("bad input") {
    CHECK_THROWS_AS(parse_config("[maml]\nwobble = 1\n"), UsageError);
    CHECK_THROWS_AS(parse_config("[nowhere]\nx = 1\n"), UsageError);
    CHECK_THROWS_AS(parse_config("[maml]\ninner_lr = fast\n"), UsageError);
    CHECK_THROWS_AS(parse_config("[maml]\ninner_lr = -1\n"), UsageError);
    CHECK_THROWS_AS(parse_config("[maml]\ninner_steps = 2\n"), UsageError);
    CHECK_THROWS_AS(parse_config("[scoring]\nzone_mild = 0.6\n"), UsageError);
    CHECK_THROWS_AS(parse_config("[cohort]\ntrain_identities = 3\n"), UsageError);
    CHECK_THROWS_AS(parse_config("[cbp]\nenabled = maybe\n"), UsageError);
    CHECK_THROWS_AS(parse_config("[maml\ninner_lr = 1\n"), ParseError);
    CHECK_THROWS_AS(load_config("/nonexistent/gazeflow.ini"), IoError);
}
