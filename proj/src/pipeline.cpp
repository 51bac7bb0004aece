#include "gazeflow/pipeline.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "gazeflow/cbp.h"
#include "gazeflow/error.h"
#include "gazeflow/rng.h"

namespace gazeflow::harness {

using nlohmann::ordered_json;

namespace {

constexpr double kGridS = features::kWindowSeconds;
constexpr double kReferenceHopS = 0.5;

std::uint64_t seed_for(const RunConfig& c, const std::string& tag) { return mix_seed(c.seed, stable_hash(tag)); }

double elapsed_ms(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

std::vector<features::FeatureWindow> standardize(const std::vector<features::FeatureWindow>& ws,
                                                 const features::Standardizer& s) {
    std::vector<features::FeatureWindow> out;
    out.reserve(ws.size());
    for (const auto& w : ws) out.push_back(s.apply(w));
    return out;
}

Eigen::MatrixXd flatten_all(const std::vector<features::FeatureWindow>& ws) {
    Eigen::MatrixXd x(btfd::kTemporalInput, static_cast<Eigen::Index>(ws.size()));
    for (std::size_t i = 0; i < ws.size(); ++i) x.col(static_cast<Eigen::Index>(i)) = btfd::flatten_window(ws[i].matrix);
    return x;
}

void mean_sd(const Eigen::VectorXd& v, double floor, double& mean, double& sd) {
    mean = v.mean();
    const double n = static_cast<double>(v.size());
    const double var = n > 1.0 ? (v.array() - mean).square().sum() / (n - 1.0) : 0.0;
    sd = std::sqrt(var + floor * floor);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

ordered_json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

ordered_json standardizer_json(const features::Standardizer& s) { return {{"mean", s.mean}, {"sd", s.sd}}; }

features::Standardizer standardizer_from(const ordered_json& j) {
    features::Standardizer s;
    s.mean = j.at("mean").get<std::array<double, features::kChannels>>();
    s.sd = j.at("sd").get<std::array<double, features::kChannels>>();
    return s;
}

ordered_json btfd_json(const btfd::BtfdConfig& c) {
    return {{"beta_kl", c.beta_kl}, {"gamma_tc", c.gamma_tc}, {"hidden", c.hidden},
            {"log_var_min", c.log_var_min}, {"log_var_max", c.log_var_max}};
}

btfd::BtfdConfig btfd_from(const ordered_json& j) {
    btfd::BtfdConfig c;
    c.beta_kl = j.at("beta_kl").get<double>();
    c.gamma_tc = j.at("gamma_tc").get<double>();
    c.hidden = j.at("hidden").get<int>();
    c.log_var_min = j.at("log_var_min").get<double>();
    c.log_var_max = j.at("log_var_max").get<double>();
    return c;
}

std::string fmt(double v, int precision = 4) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(precision) << v;
    return out.str();
}

}  // namespace

// ---- cohort --------------------------------------------------------------------

std::vector<int> Cohort::train_indices() const {
    std::vector<int> out;
    for (int i = 0; i < train_count; ++i) out.push_back(i);
    return out;
}

std::vector<int> Cohort::heldout_indices() const {
    std::vector<int> out;
    for (int i = train_count; i < static_cast<int>(profiles.size()); ++i) out.push_back(i);
    return out;
}

Cohort make_cohort(const RunConfig& config) {
    Cohort c;
    const int total = config.cohort.train_identities + config.cohort.heldout_identities;
    c.profiles = io::sample_profiles(config.cohort.population, total, seed_for(config, "cohort"));
    c.train_count = config.cohort.train_identities;
    for (int i = 0; i < total; ++i) {
        std::ostringstream id;
        id << (i < c.train_count ? "train" : "heldout") << std::setw(3) << std::setfill('0') << i;
        c.ids.push_back(id.str());
    }
    return c;
}

io::GazeSession source_session(const RunConfig& config, const Cohort& cohort, int identity, int k) {
    const auto i = static_cast<std::size_t>(identity);
    return io::synthesize_session(cohort.profiles.at(i), config.cohort.session_s, config.cohort.source_rate_hz,
                                  seed_for(config, "source/" + cohort.ids[i] + "/" + std::to_string(k)), {},
                                  cohort.ids[i]);
}

std::vector<std::filesystem::path> write_cohort(const RunConfig& config, const std::filesystem::path& dir,
                                                double rate_hz) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    const Cohort cohort = make_cohort(config);
    std::vector<std::filesystem::path> paths;
    for (std::size_t i = 0; i < cohort.profiles.size(); ++i) {
        for (int k = 0; k < config.cohort.sessions_per_identity; ++k) {
            const auto session = io::synthesize_session(
                cohort.profiles[i], config.cohort.session_s, rate_hz,
                seed_for(config, "source/" + cohort.ids[i] + "/" + std::to_string(k)), {}, cohort.ids[i]);
            const auto path = dir / (cohort.ids[i] + "_s" + std::to_string(k) + ".csv");
            io::export_gazeflow_csv(session, path);
            paths.push_back(path);
        }
    }
    return paths;
}

double fixation_noise_cv(const Cohort& cohort) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(cohort.profiles.size()));
    for (std::size_t i = 0; i < cohort.profiles.size(); ++i) {
        v[static_cast<Eigen::Index>(i)] = cohort.profiles[i].fixation_noise_sd;
    }
    const double m = v.mean();
    const double sd = std::sqrt((v.array() - m).square().sum() / static_cast<double>(v.size() - 1));
    return sd / m;
}

// ---- calibration and windows -----------------------------------------------------

Calibration calibrate(const io::GazeSession& session30, double calibration_s, const features::Standardizer& population) {
    const auto rows = static_cast<std::size_t>(std::llround(calibration_s * io::kModelRateHz));
    if (session30.samples.size() < rows) {
        throw DomainError("calibration session is shorter than " + fmt(calibration_s, 1) + " s");
    }
    io::GazeSession prefix = session30;
    prefix.samples.resize(rows);
    prefix.anomaly_spans.clear();

    Calibration cal;
    cal.interocular = features::interocular_baseline(session30);
    const auto feats = features::extract_features(prefix, cal.interocular);
    const auto shots = features::make_windows(feats, kGridS, session30.identity_id);
    cal.standardizer = features::fit_standardizer(shots);
    for (std::size_t c = 0; c < features::kChannels; ++c) {
        cal.standardizer.sd[c] = std::max(cal.standardizer.sd[c], population.sd[c]);
    }
    cal.support = standardize(shots, cal.standardizer);
    cal.reference = standardize(features::make_windows(feats, kReferenceHopS, session30.identity_id), cal.standardizer);
    return cal;
}

std::vector<features::FeatureWindow> query_windows(const io::GazeSession& session30, const Calibration& calibration,
                                                   const features::Standardizer& standardizer, double calibration_s) {
    const auto feats = features::extract_features(session30, calibration.interocular);
    std::vector<features::FeatureWindow> out;
    const double t0 = session30.samples.front().t;
    for (auto& w : features::make_windows(feats, kGridS, session30.identity_id, session30.anomaly_spans)) {
        if (w.t_start - t0 >= calibration_s - 1e-9) out.push_back(standardizer.apply(w));
    }
    return out;
}

std::vector<maml::AnomalySpec> plan_anomalies(double session_s, double calibration_s, double span_s, int per_kind,
                                              std::uint64_t seed) {
    const int width = static_cast<int>(std::ceil(span_s / kGridS - 1e-9));
    // The last grid cell stays free so every span ends inside the recording.
    const int cells = static_cast<int>(std::floor((session_s - calibration_s) / kGridS + 1e-9)) - 1;
    const int spans = 3 * per_kind;
    const int free_cells = cells - spans * width - (spans - 1);
    if (free_cells < 0) throw DomainError("plan_anomalies: session too short for the requested spans");

    Rng rng(seed);
    std::vector<int> extra(static_cast<std::size_t>(spans) + 1, 0);
    for (int f = 0; f < free_cells; ++f) ++extra[static_cast<std::size_t>(rng.uniform_int(0, spans))];
    std::vector<io::AnomalyKind> kinds;
    for (int r = 0; r < per_kind; ++r) {
        for (auto k : io::kAllAnomalyKinds) kinds.push_back(k);
    }
    for (std::size_t i = kinds.size(); i > 1; --i) {
        std::swap(kinds[i - 1], kinds[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
    }

    std::vector<maml::AnomalySpec> out;
    int cell = 0;
    for (int s = 0; s < spans; ++s) {
        cell += extra[static_cast<std::size_t>(s)] + (s > 0 ? 1 : 0);
        maml::AnomalySpec spec;
        spec.kind = kinds[static_cast<std::size_t>(s)];
        spec.onset_s = calibration_s + kGridS * cell;
        spec.duration_s = span_s;
        const auto [lo, hi] = maml::magnitude_range(spec.kind);
        spec.magnitude = rng.uniform(lo, hi);
        if (spec.kind == io::AnomalyKind::saccadic_dysmetria && rng.bernoulli(0.5)) spec.magnitude = -spec.magnitude;
        out.push_back(spec);
        cell += width;
    }
    return out;
}

io::GazeSession apply_anomalies(const io::GazeSession& session, const std::vector<maml::AnomalySpec>& specs) {
    io::GazeSession out = session;
    const double t0 = session.samples.empty() ? 0.0 : session.samples.front().t;
    for (auto spec : specs) {
        spec.onset_s += t0;
        out = maml::inject(out, spec).session;
    }
    return out;
}

// ---- stages ----------------------------------------------------------------------

PretrainData pretrain_data(const RunConfig& config, const Cohort& cohort) {
    PretrainData data;
    std::vector<features::FeatureWindow> raw;
    for (int i : cohort.train_indices()) {
        for (int k = 0; k < config.cohort.sessions_per_identity; ++k) {
            auto session = source_session(config, cohort, i, k);
            const auto s30 = io::resample_to_30hz(session);
            const auto ws = features::make_windows(features::extract_features(s30), config.btfd.window_hop_s,
                                                   s30.identity_id);
            raw.insert(raw.end(), ws.begin(), ws.end());
            data.sessions.push_back(std::move(session));
        }
    }
    data.standardizer = features::fit_standardizer(raw);
    data.windows = standardize(raw, data.standardizer);
    return data;
}

StageArtifacts run_btfd_stage(const RunConfig& config, const PretrainData& data) {
    StageArtifacts a{btfd::BtfdModel::make(config.btfd.model, seed_for(config, "btfd/init")), data.standardizer, {},
                     {"recon", "kl", "tc", "total"}};
    btfd::TrainOptions opts = config.btfd.train;
    opts.seed = seed_for(config, "btfd/train");
    for (const auto& r : btfd::train_btfd(a.model, data.windows, opts)) a.curve.push_back({r.recon, r.kl, r.tc, r.total});
    return a;
}

StageArtifacts run_cbp_stage(const RunConfig& config, const PretrainData& data, const btfd::BtfdModel& init) {
    StageArtifacts a{init, data.standardizer, {}, {"info_nce", "btfd"}};
    cbp::CbpCorpus corpus{data.sessions};
    const auto result = cbp::pretrain_cbp(a.model, corpus, data.standardizer, config.cbp, seed_for(config, "cbp"));
    for (const auto& e : result.curve) a.curve.push_back({e.info_nce, e.btfd});
    return a;
}

namespace {

maml::Task make_task(const io::GazeSession& session30, double calibration_s, const features::Standardizer& population) {
    const Calibration cal = calibrate(session30, calibration_s, population);
    const auto query = query_windows(session30, cal, cal.standardizer, calibration_s);
    maml::Task t;
    t.identity_id = session30.identity_id;
    t.support = btfd::make_input(cal.support);
    t.calibration = btfd::make_input(cal.reference);
    t.query = btfd::make_input(query);
    for (const auto& w : query) t.labels.push_back(w.label.value_or(features::WindowLabel::normal));
    return t;
}

}  // namespace

std::vector<maml::Task> task_pool(const RunConfig& config, const Cohort& cohort,
                                  const features::Standardizer& population) {
    std::vector<maml::Task> tasks;
    const auto& co = config.cohort;
    for (int i : cohort.train_indices()) {
        const auto& id = cohort.ids[static_cast<std::size_t>(i)];
        for (int k = 0; k < co.task_sessions; ++k) {
            const std::string tag = "task/" + id + "/" + std::to_string(k);
            const auto session = io::synthesize_session(cohort.profiles[static_cast<std::size_t>(i)], co.task_session_s,
                                                        co.source_rate_hz, seed_for(config, tag), {}, id);
            const auto specs = plan_anomalies(co.task_session_s, co.calibration_s, config.eval.span_s, co.task_spans_per_kind,
                                              seed_for(config, tag + "/anomalies"));
            tasks.push_back(make_task(io::resample_to_30hz(apply_anomalies(session, specs)), co.calibration_s, population));
        }
    }
    return tasks;
}

StageArtifacts run_maml_stage(const RunConfig& config, const std::vector<maml::Task>& tasks,
                              const btfd::BtfdModel& init, const features::Standardizer& population) {
    StageArtifacts a{init, population, {}, {"query_loss"}};
    maml::MetaConfig mc = config.maml;
    mc.detection.scoring = config.scoring;
    for (double v : maml::meta_train(a.model, tasks, mc, seed_for(config, "maml")).curve) a.curve.push_back({v});
    return a;
}

void save_stage(const std::filesystem::path& dir, const std::string& stage, const RunConfig& config,
                const StageArtifacts& artifacts) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    nn::save_checkpoint(dir / (stage + ".ckpt"), artifacts.model.named_nets());

    ordered_json m;
    m["stage"] = stage;
    m["checkpoint"] = stage + ".ckpt";
    m["loss_curve"] = stage + "_loss.csv";
    m["seed"] = config.seed;
    m["btfd"] = btfd_json(artifacts.model.config);
    if (stage == "btfd") {
        m["train"] = {{"epochs", config.btfd.train.epochs}, {"lr", config.btfd.train.lr},
                      {"batch_size", config.btfd.train.batch_size}, {"window_hop_s", config.btfd.window_hop_s}};
    } else if (stage == "cbp") {
        const auto& c = config.cbp;
        m["train"] = {{"temperature", c.temperature}, {"projection_dim", c.projection_dim},
                      {"btfd_weight", c.btfd_weight}, {"epochs", c.epochs}, {"lr", c.lr},
                      {"batches_per_epoch", c.batches_per_epoch}, {"pairs_per_batch", c.pairs_per_batch},
                      {"min_separation_s", c.min_separation_s}, {"factor_min", c.augment.factor_min},
                      {"factor_max", c.augment.factor_max}, {"mask_min", c.augment.mask_min},
                      {"mask_max", c.augment.mask_max}};
    } else {
        const auto& c = config.maml;
        m["train"] = {{"inner_lr", c.inner_lr}, {"outer_lr", c.outer_lr}, {"inner_steps", c.inner_steps},
                      {"meta_batch", c.meta_batch}, {"first_order", c.first_order}, {"epochs", c.epochs},
                      {"margin", c.detection.margin}, {"attribution_margin", c.detection.attribution_margin},
                      {"attribution_weight", c.detection.attribution_weight}, {"btfd_weight", c.btfd_weight},
                      {"init", config.cbp_enabled ? "cbp" : "btfd"}};
    }
    m["population_standardizer"] = standardizer_json(artifacts.population);
    write_text(dir / (stage + ".manifest.json"), m.dump(2) + "\n");

    std::ostringstream csv;
    csv << "epoch";
    for (const auto& c : artifacts.curve_columns) csv << ',' << c;
    csv << '\n';
    csv << std::setprecision(10);
    for (std::size_t e = 0; e < artifacts.curve.size(); ++e) {
        csv << e;
        for (double v : artifacts.curve[e]) csv << ',' << v;
        csv << '\n';
    }
    write_text(dir / (stage + "_loss.csv"), csv.str());
}

bool stage_exists(const std::filesystem::path& dir, const std::string& stage) {
    return std::filesystem::exists(dir / (stage + ".ckpt")) && std::filesystem::exists(dir / (stage + ".manifest.json"));
}

StageArtifacts load_stage(const std::filesystem::path& dir, const std::string& stage, const RunConfig& /*config*/) {
    if (!stage_exists(dir, stage)) {
        throw UsageError("missing " + stage + " checkpoint in " + dir.string() + "; run `train " + stage + "` first");
    }
    const ordered_json m = read_json(dir / (stage + ".manifest.json"));
    StageArtifacts a;
    try {
        a.model = btfd::BtfdModel::from_named_nets(nn::load_checkpoint(dir / (stage + ".ckpt")), btfd_from(m.at("btfd")));
        a.population = standardizer_from(m.at("population_standardizer"));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(stage + " manifest: " + e.what());
    }
    return a;
}

// ---- personalization -------------------------------------------------------------

UserModel personalize_user(const btfd::BtfdModel& meta_model, const features::Standardizer& population,
                           const io::GazeSession& calibration_session, const RunConfig& config, double alpha) {
    const auto start = std::chrono::steady_clock::now();
    const io::GazeSession s30 = std::abs(calibration_session.rate_hz - io::kModelRateHz) < 1e-9
                                    ? calibration_session
                                    : io::resample_to_30hz(calibration_session);
    const Calibration cal = calibrate(s30, config.cohort.calibration_s, population);
    UserModel u;
    u.identity_id = s30.identity_id;
    u.model = maml::personalize(meta_model, cal.support, alpha, seed_for(config, "personalize/" + u.identity_id));
    u.standardizer = cal.standardizer;
    u.interocular = cal.interocular;
    u.baseline = scoring::fit_baseline(u.model, cal.reference, config.scoring);
    u.wall_ms = elapsed_ms(start);
    return u;
}

void save_user(const std::filesystem::path& dir, const UserModel& user, const RunConfig& config) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    nn::save_checkpoint(dir / "user.ckpt", user.model.named_nets());
    ordered_json j;
    j["identity_id"] = user.identity_id;
    j["checkpoint"] = "user.ckpt";
    j["btfd"] = btfd_json(user.model.config);
    j["inner_lr"] = config.maml.inner_lr;
    j["standardizer"] = standardizer_json(user.standardizer);
    j["interocular"] = {{"horizontal", user.interocular.horizontal}, {"vertical", user.interocular.vertical}};
    ordered_json b;
    ordered_json centers = ordered_json::array();
    for (const auto& c : user.baseline.group_center) centers.push_back(std::vector<double>(c.data(), c.data() + c.size()));
    b["group_center"] = centers;
    b["dev_mean"] = user.baseline.dev_mean;
    b["dev_sd"] = user.baseline.dev_sd;
    b["rec_mean"] = user.baseline.rec_mean;
    b["rec_sd"] = user.baseline.rec_sd;
    b["z_max"] = user.baseline.config.z_max;
    b["latent_weight"] = user.baseline.config.latent_weight;
    b["sd_floor"] = user.baseline.config.sd_floor;
    j["baseline"] = b;
    write_text(dir / "user.json", j.dump(2) + "\n");
}

UserModel load_user(const std::filesystem::path& dir, const RunConfig& /*config*/) {
    if (!std::filesystem::exists(dir / "user.json") || !std::filesystem::exists(dir / "user.ckpt")) {
        throw UsageError("missing personalized checkpoint in " + dir.string() + "; run `personalize` first");
    }
    const ordered_json j = read_json(dir / "user.json");
    UserModel u;
    try {
        u.identity_id = j.at("identity_id").get<std::string>();
        u.model = btfd::BtfdModel::from_named_nets(nn::load_checkpoint(dir / "user.ckpt"), btfd_from(j.at("btfd")));
        u.standardizer = standardizer_from(j.at("standardizer"));
        u.interocular.horizontal = j.at("interocular").at("horizontal").get<double>();
        u.interocular.vertical = j.at("interocular").at("vertical").get<double>();
        const auto& b = j.at("baseline");
        for (std::size_t g = 0; g < scoring::kFactors; ++g) {
            const auto v = b.at("group_center").at(g).get<std::vector<double>>();
            if (v.size() != static_cast<std::size_t>(btfd::kGroupSize)) throw ParseError("user.json: bad group_center");
            u.baseline.group_center[g] = Eigen::Map<const Eigen::VectorXd>(v.data(), btfd::kGroupSize);
        }
        u.baseline.dev_mean = b.at("dev_mean").get<std::array<double, scoring::kFactors>>();
        u.baseline.dev_sd = b.at("dev_sd").get<std::array<double, scoring::kFactors>>();
        u.baseline.rec_mean = b.at("rec_mean").get<double>();
        u.baseline.rec_sd = b.at("rec_sd").get<double>();
        u.baseline.config.z_max = b.at("z_max").get<double>();
        u.baseline.config.latent_weight = b.at("latent_weight").get<double>();
        u.baseline.config.sd_floor = b.at("sd_floor").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("user.json: ") + e.what());
    }
    return u;
}

// ---- evaluation --------------------------------------------------------------------

std::string_view to_string(Split split) { return split == Split::same ? "same" : "cross"; }

io::GazeSession evaluation_session(const RunConfig& config, const Cohort& cohort, int identity, Split split) {
    const auto i = static_cast<std::size_t>(identity);
    const auto& co = config.cohort;
    const std::string tag = "eval/" + cohort.ids[i] + "/" + std::string(to_string(split));
    const auto specs = plan_anomalies(co.session_s, co.calibration_s, config.eval.span_s, config.eval.spans_per_kind,
                                      seed_for(config, tag + "/anomalies"));
    if (split == Split::same) {
        const auto src = io::synthesize_session(cohort.profiles[i], co.session_s, co.source_rate_hz,
                                                seed_for(config, tag), {}, cohort.ids[i]);
        return io::resample_to_30hz(apply_anomalies(src, specs));
    }
    const auto native = io::synthesize_session(cohort.profiles[i], co.session_s, io::kModelRateHz,
                                               seed_for(config, tag), co.webcam, cohort.ids[i]);
    return apply_anomalies(native, specs);
}

const MethodRow& ExperimentReport::row(const std::string& method, Split split) const {
    for (const auto& r : rows) {
        if (r.method == method && r.split == split) return r;
    }
    throw UsageError("report has no row " + method + "/" + std::string(to_string(split)));
}

PopulationAe train_population_ae(const RunConfig& config, const PretrainData& data) {
    PopulationAe pop{ae::Autoencoder::make(config.eval.ae_hidden, config.eval.ae_latent, seed_for(config, "pop-ae/init")),
                     data.standardizer, 0.0, 1.0};
    const Eigen::MatrixXd x = flatten_all(data.windows);
    ae::AeTrainOptions opts{config.eval.ae_epochs, config.eval.ae_lr, 32, seed_for(config, "pop-ae/train")};
    ae::train(pop.model, x, opts);
    mean_sd(ae::reconstruction_errors(pop.model, x), config.scoring.sd_floor, pop.rec_mean, pop.rec_sd);
    return pop;
}

namespace {

scoring::AnomalyScores single_score(double z, double z_max, double t) {
    return scoring::scores_from_z({z, z, z}, z_max, t);
}

// A single reconstruction score has no factor split: a_overall is the squashed z itself.
void append_ae_scores(std::vector<scoring::ScoredWindow>& out, const Eigen::VectorXd& rec,
                      const std::vector<features::FeatureWindow>& windows, double mean, double sd, double z_max) {
    for (std::size_t j = 0; j < windows.size(); ++j) {
        const double z = (rec[static_cast<Eigen::Index>(j)] - mean) / sd;
        scoring::AnomalyScores s = single_score(z, z_max, windows[j].t_start);
        s.a_overall = std::clamp(z / z_max, 0.0, 1.0);
        s.zone = scoring::classify_zone(s.a_overall);
        out.push_back({s, windows[j].label.value_or(features::WindowLabel::normal)});
    }
}

void append_scores(std::vector<scoring::ScoredWindow>& out, const std::vector<scoring::AnomalyScores>& scores,
                   const std::vector<features::FeatureWindow>& windows) {
    for (std::size_t j = 0; j < windows.size(); ++j) {
        out.push_back({scores[j], windows[j].label.value_or(features::WindowLabel::normal)});
    }
}

double mean_normal_recon(const btfd::BtfdModel& model, const std::vector<features::FeatureWindow>& windows) {
    std::vector<features::FeatureWindow> normal;
    for (const auto& w : windows) {
        if (!features::is_anomalous(w.label.value_or(features::WindowLabel::normal))) normal.push_back(w);
    }
    return btfd::reconstruction_errors(model, btfd::make_input(normal)).mean();
}

}  // namespace

ExperimentReport evaluate(const RunConfig& config, const Cohort& cohort, const btfd::BtfdModel& meta_model,
                          const features::Standardizer& population, const PopulationAe& pop) {
    const double calib_s = config.cohort.calibration_s;
    const double z_max = config.scoring.z_max;
    ExperimentReport report;
    int wins = 0;
    for (Split split : {Split::same, Split::cross}) {
        std::vector<scoring::ScoredWindow> pop_w, pae_w, gf_w, gf0_w;
        double pae_ms = 0.0, gf_ms = 0.0;
        const auto held = cohort.heldout_indices();
        for (int i : held) {
            const io::GazeSession s30 = evaluation_session(config, cohort, i, split);
            const Calibration cal = calibrate(s30, calib_s, population);
            const auto query = query_windows(s30, cal, cal.standardizer, calib_s);

            // Pop-AE: shared model, population standardizer, population statistics.
            const auto pop_query = query_windows(s30, cal, pop.standardizer, calib_s);
            append_ae_scores(pop_w, ae::reconstruction_errors(pop.model, flatten_all(pop_query)), pop_query,
                             pop.rec_mean, pop.rec_sd, z_max);

            // P-AE-5s: the shared weights fine-tuned on the five calibration windows.
            auto t0 = std::chrono::steady_clock::now();
            ae::Autoencoder pae = pop.model;
            ae::train(pae, flatten_all(cal.support),
                      {config.eval.pae_epochs, config.eval.pae_lr, maml::kShots,
                       seed_for(config, "p-ae/" + cohort.ids[static_cast<std::size_t>(i)])});
            double pae_mean = 0.0, pae_sd = 1.0;
            mean_sd(ae::reconstruction_errors(pae, flatten_all(cal.reference)), config.scoring.sd_floor, pae_mean, pae_sd);
            pae_ms += elapsed_ms(t0);
            append_ae_scores(pae_w, ae::reconstruction_errors(pae, flatten_all(query)), query, pae_mean, pae_sd, z_max);

            // GazeFlow: theta* plus one inner step, and the alpha = 0 ablation on the same theta*.
            t0 = std::chrono::steady_clock::now();
            const auto seed = seed_for(config, "personalize/" + cohort.ids[static_cast<std::size_t>(i)]);
            const btfd::BtfdModel adapted = maml::personalize(meta_model, cal.support, config.maml.inner_lr, seed);
            const auto baseline = scoring::fit_baseline(adapted, cal.reference, config.scoring);
            gf_ms += elapsed_ms(t0);
            append_scores(gf_w, scoring::score_windows(adapted, baseline, query), query);

            const auto baseline0 = scoring::fit_baseline(meta_model, cal.reference, config.scoring);
            append_scores(gf0_w, scoring::score_windows(meta_model, baseline0, query), query);

            if (split == Split::same) {
                const double r_star = mean_normal_recon(meta_model, query);
                const double r_user = mean_normal_recon(adapted, query);
                report.recon_theta_star.push_back(r_star);
                report.recon_adapted.push_back(r_user);
                if (r_user <= r_star) ++wins;
            }
        }
        const double n = static_cast<double>(held.size());
        const double thr = config.eval.threshold;
        report.rows.push_back({"Pop-AE", split, scoring::evaluate(pop_w, thr), 0.0});
        report.rows.push_back({"P-AE-5s", split, scoring::evaluate(pae_w, thr), pae_ms / n});
        report.rows.push_back({"GazeFlow", split, scoring::evaluate(gf_w, thr), gf_ms / n});
        report.f1_alpha0[split == Split::same ? 0 : 1] = scoring::evaluate(gf0_w, thr).f1;
    }
    report.personalization_win_fraction =
        static_cast<double>(wins) / static_cast<double>(std::max<std::size_t>(1, report.recon_adapted.size()));
    return report;
}

std::string format_report(const ExperimentReport& report) {
    std::ostringstream out;
    out << std::left << std::setw(10) << "method" << std::setw(7) << "split" << std::right << std::setw(10)
        << "precision" << std::setw(8) << "recall" << std::setw(8) << "f1" << std::setw(8) << "attr" << std::setw(8)
        << "verg" << std::setw(8) << "sacc" << std::setw(8) << "fix" << std::setw(11) << "calib_ms" << '\n';
    for (const auto& r : report.rows) {
        const bool factors = r.method == "GazeFlow";
        auto attr = [&](double v) { return factors ? fmt(v, 3) : std::string("-"); };
        out << std::left << std::setw(10) << r.method << std::setw(7) << to_string(r.split) << std::right
            << std::setw(10) << fmt(r.metrics.precision, 3) << std::setw(8) << fmt(r.metrics.recall, 3) << std::setw(8)
            << fmt(r.metrics.f1, 3) << std::setw(8) << attr(r.metrics.attribution) << std::setw(8)
            << attr(r.metrics.attribution_by_kind[0]) << std::setw(8) << attr(r.metrics.attribution_by_kind[1])
            << std::setw(8) << attr(r.metrics.attribution_by_kind[2]) << std::setw(11) << fmt(r.calib_ms, 1) << '\n';
    }
    auto drop = [&](const std::string& m) {
        return report.row(m, Split::same).metrics.f1 - report.row(m, Split::cross).metrics.f1;
    };
    out << '\n'
        << "cross-resolution F1 drop: Pop-AE " << fmt(drop("Pop-AE"), 3) << ", P-AE-5s " << fmt(drop("P-AE-5s"), 3)
        << ", GazeFlow " << fmt(drop("GazeFlow"), 3) << '\n'
        << "GazeFlow without inner step (alpha = 0): F1 same " << fmt(report.f1_alpha0[0], 3) << ", cross "
        << fmt(report.f1_alpha0[1], 3) << '\n'
        << "adapted reconstruction <= meta reconstruction on " << fmt(100.0 * report.personalization_win_fraction, 1)
        << "% of held-out identities\n";
    return out.str();
}

// The CSV files carry the same rounding as the table so that both views agree.
std::string report_csv(const ExperimentReport& report) {
    std::ostringstream out;
    out << "method,split,precision,recall,f1,tp,fp,fn,tn,attribution,attr_vergence,attr_saccadic,attr_fixation,calib_ms\n";
    for (const auto& r : report.rows) {
        const auto& m = r.metrics;
        out << r.method << ',' << to_string(r.split) << ',' << fmt(m.precision, 3) << ',' << fmt(m.recall, 3) << ','
            << fmt(m.f1, 3) << ',' << m.tp << ',' << m.fp << ',' << m.fn << ',' << m.tn << ',';
        if (r.method == "GazeFlow") {
            out << fmt(m.attribution, 3) << ',' << fmt(m.attribution_by_kind[0], 3) << ','
                << fmt(m.attribution_by_kind[1], 3) << ',' << fmt(m.attribution_by_kind[2], 3);
        } else {
            out << ",,,";
        }
        out << ',' << fmt(r.calib_ms, 1) << '\n';
    }
    return out.str();
}

std::string summary_csv(const ExperimentReport& report) {
    auto drop = [&](const std::string& m) {
        return report.row(m, Split::same).metrics.f1 - report.row(m, Split::cross).metrics.f1;
    };
    std::ostringstream out;
    out << "key,value\n"
        << "f1_drop_pop_ae," << fmt(drop("Pop-AE"), 3) << '\n'
        << "f1_drop_p_ae_5s," << fmt(drop("P-AE-5s"), 3) << '\n'
        << "f1_drop_gazeflow," << fmt(drop("GazeFlow"), 3) << '\n'
        << "gazeflow_f1_alpha0_same," << fmt(report.f1_alpha0[0], 3) << '\n'
        << "gazeflow_f1_alpha0_cross," << fmt(report.f1_alpha0[1], 3) << '\n'
        << "personalization_win_percent," << fmt(100.0 * report.personalization_win_fraction, 1) << '\n';
    out << std::setprecision(6);
    for (std::size_t i = 0; i < report.recon_adapted.size(); ++i) {
        out << "recon_theta_star_" << i << ',' << report.recon_theta_star[i] << '\n'
            << "recon_adapted_" << i << ',' << report.recon_adapted[i] << '\n';
    }
    return out.str();
}

}  // namespace gazeflow::harness
