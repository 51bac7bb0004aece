#include "gazeflow/config.h"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <variant>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "gazeflow/error.h"

namespace gazeflow::harness {

namespace {

using Target = std::variant<double*, int*, bool*, std::uint64_t*, std::filesystem::path*>;

struct Binding {
    std::string section;
    std::string key;
    Target target;
};

// Every configurable key, in rendering order.
std::vector<Binding> bindings(RunConfig& c) {
    auto& co = c.cohort;
    auto& b = c.btfd;
    auto& cb = c.cbp;
    auto& m = c.maml;
    auto& e = c.eval;
    return {
        {"seed", "master", &c.seed},
        {"cohort", "train_identities", &co.train_identities},
        {"cohort", "heldout_identities", &co.heldout_identities},
        {"cohort", "session_s", &co.session_s},
        {"cohort", "source_rate_hz", &co.source_rate_hz},
        {"cohort", "sessions_per_identity", &co.sessions_per_identity},
        {"cohort", "calibration_s", &co.calibration_s},
        {"cohort", "fixation_noise_median", &co.population.fixation_noise_median},
        {"cohort", "fixation_noise_cv", &co.population.fixation_noise_cv},
        {"cohort", "saccade_rate_mean", &co.population.saccade_rate_mean},
        {"cohort", "saccade_amp_mean", &co.population.saccade_amp_mean},
        {"cohort", "vergence_baseline_mean", &co.population.vergence_baseline_mean},
        {"cohort", "pupil_ratio_sd", &co.population.pupil_ratio_sd},
        {"cohort", "drift_tendency_mean", &co.population.drift_tendency_mean},
        {"cohort", "webcam_gaze_sd", &co.webcam.gaze_sd},
        {"cohort", "webcam_pupil_sd", &co.webcam.pupil_sd},
        {"cohort", "task_sessions", &co.task_sessions},
        {"cohort", "task_spans_per_kind", &co.task_spans_per_kind},
        {"cohort", "task_session_s", &co.task_session_s},
        {"btfd", "beta_kl", &b.model.beta_kl},
        {"btfd", "gamma_tc", &b.model.gamma_tc},
        {"btfd", "hidden", &b.model.hidden},
        {"btfd", "epochs", &b.train.epochs},
        {"btfd", "lr", &b.train.lr},
        {"btfd", "batch_size", &b.train.batch_size},
        {"btfd", "window_hop_s", &b.window_hop_s},
        {"cbp", "enabled", &c.cbp_enabled},
        {"cbp", "temperature", &cb.temperature},
        {"cbp", "projection_dim", &cb.projection_dim},
        {"cbp", "btfd_weight", &cb.btfd_weight},
        {"cbp", "epochs", &cb.epochs},
        {"cbp", "batches_per_epoch", &cb.batches_per_epoch},
        {"cbp", "pairs_per_batch", &cb.pairs_per_batch},
        {"cbp", "lr", &cb.lr},
        {"cbp", "min_separation_s", &cb.min_separation_s},
        {"cbp", "factor_min", &cb.augment.factor_min},
        {"cbp", "factor_max", &cb.augment.factor_max},
        {"cbp", "mask_min", &cb.augment.mask_min},
        {"cbp", "mask_max", &cb.augment.mask_max},
        {"maml", "inner_lr", &m.inner_lr},
        {"maml", "outer_lr", &m.outer_lr},
        {"maml", "inner_steps", &m.inner_steps},
        {"maml", "meta_batch", &m.meta_batch},
        {"maml", "first_order", &m.first_order},
        {"maml", "epochs", &m.epochs},
        {"maml", "margin", &m.detection.margin},
        {"maml", "attribution_margin", &m.detection.attribution_margin},
        {"maml", "attribution_weight", &m.detection.attribution_weight},
        {"maml", "btfd_weight", &m.btfd_weight},
        {"scoring", "z_max", &c.scoring.z_max},
        {"scoring", "latent_weight", &c.scoring.latent_weight},
        {"scoring", "sd_floor", &c.scoring.sd_floor},
        {"scoring", "zone_mild", &c.zones.mild},
        {"scoring", "zone_alert", &c.zones.alert},
        {"scoring", "zone_urgent", &c.zones.urgent},
        {"scoring", "smooth_alpha", &c.smooth_alpha},
        {"scoring", "update_hz", &c.update_hz},
        {"audio", "note_rate_min", &c.audio.note_rate_min},
        {"audio", "note_rate_max", &c.audio.note_rate_max},
        {"audio", "cutoff_bright_hz", &c.audio.cutoff_bright_hz},
        {"audio", "cutoff_muffled_hz", &c.audio.cutoff_muffled_hz},
        {"audio", "reverb_min", &c.audio.reverb_min},
        {"audio", "reverb_max", &c.audio.reverb_max},
        {"eval", "spans_per_kind", &e.spans_per_kind},
        {"eval", "span_s", &e.span_s},
        {"eval", "threshold", &e.threshold},
        {"eval", "ae_hidden", &e.ae_hidden},
        {"eval", "ae_latent", &e.ae_latent},
        {"eval", "ae_epochs", &e.ae_epochs},
        {"eval", "ae_lr", &e.ae_lr},
        {"eval", "pae_epochs", &e.pae_epochs},
        {"eval", "pae_lr", &e.pae_lr},
        {"paths", "out_dir", &c.out_dir},
    };
}

template <typename T>
T convert(const std::string& name, const std::string& text) {
    std::istringstream in(text);
    T value{};
    in >> value;
    if (in.fail() || !(in >> std::ws).eof()) throw UsageError("config: bad value '" + text + "' for " + name);
    return value;
}

bool convert_bool(const std::string& name, const std::string& text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw UsageError("config: bad boolean '" + text + "' for " + name);
}

void require(bool ok, const std::string& what) {
    if (!ok) throw UsageError("config: " + what);
}

std::string render(const Target& t) {
    std::ostringstream out;
    out.precision(17);
    std::visit(
        [&out](auto* p) {
            using P = std::remove_pointer_t<decltype(p)>;
            if constexpr (std::is_same_v<P, bool>) {
                out << (*p ? "true" : "false");
            } else if constexpr (std::is_same_v<P, std::filesystem::path>) {
                out << p->string();
            } else {
                out << *p;
            }
        },
        t);
    return out.str();
}

}  // namespace

void validate(const RunConfig& c) {
    const auto& co = c.cohort;
    require(co.train_identities >= 8, "cohort.train_identities must be at least 8");
    require(co.heldout_identities >= 1, "cohort.heldout_identities must be at least 1");
    require(co.calibration_s >= 15.0, "cohort.calibration_s must be at least 15");
    require(co.session_s >= co.calibration_s + 15.0, "cohort.session_s must exceed calibration_s by 15 s");
    require(co.source_rate_hz >= 60.0 && co.source_rate_hz <= 1000.0, "cohort.source_rate_hz must lie in [60, 1000]");
    require(co.sessions_per_identity >= 1, "cohort.sessions_per_identity must be positive");
    require(co.population.fixation_noise_median > 0.0, "cohort.fixation_noise_median must be positive");
    require(co.population.fixation_noise_cv >= 0.0 && co.population.fixation_noise_cv <= 2.0,
            "cohort.fixation_noise_cv must lie in [0, 2]");
    require(co.population.saccade_rate_mean > 0.0 && co.population.saccade_amp_mean > 0.0 &&
                co.population.vergence_baseline_mean > 0.0 && co.population.drift_tendency_mean > 0.0,
            "cohort population means must be positive");
    require(co.population.pupil_ratio_sd >= 0.0, "cohort.pupil_ratio_sd must be non-negative");
    require(co.webcam.gaze_sd >= 0.0 && co.webcam.pupil_sd >= 0.0, "cohort webcam noise must be non-negative");
    require(co.task_sessions >= 1, "cohort.task_sessions must be positive");
    require(co.task_spans_per_kind >= 1, "cohort.task_spans_per_kind must be positive");
    require(co.task_session_s >= co.calibration_s + 15.0, "cohort.task_session_s must exceed calibration_s by 15 s");

    const auto& b = c.btfd;
    require(b.model.beta_kl >= 0.0 && b.model.gamma_tc >= 0.0, "btfd.beta_kl and btfd.gamma_tc must be non-negative");
    require(b.model.hidden >= 1, "btfd.hidden must be positive");
    require(b.train.epochs >= 0 && b.train.lr >= 0.0, "btfd.epochs and btfd.lr must be non-negative");
    require(b.train.batch_size >= 2, "btfd.batch_size must be at least 2");
    require(b.window_hop_s > 0.0, "btfd.window_hop_s must be positive");

    const auto& cb = c.cbp;
    require(cb.temperature > 0.0, "cbp.temperature must be positive");
    require(cb.projection_dim >= 1, "cbp.projection_dim must be positive");
    require(cb.btfd_weight >= 0.0 && cb.lr >= 0.0 && cb.epochs >= 0, "cbp weights, lr and epochs must be non-negative");
    require(cb.batches_per_epoch >= 1 && cb.pairs_per_batch >= 2, "cbp batching needs >= 1 batch of >= 2 pairs");
    require(cb.min_separation_s >= 0.0, "cbp.min_separation_s must be non-negative");
    require(cb.augment.factor_min >= 2 && cb.augment.factor_max <= 33 && cb.augment.factor_min <= cb.augment.factor_max,
            "cbp decimation factors must satisfy 2 <= min <= max <= 33");
    require(cb.augment.mask_min >= 0.0 && cb.augment.mask_min <= cb.augment.mask_max && cb.augment.mask_max < 1.0,
            "cbp mask fractions must satisfy 0 <= min <= max < 1");
    require(co.session_s >= cb.min_separation_s + cb.augment.crop_s, "cohort.session_s too short for cbp pairs");

    const auto& m = c.maml;
    require(m.inner_lr > 0.0 && m.outer_lr > 0.0, "maml.inner_lr and maml.outer_lr must be positive");
    require(m.inner_steps == 1, "maml.inner_steps must be 1");
    require(m.meta_batch >= 1 && m.epochs >= 0, "maml.meta_batch must be positive and maml.epochs non-negative");
    require(m.detection.attribution_weight >= 0.0, "maml.attribution_weight must be non-negative");

    require(c.scoring.z_max > 0.0, "scoring.z_max must be positive");
    require(c.scoring.latent_weight >= 0.0 && c.scoring.latent_weight <= 1.0, "scoring.latent_weight must lie in [0, 1]");
    require(c.scoring.sd_floor > 0.0, "scoring.sd_floor must be positive");
    require(0.0 < c.zones.mild && c.zones.mild < c.zones.alert && c.zones.alert < c.zones.urgent && c.zones.urgent < 1.0,
            "zone bounds must satisfy 0 < mild < alert < urgent < 1");
    require(c.smooth_alpha > 0.0 && c.smooth_alpha <= 1.0, "scoring.smooth_alpha must lie in (0, 1]");
    require(c.update_hz > 0.0, "scoring.update_hz must be positive");

    const auto& a = c.audio;
    require(a.note_rate_min > 0.0 && a.note_rate_max > 0.0, "audio note rates must be positive");
    require(a.cutoff_bright_hz > 0.0 && a.cutoff_muffled_hz > 0.0, "audio cutoffs must be positive");
    require(a.reverb_min >= 0.0 && a.reverb_max <= 1.0, "audio reverb levels must lie in [0, 1]");

    const auto& e = c.eval;
    require(e.spans_per_kind >= 1, "eval.spans_per_kind must be positive");
    require(e.span_s >= 2.0 * maml::kVergenceRampS, "eval.span_s must be at least 1 s");
    require(e.threshold > 0.0 && e.threshold < 1.0, "eval.threshold must lie in (0, 1)");
    require(e.ae_hidden >= 1 && e.ae_latent >= 1, "eval autoencoder widths must be positive");
    require(e.ae_epochs >= 0 && e.pae_epochs >= 0 && e.ae_lr >= 0.0 && e.pae_lr >= 0.0,
            "eval autoencoder epochs and learning rates must be non-negative");
    require(!c.out_dir.empty(), "paths.out_dir must not be empty");
}

RunConfig parse_config(const std::string& ini_text) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        std::istringstream in(ini_text);
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ParseError("config: " + e.message(), e.line());
    }
    RunConfig config;
    std::map<std::string, std::map<std::string, Target>> index;
    for (auto& b : bindings(config)) index[b.section].emplace(b.key, b.target);

    for (const auto& [section, body] : tree) {
        auto sec = index.find(section);
        if (sec == index.end()) throw UsageError("config: unknown section [" + section + "]");
        if (body.empty() && !body.data().empty()) throw UsageError("config: key outside a section: " + section);
        for (const auto& [key, node] : body) {
            auto it = sec->second.find(key);
            if (it == sec->second.end()) throw UsageError("config: unknown key " + section + "." + key);
            const std::string name = section + "." + key;
            const std::string text = node.data();
            std::visit(
                [&](auto* p) {
                    using P = std::remove_pointer_t<decltype(p)>;
                    if constexpr (std::is_same_v<P, bool>) {
                        *p = convert_bool(name, text);
                    } else if constexpr (std::is_same_v<P, std::filesystem::path>) {
                        *p = text;
                    } else {
                        *p = convert<P>(name, text);
                    }
                },
                it->second);
        }
    }
    validate(config);
    return config;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("config: cannot open " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str());
}

std::string to_ini(const RunConfig& config) {
    RunConfig copy = config;
    std::ostringstream out;
    std::string section;
    for (const auto& b : bindings(copy)) {
        if (b.section != section) {
            if (!section.empty()) out << '\n';
            section = b.section;
            out << '[' << section << "]\n";
        }
        out << b.key << " = " << render(b.target) << '\n';
    }
    return out.str();
}

}  // namespace gazeflow::harness
