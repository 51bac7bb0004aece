#include "gazeflow/sonification.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <thread>

#include <json.hpp>

#include "gazeflow/error.h"

namespace gazeflow::sonify {

using ordered_json = nlohmann::ordered_json;

NoteWeights note_weights(double mode_blend) {
    const double b = std::clamp(mode_blend, 0.0, 1.0);
    NoteWeights w{};
    for (int pc : kPentatonic) w[static_cast<std::size_t>(pc)] += 1.0 - b;
    for (int pc : kPhrygian) w[static_cast<std::size_t>(pc)] += b;
    double sum = 0.0;
    for (double v : w) sum += v;
    for (double& v : w) v /= sum;
    return w;
}

AudioParams map_params(const scoring::AnomalyScores& s, const AudioEndpoints& e) {
    auto unit = [](double v) { return std::clamp(v, 0.0, 1.0); };
    AudioParams p;
    p.t = s.t;
    p.mode_blend = unit(s.a_verg);
    p.note_rate_hz = e.note_rate_min * std::pow(e.note_rate_max / e.note_rate_min, unit(s.a_sacc));
    p.cutoff_hz = e.cutoff_bright_hz * std::pow(e.cutoff_muffled_hz / e.cutoff_bright_hz, unit(s.a_fix));
    p.reverb_wet = e.reverb_min + (e.reverb_max - e.reverb_min) * unit(s.a_overall);
    p.zone = s.zone;
    p.note_weights = note_weights(p.mode_blend);
    return p;
}

std::string format_message(const scoring::AnomalyScores& s, const AudioParams& p) {
    ordered_json j;
    j["t"] = p.t;
    j["a_verg"] = s.a_verg;
    j["a_sacc"] = s.a_sacc;
    j["a_fix"] = s.a_fix;
    j["a_overall"] = s.a_overall;
    j["zone"] = std::string(scoring::to_string(p.zone));
    j["mode_blend"] = p.mode_blend;
    j["note_rate_hz"] = p.note_rate_hz;
    j["cutoff_hz"] = p.cutoff_hz;
    j["reverb_wet"] = p.reverb_wet;
    j["note_weights"] = p.note_weights;
    return j.dump();
}

StreamMessage parse_message(std::string_view line) {
    static const char* const kFields[] = {"t",         "a_verg",     "a_sacc",       "a_fix",
                                          "a_overall", "zone",       "mode_blend",   "note_rate_hz",
                                          "cutoff_hz", "reverb_wet", "note_weights"};
    ordered_json j;
    try {
        j = ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("stream message is not JSON: ") + e.what());
    }
    if (!j.is_object() || j.size() != std::size(kFields)) throw ParseError("stream message has wrong field set");
    for (const char* f : kFields) {
        if (!j.contains(f)) throw ParseError(std::string("stream message lacks field ") + f);
        if (std::string_view(f) == "zone") {
            if (!j[f].is_string()) throw ParseError("zone must be a string");
        } else if (std::string_view(f) == "note_weights") {
            if (!j[f].is_array() || j[f].size() != 12) throw ParseError("note_weights must hold 12 numbers");
        } else if (!j[f].is_number()) {
            throw ParseError(std::string("field ") + f + " must be numeric");
        }
    }
    StreamMessage m;
    m.t = j["t"].get<double>();
    m.a_verg = j["a_verg"].get<double>();
    m.a_sacc = j["a_sacc"].get<double>();
    m.a_fix = j["a_fix"].get<double>();
    m.a_overall = j["a_overall"].get<double>();
    m.zone = j["zone"].get<std::string>();
    m.mode_blend = j["mode_blend"].get<double>();
    m.note_rate_hz = j["note_rate_hz"].get<double>();
    m.cutoff_hz = j["cutoff_hz"].get<double>();
    m.reverb_wet = j["reverb_wet"].get<double>();
    for (std::size_t i = 0; i < 12; ++i) {
        if (!j["note_weights"][i].is_number()) throw ParseError("note_weights must hold 12 numbers");
        m.note_weights[i] = j["note_weights"][i].get<double>();
    }
    return m;
}

void OstreamSink::write(const std::string& line) {
    out_ << line << '\n';
    out_.flush();
    if (!out_) throw IoError("stream sink write failed");
}

void TeeSink::write(const std::string& line) {
    for (Sink* s : sinks_) s->write(line);
}

void InjectionQueue::push(const maml::AnomalySpec& spec) {
    std::lock_guard<std::mutex> lock(mutex_);
    pending_.push_back(spec);
}

std::vector<maml::AnomalySpec> InjectionQueue::drain() {
    std::lock_guard<std::mutex> lock(mutex_);
    std::vector<maml::AnomalySpec> out(pending_.begin(), pending_.end());
    pending_.clear();
    return out;
}

void InjectionQueue::set_clock(double replay_t, double end_t) {
    replay_t_.store(replay_t);
    end_t_.store(end_t);
}

namespace {

std::string reply_error(const std::string& message) {
    ordered_json j;
    j["ok"] = false;
    j["err"] = message;
    return j.dump();
}

}  // namespace

std::string handle_control(std::string_view line, InjectionQueue& queue) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
        return reply_error("malformed JSON");
    }
    if (!j.is_object()) return reply_error("command must be a JSON object");
    if (!j.contains("cmd") || !j["cmd"].is_string()) return reply_error("missing cmd");
    if (j["cmd"].get<std::string>() != "inject") return reply_error("unknown cmd " + j["cmd"].get<std::string>());
    for (const char* f : {"kind", "magnitude", "duration_s"}) {
        if (!j.contains(f)) return reply_error(std::string("missing field ") + f);
    }
    if (!j["kind"].is_string()) return reply_error("kind must be a string");
    if (!j["magnitude"].is_number() || !j["duration_s"].is_number()) {
        return reply_error("magnitude and duration_s must be numbers");
    }
    maml::AnomalySpec spec;
    try {
        spec.kind = io::parse_anomaly_kind(j["kind"].get<std::string>());
    } catch (const Error&) {
        return reply_error("unknown kind " + j["kind"].get<std::string>());
    }
    spec.magnitude = j["magnitude"].get<double>();
    spec.duration_s = j["duration_s"].get<double>();
    try {
        maml::check_magnitude(spec);
    } catch (const ValidationError& e) {
        return reply_error(e.what());
    }
    const double min_duration = spec.kind == io::AnomalyKind::vergence_drift ? 2.0 * maml::kVergenceRampS : 0.1;
    if (!(spec.duration_s >= min_duration)) return reply_error("duration_s too short");
    if (queue.replay_time() + spec.duration_s > queue.end_time()) {
        return reply_error("injection does not fit into the remaining session");
    }
    spec.onset_s = queue.replay_time();
    queue.push(spec);
    return R"({"ok":true})";
}

namespace {

constexpr std::size_t kStabilityRows = 8;  // trailing rows needed by fix_stability

scoring::AnomalyScores score_tail(const io::GazeSession& s30, std::size_t end, const StreamContext& ctx) {
    const std::size_t need = static_cast<std::size_t>(features::kWindowReal) + kStabilityRows;
    const std::size_t begin = end > need ? end - need : 0;
    io::GazeSession part;
    part.identity_id = s30.identity_id;
    part.rate_hz = s30.rate_hz;
    part.samples.assign(s30.samples.begin() + static_cast<std::ptrdiff_t>(begin),
                        s30.samples.begin() + static_cast<std::ptrdiff_t>(end));
    const auto feats = features::extract_features(part, ctx.interocular);
    const auto window = ctx.standardizer.apply(features::window_from_tail(feats, s30.identity_id));
    return scoring::score_window(*ctx.model, ctx.baseline, window);
}

}  // namespace

StreamSummary emit_stream(const io::GazeSession& session, const StreamContext& ctx, Sink& sink,
                          const StreamOptions& options) {
    if (ctx.model == nullptr) throw UsageError("emit_stream: no personalized model");
    if (!(options.tick_hz > 0.0)) throw UsageError("emit_stream: tick rate must be positive");
    if (session.samples.empty()) throw DomainError("emit_stream: empty session");
    io::GazeSession s30 = std::abs(session.rate_hz - io::kModelRateHz) < 1e-9 ? session : io::resample_to_30hz(session);
    const double t0 = s30.samples.front().t;
    const double end = t0 + s30.duration();
    const auto ticks = static_cast<long>(std::floor(s30.duration() * options.tick_hz + 1e-9));

    scoring::SmoothState state;
    state.alpha = ctx.smooth_alpha;
    state.zones = ctx.zones;
    StreamSummary summary;
    const auto wall_start = std::chrono::steady_clock::now();

    for (long k = 1; k <= ticks; ++k) {
        const double t = static_cast<double>(k) / options.tick_hz;
        const double ta = t0 + t;
        if (options.injections != nullptr) {
            options.injections->set_clock(ta, end);
            for (auto spec : options.injections->drain()) {
                spec.onset_s = std::max(spec.onset_s, ta);
                spec.duration_s = std::min(spec.duration_s, end - spec.onset_s);
                try {
                    s30 = maml::inject(s30, spec).session;
                    summary.applied.push_back(spec);
                } catch (const Error&) {
                    // Overlapping or no longer fitting: dropped, the stream continues.
                }
            }
        }
        const auto upto = static_cast<std::size_t>(
            std::upper_bound(s30.samples.begin(), s30.samples.end(), ta + 1e-9,
                             [](double v, const io::GazeSample& g) { return v < g.t; }) -
            s30.samples.begin());
        scoring::AnomalyScores raw;
        if (upto >= static_cast<std::size_t>(features::kWindowReal)) raw = score_tail(s30, upto, ctx);
        raw.t = t;
        const scoring::AnomalyScores smoothed = scoring::smooth(state, raw);
        const AudioParams params = map_params(smoothed, ctx.endpoints);

        if (options.speed > 0.0) {
            std::this_thread::sleep_until(wall_start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                                           std::chrono::duration<double>(t / options.speed)));
        }
        sink.write(format_message(smoothed, params));
        ++summary.messages;
    }
    return summary;
}

}  // namespace gazeflow::sonify
