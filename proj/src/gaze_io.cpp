#include "gazeflow/gaze_io.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "gazeflow/error.h"
#include "gazeflow/rng.h"

namespace gazeflow::io {

namespace {

constexpr double kMaxAngle = 45.0;
constexpr double kFixationTau = 0.25;  // s, fixational noise correlation time
constexpr double kVergenceTau = 4.0;   // s
constexpr double kPupilTau = 2.0;      // s
constexpr double kPupilMeanMm = 3.5;

// Exactly discretised Ornstein-Uhlenbeck process; statistics do not depend
// on the sampling rate.
class OuProcess {
public:
    OuProcess(double tau, double sd, double dt, Rng& rng)
        : a_(std::exp(-dt / tau)), s_(sd * std::sqrt(1.0 - a_ * a_)), x_(sd * rng.normal()) {}
    double step(Rng& rng) {
        x_ = a_ * x_ + s_ * rng.normal();
        return x_;
    }
    double value() const { return x_; }

private:
    double a_;
    double s_;
    double x_;
};

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

bool parse_number(std::string_view field, double& out) {
    field = trim(field);
    if (field == "NaN" || field == "nan" || field == "NAN") {
        out = std::nan("");
        return true;
    }
    if (!field.empty() && field.front() == '+') field.remove_prefix(1);
    const auto* end = field.data() + field.size();
    const auto res = std::from_chars(field.data(), end, out);
    return res.ec == std::errc() && res.ptr == end && !field.empty();
}

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (v.size() % 2 == 1) return *mid;
    const double hi = *mid;
    const double lo = *std::max_element(v.begin(), mid);
    return 0.5 * (lo + hi);
}

double infer_rate(const std::vector<GazeSample>& samples) {
    if (samples.size() < 2) return 0.0;
    std::vector<double> dts;
    dts.reserve(samples.size() - 1);
    for (std::size_t i = 1; i < samples.size(); ++i) dts.push_back(samples[i].t - samples[i - 1].t);
    const double dt = median(std::move(dts));
    return std::round(1000.0 / dt) / 1000.0;
}

void check_monotonic(const std::vector<GazeSample>& samples) {
    for (std::size_t i = 1; i < samples.size(); ++i) {
        if (!(samples[i].t > samples[i - 1].t)) {
            throw ValidationError("timestamps not strictly increasing at sample " + std::to_string(i));
        }
    }
}

void read_sidecar(const std::filesystem::path& csv_path, GazeSession& session) {
    const auto meta = sidecar_path(csv_path);
    std::ifstream in(meta);
    if (!in) return;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto view = trim(line);
        if (view.empty() || view.front() == '#') continue;
        const auto eq = view.find('=');
        if (eq == std::string_view::npos) throw ParseError("sidecar line without '=' in " + meta.string(), lineno);
        const std::string key(trim(view.substr(0, eq)));
        const std::string value(trim(view.substr(eq + 1)));
        if (key == "identity_id") {
            session.identity_id = value;
        } else if (key == "rate_hz") {
            if (!parse_number(value, session.rate_hz)) throw ParseError("bad rate_hz in sidecar", lineno);
        } else if (key == "anomaly_span") {
            const auto parts = split(value, ',');
            AnomalySpan span;
            if (parts.size() != 3 || !parse_number(parts[0], span.start_s) || !parse_number(parts[1], span.end_s)) {
                throw ParseError("bad anomaly_span in sidecar", lineno);
            }
            try {
                span.kind = parse_anomaly_kind(trim(parts[2]));
            } catch (const Error&) {
                throw ParseError("unknown anomaly kind in sidecar", lineno);
            }
            session.anomaly_spans.push_back(span);
        } else if (key.rfind("meta.", 0) == 0) {
            session.metadata[key.substr(5)] = value;
        } else {
            throw ParseError("unknown sidecar key '" + key + "'", lineno);
        }
    }
}

GazeSession import_gazeflow(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    std::string line;
    std::size_t lineno = 1;
    if (!std::getline(in, line) || trim(line) != "t,lx,ly,rx,ry,pl,pr,valid") {
        throw ParseError("expected header t,lx,ly,rx,ry,pl,pr,valid", lineno);
    }
    GazeSession session;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const auto fields = split(line, ',');
        if (fields.size() != 8) throw ParseError("expected 8 fields", lineno);
        GazeSample s;
        double* targets[] = {&s.t, &s.lx, &s.ly, &s.rx, &s.ry, &s.pl, &s.pr};
        for (int k = 0; k < 7; ++k) {
            if (!parse_number(fields[k], *targets[k]) || !std::isfinite(*targets[k])) {
                throw ParseError("malformed number in column " + std::to_string(k + 1), lineno);
            }
        }
        const auto v = trim(fields[7]);
        if (v == "1") {
            s.valid = true;
        } else if (v == "0") {
            s.valid = false;
        } else {
            throw ParseError("valid must be 0 or 1", lineno);
        }
        session.samples.push_back(s);
    }
    check_monotonic(session.samples);
    session.identity_id = path.stem().string();
    read_sidecar(path, session);
    if (session.rate_hz <= 0.0) session.rate_hz = infer_rate(session.samples);
    return session;
}

GazeSession import_gazebase(const std::filesystem::path& path, const MonocularBridge& bridge) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    std::string line;
    std::size_t lineno = 1;
    if (!std::getline(in, line)) throw ParseError("empty file", lineno);
    const auto header = split(trim(line), ',');
    int col_n = -1, col_x = -1, col_y = -1, col_val = -1, col_dp = -1;
    for (std::size_t i = 0; i < header.size(); ++i) {
        const auto h = trim(header[i]);
        const int idx = static_cast<int>(i);
        if (h == "n") col_n = idx;
        else if (h == "x") col_x = idx;
        else if (h == "y") col_y = idx;
        else if (h == "val") col_val = idx;
        else if (h == "dP") col_dp = idx;
    }
    if (col_n < 0 || col_x < 0 || col_y < 0 || col_val < 0) {
        throw ParseError("gazebase header needs columns n,x,y,val", lineno);
    }

    struct Row {
        double n, x, y, dp;
        bool valid;
    };
    std::vector<Row> rows;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const auto fields = split(line, ',');
        if (fields.size() != header.size()) throw ParseError("field count does not match header", lineno);
        Row r{};
        double val = 0.0;
        if (!parse_number(fields[col_n], r.n) || !std::isfinite(r.n)) throw ParseError("malformed n", lineno);
        if (!parse_number(fields[col_x], r.x)) throw ParseError("malformed x", lineno);
        if (!parse_number(fields[col_y], r.y)) throw ParseError("malformed y", lineno);
        if (!parse_number(fields[col_val], val)) throw ParseError("malformed val", lineno);
        r.dp = 0.0;
        if (col_dp >= 0 && !parse_number(fields[col_dp], r.dp)) throw ParseError("malformed dP", lineno);
        r.valid = val == 0.0 && std::isfinite(r.x) && std::isfinite(r.y) && std::abs(r.x) <= kMaxAngle &&
                  std::abs(r.y) <= kMaxAngle;
        rows.push_back(r);
    }
    if (rows.empty()) throw ParseError("no samples", lineno);

    // Pupil units are device-specific; rescale so the median valid value is 3.5 mm.
    double pupil_scale = 0.0;
    if (col_dp >= 0) {
        std::vector<double> dps;
        for (const auto& r : rows)
            if (r.valid && std::isfinite(r.dp) && r.dp > 0.0) dps.push_back(r.dp);
        if (!dps.empty()) pupil_scale = kPupilMeanMm / median(std::move(dps));
    }

    GazeSession session;
    session.identity_id = path.stem().string();
    Rng rng(stable_hash(session.identity_id));
    const double offset = bridge.offset_mean + bridge.offset_sd * rng.normal();
    const double n0 = rows.front().n;
    GazeSample held{};
    held.pl = held.pr = kPupilMeanMm;
    bool have_held = false;
    for (const auto& r : rows) {
        GazeSample s;
        s.t = (r.n - n0) / 1000.0;
        double pupil = kPupilMeanMm;
        if (pupil_scale > 0.0 && std::isfinite(r.dp) && r.dp > 0.0) pupil = r.dp * pupil_scale;
        if (r.valid) {
            s.lx = r.x;
            s.ly = r.y;
            s.rx = r.x - offset + bridge.noise_sd * rng.normal();
            s.ry = r.y + bridge.noise_sd * rng.normal();
            s.rx = std::clamp(s.rx, -kMaxAngle, kMaxAngle);
            s.ry = std::clamp(s.ry, -kMaxAngle, kMaxAngle);
            s.pl = s.pr = pupil;
            s.valid = true;
            held = s;
            have_held = true;
        } else {
            // tracker-style hold of the last valid values
            s.lx = held.lx;
            s.ly = held.ly;
            s.rx = have_held ? held.rx : -offset;
            s.ry = held.ry;
            s.pl = held.pl;
            s.pr = held.pr;
            s.valid = false;
        }
        session.samples.push_back(s);
    }
    check_monotonic(session.samples);
    session.rate_hz = infer_rate(session.samples);
    session.metadata["right_eye_synthesized"] = "1";
    session.metadata["right_eye_offset_deg"] = format_double(offset);
    return session;
}

}  // namespace

std::string_view to_string(AnomalyKind kind) {
    switch (kind) {
        case AnomalyKind::vergence_drift: return "vergence_drift";
        case AnomalyKind::fixation_instability: return "fixation_instability";
        case AnomalyKind::saccadic_dysmetria: return "saccadic_dysmetria";
    }
    return "unknown";
}

AnomalyKind parse_anomaly_kind(std::string_view name) {
    for (auto k : kAllAnomalyKinds)
        if (to_string(k) == name) return k;
    throw UsageError("unknown anomaly kind '" + std::string(name) + "'");
}

double AnomalySpan::overlap(double a, double b) const {
    return std::max(0.0, std::min(b, end_s) - std::max(a, start_s));
}

double GazeSession::duration() const {
    if (samples.empty() || rate_hz <= 0.0) return 0.0;
    return samples.back().t - samples.front().t + 1.0 / rate_hz;
}

void validate(const GazeSession& session) {
    if (!(session.rate_hz >= 30.0 - 1e-6 && session.rate_hz <= 1000.0 + 1e-6)) {
        throw ValidationError("rate_hz outside [30, 1000]");
    }
    const auto& s = session.samples;
    check_monotonic(s);
    for (std::size_t i = 0; i < s.size(); ++i) {
        const auto& g = s[i];
        for (double a : {g.lx, g.ly, g.rx, g.ry}) {
            if (!std::isfinite(a) || std::abs(a) > kMaxAngle) {
                throw ValidationError("gaze angle outside +/-45 deg at sample " + std::to_string(i));
            }
        }
        if (g.valid && !(g.pl > 0.0 && g.pr > 0.0)) {
            throw ValidationError("non-positive pupil on valid sample " + std::to_string(i));
        }
    }
    if (s.size() >= 2) {
        std::vector<double> dts;
        dts.reserve(s.size() - 1);
        for (std::size_t i = 1; i < s.size(); ++i) dts.push_back(s[i].t - s[i - 1].t);
        const double dt = median(std::move(dts));
        const double nominal = 1.0 / session.rate_hz;
        if (std::abs(dt - nominal) > 0.05 * nominal) {
            throw ValidationError("median sample interval differs from 1/rate_hz by more than 5%");
        }
    }
    auto spans = session.anomaly_spans;
    std::sort(spans.begin(), spans.end(),
              [](const AnomalySpan& a, const AnomalySpan& b) { return a.start_s < b.start_s; });
    const double end = s.empty() ? 0.0 : s.front().t + session.duration();
    for (std::size_t i = 0; i < spans.size(); ++i) {
        if (!(spans[i].end_s > spans[i].start_s)) throw ValidationError("empty anomaly span");
        if (spans[i].start_s < -1e-9 || spans[i].end_s > end + 1e-9) {
            throw ValidationError("anomaly span outside session");
        }
        if (i > 0 && spans[i].start_s < spans[i - 1].end_s - 1e-12) {
            throw ValidationError("overlapping anomaly spans");
        }
    }
}

std::vector<IdentityProfile> sample_profiles(const CohortSpec& spec, int count, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> z(static_cast<std::size_t>(count));
    for (auto& v : z) v = rng.normal();
    // Standardise the draws so the cohort CV lands close to the requested one
    // even for small cohorts.
    if (count >= 2) {
        double m = 0.0;
        for (double v : z) m += v;
        m /= count;
        double var = 0.0;
        for (double v : z) var += (v - m) * (v - m);
        const double sd = std::sqrt(var / (count - 1));
        for (auto& v : z) v = (v - m) / sd;
    }
    const double sigma_ln = std::sqrt(std::log1p(spec.fixation_noise_cv * spec.fixation_noise_cv));
    std::vector<IdentityProfile> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        IdentityProfile p;
        p.fixation_noise_sd = spec.fixation_noise_median * std::exp(sigma_ln * z[static_cast<std::size_t>(i)]);
        p.saccade_rate = spec.saccade_rate_mean * std::exp(0.15 * rng.normal());
        p.saccade_amp_mean = spec.saccade_amp_mean * std::exp(0.15 * rng.normal());
        p.vergence_baseline = spec.vergence_baseline_mean * std::exp(0.2 * rng.normal());
        p.pupil_ratio_baseline = std::exp(spec.pupil_ratio_sd * rng.normal());
        p.drift_tendency = spec.drift_tendency_mean * std::exp(0.3 * rng.normal());
        p.blink_rate = rng.uniform(0.1, 0.3);
        out.push_back(p);
    }
    return out;
}

double main_sequence_duration_s(double amplitude_deg) { return (2.2 * amplitude_deg + 21.0) / 1000.0; }

GazeSession synthesize_session(const IdentityProfile& profile, double duration_s, double rate_hz,
                               std::uint64_t seed, const CaptureNoise& capture, std::string identity_id) {
    if (!(duration_s > 3.0)) throw UsageError("synthesize_session: duration_s must exceed 3 s");
    if (!(rate_hz >= 30.0 && rate_hz <= 1000.0)) throw UsageError("synthesize_session: rate_hz outside [30, 1000]");
    for (double v : {profile.fixation_noise_sd, profile.saccade_rate, profile.saccade_amp_mean,
                     profile.vergence_baseline, profile.pupil_ratio_baseline, profile.drift_tendency}) {
        if (!(v > 0.0)) throw UsageError("synthesize_session: profile fields must be positive");
    }

    const auto n = static_cast<std::size_t>(std::llround(duration_s * rate_hz));
    const double dt = 1.0 / rate_hz;
    Rng rng(seed);
    Rng capture_rng(mix_seed(seed, 0xCA97));

    OuProcess noise_x(kFixationTau, profile.fixation_noise_sd, dt, rng);
    OuProcess noise_y(kFixationTau, profile.fixation_noise_sd, dt, rng);
    const double verg_sd = profile.drift_tendency * std::sqrt(kVergenceTau);
    OuProcess verg_h(kVergenceTau, verg_sd, dt, rng);
    OuProcess verg_v(kVergenceTau, 0.3 * verg_sd, dt, rng);
    OuProcess pupil(kPupilTau, 0.25, dt, rng);

    const double interval_shape = 4.0;
    auto next_interval = [&]() { return rng.gamma(interval_shape, 1.0 / (interval_shape * profile.saccade_rate)); };

    double cx = rng.uniform(-5.0, 5.0);
    double cy = rng.uniform(-3.0, 3.0);
    double next_saccade = next_interval();
    bool in_saccade = false;
    double sac_t0 = 0.0, sac_dur = 0.0, from_x = 0.0, from_y = 0.0, to_x = 0.0, to_y = 0.0;

    const double blink_rate = std::clamp(profile.blink_rate, 0.0, 5.0);
    double next_blink = blink_rate > 0.0 ? rng.exponential(blink_rate) : 1e300;
    double blink_end = -1.0;

    const double sqrt_ratio = std::sqrt(profile.pupil_ratio_baseline);

    GazeSession session;
    session.identity_id = std::move(identity_id);
    session.rate_hz = rate_hz;
    session.samples.reserve(n);
    session.metadata["source"] = "synthetic";

    GazeSample last{};
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) * dt;

        if (!in_saccade && t >= next_saccade) {
            const double amp = std::clamp(profile.saccade_amp_mean * std::exp(0.25 * rng.normal() - 0.03125), 0.5, 20.0);
            const double theta = rng.uniform(0.0, 2.0 * M_PI);
            double dx = amp * std::cos(theta);
            double dy = amp * std::sin(theta);
            if (std::abs(cx + dx) > 15.0) dx = -dx;
            if (std::abs(cy + dy) > 10.0) dy = -dy;
            in_saccade = true;
            sac_t0 = next_saccade;
            sac_dur = main_sequence_duration_s(amp);
            from_x = cx;
            from_y = cy;
            to_x = cx + dx;
            to_y = cy + dy;
        }
        double px = cx, py = cy;
        if (in_saccade) {
            const double u = (t - sac_t0) / sac_dur;
            if (u >= 1.0) {
                cx = to_x;
                cy = to_y;
                px = cx;
                py = cy;
                in_saccade = false;
                next_saccade = sac_t0 + std::max(sac_dur + 0.1, next_interval());
            } else {
                const double s = 0.5 * (1.0 - std::cos(M_PI * std::max(0.0, u)));
                px = from_x + (to_x - from_x) * s;
                py = from_y + (to_y - from_y) * s;
            }
        }

        const double nx = noise_x.step(rng);
        const double ny = noise_y.step(rng);
        const double vh = profile.vergence_baseline + verg_h.step(rng);
        const double vv = verg_v.step(rng);
        const double p = std::max(1.0, kPupilMeanMm + pupil.step(rng));
        const double pn_l = 0.01 * rng.normal();
        const double pn_r = 0.01 * rng.normal();

        if (t >= next_blink && blink_end < next_blink) {
            blink_end = next_blink + rng.uniform(0.1, 0.3);
        }
        const bool blinking = t >= next_blink && t < blink_end;
        if (!blinking && blink_end >= next_blink && t >= blink_end) {
            next_blink = blink_end + rng.exponential(blink_rate);
        }

        GazeSample g;
        g.t = t;
        if (blinking && i > 0) {
            g = last;
            g.t = t;
            g.valid = false;
        } else {
            g.lx = std::clamp(px + nx + 0.5 * vh, -kMaxAngle, kMaxAngle);
            g.rx = std::clamp(px + nx - 0.5 * vh, -kMaxAngle, kMaxAngle);
            g.ly = std::clamp(py + ny + 0.5 * vv, -kMaxAngle, kMaxAngle);
            g.ry = std::clamp(py + ny - 0.5 * vv, -kMaxAngle, kMaxAngle);
            g.pl = p * sqrt_ratio + pn_l;
            g.pr = p / sqrt_ratio + pn_r;
            g.valid = true;
            if (capture.gaze_sd > 0.0) {
                g.lx = std::clamp(g.lx + capture.gaze_sd * capture_rng.normal(), -kMaxAngle, kMaxAngle);
                g.ly = std::clamp(g.ly + capture.gaze_sd * capture_rng.normal(), -kMaxAngle, kMaxAngle);
                g.rx = std::clamp(g.rx + capture.gaze_sd * capture_rng.normal(), -kMaxAngle, kMaxAngle);
                g.ry = std::clamp(g.ry + capture.gaze_sd * capture_rng.normal(), -kMaxAngle, kMaxAngle);
            }
            if (capture.pupil_sd > 0.0) {
                g.pl = std::max(0.5, g.pl + capture.pupil_sd * capture_rng.normal());
                g.pr = std::max(0.5, g.pr + capture.pupil_sd * capture_rng.normal());
            }
            last = g;
        }
        session.samples.push_back(g);
    }
    return session;
}

GazeSession decimate(const GazeSession& session, int factor) {
    if (factor < 2 || factor > 33) throw UsageError("decimate: factor must lie in [2, 33]");
    const double new_rate = session.rate_hz / factor;
    if (new_rate < 30.0 - 1e-9) throw DomainError("decimate: resulting rate below 30 Hz");
    GazeSession out;
    out.identity_id = session.identity_id;
    out.rate_hz = new_rate;
    out.anomaly_spans = session.anomaly_spans;
    out.metadata = session.metadata;
    out.samples.reserve(session.samples.size() / static_cast<std::size_t>(factor) + 1);
    for (std::size_t i = 0; i < session.samples.size(); i += static_cast<std::size_t>(factor)) {
        out.samples.push_back(session.samples[i]);
    }
    return out;
}

GazeSession slice(const GazeSession& session, double start_s, double end_s) {
    if (!(end_s > start_s)) throw UsageError("slice: empty interval");
    GazeSession out;
    out.identity_id = session.identity_id;
    out.rate_hz = session.rate_hz;
    out.metadata = session.metadata;
    const auto lo = std::lower_bound(session.samples.begin(), session.samples.end(), start_s,
                                     [](const GazeSample& g, double t) { return g.t < t; });
    const auto hi = std::lower_bound(lo, session.samples.end(), end_s,
                                     [](const GazeSample& g, double t) { return g.t < t; });
    out.samples.assign(lo, hi);
    for (const auto& span : session.anomaly_spans) {
        const double a = std::max(span.start_s, start_s);
        const double b = std::min(span.end_s, end_s);
        if (b > a) out.anomaly_spans.push_back({a, b, span.kind});
    }
    return out;
}

GazeSession resample_to_30hz(const GazeSession& session) {
    const auto& src = session.samples;
    if (src.empty()) throw DomainError("resample_to_30hz: empty session");
    const double t0 = src.front().t;
    const double span = src.back().t - t0;
    const double step = 1.0 / kModelRateHz;
    if (span < step - 1e-9) throw DomainError("resample_to_30hz: session shorter than one 30 Hz interval");
    const auto count = static_cast<std::size_t>(std::floor(span * kModelRateHz + 1e-9)) + 1;

    GazeSession out;
    out.identity_id = session.identity_id;
    out.rate_hz = kModelRateHz;
    out.anomaly_spans = session.anomaly_spans;
    out.metadata = session.metadata;
    out.samples.reserve(count);

    std::size_t j = 0;
    for (std::size_t k = 0; k < count; ++k) {
        const double tg = t0 + static_cast<double>(k) / kModelRateHz;
        while (j + 1 < src.size() && src[j + 1].t <= tg) ++j;
        GazeSample g;
        if (j + 1 >= src.size()) {
            g = src[j];
        } else {
            const auto& a = src[j];
            const auto& b = src[j + 1];
            const double w = (tg - a.t) / (b.t - a.t);
            g.lx = a.lx + w * (b.lx - a.lx);
            g.ly = a.ly + w * (b.ly - a.ly);
            g.rx = a.rx + w * (b.rx - a.rx);
            g.ry = a.ry + w * (b.ry - a.ry);
            g.pl = a.pl + w * (b.pl - a.pl);
            g.pr = a.pr + w * (b.pr - a.pr);
            g.valid = w <= 0.5 ? a.valid : b.valid;
        }
        g.t = tg;
        out.samples.push_back(g);
    }
    return out;
}

FileFormat parse_file_format(std::string_view name) {
    if (name == "gazeflow_csv") return FileFormat::gazeflow_csv;
    if (name == "gazebase_csv") return FileFormat::gazebase_csv;
    throw UsageError("unknown session format '" + std::string(name) + "'");
}

std::filesystem::path sidecar_path(const std::filesystem::path& csv_path) {
    auto p = csv_path;
    p.replace_extension(".meta");
    return p;
}

GazeSession import_session(const std::filesystem::path& path, FileFormat format) {
    GazeSession session = format == FileFormat::gazeflow_csv ? import_gazeflow(path) : import_gazebase(path, {});
    validate(session);
    return session;
}

void export_gazeflow_csv(const GazeSession& session, const std::filesystem::path& path) {
    std::ostringstream csv;
    csv << "t,lx,ly,rx,ry,pl,pr,valid\n";
    for (const auto& g : session.samples) {
        csv << format_double(g.t) << ',' << format_double(g.lx) << ',' << format_double(g.ly) << ','
            << format_double(g.rx) << ',' << format_double(g.ry) << ',' << format_double(g.pl) << ','
            << format_double(g.pr) << ',' << (g.valid ? '1' : '0') << '\n';
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << csv.str();

    std::ofstream meta(sidecar_path(path), std::ios::binary);
    if (!meta) throw Error("cannot write " + sidecar_path(path).string());
    meta << "identity_id=" << session.identity_id << '\n';
    meta << "rate_hz=" << format_double(session.rate_hz) << '\n';
    for (const auto& s : session.anomaly_spans) {
        meta << "anomaly_span=" << format_double(s.start_s) << ',' << format_double(s.end_s) << ','
             << to_string(s.kind) << '\n';
    }
    for (const auto& [k, v] : session.metadata) meta << "meta." << k << '=' << v << '\n';
}

void export_gazebase_csv(const GazeSession& session, const std::filesystem::path& path) {
    std::ostringstream csv;
    csv << "n,x,y,val,dP\n";
    for (const auto& g : session.samples) {
        csv << format_double(g.t * 1000.0) << ',' << format_double(g.lx) << ',' << format_double(g.ly) << ','
            << (g.valid ? 0 : 1) << ',' << format_double(g.pl) << '\n';
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << csv.str();
}

}  // namespace gazeflow::io
