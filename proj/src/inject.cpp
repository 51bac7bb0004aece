#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "gazeflow/error.h"
#include "gazeflow/maml.h"

namespace gazeflow::maml {

namespace {

constexpr double kMaxAngle = 45.0;
constexpr double kMinSaccadeAmplitude = 0.5;  // degrees; smaller detections are noise
constexpr double kDysmetriaRampOutS = 0.25;
constexpr double kDysmetriaTailS = 0.1;

double clamp_angle(double v) { return std::clamp(v, -kMaxAngle, kMaxAngle); }

double cyc_x(const io::GazeSample& g) { return 0.5 * (g.lx + g.rx); }
double cyc_y(const io::GazeSample& g) { return 0.5 * (g.ly + g.ry); }

// Index range [first, last) of samples whose timestamp lies in the spec's span.
std::pair<std::size_t, std::size_t> span_indices(const io::GazeSession& s, double a, double b) {
    const auto lo = std::lower_bound(s.samples.begin(), s.samples.end(), a,
                                     [](const io::GazeSample& g, double t) { return g.t < t; });
    const auto hi = std::upper_bound(lo, s.samples.end(), b,
                                     [](double t, const io::GazeSample& g) { return t < g.t; });
    return {static_cast<std::size_t>(lo - s.samples.begin()), static_cast<std::size_t>(hi - s.samples.begin())};
}

io::GazeSession prepare(const io::GazeSession& session, const AnomalySpec& spec, bool enforce_range,
                        io::AnomalyKind expected) {
    if (spec.kind != expected) throw UsageError("injector called with a spec of another kind");
    if (enforce_range) check_magnitude(spec);
    if (session.samples.empty()) throw DomainError("inject: empty session");
    if (!(spec.duration_s > 0.0)) throw DomainError("inject: duration must be positive");
    const double t0 = session.samples.front().t;
    const double t1 = t0 + session.duration();
    const double a = spec.onset_s;
    const double b = spec.onset_s + spec.duration_s;
    if (a < t0 - 1e-9 || b > t1 + 1e-9) throw DomainError("inject: anomaly span exceeds the session");
    for (const auto& span : session.anomaly_spans) {
        if (span.overlap(a, b) > 0.0) throw DomainError("inject: span overlaps an existing anomaly span");
    }
    io::GazeSession out = session;
    out.anomaly_spans.push_back({a, b, spec.kind});
    std::sort(out.anomaly_spans.begin(), out.anomaly_spans.end(),
              [](const io::AnomalySpan& x, const io::AnomalySpan& y) { return x.start_s < y.start_s; });
    int n = 0;
    while (out.metadata.count("injection." + std::to_string(n)) > 0) ++n;
    out.metadata["injection." + std::to_string(n)] = format_spec(spec);
    return out;
}

}  // namespace

std::pair<double, double> magnitude_range(io::AnomalyKind kind) {
    switch (kind) {
        case io::AnomalyKind::vergence_drift: return {2.0, 5.0};
        case io::AnomalyKind::fixation_instability: return {2.0, 4.0};
        case io::AnomalyKind::saccadic_dysmetria: return {0.2, 0.5};
    }
    return {0.0, 0.0};
}

void check_magnitude(const AnomalySpec& spec) {
    const auto [lo, hi] = magnitude_range(spec.kind);
    const double m = spec.kind == io::AnomalyKind::saccadic_dysmetria ? std::abs(spec.magnitude) : spec.magnitude;
    if (!(m >= lo && m <= hi)) {
        std::ostringstream msg;
        msg << to_string(spec.kind) << " magnitude " << spec.magnitude << " outside [" << lo << ", " << hi << "]";
        throw ValidationError(msg.str());
    }
}

std::vector<bool> saccade_mask(const io::GazeSession& session, double threshold) {
    const auto& s = session.samples;
    const std::size_t n = s.size();
    std::vector<bool> raw(n, false), mask(n, false);
    if (n < 2) return mask;
    const auto h = static_cast<std::size_t>(std::max(1.0, std::round(0.01 * session.rate_hz)));
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i >= h ? i - h : 0;
        const std::size_t hi = std::min(n - 1, i + h);
        const double dt = s[hi].t - s[lo].t;
        if (dt <= 0.0) continue;
        const double v = std::hypot(cyc_x(s[hi]) - cyc_x(s[lo]), cyc_y(s[hi]) - cyc_y(s[lo])) / dt;
        raw[i] = v > threshold;
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!raw[i]) continue;
        const std::size_t lo = i >= h ? i - h : 0;
        const std::size_t hi = std::min(n - 1, i + h);
        for (std::size_t k = lo; k <= hi; ++k) mask[k] = true;
    }
    return mask;
}

InjectionResult inject_vergence_drift(const io::GazeSession& session, const AnomalySpec& spec, bool enforce_range) {
    if (spec.duration_s < 2.0 * kVergenceRampS) {
        throw DomainError("inject_vergence_drift: duration must cover both 0.5 s ramps");
    }
    InjectionResult r{prepare(session, spec, enforce_range, io::AnomalyKind::vergence_drift), 0, {}};
    const double a = spec.onset_s;
    const double d = spec.duration_s;
    const auto [first, last] = span_indices(r.session, a, a + d);
    for (std::size_t i = first; i < last; ++i) {
        auto& g = r.session.samples[i];
        const double u = g.t - a;
        double ramp = 1.0;
        if (u < kVergenceRampS) ramp = u / kVergenceRampS;
        else if (u > d - kVergenceRampS) ramp = (d - u) / kVergenceRampS;
        g.rx = clamp_angle(g.rx + spec.magnitude * std::clamp(ramp, 0.0, 1.0));
    }
    return r;
}

InjectionResult inject_fixation_instability(const io::GazeSession& session, const AnomalySpec& spec,
                                            bool enforce_range) {
    if (!(spec.magnitude > 0.0)) throw ValidationError("fixation_instability multiplier must be positive");
    InjectionResult r{prepare(session, spec, enforce_range, io::AnomalyKind::fixation_instability), 0, {}};
    const double gain = std::sqrt(spec.magnitude) - 1.0;
    const auto mask = saccade_mask(session);
    auto& s = r.session.samples;
    const auto [first, last] = span_indices(r.session, spec.onset_s, spec.onset_s + spec.duration_s);

    std::size_t i = first;
    while (i < last) {
        if (mask[i]) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < last && !mask[j]) ++j;
        double mx = 0.0, my = 0.0;
        int count = 0;
        for (std::size_t k = i; k < j; ++k) {
            if (!s[k].valid) continue;
            mx += cyc_x(s[k]);
            my += cyc_y(s[k]);
            ++count;
        }
        if (count > 0) {
            mx /= count;
            my /= count;
            for (std::size_t k = i; k < j; ++k) {
                if (!s[k].valid) continue;
                const double dx = gain * (cyc_x(s[k]) - mx);
                const double dy = gain * (cyc_y(s[k]) - my);
                s[k].lx = clamp_angle(s[k].lx + dx);
                s[k].rx = clamp_angle(s[k].rx + dx);
                s[k].ly = clamp_angle(s[k].ly + dy);
                s[k].ry = clamp_angle(s[k].ry + dy);
            }
        }
        i = j;
    }
    return r;
}

InjectionResult inject_saccadic_dysmetria(const io::GazeSession& session, const AnomalySpec& spec,
                                          bool enforce_range) {
    InjectionResult r{prepare(session, spec, enforce_range, io::AnomalyKind::saccadic_dysmetria), 0, {}};
    const double g = spec.magnitude;
    const double span_end = spec.onset_s + spec.duration_s;
    const auto mask = saccade_mask(session);
    const auto& src = session.samples;
    auto& s = r.session.samples;
    const auto [first, last] = span_indices(r.session, spec.onset_s, span_end);

    auto shift = [&](std::size_t k, double ox, double oy) {
        s[k].lx = clamp_angle(src[k].lx + ox);
        s[k].rx = clamp_angle(src[k].rx + ox);
        s[k].ly = clamp_angle(src[k].ly + oy);
        s[k].ry = clamp_angle(src[k].ry + oy);
    };

    double ox = 0.0, oy = 0.0;  // landing error carried into the current fixation
    double last_change = spec.onset_s;
    std::size_t i = first;
    while (i < last) {
        if (!mask[i] || i == 0 || mask[i - 1]) {
            if (ox != 0.0 || oy != 0.0) shift(i, ox, oy);
            ++i;
            continue;
        }
        std::size_t e = i;
        while (e + 1 < last && mask[e + 1]) ++e;
        const bool closed = e + 1 < src.size() && !mask[e + 1] && src[e].t <= span_end - kDysmetriaTailS;
        const double fx = cyc_x(src[i - 1]), fy = cyc_y(src[i - 1]);
        const double dx = cyc_x(src[e]) - fx, dy = cyc_y(src[e]) - fy;
        const double d2 = dx * dx + dy * dy;
        if (!closed || d2 < kMinSaccadeAmplitude * kMinSaccadeAmplitude) {
            for (std::size_t k = i; k <= e; ++k) {
                if (ox != 0.0 || oy != 0.0) shift(k, ox, oy);
            }
            i = e + 1;
            continue;
        }
        // Offset grows along the saccade from the carried error to g * D, so
        // the displacement from the current origin is scaled by (1 + g).
        for (std::size_t k = i; k <= e; ++k) {
            const double p = std::clamp(((cyc_x(src[k]) - fx) * dx + (cyc_y(src[k]) - fy) * dy) / d2, 0.0, 1.0);
            shift(k, ox + (g * dx - ox) * p, oy + (g * dy - oy) * p);
        }
        ox = g * dx;
        oy = g * dy;
        last_change = src[e].t;
        ++r.modified_saccades;
        i = e + 1;
    }
    // Remove the final landing error before the span closes.
    if (ox != 0.0 || oy != 0.0) {
        const double ramp = std::min(kDysmetriaRampOutS, span_end - last_change);
        for (std::size_t k = first; k < last; ++k) {
            if (src[k].t <= span_end - ramp || src[k].t <= last_change) continue;
            const double w = ramp > 0.0 ? std::clamp((span_end - src[k].t) / ramp, 0.0, 1.0) : 0.0;
            shift(k, ox * w, oy * w);
        }
    }
    if (r.modified_saccades == 0) r.warning = "no saccades detected inside the span";
    return r;
}

InjectionResult inject(const io::GazeSession& session, const AnomalySpec& spec, bool enforce_range) {
    switch (spec.kind) {
        case io::AnomalyKind::vergence_drift: return inject_vergence_drift(session, spec, enforce_range);
        case io::AnomalyKind::fixation_instability: return inject_fixation_instability(session, spec, enforce_range);
        case io::AnomalyKind::saccadic_dysmetria: return inject_saccadic_dysmetria(session, spec, enforce_range);
    }
    throw UsageError("inject: unknown anomaly kind");
}

std::string format_spec(const AnomalySpec& spec) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s,%.9g,%.9g,%.9g", std::string(to_string(spec.kind)).c_str(), spec.magnitude,
                  spec.onset_s, spec.duration_s);
    return buf;
}

AnomalySpec parse_spec(const std::string& text) {
    std::istringstream in(text);
    std::string kind, a, b, c;
    if (!std::getline(in, kind, ',') || !std::getline(in, a, ',') || !std::getline(in, b, ',') ||
        !std::getline(in, c)) {
        throw ParseError("anomaly spec needs kind,magnitude,onset_s,duration_s: " + text);
    }
    AnomalySpec spec;
    spec.kind = io::parse_anomaly_kind(kind);
    try {
        spec.magnitude = std::stod(a);
        spec.onset_s = std::stod(b);
        spec.duration_s = std::stod(c);
    } catch (const std::exception&) {
        throw ParseError("anomaly spec has a non-numeric field: " + text);
    }
    return spec;
}

}  // namespace gazeflow::maml
