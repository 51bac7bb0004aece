#include "gazeflow/features.h"

#include <algorithm>
#include <cmath>

#include "gazeflow/error.h"

namespace gazeflow::features {

namespace {

double median(std::vector<double> v) {
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (v.size() % 2 == 1) return *mid;
    const double hi = *mid;
    return 0.5 * (*std::max_element(v.begin(), mid) + hi);
}

// Replaces invalid samples by linear interpolation between the neighbouring
// valid samples (held at the edges).
std::vector<io::GazeSample> fill_invalid(const std::vector<io::GazeSample>& in) {
    std::vector<io::GazeSample> out = in;
    const std::size_t n = in.size();
    std::size_t first_valid = n;
    for (std::size_t i = 0; i < n; ++i) {
        if (in[i].valid) {
            first_valid = i;
            break;
        }
    }
    if (first_valid == n) throw DomainError("extract_features: session has no valid samples");

    auto blend = [](const io::GazeSample& a, const io::GazeSample& b, double w, double t) {
        io::GazeSample g;
        g.t = t;
        g.lx = a.lx + w * (b.lx - a.lx);
        g.ly = a.ly + w * (b.ly - a.ly);
        g.rx = a.rx + w * (b.rx - a.rx);
        g.ry = a.ry + w * (b.ry - a.ry);
        g.pl = a.pl + w * (b.pl - a.pl);
        g.pr = a.pr + w * (b.pr - a.pr);
        g.valid = true;
        return g;
    };

    for (std::size_t i = 0; i < first_valid; ++i) out[i] = blend(in[first_valid], in[first_valid], 0.0, in[i].t);
    std::size_t prev = first_valid;
    for (std::size_t i = first_valid + 1; i < n; ++i) {
        if (!in[i].valid) continue;
        if (i > prev + 1) {
            const double span = in[i].t - in[prev].t;
            for (std::size_t k = prev + 1; k < i; ++k) {
                out[k] = blend(in[prev], in[i], (in[k].t - in[prev].t) / span, in[k].t);
            }
        }
        prev = i;
    }
    for (std::size_t k = prev + 1; k < n; ++k) out[k] = blend(in[prev], in[prev], 0.0, in[k].t);
    return out;
}

}  // namespace

std::string_view to_string(WindowLabel label) {
    switch (label) {
        case WindowLabel::normal: return "normal";
        case WindowLabel::vergence_drift: return "vergence_drift";
        case WindowLabel::fixation_instability: return "fixation_instability";
        case WindowLabel::saccadic_dysmetria: return "saccadic_dysmetria";
    }
    return "unknown";
}

WindowLabel label_for(io::AnomalyKind kind) {
    switch (kind) {
        case io::AnomalyKind::vergence_drift: return WindowLabel::vergence_drift;
        case io::AnomalyKind::fixation_instability: return WindowLabel::fixation_instability;
        case io::AnomalyKind::saccadic_dysmetria: return WindowLabel::saccadic_dysmetria;
    }
    return WindowLabel::normal;
}

bool is_anomalous(WindowLabel label) { return label != WindowLabel::normal; }

InterocularBaseline interocular_baseline(const io::GazeSession& session) {
    if (session.samples.empty()) throw DomainError("interocular_baseline: empty session");
    const double t0 = session.samples.front().t;
    std::vector<double> h, v;
    for (const auto& g : session.samples) {
        if (g.t - t0 >= kBaselineHorizonS) break;
        if (!g.valid) continue;
        h.push_back(g.lx - g.rx);
        v.push_back(g.ly - g.ry);
    }
    if (h.empty()) {
        for (const auto& g : session.samples) {
            if (!g.valid) continue;
            h.push_back(g.lx - g.rx);
            v.push_back(g.ly - g.ry);
            break;
        }
    }
    if (h.empty()) throw DomainError("interocular_baseline: no valid samples");
    return {median(std::move(h)), median(std::move(v))};
}

std::vector<FeatureSample> extract_features(const io::GazeSession& session,
                                            std::optional<InterocularBaseline> baseline) {
    if (std::abs(session.rate_hz - io::kModelRateHz) > 1e-6) {
        throw DomainError("extract_features: session must be resampled to 30 Hz first");
    }
    if (session.samples.empty() || session.duration() < kStabilityHorizonS) {
        throw DomainError("extract_features: session shorter than 250 ms");
    }
    const auto s = fill_invalid(session.samples);
    const InterocularBaseline base = baseline ? *baseline : interocular_baseline(session);
    const std::size_t n = s.size();
    const auto horizon = static_cast<std::size_t>(
        std::max(2.0, std::round(kStabilityHorizonS * session.rate_hz)));

    std::vector<FeatureSample> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i == 0 ? 0 : i - 1;
        const std::size_t hi = i + 1 < n ? i + 1 : i;
        FeatureSample& f = out[i];
        f.t = s[i].t;
        if (hi > lo) {
            const double dt = s[hi].t - s[lo].t;
            const double vl = std::hypot(s[hi].lx - s[lo].lx, s[hi].ly - s[lo].ly) / dt;
            const double vr = std::hypot(s[hi].rx - s[lo].rx, s[hi].ry - s[lo].ry) / dt;
            f.velocity = 0.5 * (vl + vr);
        }
        f.vergence = s[i].lx - s[i].rx;
        f.h_dev = f.vergence - base.horizontal;
        f.v_dev = (s[i].ly - s[i].ry) - base.vertical;
        f.pupil_ratio = s[i].pl / s[i].pr;

        const std::size_t start = i + 1 >= horizon ? i + 1 - horizon : 0;
        const double count = static_cast<double>(i - start + 1);
        double mx = 0.0, my = 0.0;
        for (std::size_t k = start; k <= i; ++k) {
            mx += 0.5 * (s[k].lx + s[k].rx);
            my += 0.5 * (s[k].ly + s[k].ry);
        }
        mx /= count;
        my /= count;
        double var = 0.0;
        for (std::size_t k = start; k <= i; ++k) {
            const double dx = 0.5 * (s[k].lx + s[k].rx) - mx;
            const double dy = 0.5 * (s[k].ly + s[k].ry) - my;
            var += dx * dx + dy * dy;
        }
        f.fix_stability = std::sqrt(var / count);
    }
    return out;
}

namespace {

FeatureWindow build_window(const std::vector<FeatureSample>& features, std::size_t start,
                           const std::string& identity_id) {
    FeatureWindow w;
    w.identity_id = identity_id;
    w.t_start = features[start].t;
    for (int r = 0; r < kWindowRows; ++r) {
        const auto& f = features[start + static_cast<std::size_t>(std::min(r, kWindowReal - 1))];
        const auto row = f.as_array();
        for (int c = 0; c < kChannels; ++c) w.matrix(r, c) = row[static_cast<std::size_t>(c)];
    }
    return w;
}

}  // namespace

std::vector<FeatureWindow> make_windows(const std::vector<FeatureSample>& features, double hop_s,
                                        const std::string& identity_id,
                                        const std::vector<io::AnomalySpan>& spans) {
    if (!(hop_s > 0.0)) throw UsageError("make_windows: hop_s must be positive");
    const auto hop = static_cast<std::size_t>(std::max(1.0, std::round(hop_s * io::kModelRateHz)));
    std::vector<FeatureWindow> out;
    if (features.size() < static_cast<std::size_t>(kWindowReal)) return out;
    for (std::size_t start = 0; start + kWindowReal <= features.size(); start += hop) {
        FeatureWindow w = build_window(features, start, identity_id);
        const double a = w.t_start;
        const double b = a + kWindowSeconds;
        WindowLabel label = WindowLabel::normal;
        double best = 0.5 * kWindowSeconds;
        for (const auto& span : spans) {
            const double ov = span.overlap(a, b);
            if (ov > best) {
                best = ov;
                label = label_for(span.kind);
            }
        }
        w.label = label;
        out.push_back(std::move(w));
    }
    return out;
}

FeatureWindow window_from_tail(const std::vector<FeatureSample>& features, const std::string& identity_id) {
    if (features.size() < static_cast<std::size_t>(kWindowReal)) {
        throw DomainError("window_from_tail: fewer than 90 feature rows");
    }
    return build_window(features, features.size() - kWindowReal, identity_id);
}

namespace {

Eigen::ArrayXd compress(const Eigen::Ref<const Eigen::VectorXd>& col, int c) {
    if (!is_log_channel(c)) return col.array();
    return (col.array().max(0.0) + kLogOffset[static_cast<std::size_t>(c)]).log();
}

}  // namespace

FeatureWindow Standardizer::apply(const FeatureWindow& w) const {
    FeatureWindow out = w;
    for (int c = 0; c < kChannels; ++c) {
        const auto k = static_cast<std::size_t>(c);
        out.matrix.col(c) = (compress(w.matrix.col(c), c) - mean[k]) / sd[k];
    }
    return out;
}

FeatureWindow Standardizer::unapply(const FeatureWindow& w) const {
    FeatureWindow out = w;
    for (int c = 0; c < kChannels; ++c) {
        const auto k = static_cast<std::size_t>(c);
        Eigen::ArrayXd v = w.matrix.col(c).array() * sd[k] + mean[k];
        if (is_log_channel(c)) v = v.exp() - kLogOffset[k];
        out.matrix.col(c) = v.matrix();
    }
    return out;
}

Standardizer fit_standardizer(const std::vector<FeatureWindow>& windows) {
    if (windows.empty()) throw UsageError("fit_standardizer: need at least one window");
    Standardizer s;
    const double rows = static_cast<double>(windows.size()) * kWindowRows;
    for (int c = 0; c < kChannels; ++c) {
        double sum = 0.0;
        for (const auto& w : windows) sum += compress(w.matrix.col(c), c).sum();
        const double m = sum / rows;
        double var = 0.0;
        for (const auto& w : windows) var += (compress(w.matrix.col(c), c) - m).square().sum();
        const auto k = static_cast<std::size_t>(c);
        s.mean[k] = m;
        s.sd[k] = std::max(std::sqrt(var / rows), Standardizer::kSdFloor);
    }
    return s;
}

}  // namespace gazeflow::features
