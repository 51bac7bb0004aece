#include "gazeflow/wavelet.h"

#include <cmath>

#include "gazeflow/error.h"

namespace gazeflow::wavelet {

const std::array<double, 8> kDb4Lowpass = {
    0.2303778133088965008632911830440708500016152482483092977910968,
    0.7148465705529156470899219552739926037076084010993081758450110,
    0.6308807679298589078817163383006152202032229226771951174057473,
    -0.0279837694168598542665097824497765458587520043027658218070020,
    -0.1870348117190930840795706727890814195845441743745800912057770,
    0.0308413818355607636060163215036190953580930050452826021451510,
    0.0328830116668851996724554733986580389908830893624154658153510,
    -0.0105974017850690321421121059920416019990130041911542830452980,
};

std::array<double, 8> db4_highpass() {
    std::array<double, 8> g{};
    for (std::size_t k = 0; k < 8; ++k) {
        const double sign = (k % 2 == 0) ? 1.0 : -1.0;
        g[k] = sign * kDb4Lowpass[7 - k];
    }
    return g;
}

void analysis_step(std::span<const double> x, std::vector<double>& approx, std::vector<double>& detail) {
    const std::size_t n = x.size();
    if (n < 2 || n % 2 != 0) throw DomainError("analysis_step: length must be even");
    static const auto g = db4_highpass();
    const std::size_t half = n / 2;
    approx.assign(half, 0.0);
    detail.assign(half, 0.0);
    for (std::size_t i = 0; i < half; ++i) {
        double a = 0.0, d = 0.0;
        for (std::size_t k = 0; k < 8; ++k) {
            const double v = x[(2 * i + k) % n];
            a += kDb4Lowpass[k] * v;
            d += g[k] * v;
        }
        approx[i] = a;
        detail[i] = d;
    }
}

std::vector<double> synthesis_step(std::span<const double> approx, std::span<const double> detail) {
    if (approx.size() != detail.size()) throw DomainError("synthesis_step: band length mismatch");
    static const auto g = db4_highpass();
    const std::size_t half = approx.size();
    const std::size_t n = 2 * half;
    std::vector<double> x(n, 0.0);
    for (std::size_t i = 0; i < half; ++i) {
        for (std::size_t k = 0; k < 8; ++k) {
            x[(2 * i + k) % n] += kDb4Lowpass[k] * approx[i] + g[k] * detail[i];
        }
    }
    return x;
}

namespace {

double mean_square(const std::vector<double>& v) {
    double s = 0.0;
    for (double c : v) s += c * c;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

DwtChannel dwt4(std::span<const double> signal) {
    if (signal.size() != static_cast<std::size_t>(kSignalLength)) {
        throw DomainError("dwt4: expected 96 samples, got " + std::to_string(signal.size()));
    }
    DwtChannel out;
    std::vector<double> current(signal.begin(), signal.end());
    for (int level = 0; level < kLevels; ++level) {
        std::vector<double> a;
        analysis_step(current, a, out.details[static_cast<std::size_t>(level)]);
        current = std::move(a);
    }
    out.approx = std::move(current);
    for (std::size_t b = 0; b < kLevels; ++b) out.band_energies[b] = mean_square(out.details[b]);
    out.band_energies[kLevels] = mean_square(out.approx);
    return out;
}

std::vector<double> idwt4(const DwtChannel& channel) {
    std::size_t expected = kSignalLength / 2;
    for (std::size_t b = 0; b < kLevels; ++b) {
        if (channel.details[b].size() != expected) throw DomainError("idwt4: detail band has wrong length");
        expected /= 2;
    }
    if (channel.approx.size() != kSignalLength / 16) throw DomainError("idwt4: approximation has wrong length");
    std::vector<double> current = channel.approx;
    for (int level = kLevels - 1; level >= 0; --level) {
        current = synthesis_step(current, channel.details[static_cast<std::size_t>(level)]);
    }
    return current;
}

DwtPyramid pyramid(const features::WindowMatrix& window) {
    DwtPyramid p;
    std::array<double, kSignalLength> column{};
    for (int c = 0; c < features::kChannels; ++c) {
        for (int r = 0; r < kSignalLength; ++r) column[static_cast<std::size_t>(r)] = window(r, c);
        p.channels[static_cast<std::size_t>(c)] = dwt4(column);
    }
    return p;
}

Eigen::VectorXd freq_vector(const DwtPyramid& pyramid) {
    Eigen::VectorXd out(kFreqVectorSize);
    Eigen::Index pos = 0;
    for (const auto& ch : pyramid.channels) {
        if (ch.details[0].size() != kSignalLength / 2 || ch.approx.size() != kSignalLength / 16) {
            throw DomainError("freq_vector: incomplete pyramid");
        }
        for (double v : ch.details[0]) out(pos++) = v;
        for (double v : ch.approx) out(pos++) = v;
        for (double v : ch.band_energies) out(pos++) = v;
    }
    return out;
}

}  // namespace gazeflow::wavelet
