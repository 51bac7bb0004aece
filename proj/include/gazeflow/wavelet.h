#pragma once

#include <array>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "gazeflow/features.h"

namespace gazeflow::wavelet {

inline constexpr int kLevels = 4;
inline constexpr int kSignalLength = features::kWindowRows;
inline constexpr int kBands = kLevels + 1;
// Per channel: d1 (48) + a4 (6) + band energies (5).
inline constexpr int kBlockSize = kSignalLength / 2 + kSignalLength / 16 + kBands;
inline constexpr int kFreqVectorSize = kBlockSize * features::kChannels;

// Daubechies 4 (eight taps) scaling filter, normalised to sum sqrt(2).
extern const std::array<double, 8> kDb4Lowpass;
std::array<double, 8> db4_highpass();

struct DwtChannel {
    // details[0] = d1 (finest, 48 coefficients) ... details[3] = d4 (6).
    std::array<std::vector<double>, kLevels> details;
    std::vector<double> approx;  // a4, 6 coefficients
    // Mean squared coefficient for d1, d2, d3, d4, a4.
    std::array<double, kBands> band_energies{};
};

struct DwtPyramid {
    std::array<DwtChannel, features::kChannels> channels;
};

// One analysis step with periodic extension; input length must be even.
void analysis_step(std::span<const double> x, std::vector<double>& approx, std::vector<double>& detail);
std::vector<double> synthesis_step(std::span<const double> approx, std::span<const double> detail);

DwtChannel dwt4(std::span<const double> signal);
std::vector<double> idwt4(const DwtChannel& channel);

DwtPyramid pyramid(const features::WindowMatrix& window);

// Layout: for channel c in 0..5, block [c*59, c*59+59) = d1(48), a4(6), energies(5).
Eigen::VectorXd freq_vector(const DwtPyramid& pyramid);

}  // namespace gazeflow::wavelet
