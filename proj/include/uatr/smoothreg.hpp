#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "uatr/features.hpp"

namespace uatr {

enum class PerturbKind { gaussian_white };

struct PerturbSpec {
    double snr_low_db = 5.0;
    double snr_high_db = 30.0;
    PerturbKind kind = PerturbKind::gaussian_white;
    /// Fresh companion every epoch; otherwise one fixed companion per segment.
    bool redraw = true;
    /// One SNR per (segment, epoch); otherwise one SNR per epoch for all segments.
    bool per_sample = true;

    void validate() const;
};

/// y = x + g w with w standard normal, orthogonalized against x, and g set
/// from the realized powers so that 10 log10(P_x / P_gw) equals snr_db and
/// the output power is exactly P_x (1 + 10^(-snr/10)).
std::vector<double> add_white_noise(std::span<const double> x, double snr_db, std::uint64_t seed);

struct SegmentView {
    int id = 0;
    int label = 0;
    std::span<const double> samples;
};

struct NoisySegment {
    int base_id = 0;
    int label = 0;
    int epoch = 0;
    double snr_db = 0.0;
    std::vector<double> waveform;
};

/// Seed of the companion of segment `id` at `epoch`; independent of the
/// order in which segments are visited.
std::uint64_t companion_seed(std::uint64_t noise_seed, int id, int epoch, const PerturbSpec& spec);

double draw_snr(std::uint64_t noise_seed, int id, int epoch, const PerturbSpec& spec);

std::vector<NoisySegment> draw_noisy_batch(std::span<const SegmentView> segments, const PerturbSpec& spec,
                                           int epoch, std::uint64_t noise_seed);

/// Noisy companion pushed through the same feature pipeline as its base.
Spectrogram noisy_features(const NoisySegment& noisy, int sample_rate, const FeatureConfig& config);

}  // namespace uatr
