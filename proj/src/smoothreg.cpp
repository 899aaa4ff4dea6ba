#include <cmath>

#include "uatr/error.hpp"
#include "uatr/rng.hpp"
#include "uatr/smoothreg.hpp"

namespace uatr {

void PerturbSpec::validate() const {
    if (!(snr_low_db <= snr_high_db)) throw ParameterError("snr range must satisfy low <= high");
    if (!std::isfinite(snr_low_db) || !std::isfinite(snr_high_db))
        throw ParameterError("snr range must be finite");
}

std::vector<double> add_white_noise(std::span<const double> x, double snr_db, std::uint64_t seed) {
    if (x.empty()) throw PerturbationError("cannot perturb an empty waveform");
    double xx = 0.0;
    for (double v : x) xx += v * v;
    if (!(xx > 0.0)) throw PerturbationError("signal power is zero; SNR is undefined");
    std::vector<double> y(x.begin(), x.end());
    if (std::isinf(snr_db) && snr_db > 0) return y;

    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> w(x.size());
    for (double& v : w) v = normal(rng);
    double wx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) wx += w[i] * x[i];
    const double proj = wx / xx;
    double ww = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        w[i] -= proj * x[i];
        ww += w[i] * w[i];
    }
    if (!(ww > 0.0)) throw PerturbationError("noise has no component orthogonal to the signal");
    const double gain = std::sqrt(xx / (ww * std::pow(10.0, snr_db / 10.0)));
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += gain * w[i];
    return y;
}

std::uint64_t companion_seed(std::uint64_t noise_seed, int id, int epoch, const PerturbSpec& spec) {
    const auto sid = static_cast<std::uint64_t>(static_cast<std::int64_t>(id));
    if (!spec.redraw) return derive_seed(noise_seed, {sid, 0x5eed});
    return derive_seed(noise_seed, {sid, static_cast<std::uint64_t>(epoch), 0xe90c});
}

double draw_snr(std::uint64_t noise_seed, int id, int epoch, const PerturbSpec& spec) {
    std::uint64_t seed;
    if (spec.per_sample) {
        seed = derive_seed(companion_seed(noise_seed, id, epoch, spec), {0x5a});
    } else {
        seed = derive_seed(noise_seed, {spec.redraw ? static_cast<std::uint64_t>(epoch) : 0, 0x6b});
    }
    Rng rng(seed);
    std::uniform_real_distribution<double> u(spec.snr_low_db, spec.snr_high_db);
    return spec.snr_low_db == spec.snr_high_db ? spec.snr_low_db : u(rng);
}

std::vector<NoisySegment> draw_noisy_batch(std::span<const SegmentView> segments, const PerturbSpec& spec,
                                           int epoch, std::uint64_t noise_seed) {
    spec.validate();
    std::vector<NoisySegment> out;
    out.reserve(segments.size());
    for (const auto& seg : segments) {
        NoisySegment n;
        n.base_id = seg.id;
        n.label = seg.label;
        n.epoch = epoch;
        n.snr_db = draw_snr(noise_seed, seg.id, epoch, spec);
        const std::uint64_t seed = derive_seed(companion_seed(noise_seed, seg.id, epoch, spec), {0x77});
        try {
            n.waveform = add_white_noise(seg.samples, n.snr_db, seed);
        } catch (const PerturbationError& e) {
            throw PerturbationError("segment " + std::to_string(seg.id) + ": " + e.what());
        }
        out.push_back(std::move(n));
    }
    return out;
}

Spectrogram noisy_features(const NoisySegment& noisy, int sample_rate, const FeatureConfig& config) {
    return featurize(noisy.waveform, sample_rate, config);
}

}  // namespace uatr
