#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace uatr {

enum class FeatureKind : std::uint32_t { stft_power = 0, mel = 1, cqt = 2 };

const char* to_string(FeatureKind kind);
FeatureKind parse_feature_kind(const std::string& text);

/// Row-major frames x bins matrix with framing metadata.
struct Spectrogram {
    std::vector<double> values;
    std::size_t frames = 0;
    std::size_t bins = 0;
    FeatureKind kind = FeatureKind::stft_power;
    double frame_len_s = 0.050;
    double hop_len_s = 0.025;
    int sample_rate = 0;
    /// Center frequency in Hz per bin (STFT, CQT) or Mel-band center in Hz (Mel).
    std::vector<double> bin_labels;

    double at(std::size_t frame, std::size_t bin) const { return values[frame * bins + bin]; }
    double& at(std::size_t frame, std::size_t bin) { return values[frame * bins + bin]; }
};

std::size_t frame_count(std::size_t n_samples, std::size_t frame, std::size_t hop);

/// Periodic Hann window, w[n] = 0.5 - 0.5 cos(2 pi n / N).
std::vector<double> hann_window(std::size_t n);

Spectrogram stft_power(std::span<const double> samples, int sample_rate,
                       double frame_len_s = 0.050, double hop_len_s = 0.025);

struct MelOptions {
    int n_mels = 300;
    double fmin = 0.0;
    std::optional<double> fmax;  // Nyquist when absent
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// n_mels x n_bins triangular filterbank. Weights are the triangle's mean
/// over each DFT bin's frequency cell, so bands narrower than a bin still
/// land on the bin that contains them.
std::vector<double> mel_filterbank(std::size_t n_bins, int sample_rate, std::size_t nfft,
                                   const MelOptions& options, std::vector<double>* centers = nullptr);

Spectrogram mel_spectrogram(const Spectrogram& stft, const MelOptions& options = {});

struct CqtOptions {
    int bins_per_octave = 12;
    double fmin = 50.0;
    std::optional<int> n_bins;  // largest count below Nyquist when absent
};

int default_cqt_bins(int sample_rate, const CqtOptions& options);

Spectrogram cqt_spectrogram(std::span<const double> samples, int sample_rate,
                            const CqtOptions& options = {}, double frame_len_s = 0.050,
                            double hop_len_s = 0.025);

/// log(1 + v), then standardization to zero mean and unit population std.
Spectrogram normalize(const Spectrogram& spec);

struct FeatureConfig {
    FeatureKind kind = FeatureKind::mel;
    double frame_len_s = 0.050;
    double hop_len_s = 0.025;
    MelOptions mel;
    CqtOptions cqt;
};

/// Full pipeline: raw spectrogram of the configured kind, then normalize.
Spectrogram featurize(std::span<const double> samples, int sample_rate, const FeatureConfig& config);

std::string describe(const FeatureConfig& config);

// ---------------------------------------------------------------------------
// ACSP tensor container: "ACSP", u32 version, u32 kind, u32 frames, u32 bins,
// frames*bins little-endian float32 row-major, then f64 frame_len_s,
// f64 hop_len_s, u32 sample_rate.

std::string encode_acsp(const Spectrogram& spec);
Spectrogram decode_acsp(std::span<const char> bytes);
void write_acsp(const std::string& path, const Spectrogram& spec);
Spectrogram read_acsp(const std::string& path);

}  // namespace uatr
