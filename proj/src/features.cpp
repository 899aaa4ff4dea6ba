#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <sstream>

#include <fftw3.h>

#include "uatr/binary_io.hpp"
#include "uatr/error.hpp"
#include "uatr/features.hpp"

namespace uatr {

const char* to_string(FeatureKind kind) {
    switch (kind) {
        case FeatureKind::stft_power: return "stft";
        case FeatureKind::mel: return "mel";
        case FeatureKind::cqt: return "cqt";
    }
    return "?";
}

FeatureKind parse_feature_kind(const std::string& text) {
    if (text == "stft" || text == "stft_power") return FeatureKind::stft_power;
    if (text == "mel") return FeatureKind::mel;
    if (text == "cqt") return FeatureKind::cqt;
    throw ParameterError("unknown feature kind '" + text + "' (expected stft, mel or cqt)");
}

std::size_t frame_count(std::size_t n_samples, std::size_t frame, std::size_t hop) {
    if (frame == 0 || hop == 0 || n_samples < frame) return 0;
    return (n_samples - frame) / hop + 1;
}

std::vector<double> hann_window(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i)
        w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / n);
    return w;
}

namespace {

std::size_t to_samples(double seconds, int sample_rate) {
    return static_cast<std::size_t>(std::llround(seconds * sample_rate));
}

// FFTW plans are cached per size; planning is not thread-safe so it is
// serialized, execution through the new-array interface is.
class RealDft {
public:
    explicit RealDft(std::size_t n) : n_(n) {
        in_ = fftw_alloc_real(n);
        out_ = fftw_alloc_complex(n / 2 + 1);
        plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
    }
    ~RealDft() {
        fftw_destroy_plan(plan_);
        fftw_free(in_);
        fftw_free(out_);
    }
    RealDft(const RealDft&) = delete;
    RealDft& operator=(const RealDft&) = delete;

    void power(const double* frame, double* dst) const {
        std::vector<double> in(frame, frame + n_);
        std::vector<std::complex<double>> out(n_ / 2 + 1);
        fftw_execute_dft_r2c(plan_, in.data(), reinterpret_cast<fftw_complex*>(out.data()));
        for (std::size_t k = 0; k < out.size(); ++k) dst[k] = std::norm(out[k]);
    }

    static const RealDft& get(std::size_t n) {
        static std::mutex mu;
        static std::map<std::size_t, std::unique_ptr<RealDft>> cache;
        std::lock_guard lock(mu);
        auto& slot = cache[n];
        if (!slot) slot = std::make_unique<RealDft>(n);
        return *slot;
    }

private:
    std::size_t n_;
    double* in_;
    fftw_complex* out_;
    fftw_plan plan_;
};

}  // namespace

Spectrogram stft_power(std::span<const double> samples, int sample_rate, double frame_len_s,
                       double hop_len_s) {
    if (sample_rate <= 0) throw ParameterError("sample_rate must be positive");
    const std::size_t frame = to_samples(frame_len_s, sample_rate);
    const std::size_t hop = to_samples(hop_len_s, sample_rate);
    if (frame < 2 || hop == 0) throw ParameterError("frame and hop must span at least one sample");
    if (samples.size() < frame)
        throw SizeError("segment of " + std::to_string(samples.size()) +
                        " samples is shorter than one " + std::to_string(frame) + "-sample frame");

    Spectrogram spec;
    spec.kind = FeatureKind::stft_power;
    spec.frame_len_s = frame_len_s;
    spec.hop_len_s = hop_len_s;
    spec.sample_rate = sample_rate;
    spec.frames = frame_count(samples.size(), frame, hop);
    spec.bins = frame / 2 + 1;
    spec.values.assign(spec.frames * spec.bins, 0.0);
    spec.bin_labels.resize(spec.bins);
    for (std::size_t k = 0; k < spec.bins; ++k)
        spec.bin_labels[k] = static_cast<double>(k) * sample_rate / frame;

    const auto window = hann_window(frame);
    const auto& dft = RealDft::get(frame);
    std::vector<double> buf(frame);
    for (std::size_t t = 0; t < spec.frames; ++t) {
        const double* src = samples.data() + t * hop;
        for (std::size_t i = 0; i < frame; ++i) buf[i] = src[i] * window[i];
        dft.power(buf.data(), spec.values.data() + t * spec.bins);
    }
    return spec;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

// Integral of the unit-peak triangle (lo, mid, hi) over (-inf, x].
double triangle_cdf(double x, double lo, double mid, double hi) {
    if (x <= lo) return 0.0;
    const double left = 0.5 * (mid - lo);
    if (x <= mid) {
        const double d = x - lo;
        return 0.5 * d * d / (mid - lo);
    }
    if (x >= hi) return left + 0.5 * (hi - mid);
    const double d = hi - x;
    return left + 0.5 * (hi - mid) - 0.5 * d * d / (hi - mid);
}

}  // namespace

std::vector<double> mel_filterbank(std::size_t n_bins, int sample_rate, std::size_t nfft,
                                   const MelOptions& options, std::vector<double>* centers) {
    const double nyquist = sample_rate / 2.0;
    const double fmax = options.fmax.value_or(nyquist);
    if (options.n_mels < 1) throw ParameterError("n_mels must be at least 1");
    if (!(options.fmin >= 0) || !(fmax > options.fmin) || fmax > nyquist + 1e-9)
        throw ParameterError("mel range must satisfy 0 <= fmin < fmax <= Nyquist");
    if (n_bins < 2) throw ParameterError("mel filterbank needs at least 2 frequency bins");
    // At most four band centers per DFT bin on average.
    const std::size_t capacity = 4 * n_bins;
    if (static_cast<std::size_t>(options.n_mels) > capacity)
        throw ParameterError("n_mels = " + std::to_string(options.n_mels) +
                             " exceeds the distinct-center capacity " + std::to_string(capacity) +
                             " for " + std::to_string(n_bins) + " frequency bins");

    const std::size_t m = static_cast<std::size_t>(options.n_mels);
    const double mel_lo = hz_to_mel(options.fmin);
    const double mel_hi = hz_to_mel(fmax);
    std::vector<double> edges(m + 2);
    for (std::size_t i = 0; i < m + 2; ++i)
        edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / (m + 1));
    if (centers) centers->assign(edges.begin() + 1, edges.end() - 1);

    const double df = static_cast<double>(sample_rate) / nfft;
    std::vector<double> fb(m * n_bins, 0.0);
    for (std::size_t b = 0; b < m; ++b) {
        const double lo = edges[b], mid = edges[b + 1], hi = edges[b + 2];
        for (std::size_t k = 0; k < n_bins; ++k) {
            const double cell_lo = (static_cast<double>(k) - 0.5) * df;
            const double cell_hi = (static_cast<double>(k) + 0.5) * df;
            if (cell_hi <= lo || cell_lo >= hi) continue;
            fb[b * n_bins + k] =
                (triangle_cdf(cell_hi, lo, mid, hi) - triangle_cdf(cell_lo, lo, mid, hi)) / df;
        }
    }
    return fb;
}

Spectrogram mel_spectrogram(const Spectrogram& stft, const MelOptions& options) {
    if (stft.kind != FeatureKind::stft_power)
        throw ParameterError("mel_spectrogram expects an STFT power spectrogram");
    const std::size_t nfft = to_samples(stft.frame_len_s, stft.sample_rate);
    if (nfft / 2 + 1 != stft.bins) throw ShapeError("STFT bin count disagrees with its frame length");
    std::vector<double> centers;
    const auto fb = mel_filterbank(stft.bins, stft.sample_rate, nfft, options, &centers);
    const std::size_t m = static_cast<std::size_t>(options.n_mels);

    Spectrogram out;
    out.kind = FeatureKind::mel;
    out.frame_len_s = stft.frame_len_s;
    out.hop_len_s = stft.hop_len_s;
    out.sample_rate = stft.sample_rate;
    out.frames = stft.frames;
    out.bins = m;
    out.bin_labels = std::move(centers);
    out.values.assign(out.frames * m, 0.0);
    for (std::size_t t = 0; t < stft.frames; ++t) {
        const double* p = stft.values.data() + t * stft.bins;
        double* dst = out.values.data() + t * m;
        for (std::size_t b = 0; b < m; ++b) {
            const double* w = fb.data() + b * stft.bins;
            double acc = 0.0;
            for (std::size_t k = 0; k < stft.bins; ++k) acc += w[k] * p[k];
            dst[b] = acc;
        }
    }
    return out;
}

int default_cqt_bins(int sample_rate, const CqtOptions& options) {
    if (options.bins_per_octave < 1) throw ParameterError("bins_per_octave must be at least 1");
    if (!(options.fmin > 0) || options.fmin >= sample_rate / 2.0)
        throw ParameterError("cqt fmin must be in (0, Nyquist)");
    int n = 0;
    while (options.fmin * std::pow(2.0, (n + 1.0) / options.bins_per_octave) < sample_rate / 2.0) ++n;
    return n;
}

Spectrogram cqt_spectrogram(std::span<const double> samples, int sample_rate,
                            const CqtOptions& options, double frame_len_s, double hop_len_s) {
    if (sample_rate <= 0) throw ParameterError("sample_rate must be positive");
    const int n_bins = options.n_bins.value_or(default_cqt_bins(sample_rate, options));
    if (n_bins < 1) throw ParameterError("cqt needs at least one bin");
    if (options.bins_per_octave < 1) throw ParameterError("bins_per_octave must be at least 1");
    if (!(options.fmin > 0) ||
        !(options.fmin * std::pow(2.0, static_cast<double>(n_bins) / options.bins_per_octave) <
          sample_rate / 2.0))
        throw ParameterError("cqt range fmin * 2^(n_bins / bins_per_octave) must be below Nyquist");

    const std::size_t frame = to_samples(frame_len_s, sample_rate);
    const std::size_t hop = to_samples(hop_len_s, sample_rate);
    if (frame < 2 || hop == 0) throw ParameterError("frame and hop must span at least one sample");
    if (samples.size() < frame) throw SizeError("segment is shorter than one frame");

    const double q = 1.0 / (std::pow(2.0, 1.0 / options.bins_per_octave) - 1.0);
    struct Kernel {
        std::vector<std::complex<double>> taps;
        std::ptrdiff_t offset;  // first tap relative to the frame center
    };
    std::vector<Kernel> kernels(n_bins);
    Spectrogram out;
    out.kind = FeatureKind::cqt;
    out.frame_len_s = frame_len_s;
    out.hop_len_s = hop_len_s;
    out.sample_rate = sample_rate;
    out.bins = static_cast<std::size_t>(n_bins);
    out.frames = frame_count(samples.size(), frame, hop);
    out.bin_labels.resize(out.bins);
    for (int k = 0; k < n_bins; ++k) {
        const double fk = options.fmin * std::pow(2.0, static_cast<double>(k) / options.bins_per_octave);
        out.bin_labels[k] = fk;
        const auto len = static_cast<std::size_t>(std::ceil(q * sample_rate / fk));
        const auto win = hann_window(len);
        double norm = 0.0;
        for (double w : win) norm += w;
        Kernel& ker = kernels[k];
        ker.taps.resize(len);
        ker.offset = -static_cast<std::ptrdiff_t>(len / 2);
        for (std::size_t n = 0; n < len; ++n) {
            const double phase = -2.0 * std::numbers::pi * fk * static_cast<double>(n) / sample_rate;
            ker.taps[n] = std::polar(win[n] / norm, phase);
        }
    }

    out.values.assign(out.frames * out.bins, 0.0);
    const auto total = static_cast<std::ptrdiff_t>(samples.size());
    for (std::size_t t = 0; t < out.frames; ++t) {
        const auto center = static_cast<std::ptrdiff_t>(t * hop + frame / 2);
        for (int k = 0; k < n_bins; ++k) {
            const Kernel& ker = kernels[k];
            std::complex<double> acc = 0.0;
            const std::ptrdiff_t first = center + ker.offset;
            const std::ptrdiff_t len = static_cast<std::ptrdiff_t>(ker.taps.size());
            const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -first);
            const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(len, total - first);
            for (std::ptrdiff_t n = lo; n < hi; ++n) acc += ker.taps[n] * samples[first + n];
            out.at(t, k) = std::abs(acc);
        }
    }
    return out;
}

Spectrogram normalize(const Spectrogram& spec) {
    Spectrogram out = spec;
    const std::size_t n = out.values.size();
    if (n == 0) return out;
    for (double& v : out.values) {
        if (!std::isfinite(v)) throw NumericError("non-finite spectrogram value");
        v = std::log1p(v);
    }
    double mean = 0.0;
    for (double v : out.values) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : out.values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double sd = std::sqrt(var);
    if (!(sd > 0.0) || !std::isfinite(sd)) {
        std::fill(out.values.begin(), out.values.end(), 0.0);
        return out;
    }
    for (double& v : out.values) v = (v - mean) / sd;
    return out;
}

Spectrogram featurize(std::span<const double> samples, int sample_rate, const FeatureConfig& config) {
    switch (config.kind) {
        case FeatureKind::stft_power:
            return normalize(stft_power(samples, sample_rate, config.frame_len_s, config.hop_len_s));
        case FeatureKind::mel:
            return normalize(mel_spectrogram(
                stft_power(samples, sample_rate, config.frame_len_s, config.hop_len_s), config.mel));
        case FeatureKind::cqt:
            return normalize(
                cqt_spectrogram(samples, sample_rate, config.cqt, config.frame_len_s, config.hop_len_s));
    }
    throw ParameterError("unknown feature kind");
}

std::string describe(const FeatureConfig& c) {
    std::ostringstream ss;
    ss.precision(17);
    ss << to_string(c.kind) << ";frame=" << c.frame_len_s << ";hop=" << c.hop_len_s;
    if (c.kind == FeatureKind::mel)
        ss << ";n_mels=" << c.mel.n_mels << ";fmin=" << c.mel.fmin << ";fmax="
           << (c.mel.fmax ? std::to_string(*c.mel.fmax) : "nyquist");
    if (c.kind == FeatureKind::cqt)
        ss << ";bpo=" << c.cqt.bins_per_octave << ";fmin=" << c.cqt.fmin << ";n_bins="
           << (c.cqt.n_bins ? std::to_string(*c.cqt.n_bins) : "auto");
    return ss.str();
}

std::string encode_acsp(const Spectrogram& spec) {
    ByteWriter w;
    w.bytes("ACSP");
    w.u32(1);
    w.u32(static_cast<std::uint32_t>(spec.kind));
    w.u32(static_cast<std::uint32_t>(spec.frames));
    w.u32(static_cast<std::uint32_t>(spec.bins));
    for (double v : spec.values) w.f32(static_cast<float>(v));
    w.f64(spec.frame_len_s);
    w.f64(spec.hop_len_s);
    w.u32(static_cast<std::uint32_t>(spec.sample_rate));
    return w.str();
}

Spectrogram decode_acsp(std::span<const char> bytes) {
    ByteReader r(bytes);
    if (r.bytes(4) != "ACSP") throw FormatError("bad tensor container magic");
    if (r.u32() != 1) throw FormatError("unsupported tensor container version");
    Spectrogram spec;
    const auto kind = r.u32();
    if (kind > 2) throw FormatError("unknown feature kind tag");
    spec.kind = static_cast<FeatureKind>(kind);
    spec.frames = r.u32();
    spec.bins = r.u32();
    if (r.remaining() != spec.frames * spec.bins * 4 + 20)
        throw FormatError("tensor container size does not match its dims");
    spec.values.resize(spec.frames * spec.bins);
    for (double& v : spec.values) v = r.f32();
    spec.frame_len_s = r.f64();
    spec.hop_len_s = r.f64();
    spec.sample_rate = static_cast<int>(r.u32());
    return spec;
}

void write_acsp(const std::string& path, const Spectrogram& spec) { write_file(path, encode_acsp(spec)); }

Spectrogram read_acsp(const std::string& path) {
    auto bytes = read_file(path);
    return decode_acsp(std::span<const char>(bytes.data(), bytes.size()));
}

}  // namespace uatr
