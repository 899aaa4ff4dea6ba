#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "uatr/corpus.hpp"
#include "uatr/error.hpp"
#include "uatr/rng.hpp"

namespace uatr {

void validate(const SynthClassSpec& spec, int sample_rate) {
    if (sample_rate <= 0) throw ParameterError("sample_rate must be positive");
    if (!(spec.fundamental_hz > 0)) throw ParameterError("fundamental_hz must be positive");
    if (spec.n_harmonics < 1) throw ParameterError("n_harmonics must be at least 1");
    if (spec.fundamental_hz * spec.n_harmonics >= sample_rate / 2.0)
        throw ParameterError("fundamental_hz x n_harmonics (" +
                             std::to_string(spec.fundamental_hz * spec.n_harmonics) +
                             " Hz) must be below Nyquist (" + std::to_string(sample_rate / 2.0) +
                             " Hz)");
    if (spec.harmonic_decay < 0) throw ParameterError("harmonic_decay must be >= 0");
    if (spec.am_rate_hz < 0) throw ParameterError("am_rate_hz must be >= 0");
    if (spec.broadband_level < 0) throw ParameterError("broadband_level must be >= 0");
    if (spec.drift < 0) throw ParameterError("drift must be >= 0");
}

std::vector<double> synth_periodic(const SynthClassSpec& spec, double duration_s, int sample_rate,
                                   std::uint64_t seed) {
    validate(spec, sample_rate);
    if (!(duration_s > 0)) throw ParameterError("duration_s must be positive");
    constexpr double two_pi = 2.0 * std::numbers::pi;
    constexpr double am_depth = 0.5;

    const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
    const double fs = sample_rate;
    Rng rng(seed);
    std::uniform_real_distribution<double> phase_dist(0.0, two_pi);
    std::vector<double> phases(spec.n_harmonics);
    for (auto& p : phases) p = phase_dist(rng);
    const double am_phase = phase_dist(rng);

    std::vector<double> out(n, 0.0);
    if (spec.drift == 0.0) {
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0, amp = 1.0;
            for (int k = 1; k <= spec.n_harmonics; ++k) {
                acc += amp * std::sin(two_pi * k * spec.fundamental_hz * (i / fs) + phases[k - 1]);
                amp *= spec.harmonic_decay;
            }
            out[i] = acc;
        }
    } else {
        // Random-walk frequency deviation with per-second standard deviation `drift`.
        std::normal_distribution<double> step(0.0, spec.drift / std::sqrt(fs));
        double deviation = 0.0;
        double base_phase = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0, amp = 1.0;
            for (int k = 1; k <= spec.n_harmonics; ++k) {
                acc += amp * std::sin(k * base_phase + phases[k - 1]);
                amp *= spec.harmonic_decay;
            }
            out[i] = acc;
            deviation += step(rng);
            base_phase += two_pi * spec.fundamental_hz * (1.0 + deviation) / fs;
        }
    }
    if (spec.am_rate_hz > 0) {
        for (std::size_t i = 0; i < n; ++i)
            out[i] *= 1.0 + am_depth * std::sin(two_pi * spec.am_rate_hz * (i / fs) + am_phase);
    }
    double peak = 0.0;
    for (double v : out) peak = std::max(peak, std::abs(v));
    if (peak > 0) {
        const double gain = 0.9 / peak;
        for (double& v : out) v *= gain;
    }
    return out;
}

AudioClip synth_clip(const SynthClassSpec& spec, double duration_s, int sample_rate,
                     std::uint64_t periodic_seed, std::uint64_t noise_seed) {
    AudioClip clip;
    clip.sample_rate = sample_rate;
    clip.samples = synth_periodic(spec, duration_s, sample_rate, periodic_seed);
    if (spec.broadband_level > 0) {
        Rng rng(noise_seed);
        std::normal_distribution<double> noise(0.0, 1.0);
        for (double& v : clip.samples) v += spec.broadband_level * noise(rng);
    }
    return clip;
}

AudioClip synth_clip(const SynthClassSpec& spec, double duration_s, int sample_rate,
                     std::uint64_t seed) {
    return synth_clip(spec, duration_s, sample_rate, derive_seed(seed, {1}), derive_seed(seed, {2}));
}

std::size_t segment_count(std::size_t n_samples, std::size_t seg, std::size_t hop) {
    if (seg == 0 || hop == 0 || n_samples < seg) return 0;
    return (n_samples - seg) / hop + 1;
}

std::vector<Segment> segment_clip(const AudioClip& clip, std::size_t clip_index, double seg_seconds,
                                  double hop_seconds) {
    if (!(seg_seconds > 0)) throw ParameterError("seg_seconds must be positive");
    if (!(hop_seconds > 0) || hop_seconds > seg_seconds)
        throw ParameterError("hop_seconds must be in (0, seg_seconds]");
    if (clip.sample_rate <= 0) throw ParameterError("clip sample_rate must be positive");
    const auto seg = static_cast<std::size_t>(std::llround(seg_seconds * clip.sample_rate));
    const auto hop = static_cast<std::size_t>(std::llround(hop_seconds * clip.sample_rate));
    const std::size_t count = segment_count(clip.samples.size(), seg, hop);
    if (count == 0) {
        spdlog::warn("clip '{}' ({:.2f} s) is shorter than one {:.1f} s segment; skipped",
                     clip.source_id, static_cast<double>(clip.samples.size()) / clip.sample_rate,
                     seg_seconds);
    }
    std::vector<Segment> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i)
        out.push_back(Segment{clip_index, i * hop, seg, clip.label, std::nullopt});
    return out;
}

std::span<const double> segment_samples(const std::vector<AudioClip>& clips, const Segment& seg) {
    const auto& s = clips.at(seg.clip).samples;
    if (seg.start + seg.length > s.size()) throw SizeError("segment exceeds clip bounds");
    return std::span<const double>(s).subspan(seg.start, seg.length);
}

void assign_dup_groups(const std::vector<AudioClip>& clips, const std::vector<int>& clip_dup_key,
                       std::vector<Segment>& segments) {
    if (clip_dup_key.size() != clips.size())
        throw ParameterError("clip_dup_key must have one entry per clip");
    std::map<std::pair<int, std::size_t>, int> shared;
    int next = 0;
    for (auto& seg : segments) {
        const int key = clip_dup_key.at(seg.clip);
        if (key < 0) {
            seg.dup_group = next++;
            continue;
        }
        auto [it, inserted] = shared.try_emplace({key, seg.start}, next);
        if (inserted) ++next;
        seg.dup_group = it->second;
    }
}

LabeledCorpus make_synth_corpus(const std::vector<SynthClassSpec>& specs, int clips_per_class,
                                double duplication_rate, std::uint64_t seed,
                                const SynthCorpusOptions& options) {
    if (specs.empty()) throw ParameterError("at least one class spec is required");
    if (clips_per_class < 1) throw ParameterError("clips_per_class must be at least 1");
    if (!(duplication_rate >= 0 && duplication_rate < 1))
        throw ParameterError("duplication_rate must be in [0, 1)");
    if (options.dup_group_size < 2) throw ParameterError("dup_group_size must be at least 2");
    if (options.clip_variation < 0 || options.clip_variation >= 1)
        throw ParameterError("clip_variation must be in [0, 1)");
    for (const auto& spec : specs) validate(spec, options.sample_rate);

    LabeledCorpus corpus;
    int next_key = 0;
    for (std::size_t c = 0; c < specs.size(); ++c) {
        const int n_dup = static_cast<int>(std::lround(duplication_rate * clips_per_class));
        // Group membership for the first n_dup clips; a trailing singleton
        // joins the previous group.
        std::vector<int> group_of(clips_per_class, -1);
        if (n_dup >= 2) {
            int n_groups = std::max(1, n_dup / options.dup_group_size);
            for (int i = 0; i < n_dup; ++i)
                group_of[i] = std::min(i / options.dup_group_size, n_groups - 1);
        }
        std::map<int, int> group_key;
        for (int i = 0; i < clips_per_class; ++i) {
            const int g = group_of[i];
            // Duplicates reuse the variant (and periodic seed) of the group's first clip.
            const int variant = g >= 0 ? g : i;
            const std::uint64_t variant_tag = g >= 0 ? 0 : 1;
            const std::uint64_t periodic_seed =
                derive_seed(seed, {c, variant_tag, static_cast<std::uint64_t>(variant), 11});
            const std::uint64_t noise_seed =
                derive_seed(seed, {c, static_cast<std::uint64_t>(i), 13});

            SynthClassSpec spec = specs[c];
            Rng var_rng(derive_seed(periodic_seed, {17}));
            std::uniform_real_distribution<double> u(-1.0, 1.0);
            spec.fundamental_hz *= 1.0 + options.clip_variation * u(var_rng);
            spec.am_rate_hz *= 1.0 + options.clip_variation * u(var_rng);
            spec.harmonic_decay *= 1.0 + options.clip_variation * u(var_rng);
            if (g >= 0 && options.dup_broadband_level) spec.broadband_level = *options.dup_broadband_level;

            AudioClip clip = synth_clip(spec, options.duration_s, options.sample_rate,
                                        periodic_seed, noise_seed);
            clip.label = static_cast<int>(c);
            if (g >= 0) {
                auto [it, inserted] = group_key.try_emplace(g, next_key);
                if (inserted) ++next_key;
                clip.source_id = "c" + std::to_string(c) + "_dup" + std::to_string(g);
                corpus.clip_dup_key.push_back(it->second);
            } else {
                clip.source_id = "c" + std::to_string(c) + "_rec" + std::to_string(i);
                corpus.clip_dup_key.push_back(-1);
            }
            const std::size_t index = corpus.clips.size();
            auto segs = segment_clip(clip, index, options.seg_seconds, options.hop_seconds);
            corpus.segments.insert(corpus.segments.end(), segs.begin(), segs.end());
            corpus.clips.push_back(std::move(clip));
        }
    }
    assign_dup_groups(corpus.clips, corpus.clip_dup_key, corpus.segments);
    return corpus;
}

DatasetSplit split_dataset(const std::vector<Segment>& segments, const std::vector<AudioClip>& clips,
                           const double (&ratios)[3], std::uint64_t seed) {
    for (double r : ratios)
        if (!(r > 0)) throw ParameterError("split ratios must be positive");
    if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9)
        throw ParameterError("split ratios must sum to 1");

    DatasetSplit split;
    std::copy(std::begin(ratios), std::end(ratios), split.ratios);

    // class -> sorted unique sources
    std::map<int, std::set<std::string>> sources_by_class;
    std::map<std::string, int> class_of_source;
    for (const auto& seg : segments) {
        const auto& src = clips.at(seg.clip).source_id;
        auto [it, inserted] = class_of_source.try_emplace(src, seg.label);
        if (!inserted && it->second != seg.label)
            throw ParameterError("source '" + src + "' carries more than one label");
        sources_by_class[seg.label].insert(src);
    }

    Rng rng(seed);
    std::map<std::string, int> assignment;  // 0 train, 1 val, 2 test
    for (auto& [label, set] : sources_by_class) {
        std::vector<std::string> srcs(set.begin(), set.end());
        std::shuffle(srcs.begin(), srcs.end(), rng);
        const int s = static_cast<int>(srcs.size());
        int n_val = 0, n_test = 0;
        if (s >= 3) {
            n_val = std::max(1, static_cast<int>(std::lround(ratios[1] * s)));
            n_test = std::max(1, static_cast<int>(std::lround(ratios[2] * s)));
            while (s - n_val - n_test < 1) {
                if (n_test >= n_val && n_test > 1) --n_test;
                else --n_val;
            }
        } else if (s == 2) {
            n_test = 1;
            split.warnings.push_back("class " + std::to_string(label) +
                                     " has 2 sources; validation split lacks this class");
        } else {
            split.warnings.push_back("class " + std::to_string(label) +
                                     " has a single source; it is assigned to train only");
        }
        for (int i = 0; i < s; ++i) {
            int where = i < s - n_val - n_test ? 0 : (i < s - n_test ? 1 : 2);
            assignment[srcs[i]] = where;
        }
    }
    for (const auto& w : split.warnings) spdlog::warn("split: {}", w);

    for (const auto& seg : segments) {
        switch (assignment.at(clips.at(seg.clip).source_id)) {
            case 0: split.train.push_back(seg); break;
            case 1: split.val.push_back(seg); break;
            default: split.test.push_back(seg); break;
        }
    }
    return split;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, '\t')) out.push_back(field);
    return out;
}

int parse_int(const std::string& text, const std::string& what) {
    try {
        std::size_t used = 0;
        int v = std::stoi(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw FormatError("invalid " + what + " '" + text + "'");
    }
}

}  // namespace

std::vector<ManifestRecord> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path);
    std::vector<ManifestRecord> out;
    std::string line;
    bool first = true;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto f = split_tabs(line);
        if (first && !f.empty() && f[0] == "path") {
            first = false;
            continue;
        }
        first = false;
        if (f.size() < 3 || f.size() > 4)
            throw FormatError(path + ":" + std::to_string(lineno) + ": expected 3 or 4 fields");
        ManifestRecord r;
        r.path = f[0];
        r.label = parse_int(f[1], "label");
        if (r.label < 0) throw FormatError(path + ":" + std::to_string(lineno) + ": negative label");
        r.source_id = f[2];
        if (f.size() == 4) r.dup_key = parse_int(f[3], "dup_key");
        out.push_back(std::move(r));
    }
    return out;
}

void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write manifest " + path);
    const bool keys = std::any_of(records.begin(), records.end(),
                                  [](const auto& r) { return r.dup_key.has_value(); });
    out << "path\tlabel\tsource_id" << (keys ? "\tdup_key" : "") << '\n';
    for (const auto& r : records) {
        out << r.path << '\t' << r.label << '\t' << r.source_id;
        if (keys) out << '\t' << r.dup_key.value_or(-1);
        out << '\n';
    }
}

LabeledCorpus load_corpus(const std::string& manifest_path, double seg_seconds, double hop_seconds) {
    namespace fs = std::filesystem;
    const auto records = read_manifest(manifest_path);
    if (records.empty()) throw EmptyInputError("manifest " + manifest_path + " lists no clips");
    const fs::path base = fs::path(manifest_path).parent_path();
    const bool keyed = records.front().dup_key.has_value();

    LabeledCorpus corpus;
    for (const auto& r : records) {
        fs::path p = r.path;
        if (p.is_relative()) p = base / p;
        AudioClip clip = load_wav(p.string());
        if (!corpus.clips.empty() && clip.sample_rate != corpus.clips.front().sample_rate)
            throw ParameterError("clip " + r.path + " has sample rate " +
                                 std::to_string(clip.sample_rate) + "; all clips must share one rate");
        clip.label = r.label;
        clip.source_id = r.source_id;
        const std::size_t index = corpus.clips.size();
        auto segs = segment_clip(clip, index, seg_seconds, hop_seconds);
        corpus.segments.insert(corpus.segments.end(), segs.begin(), segs.end());
        corpus.clips.push_back(std::move(clip));
        if (keyed) corpus.clip_dup_key.push_back(r.dup_key.value_or(-1));
    }
    if (keyed) assign_dup_groups(corpus.clips, corpus.clip_dup_key, corpus.segments);
    return corpus;
}

void write_segment_index(const std::string& path, const std::vector<Segment>& segments) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write segment index " + path);
    out << "clip\toffset\tlength\tlabel\tdup_group\n";
    for (const auto& s : segments)
        out << s.clip << '\t' << s.start << '\t' << s.length << '\t' << s.label << '\t'
            << (s.dup_group ? std::to_string(*s.dup_group) : std::string("-")) << '\n';
}

std::vector<Segment> read_segment_index(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open segment index " + path);
    std::vector<Segment> out;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split_tabs(line);
        if (f.size() != 5) throw FormatError("segment index row must have 5 fields");
        Segment s;
        s.clip = static_cast<std::size_t>(std::stoull(f[0]));
        s.start = static_cast<std::size_t>(std::stoull(f[1]));
        s.length = static_cast<std::size_t>(std::stoull(f[2]));
        s.label = parse_int(f[3], "label");
        if (f[4] != "-") s.dup_group = parse_int(f[4], "dup_group");
        out.push_back(s);
    }
    return out;
}

}  // namespace uatr
