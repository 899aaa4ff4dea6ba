#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace uatr {

/// Labeled mono waveform. Samples are nominally in [-1, 1].
struct AudioClip {
    std::vector<double> samples;
    int sample_rate = 0;
    int label = 0;
    std::string source_id;
};

/// A fixed-length window into a clip. `clip` indexes the owning clip list.
struct Segment {
    std::size_t clip = 0;
    std::size_t start = 0;
    std::size_t length = 0;
    int label = 0;
    std::optional<int> dup_group;
};

struct SynthClassSpec {
    double fundamental_hz = 100.0;
    int n_harmonics = 4;
    double harmonic_decay = 0.6;
    double am_rate_hz = 0.0;
    double broadband_level = 0.0;
    double drift = 0.0;
};

struct DatasetSplit {
    std::vector<Segment> train;
    std::vector<Segment> val;
    std::vector<Segment> test;
    double ratios[3] = {0.7, 0.1, 0.2};
    std::vector<std::string> warnings;
};

// ---------------------------------------------------------------------------
// WAV I/O

AudioClip load_wav(const std::string& path);
AudioClip decode_wav(std::span<const char> bytes);

enum class WavEncoding { pcm16, float32 };
std::string encode_wav(std::span<const double> samples, int sample_rate,
                       WavEncoding encoding = WavEncoding::float32, int channels = 1);
void write_wav(const std::string& path, std::span<const double> samples, int sample_rate,
               WavEncoding encoding = WavEncoding::float32);

// ---------------------------------------------------------------------------
// Synthesis

void validate(const SynthClassSpec& spec, int sample_rate);

/// Noise-free periodic part of a synthetic clip, peak-normalized to 0.9.
std::vector<double> synth_periodic(const SynthClassSpec& spec, double duration_s,
                                   int sample_rate, std::uint64_t seed);

/// Periodic part plus `broadband_level`-scaled white noise drawn from its
/// own stream. With drift = 0 the periodic part is exactly periodic.
AudioClip synth_clip(const SynthClassSpec& spec, double duration_s, int sample_rate,
                     std::uint64_t seed);
AudioClip synth_clip(const SynthClassSpec& spec, double duration_s, int sample_rate,
                     std::uint64_t periodic_seed, std::uint64_t noise_seed);

// ---------------------------------------------------------------------------
// Segmentation

std::size_t segment_count(std::size_t n_samples, std::size_t seg, std::size_t hop);

std::vector<Segment> segment_clip(const AudioClip& clip, std::size_t clip_index,
                                  double seg_seconds = 30.0, double hop_seconds = 15.0);

std::span<const double> segment_samples(const std::vector<AudioClip>& clips, const Segment& seg);

// ---------------------------------------------------------------------------
// Synthetic corpora

struct SynthCorpusOptions {
    double duration_s = 60.0;
    int sample_rate = 4000;
    double seg_seconds = 30.0;
    double hop_seconds = 15.0;
    /// Clips per duplicate group (an original plus group_size - 1 copies).
    int dup_group_size = 2;
    /// Relative per-clip spread of fundamental and modulation rate, so that
    /// distinct recordings of one class are not spectrally identical.
    double clip_variation = 0.05;
    /// Overrides broadband_level for clips that belong to duplicate groups.
    std::optional<double> dup_broadband_level;
};

struct LabeledCorpus {
    std::vector<AudioClip> clips;
    std::vector<Segment> segments;
    /// Per clip: id shared by clips with an identical periodic part, or -1.
    std::vector<int> clip_dup_key;
};

LabeledCorpus make_synth_corpus(const std::vector<SynthClassSpec>& specs, int clips_per_class,
                                double duplication_rate, std::uint64_t seed,
                                const SynthCorpusOptions& options = {});

/// Segment-level duplicate ids: segments at the same offset of clips sharing
/// a dup key share a group; every other segment gets a singleton id.
void assign_dup_groups(const std::vector<AudioClip>& clips, const std::vector<int>& clip_dup_key,
                       std::vector<Segment>& segments);

// ---------------------------------------------------------------------------
// Splits

DatasetSplit split_dataset(const std::vector<Segment>& segments,
                           const std::vector<AudioClip>& clips,
                           const double (&ratios)[3] = {0.7, 0.1, 0.2}, std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Manifest and segment index (tab-separated, one header line)

struct ManifestRecord {
    std::string path;
    int label = 0;
    std::string source_id;
    /// Absent when the manifest has no dup_key column; -1 means no group.
    std::optional<int> dup_key;
};

std::vector<ManifestRecord> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records);

/// Loads every clip of a manifest; relative paths resolve against the
/// manifest's directory. All clips must share one sample rate.
LabeledCorpus load_corpus(const std::string& manifest_path, double seg_seconds,
                          double hop_seconds);

void write_segment_index(const std::string& path, const std::vector<Segment>& segments);
std::vector<Segment> read_segment_index(const std::string& path);

}  // namespace uatr
