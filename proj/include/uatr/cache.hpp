#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "uatr/features.hpp"

namespace uatr {

/// On-disk store of normalized segment spectrograms. Each entry is keyed by
/// a digest of its input samples and feature settings; the index file
/// (cache_index.tsv) also records a digest of the stored bytes so that
/// corrupted entries are detected and recomputed.
class FeatureCache {
public:
    struct Stats {
        int computed = 0;
        int reused = 0;
        int repaired = 0;
    };

    FeatureCache(std::string dir, FeatureConfig config);

    /// Returns the cached spectrogram for `samples`, computing and storing
    /// it when missing, stale or corrupt.
    Spectrogram get(const std::string& name, std::span<const double> samples, int sample_rate);

    /// Persists the index; called automatically by the destructor.
    void flush();
    ~FeatureCache();

    const Stats& stats() const { return stats_; }
    const std::string& dir() const { return dir_; }

    static std::uint64_t input_digest(std::span<const double> samples, int sample_rate,
                                      const FeatureConfig& config);

private:
    struct Entry {
        std::string input;
        std::string file;
    };
    std::string dir_;
    FeatureConfig config_;
    std::map<std::string, Entry> index_;
    Stats stats_;
    bool dirty_ = false;
};

}  // namespace uatr
