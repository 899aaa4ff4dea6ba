#include "uatr/cache.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "uatr/binary_io.hpp"
#include "uatr/digest.hpp"
#include "uatr/error.hpp"

namespace uatr {

namespace fs = std::filesystem;

namespace {
constexpr const char* kIndexName = "cache_index.tsv";
}

FeatureCache::FeatureCache(std::string dir, FeatureConfig config)
    : dir_(std::move(dir)), config_(std::move(config)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create cache directory " + dir_ + ": " + ec.message());
    std::ifstream in(fs::path(dir_) / kIndexName);
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        std::istringstream ss(line);
        std::string name;
        Entry e;
        if (ss >> name >> e.input >> e.file) index_[name] = e;
    }
}

FeatureCache::~FeatureCache() {
    try {
        flush();
    } catch (const std::exception& e) {
        spdlog::error("could not write cache index: {}", e.what());
    }
}

std::uint64_t FeatureCache::input_digest(std::span<const double> samples, int sample_rate,
                                         const FeatureConfig& config) {
    Fnv1a h;
    h.update(describe(config));
    h.update(";rate=" + std::to_string(sample_rate) + ";n=" + std::to_string(samples.size()) + ";");
    h.update(std::span(reinterpret_cast<const std::uint8_t*>(samples.data()), samples.size_bytes()));
    return h.value();
}

Spectrogram FeatureCache::get(const std::string& name, std::span<const double> samples, int sample_rate) {
    const std::string input = hex_digest(input_digest(samples, sample_rate, config_));
    const fs::path path = fs::path(dir_) / name;
    auto it = index_.find(name);
    if (it != index_.end() && it->second.input == input && fs::exists(path)) {
        const std::string bytes = read_file(path.string());
        if (hex_digest(fnv1a(bytes)) == it->second.file) {
            try {
                Spectrogram spec = decode_acsp(std::span(bytes.data(), bytes.size()));
                ++stats_.reused;
                return spec;
            } catch (const FormatError&) {
            }
        }
        spdlog::warn("cache entry {} is corrupt (digest mismatch); recomputing", path.string());
        ++stats_.repaired;
    }
    Spectrogram spec = featurize(samples, sample_rate, config_);
    const std::string bytes = encode_acsp(spec);
    write_file(path.string(), bytes);
    index_[name] = Entry{input, hex_digest(fnv1a(bytes))};
    dirty_ = true;
    ++stats_.computed;
    // Return exactly what a later cache hit would return (float32 storage).
    return decode_acsp(std::span(bytes.data(), bytes.size()));
}

void FeatureCache::flush() {
    if (!dirty_) return;
    std::ostringstream out;
    out << "name\tinput_digest\tfile_digest\n";
    for (const auto& [name, e] : index_) out << name << '\t' << e.input << '\t' << e.file << '\n';
    write_file((fs::path(dir_) / kIndexName).string(), out.str());
    dirty_ = false;
}

}  // namespace uatr
