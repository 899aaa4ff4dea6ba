#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "uatr/features.hpp"
#include "uatr/model.hpp"
#include "uatr/trainer.hpp"

namespace uatr {

using Json = nlohmann::ordered_json;

struct CorpusSection {
    std::string manifest;
    double seg_seconds = 30.0;
    double hop_seconds = 15.0;
    std::array<double, 3> split{0.7, 0.1, 0.2};
    std::uint64_t split_seed = 0;
    /// Clips shorter than one segment are dropped, never padded.
    bool min_clip_pad = false;
    /// Derived from the manifest labels (max + 1) when absent.
    std::optional<int> n_classes;
};

struct MatrixSection {
    std::vector<Mode> modes;
    std::vector<bool> prune;
    std::vector<std::uint64_t> seeds;

    bool empty() const { return modes.empty() && prune.empty() && seeds.empty(); }
};

struct RunConfig {
    CorpusSection corpus;
    FeatureConfig features;
    ModelConfig model;
    TrainConfig train;
    std::uint64_t seed = 0;
    MatrixSection matrix;
};

/// One schema entry: dotted key path, type name and default (null when the
/// key is optional or required).
struct SchemaEntry {
    std::string path;
    std::string type;
    Json default_value;
    bool required = false;
    std::string help;
};

const std::vector<SchemaEntry>& config_schema();

/// Nested JSON holding every default (required keys appear as null).
Json default_config_json();

/// Merges `user` over the defaults and validates; all problems are reported
/// together in one ConfigError, one key path per line.
RunConfig parse_config(const Json& user);
RunConfig load_config(const std::string& path);
Json load_config_json(const std::string& path);

/// Sets a dotted key in a (possibly empty) nested object.
void set_config_value(Json& config, const std::string& dotted_path, Json value);

/// Canonical, fully expanded serialization of a parsed config.
Json to_json(const RunConfig& config);
std::string config_digest(const RunConfig& config);

}  // namespace uatr
