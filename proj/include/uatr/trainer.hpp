#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "uatr/corpus.hpp"
#include "uatr/features.hpp"
#include "uatr/model.hpp"
#include "uatr/pruning.hpp"
#include "uatr/smoothreg.hpp"

namespace uatr {

enum class Mode { baseline, manual_aug, smooth_reg };

const char* to_string(Mode mode);
Mode parse_mode(const std::string& text);

/// Four independent random streams.
struct Seeds {
    std::uint64_t data = 1;   ///< epoch shuffling
    std::uint64_t init = 2;   ///< parameter initialization
    std::uint64_t prune = 3;  ///< pruning tie-breaks
    std::uint64_t noise = 4;  ///< perturbations

    static Seeds from(std::uint64_t seed);
};

struct TrainConfig {
    Mode mode = Mode::smooth_reg;
    double alpha = 2.0;
    bool prune = false;
    PruneOptions pruning;
    int patience = 10;
    double lr = 5e-4;
    double warmup = 5;
    int max_epoch = 100;
    int batch = 16;
    Seeds seeds;
    PerturbSpec perturb;
    /// When set, test segments are evaluated with white noise at this SNR.
    std::optional<double> test_snr_db;

    void validate() const;
};

/// One featurized segment.
struct Example {
    int id = 0;
    int label = 0;
    std::optional<int> dup_group;
    std::vector<double> waveform;
    Tensor features;  ///< [frames, bins], normalized
};

struct TrainingData {
    int sample_rate = 0;
    int n_classes = 0;
    FeatureConfig features;
    std::vector<Example> train;
    std::vector<Example> val;
    std::vector<Example> test;
};

using FeatureFn = std::function<Spectrogram(const Segment&, int id, std::span<const double>)>;

/// Featurizes every split. `featurizer` overrides the default in-memory
/// pipeline (used for on-disk caching).
TrainingData prepare_data(const LabeledCorpus& corpus, const DatasetSplit& split,
                          const FeatureConfig& features, int n_classes,
                          const FeatureFn& featurizer = nullptr);

/// Replaces test features with featurized noisy copies at `snr_db`.
void perturb_test_set(TrainingData& data, double snr_db, std::uint64_t noise_seed);

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double test_loss = 0.0;
    double lr = 0.0;
    std::size_t active = 0;
};

using Confusion = std::vector<std::vector<std::int64_t>>;

struct EvalResult {
    double accuracy = 0.0;
    double loss = 0.0;
    Confusion confusion;
};

struct RunArtifacts {
    std::vector<EpochRecord> curve;
    double accuracy = 0.0;
    Confusion confusion;
    std::vector<PruneRecord> prune_log;
    std::map<int, int> dup_group_of;
    std::vector<int> final_active;
    std::int64_t sample_passes = 0;
    int epochs_run = 0;
    int best_epoch = 0;
    std::string stop_reason;
    double wall_seconds = 0.0;
    ModelState best_model;
    /// Every in-batch pair comparison (only when requested).
    std::vector<PairComparison> pair_trace;
};

struct TrainHooks {
    /// Called after every optimizer step.
    std::function<void(int epoch, int batch, const ModelState&)> on_step;
    bool record_pair_trace = false;
};

RunArtifacts train(const TrainConfig& config, const TrainingData& data, ModelConfig model_config,
                   const TrainHooks& hooks = {});

/// Argmax per row (ties to the lowest class), tallied as confusion[true][pred].
EvalResult evaluate_logits(const Tensor& logits, std::span<const int> labels, int n_classes);
EvalResult evaluate(ModelState& model, const std::vector<Example>& examples, int batch = 16);

struct MatrixCell {
    Mode mode = Mode::baseline;
    bool prune = false;
    std::uint64_t seed = 0;
    std::optional<RunArtifacts> artifacts;
    std::string error;
};

struct SummaryRow {
    Mode mode = Mode::baseline;
    bool prune = false;
    int runs = 0;
    int failures = 0;
    double accuracy_mean = 0.0;
    double accuracy_std = 0.0;
    double sample_passes_mean = 0.0;
    /// 1 - passes(prune) / passes(no prune) in percent, prune rows only.
    std::optional<double> reduction_pct;
    double wall_mean = 0.0;
};

struct MatrixResult {
    std::vector<MatrixCell> cells;
    std::vector<SummaryRow> rows;
};

MatrixResult run_matrix(const TrainConfig& base, const TrainingData& data, const ModelConfig& model,
                        const std::vector<Mode>& modes, const std::vector<bool>& prune,
                        const std::vector<std::uint64_t>& seeds);

std::vector<SummaryRow> summarize(const std::vector<MatrixCell>& cells);

// ---------------------------------------------------------------------------
// Artifact files

void write_loss_curve(const std::string& path, const std::vector<EpochRecord>& curve);
std::vector<EpochRecord> read_loss_curve(const std::string& path);
void write_confusion(const std::string& path, const Confusion& confusion);
Confusion read_confusion(const std::string& path);
void write_summary(const std::string& path, const std::vector<SummaryRow>& rows);

/// Writes loss_curve.tsv, confusion.tsv, pruning_log.tsv, metrics.json and
/// model.ckpt (deterministic given config and seeds) plus timing.json.
void write_run_artifacts(const std::string& dir, const RunArtifacts& run, const TrainConfig& config);

}  // namespace uatr
