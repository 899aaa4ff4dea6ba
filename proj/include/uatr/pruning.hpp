#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "uatr/rng.hpp"
#include "uatr/tensor.hpp"

namespace uatr {

/// Softmax-normalized pruning-layer output for one training segment.
struct PruneScore {
    std::vector<double> s;
    int segment_id = 0;
};

/// Softmax of weight * emb + bias. weight: [d, E], bias: [d].
PruneScore prune_score(std::span<const double> emb, const Tensor& weight, const Tensor& bias,
                       int segment_id = 0);

/// Scores for every row of a [n, d] pruning-layer output matrix.
std::vector<PruneScore> prune_scores_from_logits(const Tensor& s_raw, std::span<const int> segment_ids);

/// H(s_i, s_j) = -sum_k s_ik log(max(s_jk, 1e-12)).
double pairwise_ce(std::span<const double> s_i, std::span<const double> s_j);

struct PruneRecord {
    int epoch = 0;
    int kept_id = 0;
    int pruned_id = 0;
    double ce = 0.0;
};

struct PruneOptions {
    int tau = 10;
    double epsilon = 1e-5;
    /// Compare min(H(s_i, s_j), H(s_j, s_i)) instead of H(s_i, s_j).
    bool symmetric = false;
};

/// Per-pair audit record, filled only when a trace sink is supplied.
struct PairComparison {
    int epoch = 0;
    int id_a = 0;
    int id_b = 0;
    double ce = 0.0;
    bool pruned = false;
};

class PruneState {
public:
    PruneState(std::span<const int> training_ids, const PruneOptions& options, std::uint64_t seed);

    const PruneOptions& options() const { return options_; }
    bool is_active(int id) const { return active_.contains(id); }
    const std::set<int>& active() const { return active_; }
    const std::map<int, PruneRecord>& pruned() const { return pruned_; }
    /// Prune events in the order they happened.
    const std::vector<PruneRecord>& log() const { return log_; }

    /// Compares every unordered pair of the batch once (i < j in batch
    /// order). Below-threshold pairs lose one member chosen uniformly at
    /// random; members already pruned are skipped. No-op for epoch <= tau.
    std::vector<int> prune_batch(std::span<const PruneScore> scores, int epoch,
                                 std::vector<PairComparison>* trace = nullptr);

private:
    PruneOptions options_;
    std::set<int> active_;
    std::map<int, PruneRecord> pruned_;
    std::vector<PruneRecord> log_;
    Rng rng_;
};

enum class StopDecision { keep_going, stop };

class EarlyStop {
public:
    explicit EarlyStop(int patience = 10) : patience_(patience) {}

    /// Strict improvement resets the counter; anything else (including a
    /// non-finite loss) increments it.
    StopDecision update(double val_loss);

    double best() const { return best_; }
    int epochs_since_improve() const { return since_; }
    int patience() const { return patience_; }

private:
    int patience_;
    double best_ = std::numeric_limits<double>::infinity();
    int since_ = 0;
};

/// Tab-separated prune log with optional dup_group columns (-1 if unknown).
void write_prune_log(const std::string& path, std::span<const PruneRecord> log,
                     const std::map<int, int>& dup_group_of);

std::vector<PruneRecord> read_prune_log(const std::string& path);

}  // namespace uatr
