#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <spdlog/spdlog.h>

#include "uatr/error.hpp"
#include "uatr/losses.hpp"
#include "uatr/pruning.hpp"

namespace uatr {

PruneScore prune_score(std::span<const double> emb, const Tensor& weight, const Tensor& bias,
                       int segment_id) {
    if (weight.rank() != 2 || weight.dim(1) != emb.size() || bias.rank() != 1 ||
        bias.dim(0) != weight.dim(0))
        throw ShapeError("pruning layer " + weight.shape_string() + " does not map an " +
                         std::to_string(emb.size()) + "-dim embedding");
    const std::size_t d = weight.dim(0);
    Tensor logits({1, d});
    for (std::size_t k = 0; k < d; ++k) {
        double acc = bias[k];
        for (std::size_t i = 0; i < emb.size(); ++i) acc += weight[k * emb.size() + i] * emb[i];
        logits[k] = acc;
    }
    const Tensor p = softmax_rows(logits);
    return PruneScore{p.data, segment_id};
}

std::vector<PruneScore> prune_scores_from_logits(const Tensor& s_raw, std::span<const int> segment_ids) {
    const Tensor p = softmax_rows(s_raw);
    const std::size_t n = s_raw.dim(0), d = s_raw.dim(1);
    if (segment_ids.size() != n) throw ShapeError("one segment id per score row is required");
    std::vector<PruneScore> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i].s.assign(p.data.begin() + static_cast<std::ptrdiff_t>(i * d),
                        p.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
        out[i].segment_id = segment_ids[i];
    }
    return out;
}

double pairwise_ce(std::span<const double> s_i, std::span<const double> s_j) {
    if (s_i.size() != s_j.size()) throw ShapeError("pruning scores differ in dimension");
    double h = 0.0;
    for (std::size_t k = 0; k < s_i.size(); ++k) h -= s_i[k] * std::log(std::max(s_j[k], kProbFloor));
    return h;
}

PruneState::PruneState(std::span<const int> training_ids, const PruneOptions& options, std::uint64_t seed)
    : options_(options), active_(training_ids.begin(), training_ids.end()), rng_(seed) {
    if (options.tau < 0) throw ParameterError("tau must be >= 0");
    if (!(options.epsilon >= 0)) throw ParameterError("epsilon must be >= 0");
}

std::vector<int> PruneState::prune_batch(std::span<const PruneScore> scores, int epoch,
                                         std::vector<PairComparison>* trace) {
    std::vector<int> removed;
    if (epoch <= options_.tau) return removed;
    std::bernoulli_distribution coin(0.5);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        for (std::size_t j = i + 1; j < scores.size(); ++j) {
            const int a = scores[i].segment_id;
            const int b = scores[j].segment_id;
            if (!active_.contains(a)) break;
            if (!active_.contains(b) || a == b) continue;
            double ce = pairwise_ce(scores[i].s, scores[j].s);
            if (options_.symmetric) ce = std::min(ce, pairwise_ce(scores[j].s, scores[i].s));
            const bool hit = ce < options_.epsilon;
            if (hit) {
                const bool drop_first = coin(rng_);
                const int victim = drop_first ? a : b;
                const int keeper = drop_first ? b : a;
                active_.erase(victim);
                PruneRecord rec{epoch, keeper, victim, ce};
                pruned_.emplace(victim, rec);
                log_.push_back(rec);
                removed.push_back(victim);
            }
            if (trace) trace->push_back(PairComparison{epoch, a, b, ce, hit});
        }
    }
    return removed;
}

StopDecision EarlyStop::update(double val_loss) {
    if (std::isfinite(val_loss) && val_loss < best_) {
        best_ = val_loss;
        since_ = 0;
    } else {
        if (!std::isfinite(val_loss)) spdlog::warn("early stop: non-finite validation loss");
        ++since_;
    }
    return since_ >= patience_ ? StopDecision::stop : StopDecision::keep_going;
}

void write_prune_log(const std::string& path, std::span<const PruneRecord> log,
                     const std::map<int, int>& dup_group_of) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write prune log " + path);
    auto group = [&](int id) {
        auto it = dup_group_of.find(id);
        return it == dup_group_of.end() ? -1 : it->second;
    };
    out << "epoch\tkept_id\tpruned_id\tce\tkept_dup_group\tpruned_dup_group\n";
    out.precision(17);
    for (const auto& r : log)
        out << r.epoch << '\t' << r.kept_id << '\t' << r.pruned_id << '\t' << r.ce << '\t'
            << group(r.kept_id) << '\t' << group(r.pruned_id) << '\n';
}

std::vector<PruneRecord> read_prune_log(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open prune log " + path);
    std::vector<PruneRecord> out;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        PruneRecord r;
        int g1, g2;
        if (!(ss >> r.epoch >> r.kept_id >> r.pruned_id >> r.ce >> g1 >> g2))
            throw FormatError("malformed prune log row: " + line);
        out.push_back(r);
    }
    return out;
}

}  // namespace uatr
