// Acceptance suite: one PASS/FAIL line per criterion.
//
// Usage: acceptance [criterion numbers...]   (all criteria when none given)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "json.hpp"
#include "support.hpp"
#include "uatr/binary_io.hpp"
#include "uatr/cli.hpp"
#include "uatr/corpus.hpp"
#include "uatr/features.hpp"
#include "uatr/losses.hpp"
#include "uatr/optim.hpp"
#include "uatr/trainer.hpp"

using namespace uatr;
using namespace uatr::testing;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// ---------------------------------------------------------------------------
// Synthetic tasks

/// Four-class harmonic task. Fundamentals are 60 Hz * ratio^c; a small ratio
/// and a high broadband level make classes hard to tell apart.
struct Task {
    double ratio = 1.4;
    double broadband = 0.3;
    double variation = 0.05;
    int clips_per_class = 12;
    double duration_s = 4.0;
    double duplication_rate = 0.0;
};

TrainingData build(const Task& t, std::uint64_t seed) {
    std::vector<SynthClassSpec> specs;
    for (int c = 0; c < 4; ++c) specs.push_back({60 * std::pow(t.ratio, c), 4, 0.6, 0.0, t.broadband, 0.0});
    SynthCorpusOptions o;
    o.duration_s = t.duration_s;
    o.sample_rate = 2000;
    o.seg_seconds = 2;
    o.hop_seconds = 1;
    o.clip_variation = t.variation;
    o.dup_broadband_level = 0.0;
    const LabeledCorpus corpus = make_synth_corpus(specs, t.clips_per_class, t.duplication_rate, seed, o);
    const DatasetSplit split = split_dataset(corpus.segments, corpus.clips, {0.6, 0.2, 0.2}, seed);
    FeatureConfig fc;
    fc.mel.n_mels = 16;
    return prepare_data(corpus, split, fc, 4);
}

ModelConfig small_model() {
    ModelConfig m;
    m.channels = {4, 8, 8};
    m.heads = 2;
    m.embed_dim = 16;
    m.n_classes = 4;
    return m;
}

TrainConfig base_train(Mode mode, bool prune, std::uint64_t seed, int max_epoch) {
    TrainConfig c;
    c.mode = mode;
    c.prune = prune;
    c.max_epoch = max_epoch;
    c.warmup = 2;
    c.batch = 8;
    c.seeds = Seeds::from(seed);
    return c;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

// ---------------------------------------------------------------------------
// Duplicated-corpus runs shared by the pruning-efficacy and double-descent
// criteria: a hard task with half the clips duplicated, trained for the full
// epoch budget so that the loss curves are complete.

const Task kDupTask{1.1, 1.0, 0.08, 24, 2.0, 0.5};
constexpr int kDupEpochs = 60;

struct DupPair {
    TrainingData data;
    RunArtifacts on, off;
};

std::map<std::uint64_t, DupPair>& dup_cache() {
    static std::map<std::uint64_t, DupPair> cache;
    return cache;
}

const DupPair& dup_runs(std::uint64_t seed) {
    auto& cache = dup_cache();
    if (auto it = cache.find(seed); it != cache.end()) return it->second;
    DupPair p;
    p.data = build(kDupTask, seed);
    TrainConfig c = base_train(Mode::baseline, true, seed, kDupEpochs);
    c.lr = 5e-3;
    c.patience = kDupEpochs;
    TrainHooks hooks;
    hooks.record_pair_trace = true;
    p.on = train(c, p.data, small_model(), hooks);
    c.prune = false;
    p.off = train(c, p.data, small_model());
    return cache.emplace(seed, std::move(p)).first->second;
}

// ---------------------------------------------------------------------------
// Criteria

Verdict gradient_fidelity() {
    std::mt19937_64 rng(2024);
    std::size_t checked = 0, failures = 0;
    double worst = 0;
    std::string worst_param;
    const int trials = 20;
    for (int t = 0; t < trials; ++t) {
        std::uniform_int_distribution<int> classes(2, 5), n(1, 3), frames(3, 6), bins(4, 7), ch(1, 3);
        ModelConfig cfg = compact_config(classes(rng));
        cfg.channels = {ch(rng), ch(rng), ch(rng)};
        cfg.time_kernel = t % 4 == 3 ? 1 : 3;
        ModelState m = init_model(cfg, 500 + t);
        randomize_biases(m, rng);
        const std::size_t batch = n(rng);
        const Tensor raw = random_tensor({batch, std::size_t(frames(rng)), std::size_t(bins(rng))}, rng);
        const Tensor noisy = random_tensor(raw.shape, rng);
        std::vector<int> labels(batch);
        for (auto& l : labels) l = std::uniform_int_distribution<int>(0, cfg.n_classes - 1)(rng);
        const double alpha = std::uniform_real_distribution<double>(0.0, 3.0)(rng);
        // A small step keeps the central difference from straddling a ReLU
        // kink; rounding error at this step is still far below the tolerance.
        const GradCheck g = gradient_check(m, raw, &noisy, labels, alpha, 1e-6);
        checked += g.checked;
        failures += g.failures;
        if (g.worst_rel > worst) {
            worst = g.worst_rel;
            worst_param = g.worst_param;
        }
    }
    return {failures == 0, fmt("%d models, %zu gradient entries, %zu mismatches, worst relative error %.2e (%s)",
                               trials, checked, failures, worst, worst_param.c_str())};
}

Verdict kl_contract() {
    std::mt19937_64 rng(7);
    bool self_zero = true;
    double min_kl = 1e300;
    for (int i = 0; i < 10000; ++i) {
        std::uniform_int_distribution<std::size_t> dim(2, 8);
        const std::size_t k = dim(rng);
        const Tensor a = random_tensor({1, k}, rng, 3.0);
        const Tensor b = random_tensor({1, k}, rng, 3.0);
        min_kl = std::min(min_kl, kl_term(a, b));
        if (i < 100 && kl_term(a, a) != 0.0) self_zero = false;
    }
    // Logits whose softmax is [0.9, 0.1] and [0.5, 0.5].
    const Tensor p({1, 2}, {std::log(9.0), 0.0});
    const Tensor q({1, 2}, {0.0, 0.0});
    const double hand = 0.9 * std::log(0.9 / 0.5) + 0.1 * std::log(0.1 / 0.5);
    const double one_way = kl_term(p, q);
    const bool ok = self_zero && min_kl >= 0 && std::abs(one_way - 0.36806) < 1e-5 && std::abs(one_way - hand) < 1e-6;
    return {ok, fmt("kl(z,z)=0: %s; min over 1e4 random pairs %.3e; KL([.9,.1]||[.5,.5]) = %.6f", self_zero ? "yes" : "no",
                    min_kl, one_way)};
}

Verdict dsp_oracles() {
    constexpr double pi = 3.14159265358979323846;
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    std::vector<double> x(1000);
    for (auto& v : x) v = g(rng);
    const Spectrogram s = stft_power(x, 4000);
    double worst = 0;
    for (std::size_t t = 0; t < s.frames; ++t) {
        for (std::size_t k = 0; k < s.bins; ++k) {
            double re = 0, im = 0;
            for (std::size_t i = 0; i < 200; ++i) {
                const double w = 0.5 - 0.5 * std::cos(2 * pi * i / 200.0);
                re += x[t * 100 + i] * w * std::cos(2 * pi * k * i / 200.0);
                im -= x[t * 100 + i] * w * std::sin(2 * pi * k * i / 200.0);
            }
            const double ref = re * re + im * im;
            worst = std::max(worst, std::abs(s.at(t, k) - ref) / std::max(1.0, ref));
        }
    }
    std::vector<double> tone(8000);
    for (std::size_t n = 0; n < tone.size(); ++n) tone[n] = std::sin(2 * pi * 1000.0 * n / 4000.0);
    const Spectrogram ts = stft_power(tone, 4000);
    std::size_t peak = 0;
    for (std::size_t k = 0; k < ts.bins; ++k)
        if (ts.at(5, k) > ts.at(5, peak)) peak = k;
    const Spectrogram cq = cqt_spectrogram(tone, 4000);
    double ratio_err = 0;
    for (std::size_t k = 0; k + 1 < cq.bins; ++k)
        ratio_err = std::max(ratio_err, std::abs(cq.bin_labels[k + 1] / cq.bin_labels[k] - std::pow(2.0, 1.0 / 12)));
    const Spectrogram mel = mel_spectrogram(ts);
    const bool ok = worst <= 1e-9 && peak == 50 && ratio_err < 1e-14 && mel.bins == 300;
    return {ok, fmt("STFT vs DFT worst rel %.1e; 1 kHz peak bin %zu; CQT ratio error %.1e; mel rows %zu", worst, peak,
                    ratio_err, mel.bins)};
}

Verdict pruning_efficacy() {
    const DupPair& p = dup_runs(1);
    const RunArtifacts& run = p.on;
    const int tau = 10;
    // (a) duplicate groups with more than one training member, reduced to one.
    std::map<int, int> members, active;
    const std::set<int> alive(run.final_active.begin(), run.final_active.end());
    for (const auto& ex : p.data.train) {
        if (!ex.dup_group) continue;
        ++members[*ex.dup_group];
        if (alive.contains(ex.id)) ++active[*ex.dup_group];
    }
    int groups = 0, reduced = 0;
    for (const auto& [g, n] : members) {
        if (n < 2) continue;
        ++groups;
        reduced += active[g] == 1;
    }
    // (b) prune events among compared non-duplicate pairs after the warmup.
    auto same_group = [&](int a, int b) {
        auto ia = run.dup_group_of.find(a), ib = run.dup_group_of.find(b);
        return ia != run.dup_group_of.end() && ib != run.dup_group_of.end() && ia->second == ib->second;
    };
    std::size_t nondup = 0, false_prunes = 0;
    for (const auto& c : run.pair_trace) {
        if (c.epoch <= tau || same_group(c.id_a, c.id_b)) continue;
        ++nondup;
        false_prunes += c.pruned;
    }
    const double a = groups ? static_cast<double>(reduced) / groups : 0.0;
    const double b = nondup ? static_cast<double>(false_prunes) / nondup : 0.0;
    const double c = 1.0 - static_cast<double>(run.sample_passes) / static_cast<double>(p.off.sample_passes);
    const bool ok = groups > 0 && a >= 0.9 && b <= 0.05 && c >= 0.2;
    return {ok, fmt("(a) %d/%d duplicate groups reduced to one member (%.0f%%, need 90%%) %s; "
                    "(b) false-prune rate %zu/%zu = %.2f%% (need <= 5%%) %s; "
                    "(c) sample passes %lld vs %lld, reduction %.1f%% (need 20%%) %s; prune events %zu",
                    reduced, groups, 100 * a, a >= 0.9 ? "ok" : "FAIL", false_prunes, nondup, 100 * b,
                    b <= 0.05 ? "ok" : "FAIL", static_cast<long long>(run.sample_passes),
                    static_cast<long long>(p.off.sample_passes), 100 * c, c >= 0.2 ? "ok" : "FAIL",
                    run.prune_log.size())};
}

Verdict pruning_safety() {
    Task t;
    std::vector<double> on, off;
    std::size_t events = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const TrainingData data = build(t, seed);
        TrainConfig c = base_train(Mode::baseline, true, seed, 30);
        c.lr = 3e-3;
        c.pruning.epsilon = 1e-6;
        const RunArtifacts a = train(c, data, small_model());
        c.prune = false;
        const RunArtifacts b = train(c, data, small_model());
        on.push_back(a.accuracy);
        off.push_back(b.accuracy);
        events += a.prune_log.size();
    }
    const double diff = 100 * std::abs(mean(on) - mean(off));
    return {diff <= 2.0, fmt("mean accuracy prune-on %.2f%% vs prune-off %.2f%% (|diff| %.2f points, need <= 2); "
                             "%zu prune events over 5 seeds",
                             100 * mean(on), 100 * mean(off), diff, events)};
}

Verdict smoothness_benefit() {
    Task t;
    std::map<std::pair<Mode, bool>, std::vector<double>> acc;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        TrainingData data = build(t, seed);
        perturb_test_set(data, 10.0, Seeds::from(seed).noise);
        for (Mode mode : {Mode::baseline, Mode::smooth_reg}) {
            for (bool prune : {false, true}) {
                TrainConfig c = base_train(mode, prune, seed, 30);
                c.lr = 3e-3;
                acc[{mode, prune}].push_back(train(c, data, small_model()).accuracy);
            }
        }
    }
    const double b = mean(acc[{Mode::baseline, false}]), s = mean(acc[{Mode::smooth_reg, false}]);
    const double bp = mean(acc[{Mode::baseline, true}]), sp = mean(acc[{Mode::smooth_reg, true}]);
    return {s >= b && sp >= bp, fmt("10 dB test set, 5 seeds: baseline %.2f%%, smooth_reg %.2f%%, baseline+prune "
                                    "%.2f%%, smooth_reg+prune %.2f%%",
                                    100 * b, 100 * s, 100 * bp, 100 * sp)};
}

Verdict mode_isolation() {
    const TrainingData data = tiny_data(2, 6);
    auto trajectory = [&](Mode mode) {
        std::vector<std::vector<double>> traj;
        TrainHooks h;
        h.on_step = [&traj](int, int, const ModelState& m) {
            std::vector<double> flat;
            for (const auto& p : m.params) flat.insert(flat.end(), p.value.data.begin(), p.value.data.end());
            traj.push_back(std::move(flat));
        };
        TrainConfig c = base_train(mode, false, 9, 4);
        c.alpha = 0.0;
        c.batch = 4;
        train(c, data, tiny_model(2), h);
        return traj;
    };
    const auto a = trajectory(Mode::baseline);
    const auto b = trajectory(Mode::smooth_reg);
    return {!a.empty() && a == b, fmt("%zu optimizer steps compared, trajectories %s", a.size(),
                                      a == b ? "bit-identical" : "differ")};
}

Verdict schedule_and_defaults() {
    const double at5 = lr_schedule(5), at100 = lr_schedule(100);
    std::ostringstream out, err;
    const int code = run_cli({"train", "--manifest", "corpus.tsv", "--print-config"}, out, err);
    bool defaults = false;
    if (code == 0) {
        const auto j = nlohmann::json::parse(out.str());
        defaults = j["train"]["alpha"] == 2.0 && j["pruning"]["epsilon"] == 1e-5 && j["pruning"]["tau"] == 10 &&
                   j["train"]["patience"] == 10 && j["features"]["frame_seconds"] == 0.05 &&
                   j["features"]["hop_seconds"] == 0.025 && j["corpus"]["seg_seconds"] == 30.0 &&
                   j["corpus"]["hop_seconds"] == 15.0;
    }
    const bool ok = std::abs(at5 - 5e-4) < 1e-15 && at100 == 0.0 && defaults;
    return {ok, fmt("lr_schedule(5)=%.3g, lr_schedule(100)=%.3g, print-config defaults %s", at5, at100,
                    defaults ? "as documented" : "WRONG")};
}

Verdict determinism() {
    const fs::path root = fs::temp_directory_path() / "uatr_acceptance_determinism";
    fs::remove_all(root);
    fs::create_directories(root);
    auto run = [](std::vector<std::string> args) {
        std::ostringstream out, err;
        return run_cli(args, out, err);
    };
    nlohmann::json spec = {{"clips_per_class", 4}, {"sample_rate", 1000}, {"duration_s", 4.0},
                           {"seg_seconds", 2.0}, {"hop_seconds", 1.0}, {"duplication_rate", 0.5}};
    write_file((root / "spec.json").string(), spec.dump());
    if (run({"synth", "--out", (root / "corpus").string(), "--spec", (root / "spec.json").string()}) != 0)
        return {false, "synth failed"};
    nlohmann::json cfg = {
        {"corpus", {{"manifest", (root / "corpus" / "manifest.tsv").string()}, {"seg_seconds", 2.0}, {"hop_seconds", 1.0}}},
        {"features", {{"frame_seconds", 0.064}, {"hop_seconds", 0.064}, {"mel", {{"n_mels", 8}}}}},
        {"model", {{"channels", {2, 4, 4}}, {"heads", 2}, {"embed_dim", 8}}},
        {"train", {{"max_epoch", 4}, {"warmup_epochs", 1}, {"batch", 4}, {"prune", true}}},
        {"pruning", {{"tau", 1}, {"epsilon", 1.0}}}};
    write_file((root / "cfg.json").string(), cfg.dump());
    const fs::path out = root / "run";
    std::vector<std::map<std::string, std::string>> snapshots;
    for (int i = 0; i < 2; ++i) {
        fs::remove_all(out);
        if (run({"train", "--config", (root / "cfg.json").string(), "--out", out.string()}) != 0)
            return {false, "train failed"};
        std::map<std::string, std::string> files;
        for (const auto& e : fs::recursive_directory_iterator(out))
            if (e.is_regular_file() && e.path().filename() != "timing.json")
                files[fs::relative(e.path(), out).string()] = read_file(e.path().string());
        snapshots.push_back(std::move(files));
    }
    std::string diff;
    for (const auto& [name, bytes] : snapshots[0]) {
        auto it = snapshots[1].find(name);
        if (it == snapshots[1].end() || it->second != bytes) diff += " " + name;
    }
    if (snapshots[0].size() != snapshots[1].size()) diff += " (file sets differ)";
    fs::remove_all(root);
    return {diff.empty(), diff.empty() ? fmt("%zu artifact files byte-identical across two invocations",
                                             snapshots[0].size())
                                       : "differing:" + diff};
}

/// A local minimum of the test loss, a later rise of at least 5% above it,
/// and after that a decline of at least 5% from the peak.
bool has_double_descent(const std::vector<EpochRecord>& curve) {
    const std::size_t n = curve.size();
    for (std::size_t i = 1; i + 1 < n; ++i) {
        const double m = curve[i].test_loss;
        if (!(m <= curve[i - 1].test_loss && m <= curve[i + 1].test_loss)) continue;
        double peak = m;
        for (std::size_t j = i + 1; j < n; ++j) {
            peak = std::max(peak, curve[j].test_loss);
            if (peak >= 1.05 * m && curve[j].test_loss <= peak / 1.05) return true;
        }
    }
    return false;
}

Verdict double_descent() {
    int base_hits = 0, prune_quiet = 0;
    std::string per_seed;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const DupPair& p = dup_runs(seed);
        const bool b = has_double_descent(p.off.curve);
        const bool q = !has_double_descent(p.on.curve);
        base_hits += b;
        prune_quiet += q;
        per_seed += fmt(" s%llu:%c%c", static_cast<unsigned long long>(seed), b ? 'D' : '-', q ? 'q' : 'R');
    }
    return {base_hits >= 3 && prune_quiet >= 3,
            fmt("baseline shows fall-rise-fall in %d/5 seeds (need 3); prune-on twin free of it in %d/5 (need 3);"
                " per seed [D=baseline double descent, q/R=prune-on quiet/rises]:%s",
                base_hits, prune_quiet, per_seed.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
    spdlog::set_level(spdlog::level::err);
    const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
        {"gradient fidelity", gradient_fidelity},
        {"KL contract", kl_contract},
        {"DSP oracles", dsp_oracles},
        {"pruning efficacy", pruning_efficacy},
        {"pruning safety", pruning_safety},
        {"smoothness benefit", smoothness_benefit},
        {"mode isolation", mode_isolation},
        {"schedule and defaults", schedule_and_defaults},
        {"determinism", determinism},
        {"double-descent observability", double_descent},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));
    int failed = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        const int id = static_cast<int>(k + 1);
        if (!selected.empty() && !selected.contains(id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = criteria[k].second();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failed += !v.pass;
        std::printf("%s criterion %d (%s) [%.1f s]: %s\n", v.pass ? "PASS" : "FAIL", id, criteria[k].first, secs,
                    v.detail.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
