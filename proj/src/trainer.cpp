#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include <spdlog/spdlog.h>

#include "uatr/binary_io.hpp"
#include "uatr/error.hpp"
#include "uatr/losses.hpp"
#include "uatr/optim.hpp"
#include "uatr/trainer.hpp"

namespace uatr {

const char* to_string(Mode mode) {
    switch (mode) {
        case Mode::baseline: return "baseline";
        case Mode::manual_aug: return "manual_aug";
        case Mode::smooth_reg: return "smooth_reg";
    }
    return "?";
}

Mode parse_mode(const std::string& text) {
    if (text == "baseline") return Mode::baseline;
    if (text == "aug" || text == "manual_aug") return Mode::manual_aug;
    if (text == "smooth" || text == "smooth_reg") return Mode::smooth_reg;
    throw ParameterError("unknown mode '" + text + "' (expected baseline, aug or smooth)");
}

Seeds Seeds::from(std::uint64_t seed) {
    return Seeds{derive_seed(seed, {1}), derive_seed(seed, {2}), derive_seed(seed, {3}),
                 derive_seed(seed, {4})};
}

void TrainConfig::validate() const {
    if (!(alpha >= 0) || !std::isfinite(alpha)) throw ParameterError("alpha must be finite and >= 0");
    if (pruning.tau < 0) throw ParameterError("tau must be >= 0");
    if (!(pruning.epsilon >= 0)) throw ParameterError("epsilon must be >= 0");
    if (patience < 1) throw ParameterError("patience must be >= 1");
    if (!(lr > 0)) throw ParameterError("lr must be positive");
    if (warmup < 0) throw ParameterError("warmup must be >= 0");
    if (max_epoch < 1) throw ParameterError("max_epoch must be >= 1");
    if (batch < 1) throw ParameterError("batch must be >= 1");
    perturb.validate();
}

namespace {

Tensor to_tensor(const Spectrogram& spec) {
    return Tensor({spec.frames, spec.bins}, spec.values);
}

std::vector<Example> build_examples(const LabeledCorpus& corpus, const std::vector<Segment>& segs,
                                    const std::map<std::pair<std::size_t, std::size_t>, int>& ids,
                                    const FeatureConfig& features, const FeatureFn& featurizer) {
    std::vector<Example> out;
    out.reserve(segs.size());
    for (const auto& seg : segs) {
        Example ex;
        ex.id = ids.at({seg.clip, seg.start});
        ex.label = seg.label;
        ex.dup_group = seg.dup_group;
        auto samples = segment_samples(corpus.clips, seg);
        ex.waveform.assign(samples.begin(), samples.end());
        const int fs = corpus.clips[seg.clip].sample_rate;
        ex.features = to_tensor(featurizer ? featurizer(seg, ex.id, samples) : featurize(samples, fs, features));
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace

TrainingData prepare_data(const LabeledCorpus& corpus, const DatasetSplit& split,
                          const FeatureConfig& features, int n_classes, const FeatureFn& featurizer) {
    if (corpus.clips.empty()) throw EmptyInputError("corpus has no clips");
    std::map<std::pair<std::size_t, std::size_t>, int> ids;
    for (std::size_t i = 0; i < corpus.segments.size(); ++i)
        ids[{corpus.segments[i].clip, corpus.segments[i].start}] = static_cast<int>(i);

    TrainingData data;
    data.sample_rate = corpus.clips.front().sample_rate;
    data.n_classes = n_classes;
    data.features = features;
    data.train = build_examples(corpus, split.train, ids, features, featurizer);
    data.val = build_examples(corpus, split.val, ids, features, featurizer);
    data.test = build_examples(corpus, split.test, ids, features, featurizer);
    for (const auto* part : {&data.train, &data.val, &data.test})
        for (const auto& ex : *part)
            if (ex.label < 0 || ex.label >= n_classes)
                throw LabelError("segment label " + std::to_string(ex.label) + " outside 0.." +
                                 std::to_string(n_classes - 1));
    return data;
}

void perturb_test_set(TrainingData& data, double snr_db, std::uint64_t noise_seed) {
    for (auto& ex : data.test) {
        const auto seed = derive_seed(noise_seed, {static_cast<std::uint64_t>(ex.id), 0x7e57});
        auto noisy = add_white_noise(ex.waveform, snr_db, seed);
        ex.features = to_tensor(featurize(noisy, data.sample_rate, data.features));
    }
}

EvalResult evaluate_logits(const Tensor& logits, std::span<const int> labels, int n_classes) {
    if (logits.rank() != 2 || logits.dim(0) != labels.size() ||
        logits.dim(1) != static_cast<std::size_t>(n_classes))
        throw ShapeError("evaluate: logits " + logits.shape_string() + " do not match labels/classes");
    EvalResult r;
    r.confusion.assign(n_classes, std::vector<std::int64_t>(n_classes, 0));
    std::int64_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double* row = logits.data.data() + i * n_classes;
        int pred = 0;
        for (int c = 1; c < n_classes; ++c)
            if (row[c] > row[pred]) pred = c;
        ++r.confusion.at(labels[i]).at(pred);
        if (pred == labels[i]) ++correct;
    }
    r.accuracy = labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels.size());
    r.loss = labels.empty() ? 0.0 : cross_entropy(logits, labels);
    return r;
}

namespace {

Tensor infer_logits(ModelState& model, const std::vector<Example>& examples, std::size_t batch) {
    const std::size_t C = static_cast<std::size_t>(model.config.n_classes);
    Tensor all({examples.size(), C});
    for (std::size_t start = 0; start < examples.size(); start += batch) {
        const std::size_t end = std::min(examples.size(), start + batch);
        std::vector<const Tensor*> items;
        for (std::size_t i = start; i < end; ++i) items.push_back(&examples[i].features);
        Tape tape;
        auto bound = bind(tape, model);
        auto out = forward(tape, bound, stack_batch(items));
        const Tensor& z = tape.value(out.logits);
        std::copy(z.data.begin(), z.data.end(), all.data.begin() + static_cast<std::ptrdiff_t>(start * C));
    }
    return all;
}

std::vector<int> labels_of(const std::vector<Example>& examples) {
    std::vector<int> y;
    y.reserve(examples.size());
    for (const auto& ex : examples) y.push_back(ex.label);
    return y;
}

}  // namespace

EvalResult evaluate(ModelState& model, const std::vector<Example>& examples, int batch) {
    const Tensor logits = infer_logits(model, examples, static_cast<std::size_t>(std::max(1, batch)));
    const auto y = labels_of(examples);
    return evaluate_logits(logits, y, model.config.n_classes);
}

RunArtifacts train(const TrainConfig& config, const TrainingData& data, ModelConfig model_config,
                   const TrainHooks& hooks) {
    config.validate();
    if (data.train.empty()) throw EmptyInputError("training split is empty");
    model_config.n_classes = data.n_classes;
    const auto started = std::chrono::steady_clock::now();

    RunArtifacts run;
    ModelState model = init_model(model_config, config.seeds.init);
    run.best_model = model;

    std::map<int, const Example*> by_id;
    std::vector<int> train_ids;
    for (const auto& ex : data.train) {
        by_id[ex.id] = &ex;
        train_ids.push_back(ex.id);
        if (ex.dup_group) run.dup_group_of[ex.id] = *ex.dup_group;
    }
    PruneState prune_state(train_ids, config.pruning, config.seeds.prune);
    EarlyStop early_stop(config.patience);
    Rng data_rng(config.seeds.data);
    const bool need_noise = config.mode != Mode::baseline;
    const auto batch_size = static_cast<std::size_t>(config.batch);

    for (int epoch = 1; epoch <= config.max_epoch; ++epoch) {
        std::vector<int> order(prune_state.active().begin(), prune_state.active().end());
        std::shuffle(order.begin(), order.end(), data_rng);
        const std::size_t n_batches = (order.size() + batch_size - 1) / batch_size;
        double loss_sum = 0.0;
        double lr = 0.0;

        for (std::size_t b = 0; b < n_batches; ++b) {
            const std::size_t lo = b * batch_size;
            const std::size_t hi = std::min(order.size(), lo + batch_size);
            const std::size_t n = hi - lo;
            std::vector<int> ids(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                 order.begin() + static_cast<std::ptrdiff_t>(hi));
            std::vector<int> labels;
            std::vector<const Tensor*> raw_items;
            std::vector<SegmentView> views;
            for (int id : ids) {
                const Example& ex = *by_id.at(id);
                labels.push_back(ex.label);
                raw_items.push_back(&ex.features);
                views.push_back(SegmentView{id, ex.label, ex.waveform});
            }
            const Tensor raw = stack_batch(raw_items);
            std::optional<Tensor> noisy;
            if (need_noise) {
                auto companions = draw_noisy_batch(views, config.perturb, epoch, config.seeds.noise);
                std::vector<Tensor> feats;
                feats.reserve(n);
                for (const auto& c : companions)
                    feats.push_back(to_tensor(noisy_features(c, data.sample_rate, data.features)));
                std::vector<const Tensor*> ptrs;
                for (const auto& f : feats) ptrs.push_back(&f);
                noisy = stack_batch(ptrs);
            }

            lr = lr_schedule(static_cast<double>(epoch - 1) + static_cast<double>(b + 1) / n_batches,
                             config.lr, config.warmup, config.max_epoch);

            Tape tape;
            auto bound = bind(tape, model);
            model.zero_grad();
            LossTerms terms;
            Tensor s_raw;
            try {
                if (config.mode == Mode::manual_aug) {
                    // Noisy copies join the cross-entropy batch as extra samples.
                    Tensor both({2 * n, raw.dim(1), raw.dim(2)});
                    std::copy(raw.data.begin(), raw.data.end(), both.data.begin());
                    std::copy(noisy->data.begin(), noisy->data.end(),
                              both.data.begin() + static_cast<std::ptrdiff_t>(raw.size()));
                    auto out = forward(tape, bound, both);
                    std::vector<int> both_labels = labels;
                    both_labels.insert(both_labels.end(), labels.begin(), labels.end());
                    terms = total_loss(tape, LogitBundle{out.logits, std::nullopt, out.emb, out.s_raw},
                                       both_labels, 0.0);
                    const Tensor& all = tape.value(out.s_raw);
                    s_raw = Tensor({n, all.dim(1)},
                                   std::vector<double>(all.data.begin(),
                                                       all.data.begin() + static_cast<std::ptrdiff_t>(n * all.dim(1))));
                } else {
                    const Tensor* noisy_ptr = config.mode == Mode::smooth_reg ? &*noisy : nullptr;
                    auto bundle = forward_bundle(tape, bound, raw, noisy_ptr);
                    terms = total_loss(tape, bundle, labels, config.mode == Mode::smooth_reg ? config.alpha : 0.0);
                    s_raw = tape.value(bundle.s_raw);
                }
                tape.backward(terms.total);
                adam_step(model, lr);
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(b) + ")");
            }
            loss_sum += tape.value(terms.total)[0] * static_cast<double>(n);
            run.sample_passes += static_cast<std::int64_t>(n);

            if (config.prune && epoch > config.pruning.tau) {
                auto scores = prune_scores_from_logits(s_raw, ids);
                prune_state.prune_batch(scores, epoch, hooks.record_pair_trace ? &run.pair_trace : nullptr);
            }
            if (hooks.on_step) hooks.on_step(epoch, static_cast<int>(b), model);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = order.empty() ? 0.0 : loss_sum / static_cast<double>(order.size());
        rec.lr = lr;
        rec.active = prune_state.active().size();
        const bool has_val = !data.val.empty();
        rec.val_loss = has_val ? evaluate(model, data.val, config.batch).loss : rec.train_loss;
        rec.test_loss = data.test.empty() ? 0.0 : evaluate(model, data.test, config.batch).loss;
        run.curve.push_back(rec);
        run.epochs_run = epoch;

        const bool improved = std::isfinite(rec.val_loss) && rec.val_loss < early_stop.best();
        const StopDecision decision = early_stop.update(rec.val_loss);
        if (improved) {
            run.best_model = model;
            run.best_epoch = epoch;
        }
        if (decision == StopDecision::stop) {
            run.stop_reason = "early_stop";
            break;
        }
        if (prune_state.active().empty()) {
            run.stop_reason = "empty_active_set";
            break;
        }
    }
    if (run.stop_reason.empty()) run.stop_reason = "max_epoch";
    if (run.best_epoch == 0) {
        run.best_model = model;
        run.best_epoch = run.epochs_run;
    }

    const EvalResult final_eval = evaluate(run.best_model, data.test, config.batch);
    run.accuracy = final_eval.accuracy;
    run.confusion = final_eval.confusion;
    run.prune_log = prune_state.log();
    run.final_active.assign(prune_state.active().begin(), prune_state.active().end());
    run.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return run;
}

std::vector<SummaryRow> summarize(const std::vector<MatrixCell>& cells) {
    std::vector<SummaryRow> rows;
    auto find = [&](Mode m, bool p) -> SummaryRow* {
        for (auto& r : rows)
            if (r.mode == m && r.prune == p) return &r;
        return nullptr;
    };
    std::map<std::pair<int, bool>, std::vector<const RunArtifacts*>> groups;
    for (const auto& cell : cells) {
        if (!find(cell.mode, cell.prune)) {
            SummaryRow fresh;
            fresh.mode = cell.mode;
            fresh.prune = cell.prune;
            rows.push_back(fresh);
        }
        SummaryRow* row = find(cell.mode, cell.prune);
        if (!cell.artifacts) {
            ++row->failures;
            continue;
        }
        ++row->runs;
        groups[{static_cast<int>(cell.mode), cell.prune}].push_back(&*cell.artifacts);
    }
    for (auto& row : rows) {
        const auto& runs = groups[{static_cast<int>(row.mode), row.prune}];
        if (runs.empty()) continue;
        double acc = 0.0, passes = 0.0, wall = 0.0;
        for (const auto* r : runs) {
            acc += r->accuracy;
            passes += static_cast<double>(r->sample_passes);
            wall += r->wall_seconds;
        }
        const double k = static_cast<double>(runs.size());
        row.accuracy_mean = acc / k;
        row.sample_passes_mean = passes / k;
        row.wall_mean = wall / k;
        double var = 0.0;
        for (const auto* r : runs) var += (r->accuracy - row.accuracy_mean) * (r->accuracy - row.accuracy_mean);
        row.accuracy_std = runs.size() > 1 ? std::sqrt(var / (k - 1.0)) : 0.0;
    }
    for (auto& row : rows) {
        if (!row.prune) continue;
        const SummaryRow* twin = find(row.mode, false);
        if (twin && twin->runs > 0 && row.runs > 0 && twin->sample_passes_mean > 0)
            row.reduction_pct = 100.0 * (1.0 - row.sample_passes_mean / twin->sample_passes_mean);
    }
    return rows;
}

MatrixResult run_matrix(const TrainConfig& base, const TrainingData& data, const ModelConfig& model,
                        const std::vector<Mode>& modes, const std::vector<bool>& prune,
                        const std::vector<std::uint64_t>& seeds) {
    MatrixResult result;
    for (Mode mode : modes) {
        for (bool p : prune) {
            for (std::uint64_t seed : seeds) {
                MatrixCell cell{mode, p, seed, std::nullopt, {}};
                TrainConfig cfg = base;
                cfg.mode = mode;
                cfg.prune = p;
                cfg.seeds = Seeds::from(seed);
                try {
                    cell.artifacts = train(cfg, data, model);
                } catch (const std::exception& e) {
                    cell.error = e.what();
                    spdlog::error("cell {}/{}/seed {} failed: {}", to_string(mode), p ? "prune" : "no-prune",
                                  seed, e.what());
                }
                result.cells.push_back(std::move(cell));
            }
        }
    }
    result.rows = summarize(result.cells);
    return result;
}

// ---------------------------------------------------------------------------

void write_loss_curve(const std::string& path, const std::vector<EpochRecord>& curve) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out.precision(17);
    out << "epoch\ttrain_loss\tval_loss\ttest_loss\tlr\tactive_set_size\n";
    for (const auto& r : curve)
        out << r.epoch << '\t' << r.train_loss << '\t' << r.val_loss << '\t' << r.test_loss << '\t' << r.lr
            << '\t' << r.active << '\n';
}

std::vector<EpochRecord> read_loss_curve(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    std::getline(in, line);
    std::vector<EpochRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        EpochRecord r;
        if (!(ss >> r.epoch >> r.train_loss >> r.val_loss >> r.test_loss >> r.lr >> r.active))
            throw FormatError("malformed loss curve row: " + line);
        out.push_back(r);
    }
    return out;
}

void write_confusion(const std::string& path, const Confusion& confusion) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << "true\\pred";
    for (std::size_t c = 0; c < confusion.size(); ++c) out << '\t' << c;
    out << '\n';
    for (std::size_t r = 0; r < confusion.size(); ++r) {
        out << r;
        for (auto v : confusion[r]) out << '\t' << v;
        out << '\n';
    }
}

Confusion read_confusion(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    std::getline(in, line);
    Confusion m;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::int64_t label, v;
        ss >> label;
        std::vector<std::int64_t> row;
        while (ss >> v) row.push_back(v);
        m.push_back(std::move(row));
    }
    for (const auto& row : m)
        if (row.size() != m.size()) throw FormatError("confusion matrix is not square: " + path);
    return m;
}

void write_summary(const std::string& path, const std::vector<SummaryRow>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out.precision(10);
    out << "mode\tprune\truns\tfailures\taccuracy_mean\taccuracy_std\tsample_passes_mean\treduction_pct\n";
    for (const auto& r : rows) {
        out << to_string(r.mode) << '\t' << (r.prune ? "on" : "off") << '\t' << r.runs << '\t' << r.failures
            << '\t' << r.accuracy_mean << '\t' << r.accuracy_std << '\t' << r.sample_passes_mean << '\t';
        if (r.reduction_pct) out << *r.reduction_pct; else out << '-';
        out << '\n';
    }
}

void write_run_artifacts(const std::string& dir, const RunArtifacts& run, const TrainConfig& config) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const fs::path d(dir);
    write_loss_curve((d / "loss_curve.tsv").string(), run.curve);
    write_confusion((d / "confusion.tsv").string(), run.confusion);
    write_prune_log((d / "pruning_log.tsv").string(), run.prune_log, run.dup_group_of);
    save_checkpoint((d / "model.ckpt").string(), run.best_model);

    nlohmann::ordered_json m;
    m["mode"] = to_string(config.mode);
    m["prune"] = config.prune;
    m["alpha"] = config.alpha;
    m["epsilon"] = config.pruning.epsilon;
    m["tau"] = config.pruning.tau;
    m["accuracy"] = run.accuracy;
    m["n_classes"] = run.confusion.size();
    std::int64_t total = 0;
    for (const auto& row : run.confusion)
        for (auto v : row) total += v;
    m["test_count"] = total;
    m["sample_passes"] = run.sample_passes;
    m["epochs_run"] = run.epochs_run;
    m["best_epoch"] = run.best_epoch;
    m["stop_reason"] = run.stop_reason;
    m["prune_events"] = run.prune_log.size();
    m["final_active"] = run.final_active.size();
    m["prune_scores"] = "pre-update";
    m["threads"] = 1;
    write_file((d / "metrics.json").string(), m.dump(2) + "\n");

    nlohmann::ordered_json t;
    t["wall_seconds"] = run.wall_seconds;
    write_file((d / "timing.json").string(), t.dump(2) + "\n");
}

}  // namespace uatr
