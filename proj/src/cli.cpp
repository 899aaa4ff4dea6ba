#include "uatr/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include <spdlog/spdlog.h>

#include "uatr/binary_io.hpp"
#include "uatr/cache.hpp"
#include "uatr/config.hpp"
#include "uatr/corpus.hpp"
#include "uatr/digest.hpp"
#include "uatr/error.hpp"
#include "uatr/trainer.hpp"

namespace uatr {

namespace fs = std::filesystem;

namespace {

struct Options {
    std::string config;
    std::string manifest;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> feature;
    std::optional<std::string> mode;
    bool prune = false;
    std::optional<double> alpha;
    std::optional<double> epsilon;
    bool print_config = false;
    std::string spec;
    std::vector<std::string> runs;
};

// ---------------------------------------------------------------------------
// synth

struct SynthSpec {
    std::vector<SynthClassSpec> classes;
    int clips_per_class = 4;
    double duplication_rate = 0.0;
    SynthCorpusOptions options;
};

SynthSpec default_synth_spec() {
    SynthSpec s;
    s.classes = {{100, 4, 0.6, 0.0, 0.1, 0.0}, {160, 3, 0.7, 2.0, 0.1, 0.0}};
    return s;
}

SynthSpec parse_synth_spec(const Json& j) {
    SynthSpec s = default_synth_spec();
    if (!j.is_object()) throw ConfigError("synth spec: top level must be an object");
    std::vector<std::string> errors;
    const std::set<std::string> known = {"classes", "clips_per_class", "duplication_rate", "sample_rate",
                                         "duration_s", "seg_seconds", "hop_seconds", "dup_group_size",
                                         "clip_variation", "dup_broadband_level"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.contains(it.key())) errors.push_back(it.key() + ": unknown key");
    auto num = [&](const Json& obj, const std::string& key, const std::string& path, auto& target) {
        auto it = obj.find(key);
        if (it == obj.end()) return;
        if (!it->is_number()) {
            errors.push_back(path + ": expected a number");
            return;
        }
        target = it->get<std::remove_reference_t<decltype(target)>>();
    };
    num(j, "clips_per_class", "clips_per_class", s.clips_per_class);
    num(j, "duplication_rate", "duplication_rate", s.duplication_rate);
    num(j, "sample_rate", "sample_rate", s.options.sample_rate);
    num(j, "duration_s", "duration_s", s.options.duration_s);
    num(j, "seg_seconds", "seg_seconds", s.options.seg_seconds);
    num(j, "hop_seconds", "hop_seconds", s.options.hop_seconds);
    num(j, "dup_group_size", "dup_group_size", s.options.dup_group_size);
    num(j, "clip_variation", "clip_variation", s.options.clip_variation);
    if (j.contains("dup_broadband_level") && !j["dup_broadband_level"].is_null()) {
        double v = 0;
        num(j, "dup_broadband_level", "dup_broadband_level", v);
        s.options.dup_broadband_level = v;
    }
    if (j.contains("classes")) {
        if (!j["classes"].is_array() || j["classes"].empty()) {
            errors.push_back("classes: expected a non-empty array");
        } else {
            s.classes.clear();
            const std::set<std::string> class_keys = {"fundamental_hz", "n_harmonics", "harmonic_decay",
                                                      "am_rate_hz", "broadband_level", "drift"};
            for (std::size_t i = 0; i < j["classes"].size(); ++i) {
                const Json& c = j["classes"][i];
                const std::string p = "classes[" + std::to_string(i) + "]";
                SynthClassSpec spec;
                if (!c.is_object()) {
                    errors.push_back(p + ": expected an object");
                    continue;
                }
                for (auto it = c.begin(); it != c.end(); ++it)
                    if (!class_keys.contains(it.key())) errors.push_back(p + "." + it.key() + ": unknown key");
                num(c, "fundamental_hz", p + ".fundamental_hz", spec.fundamental_hz);
                num(c, "n_harmonics", p + ".n_harmonics", spec.n_harmonics);
                num(c, "harmonic_decay", p + ".harmonic_decay", spec.harmonic_decay);
                num(c, "am_rate_hz", p + ".am_rate_hz", spec.am_rate_hz);
                num(c, "broadband_level", p + ".broadband_level", spec.broadband_level);
                num(c, "drift", p + ".drift", spec.drift);
                s.classes.push_back(spec);
            }
        }
    }
    for (std::size_t i = 0; i < s.classes.size(); ++i) {
        try {
            validate(s.classes[i], s.options.sample_rate);
        } catch (const ParameterError& e) {
            errors.push_back("classes[" + std::to_string(i) + "]: " + e.what());
        }
    }
    if (!errors.empty()) {
        std::string msg = "invalid synth spec:";
        for (const auto& e : errors) msg += "\n  " + e;
        throw ConfigError(msg);
    }
    return s;
}

int cmd_synth(const Options& o, std::ostream& out) {
    if (o.out.empty()) throw ConfigError("synth: --out is required");
    const SynthSpec spec = o.spec.empty() ? default_synth_spec() : parse_synth_spec(load_config_json(o.spec));
    const std::uint64_t seed = o.seed.value_or(0);
    const LabeledCorpus corpus =
        make_synth_corpus(spec.classes, spec.clips_per_class, spec.duplication_rate, seed, spec.options);

    const fs::path dir(o.out);
    std::error_code ec;
    fs::create_directories(dir / "wav", ec);
    if (ec) throw IoError("cannot create " + (dir / "wav").string() + ": " + ec.message());

    std::vector<ManifestRecord> records;
    std::map<int, int> per_class;
    for (std::size_t i = 0; i < corpus.clips.size(); ++i) {
        const AudioClip& clip = corpus.clips[i];
        const int k = per_class[clip.label]++;
        const std::string rel = "wav/c" + std::to_string(clip.label) + "_" + std::to_string(k) + ".wav";
        write_wav((dir / rel).string(), clip.samples, clip.sample_rate);
        records.push_back(ManifestRecord{rel, clip.label, clip.source_id, corpus.clip_dup_key[i]});
    }
    write_manifest((dir / "manifest.tsv").string(), records);
    write_segment_index((dir / "dup_groups.tsv").string(), corpus.segments);
    out << "wrote " << records.size() << " clips (" << corpus.segments.size() << " segments) to "
        << dir.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// config assembly

Json assemble_config_json(const Options& o) {
    Json j = o.config.empty() ? Json::object() : load_config_json(o.config);
    if (!o.manifest.empty()) set_config_value(j, "corpus.manifest", o.manifest);
    if (o.seed) set_config_value(j, "train.seed", *o.seed);
    if (o.feature) set_config_value(j, "features.kind", *o.feature);
    if (o.mode) set_config_value(j, "train.mode", *o.mode);
    if (o.prune) set_config_value(j, "train.prune", true);
    if (o.alpha) set_config_value(j, "train.alpha", *o.alpha);
    if (o.epsilon) set_config_value(j, "pruning.epsilon", *o.epsilon);
    return j;
}

void print_config(const Options& o, std::ostream& out) {
    Json merged = default_config_json();
    merged.merge_patch(assemble_config_json(o));
    out << merged.dump(2) << "\n";
}

std::string segment_name(const Segment& seg) {
    std::ostringstream s;
    s << "clip" << std::setw(5) << std::setfill('0') << seg.clip << "_" << std::setw(9) << seg.start << ".acsp";
    return s.str();
}

int infer_classes(const LabeledCorpus& corpus, const RunConfig& config) {
    int max_label = -1;
    for (const auto& c : corpus.clips) {
        if (c.label < 0) throw LabelError("negative class label in manifest");
        max_label = std::max(max_label, c.label);
    }
    if (config.corpus.n_classes) {
        if (max_label >= *config.corpus.n_classes)
            throw LabelError("manifest label " + std::to_string(max_label) + " exceeds corpus.n_classes = " +
                             std::to_string(*config.corpus.n_classes));
        return *config.corpus.n_classes;
    }
    return std::max(2, max_label + 1);
}

struct LoadedData {
    LabeledCorpus corpus;
    DatasetSplit split;
    TrainingData data;
    FeatureCache::Stats cache;
};

LoadedData load_training_data(const RunConfig& config, const std::string& cache_dir) {
    LoadedData l;
    l.corpus = load_corpus(config.corpus.manifest, config.corpus.seg_seconds, config.corpus.hop_seconds);
    if (l.corpus.segments.empty()) throw EmptyInputError("no clip is long enough for one segment");
    const double ratios[3] = {config.corpus.split[0], config.corpus.split[1], config.corpus.split[2]};
    l.split = split_dataset(l.corpus.segments, l.corpus.clips, ratios, config.corpus.split_seed);
    for (const auto& w : l.split.warnings) spdlog::warn("{}", w);
    const int n_classes = infer_classes(l.corpus, config);
    FeatureCache cache(cache_dir, config.features);
    const FeatureFn featurizer = [&](const Segment& seg, int, std::span<const double> samples) {
        return cache.get(segment_name(seg), samples, l.corpus.clips[seg.clip].sample_rate);
    };
    l.data = prepare_data(l.corpus, l.split, config.features, n_classes, featurizer);
    cache.flush();
    l.cache = cache.stats();
    if (config.train.test_snr_db) perturb_test_set(l.data, *config.train.test_snr_db, config.train.seeds.noise);
    return l;
}

void write_run_manifest(const fs::path& dir, const RunConfig& config) {
    Json m;
    m["config_digest"] = config_digest(config);
    m["manifest"] = config.corpus.manifest;
    m["out"] = dir.string();
    m["tool_version"] = kToolVersion;
    write_file((dir / "run_manifest.json").string(), m.dump(2) + "\n");
    write_file((dir / "config.json").string(), to_json(config).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// featurize

int cmd_featurize(const Options& o, std::ostream& out) {
    if (o.out.empty()) throw ConfigError("featurize: --out is required");
    Json j = assemble_config_json(o);
    const RunConfig config = parse_config(j);
    const LabeledCorpus corpus =
        load_corpus(config.corpus.manifest, config.corpus.seg_seconds, config.corpus.hop_seconds);
    FeatureCache cache(o.out, config.features);
    for (const auto& seg : corpus.segments)
        cache.get(segment_name(seg), segment_samples(corpus.clips, seg), corpus.clips[seg.clip].sample_rate);
    cache.flush();
    write_segment_index((fs::path(o.out) / "segments.tsv").string(), corpus.segments);
    const auto& s = cache.stats();
    out << "segments " << corpus.segments.size() << ", computed " << s.computed << ", reused " << s.reused
        << ", repaired " << s.repaired << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train / eval

std::string cell_name(Mode mode, bool prune, std::uint64_t seed) {
    return std::string(to_string(mode)) + (prune ? "_prune" : "_noprune") + "_seed" + std::to_string(seed);
}

int cmd_train(const Options& o, std::ostream& out) {
    if (o.out.empty()) throw ConfigError("train: --out is required");
    const RunConfig config = parse_config(assemble_config_json(o));
    const fs::path dir(o.out);
    fs::create_directories(dir);
    LoadedData loaded = load_training_data(config, (dir / "features").string());
    ModelConfig model = config.model;
    model.n_classes = loaded.data.n_classes;
    write_run_manifest(dir, config);

    if (config.matrix.empty()) {
        const RunArtifacts run = train(config.train, loaded.data, model);
        write_run_artifacts(dir.string(), run, config.train);
        out << to_string(config.train.mode) << (config.train.prune ? " +prune" : "") << ": accuracy "
            << run.accuracy << ", sample passes " << run.sample_passes << ", epochs " << run.epochs_run
            << " (" << run.stop_reason << ")\n";
        return 0;
    }
    const std::vector<Mode> modes = config.matrix.modes.empty() ? std::vector<Mode>{config.train.mode}
                                                                : config.matrix.modes;
    const std::vector<bool> prune = config.matrix.prune.empty() ? std::vector<bool>{config.train.prune}
                                                                : config.matrix.prune;
    const std::vector<std::uint64_t> seeds = config.matrix.seeds.empty()
                                                 ? std::vector<std::uint64_t>{config.seed}
                                                 : config.matrix.seeds;
    const MatrixResult result = run_matrix(config.train, loaded.data, model, modes, prune, seeds);
    int failures = 0;
    for (const auto& cell : result.cells) {
        const fs::path cell_dir = dir / cell_name(cell.mode, cell.prune, cell.seed);
        if (!cell.artifacts) {
            ++failures;
            fs::create_directories(cell_dir);
            write_file((cell_dir / "error.txt").string(), cell.error + "\n");
            continue;
        }
        TrainConfig cfg = config.train;
        cfg.mode = cell.mode;
        cfg.prune = cell.prune;
        write_run_artifacts(cell_dir.string(), *cell.artifacts, cfg);
    }
    write_summary((dir / "summary.tsv").string(), result.rows);
    Json timing = Json::object();
    for (const auto& row : result.rows)
        timing[std::string(to_string(row.mode)) + (row.prune ? "_prune" : "_noprune")] = row.wall_mean;
    write_file((dir / "timing.json").string(), timing.dump(2) + "\n");
    out << "matrix: " << result.cells.size() << " cells, " << failures << " failed\n";
    return failures == 0 ? 0 : 2;
}

int cmd_eval(const Options& o, std::ostream& out) {
    if (o.runs.size() != 1) throw ConfigError("eval: expects exactly one run directory");
    const fs::path run_dir(o.runs.front());
    // Matrix cells share the config and feature cache of their parent directory.
    const fs::path root = fs::exists(run_dir / "config.json") ? run_dir : run_dir.parent_path();
    if (!fs::exists(root / "config.json"))
        throw IoError("eval: no config.json in " + run_dir.string() + " or its parent");
    Json j = load_config_json((root / "config.json").string());
    if (!o.manifest.empty()) set_config_value(j, "corpus.manifest", o.manifest);
    const RunConfig config = parse_config(j);
    const fs::path out_dir = o.out.empty() ? run_dir : fs::path(o.out);
    fs::create_directories(out_dir);
    LoadedData loaded = load_training_data(config, (root / "features").string());
    ModelConfig model_cfg = config.model;
    model_cfg.n_classes = loaded.data.n_classes;
    ModelState model = load_checkpoint((run_dir / "model.ckpt").string(), model_cfg);
    const EvalResult r = evaluate(model, loaded.data.test, config.train.batch);
    write_confusion((out_dir / "eval_confusion.tsv").string(), r.confusion);
    Json m;
    m["accuracy"] = r.accuracy;
    m["loss"] = r.loss;
    m["test_count"] = loaded.data.test.size();
    write_file((out_dir / "eval.json").string(), m.dump(2) + "\n");
    out << "test accuracy " << r.accuracy << " over " << loaded.data.test.size() << " segments\n";
    return 0;
}

// ---------------------------------------------------------------------------
// report

struct RunRecord {
    std::string name;
    Mode mode;
    bool prune;
    double accuracy;
    double passes;
    int n_classes;
    fs::path dir;
};

void collect_runs(const fs::path& dir, std::vector<RunRecord>& runs) {
    if (fs::exists(dir / "metrics.json")) {
        Json m = Json::parse(read_file((dir / "metrics.json").string()));
        RunRecord r{dir.filename().string(),
                    parse_mode(m.at("mode").get<std::string>()),
                    m.at("prune").get<bool>(),
                    m.at("accuracy").get<double>(),
                    m.at("sample_passes").get<double>(),
                    m.at("n_classes").get<int>(),
                    dir};
        runs.push_back(r);
        return;
    }
    if (!fs::is_directory(dir)) throw IoError("report: " + dir.string() + " is not a run directory");
    std::vector<fs::path> children;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory() && fs::exists(e.path() / "metrics.json")) children.push_back(e.path());
    if (children.empty()) throw IoError("report: no runs found under " + dir.string());
    std::sort(children.begin(), children.end());
    for (const auto& c : children) collect_runs(c, runs);
}

std::string fmt(double v, int precision) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(precision) << v;
    return s.str();
}

void print_table(std::ostream& out, const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> width;
    for (const auto& r : rows) {
        width.resize(std::max(width.size(), r.size()), 0);
        for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
    }
    for (std::size_t k = 0; k < rows.size(); ++k) {
        for (std::size_t i = 0; i < rows[k].size(); ++i)
            out << (i ? "  " : "") << std::setw(static_cast<int>(width[i])) << std::left << rows[k][i];
        out << "\n";
        if (k == 0) {
            std::size_t total = 0;
            for (auto w : width) total += w + 2;
            out << std::string(total - 2, '-') << "\n";
        }
    }
}

int cmd_report(const Options& o, std::ostream& out) {
    if (o.runs.empty()) throw ConfigError("report: give at least one run directory");
    std::vector<RunRecord> runs;
    for (const auto& r : o.runs) collect_runs(r, runs);
    const int classes = runs.front().n_classes;
    for (const auto& r : runs)
        if (r.n_classes != classes)
            throw ConfigError("report: runs disagree on the class count (" + std::to_string(classes) + " vs " +
                              std::to_string(r.n_classes) + " in " + r.dir.string() + ")");

    // Group by (mode, prune) in first-seen order.
    std::vector<std::pair<Mode, bool>> order;
    std::map<std::pair<Mode, bool>, std::vector<const RunRecord*>> groups;
    for (const auto& r : runs) {
        auto key = std::make_pair(r.mode, r.prune);
        if (!groups.contains(key)) order.push_back(key);
        groups[key].push_back(&r);
    }
    auto mean_passes = [&](const std::pair<Mode, bool>& key) {
        double s = 0;
        for (const auto* r : groups[key]) s += r->passes;
        return s / static_cast<double>(groups[key].size());
    };
    std::vector<std::vector<std::string>> table{
        {"mode", "prune", "runs", "accuracy", "acc_std", "sample_passes", "reduction"}};
    for (const auto& key : order) {
        const auto& g = groups[key];
        double mean = 0;
        for (const auto* r : g) mean += r->accuracy;
        mean /= static_cast<double>(g.size());
        double var = 0;
        for (const auto* r : g) var += (r->accuracy - mean) * (r->accuracy - mean);
        const double sd = g.size() > 1 ? std::sqrt(var / static_cast<double>(g.size() - 1)) : 0.0;
        std::string reduction = "-";
        const auto twin = std::make_pair(key.first, false);
        if (key.second && groups.contains(twin) && mean_passes(twin) > 0)
            reduction = fmt(100.0 * (mean_passes(key) / mean_passes(twin) - 1.0), 1) + "%";
        table.push_back({to_string(key.first), key.second ? "yes" : "no", std::to_string(g.size()),
                         fmt(100.0 * mean, 2) + "%", fmt(100.0 * sd, 2), fmt(mean_passes(key), 1), reduction});
    }
    std::ostringstream text;
    print_table(text, table);
    if (runs.size() == 1) {
        const Confusion c = read_confusion((runs.front().dir / "confusion.tsv").string());
        text << "\nconfusion matrix (rows: true class, columns: predicted)\n";
        std::vector<std::vector<std::string>> cm{{"true\\pred"}};
        for (std::size_t k = 0; k < c.size(); ++k) cm[0].push_back(std::to_string(k));
        cm[0].push_back("total");
        for (std::size_t r = 0; r < c.size(); ++r) {
            std::vector<std::string> row{std::to_string(r)};
            std::int64_t total = 0;
            for (auto v : c[r]) {
                row.push_back(std::to_string(v));
                total += v;
            }
            row.push_back(std::to_string(total));
            cm.push_back(row);
        }
        print_table(text, cm);
    }
    out << text.str();
    if (!o.out.empty()) {
        fs::create_directories(o.out);
        write_file((fs::path(o.out) / "report.txt").string(), text.str());
    }
    return 0;
}

int exit_code_for(const Error& e) {
    switch (e.kind()) {
        case ErrorKind::numeric:
        case ErrorKind::shape:
            return 2;
        default:
            return 1;
    }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Underwater acoustic target recognition toolkit: data pruning and smoothness regularization"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);
    Options o;
    std::string seed_text;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "JSON config file");
        sub->add_option("--manifest", o.manifest, "clip manifest (overrides corpus.manifest)");
        sub->add_option("--out", o.out, "output directory");
        sub->add_option("--seed", seed_text, "base seed");
    };
    auto add_training = [&](CLI::App* sub) {
        sub->add_option_function<std::string>("--feature", [&](const std::string& v) { o.feature = v; },
                                               "feature kind")
            ->check(CLI::IsMember({"stft", "mel", "cqt"}));
        sub->add_option_function<std::string>("--mode", [&](const std::string& v) { o.mode = v; },
                                               "training mode")
            ->check(CLI::IsMember({"baseline", "aug", "smooth"}));
        sub->add_flag("--prune", o.prune, "enable adaptive data pruning");
        sub->add_option_function<double>("--alpha", [&](double v) { o.alpha = v; }, "KL weight");
        sub->add_option_function<double>("--epsilon", [&](double v) { o.epsilon = v; }, "pruning threshold");
        sub->add_flag("--print-config", o.print_config, "print the effective config with all defaults and exit");
    };

    auto* synth = app.add_subcommand("synth", "write a synthetic ship-noise corpus (WAV files + manifest)");
    add_common(synth);
    synth->add_option("--spec", o.spec, "JSON corpus spec (built-in two-class spec when omitted)");
    auto* featurize = app.add_subcommand("featurize", "compute and cache segment spectrograms");
    add_common(featurize);
    add_training(featurize);
    auto* trainc = app.add_subcommand("train", "train one run or a comparison matrix");
    add_common(trainc);
    add_training(trainc);
    auto* evalc = app.add_subcommand("eval", "re-evaluate a trained run on its test split");
    add_common(evalc);
    evalc->add_option("run", o.runs, "run directory")->required();
    auto* report = app.add_subcommand("report", "tabulate one or more run or matrix directories");
    report->add_option("runs", o.runs, "run or matrix directories")->required();
    report->add_option("--out", o.out, "also write report.txt here");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        if (!seed_text.empty()) {
            try {
                std::size_t pos = 0;
                o.seed = std::stoull(seed_text, &pos);
                if (pos != seed_text.size()) throw std::invalid_argument(seed_text);
            } catch (const std::exception&) {
                throw ConfigError("--seed must be a non-negative integer, got '" + seed_text + "'");
            }
        }
        if (o.print_config) {
            print_config(o, out);
            return 0;
        }
        if (synth->parsed()) return cmd_synth(o, out);
        if (featurize->parsed()) return cmd_featurize(o, out);
        if (trainc->parsed()) return cmd_train(o, out);
        if (evalc->parsed()) return cmd_eval(o, out);
        if (report->parsed()) return cmd_report(o, out);
        return 1;
    } catch (const Error& e) {
        err << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const Json::exception& e) {
        err << "error (format): " << e.what() << "\n";
        return 1;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error (io): " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace uatr
