#include "uatr/config.hpp"

#include <sstream>

#include "uatr/binary_io.hpp"
#include "uatr/digest.hpp"
#include "uatr/error.hpp"

namespace uatr {

namespace {

using J = Json;

std::vector<SchemaEntry> build_schema() {
    return {
        {"corpus.manifest", "string", nullptr, true, "clip manifest (path, label, source_id[, dup_key])"},
        {"corpus.seg_seconds", "number", 30.0, false, "segment length in seconds"},
        {"corpus.hop_seconds", "number", 15.0, false, "segment hop in seconds (15 s = 50% overlap)"},
        {"corpus.split", "number[3]", J::array({0.7, 0.1, 0.2}), false, "train/val/test ratios by source"},
        {"corpus.split_seed", "integer", 0, false, "seed of the source-level split"},
        {"corpus.min_clip_pad", "boolean", false, false, "must stay false: short clips are dropped"},
        {"corpus.n_classes", "integer?", nullptr, false, "class count; max label + 1 when null"},
        {"features.kind", "string", "mel", false, "stft | mel | cqt"},
        {"features.frame_seconds", "number", 0.050, false, "analysis frame length"},
        {"features.hop_seconds", "number", 0.025, false, "analysis hop"},
        {"features.mel.n_mels", "integer", 300, false, "mel bands"},
        {"features.mel.fmin", "number", 0.0, false, "lowest mel edge in Hz"},
        {"features.mel.fmax", "number?", nullptr, false, "highest mel edge in Hz; Nyquist when null"},
        {"features.cqt.bins_per_octave", "integer", 12, false, "CQT resolution"},
        {"features.cqt.fmin", "number", 50.0, false, "lowest CQT center in Hz"},
        {"features.cqt.n_bins", "integer?", nullptr, false, "CQT bins; all below Nyquist when null"},
        {"model.channels", "integer[3]", J::array({16, 32, 64}), false, "residual stage widths"},
        {"model.time_kernel", "integer", 3, false, "conv kernel extent along time (1 or 3)"},
        {"model.heads", "integer", 4, false, "attention heads"},
        {"model.embed_dim", "integer", 64, false, "pooled embedding size"},
        {"model.prune_dim", "integer", 16, false, "pruning-score dimension"},
        {"train.mode", "string", "smooth", false, "baseline | aug | smooth"},
        {"train.alpha", "number", 2.0, false, "weight of the symmetric KL term"},
        {"train.prune", "boolean", false, false, "enable adaptive data pruning"},
        {"train.lr", "number", 5e-4, false, "peak learning rate"},
        {"train.warmup_epochs", "number", 5.0, false, "linear warmup length"},
        {"train.max_epoch", "integer", 100, false, "epoch budget (cosine reaches 0 here)"},
        {"train.batch", "integer", 16, false, "batch size"},
        {"train.patience", "integer", 10, false, "early-stopping patience in epochs"},
        {"train.seed", "integer", 0, false, "base seed of the data/init/prune/noise streams"},
        {"train.test_snr_db", "number?", nullptr, false, "evaluate on white-noise test copies at this SNR"},
        {"pruning.tau", "integer", 10, false, "warmup epochs without pruning"},
        {"pruning.epsilon", "number", 1e-5, false, "pairwise cross-entropy threshold"},
        {"pruning.symmetric", "boolean", false, false, "use min(H(si,sj), H(sj,si))"},
        {"perturb.snr_low_db", "number", 5.0, false, "lowest companion SNR"},
        {"perturb.snr_high_db", "number", 30.0, false, "highest companion SNR"},
        {"perturb.kind", "string", "gaussian_white", false, "noise kind"},
        {"perturb.redraw", "boolean", true, false, "fresh companion every epoch"},
        {"matrix.modes", "string[]", J::array(), false, "modes of a comparison matrix"},
        {"matrix.prune", "boolean[]", J::array(), false, "prune settings of a comparison matrix"},
        {"matrix.seeds", "integer[]", J::array(), false, "seeds of a comparison matrix"},
    };
}

std::vector<std::string> split_path(const std::string& path) {
    std::vector<std::string> parts;
    std::stringstream ss(path);
    std::string part;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    return parts;
}

const J* lookup(const J& root, const std::string& path) {
    const J* node = &root;
    for (const auto& part : split_path(path)) {
        if (!node->is_object()) return nullptr;
        auto it = node->find(part);
        if (it == node->end()) return nullptr;
        node = &*it;
    }
    return node;
}

bool is_integer(const J& v) { return v.is_number_integer() || v.is_number_unsigned(); }

bool matches(const J& v, const std::string& type) {
    std::string base = type;
    if (!base.empty() && base.back() == '?') {
        if (v.is_null()) return true;
        base.pop_back();
    }
    auto element_ok = [](const J& e, const std::string& t) {
        if (t == "number") return e.is_number();
        if (t == "integer") return is_integer(e);
        if (t == "boolean") return e.is_boolean();
        if (t == "string") return e.is_string();
        return false;
    };
    const auto bracket = base.find('[');
    if (bracket == std::string::npos) return element_ok(v, base);
    if (!v.is_array()) return false;
    const std::string elem = base.substr(0, bracket);
    const std::string count = base.substr(bracket + 1, base.size() - bracket - 2);
    if (!count.empty() && v.size() != std::stoul(count)) return false;
    for (const auto& e : v)
        if (!element_ok(e, elem)) return false;
    return true;
}

void collect_unknown(const J& node, const std::string& prefix, const std::vector<SchemaEntry>& schema,
                     std::vector<std::string>& errors) {
    for (auto it = node.begin(); it != node.end(); ++it) {
        const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        bool leaf = false, section = false;
        for (const auto& e : schema) {
            if (e.path == path) leaf = true;
            if (e.path.rfind(path + ".", 0) == 0) section = true;
        }
        if (leaf) continue;
        if (section && it.value().is_object()) {
            collect_unknown(it.value(), path, schema, errors);
        } else if (section) {
            errors.push_back(path + ": expected an object");
        } else {
            errors.push_back(path + ": unknown key");
        }
    }
}

}  // namespace

const std::vector<SchemaEntry>& config_schema() {
    static const std::vector<SchemaEntry> schema = build_schema();
    return schema;
}

void set_config_value(Json& config, const std::string& dotted_path, Json value) {
    if (!config.is_object()) config = Json::object();
    Json* node = &config;
    const auto parts = split_path(dotted_path);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        Json& child = (*node)[parts[i]];
        if (!child.is_object()) child = Json::object();
        node = &child;
    }
    (*node)[parts.back()] = std::move(value);
}

Json default_config_json() {
    Json out = Json::object();
    for (const auto& e : config_schema()) set_config_value(out, e.path, e.default_value);
    return out;
}

RunConfig parse_config(const Json& user) {
    std::vector<std::string> errors;
    if (!user.is_object()) throw ConfigError("config: top level must be an object");
    const auto& schema = config_schema();
    collect_unknown(user, "", schema, errors);

    Json merged = Json::object();
    for (const auto& e : schema) {
        const J* v = lookup(user, e.path);
        if (v && !matches(*v, e.type)) {
            errors.push_back(e.path + ": expected " + e.type + ", got " + v->dump());
            continue;
        }
        if (v && !(e.required && v->is_null())) {
            set_config_value(merged, e.path, *v);
        } else if (e.required) {
            errors.push_back(e.path + ": missing required key (no default)");
        } else {
            set_config_value(merged, e.path, e.default_value);
        }
    }
    if (!errors.empty()) {
        std::string msg = "invalid config:";
        for (const auto& e : errors) msg += "\n  " + e;
        throw ConfigError(msg);
    }

    auto get = [&](const std::string& path) -> const J& { return *lookup(merged, path); };
    auto check = [&](bool ok, const std::string& path, const std::string& what) {
        if (!ok) errors.push_back(path + ": " + what);
    };

    RunConfig c;
    c.corpus.manifest = get("corpus.manifest").get<std::string>();
    c.corpus.seg_seconds = get("corpus.seg_seconds").get<double>();
    c.corpus.hop_seconds = get("corpus.hop_seconds").get<double>();
    for (int i = 0; i < 3; ++i) c.corpus.split[i] = get("corpus.split")[i].get<double>();
    c.corpus.split_seed = get("corpus.split_seed").get<std::uint64_t>();
    c.corpus.min_clip_pad = get("corpus.min_clip_pad").get<bool>();
    if (!get("corpus.n_classes").is_null()) c.corpus.n_classes = get("corpus.n_classes").get<int>();
    check(c.corpus.seg_seconds > 0, "corpus.seg_seconds", "must be positive");
    check(c.corpus.hop_seconds > 0, "corpus.hop_seconds", "must be positive");
    check(c.corpus.split[0] > 0 && c.corpus.split[1] > 0 && c.corpus.split[2] > 0 &&
              std::abs(c.corpus.split[0] + c.corpus.split[1] + c.corpus.split[2] - 1.0) <= 1e-9,
          "corpus.split", "ratios must be positive and sum to 1");
    check(!c.corpus.min_clip_pad, "corpus.min_clip_pad",
          "padding short clips is not supported (it would fabricate periodicity)");
    check(!c.corpus.n_classes || *c.corpus.n_classes >= 2, "corpus.n_classes", "must be at least 2");

    try {
        c.features.kind = parse_feature_kind(get("features.kind").get<std::string>());
    } catch (const Error& e) {
        errors.push_back(std::string("features.kind: ") + e.what());
    }
    c.features.frame_len_s = get("features.frame_seconds").get<double>();
    c.features.hop_len_s = get("features.hop_seconds").get<double>();
    c.features.mel.n_mels = get("features.mel.n_mels").get<int>();
    c.features.mel.fmin = get("features.mel.fmin").get<double>();
    if (!get("features.mel.fmax").is_null()) c.features.mel.fmax = get("features.mel.fmax").get<double>();
    c.features.cqt.bins_per_octave = get("features.cqt.bins_per_octave").get<int>();
    c.features.cqt.fmin = get("features.cqt.fmin").get<double>();
    if (!get("features.cqt.n_bins").is_null()) c.features.cqt.n_bins = get("features.cqt.n_bins").get<int>();
    check(c.features.frame_len_s > 0, "features.frame_seconds", "must be positive");
    check(c.features.hop_len_s > 0, "features.hop_seconds", "must be positive");
    check(c.features.mel.n_mels >= 1, "features.mel.n_mels", "must be at least 1");
    check(c.features.mel.fmin >= 0, "features.mel.fmin", "must be >= 0");
    check(!c.features.mel.fmax || *c.features.mel.fmax > c.features.mel.fmin, "features.mel.fmax",
          "must exceed features.mel.fmin");
    check(c.features.cqt.bins_per_octave >= 1, "features.cqt.bins_per_octave", "must be at least 1");
    check(c.features.cqt.fmin > 0, "features.cqt.fmin", "must be positive");
    check(!c.features.cqt.n_bins || *c.features.cqt.n_bins >= 1, "features.cqt.n_bins", "must be at least 1");

    for (int i = 0; i < 3; ++i) c.model.channels[i] = get("model.channels")[i].get<int>();
    c.model.time_kernel = get("model.time_kernel").get<int>();
    c.model.heads = get("model.heads").get<int>();
    c.model.embed_dim = get("model.embed_dim").get<int>();
    c.model.prune_dim = get("model.prune_dim").get<int>();
    c.model.n_classes = c.corpus.n_classes.value_or(2);
    try {
        c.model.validate();
    } catch (const Error& e) {
        errors.push_back(std::string("model: ") + e.what());
    }

    try {
        c.train.mode = parse_mode(get("train.mode").get<std::string>());
    } catch (const Error& e) {
        errors.push_back(std::string("train.mode: ") + e.what());
    }
    c.train.alpha = get("train.alpha").get<double>();
    c.train.prune = get("train.prune").get<bool>();
    c.train.lr = get("train.lr").get<double>();
    c.train.warmup = get("train.warmup_epochs").get<double>();
    c.train.max_epoch = get("train.max_epoch").get<int>();
    c.train.batch = get("train.batch").get<int>();
    c.train.patience = get("train.patience").get<int>();
    c.seed = get("train.seed").get<std::uint64_t>();
    c.train.seeds = Seeds::from(c.seed);
    if (!get("train.test_snr_db").is_null()) c.train.test_snr_db = get("train.test_snr_db").get<double>();
    c.train.pruning.tau = get("pruning.tau").get<int>();
    c.train.pruning.epsilon = get("pruning.epsilon").get<double>();
    c.train.pruning.symmetric = get("pruning.symmetric").get<bool>();
    c.train.perturb.snr_low_db = get("perturb.snr_low_db").get<double>();
    c.train.perturb.snr_high_db = get("perturb.snr_high_db").get<double>();
    check(get("perturb.kind").get<std::string>() == "gaussian_white", "perturb.kind",
          "only gaussian_white is supported");
    c.train.perturb.redraw = get("perturb.redraw").get<bool>();
    check(c.train.alpha >= 0, "train.alpha", "must be >= 0");
    check(c.train.lr > 0, "train.lr", "must be positive");
    check(c.train.warmup >= 0, "train.warmup_epochs", "must be >= 0");
    check(c.train.max_epoch >= 1, "train.max_epoch", "must be at least 1");
    check(c.train.batch >= 1, "train.batch", "must be at least 1");
    check(c.train.patience >= 1, "train.patience", "must be at least 1");
    check(c.train.pruning.tau >= 0, "pruning.tau", "must be >= 0");
    check(c.train.pruning.epsilon >= 0, "pruning.epsilon", "must be >= 0");
    check(c.train.perturb.snr_low_db <= c.train.perturb.snr_high_db, "perturb.snr_low_db",
          "must not exceed perturb.snr_high_db");

    for (const auto& m : get("matrix.modes")) {
        try {
            c.matrix.modes.push_back(parse_mode(m.get<std::string>()));
        } catch (const Error& e) {
            errors.push_back(std::string("matrix.modes: ") + e.what());
        }
    }
    for (const auto& p : get("matrix.prune")) c.matrix.prune.push_back(p.get<bool>());
    for (const auto& s : get("matrix.seeds")) c.matrix.seeds.push_back(s.get<std::uint64_t>());

    if (!errors.empty()) {
        std::string msg = "invalid config:";
        for (const auto& e : errors) msg += "\n  " + e;
        throw ConfigError(msg);
    }
    return c;
}

Json load_config_json(const std::string& path) {
    const std::string text = read_file(path);
    try {
        return Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw ConfigError("cannot parse config " + path + ": " + e.what());
    }
}

RunConfig load_config(const std::string& path) { return parse_config(load_config_json(path)); }

Json to_json(const RunConfig& c) {
    Json out = Json::object();
    auto set = [&](const std::string& path, Json v) { set_config_value(out, path, std::move(v)); };
    auto opt = [](const auto& o) -> Json { return o ? Json(*o) : Json(nullptr); };
    set("corpus.manifest", c.corpus.manifest);
    set("corpus.seg_seconds", c.corpus.seg_seconds);
    set("corpus.hop_seconds", c.corpus.hop_seconds);
    set("corpus.split", Json::array({c.corpus.split[0], c.corpus.split[1], c.corpus.split[2]}));
    set("corpus.split_seed", c.corpus.split_seed);
    set("corpus.min_clip_pad", c.corpus.min_clip_pad);
    set("corpus.n_classes", opt(c.corpus.n_classes));
    const char* kinds[] = {"stft", "mel", "cqt"};
    set("features.kind", kinds[static_cast<int>(c.features.kind)]);
    set("features.frame_seconds", c.features.frame_len_s);
    set("features.hop_seconds", c.features.hop_len_s);
    set("features.mel.n_mels", c.features.mel.n_mels);
    set("features.mel.fmin", c.features.mel.fmin);
    set("features.mel.fmax", opt(c.features.mel.fmax));
    set("features.cqt.bins_per_octave", c.features.cqt.bins_per_octave);
    set("features.cqt.fmin", c.features.cqt.fmin);
    set("features.cqt.n_bins", opt(c.features.cqt.n_bins));
    set("model.channels", Json::array({c.model.channels[0], c.model.channels[1], c.model.channels[2]}));
    set("model.time_kernel", c.model.time_kernel);
    set("model.heads", c.model.heads);
    set("model.embed_dim", c.model.embed_dim);
    set("model.prune_dim", c.model.prune_dim);
    const char* modes[] = {"baseline", "aug", "smooth"};
    set("train.mode", modes[static_cast<int>(c.train.mode)]);
    set("train.alpha", c.train.alpha);
    set("train.prune", c.train.prune);
    set("train.lr", c.train.lr);
    set("train.warmup_epochs", c.train.warmup);
    set("train.max_epoch", c.train.max_epoch);
    set("train.batch", c.train.batch);
    set("train.patience", c.train.patience);
    set("train.seed", c.seed);
    set("train.test_snr_db", opt(c.train.test_snr_db));
    set("pruning.tau", c.train.pruning.tau);
    set("pruning.epsilon", c.train.pruning.epsilon);
    set("pruning.symmetric", c.train.pruning.symmetric);
    set("perturb.snr_low_db", c.train.perturb.snr_low_db);
    set("perturb.snr_high_db", c.train.perturb.snr_high_db);
    set("perturb.kind", "gaussian_white");
    set("perturb.redraw", c.train.perturb.redraw);
    Json ms = Json::array(), ps = Json::array(), ss = Json::array();
    for (Mode m : c.matrix.modes) ms.push_back(modes[static_cast<int>(m)]);
    for (bool p : c.matrix.prune) ps.push_back(p);
    for (auto s : c.matrix.seeds) ss.push_back(s);
    set("matrix.modes", ms);
    set("matrix.prune", ps);
    set("matrix.seeds", ss);
    return out;
}

std::string config_digest(const RunConfig& config) { return hex_digest(fnv1a(to_json(config).dump())); }

}  // namespace uatr
