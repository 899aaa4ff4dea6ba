#include <cmath>
#include <sstream>

#include "uatr/binary_io.hpp"
#include "uatr/digest.hpp"
#include "uatr/error.hpp"
#include "uatr/model.hpp"
#include "uatr/rng.hpp"

namespace uatr {

void ModelConfig::validate() const {
    for (int c : channels)
        if (c < 1) throw ParameterError("model channels must be positive");
    if (time_kernel != 1 && time_kernel != 3) throw ParameterError("time_kernel must be 1 or 3");
    if (heads < 1 || embed_dim < 1 || embed_dim % heads != 0)
        throw ParameterError("embed_dim must be a positive multiple of heads");
    if (prune_dim < 2) throw ParameterError("prune_dim must be at least 2");
    if (n_classes < 2) throw ParameterError("n_classes must be at least 2");
}

std::string ModelConfig::describe() const {
    std::ostringstream ss;
    ss << "channels=" << channels[0] << ',' << channels[1] << ',' << channels[2]
       << ";time_kernel=" << time_kernel << ";heads=" << heads << ";embed=" << embed_dim
       << ";prune=" << prune_dim << ";classes=" << n_classes;
    return ss.str();
}

std::uint64_t ModelConfig::digest() const { return fnv1a(describe()); }

Parameter& ModelState::param(const std::string& name) {
    for (auto& p : params)
        if (p.name == name) return p;
    throw ParameterError("no parameter named " + name);
}

const Parameter& ModelState::param(const std::string& name) const {
    for (const auto& p : params)
        if (p.name == name) return p;
    throw ParameterError("no parameter named " + name);
}

std::size_t ModelState::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.value.size();
    return n;
}

void ModelState::zero_grad() {
    for (auto& p : params) std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0);
}

namespace {

Tensor he_uniform(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& v : t.data) v = u(rng);
    return t;
}

}  // namespace

ModelState init_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ModelState m;
    m.config = config;
    Rng rng(seed);
    const auto kt = static_cast<std::size_t>(config.time_kernel);
    auto conv = [&](const std::string& name, std::size_t co, std::size_t ci) {
        m.params.emplace_back(name + ".w", he_uniform({co, ci, kt, 3}, ci * kt * 3, rng));
        m.params.emplace_back(name + ".b", Tensor({co}));
    };
    const auto c1 = static_cast<std::size_t>(config.channels[0]);
    const auto c2 = static_cast<std::size_t>(config.channels[1]);
    const auto c3 = static_cast<std::size_t>(config.channels[2]);
    const auto E = static_cast<std::size_t>(config.embed_dim);
    const auto C = static_cast<std::size_t>(config.n_classes);
    const auto d = static_cast<std::size_t>(config.prune_dim);

    conv("stem", c1, 1);
    conv("block1.conv1", c1, c1);
    conv("block1.conv2", c1, c1);
    conv("down2", c2, c1);
    conv("block2.conv1", c2, c2);
    conv("block2.conv2", c2, c2);
    conv("down3", c3, c2);
    conv("block3.conv1", c3, c3);
    conv("block3.conv2", c3, c3);

    {
        Tensor token({c3});
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        for (double& v : token.data) v = u(rng);
        m.params.emplace_back("pool.token", std::move(token));
    }
    m.params.emplace_back("pool.wq", he_uniform({E, c3}, c3, rng));
    m.params.emplace_back("pool.wk", he_uniform({E, c3}, c3, rng));
    m.params.emplace_back("pool.wv", he_uniform({E, c3}, c3, rng));
    m.params.emplace_back("pool.wo", he_uniform({E, E}, E, rng));
    m.params.emplace_back("pool.bo", Tensor({E}));
    m.params.emplace_back("head.w", he_uniform({C, E}, E, rng));
    m.params.emplace_back("head.b", Tensor({C}));
    m.params.emplace_back("prune.w", he_uniform({d, E}, E, rng));
    m.params.emplace_back("prune.b", Tensor({d}));
    return m;
}

Var BoundModel::operator[](const std::string& name) const {
    for (std::size_t i = 0; i < model->params.size(); ++i)
        if (model->params[i].name == name) return vars[i];
    throw ParameterError("no parameter named " + name);
}

BoundModel bind(Tape& tape, ModelState& model) {
    BoundModel b;
    b.model = &model;
    b.vars.reserve(model.params.size());
    for (auto& p : model.params) b.vars.push_back(tape.parameter(p));
    return b;
}

namespace {

Var conv(Tape& tape, const BoundModel& m, const std::string& name, Var x, std::size_t stride_f) {
    return ops::conv2d(tape, x, m[name + ".w"], m[name + ".b"], stride_f);
}

// Pre-activation residual block: h + conv2(relu(conv1(relu(h)))).
Var residual(Tape& tape, const BoundModel& m, const std::string& name, Var h) {
    Var a = conv(tape, m, name + ".conv1", ops::relu(tape, h), 1);
    Var b = conv(tape, m, name + ".conv2", ops::relu(tape, a), 1);
    return ops::add(tape, h, b);
}

}  // namespace

ForwardOutput pool_and_heads(Tape& tape, const BoundModel& m, Var sequence) {
    const auto heads = static_cast<std::size_t>(m.model->config.heads);
    Var q = ops::linear(tape, m["pool.token"], m["pool.wq"]);
    Var keys = ops::linear(tape, sequence, m["pool.wk"]);
    Var values = ops::linear(tape, sequence, m["pool.wv"]);
    Var pooled = ops::attend(tape, q, keys, values, heads);
    ForwardOutput out;
    out.sequence = sequence;
    out.emb = ops::linear(tape, pooled, m["pool.wo"], m["pool.bo"]);
    out.logits = ops::linear(tape, out.emb, m["head.w"], m["head.b"]);
    out.s_raw = ops::linear(tape, out.emb, m["prune.w"], m["prune.b"]);
    return out;
}

ForwardOutput forward(Tape& tape, const BoundModel& m, const Tensor& batch) {
    if (batch.rank() != 3) throw ShapeError("batch must be [n, frames, bins], got " + batch.shape_string());
    if (batch.dim(0) == 0 || batch.dim(1) == 0 || batch.dim(2) == 0)
        throw ShapeError("batch has an empty dimension " + batch.shape_string());
    guard_finite(batch, "input batch");
    Tensor image({batch.dim(0), 1, batch.dim(1), batch.dim(2)}, batch.data);
    Var h = conv(tape, m, "stem", tape.constant(std::move(image)), 1);
    h = residual(tape, m, "block1", h);
    h = conv(tape, m, "down2", ops::relu(tape, h), 2);
    h = residual(tape, m, "block2", h);
    h = conv(tape, m, "down3", ops::relu(tape, h), 2);
    h = residual(tape, m, "block3", h);
    Var seq = ops::freq_mean(tape, ops::relu(tape, h));
    return pool_and_heads(tape, m, seq);
}

LogitBundle forward_bundle(Tape& tape, const BoundModel& bound, const Tensor& raw, const Tensor* noisy) {
    ForwardOutput r = forward(tape, bound, raw);
    LogitBundle b{r.logits, std::nullopt, r.emb, r.s_raw};
    if (noisy) {
        if (noisy->shape != raw.shape) throw ShapeError("noisy batch shape differs from raw batch");
        b.z_noisy = forward(tape, bound, *noisy).logits;
    }
    return b;
}

Tensor stack_batch(const std::vector<const Tensor*>& items) {
    if (items.empty()) throw ShapeError("cannot stack an empty batch");
    const auto& first = *items.front();
    if (first.rank() != 2) throw ShapeError("batch items must be [frames, bins]");
    Tensor out({items.size(), first.dim(0), first.dim(1)});
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (items[i]->shape != first.shape)
            throw ShapeError("batch items differ in shape: " + items[i]->shape_string() + " vs " +
                             first.shape_string());
        std::copy(items[i]->data.begin(), items[i]->data.end(),
                  out.data.begin() + static_cast<std::ptrdiff_t>(i * first.size()));
    }
    return out;
}

std::string encode_checkpoint(const ModelState& model) {
    ByteWriter w;
    w.bytes("ACKP");
    w.u32(1);
    w.u64(model.config.digest());
    w.u64(static_cast<std::uint64_t>(model.step));
    w.u32(static_cast<std::uint32_t>(model.params.size()));
    for (const auto& p : model.params) {
        w.u32(static_cast<std::uint32_t>(p.value.rank()));
        for (auto d : p.value.shape) w.u32(static_cast<std::uint32_t>(d));
        for (double v : p.value.data) w.f32(static_cast<float>(v));
    }
    return w.str();
}

void save_checkpoint(const std::string& path, const ModelState& model) {
    write_file(path, encode_checkpoint(model));
}

ModelState decode_checkpoint(std::span<const char> bytes, const ModelConfig& config) {
    ByteReader r(bytes);
    if (r.bytes(4) != "ACKP") throw FormatError("not a model checkpoint");
    if (r.u32() != 1) throw FormatError("unsupported checkpoint version");
    const std::uint64_t digest = r.u64();
    if (digest != config.digest())
        throw FormatError("checkpoint architecture digest " + hex_digest(digest) +
                          " does not match configuration " + hex_digest(config.digest()) + " (" +
                          config.describe() + ")");
    ModelState m = init_model(config, 0);
    m.step = static_cast<std::int64_t>(r.u64());
    if (r.u32() != m.params.size()) throw FormatError("checkpoint parameter count mismatch");
    for (auto& p : m.params) {
        const auto rank = r.u32();
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = r.u32();
        if (shape != p.value.shape) throw FormatError("checkpoint shape mismatch for " + p.name);
        for (double& v : p.value.data) v = r.f32();
    }
    if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint");
    return m;
}

ModelState load_checkpoint(const std::string& path, const ModelConfig& config) {
    auto bytes = read_file(path);
    return decode_checkpoint(std::span<const char>(bytes.data(), bytes.size()), config);
}

}  // namespace uatr
