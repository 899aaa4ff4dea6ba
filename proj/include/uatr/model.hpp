#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "uatr/autodiff.hpp"
#include "uatr/losses.hpp"
#include "uatr/tensor.hpp"

namespace uatr {

struct ModelConfig {
    std::array<int, 3> channels{16, 32, 64};
    /// Time extent of trunk kernels: 3 for 3x3 convolutions, 1 for
    /// frequency-only kernels (time frames then stay independent up to pooling).
    int time_kernel = 3;
    int heads = 4;
    int embed_dim = 64;
    int prune_dim = 16;
    int n_classes = 9;

    void validate() const;
    /// Canonical text form; its digest guards checkpoint compatibility.
    std::string describe() const;
    std::uint64_t digest() const;
};

/// All trainable parameters in declaration order, plus the Adam step count.
struct ModelState {
    ModelConfig config;
    std::vector<Parameter> params;
    std::int64_t step = 0;

    Parameter& param(const std::string& name);
    const Parameter& param(const std::string& name) const;
    std::size_t parameter_count() const;
    void zero_grad();
};

/// He-uniform weights, zero biases, zero moments.
ModelState init_model(const ModelConfig& config, std::uint64_t seed);

/// Parameter leaves of a model bound to one tape.
struct BoundModel {
    ModelState* model = nullptr;
    std::vector<Var> vars;

    Var operator[](const std::string& name) const;
};

BoundModel bind(Tape& tape, ModelState& model);

struct ForwardOutput {
    Var logits;  ///< [n, C]
    Var emb;     ///< [n, E]
    Var s_raw;   ///< [n, d] pruning-layer outputs (pre-softmax)
    Var sequence;  ///< [n, T, c3] trunk output fed to pooling
};

/// batch: [n, T, F] normalized spectrograms.
ForwardOutput forward(Tape& tape, const BoundModel& bound, const Tensor& batch);

/// Attention pooling, classifier head and pruning layer applied to a trunk
/// sequence [n, T, c3].
ForwardOutput pool_and_heads(Tape& tape, const BoundModel& bound, Var sequence);

/// Forward over raw and, when given, noisy inputs on one tape.
LogitBundle forward_bundle(Tape& tape, const BoundModel& bound, const Tensor& raw,
                           const Tensor* noisy = nullptr);

/// Stacks equally shaped [T, F] matrices into [n, T, F].
Tensor stack_batch(const std::vector<const Tensor*>& items);

// ---------------------------------------------------------------------------
// Checkpoints: "ACKP", u32 version, u64 architecture digest, u64 step,
// u32 parameter count, then per parameter u32 rank, u32 dims..., float32
// values (little-endian).

void save_checkpoint(const std::string& path, const ModelState& model);
std::string encode_checkpoint(const ModelState& model);
ModelState load_checkpoint(const std::string& path, const ModelConfig& config);
ModelState decode_checkpoint(std::span<const char> bytes, const ModelConfig& config);

}  // namespace uatr
