#pragma once

#include <optional>
#include <span>
#include <vector>

#include "uatr/autodiff.hpp"
#include "uatr/tensor.hpp"

namespace uatr {

inline constexpr double kProbFloor = 1e-12;

/// Row-wise softmax with max shift. z: [n, C].
Tensor softmax_rows(const Tensor& z);
Tensor log_softmax_rows(const Tensor& z);

/// Mean cross-entropy of logits against integer labels.
double cross_entropy(const Tensor& z, std::span<const int> labels);

/// Mean KL(softmax(z) || softmax(z_other)) with probability floor.
double kl_term(const Tensor& z, const Tensor& z_other);

/// Logits and side outputs of one forward pass over raw (and optionally
/// noisy) inputs.
struct LogitBundle {
    Var z;
    std::optional<Var> z_noisy;
    Var emb;
    Var s_raw;
};

struct LossTerms {
    Var total;
    double ce = 0.0;
    double reg = 0.0;
};

/// L = CE(z, y) + alpha (KL(z || z~) + KL(z~ || z)). The noisy logits only
/// ever reach the regularizer.
LossTerms total_loss(Tape& tape, const LogitBundle& bundle, std::span<const int> labels, double alpha);

}  // namespace uatr
