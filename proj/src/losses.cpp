#include <algorithm>
#include <cmath>

#include "uatr/error.hpp"
#include "uatr/losses.hpp"

namespace uatr {

Tensor log_softmax_rows(const Tensor& z) {
    if (z.rank() != 2) throw ShapeError("expected [n, C] logits, got " + z.shape_string());
    const std::size_t n = z.dim(0), C = z.dim(1);
    Tensor out(z.shape);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = z.data.data() + i * C;
        const double mx = *std::max_element(row, row + C);
        double s = 0.0;
        for (std::size_t c = 0; c < C; ++c) s += std::exp(row[c] - mx);
        const double lse = mx + std::log(s);
        for (std::size_t c = 0; c < C; ++c) out[i * C + c] = row[c] - lse;
    }
    return out;
}

Tensor softmax_rows(const Tensor& z) {
    if (z.rank() != 2) throw ShapeError("expected [n, C] logits, got " + z.shape_string());
    const std::size_t n = z.dim(0), C = z.dim(1);
    Tensor out(z.shape);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = z.data.data() + i * C;
        const double mx = *std::max_element(row, row + C);
        double s = 0.0;
        for (std::size_t c = 0; c < C; ++c) s += (out[i * C + c] = std::exp(row[c] - mx));
        for (std::size_t c = 0; c < C; ++c) out[i * C + c] /= s;
    }
    return out;
}

double cross_entropy(const Tensor& z, std::span<const int> labels) {
    const Tensor lp = log_softmax_rows(z);
    const std::size_t n = z.dim(0), C = z.dim(1);
    if (labels.size() != n) throw ShapeError("label count does not match batch size");
    if (n == 0) throw ShapeError("cross_entropy of an empty batch");
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= C)
            throw LabelError("label " + std::to_string(y) + " outside 0.." + std::to_string(C - 1));
        acc -= lp[i * C + static_cast<std::size_t>(y)];
    }
    return acc / static_cast<double>(n);
}

double kl_term(const Tensor& z, const Tensor& z_other) {
    if (!same_shape(z, z_other))
        throw ShapeError("kl_term: shape mismatch " + z.shape_string() + " vs " + z_other.shape_string());
    const Tensor p = softmax_rows(z);
    const Tensor q = softmax_rows(z_other);
    const std::size_t n = z.dim(0), C = z.dim(1);
    if (n == 0) throw ShapeError("kl_term of an empty batch");
    double acc = 0.0;
    for (std::size_t i = 0; i < n * C; ++i)
        acc += p[i] * (std::log(std::max(p[i], kProbFloor)) - std::log(std::max(q[i], kProbFloor)));
    return acc / static_cast<double>(n);
}

LossTerms total_loss(Tape& tape, const LogitBundle& bundle, std::span<const int> labels, double alpha) {
    if (!(alpha >= 0) || !std::isfinite(alpha)) throw ParameterError("alpha must be finite and >= 0");
    if (alpha > 0 && !bundle.z_noisy) throw ParameterError("alpha > 0 requires noisy logits");

    LossTerms terms;
    Var ce = ops::cross_entropy(tape, bundle.z, labels);
    terms.ce = tape.value(ce)[0];
    terms.total = ce;
    if (bundle.z_noisy) {
        Var forward_kl = ops::kl_divergence(tape, bundle.z, *bundle.z_noisy);
        Var reverse_kl = ops::kl_divergence(tape, *bundle.z_noisy, bundle.z);
        Var reg = ops::add(tape, forward_kl, reverse_kl);
        terms.reg = tape.value(reg)[0];
        terms.total = ops::add(tape, ce, ops::scale(tape, reg, alpha));
    }
    return terms;
}

}  // namespace uatr
