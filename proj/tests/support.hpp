#pragma once

// Helpers shared by the unit tests and the acceptance suite.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "uatr/losses.hpp"
#include "uatr/model.hpp"

namespace uatr::testing {

inline Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> g(0.0, scale);
    for (double& v : t.data) v = g(rng);
    return t;
}

/// Loss of the full objective for the given inputs; fills parameter grads
/// when `with_grad` is set.
inline double objective(ModelState& model, const Tensor& raw, const Tensor* noisy, const std::vector<int>& labels,
                        double alpha, bool with_grad) {
    Tape tape;
    auto bound = bind(tape, model);
    auto bundle = forward_bundle(tape, bound, raw, noisy);
    auto terms = total_loss(tape, bundle, labels, alpha);
    if (with_grad) {
        model.zero_grad();
        tape.backward(terms.total);
    }
    return tape.value(terms.total)[0];
}

struct GradCheck {
    std::size_t checked = 0;
    std::size_t failures = 0;
    double worst_rel = 0.0;
    std::string worst_param;
};

/// Compares every parameter gradient entry against central differences:
/// |analytic - numeric| <= max(abs_floor, rel * max(|analytic|, |numeric|)).
inline GradCheck gradient_check(ModelState& model, const Tensor& raw, const Tensor* noisy,
                                const std::vector<int>& labels, double alpha, double h = 1e-4,
                                double rel = 1e-4, double abs_floor = 1e-6) {
    objective(model, raw, noisy, labels, alpha, true);
    GradCheck out;
    for (auto& p : model.params) {
        const Tensor analytic = p.grad;
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double keep = p.value.data[i];
            p.value.data[i] = keep + h;
            const double up = objective(model, raw, noisy, labels, alpha, false);
            p.value.data[i] = keep - h;
            const double down = objective(model, raw, noisy, labels, alpha, false);
            p.value.data[i] = keep;
            const double numeric = (up - down) / (2 * h);
            const double a = analytic.data[i];
            const double err = std::abs(a - numeric);
            const double scale = std::max(std::abs(a), std::abs(numeric));
            ++out.checked;
            if (err > std::max(abs_floor, rel * scale)) ++out.failures;
            if (scale > abs_floor && err / scale > out.worst_rel) {
                out.worst_rel = err / scale;
                out.worst_param = p.name;
            }
        }
    }
    return out;
}

/// Draws every bias at random. Zero-initialized biases put some ReLU inputs
/// exactly on the kink (0 + sum of zeros), where finite differences are
/// one-sided and meaningless.
inline void randomize_biases(ModelState& model, std::mt19937_64& rng, double scale = 0.1) {
    std::normal_distribution<double> g(0.0, scale);
    for (auto& p : model.params)
        if (p.name.size() > 2 && p.name.compare(p.name.size() - 2, 2, ".b") == 0)
            for (double& v : p.value.data) v = g(rng);
}

inline ModelConfig compact_config(int n_classes = 3) {
    ModelConfig c;
    c.channels = {2, 3, 4};
    c.heads = 2;
    c.embed_dim = 4;
    c.prune_dim = 3;
    c.n_classes = n_classes;
    return c;
}

}  // namespace uatr::testing

#include "uatr/corpus.hpp"
#include "uatr/trainer.hpp"

namespace uatr::testing {

/// Small featurized dataset built straight from synthetic clips: `per_class`
/// training examples per class (the first `dups` of each class repeated
/// bit-identically), plus two validation and two test examples per class.
inline TrainingData tiny_data(int n_classes, int per_class, int dups = 0, std::uint64_t seed = 1) {
    TrainingData data;
    data.sample_rate = 1000;
    data.n_classes = n_classes;
    data.features.mel.n_mels = 8;
    data.features.frame_len_s = 0.064;
    data.features.hop_len_s = 0.064;
    int next_id = 0;
    auto make = [&](int label, std::uint64_t clip_seed, double noise) {
        SynthClassSpec spec;
        spec.fundamental_hz = 60.0 + 45.0 * label;
        spec.n_harmonics = 3;
        spec.broadband_level = noise;
        const AudioClip clip = synth_clip(spec, 0.5, data.sample_rate, clip_seed);
        Example ex;
        ex.id = next_id++;
        ex.label = label;
        ex.waveform = clip.samples;
        const Spectrogram s = featurize(ex.waveform, data.sample_rate, data.features);
        ex.features = Tensor({s.frames, s.bins}, s.values);
        return ex;
    };
    int group = 0;
    for (int c = 0; c < n_classes; ++c) {
        for (int i = 0; i < per_class; ++i) {
            if (i < dups) {
                Example ex = make(c, derive_seed(seed, {static_cast<std::uint64_t>(c), 999}), 0.0);
                ex.dup_group = group;
                data.train.push_back(ex);
            } else {
                data.train.push_back(make(c, derive_seed(seed, {static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(i)}), 0.2));
            }
        }
        if (dups > 0) ++group;
        for (int i = 0; i < 2; ++i) {
            data.val.push_back(make(c, derive_seed(seed, {static_cast<std::uint64_t>(c), 100u + i}), 0.2));
            data.test.push_back(make(c, derive_seed(seed, {static_cast<std::uint64_t>(c), 200u + i}), 0.2));
        }
    }
    return data;
}

inline ModelConfig tiny_model(int n_classes) {
    ModelConfig c;
    c.channels = {2, 4, 4};
    c.heads = 2;
    c.embed_dim = 8;
    c.prune_dim = 16;
    c.n_classes = n_classes;
    return c;
}

}  // namespace uatr::testing
