#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "clb/rng.hpp"
#include "clb/stream_io.hpp"

namespace clb {

// Row-major dense matrix of doubles. All training arithmetic is double
// precision; only stored stream features are single precision.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), 0.0) {}

    double& at(int r, int c) {
        return a[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c)];
    }
    double at(int r, int c) const {
        return a[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c)];
    }
    std::size_t size_bytes() const { return a.size() * sizeof(double); }
};

// One fully connected layer, weights row-major (out x in).
struct Layer {
    int in = 0;
    int out = 0;
    std::vector<double> w;
    std::vector<double> b;

    std::size_t param_count() const { return w.size() + b.size(); }
};

// Outputs of every layer for one batch. outputs[l] is post-activation
// for ReLU layers and raw affine output for the final layer (unless the
// net applies ReLU there too, see Mlp::relu_output).
struct ForwardTrace {
    Matrix input;
    std::vector<Matrix> outputs;

    const Matrix& logits() const { return outputs.back(); }
    std::size_t activation_bytes() const;
};

// Plain multilayer perceptron: hidden layers with ReLU, final layer
// affine. relu_output=true turns the final layer into a ReLU layer as
// well (used for feature trunks whose output feeds another linear map).
class Mlp {
  public:
    Mlp() = default;
    // Weights drawn uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)],
    // biases zero. Draw order (layer by layer, row-major) is part of the
    // determinism contract.
    Mlp(int input_dim, const std::vector<int>& hidden, int output_dim,
        Rng& rng, bool relu_output = false);

    int input_dim() const { return input_dim_; }
    int output_dim() const { return output_dim_; }
    bool relu_output() const { return relu_output_; }
    const std::vector<Layer>& layers() const { return layers_; }
    std::vector<Layer>& layers() { return layers_; }

    std::size_t param_count() const;
    std::size_t param_bytes() const { return param_count() * sizeof(double); }

    ForwardTrace forward(const Matrix& batch) const;

    // Flat parameter vector, layer by layer, weights then bias.
    std::vector<double> flatten() const;
    void unflatten(std::span<const double> params);

    // Accumulates parameter gradients given dL/d(final output), walking
    // the trace backwards. When d_hidden is non-null it supplies extra
    // dL/d(post-activation output) per non-final layer (regularisers
    // that touch intermediate representations). Returns dL/d(input) if
    // want_dinput, else an empty matrix.
    Matrix backward(const ForwardTrace& trace, const Matrix& d_out,
                    const std::vector<Matrix>* d_hidden,
                    std::span<double> grad_out, bool want_dinput = false) const;

    std::vector<NamedTensor> to_tensors() const;
    static Mlp from_tensors(const std::vector<NamedTensor>& tensors);

  private:
    int input_dim_ = 0;
    int output_dim_ = 0;
    bool relu_output_ = false;
    std::vector<Layer> layers_;
};

struct LossGrad {
    double loss = 0.0;
    std::vector<double> grad;  // flat, same layout as Mlp::flatten
};

// Mean cross-entropy with a numerically stable softmax. Gradient of the
// mean loss w.r.t. logits is (softmax - onehot) / batch.
LossGrad xent_loss_grad(const Mlp& net, const ForwardTrace& trace,
                        std::span<const int> labels);

// Average softmax cross-entropy loss only (no gradient).
double xent_loss(const Matrix& logits, std::span<const int> labels);

struct DrlConfig {
    double lambda = 0.0;
    bool include_logits = false;  // default: hidden representations only
};

// Discriminative representation loss over a batch: mean pairwise inner
// product between representations of different-class samples plus mean
// pairwise inner product between same-class samples (ordered pairs,
// i != j). A term with no pairs contributes zero. Returns the raw loss
// and its gradient, unscaled by lambda.
LossGrad drl_loss_grad(const Mlp& net, const ForwardTrace& trace,
                       std::span<const int> labels, const DrlConfig& cfg);

// Cross-entropy plus lambda times the representation loss. lambda == 0
// skips the representation term entirely, so results are bit-identical
// to xent_loss_grad.
LossGrad combined_loss_grad(const Mlp& net, const ForwardTrace& trace,
                            std::span<const int> labels, const DrlConfig& cfg);

// In-place SGD step: params -= lr * grad. Throws NumericError if any
// gradient entry is non-finite.
void sgd_step(Mlp& net, std::span<const double> grad, double lr);

struct Alignment {
    double inner = 0.0;
    double cosine = 0.0;  // zero when either vector has zero norm
};

Alignment grad_alignment(std::span<const double> g_current,
                         std::span<const double> g_memory);

// Elementwise probs[c] / priors[c]. Scores are for ranking only (not
// renormalised). Throws ConfigError on length mismatch or nonpositive
// prior.
std::vector<double> prior_corrected_scores(std::span<const double> probs,
                                           std::span<const double> priors);

// Index of the maximum, lowest index on ties.
int argmax_lowest(std::span<const double> scores);

// Stable softmax of one logit row.
std::vector<double> softmax_row(std::span<const double> logits);

}  // namespace clb
