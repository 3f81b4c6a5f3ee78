#include "clb/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "clb/errors.hpp"

namespace clb {

std::size_t ForwardTrace::activation_bytes() const {
    std::size_t n = input.size_bytes();
    for (const Matrix& m : outputs) n += m.size_bytes();
    return n;
}

Mlp::Mlp(int input_dim, const std::vector<int>& hidden, int output_dim,
         Rng& rng, bool relu_output)
    : input_dim_(input_dim), output_dim_(output_dim), relu_output_(relu_output) {
    if (input_dim < 1 || output_dim < 1)
        throw ConfigError("mlp dimensions must be positive");
    for (int h : hidden)
        if (h < 1) throw ConfigError("hidden widths must be positive");

    std::vector<int> dims;
    dims.push_back(input_dim);
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(output_dim);

    layers_.resize(dims.size() - 1);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        Layer& layer = layers_[l];
        layer.in = dims[l];
        layer.out = dims[l + 1];
        layer.w.resize(static_cast<std::size_t>(layer.in) *
                       static_cast<std::size_t>(layer.out));
        layer.b.assign(static_cast<std::size_t>(layer.out), 0.0);
        const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in));
        for (double& v : layer.w) v = rng.uniform(-bound, bound);
    }
}

std::size_t Mlp::param_count() const {
    std::size_t n = 0;
    for (const Layer& l : layers_) n += l.param_count();
    return n;
}

ForwardTrace Mlp::forward(const Matrix& batch) const {
    if (batch.cols != input_dim_)
        throw ConfigError("batch width does not match mlp input dim");
    ForwardTrace trace;
    trace.input = batch;
    trace.outputs.reserve(layers_.size());
    const Matrix* h = &trace.input;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const Layer& layer = layers_[l];
        const bool relu = (l + 1 < layers_.size()) || relu_output_;
        Matrix out(batch.rows, layer.out);
        for (int r = 0; r < batch.rows; ++r) {
            for (int j = 0; j < layer.out; ++j) {
                double z = layer.b[static_cast<std::size_t>(j)];
                const double* wrow =
                    layer.w.data() +
                    static_cast<std::size_t>(j) * static_cast<std::size_t>(layer.in);
                for (int i = 0; i < layer.in; ++i) z += h->at(r, i) * wrow[i];
                out.at(r, j) = relu ? (z > 0.0 ? z : 0.0) : z;
            }
        }
        trace.outputs.push_back(std::move(out));
        h = &trace.outputs.back();
    }
    return trace;
}

std::vector<double> Mlp::flatten() const {
    std::vector<double> out;
    out.reserve(param_count());
    for (const Layer& l : layers_) {
        out.insert(out.end(), l.w.begin(), l.w.end());
        out.insert(out.end(), l.b.begin(), l.b.end());
    }
    return out;
}

void Mlp::unflatten(std::span<const double> params) {
    if (params.size() != param_count())
        throw ConfigError("flat parameter size mismatch");
    std::size_t off = 0;
    for (Layer& l : layers_) {
        std::copy(params.begin() + static_cast<std::ptrdiff_t>(off),
                  params.begin() + static_cast<std::ptrdiff_t>(off + l.w.size()),
                  l.w.begin());
        off += l.w.size();
        std::copy(params.begin() + static_cast<std::ptrdiff_t>(off),
                  params.begin() + static_cast<std::ptrdiff_t>(off + l.b.size()),
                  l.b.begin());
        off += l.b.size();
    }
}

Matrix Mlp::backward(const ForwardTrace& trace, const Matrix& d_out,
                     const std::vector<Matrix>* d_hidden,
                     std::span<double> grad_out, bool want_dinput) const {
    const std::size_t n_layers = layers_.size();
    if (trace.outputs.size() != n_layers)
        throw ConfigError("trace does not match network depth");
    if (grad_out.size() != param_count())
        throw ConfigError("gradient buffer size mismatch");
    if (d_hidden && d_hidden->size() + 1 != n_layers)
        throw ConfigError("d_hidden must cover exactly the non-final layers");

    std::vector<std::size_t> offsets(n_layers);
    std::size_t off = 0;
    for (std::size_t l = 0; l < n_layers; ++l) {
        offsets[l] = off;
        off += layers_[l].param_count();
    }

    const int batch = trace.input.rows;
    Matrix delta = d_out;  // dL/d(post-activation output of current layer)
    for (std::size_t li = n_layers; li-- > 0;) {
        const Layer& layer = layers_[li];
        const Matrix& h_out = trace.outputs[li];
        const Matrix& h_in = li == 0 ? trace.input : trace.outputs[li - 1];
        if (delta.rows != batch || delta.cols != layer.out)
            throw ConfigError("upstream gradient has wrong shape");

        if (d_hidden && li + 1 < n_layers) {
            const Matrix& extra = (*d_hidden)[li];
            if (extra.rows > 0) {
                if (extra.rows != batch || extra.cols != layer.out)
                    throw ConfigError("d_hidden entry has wrong shape");
                for (std::size_t k = 0; k < delta.a.size(); ++k)
                    delta.a[k] += extra.a[k];
            }
        }

        // ReLU derivative, taken as 0 at exactly 0.
        const bool relu = (li + 1 < n_layers) || relu_output_;
        if (relu)
            for (std::size_t k = 0; k < delta.a.size(); ++k)
                if (h_out.a[k] <= 0.0) delta.a[k] = 0.0;

        double* dw = grad_out.data() + offsets[li];
        double* db = dw + layer.w.size();
        for (int r = 0; r < batch; ++r) {
            for (int j = 0; j < layer.out; ++j) {
                const double dj = delta.at(r, j);
                if (dj == 0.0) continue;
                double* dwrow =
                    dw + static_cast<std::size_t>(j) * static_cast<std::size_t>(layer.in);
                for (int i = 0; i < layer.in; ++i)
                    dwrow[i] += dj * h_in.at(r, i);
                db[j] += dj;
            }
        }

        if (li > 0 || want_dinput) {
            Matrix prev(batch, layer.in);
            for (int r = 0; r < batch; ++r) {
                for (int j = 0; j < layer.out; ++j) {
                    const double dj = delta.at(r, j);
                    if (dj == 0.0) continue;
                    const double* wrow =
                        layer.w.data() +
                        static_cast<std::size_t>(j) * static_cast<std::size_t>(layer.in);
                    for (int i = 0; i < layer.in; ++i)
                        prev.at(r, i) += dj * wrow[i];
                }
            }
            delta = std::move(prev);
        } else {
            delta = Matrix();
        }
    }
    return delta;
}

std::vector<double> softmax_row(std::span<const double> logits) {
    if (logits.empty()) throw ConfigError("softmax of empty row");
    double m = logits[0];
    for (double v : logits) m = std::max(m, v);
    std::vector<double> out(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - m);
        z += out[i];
    }
    for (double& v : out) v /= z;
    return out;
}

double xent_loss(const Matrix& logits, std::span<const int> labels) {
    if (logits.rows == 0) throw ConfigError("cross-entropy over empty batch");
    if (static_cast<std::size_t>(logits.rows) != labels.size())
        throw ConfigError("label count does not match batch");
    double loss = 0.0;
    for (int r = 0; r < logits.rows; ++r) {
        const int y = labels[static_cast<std::size_t>(r)];
        if (y < 0 || y >= logits.cols)
            throw ConfigError("label out of range");
        double m = logits.at(r, 0);
        for (int c = 1; c < logits.cols; ++c) m = std::max(m, logits.at(r, c));
        double z = 0.0;
        for (int c = 0; c < logits.cols; ++c)
            z += std::exp(logits.at(r, c) - m);
        loss += m + std::log(z) - logits.at(r, y);
    }
    return loss / logits.rows;
}

LossGrad xent_loss_grad(const Mlp& net, const ForwardTrace& trace,
                        std::span<const int> labels) {
    const Matrix& logits = trace.logits();
    LossGrad out;
    out.loss = xent_loss(logits, labels);

    const int batch = logits.rows;
    Matrix dlogits(batch, logits.cols);
    for (int r = 0; r < batch; ++r) {
        std::vector<double> p = softmax_row(std::span<const double>(
            logits.a.data() +
                static_cast<std::size_t>(r) * static_cast<std::size_t>(logits.cols),
            static_cast<std::size_t>(logits.cols)));
        for (int c = 0; c < logits.cols; ++c)
            dlogits.at(r, c) = p[static_cast<std::size_t>(c)] / batch;
        dlogits.at(r, labels[static_cast<std::size_t>(r)]) -= 1.0 / batch;
    }

    out.grad.assign(net.param_count(), 0.0);
    net.backward(trace, dlogits, nullptr, out.grad);
    return out;
}

namespace {

// Representation layers entering the pairwise loss: every non-final
// layer, plus the final one when include_logits is set.
std::vector<std::size_t> drl_layers(const Mlp& net, const DrlConfig& cfg) {
    std::vector<std::size_t> idx;
    const std::size_t n = net.layers().size();
    for (std::size_t l = 0; l + 1 < n; ++l) idx.push_back(l);
    if (cfg.include_logits) idx.push_back(n - 1);
    return idx;
}

}  // namespace

LossGrad drl_loss_grad(const Mlp& net, const ForwardTrace& trace,
                       std::span<const int> labels, const DrlConfig& cfg) {
    const int batch = trace.input.rows;
    if (static_cast<std::size_t>(batch) != labels.size())
        throw ConfigError("label count does not match batch");

    // Ordered pair counts, shared by every layer.
    std::size_t n_between = 0;
    std::size_t n_within = 0;
    for (int i = 0; i < batch; ++i)
        for (int j = 0; j < batch; ++j) {
            if (i == j) continue;
            if (labels[static_cast<std::size_t>(i)] ==
                labels[static_cast<std::size_t>(j)])
                ++n_within;
            else
                ++n_between;
        }

    const std::vector<std::size_t> layers = drl_layers(net, cfg);

    // Plain triple loop in natural order; kept naive on purpose so the
    // result is exactly reproducible by an independent reimplementation.
    double sum_between = 0.0;
    double sum_within = 0.0;
    for (std::size_t l : layers) {
        const Matrix& h = trace.outputs[l];
        for (int i = 0; i < batch; ++i)
            for (int j = 0; j < batch; ++j) {
                if (i == j) continue;
                double dot = 0.0;
                for (int k = 0; k < h.cols; ++k)
                    dot += h.at(i, k) * h.at(j, k);
                if (labels[static_cast<std::size_t>(i)] ==
                    labels[static_cast<std::size_t>(j)])
                    sum_within += dot;
                else
                    sum_between += dot;
            }
    }

    LossGrad out;
    // A term with no pairs is defined as zero.
    out.loss = (n_between > 0 ? sum_between / static_cast<double>(n_between) : 0.0) +
               (n_within > 0 ? sum_within / static_cast<double>(n_within) : 0.0);

    // dL/dh_l[i] = (2/B_bt) sum of other-class rows + (2/B_wi) sum of
    // same-class rows (i excluded).
    const std::size_t n_layers = net.layers().size();
    std::vector<Matrix> d_hidden(n_layers - 1);
    Matrix d_logits(batch, net.output_dim());
    for (std::size_t l : layers) {
        const Matrix& h = trace.outputs[l];
        Matrix d(batch, h.cols);
        for (int i = 0; i < batch; ++i)
            for (int j = 0; j < batch; ++j) {
                if (i == j) continue;
                const bool same = labels[static_cast<std::size_t>(i)] ==
                                  labels[static_cast<std::size_t>(j)];
                const double scale =
                    same ? (n_within > 0 ? 2.0 / static_cast<double>(n_within) : 0.0)
                         : (n_between > 0 ? 2.0 / static_cast<double>(n_between) : 0.0);
                if (scale == 0.0) continue;
                for (int k = 0; k < h.cols; ++k)
                    d.at(i, k) += scale * h.at(j, k);
            }
        if (l + 1 < n_layers)
            d_hidden[l] = std::move(d);
        else
            d_logits = std::move(d);
    }

    out.grad.assign(net.param_count(), 0.0);
    net.backward(trace, d_logits, &d_hidden, out.grad);
    return out;
}

LossGrad combined_loss_grad(const Mlp& net, const ForwardTrace& trace,
                            std::span<const int> labels, const DrlConfig& cfg) {
    if (cfg.lambda == 0.0) return xent_loss_grad(net, trace, labels);
    LossGrad xent = xent_loss_grad(net, trace, labels);
    LossGrad drl = drl_loss_grad(net, trace, labels, cfg);
    LossGrad out;
    out.loss = xent.loss + cfg.lambda * drl.loss;
    out.grad.resize(xent.grad.size());
    for (std::size_t i = 0; i < out.grad.size(); ++i)
        out.grad[i] = xent.grad[i] + cfg.lambda * drl.grad[i];
    return out;
}

void sgd_step(Mlp& net, std::span<const double> grad, double lr) {
    if (grad.size() != net.param_count())
        throw ConfigError("gradient size does not match parameter count");
    if (!std::isfinite(lr)) throw NumericError("non-finite learning rate");
    for (double g : grad)
        if (!std::isfinite(g))
            throw NumericError("non-finite gradient entry");
    std::size_t off = 0;
    for (Layer& l : net.layers()) {
        for (double& v : l.w) v -= lr * grad[off++];
        for (double& v : l.b) v -= lr * grad[off++];
    }
}

Alignment grad_alignment(std::span<const double> g_current,
                         std::span<const double> g_memory) {
    if (g_current.size() != g_memory.size())
        throw ConfigError("gradient vectors differ in length");
    Alignment a;
    double na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < g_current.size(); ++i) {
        a.inner += g_current[i] * g_memory[i];
        na += g_current[i] * g_current[i];
        nb += g_memory[i] * g_memory[i];
    }
    a.cosine = (na == 0.0 || nb == 0.0)
                   ? 0.0
                   : a.inner / (std::sqrt(na) * std::sqrt(nb));
    return a;
}

std::vector<double> prior_corrected_scores(std::span<const double> probs,
                                           std::span<const double> priors) {
    if (probs.size() != priors.size())
        throw ConfigError("probabilities and priors differ in length");
    std::vector<double> out(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (!(priors[i] > 0.0))
            throw ConfigError("priors must be strictly positive");
        if (probs[i] < 0.0)
            throw ConfigError("probabilities must be non-negative");
        out[i] = probs[i] / priors[i];
    }
    return out;
}

int argmax_lowest(std::span<const double> scores) {
    if (scores.empty()) throw ConfigError("argmax of empty score vector");
    int best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i)
        if (scores[i] > scores[static_cast<std::size_t>(best)])
            best = static_cast<int>(i);
    return best;
}

std::vector<NamedTensor> Mlp::to_tensors() const {
    std::vector<NamedTensor> out;
    NamedTensor meta;
    meta.name = "meta";
    meta.dims = {4};
    meta.data = {static_cast<double>(input_dim_),
                 static_cast<double>(output_dim_),
                 relu_output_ ? 1.0 : 0.0,
                 static_cast<double>(layers_.size())};
    out.push_back(std::move(meta));
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const Layer& layer = layers_[l];
        NamedTensor w;
        w.name = "w" + std::to_string(l);
        w.dims = {static_cast<std::uint32_t>(layer.out),
                  static_cast<std::uint32_t>(layer.in)};
        w.data = layer.w;
        out.push_back(std::move(w));
        NamedTensor b;
        b.name = "b" + std::to_string(l);
        b.dims = {static_cast<std::uint32_t>(layer.out)};
        b.data = layer.b;
        out.push_back(std::move(b));
    }
    return out;
}

Mlp Mlp::from_tensors(const std::vector<NamedTensor>& tensors) {
    if (tensors.empty() || tensors[0].name != "meta" ||
        tensors[0].data.size() != 4)
        throw FormatError("parameter container missing meta tensor");
    Mlp net;
    net.input_dim_ = static_cast<int>(tensors[0].data[0]);
    net.output_dim_ = static_cast<int>(tensors[0].data[1]);
    net.relu_output_ = tensors[0].data[2] != 0.0;
    const std::size_t n_layers = static_cast<std::size_t>(tensors[0].data[3]);
    if (tensors.size() != 1 + 2 * n_layers)
        throw FormatError("parameter container has wrong tensor count");

    int expect_in = net.input_dim_;
    for (std::size_t l = 0; l < n_layers; ++l) {
        const NamedTensor& w = tensors[1 + 2 * l];
        const NamedTensor& b = tensors[2 + 2 * l];
        if (w.name != "w" + std::to_string(l) ||
            b.name != "b" + std::to_string(l))
            throw FormatError("parameter tensors out of order");
        if (w.dims.size() != 2 || b.dims.size() != 1 || w.dims[0] != b.dims[0])
            throw FormatError("parameter tensor dims inconsistent");
        Layer layer;
        layer.out = static_cast<int>(w.dims[0]);
        layer.in = static_cast<int>(w.dims[1]);
        if (layer.in != expect_in)
            throw FormatError("layer input width does not chain");
        layer.w = w.data;
        layer.b = b.data;
        expect_in = layer.out;
        net.layers_.push_back(std::move(layer));
    }
    if (expect_in != net.output_dim_)
        throw FormatError("final layer width does not match output dim");
    return net;
}

}  // namespace clb
