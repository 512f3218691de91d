#include "advecg/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "advecg/errors.hpp"
#include "advecg/reduce.hpp"
#include "advecg/rng.hpp"

namespace advecg {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

Tape& tape_of(const Var& v, const char* op) {
    if (!v.valid()) throw ShapeError(std::string(op) + ": unbound input");
    return *v.tape();
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

void require_rank(const Var& v, std::size_t rank, const char* op) {
    if (v.shape().size() != rank)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(v.shape()));
}

void accumulate(Tensor* dst, const Tensor& src, double factor = 1.0) {
    if (!dst) return;
    auto d = dst->data();
    auto s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * s[i];
}

// Rows of [N, C, L] laid out as N blocks of C*L.
void im2col(const double* x, std::size_t channels, std::size_t length, std::size_t kernel, std::size_t stride,
            std::size_t padding, std::size_t out_len, double* cols) {
    for (std::size_t c = 0; c < channels; ++c) {
        const double* xc = x + c * length;
        for (std::size_t k = 0; k < kernel; ++k) {
            double* row = cols + (c * kernel + k) * out_len;
            for (std::size_t t = 0; t < out_len; ++t) {
                const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + k) -
                                           static_cast<std::ptrdiff_t>(padding);
                row[t] = (src >= 0 && src < static_cast<std::ptrdiff_t>(length)) ? xc[src] : 0.0;
            }
        }
    }
}

void col2im_add(const double* cols, std::size_t channels, std::size_t length, std::size_t kernel,
                std::size_t stride, std::size_t padding, std::size_t out_len, double* dx) {
    for (std::size_t c = 0; c < channels; ++c) {
        double* dxc = dx + c * length;
        for (std::size_t k = 0; k < kernel; ++k) {
            const double* row = cols + (c * kernel + k) * out_len;
            for (std::size_t t = 0; t < out_len; ++t) {
                const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + k) -
                                           static_cast<std::ptrdiff_t>(padding);
                if (src >= 0 && src < static_cast<std::ptrdiff_t>(length)) dxc[src] += row[t];
            }
        }
    }
}

struct BnDims {
    std::size_t n, c, l;
};

BnDims bn_dims(const Var& x, const char* op) {
    const Shape& s = x.shape();
    if (s.size() == 2) return {s[0], s[1], 1};
    if (s.size() == 3) return {s[0], s[1], s[2]};
    throw ShapeError(std::string(op) + ": expected [N,C] or [N,C,L], got " + shape_str(s));
}

void require_channel_vector(const Var& v, std::size_t channels, const char* what) {
    if (v.shape() != Shape{channels})
        throw ShapeError(std::string("batch_norm: ") + what + " must have shape [" + std::to_string(channels) + "]");
}

// Per-channel sums over (n, l) of f(i) with samples combined pairwise.
template <class F>
std::vector<double> channel_sums(const BnDims& d, F&& f) {
    std::vector<double> out(d.c, 0.0);
    pairwise_accumulate(
        d.n, std::span<double>(out),
        [&](std::size_t n, std::span<double> dst) {
            for (std::size_t c = 0; c < d.c; ++c) {
                double s = 0.0;
                const std::size_t base = (n * d.c + c) * d.l;
                for (std::size_t l = 0; l < d.l; ++l) s += f(base + l, c);
                dst[c] = s;
            }
        },
        false);
    return out;
}

Var batch_norm_impl(const Var& x, const Var& gamma, const Var& beta, std::span<const double> mean,
                    std::span<const double> var, double eps, bool batch_stats, const char* op) {
    Tape& tape = tape_of(x, op);
    const BnDims d = bn_dims(x, op);
    require_channel_vector(gamma, d.c, "gamma");
    require_channel_vector(beta, d.c, "beta");
    std::vector<double> inv_std(d.c);
    for (std::size_t c = 0; c < d.c; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
    std::vector<double> mu(mean.begin(), mean.end());

    const auto xs = x.value().data();
    const auto g = gamma.value().data();
    const auto b = beta.value().data();
    Tensor out(x.shape());
    auto o = out.data();
    for (std::size_t n = 0; n < d.n; ++n)
        for (std::size_t c = 0; c < d.c; ++c) {
            const std::size_t base = (n * d.c + c) * d.l;
            for (std::size_t l = 0; l < d.l; ++l)
                o[base + l] = g[c] * ((xs[base + l] - mu[c]) * inv_std[c]) + b[c];
        }

    return tape.record(op, std::move(out), {x, gamma, beta},
                       [d, mu, inv_std, batch_stats](const BackwardContext& ctx) {
                           const auto xv = ctx.inputs[0]->data();
                           const auto gv = ctx.inputs[1]->data();
                           const auto go = ctx.grad_output.data();
                           auto xhat = [&](std::size_t i, std::size_t c) { return (xv[i] - mu[c]) * inv_std[c]; };
                           const std::vector<double> sum_g =
                               channel_sums(d, [&](std::size_t i, std::size_t) { return go[i]; });
                           const std::vector<double> sum_gx =
                               channel_sums(d, [&](std::size_t i, std::size_t c) { return go[i] * xhat(i, c); });
                           if (Tensor* gx = ctx.grad_inputs[0]) {
                               auto dx = gx->data();
                               const double count = static_cast<double>(d.n * d.l);
                               for (std::size_t n = 0; n < d.n; ++n)
                                   for (std::size_t c = 0; c < d.c; ++c) {
                                       const std::size_t base = (n * d.c + c) * d.l;
                                       const double k = gv[c] * inv_std[c];
                                       if (batch_stats) {
                                           const double mg = sum_g[c] / count;
                                           const double mgx = sum_gx[c] / count;
                                           for (std::size_t l = 0; l < d.l; ++l) {
                                               const std::size_t i = base + l;
                                               dx[i] += k * (go[i] - mg - xhat(i, c) * mgx);
                                           }
                                       } else {
                                           for (std::size_t l = 0; l < d.l; ++l) dx[base + l] += k * go[base + l];
                                       }
                                   }
                           }
                           if (Tensor* gg = ctx.grad_inputs[1])
                               for (std::size_t c = 0; c < d.c; ++c) (*gg)[c] += sum_gx[c];
                           if (Tensor* gb = ctx.grad_inputs[2])
                               for (std::size_t c = 0; c < d.c; ++c) (*gb)[c] += sum_g[c];
                       });
}

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

}  // namespace

double pairwise_sum(std::span<const double> values) {
    if (values.size() <= 8) {
        double s = 0.0;
        for (double v : values) s += v;
        return s;
    }
    const std::size_t mid = values.size() / 2;
    return pairwise_sum(values.subspan(0, mid)) + pairwise_sum(values.subspan(mid));
}

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    Tensor out = a.value();
    auto o = out.data();
    auto bv = b.value().data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
    return tape_of(a, "add").record("add", std::move(out), {a, b}, [](const BackwardContext& ctx) {
        accumulate(ctx.grad_inputs[0], ctx.grad_output);
        accumulate(ctx.grad_inputs[1], ctx.grad_output);
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a.value();
    auto o = out.data();
    auto bv = b.value().data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
    return tape_of(a, "sub").record("sub", std::move(out), {a, b}, [](const BackwardContext& ctx) {
        accumulate(ctx.grad_inputs[0], ctx.grad_output);
        accumulate(ctx.grad_inputs[1], ctx.grad_output, -1.0);
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Tensor out = a.value();
    auto o = out.data();
    auto bv = b.value().data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
    return tape_of(a, "mul").record("mul", std::move(out), {a, b}, [](const BackwardContext& ctx) {
        const auto g = ctx.grad_output.data();
        const auto av = ctx.inputs[0]->data();
        const auto bv = ctx.inputs[1]->data();
        if (Tensor* ga = ctx.grad_inputs[0])
            for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
        if (Tensor* gb = ctx.grad_inputs[1])
            for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
    });
}

Var scale(const Var& a, double factor) {
    Tensor out = a.value();
    for (double& v : out.data()) v *= factor;
    return tape_of(a, "scale").record("scale", std::move(out), {a}, [factor](const BackwardContext& ctx) {
        accumulate(ctx.grad_inputs[0], ctx.grad_output, factor);
    });
}

Var relu(const Var& x) {
    Tensor out = x.value();
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    return tape_of(x, "relu").record("relu", std::move(out), {x}, [](const BackwardContext& ctx) {
        const auto g = ctx.grad_output.data();
        const auto xv = ctx.inputs[0]->data();
        auto gx = ctx.grad_inputs[0]->data();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (xv[i] > 0.0) gx[i] += g[i];
    });
}

Var sigmoid(const Var& x) {
    // Saturate strictly inside (0, 1) so downstream logs and range contracts hold.
    constexpr double lo = std::numeric_limits<double>::min();
    const double hi = std::nextafter(1.0, 0.0);
    Tensor out = x.value();
    for (double& v : out.data()) {
        const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        v = std::clamp(s, lo, hi);
    }
    return tape_of(x, "sigmoid").record("sigmoid", std::move(out), {x}, [](const BackwardContext& ctx) {
        const auto g = ctx.grad_output.data();
        const auto s = ctx.output.data();
        auto gx = ctx.grad_inputs[0]->data();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s[i] * (1.0 - s[i]);
    });
}

Var log(const Var& x) {
    Tensor out = x.value();
    for (double& v : out.data()) v = std::log(v);
    return tape_of(x, "log").record("log", std::move(out), {x}, [](const BackwardContext& ctx) {
        const auto g = ctx.grad_output.data();
        const auto xv = ctx.inputs[0]->data();
        auto gx = ctx.grad_inputs[0]->data();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / xv[i];
    });
}

Var sum(const Var& x) {
    Tensor out = Tensor::scalar(pairwise_sum(x.value().data()));
    return tape_of(x, "sum").record("sum", std::move(out), {x}, [](const BackwardContext& ctx) {
        const double g = ctx.grad_output[0];
        for (double& v : ctx.grad_inputs[0]->data()) v += g;
    });
}

Var mean(const Var& x) {
    const double n = static_cast<double>(x.value().size());
    Tensor out = Tensor::scalar(pairwise_sum(x.value().data()) / n);
    return tape_of(x, "mean").record("mean", std::move(out), {x}, [n](const BackwardContext& ctx) {
        const double g = ctx.grad_output[0] / n;
        for (double& v : ctx.grad_inputs[0]->data()) v += g;
    });
}

Var mean_last_axis(const Var& x) {
    const Shape& s = x.shape();
    if (s.size() < 2) throw ShapeError("mean_last_axis: rank must be >= 2");
    const std::size_t len = s.back();
    Shape out_shape(s.begin(), s.end() - 1);
    Tensor out(out_shape);
    const auto xv = x.value().data();
    for (std::size_t r = 0; r < out.size(); ++r) {
        double acc = 0.0;
        for (std::size_t l = 0; l < len; ++l) acc += xv[r * len + l];
        out[r] = acc / static_cast<double>(len);
    }
    return tape_of(x, "mean_last_axis")
        .record("mean_last_axis", std::move(out), {x}, [len](const BackwardContext& ctx) {
            const auto g = ctx.grad_output.data();
            auto gx = ctx.grad_inputs[0]->data();
            for (std::size_t r = 0; r < g.size(); ++r) {
                const double v = g[r] / static_cast<double>(len);
                for (std::size_t l = 0; l < len; ++l) gx[r * len + l] += v;
            }
        });
}

Var softmax(const Var& x) {
    const std::size_t len = x.shape().back();
    Tensor out = x.value();
    auto o = out.data();
    for (std::size_t r = 0; r < o.size() / len; ++r) {
        double* row = o.data() + r * len;
        const double m = *std::max_element(row, row + len);
        double z = 0.0;
        for (std::size_t i = 0; i < len; ++i) z += (row[i] = std::exp(row[i] - m));
        for (std::size_t i = 0; i < len; ++i) row[i] /= z;
    }
    return tape_of(x, "softmax").record("softmax", std::move(out), {x}, [len](const BackwardContext& ctx) {
        const auto g = ctx.grad_output.data();
        const auto y = ctx.output.data();
        auto gx = ctx.grad_inputs[0]->data();
        for (std::size_t r = 0; r < g.size() / len; ++r) {
            const std::size_t base = r * len;
            double dot = 0.0;
            for (std::size_t i = 0; i < len; ++i) dot += g[base + i] * y[base + i];
            for (std::size_t i = 0; i < len; ++i) gx[base + i] += y[base + i] * (g[base + i] - dot);
        }
    });
}

Var reshape(const Var& x, Shape shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    return tape_of(x, "reshape").record("reshape", std::move(out), {x}, [](const BackwardContext& ctx) {
        auto gx = ctx.grad_inputs[0]->data();
        const auto g = ctx.grad_output.data();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
}

Var concat_rows(const Var& a, const Var& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != sb.size() || sa.empty() || !std::equal(sa.begin() + 1, sa.end(), sb.begin() + 1))
        throw ShapeError("concat_rows: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
    Shape shape = sa;
    shape[0] += sb[0];
    std::vector<double> data(a.value().storage());
    data.insert(data.end(), b.value().data().begin(), b.value().data().end());
    const std::size_t split = a.value().size();
    return tape_of(a, "concat_rows")
        .record("concat_rows", Tensor(std::move(shape), std::move(data)), {a, b},
                [split](const BackwardContext& ctx) {
                    const auto g = ctx.grad_output.data();
                    if (Tensor* ga = ctx.grad_inputs[0])
                        for (std::size_t i = 0; i < split; ++i) (*ga)[i] += g[i];
                    if (Tensor* gb = ctx.grad_inputs[1])
                        for (std::size_t i = split; i < g.size(); ++i) (*gb)[i - split] += g[i];
                });
}

Var matmul(const Var& a, const Var& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k)
        throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    Tensor out(Shape{m, n});
    MatMap(out.data().data(), m, n).noalias() =
        ConstMatMap(a.value().data().data(), m, k) * ConstMatMap(b.value().data().data(), k, n);
    return tape_of(a, "matmul").record("matmul", std::move(out), {a, b}, [m, k, n](const BackwardContext& ctx) {
        ConstMatMap g(ctx.grad_output.data().data(), m, n);
        if (Tensor* ga = ctx.grad_inputs[0])
            MatMap(ga->data().data(), m, k).noalias() += g * ConstMatMap(ctx.inputs[1]->data().data(), k, n).transpose();
        if (Tensor* gb = ctx.grad_inputs[1])
            MatMap(gb->data().data(), k, n).noalias() += ConstMatMap(ctx.inputs[0]->data().data(), m, k).transpose() * g;
    });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
    require_rank(x, 2, "linear");
    require_rank(weight, 2, "linear");
    const std::size_t n = x.shape()[0], k = x.shape()[1], m = weight.shape()[0];
    if (weight.shape()[1] != k)
        throw ShapeError("linear: weight " + shape_str(weight.shape()) + " does not accept input " +
                         shape_str(x.shape()));
    const bool has_bias = bias.valid();
    if (has_bias && bias.shape() != Shape{m}) throw ShapeError("linear: bias must have shape [out_features]");
    Tensor out(Shape{n, m});
    ConstMatMap w(weight.value().data().data(), m, k);
    // Row-by-row so each row's result is independent of the batch it travels in.
    for (std::size_t r = 0; r < n; ++r) {
        VecMap o(out.data().data() + r * m, m);
        o.noalias() = w * ConstVecMap(x.value().data().data() + r * k, k);
        if (has_bias) o += ConstVecMap(bias.value().data().data(), m);
    }
    auto backward = [n, k, m, has_bias](const BackwardContext& ctx) {
        const double* g = ctx.grad_output.data().data();
        const double* xv = ctx.inputs[0]->data().data();
        ConstMatMap w(ctx.inputs[1]->data().data(), m, k);
        if (Tensor* gx = ctx.grad_inputs[0])
            for (std::size_t r = 0; r < n; ++r)
                VecMap(gx->data().data() + r * k, k).noalias() += w.transpose() * ConstVecMap(g + r * m, m);
        if (Tensor* gw = ctx.grad_inputs[1])
            pairwise_accumulate(n, gw->data(), [&](std::size_t r, std::span<double> dst) {
                MatMap(dst.data(), m, k).noalias() =
                    ConstVecMap(g + r * m, m) * ConstVecMap(xv + r * k, k).transpose();
            });
        if (has_bias)
            if (Tensor* gb = ctx.grad_inputs[2])
                pairwise_accumulate(n, gb->data(), [&](std::size_t r, std::span<double> dst) {
                    std::copy(g + r * m, g + (r + 1) * m, dst.begin());
                });
    };
    Tape& tape = tape_of(x, "linear");
    if (has_bias) return tape.record("linear", std::move(out), {x, weight, bias}, backward);
    return tape.record("linear", std::move(out), {x, weight}, backward);
}

Var conv1d(const Var& x, const Var& weight, Conv1dOptions options) { return conv1d(x, weight, Var(), options); }

Var conv1d(const Var& x, const Var& weight, const Var& bias, Conv1dOptions options) {
    require_rank(x, 3, "conv1d");
    require_rank(weight, 3, "conv1d");
    const std::size_t batch = x.shape()[0], channels = x.shape()[1], length = x.shape()[2];
    const std::size_t out_ch = weight.shape()[0], kernel = weight.shape()[2];
    const std::size_t stride = options.stride, pad = options.padding;
    if (weight.shape()[1] != channels)
        throw ShapeError("conv1d: weight " + shape_str(weight.shape()) + " expects " +
                         std::to_string(weight.shape()[1]) + " input channels, got " + shape_str(x.shape()));
    if (stride == 0) throw ShapeError("conv1d: stride must be positive");
    if (length + 2 * pad < kernel) throw ShapeError("conv1d: kernel longer than padded input");
    const bool has_bias = bias.valid();
    if (has_bias && bias.shape() != Shape{out_ch}) throw ShapeError("conv1d: bias must have shape [out_channels]");
    const std::size_t out_len = (length + 2 * pad - kernel) / stride + 1;
    const std::size_t ck = channels * kernel;

    Tensor out(Shape{batch, out_ch, out_len});
    std::vector<double> cols(ck * out_len);
    ConstMatMap w(weight.value().data().data(), out_ch, ck);
    for (std::size_t n = 0; n < batch; ++n) {
        im2col(x.value().data().data() + n * channels * length, channels, length, kernel, stride, pad, out_len,
               cols.data());
        MatMap o(out.data().data() + n * out_ch * out_len, out_ch, out_len);
        o.noalias() = w * ConstMatMap(cols.data(), ck, out_len);
        if (has_bias)
            for (std::size_t c = 0; c < out_ch; ++c) o.row(c).array() += bias.value()[c];
    }

    auto backward = [=](const BackwardContext& ctx) {
        const double* g = ctx.grad_output.data().data();
        const double* xv = ctx.inputs[0]->data().data();
        ConstMatMap wm(ctx.inputs[1]->data().data(), out_ch, ck);
        std::vector<double> buf(ck * out_len);
        if (Tensor* gx = ctx.grad_inputs[0]) {
            for (std::size_t n = 0; n < batch; ++n) {
                MatMap(buf.data(), ck, out_len).noalias() =
                    wm.transpose() * ConstMatMap(g + n * out_ch * out_len, out_ch, out_len);
                col2im_add(buf.data(), channels, length, kernel, stride, pad, out_len,
                           gx->data().data() + n * channels * length);
            }
        }
        if (Tensor* gw = ctx.grad_inputs[1]) {
            pairwise_accumulate(batch, gw->data(), [&](std::size_t n, std::span<double> dst) {
                im2col(xv + n * channels * length, channels, length, kernel, stride, pad, out_len, buf.data());
                MatMap(dst.data(), out_ch, ck).noalias() =
                    ConstMatMap(g + n * out_ch * out_len, out_ch, out_len) *
                    ConstMatMap(buf.data(), ck, out_len).transpose();
            });
        }
        if (has_bias)
            if (Tensor* gb = ctx.grad_inputs[2])
                pairwise_accumulate(batch, gb->data(), [&](std::size_t n, std::span<double> dst) {
                    for (std::size_t c = 0; c < out_ch; ++c) {
                        double s = 0.0;
                        const double* row = g + (n * out_ch + c) * out_len;
                        for (std::size_t t = 0; t < out_len; ++t) s += row[t];
                        dst[c] = s;
                    }
                });
    };
    Tape& tape = tape_of(x, "conv1d");
    if (has_bias) return tape.record("conv1d", std::move(out), {x, weight, bias}, backward);
    return tape.record("conv1d", std::move(out), {x, weight}, backward);
}

Var depthwise_conv1d_same(const Var& x, std::span<const double> kernel) {
    if (kernel.empty() || kernel.size() % 2 == 0) throw ShapeError("depthwise_conv1d_same: kernel size must be odd");
    const std::size_t len = x.shape().back();
    const std::size_t rows = x.value().size() / len;
    const std::size_t half = kernel.size() / 2;
    std::vector<double> k(kernel.begin(), kernel.end());
    auto apply = [len, rows, half](const std::vector<double>& kern, const double* in, double* out, bool flip) {
        const std::size_t ks = kern.size();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* xr = in + r * len;
            double* yr = out + r * len;
            for (std::size_t t = 0; t < len; ++t) {
                double acc = 0.0;
                for (std::size_t j = 0; j < ks; ++j) {
                    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(half);
                    if (src >= 0 && src < static_cast<std::ptrdiff_t>(len)) acc += kern[flip ? ks - 1 - j : j] * xr[src];
                }
                yr[t] += acc;
            }
        }
    };
    Tensor out(x.shape(), 0.0);
    apply(k, x.value().data().data(), out.data().data(), false);
    return tape_of(x, "depthwise_conv1d_same")
        .record("depthwise_conv1d_same", std::move(out), {x}, [k, apply](const BackwardContext& ctx) {
            // adjoint of a same-padded correlation is the same-padded correlation with the flipped kernel
            apply(k, ctx.grad_output.data().data(), ctx.grad_inputs[0]->data().data(), true);
        });
}

Var max_pool1d(const Var& x, std::size_t kernel, std::size_t stride) {
    require_rank(x, 3, "max_pool1d");
    const std::size_t len = x.shape()[2];
    if (kernel == 0 || stride == 0 || kernel > len) throw ShapeError("max_pool1d: invalid kernel/stride");
    const std::size_t rows = x.shape()[0] * x.shape()[1];
    const std::size_t out_len = (len - kernel) / stride + 1;
    Tensor out(Shape{x.shape()[0], x.shape()[1], out_len});
    std::vector<std::uint32_t> argmax(rows * out_len);
    const auto xv = x.value().data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t t = 0; t < out_len; ++t) {
            std::size_t best = r * len + t * stride;
            for (std::size_t j = 1; j < kernel; ++j) {
                const std::size_t i = r * len + t * stride + j;
                if (xv[i] > xv[best]) best = i;
            }
            argmax[r * out_len + t] = static_cast<std::uint32_t>(best);
            out[r * out_len + t] = xv[best];
        }
    return tape_of(x, "max_pool1d")
        .record("max_pool1d", std::move(out), {x}, [argmax = std::move(argmax)](const BackwardContext& ctx) {
            const auto g = ctx.grad_output.data();
            auto gx = ctx.grad_inputs[0]->data();
            for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
        });
}

Var upsample_nearest1d(const Var& x, std::size_t factor) {
    if (factor == 0) throw ShapeError("upsample_nearest1d: factor must be positive");
    Shape shape = x.shape();
    const std::size_t len = shape.back();
    shape.back() = len * factor;
    const std::size_t rows = x.value().size() / len;
    Tensor out(shape);
    const auto xv = x.value().data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t t = 0; t < len * factor; ++t) out[r * len * factor + t] = xv[r * len + t / factor];
    return tape_of(x, "upsample_nearest1d")
        .record("upsample_nearest1d", std::move(out), {x}, [rows, len, factor](const BackwardContext& ctx) {
            const auto g = ctx.grad_output.data();
            auto gx = ctx.grad_inputs[0]->data();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t t = 0; t < len * factor; ++t) gx[r * len + t / factor] += g[r * len * factor + t];
        });
}

Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean, Tensor& running_var,
                     double momentum, double eps) {
    const BnDims d = bn_dims(x, "batch_norm_train");
    if (running_mean.shape() != Shape{d.c} || running_var.shape() != Shape{d.c})
        throw ShapeError("batch_norm_train: running statistics must have shape [C]");
    const auto xv = x.value().data();
    const double count = static_cast<double>(d.n * d.l);
    std::vector<double> mean = channel_sums(d, [&](std::size_t i, std::size_t) { return xv[i]; });
    for (double& m : mean) m /= count;
    std::vector<double> var = channel_sums(d, [&](std::size_t i, std::size_t c) {
        const double z = xv[i] - mean[c];
        return z * z;
    });
    for (double& v : var) v /= count;
    for (std::size_t c = 0; c < d.c; ++c) {
        running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mean[c];
        running_var[c] = (1.0 - momentum) * running_var[c] + momentum * var[c];
    }
    return batch_norm_impl(x, gamma, beta, mean, var, eps, true, "batch_norm_train");
}

Var batch_norm_eval(const Var& x, const Var& gamma, const Var& beta, const Tensor& running_mean,
                    const Tensor& running_var, double eps) {
    const BnDims d = bn_dims(x, "batch_norm_eval");
    if (running_mean.shape() != Shape{d.c} || running_var.shape() != Shape{d.c})
        throw ShapeError("batch_norm_eval: running statistics must have shape [C]");
    return batch_norm_impl(x, gamma, beta, running_mean.data(), running_var.data(), eps, false, "batch_norm_eval");
}

Var dropout(const Var& x, double rate, std::uint64_t seed, std::span<const std::uint64_t> row_keys) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ShapeError("dropout: rate must lie in [0, 1)");
    const std::size_t rows = x.shape().empty() ? 1 : x.shape()[0];
    if (!row_keys.empty() && row_keys.size() != rows) throw ShapeError("dropout: one row key per row required");
    const std::size_t per_row = x.value().size() / rows;
    const double keep = 1.0 - rate;
    std::vector<double> mask(x.value().size());
    for (std::size_t r = 0; r < rows; ++r) {
        SplitMix64 rng(mix_seed(seed, row_keys.empty() ? r : row_keys[r]));
        for (std::size_t i = 0; i < per_row; ++i) mask[r * per_row + i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
    }
    Tensor out = x.value();
    for (std::size_t i = 0; i < mask.size(); ++i) out[i] *= mask[i];
    return tape_of(x, "dropout").record("dropout", std::move(out), {x}, [mask = std::move(mask)](const BackwardContext& ctx) {
        const auto g = ctx.grad_output.data();
        auto gx = ctx.grad_inputs[0]->data();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
    });
}

Var binary_cross_entropy_rows(const Var& probs, const Tensor& targets) {
    if (probs.shape() != targets.shape())
        throw ShapeError("cross_entropy: target shape " + shape_str(targets.shape()) + " does not match " +
                         shape_str(probs.shape()));
    const std::size_t rows = probs.shape().size() >= 2 ? probs.shape()[0] : 1;
    const std::size_t heads = probs.value().size() / rows;
    Tensor out(Shape{rows});
    const auto p = probs.value().data();
    const auto t = targets.data();
    for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t i = r * heads + h;
            const double pc = clamp_prob(p[i]);
            acc -= t[i] * std::log(pc) + (1.0 - t[i]) * std::log(1.0 - pc);
        }
        out[r] = acc;
    }
    return tape_of(probs, "cross_entropy")
        .record("cross_entropy", std::move(out), {probs}, [targets, heads](const BackwardContext& ctx) {
            const auto g = ctx.grad_output.data();
            const auto p = ctx.inputs[0]->data();
            const auto t = targets.data();
            auto gp = ctx.grad_inputs[0]->data();
            for (std::size_t i = 0; i < p.size(); ++i) {
                if (p[i] < kProbClamp || p[i] > 1.0 - kProbClamp) continue;
                gp[i] += g[i / heads] * (-t[i] / p[i] + (1.0 - t[i]) / (1.0 - p[i]));
            }
        });
}

Var cross_entropy(const Var& probs, const Tensor& multi_hot) { return sum(binary_cross_entropy_rows(probs, multi_hot)); }

Var cross_entropy(const Var& probs, std::size_t class_index) {
    if (class_index >= probs.value().size()) throw ShapeError("cross_entropy: class index out of range");
    const double p = probs.value()[class_index];
    Tensor out = Tensor::scalar(-std::log(clamp_prob(p)));
    return tape_of(probs, "cross_entropy")
        .record("cross_entropy", std::move(out), {probs}, [class_index](const BackwardContext& ctx) {
            const double pv = (*ctx.inputs[0])[class_index];
            if (pv < kProbClamp || pv > 1.0 - kProbClamp) return;
            (*ctx.grad_inputs[0])[class_index] -= ctx.grad_output[0] / pv;
        });
}

Var cosine_similarity_rows(const Var& a, const Var& b) {
    require_same_shape(a, b, "cosine_similarity_rows");
    const std::size_t rows = a.shape().size() >= 2 ? a.shape()[0] : 1;
    const std::size_t dim = a.value().size() / rows;
    const auto av = a.value().data();
    const auto bv = b.value().data();
    std::vector<double> dots(rows), na(rows), nb(rows);
    Tensor out(Shape{rows});
    for (std::size_t r = 0; r < rows; ++r) {
        double d = 0.0, sa = 0.0, sb = 0.0;
        for (std::size_t i = r * dim; i < (r + 1) * dim; ++i) {
            d += av[i] * bv[i];
            sa += av[i] * av[i];
            sb += bv[i] * bv[i];
        }
        if (sa == 0.0 || sb == 0.0) throw InvalidInput("cosine similarity of a zero-norm vector");
        dots[r] = d;
        na[r] = std::sqrt(sa);
        nb[r] = std::sqrt(sb);
        out[r] = d / (na[r] * nb[r]);
    }
    return tape_of(a, "cosine_similarity_rows")
        .record("cosine_similarity_rows", std::move(out), {a, b}, [dim, na, nb](const BackwardContext& ctx) {
            const auto g = ctx.grad_output.data();
            const auto c = ctx.output.data();
            const auto av = ctx.inputs[0]->data();
            const auto bv = ctx.inputs[1]->data();
            for (std::size_t r = 0; r < g.size(); ++r) {
                const double inv = 1.0 / (na[r] * nb[r]);
                const double ca = c[r] / (na[r] * na[r]);
                const double cb = c[r] / (nb[r] * nb[r]);
                for (std::size_t i = r * dim; i < (r + 1) * dim; ++i) {
                    if (Tensor* ga = ctx.grad_inputs[0]) (*ga)[i] += g[r] * (bv[i] * inv - ca * av[i]);
                    if (Tensor* gb = ctx.grad_inputs[1]) (*gb)[i] += g[r] * (av[i] * inv - cb * bv[i]);
                }
            }
        });
}

}  // namespace advecg
