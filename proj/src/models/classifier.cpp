#include <cmath>

#include "advecg/errors.hpp"
#include "advecg/models.hpp"
#include "advecg/ops.hpp"
#include "advecg/rng.hpp"

namespace advecg {

namespace {

Tensor he_normal(Shape shape, std::size_t fan_in, std::uint64_t seed) {
    Tensor t(std::move(shape));
    SplitMix64 rng(seed);
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : t.data()) v = rng.normal(0.0, sd);
    return t;
}

Tensor uniform_init(Shape shape, double bound, std::uint64_t seed) {
    Tensor t(std::move(shape));
    SplitMix64 rng(seed);
    for (double& v : t.data()) v = rng.uniform(-bound, bound);
    return t;
}

}  // namespace

void ClassifierConfig::validate() const {
    if (block_channels.size() != 4) throw InvalidInput("classifier needs exactly 4 residual blocks");
    if (in_channels == 0 || stem_channels == 0 || length == 0) throw InvalidInput("classifier widths must be positive");
    for (std::size_t c : block_channels)
        if (c == 0) throw InvalidInput("classifier block widths must be positive");
    if (kernel_size % 2 == 0) throw InvalidInput("classifier kernel size must be odd");
    if (length % 16 != 0) throw InvalidInput("classifier input length must be divisible by 16");
    if (thresholds.empty()) throw InvalidInput("classifier needs at least one output head");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw InvalidInput("dropout rate must lie in [0, 1)");
}

Classifier::Classifier(ClassifierConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    const std::size_t k = config_.kernel_size;
    std::uint64_t stream = 0;
    auto conv = [&](const std::string& name, std::size_t out, std::size_t in, std::size_t kernel) {
        return params_.add(name, he_normal({out, in, kernel}, in * kernel, mix_seed(seed, ++stream)));
    };
    auto bn = [&](const std::string& name, std::size_t ch, std::size_t& g, std::size_t& b, std::size_t& m,
                  std::size_t& v) {
        g = params_.add(name + ".gamma", Tensor(Shape{ch}, 1.0));
        b = params_.add(name + ".beta", Tensor(Shape{ch}, 0.0));
        m = params_.add(name + ".running_mean", Tensor(Shape{ch}, 0.0), false);
        v = params_.add(name + ".running_var", Tensor(Shape{ch}, 1.0), false);
    };

    stem_ = conv("stem.conv", config_.stem_channels, config_.in_channels, k);
    bn("stem.bn", config_.stem_channels, stem_gamma_, stem_beta_, stem_mean_, stem_var_);
    std::size_t in = config_.stem_channels;
    for (std::size_t b = 0; b < config_.block_channels.size(); ++b) {
        const std::size_t out = config_.block_channels[b];
        const std::string p = "block" + std::to_string(b);
        Block blk{};
        blk.conv1 = conv(p + ".conv1", out, in, k);
        bn(p + ".bn1", out, blk.bn1_gamma, blk.bn1_beta, blk.bn1_mean, blk.bn1_var);
        blk.conv2 = conv(p + ".conv2", out, out, k);
        bn(p + ".bn2", out, blk.bn2_gamma, blk.bn2_beta, blk.bn2_mean, blk.bn2_var);
        blk.skip = conv(p + ".skip", out, in, 1);
        blocks_.push_back(blk);
        in = out;
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    fc_w_ = params_.add("fc.weight", uniform_init({config_.n_heads(), in}, bound, mix_seed(seed, ++stream)));
    fc_b_ = params_.add("fc.bias", Tensor(Shape{config_.n_heads()}, 0.0));
}

void Classifier::check_input(const Shape& s) const {
    if (s.size() != 3 || s[1] != config_.in_channels || s[2] != config_.length)
        throw ShapeError("classifier expects input [N, " + std::to_string(config_.in_channels) + ", " +
                         std::to_string(config_.length) + "], got " + shape_str(s));
}

Var Classifier::batch_norm(const Var& x, const std::vector<Var>& bound, std::size_t gamma, std::size_t beta,
                           std::size_t mean, std::size_t var, ParamSet* buffers) const {
    if (buffers)
        return batch_norm_train(x, bound[gamma], bound[beta], buffers->value(mean), buffers->value(var),
                                config_.bn_momentum);
    return batch_norm_eval(x, bound[gamma], bound[beta], params_.value(mean), params_.value(var));
}

Var Classifier::run(const Var& x, const std::vector<Var>& bound, const ForwardContext& ctx, ParamSet* buffers) const {
    check_input(x.shape());
    if (bound.size() != params_.size()) throw InvalidInput("bound parameters do not match the classifier");
    const bool train = ctx.mode == Mode::train;
    const Conv1dOptions same{1, config_.kernel_size / 2};
    const Conv1dOptions down{2, config_.kernel_size / 2};
    auto drop = [&](const Var& v, std::uint64_t layer) {
        if (!train || config_.dropout_rate == 0.0) return v;
        return dropout(v, config_.dropout_rate, mix_seed(ctx.dropout_seed, layer), ctx.row_keys);
    };

    Var h = relu(batch_norm(conv1d(x, bound[stem_], same), bound, stem_gamma_, stem_beta_, stem_mean_, stem_var_,
                            buffers));
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        const Block& blk = blocks_[b];
        Var main = conv1d(h, bound[blk.conv1], down);
        main = drop(relu(batch_norm(main, bound, blk.bn1_gamma, blk.bn1_beta, blk.bn1_mean, blk.bn1_var, buffers)),
                    2 * b);
        main = batch_norm(conv1d(main, bound[blk.conv2], same), bound, blk.bn2_gamma, blk.bn2_beta, blk.bn2_mean,
                          blk.bn2_var, buffers);
        Var skip = conv1d(max_pool1d(h, 2, 2), bound[blk.skip], Conv1dOptions{1, 0});
        h = drop(relu(add(main, skip)), 2 * b + 1);
    }
    return sigmoid(linear(mean_last_axis(h), bound[fc_w_], bound[fc_b_]));
}

Var Classifier::forward(const Var& x, const std::vector<Var>& bound, const ForwardContext& ctx) {
    return run(x, bound, ctx, ctx.mode == Mode::train ? &params_ : nullptr);
}

Var Classifier::forward_eval(const Var& x, const std::vector<Var>& bound) const {
    return run(x, bound, ForwardContext{}, nullptr);
}

Tensor Classifier::predict(const Tensor& x, std::size_t chunk) const {
    check_input(x.shape());
    const std::size_t n = x.shape()[0];
    const std::size_t row = x.size() / n;
    Tensor out(Shape{n, config_.n_heads()});
    for (std::size_t start = 0; start < n; start += chunk) {
        const std::size_t len = std::min(chunk, n - start);
        Tensor part(Shape{len, x.shape()[1], x.shape()[2]});
        std::copy(x.data().begin() + static_cast<std::ptrdiff_t>(start * row),
                  x.data().begin() + static_cast<std::ptrdiff_t>((start + len) * row), part.data().begin());
        Tape tape;
        const auto bound = params_.bind(tape, false);
        const Var p = forward_eval(tape.constant(std::move(part)), bound);
        std::copy(p.value().data().begin(), p.value().data().end(),
                  out.data().begin() + static_cast<std::ptrdiff_t>(start * config_.n_heads()));
    }
    return out;
}

}  // namespace advecg
