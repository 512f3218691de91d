#include <openssl/evp.h>

#include <cmath>
#include <cstdio>

#include "advecg/errors.hpp"
#include "advecg/models.hpp"
#include "advecg/ops.hpp"
#include "advecg/rng.hpp"

namespace advecg {

namespace {

Tensor scaled_normal(Shape shape, double sd, std::uint64_t seed) {
    Tensor t(std::move(shape));
    SplitMix64 rng(seed);
    for (double& v : t.data()) v = rng.normal(0.0, sd);
    return t;
}

template <class F>
Tensor chunked_rows(const Tensor& x, std::size_t chunk, Shape out_row, F&& f) {
    const std::size_t n = x.shape()[0];
    const std::size_t in_row = x.size() / n;
    Shape out_shape{n};
    out_shape.insert(out_shape.end(), out_row.begin(), out_row.end());
    Tensor out(out_shape);
    const std::size_t out_size = shape_size(out_row);
    for (std::size_t start = 0; start < n; start += chunk) {
        const std::size_t len = std::min(chunk, n - start);
        Shape part_shape = x.shape();
        part_shape[0] = len;
        Tensor part(part_shape);
        std::copy(x.data().begin() + static_cast<std::ptrdiff_t>(start * in_row),
                  x.data().begin() + static_cast<std::ptrdiff_t>((start + len) * in_row), part.data().begin());
        const Tensor y = f(std::move(part));
        std::copy(y.data().begin(), y.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(start * out_size));
    }
    return out;
}

}  // namespace

std::size_t AutoencoderConfig::bottleneck_length() const {
    std::size_t l = length;
    for (std::size_t i = 0; i < channels.size(); ++i) l /= stride;
    return l;
}

void AutoencoderConfig::validate() const {
    if (channels.empty()) throw InvalidInput("autoencoder needs at least one conv layer");
    if (kernel_size % 2 == 0) throw InvalidInput("autoencoder kernel size must be odd");
    if (stride < 1 || latent_dim == 0 || in_channels == 0) throw InvalidInput("autoencoder sizes must be positive");
    std::size_t l = length;
    for (std::size_t i = 0; i < channels.size(); ++i) {
        if (l % stride != 0) throw InvalidInput("autoencoder input length must be divisible by stride^layers");
        l /= stride;
    }
    if (l == 0) throw InvalidInput("autoencoder bottleneck is empty");
    if (latent_dim % l != 0)
        throw InvalidInput("latent_dim must be a multiple of the bottleneck length " + std::to_string(l));
}

std::size_t AutoencoderConfig::latent_channels() const { return latent_dim / bottleneck_length(); }

Autoencoder::Autoencoder(AutoencoderConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    const std::size_t k = config_.kernel_size;
    std::uint64_t stream = 0;
    auto conv = [&](const std::string& name, std::size_t out, std::size_t in, double gain) {
        const std::size_t w = params_.add(name + ".weight",
                                          scaled_normal({out, in, k}, gain / std::sqrt(double(in * k)), mix_seed(seed, ++stream)));
        const std::size_t b = params_.add(name + ".bias", Tensor(Shape{out}, 0.0));
        return std::pair{w, b};
    };
    const std::size_t depth = config_.channels.size();
    std::size_t in = config_.in_channels;
    for (std::size_t i = 0; i < depth; ++i) {
        auto [w, b] = conv("enc.conv" + std::to_string(i), config_.channels[i], in, std::sqrt(2.0));
        enc_w_.push_back(w);
        enc_b_.push_back(b);
        in = config_.channels[i];
    }
    auto [lw, lb] = conv("enc.latent", config_.latent_channels(), in, 1.0);
    enc_latent_w_ = lw;
    enc_latent_b_ = lb;
    auto [dw, db] = conv("dec.latent", in, config_.latent_channels(), std::sqrt(2.0));
    dec_latent_w_ = dw;
    dec_latent_b_ = db;
    for (std::size_t i = depth; i-- > 0;) {
        const std::size_t out = i == 0 ? config_.in_channels : config_.channels[i - 1];
        auto [w, b] = conv("dec.conv" + std::to_string(depth - 1 - i), out, config_.channels[i],
                           i == 0 ? 0.0 : std::sqrt(2.0));
        dec_w_.push_back(w);
        dec_b_.push_back(b);
    }
}

Var Autoencoder::encode(const Var& x, const std::vector<Var>& bound) const {
    const Shape& s = x.shape();
    if (s.size() != 3 || s[1] != config_.in_channels || s[2] != config_.length)
        throw ShapeError("autoencoder expects input [N, " + std::to_string(config_.in_channels) + ", " +
                         std::to_string(config_.length) + "], got " + shape_str(s));
    const Conv1dOptions down{config_.stride, config_.kernel_size / 2};
    Var h = x;
    for (std::size_t i = 0; i < enc_w_.size(); ++i) h = relu(conv1d(h, bound[enc_w_[i]], bound[enc_b_[i]], down));
    const Conv1dOptions same{1, config_.kernel_size / 2};
    h = conv1d(h, bound[enc_latent_w_], bound[enc_latent_b_], same);
    return reshape(h, {s[0], config_.latent_dim});
}

Var Autoencoder::decode(const Var& z, const std::vector<Var>& bound) const {
    const Shape& s = z.shape();
    if (s.size() != 2 || s[1] != config_.latent_dim)
        throw ShapeError("decoder expects latents [N, " + std::to_string(config_.latent_dim) + "], got " + shape_str(s));
    const std::size_t n = s[0];
    const Conv1dOptions same{1, config_.kernel_size / 2};
    Var h = reshape(z, {n, config_.latent_channels(), config_.bottleneck_length()});
    h = relu(conv1d(h, bound[dec_latent_w_], bound[dec_latent_b_], same));
    for (std::size_t i = 0; i < dec_w_.size(); ++i) {
        h = conv1d(upsample_nearest1d(h, config_.stride), bound[dec_w_[i]], bound[dec_b_[i]], same);
        if (i + 1 < dec_w_.size()) h = relu(h);
    }
    return h;
}

Tensor Autoencoder::encode(const Tensor& x, std::size_t chunk) const {
    if (x.rank() != 3) throw ShapeError("autoencoder expects a rank-3 batch, got " + shape_str(x.shape()));
    return chunked_rows(x, chunk, {config_.latent_dim}, [&](Tensor part) {
        Tape tape;
        const auto bound = params_.bind(tape, false);
        return encode(tape.constant(std::move(part)), bound).value();
    });
}

Tensor Autoencoder::decode(const Tensor& z, std::size_t chunk) const {
    if (z.rank() != 2) throw ShapeError("decoder expects a rank-2 latent batch, got " + shape_str(z.shape()));
    return chunked_rows(z, chunk, {config_.in_channels, config_.length}, [&](Tensor part) {
        Tape tape;
        const auto bound = params_.bind(tape, false);
        return decode(tape.constant(std::move(part)), bound).value();
    });
}

std::string Autoencoder::encoder_checksum() const {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    for (const auto& e : params_.entries()) {
        if (e.name.rfind("enc.", 0) != 0) continue;
        EVP_DigestUpdate(ctx, e.name.data(), e.name.size());
        for (double v : e.value.data()) {
            const float f = static_cast<float>(v);
            EVP_DigestUpdate(ctx, &f, sizeof f);
        }
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    std::string hex;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", md[i]);
        hex += buf;
    }
    return hex;
}

}  // namespace advecg
