#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "advecg/params.hpp"
#include "advecg/signal.hpp"

namespace advecg {

enum class Mode { train, eval };

// Per-call switches of a forward pass. Dropout draws row masks from (dropout_seed, layer,
// row_keys[row]); row indices stand in for missing keys.
struct ForwardContext {
    Mode mode = Mode::eval;
    std::uint64_t dropout_seed = 0;
    std::span<const std::uint64_t> row_keys = {};
};

struct ClassifierConfig {
    std::size_t in_channels = kLeads;
    std::size_t length = kSamples;
    std::size_t stem_channels = 16;
    std::vector<std::size_t> block_channels{16, 32, 64, 128};
    std::size_t kernel_size = 17;
    double dropout_rate = 0.2;
    double bn_momentum = 0.1;
    std::vector<double> thresholds{50.0, 40.0, 30.0};

    std::size_t n_heads() const { return thresholds.size(); }
    void validate() const;
};

// Residual 1-D CNN: stem conv, 4 blocks that halve the length, global average pool, one sigmoid
// unit per LVEF threshold.
class Classifier {
   public:
    explicit Classifier(ClassifierConfig config = {}, std::uint64_t seed = 0);

    const ClassifierConfig& config() const { return config_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

    // x [N, C, L] -> probabilities [N, H]. `bound` comes from params().bind on the same tape.
    // Train mode folds batch statistics into the running estimates.
    Var forward(const Var& x, const std::vector<Var>& bound, const ForwardContext& ctx);
    Var forward_eval(const Var& x, const std::vector<Var>& bound) const;

    // Eval-mode probabilities without gradient bookkeeping, computed in chunks.
    Tensor predict(const Tensor& x, std::size_t chunk = 32) const;

    void check_input(const Shape& shape) const;

   private:
    struct Block {
        std::size_t conv1, bn1_gamma, bn1_beta, bn1_mean, bn1_var;
        std::size_t conv2, bn2_gamma, bn2_beta, bn2_mean, bn2_var;
        std::size_t skip;
    };
    Var run(const Var& x, const std::vector<Var>& bound, const ForwardContext& ctx, ParamSet* buffers) const;
    Var batch_norm(const Var& x, const std::vector<Var>& bound, std::size_t gamma, std::size_t beta, std::size_t mean,
                   std::size_t var, ParamSet* buffers) const;

    ClassifierConfig config_;
    ParamSet params_;
    std::size_t stem_ = 0, stem_gamma_ = 0, stem_beta_ = 0, stem_mean_ = 0, stem_var_ = 0;
    std::vector<Block> blocks_;
    std::size_t fc_w_ = 0, fc_b_ = 0;
};

struct AutoencoderConfig {
    std::size_t in_channels = kLeads;
    std::size_t length = kSamples;
    std::vector<std::size_t> channels{16, 32, 32};
    std::size_t kernel_size = 9;
    std::size_t stride = 4;
    std::size_t latent_dim = 256;

    std::size_t bottleneck_length() const;
    // z is the flattened [latent_channels, bottleneck_length] feature map.
    std::size_t latent_channels() const;
    void validate() const;
};

// Strided-conv encoder to a latent vector z; mirrored decoder built from nearest upsampling and
// same-length convolutions.
class Autoencoder {
   public:
    explicit Autoencoder(AutoencoderConfig config = {}, std::uint64_t seed = 0);

    const AutoencoderConfig& config() const { return config_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

    // x [N, C, L] -> z [N, D_z]
    Var encode(const Var& x, const std::vector<Var>& bound) const;
    // z [N, D_z] -> x_hat [N, C, L]
    Var decode(const Var& z, const std::vector<Var>& bound) const;

    Tensor encode(const Tensor& x, std::size_t chunk = 32) const;
    Tensor decode(const Tensor& z, std::size_t chunk = 32) const;

    // SHA-256 over the encoder weights at stored precision, hex encoded.
    std::string encoder_checksum() const;

   private:
    AutoencoderConfig config_;
    ParamSet params_;
    std::vector<std::size_t> enc_w_, enc_b_, dec_w_, dec_b_;
    std::size_t enc_latent_w_ = 0, enc_latent_b_ = 0, dec_latent_w_ = 0, dec_latent_b_ = 0;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// First and second moments for every trainable entry (empty tensors for buffers).
struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::uint64_t step = 0;
};

AdamState make_adam_state(const ParamSet& params);

// Bias-corrected Adam update. `grads` is aligned with the ParamSet; an empty tensor counts as a
// zero gradient.
void adam_step(ParamSet& params, AdamState& state, const std::vector<Tensor>& grads, const AdamConfig& config);

// Gradients of every trainable entry after backward(), aligned with the ParamSet.
std::vector<Tensor> collect_gradients(const ParamSet& params, const std::vector<Var>& bound, Gradients& grads);

struct AutoencoderTrainConfig {
    std::size_t epochs = 20;
    double lr = 1e-3;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
};

struct AutoencoderTrainResult {
    Autoencoder model;
    std::vector<double> epoch_loss;  // mean reconstruction MSE per epoch
    bool smoothed_loss_non_increasing = true;
};

// Adam on mean squared reconstruction error over `indices` of `records`.
AutoencoderTrainResult pretrain_autoencoder(std::span<const EcgRecord> records, std::span<const std::size_t> indices,
                                            const AutoencoderConfig& config, const AutoencoderTrainConfig& train);

// Mean squared error of reconstructing each of `indices`, and of predicting all zeros.
struct ReconstructionError {
    double model_mse = 0.0;
    double zero_mse = 0.0;
};
ReconstructionError reconstruction_error(const Autoencoder& ae, std::span<const EcgRecord> records,
                                         std::span<const std::size_t> indices);

// Largest ||Dec(z + d) - Dec(z)||_inf / ||d||_inf over random z (taken from encoded records) and d.
double decoder_lipschitz_estimate(const Autoencoder& ae, const Tensor& latents, std::size_t trials, double scale,
                                  std::uint64_t seed);

// Moving-average check used to flag non-monotone training curves.
bool smoothed_non_increasing(std::span<const double> values, std::size_t window = 5);

}  // namespace advecg
