#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "advecg/models.hpp"
#include "advecg/signal.hpp"

namespace advecg {

enum class AttackSpace { signal, latent };
enum class RegularizerSign { reward_similarity, literal };

std::string to_string(AttackSpace space);
std::string to_string(RegularizerSign sign);
AttackSpace parse_attack_space(const std::string& text);
RegularizerSign parse_regularizer_sign(const std::string& text);

struct AttackConfig {
    std::size_t steps = 20;
    double step_size = 0.001;
    double epsilon = 0.5;
    double lambda = 0.1;
    RegularizerSign sign = RegularizerSign::reward_similarity;
    AttackSpace space = AttackSpace::latent;
    GaussianKernelBank bank = default_kernel_bank();

    void validate() const;
};

// Classifier plus the optional autoencoder that latent attacks decode through. Both are read only.
struct AttackTarget {
    const Classifier& model;
    const Autoencoder* autoencoder = nullptr;
};

// <a, b> / (|a| |b|). Throws InvalidInput when either norm is zero.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

// (1/M) sum_m delta * G_m per lead, same-length zero padding. Works on [..., L].
Var smooth_perturbation(const Var& delta, const GaussianKernelBank& bank);
Tensor smooth_perturbation(const Tensor& delta, const GaussianKernelBank& bank);

// Shape of delta for a batch of n records: [n, C, L] in signal space, [n, D_z] in latent space.
Shape perturbation_shape(const AttackTarget& target, std::size_t n, AttackSpace space);

// The input the classifier sees for perturbation delta: x + smooth(delta) in signal space,
// Dec(z + delta) in latent space, where z = Enc(x) is supplied by the caller.
Var perturbed_input(const AttackTarget& target, const Tensor& x, const Tensor& z, const Var& delta,
                    const AttackConfig& config);

// Per-row L_adv = CE(f(x'), y) +/- lambda * d(x', x) in eval mode, differentiable in delta. [N].
Var adversarial_loss_rows(Tape& tape, const AttackTarget& target, const Tensor& x, const Tensor& y,
                          const Var& delta, const AttackConfig& config);
Tensor adversarial_loss(const AttackTarget& target, const Tensor& x, const Tensor& y, const Tensor& delta,
                        const AttackConfig& config);

// Receives the step index (1-based) and delta after projection.
using StepObserver = std::function<void(std::size_t, const Tensor&)>;

// delta^0 = 0, delta^t = clip_eps(delta^{t-1} + alpha * sign(grad)), sign(0) = 0. Batched over rows.
Tensor pgd(const AttackTarget& target, const Tensor& x, const Tensor& y, const AttackConfig& config,
           const StepObserver& observer = {});

struct AdversarialBatch {
    Tensor x_adv;
    Tensor delta;
};

// Signal space: x + smooth(delta^T). Latent space: Dec(Enc(x) + delta^T).
AdversarialBatch make_adversarial(const AttackTarget& target, const Tensor& x, const Tensor& y,
                                  const AttackConfig& config);

struct AttackRecord {
    std::size_t sample_id = 0;
    AttackSpace space = AttackSpace::latent;
    double loss_before = 0.0;
    double loss_after = 0.0;
    double cosine = 0.0;
    std::vector<bool> flipped;
    std::vector<double> prob_clean;
    std::vector<double> prob_adv;
    double wall_time_s = 0.0;
};

struct AttackOutcome {
    std::vector<AttackRecord> records;
    Tensor x_adv;
};

// Attacks records[indices] in chunks and measures each sample.
AttackOutcome attack_records(const AttackTarget& target, std::span<const EcgRecord> records,
                             std::span<const std::size_t> indices, const AttackConfig& config,
                             std::size_t chunk = 16);

// Fraction of rows whose head decision at 0.5 flipped, among rows selected by `mask`.
double flip_rate(std::span<const AttackRecord> rows, std::size_t head, std::span<const bool> mask = {});

void write_attack_csv(const std::filesystem::path& path, std::span<const AttackRecord> rows,
                      std::span<const double> thresholds);

}  // namespace advecg
