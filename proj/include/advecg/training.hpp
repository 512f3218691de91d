#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "advecg/attack.hpp"
#include "advecg/models.hpp"
#include "advecg/signal.hpp"

namespace advecg {

enum class TrainMode { plain, augment, adversarial };
// combined: clean loss on every row plus the adversarial loss on D_u rows.
// adversarial_only: the adversarial loss on D_u rows alone (CLI value eq11-only).
enum class LossForm { combined, adversarial_only };

std::string to_string(TrainMode mode);
std::string to_string(LossForm form);
TrainMode parse_train_mode(const std::string& text);
LossForm parse_loss_form(const std::string& text);

struct TrainConfig {
    ClassifierConfig model;
    AdamConfig adam;
    std::size_t batch_size = 64;
    std::size_t max_epochs = 100;
    std::size_t patience = 10;
    double top_k_fraction = 0.30;
    double val_fraction = 0.10;
    AttackConfig attack;
    TrainMode mode = TrainMode::plain;
    LossForm loss_form = LossForm::combined;
    double noise_amplitude = 0.05;
    std::vector<Band> noise_bands = default_noise_bands();
    std::uint64_t seed = 0;

    void validate() const;
};

// Mean binary entropy over heads of one probability row.
double uncertainty(std::span<const double> probs);
// Eval-mode uncertainty of every row of x.
std::vector<double> uncertainty(const Classifier& model, const Tensor& x, std::size_t chunk = 32);
std::vector<double> uncertainty(const Classifier& model, std::span<const EcgRecord> records,
                                std::span<const std::size_t> indices, std::size_t chunk = 32);

// Positions of the ceil(k * N) largest values, ties to the lower position, returned sorted.
// k = 0 selects nothing.
std::vector<std::size_t> select_uncertain(std::span<const double> u, double k_fraction);

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    std::vector<double> val_auroc;
    std::size_t du_size = 0;
    std::size_t du_overlap_prev = 0;
    double wall_time_s = 0.0;
};

struct TrainState {
    Classifier model;
    AdamState adam;
    std::size_t epoch = 0;
    double best_val = 0.0;
    std::uint64_t rng_state = 0;
};

struct TrainResult {
    // Parameters of the best validation-loss epoch.
    Classifier model;
    std::vector<EpochLog> log;
    std::size_t best_epoch = 0;
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> val_indices;
    // Optimizer state after the last epoch that ran.
    TrainState final_state;
};

using EpochObserver = std::function<void(const EpochLog&)>;

// Trains on records[indices]; a subject-level validation split of val_fraction is held out.
TrainResult train(std::span<const EcgRecord> records, std::span<const std::size_t> indices, const TrainConfig& config,
                  const Autoencoder* autoencoder = nullptr, const EpochObserver& observer = {});

// Mean per-row cross-entropy and per-head AUROC (NaN for a single-class head) in eval mode.
struct Evaluation {
    double loss = 0.0;
    std::vector<double> auroc;
    Tensor probs;
};
Evaluation evaluate(const Classifier& model, std::span<const EcgRecord> records, std::span<const std::size_t> indices);

void write_training_log(const std::filesystem::path& path, std::span<const EpochLog> log,
                        std::span<const double> thresholds);

void save_train_state(const std::filesystem::path& path, const TrainState& state);
TrainState load_train_state(const std::filesystem::path& path);

}  // namespace advecg
