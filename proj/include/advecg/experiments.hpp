#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "advecg/attack.hpp"
#include "advecg/config.hpp"
#include "advecg/metrics.hpp"
#include "advecg/training.hpp"

namespace advecg {

// Git blob object id: SHA-1 over "blob <size>\0" followed by the content.
std::string git_blob_sha1(std::span<const unsigned char> content);
std::string git_blob_sha1(const std::filesystem::path& path);

struct ManifestInput {
    std::string role;
    std::filesystem::path path;
    std::string blob_id;  // computed from path when empty
};

// Fills in blob ids so repeated manifests do not rehash large inputs.
void hash_inputs(std::vector<ManifestInput>& inputs);

// Writes <artifact>.manifest: tool version, command, seed, input blob ids, artifact blob id and the
// full config snapshot.
void write_manifest(const std::filesystem::path& artifact, const std::string& command, const RunConfig& config,
                    std::uint64_t seed, std::span<const ManifestInput> inputs);

std::string tool_version();

// AUROC and AUPRC with bootstrap intervals for every head; NaN where a head has a single class.
std::vector<MetricRow> metric_rows(const std::string& model, const Tensor& probs, const Tensor& labels,
                                   std::span<const double> thresholds, std::size_t resamples, std::uint64_t seed);

// Accuracy at 0.5 on one head before and after the attack.
struct Robustness {
    std::size_t n = 0;
    double clean_accuracy = 0.0;
    double adversarial_accuracy = 0.0;
    double drop() const { return clean_accuracy - adversarial_accuracy; }
};

Robustness robustness(std::span<const AttackRecord> rows, std::span<const EcgRecord> records, double threshold,
                      std::size_t head);

// Up to `limit` indices (0: all) with positives and negatives of `threshold` in equal numbers where the
// cohort allows, chosen by a seeded draw and returned sorted.
std::vector<std::size_t> balanced_indices(std::span<const EcgRecord> records, double threshold, std::size_t limit,
                                          std::uint64_t seed);

// Subject-level training subset; the audit lists each subject once with its side.
Split scarcity_subset(std::span<const EcgRecord> records, double fraction, std::uint64_t seed);
void write_subset_audit(const std::filesystem::path& path, std::span<const EcgRecord> records, const Split& split);
// True when no subject id occurs on both sides.
bool subject_partition_holds(std::span<const EcgRecord> records, const Split& split);

using ProgressSink = std::function<void(const std::string&)>;

struct ExperimentContext {
    RunConfig config;
    std::filesystem::path out_dir;
    std::string command;
    std::vector<ManifestInput> inputs;
    ProgressSink progress;
};

struct RobustnessRow {
    std::uint64_t seed = 0;
    std::string model;
    Robustness value;
};

struct ScarcityReport {
    std::vector<MetricRow> metrics;
    std::vector<RobustnessRow> robustness;
    std::vector<std::string> models;
};

// Per seed: a subject-level subset, plain / augment / adversarial models on it (and plain on the full
// training set when full_baseline is set), all scored on the test set; the plain and adversarial subset
// models are also attacked with the evaluation attack.
ScarcityReport run_scarcity(std::span<const EcgRecord> train_set, std::span<const EcgRecord> test_set,
                            const Autoencoder* autoencoder, const ExperimentContext& ctx);

void write_robustness_csv(const std::filesystem::path& path, std::span<const RobustnessRow> rows);
// One row per model with the mean and range of each metric point estimate over seeds.
void write_scarcity_summary(const std::filesystem::path& path, const ScarcityReport& report,
                            std::span<const double> thresholds);

struct AblationVariant {
    std::string name;
    TrainMode mode = TrainMode::adversarial;
    double top_k_fraction = 0.30;
    AttackSpace space = AttackSpace::latent;
};

// full, w/o uncertainty (k = 1), w/o on-manifold (signal space) and the plain baseline.
std::vector<AblationVariant> ablation_variants(double top_k_fraction);

struct AblationResult {
    AblationVariant variant;
    std::size_t train_records = 0;  // rows left for training after the validation split
    std::vector<EpochLog> log;
    std::vector<AttackRecord> attacks;
    std::vector<MetricRow> metrics;
};

// Each variant is trained on the subset drawn for the first configured seed and scored on the test set.
// Adversarial variants are attacked in their own training space.
std::vector<AblationResult> run_ablation(std::span<const EcgRecord> train_set, std::span<const EcgRecord> test_set,
                                         const Autoencoder* autoencoder, const ExperimentContext& ctx);

// Grid with one row per variant and an AUROC and AUPRC column per head.
void write_ablation_grid(const std::filesystem::path& path, std::span<const AblationResult> results,
                         std::span<const double> thresholds);

// Latent codes of records[indices] (or of explicit batches) with <= 40 labels.
EmbeddingSet embed(const Autoencoder& ae, std::span<const EcgRecord> records, std::span<const std::size_t> indices,
                   double label_threshold = 40.0);
EmbeddingSet embed(const Autoencoder& ae, const Tensor& x, std::span<const std::uint8_t> labels);

// org: training latents; adv: latents of adversarial training examples; combined: both.
std::vector<DiscrepancyRow> run_discrepancy(std::span<const EcgRecord> train_set, std::span<const EcgRecord> test_set,
                                            const Classifier& model, const Autoencoder& ae,
                                            const AttackConfig& attack, const MmdOptions& mmd_options,
                                            std::size_t limit, std::uint64_t seed);

}  // namespace advecg
