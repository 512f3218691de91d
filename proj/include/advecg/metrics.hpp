#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace advecg {

// Mann-Whitney AUROC with ties counted 1/2. Throws InvalidInput unless both classes are present.
double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);

// Step-curve average precision: sum over distinct descending thresholds of (R_i - R_{i-1}) * P_i.
// Throws InvalidInput without positives.
double auprc(std::span<const double> scores, std::span<const std::uint8_t> labels);

using Metric = std::function<double(std::span<const double>, std::span<const std::uint8_t>)>;

struct Interval {
    double point = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    std::size_t redrawn = 0;
};

// Linear-interpolation percentile of sorted values, q in [0, 1].
double percentile(std::span<const double> sorted, double q);

// Percentile bootstrap (2.5, 97.5). Resamples lacking either class are redrawn and counted.
Interval bootstrap_ci(std::span<const double> scores, std::span<const std::uint8_t> labels, const Metric& metric,
                      std::size_t n_resamples = 1000, std::uint64_t seed = 0);

// n x dim latent vectors, optional per-row labels, and the encoder checksum that produced them.
struct EmbeddingSet {
    std::size_t n = 0;
    std::size_t dim = 0;
    std::vector<double> values;
    std::vector<std::uint8_t> labels;
    std::string encoder_checksum;

    std::span<const double> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
    void validate() const;
};

enum class CentroidClass { positive, negative };

double centroid_distance(const EmbeddingSet& a, const EmbeddingSet& b, CentroidClass cls);

struct MmdOptions {
    // Each set is reduced to at most this many rows by a seeded draw without replacement.
    std::size_t max_points = 1000;
    std::uint64_t seed = 0;
};

// sqrt of the biased squared MMD with an RBF kernel whose bandwidth is the median pairwise
// distance over A u B. Throws InvalidInput when that median is zero.
double mmd(const EmbeddingSet& a, const EmbeddingSet& b, const MmdOptions& options = {});

inline constexpr std::size_t kDivergenceBins = 64;
inline constexpr double kDivergenceSmoothing = 1e-6;

// Per-dimension histogram divergences (shared range, smoothed), averaged over dimensions.
double kld(const EmbeddingSet& a, const EmbeddingSet& b);
double jsd(const EmbeddingSet& a, const EmbeddingSet& b);

struct DiscrepancyRow {
    std::string variant;
    double center_pos = 0.0;
    double center_neg = 0.0;
    double mmd = 0.0;
    double jsd = 0.0;
    double kld = 0.0;
};

struct NamedEmbedding {
    std::string name;
    EmbeddingSet set;
};

// One row per variant against the reference test set. All sets must share an encoder checksum.
std::vector<DiscrepancyRow> discrepancy_report(const EmbeddingSet& test, std::span<const NamedEmbedding> variants,
                                               const MmdOptions& options = {});

void write_discrepancy_csv(const std::filesystem::path& path, std::span<const DiscrepancyRow> rows,
                           const std::string& encoder_checksum, const MmdOptions& options);

struct MetricRow {
    std::string model;
    std::string metric;
    double threshold = 0.0;
    Interval ci;
    std::size_t n = 0;
    std::uint64_t seed = 0;
};

// Columns metric, head, point, ci_lo, ci_hi, n, seed; a leading model column when `with_model`.
void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricRow> rows, bool with_model = false);

}  // namespace advecg
