#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "advecg/tensor.hpp"

namespace advecg {

inline constexpr std::size_t kLeads = 12;
inline constexpr std::size_t kSamples = 2048;
inline constexpr double kSampleRate = 250.0;
inline constexpr std::size_t kLesionCodes = 17;

// LVEF thresholds (percent) of the default output heads, in head order.
std::vector<double> default_thresholds();

struct EcgRecord {
    std::vector<float> leads = std::vector<float>(kLeads * kSamples);  // lead-major, millivolts
    float sample_rate = static_cast<float>(kSampleRate);
    float lvef_percent = 60.0f;
    std::uint8_t lesion_code = 0;
    std::uint32_t subject_id = 0;

    float at(std::size_t lead, std::size_t t) const { return leads[lead * kSamples + t]; }
    float& at(std::size_t lead, std::size_t t) { return leads[lead * kSamples + t]; }
    std::span<const float> lead(std::size_t l) const { return {leads.data() + l * kSamples, kSamples}; }
    std::span<float> lead(std::size_t l) { return {leads.data() + l * kSamples, kSamples}; }
};

// Throws InvalidInput when a record breaks the 12 x 2048 / 250 Hz / LVEF range contract.
void validate_record(const EcgRecord& record);

// Multi-hot labels: entry h is 1 when lvef <= thresholds[h].
std::vector<double> labels(double lvef_percent, std::span<const double> thresholds);
// [N, H] label matrix.
Tensor label_matrix(std::span<const EcgRecord> records, std::span<const double> thresholds);
Tensor label_matrix(std::span<const EcgRecord> records, std::span<const std::size_t> indices,
                    std::span<const double> thresholds);
// [N, 12, 2048] batch in double precision.
Tensor to_batch(std::span<const EcgRecord> records, std::span<const std::size_t> indices);
Tensor to_batch(const EcgRecord& record);
// Inverse of to_batch for one row, rounding to the stored float precision.
EcgRecord with_leads(const EcgRecord& meta, std::span<const double> leads);

struct CohortConfig {
    std::size_t n_records = 4000;
    double positive_rate = 0.069;  // P(LVEF <= 50)
    std::uint64_t seed = 1;
    std::uint32_t first_subject_id = 0;
};

// Synthetic beats built from Gaussian P/QRS/T bumps projected onto 12 leads. Low-LVEF subjects
// get smaller, wider QRS complexes. Subjects contribute 1-4 records each.
std::vector<EcgRecord> generate_cohort(const CohortConfig& config);
std::vector<EcgRecord> generate_cohort(std::size_t n_records, double positive_rate, std::uint64_t seed);

// First-order recursive high-pass, y[n] = a (y[n-1] + x[n] - x[n-1]), a = 1 / (1 + 2 pi fc / fs),
// starting from a zero state.
std::vector<double> highpass(std::span<const double> x, double sample_rate = kSampleRate, double cutoff_hz = 0.5);
EcgRecord highpass(const EcgRecord& record, double cutoff_hz = 0.5);

enum class Window { hann, rectangular };

// Two-sided STFT of each lead. Channel 2l holds the real part of lead l, 2l+1 the imaginary part.
struct Spectrogram {
    std::size_t channels = 0;
    std::size_t bins = 0;    // = window_size
    std::size_t frames = 0;  // floor((L - window) / hop) + 1
    std::size_t window_size = 0;
    std::size_t hop = 0;
    std::vector<double> data;  // [channels][bins][frames]

    double at(std::size_t c, std::size_t k, std::size_t f) const { return data[(c * bins + k) * frames + f]; }
};

std::vector<double> window_coefficients(std::size_t size, Window window);
Spectrogram stft(const EcgRecord& record, std::size_t window_size = 256, std::size_t hop = 64,
                 Window window = Window::hann);

struct GaussianKernelBank {
    std::vector<std::size_t> sizes;
    std::vector<double> sigmas;
    std::vector<std::vector<double>> kernels;

    std::size_t size() const { return kernels.size(); }
};

// kernel_i[j] proportional to exp(-(j - c)^2 / (2 sigma_i^2)), normalized to sum 1.
GaussianKernelBank gaussian_kernels(std::span<const std::size_t> sizes, std::span<const double> sigmas);
// s = [5, 7, 11, 15, 19], sigma = [1, 3, 5, 7, 10].
GaussianKernelBank default_kernel_bank();

struct Band {
    double lo_hz;
    double hi_hz;
};

std::vector<Band> default_noise_bands();

// Gaussian noise synthesized on the FFT bins inside each band, scaled per band and lead to an RMS
// of `amplitude` millivolts, added to every lead.
std::vector<double> band_noise_signal(std::size_t length, std::span<const Band> bands, double amplitude,
                                      std::uint64_t seed, double sample_rate = kSampleRate);
EcgRecord band_noise(const EcgRecord& record, std::span<const Band> bands, double amplitude, std::uint64_t seed);

// ECGD binary dataset.
void write_dataset(const std::filesystem::path& path, std::span<const EcgRecord> records);
std::vector<EcgRecord> read_dataset(const std::filesystem::path& path);
// One row per (record, lead, sample).
void write_dataset_csv(const std::filesystem::path& path, std::span<const EcgRecord> records);

struct Split {
    std::vector<std::size_t> selected;
    std::vector<std::size_t> rest;
};

// Subject-level split of `indices`: roughly `fraction` of the subjects (rounded per stratum) go to
// `selected`. Subjects are stratified by whether any of their records has lvef <= stratify_threshold.
// Both outputs are sorted.
Split split_by_subject(std::span<const EcgRecord> records, std::span<const std::size_t> indices, double fraction,
                       std::uint64_t seed, double stratify_threshold = 40.0);
Split split_by_subject(std::span<const EcgRecord> records, double fraction, std::uint64_t seed,
                       double stratify_threshold = 40.0);

}  // namespace advecg
