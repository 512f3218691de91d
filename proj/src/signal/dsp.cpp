#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <numbers>

#include "advecg/errors.hpp"
#include "advecg/rng.hpp"
#include "advecg/signal.hpp"

namespace advecg {

namespace {

struct FftwDeleter {
    void operator()(void* p) const { fftw_free(p); }
};

template <class T>
std::unique_ptr<T[], FftwDeleter> fftw_buffer(std::size_t n) {
    return std::unique_ptr<T[], FftwDeleter>(static_cast<T*>(fftw_malloc(sizeof(T) * n)));
}

struct Plan {
    fftw_plan p = nullptr;
    explicit Plan(fftw_plan plan) : p(plan) {}
    Plan(const Plan&) = delete;
    Plan& operator=(const Plan&) = delete;
    ~Plan() {
        if (p) fftw_destroy_plan(p);
    }
};

}  // namespace

std::vector<double> highpass(std::span<const double> x, double sample_rate, double cutoff_hz) {
    const double a = 1.0 / (1.0 + 2.0 * std::numbers::pi * cutoff_hz / sample_rate);
    std::vector<double> y(x.size());
    double prev_x = 0.0, prev_y = 0.0;
    for (std::size_t n = 0; n < x.size(); ++n) {
        prev_y = a * (prev_y + x[n] - prev_x);
        prev_x = x[n];
        y[n] = prev_y;
    }
    return y;
}

EcgRecord highpass(const EcgRecord& record, double cutoff_hz) {
    if (record.sample_rate != static_cast<float>(kSampleRate)) throw InvalidInput("highpass expects 250 Hz records");
    EcgRecord out = record;
    std::vector<double> lead(kSamples);
    for (std::size_t l = 0; l < kLeads; ++l) {
        const auto src = record.lead(l);
        std::copy(src.begin(), src.end(), lead.begin());
        const auto y = highpass(lead, kSampleRate, cutoff_hz);
        auto dst = out.lead(l);
        for (std::size_t n = 0; n < kSamples; ++n) dst[n] = static_cast<float>(y[n]);
    }
    return out;
}

std::vector<double> window_coefficients(std::size_t size, Window window) {
    std::vector<double> w(size, 1.0);
    if (window == Window::hann)
        for (std::size_t n = 0; n < size; ++n)
            w[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(size));
    return w;
}

Spectrogram stft(const EcgRecord& record, std::size_t window_size, std::size_t hop, Window window) {
    if (window_size == 0 || (window_size & (window_size - 1)) != 0)
        throw InvalidInput("stft window size must be a power of two");
    if (window_size > kSamples) throw InvalidInput("stft window larger than the signal");
    if (hop == 0) throw InvalidInput("stft hop must be >= 1");

    Spectrogram s;
    s.channels = 2 * kLeads;
    s.bins = window_size;
    s.frames = (kSamples - window_size) / hop + 1;
    s.window_size = window_size;
    s.hop = hop;
    s.data.assign(s.channels * s.bins * s.frames, 0.0);

    const auto coeff = window_coefficients(window_size, window);
    auto in = fftw_buffer<double>(window_size);
    auto out = fftw_buffer<fftw_complex>(window_size / 2 + 1);
    Plan plan(fftw_plan_dft_r2c_1d(static_cast<int>(window_size), in.get(), out.get(), FFTW_ESTIMATE));

    for (std::size_t l = 0; l < kLeads; ++l) {
        const auto lead = record.lead(l);
        for (std::size_t f = 0; f < s.frames; ++f) {
            for (std::size_t n = 0; n < window_size; ++n) in[n] = coeff[n] * lead[f * hop + n];
            fftw_execute(plan.p);
            for (std::size_t k = 0; k < window_size; ++k) {
                // Bins above Nyquist are the complex conjugate mirror.
                const std::size_t src = k <= window_size / 2 ? k : window_size - k;
                const double re = out[src][0];
                const double im = k <= window_size / 2 ? out[src][1] : -out[src][1];
                s.data[((2 * l) * s.bins + k) * s.frames + f] = re;
                s.data[((2 * l + 1) * s.bins + k) * s.frames + f] = im;
            }
        }
    }
    return s;
}

GaussianKernelBank gaussian_kernels(std::span<const std::size_t> sizes, std::span<const double> sigmas) {
    if (sizes.size() != sigmas.size()) throw InvalidInput("kernel sizes and sigmas differ in length");
    if (sizes.empty()) throw InvalidInput("kernel bank is empty");
    GaussianKernelBank bank;
    bank.sizes.assign(sizes.begin(), sizes.end());
    bank.sigmas.assign(sigmas.begin(), sigmas.end());
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        if (sizes[i] % 2 == 0) throw InvalidInput("kernel size must be odd, got " + std::to_string(sizes[i]));
        if (!(sigmas[i] > 0.0)) throw InvalidInput("kernel sigma must be positive");
        const double c = static_cast<double>(sizes[i] / 2);
        std::vector<double> k(sizes[i]);
        for (std::size_t j = 0; j < k.size(); ++j) {
            const double d = (static_cast<double>(j) - c) / sigmas[i];
            k[j] = std::exp(-0.5 * d * d);
        }
        double total = 0.0;
        // Sum from the tails inward so mirrored weights see identical rounding.
        for (std::size_t j = 0; j < k.size() / 2; ++j) total += k[j] + k[k.size() - 1 - j];
        total += k[k.size() / 2];
        for (double& v : k) v /= total;
        bank.kernels.push_back(std::move(k));
    }
    return bank;
}

GaussianKernelBank default_kernel_bank() {
    const std::vector<std::size_t> sizes{5, 7, 11, 15, 19};
    const std::vector<double> sigmas{1.0, 3.0, 5.0, 7.0, 10.0};
    return gaussian_kernels(sizes, sigmas);
}

std::vector<Band> default_noise_bands() { return {{3.0, 12.0}, {12.0, 50.0}, {50.0, 100.0}, {100.0, 125.0}}; }

std::vector<double> band_noise_signal(std::size_t length, std::span<const Band> bands, double amplitude,
                                      std::uint64_t seed, double sample_rate) {
    if (!(amplitude >= 0.0)) throw InvalidInput("noise amplitude must be non-negative");
    const double nyquist = sample_rate / 2.0;
    for (const Band& b : bands)
        if (!(b.lo_hz > 0.0 && b.hi_hz <= nyquist && b.lo_hz < b.hi_hz))
            throw InvalidInput("noise band must lie inside (0, " + std::to_string(nyquist) + "] Hz");
    std::vector<double> total(length, 0.0);
    if (amplitude == 0.0) return total;

    const std::size_t n_bins = length / 2 + 1;
    auto spec = fftw_buffer<fftw_complex>(n_bins);
    auto time = fftw_buffer<double>(length);
    Plan plan(fftw_plan_dft_c2r_1d(static_cast<int>(length), spec.get(), time.get(), FFTW_ESTIMATE));

    for (std::size_t b = 0; b < bands.size(); ++b) {
        SplitMix64 rng(mix_seed(seed, b));
        std::size_t used = 0;
        for (std::size_t k = 0; k < n_bins; ++k) {
            const double f = static_cast<double>(k) * sample_rate / static_cast<double>(length);
            const bool nyquist_bin = 2 * k == length;
            const bool inside = (f >= bands[b].lo_hz && f < bands[b].hi_hz) || (nyquist_bin && bands[b].hi_hz == nyquist);
            spec[k][0] = inside ? rng.normal() : 0.0;
            spec[k][1] = inside && !nyquist_bin ? rng.normal() : 0.0;
            used += inside;
        }
        if (used == 0) throw InvalidInput("noise band contains no frequency bin");
        fftw_execute(plan.p);
        double power = 0.0;
        for (std::size_t n = 0; n < length; ++n) power += time[n] * time[n];
        const double rms = std::sqrt(power / static_cast<double>(length));
        for (std::size_t n = 0; n < length; ++n) total[n] += time[n] * (amplitude / rms);
    }
    return total;
}

EcgRecord band_noise(const EcgRecord& record, std::span<const Band> bands, double amplitude, std::uint64_t seed) {
    EcgRecord out = record;
    if (amplitude == 0.0) {
        band_noise_signal(kSamples, bands, amplitude, seed);  // still validates the bands
        return out;
    }
    for (std::size_t l = 0; l < kLeads; ++l) {
        const auto noise = band_noise_signal(kSamples, bands, amplitude, mix_seed(seed, {0xb1ull, l}));
        auto dst = out.lead(l);
        for (std::size_t n = 0; n < kSamples; ++n) dst[n] = static_cast<float>(static_cast<double>(dst[n]) + noise[n]);
    }
    return out;
}

}  // namespace advecg
