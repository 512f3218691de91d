#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "advecg/errors.hpp"
#include "advecg/rng.hpp"
#include "advecg/signal.hpp"

namespace advecg {

namespace {

struct Vec3 {
    double x, y, z;
};

double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

double radians(double deg) { return deg * std::numbers::pi / 180.0; }

// Frontal-plane angle (0 = leftward, 90 = inferior) and elevation toward anterior.
Vec3 direction(double frontal_deg, double elevation_deg) {
    const double a = radians(frontal_deg), e = radians(elevation_deg);
    return {std::cos(a) * std::cos(e), std::sin(a) * std::cos(e), std::sin(e)};
}

// I, II, III, aVR, aVL, aVF, V1-V6.
const std::array<Vec3, kLeads>& lead_axes() {
    static const std::array<Vec3, kLeads> axes = [] {
        std::array<Vec3, kLeads> a{};
        const std::array<double, 6> limb{0.0, 60.0, 120.0, -150.0, -30.0, 90.0};
        for (std::size_t i = 0; i < 6; ++i) a[i] = direction(limb[i], 0.0);
        const std::array<double, 6> chest{115.0, 95.0, 75.0, 60.0, 30.0, 0.0};
        for (std::size_t i = 0; i < 6; ++i) a[6 + i] = {std::cos(radians(chest[i])), 0.0, std::sin(radians(chest[i]))};
        return a;
    }();
    return axes;
}

enum Wave { kP, kQ, kR, kS, kT, kWaves };

struct Subject {
    double lvef = 60.0;
    std::uint8_t lesion = 0;
    double heart_rate = 90.0;
    std::array<Vec3, kWaves> dipole{};
    std::array<double, kWaves> amplitude{};
    std::array<double, kWaves> width{};  // seconds
    std::array<double, kLeads> lead_gain{};
    double qrs_spacing = 1.0;
};

// LVEF is reported to one decimal, so buckets are drawn in tenths of a percent.
double draw_lvef(SplitMix64& rng, double positive_rate) {
    auto tenths = [&](int lo, int hi) { return static_cast<double>(lo + static_cast<int>(rng.below(hi - lo + 1))) / 10.0; };
    if (rng.uniform() < positive_rate) {
        // Conditional mix of LVEF <= 30, (30, 40], (40, 50] matching a 1.2 / 1.5 / 4.2 % cohort.
        const double u = rng.uniform();
        if (u < 1.2 / 6.9) return tenths(100, 300);
        if (u < 2.7 / 6.9) return tenths(301, 400);
        return tenths(401, 500);
    }
    for (;;) {
        const double v = std::round(rng.normal(62.0, 6.0) * 10.0) / 10.0;
        if (v > 50.0 && v <= 80.0) return v;
    }
}

Subject draw_subject(SplitMix64& rng, double positive_rate) {
    Subject s;
    s.lvef = draw_lvef(rng, positive_rate);
    s.lesion = rng.uniform() < 0.5 ? 0 : static_cast<std::uint8_t>(1 + rng.below(kLesionCodes));
    s.heart_rate = rng.uniform(60.0, 180.0);

    const double severity = std::clamp((55.0 - s.lvef) / 35.0, 0.0, 1.0);
    const double axis = rng.normal(60.0, 20.0);
    s.dipole[kP] = direction(rng.normal(55.0, 10.0), rng.normal(0.0, 10.0));
    s.dipole[kQ] = direction(axis + 160.0 + rng.normal(0.0, 15.0), rng.normal(10.0, 10.0));
    s.dipole[kR] = direction(axis, rng.normal(-20.0, 10.0));
    s.dipole[kS] = direction(axis + 130.0 + rng.normal(0.0, 20.0), rng.normal(25.0, 10.0));
    s.dipole[kT] = direction(axis + rng.normal(0.0, 15.0), rng.normal(-10.0, 10.0));

    const double qrs_amp = std::exp(rng.normal(0.0, 0.2)) * (1.0 - 0.45 * severity);
    const double qrs_width = std::max(0.6, rng.normal(1.0, 0.1)) * (1.0 + 0.8 * severity);
    s.amplitude = {0.12 * std::exp(rng.normal(0.0, 0.2)), 0.15 * qrs_amp, 1.2 * qrs_amp, 0.35 * qrs_amp,
                   0.3 * std::exp(rng.normal(0.0, 0.25))};
    s.width = {0.025, 0.008 * qrs_width, 0.010 * qrs_width, 0.010 * qrs_width, 0.045};
    s.qrs_spacing = qrs_width;
    for (double& g : s.lead_gain) g = std::max(0.5, rng.normal(1.0, 0.1));
    return s;
}

void render_record(const Subject& s, SplitMix64& rng, EcgRecord& rec) {
    const double hr = std::clamp(s.heart_rate + rng.normal(0.0, 5.0), 60.0, 180.0);
    const double rr = 60.0 / hr;
    const double sqrt_rr = std::sqrt(rr);
    const double gain = std::max(0.5, rng.normal(1.0, 0.05));
    const std::array<double, kWaves> offset{-0.16 * sqrt_rr, -0.022 * s.qrs_spacing, 0.0, 0.026 * s.qrs_spacing,
                                            0.3 * sqrt_rr};

    std::array<std::array<double, kWaves>, kLeads> proj{};
    for (std::size_t l = 0; l < kLeads; ++l)
        for (std::size_t w = 0; w < kWaves; ++w)
            proj[l][w] = s.amplitude[w] * dot(lead_axes()[l], s.dipole[w]) * s.lead_gain[l] * gain;

    std::vector<double> beats;
    const double duration = static_cast<double>(kSamples) / kSampleRate;
    for (double t = rng.uniform(0.0, rr) - rr; t < duration + rr; t += rr * std::max(0.8, rng.normal(1.0, 0.02)))
        beats.push_back(t);

    std::vector<double> acc(kLeads * kSamples, 0.0);
    for (double beat : beats) {
        for (std::size_t w = 0; w < kWaves; ++w) {
            const double center = beat + offset[w];
            const double width = s.width[w];
            const auto lo = static_cast<std::ptrdiff_t>(std::floor((center - 5.0 * width) * kSampleRate));
            const auto hi = static_cast<std::ptrdiff_t>(std::ceil((center + 5.0 * width) * kSampleRate));
            for (std::ptrdiff_t n = std::max<std::ptrdiff_t>(lo, 0);
                 n <= std::min<std::ptrdiff_t>(hi, kSamples - 1); ++n) {
                const double d = (static_cast<double>(n) / kSampleRate - center) / width;
                const double bump = std::exp(-0.5 * d * d);
                for (std::size_t l = 0; l < kLeads; ++l) acc[l * kSamples + n] += proj[l][w] * bump;
            }
        }
    }

    for (std::size_t l = 0; l < kLeads; ++l) {
        const double wander_amp = rng.uniform(0.02, 0.15);
        const double wander_hz = rng.uniform(0.1, 0.4);
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        for (std::size_t n = 0; n < kSamples; ++n) {
            const double t = static_cast<double>(n) / kSampleRate;
            const double v = acc[l * kSamples + n] +
                             wander_amp * std::sin(2.0 * std::numbers::pi * wander_hz * t + phase) + rng.normal(0.0, 0.015);
            rec.at(l, n) = static_cast<float>(v);
        }
    }
}

}  // namespace

std::vector<double> default_thresholds() { return {50.0, 40.0, 30.0}; }

void validate_record(const EcgRecord& r) {
    if (r.leads.size() != kLeads * kSamples)
        throw InvalidInput("record must hold 12 leads of 2048 samples, got " + std::to_string(r.leads.size()) + " values");
    if (r.sample_rate != static_cast<float>(kSampleRate))
        throw InvalidInput("record sample rate must be 250 Hz, got " + std::to_string(r.sample_rate));
    if (!(r.lvef_percent >= 0.0f && r.lvef_percent <= 100.0f))
        throw InvalidInput("lvef_percent outside [0, 100]: " + std::to_string(r.lvef_percent));
    if (r.lesion_code > kLesionCodes) throw InvalidInput("lesion code out of range: " + std::to_string(r.lesion_code));
    for (float v : r.leads)
        if (!std::isfinite(v)) throw InvalidInput("record contains a non-finite sample");
}

std::vector<double> labels(double lvef, std::span<const double> thresholds) {
    std::vector<double> out(thresholds.size());
    for (std::size_t h = 0; h < thresholds.size(); ++h) out[h] = lvef <= thresholds[h] ? 1.0 : 0.0;
    return out;
}

Tensor label_matrix(std::span<const EcgRecord> records, std::span<const std::size_t> indices,
                    std::span<const double> thresholds) {
    Tensor out(Shape{indices.size(), thresholds.size()});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto row = labels(records[indices[i]].lvef_percent, thresholds);
        std::copy(row.begin(), row.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * thresholds.size()));
    }
    return out;
}

Tensor label_matrix(std::span<const EcgRecord> records, std::span<const double> thresholds) {
    std::vector<std::size_t> idx(records.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return label_matrix(records, idx, thresholds);
}

Tensor to_batch(std::span<const EcgRecord> records, std::span<const std::size_t> indices) {
    Tensor out(Shape{indices.size(), kLeads, kSamples});
    auto dst = out.data().begin();
    for (std::size_t i : indices) dst = std::copy(records[i].leads.begin(), records[i].leads.end(), dst);
    return out;
}

Tensor to_batch(const EcgRecord& record) {
    const std::size_t zero = 0;
    return to_batch(std::span<const EcgRecord>(&record, 1), std::span<const std::size_t>(&zero, 1));
}

EcgRecord with_leads(const EcgRecord& meta, std::span<const double> leads) {
    if (leads.size() != kLeads * kSamples) throw ShapeError("with_leads expects 12 x 2048 values");
    EcgRecord out = meta;
    for (std::size_t i = 0; i < leads.size(); ++i) out.leads[i] = static_cast<float>(leads[i]);
    return out;
}

std::vector<EcgRecord> generate_cohort(const CohortConfig& config) {
    if (config.n_records == 0) throw InvalidInput("generate_cohort needs n_records >= 1");
    if (!(config.positive_rate > 0.0 && config.positive_rate < 1.0))
        throw InvalidInput("positive_rate must lie in (0, 1)");
    SplitMix64 subject_rng(mix_seed(config.seed, 0x5ull));
    std::vector<EcgRecord> out;
    out.reserve(config.n_records);
    std::uint32_t subject_id = config.first_subject_id;
    while (out.size() < config.n_records) {
        const Subject s = draw_subject(subject_rng, config.positive_rate);
        const std::size_t n_rec = 1 + subject_rng.below(4);
        for (std::size_t r = 0; r < n_rec && out.size() < config.n_records; ++r) {
            SplitMix64 rec_rng(mix_seed(config.seed, {0x7ull, subject_id, r}));
            EcgRecord rec;
            rec.lvef_percent = static_cast<float>(s.lvef);
            rec.lesion_code = s.lesion;
            rec.subject_id = subject_id;
            render_record(s, rec_rng, rec);
            out.push_back(std::move(rec));
        }
        ++subject_id;
    }
    return out;
}

std::vector<EcgRecord> generate_cohort(std::size_t n_records, double positive_rate, std::uint64_t seed) {
    CohortConfig c;
    c.n_records = n_records;
    c.positive_rate = positive_rate;
    c.seed = seed;
    return generate_cohort(c);
}

Split split_by_subject(std::span<const EcgRecord> records, std::span<const std::size_t> indices, double fraction,
                       std::uint64_t seed, double stratify_threshold) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw InvalidInput("split fraction must lie in [0, 1]");
    std::vector<std::uint32_t> subjects;
    for (std::size_t i : indices) subjects.push_back(records[i].subject_id);
    std::sort(subjects.begin(), subjects.end());
    subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());

    std::vector<char> positive(subjects.size(), 0);
    auto subject_pos = [&](std::uint32_t id) {
        return static_cast<std::size_t>(std::lower_bound(subjects.begin(), subjects.end(), id) - subjects.begin());
    };
    for (std::size_t i : indices)
        if (records[i].lvef_percent <= stratify_threshold) positive[subject_pos(records[i].subject_id)] = 1;

    std::vector<char> chosen(subjects.size(), 0);
    SplitMix64 rng(mix_seed(seed, 0x5917ull));
    for (char stratum : {char{1}, char{0}}) {
        std::vector<std::size_t> members;
        for (std::size_t s = 0; s < subjects.size(); ++s)
            if (positive[s] == stratum) members.push_back(s);
        shuffle(members, rng);
        const auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(members.size())));
        for (std::size_t k = 0; k < take; ++k) chosen[members[k]] = 1;
    }

    Split out;
    for (std::size_t i : indices) (chosen[subject_pos(records[i].subject_id)] ? out.selected : out.rest).push_back(i);
    std::sort(out.selected.begin(), out.selected.end());
    std::sort(out.rest.begin(), out.rest.end());
    return out;
}

Split split_by_subject(std::span<const EcgRecord> records, double fraction, std::uint64_t seed,
                       double stratify_threshold) {
    std::vector<std::size_t> idx(records.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return split_by_subject(records, idx, fraction, seed, stratify_threshold);
}

}  // namespace advecg
