#include "advecg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "advecg/errors.hpp"
#include "advecg/reduce.hpp"
#include "advecg/rng.hpp"

namespace advecg {

namespace {

void check_scored(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    if (scores.size() != labels.size()) throw ShapeError("scores and labels differ in length");
    for (double s : scores)
        if (!std::isfinite(s)) throw InvalidInput("scores must be finite");
}

std::vector<std::size_t> descending_order(std::span<const double> scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::string head_tag(double t) {
    char buf[32];
    std::snprintf(buf, sizeof buf, t == std::floor(t) ? "le%.0f" : "le%g", t);
    return buf;
}

std::vector<std::size_t> subsample(std::size_t n, std::size_t cap, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (cap == 0 || n <= cap) return idx;
    SplitMix64 rng(seed);
    shuffle(idx, rng);
    idx.resize(cap);
    std::sort(idx.begin(), idx.end());
    return idx;
}

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

std::vector<double> smoothed_hist(const EmbeddingSet& s, std::size_t dim, double lo, double hi) {
    std::vector<double> h(kDivergenceBins, 0.0);
    const double width = hi - lo;
    for (std::size_t i = 0; i < s.n; ++i) {
        std::size_t bin = 0;
        if (width > 0.0) {
            const double u = (s.values[i * s.dim + dim] - lo) / width;
            bin = std::min(kDivergenceBins - 1, static_cast<std::size_t>(std::floor(u * kDivergenceBins)));
        }
        h[bin] += 1.0;
    }
    double total = 0.0;
    for (double& v : h) {
        v += kDivergenceSmoothing;
        total += v;
    }
    for (double& v : h) v /= total;
    return h;
}

double kl(std::span<const double> p, std::span<const double> q) {
    std::vector<double> terms(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) terms[i] = p[i] * std::log(p[i] / q[i]);
    return pairwise_sum(terms);
}

template <class F>
double per_dimension(const EmbeddingSet& a, const EmbeddingSet& b, F&& divergence) {
    a.validate();
    b.validate();
    if (a.n == 0 || b.n == 0) throw InvalidInput("divergence needs nonempty sets");
    if (a.dim != b.dim) throw ShapeError("embedding dimensions differ");
    std::vector<double> per(a.dim);
    for (std::size_t d = 0; d < a.dim; ++d) {
        double lo = a.values[d], hi = a.values[d];
        for (const EmbeddingSet* s : {&a, &b})
            for (std::size_t i = 0; i < s->n; ++i) {
                lo = std::min(lo, s->values[i * s->dim + d]);
                hi = std::max(hi, s->values[i * s->dim + d]);
            }
        const auto pa = smoothed_hist(a, d, lo, hi);
        const auto pb = smoothed_hist(b, d, lo, hi);
        per[d] = divergence(pa, pb);
    }
    return pairwise_sum(per) / static_cast<double>(a.dim);
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    check_scored(scores, labels);
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double pos = 0.0, neg = 0.0, rank_sum = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]]) rank_sum += mid_rank;
        i = j;
    }
    for (auto l : labels) (l ? pos : neg) += 1.0;
    if (pos == 0.0 || neg == 0.0) throw InvalidInput("auroc needs both positive and negative labels");
    return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

double auprc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    check_scored(scores, labels);
    const double total_pos = static_cast<double>(std::count_if(labels.begin(), labels.end(), [](auto l) { return l != 0; }));
    if (total_pos == 0.0) throw InvalidInput("auprc needs at least one positive label");
    const auto order = descending_order(scores);
    double tp = 0.0, seen = 0.0, prev_recall = 0.0, area = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            tp += labels[order[j]] ? 1.0 : 0.0;
            seen += 1.0;
            ++j;
        }
        const double recall = tp / total_pos;
        area += (recall - prev_recall) * (tp / seen);
        prev_recall = recall;
        i = j;
    }
    return area;
}

double percentile(std::span<const double> sorted, double q) {
    if (sorted.empty()) throw InvalidInput("percentile of an empty sample");
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

Interval bootstrap_ci(std::span<const double> scores, std::span<const std::uint8_t> labels, const Metric& metric,
                      std::size_t n_resamples, std::uint64_t seed) {
    check_scored(scores, labels);
    if (n_resamples == 0) throw InvalidInput("bootstrap needs at least one resample");
    Interval out;
    out.point = metric(scores, labels);
    const std::size_t n = scores.size();
    std::vector<double> values(n_resamples), s(n);
    std::vector<std::uint8_t> l(n);
    for (std::size_t r = 0; r < n_resamples; ++r) {
        SplitMix64 rng(mix_seed(seed, {0xb007ull, r}));
        for (std::size_t attempt = 0;; ++attempt) {
            if (attempt == 10000) throw InvalidInput("bootstrap could not draw a resample with both classes");
            bool any_pos = false, any_neg = false;
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t k = rng.below(n);
                s[i] = scores[k];
                l[i] = labels[k];
                (l[i] ? any_pos : any_neg) = true;
            }
            if (any_pos && any_neg) break;
            ++out.redrawn;
        }
        values[r] = metric(s, l);
    }
    std::sort(values.begin(), values.end());
    out.lo = percentile(values, 0.025);
    out.hi = percentile(values, 0.975);
    return out;
}

void EmbeddingSet::validate() const {
    if (values.size() != n * dim) throw ShapeError("embedding set holds " + std::to_string(values.size()) +
                                                   " values, expected " + std::to_string(n * dim));
    if (!labels.empty() && labels.size() != n) throw ShapeError("embedding labels do not match the row count");
    for (double v : values)
        if (!std::isfinite(v)) throw InvalidInput("embedding vectors must be finite");
}

double centroid_distance(const EmbeddingSet& a, const EmbeddingSet& b, CentroidClass cls) {
    a.validate();
    b.validate();
    if (a.dim != b.dim) throw ShapeError("embedding dimensions differ");
    if (a.labels.empty() || b.labels.empty()) throw InvalidInput("centroid distance needs labelled sets");
    const std::uint8_t want = cls == CentroidClass::positive ? 1 : 0;
    auto centroid = [&](const EmbeddingSet& s) {
        std::vector<std::vector<double>> cols(s.dim);
        for (std::size_t i = 0; i < s.n; ++i)
            if ((s.labels[i] != 0) == (want != 0))
                for (std::size_t d = 0; d < s.dim; ++d) cols[d].push_back(s.values[i * s.dim + d]);
        if (cols.empty() || cols[0].empty()) throw InvalidInput("centroid distance: class is empty in one set");
        std::vector<double> c(s.dim);
        for (std::size_t d = 0; d < s.dim; ++d) c[d] = pairwise_sum(cols[d]) / static_cast<double>(cols[d].size());
        return c;
    };
    const auto ca = centroid(a);
    const auto cb = centroid(b);
    return std::sqrt(sq_dist(ca, cb));
}

double mmd(const EmbeddingSet& a, const EmbeddingSet& b, const MmdOptions& options) {
    a.validate();
    b.validate();
    if (a.n == 0 || b.n == 0) throw InvalidInput("mmd needs nonempty sets");
    if (a.dim != b.dim) throw ShapeError("embedding dimensions differ");
    const auto ia = subsample(a.n, options.max_points, mix_seed(options.seed, 0xa));
    const auto ib = subsample(b.n, options.max_points, mix_seed(options.seed, 0xa));
    std::vector<std::span<const double>> pool;
    for (auto i : ia) pool.push_back(a.row(i));
    for (auto i : ib) pool.push_back(b.row(i));
    std::vector<double> dists;
    dists.reserve(pool.size() * (pool.size() - 1) / 2);
    for (std::size_t i = 0; i < pool.size(); ++i)
        for (std::size_t j = i + 1; j < pool.size(); ++j) dists.push_back(std::sqrt(sq_dist(pool[i], pool[j])));
    if (dists.empty()) throw InvalidInput("mmd needs at least two points in total");
    std::sort(dists.begin(), dists.end());
    const double bandwidth = percentile(dists, 0.5);
    if (!(bandwidth > 0.0)) throw InvalidInput("mmd: median pairwise distance is zero");
    const double gamma = 1.0 / (2.0 * bandwidth * bandwidth);
    auto mean_kernel = [&](const std::vector<std::size_t>& ix, const EmbeddingSet& x, const std::vector<std::size_t>& iy,
                           const EmbeddingSet& y) {
        std::vector<double> k(ix.size() * iy.size());
        for (std::size_t i = 0; i < ix.size(); ++i)
            for (std::size_t j = 0; j < iy.size(); ++j)
                k[i * iy.size() + j] = std::exp(-gamma * sq_dist(x.row(ix[i]), y.row(iy[j])));
        return pairwise_sum(k) / static_cast<double>(k.size());
    };
    const double m2 = mean_kernel(ia, a, ia, a) + mean_kernel(ib, b, ib, b) - 2.0 * mean_kernel(ia, a, ib, b);
    return std::sqrt(std::max(0.0, m2));
}

double kld(const EmbeddingSet& a, const EmbeddingSet& b) {
    return per_dimension(a, b, [](const std::vector<double>& p, const std::vector<double>& q) { return kl(p, q); });
}

double jsd(const EmbeddingSet& a, const EmbeddingSet& b) {
    return per_dimension(a, b, [](const std::vector<double>& p, const std::vector<double>& q) {
        std::vector<double> m(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
        return 0.5 * kl(p, m) + 0.5 * kl(q, m);
    });
}

std::vector<DiscrepancyRow> discrepancy_report(const EmbeddingSet& test, std::span<const NamedEmbedding> variants,
                                               const MmdOptions& options) {
    std::vector<DiscrepancyRow> rows;
    for (const auto& v : variants) {
        if (v.set.encoder_checksum != test.encoder_checksum)
            throw InvalidInput("variant " + v.name + " was embedded by a different encoder (checksum " +
                               v.set.encoder_checksum + " vs " + test.encoder_checksum + ")");
        DiscrepancyRow r;
        r.variant = v.name;
        r.center_pos = centroid_distance(test, v.set, CentroidClass::positive);
        r.center_neg = centroid_distance(test, v.set, CentroidClass::negative);
        r.mmd = mmd(test, v.set, options);
        r.jsd = jsd(test, v.set);
        r.kld = kld(test, v.set);
        rows.push_back(std::move(r));
    }
    return rows;
}

void write_discrepancy_csv(const std::filesystem::path& path, std::span<const DiscrepancyRow> rows,
                           const std::string& encoder_checksum, const MmdOptions& options) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << "variant,center_pos,center_neg,mmd,jsd,kld,bins,smoothing,mmd_bandwidth,mmd_max_points,encoder_checksum\n";
    for (const auto& r : rows)
        out << r.variant << ',' << num(r.center_pos) << ',' << num(r.center_neg) << ',' << num(r.mmd) << ','
            << num(r.jsd) << ',' << num(r.kld) << ',' << kDivergenceBins << ',' << num(kDivergenceSmoothing)
            << ",median," << options.max_points << ',' << encoder_checksum << '\n';
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricRow> rows, bool with_model) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << (with_model ? "model," : "") << "metric,head,point,ci_lo,ci_hi,n,seed\n";
    for (const auto& r : rows) {
        if (with_model) out << r.model << ',';
        out << r.metric << ',' << head_tag(r.threshold) << ',' << num(r.ci.point) << ',' << num(r.ci.lo) << ','
            << num(r.ci.hi) << ',' << r.n << ',' << r.seed << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace advecg
