#include "advecg/experiments.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <set>

#include "advecg/checkpoint.hpp"
#include "advecg/errors.hpp"
#include "advecg/rng.hpp"

#ifndef ADVECG_VERSION
#define ADVECG_VERSION "unknown"
#endif

namespace advecg {

namespace {

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

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::uint8_t> head_labels(const Tensor& labels, std::size_t head) {
    const std::size_t n = labels.dim(0), h = labels.dim(1);
    std::vector<std::uint8_t> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = labels[i * h + head] > 0.5 ? 1 : 0;
    return out;
}

std::vector<double> head_scores(const Tensor& probs, std::size_t head) {
    const std::size_t n = probs.dim(0), h = probs.dim(1);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = probs[i * h + head];
    return out;
}

std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = i;
    return v;
}

std::size_t head_of(std::span<const double> thresholds, double t) {
    for (std::size_t h = 0; h < thresholds.size(); ++h)
        if (thresholds[h] == t) return h;
    throw InvalidInput("no output head for threshold " + num(t));
}

void say(const ExperimentContext& ctx, const std::string& msg) {
    if (ctx.progress) ctx.progress(msg);
}

struct TrainedModel {
    std::string name;
    TrainResult result;
};

TrainedModel train_named(const std::string& name, std::span<const EcgRecord> records,
                         std::span<const std::size_t> indices, TrainConfig cfg, const Autoencoder* ae,
                         const std::filesystem::path& dir, const ExperimentContext& ctx) {
    say(ctx, "train " + name + " on " + std::to_string(indices.size()) + " records");
    auto result = train(records, indices, cfg, ae, [&](const EpochLog& e) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "  %s epoch %zu train %.4f val %.4f du %zu (%.1fs)", name.c_str(), e.epoch,
                      e.train_loss, e.val_loss, e.du_size, e.wall_time_s);
        say(ctx, buf);
    });
    const auto log_path = dir / (name + "_log.csv");
    write_training_log(log_path, result.log, cfg.model.thresholds);
    write_manifest(log_path, ctx.command, ctx.config, cfg.seed, ctx.inputs);
    const auto ckpt = dir / (name + ".advm");
    save_classifier(ckpt, result.model);
    write_manifest(ckpt, ctx.command, ctx.config, cfg.seed, ctx.inputs);
    return {name, std::move(result)};
}

}  // namespace

std::string tool_version() { return ADVECG_VERSION; }

std::string git_blob_sha1(std::span<const unsigned char> content) {
    const std::string header = "blob " + std::to_string(content.size()) + '\0';
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
    EVP_DigestUpdate(ctx, header.data(), header.size());
    EVP_DigestUpdate(ctx, content.data(), content.size());
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 15];
    }
    return out;
}

std::string git_blob_sha1(const std::filesystem::path& path) {
    const auto bytes = read_bytes(path);
    return git_blob_sha1(std::span<const unsigned char>(bytes));
}

void hash_inputs(std::vector<ManifestInput>& inputs) {
    for (auto& in : inputs)
        if (in.blob_id.empty()) in.blob_id = git_blob_sha1(in.path);
}

void write_manifest(const std::filesystem::path& artifact, const std::string& command, const RunConfig& config,
                    std::uint64_t seed, std::span<const ManifestInput> inputs) {
    std::filesystem::path path = artifact;
    path += ".manifest";
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << "tool=advecg " << tool_version() << "\n";
    out << "command=" << command << "\n";
    out << "seed=" << seed << "\n";
    out << "artifact=" << artifact.filename().string() << " " << git_blob_sha1(artifact) << "\n";
    for (const auto& in : inputs)
        out << "input." << in.role << "=" << in.path.string() << " "
            << (in.blob_id.empty() ? git_blob_sha1(in.path) : in.blob_id) << "\n";
    out << "[config]\n" << config.snapshot();
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<MetricRow> metric_rows(const std::string& model, const Tensor& probs, const Tensor& labels,
                                   std::span<const double> thresholds, std::size_t resamples, std::uint64_t seed) {
    if (probs.shape() != labels.shape() || probs.dim(1) != thresholds.size())
        throw ShapeError("metric_rows: probabilities, labels and thresholds disagree");
    std::vector<MetricRow> rows;
    for (const char* name : {"auroc", "auprc"}) {
        const Metric metric = std::string(name) == "auroc" ? Metric(auroc) : Metric(auprc);
        for (std::size_t h = 0; h < thresholds.size(); ++h) {
            const auto scores = head_scores(probs, h);
            const auto y = head_labels(labels, h);
            MetricRow r;
            r.model = model;
            r.metric = name;
            r.threshold = thresholds[h];
            r.n = scores.size();
            r.seed = seed;
            const auto pos = std::count(y.begin(), y.end(), std::uint8_t{1});
            if (pos == 0 || pos == static_cast<std::ptrdiff_t>(y.size())) {
                const double nan = std::numeric_limits<double>::quiet_NaN();
                r.ci = {nan, nan, nan, 0};
            } else {
                r.ci = bootstrap_ci(scores, y, metric, resamples, mix_seed(seed, {0xc1, h}));
            }
            rows.push_back(std::move(r));
        }
    }
    return rows;
}

Robustness robustness(std::span<const AttackRecord> rows, std::span<const EcgRecord> records, double threshold,
                      std::size_t head) {
    Robustness r;
    r.n = rows.size();
    if (rows.empty()) return r;
    std::size_t clean = 0, adv = 0;
    for (const auto& row : rows) {
        const bool y = records[row.sample_id].lvef_percent <= threshold;
        clean += (row.prob_clean[head] >= 0.5) == y;
        adv += (row.prob_adv[head] >= 0.5) == y;
    }
    r.clean_accuracy = static_cast<double>(clean) / static_cast<double>(rows.size());
    r.adversarial_accuracy = static_cast<double>(adv) / static_cast<double>(rows.size());
    return r;
}

std::vector<std::size_t> balanced_indices(std::span<const EcgRecord> records, double threshold, std::size_t limit,
                                          std::uint64_t seed) {
    if (limit == 0 || limit >= records.size()) return all_indices(records.size());
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < records.size(); ++i) (records[i].lvef_percent <= threshold ? pos : neg).push_back(i);
    SplitMix64 rng(mix_seed(seed, 0xba1));
    shuffle(pos, rng);
    shuffle(neg, rng);
    std::size_t np = std::min(pos.size(), limit / 2);
    std::size_t nn = std::min(neg.size(), limit - np);
    np = std::min(pos.size(), limit - nn);
    std::vector<std::size_t> out(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(np));
    out.insert(out.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(nn));
    std::sort(out.begin(), out.end());
    return out;
}

Split scarcity_subset(std::span<const EcgRecord> records, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidInput("subset_fraction must lie in (0, 1]");
    if (fraction == 1.0) return {all_indices(records.size()), {}};
    return split_by_subject(records, fraction, mix_seed(seed, 0x5c4));
}

void write_subset_audit(const std::filesystem::path& path, std::span<const EcgRecord> records, const Split& split) {
    std::map<std::uint32_t, std::pair<std::size_t, std::size_t>> subjects;
    for (auto i : split.selected) ++subjects[records[i].subject_id].first;
    for (auto i : split.rest) ++subjects[records[i].subject_id].second;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << "subject_id,subset_records,complement_records\n";
    for (const auto& [id, c] : subjects) out << id << ',' << c.first << ',' << c.second << '\n';
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

bool subject_partition_holds(std::span<const EcgRecord> records, const Split& split) {
    std::set<std::uint32_t> in;
    for (auto i : split.selected) in.insert(records[i].subject_id);
    for (auto i : split.rest)
        if (in.count(records[i].subject_id)) return false;
    return true;
}

ScarcityReport run_scarcity(std::span<const EcgRecord> train_set, std::span<const EcgRecord> test_set,
                            const Autoencoder* autoencoder, const ExperimentContext& ctx) {
    const RunConfig& rc = ctx.config;
    const TrainConfig base = train_config(rc);
    const AttackConfig eval_attack = attack_config(rc);
    const double fraction = rc.real("subset_fraction");
    const auto seeds = rc.counts("seeds");
    const std::size_t resamples = rc.count("bootstrap_resamples");
    const std::size_t attack_limit = rc.count("attack_limit");
    const bool full_baseline = rc.flag("full_baseline");
    if (seeds.empty()) throw ConfigError("key 'seeds': at least one seed required");
    const bool needs_ae = base.attack.space == AttackSpace::latent || eval_attack.space == AttackSpace::latent;
    if (needs_ae && !autoencoder) throw InvalidInput("latent attacks require an autoencoder checkpoint");
    const auto& thresholds = base.model.thresholds;
    const std::size_t head40 = head_of(thresholds, 40.0);

    const auto test_idx = all_indices(test_set.size());
    const Tensor test_labels = label_matrix(test_set, thresholds);
    ScarcityReport report;
    report.models = {"plain_subset", "augment_subset", "adversarial_subset"};
    if (full_baseline) report.models.push_back("plain_full");

    for (auto seed : seeds) {
        const auto dir = ctx.out_dir / ("seed_" + std::to_string(seed));
        std::filesystem::create_directories(dir);
        const Split subset = scarcity_subset(train_set, fraction, seed);
        if (!subject_partition_holds(train_set, subset)) throw InvalidInput("subset straddles a subject");
        write_subset_audit(dir / "subset_audit.csv", train_set, subset);
        say(ctx, "seed " + std::to_string(seed) + ": subset of " + std::to_string(subset.selected.size()) + " records");

        std::vector<TrainedModel> models;
        for (auto mode : {TrainMode::plain, TrainMode::augment, TrainMode::adversarial}) {
            TrainConfig cfg = base;
            cfg.mode = mode;
            cfg.seed = seed;
            models.push_back(train_named(to_string(mode) + "_subset", train_set, subset.selected, cfg, autoencoder,
                                         dir, ctx));
        }
        if (full_baseline) {
            TrainConfig cfg = base;
            cfg.mode = TrainMode::plain;
            cfg.seed = seed;
            models.push_back(train_named("plain_full", train_set, all_indices(train_set.size()), cfg, nullptr, dir, ctx));
        }
        for (const auto& m : models) {
            const Tensor probs = m.result.model.predict(to_batch(test_set, test_idx));
            auto rows = metric_rows(m.name, probs, test_labels, thresholds, resamples, seed);
            report.metrics.insert(report.metrics.end(), rows.begin(), rows.end());
        }

        const auto attacked = balanced_indices(test_set, 40.0, attack_limit, seed);
        for (const auto& m : models) {
            if (m.name != "plain_subset" && m.name != "adversarial_subset") continue;
            say(ctx, "attack " + m.name + " on " + std::to_string(attacked.size()) + " test records");
            const auto outcome = attack_records({m.result.model, autoencoder}, test_set, attacked, eval_attack);
            const auto path = dir / ("attack_" + m.name + ".csv");
            write_attack_csv(path, outcome.records, thresholds);
            write_manifest(path, ctx.command, rc, seed, ctx.inputs);
            report.robustness.push_back({seed, m.name, robustness(outcome.records, test_set, 40.0, head40)});
        }
    }
    return report;
}

void write_robustness_csv(const std::filesystem::path& path, std::span<const RobustnessRow> rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << "seed,model,head,n,clean_accuracy,adversarial_accuracy,accuracy_drop\n";
    for (const auto& r : rows)
        out << r.seed << ',' << r.model << ",le40," << r.value.n << ',' << num(r.value.clean_accuracy) << ','
            << num(r.value.adversarial_accuracy) << ',' << num(r.value.drop()) << '\n';
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write_scarcity_summary(const std::filesystem::path& path, const ScarcityReport& report,
                            std::span<const double> thresholds) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << "model,metric,head,mean_point,min_point,max_point,mean_ci_lo,mean_ci_hi,seeds\n";
    for (const auto& model : report.models)
        for (const char* metric : {"auroc", "auprc"})
            for (double t : thresholds) {
                double sum = 0.0, lo = 0.0, hi = 0.0;
                double mn = std::numeric_limits<double>::infinity(), mx = -mn;
                std::size_t k = 0;
                for (const auto& r : report.metrics) {
                    if (r.model != model || r.metric != metric || r.threshold != t) continue;
                    sum += r.ci.point;
                    lo += r.ci.lo;
                    hi += r.ci.hi;
                    mn = std::min(mn, r.ci.point);
                    mx = std::max(mx, r.ci.point);
                    ++k;
                }
                if (k == 0) continue;
                const double kd = static_cast<double>(k);
                out << model << ',' << metric << ',' << head_tag(t) << ',' << num(sum / kd) << ',' << num(mn) << ','
                    << num(mx) << ',' << num(lo / kd) << ',' << num(hi / kd) << ',' << k << '\n';
            }
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<AblationVariant> ablation_variants(double top_k_fraction) {
    return {
        {"full", TrainMode::adversarial, top_k_fraction, AttackSpace::latent},
        {"wo_uncertainty", TrainMode::adversarial, 1.0, AttackSpace::latent},
        {"wo_on_manifold", TrainMode::adversarial, top_k_fraction, AttackSpace::signal},
        {"plain", TrainMode::plain, top_k_fraction, AttackSpace::latent},
    };
}

std::vector<AblationResult> run_ablation(std::span<const EcgRecord> train_set, std::span<const EcgRecord> test_set,
                                         const Autoencoder* autoencoder, const ExperimentContext& ctx) {
    const RunConfig& rc = ctx.config;
    const TrainConfig base = train_config(rc);
    const AttackConfig eval_attack = attack_config(rc);
    const auto seeds = rc.counts("seeds");
    if (seeds.empty()) throw ConfigError("key 'seeds': at least one seed required");
    const std::uint64_t seed = seeds.front();
    if (!autoencoder) throw InvalidInput("ablation requires an autoencoder checkpoint");
    const auto& thresholds = base.model.thresholds;
    const std::size_t resamples = rc.count("bootstrap_resamples");

    std::filesystem::create_directories(ctx.out_dir);
    const Split subset = scarcity_subset(train_set, rc.real("subset_fraction"), seed);
    write_subset_audit(ctx.out_dir / "subset_audit.csv", train_set, subset);
    const auto test_idx = all_indices(test_set.size());
    const Tensor test_labels = label_matrix(test_set, thresholds);
    const auto attacked = balanced_indices(test_set, 40.0, rc.count("attack_limit"), seed);

    std::vector<AblationResult> results;
    for (const auto& v : ablation_variants(base.top_k_fraction)) {
        TrainConfig cfg = base;
        cfg.mode = v.mode;
        cfg.top_k_fraction = v.top_k_fraction;
        cfg.attack.space = v.space;
        cfg.seed = seed;
        auto trained = train_named(v.name, train_set, subset.selected, cfg, autoencoder, ctx.out_dir, ctx);
        AblationResult r;
        r.variant = v;
        r.train_records = trained.result.train_indices.size();
        r.log = trained.result.log;
        const Tensor probs = trained.result.model.predict(to_batch(test_set, test_idx));
        r.metrics = metric_rows(v.name, probs, test_labels, thresholds, resamples, seed);
        AttackConfig atk = eval_attack;
        atk.space = v.space;
        say(ctx, "attack " + v.name + " in " + to_string(atk.space) + " space");
        r.attacks = attack_records({trained.result.model, autoencoder}, test_set, attacked, atk).records;
        const auto path = ctx.out_dir / ("attack_" + v.name + ".csv");
        write_attack_csv(path, r.attacks, thresholds);
        write_manifest(path, ctx.command, rc, seed, ctx.inputs);
        results.push_back(std::move(r));
    }
    return results;
}

void write_ablation_grid(const std::filesystem::path& path, std::span<const AblationResult> results,
                         std::span<const double> thresholds) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << "variant,mode,top_k_fraction,space";
    for (const char* metric : {"auroc", "auprc"})
        for (double t : thresholds) out << ',' << metric << '_' << head_tag(t);
    out << '\n';
    for (const auto& r : results) {
        out << r.variant.name << ',' << to_string(r.variant.mode) << ',' << num(r.variant.top_k_fraction) << ','
            << (r.variant.mode == TrainMode::plain ? "none" : to_string(r.variant.space));
        for (const char* metric : {"auroc", "auprc"})
            for (double t : thresholds) {
                auto it = std::find_if(r.metrics.begin(), r.metrics.end(), [&](const MetricRow& m) {
                    return m.metric == metric && m.threshold == t;
                });
                if (it == r.metrics.end()) throw InvalidInput("ablation result lacks " + std::string(metric));
                out << ',' << num(it->ci.point);
            }
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

EmbeddingSet embed(const Autoencoder& ae, const Tensor& x, std::span<const std::uint8_t> labels) {
    const Tensor z = ae.encode(x);
    EmbeddingSet e;
    e.n = z.dim(0);
    e.dim = z.dim(1);
    e.values = z.storage();
    e.labels.assign(labels.begin(), labels.end());
    e.encoder_checksum = ae.encoder_checksum();
    e.validate();
    return e;
}

EmbeddingSet embed(const Autoencoder& ae, std::span<const EcgRecord> records, std::span<const std::size_t> indices,
                   double label_threshold) {
    std::vector<std::uint8_t> y;
    for (auto i : indices) y.push_back(records[i].lvef_percent <= label_threshold ? 1 : 0);
    return embed(ae, to_batch(records, indices), y);
}

std::vector<DiscrepancyRow> run_discrepancy(std::span<const EcgRecord> train_set, std::span<const EcgRecord> test_set,
                                            const Classifier& model, const Autoencoder& ae,
                                            const AttackConfig& attack, const MmdOptions& mmd_options,
                                            std::size_t limit, std::uint64_t seed) {
    const auto train_idx = balanced_indices(train_set, 40.0, limit, mix_seed(seed, 0xd15));
    const auto test_idx = balanced_indices(test_set, 40.0, limit, mix_seed(seed, 0xd16));
    const EmbeddingSet test = embed(ae, test_set, test_idx);
    const EmbeddingSet org = embed(ae, train_set, train_idx);
    const auto outcome = attack_records({model, &ae}, train_set, train_idx, attack);
    const EmbeddingSet adv = embed(ae, outcome.x_adv, org.labels);
    EmbeddingSet combined = org;
    combined.n += adv.n;
    combined.values.insert(combined.values.end(), adv.values.begin(), adv.values.end());
    combined.labels.insert(combined.labels.end(), adv.labels.begin(), adv.labels.end());
    const std::vector<NamedEmbedding> variants{{"org", org}, {"adv", adv}, {"combined", combined}};
    return discrepancy_report(test, variants, mmd_options);
}

}  // namespace advecg
