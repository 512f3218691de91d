#include "advecg/attack.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "advecg/errors.hpp"
#include "advecg/ops.hpp"
#include "advecg/reduce.hpp"

namespace advecg {

namespace {

double sign_of(double g) { return g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0); }

std::string threshold_tag(double t) {
    char buf[32];
    if (t == std::floor(t))
        std::snprintf(buf, sizeof buf, "%.0f", t);
    else
        std::snprintf(buf, sizeof buf, "%g", t);
    return buf;
}

}  // namespace

std::string to_string(AttackSpace space) { return space == AttackSpace::signal ? "signal" : "latent"; }

std::string to_string(RegularizerSign sign) {
    return sign == RegularizerSign::reward_similarity ? "reward-similarity" : "literal-eq2";
}

AttackSpace parse_attack_space(const std::string& text) {
    if (text == "signal") return AttackSpace::signal;
    if (text == "latent") return AttackSpace::latent;
    throw InvalidInput("unknown attack space '" + text + "' (expected signal or latent)");
}

RegularizerSign parse_regularizer_sign(const std::string& text) {
    if (text == "reward-similarity") return RegularizerSign::reward_similarity;
    if (text == "literal-eq2" || text == "literal") return RegularizerSign::literal;
    throw InvalidInput("unknown regularizer sign '" + text + "' (expected reward-similarity or literal-eq2)");
}

void AttackConfig::validate() const {
    if (!(step_size > 0.0) || !std::isfinite(step_size)) throw InvalidInput("attack step size must be positive");
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw InvalidInput("attack budget epsilon must be positive");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidInput("attack lambda must be non-negative");
    if (space == AttackSpace::signal && bank.size() == 0) throw InvalidInput("signal-space attack needs a kernel bank");
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("cosine_similarity: length mismatch");
    std::vector<double> ab(a.size()), aa(a.size()), bb(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab[i] = a[i] * b[i];
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
    }
    const double na = std::sqrt(pairwise_sum(aa));
    const double nb = std::sqrt(pairwise_sum(bb));
    if (na == 0.0 || nb == 0.0) throw InvalidInput("cosine_similarity: zero-norm input");
    return std::clamp(pairwise_sum(ab) / (na * nb), -1.0, 1.0);
}

Var smooth_perturbation(const Var& delta, const GaussianKernelBank& bank) {
    if (bank.size() == 0) throw InvalidInput("smooth_perturbation: empty kernel bank");
    Var acc = depthwise_conv1d_same(delta, bank.kernels[0]);
    for (std::size_t m = 1; m < bank.size(); ++m) acc = add(acc, depthwise_conv1d_same(delta, bank.kernels[m]));
    return scale(acc, 1.0 / static_cast<double>(bank.size()));
}

Tensor smooth_perturbation(const Tensor& delta, const GaussianKernelBank& bank) {
    Tape tape;
    return smooth_perturbation(tape.constant(delta), bank).value();
}

Shape perturbation_shape(const AttackTarget& target, std::size_t n, AttackSpace space) {
    if (space == AttackSpace::signal) return {n, target.model.config().in_channels, target.model.config().length};
    if (!target.autoencoder) throw InvalidInput("latent-space attack requires an autoencoder");
    return {n, target.autoencoder->config().latent_dim};
}

Var perturbed_input(const AttackTarget& target, const Tensor& x, const Tensor& z, const Var& delta,
                    const AttackConfig& config) {
    Tape& tape = *delta.tape();
    if (config.space == AttackSpace::signal) {
        if (delta.shape() != x.shape())
            throw ShapeError("signal-space delta " + shape_str(delta.shape()) + " does not match x " +
                             shape_str(x.shape()));
        return add(tape.constant(x), smooth_perturbation(delta, config.bank));
    }
    if (!target.autoencoder) throw InvalidInput("latent-space attack requires an autoencoder");
    if (delta.shape() != z.shape())
        throw ShapeError("latent delta " + shape_str(delta.shape()) + " does not match z " + shape_str(z.shape()));
    const auto bound = target.autoencoder->params().bind(tape, false);
    return target.autoencoder->decode(add(tape.constant(z), delta), bound);
}

namespace {

Var loss_rows_with_latent(Tape& tape, const AttackTarget& target, const Tensor& x, const Tensor& z, const Tensor& y,
                          const Var& delta, const AttackConfig& config) {
    const Var xp = perturbed_input(target, x, z, delta, config);
    const auto bound = target.model.params().bind(tape, false);
    const Var probs = target.model.forward_eval(xp, bound);
    const Var ce = binary_cross_entropy_rows(probs, y);
    if (config.lambda == 0.0) return ce;
    const double coef = config.sign == RegularizerSign::reward_similarity ? config.lambda : -config.lambda;
    return add(ce, scale(cosine_similarity_rows(xp, tape.constant(x)), coef));
}

Tensor latent_of(const AttackTarget& target, const Tensor& x, const AttackConfig& config) {
    if (config.space == AttackSpace::signal) return {};
    if (!target.autoencoder) throw InvalidInput("latent-space attack requires an autoencoder");
    return target.autoencoder->encode(x);
}

void check_batch(const AttackTarget& target, const Tensor& x, const Tensor& y) {
    target.model.check_input(x.shape());
    if (y.rank() != 2 || y.shape()[0] != x.shape()[0] || y.shape()[1] != target.model.config().n_heads())
        throw ShapeError("labels " + shape_str(y.shape()) + " do not match the batch and heads");
}

Tensor pgd_with_latent(const AttackTarget& target, const Tensor& x, const Tensor& z, const Tensor& y,
                       const AttackConfig& config, const StepObserver& observer) {
    Tensor delta(perturbation_shape(target, x.shape()[0], config.space), 0.0);
    for (std::size_t t = 1; t <= config.steps; ++t) {
        Tape tape;
        const Var d = tape.leaf(delta, true);
        const Var loss = sum(loss_rows_with_latent(tape, target, x, z, y, d, config));
        auto grads = tape.backward(loss);
        const Tensor g = grads.has(d) ? grads.take(d) : Tensor(delta.shape(), 0.0);
        if (!g.all_finite()) throw NumericalError("pgd: non-finite gradient at step " + std::to_string(t));
        for (std::size_t i = 0; i < delta.size(); ++i)
            delta[i] = std::clamp(delta[i] + config.step_size * sign_of(g[i]), -config.epsilon, config.epsilon);
        if (observer) observer(t, delta);
    }
    return delta;
}

Tensor realize(const AttackTarget& target, const Tensor& x, const Tensor& z, const Tensor& delta,
               const AttackConfig& config) {
    Tape tape;
    return perturbed_input(target, x, z, tape.constant(delta), config).value();
}

}  // namespace

Var adversarial_loss_rows(Tape& tape, const AttackTarget& target, const Tensor& x, const Tensor& y, const Var& delta,
                          const AttackConfig& config) {
    check_batch(target, x, y);
    return loss_rows_with_latent(tape, target, x, latent_of(target, x, config), y, delta, config);
}

Tensor adversarial_loss(const AttackTarget& target, const Tensor& x, const Tensor& y, const Tensor& delta,
                        const AttackConfig& config) {
    Tape tape;
    return adversarial_loss_rows(tape, target, x, y, tape.constant(delta), config).value();
}

Tensor pgd(const AttackTarget& target, const Tensor& x, const Tensor& y, const AttackConfig& config,
           const StepObserver& observer) {
    config.validate();
    check_batch(target, x, y);
    return pgd_with_latent(target, x, latent_of(target, x, config), y, config, observer);
}

AdversarialBatch make_adversarial(const AttackTarget& target, const Tensor& x, const Tensor& y,
                                  const AttackConfig& config) {
    config.validate();
    check_batch(target, x, y);
    const Tensor z = latent_of(target, x, config);
    AdversarialBatch out;
    out.delta = pgd_with_latent(target, x, z, y, config, {});
    if (config.space == AttackSpace::signal && config.steps == 0)
        out.x_adv = x;
    else
        out.x_adv = realize(target, x, z, out.delta, config);
    return out;
}

AttackOutcome attack_records(const AttackTarget& target, std::span<const EcgRecord> records,
                             std::span<const std::size_t> indices, const AttackConfig& config, std::size_t chunk) {
    config.validate();
    if (chunk == 0) throw InvalidInput("attack chunk size must be positive");
    const auto& cfg = target.model.config();
    const std::size_t heads = cfg.n_heads();
    AttackOutcome out;
    out.x_adv = Tensor(Shape{indices.size(), cfg.in_channels, cfg.length});
    const std::size_t row = cfg.in_channels * cfg.length;
    for (std::size_t start = 0; start < indices.size(); start += chunk) {
        const auto started = std::chrono::steady_clock::now();
        const auto part = indices.subspan(start, std::min(chunk, indices.size() - start));
        const Tensor x = to_batch(records, part);
        const Tensor y = label_matrix(records, part, cfg.thresholds);
        check_batch(target, x, y);
        const Tensor z = latent_of(target, x, config);
        const Tensor zero(perturbation_shape(target, part.size(), config.space), 0.0);
        const Tensor before = [&] {
            Tape tape;
            return loss_rows_with_latent(tape, target, x, z, y, tape.constant(zero), config).value();
        }();
        const Tensor delta = pgd_with_latent(target, x, z, y, config, {});
        const Tensor after = [&] {
            Tape tape;
            return loss_rows_with_latent(tape, target, x, z, y, tape.constant(delta), config).value();
        }();
        const Tensor x_adv =
            config.space == AttackSpace::signal && config.steps == 0 ? x : realize(target, x, z, delta, config);
        const Tensor p_clean = target.model.predict(x);
        const Tensor p_adv = target.model.predict(x_adv);
        const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        for (std::size_t i = 0; i < part.size(); ++i) {
            AttackRecord r;
            r.sample_id = part[i];
            r.space = config.space;
            r.loss_before = before[i];
            r.loss_after = after[i];
            const std::span<const double> xa(x_adv.data().data() + i * row, row);
            const std::span<const double> xc(x.data().data() + i * row, row);
            r.cosine = cosine_similarity(xa, xc);
            for (std::size_t h = 0; h < heads; ++h) {
                const double pc = p_clean[i * heads + h];
                const double pa = p_adv[i * heads + h];
                r.prob_clean.push_back(pc);
                r.prob_adv.push_back(pa);
                r.flipped.push_back((pc >= 0.5) != (pa >= 0.5));
            }
            r.wall_time_s = elapsed / static_cast<double>(part.size());
            out.records.push_back(std::move(r));
            std::copy(xa.begin(), xa.end(), out.x_adv.data().begin() + static_cast<std::ptrdiff_t>((start + i) * row));
        }
    }
    return out;
}

double flip_rate(std::span<const AttackRecord> rows, std::size_t head, std::span<const bool> mask) {
    if (!mask.empty() && mask.size() != rows.size()) throw ShapeError("flip_rate: mask length mismatch");
    std::size_t n = 0, flipped = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (!mask.empty() && !mask[i]) continue;
        if (head >= rows[i].flipped.size()) throw InvalidInput("flip_rate: head out of range");
        ++n;
        flipped += rows[i].flipped[head] ? 1 : 0;
    }
    return n == 0 ? 0.0 : static_cast<double>(flipped) / static_cast<double>(n);
}

void write_attack_csv(const std::filesystem::path& path, std::span<const AttackRecord> rows,
                      std::span<const double> thresholds) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << "sample_id,space,loss_before,loss_after,cosine_similarity";
    for (double t : thresholds) out << ",flipped_le" << threshold_tag(t);
    for (double t : thresholds) out << ",prob_clean_le" << threshold_tag(t);
    for (double t : thresholds) out << ",prob_adv_le" << threshold_tag(t);
    out << ",wall_time_s\n";
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.9g", v);
        return std::string(buf);
    };
    for (const auto& r : rows) {
        if (r.flipped.size() != thresholds.size()) throw ShapeError("attack row heads do not match thresholds");
        out << r.sample_id << ',' << to_string(r.space) << ',' << num(r.loss_before) << ',' << num(r.loss_after) << ','
            << num(r.cosine);
        for (bool f : r.flipped) out << ',' << (f ? 1 : 0);
        for (double p : r.prob_clean) out << ',' << num(p);
        for (double p : r.prob_adv) out << ',' << num(p);
        out << ',' << num(r.wall_time_s) << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace advecg
