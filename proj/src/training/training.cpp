#include "advecg/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "advecg/checkpoint.hpp"
#include "advecg/errors.hpp"
#include "advecg/metrics.hpp"
#include "advecg/ops.hpp"
#include "advecg/reduce.hpp"
#include "advecg/rng.hpp"

namespace advecg {

namespace {

double entropy_term(double p) { return p > 0.0 ? -p * std::log(p) : 0.0; }

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

std::vector<std::uint64_t> keys_of(std::span<const std::size_t> idx) { return {idx.begin(), idx.end()}; }

Tensor concat(const Tensor& a, const Tensor& b) {
    Tape tape;
    return concat_rows(tape.constant(a), tape.constant(b)).value();
}

}  // namespace

std::string to_string(TrainMode mode) {
    switch (mode) {
        case TrainMode::plain: return "plain";
        case TrainMode::augment: return "augment";
        case TrainMode::adversarial: return "adversarial";
    }
    return "plain";
}

std::string to_string(LossForm form) { return form == LossForm::combined ? "combined" : "eq11-only"; }

TrainMode parse_train_mode(const std::string& text) {
    if (text == "plain") return TrainMode::plain;
    if (text == "augment") return TrainMode::augment;
    if (text == "adversarial") return TrainMode::adversarial;
    throw InvalidInput("unknown training mode '" + text + "' (expected plain, augment or adversarial)");
}

LossForm parse_loss_form(const std::string& text) {
    if (text == "combined") return LossForm::combined;
    if (text == "eq11-only") return LossForm::adversarial_only;
    throw InvalidInput("unknown loss form '" + text + "' (expected combined or eq11-only)");
}

void TrainConfig::validate() const {
    model.validate();
    if (batch_size == 0) throw InvalidInput("batch size must be positive");
    if (max_epochs == 0) throw InvalidInput("max_epochs must be positive");
    if (!(top_k_fraction >= 0.0 && top_k_fraction <= 1.0)) throw InvalidInput("top_k_fraction must lie in [0, 1]");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw InvalidInput("val_fraction must lie in (0, 1)");
    if (!(adam.lr > 0.0)) throw InvalidInput("learning rate must be positive");
    if (!(noise_amplitude >= 0.0)) throw InvalidInput("noise amplitude must be non-negative");
    if (mode == TrainMode::adversarial) attack.validate();
}

double uncertainty(std::span<const double> probs) {
    if (probs.empty()) throw InvalidInput("uncertainty needs at least one head");
    std::vector<double> h(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double p = std::clamp(probs[i], 0.0, 1.0);
        h[i] = entropy_term(p) + entropy_term(1.0 - p);
    }
    return pairwise_sum(h) / static_cast<double>(h.size());
}

std::vector<double> uncertainty(const Classifier& model, const Tensor& x, std::size_t chunk) {
    const Tensor p = model.predict(x, chunk);
    const std::size_t heads = p.shape()[1];
    std::vector<double> u(p.shape()[0]);
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = uncertainty(std::span<const double>(p.data().data() + i * heads, heads));
    return u;
}

std::vector<double> uncertainty(const Classifier& model, std::span<const EcgRecord> records,
                                std::span<const std::size_t> indices, std::size_t chunk) {
    std::vector<double> u;
    u.reserve(indices.size());
    for (std::size_t start = 0; start < indices.size(); start += chunk) {
        const auto part = indices.subspan(start, std::min(chunk, indices.size() - start));
        const auto v = uncertainty(model, to_batch(records, part), chunk);
        u.insert(u.end(), v.begin(), v.end());
    }
    return u;
}

std::vector<std::size_t> select_uncertain(std::span<const double> u, double k_fraction) {
    if (u.empty()) throw InvalidInput("select_uncertain needs a nonempty dataset");
    if (!(k_fraction >= 0.0 && k_fraction <= 1.0)) throw InvalidInput("k_fraction must lie in [0, 1]");
    const double n = static_cast<double>(u.size());
    const auto m = std::min(u.size(), static_cast<std::size_t>(std::max(0.0, std::ceil(k_fraction * n - 1e-9))));
    std::vector<std::size_t> order(u.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return u[a] > u[b]; });
    order.resize(m);
    std::sort(order.begin(), order.end());
    return order;
}

Evaluation evaluate(const Classifier& model, std::span<const EcgRecord> records, std::span<const std::size_t> indices) {
    if (indices.empty()) throw InvalidInput("evaluate needs at least one record");
    const auto& thresholds = model.config().thresholds;
    Evaluation e;
    const std::size_t chunk = 32;
    e.probs = Tensor(Shape{indices.size(), thresholds.size()});
    std::vector<double> losses;
    for (std::size_t start = 0; start < indices.size(); start += chunk) {
        const auto part = indices.subspan(start, std::min(chunk, indices.size() - start));
        const Tensor p = model.predict(to_batch(records, part), chunk);
        const Tensor y = label_matrix(records, part, thresholds);
        Tape tape;
        const Tensor ce = binary_cross_entropy_rows(tape.constant(p), y).value();
        losses.insert(losses.end(), ce.data().begin(), ce.data().end());
        std::copy(p.data().begin(), p.data().end(),
                  e.probs.data().begin() + static_cast<std::ptrdiff_t>(start * thresholds.size()));
    }
    e.loss = pairwise_sum(losses) / static_cast<double>(losses.size());
    for (std::size_t h = 0; h < thresholds.size(); ++h) {
        std::vector<double> s(indices.size());
        std::vector<std::uint8_t> l(indices.size());
        std::size_t pos = 0;
        for (std::size_t i = 0; i < indices.size(); ++i) {
            s[i] = e.probs[i * thresholds.size() + h];
            l[i] = records[indices[i]].lvef_percent <= thresholds[h] ? 1 : 0;
            pos += l[i];
        }
        e.auroc.push_back(pos == 0 || pos == indices.size() ? std::numeric_limits<double>::quiet_NaN() : auroc(s, l));
    }
    return e;
}

TrainResult train(std::span<const EcgRecord> records, std::span<const std::size_t> indices, const TrainConfig& config,
                  const Autoencoder* autoencoder, const EpochObserver& observer) {
    config.validate();
    if (indices.empty()) throw InvalidInput("train needs a nonempty cohort");
    const bool adversarial = config.mode == TrainMode::adversarial;
    if (adversarial && config.attack.space == AttackSpace::latent && !autoencoder)
        throw InvalidInput("latent-space adversarial training requires an autoencoder");

    const Split split = split_by_subject(records, indices, config.val_fraction, mix_seed(config.seed, 0x5a1ull));
    if (split.selected.empty() || split.rest.empty())
        throw InvalidInput("cohort too small for a validation split of " + std::to_string(config.val_fraction));
    const std::vector<std::size_t>& train_idx = split.rest;
    const std::vector<std::size_t>& val_idx = split.selected;

    Classifier model(config.model, mix_seed(config.seed, 0xc1a55ull));
    AdamState adam = make_adam_state(model.params());
    const auto& thresholds = config.model.thresholds;
    const double n_train = static_cast<double>(train_idx.size());

    TrainResult result{model, {}, 0, train_idx, val_idx, TrainState{model, adam, 0, 0.0, config.seed}};
    ParamSet best_params = model.params();
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    std::vector<std::size_t> prev_du;

    std::vector<std::size_t> order = train_idx;
    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        EpochLog log;
        log.epoch = epoch;

        std::vector<char> in_du(records.size(), 0);
        std::vector<std::size_t> du;
        if (adversarial && config.top_k_fraction > 0.0) {
            const auto u = uncertainty(model, records, train_idx);
            for (std::size_t pos : select_uncertain(u, config.top_k_fraction)) du.push_back(train_idx[pos]);
            for (std::size_t r : du) in_du[r] = 1;
            std::vector<std::size_t> common;
            std::set_intersection(du.begin(), du.end(), prev_du.begin(), prev_du.end(), std::back_inserter(common));
            log.du_overlap_prev = common.size();
        }
        log.du_size = du.size();

        SplitMix64 rng(mix_seed(config.seed, {0x5b0full, epoch}));
        shuffle(order, rng);
        std::vector<double> batch_losses;
        for (std::size_t start = 0, b = 0; start < order.size(); start += config.batch_size, ++b) {
            const std::span<const std::size_t> batch(order.data() + start,
                                                     std::min(config.batch_size, order.size() - start));
            Tensor x = to_batch(records, batch);
            Tensor y = label_matrix(records, batch, thresholds);
            std::vector<std::uint64_t> keys = keys_of(batch);
            double denom = static_cast<double>(batch.size());

            if (config.mode == TrainMode::augment) {
                std::vector<EcgRecord> noisy;
                for (std::size_t r : batch)
                    noisy.push_back(band_noise(records[r], config.noise_bands, config.noise_amplitude,
                                               mix_seed(config.seed, {0xa06ull, epoch, r})));
                std::vector<std::size_t> all(noisy.size());
                std::iota(all.begin(), all.end(), 0);
                x = concat(x, to_batch(noisy, all));
                y = concat(y, y);
                keys.insert(keys.end(), batch.begin(), batch.end());
                denom *= 2.0;
            } else if (adversarial && !du.empty()) {
                std::vector<std::size_t> pos, ids;
                for (std::size_t i = 0; i < batch.size(); ++i)
                    if (in_du[batch[i]]) {
                        pos.push_back(i);
                        ids.push_back(batch[i]);
                    }
                if (config.loss_form == LossForm::adversarial_only && pos.empty()) continue;
                if (!pos.empty()) {
                    const Tensor ya = gather_rows(y, pos);
                    const Tensor xa =
                        make_adversarial({model, autoencoder}, gather_rows(x, pos), ya, config.attack).x_adv;
                    if (config.loss_form == LossForm::adversarial_only) {
                        x = xa;
                        y = ya;
                        keys = keys_of(ids);
                        denom = static_cast<double>(ids.size());
                    } else {
                        x = concat(x, xa);
                        y = concat(y, ya);
                        keys.insert(keys.end(), ids.begin(), ids.end());
                    }
                }
            } else if (adversarial && config.loss_form == LossForm::adversarial_only) {
                continue;
            }

            Tape tape;
            const auto bound = model.params().bind(tape, true);
            const ForwardContext ctx{Mode::train, mix_seed(config.seed, {0xd0ull, epoch, b}), keys};
            const Var probs = model.forward(tape.constant(std::move(x)), bound, ctx);
            const Var loss = scale(sum(binary_cross_entropy_rows(probs, y)), 1.0 / denom);
            const double value = loss.value().item();
            if (!std::isfinite(value))
                throw NumericalError("training loss diverged at epoch " + std::to_string(epoch));
            auto grads = tape.backward(loss);
            adam_step(model.params(), adam, collect_gradients(model.params(), bound, grads), config.adam);
            batch_losses.push_back(value * static_cast<double>(batch.size()));
        }
        log.train_loss = pairwise_sum(batch_losses) / n_train;

        const Evaluation val = evaluate(model, records, val_idx);
        log.val_loss = val.loss;
        log.val_auroc = val.auroc;
        log.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        result.log.push_back(log);
        if (observer) observer(log);
        prev_du = std::move(du);

        if (val.loss < best_val) {
            best_val = val.loss;
            best_params = model.params();
            result.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= config.patience) {
            break;
        }
    }
    result.final_state = TrainState{model, adam, result.log.size(), best_val, config.seed};
    result.model.params() = best_params;
    return result;
}

void write_training_log(const std::filesystem::path& path, std::span<const EpochLog> log,
                        std::span<const double> thresholds) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << "epoch,train_loss,val_loss";
    for (double t : thresholds) out << ",val_auroc_" << head_tag(t);
    out << ",du_size,du_overlap_prev,wall_time_s\n";
    for (const auto& e : log) {
        if (e.val_auroc.size() != thresholds.size()) throw ShapeError("epoch log heads do not match thresholds");
        out << e.epoch << ',' << num(e.train_loss) << ',' << num(e.val_loss);
        for (double a : e.val_auroc) out << ',' << num(a);
        out << ',' << e.du_size << ',' << e.du_overlap_prev << ',' << num(e.wall_time_s) << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

void save_train_state(const std::filesystem::path& path, const TrainState& state) {
    Checkpoint c = to_checkpoint(state.model);
    c.set_u32("train_state", 1);
    c.set_u32("epoch", static_cast<std::uint32_t>(state.epoch));
    c.set_f32("best_val", static_cast<float>(state.best_val));
    c.set_u32("rng_state_lo", static_cast<std::uint32_t>(state.rng_state));
    c.set_u32("rng_state_hi", static_cast<std::uint32_t>(state.rng_state >> 32));
    c.set_u32("adam_step", static_cast<std::uint32_t>(state.adam.step));
    const auto& params = state.model.params();
    if (state.adam.m.size() != params.size() || state.adam.v.size() != params.size())
        throw ShapeError("train state: optimizer moments do not align with the parameters");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params.entry(i).trainable) continue;
        c.add_section("adam.m." + params.entry(i).name, to_floats(state.adam.m[i]));
        c.add_section("adam.v." + params.entry(i).name, to_floats(state.adam.v[i]));
    }
    write_checkpoint(path, c);
}

TrainState load_train_state(const std::filesystem::path& path) {
    const Checkpoint c = read_checkpoint(path);
    if (!c.has_field("train_state")) throw FormatError("checkpoint holds no training state");
    TrainState s{classifier_from(c), {}, 0, 0.0, 0};
    s.adam = make_adam_state(s.model.params());
    const auto& params = s.model.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params.entry(i).trainable) continue;
        const auto& name = params.entry(i).name;
        fill_from_floats(s.adam.m[i], c.section("adam.m." + name).data, "adam.m." + name);
        fill_from_floats(s.adam.v[i], c.section("adam.v." + name).data, "adam.v." + name);
    }
    s.adam.step = c.u32("adam_step");
    s.epoch = c.u32("epoch");
    s.best_val = c.f32("best_val");
    s.rng_state = (static_cast<std::uint64_t>(c.u32("rng_state_hi")) << 32) | c.u32("rng_state_lo");
    return s;
}

}  // namespace advecg
