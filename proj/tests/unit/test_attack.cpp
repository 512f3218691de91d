#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "advecg/attack.hpp"
#include "advecg/errors.hpp"
#include "advecg/ops.hpp"
#include "gradcheck.hpp"

using namespace advecg;

namespace {

ClassifierConfig toy_classifier(std::size_t length = 64) {
    ClassifierConfig c;
    c.length = length;
    c.stem_channels = 4;
    c.block_channels = {4, 4, 8, 8};
    c.kernel_size = 5;
    return c;
}

AutoencoderConfig toy_autoencoder(std::size_t length = 64) {
    AutoencoderConfig c;
    c.length = length;
    c.channels = {4, 4};
    c.kernel_size = 5;
    c.latent_dim = 8;
    return c;
}

void randomize(ParamSet& params, std::uint64_t seed, double lo = -0.5, double hi = 0.5) {
    SplitMix64 rng(seed);
    for (std::size_t i = 0; i < params.size(); ++i)
        if (params.entry(i).trainable)
            for (double& v : params.value(i).data()) v = rng.uniform(lo, hi);
}

Tensor random_labels(std::size_t n, std::size_t heads, SplitMix64& rng) {
    Tensor y(Shape{n, heads});
    for (double& v : y.data()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
    return y;
}

std::vector<double> brute_smooth(const Tensor& delta, const GaussianKernelBank& bank) {
    const std::size_t len = delta.shape().back();
    const std::size_t rows = delta.size() / len;
    std::vector<double> out(delta.size(), 0.0);
    for (std::size_t m = 0; m < bank.size(); ++m) {
        const auto& k = bank.kernels[m];
        const long half = static_cast<long>(k.size() / 2);
        for (std::size_t r = 0; r < rows; ++r)
            for (long t = 0; t < static_cast<long>(len); ++t) {
                double acc = 0.0;
                for (long j = -half; j <= half; ++j) {
                    const long src = t + j;
                    if (src < 0 || src >= static_cast<long>(len)) continue;
                    acc += k[static_cast<std::size_t>(j + half)] * delta[r * len + static_cast<std::size_t>(src)];
                }
                out[r * len + static_cast<std::size_t>(t)] += acc / static_cast<double>(bank.size());
            }
    }
    return out;
}

}  // namespace

TEST_CASE("cosine similarity examples") {
    const std::vector<double> x{0.3, -1.2, 2.0};
    CHECK(cosine_similarity(x, x) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 0.0);
    CHECK(cosine_similarity(std::vector<double>{1, 2}, std::vector<double>{2, 4}) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK_THROWS_AS(cosine_similarity(std::vector<double>{0, 0}, std::vector<double>{1, 2}), InvalidInput);
    CHECK_THROWS_AS(cosine_similarity(std::vector<double>{1, 2}, std::vector<double>{0, 0}), InvalidInput);
}

TEST_CASE("attack config defaults and validation") {
    const AttackConfig c;
    CHECK(c.steps == 20);
    CHECK(c.step_size == 0.001);
    CHECK(c.epsilon == 0.5);
    CHECK(c.lambda == 0.1);
    CHECK(c.sign == RegularizerSign::reward_similarity);
    CHECK(c.bank.size() == 5);
    AttackConfig bad = c;
    bad.epsilon = 0.0;
    CHECK_THROWS_AS(bad.validate(), InvalidInput);
    bad = c;
    bad.lambda = -0.1;
    CHECK_THROWS_AS(bad.validate(), InvalidInput);
    bad = c;
    bad.space = AttackSpace::signal;
    bad.bank = {};
    CHECK_THROWS_AS(bad.validate(), InvalidInput);
    CHECK(parse_attack_space("signal") == AttackSpace::signal);
    CHECK(parse_regularizer_sign("literal-eq2") == RegularizerSign::literal);
    CHECK_THROWS_AS(parse_attack_space("pixel"), InvalidInput);
}

TEST_CASE("adversarial loss reduces to cross-entropy at zero perturbation") {
    Classifier model(toy_classifier(), 3);
    SplitMix64 rng(4);
    const Tensor x = gradcheck::random_tensor({3, 12, 64}, rng);
    const Tensor y = random_labels(3, 3, rng);
    const AttackTarget target{model};
    const Tensor probs = model.predict(x);
    Tape tape;
    const Tensor ce = binary_cross_entropy_rows(tape.constant(probs), y).value();

    AttackConfig cfg;
    cfg.space = AttackSpace::signal;
    cfg.lambda = 0.0;
    const Tensor zero(Shape{3, 12, 64}, 0.0);
    const Tensor l0 = adversarial_loss(target, x, y, zero, cfg);
    cfg.lambda = 0.1;
    const Tensor lr = adversarial_loss(target, x, y, zero, cfg);
    cfg.sign = RegularizerSign::literal;
    const Tensor ll = adversarial_loss(target, x, y, zero, cfg);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(l0[i] == doctest::Approx(ce[i]).epsilon(1e-12));
        CHECK(lr[i] == doctest::Approx(ce[i] + 0.1).epsilon(1e-12));
        CHECK(ll[i] == doctest::Approx(ce[i] - 0.1).epsilon(1e-12));
    }
}

TEST_CASE("adversarial loss gradient matches finite differences in both spaces") {
    Classifier model(toy_classifier(), 5);
    Autoencoder ae(toy_autoencoder(), 6);
    randomize(ae.params(), 7);
    const AttackTarget target{model, &ae};
    SplitMix64 rng(8);
    for (AttackSpace space : {AttackSpace::signal, AttackSpace::latent}) {
        for (RegularizerSign sign : {RegularizerSign::reward_similarity, RegularizerSign::literal}) {
            AttackConfig cfg;
            cfg.space = space;
            cfg.sign = sign;
            const Tensor x = gradcheck::random_tensor({2, 12, 64}, rng);
            const Tensor y = random_labels(2, 3, rng);
            const Tensor d0 = gradcheck::random_tensor(perturbation_shape(target, 2, space), rng, -0.1, 0.1);
            gradcheck::Builder f = [&](Tape& tape, const std::vector<Var>& in) {
                return sum(adversarial_loss_rows(tape, target, x, y, in[0], cfg));
            };
            const auto rep = gradcheck::check(f, {d0}, 1e-6, 10, 9);
            INFO("space " << to_string(space) << ", sign " << to_string(sign));
            CHECK(rep.max_rel_error < 1e-3);
        }
    }
}

TEST_CASE("pgd keeps every step inside the budget and T=0 is a no-op") {
    Classifier model(toy_classifier(), 11);
    Autoencoder ae(toy_autoencoder(), 12);
    randomize(ae.params(), 13);
    const AttackTarget target{model, &ae};
    SplitMix64 rng(14);
    const Tensor x = gradcheck::random_tensor({2, 12, 64}, rng);
    const Tensor y = random_labels(2, 3, rng);
    for (AttackSpace space : {AttackSpace::signal, AttackSpace::latent}) {
        AttackConfig cfg;
        cfg.space = space;
        cfg.epsilon = 0.004;
        cfg.steps = 12;
        std::size_t observed = 0;
        double prev_max = 0.0;
        const Tensor delta = pgd(target, x, y, cfg, [&](std::size_t t, const Tensor& d) {
            ++observed;
            CHECK(t == observed);
            CHECK(d.abs_max() <= cfg.epsilon);
            prev_max = d.abs_max();
        });
        CHECK(observed == 12);
        CHECK(delta.abs_max() <= cfg.epsilon);
        CHECK(prev_max == doctest::Approx(cfg.epsilon));
        cfg.steps = 0;
        CHECK(pgd(target, x, y, cfg).abs_max() == 0.0);
    }
}

TEST_CASE("pgd is deterministic and leaves the model untouched") {
    Classifier model(toy_classifier(), 15);
    const ParamSet before = model.params();
    const AttackTarget target{model};
    SplitMix64 rng(16);
    const Tensor x = gradcheck::random_tensor({2, 12, 64}, rng);
    const Tensor y = random_labels(2, 3, rng);
    AttackConfig cfg;
    cfg.space = AttackSpace::signal;
    cfg.steps = 5;
    const Tensor a = pgd(target, x, y, cfg);
    const Tensor b = pgd(target, x, y, cfg);
    CHECK(a == b);
    CHECK(model.params() == before);
}

TEST_CASE("pgd steps are multiples of alpha before clipping") {
    Classifier model(toy_classifier(), 17);
    const AttackTarget target{model};
    SplitMix64 rng(18);
    const Tensor x = gradcheck::random_tensor({1, 12, 64}, rng);
    const Tensor y = random_labels(1, 3, rng);
    AttackConfig cfg;
    cfg.space = AttackSpace::signal;
    cfg.steps = 1;
    cfg.step_size = 0.25;
    const Tensor d = pgd(target, x, y, cfg);
    for (double v : d.data()) CHECK((v == 0.25 || v == -0.25 || v == 0.0));
}

TEST_CASE("pgd ascends the adversarial loss") {
    Classifier model(toy_classifier(), 19);
    const AttackTarget target{model};
    SplitMix64 rng(20);
    const Tensor x = gradcheck::random_tensor({40, 12, 64}, rng);
    const Tensor y = random_labels(40, 3, rng);
    AttackConfig cfg;
    cfg.space = AttackSpace::signal;
    const Tensor delta = pgd(target, x, y, cfg);
    const Tensor l0 = adversarial_loss(target, x, y, Tensor(x.shape(), 0.0), cfg);
    const Tensor l1 = adversarial_loss(target, x, y, delta, cfg);
    std::size_t up = 0;
    for (std::size_t i = 0; i < 40; ++i) up += l1[i] >= l0[i] ? 1 : 0;
    CHECK(up >= 38);
}

TEST_CASE("batched attack equals per-sample attacks bitwise") {
    Classifier model(toy_classifier(), 21);
    Autoencoder ae(toy_autoencoder(), 22);
    randomize(ae.params(), 23);
    const AttackTarget target{model, &ae};
    SplitMix64 rng(24);
    const Tensor x = gradcheck::random_tensor({3, 12, 64}, rng);
    const Tensor y = random_labels(3, 3, rng);
    for (AttackSpace space : {AttackSpace::signal, AttackSpace::latent}) {
        AttackConfig cfg;
        cfg.space = space;
        cfg.steps = 4;
        const auto batch = make_adversarial(target, x, y, cfg);
        for (std::size_t i = 0; i < 3; ++i) {
            const std::vector<std::size_t> one{i};
            const auto single = make_adversarial(target, gather_rows(x, one), gather_rows(y, one), cfg);
            CHECK(gather_rows(batch.x_adv, one) == single.x_adv);
            CHECK(gather_rows(batch.delta, one) == single.delta);
        }
    }
}

TEST_CASE("smoothing matches a direct convolution") {
    const GaussianKernelBank bank = default_kernel_bank();
    SplitMix64 rng(25);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor d = gradcheck::random_tensor({2, 3, 97}, rng, -0.5, 0.5);
        const Tensor s = smooth_perturbation(d, bank);
        const auto ref = brute_smooth(d, bank);
        for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(s[i] - ref[i]));
        CHECK(s.abs_max() <= d.abs_max());
        const Tensor s3 = smooth_perturbation(Tensor(d.shape(), [&] {
                                                  std::vector<double> v(d.data().begin(), d.data().end());
                                                  for (double& e : v) e *= -3.0;
                                                  return v;
                                              }()),
                                              bank);
        for (std::size_t i = 0; i < s.size(); ++i) CHECK(std::abs(s3[i] + 3.0 * s[i]) < 1e-12);
    }
    CHECK(worst < 1e-12);
}

TEST_CASE("near-impulse kernel leaves the perturbation unchanged") {
    const std::vector<std::size_t> sizes{5};
    const std::vector<double> sigmas{1e-6};
    const GaussianKernelBank bank = gaussian_kernels(sizes, sigmas);
    SplitMix64 rng(26);
    const Tensor d = gradcheck::random_tensor({1, 12, 64}, rng);
    const Tensor s = smooth_perturbation(d, bank);
    for (std::size_t i = 0; i < d.size(); ++i) CHECK(std::abs(s[i] - d[i]) < 1e-6);
    CHECK_THROWS_AS(smooth_perturbation(d, GaussianKernelBank{}), InvalidInput);
}

TEST_CASE("make_adversarial contracts") {
    Classifier model(toy_classifier(), 27);
    Autoencoder ae(toy_autoencoder(), 28);
    randomize(ae.params(), 29);
    SplitMix64 rng(30);
    const Tensor x = gradcheck::random_tensor({2, 12, 64}, rng);
    const Tensor y = random_labels(2, 3, rng);

    AttackConfig sig;
    sig.space = AttackSpace::signal;
    sig.steps = 0;
    CHECK(make_adversarial({model}, x, y, sig).x_adv == x);
    sig.steps = 10;
    sig.step_size = 0.1;
    const auto out = make_adversarial({model}, x, y, sig);
    CHECK(out.x_adv.shape() == x.shape());
    double dev = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) dev = std::max(dev, std::abs(out.x_adv[i] - x[i]));
    CHECK(dev <= sig.epsilon);
    CHECK(dev > 0.0);

    AttackConfig lat;
    lat.space = AttackSpace::latent;
    CHECK_THROWS_AS(make_adversarial({model}, x, y, lat), InvalidInput);
    const auto la = make_adversarial({model, &ae}, x, y, lat);
    CHECK(la.x_adv.shape() == x.shape());
    CHECK(la.delta.shape() == Shape{2, 8});
    Tensor z = ae.encode(x);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += la.delta[i];
    CHECK(ae.decode(z) == la.x_adv);
}

TEST_CASE("attack_records measures each sample and writes the csv") {
    ClassifierConfig cc = toy_classifier(kSamples);
    Classifier model(cc, 31);
    const auto cohort = generate_cohort(3, 0.5, 32);
    const std::vector<std::size_t> idx{0, 1, 2};
    AttackConfig cfg;
    cfg.space = AttackSpace::signal;
    cfg.steps = 3;
    const auto outcome = attack_records({model}, cohort, idx, cfg, 2);
    REQUIRE(outcome.records.size() == 3);
    CHECK(outcome.x_adv.shape() == Shape{3, 12, 2048});
    for (const auto& r : outcome.records) {
        CHECK(r.flipped.size() == 3);
        CHECK(r.loss_after >= r.loss_before - 1e-9);
        CHECK(r.cosine <= 1.0);
        CHECK(r.wall_time_s >= 0.0);
    }
    const auto single = attack_records({model}, cohort, std::vector<std::size_t>{1}, cfg, 1);
    CHECK(single.records[0].loss_after == outcome.records[1].loss_after);
    CHECK(flip_rate(outcome.records, 1) >= 0.0);

    const auto path = std::filesystem::temp_directory_path() / "advecg_attack_test.csv";
    write_attack_csv(path, outcome.records, cc.thresholds);
    std::ifstream in(path);
    std::string header, line;
    std::getline(in, header);
    CHECK(header ==
          "sample_id,space,loss_before,loss_after,cosine_similarity,flipped_le50,flipped_le40,flipped_le30,"
          "prob_clean_le50,prob_clean_le40,prob_clean_le30,prob_adv_le50,prob_adv_le40,prob_adv_le30,wall_time_s");
    std::size_t lines = 0;
    while (std::getline(in, line)) ++lines;
    CHECK(lines == 3);
    std::filesystem::remove(path);
}
