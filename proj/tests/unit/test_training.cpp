#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>

#include "advecg/errors.hpp"
#include "advecg/rng.hpp"
#include "advecg/training.hpp"

using namespace advecg;

namespace {

ClassifierConfig tiny_model() {
    ClassifierConfig c;
    c.stem_channels = 4;
    c.block_channels = {4, 4, 8, 8};
    c.kernel_size = 5;
    return c;
}

AutoencoderConfig tiny_autoencoder() {
    AutoencoderConfig c;
    c.channels = {4, 4, 4};
    c.kernel_size = 5;
    c.latent_dim = 64;
    return c;
}

TrainConfig tiny_config() {
    TrainConfig c;
    c.model = tiny_model();
    c.batch_size = 8;
    c.max_epochs = 2;
    c.seed = 5;
    c.val_fraction = 0.2;
    c.attack.steps = 2;
    c.attack.space = AttackSpace::signal;
    return c;
}

const std::vector<EcgRecord>& cohort() {
    static const std::vector<EcgRecord> c = [] {
        auto r = generate_cohort(40, 0.3, 21);
        for (auto& e : r) e = highpass(e);
        return r;
    }();
    return c;
}

std::vector<std::size_t> all_indices() {
    std::vector<std::size_t> idx(cohort().size());
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

void check_same_log(const std::vector<EpochLog>& a, const std::vector<EpochLog>& b) {
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].epoch == b[i].epoch);
        CHECK(a[i].train_loss == b[i].train_loss);
        CHECK(a[i].val_loss == b[i].val_loss);
        CHECK(a[i].du_size == b[i].du_size);
        CHECK(a[i].du_overlap_prev == b[i].du_overlap_prev);
        REQUIRE(a[i].val_auroc.size() == b[i].val_auroc.size());
        for (std::size_t h = 0; h < a[i].val_auroc.size(); ++h)
            CHECK((a[i].val_auroc[h] == b[i].val_auroc[h] ||
                   (std::isnan(a[i].val_auroc[h]) && std::isnan(b[i].val_auroc[h]))));
    }
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("uncertainty examples") {
    CHECK(uncertainty(std::vector<double>{0.5}) == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
    CHECK(uncertainty(std::vector<double>{1.0}) == 0.0);
    CHECK(uncertainty(std::vector<double>{0.0}) == 0.0);
    CHECK(uncertainty(std::vector<double>{0.5, 1.0}) == doctest::Approx(std::numbers::ln2 / 2).epsilon(1e-15));
    CHECK(uncertainty(std::vector<double>{1.0 - 1e-7}) < 2e-6);
}

TEST_CASE("select_uncertain examples") {
    const std::vector<double> u{0.1, 0.9, 0.5, 0.3};
    CHECK(select_uncertain(u, 0.5) == std::vector<std::size_t>{1, 2});
    CHECK(select_uncertain(u, 1.0) == std::vector<std::size_t>{0, 1, 2, 3});
    CHECK(select_uncertain(u, 0.0).empty());
    CHECK(select_uncertain(u, 0.3) == std::vector<std::size_t>{1, 2});
    const std::vector<double> ten(10, 0.2);
    CHECK(select_uncertain(ten, 0.3) == std::vector<std::size_t>{0, 1, 2});
    CHECK_THROWS_AS(select_uncertain(std::vector<double>{}, 0.5), InvalidInput);
    CHECK_THROWS_AS(select_uncertain(u, 1.5), InvalidInput);
}

TEST_CASE("select_uncertain matches sort-and-slice") {
    SplitMix64 rng(3);
    for (int t = 0; t < 100; ++t) {
        const std::size_t n = 1 + rng.below(30);
        std::vector<double> u(n);
        for (double& v : u) v = static_cast<double>(rng.below(6)) / 5.0;
        const double k = rng.uniform(0.01, 1.0);
        std::vector<std::pair<double, std::size_t>> keyed;
        for (std::size_t i = 0; i < n; ++i) keyed.push_back({-u[i], i});
        std::sort(keyed.begin(), keyed.end());
        const auto m = static_cast<std::size_t>(std::ceil(k * static_cast<double>(n) - 1e-9));
        std::vector<std::size_t> want;
        for (std::size_t i = 0; i < m; ++i) want.push_back(keyed[i].second);
        std::sort(want.begin(), want.end());
        CHECK(select_uncertain(u, k) == want);
    }
}

TEST_CASE("train config defaults") {
    const TrainConfig c;
    CHECK(c.adam.lr == 0.001);
    CHECK(c.adam.beta1 == 0.9);
    CHECK(c.adam.beta2 == 0.999);
    CHECK(c.adam.eps == 1e-8);
    CHECK(c.batch_size == 64);
    CHECK(c.max_epochs == 100);
    CHECK(c.patience == 10);
    CHECK(c.top_k_fraction == 0.30);
    CHECK(c.val_fraction == 0.10);
    CHECK(c.model.kernel_size == 17);
    CHECK(parse_train_mode("augment") == TrainMode::augment);
    CHECK(parse_loss_form("eq11-only") == LossForm::adversarial_only);
    CHECK_THROWS_AS(parse_train_mode("robust"), InvalidInput);
}

TEST_CASE("plain training is deterministic per seed") {
    const auto idx = all_indices();
    const TrainConfig cfg = tiny_config();
    const auto a = train(cohort(), idx, cfg);
    const auto b = train(cohort(), idx, cfg);
    CHECK(a.model.params() == b.model.params());
    check_same_log(a.log, b.log);
    CHECK(a.log.size() == 2);
    CHECK(a.log[0].du_size == 0);
    std::vector<std::size_t> both;
    std::set_intersection(a.train_indices.begin(), a.train_indices.end(), a.val_indices.begin(), a.val_indices.end(),
                          std::back_inserter(both));
    CHECK(both.empty());
    CHECK(a.train_indices.size() + a.val_indices.size() == idx.size());
}

TEST_CASE("adversarial training with top_k 0 reduces to plain") {
    const auto idx = all_indices();
    TrainConfig cfg = tiny_config();
    const auto plain = train(cohort(), idx, cfg);
    cfg.mode = TrainMode::adversarial;
    cfg.top_k_fraction = 0.0;
    const auto adv = train(cohort(), idx, cfg);
    check_same_log(plain.log, adv.log);
    CHECK(plain.model.params() == adv.model.params());
}

TEST_CASE("augment with zero noise reduces to plain") {
    const auto idx = all_indices();
    TrainConfig cfg = tiny_config();
    const auto plain = train(cohort(), idx, cfg);
    cfg.mode = TrainMode::augment;
    cfg.noise_amplitude = 0.0;
    const auto aug = train(cohort(), idx, cfg);
    check_same_log(plain.log, aug.log);
    CHECK(plain.model.params() == aug.model.params());
    cfg.noise_amplitude = 0.05;
    const auto noisy = train(cohort(), idx, cfg);
    CHECK(noisy.log[0].train_loss != plain.log[0].train_loss);
}

TEST_CASE("adversarial training selects D_u every epoch") {
    const auto idx = all_indices();
    TrainConfig cfg = tiny_config();
    cfg.mode = TrainMode::adversarial;
    const auto r = train(cohort(), idx, cfg);
    const auto n = r.train_indices.size();
    const auto want = static_cast<std::size_t>(std::ceil(0.3 * static_cast<double>(n) - 1e-9));
    for (const auto& e : r.log) CHECK(e.du_size == want);
    CHECK(r.log[0].du_overlap_prev == 0);
    CHECK(r.log[1].du_overlap_prev <= want);

    cfg.top_k_fraction = 1.0;
    const auto all = train(cohort(), idx, cfg);
    for (const auto& e : all.log) CHECK(e.du_size == n);
    CHECK(all.log[1].du_overlap_prev == n);

    cfg.top_k_fraction = 0.3;
    cfg.loss_form = LossForm::adversarial_only;
    const auto adv_only = train(cohort(), idx, cfg);
    CHECK(adv_only.log.size() == 2);
    CHECK(adv_only.log[0].train_loss != r.log[0].train_loss);
}

TEST_CASE("latent adversarial training") {
    const auto idx = all_indices();
    TrainConfig cfg = tiny_config();
    cfg.mode = TrainMode::adversarial;
    cfg.attack.space = AttackSpace::latent;
    cfg.max_epochs = 1;
    CHECK_THROWS_AS(train(cohort(), idx, cfg), InvalidInput);
    Autoencoder ae(tiny_autoencoder(), 4);
    SplitMix64 rng(6);
    for (std::size_t i = 0; i < ae.params().size(); ++i)
        for (double& v : ae.params().value(i).data()) v = rng.uniform(-0.3, 0.3);
    const auto r = train(cohort(), idx, cfg, &ae);
    CHECK(r.log.size() == 1);
    const auto again = train(cohort(), idx, cfg, &ae);
    CHECK(r.model.params() == again.model.params());
}

TEST_CASE("early stopping returns the best validation epoch") {
    const auto idx = all_indices();
    TrainConfig cfg = tiny_config();
    cfg.max_epochs = 6;
    cfg.patience = 1;
    cfg.adam.lr = 0.02;
    const auto r = train(cohort(), idx, cfg);
    REQUIRE(r.best_epoch >= 1);
    const double best = r.log[r.best_epoch - 1].val_loss;
    for (const auto& e : r.log) CHECK(best <= e.val_loss);
    CHECK(evaluate(r.model, cohort(), r.val_indices).loss == best);
    if (r.log.size() < cfg.max_epochs) CHECK(r.log.size() == r.best_epoch + cfg.patience);
}

TEST_CASE("divergence guard aborts") {
    const auto idx = all_indices();
    TrainConfig cfg = tiny_config();
    cfg.adam.lr = 1e300;
    CHECK_THROWS_AS(train(cohort(), idx, cfg), NumericalError);
}

TEST_CASE("train state round-trips") {
    const auto idx = all_indices();
    TrainConfig cfg = tiny_config();
    cfg.max_epochs = 1;
    const auto r = train(cohort(), idx, cfg);
    const auto dir = std::filesystem::temp_directory_path();
    const auto p1 = dir / "advecg_state_1.advm";
    const auto p2 = dir / "advecg_state_2.advm";
    save_train_state(p1, r.final_state);
    const TrainState back = load_train_state(p1);
    save_train_state(p2, back);
    CHECK(slurp(p1) == slurp(p2));
    CHECK(back.epoch == 1);
    CHECK(back.rng_state == cfg.seed);
    CHECK(back.adam.step == r.final_state.adam.step);
    const auto& params = back.model.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params.entry(i).trainable) continue;
        CHECK(back.adam.m[i].shape() == params.value(i).shape());
        for (std::size_t j = 0; j < params.value(i).size(); ++j)
            CHECK(back.adam.v[i][j] == static_cast<double>(static_cast<float>(r.final_state.adam.v[i][j])));
    }
    CHECK_THROWS_AS(load_train_state(dir / "missing.advm"), std::runtime_error);
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
}

TEST_CASE("training log csv") {
    std::vector<EpochLog> log{{1, 0.5, 0.4, {0.6, 0.7, 0.8}, 3, 0, 1.25}};
    const auto path = std::filesystem::temp_directory_path() / "advecg_train_log.csv";
    write_training_log(path, log, default_thresholds());
    std::ifstream in(path);
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    CHECK(header ==
          "epoch,train_loss,val_loss,val_auroc_le50,val_auroc_le40,val_auroc_le30,du_size,du_overlap_prev,wall_time_s");
    CHECK(row == "1,0.5,0.4,0.6,0.7,0.8,3,0,1.25");
    std::filesystem::remove(path);
}
