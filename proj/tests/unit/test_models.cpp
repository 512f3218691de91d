#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "advecg/checkpoint.hpp"
#include "advecg/errors.hpp"
#include "advecg/ops.hpp"
#include "advecg/rng.hpp"
#include "gradcheck.hpp"

using namespace advecg;

namespace {

ClassifierConfig tiny_classifier() {
    ClassifierConfig c;
    c.length = 128;
    c.stem_channels = 4;
    c.block_channels = {4, 6, 6, 8};
    c.kernel_size = 5;
    return c;
}

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("advecg_test_models_" + name);
}

std::string file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("classifier output contract") {
    Classifier model({}, 3);
    SplitMix64 rng(1);
    Tensor x = gradcheck::random_tensor({3, 12, 2048}, rng, -2, 2);
    const Tensor p = model.predict(x);
    CHECK(p.shape() == Shape{3, 3});
    for (double v : p.data()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
    CHECK(model.predict(x) == p);
    CHECK_THROWS_AS(model.predict(Tensor(Shape{2, 11, 2048})), ShapeError);
    CHECK_THROWS_AS(model.predict(Tensor(Shape{2, 12, 1024})), ShapeError);

    // extreme inputs saturate but stay strictly inside (0, 1)
    const Tensor big = model.predict(Tensor(Shape{1, 12, 2048}, 500.0));
    for (double v : big.data()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("classifier architecture") {
    Classifier model({}, 0);
    const auto& p = model.params();
    CHECK(p.contains("block3.conv2"));
    CHECK_FALSE(p.contains("block4.conv1"));
    CHECK(p.value(p.index("stem.conv")).shape() == Shape{16, 12, 17});
    CHECK(p.value(p.index("block3.conv1")).shape() == Shape{128, 64, 17});
    CHECK(p.value(p.index("block1.skip")).shape() == Shape{32, 16, 1});
    CHECK(p.value(p.index("fc.weight")).shape() == Shape{3, 128});
    ClassifierConfig three = {};
    three.block_channels = {16, 32, 64};
    CHECK_THROWS_AS(Classifier(three, 0), InvalidInput);
}

TEST_CASE("classifier is deterministic in train mode per dropout seed and differs across seeds") {
    Classifier a(tiny_classifier(), 5), b(tiny_classifier(), 5);
    SplitMix64 rng(2);
    const Tensor x = gradcheck::random_tensor({4, 12, 128}, rng);
    auto run = [&](Classifier& m, std::uint64_t seed) {
        Tape tape;
        const auto bound = m.params().bind(tape, true);
        ForwardContext ctx{Mode::train, seed, {}};
        return m.forward(tape.constant(x), bound, ctx).value();
    };
    CHECK(run(a, 9) == run(b, 9));
    CHECK(a.params() == b.params());  // running statistics updated identically
    CHECK_FALSE(run(a, 9) == run(a, 10));
}

TEST_CASE("classifier input gradient matches finite differences") {
    SplitMix64 rng(4);
    for (Mode mode : {Mode::eval, Mode::train}) {
        Classifier model(tiny_classifier(), 11);
        // non-trivial running statistics for eval mode
        for (std::size_t i = 0; i < model.params().size(); ++i)
            if (model.params().entry(i).name.find("running_var") != std::string::npos)
                for (double& v : model.params().value(i).data()) v = rng.uniform(0.5, 2.0);
        const ParamSet frozen = model.params();
        const Tensor x = gradcheck::random_tensor({2, 12, 128}, rng);
        gradcheck::Builder f = [&](Tape& tape, const std::vector<Var>& in) {
            model.params() = frozen;
            const auto bound = model.params().bind(tape, false);
            ForwardContext ctx{mode, 3, {}};
            const Var p = model.forward(in[0], bound, ctx);
            return cross_entropy(p, Tensor({2, 3}, {1, 1, 0, 0, 0, 0}));
        };
        const auto rep = gradcheck::check(f, {x}, 1e-5, 20, mode == Mode::eval ? 1 : 2);
        CHECK(rep.checked == 20);
        CHECK(rep.max_rel_error < 1e-3);
    }
}

TEST_CASE("full-size classifier input gradient at 20 coordinates") {
    Classifier model({}, 2);
    SplitMix64 rng(6);
    const Tensor x = gradcheck::random_tensor({1, 12, 2048}, rng);
    gradcheck::Builder f = [&](Tape& tape, const std::vector<Var>& in) {
        const auto bound = model.params().bind(tape, false);
        return cross_entropy(model.forward_eval(in[0], bound), Tensor({1, 3}, {1, 1, 0}));
    };
    const auto rep = gradcheck::check(f, {x}, 1e-5, 20, 7);
    CHECK(rep.max_rel_error < 1e-3);
}

TEST_CASE("autoencoder shapes and finiteness") {
    Autoencoder ae({}, 1);
    CHECK(ae.config().latent_dim == 256);
    SplitMix64 rng(3);
    const Tensor x = gradcheck::random_tensor({2, 12, 2048}, rng);
    const Tensor z = ae.encode(x);
    CHECK(z.shape() == Shape{2, 256});
    const Tensor xh = ae.decode(z);
    CHECK(xh.shape() == Shape{2, 12, 2048});
    CHECK(z.all_finite());
    CHECK(xh.all_finite());
    CHECK_THROWS_AS(ae.encode(Tensor(Shape{1, 12, 1000})), ShapeError);
    CHECK_THROWS_AS(ae.decode(Tensor(Shape{1, 100})), ShapeError);
    CHECK(ae.encoder_checksum().size() == 64);
}

TEST_CASE("autoencoder gradients match finite differences") {
    AutoencoderConfig cfg;
    cfg.length = 128;
    cfg.channels = {4, 6};
    cfg.latent_dim = 16;
    cfg.kernel_size = 5;
    Autoencoder ae(cfg, 8);
    SplitMix64 rng(5);
    for (std::size_t i = 0; i < ae.params().size(); ++i)
        for (double& v : ae.params().value(i).data()) v = rng.uniform(-0.5, 0.5);
    const Tensor x = gradcheck::random_tensor({2, 12, 128}, rng);
    const Tensor d = gradcheck::random_tensor({2, 16}, rng, -0.1, 0.1);
    gradcheck::Builder f = [&](Tape& tape, const std::vector<Var>& in) {
        const auto bound = ae.params().bind(tape, false);
        const Var xh = ae.decode(add(ae.encode(in[0], bound), in[1]), bound);
        return sum(mul(xh, xh));
    };
    const auto rep = gradcheck::check(f, {x, d}, 1e-5, 30, 3);
    CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("pretraining is deterministic and beats the zero predictor") {
    const auto cohort = generate_cohort(90, 0.2, 4);
    std::vector<std::size_t> train, held;
    for (std::size_t i = 0; i < cohort.size(); ++i) (i < 70 ? train : held).push_back(i);
    std::vector<EcgRecord> filtered;
    for (const auto& r : cohort) filtered.push_back(highpass(r));
    AutoencoderTrainConfig tc;
    tc.epochs = 6;
    tc.batch_size = 16;
    tc.seed = 3;
    const auto a = pretrain_autoencoder(filtered, train, {}, tc);
    const auto b = pretrain_autoencoder(filtered, train, {}, tc);
    CHECK(a.model.params() == b.model.params());
    CHECK(a.epoch_loss == b.epoch_loss);
    CHECK(a.epoch_loss.size() == 6);
    if (!a.smoothed_loss_non_increasing) MESSAGE("autoencoder loss curve is not monotone after smoothing");
    const auto err = reconstruction_error(a.model, filtered, held);
    MESSAGE("held-out MSE " << err.model_mse << " vs zero predictor " << err.zero_mse);
    CHECK(err.model_mse < err.zero_mse);
    const double lip = decoder_lipschitz_estimate(a.model, a.model.encode(to_batch(filtered, held)), 8, 0.05, 1);
    MESSAGE("decoder Lipschitz estimate " << lip);
    CHECK(std::isfinite(lip));
    CHECK_THROWS_AS(pretrain_autoencoder(filtered, std::vector<std::size_t>{}, {}, tc), InvalidInput);
}

TEST_CASE("smoothed monotonicity check") {
    const std::vector<double> down{5, 4, 4.5, 3, 2, 2.5, 1, 1};
    CHECK(smoothed_non_increasing(down, 3));
    const std::vector<double> up{1, 2, 3, 4, 5, 6};
    CHECK_FALSE(smoothed_non_increasing(up, 5));
    CHECK(smoothed_non_increasing(std::vector<double>{1, 2}, 5));
}

TEST_CASE("checkpoint round trips at stored precision and is idempotent") {
    Autoencoder ae({}, 7);
    const auto p1 = temp_path("ae1.advm"), p2 = temp_path("ae2.advm");
    save_autoencoder(p1, ae);
    const Autoencoder back = load_autoencoder(p1);
    ParamSet rounded = ae.params();
    rounded.round_to_float();
    CHECK(back.params() == rounded);
    CHECK(back.config().latent_dim == 256);
    CHECK(read_checkpoint(p1).u32("latent_dim") == 256);
    save_autoencoder(p2, back);
    CHECK(file_bytes(p1) == file_bytes(p2));
    CHECK(back.encoder_checksum() == ae.encoder_checksum());

    Classifier clf({}, 8);
    save_classifier(p1, clf);
    const auto ck = read_checkpoint(p1);
    CHECK(ck.u32("n_blocks") == 4);
    CHECK(ck.u32("kernel_size") == 17);
    CHECK(ck.u32("stem_channels") == 16);
    CHECK(ck.f32("threshold_1") == 40.0f);
    const Classifier cback = load_classifier(p1);
    save_classifier(p2, cback);
    CHECK(file_bytes(p1) == file_bytes(p2));
    ParamSet crounded = clf.params();
    crounded.round_to_float();
    CHECK(cback.params() == crounded);
    CHECK_THROWS_AS(load_autoencoder(p1), FormatError);
    std::filesystem::remove(p2);

    std::string bytes = file_bytes(p1);
    auto write_bytes = [&](const std::string& b) {
        std::ofstream out(p1, std::ios::binary | std::ios::trunc);
        out.write(b.data(), static_cast<std::streamsize>(b.size()));
    };
    std::string bad = bytes;
    bad[1] = 'X';
    write_bytes(bad);
    CHECK_THROWS_AS(read_checkpoint(p1), FormatError);
    bad = bytes;
    bad[4] = 9;
    write_bytes(bad);
    CHECK_THROWS_AS(read_checkpoint(p1), FormatError);
    write_bytes(bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(read_checkpoint(p1), FormatError);
    write_bytes(bytes + "zz");
    CHECK_THROWS_AS(read_checkpoint(p1), FormatError);
    std::filesystem::remove(p1);
}

TEST_CASE("adam: zero gradients leave fresh parameters unchanged") {
    ParamSet p;
    p.add("w", Tensor({3}, {1, -2, 3}));
    p.add("buf", Tensor({1}, {7}), false);
    AdamState s = make_adam_state(p);
    const ParamSet before = p;
    adam_step(p, s, std::vector<Tensor>(2), {});
    CHECK(p == before);
    CHECK(s.m[0] == Tensor(Shape{3}, 0.0));

    adam_step(p, s, {Tensor({3}, {1, 1, 1}), Tensor()}, {});
    const double m_after = s.m[0][0];
    adam_step(p, s, std::vector<Tensor>(2), {});
    CHECK(std::abs(s.m[0][0]) < std::abs(m_after));
    CHECK(std::abs(s.v[0][0]) < 1e-3);
    CHECK(p.value(1)[0] == 7);
}

TEST_CASE("adam first step and constant-gradient limit") {
    ParamSet p;
    p.add("w", Tensor({1}, {0.0}));
    AdamState s = make_adam_state(p);
    AdamConfig c;
    adam_step(p, s, {Tensor({1}, {1.0})}, c);
    CHECK(std::abs(p.value(0)[0]) == doctest::Approx(c.lr).epsilon(1e-6));
    for (int t = 1; t < 200; ++t) {
        const double before = p.value(0)[0];
        adam_step(p, s, {Tensor({1}, {0.37})}, c);
        if (t == 199) CHECK(std::abs(std::abs(p.value(0)[0] - before) - c.lr) < 0.05 * c.lr);
    }
    CHECK_THROWS_AS(adam_step(p, s, {Tensor({2}, {1.0, 1.0})}, c), ShapeError);
}
