#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>

#include "advecg/checkpoint.hpp"
#include "advecg/cli.hpp"
#include "advecg/config.hpp"
#include "advecg/errors.hpp"
#include "advecg/experiments.hpp"

using namespace advecg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        std::string tmpl = (fs::temp_directory_path() / "advecg_cli_XXXXXX").string();
        if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
        path = tmpl;
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

struct Run {
    int code = 0;
    std::string out;
    std::string err;
};

Run cli(const std::vector<std::string>& args, const std::vector<std::string>& env = {}) {
    std::ostringstream out, err;
    Run r;
    r.code = run_cli(args, env, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::string> lines(const fs::path& p) {
    std::vector<std::string> out;
    std::ifstream in(p);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

std::vector<std::string> fields(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) out.push_back(f);
    return out;
}

std::uint32_t u32_at(const std::string& bytes, std::size_t offset) {
    std::uint32_t v = 0;
    std::memcpy(&v, bytes.data() + offset, 4);
    return v;
}

const std::vector<std::string> kTinyModel{"--set", "stem_channels=4", "--set", "block_channels=4,4,8,8",
                                          "--set", "kernel_size=5",   "--set", "batch_size=8"};
const std::vector<std::string> kTinyAe{"--set", "ae_channels=4,4,4", "--set", "ae_kernel_size=5",
                                       "--set", "latent_dim=64",     "--set", "ae_batch_size=8"};

std::vector<std::string> operator+(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

}  // namespace

TEST_CASE("config defaults follow the published hyperparameters") {
    RunConfig rc;
    const TrainConfig t = train_config(rc);
    CHECK(t.adam.lr == 0.001);
    CHECK(t.adam.beta1 == 0.9);
    CHECK(t.adam.beta2 == 0.999);
    CHECK(t.adam.eps == 1e-8);
    CHECK(t.batch_size == 64);
    CHECK(t.max_epochs == 100);
    CHECK(t.patience == 10);
    CHECK(t.top_k_fraction == 0.30);
    CHECK(t.mode == TrainMode::plain);
    CHECK(t.noise_amplitude == 0.05);
    const AttackConfig a = attack_config(rc);
    CHECK(a.steps == 20);
    CHECK(a.step_size == 0.001);
    CHECK(a.epsilon == 0.5);
    CHECK(a.lambda == 0.1);
    CHECK(a.sign == RegularizerSign::reward_similarity);
    CHECK(a.space == AttackSpace::latent);
    CHECK(a.bank.sizes == std::vector<std::size_t>{5, 7, 11, 15, 19});
    CHECK(a.bank.sigmas == std::vector<double>{1, 3, 5, 7, 10});
    CHECK(train_attack_config(rc).steps == 20);
    CHECK(rc.real("subset_fraction") == 0.1);
    CHECK(rc.counts("seeds") == std::vector<std::size_t>{1, 2, 3, 4, 5});
    CHECK(rc.count("bootstrap_resamples") == 1000);
    CHECK(classifier_config(rc).thresholds == std::vector<double>{50, 40, 30});
    for (const auto& k : config_keys()) CHECK(rc.get(k.name) == k.default_value);
}

TEST_CASE("config file parsing names the offending line") {
    RunConfig rc;
    rc.load_text("# comment\n  lr = 0.01  # trailing\n\nmode=adversarial\n", "a.cfg");
    CHECK(rc.real("lr") == 0.01);
    CHECK(rc.get("mode") == "adversarial");
    try {
        rc.load_text("lr=0.01\n\nbogus_key=3\n", "b.cfg");
        FAIL("unknown key accepted");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("b.cfg:3") != std::string::npos);
        CHECK(std::string(e.what()).find("bogus_key") != std::string::npos);
    }
    try {
        rc.load_text("lr 0.01\n", "c.cfg");
        FAIL("line without '=' accepted");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("c.cfg:1") != std::string::npos);
    }
}

TEST_CASE("environment overrides map ADVECG_KEY onto key") {
    RunConfig rc;
    rc.load_environment(std::vector<std::string>{"PATH=/bin", "ADVECG_LR=0.5", "ADVECG_ATTACK_STEPS=7"});
    CHECK(rc.real("lr") == 0.5);
    CHECK(rc.count("attack_steps") == 7);
    CHECK_THROWS_AS(rc.load_environment(std::vector<std::string>{"ADVECG_NOPE=1"}), ConfigError);
}

TEST_CASE("typed accessors and builders reject bad values") {
    RunConfig rc;
    rc.set("lr", "fast");
    CHECK_THROWS_AS(train_config(rc), ConfigError);
    rc = RunConfig();
    rc.set("mode", "sideways");
    CHECK_THROWS_AS(train_config(rc), ConfigError);
    rc = RunConfig();
    rc.set("attack_space", "both");
    CHECK_THROWS_AS(attack_config(rc), ConfigError);
    rc = RunConfig();
    rc.set("batch_size", "-4");
    CHECK_THROWS_AS(train_config(rc), ConfigError);
    rc = RunConfig();
    rc.set("n_records", "0");
    CHECK_THROWS_AS(cohort_config(rc), ConfigError);
    rc = RunConfig();
    rc.set("train_attack_steps", "3");
    CHECK(train_attack_config(rc).steps == 3);
    CHECK(attack_config(rc).steps == 20);
    CHECK_THROWS_AS(rc.set("unknown", "1"), ConfigError);
}

TEST_CASE("git blob ids match git hash-object") {
    const std::string hello = "hello\n";
    CHECK(git_blob_sha1(std::span<const unsigned char>()) == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
    CHECK(git_blob_sha1(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(hello.data()),
                                                       hello.size())) == "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST_CASE("gen-data writes the ECGD header, reruns byte-identically and rejects --n 0") {
    TempDir tmp;
    auto r = cli({"gen-data", "--n", "6", "--seed", "4", "--out", tmp / "a.ecgd", "--format", "csv"});
    REQUIRE(r.code == kExitOk);
    const std::string bytes = slurp(tmp / "a.ecgd");
    CHECK(bytes.substr(0, 4) == "ECGD");
    CHECK(u32_at(bytes, 4) == 1);
    CHECK(u32_at(bytes, 8) == 6);
    CHECK(u32_at(bytes, 12) == 12);
    CHECK(u32_at(bytes, 16) == 2048);
    CHECK(fs::exists(tmp / "a.ecgd.csv"));
    REQUIRE(cli({"gen-data", "--n", "6", "--seed", "4", "--out", tmp / "b.ecgd"}).code == kExitOk);
    CHECK(slurp(tmp / "b.ecgd") == bytes);

    const std::string manifest = slurp(tmp / "a.ecgd.manifest");
    CHECK(manifest.find("tool=advecg ") != std::string::npos);
    CHECK(manifest.find("seed=4") != std::string::npos);
    CHECK(manifest.find("artifact=a.ecgd " + git_blob_sha1(fs::path(tmp / "a.ecgd"))) != std::string::npos);
    CHECK(manifest.find("n_records=6\n") != std::string::npos);
    CHECK(manifest.find("attack_steps=20\n") != std::string::npos);

    r = cli({"gen-data", "--n", "0", "--out", tmp / "z.ecgd"});
    CHECK(r.code == kExitUsage);
    CHECK(!fs::exists(tmp / "z.ecgd"));
}

TEST_CASE("precedence is defaults, file, environment, flags") {
    TempDir tmp;
    {
        std::ofstream f(tmp / "run.cfg");
        f << "n_records=3\ndata_seed=9\npositive_rate=0.2\n";
    }
    auto n_of = [&](const std::string& file) { return u32_at(slurp(tmp / file), 8); };
    REQUIRE(cli({"gen-data", "--config", tmp / "run.cfg", "--out", tmp / "f.ecgd"}).code == kExitOk);
    CHECK(n_of("f.ecgd") == 3);
    REQUIRE(cli({"gen-data", "--config", tmp / "run.cfg", "--out", tmp / "e.ecgd"}, {"ADVECG_N_RECORDS=4"}).code ==
            kExitOk);
    CHECK(n_of("e.ecgd") == 4);
    REQUIRE(cli({"gen-data", "--config", tmp / "run.cfg", "--set", "n_records=5", "--out", tmp / "s.ecgd"},
                {"ADVECG_N_RECORDS=4"})
                .code == kExitOk);
    CHECK(n_of("s.ecgd") == 5);
    REQUIRE(cli({"gen-data", "--config", tmp / "run.cfg", "--set", "n_records=5", "--n", "2", "--out",
                 tmp / "n.ecgd"},
                {"ADVECG_N_RECORDS=4"})
                .code == kExitOk);
    CHECK(n_of("n.ecgd") == 2);
    const std::string manifest = slurp(tmp / "n.ecgd.manifest");
    CHECK(manifest.find("data_seed=9\n") != std::string::npos);
    CHECK(manifest.find("positive_rate=0.2\n") != std::string::npos);
}

TEST_CASE("usage, format and numerical failures map to exit codes") {
    TempDir tmp;
    CHECK(cli({}).code == kExitUsage);
    CHECK(cli({"frobnicate"}).code == kExitUsage);
    CHECK(cli({"gen-data", "--n", "3", "--bogus", "--out", tmp / "x"}).code == kExitUsage);
    CHECK(cli({"gen-data", "--help"}).code == kExitOk);
    {
        std::ofstream f(tmp / "bad.cfg");
        f << "n_records=3\noops=1\n";
    }
    auto r = cli({"gen-data", "--config", tmp / "bad.cfg", "--out", tmp / "x"});
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("bad.cfg:2") != std::string::npos);
    CHECK(cli({"gen-data", "--out", tmp / "x"}, {"ADVECG_N_RECORDS=many"}).code == kExitUsage);
    CHECK(cli({"eval", "--checkpoint", tmp / "missing.advm", "--dataset", tmp / "missing.ecgd", "--out", tmp / "m"})
              .code == kExitUsage);

    {
        std::ofstream f(tmp / "junk.ecgd", std::ios::binary);
        f << "ECGX not a dataset";
    }
    CHECK(cli({"pretrain-ae", "--dataset", tmp / "junk.ecgd", "--out", tmp / "ae.advm"}).code == kExitFormat);

    REQUIRE(cli({"gen-data", "--n", "12", "--positive-rate", "0.4", "--out", tmp / "d.ecgd"}).code == kExitOk);
    r = cli(std::vector<std::string>{"train", "--dataset", tmp / "d.ecgd", "--out", tmp / "m.advm", "--epochs", "1",
                                     "--set", "lr=1e300"} +
            kTinyModel);
    CHECK(r.code == kExitNumerical);
}

TEST_CASE("train is deterministic, eval reports one row per head, attack needs an autoencoder for latent") {
    TempDir tmp;
    REQUIRE(cli({"gen-data", "--n", "24", "--seed", "2", "--positive-rate", "0.4", "--out", tmp / "d.ecgd"}).code ==
            kExitOk);
    const std::vector<std::string> base{"train", "--dataset", tmp / "d.ecgd", "--mode", "plain", "--seed", "3",
                                        "--epochs", "1"};
    REQUIRE(cli(base + std::vector<std::string>{"--out", tmp / "m1.advm"} + kTinyModel).code == kExitOk);
    REQUIRE(cli(base + std::vector<std::string>{"--out", tmp / "m2.advm"} + kTinyModel).code == kExitOk);
    CHECK(slurp(tmp / "m1.advm") == slurp(tmp / "m2.advm"));
    const auto log1 = lines(tmp / "m1.advm.log.csv"), log2 = lines(tmp / "m2.advm.log.csv");
    REQUIRE(log1.size() == log2.size());
    for (std::size_t i = 0; i < log1.size(); ++i) {
        auto a = fields(log1[i]), b = fields(log2[i]);
        a.pop_back();
        b.pop_back();
        CHECK(a == b);
    }
    const std::string manifest = slurp(tmp / "m1.advm.manifest");
    CHECK(manifest.find("input.dataset=" + tmp / "d.ecgd" + " " + git_blob_sha1(fs::path(tmp / "d.ecgd"))) !=
          std::string::npos);
    CHECK(manifest.find("seed=3\n") != std::string::npos);
    CHECK(manifest.find("stem_channels=4\n") != std::string::npos);

    auto r = cli({"eval", "--checkpoint", tmp / "m1.advm", "--dataset", tmp / "d.ecgd", "--out", tmp / "ev.csv",
                  "--resamples", "50"});
    REQUIRE(r.code == kExitOk);
    const auto ev = lines(tmp / "ev.csv");
    REQUIRE(ev.size() == 4);
    CHECK(ev[0] == "metric,head,point,ci_lo,ci_hi,n,seed");
    CHECK(fields(ev[1])[1] == "le50");
    CHECK(fields(ev[2])[1] == "le40");
    CHECK(fields(ev[3])[1] == "le30");
    for (std::size_t i = 1; i < ev.size(); ++i) {
        const auto f = fields(ev[i]);
        CHECK(f[0] == "auroc");
        const double point = std::stod(f[2]), lo = std::stod(f[3]), hi = std::stod(f[4]);
        if (std::isnan(point)) {
            CHECK(std::isnan(lo));
            CHECK(std::isnan(hi));
        } else {
            CHECK(point >= lo - 1e-12);
            CHECK(point <= hi + 1e-12);
        }
        CHECK(f[5] == "24");
    }
    REQUIRE(cli({"eval", "--checkpoint", tmp / "m1.advm", "--dataset", tmp / "d.ecgd", "--out", tmp / "ev2.csv",
                 "--resamples", "50"})
                .code == kExitOk);
    CHECK(slurp(tmp / "ev.csv") == slurp(tmp / "ev2.csv"));

    r = cli({"attack", "--checkpoint", tmp / "m1.advm", "--dataset", tmp / "d.ecgd", "--space", "latent", "--out",
             tmp / "a.csv"});
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("--autoencoder") != std::string::npos);
    CHECK(!fs::exists(tmp / "a.csv"));

    r = cli({"attack", "--checkpoint", tmp / "m1.advm", "--dataset", tmp / "d.ecgd", "--space", "signal", "--steps",
             "2", "--limit", "6", "--out", tmp / "a.csv"});
    REQUIRE(r.code == kExitOk);
    const auto rows = lines(tmp / "a.csv");
    REQUIRE(rows.size() == 7);
    for (std::size_t i = 1; i < rows.size(); ++i) CHECK(fields(rows[i])[1] == "signal");
}

TEST_CASE("balanced indices and subject subsets") {
    const auto records = generate_cohort(200, 0.3, 8);
    const auto idx = balanced_indices(records, 40.0, 20, 1);
    REQUIRE(idx.size() == 20);
    CHECK(std::is_sorted(idx.begin(), idx.end()));
    CHECK(std::set<std::size_t>(idx.begin(), idx.end()).size() == idx.size());
    std::size_t pos = 0;
    for (auto i : idx) pos += records[i].lvef_percent <= 40.0f;
    CHECK(pos == 10);
    CHECK(balanced_indices(records, 40.0, 20, 1) == idx);
    CHECK(balanced_indices(records, 40.0, 0, 1).size() == records.size());

    const Split s = scarcity_subset(records, 0.1, 3);
    CHECK(subject_partition_holds(records, s));
    CHECK(s.selected.size() + s.rest.size() == records.size());
    CHECK(!s.selected.empty());
    CHECK(scarcity_subset(records, 0.1, 3).selected == s.selected);
    CHECK(scarcity_subset(records, 0.1, 4).selected != s.selected);
    CHECK(scarcity_subset(records, 1.0, 3).selected.size() == records.size());
    CHECK_THROWS_AS(scarcity_subset(records, 0.0, 3), InvalidInput);

    Split broken = s;
    for (std::size_t i = 0; i < records.size(); ++i)
        if (records[i].subject_id == records[s.selected.front()].subject_id) broken.rest.push_back(i);
    CHECK(!subject_partition_holds(records, broken));
}

TEST_CASE("metric rows cover every head and mark single-class heads") {
    const Tensor probs({4, 2}, {0.9, 0.1, 0.2, 0.3, 0.8, 0.4, 0.3, 0.2});
    const Tensor labels({4, 2}, {1, 0, 0, 0, 1, 0, 0, 0});
    const std::vector<double> th{50, 40};
    const auto rows = metric_rows("m", probs, labels, th, 50, 1);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].metric == "auroc");
    CHECK(rows[0].threshold == 50);
    CHECK(rows[0].ci.point == 1.0);
    CHECK(rows[0].n == 4);
    CHECK(std::isnan(rows[1].ci.point));
    CHECK(rows[2].metric == "auprc");
    CHECK(rows[2].ci.point == 1.0);
    CHECK(std::isnan(rows[3].ci.point));
    CHECK(metric_rows("m", probs, labels, th, 50, 1)[0].ci.lo == rows[0].ci.lo);
}

TEST_CASE("robustness counts decisions at 0.5 on the chosen head") {
    std::vector<EcgRecord> records(4);
    records[0].lvef_percent = 30;
    records[1].lvef_percent = 35;
    records[2].lvef_percent = 60;
    records[3].lvef_percent = 70;
    std::vector<AttackRecord> rows(4);
    const double clean[4] = {0.9, 0.6, 0.2, 0.4};
    const double adv[4] = {0.7, 0.3, 0.6, 0.4};
    for (std::size_t i = 0; i < 4; ++i) {
        rows[i].sample_id = i;
        rows[i].prob_clean = {0.0, clean[i]};
        rows[i].prob_adv = {0.0, adv[i]};
    }
    const Robustness r = robustness(rows, records, 40.0, 1);
    CHECK(r.n == 4);
    CHECK(r.clean_accuracy == 1.0);
    CHECK(r.adversarial_accuracy == 0.5);
    CHECK(r.drop() == 0.5);
}

TEST_CASE("ablation variants encode the two removals") {
    const auto v = ablation_variants(0.3);
    REQUIRE(v.size() == 4);
    CHECK(v[0].name == "full");
    CHECK(v[0].top_k_fraction == 0.3);
    CHECK(v[0].space == AttackSpace::latent);
    CHECK(v[1].name == "wo_uncertainty");
    CHECK(v[1].top_k_fraction == 1.0);
    CHECK(v[1].space == AttackSpace::latent);
    CHECK(v[2].name == "wo_on_manifold");
    CHECK(v[2].top_k_fraction == 0.3);
    CHECK(v[2].space == AttackSpace::signal);
    CHECK(v[3].mode == TrainMode::plain);
    for (std::size_t i = 0; i < 3; ++i) CHECK(v[i].mode == TrainMode::adversarial);
}

TEST_CASE("scarcity, ablate and discrepancy produce their report shapes") {
    TempDir tmp;
    REQUIRE(cli({"gen-data", "--n", "60", "--seed", "1", "--positive-rate", "0.4", "--out", tmp / "train.ecgd"})
                .code == kExitOk);
    REQUIRE(cli({"gen-data", "--n", "30", "--seed", "2", "--positive-rate", "0.4", "--first-subject-id", "5000",
                 "--out", tmp / "test.ecgd"})
                .code == kExitOk);
    REQUIRE(cli(std::vector<std::string>{"pretrain-ae", "--dataset", tmp / "train.ecgd", "--epochs", "1", "--out",
                                         tmp / "ae.advm"} +
                kTinyAe)
                .code == kExitOk);
    const std::vector<std::string> common =
        std::vector<std::string>{"--dataset",          tmp / "train.ecgd",  "--test-dataset",
                                 tmp / "test.ecgd",    "--autoencoder",     tmp / "ae.advm",
                                 "--set",              "max_epochs=1",      "--set",
                                 "attack_steps=2",     "--set",             "attack_limit=6",
                                 "--set",              "bootstrap_resamples=20", "--set",
                                 "subset_fraction=0.5", "--set",            "val_fraction=0.2"} +
        kTinyModel;

    auto r = cli(std::vector<std::string>{"scarcity", "--out-dir", tmp / "sc", "--seeds", "1"} + common);
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    const auto sc = lines(tmp / "sc/scarcity.csv");
    REQUIRE(sc.size() == 1 + 4 * 3 * 2);
    CHECK(sc[0] == "model,metric,head,point,ci_lo,ci_hi,n,seed");
    std::map<std::string, std::size_t> per_model;
    for (std::size_t i = 1; i < sc.size(); ++i) {
        const auto f = fields(sc[i]);
        ++per_model[f[0]];
        CHECK(f[6] == "30");
    }
    CHECK(per_model == std::map<std::string, std::size_t>{
                           {"plain_subset", 6}, {"augment_subset", 6}, {"adversarial_subset", 6}, {"plain_full", 6}});
    CHECK(lines(tmp / "sc/robustness.csv").size() == 3);
    CHECK(fs::exists(tmp / "sc/scarcity.csv.manifest"));

    const auto audit = lines(tmp / "sc/seed_1/subset_audit.csv");
    CHECK(audit[0] == "subject_id,subset_records,complement_records");
    for (std::size_t i = 1; i < audit.size(); ++i) {
        const auto f = fields(audit[i]);
        const int in = std::stoi(f[1]), out = std::stoi(f[2]);
        CHECK((in == 0) != (out == 0));
    }

    r = cli(std::vector<std::string>{"ablate", "--out-dir", tmp / "ab", "--seeds", "1"} + common);
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    const auto grid = lines(tmp / "ab/ablation.csv");
    REQUIRE(grid.size() == 5);
    CHECK(grid[0] ==
          "variant,mode,top_k_fraction,space,auroc_le50,auroc_le40,auroc_le30,auprc_le50,auprc_le40,auprc_le30");
    for (std::size_t i = 1; i < grid.size(); ++i) CHECK(fields(grid[i]).size() == 10);

    const auto variants = lines(tmp / "ab/variants.csv");
    REQUIRE(variants.size() == 5);
    const auto wo_u = fields(variants[2]);
    CHECK(wo_u[0] == "wo_uncertainty");
    CHECK(wo_u[7] == wo_u[5]);
    CHECK(wo_u[8] == wo_u[5]);
    const auto wo_m = lines(tmp / "ab/attack_wo_on_manifold.csv");
    REQUIRE(wo_m.size() == 7);
    for (std::size_t i = 1; i < wo_m.size(); ++i) CHECK(fields(wo_m[i])[1] == "signal");
    const auto u_log = lines(tmp / "ab/wo_uncertainty_log.csv");
    REQUIRE(u_log.size() == 2);
    CHECK(fields(u_log[1])[6] == wo_u[5]);

    r = cli({"discrepancy", "--dataset", tmp / "train.ecgd", "--test-dataset", tmp / "test.ecgd", "--autoencoder",
             tmp / "ae.advm", "--checkpoint", tmp / "ab/full.advm", "--limit", "10", "--set", "attack_steps=2",
             "--out", tmp / "dis.csv"});
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    const auto dis = lines(tmp / "dis.csv");
    REQUIRE(dis.size() == 4);
    CHECK(fields(dis[1])[0] == "org");
    CHECK(fields(dis[2])[0] == "adv");
    CHECK(fields(dis[3])[0] == "combined");
}
