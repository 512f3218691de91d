#include <CLI11.hpp>

#include <cstdio>
#include <deque>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>

#include "advecg/checkpoint.hpp"
#include "advecg/cli.hpp"
#include "advecg/config.hpp"
#include "advecg/errors.hpp"
#include "advecg/experiments.hpp"

namespace advecg {

namespace {

struct Binding {
    std::string key;
    std::string value;
    CLI::Option* option = nullptr;
};

struct Session {
    RunConfig config;
    std::string command_line;
    std::ostream* out = nullptr;
    std::ostream* err = nullptr;

    void note(const std::string& msg) const { *err << msg << '\n'; }
};

struct Command {
    CLI::App* app = nullptr;
    std::string config_file;
    std::vector<std::string> sets;
    std::deque<Binding> bindings;
    std::function<void(Session&)> run;

    void bind(const std::string& flag, const std::string& key, const std::string& help) {
        bindings.push_back({key, {}, nullptr});
        bindings.back().option = app->add_option(flag, bindings.back().value, help);
    }
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = i;
    return v;
}

std::filesystem::path require_file(const RunConfig& rc, const std::string& key) {
    if (!rc.has(key)) throw ConfigError("missing required input '" + key + "'");
    std::filesystem::path p = rc.get(key);
    if (!std::filesystem::is_regular_file(p)) throw ConfigError("input '" + key + "' not found: " + p.string());
    return p;
}

std::filesystem::path with_suffix(const std::filesystem::path& p, const std::string& suffix) {
    std::filesystem::path out = p;
    out += suffix;
    return out;
}

void ensure_parent(const std::filesystem::path& p) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
}

std::vector<EcgRecord> load_records(const std::filesystem::path& p) { return read_dataset(p); }

void cmd_gen_data(Session& s, const std::filesystem::path& out, const std::string& format) {
    const CohortConfig cfg = cohort_config(s.config);
    auto records = generate_cohort(cfg);
    for (auto& r : records) r = highpass(r);
    ensure_parent(out);
    write_dataset(out, records);
    write_manifest(out, s.command_line, s.config, cfg.seed, {});
    if (format == "csv") {
        const auto csv = with_suffix(out, ".csv");
        write_dataset_csv(csv, records);
        write_manifest(csv, s.command_line, s.config, cfg.seed, {});
    }
    std::size_t pos = 0;
    for (const auto& r : records) pos += r.lvef_percent <= 40.0f;
    *s.out << "wrote " << out.string() << " n_records=" << records.size() << " le40=" << pos << '\n';
}

void cmd_pretrain_ae(Session& s, const std::filesystem::path& out) {
    const auto data = require_file(s.config, "dataset");
    const auto records = load_records(data);
    const auto cfg = autoencoder_config(s.config);
    const auto tcfg = autoencoder_train_config(s.config);
    const auto idx = all_indices(records.size());
    s.note("pretraining autoencoder on " + std::to_string(records.size()) + " records");
    const auto result = pretrain_autoencoder(records, idx, cfg, tcfg);
    ensure_parent(out);
    save_autoencoder(out, result.model);
    std::vector<ManifestInput> inputs{{"dataset", data, {}}};
    hash_inputs(inputs);
    write_manifest(out, s.command_line, s.config, tcfg.seed, inputs);
    const auto log = with_suffix(out, ".loss.csv");
    {
        std::ofstream f(log);
        if (!f) throw std::runtime_error("cannot open " + log.string() + " for writing");
        f << "epoch,reconstruction_mse\n";
        for (std::size_t e = 0; e < result.epoch_loss.size(); ++e)
            f << e + 1 << ',' << fmt("%.9g", result.epoch_loss[e]) << '\n';
    }
    write_manifest(log, s.command_line, s.config, tcfg.seed, inputs);
    const auto err = reconstruction_error(result.model, records, idx);
    *s.out << "wrote " << out.string() << " mse=" << fmt("%.6g", err.model_mse)
           << " zero_mse=" << fmt("%.6g", err.zero_mse) << " encoder=" << result.model.encoder_checksum() << '\n';
}

std::optional<Autoencoder> optional_autoencoder(const RunConfig& rc, bool needed, std::vector<ManifestInput>& inputs,
                                                const std::string& why) {
    if (!rc.has("autoencoder")) {
        if (needed) throw InvalidInput(why + " requires --autoencoder");
        return std::nullopt;
    }
    const auto p = require_file(rc, "autoencoder");
    inputs.push_back({"autoencoder", p, {}});
    return load_autoencoder(p);
}

void cmd_train(Session& s, const std::filesystem::path& out, std::string log_path, const std::string& state_path) {
    const auto data = require_file(s.config, "dataset");
    const TrainConfig cfg = train_config(s.config);
    std::vector<ManifestInput> inputs{{"dataset", data, {}}};
    const bool needs_ae = cfg.mode == TrainMode::adversarial && cfg.attack.space == AttackSpace::latent;
    auto ae = optional_autoencoder(s.config, needs_ae, inputs, "latent adversarial training");
    hash_inputs(inputs);
    const auto records = load_records(data);
    const auto idx = all_indices(records.size());
    auto result = train(records, idx, cfg, ae ? &*ae : nullptr, [&](const EpochLog& e) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "epoch %zu train %.4f val %.4f du %zu (%.1fs)", e.epoch, e.train_loss,
                      e.val_loss, e.du_size, e.wall_time_s);
        s.note(buf);
    });
    ensure_parent(out);
    save_classifier(out, result.model);
    write_manifest(out, s.command_line, s.config, cfg.seed, inputs);
    if (log_path.empty()) log_path = with_suffix(out, ".log.csv").string();
    write_training_log(log_path, result.log, cfg.model.thresholds);
    write_manifest(log_path, s.command_line, s.config, cfg.seed, inputs);
    if (!state_path.empty()) {
        save_train_state(state_path, result.final_state);
        write_manifest(state_path, s.command_line, s.config, cfg.seed, inputs);
    }
    *s.out << "wrote " << out.string() << " best_epoch=" << result.best_epoch << " epochs=" << result.log.size()
           << '\n';
}

void cmd_attack(Session& s, const std::filesystem::path& out) {
    const auto ckpt = require_file(s.config, "checkpoint");
    const auto data = require_file(s.config, "dataset");
    const AttackConfig cfg = attack_config(s.config);
    std::vector<ManifestInput> inputs{{"checkpoint", ckpt, {}}, {"dataset", data, {}}};
    auto ae = optional_autoencoder(s.config, cfg.space == AttackSpace::latent, inputs, "--space latent");
    hash_inputs(inputs);
    const Classifier model = load_classifier(ckpt);
    const auto records = load_records(data);
    const std::uint64_t seed = s.config.count("seed");
    const auto idx = balanced_indices(records, 40.0, s.config.count("attack_limit"), seed);
    s.note("attacking " + std::to_string(idx.size()) + " records in " + to_string(cfg.space) + " space");
    const auto outcome = attack_records({model, ae ? &*ae : nullptr}, records, idx, cfg);
    ensure_parent(out);
    write_attack_csv(out, outcome.records, model.config().thresholds);
    write_manifest(out, s.command_line, s.config, seed, inputs);
    const auto& th = model.config().thresholds;
    *s.out << "wrote " << out.string() << " n=" << outcome.records.size();
    for (std::size_t h = 0; h < th.size(); ++h)
        *s.out << " flip_le" << fmt("%g", th[h]) << "=" << fmt("%.4f", flip_rate(outcome.records, h));
    *s.out << '\n';
}

void cmd_eval(Session& s, const std::filesystem::path& out, const std::string& metric) {
    const auto ckpt = require_file(s.config, "checkpoint");
    const auto data = require_file(s.config, "dataset");
    if (metric != "auroc" && metric != "auprc" && metric != "all")
        throw ConfigError("--metric must be auroc, auprc or all");
    std::vector<ManifestInput> inputs{{"checkpoint", ckpt, {}}, {"dataset", data, {}}};
    hash_inputs(inputs);
    const Classifier model = load_classifier(ckpt);
    const auto records = load_records(data);
    const auto& th = model.config().thresholds;
    const std::uint64_t seed = s.config.count("seed");
    const Tensor probs = model.predict(to_batch(records, all_indices(records.size())));
    auto rows = metric_rows("model", probs, label_matrix(records, th), th, s.config.count("bootstrap_resamples"), seed);
    if (metric != "all") std::erase_if(rows, [&](const MetricRow& r) { return r.metric != metric; });
    ensure_parent(out);
    write_metrics_csv(out, rows);
    write_manifest(out, s.command_line, s.config, seed, inputs);
    for (const auto& r : rows)
        *s.out << r.metric << " le" << fmt("%g", r.threshold) << " " << fmt("%.4f", r.ci.point) << " ["
               << fmt("%.4f", r.ci.lo) << ", " << fmt("%.4f", r.ci.hi) << "]\n";
}

void cmd_discrepancy(Session& s, const std::filesystem::path& out) {
    const auto train_p = require_file(s.config, "dataset");
    const auto test_p = require_file(s.config, "test_dataset");
    const auto ckpt = require_file(s.config, "checkpoint");
    const auto ae_p = require_file(s.config, "autoencoder");
    std::vector<ManifestInput> inputs{
        {"dataset", train_p, {}}, {"test_dataset", test_p, {}}, {"checkpoint", ckpt, {}}, {"autoencoder", ae_p, {}}};
    hash_inputs(inputs);
    const Autoencoder ae = load_autoencoder(ae_p);
    const Classifier model = load_classifier(ckpt);
    const auto train_set = load_records(train_p);
    const auto test_set = load_records(test_p);
    const std::uint64_t seed = s.config.count("seed");
    MmdOptions mo;
    mo.max_points = s.config.count("mmd_max_points");
    mo.seed = seed;
    const auto rows = run_discrepancy(train_set, test_set, model, ae, attack_config(s.config), mo,
                                      s.config.count("attack_limit"), seed);
    ensure_parent(out);
    write_discrepancy_csv(out, rows, ae.encoder_checksum(), mo);
    write_manifest(out, s.command_line, s.config, seed, inputs);
    for (const auto& r : rows)
        *s.out << r.variant << " center_pos=" << fmt("%.4g", r.center_pos) << " center_neg="
               << fmt("%.4g", r.center_neg) << " mmd=" << fmt("%.4g", r.mmd) << " jsd=" << fmt("%.4g", r.jsd)
               << " kld=" << fmt("%.4g", r.kld) << '\n';
}

struct ExperimentInputs {
    std::vector<EcgRecord> train_set, test_set;
    std::optional<Autoencoder> ae;
    ExperimentContext ctx;
};

ExperimentInputs experiment_inputs(Session& s, bool ae_required) {
    ExperimentInputs in;
    const auto train_p = require_file(s.config, "dataset");
    const auto test_p = require_file(s.config, "test_dataset");
    in.ctx.inputs = {{"dataset", train_p, {}}, {"test_dataset", test_p, {}}};
    in.ae = optional_autoencoder(s.config, ae_required, in.ctx.inputs, "this experiment");
    hash_inputs(in.ctx.inputs);
    in.train_set = load_records(train_p);
    in.test_set = load_records(test_p);
    in.ctx.config = s.config;
    in.ctx.out_dir = s.config.get("out_dir");
    in.ctx.command = s.command_line;
    in.ctx.progress = [&s](const std::string& m) { s.note(m); };
    std::filesystem::create_directories(in.ctx.out_dir);
    return in;
}

void cmd_scarcity(Session& s) {
    const TrainConfig base = train_config(s.config);
    const AttackConfig eval_attack = attack_config(s.config);
    auto in = experiment_inputs(s, base.attack.space == AttackSpace::latent ||
                                       eval_attack.space == AttackSpace::latent);
    const auto report = run_scarcity(in.train_set, in.test_set, in.ae ? &*in.ae : nullptr, in.ctx);
    const auto& dir = in.ctx.out_dir;
    const auto seed = s.config.counts("seeds").front();
    write_metrics_csv(dir / "scarcity.csv", report.metrics, true);
    write_manifest(dir / "scarcity.csv", s.command_line, s.config, seed, in.ctx.inputs);
    write_robustness_csv(dir / "robustness.csv", report.robustness);
    write_manifest(dir / "robustness.csv", s.command_line, s.config, seed, in.ctx.inputs);
    write_scarcity_summary(dir / "summary.csv", report, base.model.thresholds);
    write_manifest(dir / "summary.csv", s.command_line, s.config, seed, in.ctx.inputs);
    std::ifstream summary(dir / "summary.csv");
    *s.out << summary.rdbuf();
}

void cmd_ablate(Session& s) {
    auto in = experiment_inputs(s, true);
    const auto results = run_ablation(in.train_set, in.test_set, &*in.ae, in.ctx);
    const auto& dir = in.ctx.out_dir;
    const auto seed = s.config.counts("seeds").front();
    const auto& th = train_config(s.config).model.thresholds;
    write_ablation_grid(dir / "ablation.csv", results, th);
    write_manifest(dir / "ablation.csv", s.command_line, s.config, seed, in.ctx.inputs);
    {
        std::ofstream f(dir / "variants.csv");
        if (!f) throw std::runtime_error("cannot write variants.csv");
        f << "variant,mode,top_k_fraction,train_space,attack_space,train_records,epochs,du_min,du_max\n";
        for (const auto& r : results) {
            std::size_t lo = SIZE_MAX, hi = 0;
            for (const auto& e : r.log) {
                lo = std::min(lo, e.du_size);
                hi = std::max(hi, e.du_size);
            }
            if (r.log.empty()) lo = 0;
            f << r.variant.name << ',' << to_string(r.variant.mode) << ',' << fmt("%.9g", r.variant.top_k_fraction)
              << ',' << (r.variant.mode == TrainMode::plain ? "none" : to_string(r.variant.space)) << ','
              << (r.attacks.empty() ? "none" : to_string(r.attacks.front().space)) << ',' << r.train_records << ','
              << r.log.size() << ','
              << lo << ',' << hi << '\n';
        }
    }
    write_manifest(dir / "variants.csv", s.command_line, s.config, seed, in.ctx.inputs);
    std::ifstream grid(dir / "ablation.csv");
    *s.out << grid.rdbuf();
}

std::string join_args(const std::vector<std::string>& args) {
    std::string out;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (i) out += ' ';
        out += args[i];
    }
    return out;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, const std::vector<std::string>& env, std::ostream& out,
            std::ostream& err) {
    CLI::App app{"Uncertainty-aware on-manifold adversarial training for multichannel ECG classifiers", "advecg"};
    app.set_version_flag("--version", "advecg " + tool_version());
    app.require_subcommand(1);

    Session session;
    session.out = &out;
    session.err = &err;
    session.command_line = join_args(args);

    std::deque<Command> commands;
    auto add = [&](const std::string& name, const std::string& help) -> Command& {
        commands.emplace_back();
        Command& c = commands.back();
        c.app = app.add_subcommand(name, help);
        c.app->add_option("--config", c.config_file, "key=value config file")->check(CLI::ExistingFile);
        c.app->add_option("--set", c.sets, "override a config key (key=value), repeatable");
        return c;
    };

    std::string out_path, format = "ecgd", log_path, state_path, metric = "auroc";

    auto& gen = add("gen-data", "generate a synthetic cohort in the ECGD format");
    gen.bind("--n", "n_records", "number of records");
    gen.bind("--seed", "data_seed", "generator seed");
    gen.bind("--positive-rate", "positive_rate", "P(LVEF <= 50)");
    gen.bind("--first-subject-id", "first_subject_id", "first subject id");
    gen.app->add_option("--out", out_path, "output dataset")->required();
    gen.app->add_option("--format", format, "ecgd, or csv to also export <out>.csv")
        ->check(CLI::IsMember({"ecgd", "csv"}));
    gen.run = [&](Session& s) { cmd_gen_data(s, out_path, format); };

    auto& pre = add("pretrain-ae", "pretrain the convolutional autoencoder");
    pre.bind("--dataset", "dataset", "training dataset");
    pre.bind("--epochs", "ae_epochs", "epochs");
    pre.bind("--lr", "ae_lr", "learning rate");
    pre.bind("--seed", "ae_seed", "seed");
    pre.app->add_option("--out", out_path, "output checkpoint")->required();
    pre.run = [&](Session& s) { cmd_pretrain_ae(s, out_path); };

    auto& tr = add("train", "train a classifier");
    tr.bind("--dataset", "dataset", "training dataset");
    tr.bind("--autoencoder", "autoencoder", "autoencoder checkpoint for latent attacks");
    tr.bind("--mode", "mode", "plain, augment or adversarial");
    tr.bind("--loss-form", "loss_form", "combined or eq11-only");
    tr.bind("--seed", "seed", "training seed");
    tr.bind("--epochs", "max_epochs", "epoch cap");
    tr.bind("--top-k", "top_k_fraction", "fraction of uncertain samples attacked");
    tr.bind("--space", "attack_space", "latent or signal");
    tr.app->add_option("--out", out_path, "output checkpoint")->required();
    tr.app->add_option("--log", log_path, "training log CSV (default <out>.log.csv)");
    tr.app->add_option("--state", state_path, "also save the final optimizer state");
    tr.run = [&](Session& s) { cmd_train(s, out_path, log_path, state_path); };

    auto& atk = add("attack", "attack a trained classifier and report per-sample outcomes");
    atk.bind("--checkpoint", "checkpoint", "classifier checkpoint");
    atk.bind("--dataset", "dataset", "records to attack");
    atk.bind("--autoencoder", "autoencoder", "autoencoder checkpoint (latent space)");
    atk.bind("--space", "attack_space", "latent or signal");
    atk.bind("--steps", "attack_steps", "PGD steps");
    atk.bind("--step-size", "attack_step_size", "PGD step size");
    atk.bind("--epsilon", "attack_epsilon", "infinity-norm budget");
    atk.bind("--lambda", "attack_lambda", "cosine regularizer weight");
    atk.bind("--sign", "regularizer_sign", "reward-similarity or literal-eq2");
    atk.bind("--limit", "attack_limit", "balanced subset size (0: all)");
    atk.bind("--seed", "seed", "subset seed");
    atk.app->add_option("--out", out_path, "attack CSV")->required();
    atk.run = [&](Session& s) { cmd_attack(s, out_path); };

    auto& ev = add("eval", "score a classifier with bootstrap intervals");
    ev.bind("--checkpoint", "checkpoint", "classifier checkpoint");
    ev.bind("--dataset", "dataset", "evaluation dataset");
    ev.bind("--resamples", "bootstrap_resamples", "bootstrap resamples");
    ev.bind("--seed", "seed", "bootstrap seed");
    ev.app->add_option("--metric", metric, "auroc, auprc or all");
    ev.app->add_option("--out", out_path, "metrics CSV")->required();
    ev.run = [&](Session& s) { cmd_eval(s, out_path, metric); };

    auto& dis = add("discrepancy", "latent discrepancy of clean and adversarial training data against the test set");
    dis.bind("--dataset", "dataset", "training dataset");
    dis.bind("--test-dataset", "test_dataset", "test dataset");
    dis.bind("--checkpoint", "checkpoint", "classifier that generates adversarial examples");
    dis.bind("--autoencoder", "autoencoder", "autoencoder checkpoint");
    dis.bind("--limit", "attack_limit", "records per set (0: all)");
    dis.bind("--mmd-max-points", "mmd_max_points", "MMD subsample size");
    dis.bind("--seed", "seed", "seed");
    dis.app->add_option("--out", out_path, "discrepancy CSV")->required();
    dis.run = [&](Session& s) { cmd_discrepancy(s, out_path); };

    auto& sc = add("scarcity", "subset-scarcity comparison over seeds");
    sc.bind("--dataset", "dataset", "training dataset");
    sc.bind("--test-dataset", "test_dataset", "test dataset");
    sc.bind("--autoencoder", "autoencoder", "autoencoder checkpoint");
    sc.bind("--out-dir", "out_dir", "report directory");
    sc.bind("--seeds", "seeds", "comma-separated seeds");
    sc.run = [&](Session& s) { cmd_scarcity(s); };

    auto& ab = add("ablate", "ablation of uncertainty selection and on-manifold perturbation");
    ab.bind("--dataset", "dataset", "training dataset");
    ab.bind("--test-dataset", "test_dataset", "test dataset");
    ab.bind("--autoencoder", "autoencoder", "autoencoder checkpoint");
    ab.bind("--out-dir", "out_dir", "report directory");
    ab.bind("--seeds", "seeds", "seed (the first is used)");
    ab.run = [&](Session& s) { cmd_ablate(s); };

    std::vector<const char*> argv{"advecg"};
    for (const auto& a : args) argv.push_back(a.c_str());

    try {
        try {
            app.parse(static_cast<int>(argv.size()), argv.data());
        } catch (const CLI::ParseError& e) {
            const int code = app.exit(e, out, err);
            return code == 0 ? kExitOk : kExitUsage;
        }
        for (auto& c : commands) {
            if (!c.app->parsed()) continue;
            if (!c.config_file.empty()) session.config.load_file(c.config_file);
            session.config.load_environment(env);
            for (const auto& kv : c.sets) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
                session.config.set(kv.substr(0, eq), kv.substr(eq + 1), "--set");
            }
            for (const auto& b : c.bindings)
                if (b.option->count() > 0) session.config.set(b.key, b.value, b.option->get_name());
            c.run(session);
        }
        return kExitOk;
    } catch (const ConfigError& e) {
        err << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const InvalidInput& e) {
        err << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const FormatError& e) {
        err << "format error: " << e.what() << '\n';
        return kExitFormat;
    } catch (const ShapeError& e) {
        err << "format error: " << e.what() << '\n';
        return kExitFormat;
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
}

}  // namespace advecg
