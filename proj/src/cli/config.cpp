#include "advecg/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace advecg {

namespace {

constexpr ConfigKey kKeys[] = {
    {"dataset", "", "training dataset (ECGD)"},
    {"test_dataset", "", "held-out test dataset (ECGD)"},
    {"autoencoder", "", "autoencoder checkpoint (ADVM)"},
    {"checkpoint", "", "classifier checkpoint (ADVM)"},
    {"out_dir", "out", "report directory"},

    {"n_records", "4000", "records generated by gen-data"},
    {"positive_rate", "0.069", "P(LVEF <= 50) of generated records"},
    {"data_seed", "1", "cohort generator seed"},
    {"first_subject_id", "0", "first subject id of a generated cohort"},

    {"stem_channels", "16", "classifier stem width"},
    {"block_channels", "16,32,64,128", "classifier block widths"},
    {"kernel_size", "17", "classifier kernel size"},
    {"dropout", "0.2", "dropout rate before the output layer"},
    {"bn_momentum", "0.1", "batch-norm running-estimate momentum"},
    {"thresholds", "50,40,30", "LVEF thresholds of the output heads"},

    {"lr", "0.001", "Adam learning rate"},
    {"beta1", "0.9", "Adam beta1"},
    {"beta2", "0.999", "Adam beta2"},
    {"adam_eps", "1e-8", "Adam epsilon"},
    {"batch_size", "64", "mini-batch size"},
    {"max_epochs", "100", "epoch cap"},
    {"patience", "10", "early-stopping patience in epochs"},
    {"top_k_fraction", "0.3", "fraction of most uncertain samples attacked per epoch"},
    {"val_fraction", "0.1", "subject-level validation fraction"},
    {"mode", "plain", "plain, augment or adversarial"},
    {"loss_form", "combined", "combined or eq11-only"},
    {"noise_amplitude", "0.05", "band-noise RMS per band in mV"},
    {"seed", "0", "training seed"},

    {"attack_steps", "20", "PGD steps"},
    {"attack_step_size", "0.001", "PGD step size"},
    {"attack_epsilon", "0.5", "infinity-norm budget"},
    {"attack_lambda", "0.1", "cosine regularizer weight"},
    {"regularizer_sign", "reward-similarity", "reward-similarity or literal-eq2"},
    {"attack_space", "latent", "latent or signal"},
    {"kernel_sizes", "5,7,11,15,19", "Gaussian smoothing kernel sizes"},
    {"kernel_sigmas", "1,3,5,7,10", "Gaussian smoothing kernel widths"},
    {"train_attack_steps", "", "PGD steps inside adversarial training (empty: attack_steps)"},
    {"train_attack_step_size", "", "PGD step size inside adversarial training (empty: attack_step_size)"},

    {"ae_channels", "16,32,32", "autoencoder encoder widths"},
    {"ae_kernel_size", "9", "autoencoder kernel size"},
    {"ae_stride", "4", "autoencoder downsampling stride"},
    {"latent_dim", "256", "latent code size"},
    {"ae_epochs", "20", "autoencoder pretraining epochs"},
    {"ae_lr", "0.001", "autoencoder learning rate"},
    {"ae_batch_size", "32", "autoencoder batch size"},
    {"ae_seed", "0", "autoencoder initialization and shuffle seed"},

    {"subset_fraction", "0.1", "subject-level training subset for scarcity and ablation runs"},
    {"seeds", "1,2,3,4,5", "experiment seeds"},
    {"bootstrap_resamples", "1000", "bootstrap resamples per interval"},
    {"attack_limit", "0", "test records attacked in robustness evaluation (0: all)"},
    {"mmd_max_points", "1000", "MMD subsample size per set"},
    {"full_baseline", "true", "scarcity also trains plain on the full training set"},
};

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

double parse_real(const std::string& key, const std::string& text) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(v))
        throw ConfigError("key '" + key + "': expected a number, got '" + text + "'");
    return v;
}

long long parse_integer(const std::string& key, const std::string& text) {
    long long v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size())
        throw ConfigError("key '" + key + "': expected an integer, got '" + text + "'");
    return v;
}

std::size_t parse_count(const std::string& key, const std::string& text) {
    const long long v = parse_integer(key, text);
    if (v < 0) throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + text + "'");
    return static_cast<std::size_t>(v);
}

bool known(const std::string& key) {
    return std::any_of(std::begin(kKeys), std::end(kKeys), [&](const ConfigKey& k) { return key == k.name; });
}

template <typename F>
auto converted(const std::string& key, F&& f) {
    try {
        return f();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError("key '" + key + "': " + e.what());
    }
}

}  // namespace

std::span<const ConfigKey> config_keys() { return kKeys; }

RunConfig::RunConfig() {
    for (const auto& k : kKeys) values_[k.name] = k.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value, const std::string& origin) {
    if (!known(key)) throw ConfigError((origin.empty() ? "" : origin + ": ") + "unknown config key '" + key + "'");
    values_[key] = trim(value);
}

const std::string& RunConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
}

bool RunConfig::has(const std::string& key) const { return !get(key).empty(); }

long long RunConfig::integer(const std::string& key) const { return parse_integer(key, get(key)); }
std::size_t RunConfig::count(const std::string& key) const { return parse_count(key, get(key)); }
double RunConfig::real(const std::string& key) const { return parse_real(key, get(key)); }

bool RunConfig::flag(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("key '" + key + "': expected true or false, got '" + v + "'");
}

std::vector<double> RunConfig::reals(const std::string& key) const {
    std::vector<double> out;
    for (const auto& item : split_list(get(key))) out.push_back(parse_real(key, item));
    return out;
}

std::vector<std::size_t> RunConfig::counts(const std::string& key) const {
    std::vector<std::size_t> out;
    for (const auto& item : split_list(get(key))) out.push_back(parse_count(key, item));
    return out;
}

void RunConfig::load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    load_text(ss.str(), path.string());
}

void RunConfig::load_text(const std::string& text, const std::string& source) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string where = source + ":" + std::to_string(lineno);
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected key=value");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError(where + ": empty key");
        set(key, line.substr(eq + 1), where);
    }
}

void RunConfig::load_environment(char** envp) {
    std::vector<std::string> entries;
    for (char** e = envp; e && *e; ++e) entries.emplace_back(*e);
    load_environment(entries);
}

void RunConfig::load_environment(const std::vector<std::string>& entries) {
    const std::string prefix = kEnvPrefix;
    for (const auto& entry : entries) {
        if (entry.rfind(prefix, 0) != 0) continue;
        const auto eq = entry.find('=');
        if (eq == std::string::npos) continue;
        std::string key = entry.substr(prefix.size(), eq - prefix.size());
        std::transform(key.begin(), key.end(), key.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        set(key, entry.substr(eq + 1), "environment " + entry.substr(0, eq));
    }
}

std::string RunConfig::snapshot() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
}

ClassifierConfig classifier_config(const RunConfig& rc) {
    ClassifierConfig c;
    c.stem_channels = rc.count("stem_channels");
    c.block_channels = rc.counts("block_channels");
    c.kernel_size = rc.count("kernel_size");
    c.dropout_rate = rc.real("dropout");
    c.bn_momentum = rc.real("bn_momentum");
    c.thresholds = rc.reals("thresholds");
    converted("block_channels", [&] { c.validate(); return 0; });
    return c;
}

AutoencoderConfig autoencoder_config(const RunConfig& rc) {
    AutoencoderConfig c;
    c.channels = rc.counts("ae_channels");
    c.kernel_size = rc.count("ae_kernel_size");
    c.stride = rc.count("ae_stride");
    c.latent_dim = rc.count("latent_dim");
    converted("latent_dim", [&] { c.validate(); return 0; });
    return c;
}

AutoencoderTrainConfig autoencoder_train_config(const RunConfig& rc) {
    AutoencoderTrainConfig c;
    c.epochs = rc.count("ae_epochs");
    c.lr = rc.real("ae_lr");
    c.batch_size = rc.count("ae_batch_size");
    c.seed = rc.count("ae_seed");
    if (c.batch_size == 0) throw ConfigError("key 'ae_batch_size': must be positive");
    return c;
}

AttackConfig attack_config(const RunConfig& rc) {
    AttackConfig c;
    c.steps = rc.count("attack_steps");
    c.step_size = rc.real("attack_step_size");
    c.epsilon = rc.real("attack_epsilon");
    c.lambda = rc.real("attack_lambda");
    c.sign = converted("regularizer_sign", [&] { return parse_regularizer_sign(rc.get("regularizer_sign")); });
    c.space = converted("attack_space", [&] { return parse_attack_space(rc.get("attack_space")); });
    const auto sizes = rc.counts("kernel_sizes");
    const auto sigmas = rc.reals("kernel_sigmas");
    c.bank = converted("kernel_sizes", [&] { return gaussian_kernels(sizes, sigmas); });
    converted("attack_steps", [&] { c.validate(); return 0; });
    return c;
}

AttackConfig train_attack_config(const RunConfig& rc) {
    AttackConfig c = attack_config(rc);
    if (rc.has("train_attack_steps")) c.steps = rc.count("train_attack_steps");
    if (rc.has("train_attack_step_size")) c.step_size = rc.real("train_attack_step_size");
    converted("train_attack_steps", [&] { c.validate(); return 0; });
    return c;
}

TrainConfig train_config(const RunConfig& rc) {
    TrainConfig c;
    c.model = classifier_config(rc);
    c.adam.lr = rc.real("lr");
    c.adam.beta1 = rc.real("beta1");
    c.adam.beta2 = rc.real("beta2");
    c.adam.eps = rc.real("adam_eps");
    c.batch_size = rc.count("batch_size");
    c.max_epochs = rc.count("max_epochs");
    c.patience = rc.count("patience");
    c.top_k_fraction = rc.real("top_k_fraction");
    c.val_fraction = rc.real("val_fraction");
    c.attack = train_attack_config(rc);
    c.mode = converted("mode", [&] { return parse_train_mode(rc.get("mode")); });
    c.loss_form = converted("loss_form", [&] { return parse_loss_form(rc.get("loss_form")); });
    c.noise_amplitude = rc.real("noise_amplitude");
    c.seed = rc.count("seed");
    converted("mode", [&] { c.validate(); return 0; });
    return c;
}

CohortConfig cohort_config(const RunConfig& rc) {
    CohortConfig c;
    c.n_records = rc.count("n_records");
    c.positive_rate = rc.real("positive_rate");
    c.seed = rc.count("data_seed");
    const auto first = rc.count("first_subject_id");
    if (first > 0xffffffffULL) throw ConfigError("key 'first_subject_id': exceeds u32");
    c.first_subject_id = static_cast<std::uint32_t>(first);
    if (c.n_records == 0) throw ConfigError("key 'n_records': must be positive");
    if (!(c.positive_rate > 0.0 && c.positive_rate < 1.0))
        throw ConfigError("key 'positive_rate': must lie in (0, 1)");
    return c;
}

}  // namespace advecg
