#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "advecg/attack.hpp"
#include "advecg/models.hpp"
#include "advecg/training.hpp"

namespace advecg {

// Thrown for malformed configuration: unknown keys, unparsable values, bad flags.
class ConfigError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

inline constexpr const char* kEnvPrefix = "ADVECG_";

struct ConfigKey {
    const char* name;
    const char* default_value;
    const char* help;
};

// Every recognised key with its default.
std::span<const ConfigKey> config_keys();

// Flat key=value run configuration. Later sources override earlier ones:
// defaults, config file, ADVECG_* environment, command-line --set.
class RunConfig {
   public:
    RunConfig();

    void set(const std::string& key, const std::string& value, const std::string& origin = "");
    const std::string& get(const std::string& key) const;
    bool has(const std::string& key) const;

    std::string str(const std::string& key) const { return get(key); }
    long long integer(const std::string& key) const;
    std::size_t count(const std::string& key) const;
    double real(const std::string& key) const;
    bool flag(const std::string& key) const;
    std::vector<double> reals(const std::string& key) const;
    std::vector<std::size_t> counts(const std::string& key) const;

    // key=value lines; '#' starts a comment. Errors name the file and line.
    void load_file(const std::filesystem::path& path);
    void load_text(const std::string& text, const std::string& source);
    // ADVECG_<KEY> in upper case maps to <key>.
    void load_environment(char** envp);
    void load_environment(const std::vector<std::string>& entries);

    // Sorted key=value lines.
    std::string snapshot() const;
    const std::map<std::string, std::string>& values() const { return values_; }

   private:
    std::map<std::string, std::string> values_;
};

ClassifierConfig classifier_config(const RunConfig& rc);
AutoencoderConfig autoencoder_config(const RunConfig& rc);
AutoencoderTrainConfig autoencoder_train_config(const RunConfig& rc);
AttackConfig attack_config(const RunConfig& rc);
// Attack used inside adversarial training (train_attack_* keys fall back to attack_*).
AttackConfig train_attack_config(const RunConfig& rc);
TrainConfig train_config(const RunConfig& rc);
CohortConfig cohort_config(const RunConfig& rc);

}  // namespace advecg
