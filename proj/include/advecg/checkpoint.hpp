#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "advecg/models.hpp"

namespace advecg {

// ADVM container: named u32/f32 header fields followed by named f32 sections.
struct Checkpoint {
    struct Field {
        std::string name;
        bool is_float = false;
        std::uint32_t u = 0;
        float f = 0.0f;
    };
    struct Section {
        std::string name;
        std::vector<float> data;
    };

    std::vector<Field> header;
    std::vector<Section> sections;

    void set_u32(const std::string& name, std::uint32_t value);
    void set_f32(const std::string& name, float value);
    std::uint32_t u32(const std::string& name) const;  // FormatError when absent
    float f32(const std::string& name) const;
    bool has_field(const std::string& name) const;

    void add_section(std::string name, std::vector<float> data);
    const Section* find_section(const std::string& name) const;
    const Section& section(const std::string& name) const;  // FormatError when absent
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

Checkpoint to_checkpoint(const Classifier& model);
Checkpoint to_checkpoint(const Autoencoder& model);
Classifier classifier_from(const Checkpoint& ckpt);
Autoencoder autoencoder_from(const Checkpoint& ckpt);

// Model kind recorded in the "model" header field.
inline constexpr std::uint32_t kKindClassifier = 1;
inline constexpr std::uint32_t kKindAutoencoder = 2;

void save_classifier(const std::filesystem::path& path, const Classifier& model);
Classifier load_classifier(const std::filesystem::path& path);
void save_autoencoder(const std::filesystem::path& path, const Autoencoder& model);
Autoencoder load_autoencoder(const std::filesystem::path& path);

// ParamSet values in float, for sections and checksums.
std::vector<float> to_floats(const Tensor& t);
void fill_from_floats(Tensor& t, const std::vector<float>& data, const std::string& name);

}  // namespace advecg
