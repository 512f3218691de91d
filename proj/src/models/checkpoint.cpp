#include "advecg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "advecg/errors.hpp"

namespace advecg {

namespace {

constexpr char kMagic[4] = {'A', 'D', 'V', 'M'};

class Writer {
   public:
    void bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const unsigned char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    const std::vector<unsigned char>& data() const { return buf_; }

   private:
    std::vector<unsigned char> buf_;
};

class Reader {
   public:
    explicit Reader(std::vector<unsigned char> data) : buf_(std::move(data)) {}
    void need(std::size_t n, const char* what) const {
        if (pos_ + n > buf_.size()) throw FormatError(std::string("checkpoint truncated while reading ") + what);
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return buf_[pos_++];
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
    std::string str(const char* what) {
        const std::uint32_t n = u32(what);
        need(n, what);
        std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == buf_.size(); }
    const unsigned char* cursor() const { return buf_.data() + pos_; }

   private:
    std::vector<unsigned char> buf_;
    std::size_t pos_ = 0;
};

void add_params(Checkpoint& c, const ParamSet& params) {
    for (const auto& e : params.entries()) c.add_section(e.name, to_floats(e.value));
}

void load_params(const Checkpoint& c, ParamSet& params) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& name = params.entry(i).name;
        fill_from_floats(params.value(i), c.section(name).data, name);
    }
}

std::uint32_t u32_of(std::size_t v) { return static_cast<std::uint32_t>(v); }

}  // namespace

void Checkpoint::set_u32(const std::string& name, std::uint32_t value) {
    for (auto& f : header)
        if (f.name == name) {
            f = {name, false, value, 0.0f};
            return;
        }
    header.push_back({name, false, value, 0.0f});
}

void Checkpoint::set_f32(const std::string& name, float value) {
    for (auto& f : header)
        if (f.name == name) {
            f = {name, true, 0, value};
            return;
        }
    header.push_back({name, true, 0, value});
}

bool Checkpoint::has_field(const std::string& name) const {
    for (const auto& f : header)
        if (f.name == name) return true;
    return false;
}

std::uint32_t Checkpoint::u32(const std::string& name) const {
    for (const auto& f : header)
        if (f.name == name) {
            if (f.is_float) throw FormatError("header field " + name + " is not a u32");
            return f.u;
        }
    throw FormatError("checkpoint header lacks field " + name);
}

float Checkpoint::f32(const std::string& name) const {
    for (const auto& f : header)
        if (f.name == name) {
            if (!f.is_float) throw FormatError("header field " + name + " is not an f32");
            return f.f;
        }
    throw FormatError("checkpoint header lacks field " + name);
}

void Checkpoint::add_section(std::string name, std::vector<float> data) {
    sections.push_back({std::move(name), std::move(data)});
}

const Checkpoint::Section* Checkpoint::find_section(const std::string& name) const {
    for (const auto& s : sections)
        if (s.name == name) return &s;
    return nullptr;
}

const Checkpoint::Section& Checkpoint::section(const std::string& name) const {
    if (const auto* s = find_section(name)) return *s;
    throw FormatError("checkpoint lacks section " + name);
}

std::vector<float> to_floats(const Tensor& t) {
    std::vector<float> out(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<float>(t[i]);
    return out;
}

void fill_from_floats(Tensor& t, const std::vector<float>& data, const std::string& name) {
    if (data.size() != t.size())
        throw FormatError("section " + name + " holds " + std::to_string(data.size()) + " values, expected " +
                          std::to_string(t.size()));
    for (std::size_t i = 0; i < data.size(); ++i) t[i] = static_cast<double>(data[i]);
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    Writer w;
    w.bytes(kMagic, 4);
    w.u32(kCheckpointVersion);
    w.u32(u32_of(ckpt.header.size()));
    for (const auto& f : ckpt.header) {
        w.str(f.name);
        w.u8(f.is_float ? 1 : 0);
        if (f.is_float)
            w.f32(f.f);
        else
            w.u32(f.u);
    }
    w.u32(u32_of(ckpt.sections.size()));
    for (const auto& s : ckpt.sections) {
        w.str(s.name);
        w.u32(u32_of(s.data.size()));
        for (float v : s.data) w.f32(v);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(w.data().data()), static_cast<std::streamsize>(w.data().size()));
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    Reader r(std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {}));
    r.need(4, "magic");
    if (std::memcmp(r.cursor(), kMagic, 4) != 0) throw FormatError("not an ADVM checkpoint (bad magic)");
    r.u32("magic");
    const std::uint32_t version = r.u32("version");
    if (version != kCheckpointVersion) throw FormatError("unsupported ADVM version " + std::to_string(version));
    Checkpoint c;
    const std::uint32_t n_fields = r.u32("header size");
    for (std::uint32_t i = 0; i < n_fields; ++i) {
        Checkpoint::Field f;
        f.name = r.str("header field name");
        const std::uint8_t tag = r.u8("header field type");
        if (tag > 1) throw FormatError("unknown header field type for " + f.name);
        f.is_float = tag == 1;
        if (f.is_float)
            f.f = r.f32("header field value");
        else
            f.u = r.u32("header field value");
        c.header.push_back(std::move(f));
    }
    const std::uint32_t n_sections = r.u32("section count");
    for (std::uint32_t i = 0; i < n_sections; ++i) {
        Checkpoint::Section s;
        s.name = r.str("section name");
        const std::uint32_t n = r.u32("section length");
        r.need(static_cast<std::size_t>(n) * 4, "section data");
        s.data.resize(n);
        for (std::uint32_t j = 0; j < n; ++j) s.data[j] = r.f32("section data");
        c.sections.push_back(std::move(s));
    }
    if (!r.done()) throw FormatError("trailing bytes after the last checkpoint section");
    return c;
}

Checkpoint to_checkpoint(const Classifier& model) {
    const auto& cfg = model.config();
    Checkpoint c;
    c.set_u32("model", kKindClassifier);
    c.set_u32("in_channels", u32_of(cfg.in_channels));
    c.set_u32("length", u32_of(cfg.length));
    c.set_u32("stem_channels", u32_of(cfg.stem_channels));
    c.set_u32("n_blocks", u32_of(cfg.block_channels.size()));
    for (std::size_t b = 0; b < cfg.block_channels.size(); ++b)
        c.set_u32("block_channels_" + std::to_string(b), u32_of(cfg.block_channels[b]));
    c.set_u32("kernel_size", u32_of(cfg.kernel_size));
    c.set_u32("n_heads", u32_of(cfg.n_heads()));
    for (std::size_t h = 0; h < cfg.n_heads(); ++h)
        c.set_f32("threshold_" + std::to_string(h), static_cast<float>(cfg.thresholds[h]));
    c.set_f32("dropout_rate", static_cast<float>(cfg.dropout_rate));
    c.set_f32("bn_momentum", static_cast<float>(cfg.bn_momentum));
    add_params(c, model.params());
    return c;
}

Classifier classifier_from(const Checkpoint& c) {
    if (c.u32("model") != kKindClassifier) throw FormatError("checkpoint does not hold a classifier");
    ClassifierConfig cfg;
    cfg.in_channels = c.u32("in_channels");
    cfg.length = c.u32("length");
    cfg.stem_channels = c.u32("stem_channels");
    cfg.block_channels.assign(c.u32("n_blocks"), 0);
    for (std::size_t b = 0; b < cfg.block_channels.size(); ++b)
        cfg.block_channels[b] = c.u32("block_channels_" + std::to_string(b));
    cfg.kernel_size = c.u32("kernel_size");
    cfg.thresholds.assign(c.u32("n_heads"), 0.0);
    for (std::size_t h = 0; h < cfg.thresholds.size(); ++h) cfg.thresholds[h] = c.f32("threshold_" + std::to_string(h));
    cfg.dropout_rate = c.f32("dropout_rate");
    cfg.bn_momentum = c.f32("bn_momentum");
    try {
        cfg.validate();
    } catch (const InvalidInput& e) {
        throw FormatError(std::string("invalid classifier header: ") + e.what());
    }
    Classifier model(cfg, 0);
    load_params(c, model.params());
    return model;
}

Checkpoint to_checkpoint(const Autoencoder& model) {
    const auto& cfg = model.config();
    Checkpoint c;
    c.set_u32("model", kKindAutoencoder);
    c.set_u32("in_channels", u32_of(cfg.in_channels));
    c.set_u32("length", u32_of(cfg.length));
    c.set_u32("n_layers", u32_of(cfg.channels.size()));
    for (std::size_t i = 0; i < cfg.channels.size(); ++i) c.set_u32("channels_" + std::to_string(i), u32_of(cfg.channels[i]));
    c.set_u32("kernel_size", u32_of(cfg.kernel_size));
    c.set_u32("stride", u32_of(cfg.stride));
    c.set_u32("latent_dim", u32_of(cfg.latent_dim));
    add_params(c, model.params());
    return c;
}

Autoencoder autoencoder_from(const Checkpoint& c) {
    if (c.u32("model") != kKindAutoencoder) throw FormatError("checkpoint does not hold an autoencoder");
    AutoencoderConfig cfg;
    cfg.in_channels = c.u32("in_channels");
    cfg.length = c.u32("length");
    cfg.channels.assign(c.u32("n_layers"), 0);
    for (std::size_t i = 0; i < cfg.channels.size(); ++i) cfg.channels[i] = c.u32("channels_" + std::to_string(i));
    cfg.kernel_size = c.u32("kernel_size");
    cfg.stride = c.u32("stride");
    cfg.latent_dim = c.u32("latent_dim");
    try {
        cfg.validate();
    } catch (const InvalidInput& e) {
        throw FormatError(std::string("invalid autoencoder header: ") + e.what());
    }
    Autoencoder model(cfg, 0);
    load_params(c, model.params());
    return model;
}

void save_classifier(const std::filesystem::path& path, const Classifier& model) {
    write_checkpoint(path, to_checkpoint(model));
}
Classifier load_classifier(const std::filesystem::path& path) { return classifier_from(read_checkpoint(path)); }
void save_autoencoder(const std::filesystem::path& path, const Autoencoder& model) {
    write_checkpoint(path, to_checkpoint(model));
}
Autoencoder load_autoencoder(const std::filesystem::path& path) { return autoencoder_from(read_checkpoint(path)); }

}  // namespace advecg
