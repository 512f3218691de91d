#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>

#include "advecg/errors.hpp"
#include "advecg/signal.hpp"

namespace advecg {

namespace {

constexpr std::array<char, 4> kMagic{'E', 'C', 'G', 'D'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 4 + 4 * 4 + 4;
constexpr std::size_t kRecordBytes = 4 + 1 + 4 + kLeads * kSamples * 4;

void put_u32(std::vector<unsigned char>& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
}
void put_f32(std::vector<unsigned char>& buf, float v) { put_u32(buf, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}
float get_f32(const unsigned char* p) { return std::bit_cast<float>(get_u32(p)); }

}  // namespace

void write_dataset(const std::filesystem::path& path, std::span<const EcgRecord> records) {
    for (const auto& r : records) validate_record(r);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");

    std::vector<unsigned char> buf(kMagic.begin(), kMagic.end());
    put_u32(buf, kVersion);
    put_u32(buf, static_cast<std::uint32_t>(records.size()));
    put_u32(buf, static_cast<std::uint32_t>(kLeads));
    put_u32(buf, static_cast<std::uint32_t>(kSamples));
    put_f32(buf, static_cast<float>(kSampleRate));
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));

    for (const auto& r : records) {
        buf.clear();
        put_f32(buf, r.lvef_percent);
        buf.push_back(r.lesion_code);
        put_u32(buf, r.subject_id);
        for (float v : r.leads) put_f32(buf, v);
        out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<EcgRecord> read_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open dataset " + path.string());
    std::array<unsigned char, kHeaderBytes> head{};
    in.read(reinterpret_cast<char*>(head.data()), head.size());
    if (in.gcount() != static_cast<std::streamsize>(head.size())) throw FormatError("dataset header is truncated");
    if (std::memcmp(head.data(), kMagic.data(), 4) != 0) throw FormatError("not an ECGD dataset (bad magic)");
    const std::uint32_t version = get_u32(head.data() + 4);
    if (version != kVersion) throw FormatError("unsupported ECGD version " + std::to_string(version));
    const std::uint32_t n = get_u32(head.data() + 8);
    if (get_u32(head.data() + 12) != kLeads || get_u32(head.data() + 16) != kSamples)
        throw FormatError("ECGD header must declare 12 leads x 2048 samples");
    if (get_f32(head.data() + 20) != static_cast<float>(kSampleRate))
        throw FormatError("ECGD header must declare a 250 Hz sample rate");

    std::vector<EcgRecord> records(n);
    std::vector<unsigned char> buf(kRecordBytes);
    for (std::uint32_t i = 0; i < n; ++i) {
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (in.gcount() != static_cast<std::streamsize>(buf.size()))
            throw FormatError("dataset truncated at record " + std::to_string(i) + " of " + std::to_string(n));
        EcgRecord& r = records[i];
        r.lvef_percent = get_f32(buf.data());
        r.lesion_code = buf[4];
        r.subject_id = get_u32(buf.data() + 5);
        const unsigned char* p = buf.data() + 9;
        for (std::size_t k = 0; k < r.leads.size(); ++k, p += 4) r.leads[k] = get_f32(p);
        try {
            validate_record(r);
        } catch (const InvalidInput& e) {
            throw FormatError("record " + std::to_string(i) + ": " + e.what());
        }
    }
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after the last record");
    return records;
}

void write_dataset_csv(const std::filesystem::path& path, std::span<const EcgRecord> records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << "record,subject_id,lvef_percent,lesion_code,lead,sample,value_mv\n";
    std::array<char, 64> num{};
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        const std::string prefix = std::to_string(i) + ',' + std::to_string(r.subject_id) + ',' +
                                   std::string(num.data(), std::to_chars(num.data(), num.data() + num.size(), r.lvef_percent).ptr) +
                                   ',' + std::to_string(r.lesion_code) + ',';
        for (std::size_t l = 0; l < kLeads; ++l)
            for (std::size_t t = 0; t < kSamples; ++t) {
                const auto end = std::to_chars(num.data(), num.data() + num.size(), r.at(l, t)).ptr;
                out << prefix << l << ',' << t << ',' << std::string_view(num.data(), end - num.data()) << '\n';
            }
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace advecg
