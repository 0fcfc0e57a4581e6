// SPDX-License-Identifier: Apache-2.0
#include "tuka/archive.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tuka/error.hpp"

namespace tuka {

namespace {

constexpr char kMagic[4] = {'T', 'K', 'A', 'R'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

template <typename T>
void append_pod(std::string& out, T value) {
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T read_pod(std::string_view bytes, std::size_t& pos, const char* what) {
    if (bytes.size() - pos < sizeof(T)) throw ParseError(std::string("truncated archive while reading ") + what, pos);
    T value;
    std::memcpy(&value, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return value;
}

}  // namespace

bool Archive::has(std::string_view name) const {
    for (const auto& [n, t] : arrays)
        if (n == name) return true;
    return false;
}

const DenseTensor& Archive::get(std::string_view name) const {
    for (const auto& [n, t] : arrays)
        if (n == name) return t;
    throw std::out_of_range("archive has no array named '" + std::string(name) + "'");
}

std::string encode_archive(const Archive& archive) {
    nlohmann::json header;
    header["meta"] = archive.meta;
    header["arrays"] = nlohmann::json::array();
    for (const auto& [name, t] : archive.arrays) header["arrays"].push_back({{"name", name}, {"shape", t.shape()}});
    const std::string text = header.dump();

    std::string out(kMagic, sizeof(kMagic));
    append_pod(out, kVersion);
    append_pod(out, static_cast<std::uint64_t>(text.size()));
    out += text;
    for (const auto& [name, t] : archive.arrays) {
        const auto values = t.data();
        out.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(double));
    }
    return out;
}

Archive decode_archive(std::string_view bytes) {
    std::size_t pos = 0;
    if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw ParseError("not a tensor archive (bad magic)", 0);
    pos = sizeof(kMagic);
    const auto version = read_pod<std::uint32_t>(bytes, pos, "version");
    if (version != kVersion) throw ParseError("unsupported archive version " + std::to_string(version), pos - 4);
    const auto header_len = read_pod<std::uint64_t>(bytes, pos, "header length");
    if (bytes.size() - pos < header_len) throw ParseError("truncated archive header", pos);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(pos, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed archive header: ") + e.what(), pos);
    }
    pos += header_len;

    Archive archive;
    archive.meta = header.value("meta", nlohmann::json::object());
    for (const auto& entry : header.at("arrays")) {
        auto shape = entry.at("shape").get<std::vector<std::size_t>>();
        std::size_t count = 1;
        for (auto d : shape) count *= d;
        if ((bytes.size() - pos) / sizeof(double) < count)
            throw ParseError("truncated payload for array '" + entry.at("name").get<std::string>() + "'", pos);
        std::vector<double> values(count);
        std::memcpy(values.data(), bytes.data() + pos, count * sizeof(double));
        pos += count * sizeof(double);
        archive.put(entry.at("name").get<std::string>(), DenseTensor(std::move(shape), std::move(values)));
    }
    if (pos != bytes.size()) throw ParseError("trailing bytes after archive payload", pos);
    return archive;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
    write_file_atomic(path, encode_archive(archive));
}

Archive read_archive(const std::filesystem::path& path) { return decode_archive(read_file(path)); }

}  // namespace tuka
