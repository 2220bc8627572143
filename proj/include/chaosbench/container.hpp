#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "chaosbench/params.hpp"
#include "chaosbench/tensor.hpp"

namespace chaosbench {

// On-disk container: 8-byte magic, uint64 little-endian header length, JSON
// header (tensor names, shapes, byte offsets into the payload, endianness
// tag, free-form meta object), then a contiguous float64 little-endian
// payload. Datasets and model checkpoints both use it.
inline constexpr char kContainerMagic[8] = {'C', 'H', 'B', 'N', 'C', 'H', '0', '1'};

struct Container {
    std::vector<std::pair<std::string, Tensor>> tensors;
    nlohmann::json meta;

    const Tensor& at(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return t;
        throw IoError("container: missing tensor " + name);
    }
    bool has(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return true;
        return false;
    }
};

namespace detail {
inline void require_little_endian() {
    if constexpr (std::endian::native != std::endian::little)
        throw IoError("container: only little-endian hosts are supported");
}
}  // namespace detail

inline void save_container(const std::filesystem::path& path,
                           const std::vector<std::pair<std::string, const Tensor*>>& tensors,
                           const nlohmann::json& meta = nlohmann::json::object()) {
    detail::require_little_endian();
    nlohmann::json header;
    header["format"] = "chaosbench-container";
    header["version"] = 1;
    header["endianness"] = "little";
    header["dtype"] = "float64";
    header["meta"] = meta;
    auto& list = header["tensors"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        nlohmann::json e;
        e["name"] = name;
        e["shape"] = t->shape();
        e["offset"] = offset;
        list.push_back(std::move(e));
        offset += static_cast<std::uint64_t>(t->numel()) * sizeof(double);
    }
    const std::string hs = header.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("container: cannot open for write: " + path.string());
    f.write(kContainerMagic, 8);
    const std::uint64_t hlen = hs.size();
    f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [name, t] : tensors)
        f.write(reinterpret_cast<const char*>(t->data()),
                static_cast<std::streamsize>(t->numel() * sizeof(double)));
    if (!f) throw IoError("container: write failed: " + path.string());
}

inline Container load_container(const std::filesystem::path& path) {
    detail::require_little_endian();
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("container: cannot open: " + path.string());
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kContainerMagic, 8) != 0)
        throw IoError("container: bad magic in " + path.string());
    std::uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!f || hlen == 0 || hlen > (1ull << 30)) throw IoError("container: bad header length");
    std::string hs(hlen, '\0');
    f.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!f) throw IoError("container: truncated header");
    nlohmann::json header = nlohmann::json::parse(hs);
    if (header.value("endianness", "") != "little" || header.value("dtype", "") != "float64")
        throw IoError("container: unsupported encoding in " + path.string());

    Container c;
    c.meta = header.value("meta", nlohmann::json::object());
    const std::uint64_t payload_start = 8 + sizeof(hlen) + hlen;
    for (const auto& e : header.at("tensors")) {
        const std::string name = e.at("name").get<std::string>();
        const std::vector<std::int64_t> shape = e.at("shape").get<std::vector<std::int64_t>>();
        const std::uint64_t offset = e.at("offset").get<std::uint64_t>();
        Tensor t(shape);
        f.seekg(static_cast<std::streamoff>(payload_start + offset));
        f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
        if (!f) throw IoError("container: truncated payload for tensor " + name);
        c.tensors.emplace_back(name, std::move(t));
    }
    return c;
}

inline void save_params(const std::filesystem::path& path, const ParameterSet& p,
                        const nlohmann::json& meta = nlohmann::json::object()) {
    std::vector<std::pair<std::string, const Tensor*>> ts;
    ts.reserve(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) ts.emplace_back(p.entry(i).name, &p.entry(i).value);
    save_container(path, ts, meta);
}

// Load into the layout of `like` (names and shapes must match exactly).
inline ParameterSet load_params(const std::filesystem::path& path, nlohmann::json* meta_out = nullptr) {
    Container c = load_container(path);
    if (meta_out) *meta_out = c.meta;
    ParameterSet p;
    for (auto& [name, t] : c.tensors) p.add(name, std::move(t));
    return p;
}

}  // namespace chaosbench
