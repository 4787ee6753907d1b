#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dticalib/error.hpp"

namespace dticalib::io {

/// Container used by every binary artifact: the 8-byte magic "DTICALIB",
/// a little-endian uint64 header length, a JSON header, then little-endian
/// float64 blocks in the order listed under the header's "blocks" key.
struct Block {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 1;
    std::vector<double> data;  // row-major
};

struct BlockFile {
    nlohmann::json header = nlohmann::json::object();
    std::vector<Block> blocks;

    [[nodiscard]] const Block* find(const std::string& name) const {
        for (const auto& b : blocks)
            if (b.name == name) return &b;
        return nullptr;
    }

    [[nodiscard]] const Block& at(const std::string& name) const {
        if (const Block* b = find(name)) return *b;
        throw DataError("missing block '" + name + "'");
    }
};

inline constexpr char kMagic[8] = {'D', 'T', 'I', 'C', 'A', 'L', 'I', 'B'};

namespace detail {

inline std::uint64_t to_little(std::uint64_t v) {
    if constexpr (std::endian::native == std::endian::little) return v;
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xFFu) << (8 * (7 - i));
    return r;
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
    v = to_little(v);
    os.write(reinterpret_cast<const char*>(&v), 8);
}

inline std::uint64_t get_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    if (!is) throw DataError("truncated file");
    return to_little(v);
}

}  // namespace detail

inline void write_block_file(const std::filesystem::path& path, const BlockFile& file) {
    nlohmann::json header = file.header;
    header["blocks"] = nlohmann::json::array();
    for (const auto& b : file.blocks) {
        if (b.data.size() != b.rows * b.cols)
            throw DataError("block '" + b.name + "' size does not match its shape");
        header["blocks"].push_back({{"name", b.name}, {"rows", b.rows}, {"cols", b.cols}});
    }
    const std::string text = header.dump();
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write " + path.string());
    os.write(kMagic, sizeof kMagic);
    detail::put_u64(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& b : file.blocks) {
        for (double v : b.data) detail::put_u64(os, std::bit_cast<std::uint64_t>(v));
    }
    if (!os) throw DataError("write failed for " + path.string());
}

inline BlockFile read_block_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path.string());
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw DataError(path.string() + " is not a dticalib file");
    const std::uint64_t header_len = detail::get_u64(is);
    if (header_len > (1u << 26)) throw DataError("implausible header length in " + path.string());
    std::string text(header_len, '\0');
    is.read(text.data(), static_cast<std::streamsize>(header_len));
    if (!is) throw DataError("truncated header in " + path.string());

    BlockFile file;
    try {
        file.header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed header in " + path.string() + ": " + e.what());
    }
    if (!file.header.contains("blocks") || !file.header["blocks"].is_array())
        throw DataError("header without block list in " + path.string());
    for (const auto& desc : file.header["blocks"]) {
        Block b;
        b.name = desc.at("name").get<std::string>();
        b.rows = desc.at("rows").get<std::size_t>();
        b.cols = desc.at("cols").get<std::size_t>();
        b.data.resize(b.rows * b.cols);
        for (double& v : b.data) v = std::bit_cast<double>(detail::get_u64(is));
        file.blocks.push_back(std::move(b));
    }
    is.peek();
    if (!is.eof()) throw DataError("trailing bytes after last block in " + path.string());
    file.header.erase("blocks");
    return file;
}

}  // namespace dticalib::io
