#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "patchrec/error.hpp"
#include "patchrec/model.hpp"

#include <json.hpp>

namespace patchrec {

/// Checkpoint layout on disk:
///   manifest.tsv  name<TAB>dim0xdim1<TAB>byte_offset, one parameter per line
///   params.blob   flat little-endian IEEE-754 doubles, manifest order
///   config.json   ModelConfig with version field
/// Round trips are bit-exact: doubles travel as their raw bit patterns.
namespace detail {

inline void write_double_le(std::ofstream& out, double v) {
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(bytes), 8);
}

inline double read_double_le(std::istream& in) {
    unsigned char bytes[8];
    in.read(reinterpret_cast<char*>(bytes), 8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

} // namespace detail

inline void save_checkpoint(const std::string& dir, ModelState& state) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    std::ofstream config_out(dir + "/config.json");
    if (!config_out) throw DataError("checkpoint: cannot write " + dir + "/config.json");
    config_out << state.config.to_json().dump(2) << '\n';

    std::ofstream manifest(dir + "/manifest.tsv");
    std::ofstream blob(dir + "/params.blob", std::ios::binary);
    if (!manifest || !blob) throw DataError("checkpoint: cannot write files under " + dir);

    std::size_t offset = 0;
    for (auto& [name, tensor] : state.named_parameters()) {
        manifest << name << '\t';
        const auto& shape = tensor.shape();
        for (std::size_t i = 0; i < shape.size(); ++i) manifest << (i ? "x" : "") << shape[i];
        manifest << '\t' << offset << '\n';
        for (double v : tensor.data()) detail::write_double_le(blob, v);
        offset += tensor.numel() * sizeof(double);
    }
}

inline ModelState load_checkpoint(const std::string& dir) {
    std::ifstream config_in(dir + "/config.json");
    if (!config_in) throw DataError("checkpoint: cannot open " + dir + "/config.json");
    nlohmann::json cfg_json;
    config_in >> cfg_json;
    ModelConfig config = ModelConfig::from_json(cfg_json);
    ModelState state = ModelState::init(config, 0);

    // Parse the manifest into (name, numel, offset) triples.
    std::ifstream manifest(dir + "/manifest.tsv");
    if (!manifest) throw DataError("checkpoint: cannot open " + dir + "/manifest.tsv");
    struct Entry {
        std::string name;
        std::vector<std::size_t> shape;
        std::size_t offset;
    };
    std::vector<Entry> entries;
    std::string line;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        const auto tab1 = line.find('\t');
        const auto tab2 = line.find('\t', tab1 + 1);
        if (tab1 == std::string::npos || tab2 == std::string::npos) {
            throw CorruptionError("checkpoint: malformed manifest line '" + line + "'");
        }
        Entry e;
        e.name = line.substr(0, tab1);
        std::string dims = line.substr(tab1 + 1, tab2 - tab1 - 1);
        std::size_t start = 0;
        while (start < dims.size()) {
            const auto x = dims.find('x', start);
            e.shape.push_back(std::stoull(dims.substr(start, x - start)));
            if (x == std::string::npos) break;
            start = x + 1;
        }
        e.offset = std::stoull(line.substr(tab2 + 1));
        entries.push_back(std::move(e));
    }

    auto params = state.named_parameters();
    if (entries.size() != params.size()) {
        throw CorruptionError("checkpoint: manifest lists " + std::to_string(entries.size()) +
                              " parameters, model has " + std::to_string(params.size()));
    }

    std::ifstream blob(dir + "/params.blob", std::ios::binary);
    if (!blob) throw DataError("checkpoint: cannot open " + dir + "/params.blob");
    blob.seekg(0, std::ios::end);
    const std::size_t blob_size = static_cast<std::size_t>(blob.tellg());

    std::size_t expected = 0;
    for (const Entry& e : entries) expected += shape_numel(e.shape) * sizeof(double);
    if (blob_size != expected) {
        throw CorruptionError("checkpoint: blob holds " + std::to_string(blob_size) +
                              " bytes, manifest expects " + std::to_string(expected));
    }

    for (std::size_t i = 0; i < entries.size(); ++i) {
        const Entry& e = entries[i];
        auto& [name, tensor] = params[i];
        if (e.name != name || e.shape != tensor.shape()) {
            throw CorruptionError("checkpoint: parameter mismatch at '" + e.name +
                                  "' (model expects '" + name + "')");
        }
        blob.seekg(static_cast<std::streamoff>(e.offset));
        for (double& v : tensor.data()) v = detail::read_double_le(blob);
        if (!blob) throw CorruptionError("checkpoint: blob truncated while reading " + e.name);
    }
    return state;
}

} // namespace patchrec
