// License: Apache 2.0. See LICENSE file in root directory.
// Copyright (c) 2026 voxcal contributors
#include "voxcal/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace voxcal {

namespace {

constexpr char kMagic[8] = {'V', 'O', 'X', 'C', 'A', 'L', '0', '1'};

void put_u32_le(std::string& out, uint32_t v) {
    out.push_back(char(v & 0xff));
    out.push_back(char((v >> 8) & 0xff));
    out.push_back(char((v >> 16) & 0xff));
    out.push_back(char((v >> 24) & 0xff));
}

void put_u64_le(std::ostream& os, uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = char((v >> (8 * i)) & 0xff);
    os.write(b, 8);
}

uint64_t get_u64_le(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
    return v;
}

} // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& tensors) {
    nlohmann::ordered_json manifest;
    manifest["tensors"] = nlohmann::ordered_json::array();

    std::string payload;
    for (const auto& [name, t] : tensors) {
        nlohmann::ordered_json entry;
        entry["name"] = name;
        entry["shape"] = t.shape();
        entry["dtype"] = "f32";
        entry["byte_offset"] = payload.size();
        manifest["tensors"].push_back(entry);
        for (float v : t.data()) put_u32_le(payload, std::bit_cast<uint32_t>(v));
    }
    const std::string mtext = manifest.dump();

    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);
    os.write(kMagic, sizeof(kMagic));
    put_u64_le(os, mtext.size());
    os.write(mtext.data(), std::streamsize(mtext.size()));
    os.write(payload.data(), std::streamsize(payload.size()));
    if (!os) throw IoError("failed writing checkpoint: " + path);
}

std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);

    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0) {
        throw IoError("not a VOXCAL01 checkpoint: " + path);
    }
    const uint64_t mlen = get_u64_le(is);
    std::string mtext(mlen, '\0');
    is.read(mtext.data(), std::streamsize(mlen));
    if (!is) throw IoError("truncated checkpoint manifest: " + path);

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(mtext);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad checkpoint manifest in " + path + ": " + e.what());
    }

    std::string payload((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

    std::map<std::string, Tensor> out;
    for (const auto& entry : manifest.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        const Shape shape = entry.at("shape").get<Shape>();
        if (entry.at("dtype").get<std::string>() != "f32") {
            throw IoError("unsupported dtype for tensor '" + name + "' in " + path);
        }
        const uint64_t off = entry.at("byte_offset").get<uint64_t>();
        const uint64_t nbytes = uint64_t(shape_numel(shape)) * 4;
        if (off + nbytes > payload.size()) {
            throw IoError("tensor '" + name + "' extends past payload in " + path);
        }
        std::vector<float> data(size_t(shape_numel(shape)));
        for (size_t i = 0; i < data.size(); ++i) {
            const auto* b = reinterpret_cast<const unsigned char*>(payload.data() + off + i * 4);
            uint32_t u = uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 |
                         uint32_t(b[3]) << 24;
            data[i] = std::bit_cast<float>(u);
        }
        out.emplace(name, Tensor(shape, std::move(data)));
    }
    return out;
}

std::map<std::string, Tensor> load_checkpoint_required(const std::string& path) {
    if (!std::filesystem::exists(path)) {
        throw MissingArtifact("missing checkpoint: " + path);
    }
    return load_checkpoint(path);
}

} // namespace voxcal
