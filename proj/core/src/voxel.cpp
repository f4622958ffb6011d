// License: Apache 2.0. See LICENSE file in root directory.
// Copyright (c) 2026 voxcal contributors
#include "voxcal/voxel.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "voxcal/errors.hpp"

namespace voxcal {

int64_t VoxelGrid::occupied_count() const {
    return std::count_if(occ.begin(), occ.end(), [](uint8_t v) { return v != 0; });
}

VoxelGrid depth_to_voxel(const NormalizedDepthMap& dbar, int64_t z_res, float cell_volume) {
    if (z_res < 2) throw InvalidArgument("depth_to_voxel: z_res must be >= 2, got " + std::to_string(z_res));
    const int64_t h = dbar.height, w = dbar.width;
    VoxelGrid grid(z_res, h, w, cell_volume);
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            const int64_t i = y * w + x;
            if (!dbar.valid[size_t(i)]) continue;
            const int64_t zsurf = std::lround(double(dbar.values[size_t(i)]) * double(z_res - 1));
            for (int64_t z = zsurf; z < z_res; ++z) grid.set(z, y, x, true);
        }
    }
    return grid;
}

float volume(const VoxelGrid& v) { return v.cell_volume * float(v.occupied_count()); }

float voxel_iou(const VoxelGrid& a, const VoxelGrid& b) {
    if (!a.same_dims(b)) {
        throw InvalidArgument("voxel_iou: dimension mismatch, " + std::to_string(a.zdim) + "x" +
                              std::to_string(a.ydim) + "x" + std::to_string(a.xdim) + " vs " +
                              std::to_string(b.zdim) + "x" + std::to_string(b.ydim) + "x" +
                              std::to_string(b.xdim));
    }
    int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < a.occ.size(); ++i) {
        const bool va = a.occ[i] != 0, vb = b.occ[i] != 0;
        inter += (va && vb) ? 1 : 0;
        uni += (va || vb) ? 1 : 0;
    }
    if (uni == 0) return 1.0f;
    return float(double(inter) / double(uni));
}

VoxelGrid binarize(const Tensor& probs, float tau, float cell_volume) {
    if (probs.dim() != 3) {
        throw InvalidArgument("binarize: need a [Z,H,W] tensor, got " + shape_str(probs.shape()));
    }
    if (!(tau > 0.0f && tau < 1.0f)) {
        throw InvalidArgument("binarize: tau must be in (0,1), got " + std::to_string(tau));
    }
    const auto& s = probs.shape();
    VoxelGrid grid(s[0], s[1], s[2], cell_volume);
    const auto data = probs.data();
    for (size_t i = 0; i < data.size(); ++i) {
        const float p = data[i];
        if (p < 0.0f || p > 1.0f) {
            throw InvalidArgument("binarize: probability " + std::to_string(p) + " outside [0,1]");
        }
        grid.occ[i] = p >= tau ? 1 : 0;
    }
    return grid;
}

Tensor voxel_to_tensor(const VoxelGrid& v) {
    std::vector<float> data(v.occ.size());
    for (size_t i = 0; i < v.occ.size(); ++i) data[i] = v.occ[i] ? 1.0f : 0.0f;
    return Tensor(Shape{v.zdim, v.ydim, v.xdim}, std::move(data));
}

void save_voxel(const std::string& path, const VoxelGrid& v) {
    nlohmann::ordered_json header;
    header["dims"] = {v.zdim, v.ydim, v.xdim};
    header["cell_volume"] = v.cell_volume;

    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << header.dump() << "\n";

    std::vector<uint8_t> packed((v.occ.size() + 7) / 8, 0);
    for (size_t i = 0; i < v.occ.size(); ++i) {
        if (v.occ[i]) packed[i / 8] |= uint8_t(1u << (i % 8));
    }
    os.write(reinterpret_cast<const char*>(packed.data()), std::streamsize(packed.size()));
    if (!os) throw IoError("failed writing " + path);
}

VoxelGrid load_voxel(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    std::string header_line;
    if (!std::getline(is, header_line)) throw IoError("missing header in " + path);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_line);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad .vox.bin header in " + path + ": " + e.what());
    }
    const auto dims = header.at("dims").get<std::vector<int64_t>>();
    if (dims.size() != 3) throw IoError("bad dims in " + path);
    VoxelGrid v(dims[0], dims[1], dims[2], header.at("cell_volume").get<float>());

    std::vector<uint8_t> packed((v.occ.size() + 7) / 8, 0);
    is.read(reinterpret_cast<char*>(packed.data()), std::streamsize(packed.size()));
    if (!is) throw IoError("truncated bitset in " + path);
    for (size_t i = 0; i < v.occ.size(); ++i) {
        v.occ[i] = (packed[i / 8] >> (i % 8)) & 1u;
    }
    return v;
}

} // namespace voxcal
