// License: Apache 2.0. See LICENSE file in root directory.
// Copyright (c) 2026 voxcal contributors
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "voxcal/depth.hpp"
#include "voxcal/tensor.hpp"

namespace voxcal {

/// Binary occupancy grid, z-major layout [z][y][x]. z = 0 is the near plane,
/// z = zdim-1 the far/plate plane. cell_volume is the physical volume of one
/// cell (1.0 = plain voxel units).
struct VoxelGrid {
    int64_t zdim = 0, ydim = 0, xdim = 0;
    std::vector<uint8_t> occ;
    float cell_volume = 1.0f;

    VoxelGrid() = default;
    VoxelGrid(int64_t z, int64_t y, int64_t x, float cell_vol = 1.0f)
        : zdim(z), ydim(y), xdim(x), occ(size_t(z * y * x), 0), cell_volume(cell_vol) {}

    int64_t cells() const { return zdim * ydim * xdim; }
    bool at(int64_t z, int64_t y, int64_t x) const {
        return occ[size_t((z * ydim + y) * xdim + x)] != 0;
    }
    void set(int64_t z, int64_t y, int64_t x, bool v) {
        occ[size_t((z * ydim + y) * xdim + x)] = v ? 1 : 0;
    }
    int64_t occupied_count() const;
    bool same_dims(const VoxelGrid& o) const {
        return zdim == o.zdim && ydim == o.ydim && xdim == o.xdim;
    }
};

/// Surface-to-far-plane occupancy: cell (x,y,z) is occupied iff
/// z >= round(value(x,y) * (z_res - 1)), rounding half away from zero.
/// Columns under invalid pixels are all-free.
VoxelGrid depth_to_voxel(const NormalizedDepthMap& dbar, int64_t z_res, float cell_volume = 1.0f);

/// cell_volume * number of occupied cells.
float volume(const VoxelGrid& v);

/// Intersection over union; 1.0 when both grids are empty.
float voxel_iou(const VoxelGrid& a, const VoxelGrid& b);

/// Thresholds a [Z,H,W] probability tensor at tau (ties occupied). Values
/// must lie in [0,1] and tau in (0,1). Generated grids may violate the
/// suffix-column structure of depth-derived grids; that is expected.
VoxelGrid binarize(const Tensor& probs, float tau, float cell_volume = 1.0f);

/// Occupancy as a float [Z,H,W] tensor of 0/1 (reference targets for training).
Tensor voxel_to_tensor(const VoxelGrid& v);

// .vox.bin: one line of compact JSON {"dims":[z,y,x],"cell_volume":c} followed
// by the occupancy bitset packed LSB-first.
void save_voxel(const std::string& path, const VoxelGrid& v);
VoxelGrid load_voxel(const std::string& path);

} // namespace voxcal
