// License: Apache 2.0. See LICENSE file in root directory.
// Copyright (c) 2026 voxcal contributors
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "voxcal/image_io.hpp"

namespace voxcal {

/// Raw sensor-style depth. Sample 0 is the missing-pixel sentinel; valid
/// samples u in [1, 65535] encode the fraction (u-1)/65534 of the [near, far]
/// physical range, so u=1 is exactly `near` and u=65535 exactly `far`.
struct RawDepthMap {
    int width = 0, height = 0;
    std::vector<uint16_t> values;
    float near = 0.0f, far = 0.0f;

    static uint16_t encode_fraction(double frac);
    static double decode_fraction(uint16_t v); // v must be nonzero

    bool missing(int64_t i) const { return values[size_t(i)] == 0; }
    float physical(int64_t i) const {
        return near + float(decode_fraction(values[size_t(i)])) * (far - near);
    }
    int64_t pixel_count() const { return int64_t(width) * height; }
    int64_t missing_count() const;
};

/// Binary food mask, 1 = food.
struct SegMask {
    int width = 0, height = 0;
    std::vector<uint8_t> values;

    int64_t popcount() const;
};

/// Post-processed depth: per-pixel value in [0,1] (0 = near plane, 1 = far /
/// plate plane) plus validity flags. Invalid pixels carry no depth semantics.
struct NormalizedDepthMap {
    int width = 0, height = 0;
    std::vector<float> values;
    std::vector<uint8_t> valid;
    float near = 0.0f, far = 0.0f;

    int64_t valid_count() const;
};

struct MaskedDepth {
    RawDepthMap depth;
    SegMask mask;
};

/// Fills missing pixels by iterated 8-neighbor mean (Jacobi sweeps: each
/// iteration fills from the previous iteration's values only, so the result
/// is order-independent). Originally valid pixels are left untouched.
RawDepthMap inpaint_dilate(const RawDepthMap& raw, int max_iters);

/// Marks non-food pixels invalid for the rest of the pipeline; food pixels
/// keep their depth samples unchanged.
MaskedDepth apply_mask(const RawDepthMap& depth, const SegMask& mask);

/// Valid pixels map to clamp((physical - near)/(far - near), 0, 1).
/// Requires an inpainted input (no missing samples under the mask).
NormalizedDepthMap normalize(const RawDepthMap& depth, const SegMask& mask);

/// Inverse of normalize for a single valid value (round-trips within one
/// u16 quantum).
uint16_t denormalize_value(float value);

// Persistence: depth as 16-bit PGM, masks as 8-bit PGM (0/255), normalized
// depth as raw f32 (invalid pixels stored as -1) with a JSON sidecar.
void save_depth_pgm(const std::string& path, const RawDepthMap& d);
RawDepthMap load_depth_pgm(const std::string& path, float near, float far);
void save_mask_pgm(const std::string& path, const SegMask& m);
SegMask load_mask_pgm(const std::string& path);
void save_normalized(const std::string& path_prefix, const NormalizedDepthMap& d);
NormalizedDepthMap load_normalized(const std::string& path_prefix);

} // namespace voxcal
