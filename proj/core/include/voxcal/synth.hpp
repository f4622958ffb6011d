// License: Apache 2.0. See LICENSE file in root directory.
// Copyright (c) 2026 voxcal contributors
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "voxcal/depth.hpp"
#include "voxcal/image_io.hpp"
#include "voxcal/tensor.hpp"

namespace voxcal {

enum class Primitive { SphericalCap, Cone, Cylinder, Paraboloid };

const char* primitive_name(Primitive p);
Primitive primitive_from_name(const std::string& name);

/// One synthetic dish. Lengths are world units; at the native image scale one
/// pixel spans one unit, so `radius` reads in pixels too.
struct DishSpec {
    Primitive primitive = Primitive::SphericalCap;
    float radius = 10.0f;       // base radius
    float height = 24.0f;       // peak height above the plate
    int64_t class_id = 0;
    float density = 1.0f;       // kcal per voxel unit
    float plate_radius = 14.0f;
    uint64_t seed = 0;
};

/// Closed-form dish volume in world units (radius^2 * height scale):
/// cylinder pi r^2 h; cone pi r^2 h / 3; spherical cap pi h^2 (3R - h) / 3
/// with R the parent sphere radius; paraboloid pi r^2 h / 2.
double analytic_volume(const DishSpec& spec);

/// Height of the dish surface at radial distance rho from its axis.
double dish_height_at(const DishSpec& spec, double rho);

/// Camera/plate geometry and capture artifacts for rendering.
struct DepthSimParams {
    float near = 60.0f;          // depth units; camera side
    float far = 100.0f;          // plate plane
    float world_extent = 32.0f;  // square region imaged, world units
    bool holes = true;           // master switch for missing pixels
    float salt_rate = 0.02f;     // random missing-pixel dropout
    float specular_threshold = 0.92f;
    float specular_shininess = 48.0f;
    float noise_sigma = 0.02f;   // gaussian rgb noise, [0,1] scale
    int64_t z_res = 32;          // voxel resolution used for volume bookkeeping
};

struct DishSample {
    img::RgbU8 rgb;
    RawDepthMap raw_depth; // holes punched where capture would fail
    SegMask mask;          // 1 exactly where the height field is positive
    DishSpec spec;
    float true_volume = 0.0f; // voxel units at (image_size, z_res, near, far)
    float energy = 0.0f;      // density * true_volume

    Tensor rgb_tensor() const; // [3,S,S] floats in [0,1]
};

/// Physical volume of one voxel cell for this geometry, world units.
double cell_physical_volume(const DepthSimParams& p, int64_t image_size);

/// Deterministic given spec.seed. Throws when the dish does not fit the
/// plate / image or pokes through the near plane. `color` is the class color
/// used for the dish surface.
DishSample generate_dish(const DishSpec& spec, int64_t image_size, const DepthSimParams& params,
                         std::array<uint8_t, 3> color = {204, 72, 61});

/// Fixed (primitive, color, density) triple per class id.
struct ClassSpec {
    std::string name;
    Primitive primitive;
    std::array<uint8_t, 3> color;
    float density;
};

std::vector<ClassSpec> default_class_table(int64_t classes);

struct DatasetConfig {
    int64_t n = 400;
    int64_t classes = 4;
    double train_ratio = 0.845; // mirrors a 2753/506-style split
    uint64_t seed = 0;
    int64_t image_size = 32;
    DepthSimParams depth;
};

struct ManifestRow {
    std::string sample_id;
    std::string split; // "train" | "test"
    int64_t class_id;
    float energy;
};

struct SplitManifest {
    std::vector<ManifestRow> rows;
    uint64_t seed = 0;
    double train_ratio = 0.0;

    int64_t count(const std::string& split) const;
};

/// Generates n balanced samples under out_dir (samples/<id>/{rgb.ppm,
/// depth.pgm, mask.pgm, meta.json}), writes manifest.csv and dataset.json,
/// and returns the split. Fully determined by cfg.seed.
SplitManifest make_dataset(const DatasetConfig& cfg, const std::string& out_dir);

/// Dataset root handle: global config, class table, manifest.
struct LoadedDataset {
    std::string root;
    DatasetConfig cfg;
    std::vector<ClassSpec> class_table;
    std::vector<ManifestRow> rows;

    std::vector<ManifestRow> split_rows(const std::string& split) const;
};

LoadedDataset load_dataset(const std::string& dir);

struct SampleOnDisk {
    img::RgbU8 rgb;
    RawDepthMap depth;
    SegMask mask;
    int64_t class_id = 0;
    float density = 0.0f;
    float true_volume = 0.0f;
    float energy = 0.0f;

    Tensor rgb_tensor() const;
};

SampleOnDisk load_sample(const LoadedDataset& ds, const std::string& sample_id);
/// Ingests an externally produced sample laid out the same way (rgb + 16-bit
/// depth + mask + meta.json).
SampleOnDisk load_sample_dir(const std::string& sample_dir, float near, float far);

} // namespace voxcal
