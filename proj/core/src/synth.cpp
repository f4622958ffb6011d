// License: Apache 2.0. See LICENSE file in root directory.
// Copyright (c) 2026 voxcal contributors
#include "voxcal/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "voxcal/errors.hpp"
#include "voxcal/rng.hpp"

namespace fs = std::filesystem;

namespace voxcal {

const char* primitive_name(Primitive p) {
    switch (p) {
        case Primitive::SphericalCap: return "spherical_cap";
        case Primitive::Cone: return "cone";
        case Primitive::Cylinder: return "cylinder";
        case Primitive::Paraboloid: return "paraboloid";
    }
    throw InvalidArgument("unknown primitive");
}

Primitive primitive_from_name(const std::string& name) {
    if (name == "spherical_cap") return Primitive::SphericalCap;
    if (name == "cone") return Primitive::Cone;
    if (name == "cylinder") return Primitive::Cylinder;
    if (name == "paraboloid") return Primitive::Paraboloid;
    throw InvalidArgument("unknown primitive '" + name + "'");
}

double analytic_volume(const DishSpec& spec) {
    const double r = spec.radius, h = spec.height;
    if (!(r > 0.0) || !(h > 0.0)) throw InvalidArgument("analytic_volume: radius and height must be > 0");
    switch (spec.primitive) {
        case Primitive::Cylinder:
            return std::numbers::pi * r * r * h;
        case Primitive::Cone:
            return std::numbers::pi * r * r * h / 3.0;
        case Primitive::SphericalCap: {
            const double sphere_r = (r * r + h * h) / (2.0 * h);
            return std::numbers::pi * h * h * (3.0 * sphere_r - h) / 3.0;
        }
        case Primitive::Paraboloid:
            return std::numbers::pi * r * r * h / 2.0;
    }
    throw InvalidArgument("unknown primitive");
}

double dish_height_at(const DishSpec& spec, double rho) {
    const double r = spec.radius, h = spec.height;
    if (rho >= r) return 0.0;
    switch (spec.primitive) {
        case Primitive::Cylinder:
            return h;
        case Primitive::Cone:
            return h * (1.0 - rho / r);
        case Primitive::SphericalCap: {
            const double sphere_r = (r * r + h * h) / (2.0 * h);
            return std::sqrt(std::max(0.0, sphere_r * sphere_r - rho * rho)) - (sphere_r - h);
        }
        case Primitive::Paraboloid:
            return h * (1.0 - (rho / r) * (rho / r));
    }
    throw InvalidArgument("unknown primitive");
}

double cell_physical_volume(const DepthSimParams& p, int64_t image_size) {
    const double pitch = double(p.world_extent) / double(image_size);
    const double dz = double(p.far - p.near) / double(p.z_res - 1);
    return pitch * pitch * dz;
}

namespace {

Tensor rgb_to_tensor(const img::RgbU8& rgb) {
    const int64_t s = rgb.width;
    std::vector<float> data(size_t(3 * s * rgb.height));
    for (int64_t y = 0; y < rgb.height; ++y) {
        for (int64_t x = 0; x < s; ++x) {
            for (int64_t c = 0; c < 3; ++c) {
                data[size_t(c * rgb.height * s + y * s + x)] =
                    float(rgb.pixels[size_t((y * s + x) * 3 + c)]) / 255.0f;
            }
        }
    }
    return Tensor(Shape{3, rgb.height, s}, std::move(data));
}

struct Vec3 {
    double x, y, z;
};

Vec3 normalized(Vec3 v) {
    const double n = std::sqrt(v.x * v.x + v.y * v.y + v.z * v.z);
    return {v.x / n, v.y / n, v.z / n};
}

double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

constexpr Vec3 kLightDir{0.4, -0.3, 0.85};

uint8_t to_u8(double v) { return uint8_t(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

std::array<uint8_t, 3> hsv_color(double hue01) {
    const double h = hue01 * 6.0;
    const int i = int(h) % 6;
    const double f = h - std::floor(h);
    const double v = 0.88, s = 0.72;
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    double r, g, b;
    switch (i) {
        case 0: r = v; g = t; b = p; break;
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        default: r = v; g = p; b = q; break;
    }
    return {to_u8(r), to_u8(g), to_u8(b)};
}

} // namespace

Tensor DishSample::rgb_tensor() const { return rgb_to_tensor(rgb); }
Tensor SampleOnDisk::rgb_tensor() const { return rgb_to_tensor(rgb); }

std::vector<ClassSpec> default_class_table(int64_t classes) {
    if (classes < 2) throw InvalidArgument("class table: need K >= 2");
    static const Primitive kPrims[4] = {Primitive::SphericalCap, Primitive::Cone,
                                        Primitive::Cylinder, Primitive::Paraboloid};
    std::vector<ClassSpec> table;
    table.reserve(size_t(classes));
    for (int64_t i = 0; i < classes; ++i) {
        ClassSpec c;
        c.primitive = kPrims[i % 4];
        c.name = std::string(primitive_name(c.primitive)) + "_" + std::to_string(i);
        // densities span a 4x range so density errors show up in MAPE
        c.density = 0.5f + 1.5f * float(i) / float(classes - 1);
        c.color = hsv_color(double(i) / double(classes));
        table.push_back(c);
    }
    return table;
}

DishSample generate_dish(const DishSpec& spec, int64_t image_size, const DepthSimParams& params,
                         std::array<uint8_t, 3> color) {
    if (!(spec.radius > 0.0f) || !(spec.height > 0.0f)) {
        throw InvalidArgument("generate_dish: radius and height must be positive");
    }
    if (spec.radius >= spec.plate_radius) {
        throw InvalidArgument("generate_dish: dish radius " + std::to_string(spec.radius) +
                              " exceeds plate radius " + std::to_string(spec.plate_radius));
    }
    if (2.0f * spec.plate_radius > params.world_extent) {
        throw InvalidArgument("generate_dish: plate diameter " + std::to_string(2 * spec.plate_radius) +
                              " exceeds the imaged extent " + std::to_string(params.world_extent));
    }
    if (!(spec.height < params.far - params.near)) {
        throw InvalidArgument("generate_dish: dish height " + std::to_string(spec.height) +
                              " reaches past the near plane (range " +
                              std::to_string(params.far - params.near) + ")");
    }
    if (params.z_res < 2) throw InvalidArgument("generate_dish: z_res must be >= 2");

    const int64_t s = image_size;
    const double pitch = double(params.world_extent) / double(s);
    const double range = double(params.far - params.near);
    const double col_r = color[0] / 255.0, col_g = color[1] / 255.0, col_b = color[2] / 255.0;

    DishSample out;
    out.spec = spec;
    out.rgb = img::RgbU8{int(s), int(s), std::vector<uint8_t>(size_t(3 * s * s))};
    out.raw_depth =
        RawDepthMap{int(s), int(s), std::vector<uint16_t>(size_t(s * s)), params.near, params.far};
    out.mask = SegMask{int(s), int(s), std::vector<uint8_t>(size_t(s * s))};

    Rng rng(spec.seed);
    const Vec3 light = normalized(kLightDir);
    const Vec3 half = normalized({light.x, light.y, light.z + 1.0}); // view is straight down

    auto height_at_px = [&](int64_t ix, int64_t iy) {
        const double wx = (double(ix) + 0.5) * pitch - double(params.world_extent) / 2.0;
        const double wy = (double(iy) + 0.5) * pitch - double(params.world_extent) / 2.0;
        return dish_height_at(spec, std::hypot(wx, wy));
    };

    for (int64_t iy = 0; iy < s; ++iy) {
        for (int64_t ix = 0; ix < s; ++ix) {
            const int64_t i = iy * s + ix;
            const double wx = (double(ix) + 0.5) * pitch - double(params.world_extent) / 2.0;
            const double wy = (double(iy) + 0.5) * pitch - double(params.world_extent) / 2.0;
            const double rho = std::hypot(wx, wy);
            const double hval = dish_height_at(spec, rho);
            const bool on_dish = hval > 0.0;
            out.mask.values[size_t(i)] = on_dish ? 1 : 0;

            Vec3 normal{0.0, 0.0, 1.0};
            if (on_dish) {
                const double hx1 = ix + 1 < s ? height_at_px(ix + 1, iy) : 0.0;
                const double hx0 = ix > 0 ? height_at_px(ix - 1, iy) : 0.0;
                const double hy1 = iy + 1 < s ? height_at_px(ix, iy + 1) : 0.0;
                const double hy0 = iy > 0 ? height_at_px(ix, iy - 1) : 0.0;
                normal = normalized({-(hx1 - hx0) / (2.0 * pitch), -(hy1 - hy0) / (2.0 * pitch), 1.0});
            }
            const double spec_term =
                on_dish ? std::pow(std::max(0.0, dot(normal, half)), double(params.specular_shininess))
                        : 0.0;

            uint16_t sample = RawDepthMap::encode_fraction(1.0 - hval / range);
            if (params.holes) {
                const bool salt = rng.uniform() < double(params.salt_rate);
                if (salt || spec_term > double(params.specular_threshold)) sample = 0;
            }
            out.raw_depth.values[size_t(i)] = sample;

            double br, bg, bb;
            if (on_dish) {
                br = col_r;
                bg = col_g;
                bb = col_b;
            } else if (rho <= double(spec.plate_radius)) {
                br = bg = 0.78;
                bb = 0.80;
            } else {
                br = 0.27;
                bg = 0.28;
                bb = 0.29;
            }
            const double shade = 0.35 + 0.65 * std::max(0.0, dot(normal, light));
            double cr = br * shade + 0.25 * spec_term;
            double cg = bg * shade + 0.25 * spec_term;
            double cb = bb * shade + 0.25 * spec_term;
            if (params.noise_sigma > 0.0f) {
                cr += params.noise_sigma * rng.normal();
                cg += params.noise_sigma * rng.normal();
                cb += params.noise_sigma * rng.normal();
            }
            out.rgb.pixels[size_t(3 * i)] = to_u8(cr);
            out.rgb.pixels[size_t(3 * i + 1)] = to_u8(cg);
            out.rgb.pixels[size_t(3 * i + 2)] = to_u8(cb);
        }
    }

    out.true_volume = float(analytic_volume(spec) / cell_physical_volume(params, s));
    out.energy = spec.density * out.true_volume;
    return out;
}

// ---------------------------------------------------------------------------
// dataset on disk
// ---------------------------------------------------------------------------

namespace {

std::string sample_name(int64_t idx) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s%04d", int(idx));
    return buf;
}

nlohmann::ordered_json spec_json(const DishSpec& spec) {
    nlohmann::ordered_json j;
    j["primitive"] = primitive_name(spec.primitive);
    j["radius"] = spec.radius;
    j["height"] = spec.height;
    j["plate_radius"] = spec.plate_radius;
    return j;
}

} // namespace

int64_t SplitManifest::count(const std::string& split) const {
    return std::count_if(rows.begin(), rows.end(),
                         [&](const ManifestRow& r) { return r.split == split; });
}

std::vector<ManifestRow> LoadedDataset::split_rows(const std::string& split) const {
    std::vector<ManifestRow> out;
    for (const auto& r : rows) {
        if (r.split == split) out.push_back(r);
    }
    return out;
}

SplitManifest make_dataset(const DatasetConfig& cfg, const std::string& out_dir) {
    if (cfg.n < cfg.classes) {
        throw InvalidArgument("make_dataset: n=" + std::to_string(cfg.n) + " is smaller than K=" +
                              std::to_string(cfg.classes));
    }
    if (!(cfg.train_ratio > 0.0 && cfg.train_ratio < 1.0)) {
        throw InvalidArgument("make_dataset: train_ratio must be in (0,1)");
    }
    const std::vector<ClassSpec> table = default_class_table(cfg.classes);
    const Rng root_rng(cfg.seed);

    // split assignment: shuffled ids, first floor(n * ratio) train
    std::vector<int64_t> shuffled(size_t(cfg.n));
    for (int64_t i = 0; i < cfg.n; ++i) shuffled[size_t(i)] = i;
    {
        Rng split_rng = root_rng.derive(0x5eedc0de);
        split_rng.shuffle(shuffled);
    }
    const int64_t train_count = int64_t(std::floor(double(cfg.n) * cfg.train_ratio));
    std::vector<bool> is_train(size_t(cfg.n), false);
    for (int64_t i = 0; i < train_count; ++i) is_train[size_t(shuffled[size_t(i)])] = true;

    fs::create_directories(fs::path(out_dir) / "samples");

    SplitManifest manifest;
    manifest.seed = cfg.seed;
    manifest.train_ratio = cfg.train_ratio;

    const float extent = cfg.depth.world_extent;
    const float range = cfg.depth.far - cfg.depth.near;
    for (int64_t idx = 0; idx < cfg.n; ++idx) {
        const int64_t cls = idx % cfg.classes; // round-robin keeps classes balanced
        Rng srng = root_rng.derive(uint64_t(idx) + 1);

        DishSpec spec;
        spec.primitive = table[size_t(cls)].primitive;
        spec.class_id = cls;
        spec.density = table[size_t(cls)].density;
        spec.plate_radius = 0.45f * extent;
        spec.radius = float(srng.uniform(0.20, 0.36)) * extent;
        spec.height = float(srng.uniform(0.55, 0.90)) * range;
        spec.seed = srng.next_u64();

        const DishSample sample = generate_dish(spec, cfg.image_size, cfg.depth,
                                                table[size_t(cls)].color);

        const std::string id = sample_name(idx);
        const fs::path dir = fs::path(out_dir) / "samples" / id;
        fs::create_directories(dir);
        img::write_ppm8((dir / "rgb.ppm").string(), sample.rgb);
        save_depth_pgm((dir / "depth.pgm").string(), sample.raw_depth);
        save_mask_pgm((dir / "mask.pgm").string(), sample.mask);

        nlohmann::ordered_json meta;
        meta["class_id"] = spec.class_id;
        meta["density"] = spec.density;
        meta["true_volume"] = sample.true_volume;
        meta["energy_kcal"] = sample.energy;
        meta["spec"] = spec_json(spec);
        meta["seed"] = spec.seed;
        std::ofstream ms(dir / "meta.json", std::ios::trunc);
        if (!ms) throw IoError("cannot write " + (dir / "meta.json").string());
        ms << meta.dump(2) << "\n";

        manifest.rows.push_back(
            ManifestRow{id, is_train[size_t(idx)] ? "train" : "test", cls, sample.energy});
    }

    // manifest.csv
    {
        std::ofstream cs(fs::path(out_dir) / "manifest.csv", std::ios::trunc);
        if (!cs) throw IoError("cannot write manifest.csv under " + out_dir);
        cs << "sample_id,split,class_id,energy_kcal\n";
        char buf[64];
        for (const auto& r : manifest.rows) {
            std::snprintf(buf, sizeof(buf), "%.6f", double(r.energy));
            cs << r.sample_id << "," << r.split << "," << r.class_id << "," << buf << "\n";
        }
    }

    // dataset.json: global geometry + the class table
    {
        nlohmann::ordered_json j;
        j["n"] = cfg.n;
        j["classes"] = cfg.classes;
        j["train_ratio"] = cfg.train_ratio;
        j["seed"] = cfg.seed;
        j["image_size"] = cfg.image_size;
        j["z_res"] = cfg.depth.z_res;
        j["near"] = cfg.depth.near;
        j["far"] = cfg.depth.far;
        j["world_extent"] = cfg.depth.world_extent;
        j["holes"] = cfg.depth.holes;
        j["salt_rate"] = cfg.depth.salt_rate;
        j["specular_threshold"] = cfg.depth.specular_threshold;
        j["specular_shininess"] = cfg.depth.specular_shininess;
        j["noise_sigma"] = cfg.depth.noise_sigma;
        j["class_table"] = nlohmann::ordered_json::array();
        for (size_t i = 0; i < table.size(); ++i) {
            nlohmann::ordered_json c;
            c["id"] = i;
            c["name"] = table[i].name;
            c["primitive"] = primitive_name(table[i].primitive);
            c["color"] = table[i].color;
            c["density"] = table[i].density;
            j["class_table"].push_back(c);
        }
        std::ofstream js(fs::path(out_dir) / "dataset.json", std::ios::trunc);
        if (!js) throw IoError("cannot write dataset.json under " + out_dir);
        js << j.dump(2) << "\n";
    }

    return manifest;
}

LoadedDataset load_dataset(const std::string& dir) {
    const fs::path root(dir);
    if (!fs::exists(root / "dataset.json") || !fs::exists(root / "manifest.csv")) {
        throw MissingArtifact("no dataset at " + dir + " (dataset.json / manifest.csv not found)");
    }

    LoadedDataset ds;
    ds.root = dir;

    std::ifstream js(root / "dataset.json");
    nlohmann::json j = nlohmann::json::parse(js);
    ds.cfg.n = j.at("n").get<int64_t>();
    ds.cfg.classes = j.at("classes").get<int64_t>();
    ds.cfg.train_ratio = j.at("train_ratio").get<double>();
    ds.cfg.seed = j.at("seed").get<uint64_t>();
    ds.cfg.image_size = j.at("image_size").get<int64_t>();
    ds.cfg.depth.z_res = j.at("z_res").get<int64_t>();
    ds.cfg.depth.near = j.at("near").get<float>();
    ds.cfg.depth.far = j.at("far").get<float>();
    ds.cfg.depth.world_extent = j.at("world_extent").get<float>();
    ds.cfg.depth.holes = j.at("holes").get<bool>();
    ds.cfg.depth.salt_rate = j.at("salt_rate").get<float>();
    ds.cfg.depth.specular_threshold = j.at("specular_threshold").get<float>();
    ds.cfg.depth.specular_shininess = j.at("specular_shininess").get<float>();
    ds.cfg.depth.noise_sigma = j.at("noise_sigma").get<float>();
    for (const auto& c : j.at("class_table")) {
        ClassSpec cs;
        cs.name = c.at("name").get<std::string>();
        cs.primitive = primitive_from_name(c.at("primitive").get<std::string>());
        const auto col = c.at("color").get<std::vector<uint8_t>>();
        cs.color = {col.at(0), col.at(1), col.at(2)};
        cs.density = c.at("density").get<float>();
        ds.class_table.push_back(cs);
    }

    std::ifstream cs(root / "manifest.csv");
    std::string line;
    std::getline(cs, line); // header
    while (std::getline(cs, line)) {
        if (line.empty()) continue;
        ManifestRow r;
        size_t p0 = line.find(',');
        size_t p1 = line.find(',', p0 + 1);
        size_t p2 = line.find(',', p1 + 1);
        if (p0 == std::string::npos || p1 == std::string::npos || p2 == std::string::npos) {
            throw IoError("malformed manifest row: " + line);
        }
        r.sample_id = line.substr(0, p0);
        r.split = line.substr(p0 + 1, p1 - p0 - 1);
        r.class_id = std::stoll(line.substr(p1 + 1, p2 - p1 - 1));
        r.energy = std::stof(line.substr(p2 + 1));
        ds.rows.push_back(r);
    }
    return ds;
}

SampleOnDisk load_sample_dir(const std::string& sample_dir, float near, float far) {
    const fs::path dir(sample_dir);
    SampleOnDisk s;
    s.rgb = img::read_ppm8((dir / "rgb.ppm").string());
    s.depth = load_depth_pgm((dir / "depth.pgm").string(), near, far);
    s.mask = load_mask_pgm((dir / "mask.pgm").string());

    std::ifstream ms(dir / "meta.json");
    if (!ms) throw IoError("cannot open " + (dir / "meta.json").string());
    nlohmann::json meta = nlohmann::json::parse(ms);
    s.class_id = meta.at("class_id").get<int64_t>();
    s.density = meta.at("density").get<float>();
    s.true_volume = meta.at("true_volume").get<float>();
    s.energy = meta.at("energy_kcal").get<float>();
    return s;
}

SampleOnDisk load_sample(const LoadedDataset& ds, const std::string& sample_id) {
    const fs::path dir = fs::path(ds.root) / "samples" / sample_id;
    if (!fs::exists(dir)) throw MissingArtifact("missing sample directory: " + dir.string());
    return load_sample_dir(dir.string(), ds.cfg.depth.near, ds.cfg.depth.far);
}

} // namespace voxcal
