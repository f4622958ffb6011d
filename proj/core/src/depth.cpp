// License: Apache 2.0. See LICENSE file in root directory.
// Copyright (c) 2026 voxcal contributors
#include "voxcal/depth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "voxcal/errors.hpp"

namespace voxcal {

uint16_t RawDepthMap::encode_fraction(double frac) {
    frac = std::clamp(frac, 0.0, 1.0);
    return uint16_t(1 + std::lround(frac * 65534.0));
}

double RawDepthMap::decode_fraction(uint16_t v) { return double(v - 1) / 65534.0; }

int64_t RawDepthMap::missing_count() const {
    return std::count(values.begin(), values.end(), uint16_t(0));
}

int64_t SegMask::popcount() const {
    return std::count_if(values.begin(), values.end(), [](uint8_t v) { return v != 0; });
}

int64_t NormalizedDepthMap::valid_count() const {
    return std::count_if(valid.begin(), valid.end(), [](uint8_t v) { return v != 0; });
}

RawDepthMap inpaint_dilate(const RawDepthMap& raw, int max_iters) {
    const int64_t n = raw.pixel_count();
    if (int64_t(raw.values.size()) != n) throw InvalidArgument("inpaint_dilate: bad value count");
    if (raw.missing_count() == n) {
        throw InvalidArgument("inpaint_dilate: every pixel is missing, nothing to extend");
    }

    RawDepthMap cur = raw;
    const int w = raw.width, h = raw.height;
    int64_t missing = cur.missing_count();

    for (int iter = 0; iter < max_iters && missing > 0; ++iter) {
        RawDepthMap next = cur;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const int64_t i = int64_t(y) * w + x;
                if (cur.values[size_t(i)] != 0) continue;
                int64_t sum = 0, cnt = 0;
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (dx == 0 && dy == 0) continue;
                        const int nx = x + dx, ny = y + dy;
                        if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
                        const uint16_t v = cur.values[size_t(int64_t(ny) * w + nx)];
                        if (v != 0) {
                            sum += v;
                            ++cnt;
                        }
                    }
                }
                if (cnt > 0) {
                    next.values[size_t(i)] =
                        uint16_t(std::lround(double(sum) / double(cnt)));
                    --missing;
                }
            }
        }
        cur = std::move(next);
    }

    if (missing > 0) {
        throw InvalidArgument("inpaint_dilate: " + std::to_string(missing) +
                              " pixels still missing after " + std::to_string(max_iters) +
                              " iterations");
    }
    return cur;
}

MaskedDepth apply_mask(const RawDepthMap& depth, const SegMask& mask) {
    if (depth.width != mask.width || depth.height != mask.height) {
        throw InvalidArgument("apply_mask: depth " + std::to_string(depth.width) + "x" +
                              std::to_string(depth.height) + " vs mask " +
                              std::to_string(mask.width) + "x" + std::to_string(mask.height));
    }
    if (mask.popcount() == 0) throw InvalidArgument("apply_mask: mask has no food pixels");
    return MaskedDepth{depth, mask};
}

NormalizedDepthMap normalize(const RawDepthMap& depth, const SegMask& mask) {
    if (!(depth.near < depth.far)) {
        throw InvalidArgument("normalize: near (" + std::to_string(depth.near) +
                              ") must be < far (" + std::to_string(depth.far) + ")");
    }
    if (depth.width != mask.width || depth.height != mask.height) {
        throw InvalidArgument("normalize: depth/mask dimension mismatch");
    }
    NormalizedDepthMap out;
    out.width = depth.width;
    out.height = depth.height;
    out.near = depth.near;
    out.far = depth.far;
    out.values.assign(size_t(depth.pixel_count()), 0.0f);
    out.valid.assign(size_t(depth.pixel_count()), 0);
    const float range = depth.far - depth.near;
    for (int64_t i = 0; i < depth.pixel_count(); ++i) {
        if (mask.values[size_t(i)] == 0) continue;
        if (depth.values[size_t(i)] == 0) {
            throw InvalidArgument("normalize: missing sample at masked pixel " + std::to_string(i) +
                                  "; inpaint first");
        }
        const float phys = depth.physical(i);
        out.values[size_t(i)] = std::clamp((phys - depth.near) / range, 0.0f, 1.0f);
        out.valid[size_t(i)] = 1;
    }
    return out;
}

uint16_t denormalize_value(float value) { return RawDepthMap::encode_fraction(double(value)); }

// ---------------------------------------------------------------------------
// persistence
// ---------------------------------------------------------------------------

void save_depth_pgm(const std::string& path, const RawDepthMap& d) {
    img::write_pgm16(path, img::GrayU16{d.width, d.height, d.values});
}

RawDepthMap load_depth_pgm(const std::string& path, float near, float far) {
    img::GrayU16 im = img::read_pgm16(path);
    return RawDepthMap{im.width, im.height, std::move(im.pixels), near, far};
}

void save_mask_pgm(const std::string& path, const SegMask& m) {
    img::GrayU8 im{m.width, m.height, std::vector<uint8_t>(m.values.size())};
    for (size_t i = 0; i < m.values.size(); ++i) im.pixels[i] = m.values[i] ? 255 : 0;
    img::write_pgm8(path, im);
}

SegMask load_mask_pgm(const std::string& path) {
    img::GrayU8 im = img::read_pgm8(path);
    SegMask m{im.width, im.height, std::vector<uint8_t>(im.pixels.size())};
    for (size_t i = 0; i < im.pixels.size(); ++i) m.values[i] = im.pixels[i] >= 128 ? 1 : 0;
    return m;
}

void save_normalized(const std::string& path_prefix, const NormalizedDepthMap& d) {
    {
        std::ofstream os(path_prefix + ".f32", std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot write " + path_prefix + ".f32");
        for (size_t i = 0; i < d.values.size(); ++i) {
            const float v = d.valid[i] ? d.values[i] : -1.0f;
            os.write(reinterpret_cast<const char*>(&v), sizeof(float));
        }
    }
    nlohmann::ordered_json side;
    side["width"] = d.width;
    side["height"] = d.height;
    side["near"] = d.near;
    side["far"] = d.far;
    std::ofstream js(path_prefix + ".json", std::ios::trunc);
    if (!js) throw IoError("cannot write " + path_prefix + ".json");
    js << side.dump(2) << "\n";
}

NormalizedDepthMap load_normalized(const std::string& path_prefix) {
    std::ifstream js(path_prefix + ".json");
    if (!js) throw IoError("cannot open " + path_prefix + ".json");
    nlohmann::json side = nlohmann::json::parse(js);

    NormalizedDepthMap d;
    d.width = side.at("width").get<int>();
    d.height = side.at("height").get<int>();
    d.near = side.at("near").get<float>();
    d.far = side.at("far").get<float>();
    const size_t n = size_t(d.width) * size_t(d.height);
    d.values.assign(n, 0.0f);
    d.valid.assign(n, 0);

    std::ifstream is(path_prefix + ".f32", std::ios::binary);
    if (!is) throw IoError("cannot open " + path_prefix + ".f32");
    for (size_t i = 0; i < n; ++i) {
        float v;
        is.read(reinterpret_cast<char*>(&v), sizeof(float));
        if (!is) throw IoError("truncated " + path_prefix + ".f32");
        if (v >= 0.0f) {
            d.values[i] = v;
            d.valid[i] = 1;
        }
    }
    return d;
}

} // namespace voxcal
