// License: Apache 2.0. See LICENSE file in root directory.
// Copyright (c) 2026 voxcal contributors
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace voxcal::img {

struct GrayU8 {
    int width = 0, height = 0;
    std::vector<uint8_t> pixels;
};

struct GrayU16 {
    int width = 0, height = 0;
    std::vector<uint16_t> pixels;
};

struct RgbU8 {
    int width = 0, height = 0;
    std::vector<uint8_t> pixels; // interleaved r,g,b
};

// Binary netpbm. 16-bit PGM samples are big-endian on disk per the format.
void write_pgm8(const std::string& path, const GrayU8& im);
GrayU8 read_pgm8(const std::string& path);

void write_pgm16(const std::string& path, const GrayU16& im);
GrayU16 read_pgm16(const std::string& path);

void write_ppm8(const std::string& path, const RgbU8& im);
RgbU8 read_ppm8(const std::string& path);

} // namespace voxcal::img
