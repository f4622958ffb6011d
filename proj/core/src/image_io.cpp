// License: Apache 2.0. See LICENSE file in root directory.
// Copyright (c) 2026 voxcal contributors
#include "voxcal/image_io.hpp"

#include <filesystem>
#include <fstream>

#include "voxcal/errors.hpp"

namespace voxcal::img {

namespace {

void ensure_parent(const std::string& path) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
}

std::ofstream open_out(const std::string& path) {
    ensure_parent(path);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    return os;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    return is;
}

// Reads one whitespace-delimited token, skipping '#' comments.
std::string next_token(std::istream& is) {
    std::string tok;
    int c;
    while ((c = is.get()) != EOF) {
        if (c == '#') {
            while ((c = is.get()) != EOF && c != '\n') {}
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(char(c));
    }
    return tok;
}

struct PnmHeader {
    std::string magic;
    int width, height, maxval;
};

PnmHeader read_header(std::istream& is, const std::string& path) {
    PnmHeader h;
    h.magic = next_token(is);
    try {
        h.width = std::stoi(next_token(is));
        h.height = std::stoi(next_token(is));
        h.maxval = std::stoi(next_token(is));
    } catch (const std::exception&) {
        throw IoError("malformed netpbm header in " + path);
    }
    if (h.width <= 0 || h.height <= 0) throw IoError("bad dimensions in " + path);
    return h;
}

} // namespace

void write_pgm8(const std::string& path, const GrayU8& im) {
    if (int64_t(im.pixels.size()) != int64_t(im.width) * im.height) {
        throw InvalidArgument("write_pgm8: pixel count does not match dimensions");
    }
    auto os = open_out(path);
    os << "P5\n" << im.width << " " << im.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(im.pixels.data()), std::streamsize(im.pixels.size()));
    if (!os) throw IoError("failed writing " + path);
}

GrayU8 read_pgm8(const std::string& path) {
    auto is = open_in(path);
    const PnmHeader h = read_header(is, path);
    if (h.magic != "P5" || h.maxval != 255) throw IoError("expected 8-bit P5 PGM: " + path);
    GrayU8 im{h.width, h.height, std::vector<uint8_t>(size_t(h.width) * size_t(h.height))};
    is.read(reinterpret_cast<char*>(im.pixels.data()), std::streamsize(im.pixels.size()));
    if (!is) throw IoError("truncated PGM: " + path);
    return im;
}

void write_pgm16(const std::string& path, const GrayU16& im) {
    if (int64_t(im.pixels.size()) != int64_t(im.width) * im.height) {
        throw InvalidArgument("write_pgm16: pixel count does not match dimensions");
    }
    auto os = open_out(path);
    os << "P5\n" << im.width << " " << im.height << "\n65535\n";
    std::vector<uint8_t> buf(im.pixels.size() * 2);
    for (size_t i = 0; i < im.pixels.size(); ++i) {
        buf[2 * i] = uint8_t(im.pixels[i] >> 8);
        buf[2 * i + 1] = uint8_t(im.pixels[i] & 0xff);
    }
    os.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
    if (!os) throw IoError("failed writing " + path);
}

GrayU16 read_pgm16(const std::string& path) {
    auto is = open_in(path);
    const PnmHeader h = read_header(is, path);
    if (h.magic != "P5" || h.maxval != 65535) throw IoError("expected 16-bit P5 PGM: " + path);
    GrayU16 im{h.width, h.height, std::vector<uint16_t>(size_t(h.width) * size_t(h.height))};
    std::vector<uint8_t> buf(im.pixels.size() * 2);
    is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
    if (!is) throw IoError("truncated PGM: " + path);
    for (size_t i = 0; i < im.pixels.size(); ++i) {
        im.pixels[i] = uint16_t((uint16_t(buf[2 * i]) << 8) | buf[2 * i + 1]);
    }
    return im;
}

void write_ppm8(const std::string& path, const RgbU8& im) {
    if (int64_t(im.pixels.size()) != int64_t(im.width) * im.height * 3) {
        throw InvalidArgument("write_ppm8: pixel count does not match dimensions");
    }
    auto os = open_out(path);
    os << "P6\n" << im.width << " " << im.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(im.pixels.data()), std::streamsize(im.pixels.size()));
    if (!os) throw IoError("failed writing " + path);
}

RgbU8 read_ppm8(const std::string& path) {
    auto is = open_in(path);
    const PnmHeader h = read_header(is, path);
    if (h.magic != "P6" || h.maxval != 255) throw IoError("expected 8-bit P6 PPM: " + path);
    RgbU8 im{h.width, h.height, std::vector<uint8_t>(size_t(h.width) * size_t(h.height) * 3)};
    is.read(reinterpret_cast<char*>(im.pixels.data()), std::streamsize(im.pixels.size()));
    if (!is) throw IoError("truncated PPM: " + path);
    return im;
}

} // namespace voxcal::img
