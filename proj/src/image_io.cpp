#include "mapunetr/image_io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace mapunetr {

namespace {

uint8_t quantize(float v) {
    float q = std::floor(v * 255.f + 0.5f);
    if (q < 0.f) q = 0.f;
    if (q > 255.f) q = 255.f;
    return static_cast<uint8_t>(q);
}

// reads one whitespace/comment-delimited header token
std::string next_token(std::istream& in) {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    return tok;
}

void read_header(std::istream& in, const std::string& path, const std::string& magic, size_t& w,
                 size_t& h) {
    std::string m = next_token(in);
    if (m != magic) throw IoError(path + ": bad magic '" + m + "', expected " + magic);
    try {
        w = std::stoul(next_token(in));
        h = std::stoul(next_token(in));
        size_t maxval = std::stoul(next_token(in));
        if (maxval != 255) throw IoError(path + ": only maxval 255 is supported");
    } catch (const std::logic_error&) {
        throw IoError(path + ": malformed header");
    }
}

}  // namespace

void write_ppm(const std::string& path, const Image& img) {
    if (img.c != 3) throw IoError(path + ": PPM requires 3 channels, image has " + std::to_string(img.c));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "P6\n" << img.w << " " << img.h << "\n255\n";
    std::vector<uint8_t> row(img.w * 3);
    for (size_t y = 0; y < img.h; ++y) {
        for (size_t x = 0; x < img.w; ++x)
            for (size_t c = 0; c < 3; ++c) row[x * 3 + c] = quantize(img.at(y, x, c));
        out.write(reinterpret_cast<const char*>(row.data()), row.size());
    }
}

Image read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    size_t w, h;
    read_header(in, path, "P6", w, h);
    Image img(h, w, 3);
    std::vector<uint8_t> buf(w * h * 3);
    in.read(reinterpret_cast<char*>(buf.data()), buf.size());
    if (static_cast<size_t>(in.gcount()) != buf.size()) throw IoError(path + ": truncated pixel data");
    for (size_t i = 0; i < buf.size(); ++i) img.data[i] = buf[i] / 255.f;
    return img;
}

void write_pgm(const std::string& path, const Image& img) {
    if (img.c != 1) throw IoError(path + ": PGM requires 1 channel, image has " + std::to_string(img.c));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "P5\n" << img.w << " " << img.h << "\n255\n";
    std::vector<uint8_t> row(img.w);
    for (size_t y = 0; y < img.h; ++y) {
        for (size_t x = 0; x < img.w; ++x) row[x] = quantize(img.at(y, x, 0));
        out.write(reinterpret_cast<const char*>(row.data()), row.size());
    }
}

void write_mask_pgm(const std::string& path, const Mask& mask) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "P5\n" << mask.w << " " << mask.h << "\n255\n";
    out.write(reinterpret_cast<const char*>(mask.data.data()), mask.data.size());
}

Mask read_mask_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    size_t w, h;
    read_header(in, path, "P5", w, h);
    Mask mask(h, w);
    in.read(reinterpret_cast<char*>(mask.data.data()), mask.data.size());
    if (static_cast<size_t>(in.gcount()) != mask.data.size())
        throw IoError(path + ": truncated pixel data");
    return mask;
}

}  // namespace mapunetr
