#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "ssldg/errors.hpp"
#include "ssldg/image.hpp"

namespace ssldg {

// Binary PGM (P5) IO. Intensity images are written with maxval 65535 (scaled
// from [0,1], two bytes per pixel, most significant byte first per the netpbm
// convention); label masks use maxval = class count, one byte when it fits.

namespace detail {

struct PgmHeader {
    int w = 0;
    int h = 0;
    int maxval = 0;
    std::size_t data_offset = 0;
};

// Reads "P5 <w> <h> <maxval>" allowing '#' comments; throws ParseError with
// the byte offset of the offending token.
inline PgmHeader read_pgm_header(std::istream& is) {
    auto fail = [&](const std::string& what) -> ParseError {
        auto pos = is.tellg();
        const long long off = pos < 0 ? -1 : static_cast<long long>(pos);
        return ParseError("pgm: " + what + " at byte " + std::to_string(off));
    };
    char m0 = 0, m1 = 0;
    if (!is.get(m0) || !is.get(m1)) throw fail("truncated magic");
    if (m0 != 'P' || m1 != '5') throw fail("expected P5 magic");

    auto next_token_int = [&](const char* what) -> int {
        // skip whitespace and comments
        int c = is.peek();
        while (c != EOF && (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '#')) {
            if (c == '#') {
                while (c != EOF && c != '\n') {
                    is.get();
                    c = is.peek();
                }
            } else {
                is.get();
                c = is.peek();
            }
        }
        if (c == EOF) throw fail(std::string("missing ") + what);
        long v = 0;
        bool any = false;
        while (c != EOF && c >= '0' && c <= '9') {
            v = v * 10 + (c - '0');
            if (v > 1 << 30) throw fail(std::string("implausible ") + what);
            is.get();
            c = is.peek();
            any = true;
        }
        if (!any) throw fail(std::string("malformed ") + what);
        return static_cast<int>(v);
    };

    PgmHeader hd;
    hd.w = next_token_int("width");
    hd.h = next_token_int("height");
    hd.maxval = next_token_int("maxval");
    if (hd.w <= 0 || hd.h <= 0) throw fail("non-positive dimensions");
    if (hd.maxval <= 0 || hd.maxval > 65535) throw fail("maxval out of range");
    int c = is.get();  // single whitespace byte before raster
    if (c == EOF) throw fail("missing raster");
    hd.data_offset = static_cast<std::size_t>(is.tellg());
    return hd;
}

inline std::vector<int> read_pgm_raster(std::istream& is, const PgmHeader& hd) {
    const std::size_t count = static_cast<std::size_t>(hd.w) * hd.h;
    const bool wide = hd.maxval > 255;
    std::vector<char> raw(count * (wide ? 2 : 1));
    if (!is.read(raw.data(), static_cast<std::streamsize>(raw.size()))) {
        const std::size_t got = static_cast<std::size_t>(is.gcount());
        throw ParseError("pgm: raster truncated at byte " + std::to_string(hd.data_offset + got));
    }
    std::vector<int> px(count);
    if (wide) {
        for (std::size_t i = 0; i < count; ++i) {
            const unsigned hi = static_cast<unsigned char>(raw[2 * i]);
            const unsigned lo = static_cast<unsigned char>(raw[2 * i + 1]);
            px[i] = static_cast<int>((hi << 8) | lo);
        }
    } else {
        for (std::size_t i = 0; i < count; ++i) px[i] = static_cast<unsigned char>(raw[i]);
    }
    return px;
}

}  // namespace detail

inline void write_pgm(const std::string& path, const Image& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ParseError("pgm: cannot open for writing: " + path);
    os << "P5\n" << img.w << " " << img.h << "\n65535\n";
    std::vector<char> raw(img.size() * 2);
    for (std::size_t i = 0; i < img.size(); ++i) {
        double v = std::min(1.0, std::max(0.0, img.pix[i]));
        const unsigned q = static_cast<unsigned>(std::lround(v * 65535.0));
        raw[2 * i] = static_cast<char>((q >> 8) & 0xFF);
        raw[2 * i + 1] = static_cast<char>(q & 0xFF);
    }
    os.write(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (!os) throw ParseError("pgm: write failed: " + path);
}

inline void write_pgm(const std::string& path, const Mask& mask, int classes) {
    int top = 0;
    for (int v : mask.lab) top = std::max(top, v);
    if (classes <= top) throw ContractError("write_pgm: class count must exceed the largest label");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ParseError("pgm: cannot open for writing: " + path);
    os << "P5\n" << mask.w << " " << mask.h << "\n" << classes << "\n";
    if (classes > 255) {
        std::vector<char> raw(mask.size() * 2);
        for (std::size_t i = 0; i < mask.size(); ++i) {
            raw[2 * i] = static_cast<char>((mask.lab[i] >> 8) & 0xFF);
            raw[2 * i + 1] = static_cast<char>(mask.lab[i] & 0xFF);
        }
        os.write(raw.data(), static_cast<std::streamsize>(raw.size()));
    } else {
        std::vector<char> raw(mask.size());
        for (std::size_t i = 0; i < mask.size(); ++i) raw[i] = static_cast<char>(mask.lab[i]);
        os.write(raw.data(), static_cast<std::streamsize>(raw.size()));
    }
    if (!os) throw ParseError("pgm: write failed: " + path);
}

inline Image read_pgm_image(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("pgm: cannot open: " + path);
    const auto hd = detail::read_pgm_header(is);
    const auto px = detail::read_pgm_raster(is, hd);
    Image img(hd.h, hd.w);
    const double inv = 1.0 / hd.maxval;
    for (std::size_t i = 0; i < px.size(); ++i) img.pix[i] = px[i] * inv;
    return img;
}

// Returns the mask plus the class count recorded in the header's maxval.
inline std::pair<Mask, int> read_pgm_mask(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("pgm: cannot open: " + path);
    const auto hd = detail::read_pgm_header(is);
    const auto px = detail::read_pgm_raster(is, hd);
    Mask m(hd.h, hd.w);
    m.lab = px;
    return {std::move(m), hd.maxval};
}

}  // namespace ssldg
