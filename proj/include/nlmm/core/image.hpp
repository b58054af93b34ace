/*
 * nlmm - a nonlinear morphable face model library
 *
 * File: include/nlmm/core/image.hpp
 *
 * Copyright 2026 The nlmm authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include "nlmm/core/common.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace nlmm {

/// H x W x C raster with values in [0,1]; flat row-major storage.
struct Image
{
    int height = 0, width = 0, channels = 0;
    Array data;

    static Image zeros(int h, int w, int c)
    {
        Image im;
        im.height = h;
        im.width = w;
        im.channels = c;
        im.data = Array::Zero(h * w * c);
        return im;
    }

    double& at(int r, int c, int ch) { return data[idx3(r, c, ch, width, channels)]; }
    double at(int r, int c, int ch) const { return data[idx3(r, c, ch, width, channels)]; }
};

namespace detail {
inline int next_pnm_int(std::istream& in)
{
    // skips whitespace and '#' comments
    int c = in.get();
    while (c != EOF)
    {
        if (c == '#')
        {
            while (c != EOF && c != '\n')
                c = in.get();
        }
        else if (!std::isspace(c))
            break;
        else
            c = in.get();
    }
    require_state(c != EOF, "pnm: unexpected end of header");
    std::string tok;
    while (c != EOF && !std::isspace(c))
    {
        tok.push_back(static_cast<char>(c));
        c = in.get();
    }
    return std::stoi(tok);
}

inline unsigned char quantize(double v)
{
    const double c = std::clamp(v, 0.0, 1.0);
    return static_cast<unsigned char>(std::lround(c * 255.0));
}
} // namespace detail

/// Writes 8-bit RGB as binary PPM (P6). Values are clamped to [0,1] here,
/// at serialization only.
inline void write_ppm(const std::string& path, const Image& im)
{
    ensure(im.channels == 3, "write_ppm: 3-channel image required");
    std::ofstream out(path, std::ios::binary);
    require_state(out.good(), "write_ppm: cannot open " + path);
    out << "P6\n" << im.width << " " << im.height << "\n255\n";
    std::vector<unsigned char> buf(static_cast<std::size_t>(im.height) * im.width * 3);
    for (std::size_t i = 0; i < buf.size(); ++i)
        buf[i] = detail::quantize(im.data[static_cast<int>(i)]);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    require_state(out.good(), "write_ppm: write failed " + path);
}

inline Image read_ppm(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    require_state(in.good(), "read_ppm: cannot open " + path);
    char m0 = static_cast<char>(in.get()), m1 = static_cast<char>(in.get());
    require_state(m0 == 'P' && m1 == '6', "read_ppm: not a P6 file: " + path);
    const int w = detail::next_pnm_int(in);
    const int h = detail::next_pnm_int(in);
    const int maxval = detail::next_pnm_int(in);
    require_state(maxval == 255, "read_ppm: only maxval 255 supported");
    std::vector<unsigned char> buf(static_cast<std::size_t>(h) * w * 3);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    require_state(in.gcount() == static_cast<std::streamsize>(buf.size()),
                  "read_ppm: truncated pixel data in " + path);
    Image im = Image::zeros(h, w, 3);
    for (std::size_t i = 0; i < buf.size(); ++i)
        im.data[static_cast<int>(i)] = buf[i] / 255.0;
    return im;
}

/// RGBA raster for stickers; PAM (P7, RGB_ALPHA, 8-bit).
inline void write_pam_rgba(const std::string& path, const Image& im)
{
    ensure(im.channels == 4, "write_pam_rgba: 4-channel image required");
    std::ofstream out(path, std::ios::binary);
    require_state(out.good(), "write_pam_rgba: cannot open " + path);
    out << "P7\nWIDTH " << im.width << "\nHEIGHT " << im.height
        << "\nDEPTH 4\nMAXVAL 255\nTUPLTYPE RGB_ALPHA\nENDHDR\n";
    std::vector<unsigned char> buf(static_cast<std::size_t>(im.height) * im.width * 4);
    for (std::size_t i = 0; i < buf.size(); ++i)
        buf[i] = detail::quantize(im.data[static_cast<int>(i)]);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

inline Image read_pam_rgba(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    require_state(in.good(), "read_pam_rgba: cannot open " + path);
    std::string line;
    std::getline(in, line);
    require_state(line == "P7", "read_pam_rgba: not a P7 file: " + path);
    int w = 0, h = 0, depth = 0, maxval = 0;
    while (std::getline(in, line) && line != "ENDHDR")
    {
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "WIDTH")
            ls >> w;
        else if (key == "HEIGHT")
            ls >> h;
        else if (key == "DEPTH")
            ls >> depth;
        else if (key == "MAXVAL")
            ls >> maxval;
    }
    require_state(w > 0 && h > 0 && depth == 4 && maxval == 255,
                  "read_pam_rgba: unsupported header in " + path);
    std::vector<unsigned char> buf(static_cast<std::size_t>(h) * w * 4);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    require_state(in.gcount() == static_cast<std::streamsize>(buf.size()),
                  "read_pam_rgba: truncated pixel data in " + path);
    Image im = Image::zeros(h, w, 4);
    for (std::size_t i = 0; i < buf.size(); ++i)
        im.data[static_cast<int>(i)] = buf[i] / 255.0;
    return im;
}

} // namespace nlmm
