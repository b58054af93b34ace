/*
 * nlmm - a nonlinear morphable face model library
 *
 * File: include/nlmm/render/raster.hpp
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
#include "nlmm/geom/topology.hpp"

namespace nlmm::render {

/**
 * Rasterization result: one pass produces both the per-pixel maps and a
 * compact covered-pixel list used to build the differentiable shading graph.
 * The assignment (tri_id, barycentric weights) is treated as fixed during
 * differentiation.
 */
struct RasterResult
{
    int height = 0, width = 0;
    std::vector<int> tri_id; // H*W, -1 background
    Array bary;              // H*W*3
    Array depth;             // H*W, camera-space z; larger = closer
    Array covered;           // H*W in {0,1}

    // covered-pixel list, row-major order
    std::vector<int> pixels;                        // linear pixel index
    std::vector<std::array<int, 3>> corner_rows;    // vertex ids per covered pixel
    std::vector<std::array<double, 3>> corner_wts;  // matching barycentric weights

    int covered_count() const { return static_cast<int>(pixels.size()); }
};

/**
 * Z-buffer rasterization of projected triangles over pixel centers at
 * (col + 0.5, row + 0.5). The camera looks along -z, so among covering
 * triangles the one with the largest interpolated camera-space z (smallest
 * camera distance) wins; exact ties go to the lowest triangle index.
 */
inline RasterResult rasterize(const Array& points2d, const Array& depth,
                              const geom::MeshTopology& topo, int height, int width)
{
    ensure(height > 0 && width > 0, "rasterize: image dimensions must be positive");
    ensure(points2d.size() == 2 * topo.num_vertices, "rasterize: points2d size mismatch");
    ensure(static_cast<int>(depth.size()) == topo.num_vertices, "rasterize: depth size mismatch");
    ensure(points2d.isFinite().all() && depth.isFinite().all(), "rasterize: non-finite input");

    RasterResult rb;
    rb.height = height;
    rb.width = width;
    rb.tri_id.assign(static_cast<std::size_t>(height) * width, -1);
    rb.bary = Array::Zero(height * width * 3);
    rb.depth = Array::Zero(height * width);
    rb.covered = Array::Zero(height * width);
    Array zbuf = Array::Constant(height * width, -std::numeric_limits<double>::infinity());

    const double tie_eps = 1e-12;
    for (int t = 0; t < static_cast<int>(topo.triangles.size()); ++t)
    {
        const auto& tri = topo.triangles[t];
        const double ax = points2d[tri[0] * 2], ay = points2d[tri[0] * 2 + 1];
        const double bx = points2d[tri[1] * 2], by = points2d[tri[1] * 2 + 1];
        const double cx = points2d[tri[2] * 2], cy = points2d[tri[2] * 2 + 1];
        const double det = (bx - ax) * (cy - ay) - (cx - ax) * (by - ay);
        if (std::abs(det) < 1e-14)
            continue; // zero-area in projection

        const int x0 = std::max(0, static_cast<int>(std::floor(std::min({ax, bx, cx}) - 0.5)));
        const int x1 = std::min(width - 1, static_cast<int>(std::ceil(std::max({ax, bx, cx}))));
        const int y0 = std::max(0, static_cast<int>(std::floor(std::min({ay, by, cy}) - 0.5)));
        const int y1 = std::min(height - 1, static_cast<int>(std::ceil(std::max({ay, by, cy}))));

        for (int py = y0; py <= y1; ++py)
            for (int px = x0; px <= x1; ++px)
            {
                const double qx = px + 0.5, qy = py + 0.5;
                double w1 = ((qx - ax) * (cy - ay) - (cx - ax) * (qy - ay)) / det;
                double w2 = ((bx - ax) * (qy - ay) - (qx - ax) * (by - ay)) / det;
                double w0 = 1.0 - w1 - w2;
                if (w0 < -1e-12 || w1 < -1e-12 || w2 < -1e-12)
                    continue;
                w0 = std::max(w0, 0.0);
                w1 = std::max(w1, 0.0);
                w2 = std::max(w2, 0.0);
                const double s = w0 + w1 + w2;
                w0 /= s;
                w1 /= s;
                w2 /= s;
                const double z = w0 * depth[tri[0]] + w1 * depth[tri[1]] + w2 * depth[tri[2]];
                const int p = py * width + px;
                if (z > zbuf[p] + tie_eps) // strictly nearer wins; ties keep lowest index
                {
                    zbuf[p] = z;
                    rb.tri_id[p] = t;
                    rb.bary[p * 3] = w0;
                    rb.bary[p * 3 + 1] = w1;
                    rb.bary[p * 3 + 2] = w2;
                    rb.depth[p] = z;
                }
            }
    }

    for (int p = 0; p < height * width; ++p)
        if (rb.tri_id[p] >= 0)
        {
            rb.covered[p] = 1.0;
            rb.pixels.push_back(p);
            const auto& tri = topo.triangles[rb.tri_id[p]];
            rb.corner_rows.push_back({tri[0], tri[1], tri[2]});
            rb.corner_wts.push_back({rb.bary[p * 3], rb.bary[p * 3 + 1], rb.bary[p * 3 + 2]});
        }
    return rb;
}

} // namespace nlmm::render
