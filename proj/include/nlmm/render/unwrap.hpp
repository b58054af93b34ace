/*
 * nlmm - a nonlinear morphable face model library
 *
 * File: include/nlmm/render/unwrap.hpp
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

#include "nlmm/core/image.hpp"
#include "nlmm/geom/mesh_ops.hpp"

namespace nlmm::render {

struct UnwrappedTexture
{
    Array texture; // V x U x 3
    Array valid;   // V x U, 1 where visible and sampled inside the image
};

/**
 * Pull image colors back onto the UV grid: every masked UV pixel projects its
 * surface point into the image and samples it bilinearly. valid = front-facing
 * (soft visibility > 0.5) and inside the image. Channel count of the input
 * image is preserved in `texture` columns 0..C-1 (C = 3 for RGB).
 */
inline UnwrappedTexture unwrap_texture(const Image& image, const geom::Pose& pose,
                                       const Array& s_uv, const geom::MeshTopology& topo)
{
    const int U = topo.uv_width, V = topo.uv_height;
    const int C = image.channels;
    UnwrappedTexture out;
    out.texture = Array::Zero(V * U * C);
    out.valid = Array::Zero(V * U);

    const Array verts = geom::uv_to_vertices_plain(s_uv, 3, topo);
    const geom::Projected proj = geom::project_plain(pose, verts, topo.num_vertices);
    const Array vis = geom::visibility_mask_uv_plain(s_uv, pose, topo);
    const std::vector<int> vp = topo.vertex_pixels();

    for (int v = 0; v < topo.num_vertices; ++v)
    {
        const int p = vp[v];
        if (vis[p] <= 0.5)
            continue;
        const double x = proj.points2d[v * 2] - 0.5; // pixel centers at integer + 0.5
        const double y = proj.points2d[v * 2 + 1] - 0.5;
        if (!(x >= 0.0 && x <= image.width - 1 && y >= 0.0 && y <= image.height - 1))
            continue;
        const int x0 = std::min(static_cast<int>(std::floor(x)), image.width - 2 < 0 ? 0 : image.width - 2);
        const int y0 = std::min(static_cast<int>(std::floor(y)), image.height - 2 < 0 ? 0 : image.height - 2);
        const double fx = x - x0, fy = y - y0;
        for (int c = 0; c < C; ++c)
        {
            const double v00 = image.at(y0, x0, c);
            const double v01 = image.at(y0, std::min(x0 + 1, image.width - 1), c);
            const double v10 = image.at(std::min(y0 + 1, image.height - 1), x0, c);
            const double v11 =
                image.at(std::min(y0 + 1, image.height - 1), std::min(x0 + 1, image.width - 1), c);
            out.texture[p * C + c] = (1 - fx) * (1 - fy) * v00 + fx * (1 - fy) * v01 +
                                     (1 - fx) * fy * v10 + fx * fy * v11;
        }
        out.valid[p] = 1.0;
    }
    return out;
}

} // namespace nlmm::render
