/*
 * nlmm - a nonlinear morphable face model library
 *
 * File: include/nlmm/render/render.hpp
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

#include "nlmm/core/container.hpp"
#include "nlmm/geom/mesh_ops.hpp"
#include "nlmm/render/raster.hpp"
#include "nlmm/render/sh.hpp"

namespace nlmm::render {

/// Number of full render() passes on this thread; the pairing structure of
/// the training objective is asserted against this.
inline long& render_call_count()
{
    thread_local long count = 0;
    return count;
}

struct RenderResult
{
    Tensor image;        // H x W x 3; zero on background (zero gradient there)
    Tensor covered_rows; // m x 3 values at covered pixels, row-major pixel order
    RasterResult raster; // fixed assignment + debug maps
};

/**
 * Shade with a fixed rasterization assignment. Gradients flow to the albedo
 * grid, lighting, the position grid (through vertex normals) and the pose
 * rotation, with (tri_id, bary) held constant.
 */
inline RenderResult shade_with_assignment(const RasterResult& raster, const geom::PoseTensors& pose,
                                          const Tensor& lighting, const Tensor& s_uv,
                                          const Tensor& a_uv, const geom::MeshTopology& topo)
{
    RenderResult out;
    out.raster = raster;

    Tensor verts = geom::uv_to_vertices(s_uv, topo);
    Tensor albedo_v = geom::uv_to_vertices(a_uv, topo);
    Tensor normals = geom::vertex_normals(verts, topo);
    Tensor rot = rodrigues(pose.axis_angle);
    Tensor normals_cam = matmul(normals, transpose2d(rot));

    if (raster.covered_count() == 0)
    {
        out.covered_rows = Tensor::constant({0, 3}, 0.0);
        out.image = Tensor::constant({raster.height, raster.width, 3}, 0.0);
        return out;
    }

    Tensor n_pix = normalize_rows(bary_interp_rows(normals_cam, raster.corner_rows, raster.corner_wts));
    Tensor shading = matmul(sh_basis_rows(n_pix), lighting_matrix(lighting));
    Tensor a_pix = bary_interp_rows(albedo_v, raster.corner_rows, raster.corner_wts);
    out.covered_rows = mul(a_pix, shading);
    out.image = rows_to_grid(out.covered_rows, raster.pixels, raster.height, raster.width);
    return out;
}

/**
 * Full rendering layer: sample UV grids to the mesh, project, rasterize,
 * then shade. image(q) = albedo(q) * shading(q) on covered pixels, 0
 * elsewhere. Values are not clamped here; clamping happens at image
 * serialization only.
 */
inline RenderResult render(const geom::PoseTensors& pose, const Tensor& lighting,
                           const Tensor& s_uv, const Tensor& a_uv,
                           const geom::MeshTopology& topo, int height, int width)
{
    ++render_call_count();
    Tensor verts = geom::uv_to_vertices(s_uv, topo);
    geom::ProjectedTensors proj = geom::project(pose, verts);
    RasterResult raster =
        rasterize(proj.points2d.value(), proj.depth.value(), topo, height, width);
    return shade_with_assignment(raster, pose, lighting, s_uv, a_uv, topo);
}

/// Plain-array convenience (no gradients).
inline RenderResult render_plain(const geom::Pose& pose, const Array& lighting, const Array& s_uv,
                                 const Array& a_uv, const geom::MeshTopology& topo, int height,
                                 int width)
{
    const int V = topo.uv_height, U = topo.uv_width;
    return render(geom::PoseTensors::constant(pose), Tensor::from_array({27}, lighting),
                  Tensor::from_array({V, U, 3}, s_uv), Tensor::from_array({V, U, 3}, a_uv), topo,
                  height, width);
}

/// Debug dump of all render buffers into one named-tensor archive.
inline void dump_render_buffers(const RenderResult& r, const std::string& path)
{
    const int h = r.raster.height, w = r.raster.width;
    TensorArchive ar;
    ar.put("image", {h, w, 3}, r.image.value());
    ar.put("covered", {h, w}, r.raster.covered);
    Array tids(h * w);
    for (int p = 0; p < h * w; ++p)
        tids[p] = r.raster.tri_id[p];
    ar.put("tri_id", {h, w}, std::move(tids));
    ar.put("bary", {h, w, 3}, r.raster.bary);
    ar.put("depth", {h, w}, r.raster.depth);
    ar.save(path);
}

} // namespace nlmm::render
