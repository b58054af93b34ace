/*
 * nlmm - a nonlinear morphable face model library
 *
 * File: tests/test_render.cpp
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
#include "helpers/gradcheck.hpp"
#include "helpers/oracles.hpp"
#include "nlmm/render/render.hpp"
#include "nlmm/render/unwrap.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

using namespace nlmm;
using namespace nlmm::geom;
using namespace nlmm::render;
using nlmm::test::random_array;

namespace {

MeshTopology fake_topology(const std::vector<std::array<int, 3>>& tris, int q)
{
    MeshTopology t;
    t.num_vertices = q;
    t.triangles = tris;
    return t;
}

/// Frontal scene on the mini face topology: returns (topo, s_uv, a_uv, pose, L).
struct MiniScene
{
    MeshTopology topo;
    Array s_uv, a_uv, lighting;
    Pose pose;
    int image_size;
};

MiniScene make_mini_scene(int uv = 8, int image = 16, std::uint64_t seed = 1234)
{
    MiniScene sc;
    sc.topo = make_face_topology(uv, uv);
    sc.s_uv = mean_shape_grid(sc.topo);
    Rng rng(seed);
    sc.a_uv = Array(uv * uv * 3);
    for (int i = 0; i < sc.a_uv.size(); ++i)
        sc.a_uv[i] = rng.uniform(0.2, 0.9);
    sc.lighting = ambient_lighting(0.8);
    for (int i = 0; i < 27; ++i)
        sc.lighting[i] += rng.uniform(-0.12, 0.12);
    sc.pose.scale = image * 0.35;
    sc.pose.translation = {image / 2.0, image / 2.0, 0.0};
    sc.pose.axis_angle = {0.05, 0.3, -0.04};
    sc.image_size = image;
    return sc;
}

} // namespace

TEST_CASE("rasterize: full cover, z-order, ties, degenerate input handling")
{
    // one big triangle covering the whole 4x4 image
    MeshTopology topo = fake_topology({{0, 1, 2}}, 3);
    Array pts(6), depth(3);
    pts << -10, -10, 30, -10, -10, 30;
    depth << 0, 0, 0;
    RasterResult rb = rasterize(pts, depth, topo, 4, 4);
    REQUIRE(rb.covered.sum() == 16.0);
    for (int p = 0; p < 16; ++p)
    {
        REQUIRE(rb.tri_id[p] == 0);
        REQUIRE(rb.covered[p] == 1.0);
        // bary nonnegative, sums to one
        const double w0 = rb.bary[p * 3], w1 = rb.bary[p * 3 + 1], w2 = rb.bary[p * 3 + 2];
        REQUIRE(w0 >= 0.0);
        REQUIRE(w1 >= 0.0);
        REQUIRE(w2 >= 0.0);
        REQUIRE(w0 + w1 + w2 == Catch::Approx(1.0).margin(1e-12));
    }

    // two stacked triangles; the nearer one (larger camera z) wins
    MeshTopology two = fake_topology({{0, 1, 2}, {3, 4, 5}}, 6);
    Array pts2(12), depth2(6);
    pts2 << -10, -10, 30, -10, -10, 30, -10, -10, 30, -10, -10, 30;
    depth2 << 0, 0, 0, 1, 1, 1;
    RasterResult rb2 = rasterize(pts2, depth2, two, 4, 4);
    for (int p = 0; p < 16; ++p)
    {
        REQUIRE(rb2.tri_id[p] == 1);
        REQUIRE(rb2.depth[p] == Catch::Approx(1.0));
    }

    // exact tie goes to the lowest triangle index
    depth2 << 2, 2, 2, 2, 2, 2;
    RasterResult rb3 = rasterize(pts2, depth2, two, 4, 4);
    for (int p = 0; p < 16; ++p)
        REQUIRE(rb3.tri_id[p] == 0);

    // empty image dimensions rejected
    REQUIRE_THROWS_AS(rasterize(pts, depth, topo, 0, 4), std::invalid_argument);
    // non-finite input rejected
    Array bad = pts;
    bad[0] = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(rasterize(bad, depth, topo, 4, 4), std::invalid_argument);
}

TEST_CASE("rasterize matches the brute-force oracle on random meshes")
{
    Rng rng(777);
    for (int trial = 0; trial < 25; ++trial)
    {
        const int n_tri = rng.uniform_int(1, 20);
        MeshTopology topo;
        topo.num_vertices = 3 * n_tri;
        Array pts(topo.num_vertices * 2), depth(topo.num_vertices);
        for (int t = 0; t < n_tri; ++t)
        {
            topo.triangles.push_back({3 * t, 3 * t + 1, 3 * t + 2});
            for (int k = 0; k < 3; ++k)
            {
                pts[(3 * t + k) * 2] = rng.uniform(-6.0, 38.0);
                pts[(3 * t + k) * 2 + 1] = rng.uniform(-6.0, 38.0);
                depth[3 * t + k] = rng.uniform(-2.0, 2.0);
            }
        }
        RasterResult rb = rasterize(pts, depth, topo, 32, 32);
        auto oracle = nlmm::test::raster_oracle(pts, depth, topo.triangles, 32, 32);
        for (int py = 0; py < 32; ++py)
            for (int px = 0; px < 32; ++px)
            {
                if (!nlmm::test::far_from_all_edges(px + 0.5, py + 0.5, pts, topo.triangles, 0.5))
                    continue;
                const int p = py * 32 + px;
                CAPTURE(trial, px, py);
                REQUIRE(rb.tri_id[p] == oracle[p].tri);
                if (oracle[p].tri >= 0)
                {
                    for (int k = 0; k < 3; ++k)
                        REQUIRE(rb.bary[p * 3 + k] ==
                                Catch::Approx(oracle[p].bary[k]).margin(1e-9));
                    REQUIRE(rb.depth[p] == Catch::Approx(oracle[p].depth).margin(1e-9));
                }
            }
    }
}

TEST_CASE("sh_shading: band-0 constant, zeros, polynomial oracle, unit check")
{
    // only band-0 coefficient c per channel -> shading c * 0.282095 everywhere
    Array L = Array::Zero(27);
    L[0] = 0.7;
    L[9] = 1.1;
    L[18] = -0.3;
    Array normals = random_array(5 * 3, 10, -1.0, 1.0);
    for (int i = 0; i < 5; ++i)
    {
        const double n = std::sqrt(normals.segment(i * 3, 3).square().sum());
        normals.segment(i * 3, 3) /= n;
    }
    Tensor sh = sh_shading(Tensor::from_array({5, 3}, normals), Tensor::from_array({27}, L));
    for (int i = 0; i < 5; ++i)
    {
        REQUIRE(sh.at(i * 3 + 0) == Catch::Approx(0.7 * 0.282095).margin(1e-12));
        REQUIRE(sh.at(i * 3 + 1) == Catch::Approx(1.1 * 0.282095).margin(1e-12));
        REQUIRE(sh.at(i * 3 + 2) == Catch::Approx(-0.3 * 0.282095).margin(1e-12));
    }

    // all-zero coefficients -> zero shading
    Tensor sh0 = sh_shading(Tensor::from_array({5, 3}, normals), Tensor::constant({27}, 0.0));
    REQUIRE(sh0.value().abs().maxCoeff() == 0.0);

    // random coefficients at n = (0,0,1) and at random normals: direct oracle
    Rng rng(2025);
    for (int trial = 0; trial < 200; ++trial)
    {
        Array coeffs = random_array(27, 3000 + trial, -1.0, 1.0);
        std::array<double, 3> n;
        if (trial == 0)
            n = {0.0, 0.0, 1.0};
        else
        {
            double len = 0;
            for (auto& c : n)
                c = rng.normal();
            len = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
            for (auto& c : n)
                c /= len;
        }
        Array nv(3);
        nv << n[0], n[1], n[2];
        Tensor out = sh_shading(Tensor::from_array({1, 3}, nv), Tensor::from_array({27}, coeffs));
        for (int ch = 0; ch < 3; ++ch)
            REQUIRE(out.at(ch) ==
                    Catch::Approx(nlmm::test::sh_shading_oracle(n, coeffs.data() + 9 * ch))
                        .margin(1e-12));
    }

    // non-unit normal beyond tolerance is rejected
    Array badn(3);
    badn << 0.0, 0.0, 1.01;
    REQUIRE_THROWS_AS(sh_shading(Tensor::from_array({1, 3}, badn), Tensor::from_array({27}, L)),
                      std::invalid_argument);
}

TEST_CASE("render: ambient identity, multiplicative albedo, linearity")
{
    MeshTopology topo = make_face_topology(8, 8);
    const int U = 8, V = 8;

    // frontal plane: z = 0 everywhere
    Array plane(V * U * 3);
    for (int r = 0; r < V; ++r)
        for (int c = 0; c < U; ++c)
        {
            plane[(r * U + c) * 3] = (c - topo.center_u) / topo.radius_u;
            plane[(r * U + c) * 3 + 1] = (topo.center_v - r) / topo.radius_v;
            plane[(r * U + c) * 3 + 2] = 0.0;
        }
    Pose pose;
    pose.scale = 5.0;
    pose.translation = {8, 8, 0};

    // uniform albedo 1 and ambient with band-0 = 1/0.282095 -> image exactly 1
    Array ones = Array::Constant(V * U * 3, 1.0);
    RenderResult rr =
        render_plain(pose, ambient_lighting(1.0), plane, ones, topo, 16, 16);
    REQUIRE(rr.raster.covered_count() > 20);
    for (int i = 0; i < rr.covered_rows.numel(); ++i)
        REQUIRE(rr.covered_rows.at(i) == Catch::Approx(1.0).margin(1e-12));

    // zero albedo -> zero image on covered pixels
    RenderResult r0 = render_plain(pose, ambient_lighting(1.0), plane,
                                   Array(Array::Zero(V * U * 3)), topo, 16, 16);
    REQUIRE(r0.image.value().abs().maxCoeff() == 0.0);

    // doubling all lighting coefficients doubles the image exactly
    MiniScene sc = make_mini_scene();
    RenderResult a = render_plain(sc.pose, sc.lighting, sc.s_uv, sc.a_uv, sc.topo, 16, 16);
    Array l2 = sc.lighting * 2.0;
    RenderResult b = render_plain(sc.pose, l2, sc.s_uv, sc.a_uv, sc.topo, 16, 16);
    REQUIRE((b.image.value() - 2.0 * a.image.value()).abs().maxCoeff() < 1e-12);

    // linear in albedo as well
    Array a2 = sc.a_uv * 0.5;
    RenderResult c = render_plain(sc.pose, sc.lighting, sc.s_uv, a2, sc.topo, 16, 16);
    REQUIRE((c.image.value() - 0.5 * a.image.value()).abs().maxCoeff() < 1e-12);

    // render call counting
    const long before = render_call_count();
    render_plain(sc.pose, sc.lighting, sc.s_uv, sc.a_uv, sc.topo, 16, 16);
    REQUIRE(render_call_count() == before + 1);

    // buffers dump round-trips through the archive
    const std::string path = std::filesystem::temp_directory_path() / "nlmm_buffers_test.bin";
    dump_render_buffers(a, path);
    TensorArchive ar = TensorArchive::load(path);
    REQUIRE(ar.get("image").shape == std::vector<int>{16, 16, 3});
    REQUIRE((ar.get("image").data - a.image.value()).abs().maxCoeff() == 0.0);
    REQUIRE(ar.get("tri_id").data.minCoeff() == -1.0);
    std::filesystem::remove(path);
}

TEST_CASE("render gradients match finite differences under fixed assignment")
{
    MiniScene sc = make_mini_scene();
    const int S = sc.image_size;
    PoseTensors pose = PoseTensors::constant(sc.pose);
    Tensor lighting = Tensor::from_array({27}, sc.lighting);
    Tensor s_uv = Tensor::from_array({8, 8, 3}, sc.s_uv);
    Tensor a_uv = Tensor::from_array({8, 8, 3}, sc.a_uv);

    // fixed assignment computed once from the base geometry
    RenderResult base = nlmm::render::render(pose, lighting, s_uv, a_uv, sc.topo, S, S);
    const RasterResult raster = base.raster;

    // weighted sum over the image as the scalar probe
    const Array probe_w = random_array(S * S * 3, 999, -1.0, 1.0);
    Tensor w = Tensor::from_array({S, S, 3}, probe_w);

    auto r_albedo = nlmm::test::gradcheck(
        [&](const Tensor& t) {
            return sum(mul(shade_with_assignment(raster, pose, lighting, s_uv, t, sc.topo).image, w));
        },
        sc.a_uv, {8, 8, 3}, 1e-5);
    REQUIRE(r_albedo.max_rel_error < 1e-4);

    auto r_light = nlmm::test::gradcheck(
        [&](const Tensor& t) {
            return sum(mul(shade_with_assignment(raster, pose, t, s_uv, a_uv, sc.topo).image, w));
        },
        sc.lighting, {27}, 1e-5);
    REQUIRE(r_light.max_rel_error < 1e-4);

    auto r_shape = nlmm::test::gradcheck(
        [&](const Tensor& t) {
            return sum(mul(shade_with_assignment(raster, pose, lighting, t, a_uv, sc.topo).image, w));
        },
        sc.s_uv, {8, 8, 3}, 1e-5);
    REQUIRE(r_shape.max_rel_error < 1e-4);

    // background pixels carry zero gradient to every input
    Tensor a_var = Tensor::variable({8, 8, 3}, sc.a_uv);
    RenderResult rr = shade_with_assignment(raster, pose, lighting, s_uv, a_var, sc.topo);
    // probe selects only background pixels
    Array bg_probe = Array::Zero(S * S * 3);
    for (int p = 0; p < S * S; ++p)
        if (rr.raster.covered[p] == 0.0)
            for (int chn = 0; chn < 3; ++chn)
                bg_probe[p * 3 + chn] = 1.0;
    sum(mul(rr.image, Tensor::from_array({S, S, 3}, bg_probe))).backward();
    REQUIRE_FALSE(a_var.has_grad()); // nothing reaches the albedo leaf
}

TEST_CASE("unwrap_texture: round trip, constant image, back-facing")
{
    MeshTopology topo = make_face_topology(32, 32);
    Array s_uv = mean_shape_grid(topo);
    Rng rng(4242);
    Array a_uv(32 * 32 * 3);
    for (int i = 0; i < a_uv.size(); ++i)
        a_uv[i] = rng.uniform(0.25, 0.85);
    // smooth the albedo so image-space interpolation error stays small
    for (int pass = 0; pass < 3; ++pass)
    {
        Array s = a_uv;
        for (int r = 1; r < 31; ++r)
            for (int c = 1; c < 31; ++c)
                for (int ch = 0; ch < 3; ++ch)
                    a_uv[(r * 32 + c) * 3 + ch] =
                        0.2 * s[(r * 32 + c) * 3 + ch] +
                        0.2 * (s[((r - 1) * 32 + c) * 3 + ch] + s[((r + 1) * 32 + c) * 3 + ch] +
                               s[(r * 32 + c - 1) * 3 + ch] + s[(r * 32 + c + 1) * 3 + ch]);
    }
    Pose pose;
    pose.scale = 22.0;
    pose.translation = {32, 32, 0};
    pose.axis_angle = {0.0, 0.25, 0.0};
    Array lighting = ambient_lighting(0.85);
    lighting[2] += 0.15; // mild directional term

    RenderResult rr = render_plain(pose, lighting, s_uv, a_uv, topo, 64, 64);
    Image img;
    img.height = img.width = 64;
    img.channels = 3;
    img.data = rr.image.value();

    UnwrappedTexture un = unwrap_texture(img, pose, s_uv, topo);

    // reference: albedo * shading evaluated directly in UV space
    const Array verts = uv_to_vertices_plain(s_uv, 3, topo);
    const Array normals = vertex_normals_plain(verts, topo);
    const Eigen::Matrix3d R = pose.rotation();
    const auto vp = topo.vertex_pixels();
    int checked = 0;
    for (int v = 0; v < topo.num_vertices; ++v)
    {
        const int p = vp[v];
        if (un.valid[p] == 0.0)
            continue;
        // skip pixels whose UV neighborhood touches the mask boundary: their
        // image-space footprint mixes in background
        const int r = p / 32, c = p % 32;
        bool interior = r > 0 && r < 31 && c > 0 && c < 31;
        for (int dr = -1; dr <= 1 && interior; ++dr)
            for (int dc = -1; dc <= 1; ++dc)
                interior = interior && topo.in_mask(r + dr, c + dc);
        if (!interior)
            continue;
        ++checked;
        Eigen::Vector3d n(normals[v * 3], normals[v * 3 + 1], normals[v * 3 + 2]);
        const Eigen::Vector3d ncam = R * n;
        for (int ch = 0; ch < 3; ++ch)
        {
            const double shading = nlmm::test::sh_shading_oracle(
                {ncam[0], ncam[1], ncam[2]}, lighting.data() + 9 * ch);
            const double expect = a_uv[p * 3 + ch] * shading;
            REQUIRE(un.texture[p * 3 + ch] == Catch::Approx(expect).margin(0.02));
        }
    }
    REQUIRE(checked > 200);

    // constant-color image unwraps to a constant on valid pixels
    Image flat = Image::zeros(64, 64, 3);
    flat.data.setConstant(0.4);
    UnwrappedTexture uc = unwrap_texture(flat, pose, s_uv, topo);
    for (int p = 0; p < 32 * 32; ++p)
        if (uc.valid[p] == 1.0)
            for (int ch = 0; ch < 3; ++ch)
                REQUIRE(uc.texture[p * 3 + ch] == Catch::Approx(0.4).margin(1e-12));

    // fully back-facing shape: nothing is valid
    Pose back;
    back.scale = 22.0;
    back.translation = {32, 32, 0};
    back.axis_angle = {0.0, M_PI, 0.0};
    UnwrappedTexture ub = unwrap_texture(img, back, s_uv, topo);
    REQUIRE(ub.valid.maxCoeff() == 0.0);
}
