/*
 * nlmm - a nonlinear morphable face model library
 *
 * File: tests/test_autodiff.cpp
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
#include "nlmm/core/conv.hpp"
#include "nlmm/core/ops.hpp"
#include "nlmm/core/random.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace nlmm;
using nlmm::test::gradcheck;
using nlmm::test::random_array;

TEST_CASE("elementwise ops match finite differences")
{
    const std::vector<int> shape{3, 4};
    const Array x0 = random_array(12, 42, 0.1, 1.5);

    auto check = [&](const std::function<Tensor(const Tensor&)>& f, double tol = 1e-7) {
        auto r = gradcheck(f, x0, shape);
        CAPTURE(r.worst_index, r.analytic_at_worst, r.numeric_at_worst);
        REQUIRE(r.max_rel_error < tol);
    };

    check([](const Tensor& t) { return sum(mul(t, t)); });
    check([](const Tensor& t) { return mean(square(add(t, mul_scalar(t, 2.0)))); });
    check([](const Tensor& t) { return sum(sigmoid(t)); });
    check([](const Tensor& t) { return sum(exp_(mul_scalar(t, 0.3))); });
    check([](const Tensor& t) { return sum(leaky_relu(add_scalar(t, -0.7), 0.2)); });
    check([](const Tensor& t) { return sum(abs_(add_scalar(t, -0.8))); });
    check([](const Tensor& t) { return sum(sqrt_safe(t)); });
    check([](const Tensor& t) { return sum(pow_const(t, 0.8)); });
    check([](const Tensor& t) { return sum(div(Tensor::constant({3, 4}, 2.0), t)); });
    check([](const Tensor& t) {
        Tensor s = mean(t);
        return mul_tscalar(sum(square(t)), s);
    });
}

TEST_CASE("matmul and layout ops match finite differences")
{
    const Array x0 = random_array(12, 7, -1.0, 1.0);
    const Array w0 = random_array(20, 8, -1.0, 1.0);

    auto ra = gradcheck(
        [&](const Tensor& t) {
            Tensor w = Tensor::from_array({4, 5}, w0);
            return sum(square(matmul(t, w)));
        },
        x0, {3, 4});
    REQUIRE(ra.max_rel_error < 1e-7);

    auto rb = gradcheck(
        [&](const Tensor& t) {
            Tensor a = Tensor::from_array({3, 4}, x0);
            return sum(square(matmul(a, reshape(t, {4, 3}))));
        },
        x0, {12});
    REQUIRE(rb.max_rel_error < 1e-7);

    auto rc = gradcheck(
        [&](const Tensor& t) { return sum(square(transpose2d(slice_cols(t, 1, 2)))); }, x0,
        {3, 4});
    REQUIRE(rc.max_rel_error < 1e-7);

    auto rd = gradcheck(
        [&](const Tensor& t) {
            return sum(mul(slice_vec(t, 2, 5), slice_vec(t, 5, 5)));
        },
        x0, {12});
    REQUIRE(rd.max_rel_error < 1e-7);
}

TEST_CASE("row-wise geometry ops match finite differences")
{
    const Array x0 = random_array(12, 11, -1.0, 1.0);
    const Array y0 = random_array(12, 13, -1.0, 1.0);

    auto r1 = gradcheck([](const Tensor& t) { return sum(row_norm(t)); }, x0, {4, 3});
    REQUIRE(r1.max_rel_error < 1e-6);

    auto r2 = gradcheck(
        [&](const Tensor& t) {
            Tensor b = Tensor::from_array({4, 3}, y0);
            return sum(row_dot(normalize_rows(t), normalize_rows(b)));
        },
        x0, {4, 3});
    REQUIRE(r2.max_rel_error < 1e-6);

    auto r3 = gradcheck(
        [&](const Tensor& t) {
            Tensor b = Tensor::from_array({4, 3}, y0);
            return sum(square(cross_rows(t, b)));
        },
        x0, {4, 3});
    REQUIRE(r3.max_rel_error < 1e-6);

    auto r4 = gradcheck(
        [](const Tensor& t) {
            return sum(square(gather_rows(t, {0, 2, 2, 3})));
        },
        x0, {4, 3});
    REQUIRE(r4.max_rel_error < 1e-6);

    auto r5 = gradcheck(
        [](const Tensor& t) {
            return sum(square(scatter_add_rows(t, {1, 0, 1, 5}, 6)));
        },
        x0, {4, 3});
    REQUIRE(r5.max_rel_error < 1e-6);

    auto r6 = gradcheck(
        [](const Tensor& t) {
            return sum(square(bary_interp_rows(t, {{0, 1, 2}, {1, 3, 3}},
                                               {{0.2, 0.3, 0.5}, {0.1, 0.4, 0.5}})));
        },
        x0, {4, 3});
    REQUIRE(r6.max_rel_error < 1e-6);
}

TEST_CASE("grid ops match finite differences")
{
    const Array g0 = random_array(4 * 4 * 2, 17, -1.0, 1.0);

    auto r1 = gradcheck(
        [](const Tensor& t) { return sum(square(flip_horizontal(t))); }, g0, {4, 4, 2});
    REQUIRE(r1.max_rel_error < 1e-6);

    auto r2 = gradcheck(
        [](const Tensor& t) {
            Tensor other = Tensor::constant({4, 4, 1}, 0.5);
            return sum(square(concat_channels(t, other)));
        },
        g0, {4, 4, 2});
    REQUIRE(r2.max_rel_error < 1e-6);

    auto r3 = gradcheck(
        [](const Tensor& t) { return sum(square(slice_box(slice_channels(t, 0, 1), 1, 1, 2, 3))); },
        g0, {4, 4, 2});
    REQUIRE(r3.max_rel_error < 1e-6);

    auto r4 = gradcheck(
        [](const Tensor& t) {
            Tensor m = channel_mean(t);
            return sum(square(add_channels(mul_channels(t, m), m)));
        },
        g0, {4, 4, 2});
    REQUIRE(r4.max_rel_error < 1e-6);

    auto r5 = gradcheck(
        [](const Tensor& t) {
            return sum(square(bilinear_gather(t, {{0.5, 1.25}, {2.75, 0.0}, {3.0, 3.0}})));
        },
        g0, {4, 4, 2});
    REQUIRE(r5.max_rel_error < 1e-6);

    auto r6 = gradcheck(
        [](const Tensor& t) {
            return sum(square(rows_to_grid(reshape(t, {16, 2}), [] {
                std::vector<int> pix(16);
                for (int i = 0; i < 16; ++i)
                    pix[i] = (i * 7) % 25;
                return pix;
            }(), 5, 5)));
        },
        g0, {4, 4, 2});
    REQUIRE(r6.max_rel_error < 1e-6);

    auto r7 = gradcheck(
        [](const Tensor& t) {
            Tensor v = Tensor::from_array({2}, random_array(2, 3));
            return sum(square(add_rowvec(reshape(t, {16, 2}), v)));
        },
        g0, {4, 4, 2});
    REQUIRE(r7.max_rel_error < 1e-6);
}

TEST_CASE("bilinear_gather is exact on linear fields and rejects out-of-range points")
{
    // grid(u,v) = 2u - 3v + 1, exactly reproduced by bilinear interpolation
    Array g(5 * 5 * 1);
    for (int v = 0; v < 5; ++v)
        for (int u = 0; u < 5; ++u)
            g[v * 5 + u] = 2.0 * u - 3.0 * v + 1.0;
    Tensor grid = Tensor::from_array({5, 5, 1}, g);
    Tensor out = bilinear_gather(grid, {{1.25, 2.75}, {0.0, 0.0}, {4.0, 4.0}, {3.5, 0.5}});
    REQUIRE(out.at(0) == Catch::Approx(2 * 1.25 - 3 * 2.75 + 1).margin(1e-12));
    REQUIRE(out.at(1) == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(out.at(2) == Catch::Approx(2 * 4.0 - 3 * 4.0 + 1).margin(1e-12));
    REQUIRE(out.at(3) == Catch::Approx(2 * 3.5 - 3 * 0.5 + 1).margin(1e-12));

    REQUIRE_THROWS_AS(bilinear_gather(grid, {{-0.1, 0.0}}), std::invalid_argument);
    REQUIRE_THROWS_AS(bilinear_gather(grid, {{0.0, 4.001}}), std::invalid_argument);
}

TEST_CASE("conv2d matches finite differences and a direct loop")
{
    const int h = 5, w = 6, cin = 2, cout = 3, k = 3, stride = 2, pad = 1;
    const Array x0 = random_array(h * w * cin, 23);
    const Array w0 = random_array(k * k * cin * cout, 29, -0.5, 0.5);

    // direct triple-loop reference
    Tensor xt = Tensor::from_array({h, w, cin}, x0);
    Tensor wt = Tensor::from_array({k, k, cin, cout}, w0);
    Tensor y = conv2d(xt, wt, k, stride, pad);
    const int ho = (h + 2 * pad - k) / stride + 1;
    const int wo = (w + 2 * pad - k) / stride + 1;
    REQUIRE(y.shape() == std::vector<int>{ho, wo, cout});
    for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox)
            for (int co = 0; co < cout; ++co)
            {
                double acc = 0;
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx)
                    {
                        const int iy = oy * stride + ky - pad, ix = ox * stride + kx - pad;
                        if (iy < 0 || iy >= h || ix < 0 || ix >= w)
                            continue;
                        for (int ci = 0; ci < cin; ++ci)
                            acc += x0[(iy * w + ix) * cin + ci] *
                                   w0[((ky * k + kx) * cin + ci) * cout + co];
                    }
                REQUIRE(y.at((oy * wo + ox) * cout + co) == Catch::Approx(acc).margin(1e-12));
            }

    auto rx = gradcheck(
        [&](const Tensor& t) {
            Tensor wt2 = Tensor::from_array({k, k, cin, cout}, w0);
            return sum(square(conv2d(t, wt2, k, stride, pad)));
        },
        x0, {h, w, cin});
    REQUIRE(rx.max_rel_error < 1e-6);

    auto rw = gradcheck(
        [&](const Tensor& t) {
            Tensor xt2 = Tensor::from_array({h, w, cin}, x0);
            return sum(square(conv2d(xt2, t, k, stride, pad)));
        },
        w0, {k, k, cin, cout});
    REQUIRE(rw.max_rel_error < 1e-6);
}

TEST_CASE("conv_transpose2d upsamples x2 and matches finite differences")
{
    const int h = 3, w = 4, cin = 3, cout = 2, k = 4, stride = 2, pad = 1;
    const Array x0 = random_array(h * w * cin, 31);
    const Array w0 = random_array(cin * k * k * cout, 37, -0.5, 0.5);

    Tensor y = conv_transpose2d(Tensor::from_array({h, w, cin}, x0),
                                Tensor::from_array({cin, k, k, cout}, w0), k, stride, pad);
    REQUIRE(y.shape() == std::vector<int>{2 * h, 2 * w, cout});

    // direct scatter reference
    Array ref = Array::Zero(2 * h * 2 * w * cout);
    for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < w; ++xx)
            for (int ci = 0; ci < cin; ++ci)
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx)
                    {
                        const int oy = yy * stride + ky - pad, ox = xx * stride + kx - pad;
                        if (oy < 0 || oy >= 2 * h || ox < 0 || ox >= 2 * w)
                            continue;
                        for (int co = 0; co < cout; ++co)
                            ref[(oy * 2 * w + ox) * cout + co] +=
                                x0[(yy * w + xx) * cin + ci] *
                                w0[((ci * k + ky) * k + kx) * cout + co];
                    }
    for (int i = 0; i < ref.size(); ++i)
        REQUIRE(y.at(i) == Catch::Approx(ref[i]).margin(1e-12));

    auto rx = gradcheck(
        [&](const Tensor& t) {
            Tensor wt = Tensor::from_array({cin, k, k, cout}, w0);
            return sum(square(conv_transpose2d(t, wt, k, stride, pad)));
        },
        x0, {h, w, cin});
    REQUIRE(rx.max_rel_error < 1e-6);

    auto rw = gradcheck(
        [&](const Tensor& t) {
            Tensor xt = Tensor::from_array({h, w, cin}, x0);
            return sum(square(conv_transpose2d(xt, t, k, stride, pad)));
        },
        w0, {cin, k, k, cout});
    REQUIRE(rw.max_rel_error < 1e-6);
}

TEST_CASE("place_patches_max fuses patches with max and routes gradients to argmax")
{
    Tensor p0 = Tensor::from_array({2, 2, 1}, random_array(4, 41, 0.0, 1.0));
    Tensor p1 = Tensor::from_array({2, 2, 1}, random_array(4, 43, 0.0, 1.0));
    std::vector<PatchBox> boxes{{0, 0, 2, 2}, {0, 1, 2, 2}};
    Tensor canvas = place_patches_max({p0, p1}, boxes, 3, 3, 1);
    REQUIRE(canvas.shape() == std::vector<int>{3, 3, 1});
    // non-overlap columns
    REQUIRE(canvas.at(0) == p0.at(0));
    REQUIRE(canvas.at(2) == p1.at(1));
    // overlap column takes the max
    REQUIRE(canvas.at(1) == std::max(p0.at(1), p1.at(0)));
    // uncovered row stays zero
    REQUIRE(canvas.at(6) == 0.0);
    REQUIRE(canvas.at(7) == 0.0);

    const Array flat = random_array(8, 47, 0.0, 1.0);
    auto r = gradcheck(
        [&](const Tensor& t) {
            Tensor a = reshape(slice_vec(t, 0, 4), {2, 2, 1});
            Tensor b = reshape(slice_vec(t, 4, 4), {2, 2, 1});
            return sum(square(place_patches_max({a, b}, boxes, 3, 3, 1)));
        },
        flat, {8});
    REQUIRE(r.max_rel_error < 1e-6);
}

TEST_CASE("rodrigues produces rotations and correct derivatives")
{
    // 90 degree yaw about +y maps (1,0,0) to (0,0,-1)
    Array r(3);
    r << 0.0, M_PI / 2.0, 0.0;
    Tensor R = rodrigues(Tensor::from_array({3}, r));
    Eigen::Vector3d x(1, 0, 0);
    Eigen::Matrix3d Rm;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            Rm(i, j) = R.at(i * 3 + j);
    const Eigen::Vector3d y = Rm * x;
    REQUIRE(y[0] == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(y[1] == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(y[2] == Catch::Approx(-1.0).margin(1e-12));
    REQUIRE((Rm * Rm.transpose() - Eigen::Matrix3d::Identity()).norm() < 1e-12);

    for (std::uint64_t seed : {1ull, 2ull, 3ull})
    {
        const Array r0 = random_array(3, seed, -1.5, 1.5);
        auto res = gradcheck(
            [](const Tensor& t) {
                Tensor w = Tensor::from_array({3, 3}, random_array(9, 99));
                return sum(mul(rodrigues(t), w));
            },
            r0, {3});
        CAPTURE(seed, res.worst_index);
        REQUIRE(res.max_rel_error < 1e-6);
    }
    // near-zero angle branch
    auto res0 = gradcheck(
        [](const Tensor& t) {
            Tensor w = Tensor::from_array({3, 3}, random_array(9, 98));
            return sum(mul(rodrigues(t), w));
        },
        random_array(3, 5, -1e-8, 1e-8), {3});
    REQUIRE(res0.max_rel_error < 1e-4);
}

TEST_CASE("gradients accumulate across backward calls and sinks redirect parameters")
{
    Tensor p = Tensor::variable({2}, random_array(2, 51));
    p.node()->is_param = true;
    p.node()->param_index = 0;

    sum(square(p)).backward();
    Array g1 = p.grad();
    sum(square(p)).backward();
    REQUIRE((p.grad() - 2.0 * g1).abs().maxCoeff() < 1e-14);

    GradSink sink(1);
    set_grad_sink(&sink);
    sum(square(p)).backward();
    set_grad_sink(nullptr);
    REQUIRE(sink.touched(0));
    REQUIRE((sink.at(0) - g1).abs().maxCoeff() < 1e-14);
    // node-local grad untouched by the sinked pass
    REQUIRE((p.grad() - 2.0 * g1).abs().maxCoeff() < 1e-14);
}

TEST_CASE("detach cuts the graph")
{
    Tensor p = Tensor::variable({3}, random_array(3, 53));
    Tensor d = p.detach();
    REQUIRE_FALSE(d.requires_grad());
    Tensor y = sum(mul(d, d));
    REQUIRE_FALSE(y.requires_grad());
}
