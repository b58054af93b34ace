/*
 * nlmm - a nonlinear morphable face model library
 *
 * File: include/nlmm/core/conv.hpp
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

#include "nlmm/core/ops.hpp"

namespace nlmm {

/**
 * 2-D convolution on an (H x W x Cin) grid.
 * Weight layout: (k, k, Cin, Cout) row-major; output is (Ho x Wo x Cout).
 * Implemented as im2col + GEMM; im2col rows are output pixels, columns are
 * (ky, kx, ci) taps, so the flattened GEMM result is already HWC.
 */
inline Tensor conv2d(const Tensor& x, const Tensor& weight, int k, int stride, int pad)
{
    ensure(x.shape().size() == 3, "conv2d: rank-3 input required");
    const int h = x.shape()[0], w = x.shape()[1], cin = x.shape()[2];
    ensure(weight.numel() % (k * k * cin) == 0, "conv2d: weight size mismatch");
    const int cout = weight.numel() / (k * k * cin);
    const int ho = (h + 2 * pad - k) / stride + 1;
    const int wo = (w + 2 * pad - k) / stride + 1;
    ensure(ho > 0 && wo > 0, "conv2d: empty output");

    const int taps = k * k * cin;
    MatRM cols(ho * wo, taps);
    cols.setZero();
    for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox)
        {
            double* row = cols.row(oy * wo + ox).data();
            for (int ky = 0; ky < k; ++ky)
            {
                const int iy = oy * stride + ky - pad;
                if (iy < 0 || iy >= h)
                    continue;
                for (int kx = 0; kx < k; ++kx)
                {
                    const int ix = ox * stride + kx - pad;
                    if (ix < 0 || ix >= w)
                        continue;
                    const double* src = x.value().data() + (iy * w + ix) * cin;
                    double* dst = row + (ky * k + kx) * cin;
                    for (int ci = 0; ci < cin; ++ci)
                        dst[ci] = src[ci];
                }
            }
        }

    Array out(ho * wo * cout);
    {
        CMapRM W(weight.value().data(), taps, cout);
        MapRM O(out.data(), ho * wo, cout);
        O.noalias() = cols * W;
    }

    Node* xn = x.node().get();
    Node* wn = weight.node().get();
    auto cols_keep = std::make_shared<MatRM>(std::move(cols));
    return make_op({ho, wo, cout}, std::move(out), {x, weight},
                   [xn, wn, cols_keep, h, w, cin, cout, k, stride, pad, ho, wo](Node& n) {
        CMapRM G(n.grad.data(), ho * wo, cout);
        if (wn->requires_grad)
        {
            Array dw(wn->value.size());
            MapRM(dw.data(), k * k * cin, cout).noalias() = cols_keep->transpose() * G;
            accumulate_grad(*wn, dw);
        }
        if (xn->requires_grad)
        {
            CMapRM W(wn->value.data(), k * k * cin, cout);
            MatRM dcols(ho * wo, k * k * cin);
            dcols.noalias() = G * W.transpose();
            Array dx = Array::Zero(xn->value.size());
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox)
                {
                    const double* row = dcols.row(oy * wo + ox).data();
                    for (int ky = 0; ky < k; ++ky)
                    {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= h)
                            continue;
                        for (int kx = 0; kx < k; ++kx)
                        {
                            const int ix = ox * stride + kx - pad;
                            if (ix < 0 || ix >= w)
                                continue;
                            const double* src = row + (ky * k + kx) * cin;
                            double* dst = dx.data() + (iy * w + ix) * cin;
                            for (int ci = 0; ci < cin; ++ci)
                                dst[ci] += src[ci];
                        }
                    }
                }
            accumulate_grad(*xn, dx);
        }
    });
}

/**
 * Fractional-strided (transposed) convolution, the x2 upsampling block.
 * Weight layout: (Cin, k, k, Cout) row-major. out[s*y+ky-p, s*x+kx-p, co] +=
 * in[y, x, ci] * w[ci, ky, kx, co]. With k=4, s=2, p=1 output is (2H x 2W).
 */
inline Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, int k, int stride, int pad)
{
    ensure(x.shape().size() == 3, "conv_transpose2d: rank-3 input required");
    const int h = x.shape()[0], w = x.shape()[1], cin = x.shape()[2];
    ensure(weight.numel() % (k * k * cin) == 0, "conv_transpose2d: weight size mismatch");
    const int cout = weight.numel() / (k * k * cin);
    const int ho = (h - 1) * stride + k - 2 * pad;
    const int wo = (w - 1) * stride + k - 2 * pad;
    ensure(ho > 0 && wo > 0, "conv_transpose2d: empty output");

    // P = X (HW x Cin) * W (Cin x kkCout), then scatter taps into the output.
    MatRM P(h * w, k * k * cout);
    {
        CMapRM X(x.value().data(), h * w, cin);
        CMapRM W(weight.value().data(), cin, k * k * cout);
        P.noalias() = X * W;
    }
    Array out = Array::Zero(ho * wo * cout);
    for (int y = 0; y < h; ++y)
        for (int xcol = 0; xcol < w; ++xcol)
        {
            const double* row = P.row(y * w + xcol).data();
            for (int ky = 0; ky < k; ++ky)
            {
                const int oy = y * stride + ky - pad;
                if (oy < 0 || oy >= ho)
                    continue;
                for (int kx = 0; kx < k; ++kx)
                {
                    const int ox = xcol * stride + kx - pad;
                    if (ox < 0 || ox >= wo)
                        continue;
                    const double* src = row + (ky * k + kx) * cout;
                    double* dst = out.data() + (oy * wo + ox) * cout;
                    for (int co = 0; co < cout; ++co)
                        dst[co] += src[co];
                }
            }
        }

    Node* xn = x.node().get();
    Node* wn = weight.node().get();
    return make_op({ho, wo, cout}, std::move(out), {x, weight},
                   [xn, wn, h, w, cin, cout, k, stride, pad, ho, wo](Node& n) {
        // Gather output grads back into tap layout, then GEMM.
        MatRM dP = MatRM::Zero(h * w, k * k * cout);
        for (int y = 0; y < h; ++y)
            for (int xcol = 0; xcol < w; ++xcol)
            {
                double* row = dP.row(y * w + xcol).data();
                for (int ky = 0; ky < k; ++ky)
                {
                    const int oy = y * stride + ky - pad;
                    if (oy < 0 || oy >= ho)
                        continue;
                    for (int kx = 0; kx < k; ++kx)
                    {
                        const int ox = xcol * stride + kx - pad;
                        if (ox < 0 || ox >= wo)
                            continue;
                        const double* src = n.grad.data() + (oy * wo + ox) * cout;
                        double* dst = row + (ky * k + kx) * cout;
                        for (int co = 0; co < cout; ++co)
                            dst[co] = src[co];
                    }
                }
            }
        if (xn->requires_grad)
        {
            CMapRM W(wn->value.data(), cin, k * k * cout);
            Array dx(xn->value.size());
            MapRM(dx.data(), h * w, cin).noalias() = dP * W.transpose();
            accumulate_grad(*xn, dx);
        }
        if (wn->requires_grad)
        {
            CMapRM X(xn->value.data(), h * w, cin);
            Array dw(wn->value.size());
            MapRM(dw.data(), cin, k * k * cout).noalias() = X.transpose() * dP;
            accumulate_grad(*wn, dw);
        }
    });
}

/**
 * Place patches into a zero (H x W x C) canvas at their boxes; cells covered
 * by several patches take the element-wise maximum. Gradient routes to the
 * argmax patch element.
 */
struct PatchBox
{
    int row0 = 0, col0 = 0, height = 0, width = 0;
};

inline Tensor place_patches_max(const std::vector<Tensor>& patches,
                                const std::vector<PatchBox>& boxes, int h, int w, int c)
{
    ensure(patches.size() == boxes.size(), "place_patches_max: patch/box count mismatch");
    Array out = Array::Zero(h * w * c);
    // argmax[i] = (patch index, flat index within patch), -1 = uncovered
    std::vector<std::pair<int, int>> argmax(static_cast<std::size_t>(h * w * c), {-1, -1});
    for (std::size_t pi = 0; pi < patches.size(); ++pi)
    {
        const auto& b = boxes[pi];
        const auto& t = patches[pi];
        ensure(t.shape().size() == 3 && t.shape()[0] == b.height && t.shape()[1] == b.width &&
                   t.shape()[2] == c,
               "place_patches_max: patch shape does not match box");
        ensure(b.row0 >= 0 && b.col0 >= 0 && b.row0 + b.height <= h && b.col0 + b.width <= w,
               "place_patches_max: box out of bounds");
        for (int r = 0; r < b.height; ++r)
            for (int col = 0; col < b.width; ++col)
                for (int ch = 0; ch < c; ++ch)
                {
                    const int oi = ((b.row0 + r) * w + (b.col0 + col)) * c + ch;
                    const int si = (r * b.width + col) * c + ch;
                    const double v = t.value()[si];
                    if (argmax[oi].first < 0 || v > out[oi])
                    {
                        out[oi] = v;
                        argmax[oi] = {static_cast<int>(pi), si};
                    }
                }
    }
    std::vector<Node*> pnodes;
    for (const auto& t : patches)
        pnodes.push_back(t.node().get());
    return make_op({h, w, c}, std::move(out), patches,
                   [pnodes, argmax = std::move(argmax)](Node& n) {
        std::vector<Array> dp(pnodes.size());
        for (std::size_t i = 0; i < pnodes.size(); ++i)
            dp[i] = Array::Zero(pnodes[i]->value.size());
        for (std::size_t oi = 0; oi < argmax.size(); ++oi)
            if (argmax[oi].first >= 0)
                dp[argmax[oi].first][argmax[oi].second] += n.grad[oi];
        for (std::size_t i = 0; i < pnodes.size(); ++i)
            if (pnodes[i]->requires_grad)
                accumulate_grad(*pnodes[i], dp[i]);
    });
}

} // namespace nlmm
