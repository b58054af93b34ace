/*
 * nlmm - a nonlinear morphable face model library
 *
 * File: include/nlmm/core/ops.hpp
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

#include "nlmm/core/tensor.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>

namespace nlmm {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

namespace detail {
inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op)
{
    ensure(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                       shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
}
} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b)
{
    detail::check_same_shape(a, b, "add");
    Node* an = a.node().get();
    Node* bn = b.node().get();
    return make_op(a.shape(), a.value() + b.value(), {a, b}, [an, bn](Node& n) {
        accumulate_grad(*an, n.grad);
        accumulate_grad(*bn, n.grad);
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b)
{
    detail::check_same_shape(a, b, "sub");
    Node* an = a.node().get();
    Node* bn = b.node().get();
    return make_op(a.shape(), a.value() - b.value(), {a, b}, [an, bn](Node& n) {
        accumulate_grad(*an, n.grad);
        accumulate_grad(*bn, Array(-n.grad));
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b)
{
    detail::check_same_shape(a, b, "mul");
    Node* an = a.node().get();
    Node* bn = b.node().get();
    return make_op(a.shape(), a.value() * b.value(), {a, b}, [an, bn](Node& n) {
        accumulate_grad(*an, Array(n.grad * bn->value));
        accumulate_grad(*bn, Array(n.grad * an->value));
    });
}

inline Tensor div(const Tensor& a, const Tensor& b)
{
    detail::check_same_shape(a, b, "div");
    Node* an = a.node().get();
    Node* bn = b.node().get();
    return make_op(a.shape(), a.value() / b.value(), {a, b}, [an, bn](Node& n) {
        accumulate_grad(*an, Array(n.grad / bn->value));
        accumulate_grad(*bn, Array(-n.grad * an->value / (bn->value * bn->value)));
    });
}

inline Tensor mul_scalar(const Tensor& a, double c)
{
    Node* an = a.node().get();
    return make_op(a.shape(), a.value() * c, {a},
                   [an, c](Node& n) { accumulate_grad(*an, Array(n.grad * c)); });
}

inline Tensor add_scalar(const Tensor& a, double c)
{
    Node* an = a.node().get();
    return make_op(a.shape(), a.value() + c, {a},
                   [an](Node& n) { accumulate_grad(*an, n.grad); });
}

inline Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

/// Multiply every element by a scalar-valued tensor.
inline Tensor mul_tscalar(const Tensor& a, const Tensor& s)
{
    ensure(s.numel() == 1, "mul_tscalar: s must be scalar");
    Node* an = a.node().get();
    Node* sn = s.node().get();
    return make_op(a.shape(), a.value() * s.scalar(), {a, s}, [an, sn](Node& n) {
        accumulate_grad(*an, Array(n.grad * sn->value[0]));
        Array ds(1);
        ds[0] = (n.grad * an->value).sum();
        accumulate_grad(*sn, ds);
    });
}

/// Add a scalar-valued tensor to every element.
inline Tensor add_tscalar(const Tensor& a, const Tensor& s)
{
    ensure(s.numel() == 1, "add_tscalar: s must be scalar");
    Node* an = a.node().get();
    Node* sn = s.node().get();
    return make_op(a.shape(), a.value() + s.scalar(), {a, s}, [an, sn](Node& n) {
        accumulate_grad(*an, n.grad);
        Array ds(1);
        ds[0] = n.grad.sum();
        accumulate_grad(*sn, ds);
    });
}

inline Tensor square(const Tensor& a)
{
    Node* an = a.node().get();
    return make_op(a.shape(), a.value().square(), {a}, [an](Node& n) {
        accumulate_grad(*an, Array(2.0 * n.grad * an->value));
    });
}

/// |x| with subgradient 0 at the kink.
inline Tensor abs_(const Tensor& a)
{
    Node* an = a.node().get();
    return make_op(a.shape(), a.value().abs(), {a}, [an](Node& n) {
        accumulate_grad(*an, Array(n.grad * an->value.sign()));
    });
}

inline Tensor exp_(const Tensor& a)
{
    Node* an = a.node().get();
    Array v = a.value().exp();
    return make_op(a.shape(), v, {a}, [an](Node& n) {
        accumulate_grad(*an, Array(n.grad * n.value));
    });
}

inline Tensor sigmoid(const Tensor& a)
{
    Node* an = a.node().get();
    Array v = 1.0 / (1.0 + (-a.value()).exp());
    return make_op(a.shape(), v, {a}, [an](Node& n) {
        accumulate_grad(*an, Array(n.grad * n.value * (1.0 - n.value)));
    });
}

inline Tensor leaky_relu(const Tensor& a, double slope = 0.2)
{
    Node* an = a.node().get();
    Array v = (a.value() >= 0.0).select(a.value(), a.value() * slope);
    return make_op(a.shape(), v, {a}, [an, slope](Node& n) {
        Array mask = (an->value >= 0.0).select(Array::Ones(an->value.size()),
                                               Array::Constant(an->value.size(), slope));
        accumulate_grad(*an, Array(n.grad * mask));
    });
}

/// sqrt with a zero subgradient at 0 (inputs must be >= 0).
inline Tensor sqrt_safe(const Tensor& a)
{
    Node* an = a.node().get();
    Array v = a.value().max(0.0).sqrt();
    return make_op(a.shape(), v, {a}, [an](Node& n) {
        Array d = (n.value > 0.0).select(0.5 / n.value.max(1e-300), Array::Zero(n.value.size()));
        accumulate_grad(*an, Array(n.grad * d));
    });
}

/// x^p for x >= 0, with a zero subgradient at x == 0 (covers p < 1).
inline Tensor pow_const(const Tensor& a, double p)
{
    Node* an = a.node().get();
    Array v = a.value().max(0.0).pow(p);
    return make_op(a.shape(), v, {a}, [an, p](Node& n) {
        Array x = an->value.max(0.0);
        Array d = (x > 0.0).select(p * x.max(1e-300).pow(p - 1.0), Array::Zero(x.size()));
        accumulate_grad(*an, Array(n.grad * d));
    });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a)
{
    Node* an = a.node().get();
    Array v(1);
    v[0] = a.value().sum();
    return make_op({1}, v, {a}, [an](Node& n) {
        accumulate_grad(*an, Array(Array::Constant(an->value.size(), n.grad[0])));
    });
}

inline Tensor mean(const Tensor& a)
{
    ensure(a.numel() > 0, "mean of empty tensor");
    return mul_scalar(sum(a), 1.0 / a.numel());
}

// ---------------------------------------------------------------------------
// Linear algebra / layout
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b)
{
    ensure(a.shape().size() == 2 && b.shape().size() == 2, "matmul: rank-2 operands required");
    const int m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n2 = b.shape()[1];
    ensure(k == k2, "matmul: inner dimensions differ");
    Array out(m * n2);
    {
        CMapRM A(a.value().data(), m, k), B(b.value().data(), k, n2);
        MapRM C(out.data(), m, n2);
        C.noalias() = A * B;
    }
    Node* an = a.node().get();
    Node* bn = b.node().get();
    return make_op({m, n2}, std::move(out), {a, b}, [an, bn, m, k, n2](Node& n) {
        CMapRM G(n.grad.data(), m, n2);
        CMapRM A(an->value.data(), m, k), B(bn->value.data(), k, n2);
        if (an->requires_grad)
        {
            Array da(m * k);
            MapRM(da.data(), m, k).noalias() = G * B.transpose();
            accumulate_grad(*an, da);
        }
        if (bn->requires_grad)
        {
            Array db(k * n2);
            MapRM(db.data(), k, n2).noalias() = A.transpose() * G;
            accumulate_grad(*bn, db);
        }
    });
}

inline Tensor transpose2d(const Tensor& a)
{
    ensure(a.shape().size() == 2, "transpose2d: rank-2 required");
    const int m = a.shape()[0], k = a.shape()[1];
    Array out(m * k);
    MapRM(out.data(), k, m) = CMapRM(a.value().data(), m, k).transpose();
    Node* an = a.node().get();
    return make_op({k, m}, std::move(out), {a}, [an, m, k](Node& n) {
        Array da(m * k);
        MapRM(da.data(), m, k) = CMapRM(n.grad.data(), k, m).transpose();
        accumulate_grad(*an, da);
    });
}

inline Tensor reshape(const Tensor& a, std::vector<int> shape)
{
    ensure(numel_of(shape) == a.numel(), "reshape: element count mismatch");
    Node* an = a.node().get();
    return make_op(std::move(shape), a.value(), {a},
                   [an](Node& n) { accumulate_grad(*an, n.grad); });
}

inline Tensor slice_cols(const Tensor& a, int c0, int w)
{
    ensure(a.shape().size() == 2, "slice_cols: rank-2 required");
    const int m = a.shape()[0], k = a.shape()[1];
    ensure(c0 >= 0 && c0 + w <= k, "slice_cols: out of range");
    Array out(m * w);
    MapRM(out.data(), m, w) = CMapRM(a.value().data(), m, k).middleCols(c0, w);
    Node* an = a.node().get();
    return make_op({m, w}, std::move(out), {a}, [an, m, k, c0, w](Node& n) {
        Array da = Array::Zero(m * k);
        MapRM(da.data(), m, k).middleCols(c0, w) = CMapRM(n.grad.data(), m, w);
        accumulate_grad(*an, da);
    });
}

inline Tensor slice_vec(const Tensor& a, int off, int len)
{
    ensure(a.shape().size() == 1, "slice_vec: rank-1 required");
    ensure(off >= 0 && off + len <= a.numel(), "slice_vec: out of range");
    Array out = a.value().segment(off, len);
    Node* an = a.node().get();
    return make_op({len}, std::move(out), {a}, [an, off, len](Node& n) {
        Array da = Array::Zero(an->value.size());
        da.segment(off, len) = n.grad;
        accumulate_grad(*an, da);
    });
}

// ---------------------------------------------------------------------------
// Row-wise geometry helpers (N x C matrices)
// ---------------------------------------------------------------------------

inline Tensor gather_rows(const Tensor& a, std::vector<int> idx)
{
    ensure(a.shape().size() == 2, "gather_rows: rank-2 required");
    const int n_rows = a.shape()[0], c = a.shape()[1];
    const int m = static_cast<int>(idx.size());
    Array out(m * c);
    for (int i = 0; i < m; ++i)
    {
        ensure(idx[i] >= 0 && idx[i] < n_rows, "gather_rows: index out of range");
        out.segment(i * c, c) = a.value().segment(idx[i] * c, c);
    }
    Node* an = a.node().get();
    return make_op({m, c}, std::move(out), {a}, [an, idx = std::move(idx), c](Node& n) {
        Array da = Array::Zero(an->value.size());
        for (std::size_t i = 0; i < idx.size(); ++i)
            da.segment(idx[i] * c, c) += n.grad.segment(static_cast<int>(i) * c, c);
        accumulate_grad(*an, da);
    });
}

/// Scatter-add rows of a (M x C) into a zero (N x C) target.
inline Tensor scatter_add_rows(const Tensor& a, std::vector<int> idx, int n_rows)
{
    ensure(a.shape().size() == 2, "scatter_add_rows: rank-2 required");
    const int m = a.shape()[0], c = a.shape()[1];
    ensure(static_cast<int>(idx.size()) == m, "scatter_add_rows: index count mismatch");
    Array out = Array::Zero(n_rows * c);
    for (int i = 0; i < m; ++i)
    {
        ensure(idx[i] >= 0 && idx[i] < n_rows, "scatter_add_rows: index out of range");
        out.segment(idx[i] * c, c) += a.value().segment(i * c, c);
    }
    Node* an = a.node().get();
    return make_op({n_rows, c}, std::move(out), {a}, [an, idx = std::move(idx), c](Node& n) {
        Array da(an->value.size());
        for (std::size_t i = 0; i < idx.size(); ++i)
            da.segment(static_cast<int>(i) * c, c) = n.grad.segment(idx[i] * c, c);
        accumulate_grad(*an, da);
    });
}

/// Per-row Euclidean norm; zero rows get a zero subgradient.
inline Tensor row_norm(const Tensor& a)
{
    ensure(a.shape().size() == 2, "row_norm: rank-2 required");
    const int m = a.shape()[0], c = a.shape()[1];
    Array out(m);
    for (int i = 0; i < m; ++i)
        out[i] = std::sqrt(a.value().segment(i * c, c).square().sum());
    Node* an = a.node().get();
    return make_op({m}, std::move(out), {a}, [an, m, c](Node& n) {
        Array da(an->value.size());
        for (int i = 0; i < m; ++i)
        {
            const double nm = n.value[i];
            if (nm > 0.0)
                da.segment(i * c, c) = an->value.segment(i * c, c) * (n.grad[i] / nm);
            else
                da.segment(i * c, c).setZero();
        }
        accumulate_grad(*an, da);
    });
}

inline Tensor row_dot(const Tensor& a, const Tensor& b)
{
    detail::check_same_shape(a, b, "row_dot");
    const int m = a.shape()[0], c = a.shape()[1];
    Array out(m);
    for (int i = 0; i < m; ++i)
        out[i] = (a.value().segment(i * c, c) * b.value().segment(i * c, c)).sum();
    Node* an = a.node().get();
    Node* bn = b.node().get();
    return make_op({m}, std::move(out), {a, b}, [an, bn, m, c](Node& n) {
        if (an->requires_grad)
        {
            Array da(an->value.size());
            for (int i = 0; i < m; ++i)
                da.segment(i * c, c) = bn->value.segment(i * c, c) * n.grad[i];
            accumulate_grad(*an, da);
        }
        if (bn->requires_grad)
        {
            Array db(bn->value.size());
            for (int i = 0; i < m; ++i)
                db.segment(i * c, c) = an->value.segment(i * c, c) * n.grad[i];
            accumulate_grad(*bn, db);
        }
    });
}

/// Rows scaled to unit length; rows with norm below eps pass through unscaled.
inline Tensor normalize_rows(const Tensor& a, double eps = 1e-12)
{
    ensure(a.shape().size() == 2, "normalize_rows: rank-2 required");
    const int m = a.shape()[0], c = a.shape()[1];
    Array out(m * c);
    Array norms(m);
    for (int i = 0; i < m; ++i)
    {
        const double nm = std::sqrt(a.value().segment(i * c, c).square().sum());
        norms[i] = nm;
        if (nm > eps)
            out.segment(i * c, c) = a.value().segment(i * c, c) / nm;
        else
            out.segment(i * c, c) = a.value().segment(i * c, c);
    }
    Node* an = a.node().get();
    return make_op({m, c}, std::move(out), {a}, [an, m, c, eps, norms = std::move(norms)](Node& n) {
        Array da(an->value.size());
        for (int i = 0; i < m; ++i)
        {
            const double nm = norms[i];
            auto g = n.grad.segment(i * c, c);
            if (nm > eps)
            {
                auto u = n.value.segment(i * c, c); // unit row
                const double gu = (g * u).sum();
                da.segment(i * c, c) = (g - gu * u) / nm;
            }
            else
                da.segment(i * c, c) = g;
        }
        accumulate_grad(*an, da);
    });
}

inline Tensor cross_rows(const Tensor& a, const Tensor& b)
{
    detail::check_same_shape(a, b, "cross_rows");
    ensure(a.shape().size() == 2 && a.shape()[1] == 3, "cross_rows: N x 3 required");
    const int m = a.shape()[0];
    Array out(m * 3);
    const auto& av = a.value();
    const auto& bv = b.value();
    for (int i = 0; i < m; ++i)
    {
        const double ax = av[i * 3], ay = av[i * 3 + 1], az = av[i * 3 + 2];
        const double bx = bv[i * 3], by = bv[i * 3 + 1], bz = bv[i * 3 + 2];
        out[i * 3] = ay * bz - az * by;
        out[i * 3 + 1] = az * bx - ax * bz;
        out[i * 3 + 2] = ax * by - ay * bx;
    }
    Node* an = a.node().get();
    Node* bn = b.node().get();
    return make_op({m, 3}, std::move(out), {a, b}, [an, bn, m](Node& n) {
        // d(a x b) pulled back: da = b x g, db = g x a
        Array da(m * 3), db(m * 3);
        for (int i = 0; i < m; ++i)
        {
            const double gx = n.grad[i * 3], gy = n.grad[i * 3 + 1], gz = n.grad[i * 3 + 2];
            const double ax = an->value[i * 3], ay = an->value[i * 3 + 1], az = an->value[i * 3 + 2];
            const double bx = bn->value[i * 3], by = bn->value[i * 3 + 1], bz = bn->value[i * 3 + 2];
            da[i * 3] = by * gz - bz * gy;
            da[i * 3 + 1] = bz * gx - bx * gz;
            da[i * 3 + 2] = bx * gy - by * gx;
            db[i * 3] = gy * az - gz * ay;
            db[i * 3 + 1] = gz * ax - gx * az;
            db[i * 3 + 2] = gx * ay - gy * ax;
        }
        if (an->requires_grad)
            accumulate_grad(*an, da);
        if (bn->requires_grad)
            accumulate_grad(*bn, db);
    });
}

// ---------------------------------------------------------------------------
// Grid (H x W x C) ops
// ---------------------------------------------------------------------------

inline Tensor concat_channels(const Tensor& a, const Tensor& b)
{
    ensure(a.shape().size() == 3 && b.shape().size() == 3, "concat_channels: rank-3 required");
    ensure(a.shape()[0] == b.shape()[0] && a.shape()[1] == b.shape()[1],
           "concat_channels: spatial dims differ");
    const int h = a.shape()[0], w = a.shape()[1], ca = a.shape()[2], cb = b.shape()[2];
    Array out((ca + cb) * h * w);
    for (int p = 0; p < h * w; ++p)
    {
        out.segment(p * (ca + cb), ca) = a.value().segment(p * ca, ca);
        out.segment(p * (ca + cb) + ca, cb) = b.value().segment(p * cb, cb);
    }
    Node* an = a.node().get();
    Node* bn = b.node().get();
    return make_op({h, w, ca + cb}, std::move(out), {a, b}, [an, bn, h, w, ca, cb](Node& n) {
        if (an->requires_grad)
        {
            Array da(h * w * ca);
            for (int p = 0; p < h * w; ++p)
                da.segment(p * ca, ca) = n.grad.segment(p * (ca + cb), ca);
            accumulate_grad(*an, da);
        }
        if (bn->requires_grad)
        {
            Array db(h * w * cb);
            for (int p = 0; p < h * w; ++p)
                db.segment(p * cb, cb) = n.grad.segment(p * (ca + cb) + ca, cb);
            accumulate_grad(*bn, db);
        }
    });
}

inline Tensor slice_channels(const Tensor& a, int c0, int count)
{
    ensure(a.shape().size() == 3, "slice_channels: rank-3 required");
    const int h = a.shape()[0], w = a.shape()[1], c = a.shape()[2];
    ensure(c0 >= 0 && c0 + count <= c, "slice_channels: out of range");
    Array out(h * w * count);
    for (int p = 0; p < h * w; ++p)
        out.segment(p * count, count) = a.value().segment(p * c + c0, count);
    Node* an = a.node().get();
    return make_op({h, w, count}, std::move(out), {a}, [an, h, w, c, c0, count](Node& n) {
        Array da = Array::Zero(h * w * c);
        for (int p = 0; p < h * w; ++p)
            da.segment(p * c + c0, count) = n.grad.segment(p * count, count);
        accumulate_grad(*an, da);
    });
}

inline Tensor slice_box(const Tensor& a, int r0, int c0, int h, int w)
{
    ensure(a.shape().size() == 3, "slice_box: rank-3 required");
    const int H = a.shape()[0], W = a.shape()[1], C = a.shape()[2];
    ensure(r0 >= 0 && c0 >= 0 && r0 + h <= H && c0 + w <= W, "slice_box: out of range");
    Array out(h * w * C);
    for (int r = 0; r < h; ++r)
        out.segment(r * w * C, w * C) = a.value().segment(((r0 + r) * W + c0) * C, w * C);
    Node* an = a.node().get();
    return make_op({h, w, C}, std::move(out), {a}, [an, H, W, C, r0, c0, h, w](Node& n) {
        Array da = Array::Zero(H * W * C);
        for (int r = 0; r < h; ++r)
            da.segment(((r0 + r) * W + c0) * C, w * C) = n.grad.segment(r * w * C, w * C);
        accumulate_grad(*an, da);
    });
}

/// Horizontal flip (reverses the column/u axis of an H x W x C grid).
inline Tensor flip_horizontal(const Tensor& a)
{
    ensure(a.shape().size() == 3, "flip_horizontal: rank-3 required");
    const int h = a.shape()[0], w = a.shape()[1], c = a.shape()[2];
    Array out(h * w * c);
    for (int r = 0; r < h; ++r)
        for (int col = 0; col < w; ++col)
            out.segment((r * w + col) * c, c) = a.value().segment((r * w + (w - 1 - col)) * c, c);
    Node* an = a.node().get();
    return make_op({h, w, c}, std::move(out), {a}, [an, h, w, c](Node& n) {
        Array da(h * w * c);
        for (int r = 0; r < h; ++r)
            for (int col = 0; col < w; ++col)
                da.segment((r * w + (w - 1 - col)) * c, c) = n.grad.segment((r * w + col) * c, c);
        accumulate_grad(*an, da);
    });
}

/// Place rows (M x C) at given linear pixel indices of a zero (H x W x C) grid.
inline Tensor rows_to_grid(const Tensor& rows, std::vector<int> pixel, int h, int w)
{
    ensure(rows.shape().size() == 2, "rows_to_grid: rank-2 required");
    const int m = rows.shape()[0], c = rows.shape()[1];
    ensure(static_cast<int>(pixel.size()) == m, "rows_to_grid: index count mismatch");
    Array out = Array::Zero(h * w * c);
    for (int i = 0; i < m; ++i)
    {
        ensure(pixel[i] >= 0 && pixel[i] < h * w, "rows_to_grid: pixel out of range");
        out.segment(pixel[i] * c, c) = rows.value().segment(i * c, c);
    }
    Node* rn = rows.node().get();
    return make_op({h, w, c}, std::move(out), {rows}, [rn, pixel = std::move(pixel), c](Node& n) {
        Array dr(rn->value.size());
        for (std::size_t i = 0; i < pixel.size(); ++i)
            dr.segment(static_cast<int>(i) * c, c) = n.grad.segment(pixel[i] * c, c);
        accumulate_grad(*rn, dr);
    });
}

/// Mean over the spatial dimensions, one value per channel.
inline Tensor channel_mean(const Tensor& a)
{
    ensure(a.shape().size() == 3, "channel_mean: rank-3 required");
    const int h = a.shape()[0], w = a.shape()[1], c = a.shape()[2];
    Array out = Array::Zero(c);
    for (int p = 0; p < h * w; ++p)
        out += a.value().segment(p * c, c);
    out /= static_cast<double>(h * w);
    Node* an = a.node().get();
    return make_op({c}, std::move(out), {a}, [an, h, w, c](Node& n) {
        Array da(h * w * c);
        const Array g = n.grad / static_cast<double>(h * w);
        for (int p = 0; p < h * w; ++p)
            da.segment(p * c, c) = g;
        accumulate_grad(*an, da);
    });
}

inline Tensor add_channels(const Tensor& a, const Tensor& bias)
{
    ensure(a.shape().size() == 3 && bias.shape().size() == 1, "add_channels: (HWC, C) required");
    const int h = a.shape()[0], w = a.shape()[1], c = a.shape()[2];
    ensure(bias.numel() == c, "add_channels: channel count mismatch");
    Array out(a.numel());
    for (int p = 0; p < h * w; ++p)
        out.segment(p * c, c) = a.value().segment(p * c, c) + bias.value();
    Node* an = a.node().get();
    Node* bn = bias.node().get();
    return make_op(a.shape(), std::move(out), {a, bias}, [an, bn, h, w, c](Node& n) {
        if (an->requires_grad)
            accumulate_grad(*an, n.grad);
        if (bn->requires_grad)
        {
            Array db = Array::Zero(c);
            for (int p = 0; p < h * w; ++p)
                db += n.grad.segment(p * c, c);
            accumulate_grad(*bn, db);
        }
    });
}

inline Tensor mul_channels(const Tensor& a, const Tensor& scale)
{
    ensure(a.shape().size() == 3 && scale.shape().size() == 1, "mul_channels: (HWC, C) required");
    const int h = a.shape()[0], w = a.shape()[1], c = a.shape()[2];
    ensure(scale.numel() == c, "mul_channels: channel count mismatch");
    Array out(a.numel());
    for (int p = 0; p < h * w; ++p)
        out.segment(p * c, c) = a.value().segment(p * c, c) * scale.value();
    Node* an = a.node().get();
    Node* sn = scale.node().get();
    return make_op(a.shape(), std::move(out), {a, scale}, [an, sn, h, w, c](Node& n) {
        if (an->requires_grad)
        {
            Array da(an->value.size());
            for (int p = 0; p < h * w; ++p)
                da.segment(p * c, c) = n.grad.segment(p * c, c) * sn->value;
            accumulate_grad(*an, da);
        }
        if (sn->requires_grad)
        {
            Array ds = Array::Zero(c);
            for (int p = 0; p < h * w; ++p)
                ds += n.grad.segment(p * c, c) * an->value.segment(p * c, c);
            accumulate_grad(*sn, ds);
        }
    });
}

/// Add a row vector to every row of a rank-2 tensor.
inline Tensor add_rowvec(const Tensor& a, const Tensor& v)
{
    ensure(a.shape().size() == 2 && v.shape().size() == 1, "add_rowvec: (MxN, N) required");
    const int m = a.shape()[0], k = a.shape()[1];
    ensure(v.numel() == k, "add_rowvec: width mismatch");
    Array out(a.numel());
    for (int i = 0; i < m; ++i)
        out.segment(i * k, k) = a.value().segment(i * k, k) + v.value();
    Node* an = a.node().get();
    Node* vn = v.node().get();
    return make_op(a.shape(), std::move(out), {a, v}, [an, vn, m, k](Node& n) {
        if (an->requires_grad)
            accumulate_grad(*an, n.grad);
        if (vn->requires_grad)
        {
            Array dv = Array::Zero(k);
            for (int i = 0; i < m; ++i)
                dv += n.grad.segment(i * k, k);
            accumulate_grad(*vn, dv);
        }
    });
}

// ---------------------------------------------------------------------------
// Sampling / interpolation
// ---------------------------------------------------------------------------

/**
 * Bilinear sample of an (H x W x C) grid at continuous (col, row) points.
 * Points are fixed; gradients flow to the grid only. Out-of-bounds points
 * raise, identifying the offending row.
 */
inline Tensor bilinear_gather(const Tensor& grid, const std::vector<std::array<double, 2>>& points)
{
    ensure(grid.shape().size() == 3, "bilinear_gather: rank-3 grid required");
    const int h = grid.shape()[0], w = grid.shape()[1], c = grid.shape()[2];
    const int m = static_cast<int>(points.size());

    struct Corner
    {
        int p00, p01, p10, p11;
        double w00, w01, w10, w11;
    };
    std::vector<Corner> corners(m);
    Array out(m * c);
    for (int i = 0; i < m; ++i)
    {
        const double x = points[i][0], y = points[i][1];
        if (!(x >= 0.0 && x <= w - 1 && y >= 0.0 && y <= h - 1))
            throw std::invalid_argument("bilinear_gather: point " + std::to_string(i) +
                                        " at (" + std::to_string(x) + "," + std::to_string(y) +
                                        ") outside grid");
        int x0 = static_cast<int>(std::floor(x));
        int y0 = static_cast<int>(std::floor(y));
        if (x0 == w - 1)
            x0 = w - 2 < 0 ? 0 : w - 2;
        if (y0 == h - 1)
            y0 = h - 2 < 0 ? 0 : h - 2;
        const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
        const double fx = x - x0, fy = y - y0;
        Corner& k = corners[i];
        k.p00 = y0 * w + x0;
        k.p01 = y0 * w + x1;
        k.p10 = y1 * w + x0;
        k.p11 = y1 * w + x1;
        k.w00 = (1 - fx) * (1 - fy);
        k.w01 = fx * (1 - fy);
        k.w10 = (1 - fx) * fy;
        k.w11 = fx * fy;
        out.segment(i * c, c) = k.w00 * grid.value().segment(k.p00 * c, c) +
                                k.w01 * grid.value().segment(k.p01 * c, c) +
                                k.w10 * grid.value().segment(k.p10 * c, c) +
                                k.w11 * grid.value().segment(k.p11 * c, c);
    }
    Node* gn = grid.node().get();
    return make_op({m, c}, std::move(out), {grid}, [gn, corners = std::move(corners), c](Node& n) {
        Array dg = Array::Zero(gn->value.size());
        for (std::size_t i = 0; i < corners.size(); ++i)
        {
            const auto& k = corners[i];
            const auto g = n.grad.segment(static_cast<int>(i) * c, c);
            dg.segment(k.p00 * c, c) += k.w00 * g;
            dg.segment(k.p01 * c, c) += k.w01 * g;
            dg.segment(k.p10 * c, c) += k.w10 * g;
            dg.segment(k.p11 * c, c) += k.w11 * g;
        }
        accumulate_grad(*gn, dg);
    });
}

/// Barycentric combination of three gathered rows with fixed weights:
/// out_i = w0_i * a[i0_i] + w1_i * a[i1_i] + w2_i * a[i2_i].
inline Tensor bary_interp_rows(const Tensor& a, std::vector<std::array<int, 3>> tri_rows,
                               std::vector<std::array<double, 3>> weights)
{
    ensure(a.shape().size() == 2, "bary_interp_rows: rank-2 required");
    ensure(tri_rows.size() == weights.size(), "bary_interp_rows: size mismatch");
    const int c = a.shape()[1];
    const int m = static_cast<int>(tri_rows.size());
    Array out(m * c);
    for (int i = 0; i < m; ++i)
        out.segment(i * c, c) = weights[i][0] * a.value().segment(tri_rows[i][0] * c, c) +
                                weights[i][1] * a.value().segment(tri_rows[i][1] * c, c) +
                                weights[i][2] * a.value().segment(tri_rows[i][2] * c, c);
    Node* an = a.node().get();
    return make_op({m, c}, std::move(out), {a},
                   [an, tri_rows = std::move(tri_rows), weights = std::move(weights), m, c](Node& n) {
        Array da = Array::Zero(an->value.size());
        for (int i = 0; i < m; ++i)
        {
            const auto g = n.grad.segment(i * c, c);
            da.segment(tri_rows[i][0] * c, c) += weights[i][0] * g;
            da.segment(tri_rows[i][1] * c, c) += weights[i][1] * g;
            da.segment(tri_rows[i][2] * c, c) += weights[i][2] * g;
        }
        accumulate_grad(*an, da);
    });
}

// ---------------------------------------------------------------------------
// Rotation
// ---------------------------------------------------------------------------

/**
 * Axis-angle to rotation matrix (Rodrigues), differentiable in the 3-vector.
 * Jacobian follows Gallego & Yezzi, "A compact formula for the derivative of
 * a 3-D rotation in exponential coordinates".
 */
inline Tensor rodrigues(const Tensor& r)
{
    ensure(r.numel() == 3, "rodrigues: 3-vector required");
    const double rx = r.at(0), ry = r.at(1), rz = r.at(2);
    const double theta2 = rx * rx + ry * ry + rz * rz;
    const double theta = std::sqrt(theta2);

    Eigen::Matrix3d K;
    K << 0, -rz, ry, rz, 0, -rx, -ry, rx, 0;
    Eigen::Matrix3d R;
    if (theta < 1e-12)
        R = Eigen::Matrix3d::Identity() + K; // first-order expansion
    else
    {
        const double a = std::sin(theta) / theta;
        const double b = (1.0 - std::cos(theta)) / theta2;
        R = Eigen::Matrix3d::Identity() + a * K + b * (K * K);
    }
    Array out(9);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            out[i * 3 + j] = R(i, j);

    Node* rn = r.node().get();
    return make_op({3, 3}, std::move(out), {r}, [rn, R, theta, theta2](Node& n) {
        Eigen::Matrix3d G;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                G(i, j) = n.grad[i * 3 + j];
        const Eigen::Vector3d rv(rn->value[0], rn->value[1], rn->value[2]);
        Array dr = Array::Zero(3);
        for (int i = 0; i < 3; ++i)
        {
            Eigen::Vector3d e = Eigen::Vector3d::Zero();
            e[i] = 1.0;
            Eigen::Matrix3d dRi;
            if (theta < 1e-12)
            {
                Eigen::Matrix3d E;
                E << 0, -e.z(), e.y(), e.z(), 0, -e.x(), -e.y(), e.x(), 0;
                dRi = E;
            }
            else
            {
                const Eigen::Vector3d v = rv.cross((Eigen::Matrix3d::Identity() - R) * e);
                Eigen::Matrix3d term;
                const Eigen::Vector3d w = rv[i] * rv + v;
                term << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
                dRi = (term / theta2) * R;
            }
            dr[i] = (G.array() * dRi.array()).sum();
        }
        accumulate_grad(*rn, dr);
    });
}

// ---------------------------------------------------------------------------
// Composite helpers
// ---------------------------------------------------------------------------

inline Tensor mse(const Tensor& a, const Tensor& b)
{
    return mean(square(sub(a, b)));
}

inline Tensor mean_abs(const Tensor& a)
{
    return mean(abs_(a));
}

} // namespace nlmm
