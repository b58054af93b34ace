/*
 * nlmm - a nonlinear morphable face model library
 *
 * File: include/nlmm/render/sh.hpp
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

namespace nlmm::render {

// Real spherical-harmonics basis, bands 0..2, standard m ordering:
// [1, y, z, x, xy, yz, 3z^2-1, xz, x^2-y^2] with the constants below.
inline constexpr double kSH0 = 0.282095;
inline constexpr double kSH1 = 0.488603;
inline constexpr double kSH2 = 1.092548;
inline constexpr double kSH20 = 0.315392;
inline constexpr double kSH22 = 0.546274;

inline std::array<double, 9> sh_basis(double x, double y, double z)
{
    return {kSH0,         kSH1 * y,      kSH1 * z,
            kSH1 * x,     kSH2 * x * y,  kSH2 * y * z,
            kSH20 * (3.0 * z * z - 1.0), kSH2 * x * z, kSH22 * (x * x - y * y)};
}

/// N x 3 unit directions -> N x 9 basis values, differentiable.
inline Tensor sh_basis_rows(const Tensor& n)
{
    ensure(n.shape().size() == 2 && n.shape()[1] == 3, "sh_basis_rows: N x 3 required");
    const int m = n.shape()[0];
    Array out(m * 9);
    for (int i = 0; i < m; ++i)
    {
        const auto b = sh_basis(n.at(i * 3), n.at(i * 3 + 1), n.at(i * 3 + 2));
        for (int j = 0; j < 9; ++j)
            out[i * 9 + j] = b[j];
    }
    Node* nn = n.node().get();
    return make_op({m, 9}, std::move(out), {n}, [nn, m](Node& node) {
        Array dn = Array::Zero(m * 3);
        for (int i = 0; i < m; ++i)
        {
            const double x = nn->value[i * 3], y = nn->value[i * 3 + 1], z = nn->value[i * 3 + 2];
            const double* g = node.grad.data() + i * 9;
            // columns: d(basis_j)/d{x,y,z}
            dn[i * 3 + 0] = kSH1 * g[3] + kSH2 * y * g[4] + kSH2 * z * g[7] + 2.0 * kSH22 * x * g[8];
            dn[i * 3 + 1] = kSH1 * g[1] + kSH2 * x * g[4] + kSH2 * z * g[5] - 2.0 * kSH22 * y * g[8];
            dn[i * 3 + 2] = kSH1 * g[2] + kSH2 * y * g[5] + 6.0 * kSH20 * z * g[6] + kSH2 * x * g[7];
        }
        accumulate_grad(*nn, dn);
    });
}

/// 27 lighting coefficients (channel-major: 9 per R, G, B) as a 9 x 3 matrix.
inline Tensor lighting_matrix(const Tensor& coeffs)
{
    ensure(coeffs.numel() == 27, "lighting_matrix: 27 coefficients required");
    return transpose2d(reshape(coeffs, {3, 9}));
}

/**
 * Spherical-harmonics shading of unit normals. Each output row is the basis
 * at that normal dotted with each channel's coefficients. Rejects normals
 * whose length deviates from 1 by more than 1e-6.
 */
inline Tensor sh_shading(const Tensor& normals, const Tensor& coeffs)
{
    ensure(normals.shape().size() == 2 && normals.shape()[1] == 3,
           "sh_shading: N x 3 normals required");
    for (int i = 0; i < normals.shape()[0]; ++i)
    {
        const double len = std::sqrt(normals.value().segment(i * 3, 3).square().sum());
        ensure(std::abs(len - 1.0) <= 1e-6,
               "sh_shading: non-unit normal at row " + std::to_string(i));
    }
    return matmul(sh_basis_rows(normals), lighting_matrix(coeffs));
}

/// Ambient lighting whose shading equals `level` on every channel.
inline Array ambient_lighting(double level = 1.0)
{
    Array l = Array::Zero(27);
    l[0] = l[9] = l[18] = level / kSH0;
    return l;
}

} // namespace nlmm::render
