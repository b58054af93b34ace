/*
 * nlmm - a nonlinear morphable face model library
 *
 * File: include/nlmm/core/common.hpp
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

#include <Eigen/Core>

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace nlmm {

using Scalar = double;
using Array = Eigen::ArrayXd; // flat storage for tensors, row-major indexing

/// Throws std::invalid_argument when a precondition does not hold.
inline void ensure(bool condition, const std::string& message)
{
    if (!condition)
        throw std::invalid_argument(message);
}

/// Throws std::runtime_error for violated runtime invariants.
inline void require_state(bool condition, const std::string& message)
{
    if (!condition)
        throw std::runtime_error(message);
}

inline int numel_of(const std::vector<int>& shape)
{
    int n = 1;
    for (int d : shape)
    {
        ensure(d >= 0, "negative dimension in shape");
        n *= d;
    }
    return n;
}

inline std::string shape_to_string(const std::vector<int>& shape)
{
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i)
    {
        if (i)
            s += ",";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

// Row-major index helpers for rank-2 / rank-3 tensors.
inline int idx2(int r, int c, int cols)
{
    return r * cols + c;
}
inline int idx3(int r, int c, int ch, int cols, int channels)
{
    return (r * cols + c) * channels + ch;
}

} // namespace nlmm
