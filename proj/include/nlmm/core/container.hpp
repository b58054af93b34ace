/*
 * nlmm - a nonlinear morphable face model library
 *
 * File: include/nlmm/core/container.hpp
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

#include <fstream>
#include <map>

namespace nlmm {

/**
 * Named-tensor archive. One format serves checkpoints, ground-truth grids and
 * debug buffer dumps.
 *
 * Layout (little-endian):
 *   magic   "NLMMTEN1" (8 bytes)
 *   count   u32
 *   entries, each:
 *     name_len u32, name bytes
 *     rank     u32, dims u32[rank]
 *     data     f64[prod(dims)]
 */
class TensorArchive
{
public:
    struct Entry
    {
        std::vector<int> shape;
        Array data;
    };

    void put(const std::string& name, std::vector<int> shape, Array data)
    {
        ensure(numel_of(shape) == static_cast<int>(data.size()),
               "TensorArchive::put: shape/data mismatch for " + name);
        entries_[name] = Entry{std::move(shape), std::move(data)};
    }

    void put_scalar(const std::string& name, double v)
    {
        Array a(1);
        a[0] = v;
        put(name, {1}, std::move(a));
    }

    bool contains(const std::string& name) const { return entries_.count(name) != 0; }

    const Entry& get(const std::string& name) const
    {
        auto it = entries_.find(name);
        require_state(it != entries_.end(), "TensorArchive: missing entry " + name);
        return it->second;
    }

    double get_scalar(const std::string& name) const
    {
        const Entry& e = get(name);
        require_state(e.data.size() == 1, "TensorArchive: " + name + " is not scalar");
        return e.data[0];
    }

    const std::map<std::string, Entry>& entries() const { return entries_; }

    void save(const std::string& path) const
    {
        std::ofstream out(path, std::ios::binary);
        require_state(out.good(), "TensorArchive: cannot open for write: " + path);
        out.write(kMagic, 8);
        write_u32(out, static_cast<std::uint32_t>(entries_.size()));
        for (const auto& [name, e] : entries_)
        {
            write_u32(out, static_cast<std::uint32_t>(name.size()));
            out.write(name.data(), static_cast<std::streamsize>(name.size()));
            write_u32(out, static_cast<std::uint32_t>(e.shape.size()));
            for (int d : e.shape)
                write_u32(out, static_cast<std::uint32_t>(d));
            out.write(reinterpret_cast<const char*>(e.data.data()),
                      static_cast<std::streamsize>(e.data.size() * sizeof(double)));
        }
        require_state(out.good(), "TensorArchive: write failed: " + path);
    }

    static TensorArchive load(const std::string& path)
    {
        std::ifstream in(path, std::ios::binary);
        require_state(in.good(), "TensorArchive: cannot open: " + path);
        char magic[8];
        in.read(magic, 8);
        require_state(in.good() && std::string(magic, 8) == kMagic,
                      "TensorArchive: bad magic in " + path);
        const std::uint32_t count = read_u32(in);
        TensorArchive ar;
        for (std::uint32_t i = 0; i < count; ++i)
        {
            const std::uint32_t name_len = read_u32(in);
            std::string name(name_len, '\0');
            in.read(name.data(), name_len);
            const std::uint32_t rank = read_u32(in);
            std::vector<int> shape(rank);
            for (auto& d : shape)
                d = static_cast<int>(read_u32(in));
            Array data(numel_of(shape));
            in.read(reinterpret_cast<char*>(data.data()),
                    static_cast<std::streamsize>(data.size() * sizeof(double)));
            require_state(in.good(), "TensorArchive: truncated entry " + name + " in " + path);
            ar.entries_[name] = Entry{std::move(shape), std::move(data)};
        }
        return ar;
    }

private:
    static constexpr const char* kMagic = "NLMMTEN1";

    static void write_u32(std::ofstream& out, std::uint32_t v)
    {
        out.write(reinterpret_cast<const char*>(&v), 4);
    }
    static std::uint32_t read_u32(std::ifstream& in)
    {
        std::uint32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 4);
        return v;
    }

    std::map<std::string, Entry> entries_;
};

} // namespace nlmm
