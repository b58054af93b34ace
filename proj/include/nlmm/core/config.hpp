/*
 * nlmm - a nonlinear morphable face model library
 *
 * File: include/nlmm/core/config.hpp
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
#include <sstream>

namespace nlmm {

/// Flat key=value config. Lines starting with '#' are comments.
class KeyValueConfig
{
public:
    KeyValueConfig() = default;

    static KeyValueConfig load(const std::string& path)
    {
        std::ifstream in(path);
        require_state(in.good(), "config: cannot open " + path);
        KeyValueConfig cfg;
        std::string line;
        int lineno = 0;
        while (std::getline(in, line))
        {
            ++lineno;
            const auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos || line[first] == '#')
                continue;
            const auto eq = line.find('=');
            require_state(eq != std::string::npos,
                          "config: missing '=' at " + path + ":" + std::to_string(lineno));
            cfg.values_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
        }
        return cfg;
    }

    void save(const std::string& path) const
    {
        std::ofstream out(path);
        require_state(out.good(), "config: cannot write " + path);
        for (const auto& [k, v] : values_)
            out << k << " = " << v << "\n";
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const
    {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }
    std::string get_string(const std::string& key) const
    {
        auto it = values_.find(key);
        require_state(it != values_.end(), "config: missing key " + key);
        return it->second;
    }
    double get_double(const std::string& key, double fallback) const
    {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : std::stod(it->second);
    }
    long get_int(const std::string& key, long fallback) const
    {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : std::stol(it->second);
    }

    void set(const std::string& key, const std::string& v) { values_[key] = v; }
    void set(const std::string& key, double v)
    {
        std::ostringstream os;
        os.precision(17);
        os << v;
        values_[key] = os.str();
    }
    void set(const std::string& key, long v) { values_[key] = std::to_string(v); }

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    static std::string trim(const std::string& s)
    {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos)
            return "";
        const auto b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    }

    std::map<std::string, std::string> values_;
};

} // namespace nlmm
