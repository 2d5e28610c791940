// Copyright 2026 the dmsc authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "dmsc/errors.hpp"

namespace dmsc {

/// Ordered key = value text document. Used for every human-editable config
/// (training recipes, generator specs, metric reports) and for the config
/// block embedded in checkpoints. Lines starting with '#' are comments.
class KvDoc {
public:
    bool has(const std::string& key) const { return find(key) != npos; }

    const std::string& get(const std::string& key) const {
        const std::size_t i = find(key);
        if (i == npos) throw ConfigError("missing config key '" + key + "'");
        return entries_[i].second;
    }

    std::string get_or(const std::string& key, const std::string& fallback) const {
        const std::size_t i = find(key);
        return i == npos ? fallback : entries_[i].second;
    }

    std::int64_t get_int(const std::string& key) const { return parse_int(key, get(key)); }

    std::int64_t get_int_or(const std::string& key, std::int64_t fallback) const {
        const std::size_t i = find(key);
        return i == npos ? fallback : parse_int(key, entries_[i].second);
    }

    std::uint64_t get_u64_or(const std::string& key, std::uint64_t fallback) const {
        const std::size_t i = find(key);
        if (i == npos) return fallback;
        try {
            return std::stoull(entries_[i].second);
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "' is not an unsigned integer: " +
                              entries_[i].second);
        }
    }

    double get_double(const std::string& key) const { return parse_double(key, get(key)); }

    double get_double_or(const std::string& key, double fallback) const {
        const std::size_t i = find(key);
        return i == npos ? fallback : parse_double(key, entries_[i].second);
    }

    void set(const std::string& key, const std::string& value) {
        const std::size_t i = find(key);
        if (i == npos) {
            entries_.emplace_back(key, value);
        } else {
            entries_[i].second = value;
        }
    }

    void set_int(const std::string& key, std::int64_t v) { set(key, std::to_string(v)); }
    void set_u64(const std::string& key, std::uint64_t v) { set(key, std::to_string(v)); }

    void set_double(const std::string& key, double v) {
        std::ostringstream os;
        os.precision(std::numeric_limits<double>::max_digits10);
        os << v;
        set(key, os.str());
    }

    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

    std::string serialize() const {
        std::string out;
        for (const auto& [k, v] : entries_) {
            out += k;
            out += " = ";
            out += v;
            out += '\n';
        }
        return out;
    }

    static KvDoc parse(const std::string& text) {
        KvDoc doc;
        std::istringstream in(text);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const std::string trimmed = trim(line);
            if (trimmed.empty() || trimmed[0] == '#') continue;
            const std::size_t eq = trimmed.find('=');
            if (eq == std::string::npos) {
                throw FormatError("line " + std::to_string(line_no) +
                                  " is not 'key = value': " + trimmed);
            }
            const std::string key = trim(trimmed.substr(0, eq));
            const std::string value = trim(trimmed.substr(eq + 1));
            if (key.empty()) {
                throw FormatError("line " + std::to_string(line_no) + " has an empty key");
            }
            doc.set(key, value);
        }
        return doc;
    }

    static KvDoc load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open '" + path + "'");
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse(buf.str());
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("cannot write '" + path + "'");
        out << serialize();
    }

private:
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    std::size_t find(const std::string& key) const {
        for (std::size_t i = 0; i < entries_.size(); ++i)
            if (entries_[i].first == key) return i;
        return npos;
    }

    static std::string trim(const std::string& s) {
        std::size_t b = s.find_first_not_of(" \t\r");
        std::size_t e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    }

    static std::int64_t parse_int(const std::string& key, const std::string& v) {
        try {
            std::size_t used = 0;
            const std::int64_t out = std::stoll(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return out;
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "' is not an integer: " + v);
        }
    }

    static double parse_double(const std::string& key, const std::string& v) {
        try {
            std::size_t used = 0;
            const double out = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return out;
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "' is not a number: " + v);
        }
    }

    std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace dmsc
