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
//
// Little-endian binary IO with CRC32 framing, shared by the checkpoint and
// feature-file formats.

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dmsc/errors.hpp"

namespace dmsc::detail {

inline std::uint32_t crc32(const unsigned char* data, std::size_t len,
                           std::uint32_t seed = 0xffffffffu) {
    static const std::array<std::uint32_t, 256> table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1u) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t c = seed;
    for (std::size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xffu] ^ (c >> 8);
    return c ^ 0xffffffffu;
}

inline std::uint32_t crc32(const std::string& bytes) {
    return crc32(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size());
}

class ByteWriter {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
    }

    void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }

    void f64(double v) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
    }

    void bytes(const std::string& s) { buf_.append(s); }

    void sized_string(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        buf_.append(s);
    }

    /// Appends the CRC32 of everything written so far.
    void finish_with_crc() { u32(crc32(buf_)); }

    const std::string& buffer() const { return buf_; }

    void write_file(const std::string& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write '" + path + "'");
        out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
        if (!out) throw IoError("short write to '" + path + "'");
    }

private:
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::string bytes, std::string origin)
        : buf_(std::move(bytes)), origin_(std::move(origin)) {}

    static ByteReader from_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open '" + path + "'");
        std::ostringstream tmp;
        tmp << in.rdbuf();
        return ByteReader(tmp.str(), path);
    }

    std::size_t offset() const { return pos_; }
    std::size_t size() const { return buf_.size(); }

    std::uint32_t u32() {
        need(4, "u32");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }

    double f64() {
        need(8, "f64");
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i)
            bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i]))
                    << (8 * i);
        pos_ += 8;
        return std::bit_cast<double>(bits);
    }

    std::string bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string out = buf_.substr(pos_, n);
        pos_ += n;
        return out;
    }

    std::string sized_string(const char* what) {
        const std::uint32_t n = u32();
        return bytes(n, what);
    }

    /// Validates the trailing CRC32 against everything before it; the reader
    /// must be positioned so that exactly 4 bytes remain.
    void verify_trailing_crc() {
        if (pos_ + 4 != buf_.size()) {
            throw FormatError(origin_ + ": expected trailing checksum at byte offset " +
                              std::to_string(pos_) + " to end the file (file size " +
                              std::to_string(buf_.size()) + ")");
        }
        const std::uint32_t stored = u32();
        const std::uint32_t computed =
            crc32(reinterpret_cast<const unsigned char*>(buf_.data()), buf_.size() - 4);
        if (stored != computed) {
            throw FormatError(origin_ + ": checksum failure (stored " + std::to_string(stored) +
                              ", computed " + std::to_string(computed) + ")");
        }
    }

    void expect_magic(const std::string& magic) {
        const std::string got = bytes(magic.size(), "magic");
        if (got != magic) {
            throw FormatError(origin_ + ": bad magic bytes at offset 0 (expected '" + magic +
                              "')");
        }
    }

private:
    void need(std::size_t n, const char* what) const {
        if (pos_ + n > buf_.size()) {
            throw FormatError(origin_ + ": truncated while reading " + std::string(what) +
                              " at byte offset " + std::to_string(pos_) + " (need " +
                              std::to_string(n) + " bytes, have " +
                              std::to_string(buf_.size() - pos_) + ")");
        }
    }

    std::string buf_;
    std::string origin_;
    std::size_t pos_ = 0;
};

}  // namespace dmsc::detail
