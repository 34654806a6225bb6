#pragma once

// File helpers: atomic write-then-rename, little-endian binary IO.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "layoutgen/common.hpp"

namespace layoutgen {

// Writes via a sibling temp file and renames on success, so interrupted
// runs never leave a partial artifact at the target path.
inline void atomic_write_file(const std::string& path,
                              const std::function<void(std::ostream&)>& writer) {
    namespace fs = std::filesystem;
    fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        LG_CHECK(out.good(), "cannot open " << tmp.string() << " for writing");
        writer(out);
        out.flush();
        LG_CHECK(out.good(), "write failed for " << tmp.string());
    }
    fs::rename(tmp, target);
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    LG_CHECK(in.good(), "cannot open " << path);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return data;
}

namespace le {

inline void put_u32(std::ostream& out, uint32_t v) {
    char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
                 char((v >> 24) & 0xff)};
    out.write(b, 4);
}

inline void put_u64(std::ostream& out, uint64_t v) {
    put_u32(out, uint32_t(v & 0xffffffffull));
    put_u32(out, uint32_t(v >> 32));
}

inline void put_f32(std::ostream& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

struct Reader {
    const std::string& buf;
    size_t at = 0;

    explicit Reader(const std::string& b) : buf(b) {}

    void need(size_t n) const {
        LG_CHECK(at + n <= buf.size(), "truncated file: need " << n << " bytes at offset " << at);
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | uint8_t(buf[at + size_t(i)]);
        at += 4;
        return v;
    }
    uint64_t u64() {
        uint64_t lo = u32();
        uint64_t hi = u32();
        return lo | (hi << 32);
    }
    float f32() {
        uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string bytes(size_t n) {
        need(n);
        std::string s = buf.substr(at, n);
        at += n;
        return s;
    }
};

}  // namespace le
}  // namespace layoutgen
