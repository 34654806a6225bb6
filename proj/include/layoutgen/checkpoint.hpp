#pragma once

// Checkpoint container: versioned header with a UTF-8 config echo, then
// named parameter records as little-endian f32. Round-trips bit-exactly.
//
// Layout:
//   magic "LGENCKPT" | u32 version | u64 config_len | config bytes
//   u32 param_count
//   per record: u32 name_len | name | u32 rank | u32 dims[rank] | f32 data[]

#include <string>
#include <vector>

#include "layoutgen/io.hpp"
#include "layoutgen/optim.hpp"

namespace layoutgen {

inline constexpr char kCheckpointMagic[] = "LGENCKPT";
inline constexpr uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const ParamStore<float>& params,
                            const std::string& config_echo) {
    atomic_write_file(path, [&](std::ostream& out) {
        out.write(kCheckpointMagic, 8);
        le::put_u32(out, kCheckpointVersion);
        le::put_u64(out, config_echo.size());
        out.write(config_echo.data(), std::streamsize(config_echo.size()));
        le::put_u32(out, uint32_t(params.count()));
        for (const auto& p : params.all()) {
            le::put_u32(out, uint32_t(p.name.size()));
            out.write(p.name.data(), std::streamsize(p.name.size()));
            le::put_u32(out, uint32_t(p.shape.size()));
            for (int d : p.shape) le::put_u32(out, uint32_t(d));
            for (float v : p.value) le::put_f32(out, v);
        }
    });
}

struct CheckpointData {
    std::string config_echo;
    std::vector<Param<float>> params;
};

inline CheckpointData load_checkpoint(const std::string& path) {
    const std::string buf = read_file(path);
    le::Reader r(buf);
    LG_CHECK(r.bytes(8) == std::string(kCheckpointMagic, 8),
             path << ": not a checkpoint (bad magic)");
    const uint32_t version = r.u32();
    LG_CHECK(version == kCheckpointVersion,
             path << ": unsupported checkpoint version " << version);
    CheckpointData data;
    data.config_echo = r.bytes(static_cast<size_t>(r.u64()));
    const uint32_t count = r.u32();
    data.params.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        Param<float> p;
        p.name = r.bytes(r.u32());
        const uint32_t rank = r.u32();
        p.shape.resize(rank);
        for (uint32_t k = 0; k < rank; ++k) p.shape[k] = int(r.u32());
        const int64_t n = numel(p.shape);
        p.value.resize(static_cast<size_t>(n));
        for (int64_t k = 0; k < n; ++k) p.value[size_t(k)] = r.f32();
        p.grad.assign(static_cast<size_t>(n), 0.0f);
        data.params.push_back(std::move(p));
    }
    LG_CHECK(r.at == buf.size(), path << ": trailing bytes after last record");
    return data;
}

// Copies values into an existing store; names and shapes must match exactly.
inline void load_into(const CheckpointData& data, ParamStore<float>& params) {
    LG_CHECK(data.params.size() == params.count(),
             "checkpoint holds " << data.params.size() << " params, model expects "
                                 << params.count());
    for (const auto& rec : data.params) {
        Param<float>& dst = params.at(rec.name);
        LG_CHECK(dst.shape == rec.shape, "parameter " << rec.name << " shape "
                                                      << shape_str(rec.shape) << " vs model "
                                                      << shape_str(dst.shape));
        dst.value = rec.value;
    }
}

}  // namespace layoutgen
