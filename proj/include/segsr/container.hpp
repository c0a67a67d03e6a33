#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "segsr/common.hpp"

namespace segsr {

// Single-file tensor container: magic, version, entry count, then per entry
// name, dtype, shape and row-major little-endian data. Encoder weight files
// use f32 throughout; training checkpoints use f64 plus u8 blobs for
// metadata. Full layout is documented in docs/formats.md.

enum class DType : uint8_t { F32 = 0, F64 = 1, U8 = 2 };

struct ContainerEntry {
    DType dtype = DType::F64;
    std::vector<int> shape;
    std::vector<double> f64;  // used for F32/F64 entries
    std::vector<uint8_t> u8;  // used for U8 entries

    int64_t numel() const {
        int64_t n = 1;
        for (int d : shape) n *= d;
        return n;
    }
};

class Container {
public:
    std::map<std::string, ContainerEntry> entries;

    bool has(const std::string& name) const { return entries.count(name) != 0; }

    void put_f32(const std::string& name, std::vector<int> shape, const std::vector<double>& data);
    void put_f64(const std::string& name, std::vector<int> shape, const std::vector<double>& data);
    void put_bytes(const std::string& name, const std::vector<uint8_t>& data);
    void put_string(const std::string& name, const std::string& s);

    const ContainerEntry& get(const std::string& name) const;
    std::string get_string(const std::string& name) const;

    void save(const std::string& path) const;
    static Container load(const std::string& path);
};

} // namespace segsr
