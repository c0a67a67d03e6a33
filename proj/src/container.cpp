#include "segsr/container.hpp"

#include <cstring>
#include <fstream>

namespace segsr {

namespace {

constexpr char kMagic[8] = {'S', 'G', 'S', 'R', 'W', 'T', '0', '1'};

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    check(!is.fail(), "container: truncated file while reading " + what);
    return v;
}

} // namespace

void Container::put_f32(const std::string& name, std::vector<int> shape,
                        const std::vector<double>& data) {
    ContainerEntry e;
    e.dtype = DType::F32;
    e.shape = std::move(shape);
    check(e.numel() == static_cast<int64_t>(data.size()), "container: data size mismatch for " + name);
    e.f64 = data;
    entries[name] = std::move(e);
}

void Container::put_f64(const std::string& name, std::vector<int> shape,
                        const std::vector<double>& data) {
    ContainerEntry e;
    e.dtype = DType::F64;
    e.shape = std::move(shape);
    check(e.numel() == static_cast<int64_t>(data.size()), "container: data size mismatch for " + name);
    e.f64 = data;
    entries[name] = std::move(e);
}

void Container::put_bytes(const std::string& name, const std::vector<uint8_t>& data) {
    ContainerEntry e;
    e.dtype = DType::U8;
    e.shape = {static_cast<int>(data.size())};
    e.u8 = data;
    entries[name] = std::move(e);
}

void Container::put_string(const std::string& name, const std::string& s) {
    put_bytes(name, std::vector<uint8_t>(s.begin(), s.end()));
}

const ContainerEntry& Container::get(const std::string& name) const {
    auto it = entries.find(name);
    check(it != entries.end(), "container: missing tensor '" + name + "'");
    return it->second;
}

std::string Container::get_string(const std::string& name) const {
    const ContainerEntry& e = get(name);
    check(e.dtype == DType::U8, "container: entry '" + name + "' is not a byte blob");
    return std::string(e.u8.begin(), e.u8.end());
}

void Container::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    check(os.good(), "container: cannot open '" + path + "' for writing");
    os.write(kMagic, sizeof(kMagic));
    write_pod<uint32_t>(os, static_cast<uint32_t>(entries.size()));
    for (const auto& [name, e] : entries) {
        write_pod<uint16_t>(os, static_cast<uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod<uint8_t>(os, static_cast<uint8_t>(e.dtype));
        write_pod<uint8_t>(os, static_cast<uint8_t>(e.shape.size()));
        for (int d : e.shape) write_pod<uint32_t>(os, static_cast<uint32_t>(d));
        switch (e.dtype) {
            case DType::F32: {
                std::vector<float> buf(e.f64.begin(), e.f64.end());
                write_pod<uint64_t>(os, buf.size() * sizeof(float));
                os.write(reinterpret_cast<const char*>(buf.data()),
                         static_cast<std::streamsize>(buf.size() * sizeof(float)));
                break;
            }
            case DType::F64:
                write_pod<uint64_t>(os, e.f64.size() * sizeof(double));
                os.write(reinterpret_cast<const char*>(e.f64.data()),
                         static_cast<std::streamsize>(e.f64.size() * sizeof(double)));
                break;
            case DType::U8:
                write_pod<uint64_t>(os, e.u8.size());
                os.write(reinterpret_cast<const char*>(e.u8.data()),
                         static_cast<std::streamsize>(e.u8.size()));
                break;
        }
    }
    check(os.good(), "container: write to '" + path + "' failed");
}

Container Container::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    check(is.good(), "container: cannot open '" + path + "'");
    char magic[8];
    is.read(magic, sizeof(magic));
    check(!is.fail() && std::memcmp(magic, kMagic, sizeof(kMagic)) == 0,
          "container: '" + path + "' is not a segsr weight container");
    uint32_t count = read_pod<uint32_t>(is, "entry count");
    Container c;
    for (uint32_t i = 0; i < count; ++i) {
        uint16_t nlen = read_pod<uint16_t>(is, "name length");
        std::string name(nlen, '\0');
        is.read(name.data(), nlen);
        check(!is.fail(), "container: truncated file while reading entry name");
        ContainerEntry e;
        e.dtype = static_cast<DType>(read_pod<uint8_t>(is, "dtype of " + name));
        check(e.dtype == DType::F32 || e.dtype == DType::F64 || e.dtype == DType::U8,
              "container: unknown dtype for '" + name + "'");
        uint8_t ndim = read_pod<uint8_t>(is, "rank of " + name);
        e.shape.resize(ndim);
        for (uint8_t d = 0; d < ndim; ++d)
            e.shape[d] = static_cast<int>(read_pod<uint32_t>(is, "shape of " + name));
        uint64_t nbytes = read_pod<uint64_t>(is, "size of " + name);
        switch (e.dtype) {
            case DType::F32: {
                check(nbytes == static_cast<uint64_t>(e.numel()) * sizeof(float),
                      "container: byte count mismatch for '" + name + "'");
                std::vector<float> buf(e.numel());
                is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(nbytes));
                check(!is.fail(), "container: truncated data for '" + name + "'");
                e.f64.assign(buf.begin(), buf.end());
                break;
            }
            case DType::F64: {
                check(nbytes == static_cast<uint64_t>(e.numel()) * sizeof(double),
                      "container: byte count mismatch for '" + name + "'");
                e.f64.resize(e.numel());
                is.read(reinterpret_cast<char*>(e.f64.data()), static_cast<std::streamsize>(nbytes));
                check(!is.fail(), "container: truncated data for '" + name + "'");
                break;
            }
            case DType::U8: {
                e.u8.resize(nbytes);
                is.read(reinterpret_cast<char*>(e.u8.data()), static_cast<std::streamsize>(nbytes));
                check(!is.fail(), "container: truncated data for '" + name + "'");
                break;
            }
        }
        c.entries[name] = std::move(e);
    }
    return c;
}

} // namespace segsr
