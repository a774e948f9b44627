#include "sparseshare/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

namespace sparseshare {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'G', 'S', 'P', 'R'};

template <typename T>
constexpr DType dtype_of() {
    return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }

template <typename U>
void put(std::string& out, U v) {
    char buf[sizeof(U)];
    std::memcpy(buf, &v, sizeof(U));
    out.append(buf, sizeof(U));
}

class Reader {
public:
    explicit Reader(const std::string& data) : data_(data) {}

    template <typename U>
    U get(const char* what) {
        need(sizeof(U), what);
        U v;
        std::memcpy(&v, data_.data() + pos_, sizeof(U));
        pos_ += sizeof(U);
        return v;
    }
    std::string bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == data_.size(); }

private:
    void need(std::size_t n, const char* what) const {
        if (data_.size() - pos_ < n) {
            throw CheckpointError("container truncated while reading " + std::string(what) + " at byte " +
                                  std::to_string(pos_));
        }
    }
    const std::string& data_;
    std::size_t pos_ = 0;
};

}  // namespace

template <typename T>
Record Record::from(std::string name, const Tensor<T>& t) {
    Record r;
    r.name = std::move(name);
    r.dtype = dtype_of<T>();
    r.shape = t.shape();
    r.bytes.resize(t.numel() * sizeof(T));
    if (!r.bytes.empty()) std::memcpy(r.bytes.data(), t.raw(), r.bytes.size());
    return r;
}

template <typename T>
Tensor<T> Record::as() const {
    if (dtype != dtype_of<T>()) {
        throw CheckpointError("record " + name + " has dtype " + (dtype == DType::f32 ? "f32" : "f64") +
                              ", expected " + (dtype_of<T>() == DType::f32 ? "f32" : "f64"));
    }
    Tensor<T> t(shape);
    if (t.numel() * sizeof(T) != bytes.size()) throw CheckpointError("record " + name + " has a bad payload size");
    if (!bytes.empty()) std::memcpy(t.raw(), bytes.data(), bytes.size());
    return t;
}

template Record Record::from(std::string, const Tensor<float>&);
template Record Record::from(std::string, const Tensor<double>&);
template Tensor<float> Record::as() const;
template Tensor<double> Record::as() const;

const Record* Container::find(std::size_t section, std::string_view name) const {
    for (const Record& r : sections.at(section)) {
        if (r.name == name) return &r;
    }
    return nullptr;
}

const Record& Container::get(std::size_t section, std::string_view name) const {
    const Record* r = find(section, name);
    if (!r) throw CheckpointError("container is missing record " + std::string(name));
    return *r;
}

void write_container(const std::string& path, const Container& c) {
    std::string out(kMagic, 4);
    put<std::uint32_t>(out, kContainerVersion);
    put<std::uint64_t>(out, c.digest);
    for (const auto& section : c.sections) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(section.size()));
        for (const Record& r : section) {
            put<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
            out += r.name;
            put<std::uint8_t>(out, static_cast<std::uint8_t>(r.dtype));
            put<std::uint32_t>(out, static_cast<std::uint32_t>(r.shape.size()));
            for (std::size_t d : r.shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
            out.append(reinterpret_cast<const char*>(r.bytes.data()), r.bytes.size());
        }
    }
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw CheckpointError("cannot write " + tmp);
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw CheckpointError("write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Container read_container(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open " + path);
    const std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader in(data);
    if (in.bytes(4, "magic") != std::string(kMagic, 4)) throw CheckpointError(path + ": bad magic");
    const auto version = in.get<std::uint32_t>("version");
    if (version != kContainerVersion) {
        throw CheckpointError(path + ": unsupported format version " + std::to_string(version));
    }
    Container c;
    c.digest = in.get<std::uint64_t>("digest");
    for (auto& section : c.sections) {
        const auto count = in.get<std::uint32_t>("record count");
        for (std::uint32_t i = 0; i < count; ++i) {
            Record r;
            r.name = in.bytes(in.get<std::uint32_t>("name length"), "name");
            const auto tag = in.get<std::uint8_t>("dtype");
            if (tag > 1) throw CheckpointError(path + ": record " + r.name + " has unknown dtype " + std::to_string(tag));
            r.dtype = static_cast<DType>(tag);
            const auto rank = in.get<std::uint32_t>("rank");
            std::size_t n = 1;
            for (std::uint32_t d = 0; d < rank; ++d) {
                r.shape.push_back(in.get<std::uint32_t>("dims"));
                n *= r.shape.back();
            }
            const std::string payload = in.bytes(n * dtype_size(r.dtype), "tensor data");
            r.bytes.assign(payload.begin(), payload.end());
            section.push_back(std::move(r));
        }
    }
    if (!in.done()) throw CheckpointError(path + ": trailing bytes after the last section");
    return c;
}

}  // namespace sparseshare
