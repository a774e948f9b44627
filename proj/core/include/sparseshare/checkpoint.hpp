#pragma once

// Binary container shared by checkpoints and dataset exports.
//
//   "GSPR" | version u32 | digest u64 | 3 sections
//   section: count u32, then records
//   record:  name_len u32 | name | dtype u8 (0 f32, 1 f64) | rank u32 | dims u32 x rank | data
//
// All integers and payloads are little-endian. Sections are, in order:
// parameters, optimizer state, uncertainty weights.

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparseshare/tensor.hpp"

namespace sparseshare {

inline constexpr std::uint32_t kContainerVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

struct Record {
    std::string name;
    DType dtype = DType::f64;
    Shape shape;
    std::vector<unsigned char> bytes;

    template <typename T>
    static Record from(std::string name, const Tensor<T>& t);
    /// Throws CheckpointError when the stored dtype differs from T.
    template <typename T>
    Tensor<T> as() const;
};

struct Container {
    std::uint64_t digest = 0;
    std::array<std::vector<Record>, 3> sections;

    const Record* find(std::size_t section, std::string_view name) const;
    /// Throws CheckpointError when the record is absent.
    const Record& get(std::size_t section, std::string_view name) const;
};

/// Written to a sibling temporary and renamed into place.
void write_container(const std::string& path, const Container& c);
/// Throws CheckpointError on bad magic, unknown version, or truncation.
Container read_container(const std::string& path);

}  // namespace sparseshare
