#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "wavesep/tensor.hpp"

namespace wavesep {

class CheckpointError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Named tensors plus a free-form metadata string (JSON by convention).
//
// On-disk layout, every integer and scalar little-endian:
//
//   magic      8 bytes  "WSEPCKPT"
//   version    u32      kContainerVersion
//   meta_len   u64      followed by meta_len bytes of metadata
//   count      u32      number of entries
//   entry      u32 name_len, name bytes, u32 rank, u64 extents[rank],
//              f64 values[prod(extents)]
//
// Values are always stored as f64 regardless of the build's scalar type.
struct ParamContainer {
    static constexpr std::uint32_t kContainerVersion = 1;

    std::string metadata;
    std::vector<std::pair<std::string, Tensor>> entries;

    void add(std::string name, Tensor t);
    const Tensor *find(const std::string &name) const;
    const Tensor &at(const std::string &name) const;
};

void save_container(const std::filesystem::path &path, const ParamContainer &container);
ParamContainer load_container(const std::filesystem::path &path);

std::string encode_container(const ParamContainer &container);
ParamContainer decode_container(const std::string &bytes);

}  // namespace wavesep
