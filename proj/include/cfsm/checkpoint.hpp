#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace cfsm {

inline constexpr int kCheckpointSchemaVersion = 1;

// Single-file archive:
//   "CFSMCKPT" | u64 header_len | header JSON | u64 tensor_count |
//   per tensor: u32 name_len, name, u32 dtype_len, "f32", u32 ndim, i64 dims[ndim], u64 nbytes, data |
//   u64 FNV-1a checksum of every preceding byte.
// All integers and float data are little-endian; tensors are row-major.
struct Checkpoint {
    nlohmann::json metadata = nlohmann::json::object();  // schema_version, config, config_hash, step, rng_state
    std::vector<std::pair<std::string, torch::Tensor>> tensors;

    void add(std::string name, const torch::Tensor& tensor);
    // Adds every floating parameter and buffer of `module` as prefix + torch name.
    void add_module(const std::string& prefix, const torch::nn::Module& module);

    bool contains(std::string_view name) const;
    const torch::Tensor& get(std::string_view name) const;
    // Copies prefix-matching tensors into the module's parameters/buffers; all must be present.
    void load_module(const std::string& prefix, torch::nn::Module& module) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::vector<uint8_t> serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(const std::vector<uint8_t>& bytes);

uint64_t fnv1a64(const void* data, size_t size, uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(uint64_t value);
uint64_t file_hash(const std::filesystem::path& path);

// Order-sensitive hash over names and raw bytes of all parameters and buffers.
uint64_t parameter_hash(const torch::nn::Module& module);

}  // namespace cfsm
