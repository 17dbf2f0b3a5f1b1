#pragma once

// Named-tensor archive used for checkpoints and for every client/server
// message. Layout: "FDAR", u32 version, u64 manifest length, JSON manifest,
// then the float64 little-endian payload of every tensor in manifest order.

#include "feddis/autograd.hpp"
#include "feddis/params.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace feddis::archive {

inline constexpr std::uint32_t kVersion = 1;

struct Tensor {
  std::string name;
  Role role = Role::shared;
  Matrix value;
};

struct Archive {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<Tensor> tensors;

  const Tensor* find(const std::string& name) const;
  const Tensor& at(const std::string& name) const;
};

std::string serialize(const Archive& archive);
/// Throws std::runtime_error on bad magic, version, truncation or malformed manifest.
Archive deserialize(std::string_view bytes);

void write_file(const Archive& archive, const std::filesystem::path& path);
Archive read_file(const std::filesystem::path& path);

/// Snapshot of every tensor in a store, roles preserved.
Archive from_store(const ParamStore& store);
/// Overwrites values of matching names; shapes must agree.
void load_into(const Archive& archive, ParamStore& store);

}  // namespace feddis::archive
