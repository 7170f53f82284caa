#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "staf/tensor.hpp"

namespace staf {

// Tensor wire format: 8-byte magic "STAFTEN1", u32 rank, u32 dims[],
// f64 data[], all little-endian, data row-major.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

/// A file holding a JSON manifest followed by named tensor blobs:
/// u32 manifest byte count, manifest UTF-8, then one STAFTEN1 blob per
/// entry of the manifest's "tensors" array, in that order.
struct Bundle {
  nlohmann::ordered_json manifest;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& get(const std::string& name) const;
};

void write_bundle(std::ostream& out, const Bundle& bundle);
Bundle read_bundle(std::istream& in);
void save_bundle(const std::string& path, const Bundle& bundle);
Bundle load_bundle(const std::string& path);

/// FNV-1a over the serialized bytes of a tensor list; used as a cheap
/// content fingerprint (template hash in sequence manifests).
std::uint64_t content_hash(const std::vector<std::pair<std::string, Tensor>>& tensors);

}  // namespace staf
