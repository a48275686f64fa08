#pragma once

#include "freetuner/tensor.hpp"

#include <string>
#include <utility>
#include <vector>

namespace ft {

/// Ordered name->tensor list; order is preserved on disk so checkpoints are
/// byte-reproducible.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Container layout: magic "FTCK", version u32, count u32, then per tensor
/// { name_len u32, UTF-8 name, rank u32, extents u32[rank], f64 data }.
/// All integers and doubles little-endian.
void save_checkpoint(const std::string& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::string& path);

/// Lookup by exact name; throws std::invalid_argument when absent.
const Tensor& find_tensor(const NamedTensors& tensors, const std::string& name);
bool has_tensor(const NamedTensors& tensors, const std::string& name);

}  // namespace ft
