#pragma once

#include <memory>
#include <string>

#include "fedn/network.hpp"

namespace fedn {

// Versioned self-describing container: 8-byte magic "FEDNCKPT", u32 version,
// u64 JSON header length, JSON header (network config + named array index),
// then the concatenated float64 little-endian parameter data.
void save_checkpoint(const FednNetwork& model, const std::string& path);

std::unique_ptr<FednNetwork> load_checkpoint(const std::string& path);

}  // namespace fedn
