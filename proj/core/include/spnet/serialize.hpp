#pragma once

#include <stdexcept>
#include <string>

#include "spnet/model.hpp"

namespace spnet {

/// File could not be opened/read/written.
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// File exists but its content violates the format contract.
struct format_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string sha256_hex(const void* data, std::size_t len);
std::string sha256_file(const std::string& path);

/// SPNET v1: `path` is a JSON manifest (format, layers, per-tensor byte
/// offset/length/sha256); `path + ".bin"` is the adjacent blob of
/// little-endian f64, row-major.
void save_model(const NetworkModel& model, const std::string& path);
NetworkModel load_model(const std::string& path);

}  // namespace spnet
