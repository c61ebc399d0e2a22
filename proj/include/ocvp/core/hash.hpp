// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>

namespace ocvp::core {

/// SHA-256 of a byte string, lowercase hex.
std::string sha256_hex(std::string_view data);

/// SHA-256 of a file's contents, lowercase hex. Throws on I/O error.
std::string sha256_file_hex(const std::string& path);

}  // namespace ocvp::core
