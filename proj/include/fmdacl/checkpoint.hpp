// Copyright 2026 The fmdacl Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fmdacl/tensor.hpp"

// Single-file container of named arrays behind a plain-text header.
//
//   FMDACL-ARCHIVE 1
//   header <n>
//   <n lines of key=value>
//   arrays <m>
//   then m times:
//     array <name> <rank> <d0> ... <d(rank-1)>
//     <numel little-endian IEEE-754 doubles>
//     (newline)
//
// Used for checkpoints and for importing external weights.
namespace fmdacl {

inline constexpr int kArchiveVersion = 1;

struct Archive {
  std::vector<std::pair<std::string, std::string>> header;
  std::vector<std::pair<std::string, Tensor>> arrays;

  const std::string* header_value(const std::string& key) const;
  const std::string& require_header(const std::string& key) const;
  const Tensor* array(const std::string& name) const;
  const Tensor& require_array(const std::string& name) const;
};

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

/// Arrays only, keyed by name.
std::map<std::string, Tensor> read_array_archive(const std::filesystem::path& path);

}  // namespace fmdacl
