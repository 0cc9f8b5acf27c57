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

#include "fmdacl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fmdacl {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

const std::string* Archive::header_value(const std::string& key) const {
  for (const auto& [k, v] : header) {
    if (k == key) return &v;
  }
  return nullptr;
}

const std::string& Archive::require_header(const std::string& key) const {
  const std::string* v = header_value(key);
  if (v == nullptr) throw std::runtime_error("archive header lacks key '" + key + "'");
  return *v;
}

const Tensor* Archive::array(const std::string& name) const {
  for (const auto& [k, v] : arrays) {
    if (k == name) return &v;
  }
  return nullptr;
}

const Tensor& Archive::require_array(const std::string& name) const {
  const Tensor* t = array(name);
  if (t == nullptr) throw std::runtime_error("archive lacks array '" + name + "'");
  return *t;
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "FMDACL-ARCHIVE " << kArchiveVersion << "\n";
    out << "header " << archive.header.size() << "\n";
    for (const auto& [k, v] : archive.header) {
      if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
        throw std::invalid_argument("archive header entry '" + k + "' contains a reserved character");
      }
      out << k << "=" << v << "\n";
    }
    out << "arrays " << archive.arrays.size() << "\n";
    for (const auto& [name, t] : archive.arrays) {
      if (name.find_first_of(" \n") != std::string::npos) throw std::invalid_argument("array name contains whitespace: " + name);
      out << "array " << name << " " << t.rank();
      for (int d : t.shape()) out << " " << d;
      out << "\n";
      out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
      out << "\n";
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open archive " + path.string());
  auto fail = [&](const std::string& what) { return std::runtime_error(path.string() + ": " + what); };
  std::string line;
  std::getline(in, line);
  if (line != "FMDACL-ARCHIVE " + std::to_string(kArchiveVersion)) throw fail("unsupported archive format '" + line + "'");

  Archive a;
  std::string word;
  std::size_t n = 0;
  if (!std::getline(in, line) || (std::istringstream(line) >> word >> n, word != "header")) throw fail("missing header count");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw fail("truncated header");
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw fail("malformed header line '" + line + "'");
    a.header.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  if (!std::getline(in, line) || (std::istringstream(line) >> word >> n, word != "arrays")) throw fail("missing array count");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw fail("truncated array table");
    std::istringstream ls(line);
    std::string name;
    int rank = 0;
    ls >> word >> name >> rank;
    if (word != "array" || !ls || rank < 0) throw fail("malformed array line '" + line + "'");
    Shape shape(static_cast<std::size_t>(rank));
    for (int& d : shape) ls >> d;
    if (!ls) throw fail("malformed shape for array " + name);
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!in || in.get() != '\n') throw fail("truncated data for array " + name);
    a.arrays.emplace_back(std::move(name), std::move(t));
  }
  return a;
}

std::map<std::string, Tensor> read_array_archive(const std::filesystem::path& path) {
  std::map<std::string, Tensor> out;
  for (auto& [k, v] : read_archive(path).arrays) out.emplace(k, std::move(v));
  return out;
}

}  // namespace fmdacl
