/*
 * Copyright 2026 The ddag Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "ddag/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "ddag/errors.hpp"

namespace ddag {

namespace {

constexpr char kMagic[8] = {'D', 'D', 'A', 'G', 'C', 'K', 'P', 'T'};

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
}

void write_u64(std::ostream& os, std::uint64_t v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

}  // namespace

const Tensor& Checkpoint::tensor(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ModelError("checkpoint has no tensor '" + name + "'");
  return it->second;
}

void save_checkpoint(const std::filesystem::path& file, nlohmann::json header,
                     const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
  header["format"] = kCheckpointFormat;
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    const std::uint64_t nbytes = static_cast<std::uint64_t>(t->numel()) * sizeof(double);
    index.push_back({{"name", name}, {"dtype", "f64"}, {"shape", t->shape()}, {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
  }
  header["tensors"] = index;
  const std::string text = header.dump();

  const auto tmp = file.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint " + tmp);
    os.write(kMagic, sizeof kMagic);
    write_u64(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : tensors)
      for (double v : t->values()) {
        const double le = to_little(v);
        os.write(reinterpret_cast<const char*>(&le), sizeof le);
      }
    if (!os) throw IoError("failed writing checkpoint " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, file, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + file.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + file.string());
  char magic[8];
  std::uint64_t len = 0;
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw FormatError(file.string() + " is not a checkpoint");
  if (!is.read(reinterpret_cast<char*>(&len), sizeof len)) throw FormatError("truncated checkpoint header");
  len = to_little(len);
  if (len > (1ULL << 30)) throw FormatError("implausible checkpoint header length");
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw FormatError("truncated checkpoint header");

  Checkpoint ck;
  try {
    ck.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is not JSON: ") + e.what());
  }
  if (ck.header.value("format", "") != kCheckpointFormat)
    throw FormatError("unsupported checkpoint format '" + ck.header.value("format", "") + "'");

  const auto payload_start = is.tellg();
  try {
    for (const auto& entry : ck.header.at("tensors")) {
      if (entry.at("dtype").get<std::string>() != "f64") throw FormatError("unsupported tensor dtype");
      const Shape shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      Tensor t(shape);
      if (entry.at("nbytes").get<std::uint64_t>() != static_cast<std::uint64_t>(t.numel()) * sizeof(double))
        throw FormatError("tensor byte count does not match its shape");
      is.seekg(payload_start + static_cast<std::streamoff>(offset));
      for (auto& v : t.values()) {
        double raw;
        if (!is.read(reinterpret_cast<char*>(&raw), sizeof raw)) throw FormatError("truncated checkpoint payload");
        v = to_little(raw);
      }
      ck.tensors.emplace(entry.at("name").get<std::string>(), std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint tensor index: ") + e.what());
  }
  return ck;
}

}  // namespace ddag
