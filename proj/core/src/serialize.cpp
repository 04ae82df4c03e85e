// Copyright 2026 The dtrec Authors
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
#include "dtrec/serialize.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dtrec/error.hpp"
#include "dtrec/model.hpp"

namespace dtrec {

namespace {

using nlohmann::json;

constexpr char kCheckpointMagic[] = "DTRECKPT";
constexpr std::uint32_t kVersion = 1;

void require_little_endian() {
  require(std::endian::native == std::endian::little, ErrorKind::kIo,
          "parameter files require a little-endian host");
}

template <typename T>
void write_scalar(std::ostream& out, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.write(bytes, sizeof(T));
}

template <typename T>
T read_scalar(std::istream& in, const char* what) {
  char bytes[sizeof(T)];
  in.read(bytes, sizeof(T));
  require(in.good(), ErrorKind::kFormat,
          std::string("file truncated while reading ") + what);
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

void write_params_file(const std::filesystem::path& path,
                       const std::string& magic, const std::string& meta_json,
                       const ParamList& params) {
  require_little_endian();
  require(magic.size() == 8, ErrorKind::kConfig,
          "parameter-file magic must be 8 bytes");

  json header;
  try {
    header = json::parse(meta_json);
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig,
         std::string("parameter-file metadata is not JSON: ") + e.what());
  }
  require(header.is_object() && !header.contains("params"),
          ErrorKind::kConfig,
          "parameter-file metadata must be an object without a params key");

  json manifest = json::array();
  for (const ParamRef& p : params) {
    manifest.push_back(
        {{"name", p.name}, {"rows", p.mat->rows()}, {"cols", p.mat->cols()}});
  }
  header["params"] = manifest;
  const std::string header_text = header.dump();

  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::kIo, "cannot write " + path.string());
  out.write(magic.data(), 8);
  write_scalar<std::uint32_t>(out, kVersion);
  write_scalar<std::uint64_t>(out, header_text.size());
  out.write(header_text.data(),
            static_cast<std::streamsize>(header_text.size()));
  for (const ParamRef& p : params) {
    const ad::Mat& m = *p.mat;
    for (long i = 0; i < m.rows(); ++i)
      for (long j = 0; j < m.cols(); ++j) write_scalar<double>(out, m(i, j));
  }
  require(out.good(), ErrorKind::kIo, "write failed for " + path.string());
}

LoadedParams read_params_file(const std::filesystem::path& path,
                              const std::string& magic, const char* what) {
  require_little_endian();
  require(magic.size() == 8, ErrorKind::kConfig,
          "parameter-file magic must be 8 bytes");
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::kIo, "cannot open " + path.string());

  char found[8];
  in.read(found, sizeof(found));
  require(in.good() && std::memcmp(found, magic.data(), sizeof(found)) == 0,
          ErrorKind::kFormat,
          path.string() + " is not a " + what + " file");
  const auto version = read_scalar<std::uint32_t>(in, "version");
  require(version == kVersion, ErrorKind::kFormat,
          "unsupported " + std::string(what) + " version " +
              std::to_string(version));
  const auto header_len = read_scalar<std::uint64_t>(in, "header length");
  LoadedParams loaded;
  loaded.header_json.resize(header_len);
  in.read(loaded.header_json.data(),
          static_cast<std::streamsize>(header_len));
  require(in.good(), ErrorKind::kFormat,
          std::string(what) + " truncated while reading the header");

  json header;
  try {
    header = json::parse(loaded.header_json);
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat,
         std::string("bad ") + what + " header JSON: " + e.what());
  }
  require(header.contains("params") && header["params"].is_array(),
          ErrorKind::kFormat,
          std::string(what) + " header lacks a parameter manifest");

  for (const json& entry : header["params"]) {
    NamedTensor tensor;
    long rows = 0;
    long cols = 0;
    try {
      tensor.name = entry.at("name").get<std::string>();
      rows = entry.at("rows").get<long>();
      cols = entry.at("cols").get<long>();
    } catch (const json::exception& e) {
      fail(ErrorKind::kFormat,
           std::string("bad ") + what + " manifest entry: " + e.what());
    }
    require(rows >= 0 && cols >= 0, ErrorKind::kFormat,
            std::string(what) + " manifest declares a negative shape");
    tensor.values.resize(rows, cols);
    for (long r = 0; r < rows; ++r)
      for (long c = 0; c < cols; ++c)
        tensor.values(r, c) = read_scalar<double>(in, "parameter payload");
    loaded.tensors.push_back(std::move(tensor));
  }
  in.peek();
  require(in.eof(), ErrorKind::kFormat,
          std::string(what) + " has trailing bytes after the payload");
  return loaded;
}

void assign_params(const LoadedParams& loaded, const ParamList& into,
                   const char* what) {
  require(loaded.tensors.size() == into.size(), ErrorKind::kFormat,
          std::string(what) + " parameter manifest does not match the model");
  for (std::size_t i = 0; i < into.size(); ++i) {
    const NamedTensor& tensor = loaded.tensors[i];
    require(tensor.name == into[i].name &&
                tensor.values.rows() == into[i].mat->rows() &&
                tensor.values.cols() == into[i].mat->cols(),
            ErrorKind::kFormat,
            std::string(what) + " manifest mismatch at " + into[i].name);
    *into[i].mat = tensor.values;
  }
}

void save_checkpoint(const std::filesystem::path& path, Checkpoint& ck) {
  ParamList params;
  ck.model.collect_params(params);

  json header{{"config", json::parse(train_config_to_json(ck.config))},
              {"vocab_hash", ck.vocab_hash},
              {"vocab_size", ck.vocab_size},
              {"epoch", ck.epoch}};
  json history = json::array();
  for (const EpochRecord& r : ck.history) {
    history.push_back({{"epoch", r.epoch},
                       {"total", r.total},
                       {"ce", r.ce},
                       {"contrastive", r.contrastive}});
  }
  header["history"] = history;
  write_params_file(path, kCheckpointMagic, header.dump(), params);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const LoadedParams loaded =
      read_params_file(path, kCheckpointMagic, "checkpoint");

  json header = json::parse(loaded.header_json);
  Checkpoint ck;
  try {
    ck.config = train_config_from_json(header.at("config").dump());
    ck.vocab_hash = header.at("vocab_hash").get<std::uint64_t>();
    ck.vocab_size = header.at("vocab_size").get<int>();
    ck.epoch = header.at("epoch").get<int>();
    for (const json& r : header.at("history")) {
      ck.history.push_back({r.at("epoch").get<int>(),
                            r.at("total").get<double>(),
                            r.at("ce").get<double>(),
                            r.at("contrastive").get<double>()});
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, std::string("bad checkpoint header: ") + e.what());
  }

  ck.model =
      SequenceModel::create(ck.config.model, ck.vocab_size, ck.config.seed);
  ParamList params;
  ck.model.collect_params(params);
  assign_params(loaded, params, "checkpoint");
  return ck;
}

}  // namespace dtrec
