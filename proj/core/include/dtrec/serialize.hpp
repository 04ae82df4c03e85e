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
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dtrec/params.hpp"
#include "dtrec/training.hpp"

namespace dtrec {

// Shared parameter-file container: an 8-byte magic, a format version, a
// JSON header (caller metadata plus the tensor manifest under "params"),
// then the tensors row-major as little-endian 64-bit floats in manifest
// order. Loading a saved file and saving it again is byte-identical.

struct NamedTensor {
  std::string name;
  ad::Mat values;
};

struct LoadedParams {
  std::string header_json;  // full header, manifest included
  std::vector<NamedTensor> tensors;
};

// meta_json must be a JSON object without a "params" key; the manifest is
// inserted there. magic must be exactly 8 bytes.
void write_params_file(const std::filesystem::path& path,
                       const std::string& magic, const std::string& meta_json,
                       const ParamList& params);

LoadedParams read_params_file(const std::filesystem::path& path,
                              const std::string& magic, const char* what);

// Copies loaded tensors into the model's slots; the names, order and shapes
// must match the target exactly.
void assign_params(const LoadedParams& loaded, const ParamList& into,
                   const char* what);

// Trained-recommender checkpoints on top of the shared container.
void save_checkpoint(const std::filesystem::path& path, Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dtrec
