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
#include "dtrec/vocabulary.hpp"

namespace dtrec {

int ItemVocabulary::add(const std::string& item_id) {
  auto it = index_.find(item_id);
  if (it != index_.end()) return it->second;
  const int idx = kFirstItem + static_cast<int>(ids_.size());
  ids_.push_back(item_id);
  index_.emplace(item_id, idx);
  return idx;
}

int ItemVocabulary::index_of(const std::string& item_id) const {
  auto it = index_.find(item_id);
  require(it != index_.end(), ErrorKind::kVocab,
          "unknown item id '" + item_id + "'");
  return it->second;
}

bool ItemVocabulary::contains(const std::string& item_id) const {
  return index_.count(item_id) != 0;
}

const std::string& ItemVocabulary::id_of(int index) const {
  require(index >= kFirstItem && index < total_size(), ErrorKind::kVocab,
          "index " + std::to_string(index) + " is not a real item");
  return ids_[static_cast<std::size_t>(index - kFirstItem)];
}

std::uint64_t ItemVocabulary::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const char* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(data[i]);
      h *= 1099511628211ULL;
    }
  };
  for (const std::string& id : ids_) {
    mix(id.data(), id.size());
    const char sep = '\x1f';
    mix(&sep, 1);
  }
  return h;
}

}  // namespace dtrec
