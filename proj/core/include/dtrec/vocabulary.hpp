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

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "dtrec/error.hpp"

namespace dtrec {

// Bijection between raw item ids and contiguous indices. Indices 0..2 are
// reserved for the pad, bos and eos tokens; real items start at 3.
class ItemVocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kFirstItem = 3;

  // Inserts the id if unseen; returns its index either way.
  int add(const std::string& item_id);
  // Index for a known id; throws a vocabulary error for unknown ids.
  int index_of(const std::string& item_id) const;
  bool contains(const std::string& item_id) const;
  // Raw id for a real-item index; throws for special or out-of-range indices.
  const std::string& id_of(int index) const;

  static bool is_special(int index) { return index >= 0 && index < kFirstItem; }
  bool is_real_item(int index) const {
    return index >= kFirstItem && index < total_size();
  }

  int item_count() const { return static_cast<int>(ids_.size()); }
  // Number of embedding rows: specials plus real items.
  int total_size() const { return kFirstItem + item_count(); }

  // Order-sensitive FNV-1a digest over the mapping; used to pair
  // checkpoints with the dataset they were trained on.
  std::uint64_t hash() const;

  const std::vector<std::string>& ids() const { return ids_; }

 private:
  std::vector<std::string> ids_;  // position i holds the id of index i+kFirstItem
  std::unordered_map<std::string, int> index_;
};

}  // namespace dtrec
