#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "seqevade/rng.hpp"

namespace seqevade {

using ApiId = int;  // 0 is reserved for padding and never a real API

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct VocabError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ApiEntry {
  ApiId id = 0;
  std::string name;
  int category = 0;
  int action = 0;
  int object = 0;
  bool safe_to_inject = false;
  bool tracked = false;

  bool operator==(const ApiEntry&) const = default;
};

// Attribute alphabet sizes for the (category, action, object) triples.
inline constexpr int kNumCategories = 12;
inline constexpr int kNumActions = 20;
inline constexpr int kNumObjects = 25;

// Malicious motifs: fixed 4-grams chosen at vocabulary build time.
inline constexpr int kNumMotifs = 8;
inline constexpr int kMotifLen = 4;

using Motif = std::array<ApiId, kMotifLen>;

class ApiVocabulary {
 public:
  ApiVocabulary() = default;
  ApiVocabulary(std::vector<ApiEntry> entries, std::vector<Motif> motifs)
      : entries_(std::move(entries)), motifs_(std::move(motifs)) {
    motif_member_.assign(entries_.size() + 1, false);
    for (const auto& m : motifs_)
      for (ApiId a : m) motif_member_.at(static_cast<std::size_t>(a)) = true;
  }

  int size() const { return static_cast<int>(entries_.size()); }

  const ApiEntry& entry(ApiId id) const {
    if (id < 1 || id > size())
      throw VocabError("unknown api id " + std::to_string(id));
    return entries_[static_cast<std::size_t>(id - 1)];
  }

  bool valid_id(ApiId id) const { return id >= 1 && id <= size(); }

  const std::vector<ApiEntry>& entries() const { return entries_; }
  const std::vector<Motif>& motifs() const { return motifs_; }

  bool is_motif_member(ApiId id) const {
    return id >= 1 && id < static_cast<ApiId>(motif_member_.size()) &&
           motif_member_[static_cast<std::size_t>(id)];
  }

  // True when (a, b) is a consecutive pair inside any motif.
  bool is_motif_bigram(ApiId a, ApiId b) const {
    for (const auto& m : motifs_)
      for (int i = 0; i + 1 < kMotifLen; ++i)
        if (m[static_cast<std::size_t>(i)] == a &&
            m[static_cast<std::size_t>(i + 1)] == b)
          return true;
    return false;
  }

  std::uint64_t hash() const {
    Fnv1a h;
    for (const auto& e : entries_) {
      h.update_u64(static_cast<std::uint64_t>(e.id));
      h.update(e.name.data(), e.name.size());
      h.update_u64(static_cast<std::uint64_t>(e.category));
      h.update_u64(static_cast<std::uint64_t>(e.action));
      h.update_u64(static_cast<std::uint64_t>(e.object));
      h.update_u64(e.safe_to_inject ? 1 : 0);
      h.update_u64(e.tracked ? 1 : 0);
    }
    for (const auto& m : motifs_)
      for (ApiId a : m) h.update_u64(static_cast<std::uint64_t>(a));
    return h.digest();
  }

  bool operator==(const ApiVocabulary& o) const {
    return entries_ == o.entries_ && motifs_ == o.motifs_;
  }

 private:
  std::vector<ApiEntry> entries_;
  std::vector<Motif> motifs_;
  std::vector<bool> motif_member_;
};

// Deterministic synthetic vocabulary. ~50% of entries are safe to inject,
// ~85% are tracked; triples are sampled uniformly. Motifs are 4-grams of
// distinct tracked APIs.
inline ApiVocabulary build_vocabulary(int size, std::uint64_t seed) {
  if (size < 10) throw ConfigError("vocabulary size must be >= 10");
  Rng rng(derive_seed(seed, "vocab"));
  std::vector<ApiEntry> entries;
  entries.reserve(static_cast<std::size_t>(size));
  for (int i = 1; i <= size; ++i) {
    ApiEntry e;
    e.id = i;
    e.category = static_cast<int>(rng.uniform_index(kNumCategories));
    e.action = static_cast<int>(rng.uniform_index(kNumActions));
    e.object = static_cast<int>(rng.uniform_index(kNumObjects));
    e.safe_to_inject = rng.bernoulli(0.5);
    e.tracked = rng.bernoulli(0.85);
    e.name = "api" + std::to_string(i) + "_c" + std::to_string(e.category) +
             "a" + std::to_string(e.action) + "o" + std::to_string(e.object);
    entries.push_back(std::move(e));
  }
  // The safe-to-inject subset must be non-empty.
  if (std::none_of(entries.begin(), entries.end(),
                   [](const ApiEntry& e) { return e.safe_to_inject; }))
    entries.front().safe_to_inject = true;

  std::vector<ApiId> tracked;
  for (const auto& e : entries)
    if (e.tracked) tracked.push_back(e.id);
  if (tracked.size() < kMotifLen)
    for (auto& e : entries) {
      if (!e.tracked) {
        e.tracked = true;
        tracked.push_back(e.id);
        if (tracked.size() >= kMotifLen) break;
      }
    }

  std::vector<Motif> motifs;
  for (int m = 0; m < kNumMotifs; ++m) {
    Motif motif{};
    for (int k = 0; k < kMotifLen; ++k) {
      ApiId a;
      bool dup;
      do {
        a = tracked[rng.uniform_index(tracked.size())];
        dup = false;
        for (int j = 0; j < k; ++j)
          if (motif[static_cast<std::size_t>(j)] == a) dup = true;
      } while (dup);
      motif[static_cast<std::size_t>(k)] = a;
    }
    motifs.push_back(motif);
  }
  return ApiVocabulary(std::move(entries), std::move(motifs));
}

}  // namespace seqevade
