#pragma once

#include <cstdint>
#include <vector>

#include "seqevade/vocab.hpp"

namespace seqevade {

using SiteId = int;

enum class Label : int { goodware = 0, malware = 1 };

enum class Origin : int {
  observed = 0,
  adversarial_feature_space = 1,
  observed_post_patch = 2,
};

// One recorded behavior: an ordered list of API ids, optionally tagged
// with the call site that emitted each token and a per-token injected flag.
struct ApiSequence {
  std::vector<ApiId> tokens;
  std::vector<SiteId> provenance;   // empty, or one site id per token
  std::vector<bool> injected;       // empty, or one flag per token
  Label label = Label::goodware;
  Origin origin = Origin::observed;

  bool has_provenance() const {
    return !provenance.empty() && provenance.size() == tokens.size();
  }
  std::size_t length() const { return tokens.size(); }

  bool is_injected(std::size_t i) const {
    return i < injected.size() && injected[i];
  }

  // The original (non-injected) tokens in order.
  std::vector<ApiId> original_tokens() const {
    if (injected.empty()) return tokens;
    std::vector<ApiId> out;
    out.reserve(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i)
      if (!injected[i]) out.push_back(tokens[i]);
    return out;
  }

  bool operator==(const ApiSequence&) const = default;
};

}  // namespace seqevade
