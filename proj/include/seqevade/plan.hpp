#pragma once

#include <string>
#include <vector>

#include "seqevade/sequence.hpp"

namespace seqevade {

enum class Strategy : int { lkb = 0, bco = 1 };

inline const char* strategy_name(Strategy s) {
  return s == Strategy::lkb ? "lkb" : "bco";
}

// Site-level injection directive: APIs emitted immediately before (and,
// for end-of-trace injections, after) every execution of the site.
struct SiteDirective {
  SiteId site = 0;
  std::vector<ApiId> before;
  std::vector<ApiId> after;

  bool operator==(const SiteDirective&) const = default;
};

// Anchor-based injection, applicable to any behavior of the same program:
// inject `api` before (or after, for trailing injections) the k-th
// occurrence of `anchor` in the original trace.
struct AnchoredInjection {
  ApiId api = 0;
  ApiId anchor = 0;
  int occurrence = 1;  // 1-based
  bool after = false;

  bool operator==(const AnchoredInjection&) const = default;
};

struct DirectivePlan {
  std::string program_id;
  Strategy source = Strategy::lkb;
  std::vector<SiteDirective> directives;
  std::vector<AnchoredInjection> anchored;  // the feature-space solution
  std::vector<double> expected_scores;      // per planning trace
  bool fully_benign = false;  // every planning trace scored benign
  int planned_overhead = 0;   // injections on the attacked trace

  bool operator==(const DirectivePlan&) const = default;
};

}  // namespace seqevade
