#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "seqevade/plan.hpp"
#include "seqevade/rng.hpp"
#include "seqevade/sequence.hpp"
#include "seqevade/vocab.hpp"

namespace seqevade {

struct VerdictError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct PatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Argument signature reserved for injected calls.
inline constexpr int kNeutralArgSig = 0;

struct CallSite {
  SiteId site = 0;
  ApiId api = 0;
  int arg_sig = kNeutralArgSig + 1;  // constant per site, >= 1

  bool operator==(const CallSite&) const = default;
};

// A straight-line list of call sites executed together. Conditional blocks
// may be skipped, shuffled blocks may reorder their sites, and only
// non-essential suffixes may be truncated ("dormancy").
struct Block {
  std::vector<CallSite> sites;
  bool conditional = false;
  bool shuffle = false;
  bool essential = false;

  bool operator==(const Block&) const = default;
};

// A toy nondeterministic program whose executions emit ApiSequences,
// patchable at call-site granularity.
struct BehaviorProgram {
  std::string program_id;
  Label label = Label::goodware;
  std::vector<Block> blocks;
  std::vector<ApiId> imports;  // sorted, unique
  double nondet_level = 0.0;

  bool operator==(const BehaviorProgram&) const = default;

  bool has_site(SiteId s) const {
    for (const auto& b : blocks)
      for (const auto& cs : b.sites)
        if (cs.site == s) return true;
    return false;
  }

  const CallSite* find_site(SiteId s) const {
    for (const auto& b : blocks)
      for (const auto& cs : b.sites)
        if (cs.site == s) return &cs;
    return nullptr;
  }
};

struct PatchedProgram {
  BehaviorProgram base;
  DirectivePlan plan;

  PatchedProgram(BehaviorProgram base_, DirectivePlan plan_)
      : base(std::move(base_)), plan(std::move(plan_)) {
    for (const auto& d : plan.directives)
      if (!base.has_site(d.site))
        throw PatchError("directive targets unknown site " +
                         std::to_string(d.site) + " in program " +
                         base.program_id);
  }
};

namespace detail {

inline void emit(ApiSequence& out, ApiId api, SiteId site, bool injected) {
  out.tokens.push_back(api);
  out.provenance.push_back(site);
  out.injected.push_back(injected);
}

}  // namespace detail

// Executes the program once. Deterministic for a fixed seed; the random
// draws do not depend on the plan, so deleting plan-injected tokens from a
// patched trace yields the unpatched trace for the same seed.
inline ApiSequence execute(const BehaviorProgram& prog,
                           const DirectivePlan* plan, std::uint64_t seed) {
  Rng rng(seed);
  const double nd = prog.nondet_level;
  const std::size_t nblocks = prog.blocks.size();

  std::map<SiteId, const SiteDirective*> by_site;
  if (plan)
    for (const auto& d : plan->directives) by_site[d.site] = &d;

  // Block-level reordering: a few adjacent swaps, scaled by nondet_level.
  std::vector<std::size_t> order(nblocks);
  for (std::size_t i = 0; i < nblocks; ++i) order[i] = i;
  if (nblocks > 1) {
    auto swaps = static_cast<std::size_t>(nd * static_cast<double>(nblocks) / 2.0);
    for (std::size_t s = 0; s < swaps; ++s) {
      std::size_t i = rng.uniform_index(nblocks - 1);
      std::swap(order[i], order[i + 1]);
    }
  }

  // Probabilistic suffix truncation, never past an essential block.
  std::size_t keep = nblocks;
  if (nd > 0.0 && nblocks > 0 && rng.bernoulli(0.4 * nd)) {
    std::size_t min_keep = 0;
    for (std::size_t i = 0; i < nblocks; ++i)
      if (prog.blocks[order[i]].essential) min_keep = i + 1;
    if (min_keep < nblocks)
      keep = min_keep +
             rng.uniform_index(nblocks - min_keep + 1);  // [min_keep, nblocks]
  }

  ApiSequence out;
  out.label = prog.label;
  out.origin = plan ? Origin::observed_post_patch : Origin::observed;
  for (std::size_t i = 0; i < keep; ++i) {
    const Block& b = prog.blocks[order[i]];
    if (b.conditional && !rng.bernoulli(1.0 - 0.5 * nd)) continue;
    std::vector<std::size_t> site_order(b.sites.size());
    for (std::size_t j = 0; j < b.sites.size(); ++j) site_order[j] = j;
    if (b.shuffle && nd > 0.0 && rng.bernoulli(nd))
      rng.shuffle(site_order.begin(), site_order.end());
    for (std::size_t j : site_order) {
      const CallSite& cs = b.sites[j];
      const SiteDirective* d = nullptr;
      if (auto it = by_site.find(cs.site); it != by_site.end()) d = it->second;
      if (d)
        for (ApiId a : d->before) detail::emit(out, a, cs.site, true);
      detail::emit(out, cs.api, cs.site, false);
      if (d)
        for (ApiId a : d->after) detail::emit(out, a, cs.site, true);
    }
  }
  return out;
}

inline ApiSequence execute(const BehaviorProgram& prog, std::uint64_t seed) {
  return execute(prog, nullptr, seed);
}

inline ApiSequence execute(const PatchedProgram& pp, std::uint64_t seed) {
  return execute(pp.base, &pp.plan, seed);
}

// Arsenal: imports ∩ safe_to_inject ∩ tracked, ascending id order.
inline std::vector<ApiId> arsenal_for(const BehaviorProgram& prog,
                                      const ApiVocabulary& vocab) {
  std::vector<ApiId> out;
  for (ApiId a : prog.imports) {
    if (!vocab.valid_id(a)) continue;
    const ApiEntry& e = vocab.entry(a);
    if (e.safe_to_inject && e.tracked) out.push_back(a);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// (api, argument signature) pair observed during a run.
using BehaviorKey = std::pair<ApiId, int>;

struct PreservationVerdict {
  std::set<BehaviorKey> invariant_set;
  std::set<BehaviorKey> post_union;
  bool preserved = false;
  std::vector<BehaviorKey> witness;  // invariant elements missing post-patch
};

namespace detail {

inline std::set<BehaviorKey> behavior_keys(const BehaviorProgram& prog,
                                           const ApiSequence& run) {
  std::set<BehaviorKey> keys;
  for (std::size_t i = 0; i < run.tokens.size(); ++i) {
    if (run.is_injected(i)) continue;  // injected calls use the neutral sig
    int sig = kNeutralArgSig;
    if (run.has_provenance())
      if (const CallSite* cs = prog.find_site(run.provenance[i])) sig = cs->arg_sig;
    keys.emplace(run.tokens[i], sig);
  }
  return keys;
}

}  // namespace detail

// Functionality preservation: the intersection of the original run sets
// must be contained in the union of the modified run sets.
inline PreservationVerdict check_preservation(
    const BehaviorProgram& prog, const std::vector<ApiSequence>& original_runs,
    const std::vector<ApiSequence>& modified_runs) {
  bool any_nonempty = std::any_of(
      original_runs.begin(), original_runs.end(),
      [](const ApiSequence& s) { return !s.tokens.empty(); });
  if (original_runs.empty() || !any_nonempty)
    throw VerdictError("no non-empty original run for " + prog.program_id);
  if (modified_runs.empty())
    throw VerdictError("no modified run for " + prog.program_id);

  PreservationVerdict v;
  bool first = true;
  for (const auto& run : original_runs) {
    if (run.tokens.empty()) continue;
    auto keys = detail::behavior_keys(prog, run);
    if (first) {
      v.invariant_set = std::move(keys);
      first = false;
    } else {
      std::set<BehaviorKey> inter;
      std::set_intersection(v.invariant_set.begin(), v.invariant_set.end(),
                            keys.begin(), keys.end(),
                            std::inserter(inter, inter.begin()));
      v.invariant_set = std::move(inter);
    }
  }
  for (const auto& run : modified_runs) {
    auto keys = detail::behavior_keys(prog, run);
    v.post_union.insert(keys.begin(), keys.end());
  }
  for (const auto& k : v.invariant_set)
    if (!v.post_union.count(k)) v.witness.push_back(k);
  v.preserved = v.witness.empty();
  return v;
}

}  // namespace seqevade
