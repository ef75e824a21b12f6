#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "seqevade/attack.hpp"
#include "seqevade/model.hpp"
#include "seqevade/plan.hpp"
#include "seqevade/program.hpp"
#include "seqevade/rng.hpp"

namespace seqevade {

struct StrategyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// b observed executions of one program plus their oracle scores.
struct BehaviorSet {
  std::string program_id;
  std::vector<ApiSequence> traces;
  std::vector<double> scores;
};

inline BehaviorSet observe_behaviors(const BehaviorProgram& prog, int b,
                                     const OracleModel& model,
                                     std::uint64_t seed) {
  if (b < 1) throw StrategyError("behavior count b must be >= 1");
  BehaviorSet bs;
  bs.program_id = prog.program_id;
  for (int i = 0; i < b; ++i) {
    ApiSequence t = execute(prog, derive_seed(seed, "run",
                                              static_cast<std::uint64_t>(i)));
    bs.scores.push_back(model.forward_sequence(t.tokens));
    bs.traces.push_back(std::move(t));
  }
  return bs;
}

// Expresses every injected token of `modified` as an anchored injection:
// anchored to the first original (non-injected) token at or after it, with
// the anchor's 1-based occurrence index among the original tokens. Trailing
// injections anchor to the last original token with the after flag.
inline std::vector<AnchoredInjection> extract_anchors(
    const ApiSequence& modified) {
  std::vector<AnchoredInjection> out;
  std::map<ApiId, int> occ_seen;
  std::vector<std::size_t> pending;  // injected indices awaiting an anchor
  ApiId last_anchor = 0;
  int last_occ = 0;
  for (std::size_t i = 0; i < modified.tokens.size(); ++i) {
    if (modified.is_injected(i)) {
      pending.push_back(i);
      continue;
    }
    ApiId a = modified.tokens[i];
    int k = ++occ_seen[a];
    for (std::size_t p : pending)
      out.push_back({modified.tokens[p], a, k, false});
    pending.clear();
    last_anchor = a;
    last_occ = k;
  }
  for (std::size_t p : pending) {
    if (last_anchor == 0)
      throw StrategyError("cannot anchor: no original tokens in trace");
    out.push_back({modified.tokens[p], last_anchor, last_occ, true});
  }
  return out;
}

// Applies anchored injections to a trace: each entry whose anchor
// occurrence exists (counted over the trace's original tokens) inserts
// its api immediately before (or after) that token; absent anchors are
// skipped. Original token order is preserved.
inline ApiSequence propagate(const std::vector<AnchoredInjection>& anchored,
                             const ApiSequence& trace) {
  // insertion point -> apis, filled in anchored-list order
  std::map<std::size_t, std::vector<ApiId>> at_point;
  std::map<ApiId, int> occ_seen;
  std::map<std::pair<ApiId, int>, std::size_t> occ_pos;
  for (std::size_t i = 0; i < trace.tokens.size(); ++i) {
    if (trace.is_injected(i)) continue;
    occ_pos[{trace.tokens[i], ++occ_seen[trace.tokens[i]]}] = i;
  }
  for (const auto& inj : anchored) {
    auto it = occ_pos.find({inj.anchor, inj.occurrence});
    if (it == occ_pos.end()) continue;
    at_point[inj.after ? it->second + 1 : it->second].push_back(inj.api);
  }

  ApiSequence out;
  out.label = trace.label;
  out.origin = Origin::adversarial_feature_space;
  bool prov = trace.has_provenance();
  auto emit = [&](ApiId api, bool injected, SiteId site) {
    out.tokens.push_back(api);
    out.injected.push_back(injected);
    if (prov) out.provenance.push_back(site);
  };
  for (std::size_t i = 0; i <= trace.tokens.size(); ++i) {
    if (auto it = at_point.find(i); it != at_point.end())
      for (ApiId a : it->second) emit(a, true, -1);
    if (i < trace.tokens.size())
      emit(trace.tokens[i], trace.is_injected(i),
           prov ? trace.provenance[i] : -1);
  }
  return out;
}

// Maps anchored injections to call-site directives: each anchor occurrence
// is located in the first search trace containing it, and the injection
// attaches to the site that emitted that token. Directives keep the
// anchored-list order; multiple injections at one site concatenate.
inline std::vector<SiteDirective> synthesize_directives(
    const std::vector<AnchoredInjection>& anchored,
    const std::vector<ApiSequence>& search_traces,
    const BehaviorProgram& prog,
    const std::vector<std::size_t>* preferred = nullptr) {
  std::vector<SiteDirective> out;
  auto directive_for = [&](SiteId site) -> SiteDirective& {
    for (auto& d : out)
      if (d.site == site) return d;
    out.push_back({site, {}, {}});
    return out.back();
  };
  for (std::size_t j = 0; j < anchored.size(); ++j) {
    const auto& inj = anchored[j];
    bool placed = false;
    // Search order: the trace the anchor was extracted from first (its
    // provenance realizes the injection exactly there), then the rest.
    std::vector<std::size_t> order;
    if (preferred && j < preferred->size() &&
        (*preferred)[j] < search_traces.size())
      order.push_back((*preferred)[j]);
    for (std::size_t t = 0; t < search_traces.size(); ++t)
      if (order.empty() || t != order.front()) order.push_back(t);
    for (std::size_t t : order) {
      const ApiSequence& trace = search_traces[t];
      if (!trace.has_provenance())
        throw StrategyError("trace without provenance in synthesis for " +
                            prog.program_id);
      int seen = 0;
      for (std::size_t i = 0; i < trace.tokens.size(); ++i) {
        if (trace.is_injected(i) || trace.tokens[i] != inj.anchor) continue;
        if (++seen < inj.occurrence) continue;
        SiteId site = trace.provenance[i];
        if (!prog.has_site(site))
          throw StrategyError("provenance site not in program " +
                              prog.program_id);
        SiteDirective& d = directive_for(site);
        (inj.after ? d.after : d.before).push_back(inj.api);
        placed = true;
        break;
      }
      if (placed) break;
    }
    if (!placed)
      throw StrategyError("anchor occurrence not found in any trace for " +
                          prog.program_id);
  }
  return out;
}

namespace detail {

inline std::size_t injected_count(const ApiSequence& s) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < s.tokens.size(); ++i)
    if (s.is_injected(i)) ++n;
  return n;
}

// Exhaust-budget attack on `trace`, keeping the minimum-score partial
// (ties -> earliest). Returns the partial and the number of injections
// kept. With an empty score trace the input is returned unchanged.
inline std::pair<ApiSequence, std::size_t> attack_keep_best(
    const ApiSequence& trace, const AttackConfig& cfg,
    const OracleModel& model, std::size_t budget_override) {
  AttackConfig c = cfg;
  c.mode = AttackMode::exhaust_budget;
  AttackResult res = run_injection_attack(AttackMethod::ps_fgsm, trace, c,
                                          model, budget_override);
  if (res.score_trace.empty()) return {trace, 0};
  std::size_t best = 0;
  for (std::size_t i = 1; i < res.score_trace.size(); ++i)
    if (res.score_trace[i] < res.score_trace[best]) best = i;
  return {replay_partial(trace, res.injections, best + 1), best + 1};
}

inline void require_some_malicious(const BehaviorSet& bs,
                                   const OracleModel& model) {
  if (bs.traces.empty()) throw StrategyError("empty behavior set");
  for (double s : bs.scores)
    if (s >= model.threshold()) return;
  throw StrategyError("no malicious trace to attack for " + bs.program_id);
}

}  // namespace detail

// Longest Known Behavior: attack the longest trace, keep the lowest-score
// partial, and translate its injections to directives via that trace's
// provenance.
inline DirectivePlan lkb_plan(const BehaviorSet& bs, const AttackConfig& cfg,
                              const BehaviorProgram& prog,
                              const OracleModel& model) {
  detail::require_some_malicious(bs, model);
  std::size_t longest = 0;
  for (std::size_t i = 1; i < bs.traces.size(); ++i)
    if (bs.traces[i].tokens.size() > bs.traces[longest].tokens.size())
      longest = i;

  auto [partial, kept] =
      detail::attack_keep_best(bs.traces[longest], cfg, model,
                               detail::kNoBudgetOverride);
  DirectivePlan plan;
  plan.program_id = bs.program_id;
  plan.source = Strategy::lkb;
  plan.anchored = extract_anchors(partial);
  plan.directives =
      synthesize_directives(plan.anchored, {bs.traces[longest]}, prog);
  plan.planned_overhead = static_cast<int>(kept);
  plan.fully_benign = true;
  for (const auto& t : bs.traces) {
    double s = model.forward_sequence(propagate(plan.anchored, t).tokens);
    plan.expected_scores.push_back(s);
    if (s >= model.threshold()) plan.fully_benign = false;
  }
  return plan;
}

// Behavior Cascade Optimization: repeatedly attack the worst-scoring trace,
// fold its injections into one anchored solution, and propagate that
// solution into every behavior, until all score benign or no progress is
// possible. `round_limit` bounds the cascade.
inline DirectivePlan bco_plan(const BehaviorSet& bs, const AttackConfig& cfg,
                              const BehaviorProgram& prog,
                              const OracleModel& model, int round_limit = 10) {
  detail::require_some_malicious(bs, model);
  const std::size_t b = bs.traces.size();
  std::vector<AnchoredInjection> solution;
  std::vector<std::size_t> sources;  // trace each solution entry anchors to
  std::vector<ApiSequence> current(bs.traces.begin(), bs.traces.end());
  std::set<std::vector<ApiId>> attacked_states;

  auto anchor_present = [&](const AnchoredInjection& inj,
                            const ApiSequence& trace) {
    int seen = 0;
    for (std::size_t i = 0; i < trace.tokens.size(); ++i)
      if (!trace.is_injected(i) && trace.tokens[i] == inj.anchor)
        if (++seen >= inj.occurrence) return true;
    return false;
  };

  for (int round = 0; round < round_limit; ++round) {
    // worst eligible malicious trace: not in a state already attacked
    std::size_t pick = b;
    double worst = -1.0;
    for (std::size_t i = 0; i < b; ++i) {
      double s = model.forward_sequence(current[i].tokens);
      if (s < model.threshold()) continue;
      if (attacked_states.count(current[i].tokens)) continue;
      if (s > worst) {
        worst = s;
        pick = i;
      }
    }
    if (pick == b) break;  // all benign, or no new state to attack

    attacked_states.insert(current[pick].tokens);
    // The attack budget is the attacked trace's own headroom under its
    // overhead cap, counting injections already propagated into it; as
    // with LKB, propagation into the *other* traces is not capped.
    std::size_t used = detail::injected_count(current[pick]);
    std::size_t cap = static_cast<std::size_t>(
        cfg.overhead_limit *
        static_cast<double>(bs.traces[pick].tokens.size()));
    std::size_t headroom = cap > used ? cap - used : 0;

    AttackConfig c = cfg;
    c.mode = AttackMode::exhaust_budget;
    AttackResult res = detail::run_injection_attack(
        AttackMethod::ps_fgsm, current[pick], c, model, headroom);
    if (res.injections.empty()) continue;  // budget exhausted on this trace

    // Candidate solution (and per-entry source traces) after keeping the
    // first k injections. Entries re-anchored from the attacked trace come
    // first; prior entries whose anchors it cannot see are retained.
    auto candidate = [&](std::size_t k) {
      std::pair<std::vector<AnchoredInjection>, std::vector<std::size_t>> c;
      c.first =
          extract_anchors(replay_partial(current[pick], res.injections, k));
      c.second.assign(c.first.size(), pick);
      for (std::size_t j = 0; j < solution.size(); ++j)
        if (!anchor_present(solution[j], bs.traces[pick])) {
          c.first.push_back(solution[j]);
          c.second.push_back(sources[j]);
        }
      return c;
    };
    // Keep the prefix of the attack that best serves simultaneous
    // evasion: the one minimizing the worst propagated score across all
    // traces (ties -> fewest injections). Scoring the whole cascade, not
    // just the attacked trace, is what drives every behavior benign.
    std::size_t best_k = 1;
    double best_worst = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k <= res.injections.size(); ++k) {
      std::vector<AnchoredInjection> s = candidate(k).first;
      double worst_score = 0.0;
      for (std::size_t i = 0; i < b; ++i)
        worst_score = std::max(
            worst_score,
            model.forward_sequence(propagate(s, bs.traces[i]).tokens));
      if (worst_score < best_worst) {
        best_k = k;
        best_worst = worst_score;
      }
    }
    attacked_states.insert(
        replay_partial(current[pick], res.injections, best_k).tokens);

    std::tie(solution, sources) = candidate(best_k);
    for (std::size_t i = 0; i < b; ++i)
      current[i] = propagate(solution, bs.traces[i]);
  }

  DirectivePlan plan;
  plan.program_id = bs.program_id;
  plan.source = Strategy::bco;
  plan.anchored = solution;
  plan.directives = synthesize_directives(
      solution, {bs.traces.begin(), bs.traces.end()}, prog, &sources);
  plan.planned_overhead = static_cast<int>(solution.size());
  plan.fully_benign = true;
  for (std::size_t i = 0; i < b; ++i) {
    double s = model.forward_sequence(current[i].tokens);
    plan.expected_scores.push_back(s);
    if (s >= model.threshold()) plan.fully_benign = false;
  }
  return plan;
}

}  // namespace seqevade
