#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "seqevade/model.hpp"
#include "seqevade/rng.hpp"
#include "seqevade/sequence.hpp"

namespace seqevade {

struct AttackError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class AttackMode : int { stop_on_evasion = 0, exhaust_budget = 1 };

enum class AttackMethod : int {
  ps_fgsm = 0,
  random = 1,
  gradient_api_random_pos = 2,
};

inline const char* attack_method_name(AttackMethod m) {
  switch (m) {
    case AttackMethod::ps_fgsm: return "ps-fgsm";
    case AttackMethod::random: return "random";
    case AttackMethod::gradient_api_random_pos: return "gradient-random-pos";
  }
  return "?";
}

struct AttackConfig {
  int cadence = 4;                     // c: greatest-absolute rule cadence
  int max_injections_per_window = 800; // n_A
  double overhead_limit = 0.20;        // fraction of the original length
  std::vector<ApiId> arsenal;          // ordered, non-empty
  AttackMode mode = AttackMode::stop_on_evasion;
  std::uint64_t seed = 0;              // consumed by the random baselines

  void validate() const {
    if (arsenal.empty()) throw AttackError("arsenal must be non-empty");
    if (cadence < 1) throw AttackError("cadence must be >= 1");
    if (overhead_limit < 0.0)
      throw AttackError("overhead_limit must be non-negative");
    if (max_injections_per_window < 0)
      throw AttackError("max_injections_per_window must be non-negative");
  }
};

// Absolute values of the Jacobian entries, one column per window position.
struct NormMatrix {
  Eigen::MatrixXd values;  // d x n
};

inline NormMatrix norm_matrix(const JacobianSlice& j) {
  NormMatrix n;
  n.values = j.values.transpose().cwiseAbs();
  return n;
}

struct InjectionRecord {
  int window_index = 0;
  int position = 0;              // P* within the window
  std::size_t global_position = 0;  // index in the sequence at insert time
  ApiId api = 0;
  double oracle_score_after = 0.0;
  int iteration = 0;  // the r used when choosing this injection
};

struct AttackResult {
  ApiSequence adversarial;
  std::vector<InjectionRecord> injections;
  bool evaded = false;
  int overhead = 0;
  double overhead_fraction = 0.0;
  std::vector<double> score_trace;  // one entry per injection
  std::size_t oracle_calls = 0;     // forward + jacobian evaluations
};

// Tracks the forward/jacobian evaluation count that black-box comparisons
// care about. One full-sequence scoring counts as one call.
class CountingOracle {
 public:
  explicit CountingOracle(const OracleModel& model) : model_(model) {}

  double sequence_score(const std::vector<ApiId>& tokens) {
    ++calls_;
    return model_.forward_sequence(tokens);
  }

  JacobianSlice jacobian(const std::vector<ApiId>& window) {
    ++calls_;
    return model_.input_jacobian(window);
  }

  const OracleModel& model() const { return model_; }
  std::size_t calls() const { return calls_; }

 private:
  const OracleModel& model_;
  std::size_t calls_ = 0;
};

// Position selection over the norm matrix: every c-th iteration the
// greatest-absolute rule (max of column maxes), otherwise the
// greatest-smallest rule (max of column mins). Ties break to the lowest
// position index.
inline int compute_best_position(const NormMatrix& n, int r, int c,
                                 const std::vector<int>& eligible) {
  if (eligible.empty())
    throw AttackError("no eligible (non-padding) positions in window");
  bool absolute_rule = (r % c) == 0;
  int best = eligible.front();
  double best_val = -1.0;
  for (int pos : eligible) {
    double v = absolute_rule ? n.values.col(pos).maxCoeff()
                             : n.values.col(pos).minCoeff();
    if (v > best_val) {
      best_val = v;
      best = pos;
    }
  }
  return best;
}

namespace detail {

inline int sign_of(double v) { return v > 0 ? 1 : v < 0 ? -1 : 0; }

}  // namespace detail

// Chooses the arsenal API whose insertion at `position` (window truncated
// back to n) lands closest, in elementwise sign distance, to the sign of
// the pre-insertion Jacobian. Ties break to the lowest api id.
inline ApiId select_api(const std::vector<ApiId>& window, int position,
                        const JacobianSlice& j,
                        const std::vector<ApiId>& arsenal,
                        const OracleModel& model) {
  if (arsenal.empty()) throw AttackError("arsenal must be non-empty");
  int n = model.window_size();
  if (position < 0 || position >= n)
    throw AttackError("position out of window bounds");
  ApiId best = arsenal.front();
  double best_dist = std::numeric_limits<double>::infinity();
  std::vector<ApiId> modified(window.begin(), window.end());
  for (ApiId a : arsenal) {
    modified = window;
    modified.insert(modified.begin() + position, a);
    modified.resize(static_cast<std::size_t>(n));
    Eigen::MatrixXd e = model.embed(modified);
    double dist = 0.0;
    for (int i = 0; i < e.rows(); ++i)
      for (int k = 0; k < e.cols(); ++k)
        dist += std::abs(detail::sign_of(e(i, k)) -
                         detail::sign_of(j.values(i, k)));
    if (dist < best_dist || (dist == best_dist && a < best)) {
      best_dist = dist;
      best = a;
    }
  }
  return best;
}

namespace detail {

// The attack steps toward the benign class, so the direction that guides
// both position and api selection is the descent direction of the malware
// score: the negated input jacobian.
inline JacobianSlice evasion_jacobian(CountingOracle& oracle,
                                      const std::vector<ApiId>& window) {
  JacobianSlice j = oracle.jacobian(window);
  j.values = -j.values;
  return j;
}

inline std::vector<int> eligible_positions(const std::vector<ApiId>& window) {
  std::vector<int> out;
  for (std::size_t i = 0; i < window.size(); ++i)
    if (window[i] != 0) out.push_back(static_cast<int>(i));
  return out;
}

inline constexpr std::size_t kNoBudgetOverride =
    std::numeric_limits<std::size_t>::max();

inline AttackResult run_injection_attack(
    AttackMethod method, const ApiSequence& x, const AttackConfig& cfg,
    const OracleModel& model,
    std::size_t budget_override = kNoBudgetOverride) {
  cfg.validate();
  const int n = model.window_size();
  const std::size_t orig_len = x.tokens.size();
  if (orig_len == 0) throw AttackError("cannot attack an empty sequence");

  CountingOracle oracle(model);
  double current_score = oracle.sequence_score(x.tokens);
  if (cfg.mode == AttackMode::stop_on_evasion &&
      current_score < model.threshold())
    throw AttackError("precondition violated: sequence is not detected");

  AttackResult res;
  res.adversarial = x;
  res.adversarial.origin = Origin::adversarial_feature_space;
  if (res.adversarial.injected.empty())
    res.adversarial.injected.assign(orig_len, false);
  if (!res.adversarial.has_provenance() && !res.adversarial.provenance.empty())
    res.adversarial.provenance.clear();

  const std::size_t budget_total =
      budget_override != kNoBudgetOverride
          ? budget_override
          : static_cast<std::size_t>(cfg.overhead_limit *
                                     static_cast<double>(orig_len));
  Rng rng(derive_seed(cfg.seed, "attack"));
  auto& tokens = res.adversarial.tokens;
  int r = 0;
  std::size_t total_injections = 0;
  bool stop_all = false;

  for (std::size_t win = 0;
       !stop_all && win * static_cast<std::size_t>(n) < tokens.size();
       ++win) {
    int per_window = 0;
    while (true) {
      if (cfg.mode == AttackMode::stop_on_evasion &&
          current_score < model.threshold()) {
        stop_all = true;
        break;
      }
      if (per_window >= cfg.max_injections_per_window) break;
      if (total_injections >= budget_total) {
        stop_all = true;
        break;
      }
      std::vector<ApiId> window = model.window_at(tokens, static_cast<int>(win));
      std::vector<int> eligible = eligible_positions(window);
      if (eligible.empty()) break;

      int pos;
      ApiId api;
      switch (method) {
        case AttackMethod::ps_fgsm: {
          JacobianSlice j = evasion_jacobian(oracle, window);
          pos = compute_best_position(norm_matrix(j), r, cfg.cadence,
                                      eligible);
          api = select_api(window, pos, j, cfg.arsenal, model);
          break;
        }
        case AttackMethod::gradient_api_random_pos: {
          JacobianSlice j = evasion_jacobian(oracle, window);
          pos = eligible[rng.uniform_index(eligible.size())];
          api = select_api(window, pos, j, cfg.arsenal, model);
          break;
        }
        case AttackMethod::random:
        default: {
          pos = eligible[rng.uniform_index(eligible.size())];
          api = cfg.arsenal[rng.uniform_index(cfg.arsenal.size())];
          break;
        }
      }

      std::size_t global =
          win * static_cast<std::size_t>(n) + static_cast<std::size_t>(pos);
      tokens.insert(tokens.begin() + static_cast<std::ptrdiff_t>(global), api);
      res.adversarial.injected.insert(
          res.adversarial.injected.begin() +
              static_cast<std::ptrdiff_t>(global),
          true);
      if (res.adversarial.provenance.size() + 1 == tokens.size())
        res.adversarial.provenance.insert(
            res.adversarial.provenance.begin() +
                static_cast<std::ptrdiff_t>(global),
            -1);

      current_score = oracle.sequence_score(tokens);
      InjectionRecord rec;
      rec.window_index = static_cast<int>(win);
      rec.position = pos;
      rec.global_position = global;
      rec.api = api;
      rec.oracle_score_after = current_score;
      rec.iteration = r;
      res.injections.push_back(rec);
      res.score_trace.push_back(current_score);
      ++r;
      ++per_window;
      ++total_injections;
    }
  }

  res.evaded = current_score < model.threshold();
  res.overhead = static_cast<int>(res.injections.size());
  res.overhead_fraction =
      static_cast<double>(res.overhead) / static_cast<double>(orig_len);
  res.oracle_calls = oracle.calls();
  return res;
}

}  // namespace detail

inline AttackResult ps_fgsm(const ApiSequence& x, const AttackConfig& cfg,
                            const OracleModel& model) {
  return detail::run_injection_attack(AttackMethod::ps_fgsm, x, cfg, model);
}

inline AttackResult baseline_random(const ApiSequence& x,
                                    const AttackConfig& cfg,
                                    const OracleModel& model) {
  return detail::run_injection_attack(AttackMethod::random, x, cfg, model);
}

inline AttackResult baseline_gradient_api_random_pos(const ApiSequence& x,
                                                     const AttackConfig& cfg,
                                                     const OracleModel& model) {
  return detail::run_injection_attack(AttackMethod::gradient_api_random_pos, x,
                                      cfg, model);
}

inline AttackResult run_attack(AttackMethod method, const ApiSequence& x,
                               const AttackConfig& cfg,
                               const OracleModel& model) {
  return detail::run_injection_attack(method, x, cfg, model);
}

// Re-applies the first `k` recorded injections to the original sequence,
// reproducing the partial adversarial state after the k-th injection.
inline ApiSequence replay_partial(const ApiSequence& original,
                                  const std::vector<InjectionRecord>& records,
                                  std::size_t k) {
  ApiSequence out = original;
  out.origin = Origin::adversarial_feature_space;
  if (out.injected.empty()) out.injected.assign(out.tokens.size(), false);
  for (std::size_t i = 0; i < k && i < records.size(); ++i) {
    const auto& rec = records[i];
    auto at = static_cast<std::ptrdiff_t>(rec.global_position);
    out.tokens.insert(out.tokens.begin() + at, rec.api);
    out.injected.insert(out.injected.begin() + at, true);
    if (out.provenance.size() + 1 == out.tokens.size())
      out.provenance.insert(out.provenance.begin() + at, -1);
  }
  return out;
}

}  // namespace seqevade
