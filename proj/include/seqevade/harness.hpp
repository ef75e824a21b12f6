#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "seqevade/attack.hpp"
#include "seqevade/corpus.hpp"
#include "seqevade/io.hpp"
#include "seqevade/model.hpp"
#include "seqevade/strategies.hpp"

namespace seqevade {

struct HarnessError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Raised when the oracle detects none of the malicious test samples.
struct EmptyDetectedError : HarnessError {
  using HarnessError::HarnessError;
};

enum class ExperimentKind : int {
  feature_space = 0,
  problem_space_whitebox = 1,
  problem_space_blackbox = 2,
};

inline const char* experiment_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::feature_space: return "feature-space";
    case ExperimentKind::problem_space_whitebox:
      return "problem-space-whitebox";
    case ExperimentKind::problem_space_blackbox:
      return "problem-space-blackbox";
  }
  return "?";
}

inline ExperimentKind experiment_from_name(const std::string& s) {
  for (ExperimentKind k :
       {ExperimentKind::feature_space, ExperimentKind::problem_space_whitebox,
        ExperimentKind::problem_space_blackbox})
    if (s == experiment_name(k)) return k;
  throw HarnessError("unknown experiment '" + s + "'");
}

inline AttackMethod attack_from_name(const std::string& s) {
  for (AttackMethod m : {AttackMethod::ps_fgsm, AttackMethod::random,
                         AttackMethod::gradient_api_random_pos})
    if (s == attack_method_name(m)) return m;
  throw HarnessError("unknown attack '" + s + "'");
}

inline Strategy strategy_from_name(const std::string& s) {
  for (Strategy st : {Strategy::lkb, Strategy::bco})
    if (s == strategy_name(st)) return st;
  throw HarnessError("unknown strategy '" + s + "'");
}

struct ExperimentSpec {
  ExperimentKind experiment = ExperimentKind::feature_space;
  std::string vocab_path;
  std::string corpus_path;    // sequence file
  std::string programs_path;  // program file
  std::string oracle_path;    // white-box model / planning oracle
  std::string target_path;    // black-box classification model
  std::vector<AttackMethod> attacks{AttackMethod::ps_fgsm,
                                    AttackMethod::random,
                                    AttackMethod::gradient_api_random_pos};
  Strategy strategy = Strategy::lkb;
  int b = 5;  // executions per program, before and after patching
  std::vector<double> overhead_limits{0.20};
  // Arsenal buckets as ascending upper-edge fractions of vocabulary size;
  // a sample falls in the first bucket whose edge covers its fraction.
  std::vector<double> arsenal_buckets{0.02, 0.06, 0.12, 1.0};
  std::vector<double> thresholds{0.5};
  int cadence = 4;
  std::uint64_t master_seed = 0;

  void validate() const {
    if (b < 1) throw HarnessError("b must be >= 1");
    if (attacks.empty()) throw HarnessError("no attacks configured");
    if (overhead_limits.empty()) throw HarnessError("no overhead limits");
    for (double l : overhead_limits)
      if (l < 0.0) throw HarnessError("overhead limit must be non-negative");
    if (!std::is_sorted(arsenal_buckets.begin(), arsenal_buckets.end()))
      throw HarnessError("arsenal buckets must be ascending");
    if (arsenal_buckets.empty() || arsenal_buckets.back() < 1.0)
      throw HarnessError("arsenal buckets must end at 1.0 or above");
  }
};

// One attacked sample (feature space) or one program x overhead-limit cell
// (problem space). Every aggregate in the report is a fold over these.
struct AuditRecord {
  std::string program_id;
  std::string attack;    // attack method, or strategy driver for plans
  std::string strategy;  // "-" for feature space
  double overhead_limit = 0.0;
  int arsenal_size = 0;
  double arsenal_frac = 0.0;
  double original_score = 0.0;
  double final_score = 0.0;  // adversarial sequence / worst post-run score
  bool evaded = false;       // feature space: oracle fooled on the sequence
  int overhead = 0;          // injections on the attacked sequence
  double overhead_fraction = 0.0;
  int planned_overhead = 0;          // problem space only
  double realized_overhead = 0.0;    // mean injected calls per post run
  int evasive_execs = 0;
  int total_execs = 0;
  bool preserved = true;
  std::uint64_t oracle_calls = 0;
  bool skipped = false;
  std::string skip_reason = "-";
  std::vector<double> post_scores;  // classification scores of post runs
};

struct OverheadStats {
  int n = 0;
  double mean = 0.0;
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
};

// Per attack x overhead-limit evasion aggregate (feature space).
struct FeatureRow {
  std::string attack;
  double overhead_limit = 0.0;
  int attacked = 0;
  int evaded = 0;
  double evasion_rate = 0.0;
  OverheadStats overhead;  // over successful evasions
};

// Per overhead-limit aggregate (problem space).
struct LimitRow {
  double overhead_limit = 0.0;
  int programs = 0;
  int evasive_execs = 0;
  int total_execs = 0;
  double effectiveness = 0.0;
  double preservation_rate = 0.0;
  double planned_overhead_mean = 0.0;
  double realized_overhead_mean = 0.0;
};

// Per overhead-limit x arsenal-size bucket aggregate (problem space).
struct BucketRow {
  double overhead_limit = 0.0;
  double bucket_lo = 0.0;  // exclusive
  double bucket_hi = 0.0;  // inclusive
  int programs = 0;
  int evasive_execs = 0;
  int total_execs = 0;
  double effectiveness = 0.0;
};

struct ThresholdRow {
  double threshold = 0.0;
  double tpr = 0.0;
  double fpr = 0.0;
  double effectiveness = 0.0;
};

struct ExperimentReport {
  ExperimentKind kind = ExperimentKind::feature_space;
  std::string strategy = "-";
  std::vector<AuditRecord> audits;
  std::vector<FeatureRow> feature_rows;
  std::vector<LimitRow> limit_rows;
  std::vector<BucketRow> bucket_rows;
  std::vector<ThresholdRow> threshold_rows;
  double evasion_rate = 0.0;          // feature space, over all audits
  double attack_effectiveness = 0.0;  // problem space, over all audits
  double preservation_rate = 0.0;
  int attacked = 0;
  int skipped = 0;
};

namespace detail {

inline double percentile(std::vector<double> v, double p) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  double rank = p * static_cast<double>(v.size() - 1);
  auto lo = static_cast<std::size_t>(rank);
  std::size_t hi = std::min(lo + 1, v.size() - 1);
  double frac = rank - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

inline OverheadStats overhead_stats(const std::vector<double>& v) {
  OverheadStats s;
  s.n = static_cast<int>(v.size());
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  s.median = percentile(v, 0.5);
  s.q1 = percentile(v, 0.25);
  s.q3 = percentile(v, 0.75);
  return s;
}

// Test-split sequences as labeled samples, for threshold TPR/FPR.
inline std::vector<LabeledSample> test_samples(const Corpus& corpus) {
  std::vector<LabeledSample> out;
  for (const auto& r : corpus.sequences)
    if (r.split == Split::test) out.push_back({r.seq.tokens, r.seq.label});
  return out;
}

inline std::pair<double, double> bucket_of(
    const std::vector<double>& edges, double frac) {
  double lo = 0.0;
  for (double hi : edges) {
    if (frac <= hi) return {lo, hi};
    lo = hi;
  }
  return {lo, 1.0};
}

inline void check_vocab_match(const Corpus& corpus, const OracleModel& m,
                              const char* role) {
  if (m.vocab_hash() != corpus.vocab_hash)
    throw HarnessError(std::string(role) +
                       " model vocabulary does not match the corpus");
}

}  // namespace detail

// RQ2/RQ3 feature-space experiment: attack every malicious test sequence
// the oracle detects, per overhead limit and per attack method.
inline ExperimentReport run_feature_space(const Corpus& corpus,
                                          const ApiVocabulary& vocab,
                                          const OracleModel& oracle,
                                          const ExperimentSpec& spec) {
  spec.validate();
  detail::check_vocab_match(corpus, oracle, "oracle");
  ExperimentReport report;
  report.kind = ExperimentKind::feature_space;

  struct Target {
    const SequenceRecord* rec;
    const BehaviorProgram* prog;
    double score;
  };
  std::vector<Target> detected;
  for (const auto& rec : corpus.sequences) {
    if (rec.split != Split::test || rec.seq.label != Label::malware) continue;
    double s = oracle.forward_sequence(rec.seq.tokens);
    if (s < oracle.threshold()) continue;
    detected.push_back({&rec, corpus.find_program(rec.program_id), s});
  }
  if (detected.empty())
    throw EmptyDetectedError("oracle detects no malicious test sequence");

  for (double limit : spec.overhead_limits) {
    for (AttackMethod method : spec.attacks) {
      FeatureRow row;
      row.attack = attack_method_name(method);
      row.overhead_limit = limit;
      std::vector<double> success_overheads;
      for (const auto& t : detected) {
        AuditRecord a;
        a.program_id = t.rec->program_id;
        a.attack = attack_method_name(method);
        a.overhead_limit = limit;
        a.original_score = t.score;
        std::vector<ApiId> arsenal =
            t.prog ? arsenal_for(*t.prog, vocab) : std::vector<ApiId>{};
        a.arsenal_size = static_cast<int>(arsenal.size());
        a.arsenal_frac =
            static_cast<double>(arsenal.size()) / vocab.size();
        if (arsenal.empty()) {
          a.skipped = true;
          a.skip_reason = "empty-arsenal";
          a.final_score = t.score;
          ++report.skipped;
          report.audits.push_back(std::move(a));
          continue;
        }
        AttackConfig cfg;
        cfg.cadence = spec.cadence;
        cfg.overhead_limit = limit;
        cfg.arsenal = arsenal;
        cfg.mode = AttackMode::stop_on_evasion;
        cfg.seed = derive_seed(spec.master_seed, t.rec->program_id);
        AttackResult res = run_attack(method, t.rec->seq, cfg, oracle);
        a.final_score = res.score_trace.empty() ? t.score
                                                : res.score_trace.back();
        a.evaded = res.evaded;
        a.overhead = res.overhead;
        a.overhead_fraction = res.overhead_fraction;
        a.evasive_execs = res.evaded ? 1 : 0;
        a.total_execs = 1;
        a.oracle_calls = res.oracle_calls;
        ++row.attacked;
        ++report.attacked;
        if (res.evaded) {
          ++row.evaded;
          success_overheads.push_back(static_cast<double>(res.overhead));
        }
        report.audits.push_back(std::move(a));
      }
      row.evasion_rate = row.attacked
                             ? static_cast<double>(row.evaded) / row.attacked
                             : 0.0;
      row.overhead = detail::overhead_stats(success_overheads);
      report.feature_rows.push_back(std::move(row));
    }
  }

  int evaded = 0, attacked = 0;
  for (const auto& a : report.audits) {
    if (a.skipped) continue;
    ++attacked;
    if (a.evaded) ++evaded;
  }
  report.evasion_rate =
      attacked ? static_cast<double>(evaded) / attacked : 0.0;
  report.preservation_rate = 1.0;  // feature space rewrites traces directly

  auto samples = detail::test_samples(corpus);
  auto sweep = sweep_threshold(oracle, samples, spec.thresholds);
  for (const auto& p : sweep) {
    ThresholdRow tr;
    tr.threshold = p.threshold;
    tr.tpr = p.tpr;
    tr.fpr = p.fpr;
    int ev = 0, n = 0;
    for (const auto& a : report.audits) {
      if (a.skipped) continue;
      ++n;
      if (a.final_score < p.threshold) ++ev;
    }
    tr.effectiveness = n ? static_cast<double>(ev) / n : 0.0;
    report.threshold_rows.push_back(tr);
  }
  return report;
}

// RQ1/RQ4 problem-space experiment: for each detected malicious program,
// b observed runs -> strategy plan -> patch -> b paired post runs (same
// seeds, so preservation is judged on matched executions) -> classify each
// post run against the classification model (the oracle in white-box mode,
// `target` in black-box mode).
inline ExperimentReport run_problem_space(const Corpus& corpus,
                                          const ApiVocabulary& vocab,
                                          const OracleModel& oracle,
                                          const OracleModel* target,
                                          const ExperimentSpec& spec) {
  spec.validate();
  detail::check_vocab_match(corpus, oracle, "oracle");
  bool blackbox = spec.experiment == ExperimentKind::problem_space_blackbox;
  if (blackbox && !target)
    throw HarnessError("black-box experiment requires a target model");
  if (target) detail::check_vocab_match(corpus, *target, "target");
  const OracleModel& classify = blackbox ? *target : oracle;

  ExperimentReport report;
  report.kind = blackbox ? ExperimentKind::problem_space_blackbox
                         : ExperimentKind::problem_space_whitebox;
  report.strategy = strategy_name(spec.strategy);

  std::vector<const BehaviorProgram*> programs;
  for (const auto& rec : corpus.sequences) {
    if (rec.split != Split::test || rec.seq.label != Label::malware) continue;
    if (const BehaviorProgram* p = corpus.find_program(rec.program_id))
      programs.push_back(p);
  }

  int detected_any = 0;
  for (double limit : spec.overhead_limits) {
    for (const BehaviorProgram* prog : programs) {
      AuditRecord a;
      a.program_id = prog->program_id;
      a.attack = attack_method_name(AttackMethod::ps_fgsm);
      a.strategy = strategy_name(spec.strategy);
      a.overhead_limit = limit;
      std::vector<ApiId> arsenal = arsenal_for(*prog, vocab);
      a.arsenal_size = static_cast<int>(arsenal.size());
      a.arsenal_frac = static_cast<double>(arsenal.size()) / vocab.size();

      std::uint64_t sample_seed =
          derive_seed(spec.master_seed, prog->program_id);
      if (arsenal.empty()) {
        a.skipped = true;
        a.skip_reason = "empty-arsenal";
        ++report.skipped;
        report.audits.push_back(std::move(a));
        continue;
      }
      BehaviorSet bs = observe_behaviors(*prog, spec.b, oracle, sample_seed);
      double worst = 0.0;
      for (double s : bs.scores) worst = std::max(worst, s);
      a.original_score = worst;
      if (worst < oracle.threshold()) {
        a.skipped = true;
        a.skip_reason = "not-detected";
        ++report.skipped;
        report.audits.push_back(std::move(a));
        continue;
      }
      ++detected_any;

      AttackConfig cfg;
      cfg.cadence = spec.cadence;
      cfg.overhead_limit = limit;
      cfg.arsenal = arsenal;
      cfg.mode = AttackMode::exhaust_budget;
      cfg.seed = sample_seed;
      DirectivePlan plan = spec.strategy == Strategy::lkb
                               ? lkb_plan(bs, cfg, *prog, oracle)
                               : bco_plan(bs, cfg, *prog, oracle);
      a.planned_overhead = plan.planned_overhead;

      PatchedProgram patched(*prog, plan);
      std::vector<ApiSequence> post;
      std::size_t injected_total = 0;
      a.final_score = 0.0;
      for (int i = 0; i < spec.b; ++i) {
        ApiSequence run = execute(
            patched, derive_seed(sample_seed, "run",
                                 static_cast<std::uint64_t>(i)));
        double s = classify.forward_sequence(run.tokens);
        a.post_scores.push_back(s);
        a.final_score = std::max(a.final_score, s);
        if (s < classify.threshold()) ++a.evasive_execs;
        ++a.total_execs;
        injected_total += detail::injected_count(run);
        post.push_back(std::move(run));
      }
      a.realized_overhead =
          static_cast<double>(injected_total) / spec.b;
      a.overhead = static_cast<int>(injected_total);
      a.evaded = a.evasive_execs == a.total_execs;
      a.preserved = check_preservation(*prog, bs.traces, post).preserved;
      ++report.attacked;
      report.audits.push_back(std::move(a));
    }
  }
  if (detected_any == 0)
    throw EmptyDetectedError("oracle detects no malicious program behavior");

  // aggregates: per limit, per limit x bucket, overall
  for (double limit : spec.overhead_limits) {
    LimitRow lr;
    lr.overhead_limit = limit;
    int preserved = 0;
    double planned = 0.0, realized = 0.0;
    std::map<std::pair<double, double>, BucketRow> buckets;
    for (const auto& a : report.audits) {
      if (a.skipped || a.overhead_limit != limit) continue;
      ++lr.programs;
      lr.evasive_execs += a.evasive_execs;
      lr.total_execs += a.total_execs;
      if (a.preserved) ++preserved;
      planned += a.planned_overhead;
      realized += a.realized_overhead;
      auto [lo, hi] = detail::bucket_of(spec.arsenal_buckets, a.arsenal_frac);
      BucketRow& br = buckets[{lo, hi}];
      br.overhead_limit = limit;
      br.bucket_lo = lo;
      br.bucket_hi = hi;
      ++br.programs;
      br.evasive_execs += a.evasive_execs;
      br.total_execs += a.total_execs;
    }
    if (lr.programs) {
      lr.effectiveness =
          static_cast<double>(lr.evasive_execs) / lr.total_execs;
      lr.preservation_rate = static_cast<double>(preserved) / lr.programs;
      lr.planned_overhead_mean = planned / lr.programs;
      lr.realized_overhead_mean = realized / lr.programs;
    }
    report.limit_rows.push_back(lr);
    for (auto& [key, br] : buckets) {
      br.effectiveness =
          br.total_execs
              ? static_cast<double>(br.evasive_execs) / br.total_execs
              : 0.0;
      report.bucket_rows.push_back(br);
    }
  }

  int evasive = 0, total = 0, preserved = 0, n = 0;
  for (const auto& a : report.audits) {
    if (a.skipped) continue;
    evasive += a.evasive_execs;
    total += a.total_execs;
    if (a.preserved) ++preserved;
    ++n;
  }
  report.attack_effectiveness =
      total ? static_cast<double>(evasive) / total : 0.0;
  report.preservation_rate = n ? static_cast<double>(preserved) / n : 0.0;

  auto samples = detail::test_samples(corpus);
  auto sweep = sweep_threshold(classify, samples, spec.thresholds);
  for (const auto& p : sweep) {
    ThresholdRow tr;
    tr.threshold = p.threshold;
    tr.tpr = p.tpr;
    tr.fpr = p.fpr;
    int ev = 0, nn = 0;
    for (const auto& a : report.audits) {
      if (a.skipped) continue;
      for (double s : a.post_scores) {
        ++nn;
        if (s < p.threshold) ++ev;
      }
    }
    tr.effectiveness = nn ? static_cast<double>(ev) / nn : 0.0;
    report.threshold_rows.push_back(tr);
  }
  return report;
}

// Preservation rate alone, recomputed from a report's audit records.
inline double preservation_rate(const ExperimentReport& report) {
  int preserved = 0, n = 0;
  for (const auto& a : report.audits) {
    if (a.skipped) continue;
    ++n;
    if (a.preserved) ++preserved;
  }
  return n ? static_cast<double>(preserved) / n : 1.0;
}

// ---- report files ---------------------------------------------------------

namespace detail {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline std::string join_scores(const std::vector<double>& v) {
  if (v.empty()) return "-";
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ';';
    out += fmt_double(v[i]);
  }
  return out;
}

inline std::vector<double> split_scores(const std::string& s) {
  std::vector<double> out;
  if (s == "-") return out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t next = s.find(';', pos);
    if (next == std::string::npos) next = s.size();
    out.push_back(std::stod(s.substr(pos, next - pos)));
    pos = next + 1;
  }
  return out;
}

inline const char* kAuditHeader =
    "program_id,attack,strategy,overhead_limit,arsenal_size,arsenal_frac,"
    "original_score,final_score,evaded,overhead,overhead_fraction,"
    "planned_overhead,realized_overhead,evasive_execs,total_execs,preserved,"
    "oracle_calls,skipped,skip_reason,post_scores";

}  // namespace detail

// One CSV row per audit record, stable order and formatting; re-emission
// of the same report is byte-identical.
inline void emit_audit_csv(const ExperimentReport& report,
                           const std::string& path) {
  auto out = detail::open_out(path);
  out << detail::kAuditHeader << "\n";
  for (const auto& a : report.audits) {
    out << a.program_id << ',' << a.attack << ',' << a.strategy << ','
        << detail::fmt_double(a.overhead_limit) << ',' << a.arsenal_size
        << ',' << detail::fmt_double(a.arsenal_frac) << ','
        << detail::fmt_double(a.original_score) << ','
        << detail::fmt_double(a.final_score) << ',' << (a.evaded ? 1 : 0)
        << ',' << a.overhead << ','
        << detail::fmt_double(a.overhead_fraction) << ','
        << a.planned_overhead << ','
        << detail::fmt_double(a.realized_overhead) << ',' << a.evasive_execs
        << ',' << a.total_execs << ',' << (a.preserved ? 1 : 0) << ','
        << a.oracle_calls << ',' << (a.skipped ? 1 : 0) << ','
        << a.skip_reason << ',' << detail::join_scores(a.post_scores)
        << "\n";
  }
}

inline std::vector<AuditRecord> load_audit_csv(const std::string& path) {
  auto in = detail::open_in(path);
  std::string line;
  if (!std::getline(in, line) || line != detail::kAuditHeader)
    throw ParseError(path + ": bad audit header");
  std::vector<AuditRecord> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      std::size_t next = line.find(',', pos);
      if (next == std::string::npos) next = line.size();
      f.push_back(line.substr(pos, next - pos));
      pos = next + 1;
    }
    if (f.size() != 20)
      throw ParseError(path + ":" + std::to_string(lineno) +
                       ": expected 20 fields, got " +
                       std::to_string(f.size()));
    AuditRecord a;
    a.program_id = f[0];
    a.attack = f[1];
    a.strategy = f[2];
    a.overhead_limit = std::stod(f[3]);
    a.arsenal_size = std::stoi(f[4]);
    a.arsenal_frac = std::stod(f[5]);
    a.original_score = std::stod(f[6]);
    a.final_score = std::stod(f[7]);
    a.evaded = f[8] == "1";
    a.overhead = std::stoi(f[9]);
    a.overhead_fraction = std::stod(f[10]);
    a.planned_overhead = std::stoi(f[11]);
    a.realized_overhead = std::stod(f[12]);
    a.evasive_execs = std::stoi(f[13]);
    a.total_execs = std::stoi(f[14]);
    a.preserved = f[15] == "1";
    a.oracle_calls = std::stoull(f[16]);
    a.skipped = f[17] == "1";
    a.skip_reason = f[18];
    a.post_scores = detail::split_scores(f[19]);
    out.push_back(std::move(a));
  }
  return out;
}

// Human-readable aggregate summary with a stable layout.
inline void emit_summary(const ExperimentReport& report,
                         const std::string& path) {
  auto out = detail::open_out(path);
  auto d = [](double v) { return detail::fmt_double(v); };
  out << "experiment: " << experiment_name(report.kind) << "\n";
  out << "strategy: " << report.strategy << "\n";
  out << "attacked: " << report.attacked << "\n";
  out << "skipped: " << report.skipped << "\n";
  if (report.kind == ExperimentKind::feature_space) {
    out << "evasion_rate: " << d(report.evasion_rate) << "\n";
    out << "\n[feature-space] attack, overhead_limit, attacked, evaded, "
           "evasion_rate, overhead mean/median/q1/q3\n";
    for (const auto& r : report.feature_rows)
      out << r.attack << ", " << d(r.overhead_limit) << ", " << r.attacked
          << ", " << r.evaded << ", " << d(r.evasion_rate) << ", "
          << d(r.overhead.mean) << "/" << d(r.overhead.median) << "/"
          << d(r.overhead.q1) << "/" << d(r.overhead.q3) << "\n";
  } else {
    out << "attack_effectiveness: " << d(report.attack_effectiveness)
        << "\n";
    out << "preservation_rate: " << d(report.preservation_rate) << "\n";
    out << "\n[limits] overhead_limit, programs, evasive/total, "
           "effectiveness, preservation, planned_mean, realized_mean\n";
    for (const auto& r : report.limit_rows)
      out << d(r.overhead_limit) << ", " << r.programs << ", "
          << r.evasive_execs << "/" << r.total_execs << ", "
          << d(r.effectiveness) << ", " << d(r.preservation_rate) << ", "
          << d(r.planned_overhead_mean) << ", "
          << d(r.realized_overhead_mean) << "\n";
    out << "\n[buckets] overhead_limit, arsenal bucket, programs, "
           "evasive/total, effectiveness\n";
    for (const auto& r : report.bucket_rows)
      out << d(r.overhead_limit) << ", (" << d(r.bucket_lo) << ", "
          << d(r.bucket_hi) << "], " << r.programs << ", "
          << r.evasive_execs << "/" << r.total_execs << ", "
          << d(r.effectiveness) << "\n";
  }
  out << "\n[thresholds] threshold, tpr, fpr, effectiveness\n";
  for (const auto& r : report.threshold_rows)
    out << d(r.threshold) << ", " << d(r.tpr) << ", " << d(r.fpr) << ", "
        << d(r.effectiveness) << "\n";
}

inline void emit_report(const ExperimentReport& report,
                        const std::string& csv_path,
                        const std::string& summary_path) {
  emit_audit_csv(report, csv_path);
  emit_summary(report, summary_path);
}

// File-based entry point used by the CLI: loads all referenced artifacts,
// checks vocabulary hashes, and dispatches on the experiment kind. White-box
// runs never open the target model file.
inline ExperimentReport run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  ApiVocabulary vocab = load_vocabulary(spec.vocab_path);
  Corpus corpus = load_corpus(spec.corpus_path, spec.programs_path);
  if (corpus.vocab_hash != vocab.hash())
    throw HarnessError("corpus vocabulary does not match the vocabulary file");
  OracleModel oracle = load_model(spec.oracle_path);
  switch (spec.experiment) {
    case ExperimentKind::feature_space:
      return run_feature_space(corpus, vocab, oracle, spec);
    case ExperimentKind::problem_space_whitebox:
      return run_problem_space(corpus, vocab, oracle, nullptr, spec);
    case ExperimentKind::problem_space_blackbox: {
      if (spec.target_path.empty())
        throw HarnessError("black-box experiment requires target model path");
      OracleModel target = load_model(spec.target_path);
      return run_problem_space(corpus, vocab, oracle, &target, spec);
    }
  }
  throw HarnessError("unknown experiment kind");
}

}  // namespace seqevade
