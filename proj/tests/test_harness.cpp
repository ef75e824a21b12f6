#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "seqevade/harness.hpp"
#include "test_util.hpp"

using namespace seqevade;
namespace tu = seqevade::testutil;

namespace {

// One trained small-scale setup shared by all harness tests.
struct Fixture {
  ApiVocabulary vocab;
  Corpus corpus;
  OracleModel oracle;
  OracleModel target;

  Fixture()
      : vocab(build_vocabulary(150, 42)),
        oracle(Encoding::plain, vocab, 64, 16, 24, 7),
        target(Encoding::triple, vocab, 64, 18, 24, 8) {
    CorpusConfig cfg;
    cfg.n_benign = 200;
    cfg.n_malicious = 200;
    cfg.seed = 42;
    cfg.vocab_size = 150;
    cfg.max_len = 80;
    corpus = generate_corpus(cfg, vocab);

    std::vector<LabeledSample> train_set, val_set;
    for (const auto& r : corpus.sequences) {
      LabeledSample s{r.seq.tokens, r.seq.label};
      if (r.split == Split::train) train_set.push_back(s);
      else if (r.split == Split::validation) val_set.push_back(s);
    }
    Hyperparams hp;
    hp.epochs = 20;
    hp.seed = 7;
    train(oracle, train_set, val_set, hp);
    hp.seed = 8;
    train(target, train_set, val_set, hp);
  }
};

const Fixture& fixture() {
  static Fixture f;
  return f;
}

ExperimentSpec base_spec() {
  ExperimentSpec spec;
  spec.overhead_limits = {0.20};
  spec.thresholds = {0.3, 0.5, 0.7};
  spec.master_seed = 11;
  return spec;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("feature-space report: audits, recomputability, determinism") {
  const Fixture& f = fixture();
  ExperimentSpec spec = base_spec();
  spec.experiment = ExperimentKind::feature_space;
  spec.overhead_limits = {0.0, 0.20};

  ExperimentReport rep = run_feature_space(f.corpus, f.vocab, f.oracle, spec);

  // shape: one audit per detected sample x limit x attack
  int detected = 0;
  for (const auto& rec : f.corpus.sequences)
    if (rec.split == Split::test && rec.seq.label == Label::malware &&
        f.oracle.forward_sequence(rec.seq.tokens) >= f.oracle.threshold())
      ++detected;
  REQUIRE(detected > 0);
  REQUIRE(rep.audits.size() ==
          static_cast<std::size_t>(detected) * spec.overhead_limits.size() *
              spec.attacks.size());
  REQUIRE(rep.feature_rows.size() ==
          spec.overhead_limits.size() * spec.attacks.size());

  // every feature row equals an independent fold over the audits
  for (const auto& row : rep.feature_rows) {
    int attacked = 0, evaded = 0;
    std::vector<double> overheads;
    for (const auto& a : rep.audits) {
      if (a.skipped || a.attack != row.attack ||
          a.overhead_limit != row.overhead_limit)
        continue;
      ++attacked;
      if (a.evaded) {
        ++evaded;
        overheads.push_back(static_cast<double>(a.overhead));
      }
    }
    REQUIRE(attacked == row.attacked);
    REQUIRE(evaded == row.evaded);
    if (attacked)
      REQUIRE(row.evasion_rate ==
              static_cast<double>(evaded) / attacked);
    REQUIRE(row.overhead.n == static_cast<int>(overheads.size()));
  }

  // budget 0 rows have evasion rate 0; audits respect the budget
  for (const auto& row : rep.feature_rows)
    if (row.overhead_limit == 0.0) REQUIRE(row.evasion_rate == 0.0);
  for (const auto& a : rep.audits) {
    if (a.skipped) continue;
    const SequenceRecord* rec = nullptr;
    for (const auto& r : f.corpus.sequences)
      if (r.program_id == a.program_id) rec = &r;
    REQUIRE(rec != nullptr);
    REQUIRE(a.overhead <= static_cast<int>(a.overhead_limit *
                                           rec->seq.tokens.size()));
  }

  // threshold rows are a fold over final scores
  REQUIRE(rep.threshold_rows.size() == spec.thresholds.size());
  for (const auto& tr : rep.threshold_rows) {
    int ev = 0, n = 0;
    for (const auto& a : rep.audits) {
      if (a.skipped) continue;
      ++n;
      if (a.final_score < tr.threshold) ++ev;
    }
    REQUIRE(tr.effectiveness == static_cast<double>(ev) / n);
  }

  // determinism under the master seed
  ExperimentReport rep2 = run_feature_space(f.corpus, f.vocab, f.oracle, spec);
  REQUIRE(rep2.audits.size() == rep.audits.size());
  for (std::size_t i = 0; i < rep.audits.size(); ++i) {
    REQUIRE(rep2.audits[i].program_id == rep.audits[i].program_id);
    REQUIRE(rep2.audits[i].final_score == rep.audits[i].final_score);
    REQUIRE(rep2.audits[i].overhead == rep.audits[i].overhead);
  }
  REQUIRE(rep2.evasion_rate == rep.evasion_rate);

  // nothing detected -> dedicated error
  OracleModel strict = f.oracle;
  strict.set_threshold(1.1);
  REQUIRE_THROWS_AS(run_feature_space(f.corpus, f.vocab, strict, spec),
                    EmptyDetectedError);
}

TEST_CASE("problem-space white-box report: aggregates fold over audits") {
  const Fixture& f = fixture();
  ExperimentSpec spec = base_spec();
  spec.experiment = ExperimentKind::problem_space_whitebox;
  spec.strategy = Strategy::lkb;
  spec.b = 3;

  ExperimentReport rep =
      run_problem_space(f.corpus, f.vocab, f.oracle, nullptr, spec);
  REQUIRE(rep.attacked > 0);
  REQUIRE(rep.strategy == std::string("lkb"));

  int evasive = 0, total = 0, preserved = 0, n = 0;
  for (const auto& a : rep.audits) {
    if (a.skipped) {
      REQUIRE((a.skip_reason == "empty-arsenal" ||
               a.skip_reason == "not-detected"));
      continue;
    }
    REQUIRE(a.total_execs == spec.b);
    REQUIRE(a.post_scores.size() == static_cast<std::size_t>(spec.b));
    evasive += a.evasive_execs;
    total += a.total_execs;
    if (a.preserved) ++preserved;
    ++n;
  }
  REQUIRE(rep.attack_effectiveness == static_cast<double>(evasive) / total);
  REQUIRE(rep.preservation_rate == static_cast<double>(preserved) / n);
  REQUIRE(preservation_rate(rep) == rep.preservation_rate);
  // paired pre/post executions on this VM always preserve functionality
  REQUIRE(rep.preservation_rate == 1.0);

  // limit rows and bucket rows fold back to the audits
  REQUIRE(rep.limit_rows.size() == spec.overhead_limits.size());
  for (const auto& lr : rep.limit_rows) {
    int le = 0, lt = 0, lp = 0;
    for (const auto& a : rep.audits) {
      if (a.skipped || a.overhead_limit != lr.overhead_limit) continue;
      le += a.evasive_execs;
      lt += a.total_execs;
      ++lp;
    }
    REQUIRE(lp == lr.programs);
    REQUIRE(le == lr.evasive_execs);
    REQUIRE(lt == lr.total_execs);
  }
  int bucket_programs = 0;
  for (const auto& br : rep.bucket_rows) {
    REQUIRE(br.bucket_lo < br.bucket_hi);
    bucket_programs += br.programs;
    int be = 0;
    for (const auto& a : rep.audits) {
      if (a.skipped || a.overhead_limit != br.overhead_limit) continue;
      if (a.arsenal_frac > br.bucket_lo && a.arsenal_frac <= br.bucket_hi)
        be += a.evasive_execs;
    }
    REQUIRE(be == br.evasive_execs);
  }
  REQUIRE(bucket_programs == n);

  // threshold effectiveness folds over per-run scores
  for (const auto& tr : rep.threshold_rows) {
    int ev = 0, nn = 0;
    for (const auto& a : rep.audits) {
      if (a.skipped) continue;
      for (double s : a.post_scores) {
        ++nn;
        if (s < tr.threshold) ++ev;
      }
    }
    REQUIRE(tr.effectiveness == static_cast<double>(ev) / nn);
  }

  // determinism
  ExperimentReport rep2 =
      run_problem_space(f.corpus, f.vocab, f.oracle, nullptr, spec);
  REQUIRE(rep2.attack_effectiveness == rep.attack_effectiveness);
  REQUIRE(rep2.audits.size() == rep.audits.size());
  for (std::size_t i = 0; i < rep.audits.size(); ++i)
    REQUIRE(rep2.audits[i].post_scores == rep.audits[i].post_scores);
}

TEST_CASE("zero nondeterminism closes the loop with the feature space") {
  // With deterministic programs, the white-box problem-space effectiveness
  // equals the feature-space evasion rate on the same samples.
  const Fixture& f = fixture();
  ExperimentSpec spec = base_spec();
  spec.attacks = {AttackMethod::ps_fgsm};

  spec.experiment = ExperimentKind::feature_space;
  ExperimentReport fs = run_feature_space(f.corpus, f.vocab, f.oracle, spec);

  spec.experiment = ExperimentKind::problem_space_whitebox;
  spec.strategy = Strategy::lkb;
  ExperimentReport ps =
      run_problem_space(f.corpus, f.vocab, f.oracle, nullptr, spec);

  REQUIRE(fs.evasion_rate == ps.attack_effectiveness);
}

TEST_CASE("black-box mode classifies against the target model") {
  const Fixture& f = fixture();
  ExperimentSpec spec = base_spec();
  spec.experiment = ExperimentKind::problem_space_blackbox;
  spec.strategy = Strategy::lkb;
  spec.b = 2;

  REQUIRE_THROWS_AS(
      run_problem_space(f.corpus, f.vocab, f.oracle, nullptr, spec),
      HarnessError);

  ExperimentReport rep =
      run_problem_space(f.corpus, f.vocab, f.oracle, &f.target, spec);
  REQUIRE(rep.kind == ExperimentKind::problem_space_blackbox);
  // post-run scores come from the target, not the oracle: recompute one
  bool checked = false;
  for (const auto& a : rep.audits) {
    if (a.skipped) continue;
    const BehaviorProgram* prog = f.corpus.find_program(a.program_id);
    REQUIRE(prog != nullptr);
    std::uint64_t sample_seed = derive_seed(spec.master_seed, a.program_id);
    BehaviorSet bs = observe_behaviors(*prog, spec.b, f.oracle, sample_seed);
    AttackConfig cfg;
    cfg.cadence = spec.cadence;
    cfg.overhead_limit = a.overhead_limit;
    cfg.arsenal = arsenal_for(*prog, f.vocab);
    cfg.mode = AttackMode::exhaust_budget;
    cfg.seed = sample_seed;
    DirectivePlan plan = lkb_plan(bs, cfg, *prog, f.oracle);
    PatchedProgram patched(*prog, plan);
    ApiSequence run = execute(patched, derive_seed(sample_seed, "run", 0));
    REQUIRE(a.post_scores[0] == f.target.forward_sequence(run.tokens));
    checked = true;
    break;
  }
  REQUIRE(checked);
}

TEST_CASE("report emission is byte-stable and round-trips") {
  const Fixture& f = fixture();
  ExperimentSpec spec = base_spec();
  spec.experiment = ExperimentKind::problem_space_whitebox;
  spec.strategy = Strategy::bco;
  spec.b = 2;
  ExperimentReport rep =
      run_problem_space(f.corpus, f.vocab, f.oracle, nullptr, spec);

  auto csv = tu::temp_path("audits.csv");
  auto txt = tu::temp_path("summary.txt");
  emit_report(rep, csv, txt);
  std::string csv1 = slurp(csv), txt1 = slurp(txt);
  emit_report(rep, csv, txt);
  REQUIRE(slurp(csv) == csv1);
  REQUIRE(slurp(txt) == txt1);
  REQUIRE_FALSE(csv1.empty());
  REQUIRE_FALSE(txt1.empty());

  // CSV row count = audit count; parsed rows match the report
  auto rows = load_audit_csv(csv);
  REQUIRE(rows.size() == rep.audits.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    REQUIRE(rows[i].program_id == rep.audits[i].program_id);
    REQUIRE(rows[i].evasive_execs == rep.audits[i].evasive_execs);
    REQUIRE(rows[i].total_execs == rep.audits[i].total_execs);
    REQUIRE(rows[i].preserved == rep.audits[i].preserved);
    REQUIRE(rows[i].skipped == rep.audits[i].skipped);
    REQUIRE(rows[i].post_scores.size() == rep.audits[i].post_scores.size());
  }
  // effectiveness is recomputable from the parsed file alone
  int ev = 0, tot = 0;
  for (const auto& a : rows) {
    if (a.skipped) continue;
    ev += a.evasive_execs;
    tot += a.total_execs;
  }
  REQUIRE(rep.attack_effectiveness == static_cast<double>(ev) / tot);
  std::remove(csv.c_str());
  std::remove(txt.c_str());
}

TEST_CASE("spec validation and vocabulary checks") {
  const Fixture& f = fixture();
  ExperimentSpec spec = base_spec();
  spec.b = 0;
  REQUIRE_THROWS_AS(spec.validate(), HarnessError);
  spec = base_spec();
  spec.overhead_limits.clear();
  REQUIRE_THROWS_AS(spec.validate(), HarnessError);
  spec = base_spec();
  spec.arsenal_buckets = {0.5, 0.2};
  REQUIRE_THROWS_AS(spec.validate(), HarnessError);
  spec = base_spec();
  spec.arsenal_buckets = {0.5};
  REQUIRE_THROWS_AS(spec.validate(), HarnessError);

  // model trained against a different vocabulary is rejected
  ApiVocabulary other = build_vocabulary(150, 99);
  OracleModel mismatched(Encoding::plain, other, 8, 6, 4, 1);
  REQUIRE_THROWS_AS(
      run_feature_space(f.corpus, f.vocab, mismatched, base_spec()),
      HarnessError);

  REQUIRE(experiment_from_name("feature-space") ==
          ExperimentKind::feature_space);
  REQUIRE_THROWS_AS(experiment_from_name("bogus"), HarnessError);
  REQUIRE(attack_from_name("ps-fgsm") == AttackMethod::ps_fgsm);
  REQUIRE_THROWS_AS(attack_from_name("bogus"), HarnessError);
  REQUIRE(strategy_from_name("bco") == Strategy::bco);
  REQUIRE_THROWS_AS(strategy_from_name("bogus"), HarnessError);
}
