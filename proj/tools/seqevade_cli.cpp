// Command-line entry point for the full pipeline: corpus generation,
// detector training, attacks, patch planning, program patching, experiment
// runs, threshold sweeps, and report recomputation.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage/config error,
// 3 empty detected set.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "seqevade/harness.hpp"

namespace se = seqevade;

namespace {

se::Encoding encoding_from_name(const std::string& s) {
  if (s == "plain") return se::Encoding::plain;
  if (s == "triple") return se::Encoding::triple;
  throw se::HarnessError("unknown encoding '" + s + "'");
}

const se::BehaviorProgram& require_program(const se::Corpus& corpus,
                                           const std::string& id) {
  if (const se::BehaviorProgram* p = corpus.find_program(id)) return *p;
  throw se::HarnessError("unknown program id '" + id + "'");
}

const se::SequenceRecord& require_sequence(const se::Corpus& corpus,
                                           const std::string& id) {
  for (const auto& r : corpus.sequences)
    if (r.program_id == id) return r;
  throw se::HarnessError("unknown program id '" + id + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "seqevade: adversarial API-call injection against behavioral "
      "sequence detectors"};
  app.require_subcommand(1);

  std::string workdir = ".";
  app.add_option("--workdir", workdir,
                 "Directory all other paths are resolved against "
                 "(created if missing)");
  int jobs = 1;
  app.add_option("--jobs", jobs, "Worker count (only 1 is supported)")
      ->check(CLI::Range(1, 1));
  app.set_config("--config", "",
                 "Key/value config file with one section per subcommand "
                 "(e.g. [gen-corpus]); command-line flags override it");
  app.allow_config_extras(false);

  // ---- gen-corpus ---------------------------------------------------------
  auto* gen = app.add_subcommand(
      "gen-corpus", "Generate the vocabulary, programs, and observed traces");
  se::CorpusConfig ccfg;
  std::string vocab_out = "vocab.jsonl";
  std::string seq_out = "sequences.jsonl";
  std::string prog_out = "programs.jsonl";
  gen->add_option("--seed", ccfg.seed, "Master corpus seed");
  gen->add_option("--n-benign", ccfg.n_benign, "Benign program count");
  gen->add_option("--n-malicious", ccfg.n_malicious,
                  "Malicious program count");
  gen->add_option("--min-len", ccfg.min_len, "Minimum trace length");
  gen->add_option("--max-len", ccfg.max_len, "Maximum trace length");
  gen->add_option("--nondet-level", ccfg.nondet_level,
                  "Program nondeterminism in [0,1]");
  gen->add_option("--vocab-size", ccfg.vocab_size, "API vocabulary size");
  gen->add_option("--vocab-out", vocab_out, "Vocabulary output file");
  gen->add_option("--sequences-out", seq_out, "Trace output file");
  gen->add_option("--programs-out", prog_out, "Program output file");

  // ---- train --------------------------------------------------------------
  auto* tr = app.add_subcommand("train",
                                "Train a detector on the corpus train split");
  std::string tr_vocab = "vocab.jsonl", tr_seq = "sequences.jsonl";
  std::string tr_prog = "programs.jsonl", tr_out = "model.bin";
  std::string tr_encoding = "plain";
  int tr_window = 64, tr_embed = 16, tr_hidden = 32;
  double tr_threshold = 0.5;
  std::uint64_t tr_model_seed = 7;
  se::Hyperparams hp;
  tr->add_option("--vocab", tr_vocab, "Vocabulary file");
  tr->add_option("--sequences", tr_seq, "Trace file");
  tr->add_option("--programs", tr_prog, "Program file");
  tr->add_option("--encoding", tr_encoding, "plain or triple");
  tr->add_option("--window", tr_window, "Window size n");
  tr->add_option("--embed-dim", tr_embed, "Embedding dimension d");
  tr->add_option("--hidden-dim", tr_hidden, "Recurrent state size h");
  tr->add_option("--epochs", hp.epochs, "Training epochs");
  tr->add_option("--lr", hp.lr, "Learning rate");
  tr->add_option("--batch", hp.batch, "Batch size");
  tr->add_option("--momentum", hp.momentum, "SGD momentum");
  tr->add_option("--seed", hp.seed, "Training shuffle seed");
  tr->add_option("--model-seed", tr_model_seed, "Parameter init seed");
  tr->add_option("--threshold", tr_threshold, "Detection threshold");
  tr->add_option("--model-out", tr_out, "Model output file");

  // ---- attack -------------------------------------------------------------
  auto* at = app.add_subcommand(
      "attack", "Feature-space attack on one observed trace");
  std::string at_vocab = "vocab.jsonl", at_seq = "sequences.jsonl";
  std::string at_prog = "programs.jsonl", at_model = "model.bin";
  std::string at_id, at_method = "ps-fgsm", at_mode = "stop";
  double at_limit = 0.20;
  int at_cadence = 4;
  std::uint64_t at_seed = 0;
  at->add_option("--vocab", at_vocab, "Vocabulary file");
  at->add_option("--sequences", at_seq, "Trace file");
  at->add_option("--programs", at_prog, "Program file");
  at->add_option("--model", at_model, "Detector model file");
  at->add_option("--program-id", at_id, "Program to attack")->required();
  at->add_option("--method", at_method,
                 "ps-fgsm, random, or gradient-random-pos");
  at->add_option("--mode", at_mode, "stop (on evasion) or exhaust (budget)");
  at->add_option("--overhead-limit", at_limit, "Injection budget fraction");
  at->add_option("--cadence", at_cadence, "Greatest-absolute rule cadence");
  at->add_option("--seed", at_seed, "Seed for the random baselines");

  // ---- plan ---------------------------------------------------------------
  auto* pl = app.add_subcommand(
      "plan", "Build an LKB/BCO injection plan for one program");
  std::string pl_vocab = "vocab.jsonl", pl_seq = "sequences.jsonl";
  std::string pl_prog = "programs.jsonl";
  std::string pl_model = "model.bin", pl_id, pl_strategy = "lkb";
  std::string pl_out = "patch.json";
  int pl_b = 5, pl_cadence = 4;
  double pl_limit = 0.20;
  std::uint64_t pl_seed = 0;
  pl->add_option("--vocab", pl_vocab, "Vocabulary file");
  pl->add_option("--sequences", pl_seq, "Trace file");
  pl->add_option("--programs", pl_prog, "Program file");
  pl->add_option("--model", pl_model, "Planning oracle model file");
  pl->add_option("--program-id", pl_id, "Program to plan for")->required();
  pl->add_option("--strategy", pl_strategy, "lkb or bco");
  pl->add_option("--b", pl_b, "Observed executions per program");
  pl->add_option("--overhead-limit", pl_limit, "Injection budget fraction");
  pl->add_option("--cadence", pl_cadence, "Greatest-absolute rule cadence");
  pl->add_option("--seed", pl_seed, "Observation/attack seed");
  pl->add_option("--plan-out", pl_out, "Patch output file");

  // ---- patch --------------------------------------------------------------
  auto* pa = app.add_subcommand(
      "patch", "Apply a patch file and dump post-patch traces");
  std::string pa_seq = "sequences.jsonl", pa_prog = "programs.jsonl";
  std::string pa_plan = "patch.json";
  std::string pa_out = "traces.jsonl";
  int pa_runs = 5;
  std::uint64_t pa_seed = 0;
  pa->add_option("--sequences", pa_seq, "Trace file");
  pa->add_option("--programs", pa_prog, "Program file");
  pa->add_option("--plan", pa_plan, "Patch file");
  pa->add_option("--runs", pa_runs, "Number of post-patch executions");
  pa->add_option("--seed", pa_seed, "Execution seed base");
  pa->add_option("--traces-out", pa_out, "Trace dump output file");

  // ---- run ----------------------------------------------------------------
  auto* ru = app.add_subcommand("run", "Run a full experiment");
  std::string ru_experiment = "feature-space";
  std::string ru_vocab = "vocab.jsonl", ru_seq = "sequences.jsonl";
  std::string ru_prog = "programs.jsonl", ru_oracle = "model.bin";
  std::string ru_target, ru_strategy = "lkb";
  std::string ru_csv = "audits.csv", ru_summary = "summary.txt";
  std::vector<std::string> ru_attacks{"ps-fgsm", "random",
                                      "gradient-random-pos"};
  std::vector<double> ru_limits{0.20};
  std::vector<double> ru_buckets{0.02, 0.06, 0.12, 1.0};
  std::vector<double> ru_thresholds{0.3, 0.5, 0.7};
  int ru_b = 5, ru_cadence = 4;
  std::uint64_t ru_seed = 0;
  ru->add_option("--experiment", ru_experiment,
                 "feature-space, problem-space-whitebox, or "
                 "problem-space-blackbox");
  ru->add_option("--vocab", ru_vocab, "Vocabulary file");
  ru->add_option("--sequences", ru_seq, "Trace file");
  ru->add_option("--programs", ru_prog, "Program file");
  ru->add_option("--oracle", ru_oracle, "Oracle model file");
  ru->add_option("--target", ru_target,
                 "Black-box classification model file");
  ru->add_option("--attacks", ru_attacks, "Attack methods (feature space)");
  ru->add_option("--strategy", ru_strategy, "lkb or bco (problem space)");
  ru->add_option("--b", ru_b, "Executions per program, pre and post");
  ru->add_option("--overhead-limits", ru_limits, "Budget fractions");
  ru->add_option("--arsenal-buckets", ru_buckets,
                 "Ascending arsenal-size bucket edges (vocab fractions)");
  ru->add_option("--thresholds", ru_thresholds, "Report thresholds");
  ru->add_option("--cadence", ru_cadence, "Greatest-absolute rule cadence");
  ru->add_option("--seed", ru_seed, "Master experiment seed");
  ru->add_option("--csv-out", ru_csv, "Audit CSV output file");
  ru->add_option("--summary-out", ru_summary, "Summary output file");

  // ---- sweep --------------------------------------------------------------
  auto* sw = app.add_subcommand(
      "sweep", "Threshold sweep of a model over the corpus test split");
  std::string sw_vocab = "vocab.jsonl", sw_seq = "sequences.jsonl";
  std::string sw_prog = "programs.jsonl", sw_model = "model.bin";
  std::string sw_out = "sweep.csv";
  std::vector<double> sw_thresholds{0.1, 0.2, 0.3, 0.4, 0.5,
                                    0.6, 0.7, 0.8, 0.9};
  sw->add_option("--vocab", sw_vocab, "Vocabulary file");
  sw->add_option("--sequences", sw_seq, "Trace file");
  sw->add_option("--programs", sw_prog, "Program file");
  sw->add_option("--model", sw_model, "Model file");
  sw->add_option("--thresholds", sw_thresholds, "Thresholds to evaluate");
  sw->add_option("--out", sw_out, "Sweep CSV output file");

  // ---- report -------------------------------------------------------------
  auto* re = app.add_subcommand(
      "report", "Recompute aggregates from an audit CSV");
  std::string re_audits = "audits.csv";
  re->add_option("--audits", re_audits, "Audit CSV file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    std::filesystem::create_directories(workdir);
    std::filesystem::current_path(workdir);

    if (gen->parsed()) {
      se::ApiVocabulary vocab =
          se::build_vocabulary(ccfg.vocab_size, ccfg.seed);
      se::Corpus corpus = se::generate_corpus(ccfg, vocab);
      se::save_vocabulary(vocab, vocab_out);
      se::save_corpus(corpus, seq_out, prog_out);
      std::cout << "gen-corpus ok sequences=" << corpus.sequences.size()
                << " programs=" << corpus.programs.size() << "\n";
    } else if (tr->parsed()) {
      se::ApiVocabulary vocab = se::load_vocabulary(tr_vocab);
      se::Corpus corpus = se::load_corpus(tr_seq, tr_prog);
      if (corpus.vocab_hash != vocab.hash())
        throw se::HarnessError("corpus does not match the vocabulary file");
      std::vector<se::LabeledSample> train_set, val_set;
      for (const auto& r : corpus.sequences) {
        se::LabeledSample s{r.seq.tokens, r.seq.label};
        if (r.split == se::Split::train) train_set.push_back(std::move(s));
        else if (r.split == se::Split::validation)
          val_set.push_back(std::move(s));
      }
      se::OracleModel model(encoding_from_name(tr_encoding), vocab,
                            tr_window, tr_embed, tr_hidden, tr_model_seed);
      model.set_threshold(tr_threshold);
      auto history = se::train(model, train_set, val_set, hp);
      se::save_model(model, tr_out);
      std::cout << "train ok encoding=" << tr_encoding
                << " epochs=" << hp.epochs << " val_accuracy="
                << se::detail::fmt_double(history.back().accuracy)
                << " model=" << tr_out << "\n";
    } else if (at->parsed()) {
      se::ApiVocabulary vocab = se::load_vocabulary(at_vocab);
      se::Corpus corpus = se::load_corpus(at_seq, at_prog);
      se::OracleModel model = se::load_model(at_model);
      const se::SequenceRecord& rec = require_sequence(corpus, at_id);
      const se::BehaviorProgram& prog = require_program(corpus, at_id);
      se::AttackConfig cfg;
      cfg.cadence = at_cadence;
      cfg.overhead_limit = at_limit;
      cfg.arsenal = se::arsenal_for(prog, vocab);
      cfg.mode = at_mode == "exhaust" ? se::AttackMode::exhaust_budget
                                      : se::AttackMode::stop_on_evasion;
      cfg.seed = at_seed;
      se::AttackResult res = se::run_attack(se::attack_from_name(at_method),
                                            rec.seq, cfg, model);
      double final_score =
          res.score_trace.empty()
              ? model.forward_sequence(rec.seq.tokens)
              : res.score_trace.back();
      std::cout << "attack ok program=" << at_id << " method=" << at_method
                << " evaded=" << (res.evaded ? 1 : 0)
                << " overhead=" << res.overhead << " score="
                << se::detail::fmt_double(final_score)
                << " oracle_calls=" << res.oracle_calls << "\n";
    } else if (pl->parsed()) {
      se::ApiVocabulary vocab = se::load_vocabulary(pl_vocab);
      se::Corpus corpus = se::load_corpus(pl_seq, pl_prog);
      const se::BehaviorProgram& prog = require_program(corpus, pl_id);
      se::OracleModel model = se::load_model(pl_model);
      se::BehaviorSet bs = se::observe_behaviors(
          prog, pl_b, model, se::derive_seed(pl_seed, pl_id));
      se::AttackConfig cfg;
      cfg.cadence = pl_cadence;
      cfg.overhead_limit = pl_limit;
      cfg.arsenal = se::arsenal_for(prog, vocab);
      cfg.mode = se::AttackMode::exhaust_budget;
      cfg.seed = se::derive_seed(pl_seed, pl_id);
      se::DirectivePlan plan =
          se::strategy_from_name(pl_strategy) == se::Strategy::lkb
              ? se::lkb_plan(bs, cfg, prog, model)
              : se::bco_plan(bs, cfg, prog, model);
      se::save_plan(plan, pl_out);
      std::cout << "plan ok program=" << pl_id << " strategy=" << pl_strategy
                << " planned_overhead=" << plan.planned_overhead
                << " fully_benign=" << (plan.fully_benign ? 1 : 0)
                << " plan_file=" << pl_out << "\n";
    } else if (pa->parsed()) {
      se::Corpus corpus = se::load_corpus(pa_seq, pa_prog);
      se::DirectivePlan plan = se::load_plan(pa_plan);
      const se::BehaviorProgram& prog =
          require_program(corpus, plan.program_id);
      se::PatchedProgram patched(prog, plan);
      auto out = se::detail::open_out(pa_out);
      se::json header{{"type", "traces"},
                      {"program_id", plan.program_id},
                      {"runs", pa_runs}};
      out << header.dump() << "\n";
      for (int i = 0; i < pa_runs; ++i) {
        se::ApiSequence t = se::execute(
            patched, se::derive_seed(pa_seed, "run",
                                     static_cast<std::uint64_t>(i)));
        out << se::detail::sequence_to_json(t).dump() << "\n";
      }
      std::cout << "patch ok program=" << plan.program_id
                << " runs=" << pa_runs << " traces_file=" << pa_out << "\n";
    } else if (ru->parsed()) {
      se::ExperimentSpec spec;
      spec.experiment = se::experiment_from_name(ru_experiment);
      spec.vocab_path = ru_vocab;
      spec.corpus_path = ru_seq;
      spec.programs_path = ru_prog;
      spec.oracle_path = ru_oracle;
      spec.target_path = ru_target;
      spec.attacks.clear();
      for (const auto& a : ru_attacks)
        spec.attacks.push_back(se::attack_from_name(a));
      spec.strategy = se::strategy_from_name(ru_strategy);
      spec.b = ru_b;
      spec.overhead_limits = ru_limits;
      spec.arsenal_buckets = ru_buckets;
      spec.thresholds = ru_thresholds;
      spec.cadence = ru_cadence;
      spec.master_seed = ru_seed;
      se::ExperimentReport report = se::run_experiment(spec);
      se::emit_report(report, ru_csv, ru_summary);
      std::cout << "run ok experiment=" << ru_experiment
                << " attacked=" << report.attacked
                << " skipped=" << report.skipped;
      if (spec.experiment == se::ExperimentKind::feature_space)
        std::cout << " evasion_rate="
                  << se::detail::fmt_double(report.evasion_rate);
      else
        std::cout << " effectiveness="
                  << se::detail::fmt_double(report.attack_effectiveness)
                  << " preservation="
                  << se::detail::fmt_double(report.preservation_rate);
      std::cout << " csv=" << ru_csv << " summary=" << ru_summary << "\n";
    } else if (sw->parsed()) {
      se::ApiVocabulary vocab = se::load_vocabulary(sw_vocab);
      se::Corpus corpus = se::load_corpus(sw_seq, sw_prog);
      se::OracleModel model = se::load_model(sw_model);
      if (model.vocab_hash() != vocab.hash())
        throw se::HarnessError("model does not match the vocabulary file");
      auto samples = se::detail::test_samples(corpus);
      auto points = se::sweep_threshold(model, samples, sw_thresholds);
      auto out = se::detail::open_out(sw_out);
      out << "threshold,tpr,fpr\n";
      for (const auto& p : points)
        out << se::detail::fmt_double(p.threshold) << ','
            << se::detail::fmt_double(p.tpr) << ','
            << se::detail::fmt_double(p.fpr) << "\n";
      std::cout << "sweep ok points=" << points.size() << " csv=" << sw_out
                << "\n";
    } else if (re->parsed()) {
      auto audits = se::load_audit_csv(re_audits);
      int evasive = 0, total = 0, preserved = 0, n = 0, skipped = 0;
      for (const auto& a : audits) {
        if (a.skipped) {
          ++skipped;
          continue;
        }
        evasive += a.evasive_execs;
        total += a.total_execs;
        if (a.preserved) ++preserved;
        ++n;
      }
      std::cout << "report ok audits=" << audits.size()
                << " attacked=" << n << " skipped=" << skipped
                << " effectiveness="
                << se::detail::fmt_double(
                       total ? static_cast<double>(evasive) / total : 0.0)
                << " preservation="
                << se::detail::fmt_double(
                       n ? static_cast<double>(preserved) / n : 1.0)
                << "\n";
    }
    return 0;
  } catch (const se::EmptyDetectedError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const se::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const se::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const se::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const se::HarnessError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
