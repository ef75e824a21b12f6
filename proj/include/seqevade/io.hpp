#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqevade/corpus.hpp"
#include "seqevade/plan.hpp"
#include "seqevade/program.hpp"
#include "seqevade/vocab.hpp"

namespace seqevade {

using json = nlohmann::ordered_json;

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

inline std::uint64_t parse_hash_hex(const std::string& s) {
  return std::stoull(s, nullptr, 16);
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  return out;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  return in;
}

inline json parse_line(const std::string& line, const std::string& path,
                       int lineno) {
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
  }
}

template <typename T>
T field(const json& j, const char* key, const std::string& path, int lineno) {
  if (!j.contains(key))
    throw ParseError(path + ":" + std::to_string(lineno) +
                     ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ParseError(path + ":" + std::to_string(lineno) + ": field '" + key +
                     "': " + e.what());
  }
}

}  // namespace detail

// ---- vocabulary -----------------------------------------------------------

inline void save_vocabulary(const ApiVocabulary& vocab,
                            const std::string& path) {
  auto out = detail::open_out(path);
  json header{{"type", "vocab"},
              {"size", vocab.size()},
              {"hash", detail::hash_hex(vocab.hash())}};
  out << header.dump() << "\n";
  for (const auto& e : vocab.entries()) {
    json j{{"id", e.id},         {"name", e.name},
           {"category", e.category}, {"action", e.action},
           {"object", e.object},  {"safe", e.safe_to_inject},
           {"tracked", e.tracked}};
    out << j.dump() << "\n";
  }
  json motifs = json::array();
  for (const auto& m : vocab.motifs()) motifs.push_back(m);
  out << json{{"type", "motifs"}, {"motifs", motifs}}.dump() << "\n";
}

inline ApiVocabulary load_vocabulary(const std::string& path) {
  auto in = detail::open_in(path);
  std::string line;
  int lineno = 0;
  if (!std::getline(in, line))
    throw ParseError(path + ": empty vocabulary file");
  json header = detail::parse_line(line, path, ++lineno);
  if (detail::field<std::string>(header, "type", path, lineno) != "vocab")
    throw ParseError(path + ": not a vocabulary file");
  int size = detail::field<int>(header, "size", path, lineno);
  std::vector<ApiEntry> entries;
  std::vector<Motif> motifs;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++lineno;
    json j = detail::parse_line(line, path, lineno);
    if (j.contains("type") && j.at("type") == "motifs") {
      for (const auto& arr : j.at("motifs")) {
        Motif m{};
        if (arr.size() != kMotifLen)
          throw ParseError(path + ": bad motif length");
        for (std::size_t k = 0; k < kMotifLen; ++k) m[k] = arr[k].get<ApiId>();
        motifs.push_back(m);
      }
      continue;
    }
    ApiEntry e;
    e.id = detail::field<ApiId>(j, "id", path, lineno);
    e.name = detail::field<std::string>(j, "name", path, lineno);
    e.category = detail::field<int>(j, "category", path, lineno);
    e.action = detail::field<int>(j, "action", path, lineno);
    e.object = detail::field<int>(j, "object", path, lineno);
    e.safe_to_inject = detail::field<bool>(j, "safe", path, lineno);
    e.tracked = detail::field<bool>(j, "tracked", path, lineno);
    entries.push_back(std::move(e));
  }
  if (static_cast<int>(entries.size()) != size)
    throw ParseError(path + ": truncated vocabulary (" +
                     std::to_string(entries.size()) + " of " +
                     std::to_string(size) + " entries)");
  ApiVocabulary vocab(std::move(entries), std::move(motifs));
  std::string want = detail::field<std::string>(header, "hash", path, 1);
  if (detail::hash_hex(vocab.hash()) != want)
    throw ParseError(path + ": vocabulary hash mismatch");
  return vocab;
}

// ---- corpus ---------------------------------------------------------------

namespace detail {

inline json config_to_json(const CorpusConfig& c) {
  return json{{"n_benign", c.n_benign},     {"n_malicious", c.n_malicious},
              {"min_len", c.min_len},       {"max_len", c.max_len},
              {"nondet_level", c.nondet_level}, {"seed", c.seed},
              {"vocab_size", c.vocab_size}};
}

inline CorpusConfig config_from_json(const json& j, const std::string& path,
                                     int lineno) {
  CorpusConfig c;
  c.n_benign = field<int>(j, "n_benign", path, lineno);
  c.n_malicious = field<int>(j, "n_malicious", path, lineno);
  c.min_len = field<int>(j, "min_len", path, lineno);
  c.max_len = field<int>(j, "max_len", path, lineno);
  c.nondet_level = field<double>(j, "nondet_level", path, lineno);
  c.seed = field<std::uint64_t>(j, "seed", path, lineno);
  c.vocab_size = field<int>(j, "vocab_size", path, lineno);
  return c;
}

inline json sequence_to_json(const ApiSequence& s) {
  json j{{"label", static_cast<int>(s.label)},
         {"origin", static_cast<int>(s.origin)},
         {"tokens", s.tokens}};
  if (s.has_provenance()) j["provenance"] = s.provenance;
  if (!s.injected.empty()) {
    std::vector<int> inj(s.injected.begin(), s.injected.end());
    j["injected"] = inj;
  }
  return j;
}

inline ApiSequence sequence_from_json(const json& j, const std::string& path,
                                      int lineno) {
  ApiSequence s;
  s.label = static_cast<Label>(field<int>(j, "label", path, lineno));
  s.origin = static_cast<Origin>(field<int>(j, "origin", path, lineno));
  s.tokens = field<std::vector<ApiId>>(j, "tokens", path, lineno);
  if (j.contains("provenance"))
    s.provenance = field<std::vector<SiteId>>(j, "provenance", path, lineno);
  if (j.contains("injected")) {
    auto inj = field<std::vector<int>>(j, "injected", path, lineno);
    s.injected.assign(inj.begin(), inj.end());
  }
  return s;
}

}  // namespace detail

inline void save_corpus(const Corpus& corpus, const std::string& seq_path,
                        const std::string& prog_path) {
  {
    auto out = detail::open_out(seq_path);
    json header{{"type", "corpus"},
                {"vocab_hash", detail::hash_hex(corpus.vocab_hash)},
                {"config", detail::config_to_json(corpus.config)}};
    out << header.dump() << "\n";
    for (const auto& rec : corpus.sequences) {
      json j = detail::sequence_to_json(rec.seq);
      json row{{"program_id", rec.program_id},
               {"split", static_cast<int>(rec.split)}};
      row.update(j);
      out << row.dump() << "\n";
    }
  }
  {
    auto out = detail::open_out(prog_path);
    json header{{"type", "programs"},
                {"vocab_hash", detail::hash_hex(corpus.vocab_hash)}};
    out << header.dump() << "\n";
    for (const auto& p : corpus.programs) {
      json blocks = json::array();
      for (const auto& b : p.blocks) {
        json sites = json::array();
        for (const auto& cs : b.sites)
          sites.push_back(json::array({cs.site, cs.api, cs.arg_sig}));
        blocks.push_back(json{{"conditional", b.conditional},
                              {"shuffle", b.shuffle},
                              {"essential", b.essential},
                              {"sites", sites}});
      }
      json j{{"program_id", p.program_id},
             {"label", static_cast<int>(p.label)},
             {"nondet_level", p.nondet_level},
             {"imports", p.imports},
             {"blocks", blocks}};
      out << j.dump() << "\n";
    }
  }
}

inline Corpus load_corpus(const std::string& seq_path,
                          const std::string& prog_path) {
  Corpus corpus;
  {
    auto in = detail::open_in(seq_path);
    std::string line;
    int lineno = 0;
    if (!std::getline(in, line))
      throw ParseError(seq_path + ": empty corpus file");
    ++lineno;
    json header = detail::parse_line(line, seq_path, lineno);
    if (detail::field<std::string>(header, "type", seq_path, lineno) !=
        "corpus")
      throw ParseError(seq_path + ": not a corpus file");
    corpus.vocab_hash = detail::parse_hash_hex(
        detail::field<std::string>(header, "vocab_hash", seq_path, lineno));
    if (!header.contains("config"))
      throw ParseError(seq_path + ": header missing config");
    corpus.config =
        detail::config_from_json(header.at("config"), seq_path, lineno);
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      json j = detail::parse_line(line, seq_path, lineno);
      SequenceRecord rec;
      rec.program_id =
          detail::field<std::string>(j, "program_id", seq_path, lineno);
      rec.split =
          static_cast<Split>(detail::field<int>(j, "split", seq_path, lineno));
      rec.seq = detail::sequence_from_json(j, seq_path, lineno);
      corpus.sequences.push_back(std::move(rec));
    }
  }
  {
    auto in = detail::open_in(prog_path);
    std::string line;
    int lineno = 0;
    if (!std::getline(in, line))
      throw ParseError(prog_path + ": empty programs file");
    ++lineno;
    json header = detail::parse_line(line, prog_path, lineno);
    if (detail::field<std::string>(header, "type", prog_path, lineno) !=
        "programs")
      throw ParseError(prog_path + ": not a programs file");
    std::uint64_t vh = detail::parse_hash_hex(
        detail::field<std::string>(header, "vocab_hash", prog_path, lineno));
    if (vh != corpus.vocab_hash)
      throw ParseError(prog_path + ": vocab hash differs from corpus file");
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      json j = detail::parse_line(line, prog_path, lineno);
      BehaviorProgram p;
      p.program_id =
          detail::field<std::string>(j, "program_id", prog_path, lineno);
      p.label = static_cast<Label>(
          detail::field<int>(j, "label", prog_path, lineno));
      p.nondet_level =
          detail::field<double>(j, "nondet_level", prog_path, lineno);
      p.imports =
          detail::field<std::vector<ApiId>>(j, "imports", prog_path, lineno);
      if (!j.contains("blocks"))
        throw ParseError(prog_path + ":" + std::to_string(lineno) +
                         ": missing field 'blocks'");
      for (const auto& bj : j.at("blocks")) {
        Block b;
        b.conditional =
            detail::field<bool>(bj, "conditional", prog_path, lineno);
        b.shuffle = detail::field<bool>(bj, "shuffle", prog_path, lineno);
        b.essential = detail::field<bool>(bj, "essential", prog_path, lineno);
        for (const auto& sj : bj.at("sites")) {
          if (!sj.is_array() || sj.size() != 3)
            throw ParseError(prog_path + ":" + std::to_string(lineno) +
                             ": bad site record");
          b.sites.push_back({sj[0].get<SiteId>(), sj[1].get<ApiId>(),
                             sj[2].get<int>()});
        }
        p.blocks.push_back(std::move(b));
      }
      corpus.programs.push_back(std::move(p));
    }
  }
  return corpus;
}

// ---- directive plans (patch files) ----------------------------------------

inline void save_plan(const DirectivePlan& plan, const std::string& path) {
  auto out = detail::open_out(path);
  json directives = json::array();
  for (const auto& d : plan.directives)
    directives.push_back(
        json{{"site", d.site}, {"before", d.before}, {"after", d.after}});
  json anchored = json::array();
  for (const auto& a : plan.anchored)
    anchored.push_back(json{{"api", a.api},
                            {"anchor", a.anchor},
                            {"occurrence", a.occurrence},
                            {"after", a.after}});
  json j{{"type", "patch"},
         {"program_id", plan.program_id},
         {"strategy", strategy_name(plan.source)},
         {"planned_overhead", plan.planned_overhead},
         {"fully_benign", plan.fully_benign},
         {"expected_scores", plan.expected_scores},
         {"anchored", anchored},
         {"directives", directives}};
  out << j.dump(2) << "\n";
}

inline DirectivePlan load_plan(const std::string& path) {
  auto in = detail::open_in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  json j = detail::parse_line(ss.str(), path, 1);
  if (detail::field<std::string>(j, "type", path, 1) != "patch")
    throw ParseError(path + ": not a patch file");
  DirectivePlan plan;
  plan.program_id = detail::field<std::string>(j, "program_id", path, 1);
  std::string strat = detail::field<std::string>(j, "strategy", path, 1);
  if (strat == "lkb")
    plan.source = Strategy::lkb;
  else if (strat == "bco")
    plan.source = Strategy::bco;
  else
    throw ParseError(path + ": unknown strategy '" + strat + "'");
  plan.planned_overhead = detail::field<int>(j, "planned_overhead", path, 1);
  plan.fully_benign = detail::field<bool>(j, "fully_benign", path, 1);
  plan.expected_scores =
      detail::field<std::vector<double>>(j, "expected_scores", path, 1);
  for (const auto& aj : j.at("anchored")) {
    AnchoredInjection a;
    a.api = detail::field<ApiId>(aj, "api", path, 1);
    a.anchor = detail::field<ApiId>(aj, "anchor", path, 1);
    a.occurrence = detail::field<int>(aj, "occurrence", path, 1);
    a.after = detail::field<bool>(aj, "after", path, 1);
    plan.anchored.push_back(a);
  }
  for (const auto& dj : j.at("directives")) {
    SiteDirective d;
    d.site = detail::field<SiteId>(dj, "site", path, 1);
    d.before = detail::field<std::vector<ApiId>>(dj, "before", path, 1);
    d.after = detail::field<std::vector<ApiId>>(dj, "after", path, 1);
    plan.directives.push_back(std::move(d));
  }
  return plan;
}

}  // namespace seqevade
