#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "seqevade/program.hpp"
#include "seqevade/rng.hpp"
#include "seqevade/sequence.hpp"
#include "seqevade/vocab.hpp"

namespace seqevade {

struct CorpusConfig {
  int n_benign = 500;
  int n_malicious = 500;
  int min_len = 15;
  int max_len = 100;
  double nondet_level = 0.0;
  std::uint64_t seed = 0;
  int vocab_size = 300;

  void validate() const {
    if (n_benign < 0 || n_malicious < 0)
      throw ConfigError("sample counts must be non-negative");
    if (min_len < 1) throw ConfigError("min_len must be >= 1");
    if (max_len < min_len) throw ConfigError("max_len must be >= min_len");
    if (nondet_level < 0.0 || nondet_level > 1.0)
      throw ConfigError("nondet_level must be in [0,1]");
    if (vocab_size < 10) throw ConfigError("vocab_size must be >= 10");
  }

  bool operator==(const CorpusConfig&) const = default;
};

enum class Split : int { train = 0, validation = 1, test = 2 };

struct SequenceRecord {
  std::string program_id;
  Split split = Split::train;
  ApiSequence seq;

  bool operator==(const SequenceRecord&) const = default;
};

struct Corpus {
  std::uint64_t vocab_hash = 0;
  CorpusConfig config;
  std::vector<SequenceRecord> sequences;
  std::vector<BehaviorProgram> programs;

  const BehaviorProgram* find_program(const std::string& id) const {
    for (const auto& p : programs)
      if (p.program_id == id) return &p;
    return nullptr;
  }

  bool operator==(const Corpus&) const = default;
};

namespace detail {

// Probability, per interior filler position, of planting an isolated motif
// bigram (both classes), so pair statistics carry little label signal.
inline constexpr double kBigramPlantProb = 0.05;

// Picks an API from `pool` that is not a motif member; falls back to the
// plain pool if the program imported only motif members.
inline ApiId pick_non_motif(Rng& rng, const std::vector<ApiId>& pool,
                            const ApiVocabulary& vocab) {
  for (int tries = 0; tries < 64; ++tries) {
    ApiId a = pool[rng.uniform_index(pool.size())];
    if (!vocab.is_motif_member(a)) return a;
  }
  return pool[rng.uniform_index(pool.size())];
}

// True when prev2,prev1,cur appear consecutively in some motif.
inline bool is_motif_trigram(const ApiVocabulary& vocab, ApiId prev2,
                             ApiId prev1, ApiId cur) {
  for (const auto& m : vocab.motifs())
    for (std::size_t k = 0; k + 2 < m.size(); ++k)
      if (m[k] == prev2 && m[k + 1] == prev1 && m[k + 2] == cur) return true;
  return false;
}

// A benign-safe block: starts and ends with non-motif APIs, never contains
// a motif trigram (so no execution can contain a full motif), and (when
// shuffled) holds no motif members at all, so no execution order can
// assemble one either. Motif bigrams are allowed in order-stable blocks:
// benign and malicious traces then share the same local pair statistics,
// and only the full contiguous motif separates the classes.
inline Block make_filler_block(Rng& rng, const std::vector<ApiId>& imports,
                               const ApiVocabulary& vocab, int len,
                               bool shuffle, const Motif* motif) {
  Block b;
  b.shuffle = shuffle;
  std::vector<ApiId> emissions;
  auto forms_trigram = [&](ApiId cand) {
    return emissions.size() >= 2 &&
           is_motif_trigram(vocab, emissions[emissions.size() - 2],
                            emissions.back(), cand);
  };
  int pending = -1;  // second half of a planted bigram
  for (int i = 0; i < len; ++i) {
    ApiId a;
    if (shuffle || i == 0 || i == len - 1) {
      a = pick_non_motif(rng, imports, vocab);
      pending = -1;
    } else if (pending >= 0) {
      a = (*motif)[static_cast<std::size_t>(pending)];
      pending = -1;
    } else {
      // Occasionally plant a motif bigram: both classes then exhibit the
      // same isolated-pair statistics, so pairs carry no label signal.
      if (motif != nullptr && i + 2 < len && rng.bernoulli(kBigramPlantProb)) {
        std::size_t k = rng.uniform_index(kMotifLen - 1);
        ApiId first = (*motif)[k];
        ApiId second = (*motif)[k + 1];
        bool second_safe =
            emissions.empty() ||
            !is_motif_trigram(vocab, emissions.back(), first, second);
        if (!forms_trigram(first) && second_safe) {
          emissions.push_back(first);
          pending = static_cast<int>(k + 1);
          continue;
        }
      }
      a = imports[rng.uniform_index(imports.size())];
      int guard = 0;
      while (forms_trigram(a) && guard++ < 64)
        a = imports[rng.uniform_index(imports.size())];
      if (forms_trigram(a)) a = pick_non_motif(rng, imports, vocab);
    }
    emissions.push_back(a);
  }
  for (ApiId a : emissions) b.sites.push_back({0, a, 0});
  return b;
}

}  // namespace detail

// Generates one synthetic program. Malicious programs carry a motif block
// (essential, unconditional, order-stable) so every execution contains the
// motif; benign programs are constructed so no execution can contain one.
inline BehaviorProgram generate_program(Label label, const CorpusConfig& cfg,
                                        const ApiVocabulary& vocab,
                                        std::uint64_t seed,
                                        const std::string& program_id) {
  cfg.validate();
  Rng rng(seed);
  BehaviorProgram prog;
  prog.program_id = program_id;
  prog.label = label;
  prog.nondet_level = cfg.nondet_level;

  // Import set size spans a wide range so arsenal sizes vary across
  // programs (needed for the arsenal-size bucketing in experiments).
  int max_imports = std::min(vocab.size(), 120);
  int n_imports = static_cast<int>(rng.uniform_int(12, max_imports));
  std::vector<ApiId> all_ids(static_cast<std::size_t>(vocab.size()));
  for (int i = 0; i < vocab.size(); ++i)
    all_ids[static_cast<std::size_t>(i)] = i + 1;
  rng.shuffle(all_ids.begin(), all_ids.end());
  std::vector<ApiId> imports(all_ids.begin(), all_ids.begin() + n_imports);

  // Both classes import the members of one motif, so the presence of motif
  // APIs in the import set (and hence in filler emissions) carries no label
  // signal; only malicious programs emit the full motif contiguously.
  std::vector<Motif> motifs_used;
  {
    const auto& motifs = vocab.motifs();
    motifs_used.push_back(motifs[rng.uniform_index(motifs.size())]);
    for (ApiId a : motifs_used.front()) imports.push_back(a);
  }
  std::sort(imports.begin(), imports.end());
  imports.erase(std::unique(imports.begin(), imports.end()), imports.end());
  // Filler generation needs at least one non-motif API.
  if (std::all_of(imports.begin(), imports.end(),
                  [&](ApiId a) { return vocab.is_motif_member(a); })) {
    for (ApiId a : all_ids)
      if (!vocab.is_motif_member(a)) {
        imports.push_back(a);
        break;
      }
    std::sort(imports.begin(), imports.end());
  }
  prog.imports = imports;

  int target_len =
      static_cast<int>(rng.uniform_int(cfg.min_len, cfg.max_len));

  // Essential prefix: executed in full by every run, total >= min_len.
  std::vector<Block> essential_blocks;
  int essential_len = 0;
  while (essential_len < cfg.min_len) {
    int len = static_cast<int>(rng.uniform_int(3, 7));
    len = std::min(len, std::max(1, target_len - essential_len));
    Block b = detail::make_filler_block(rng, imports, vocab, len, false,
                                        &motifs_used.front());
    b.essential = true;
    essential_blocks.push_back(std::move(b));
    essential_len += len;
  }
  if (label == Label::malware) {
    Block motif_block;
    motif_block.essential = true;
    for (ApiId a : motifs_used.front()) motif_block.sites.push_back({0, a, 0});
    std::size_t pos = rng.uniform_index(essential_blocks.size() + 1);
    essential_blocks.insert(
        essential_blocks.begin() + static_cast<std::ptrdiff_t>(pos),
        std::move(motif_block));
    essential_len += kMotifLen;
  }
  prog.blocks = std::move(essential_blocks);

  // Optional tail: conditional / shufflable / truncatable blocks.
  int total = essential_len;
  while (total < target_len) {
    int len = static_cast<int>(rng.uniform_int(3, 7));
    len = std::min(len, target_len - total);
    bool shuffle = rng.bernoulli(0.3);
    Block b = detail::make_filler_block(rng, imports, vocab, len, shuffle,
                                        &motifs_used.front());
    b.conditional = rng.bernoulli(0.35);
    prog.blocks.push_back(std::move(b));
    total += len;
  }

  SiteId next_site = 1;
  for (auto& b : prog.blocks)
    for (auto& cs : b.sites) {
      cs.site = next_site++;
      cs.arg_sig = static_cast<int>(rng.uniform_int(1, 5));
    }
  return prog;
}

// One observed trace per program, split 70/15/15 into train/val/test.
inline Corpus generate_corpus(const CorpusConfig& cfg,
                              const ApiVocabulary& vocab) {
  cfg.validate();
  Corpus corpus;
  corpus.vocab_hash = vocab.hash();
  corpus.config = cfg;

  auto add_program = [&](Label label, int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%05d",
                  label == Label::malware ? "mal" : "ben", index);
    std::string id(buf);
    std::uint64_t pseed = derive_seed(
        cfg.seed, label == Label::malware ? "prog-mal" : "prog-ben",
        static_cast<std::uint64_t>(index));
    BehaviorProgram prog = generate_program(label, cfg, vocab, pseed, id);
    ApiSequence obs = execute(
        prog, derive_seed(cfg.seed, "observe", splitmix64(pseed)));
    SequenceRecord rec;
    rec.program_id = id;
    rec.seq = std::move(obs);
    corpus.programs.push_back(std::move(prog));
    corpus.sequences.push_back(std::move(rec));
  };

  for (int i = 0; i < cfg.n_benign; ++i) add_program(Label::goodware, i);
  for (int i = 0; i < cfg.n_malicious; ++i) add_program(Label::malware, i);

  // Deterministic split assignment.
  std::vector<std::size_t> idx(corpus.sequences.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng split_rng(derive_seed(cfg.seed, "split"));
  split_rng.shuffle(idx.begin(), idx.end());
  std::size_t n = idx.size();
  std::size_t n_train = n * 70 / 100;
  std::size_t n_val = n * 15 / 100;
  for (std::size_t k = 0; k < n; ++k) {
    Split s = k < n_train               ? Split::train
              : k < n_train + n_val     ? Split::validation
                                        : Split::test;
    corpus.sequences[idx[k]].split = s;
  }
  return corpus;
}

}  // namespace seqevade
