#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "seqevade/corpus.hpp"
#include "seqevade/model.hpp"
#include "test_util.hpp"

using namespace seqevade;
namespace tu = seqevade::testutil;

namespace {

std::vector<ApiId> random_window(Rng& rng, int n, int vocab_size,
                                 int n_pad = 0) {
  std::vector<ApiId> w;
  for (int i = 0; i < n - n_pad; ++i)
    w.push_back(static_cast<ApiId>(rng.uniform_int(1, vocab_size)));
  for (int i = 0; i < n_pad; ++i) w.push_back(0);
  return w;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

double fd_threshold() { return 1e-4; }

}  // namespace

TEST_CASE("input jacobian matches central finite differences") {
  // Central differences on the embedded window itself, via
  // forward_embedded, on >= 20 random (model, window) pairs.
  for (Encoding enc : {Encoding::plain, Encoding::triple}) {
    for (int trial = 0; trial < 10; ++trial) {
      std::uint64_t seed = derive_seed(100, "fd", trial);
      Rng rng(seed);
      int n = 8, d = enc == Encoding::plain ? 7 : 8, h = 6, V = 40;
      ApiVocabulary vocab = build_vocabulary(V, seed);
      OracleModel model(enc, vocab, n, d, h, seed);
      // give the dense head signal so gradients are non-trivial
      for (int i = 0; i < 2 * h; ++i)
        model.params().dense_w(i) = rng.normal(0.0, 0.5);
      model.params().dense_b = rng.normal(0.0, 0.2);

      std::vector<ApiId> window = random_window(rng, n, V, trial % 3);
      JacobianSlice js = model.input_jacobian(window);
      REQUIRE(js.values.rows() == n);
      REQUIRE(js.values.cols() == d);
      REQUIRE(js.values.allFinite());

      Eigen::MatrixXd x = model.embed(window);
      const double eps = 1e-4;
      double max_err = 0.0;
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) {
          double saved = x(i, j);
          x(i, j) = saved + eps;
          double up = model.forward_embedded(x, window);
          x(i, j) = saved - eps;
          double dn = model.forward_embedded(x, window);
          x(i, j) = saved;
          double fd = (up - dn) / (2 * eps);
          max_err = std::max(max_err, rel_err(fd, js.values(i, j)));
        }
      }
      INFO("encoding " << encoding_name(enc) << " trial " << trial);
      REQUIRE(max_err < fd_threshold());
    }
  }

  // all-padding window: gradient well-defined and finite
  ApiVocabulary vocab = build_vocabulary(30, 1);
  OracleModel model(Encoding::plain, vocab, 6, 6, 4, 1);
  Rng rng(9);
  for (int i = 0; i < 8; ++i) model.params().dense_w(i) = rng.normal();
  JacobianSlice js = model.input_jacobian(std::vector<ApiId>(6, 0));
  REQUIRE(js.values.allFinite());
}

TEST_CASE("parameter gradients match central finite differences") {
  for (Encoding enc : {Encoding::plain, Encoding::triple}) {
    for (int trial = 0; trial < 3; ++trial) {
      std::uint64_t seed = derive_seed(200, "fdp", trial);
      Rng rng(seed);
      int n = 6, d = 6, h = 5, V = 25;
      ApiVocabulary vocab = build_vocabulary(V, seed);
      OracleModel model(enc, vocab, n, d, h, seed);
      for (int i = 0; i < 2 * h; ++i)
        model.params().dense_w(i) = rng.normal(0.0, 0.5);

      std::vector<ApiId> window = random_window(rng, n, V, trial);
      nn::Params grads = model.params();
      grads.set_zero();
      double score = model.forward_window(window);
      double dlogit = score * (1.0 - score);  // gradient of the raw score
      model.backprop_window(window, dlogit, grads);

      auto pview = model.params().flat();
      auto gview = grads.flat();
      const double eps = 1e-4;
      double max_err = 0.0;
      for (std::size_t k = 0; k < pview.size(); ++k) {
        double saved = *pview[k];
        *pview[k] = saved + eps;
        double up = model.forward_window(window);
        *pview[k] = saved - eps;
        double dn = model.forward_window(window);
        *pview[k] = saved;
        double fd = (up - dn) / (2 * eps);
        max_err = std::max(max_err, rel_err(fd, *gview[k]));
      }
      INFO("encoding " << encoding_name(enc) << " trial " << trial);
      REQUIRE(max_err < fd_threshold());
    }
  }
}

TEST_CASE("embed contract") {
  ApiVocabulary vocab = build_vocabulary(30, 4);
  OracleModel model(Encoding::plain, vocab, 6, 8, 4, 9);

  std::vector<ApiId> all_pad(6, 0);
  REQUIRE(model.embed(all_pad).isZero());

  Rng rng(1);
  auto w = random_window(rng, 6, 30);
  REQUIRE(model.embed(w) == model.embed(w));

  // changing token at position i changes only row i
  auto w2 = w;
  w2[3] = w[3] == 1 ? 2 : 1;
  Eigen::MatrixXd a = model.embed(w);
  Eigen::MatrixXd b = model.embed(w2);
  for (int i = 0; i < 6; ++i) {
    if (i == 3) continue;
    REQUIRE(a.row(i) == b.row(i));
  }

  std::vector<ApiId> bad = w;
  bad[0] = 999;
  REQUIRE_THROWS_AS(model.embed(bad), VocabError);
}

TEST_CASE("forward contract") {
  ApiVocabulary vocab = build_vocabulary(30, 4);
  OracleModel model(Encoding::triple, vocab, 6, 9, 4, 9);
  Rng rng(2);
  auto w = random_window(rng, 6, 30);

  // untrained model with zero dense head scores exactly 0.5
  REQUIRE(model.forward_window(w) == 0.5);

  for (int i = 0; i < 2 * 4; ++i) model.params().dense_w(i) = rng.normal();
  double s1 = model.forward_window(w);
  REQUIRE(s1 == model.forward_window(w));
  REQUIRE(s1 >= 0.0);
  REQUIRE(s1 <= 1.0);

  // bounded on many random windows
  for (int t = 0; t < 50; ++t) {
    double s = model.forward_window(random_window(rng, 6, 30, t % 4));
    REQUIRE(s >= 0.0);
    REQUIRE(s <= 1.0);
  }
}

TEST_CASE("sequence scoring is max over windows") {
  ApiVocabulary vocab = build_vocabulary(30, 4);
  OracleModel model(Encoding::plain, vocab, 4, 6, 3, 9);
  Rng rng(3);
  for (int i = 0; i < 6; ++i) model.params().dense_w(i) = rng.normal();

  std::vector<ApiId> tokens;
  for (int i = 0; i < 10; ++i)
    tokens.push_back(static_cast<ApiId>(rng.uniform_int(1, 30)));
  double best = -1;
  for (int w = 0; w < 3; ++w)
    best = std::max(best, model.forward_window(model.window_at(tokens, w)));
  REQUIRE(model.forward_sequence(tokens) == best);
}

TEST_CASE("training learns the synthetic corpus") {
  // Light sanity check; the full >=95%-on-1000-samples criterion runs in
  // the acceptance suite.
  ApiVocabulary vocab = build_vocabulary(150, 42);
  CorpusConfig cfg;
  cfg.n_benign = 200;
  cfg.n_malicious = 200;
  cfg.seed = 42;
  cfg.vocab_size = 150;
  cfg.max_len = 80;
  Corpus corpus = generate_corpus(cfg, vocab);

  std::vector<LabeledSample> train_set, val_set;
  for (const auto& r : corpus.sequences) {
    LabeledSample s{r.seq.tokens, r.seq.label};
    if (r.split == Split::train) train_set.push_back(s);
    else if (r.split == Split::validation) val_set.push_back(s);
  }

  OracleModel model(Encoding::plain, vocab, 64, 16, 24, 7);
  Hyperparams hp;
  hp.epochs = 20;
  hp.seed = 7;
  auto history = train(model, train_set, val_set, hp);
  INFO("final acc " << history.back().accuracy);
  REQUIRE(history.back().accuracy >= 0.85);
  REQUIRE(history.back().loss < history.front().loss);
}

TEST_CASE("training determinism and error paths") {
  ApiVocabulary vocab = build_vocabulary(60, 10);
  CorpusConfig cfg;
  cfg.n_benign = 20;
  cfg.n_malicious = 20;
  cfg.seed = 5;
  cfg.vocab_size = 60;
  cfg.max_len = 40;
  Corpus corpus = generate_corpus(cfg, vocab);
  std::vector<LabeledSample> data;
  for (const auto& r : corpus.sequences)
    data.push_back({r.seq.tokens, r.seq.label});

  Hyperparams hp;
  hp.epochs = 2;
  hp.seed = 3;
  OracleModel m1(Encoding::plain, vocab, 16, 8, 6, 1);
  OracleModel m2(Encoding::plain, vocab, 16, 8, 6, 1);
  train(m1, data, {}, hp);
  train(m2, data, {}, hp);
  auto f1 = m1.params().flat();
  auto f2 = m2.params().flat();
  for (std::size_t i = 0; i < f1.size(); ++i) REQUIRE(*f1[i] == *f2[i]);

  std::vector<LabeledSample> single;
  for (const auto& s : data)
    if (s.label == Label::malware) single.push_back(s);
  OracleModel m3(Encoding::plain, vocab, 16, 8, 6, 1);
  REQUIRE_THROWS_AS(train(m3, single, {}, hp), TrainError);
  REQUIRE_THROWS_AS(train(m3, {}, {}, hp), TrainError);
}

TEST_CASE("threshold sweep monotonicity and degenerate ends") {
  ApiVocabulary vocab = build_vocabulary(60, 10);
  OracleModel model(Encoding::plain, vocab, 8, 6, 4, 2);
  Rng rng(4);
  for (int i = 0; i < 8; ++i) model.params().dense_w(i) = rng.normal();
  std::vector<LabeledSample> data;
  for (int i = 0; i < 40; ++i)
    data.push_back({random_window(rng, 8, 60),
                    i % 2 ? Label::malware : Label::goodware});

  std::vector<double> grid;
  for (int i = 0; i <= 20; ++i) grid.push_back(i / 20.0);
  grid.push_back(1.0 + 1e-9);
  auto sweep = sweep_threshold(model, data, grid);
  REQUIRE(sweep.front().threshold == 0.0);
  REQUIRE(sweep.front().tpr == 1.0);
  REQUIRE(sweep.front().fpr == 1.0);
  REQUIRE(sweep.back().tpr == 0.0);
  REQUIRE(sweep.back().fpr == 0.0);
  for (std::size_t i = 1; i < sweep.size(); ++i) {
    REQUIRE(sweep[i].tpr <= sweep[i - 1].tpr);
    REQUIRE(sweep[i].fpr <= sweep[i - 1].fpr);
  }
}

TEST_CASE("model round trip is bit exact") {
  ApiVocabulary vocab = build_vocabulary(40, 6);
  OracleModel model(Encoding::triple, vocab, 8, 9, 5, 11);
  Rng rng(5);
  for (int i = 0; i < 10; ++i) model.params().dense_w(i) = rng.normal();
  auto path = tu::temp_path("model.bin");
  save_model(model, path);
  OracleModel back = load_model(path);

  auto f1 = model.params().flat();
  auto f2 = back.params().flat();
  REQUIRE(f1.size() == f2.size());
  for (std::size_t i = 0; i < f1.size(); ++i) REQUIRE(*f1[i] == *f2[i]);

  for (int t = 0; t < 100; ++t) {
    auto w = random_window(rng, 8, 40, t % 3);
    REQUIRE(model.forward_window(w) == back.forward_window(w));
  }

  // corrupt a byte in the middle -> checksum mismatch
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(200);
    char c = 'x';
    f.write(&c, 1);
  }
  REQUIRE_THROWS_AS(load_model(path), ModelError);
  std::remove(path.c_str());
}
