#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "relm/corpus.hpp"
#include "relm/synthetic.hpp"
#include "support.hpp"

using namespace relm;
using relm::testing::thrown_kind;

namespace {

Embedding vec(std::vector<double> v) { return Embedding{std::move(v)}; }

const Encoder& shared_encoder() {
  static const Encoder enc(random_init(EncoderConfig{}, 0), FeatureConfig{});
  return enc;
}

struct Fixture {
  std::vector<ReactionRecord> records = synthetic_reactions(60, 3);
  ProductCorpus corpus = build_index(product_sets(records), shared_encoder());
  TrainingSet train = make_training_set(records, shared_encoder(), corpus);
};

std::vector<InContextExample> three_examples(const Fixture& fx, std::size_t k) {
  std::vector<std::size_t> ranked(fx.train.size());
  for (std::size_t i = 0; i < ranked.size(); ++i) ranked[i] = i;
  auto built = build_context(ranked, 3, fx.train, fx.corpus, k);
  REQUIRE(built.examples.size() == 3);
  return built.examples;
}

}  // namespace

TEST_SUITE("distance") {
  TEST_CASE("textbook values") {
    CHECK(distance(vec({1, 2, 3}), vec({1, 2, 3})) == 0.0);
    CHECK(distance(vec({0, 0}), vec({3, 4})) == 5.0);
    CHECK(thrown_kind([] { distance(vec({1}), vec({1, 2})); }) == ErrorKind::DimMismatch);
  }

  TEST_CASE("symmetric on random vectors") {
    Rng rng(1);
    for (int i = 0; i < 100; ++i) {
      Embedding a, b;
      for (int d = 0; d < 13; ++d) {
        a.values.push_back(rng.uniform(-5, 5));
        b.values.push_back(rng.uniform(-5, 5));
      }
      CHECK(distance(a, b) == distance(b, a));
    }
  }

  TEST_CASE("cosine similarity") {
    CHECK(cosine_similarity(vec({1, 0}), vec({0, 2})) == 0.0);
    CHECK(cosine_similarity(vec({1, 1}), vec({2, 2})) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(thrown_kind([] { cosine_similarity(vec({0, 0}), vec({1, 2})); }) == ErrorKind::ZeroNormEmbedding);
  }
}

TEST_SUITE("index") {
  TEST_CASE("an empty product list is rejected") {
    const std::vector<ProductSet> none;
    CHECK(thrown_kind([&] { build_index(none, shared_encoder()); }) == ErrorKind::EmptyCorpus);
  }

  TEST_CASE("duplicate product sets collapse into one entry") {
    const std::vector<ProductSet> sets = {{"p1", {"CCO"}}, {"p2", {"OCC"}}, {"p3", {"CCN"}}};
    const auto corpus = build_index(sets, shared_encoder());
    REQUIRE(corpus.size() == 2);
    CHECK(corpus.entry(0).id == "p1");
    CHECK(corpus.entry(0).merged_ids == std::vector<std::string>{"p1", "p2"});
  }

  TEST_CASE("stored embeddings equal fresh set embeddings bitwise") {
    const auto recs = synthetic_reactions(100, 9);
    const auto corpus = build_index(product_sets(recs), shared_encoder());
    REQUIRE(corpus.size() == 100);
    for (std::size_t i = 0; i < recs.size(); ++i) {
      std::vector<MolecularGraph> graphs;
      for (const auto& s : recs[i].products)
        for (auto& g : parse_smiles(s)) graphs.push_back(std::move(g));
      CHECK(corpus.entry(i).embedding ==
            embed_set(graphs, shared_encoder().weights(), shared_encoder().features()));
    }
  }

  TEST_CASE("parse errors name the entry") {
    const std::vector<ProductSet> sets = {{"good", {"CC"}}, {"bad-42", {"C1CC"}}};
    try {
      build_index(sets, shared_encoder());
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::UnmatchedRingBond);
      CHECK(std::string(e.what()).find("bad-42") != std::string::npos);
    }
  }

  TEST_CASE("index files round-trip and remember the encoder") {
    Fixture fx;
    const auto path = std::filesystem::temp_directory_path() / "relm_test_corpus_index.json";
    save_index(fx.corpus, path);
    const auto back = load_index(path);
    REQUIRE(back.size() == fx.corpus.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
      CHECK(back.entry(i).id == fx.corpus.entry(i).id);
      CHECK(back.entry(i).embedding == fx.corpus.entry(i).embedding);
      CHECK(back.entry(i).canonical_keys == fx.corpus.entry(i).canonical_keys);
    }
    CHECK(back.fingerprint() == shared_encoder().fingerprint());
    const Encoder other(random_init(EncoderConfig{}, 1), FeatureConfig{});
    const auto graphs = parse_smiles(fx.records[0].reactants[0]);
    CHECK(thrown_kind([&] { top_k_candidates(graphs, back, other, 3); }) == ErrorKind::FingerprintMismatch);
    CHECK(top_k_candidates(graphs, back, shared_encoder(), 3).size() == 3);
    std::filesystem::remove(path);
  }
}

TEST_SUITE("top-k") {
  TEST_CASE("K equal to the corpus size returns everything in order") {
    Rng rng(2);
    const auto corpus = relm::testing::random_vector_corpus(rng, 50, 4);
    Embedding q;
    for (int d = 0; d < 4; ++d) q.values.push_back(rng.uniform(-1, 1));
    const auto all = top_k_candidates(q, corpus, 50);
    CHECK(all.size() == 50);
    CHECK_FALSE(all.truncated);
    for (std::size_t i = 1; i < all.size(); ++i) CHECK(all.entries[i - 1].distance <= all.entries[i].distance);
    const auto over = top_k_candidates(q, corpus, 80);
    CHECK(over.truncated);
    CHECK(over.size() == 50);
    CHECK(thrown_kind([&] { top_k_candidates(q, corpus, 0); }) == ErrorKind::InvalidArgument);
  }

  TEST_CASE("matches a brute-force sort on a corpus of 1000") {
    Rng rng(3);
    const auto corpus = relm::testing::random_vector_corpus(rng, 1000, 16);
    for (int t = 0; t < 20; ++t) {
      Embedding q;
      for (int d = 0; d < 16; ++d) q.values.push_back(rng.uniform(-1, 1));
      const auto got = top_k_candidates(q, corpus, 5);
      const auto want = relm::testing::brute_force_ranking(q.values, corpus);
      for (std::size_t i = 0; i < 5; ++i) CHECK(got.entries[i].id == want[i]);
    }
  }

  TEST_CASE("ties are broken by id") {
    std::vector<CorpusEntry> entries;
    for (const char* id : {"zeta", "alpha", "mid"}) {
      CorpusEntry e;
      e.id = id;
      e.embedding = vec({1.0, 0.0});
      e.canonical_keys = {id};
      entries.push_back(e);
    }
    const ProductCorpus corpus("fp", entries);
    const auto got = top_k_candidates(vec({0.0, 0.0}), corpus, 2);
    CHECK(got.entries[0].id == "alpha");
    CHECK(got.entries[1].id == "mid");
    CHECK(rank_of(vec({0.0, 0.0}), corpus, 0) == 3);
  }

  TEST_CASE("trained weights put each product first for its own reactants") {
    const auto recs = synthetic_reactions(2, 5);
    TrainHyper h;
    h.epochs = 100;
    EncoderConfig cfg;
    cfg.embed_dim = 16;
    const Encoder enc(train_contrastive(recs, cfg, FeatureConfig{}, h).weights, FeatureConfig{});
    const auto corpus = build_index(product_sets(recs), enc);
    for (std::size_t i = 0; i < recs.size(); ++i) {
      const auto top = top_k_candidates(enc.embed_smiles(recs[i].reactants), corpus, 1);
      CHECK(top.entries[0].id == recs[i].id);
    }
  }
}

TEST_SUITE("examples") {
  TEST_CASE("an identical reaction under another id ranks first") {
    Fixture fx;
    ReactionRecord query = fx.records[7];
    query.id = "query";
    const auto picked = select_examples(query, fx.train, 3, shared_encoder());
    REQUIRE(picked.size() == 3);
    CHECK(picked[0] == 7);
    CHECK(cosine_similarity(shared_encoder().embed_smiles(query.reactants), fx.train.reactant_embeddings[7]) ==
          doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("the query's own id is excluded") {
    Fixture fx;
    const auto picked = select_examples(fx.records[7], fx.train, fx.train.size(), shared_encoder());
    CHECK(picked.size() == fx.train.size() - 1);
    CHECK(std::find(picked.begin(), picked.end(), 7u) == picked.end());
    std::set<std::size_t> unique(picked.begin(), picked.end());
    CHECK(unique.size() == picked.size());
  }

  TEST_CASE("matches a brute-force cosine sort") {
    Fixture fx;
    for (std::size_t q = 0; q < 10; ++q) {
      const Embedding h = fx.train.reactant_embeddings[q];
      std::vector<std::pair<double, std::size_t>> scored;
      for (std::size_t i = 0; i < fx.train.size(); ++i) {
        if (i == q) continue;
        const auto& e = fx.train.reactant_embeddings[i].values;
        double dot = 0, na = 0, nb = 0;
        for (std::size_t d = 0; d < e.size(); ++d) {
          dot += h.values[d] * e[d];
          na += h.values[d] * h.values[d];
          nb += e[d] * e[d];
        }
        scored.emplace_back(-dot / std::sqrt(na * nb), i);
      }
      std::sort(scored.begin(), scored.end());
      const auto picked = select_examples(h, fx.records[q].id, fx.train, 3);
      for (std::size_t i = 0; i < 3; ++i) CHECK(picked[i] == scored[i].second);
    }
  }

  TEST_CASE("zero embeddings are an error") {
    GnnWeights zero = random_init(EncoderConfig{}, 0);
    relm::testing::for_each_weight(zero, [](double& v) { v = 0.0; });
    const Encoder enc(zero, FeatureConfig{});
    const auto recs = synthetic_reactions(5, 1);
    const auto corpus = build_index(product_sets(recs), enc);
    const auto train = make_training_set(recs, enc, corpus);
    CHECK(thrown_kind([&] { select_examples(recs[0], train, 2, enc); }) == ErrorKind::ZeroNormEmbedding);
  }
}

TEST_SUITE("context") {
  TEST_CASE("each example shows its ground truth") {
    Fixture fx;
    const auto ranked = select_examples(fx.records[0], fx.train, fx.train.size(), shared_encoder());
    const auto built = build_context(ranked, 3, fx.train, fx.corpus, 4);
    REQUIRE(built.examples.size() == 3);
    for (const auto& ex : built.examples) {
      CHECK_FALSE(ex.perturbed);
      CHECK_FALSE(ex.confidence.has_value());
      CHECK(ex.shown_answer == ex.true_answer);
      const auto& shown = fx.corpus.entry(ex.candidates.entries[ex.shown_answer].entry);
      CHECK(shown.canonical_keys == canonical_key_multiset(ex.record.products));
    }
    const auto again = build_context(ranked, 3, fx.train, fx.corpus, 4);
    CHECK(again.examples == built.examples);
  }

  TEST_CASE("records whose truth misses the top-K are substituted and logged") {
    Fixture fx;
    std::vector<std::size_t> ranked(fx.train.size());
    for (std::size_t i = 0; i < ranked.size(); ++i) ranked[i] = i;
    const auto built = build_context(ranked, 5, fx.train, fx.corpus, 1);
    std::size_t expected_skips = 0;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
      const auto top = top_k_candidates(fx.train.reactant_embeddings[i], fx.corpus, 1);
      if (top.entries[0].entry == *fx.train.truth_entry[i]) {
        if (i >= built.examples.back().train_index) break;
      } else {
        ++expected_skips;
      }
    }
    CHECK(built.examples.size() == 5);
    CHECK(built.substitutions.size() == expected_skips);
    for (const auto& ex : built.examples) CHECK(ex.shown_answer == 0);
  }
}

TEST_SUITE("perturbation") {
  TEST_CASE("fixed configuration gives nines and a single one") {
    Fixture fx;
    auto css = CssConfig::fixed();
    css.seed = 4;
    const auto out = perturb_context(three_examples(fx, 4), css);
    std::multiset<int> confs;
    for (const auto& ex : out) confs.insert(*ex.confidence);
    CHECK(confs == std::multiset<int>{1, 9, 9});
    for (const auto& ex : out) CHECK((ex.perturbed == (*ex.confidence == 1)));
  }

  TEST_CASE("no perturbation keeps every answer") {
    Fixture fx;
    CssConfig css;
    css.num_perturbed = 0;
    const auto in = three_examples(fx, 4);
    const auto out = perturb_context(in, css);
    for (std::size_t i = 0; i < in.size(); ++i) {
      CHECK_FALSE(out[i].perturbed);
      CHECK(out[i].shown_answer == in[i].shown_answer);
      CHECK((*out[i].confidence == 8 || *out[i].confidence == 9));
    }
  }

  TEST_CASE("seeded runs repeat exactly") {
    Fixture fx;
    CssConfig css;
    css.seed = 99;
    const auto in = three_examples(fx, 5);
    CHECK(perturb_context(in, css) == perturb_context(in, css));
  }

  TEST_CASE("a perturbed example needs a wrong candidate") {
    Fixture fx;
    CssConfig css;
    css.num_perturbed = 3;
    CHECK(thrown_kind([&] { perturb_context(three_examples(fx, 1), css); }) == ErrorKind::NotEnoughCandidates);
    const auto two = three_examples(fx, 4);
    CHECK(thrown_kind([&] { perturb_context({two[0]}, CssConfig{}); }) == ErrorKind::InvalidArgument);
  }

  TEST_CASE("invalid confidence sets are rejected") {
    CssConfig css;
    css.low_set = {8};
    CHECK(thrown_kind([&] { validate(css); }) == ErrorKind::ConfigError);
    css = CssConfig{};
    css.high_set = {10};
    CHECK(thrown_kind([&] { validate(css); }) == ErrorKind::ConfigError);
    css = CssConfig{};
    css.low_set.clear();
    CHECK(thrown_kind([&] { validate(css); }) == ErrorKind::ConfigError);
    CHECK_NOTHROW(validate(CssConfig::randomized_wide()));
  }
}
