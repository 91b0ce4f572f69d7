#include <doctest.h>

#include <cmath>

#include "dcin/dictionary.hpp"
#include "helpers.hpp"

using namespace dcin;
using namespace dcin::dictionary;

namespace {

Corpus selection_corpus() {
  std::vector<ConceptEntry> entries = {
      {"dog", "dog", Modality::kVisual, Category::kObject},
      {"cat", "cat", Modality::kVisual, Category::kObject},
      {"red", "red", Modality::kVisual, Category::kProperty},
      {"run", "run", Modality::kVisual, Category::kAction},
      {"man", "man", Modality::kVisual, Category::kGender},
      {"ball", "ball", Modality::kLinguistic, Category::kObject},
      {"blue", "blue", Modality::kLinguistic, Category::kProperty},
      {"jump", "jump", Modality::kLinguistic, Category::kAction},
      {"is", "is", Modality::kLinguistic, Category::kStopword},
      {"z0", "z0", Modality::kVisual, Category::kStratum},
  };
  Corpus corpus;
  corpus.vocab = Vocab(entries);
  auto add = [&](std::vector<std::string> vis, std::vector<std::string> cap,
                 int copies) {
    for (int i = 0; i < copies; ++i) {
      PairRecord rec;
      rec.id = "s" + std::to_string(corpus.records.size());
      rec.visual_concepts = vis;
      rec.caption_tokens = cap;
      rec.stratum_label = "z0";
      rec.region_features = {{1.0, 1.0}};
      corpus.records.push_back(rec);
    }
  };
  add({"dog", "red", "run"}, {"ball", "blue", "jump", "is"}, 5);
  add({"cat", "red"}, {"ball", "is"}, 5);
  add({"man", "run"}, {"blue", "jump"}, 3);
  return corpus;
}

}  // namespace

TEST_SUITE("dictionary") {

TEST_CASE("quota of one per category selects the dominant concepts") {
  Corpus corpus = selection_corpus();
  Selection sel = select_concepts(corpus, corpus.vocab, 3, {1, 1, 1});
  REQUIRE(sel.visual.size() == 3);
  // dog and cat tie at 5; cat wins the tie alphabetically.
  CHECK(sel.visual[0] == "cat");
  CHECK(sel.visual[1] == "red");
  CHECK(sel.visual[2] == "run");
  REQUIRE(sel.linguistic.size() == 3);
  CHECK(sel.linguistic[0] == "ball");
  CHECK(sel.linguistic[1] == "blue");
  CHECK(sel.linguistic[2] == "jump");
}

TEST_CASE("stopwords are never selected") {
  Corpus corpus = selection_corpus();
  // "is" appears in 10 records, more than any selectable linguistic concept.
  Selection sel = select_concepts(corpus, corpus.vocab, 3, {1, 1, 1});
  for (const auto& c : sel.linguistic) CHECK(c != "is");
}

TEST_CASE("gender shares the object quota") {
  Corpus corpus = selection_corpus();
  Selection sel = select_concepts(corpus, corpus.vocab, 4, {2, 1, 1});
  // Object bucket of size 2 holds {cat, dog} (5 each) ahead of man (3).
  CHECK(sel.visual[0] == "cat");
  CHECK(sel.visual[1] == "dog");
}

TEST_CASE("insufficient concepts in a category raises with the shortfall") {
  Corpus corpus = selection_corpus();
  try {
    select_concepts(corpus, corpus.vocab, 6, {1, 4, 1});
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("property") != std::string::npos);
    CHECK(msg.find("short by") != std::string::npos);
  }
}

TEST_CASE("selection is deterministic") {
  Corpus corpus = selection_corpus();
  Selection a = select_concepts(corpus, corpus.vocab, 3, {1, 1, 1});
  Selection b = select_concepts(corpus, corpus.vocab, 3, {1, 1, 1});
  CHECK(a.visual == b.visual);
  CHECK(a.linguistic == b.linguistic);
}

TEST_CASE("prototype of constant regions is that constant") {
  Corpus corpus;
  corpus.vocab = Vocab({{"dog", "dog", Modality::kVisual, Category::kObject}});
  PairRecord rec;
  rec.id = "r0";
  rec.visual_concepts = {"dog"};
  rec.region_features = {{2.0, -1.0}, {2.0, -1.0}, {2.0, -1.0}};
  corpus.records.push_back(rec);
  Matrix proto = build_visual_prototypes(corpus, {"dog"});
  CHECK(proto.at(0, 0) == 2.0);
  CHECK(proto.at(0, 1) == -1.0);
}

TEST_CASE("prototype averages image means over supporting images") {
  Corpus corpus;
  corpus.vocab = Vocab({{"dog", "dog", Modality::kVisual, Category::kObject},
                        {"cat", "cat", Modality::kVisual, Category::kObject}});
  PairRecord a;
  a.id = "a";
  a.visual_concepts = {"dog"};
  a.region_features = {{1.0, 0.0}, {3.0, 0.0}};  // image mean (2, 0)
  PairRecord b;
  b.id = "b";
  b.visual_concepts = {"dog", "cat"};
  b.region_features = {{4.0, 2.0}};  // image mean (4, 2)
  corpus.records = {a, b};
  Matrix proto = build_visual_prototypes(corpus, {"dog", "cat"});
  CHECK(proto.at(0, 0) == 3.0);  // (2 + 4) / 2
  CHECK(proto.at(0, 1) == 1.0);
  CHECK(proto.at(1, 0) == 4.0);
  CHECK(proto.at(1, 1) == 2.0);

  CHECK_THROWS_AS(build_visual_prototypes(corpus, {"dog", "unseen"}),
                  CoverageError);
}

TEST_CASE("zero generator noise recovers the generator prototypes exactly") {
  ScmSpec spec;
  spec.strata = {{"z0", 1.0}};
  spec.concepts = {{"dog", "dog", Modality::kVisual, Category::kObject,
                    {{"z0", 1.0}}, std::nullopt, 0.0}};
  spec.feature_dim = 3;
  spec.regions_per_image = 4;
  spec.noise_scale = 0.0;
  spec.prototypes["dog"] = {0.5, -2.0, 7.0};
  Corpus corpus = generate(spec, 20, 99);
  Matrix proto = build_visual_prototypes(corpus, {"dog"});
  CHECK(proto.at(0, 0) == 0.5);
  CHECK(proto.at(0, 1) == -2.0);
  CHECK(proto.at(0, 2) == 7.0);
}

TEST_CASE("seeded linguistic embeddings are deterministic") {
  const std::vector<std::string> concepts = {"a", "b", "c"};
  Matrix t1 = build_linguistic_embeddings(concepts, 8, 5);
  Matrix t2 = build_linguistic_embeddings(concepts, 8, 5);
  CHECK(t1.data == t2.data);
  Matrix t3 = build_linguistic_embeddings(concepts, 8, 6);
  CHECK(t1.data != t3.data);
}

TEST_CASE("external embedding table is copied verbatim") {
  const std::vector<std::string> concepts = {"a", "b"};
  std::map<std::string, std::vector<double>> external = {
      {"a", {1.0, 2.0}}, {"b", {3.0, 4.0}}};
  Matrix t = build_linguistic_embeddings(concepts, 2, 0, &external);
  CHECK(t.data == std::vector<double>{1.0, 2.0, 3.0, 4.0});

  std::map<std::string, std::vector<double>> missing = {{"a", {1.0, 2.0}}};
  CHECK_THROWS_AS(build_linguistic_embeddings(concepts, 2, 0, &missing),
                  VocabularyError);
}

TEST_CASE("embedding coordinates have the documented scale") {
  std::vector<std::string> concepts;
  for (int i = 0; i < 64; ++i) concepts.push_back("c" + std::to_string(i));
  Matrix t = build_linguistic_embeddings(concepts, 64, 123);
  double sq = 0.0;
  for (double v : t.data) sq += v * v;
  const double std_dev = std::sqrt(sq / static_cast<double>(t.data.size()));
  CHECK(std_dev > 0.08);
  CHECK(std_dev < 0.12);
}

TEST_CASE("projection refreshes D1/D2 through the tape") {
  ConfounderDictionary dict;
  dict.concepts = {"dog", "cat", "ball", "blue"};
  dict.n_visual = 2;
  dict.g_v = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  dict.g_t = Tensor::from_data({2, 2}, {5, 6, 7, 8});

  SUBCASE("identity projection returns the prototypes") {
    dict.w_v = Tensor::from_data({2, 2}, {1, 0, 0, 1}, true);
    dict.w_t = Tensor::from_data({2, 2}, {1, 0, 0, 1}, true);
    Tape tape;
    auto [d1, d2] = dict.project(tape);
    CHECK(d1.data() == dict.g_v.data());
    CHECK(d2.data() == dict.g_t.data());
  }

  SUBCASE("zero projection zeroes the dictionary") {
    dict.w_v = Tensor::zeros({2, 2}, true);
    dict.w_t = Tensor::zeros({2, 2}, true);
    Tape tape;
    auto [d1, d2] = dict.project(tape);
    CHECK(d1.data() == std::vector<double>{0, 0, 0, 0});
    CHECK(d2.data() == std::vector<double>{0, 0, 0, 0});
  }

  SUBCASE("random projection matches the naive product") {
    Rng rng = SeedStream(8).stream("test");
    dict.w_v = testutil::random_tensor(rng, {2, 3}, 1.0, true);
    dict.w_t = testutil::random_tensor(rng, {2, 3}, 1.0, true);
    Tape tape;
    auto [d1, d2] = dict.project(tape);
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 3; ++j) {
        double acc_v = 0.0, acc_t = 0.0;
        for (std::size_t p = 0; p < 2; ++p) {
          acc_v += dict.g_v.at(i, p) * dict.w_v.at(p, j);
          acc_t += dict.g_t.at(i, p) * dict.w_t.at(p, j);
        }
        CHECK(d1.at(i, j) == acc_v);
        CHECK(d2.at(i, j) == acc_t);
      }
    }
  }

  SUBCASE("shape mismatch raises") {
    dict.w_v = Tensor::zeros({3, 2}, true);
    dict.w_t = Tensor::zeros({2, 2}, true);
    Tape tape;
    CHECK_THROWS_AS(dict.project(tape), DimensionError);
  }
}

}  // TEST_SUITE
