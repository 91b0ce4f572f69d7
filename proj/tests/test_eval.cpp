#include <doctest.h>

#include <cmath>

#include "dcin/eval.hpp"
#include "helpers.hpp"

using namespace dcin;
using namespace dcin::eval;

namespace {

// Independent oracle: percentage of a rank list that lands within the top K.
double recall_from_ranks(const std::vector<int>& ranks, int k) {
  int hits = 0;
  for (int r : ranks) {
    if (r <= k) ++hits;
  }
  return 100.0 * hits / static_cast<double>(ranks.size());
}

// Rank of the diagonal entry, recomputed outside the library: strictly
// higher scores outrank, equal scores with a smaller index outrank.
int extract_rank(const Matrix& s, std::size_t q, Direction dir) {
  int rank = 1;
  for (std::size_t j = 0; j < s.rows; ++j) {
    if (j == q) continue;
    const double v =
        dir == Direction::kImageToText ? s.at(q, j) : s.at(j, q);
    if (v > s.at(q, q) || (v == s.at(q, q) && j < q)) ++rank;
  }
  return rank;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("recall over a hand-counted rank list") {
  // Ranks of the true items: 1, 2, 6, 1, 3.
  CHECK(recall_from_ranks({1, 2, 6, 1, 3}, 1) == 40.0);
  CHECK(recall_from_ranks({1, 2, 6, 1, 3}, 5) == 80.0);
  CHECK(recall_from_ranks({1, 2, 6, 1, 3}, 10) == 100.0);
}

TEST_CASE("recall_at_k agrees with the rank-list oracle on random scores") {
  Rng rng = SeedStream(331).stream("test");
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t b = 3 + trial % 8;
    Matrix s(b, b);
    for (auto& v : s.data) v = rng.gaussian();
    for (Direction d : {Direction::kImageToText, Direction::kTextToImage}) {
      std::vector<int> ranks;
      for (std::size_t q = 0; q < b; ++q) ranks.push_back(extract_rank(s, q, d));
      for (int k : {1, 2, 5, 10}) {
        CHECK(recall_at_k(s, k, d) == recall_from_ranks(ranks, k));
      }
    }
  }
}

TEST_CASE("K at least the batch size means everything is found") {
  Rng rng = SeedStream(301).stream("test");
  Matrix s(6, 6);
  for (auto& v : s.data) v = rng.gaussian();
  CHECK(recall_at_k(s, 6, Direction::kImageToText) == 100.0);
  CHECK(recall_at_k(s, 17, Direction::kTextToImage) == 100.0);
}

TEST_CASE("diagonal-dominant scores give perfect R@1") {
  Rng rng = SeedStream(303).stream("test");
  Matrix s(5, 5);
  for (auto& v : s.data) v = rng.uniform() * 0.5;
  for (std::size_t i = 0; i < 5; ++i) s.at(i, i) = 2.0;
  CHECK(recall_at_k(s, 1, Direction::kImageToText) == 100.0);
  CHECK(recall_at_k(s, 1, Direction::kTextToImage) == 100.0);
}

TEST_CASE("K below one is a config error") {
  Matrix s(2, 2);
  CHECK_THROWS_AS(recall_at_k(s, 0, Direction::kImageToText), ConfigError);
}

TEST_CASE("ties rank the smaller index first") {
  Matrix s(2, 2);
  // Row 0: S[0][0] == S[0][1]; truth at index 0 wins the tie.
  s.at(0, 0) = 0.5;
  s.at(0, 1) = 0.5;
  s.at(1, 0) = 0.9;  // row 1: distractor at index 0 ties nothing, outranks
  s.at(1, 1) = 0.9;
  // Row 1 truth (index 1) ties with index 0, so index 0 ranks first.
  CHECK(recall_at_k(s, 1, Direction::kImageToText) == 50.0);
}

TEST_CASE("rsum identities") {
  RetrievalReport full;
  for (Direction d : {Direction::kImageToText, Direction::kTextToImage}) {
    for (int k : {1, 5, 10}) full.r_at[{d, k}] = 100.0;
  }
  CHECK(rsum(full) == 600.0);

  RetrievalReport zero;
  for (Direction d : {Direction::kImageToText, Direction::kTextToImage}) {
    for (int k : {1, 5, 10}) zero.r_at[{d, k}] = 0.0;
  }
  CHECK(rsum(zero) == 0.0);

  // The (40+80+100) fixture mirrored across both directions.
  RetrievalReport rep;
  for (int k : {1, 5, 10}) {
    rep.r_at[{Direction::kImageToText, k}] =
        recall_from_ranks({1, 2, 6, 1, 3}, k);
    rep.r_at[{Direction::kTextToImage, k}] =
        recall_from_ranks({1, 2, 6, 1, 3}, k);
  }
  CHECK(rsum(rep) == 440.0);

  RetrievalReport missing;
  missing.r_at[{Direction::kImageToText, 1}] = 10.0;
  CHECK_THROWS_AS(rsum(missing), ValidationError);
}

TEST_CASE("report rsum equals an independently computed sum") {
  Rng rng = SeedStream(307).stream("test");
  Matrix s(8, 8);
  for (auto& v : s.data) v = rng.gaussian();
  RetrievalReport rep = retrieval_report(s);
  double manual = 0.0;
  for (const auto& [key, v] : rep.r_at) manual += v;
  CHECK(rep.rsum == manual);
}

TEST_CASE("recall is monotone in K") {
  Rng rng = SeedStream(311).stream("test");
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = 2 + trial % 7;
    Matrix s(b, b);
    for (auto& v : s.data) v = rng.gaussian();
    for (Direction d : {Direction::kImageToText, Direction::kTextToImage}) {
      double prev = 0.0;
      for (int k = 1; k <= static_cast<int>(b); ++k) {
        const double r = recall_at_k(s, k, d);
        CHECK(r >= prev);
        prev = r;
      }
    }
  }
}

TEST_CASE("recall is invariant under strictly monotone score transforms") {
  Rng rng = SeedStream(313).stream("test");
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = 3 + trial % 5;
    Matrix s(b, b);
    for (auto& v : s.data) v = rng.gaussian();
    Matrix t(b, b);
    for (std::size_t i = 0; i < s.data.size(); ++i) {
      const double x = s.data[i];
      t.data[i] = x * x * x + 2.0 * x;  // strictly increasing
    }
    for (Direction d : {Direction::kImageToText, Direction::kTextToImage}) {
      for (int k : {1, 5, 10}) {
        CHECK(recall_at_k(s, k, d) == recall_at_k(t, k, d));
      }
    }
  }
}

TEST_CASE("spurious rate on constructed retrievals") {
  // Corpus: records 0,1 contain the trigger "child"; captions of 2,3 contain
  // the spurious word "school".
  Corpus corpus = testutil::make_c0();
  // Build an index list over four records:
  //   0: child image, caption school  (truth has the word)
  //   1: child image, caption cookout
  //   2: adult image, caption school
  //   3: adult image, caption school
  std::vector<std::size_t> idx = {0, 4, 5, 6};
  const std::vector<PlantedPair> planted = {{"child", "school"}};

  // Perfect retrieval: diagonal dominant.
  Matrix perfect(4, 4);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) perfect.at(i, j) = 0.1;
    perfect.at(i, i) = 1.0;
  }
  CHECK(spurious_rate(perfect, corpus, idx, planted) == 0.0);

  // Adversarial: every child query retrieves a school caption that the truth
  // lacks. Query 0's truth contains school, so only query 1 can be a hit.
  Matrix adv(4, 4);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) adv.at(i, j) = 0.1;
    adv.at(i, 2) = 1.0;  // always retrieve record 5 (adult, school)
  }
  CHECK(spurious_rate(adv, corpus, idx, planted) == 50.0);

  // With only school-free truths among the triggers, the same adversary is
  // spurious on every query.
  std::vector<std::size_t> idx2 = {4, 5};
  Matrix adv2(2, 2);
  adv2.at(0, 0) = 0.1;
  adv2.at(0, 1) = 1.0;  // child query retrieves the school caption
  adv2.at(1, 0) = 0.1;
  adv2.at(1, 1) = 1.0;
  CHECK(spurious_rate(adv2, corpus, idx2, planted) == 100.0);

  // No triggers at all.
  std::vector<std::size_t> no_trigger = {5, 6};
  Matrix s2(2, 2);
  CHECK_THROWS_AS(spurious_rate(s2, corpus, no_trigger, planted),
                  ValidationError);
}

TEST_CASE("lambda range parsing") {
  const std::vector<double> v = parse_lambda_range("0:0.15:0.025");
  REQUIRE(v.size() == 7);
  CHECK(v.front() == 0.0);
  CHECK(v.back() == doctest::Approx(0.15).epsilon(1e-12));
  CHECK_THROWS_AS(parse_lambda_range("nonsense"), ConfigError);
  CHECK_THROWS_AS(parse_lambda_range("0:1:-0.1"), ConfigError);
}

TEST_CASE("sweep csv is deterministic") {
  std::vector<SweepPoint> points;
  for (double l : {0.0, 0.025}) {
    SweepPoint p;
    p.lambda = l;
    for (Direction d : {Direction::kImageToText, Direction::kTextToImage}) {
      for (int k : {1, 5, 10}) p.report.r_at[{d, k}] = 50.0 + l;
    }
    p.report.rsum = rsum(p.report);
    points.push_back(p);
  }
  const std::string csv1 = sweep_to_csv(points);
  const std::string csv2 = sweep_to_csv(points);
  CHECK(csv1 == csv2);
  CHECK(csv1.find("lambda,i2t_r1") == 0);
}

}  // TEST_SUITE
