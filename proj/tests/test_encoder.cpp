#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "dcin/encoder.hpp"
#include "helpers.hpp"

using namespace dcin;
using namespace dcin::encoder;

namespace {

Vocab small_vocab() {
  return Vocab({{"a", "a", Modality::kLinguistic, Category::kObject},
                {"b", "b", Modality::kLinguistic, Category::kObject},
                {"c", "c", Modality::kLinguistic, Category::kObject}});
}

Matrix regions(std::vector<std::vector<double>> rows) {
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(rows[i].begin(), rows[i].end(), m.data.begin() + i * m.cols);
  }
  return m;
}

}  // namespace

TEST_SUITE("encoder") {

TEST_CASE("identity projection of one region is that region") {
  Tape tape;
  Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  ImageEncoding enc = encode_image(tape, regions({{3.0, -1.0}}), eye, {});
  CHECK(enc.global.vec.data() == std::vector<double>{3.0, -1.0});
  CHECK(enc.global.source == Source::kImage);
}

TEST_CASE("identical regions pool to the common row") {
  Tape tape;
  Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  ImageEncoding enc =
      encode_image(tape, regions({{2.0, 5.0}, {2.0, 5.0}}), eye, {});
  CHECK(enc.global.vec.at(0, 0) == 2.0);
  CHECK(enc.global.vec.at(0, 1) == 5.0);
}

TEST_CASE("rank weights (1,0) pick the coordinate-wise larger value") {
  Tape tape;
  Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Pooling pooling;
  pooling.weights = Tensor::vector({1.0, 0.0});
  Matrix feats = regions({{1.0, 8.0}, {4.0, 2.0}});
  ImageEncoding enc = encode_image(tape, feats, eye, pooling);
  // Direct sort-and-dot recomputation per coordinate.
  for (std::size_t c = 0; c < 2; ++c) {
    std::vector<double> col = {feats.at(0, c), feats.at(1, c)};
    std::sort(col.rbegin(), col.rend());
    const double expect = 1.0 * col[0] + 0.0 * col[1];
    CHECK(enc.global.vec.at(0, c) == expect);
  }
  CHECK(enc.global.vec.at(0, 0) == 4.0);
  CHECK(enc.global.vec.at(0, 1) == 8.0);
}

TEST_CASE("empty image input is rejected") {
  Tape tape;
  Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Matrix empty(0, 2);
  CHECK_THROWS_AS(encode_image(tape, empty, eye, {}), ValidationError);
}

TEST_CASE("mean pooling is permutation invariant") {
  Rng rng = SeedStream(51).stream("test");
  Tensor w = testutil::random_tensor(rng, {3, 4});
  Matrix feats(4, 3);
  for (auto& v : feats.data) v = rng.gaussian();
  Tape tape;
  ImageEncoding enc = encode_image(tape, feats, w, {});

  // Reverse the region order.
  Matrix rev(4, 3);
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 3; ++c) rev.at(r, c) = feats.at(3 - r, c);
  }
  Tape tape2;
  ImageEncoding enc2 = encode_image(tape2, rev, w, {});
  for (std::size_t c = 0; c < 4; ++c) {
    CHECK(enc.global.vec.at(0, c) ==
          doctest::Approx(enc2.global.vec.at(0, c)).epsilon(1e-15));
  }
}

TEST_CASE("text encoding mirrors the image path") {
  Vocab vocab = small_vocab();
  Tape tape;
  Tensor table = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6});
  Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});

  TextEncoding one = encode_text(tape, {"b"}, vocab, table, eye, {});
  CHECK(one.global.vec.data() == std::vector<double>{3, 4});
  CHECK(one.global.source == Source::kText);

  TextEncoding two = encode_text(tape, {"a", "c"}, vocab, table, eye, {});
  CHECK(two.global.vec.data() == std::vector<double>{3, 4});  // mean

  Pooling top;
  top.weights = Tensor::vector({1.0, 0.0});
  TextEncoding mx = encode_text(tape, {"a", "c"}, vocab, table, eye, top);
  CHECK(mx.global.vec.data() == std::vector<double>{5, 6});

  CHECK_THROWS_AS(encode_text(tape, {}, vocab, table, eye, {}),
                  ValidationError);
  CHECK_THROWS_AS(encode_text(tape, {"zzz"}, vocab, table, eye, {}),
                  VocabularyError);
}

TEST_CASE("encoder gradients pass finite differences") {
  Rng rng = SeedStream(53).stream("test");
  Matrix feats(3, 2);
  for (auto& v : feats.data) v = rng.gaussian();
  auto f_w = [&](Tape& tape, const Tensor& w) {
    ImageEncoding enc = encode_image(tape, feats, w, {});
    return tape.sum_all(tape.tanh(enc.global.vec));
  };
  Tensor w0 = testutil::random_tensor(rng, {2, 3});
  CHECK(finite_diff_check(f_w, w0, 1e-5) < 1e-4);

  // Learned pooling path, including the weight gradient.
  Tensor pool_w = Tensor::vector({0.6, 0.3, 0.1});
  auto f_pool = [&](Tape& tape, const Tensor& pw) {
    Pooling pooling;
    pooling.weights = pw;
    ImageEncoding enc = encode_image(tape, feats, w0, pooling);
    return tape.sum_all(tape.tanh(enc.global.vec));
  };
  CHECK(finite_diff_check(f_pool, pool_w, 1e-6) < 1e-4);

  // Token table gradient through text encoding.
  Vocab vocab = small_vocab();
  auto f_table = [&](Tape& tape, const Tensor& table) {
    TextEncoding enc =
        encode_text(tape, {"a", "c", "a"}, vocab, table, w0, {});
    return tape.sum_all(tape.tanh(enc.global.vec));
  };
  Tensor table0 = testutil::random_tensor(rng, {3, 2});
  CHECK(finite_diff_check(f_table, table0, 1e-5) < 1e-4);
}

TEST_CASE("batched encoders agree with per-record encoding") {
  Rng rng = SeedStream(57).stream("test");
  Tensor w = testutil::random_tensor(rng, {2, 3});
  Matrix stacked(5, 2);
  for (auto& v : stacked.data) v = rng.gaussian();
  const std::vector<std::size_t> offsets = {0, 2, 5};

  Tape tape;
  Tensor batch = encode_images_batch(tape, stacked, offsets, w, {});
  REQUIRE(batch.rows() == 2);

  Matrix first(2, 2), second(3, 2);
  std::copy(stacked.data.begin(), stacked.data.begin() + 4,
            first.data.begin());
  std::copy(stacked.data.begin() + 4, stacked.data.end(),
            second.data.begin());
  Tape t1, t2;
  ImageEncoding e1 = encode_image(t1, first, w, {});
  ImageEncoding e2 = encode_image(t2, second, w, {});
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(batch.at(0, c) == e1.global.vec.at(0, c));
    CHECK(batch.at(1, c) == e2.global.vec.at(0, c));
  }
}

}  // TEST_SUITE
