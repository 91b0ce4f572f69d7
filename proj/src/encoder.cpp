#include "dcin/encoder.hpp"

namespace dcin::encoder {

namespace {

Tensor pool(Tape& tape, const Tensor& fragments,
            const std::vector<std::size_t>& offsets, const Pooling& pooling) {
  if (pooling.weights) {
    return tape.sorted_pool_segments(fragments, *pooling.weights, offsets);
  }
  return tape.mean_segments(fragments, offsets);
}

Tensor features_tensor(const Matrix& m) {
  return Tensor::from_data({m.rows, m.cols}, m.data);
}

}  // namespace

ImageEncoding encode_image(Tape& tape, const Matrix& region_features,
                           const Tensor& w_img, const Pooling& pooling) {
  if (region_features.rows == 0) {
    throw ValidationError("encode_image: no regions");
  }
  Tensor v = tape.matmul(features_tensor(region_features), w_img);
  Tensor pooled = pool(tape, v, {0, v.rows()}, pooling);
  return {v, {pooled, Source::kImage}};
}

TextEncoding encode_text(Tape& tape, const std::vector<std::string>& tokens,
                         const Vocab& vocab, const Tensor& token_table,
                         const Tensor& w_txt, const Pooling& pooling) {
  if (tokens.empty()) {
    throw ValidationError("encode_text: no tokens");
  }
  std::vector<std::size_t> idx;
  idx.reserve(tokens.size());
  for (const auto& tok : tokens) {
    const int i = vocab.index_of(tok);
    if (i < 0) {
      throw VocabularyError("encode_text: unknown token '" + tok + "'");
    }
    idx.push_back(static_cast<std::size_t>(i));
  }
  Tensor rows = tape.select_rows(token_table, idx);
  Tensor t = tape.matmul(rows, w_txt);
  Tensor pooled = pool(tape, t, {0, t.rows()}, pooling);
  return {t, {pooled, Source::kText}};
}

Tensor encode_images_batch(Tape& tape, const Matrix& stacked_features,
                           const std::vector<std::size_t>& offsets,
                           const Tensor& w_img, const Pooling& pooling) {
  if (stacked_features.rows == 0) {
    throw ValidationError("encode_images_batch: no regions");
  }
  Tensor v = tape.matmul(features_tensor(stacked_features), w_img);
  return pool(tape, v, offsets, pooling);
}

Tensor encode_texts_batch(Tape& tape,
                          const std::vector<std::size_t>& token_indices,
                          const std::vector<std::size_t>& offsets,
                          const Tensor& token_table, const Tensor& w_txt,
                          const Pooling& pooling) {
  if (token_indices.empty()) {
    throw ValidationError("encode_texts_batch: no tokens");
  }
  Tensor rows = tape.select_rows(token_table, token_indices);
  Tensor t = tape.matmul(rows, w_txt);
  return pool(tape, t, offsets, pooling);
}

}  // namespace dcin::encoder
