#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dcin/corpus.hpp"
#include "dcin/matrix.hpp"
#include "dcin/tensor.hpp"

namespace dcin::encoder {

enum class Source { kImage, kText };

struct GlobalEmbedding {
  Tensor vec;  // 1 x d, on the tape
  Source source = Source::kImage;
};

// Pooling over fragment rows. Mean is the default; the learned variant dots
// per-sorted-rank weights (renormalized to sum 1 over the first L ranks,
// L = fragment count) with each column sorted descending.
struct Pooling {
  std::optional<Tensor> weights;  // absent -> mean pooling
};

struct ImageEncoding {
  Tensor fragments;  // n x d
  GlobalEmbedding global;
};

struct TextEncoding {
  Tensor fragments;  // m x d
  GlobalEmbedding global;
};

// V = features * w_img, pooled to a 1 x d global embedding.
ImageEncoding encode_image(Tape& tape, const Matrix& region_features,
                           const Tensor& w_img, const Pooling& pooling);

// Token lookup into token_table (rows indexed by vocab position), then
// * w_txt, pooled as above.
TextEncoding encode_text(Tape& tape, const std::vector<std::string>& tokens,
                         const Vocab& vocab, const Tensor& token_table,
                         const Tensor& w_txt, const Pooling& pooling);

// Batched variants: fragments for all records stacked row-wise with segment
// offsets (offsets.size() == batch + 1). Returns the batch x d pooled matrix.
Tensor encode_images_batch(Tape& tape, const Matrix& stacked_features,
                           const std::vector<std::size_t>& offsets,
                           const Tensor& w_img, const Pooling& pooling);

Tensor encode_texts_batch(Tape& tape,
                          const std::vector<std::size_t>& token_indices,
                          const std::vector<std::size_t>& offsets,
                          const Tensor& token_table, const Tensor& w_txt,
                          const Pooling& pooling);

}  // namespace dcin::encoder
