#pragma once

#include "dcin/encoder.hpp"
#include "dcin/tensor.hpp"

namespace dcin::deconfound {

// Parameters of the causal intervention head. The dictionary expectation is
// mlp(softmax(D q) D); the two fusion branches are separate linear layers
// over the concatenation of the sqrt-weighted embedding and dictionary
// context (bias included, no output nonlinearity: tanh wraps the product).
struct HeadParams {
  Tensor mlp_w1;  // d x d
  Tensor mlp_b1;  // d
  Tensor mlp_w2;  // d x d
  Tensor mlp_b2;  // d
  Tensor psi_v_w;  // 2d x d
  Tensor psi_v_b;  // d
  Tensor psi_t_w;  // 2d x d
  Tensor psi_t_b;  // d
  double lambda = 0.05;

  void validate() const;
};

struct DictAttention {
  Tensor weights;  // B x 2k, rows sum to 1
  Tensor context;  // B x d
};

// Attention of each query row over the dictionary rows: one row-softmax of
// D q per query, context = weights^T D.
DictAttention attend_dict(Tape& tape, const Tensor& dict,
                          const Tensor& queries);

// E_D[D | q] = mlp(attend(dict, q).context), one row per query.
Tensor expect_dict(Tape& tape, const Tensor& dict, const Tensor& queries,
                   const HeadParams& head);

// psi branch: psi(concat(sqrt(1-lambda) emb, sqrt(lambda) dict_ctx)).
Tensor fuse_branch(Tape& tape, const Tensor& embeddings,
                   const Tensor& dict_context, const Tensor& psi_w,
                   const Tensor& psi_b, double lambda);

// S[i][j] = tanh(u_i . w_j) where u/w are the fused image/text branches.
// Dictionary expectations are computed once per embedding, not per pair.
Tensor score_batch(Tape& tape, const Tensor& image_embeddings,
                   const Tensor& text_embeddings, const Tensor& dict,
                   const HeadParams& head);

// Single-pair score; identical arithmetic to the corresponding batch entry.
Tensor score_pair(Tape& tape, const encoder::GlobalEmbedding& image,
                  const encoder::GlobalEmbedding& text, const Tensor& dict,
                  const HeadParams& head);

}  // namespace dcin::deconfound
