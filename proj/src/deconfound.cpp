#include "dcin/deconfound.hpp"

#include <cmath>

namespace dcin::deconfound {

void HeadParams::validate() const {
  if (lambda < 0.0 || lambda > 1.0) {
    throw ConfigError("confidence lambda " + std::to_string(lambda) +
                      " outside [0,1]");
  }
}

DictAttention attend_dict(Tape& tape, const Tensor& dict,
                          const Tensor& queries) {
  // scores: B x 2k, one row per query.
  Tensor scores = tape.matmul(queries, tape.transpose(dict));
  Tensor weights = tape.softmax_rows(scores);
  Tensor context = tape.matmul(weights, dict);
  return {weights, context};
}

Tensor expect_dict(Tape& tape, const Tensor& dict, const Tensor& queries,
                   const HeadParams& head) {
  DictAttention att = attend_dict(tape, dict, queries);
  Tensor h = tape.tanh(
      tape.add_rowvec(tape.matmul(att.context, head.mlp_w1), head.mlp_b1));
  return tape.add_rowvec(tape.matmul(h, head.mlp_w2), head.mlp_b2);
}

Tensor fuse_branch(Tape& tape, const Tensor& embeddings,
                   const Tensor& dict_context, const Tensor& psi_w,
                   const Tensor& psi_b, double lambda) {
  const double w_emb = std::sqrt(1.0 - lambda);
  const double w_dict = std::sqrt(lambda);
  Tensor joined = tape.concat_cols(tape.scale(embeddings, w_emb),
                                   tape.scale(dict_context, w_dict));
  return tape.add_rowvec(tape.matmul(joined, psi_w), psi_b);
}

Tensor score_batch(Tape& tape, const Tensor& image_embeddings,
                   const Tensor& text_embeddings, const Tensor& dict,
                   const HeadParams& head) {
  head.validate();
  Tensor img_ctx = expect_dict(tape, dict, image_embeddings, head);
  Tensor txt_ctx = expect_dict(tape, dict, text_embeddings, head);
  Tensor u = fuse_branch(tape, image_embeddings, img_ctx, head.psi_v_w,
                         head.psi_v_b, head.lambda);
  Tensor w = fuse_branch(tape, text_embeddings, txt_ctx, head.psi_t_w,
                         head.psi_t_b, head.lambda);
  return tape.tanh(tape.matmul(u, tape.transpose(w)));
}

Tensor score_pair(Tape& tape, const encoder::GlobalEmbedding& image,
                  const encoder::GlobalEmbedding& text, const Tensor& dict,
                  const HeadParams& head) {
  Tensor s = score_batch(tape, image.vec, text.vec, dict, head);
  return tape.take(s, {0});
}

}  // namespace dcin::deconfound
