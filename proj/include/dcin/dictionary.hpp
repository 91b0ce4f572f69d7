#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dcin/corpus.hpp"
#include "dcin/matrix.hpp"
#include "dcin/tensor.hpp"

namespace dcin::dictionary {

struct Selection {
  std::vector<std::string> visual;
  std::vector<std::string> linguistic;
};

// Top-k confounder concepts per modality, ranked by record frequency with
// stopwords excluded and a per-category quota split by ratio over
// object : property : action (gender shares the object quota). Ties break by
// (frequency desc, id asc).
Selection select_concepts(const Corpus& corpus, const Vocab& vocab,
                          std::size_t k, std::array<std::size_t, 3> ratio);

// Row i = mean over images containing concept i of that image's mean region
// feature.
Matrix build_visual_prototypes(const Corpus& corpus,
                               const std::vector<std::string>& concepts);

// Deterministic seeded gaussian table (0.1 * N(0,1) per coordinate), one row
// per concept; rows from external_table override when provided and must cover
// every concept.
Matrix build_linguistic_embeddings(
    const std::vector<std::string>& concepts, std::size_t d_t,
    std::uint64_t seed,
    const std::map<std::string, std::vector<double>>* external_table = nullptr);

// The confounder dictionary: frozen prototype matrices plus the learnable
// projections into the common d-space.
struct ConfounderDictionary {
  std::vector<std::string> concepts;  // visual block then linguistic block
  std::size_t n_visual = 0;
  Tensor g_v;  // k x d_v, frozen
  Tensor g_t;  // k x d_t, frozen
  Tensor w_v;  // d_v x d, learnable
  Tensor w_t;  // d_t x d, learnable

  // D1 = g_v * w_v and D2 = g_t * w_t, recorded on the tape.
  std::pair<Tensor, Tensor> project(Tape& tape) const;
};

}  // namespace dcin::dictionary
