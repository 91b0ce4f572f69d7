#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dcin/corpus.hpp"
#include "dcin/deconfound.hpp"
#include "dcin/dictionary.hpp"
#include "dcin/matrix.hpp"
#include "dcin/stats.hpp"
#include "dcin/tensor.hpp"

namespace dcin::model {

struct Settings {
  std::size_t d = 32;
  std::size_t d_t = 16;
  std::size_t k = 8;
  std::array<std::size_t, 3> ratio{7, 2, 1};
  std::size_t gcn_layers = 1;
  double lambda = 0.05;
  bool learned_pool = false;
  stats::StratumSource strata_source = stats::StratumSource::kExplicitLabel;
  // Confounder concepts for concept-set strata; empty means "use the
  // selected dictionary concepts".
  std::vector<std::string> stratum_concepts;
  std::uint64_t seed = 42;

  void validate() const;
};

// The full matching model: confounder dictionary, debiased relation graph,
// encoders, and the intervention head, with every learnable tensor in one
// named map.
struct DcinModel {
  Settings cfg;
  std::size_t d_v = 0;       // region feature width, inferred from the corpus
  std::size_t n_regions = 0; // region rows per record
  std::size_t pool_len_txt = 0;
  Vocab vocab;
  dictionary::Selection selection;
  Matrix a_tilde;
  std::map<std::string, Tensor> params;

  static DcinModel build(const Corpus& train, const Settings& settings);

  const Tensor& param(const std::string& name) const;
  Tensor& param(const std::string& name);
  std::vector<std::string> trainable_names() const;

  // Deep copy of all parameter buffers (fresh identities).
  std::map<std::string, Tensor> clone_params() const;
  void restore_params(const std::map<std::string, Tensor>& snapshot);

  // Records whose captions are non-empty; the only ones the matching path
  // can encode.
  std::vector<std::size_t> eligible_indices(const Corpus& corpus) const;

  // GCN-propagated confounder dictionary D = gcn([D1; D2]), on the tape.
  Tensor dictionary_tensor(Tape& tape) const;

  Tensor encode_image_batch(Tape& tape, const Corpus& corpus,
                            const std::vector<std::size_t>& idx) const;
  Tensor encode_text_batch(Tape& tape, const Corpus& corpus,
                           const std::vector<std::size_t>& idx) const;

  deconfound::HeadParams head(
      std::optional<double> lambda_override = std::nullopt) const;

  // Full forward: S[i][j] over the given records (rows: images, cols: texts).
  Tensor score_matrix(Tape& tape, const Corpus& corpus,
                      const std::vector<std::size_t>& idx,
                      std::optional<double> lambda_override = std::nullopt) const;
};

// Tensor-map serialization: {"format_version": 1, "tensors": {name: {shape,
// data}}}. Floats print as shortest round-trip decimals.
std::string tensors_to_json(const std::map<std::string, Tensor>& tensors);
std::map<std::string, Tensor> tensors_from_json(const std::string& text);

std::string checkpoint_to_json(const DcinModel& m, bool timestamp);
DcinModel checkpoint_from_json(const std::string& text);

void save_checkpoint(const DcinModel& m, const std::string& path,
                     bool timestamp);
DcinModel load_checkpoint(const std::string& path);

}  // namespace dcin::model
