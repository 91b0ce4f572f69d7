#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "dcin/errors.hpp"

namespace dcin {

enum class Modality { kVisual, kLinguistic };
enum class Category { kObject, kProperty, kAction, kGender, kStopword, kStratum };

std::string to_string(Modality m);
std::string to_string(Category c);
Modality modality_from_string(const std::string& s);
Category category_from_string(const std::string& s);

struct ConceptEntry {
  std::string id;
  std::string surface;
  Modality modality = Modality::kVisual;
  Category category = Category::kObject;
};

class Vocab {
public:
  Vocab() = default;
  explicit Vocab(std::vector<ConceptEntry> entries);

  const std::vector<ConceptEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool contains(const std::string& id) const;
  // -1 when absent.
  int index_of(const std::string& id) const;
  const ConceptEntry& entry(const std::string& id) const;
  const ConceptEntry& entry_at(std::size_t i) const { return entries_[i]; }

private:
  std::vector<ConceptEntry> entries_;
  std::unordered_map<std::string, int> index_;
};

struct PairRecord {
  std::string id;
  std::vector<std::string> visual_concepts;            // set semantics
  std::vector<std::vector<double>> region_features;    // n x d_v
  std::vector<std::string> caption_tokens;             // ordered
  std::optional<std::string> stratum_label;
};

enum class SplitTag { kTrain, kVal, kTest, kTestDebiased };

std::string to_string(SplitTag t);

struct Corpus {
  Vocab vocab;
  std::vector<PairRecord> records;
  SplitTag split = SplitTag::kTrain;
};

// Generative spec for one concept. Presence probability is per-stratum;
// a concept carrying an echo_source instead fires with echo_prob whenever the
// named visual concept is present in the same record (the direct image-to-
// caption channel). Without such links, image and caption content would be
// independent given the stratum and matching would carry no signal.
struct ConceptSpec {
  std::string id;
  std::string surface;
  Modality modality = Modality::kVisual;
  Category category = Category::kObject;
  std::map<std::string, double> prob_given;  // stratum id -> P(concept | z)
  std::optional<std::string> echo_source;
  double echo_prob = 0.0;
};

struct StratumSpec {
  std::string id;
  double prior = 0.0;
};

struct ScmSpec {
  std::vector<StratumSpec> strata;
  std::vector<ConceptSpec> concepts;
  // Visual concept id -> prototype feature vector (all of dimension
  // feature_dim). Missing concepts fall back to the zero prototype.
  std::map<std::string, std::vector<double>> prototypes;
  std::size_t feature_dim = 8;
  std::size_t regions_per_image = 6;
  double noise_scale = 0.1;
  // When set, generated strata are uniform and independent of every concept:
  // concepts fire at their marginal rate under the original priors, with
  // echo links kept intact.
  bool counterfactual = false;

  void validate() const;
  Vocab vocab() const;
  // P(concept) marginalized over the stratum prior (echo links not applied).
  double base_marginal(const ConceptSpec& c) const;
  const ConceptSpec& concept_spec(const std::string& id) const;
};

Corpus generate(const ScmSpec& spec, std::size_t n_records,
                std::uint64_t seed);

Corpus load_jsonl(const std::string& path, const Vocab& vocab);
void save_jsonl(const Corpus& corpus, const std::string& path);

Vocab load_vocab(const std::string& path);
void save_vocab(const Vocab& vocab, const std::string& path);

ScmSpec load_scm_spec(const std::string& path);

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct SplitResult {
  Corpus train;
  Corpus val;
  Corpus test;
};

SplitResult split(const Corpus& corpus, const SplitFractions& fractions,
                  std::uint64_t seed);

}  // namespace dcin
