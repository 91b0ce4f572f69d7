#include "dcin/dictionary.hpp"

#include <algorithm>
#include <set>
#include <unordered_map>

#include "dcin/rng.hpp"

namespace dcin::dictionary {

namespace {

// Quota bucket for selection purposes: gender folds into object.
int bucket_of(Category c) {
  switch (c) {
    case Category::kObject:
    case Category::kGender:
      return 0;
    case Category::kProperty:
      return 1;
    case Category::kAction:
      return 2;
    default:
      return -1;  // stopword, stratum: never selectable
  }
}

std::vector<std::string> select_modality(
    const std::vector<std::pair<std::string, long long>>& freq,
    const Vocab& vocab, Modality modality, std::size_t k,
    std::array<std::size_t, 3> ratio) {
  const std::size_t ratio_sum = ratio[0] + ratio[1] + ratio[2];
  if (ratio_sum == 0) throw ValidationError("select_concepts: zero ratio");

  // Quotas by largest remainder, leftover units to the earliest buckets.
  std::size_t quota[3];
  std::size_t assigned = 0;
  for (int b = 0; b < 3; ++b) {
    quota[b] = k * ratio[b] / ratio_sum;
    assigned += quota[b];
  }
  for (int b = 0; assigned < k; b = (b + 1) % 3) {
    if (ratio[b] > 0) {
      ++quota[b];
      ++assigned;
    }
  }

  std::vector<std::vector<std::pair<std::string, long long>>> buckets(3);
  for (const auto& [id, n] : freq) {
    const ConceptEntry& e = vocab.entry(id);
    if (e.modality != modality) continue;
    const int b = bucket_of(e.category);
    if (b < 0) continue;
    buckets[b].push_back({id, n});
  }

  static const char* kBucketNames[3] = {"object", "property", "action"};
  std::vector<std::string> out;
  for (int b = 0; b < 3; ++b) {
    auto& bucket = buckets[b];
    if (bucket.size() < quota[b]) {
      throw ValidationError(
          std::string("select_concepts: ") + to_string(modality) + " " +
          kBucketNames[b] + " concepts short by " +
          std::to_string(quota[b] - bucket.size()) + " (need " +
          std::to_string(quota[b]) + ", have " +
          std::to_string(bucket.size()) + ")");
    }
    std::sort(bucket.begin(), bucket.end(),
              [](const auto& a, const auto& b2) {
                if (a.second != b2.second) return a.second > b2.second;
                return a.first < b2.first;
              });
    for (std::size_t i = 0; i < quota[b]; ++i) out.push_back(bucket[i].first);
  }
  return out;
}

}  // namespace

Selection select_concepts(const Corpus& corpus, const Vocab& vocab,
                          std::size_t k, std::array<std::size_t, 3> ratio) {
  if (k == 0) throw ValidationError("select_concepts: k must be positive");
  std::unordered_map<std::string, long long> counts;
  std::set<std::string> seen;
  for (const auto& rec : corpus.records) {
    seen.clear();
    for (const auto& c : rec.visual_concepts) seen.insert(c);
    for (const auto& c : rec.caption_tokens) seen.insert(c);
    for (const auto& c : seen) ++counts[c];
  }
  std::vector<std::pair<std::string, long long>> freq(counts.begin(),
                                                      counts.end());
  Selection sel;
  sel.visual = select_modality(freq, vocab, Modality::kVisual, k, ratio);
  sel.linguistic =
      select_modality(freq, vocab, Modality::kLinguistic, k, ratio);
  return sel;
}

Matrix build_visual_prototypes(const Corpus& corpus,
                               const std::vector<std::string>& concepts) {
  if (concepts.empty()) {
    throw ValidationError("build_visual_prototypes: no concepts");
  }
  std::size_t d_v = 0;
  for (const auto& rec : corpus.records) {
    if (!rec.region_features.empty()) {
      d_v = rec.region_features.front().size();
      break;
    }
  }
  if (d_v == 0) {
    throw CoverageError("build_visual_prototypes: corpus has no features");
  }

  Matrix proto(concepts.size(), d_v);
  std::vector<double> image_mean(d_v);
  std::vector<long long> support(concepts.size(), 0);
  std::unordered_map<std::string, std::size_t> concept_row;
  for (std::size_t i = 0; i < concepts.size(); ++i) {
    concept_row[concepts[i]] = i;
  }

  for (const auto& rec : corpus.records) {
    if (rec.region_features.empty()) continue;
    std::fill(image_mean.begin(), image_mean.end(), 0.0);
    const double inv_r = 1.0 / static_cast<double>(rec.region_features.size());
    for (const auto& row : rec.region_features) {
      for (std::size_t d = 0; d < d_v; ++d) image_mean[d] += row[d] * inv_r;
    }
    for (const auto& c : rec.visual_concepts) {
      auto it = concept_row.find(c);
      if (it == concept_row.end()) continue;
      const std::size_t i = it->second;
      ++support[i];
      for (std::size_t d = 0; d < d_v; ++d) {
        proto.at(i, d) += image_mean[d];
      }
    }
  }
  for (std::size_t i = 0; i < concepts.size(); ++i) {
    if (support[i] == 0) {
      throw CoverageError("build_visual_prototypes: concept '" + concepts[i] +
                          "' has no supporting images");
    }
    const double inv = 1.0 / static_cast<double>(support[i]);
    for (std::size_t d = 0; d < d_v; ++d) proto.at(i, d) *= inv;
  }
  return proto;
}

Matrix build_linguistic_embeddings(
    const std::vector<std::string>& concepts, std::size_t d_t,
    std::uint64_t seed,
    const std::map<std::string, std::vector<double>>* external_table) {
  if (d_t < 1) {
    throw ValidationError("build_linguistic_embeddings: d_t must be >= 1");
  }
  Matrix table(concepts.size(), d_t);
  if (external_table) {
    for (std::size_t i = 0; i < concepts.size(); ++i) {
      auto it = external_table->find(concepts[i]);
      if (it == external_table->end()) {
        throw VocabularyError("external embedding table missing concept '" +
                              concepts[i] + "'");
      }
      if (it->second.size() != d_t) {
        throw DimensionError("external embedding for '" + concepts[i] +
                             "' has " + std::to_string(it->second.size()) +
                             " dims, expected " + std::to_string(d_t));
      }
      for (std::size_t d = 0; d < d_t; ++d) table.at(i, d) = it->second[d];
    }
    return table;
  }
  Rng rng = SeedStream(seed).stream("dict_embed");
  for (std::size_t i = 0; i < concepts.size(); ++i) {
    for (std::size_t d = 0; d < d_t; ++d) {
      table.at(i, d) = 0.1 * rng.gaussian();
    }
  }
  return table;
}

std::pair<Tensor, Tensor> ConfounderDictionary::project(Tape& tape) const {
  return {tape.matmul(g_v, w_v), tape.matmul(g_t, w_t)};
}

}  // namespace dcin::dictionary
