#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "dcin/corpus.hpp"
#include "dcin/matrix.hpp"

namespace dcin::stats {

enum class StratumSource { kExplicitLabel, kConceptSet };

// Exact integer co-occurrence counts with record-level set semantics: a
// concept counts once per record no matter how often it appears. Strata come
// either from explicit labels (a partition) or from confounder-concept
// presence (possibly overlapping).
class CoocTable {
public:
  long long total() const { return total_; }

  long long n1(const std::string& x) const;
  long long n2(const std::string& x, const std::string& y) const;
  long long nz(const std::string& z) const;
  long long nxz(const std::string& x, const std::string& z) const;
  long long nxyz(const std::string& x, const std::string& y,
                 const std::string& z) const;

  // Stratum ids observed at count time, in first-seen order.
  const std::vector<std::string>& strata() const { return strata_; }
  StratumSource source() const { return source_; }

  // Field-wise addition; tables form a commutative monoid so shard order
  // never matters.
  void merge(const CoocTable& other);

  std::string to_json_string() const;

private:
  friend CoocTable count(const Corpus&, const Vocab&, StratumSource,
                         const std::vector<std::string>&);

  int intern(const std::string& id);
  int lookup(const std::string& id) const;  // -1 when absent
  std::uint64_t pair_key(int a, int b) const;
  std::uint64_t triple_key(int x, int y, int z) const;

  std::vector<std::string> ids_;
  std::unordered_map<std::string, int> index_;
  std::vector<std::string> strata_;
  StratumSource source_ = StratumSource::kExplicitLabel;
  long long total_ = 0;
  std::unordered_map<int, long long> n1_;
  std::unordered_map<std::uint64_t, long long> n2_;  // canonical min,max key
  std::unordered_map<int, long long> nz_;
  std::unordered_map<std::uint64_t, long long> nxz_;
  std::unordered_map<std::uint64_t, long long> nxyz_;
};

// stratum_concepts is required for kConceptSet and ignored otherwise.
CoocTable count(const Corpus& corpus, const Vocab& vocab, StratumSource source,
                const std::vector<std::string>& stratum_concepts = {});

// P(y | x) = n2(x,y) / n1(x), exact integer ratio converted to float.
double cond_prob(const CoocTable& table, const std::string& x,
                 const std::string& y);

// Backdoor-adjusted P(y | do(x)) = sum_z n(x,y,z) n(z) / (N n(x,z)),
// accumulated as an exact rational before one float conversion. Strata with
// n(x,z) = 0 contribute nothing and are reported through skipped_strata.
double do_prob(const CoocTable& table, const std::string& x,
               const std::string& y, const std::vector<std::string>& strata,
               std::vector<std::string>* skipped_strata = nullptr);

// Closed-form interventional probability under the generator's factorization
// (concepts independent given the stratum, with echo links applied). Test
// oracle; never consulted by the estimation path.
double oracle_do_prob(const ScmSpec& spec, const std::string& x,
                      const std::string& y);

struct RelationMatrix {
  std::vector<std::string> concepts;  // visual block first, then linguistic
  std::size_t n_visual = 0;
  Matrix e;

  std::string to_json_string() const;
};

struct RelationWarnings {
  std::vector<std::string> no_overlap_pairs;
};

// E[i][j] = P(concept_j | do(concept_i)), clamped to [0,1], diagonal pinned
// to 1. With explicit labels every pair adjusts over the label strata; with
// concept strata, same-modality pairs use their own dictionary and
// cross-modality pairs the union, excluding x and y themselves. Pairs with no
// stratum overlap get 0 and are reported.
RelationMatrix build_relation_matrix(const CoocTable& table,
                                     const std::vector<std::string>& visual,
                                     const std::vector<std::string>& linguistic,
                                     RelationWarnings* warnings = nullptr);

}  // namespace dcin::stats
