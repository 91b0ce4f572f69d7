#include "dcin/stats.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <boost/multiprecision/cpp_int.hpp>

#include <json.hpp>

namespace dcin::stats {

using nlohmann::json;
using boost::multiprecision::cpp_int;

namespace {

// Exact rational accumulator. Values here stay tiny (sums of count ratios),
// so naive numerator/denominator bookkeeping with gcd reduction is plenty.
struct Rational {
  cpp_int num = 0;
  cpp_int den = 1;

  void add(const cpp_int& n, const cpp_int& d) {
    num = num * d + n * den;
    den *= d;
    reduce();
  }

  void reduce() {
    if (num == 0) {
      den = 1;
      return;
    }
    cpp_int g = boost::multiprecision::gcd(num, den);
    num /= g;
    den /= g;
  }

  double to_double() const {
    if (num == 0) return 0.0;
    const bool neg = num < 0;
    const double r = rational_to_double(neg ? cpp_int(-num) : num, den);
    return neg ? -r : r;
  }

  // Round-to-nearest-even conversion of n/d for n >= 1, d >= 1. Scales until
  // the integer quotient carries exactly 53 significand bits, then rounds on
  // the remainder.
  static double rational_to_double(const cpp_int& n, const cpp_int& d) {
    static const cpp_int kExact = cpp_int(1) << 53;
    if (n <= kExact && d <= kExact) {
      // Both operands exact in double; IEEE division rounds correctly.
      return n.convert_to<double>() / d.convert_to<double>();
    }
    long e = static_cast<long>(boost::multiprecision::msb(n)) -
             static_cast<long>(boost::multiprecision::msb(d)) - 52;
    cpp_int q, scaled_num, scaled_den;
    for (;;) {
      if (e >= 0) {
        scaled_num = n;
        scaled_den = d << e;
      } else {
        scaled_num = n << -e;
        scaled_den = d;
      }
      q = scaled_num / scaled_den;
      if (q < (cpp_int(1) << 52)) {
        --e;
        continue;
      }
      if (q >= (cpp_int(1) << 53)) {
        ++e;
        continue;
      }
      break;
    }
    const cpp_int twice_rem = (scaled_num - q * scaled_den) << 1;
    if (twice_rem > scaled_den ||
        (twice_rem == scaled_den && (q & 1) != 0)) {
      ++q;
    }
    return std::ldexp(q.convert_to<double>(), static_cast<int>(e));
  }
};

}  // namespace

int CoocTable::intern(const std::string& id) {
  auto it = index_.find(id);
  if (it != index_.end()) return it->second;
  if (ids_.size() >= 0x100000ULL) {
    throw ValidationError("cooc table: concept id space exhausted");
  }
  const int i = static_cast<int>(ids_.size());
  ids_.push_back(id);
  index_.emplace(id, i);
  return i;
}

int CoocTable::lookup(const std::string& id) const {
  auto it = index_.find(id);
  return it == index_.end() ? -1 : it->second;
}

std::uint64_t CoocTable::pair_key(int a, int b) const {
  const std::uint64_t lo = static_cast<std::uint64_t>(std::min(a, b));
  const std::uint64_t hi = static_cast<std::uint64_t>(std::max(a, b));
  return lo * 0x100000ULL + hi;  // ids stay far below 2^20
}

std::uint64_t CoocTable::triple_key(int x, int y, int z) const {
  return pair_key(x, y) * 0x100000ULL + static_cast<std::uint64_t>(z);
}

long long CoocTable::n1(const std::string& x) const {
  const int xi = lookup(x);
  if (xi < 0) return 0;
  auto it = n1_.find(xi);
  return it == n1_.end() ? 0 : it->second;
}

long long CoocTable::n2(const std::string& x, const std::string& y) const {
  const int xi = lookup(x), yi = lookup(y);
  if (xi < 0 || yi < 0) return 0;
  if (xi == yi) return n1(x);
  auto it = n2_.find(pair_key(xi, yi));
  return it == n2_.end() ? 0 : it->second;
}

long long CoocTable::nz(const std::string& z) const {
  const int zi = lookup(z);
  if (zi < 0) return 0;
  auto it = nz_.find(zi);
  return it == nz_.end() ? 0 : it->second;
}

long long CoocTable::nxz(const std::string& x, const std::string& z) const {
  const int xi = lookup(x), zi = lookup(z);
  if (xi < 0 || zi < 0) return 0;
  auto it = nxz_.find(pair_key(xi, zi) * 2 +
                      (xi <= zi ? 0 : 1));  // asymmetric role, keep both
  return it == nxz_.end() ? 0 : it->second;
}

long long CoocTable::nxyz(const std::string& x, const std::string& y,
                          const std::string& z) const {
  const int xi = lookup(x), yi = lookup(y), zi = lookup(z);
  if (xi < 0 || yi < 0 || zi < 0) return 0;
  if (xi == yi) return nxz(x, z);
  auto it = nxyz_.find(triple_key(xi, yi, zi));
  return it == nxyz_.end() ? 0 : it->second;
}

void CoocTable::merge(const CoocTable& other) {
  if (source_ != other.source_) {
    throw ValidationError("cooc merge: stratum sources differ");
  }
  total_ += other.total_;
  for (const auto& z : other.strata_) {
    if (std::find(strata_.begin(), strata_.end(), z) == strata_.end()) {
      strata_.push_back(z);
    }
  }
  // Remap the other table's interned ids into ours.
  std::vector<int> remap(other.ids_.size());
  for (std::size_t i = 0; i < other.ids_.size(); ++i) {
    remap[i] = intern(other.ids_[i]);
  }
  for (const auto& [k, v] : other.n1_) n1_[remap[k]] += v;
  for (const auto& [k, v] : other.nz_) nz_[remap[k]] += v;
  auto unpack_pair = [](std::uint64_t key) {
    return std::pair<int, int>(static_cast<int>(key / 0x100000ULL),
                               static_cast<int>(key % 0x100000ULL));
  };
  for (const auto& [k, v] : other.n2_) {
    auto [a, b] = unpack_pair(k);
    n2_[pair_key(remap[a], remap[b])] += v;
  }
  for (const auto& [k, v] : other.nxz_) {
    const int flip = static_cast<int>(k & 1);
    auto [a, b] = unpack_pair(k >> 1);
    // Recover (x, z) from the canonical pair plus role bit.
    int x = flip == 0 ? a : b;
    int z = flip == 0 ? b : a;
    const int rx = remap[x], rz = remap[z];
    nxz_[pair_key(rx, rz) * 2 + (rx <= rz ? 0 : 1)] += v;
  }
  for (const auto& [k, v] : other.nxyz_) {
    const int z = static_cast<int>(k % 0x100000ULL);
    auto [a, b] = unpack_pair(k / 0x100000ULL);
    nxyz_[triple_key(remap[a], remap[b], remap[z])] += v;
  }
}

CoocTable count(const Corpus& corpus, const Vocab& vocab, StratumSource source,
                const std::vector<std::string>& stratum_concepts) {
  if (corpus.records.empty()) {
    throw ValidationError("count: empty corpus");
  }
  if (source == StratumSource::kConceptSet && stratum_concepts.empty()) {
    throw ValidationError("count: concept-set strata need a confounder list");
  }
  CoocTable t;
  t.source_ = source;
  if (source == StratumSource::kConceptSet) {
    for (const auto& z : stratum_concepts) {
      if (!vocab.contains(z)) {
        throw VocabularyError("count: unknown confounder concept '" + z + "'");
      }
      t.strata_.push_back(z);
      t.intern(z);
    }
  }

  std::vector<int> present;
  std::vector<int> strata;
  for (const auto& rec : corpus.records) {
    present.clear();
    for (const auto& c : rec.visual_concepts) {
      if (!vocab.contains(c)) {
        throw VocabularyError("count: unknown concept '" + c +
                              "' in record '" + rec.id + "'");
      }
      present.push_back(t.intern(c));
    }
    for (const auto& c : rec.caption_tokens) {
      if (!vocab.contains(c)) {
        throw VocabularyError("count: unknown concept '" + c +
                              "' in record '" + rec.id + "'");
      }
      present.push_back(t.intern(c));
    }
    std::sort(present.begin(), present.end());
    present.erase(std::unique(present.begin(), present.end()), present.end());

    strata.clear();
    if (source == StratumSource::kExplicitLabel) {
      if (!rec.stratum_label) {
        throw ValidationError("count: record '" + rec.id +
                              "' has no stratum label");
      }
      const int zi = t.intern(*rec.stratum_label);
      if (std::find(t.strata_.begin(), t.strata_.end(), *rec.stratum_label) ==
          t.strata_.end()) {
        t.strata_.push_back(*rec.stratum_label);
      }
      strata.push_back(zi);
    } else {
      for (const auto& z : stratum_concepts) {
        const int zi = t.lookup(z);
        if (std::binary_search(present.begin(), present.end(), zi)) {
          strata.push_back(zi);
        }
      }
    }

    ++t.total_;
    for (int z : strata) ++t.nz_[z];
    for (std::size_t a = 0; a < present.size(); ++a) {
      const int x = present[a];
      ++t.n1_[x];
      for (int z : strata) {
        ++t.nxz_[t.pair_key(x, z) * 2 + (x <= z ? 0 : 1)];
      }
      for (std::size_t b = a + 1; b < present.size(); ++b) {
        const int y = present[b];
        ++t.n2_[t.pair_key(x, y)];
        for (int z : strata) {
          ++t.nxyz_[t.triple_key(x, y, z)];
        }
      }
    }
  }
  return t;
}

double cond_prob(const CoocTable& table, const std::string& x,
                 const std::string& y) {
  const long long nx = table.n1(x);
  if (nx == 0) {
    throw UndefinedConditionalError("cond_prob: concept '" + x +
                                    "' never occurs");
  }
  return static_cast<double>(table.n2(x, y)) / static_cast<double>(nx);
}

double do_prob(const CoocTable& table, const std::string& x,
               const std::string& y, const std::vector<std::string>& strata,
               std::vector<std::string>* skipped_strata) {
  if (strata.empty()) {
    throw ValidationError("do_prob: empty stratum set");
  }
  const long long nx = table.n1(x);
  if (nx == 0) {
    throw UndefinedConditionalError("do_prob: concept '" + x +
                                    "' never occurs");
  }
  const long long N = table.total();
  Rational acc;
  bool any_overlap = false;
  for (const auto& z : strata) {
    const long long cxz = table.nxz(x, z);
    if (cxz == 0) {
      if (skipped_strata) skipped_strata->push_back(z);
      continue;
    }
    any_overlap = true;
    const long long cxyz = table.nxyz(x, y, z);
    const long long cz = table.nz(z);
    // P(y,x,z) P(z) / P(x,z) = n(x,y,z) n(z) / (N n(x,z)).
    acc.add(cpp_int(cxyz) * cz, cpp_int(N) * cxz);
  }
  if (!any_overlap) {
    throw NoOverlapError("do_prob: no stratum co-occurs with '" + x + "'");
  }
  return acc.to_double();
}

double oracle_do_prob(const ScmSpec& spec, const std::string& x,
                      const std::string& y) {
  if (x == y) return 1.0;
  const ConceptSpec& cy = spec.concept_spec(y);
  spec.concept_spec(x);  // existence check
  if (cy.echo_source && *cy.echo_source == x) {
    // do(x) forces the echo source on, so y fires at its echo rate.
    return cy.echo_prob;
  }
  double p = 0.0;
  for (const auto& z : spec.strata) {
    double py = cy.prob_given.at(z.id);
    if (cy.echo_source) {
      const ConceptSpec& src = spec.concept_spec(*cy.echo_source);
      const double ps = src.prob_given.at(z.id);
      py = ps * cy.echo_prob + (1.0 - ps) * py;
    }
    p += z.prior * py;
  }
  return p;
}

std::string CoocTable::to_json_string() const {
  json j;
  j["total"] = total_;
  j["source"] =
      source_ == StratumSource::kExplicitLabel ? "explicit" : "concepts";
  j["strata"] = strata_;
  json jn1 = json::object();
  for (const auto& [k, v] : n1_) jn1[ids_[k]] = v;
  j["n1"] = jn1;
  json jnz = json::object();
  for (const auto& [k, v] : nz_) jnz[ids_[k]] = v;
  j["nz"] = jnz;
  json jn2 = json::object();
  for (const auto& [k, v] : n2_) {
    const int a = static_cast<int>(k / 0x100000ULL);
    const int b = static_cast<int>(k % 0x100000ULL);
    const std::string lo = std::min(ids_[a], ids_[b]);
    const std::string hi = std::max(ids_[a], ids_[b]);
    jn2[lo][hi] = v;
  }
  j["n2"] = jn2;
  json jnxz = json::object();
  for (const auto& [k, v] : nxz_) {
    const int flip = static_cast<int>(k & 1);
    const std::uint64_t pk = k >> 1;
    const int a = static_cast<int>(pk / 0x100000ULL);
    const int b = static_cast<int>(pk % 0x100000ULL);
    const int x = flip == 0 ? a : b;
    const int z = flip == 0 ? b : a;
    jnxz[ids_[x]][ids_[z]] = v;
  }
  j["nxz"] = jnxz;
  json jnxyz = json::object();
  for (const auto& [k, v] : nxyz_) {
    const int z = static_cast<int>(k % 0x100000ULL);
    const std::uint64_t pk = k / 0x100000ULL;
    const int a = static_cast<int>(pk / 0x100000ULL);
    const int b = static_cast<int>(pk % 0x100000ULL);
    const std::string lo = std::min(ids_[a], ids_[b]);
    const std::string hi = std::max(ids_[a], ids_[b]);
    jnxyz[lo][hi][ids_[z]] = v;
  }
  j["nxyz"] = jnxyz;
  return j.dump(2);
}

RelationMatrix build_relation_matrix(const CoocTable& table,
                                     const std::vector<std::string>& visual,
                                     const std::vector<std::string>& linguistic,
                                     RelationWarnings* warnings) {
  RelationMatrix rm;
  rm.n_visual = visual.size();
  rm.concepts = visual;
  rm.concepts.insert(rm.concepts.end(), linguistic.begin(), linguistic.end());
  const std::size_t n = rm.concepts.size();
  for (const auto& c : rm.concepts) {
    if (table.n1(c) == 0) {
      throw ValidationError("relation matrix: concept '" + c +
                            "' absent from the co-occurrence table");
    }
  }
  rm.e = Matrix(n, n);

  const bool explicit_labels = table.source() == StratumSource::kExplicitLabel;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) {
        rm.e.at(i, j) = 1.0;  // self-loop keeps each concept dominant
        continue;
      }
      std::vector<std::string> strata;
      if (explicit_labels) {
        strata = table.strata();
      } else {
        const bool iv = i < rm.n_visual, jv = j < rm.n_visual;
        auto add_from = [&](const std::vector<std::string>& src) {
          for (const auto& z : src) {
            if (z != rm.concepts[i] && z != rm.concepts[j]) {
              strata.push_back(z);
            }
          }
        };
        if (iv && jv) {
          add_from(visual);
        } else if (!iv && !jv) {
          add_from(linguistic);
        } else {
          add_from(visual);
          add_from(linguistic);
        }
      }
      double e;
      try {
        e = strata.empty()
                ? 0.0
                : do_prob(table, rm.concepts[i], rm.concepts[j], strata);
      } catch (const NoOverlapError&) {
        e = 0.0;
        if (warnings) {
          warnings->no_overlap_pairs.push_back(rm.concepts[i] + "->" +
                                               rm.concepts[j]);
        }
      }
      rm.e.at(i, j) = std::min(1.0, std::max(0.0, e));
    }
  }
  return rm;
}

std::string RelationMatrix::to_json_string() const {
  json j;
  j["concepts"] = concepts;
  j["n_visual"] = n_visual;
  json rows = json::array();
  for (std::size_t i = 0; i < e.rows; ++i) {
    json row = json::array();
    for (std::size_t c = 0; c < e.cols; ++c) row.push_back(e.at(i, c));
    rows.push_back(row);
  }
  j["e"] = rows;
  return j.dump(2);
}

}  // namespace dcin::stats
