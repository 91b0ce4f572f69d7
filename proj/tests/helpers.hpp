#pragma once

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <boost/multiprecision/cpp_int.hpp>

#include "dcin/corpus.hpp"
#include "dcin/rng.hpp"
#include "dcin/tensor.hpp"

namespace testutil {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("dcin_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

using boost::multiprecision::cpp_int;
using boost::multiprecision::cpp_rational;

// The worked 10-record fixture used across the stats tests:
//   4 x {child, school | indoor}, 1 x {child, cookout | outdoor},
//   3 x {adult, school | indoor}, 2 x {adult | outdoor}.
// child/adult are visual concepts, school/cookout caption words.
inline dcin::Corpus make_c0() {
  using namespace dcin;
  std::vector<ConceptEntry> entries = {
      {"child", "child", Modality::kVisual, Category::kObject},
      {"adult", "adult", Modality::kVisual, Category::kObject},
      {"school", "school", Modality::kLinguistic, Category::kObject},
      {"cookout", "cookout", Modality::kLinguistic, Category::kObject},
      {"indoor", "indoor", Modality::kVisual, Category::kStratum},
      {"outdoor", "outdoor", Modality::kVisual, Category::kStratum},
  };
  Corpus corpus;
  corpus.vocab = Vocab(entries);
  int next_id = 0;
  auto add = [&](const std::string& vis, const std::string& cap,
                 const std::string& z, int copies) {
    for (int i = 0; i < copies; ++i) {
      PairRecord rec;
      rec.id = "c0_" + std::to_string(next_id++);
      rec.visual_concepts.push_back(vis);
      if (!cap.empty()) rec.caption_tokens.push_back(cap);
      rec.stratum_label = z;
      rec.region_features = {{0.0, 0.0}};
      corpus.records.push_back(rec);
    }
  };
  add("child", "school", "indoor", 4);
  add("child", "cookout", "outdoor", 1);
  add("adult", "school", "indoor", 3);
  add("adult", "", "outdoor", 2);
  return corpus;
}

inline bool record_has(const dcin::PairRecord& rec, const std::string& c) {
  for (const auto& v : rec.visual_concepts) {
    if (v == c) return true;
  }
  for (const auto& t : rec.caption_tokens) {
    if (t == c) return true;
  }
  return false;
}

// Correctly rounded double for an exact rational, via a 50-digit binary
// float intermediate (wide enough that double rounding cannot bite for the
// denominators these tests produce).
inline double rational_as_double(const cpp_rational& r) {
  using wide = boost::multiprecision::cpp_bin_float_50;
  return r.convert_to<wide>().convert_to<double>();
}

// Independent brute-force backdoor oracle: scans the corpus per query and
// assembles sum_z P(y|x,z) P(z) from raw record counts in exact rationals.
// No CoocTable involved.
inline double brute_force_do_prob(const dcin::Corpus& corpus,
                                  const std::string& x, const std::string& y,
                                  const std::vector<std::string>& strata) {
  const long long total = static_cast<long long>(corpus.records.size());
  cpp_rational sum = 0;
  for (const auto& z : strata) {
    long long mz = 0, mxz = 0, mxyz = 0;
    for (const auto& rec : corpus.records) {
      const bool in_z = rec.stratum_label && *rec.stratum_label == z;
      if (!in_z) continue;
      ++mz;
      if (!record_has(rec, x)) continue;
      ++mxz;
      if (x == y || record_has(rec, y)) ++mxyz;
    }
    if (mxz == 0) continue;
    sum += cpp_rational(mxyz, mxz) * cpp_rational(mz, total);
  }
  return rational_as_double(sum);
}

// Same oracle with strata defined by confounder-concept presence
// (overlapping strata, the literal adjustment formula).
inline double brute_force_do_prob_concepts(
    const dcin::Corpus& corpus, const std::string& x, const std::string& y,
    const std::vector<std::string>& strata_concepts) {
  const long long total = static_cast<long long>(corpus.records.size());
  cpp_rational sum = 0;
  for (const auto& z : strata_concepts) {
    long long mz = 0, mxz = 0, mxyz = 0;
    for (const auto& rec : corpus.records) {
      if (!record_has(rec, z)) continue;
      ++mz;
      if (!record_has(rec, x)) continue;
      ++mxz;
      if (x == y || record_has(rec, y)) ++mxyz;
    }
    if (mxz == 0) continue;
    sum += cpp_rational(mxyz, mxz) * cpp_rational(mz, total);
  }
  return rational_as_double(sum);
}

inline dcin::Tensor random_tensor(dcin::Rng& rng, dcin::Shape shape,
                                  double scale = 1.0,
                                  bool requires_grad = false) {
  std::vector<double> data(dcin::shape_numel(shape));
  for (auto& v : data) v = scale * rng.gaussian();
  return dcin::Tensor::from_data(std::move(shape), std::move(data),
                                 requires_grad);
}

}  // namespace testutil
