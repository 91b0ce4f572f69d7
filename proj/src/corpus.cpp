#include "dcin/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dcin/rng.hpp"

namespace dcin {

using nlohmann::json;

std::string to_string(Modality m) {
  return m == Modality::kVisual ? "visual" : "linguistic";
}

std::string to_string(Category c) {
  switch (c) {
    case Category::kObject: return "object";
    case Category::kProperty: return "property";
    case Category::kAction: return "action";
    case Category::kGender: return "gender";
    case Category::kStopword: return "stopword";
    case Category::kStratum: return "stratum";
  }
  return "object";
}

Modality modality_from_string(const std::string& s) {
  if (s == "visual") return Modality::kVisual;
  if (s == "linguistic") return Modality::kLinguistic;
  throw ValidationError("unknown modality '" + s + "'");
}

Category category_from_string(const std::string& s) {
  if (s == "object") return Category::kObject;
  if (s == "property") return Category::kProperty;
  if (s == "action") return Category::kAction;
  if (s == "gender") return Category::kGender;
  if (s == "stopword") return Category::kStopword;
  if (s == "stratum") return Category::kStratum;
  throw ValidationError("unknown category '" + s + "'");
}

std::string to_string(SplitTag t) {
  switch (t) {
    case SplitTag::kTrain: return "train";
    case SplitTag::kVal: return "val";
    case SplitTag::kTest: return "test";
    case SplitTag::kTestDebiased: return "test_debiased";
  }
  return "train";
}

Vocab::Vocab(std::vector<ConceptEntry> entries) : entries_(std::move(entries)) {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto [it, inserted] = index_.emplace(entries_[i].id, static_cast<int>(i));
    if (!inserted) {
      throw ValidationError("duplicate concept id '" + entries_[i].id +
                            "' in vocabulary");
    }
  }
}

bool Vocab::contains(const std::string& id) const {
  return index_.find(id) != index_.end();
}

int Vocab::index_of(const std::string& id) const {
  auto it = index_.find(id);
  return it == index_.end() ? -1 : it->second;
}

const ConceptEntry& Vocab::entry(const std::string& id) const {
  int i = index_of(id);
  if (i < 0) throw VocabularyError("unknown concept id '" + id + "'");
  return entries_[static_cast<std::size_t>(i)];
}

void ScmSpec::validate() const {
  if (strata.empty()) throw ValidationError("scm spec: no strata declared");
  double prior_sum = 0.0;
  std::set<std::string> ids;
  for (const auto& z : strata) {
    if (z.prior < 0.0 || z.prior > 1.0) {
      throw ValidationError("scm spec: stratum '" + z.id +
                            "' prior outside [0,1]");
    }
    if (!ids.insert(z.id).second) {
      throw ValidationError("scm spec: duplicate stratum id '" + z.id + "'");
    }
    prior_sum += z.prior;
  }
  if (std::abs(prior_sum - 1.0) > 1e-12) {
    throw ValidationError("scm spec: stratum priors sum to " +
                          std::to_string(prior_sum) + ", expected 1");
  }
  for (const auto& c : concepts) {
    if (!ids.insert(c.id).second) {
      throw ValidationError("scm spec: duplicate concept id '" + c.id + "'");
    }
    if (c.category == Category::kStratum) {
      throw ValidationError("scm spec: concept '" + c.id +
                            "' may not use the stratum category");
    }
    for (const auto& z : strata) {
      auto it = c.prob_given.find(z.id);
      if (it == c.prob_given.end()) {
        throw ValidationError("scm spec: concept '" + c.id +
                              "' has no probability for stratum '" + z.id +
                              "'");
      }
      if (it->second < 0.0 || it->second > 1.0) {
        throw ValidationError("scm spec: P(" + c.id + "|" + z.id +
                              ") outside [0,1]");
      }
    }
    if (c.echo_source) {
      if (c.echo_prob < 0.0 || c.echo_prob > 1.0) {
        throw ValidationError("scm spec: echo probability for '" + c.id +
                              "' outside [0,1]");
      }
      bool found = false;
      for (const auto& src : concepts) {
        if (src.id == *c.echo_source) {
          if (src.modality != Modality::kVisual) {
            throw ValidationError("scm spec: echo source '" + *c.echo_source +
                                  "' is not a visual concept");
          }
          found = true;
          break;
        }
      }
      if (!found) {
        throw ValidationError("scm spec: echo source '" + *c.echo_source +
                              "' of '" + c.id + "' is not declared");
      }
    }
  }
  for (const auto& [cid, proto] : prototypes) {
    if (proto.size() != feature_dim) {
      throw ValidationError("scm spec: prototype for '" + cid + "' has " +
                            std::to_string(proto.size()) +
                            " dims, expected " + std::to_string(feature_dim));
    }
  }
  if (feature_dim == 0) throw ValidationError("scm spec: feature_dim is 0");
  if (regions_per_image == 0) {
    throw ValidationError("scm spec: regions_per_image is 0");
  }
  if (noise_scale < 0.0) {
    throw ValidationError("scm spec: negative noise scale");
  }
}

Vocab ScmSpec::vocab() const {
  std::vector<ConceptEntry> entries;
  for (const auto& c : concepts) {
    entries.push_back({c.id, c.surface.empty() ? c.id : c.surface, c.modality,
                       c.category});
  }
  for (const auto& z : strata) {
    entries.push_back({z.id, z.id, Modality::kVisual, Category::kStratum});
  }
  return Vocab(std::move(entries));
}

double ScmSpec::base_marginal(const ConceptSpec& c) const {
  double p = 0.0;
  for (const auto& z : strata) p += z.prior * c.prob_given.at(z.id);
  return p;
}

const ConceptSpec& ScmSpec::concept_spec(const std::string& id) const {
  for (const auto& c : concepts) {
    if (c.id == id) return c;
  }
  throw VocabularyError("scm spec: unknown concept '" + id + "'");
}

Corpus generate(const ScmSpec& spec, std::size_t n_records,
                std::uint64_t seed) {
  spec.validate();
  if (n_records < 1) throw ValidationError("generate: n_records must be >= 1");

  Rng rng = SeedStream(seed).stream("data");
  Corpus corpus;
  corpus.vocab = spec.vocab();
  corpus.split = spec.counterfactual ? SplitTag::kTestDebiased : SplitTag::kTrain;
  corpus.records.reserve(n_records);

  // Cumulative stratum prior for inverse-CDF draws.
  std::vector<double> cdf;
  double acc = 0.0;
  for (const auto& z : spec.strata) {
    acc += z.prior;
    cdf.push_back(acc);
  }

  const std::vector<double> null_proto(spec.feature_dim, 0.0);
  for (std::size_t i = 0; i < n_records; ++i) {
    PairRecord rec;
    rec.id = "r" + std::to_string(i);

    std::size_t zi;
    if (spec.counterfactual) {
      zi = rng.uniform_below(spec.strata.size());
    } else {
      const double u = rng.uniform();
      zi = 0;
      while (zi + 1 < cdf.size() && u >= cdf[zi]) ++zi;
    }
    const std::string& z = spec.strata[zi].id;
    rec.stratum_label = z;

    // Visual concepts first so echo links can see them.
    std::set<std::string> visual_present;
    for (const auto& c : spec.concepts) {
      if (c.modality != Modality::kVisual) continue;
      const double p =
          spec.counterfactual ? spec.base_marginal(c) : c.prob_given.at(z);
      if (rng.uniform() < p) {
        rec.visual_concepts.push_back(c.id);
        visual_present.insert(c.id);
      }
    }
    for (const auto& c : spec.concepts) {
      if (c.modality != Modality::kLinguistic) continue;
      double p =
          spec.counterfactual ? spec.base_marginal(c) : c.prob_given.at(z);
      if (c.echo_source && visual_present.count(*c.echo_source)) {
        p = c.echo_prob;
      }
      if (rng.uniform() < p) rec.caption_tokens.push_back(c.id);
    }

    rec.region_features.resize(spec.regions_per_image);
    for (std::size_t r = 0; r < spec.regions_per_image; ++r) {
      const std::vector<double>* proto = &null_proto;
      if (!rec.visual_concepts.empty()) {
        const std::string& cid =
            rec.visual_concepts[r % rec.visual_concepts.size()];
        auto it = spec.prototypes.find(cid);
        if (it != spec.prototypes.end()) proto = &it->second;
      }
      auto& row = rec.region_features[r];
      row.resize(spec.feature_dim);
      for (std::size_t d = 0; d < spec.feature_dim; ++d) {
        row[d] = (*proto)[d] + spec.noise_scale * rng.gaussian();
      }
    }
    corpus.records.push_back(std::move(rec));
  }
  return corpus;
}

namespace {

PairRecord record_from_json(const json& j, const Vocab& vocab,
                            std::size_t line_no) {
  const std::string where = "line " + std::to_string(line_no);
  PairRecord rec;
  try {
    rec.id = j.at("id").get<std::string>();
    rec.visual_concepts =
        j.at("visual_concepts").get<std::vector<std::string>>();
    rec.region_features =
        j.at("region_features").get<std::vector<std::vector<double>>>();
    rec.caption_tokens =
        j.at("caption_tokens").get<std::vector<std::string>>();
    const auto& sl = j.at("stratum_label");
    if (!sl.is_null()) rec.stratum_label = sl.get<std::string>();
  } catch (const json::exception& e) {
    throw IoError(where + ": record does not match schema (" +
                  std::string(e.what()) + ")");
  }
  std::set<std::string> seen;
  for (const auto& c : rec.visual_concepts) {
    if (!vocab.contains(c)) {
      throw VocabularyError("unknown concept id '" + c + "' at " + where);
    }
    if (!seen.insert(c).second) {
      throw ValidationError("duplicate visual concept '" + c + "' at " +
                            where);
    }
  }
  for (const auto& c : rec.caption_tokens) {
    if (!vocab.contains(c)) {
      throw VocabularyError("unknown concept id '" + c + "' at " + where);
    }
    if (vocab.entry(c).category == Category::kStratum) {
      throw ValidationError("stratum concept '" + c +
                            "' in caption tokens at " + where);
    }
  }
  if (rec.stratum_label) {
    if (!vocab.contains(*rec.stratum_label)) {
      throw VocabularyError("unknown stratum label '" + *rec.stratum_label +
                            "' at " + where);
    }
    if (vocab.entry(*rec.stratum_label).category != Category::kStratum) {
      throw ValidationError("stratum label '" + *rec.stratum_label +
                            "' is not a stratum concept at " + where);
    }
  }
  if (!rec.region_features.empty()) {
    const std::size_t w = rec.region_features.front().size();
    for (const auto& row : rec.region_features) {
      if (row.size() != w) {
        throw ValidationError("ragged region feature rows at " + where);
      }
    }
  }
  return rec;
}

json record_to_json(const PairRecord& rec) {
  json j;
  j["id"] = rec.id;
  j["visual_concepts"] = rec.visual_concepts;
  j["region_features"] = rec.region_features;
  j["caption_tokens"] = rec.caption_tokens;
  if (rec.stratum_label) {
    j["stratum_label"] = *rec.stratum_label;
  } else {
    j["stratum_label"] = nullptr;
  }
  return j;
}

}  // namespace

Corpus load_jsonl(const std::string& path, const Vocab& vocab) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  Corpus corpus;
  corpus.vocab = vocab;
  std::string line;
  std::size_t line_no = 0;
  std::size_t region_rows = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError("line " + std::to_string(line_no) + ": malformed JSON (" +
                    std::string(e.what()) + ")");
    }
    PairRecord rec = record_from_json(j, vocab, line_no);
    if (first) {
      region_rows = rec.region_features.size();
      first = false;
    } else if (rec.region_features.size() != region_rows) {
      throw ValidationError("line " + std::to_string(line_no) + ": record has " +
                            std::to_string(rec.region_features.size()) +
                            " region rows, corpus uses " +
                            std::to_string(region_rows));
    }
    corpus.records.push_back(std::move(rec));
  }
  return corpus;
}

void save_jsonl(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  for (const auto& rec : corpus.records) {
    out << record_to_json(rec).dump() << "\n";
  }
}

Vocab load_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("vocab file '" + path + "': malformed JSON (" +
                  std::string(e.what()) + ")");
  }
  if (!j.is_array()) {
    throw IoError("vocab file '" + path + "': expected a JSON list");
  }
  std::vector<ConceptEntry> entries;
  for (const auto& e : j) {
    try {
      entries.push_back({e.at("id").get<std::string>(),
                         e.at("surface").get<std::string>(),
                         modality_from_string(e.at("modality").get<std::string>()),
                         category_from_string(e.at("category").get<std::string>())});
    } catch (const json::exception& ex) {
      throw IoError("vocab file '" + path + "': entry does not match schema (" +
                    std::string(ex.what()) + ")");
    }
  }
  return Vocab(std::move(entries));
}

void save_vocab(const Vocab& vocab, const std::string& path) {
  json j = json::array();
  for (const auto& e : vocab.entries()) {
    j.push_back({{"id", e.id},
                 {"surface", e.surface},
                 {"modality", to_string(e.modality)},
                 {"category", to_string(e.category)}});
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << j.dump(2) << "\n";
}

ScmSpec load_scm_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("scm spec '" + path + "': malformed JSON (" +
                  std::string(e.what()) + ")");
  }
  ScmSpec spec;
  try {
    for (const auto& z : j.at("strata")) {
      spec.strata.push_back(
          {z.at("id").get<std::string>(), z.at("prior").get<double>()});
    }
    for (const auto& c : j.at("concepts")) {
      ConceptSpec cs;
      cs.id = c.at("id").get<std::string>();
      cs.surface = c.value("surface", cs.id);
      cs.modality = modality_from_string(c.at("modality").get<std::string>());
      cs.category = category_from_string(c.at("category").get<std::string>());
      for (const auto& [zid, p] : c.at("prob_given").items()) {
        cs.prob_given[zid] = p.get<double>();
      }
      if (c.contains("echo_source") && !c.at("echo_source").is_null()) {
        cs.echo_source = c.at("echo_source").get<std::string>();
        cs.echo_prob = c.at("echo_prob").get<double>();
      }
      spec.concepts.push_back(std::move(cs));
    }
    spec.feature_dim = j.value("feature_dim", spec.feature_dim);
    spec.regions_per_image = j.value("regions_per_image", spec.regions_per_image);
    spec.noise_scale = j.value("noise_scale", spec.noise_scale);
    spec.counterfactual = j.value("counterfactual", false);
    if (j.contains("prototypes")) {
      const auto& p = j.at("prototypes");
      const std::string mode = p.value("mode", "seeded");
      if (mode == "table") {
        for (const auto& [cid, vec] : p.at("table").items()) {
          spec.prototypes[cid] = vec.get<std::vector<double>>();
        }
      } else if (mode == "seeded") {
        const std::uint64_t pseed = p.value("seed", 0ULL);
        const double scale = p.value("scale", 1.0);
        Rng rng = SeedStream(pseed).stream("prototypes");
        for (const auto& c : spec.concepts) {
          if (c.modality != Modality::kVisual) continue;
          std::vector<double> v(spec.feature_dim);
          for (auto& x : v) x = scale * rng.gaussian();
          spec.prototypes[c.id] = std::move(v);
        }
      } else {
        throw ValidationError("scm spec: unknown prototypes mode '" + mode +
                              "'");
      }
    }
  } catch (const json::exception& e) {
    throw IoError("scm spec '" + path + "': does not match schema (" +
                  std::string(e.what()) + ")");
  }
  spec.validate();
  return spec;
}

SplitResult split(const Corpus& corpus, const SplitFractions& fractions,
                  std::uint64_t seed) {
  const double f[3] = {fractions.train, fractions.val, fractions.test};
  double sum = 0.0;
  for (double v : f) {
    if (v < 0.0) throw ValidationError("split: negative fraction");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ValidationError("split: fractions sum to " + std::to_string(sum) +
                          ", expected 1");
  }
  const std::size_t n = corpus.records.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = SeedStream(seed).stream("split");
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.uniform_below(i);
    std::swap(order[i - 1], order[j]);
  }

  std::size_t sizes[3];
  std::size_t assigned = 0;
  for (int s = 0; s < 3; ++s) {
    sizes[s] = static_cast<std::size_t>(f[s] * static_cast<double>(n));
    assigned += sizes[s];
  }
  for (int s = 0; assigned < n; s = (s + 1) % 3) {
    ++sizes[s];
    ++assigned;
  }

  SplitResult result;
  result.train.vocab = corpus.vocab;
  result.val.vocab = corpus.vocab;
  result.test.vocab = corpus.vocab;
  result.train.split = SplitTag::kTrain;
  result.val.split = SplitTag::kVal;
  result.test.split = SplitTag::kTest;
  std::size_t pos = 0;
  Corpus* outs[3] = {&result.train, &result.val, &result.test};
  for (int s = 0; s < 3; ++s) {
    for (std::size_t i = 0; i < sizes[s]; ++i) {
      outs[s]->records.push_back(corpus.records[order[pos++]]);
    }
  }
  return result;
}

}  // namespace dcin
