#include "dcin/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dcin/encoder.hpp"
#include "dcin/knowledge.hpp"
#include "dcin/rng.hpp"

namespace dcin::model {

using nlohmann::json;

void Settings::validate() const {
  if (d == 0 || d_t == 0 || k == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (lambda < 0.0 || lambda > 1.0) {
    throw ConfigError("confidence lambda outside [0,1]");
  }
  if (ratio[0] + ratio[1] + ratio[2] == 0) {
    throw ConfigError("category ratio sums to zero");
  }
}

namespace {

Tensor gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols,
                       double sd, bool requires_grad) {
  std::vector<double> data(rows * cols);
  for (auto& v : data) v = sd * rng.gaussian();
  return Tensor::from_data({rows, cols}, std::move(data), requires_grad);
}

Tensor matrix_tensor(const Matrix& m, bool requires_grad) {
  return Tensor::from_data({m.rows, m.cols}, m.data, requires_grad);
}

}  // namespace

DcinModel DcinModel::build(const Corpus& train, const Settings& settings) {
  settings.validate();
  if (train.records.empty()) {
    throw ValidationError("model build: empty training corpus");
  }

  DcinModel m;
  m.cfg = settings;
  m.vocab = train.vocab;
  m.n_regions = train.records.front().region_features.size();
  if (m.n_regions == 0) {
    throw ValidationError("model build: training records have no regions");
  }
  m.d_v = train.records.front().region_features.front().size();

  m.selection = dictionary::select_concepts(train, m.vocab, settings.k,
                                            settings.ratio);

  Matrix g_v = dictionary::build_visual_prototypes(train, m.selection.visual);
  Matrix g_t = dictionary::build_linguistic_embeddings(
      m.selection.linguistic, settings.d_t, settings.seed);

  std::vector<std::string> stratum_concepts = settings.stratum_concepts;
  if (settings.strata_source == stats::StratumSource::kConceptSet &&
      stratum_concepts.empty()) {
    stratum_concepts = m.selection.visual;
    stratum_concepts.insert(stratum_concepts.end(),
                            m.selection.linguistic.begin(),
                            m.selection.linguistic.end());
  }
  stats::CoocTable cooc = stats::count(train, m.vocab, settings.strata_source,
                                       stratum_concepts);
  stats::RelationMatrix rel = stats::build_relation_matrix(
      cooc, m.selection.visual, m.selection.linguistic);
  m.a_tilde = knowledge::normalize_adjacency(rel.e);

  std::size_t max_caption = 0;
  for (const auto& rec : train.records) {
    max_caption = std::max(max_caption, rec.caption_tokens.size());
  }
  m.pool_len_txt = std::max<std::size_t>(max_caption, 1);

  // Frozen prototype matrices.
  m.params["dict.g_v"] = matrix_tensor(g_v, false);
  m.params["dict.g_t"] = matrix_tensor(g_t, false);

  // Learnable tensors, drawn from the init stream in this fixed order.
  Rng init = SeedStream(settings.seed).stream("init");
  const std::size_t d = settings.d;
  auto xavier = [&](std::size_t rows, std::size_t cols) {
    return gaussian_matrix(init, rows, cols,
                           1.0 / std::sqrt(static_cast<double>(rows)), true);
  };
  m.params["dict.w_v"] = xavier(m.d_v, d);
  m.params["dict.w_t"] = xavier(settings.d_t, d);
  for (std::size_t l = 0; l < settings.gcn_layers; ++l) {
    m.params["gcn.w" + std::to_string(l)] = xavier(d, d);
  }
  m.params["encoder.w_img"] = xavier(m.d_v, d);
  m.params["encoder.token_table"] =
      gaussian_matrix(init, m.vocab.size(), settings.d_t, 0.1, true);
  m.params["encoder.w_txt"] = xavier(settings.d_t, d);
  if (settings.learned_pool) {
    m.params["encoder.pool_img"] = Tensor::from_data(
        {m.n_regions},
        std::vector<double>(m.n_regions, 1.0 / static_cast<double>(m.n_regions)),
        true);
    m.params["encoder.pool_txt"] = Tensor::from_data(
        {m.pool_len_txt},
        std::vector<double>(m.pool_len_txt,
                            1.0 / static_cast<double>(m.pool_len_txt)),
        true);
  }
  m.params["head.mlp_w1"] = xavier(d, d);
  m.params["head.mlp_b1"] = Tensor::zeros({d}, true);
  m.params["head.mlp_w2"] = xavier(d, d);
  m.params["head.mlp_b2"] = Tensor::zeros({d}, true);
  m.params["head.psi_v_w"] = xavier(2 * d, d);
  m.params["head.psi_v_b"] = Tensor::zeros({d}, true);
  m.params["head.psi_t_w"] = xavier(2 * d, d);
  m.params["head.psi_t_b"] = Tensor::zeros({d}, true);
  return m;
}

const Tensor& DcinModel::param(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end()) {
    throw ContractError("unknown parameter '" + name + "'");
  }
  return it->second;
}

Tensor& DcinModel::param(const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) {
    throw ContractError("unknown parameter '" + name + "'");
  }
  return it->second;
}

std::vector<std::string> DcinModel::trainable_names() const {
  std::vector<std::string> names;
  for (const auto& [name, t] : params) {
    if (t.requires_grad()) names.push_back(name);
  }
  return names;
}

std::map<std::string, Tensor> DcinModel::clone_params() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, t] : params) out[name] = t.clone();
  return out;
}

void DcinModel::restore_params(const std::map<std::string, Tensor>& snapshot) {
  for (auto& [name, t] : params) {
    auto it = snapshot.find(name);
    if (it == snapshot.end()) {
      throw ContractError("snapshot missing parameter '" + name + "'");
    }
    t.data() = it->second.data();
  }
}

std::vector<std::size_t> DcinModel::eligible_indices(
    const Corpus& corpus) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < corpus.records.size(); ++i) {
    if (!corpus.records[i].caption_tokens.empty()) idx.push_back(i);
  }
  return idx;
}

Tensor DcinModel::dictionary_tensor(Tape& tape) const {
  dictionary::ConfounderDictionary dict;
  dict.g_v = param("dict.g_v");
  dict.g_t = param("dict.g_t");
  dict.w_v = param("dict.w_v");
  dict.w_t = param("dict.w_t");
  auto [d1, d2] = dict.project(tape);
  Tensor h0 = tape.concat_rows(d1, d2);
  std::vector<Tensor> layers;
  for (std::size_t l = 0; l < cfg.gcn_layers; ++l) {
    layers.push_back(param("gcn.w" + std::to_string(l)));
  }
  Tensor a = matrix_tensor(a_tilde, false);
  return knowledge::gcn_forward(tape, h0, a, layers);
}

Tensor DcinModel::encode_image_batch(Tape& tape, const Corpus& corpus,
                                     const std::vector<std::size_t>& idx) const {
  if (idx.empty()) throw ValidationError("encode_image_batch: empty batch");
  std::size_t rows = 0;
  for (std::size_t i : idx) {
    rows += corpus.records[i].region_features.size();
  }
  Matrix stacked(rows, d_v);
  std::vector<std::size_t> offsets{0};
  std::size_t pos = 0;
  for (std::size_t i : idx) {
    const auto& rec = corpus.records[i];
    if (rec.region_features.empty()) {
      throw ValidationError("record '" + rec.id + "' has no regions");
    }
    for (const auto& row : rec.region_features) {
      if (row.size() != d_v) {
        throw DimensionError("record '" + rec.id + "' feature width " +
                             std::to_string(row.size()) + ", model expects " +
                             std::to_string(d_v));
      }
      std::copy(row.begin(), row.end(), stacked.data.begin() + pos * d_v);
      ++pos;
    }
    offsets.push_back(pos);
  }
  encoder::Pooling pooling;
  if (cfg.learned_pool) pooling.weights = param("encoder.pool_img");
  return encoder::encode_images_batch(tape, stacked, offsets,
                                      param("encoder.w_img"), pooling);
}

Tensor DcinModel::encode_text_batch(Tape& tape, const Corpus& corpus,
                                    const std::vector<std::size_t>& idx) const {
  if (idx.empty()) throw ValidationError("encode_text_batch: empty batch");
  std::vector<std::size_t> token_indices;
  std::vector<std::size_t> offsets{0};
  for (std::size_t i : idx) {
    const auto& rec = corpus.records[i];
    if (rec.caption_tokens.empty()) {
      throw ValidationError("record '" + rec.id + "' has an empty caption");
    }
    for (const auto& tok : rec.caption_tokens) {
      const int t = vocab.index_of(tok);
      if (t < 0) {
        throw VocabularyError("record '" + rec.id + "': unknown token '" +
                              tok + "'");
      }
      token_indices.push_back(static_cast<std::size_t>(t));
    }
    offsets.push_back(token_indices.size());
  }
  encoder::Pooling pooling;
  if (cfg.learned_pool) pooling.weights = param("encoder.pool_txt");
  return encoder::encode_texts_batch(tape, token_indices, offsets,
                                     param("encoder.token_table"),
                                     param("encoder.w_txt"), pooling);
}

deconfound::HeadParams DcinModel::head(
    std::optional<double> lambda_override) const {
  deconfound::HeadParams h;
  h.mlp_w1 = param("head.mlp_w1");
  h.mlp_b1 = param("head.mlp_b1");
  h.mlp_w2 = param("head.mlp_w2");
  h.mlp_b2 = param("head.mlp_b2");
  h.psi_v_w = param("head.psi_v_w");
  h.psi_v_b = param("head.psi_v_b");
  h.psi_t_w = param("head.psi_t_w");
  h.psi_t_b = param("head.psi_t_b");
  h.lambda = lambda_override.value_or(cfg.lambda);
  h.validate();
  return h;
}

Tensor DcinModel::score_matrix(Tape& tape, const Corpus& corpus,
                               const std::vector<std::size_t>& idx,
                               std::optional<double> lambda_override) const {
  Tensor dict = dictionary_tensor(tape);
  Tensor images = encode_image_batch(tape, corpus, idx);
  Tensor texts = encode_text_batch(tape, corpus, idx);
  return deconfound::score_batch(tape, images, texts, dict,
                                 head(lambda_override));
}

namespace {

json tensor_to_json(const Tensor& t) {
  json j;
  j["shape"] = t.shape();
  j["data"] = t.data();
  return j;
}

Tensor tensor_from_json(const json& j, bool requires_grad) {
  return Tensor::from_data(j.at("shape").get<Shape>(),
                           j.at("data").get<std::vector<double>>(),
                           requires_grad);
}

json vocab_to_json(const Vocab& vocab) {
  json out = json::array();
  for (const auto& e : vocab.entries()) {
    out.push_back({{"id", e.id},
                   {"surface", e.surface},
                   {"modality", to_string(e.modality)},
                   {"category", to_string(e.category)}});
  }
  return out;
}

Vocab vocab_from_json(const json& j) {
  std::vector<ConceptEntry> entries;
  for (const auto& e : j) {
    entries.push_back({e.at("id").get<std::string>(),
                       e.at("surface").get<std::string>(),
                       modality_from_string(e.at("modality").get<std::string>()),
                       category_from_string(e.at("category").get<std::string>())});
  }
  return Vocab(std::move(entries));
}

bool frozen_param(const std::string& name) {
  return name == "dict.g_v" || name == "dict.g_t";
}

std::string iso_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[64];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

}  // namespace

std::string tensors_to_json(const std::map<std::string, Tensor>& tensors) {
  json j;
  j["format_version"] = 1;
  json jt = json::object();
  for (const auto& [name, t] : tensors) jt[name] = tensor_to_json(t);
  j["tensors"] = jt;
  return j.dump(2);
}

std::map<std::string, Tensor> tensors_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("tensor json: malformed (") + e.what() + ")");
  }
  if (j.value("format_version", 0) != 1) {
    throw IoError("tensor json: unsupported format_version");
  }
  std::map<std::string, Tensor> out;
  for (const auto& [name, jt] : j.at("tensors").items()) {
    out[name] = tensor_from_json(jt, !frozen_param(name));
  }
  return out;
}

std::string checkpoint_to_json(const DcinModel& m, bool timestamp) {
  json j;
  j["format_version"] = 1;
  if (timestamp) j["created_at"] = iso_now();
  json cfg;
  cfg["d"] = m.cfg.d;
  cfg["d_t"] = m.cfg.d_t;
  cfg["d_v"] = m.d_v;
  cfg["k"] = m.cfg.k;
  cfg["ratio"] = m.cfg.ratio;
  cfg["gcn_layers"] = m.cfg.gcn_layers;
  cfg["lambda"] = m.cfg.lambda;
  cfg["learned_pool"] = m.cfg.learned_pool;
  cfg["strata_source"] =
      m.cfg.strata_source == stats::StratumSource::kExplicitLabel ? "explicit"
                                                                  : "concepts";
  cfg["stratum_concepts"] = m.cfg.stratum_concepts;
  cfg["seed"] = m.cfg.seed;
  cfg["n_regions"] = m.n_regions;
  cfg["pool_len_txt"] = m.pool_len_txt;
  j["config"] = cfg;
  j["vocab"] = vocab_to_json(m.vocab);
  j["concepts"] = {{"visual", m.selection.visual},
                   {"linguistic", m.selection.linguistic}};
  j["a_tilde"] = {{"rows", m.a_tilde.rows},
                  {"cols", m.a_tilde.cols},
                  {"data", m.a_tilde.data}};
  json jt = json::object();
  for (const auto& [name, t] : m.params) jt[name] = tensor_to_json(t);
  j["tensors"] = jt;
  return j.dump(2);
}

DcinModel checkpoint_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint: malformed JSON (") + e.what() +
                  ")");
  }
  if (j.value("format_version", 0) != 1) {
    throw IoError("checkpoint: unsupported format_version");
  }
  DcinModel m;
  try {
    const json& cfg = j.at("config");
    m.cfg.d = cfg.at("d").get<std::size_t>();
    m.cfg.d_t = cfg.at("d_t").get<std::size_t>();
    m.d_v = cfg.at("d_v").get<std::size_t>();
    m.cfg.k = cfg.at("k").get<std::size_t>();
    m.cfg.ratio = cfg.at("ratio").get<std::array<std::size_t, 3>>();
    m.cfg.gcn_layers = cfg.at("gcn_layers").get<std::size_t>();
    m.cfg.lambda = cfg.at("lambda").get<double>();
    m.cfg.learned_pool = cfg.at("learned_pool").get<bool>();
    m.cfg.strata_source = cfg.at("strata_source").get<std::string>() ==
                                  "explicit"
                              ? stats::StratumSource::kExplicitLabel
                              : stats::StratumSource::kConceptSet;
    m.cfg.stratum_concepts =
        cfg.at("stratum_concepts").get<std::vector<std::string>>();
    m.cfg.seed = cfg.at("seed").get<std::uint64_t>();
    m.n_regions = cfg.at("n_regions").get<std::size_t>();
    m.pool_len_txt = cfg.at("pool_len_txt").get<std::size_t>();
    m.vocab = vocab_from_json(j.at("vocab"));
    m.selection.visual =
        j.at("concepts").at("visual").get<std::vector<std::string>>();
    m.selection.linguistic =
        j.at("concepts").at("linguistic").get<std::vector<std::string>>();
    const json& ja = j.at("a_tilde");
    m.a_tilde.rows = ja.at("rows").get<std::size_t>();
    m.a_tilde.cols = ja.at("cols").get<std::size_t>();
    m.a_tilde.data = ja.at("data").get<std::vector<double>>();
    if (m.a_tilde.data.size() != m.a_tilde.rows * m.a_tilde.cols) {
      throw IoError("checkpoint: a_tilde size mismatch");
    }
    for (const auto& [name, jt] : j.at("tensors").items()) {
      m.params[name] = tensor_from_json(jt, !frozen_param(name));
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint: does not match schema (") +
                  e.what() + ")");
  }
  return m;
}

void save_checkpoint(const DcinModel& m, const std::string& path,
                     bool timestamp) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << checkpoint_to_json(m, timestamp) << "\n";
}

DcinModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

}  // namespace dcin::model
