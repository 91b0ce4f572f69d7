#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dcin/corpus.hpp"
#include "dcin/eval.hpp"
#include "dcin/model.hpp"
#include "dcin/stats.hpp"
#include "dcin/trainer.hpp"

namespace {

using dcin::Corpus;
using dcin::Vocab;
using nlohmann::json;

void require_file(const std::string& path, const std::string& what) {
  if (!std::filesystem::exists(path)) {
    throw dcin::ConfigError(what + " file '" + path + "' does not exist");
  }
}

std::array<std::size_t, 3> parse_ratio(const std::string& text) {
  std::array<std::size_t, 3> ratio{};
  char c1 = 0, c2 = 0;
  std::istringstream ss(text);
  if (!(ss >> ratio[0] >> c1 >> ratio[1] >> c2 >> ratio[2]) || c1 != ':' ||
      c2 != ':') {
    throw dcin::ConfigError("ratio: expected a:b:c, got '" + text + "'");
  }
  return ratio;
}

std::vector<std::string> parse_list(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw dcin::IoError("cannot write '" + path + "'");
  out << text;
}

int cmd_generate(const std::string& scm_path, std::size_t n,
                 std::uint64_t seed, const std::string& out_path,
                 const std::string& vocab_out, bool counterfactual) {
  require_file(scm_path, "scm spec");
  dcin::ScmSpec spec = dcin::load_scm_spec(scm_path);
  if (counterfactual) spec.counterfactual = true;
  Corpus corpus = dcin::generate(spec, n, seed);
  dcin::save_jsonl(corpus, out_path);
  if (!vocab_out.empty()) dcin::save_vocab(corpus.vocab, vocab_out);
  std::cout << "wrote " << corpus.records.size() << " records to " << out_path
            << "\n";
  return 0;
}

int cmd_stats(const std::string& corpus_path, const std::string& vocab_path,
              const std::string& strata, const std::string& stratum_concepts,
              const std::string& out_path, const std::string& relation_out,
              std::size_t k, const std::string& ratio_text) {
  require_file(corpus_path, "corpus");
  require_file(vocab_path, "vocab");
  Vocab vocab = dcin::load_vocab(vocab_path);
  Corpus corpus = dcin::load_jsonl(corpus_path, vocab);

  dcin::stats::StratumSource source;
  std::vector<std::string> confounders;
  if (strata == "explicit") {
    source = dcin::stats::StratumSource::kExplicitLabel;
  } else if (strata == "concepts") {
    source = dcin::stats::StratumSource::kConceptSet;
    confounders = parse_list(stratum_concepts);
    if (confounders.empty()) {
      throw dcin::ConfigError(
          "--strata concepts needs --stratum-concepts a,b,c");
    }
  } else {
    throw dcin::ConfigError("--strata must be 'explicit' or 'concepts'");
  }

  dcin::stats::CoocTable table =
      dcin::stats::count(corpus, vocab, source, confounders);
  write_text(out_path, table.to_json_string() + "\n");
  std::cout << "counted " << table.total() << " records into " << out_path
            << "\n";

  if (!relation_out.empty()) {
    auto selection = dcin::dictionary::select_concepts(corpus, vocab, k,
                                                       parse_ratio(ratio_text));
    dcin::stats::RelationWarnings warnings;
    dcin::stats::RelationMatrix rel = dcin::stats::build_relation_matrix(
        table, selection.visual, selection.linguistic, &warnings);
    write_text(relation_out, rel.to_json_string() + "\n");
    for (const auto& w : warnings.no_overlap_pairs) {
      std::cerr << "warning: no stratum overlap for pair " << w
                << ", entry set to 0\n";
    }
    std::cout << "wrote relation matrix (" << rel.concepts.size() << "x"
              << rel.concepts.size() << ") to " << relation_out << "\n";
  }
  return 0;
}

int cmd_train(const std::string& config_path, bool no_timestamp) {
  require_file(config_path, "config");
  std::ifstream in(config_path);
  json cfg;
  try {
    in >> cfg;
  } catch (const json::exception& e) {
    throw dcin::IoError("config '" + config_path + "': malformed JSON (" +
                        std::string(e.what()) + ")");
  }

  const std::string corpus_path = cfg.at("corpus").get<std::string>();
  const std::string vocab_path = cfg.at("vocab").get<std::string>();
  const std::string ckpt_out = cfg.at("checkpoint_out").get<std::string>();
  const std::string metrics_out = cfg.value("metrics_out", std::string());
  require_file(corpus_path, "corpus");
  require_file(vocab_path, "vocab");

  dcin::trainer::TrainConfig tc;
  tc.batch_size = cfg.value("batch_size", tc.batch_size);
  tc.margin = cfg.value("margin", tc.margin);
  tc.lr = cfg.value("lr", tc.lr);
  tc.lr_decay = cfg.value("lr_decay", tc.lr_decay);
  tc.lr_decay_every = cfg.value("lr_decay_every", tc.lr_decay_every);
  tc.epochs = cfg.value("epochs", tc.epochs);
  tc.weight_decay = cfg.value("weight_decay", tc.weight_decay);
  tc.beta1 = cfg.value("beta1", tc.beta1);
  tc.beta2 = cfg.value("beta2", tc.beta2);
  tc.eps = cfg.value("eps", tc.eps);
  tc.seed = cfg.value("seed", tc.seed);

  dcin::model::Settings ms;
  ms.d = cfg.value("d", ms.d);
  ms.d_t = cfg.value("d_t", ms.d_t);
  ms.k = cfg.value("k", ms.k);
  if (cfg.contains("ratio")) {
    ms.ratio = cfg.at("ratio").get<std::array<std::size_t, 3>>();
  }
  ms.gcn_layers = cfg.value("gcn_layers", ms.gcn_layers);
  ms.lambda = cfg.value("lambda", ms.lambda);
  ms.learned_pool = cfg.value("learned_pool", ms.learned_pool);
  ms.seed = tc.seed;
  const std::string strata = cfg.value("strata", std::string("explicit"));
  if (strata == "explicit") {
    ms.strata_source = dcin::stats::StratumSource::kExplicitLabel;
  } else if (strata == "concepts") {
    ms.strata_source = dcin::stats::StratumSource::kConceptSet;
    if (cfg.contains("stratum_concepts")) {
      ms.stratum_concepts =
          cfg.at("stratum_concepts").get<std::vector<std::string>>();
    }
  } else {
    throw dcin::ConfigError("config strata must be 'explicit' or 'concepts'");
  }

  Vocab vocab = dcin::load_vocab(vocab_path);
  Corpus train_corpus = dcin::load_jsonl(corpus_path, vocab);
  Corpus val_corpus;
  if (cfg.contains("val_corpus")) {
    const std::string val_path = cfg.at("val_corpus").get<std::string>();
    require_file(val_path, "validation corpus");
    val_corpus = dcin::load_jsonl(val_path, vocab);
  } else {
    dcin::SplitFractions fr;
    if (cfg.contains("split")) {
      fr.train = cfg.at("split").value("train", fr.train);
      fr.val = cfg.at("split").value("val", fr.val);
      fr.test = cfg.at("split").value("test", fr.test);
    }
    dcin::SplitResult parts = dcin::split(train_corpus, fr, tc.seed);
    train_corpus = std::move(parts.train);
    val_corpus = std::move(parts.val);
  }

  dcin::trainer::TrainResult result =
      dcin::trainer::train(train_corpus, val_corpus, ms, tc);
  dcin::model::save_checkpoint(result.best, ckpt_out, !no_timestamp);
  if (!metrics_out.empty()) {
    std::ofstream mout(metrics_out);
    if (!mout) throw dcin::IoError("cannot write '" + metrics_out + "'");
    for (const auto& e : result.metrics) {
      json line;
      line["epoch"] = e.epoch;
      line["loss"] = e.loss;
      line["lr"] = e.lr;
      line["val_rsum"] = e.val_rsum;
      mout << line.dump() << "\n";
    }
  }
  std::cout << "best epoch " << result.best_epoch << " val_rsum "
            << result.best_val_rsum << ", checkpoint " << ckpt_out << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& corpus_path,
             const std::string& report_path, bool debiased,
             const std::string& planted_path, const std::string& sweep,
             const std::string& sweep_out, bool no_timestamp) {
  require_file(ckpt_path, "checkpoint");
  require_file(corpus_path, "corpus");
  dcin::model::DcinModel m = dcin::model::load_checkpoint(ckpt_path);
  Corpus corpus = dcin::load_jsonl(corpus_path, m.vocab);

  std::vector<dcin::eval::PlantedPair> planted;
  if (debiased) {
    if (planted_path.empty()) {
      throw dcin::ConfigError("--debiased needs --planted pairs.json");
    }
    require_file(planted_path, "planted pairs");
    planted = dcin::eval::load_planted_pairs(planted_path);
  }
  const auto* planted_ptr = debiased ? &planted : nullptr;

  dcin::eval::RetrievalReport report =
      dcin::eval::evaluate(m, corpus, planted_ptr);
  write_text(report_path,
             dcin::eval::report_to_json(report, !no_timestamp) + "\n");
  std::cout << "rsum " << report.rsum;
  if (report.spurious_top1_rate) {
    std::cout << " spurious_top1_rate " << *report.spurious_top1_rate;
  }
  std::cout << ", report " << report_path << "\n";

  if (!sweep.empty()) {
    if (sweep_out.empty()) {
      throw dcin::ConfigError("--sweep-lambda needs --sweep-out curve.csv");
    }
    const std::vector<double> lambdas = dcin::eval::parse_lambda_range(sweep);
    const auto points =
        dcin::eval::sweep_lambda(m, corpus, lambdas, planted_ptr);
    write_text(sweep_out, dcin::eval::sweep_to_csv(points));
    std::cout << "wrote " << points.size() << "-point lambda sweep to "
              << sweep_out << "\n";
  }
  return 0;
}

int cmd_query(const std::string& ckpt_path, const std::string& corpus_path,
              const std::string& image_id, const std::string& tokens,
              std::size_t topk) {
  require_file(ckpt_path, "checkpoint");
  require_file(corpus_path, "corpus");
  if (image_id.empty() == tokens.empty()) {
    throw dcin::ConfigError("query needs exactly one of --image-id, --tokens");
  }
  dcin::model::DcinModel m = dcin::model::load_checkpoint(ckpt_path);
  Corpus corpus = dcin::load_jsonl(corpus_path, m.vocab);
  const std::vector<std::size_t> idx = m.eligible_indices(corpus);
  if (idx.empty()) {
    throw dcin::ValidationError("query: corpus has no records with captions");
  }

  dcin::Tape tape;
  dcin::Tensor dict = m.dictionary_tensor(tape);
  json results = json::array();
  if (!image_id.empty()) {
    std::optional<std::size_t> qi;
    for (std::size_t i = 0; i < corpus.records.size(); ++i) {
      if (corpus.records[i].id == image_id) {
        qi = i;
        break;
      }
    }
    if (!qi) {
      throw dcin::ValidationError("query: no record with id '" + image_id +
                                  "'");
    }
    dcin::Tensor img = m.encode_image_batch(tape, corpus, {*qi});
    dcin::Tensor txts = m.encode_text_batch(tape, corpus, idx);
    dcin::Tensor s =
        dcin::deconfound::score_batch(tape, img, txts, dict, m.head());
    std::vector<std::pair<double, std::size_t>> ranked;
    for (std::size_t j = 0; j < idx.size(); ++j) {
      ranked.push_back({s.at(0, j), j});
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a,
                                                      const auto& b) {
      return a.first > b.first;
    });
    for (std::size_t r = 0; r < std::min(topk, ranked.size()); ++r) {
      const auto& rec = corpus.records[idx[ranked[r].second]];
      results.push_back({{"id", rec.id},
                         {"score", ranked[r].first},
                         {"caption_tokens", rec.caption_tokens}});
    }
  } else {
    Corpus probe;
    probe.vocab = m.vocab;
    dcin::PairRecord rec;
    rec.id = "query";
    rec.caption_tokens = parse_list(tokens);
    probe.records.push_back(rec);
    dcin::Tensor txt = m.encode_text_batch(tape, probe, {0});
    dcin::Tensor imgs = m.encode_image_batch(tape, corpus, idx);
    dcin::Tensor s =
        dcin::deconfound::score_batch(tape, imgs, txt, dict, m.head());
    std::vector<std::pair<double, std::size_t>> ranked;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      ranked.push_back({s.at(i, 0), i});
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a,
                                                      const auto& b) {
      return a.first > b.first;
    });
    for (std::size_t r = 0; r < std::min(topk, ranked.size()); ++r) {
      const auto& rec = corpus.records[idx[ranked[r].second]];
      results.push_back({{"id", rec.id},
                         {"score", ranked[r].first},
                         {"visual_concepts", rec.visual_concepts}});
    }
  }
  json out;
  out["query"] = image_id.empty() ? tokens : image_id;
  out["results"] = results;
  std::cout << out.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deconfounded cross-modal matching pipeline"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "sample a corpus from an SCM spec");
  std::string gen_scm, gen_out, gen_vocab_out;
  std::size_t gen_n = 1000;
  std::uint64_t gen_seed = 1;
  bool gen_cf = false;
  gen->add_option("--scm", gen_scm, "SCM spec JSON")->required();
  gen->add_option("--n", gen_n, "number of records")->required();
  gen->add_option("--seed", gen_seed, "master seed");
  gen->add_option("--out", gen_out, "output corpus JSONL")->required();
  gen->add_option("--vocab-out", gen_vocab_out, "also write the vocab JSON");
  gen->add_flag("--counterfactual", gen_cf,
                "uniform strata independent of concepts");

  // stats
  auto* st = app.add_subcommand("stats", "co-occurrence counts and relation matrix");
  std::string st_corpus, st_vocab, st_strata = "explicit", st_confounders,
              st_out, st_rel;
  std::size_t st_k = 8;
  std::string st_ratio = "7:2:1";
  st->add_option("--corpus", st_corpus, "corpus JSONL")->required();
  st->add_option("--vocab", st_vocab, "vocab JSON")->required();
  st->add_option("--strata", st_strata, "'explicit' or 'concepts'");
  st->add_option("--stratum-concepts", st_confounders,
                 "comma list for concept strata");
  st->add_option("--out", st_out, "cooc table JSON")->required();
  st->add_option("--relation-out", st_rel, "relation matrix JSON");
  st->add_option("--k", st_k, "dictionary size per modality");
  st->add_option("--ratio", st_ratio, "object:property:action quota");

  // train
  auto* tr = app.add_subcommand("train", "train a matching model");
  std::string tr_config;
  bool tr_nots = false;
  tr->add_option("--config", tr_config, "run config JSON")->required();
  tr->add_flag("--no-timestamp", tr_nots, "omit created_at from artifacts");

  // eval
  auto* ev = app.add_subcommand("eval", "retrieval metrics on a corpus");
  std::string ev_ckpt, ev_corpus, ev_report, ev_planted, ev_sweep, ev_sweep_out;
  bool ev_debiased = false, ev_nots = false;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint JSON")->required();
  ev->add_option("--corpus", ev_corpus, "corpus JSONL")->required();
  ev->add_option("--report", ev_report, "report JSON out")->required();
  ev->add_flag("--debiased", ev_debiased, "also compute spurious_top1_rate");
  ev->add_option("--planted", ev_planted, "planted pairs JSON");
  ev->add_option("--sweep-lambda", ev_sweep, "start:stop:step");
  ev->add_option("--sweep-out", ev_sweep_out, "lambda sweep CSV out");
  ev->add_flag("--no-timestamp", ev_nots, "omit created_at from artifacts");

  // query
  auto* qu = app.add_subcommand("query", "top-K retrieval for one query");
  std::string qu_ckpt, qu_corpus, qu_image, qu_tokens;
  std::size_t qu_topk = 5;
  qu->add_option("--ckpt", qu_ckpt, "checkpoint JSON")->required();
  qu->add_option("--corpus", qu_corpus, "corpus JSONL")->required();
  qu->add_option("--image-id", qu_image, "retrieve captions for this image");
  qu->add_option("--tokens", qu_tokens, "comma token list retrieving images");
  qu->add_option("--topk", qu_topk, "results to print");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      return cmd_generate(gen_scm, gen_n, gen_seed, gen_out, gen_vocab_out,
                          gen_cf);
    }
    if (st->parsed()) {
      return cmd_stats(st_corpus, st_vocab, st_strata, st_confounders, st_out,
                       st_rel, st_k, st_ratio);
    }
    if (tr->parsed()) return cmd_train(tr_config, tr_nots);
    if (ev->parsed()) {
      return cmd_eval(ev_ckpt, ev_corpus, ev_report, ev_debiased, ev_planted,
                      ev_sweep, ev_sweep_out, ev_nots);
    }
    if (qu->parsed()) {
      return cmd_query(qu_ckpt, qu_corpus, qu_image, qu_tokens, qu_topk);
    }
  } catch (const dcin::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
