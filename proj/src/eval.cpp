#include "dcin/eval.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace dcin::eval {

using nlohmann::json;

namespace {

// Rank of the diagonal entry within row/column q, counting ties below the
// smaller index.
std::size_t rank_of_truth(const Matrix& s, std::size_t q, Direction dir) {
  const std::size_t n = s.rows;
  const double truth = s.at(q, q);
  std::size_t rank = 1;
  for (std::size_t j = 0; j < n; ++j) {
    if (j == q) continue;
    const double v = dir == Direction::kImageToText ? s.at(q, j) : s.at(j, q);
    if (v > truth || (v == truth && j < q)) ++rank;
  }
  return rank;
}

std::string format_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

std::string iso_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[64];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

}  // namespace

double recall_at_k(const Matrix& scores, int k, Direction direction) {
  if (k < 1) throw ConfigError("recall_at_k: K must be >= 1");
  if (scores.rows != scores.cols) {
    throw DimensionError("recall_at_k: score matrix must be square");
  }
  if (scores.rows == 0) throw ValidationError("recall_at_k: empty scores");
  std::size_t hits = 0;
  for (std::size_t q = 0; q < scores.rows; ++q) {
    if (rank_of_truth(scores, q, direction) <= static_cast<std::size_t>(k)) {
      ++hits;
    }
  }
  return 100.0 * static_cast<double>(hits) /
         static_cast<double>(scores.rows);
}

double rsum(const RetrievalReport& report) {
  double sum = 0.0;
  for (Direction dir : {Direction::kImageToText, Direction::kTextToImage}) {
    for (int k : {1, 5, 10}) {
      auto it = report.r_at.find({dir, k});
      if (it == report.r_at.end()) {
        throw ValidationError("rsum: missing R@" + std::to_string(k) +
                              " entry");
      }
      sum += it->second;
    }
  }
  return sum;
}

RetrievalReport retrieval_report(const Matrix& scores) {
  RetrievalReport report;
  for (Direction dir : {Direction::kImageToText, Direction::kTextToImage}) {
    for (int k : {1, 5, 10}) {
      report.r_at[{dir, k}] = recall_at_k(scores, k, dir);
    }
  }
  report.rsum = rsum(report);
  return report;
}

double spurious_rate(const Matrix& scores, const Corpus& corpus,
                     const std::vector<std::size_t>& idx,
                     const std::vector<PlantedPair>& planted) {
  if (planted.empty()) {
    throw ValidationError("spurious_rate: no planted pairs given");
  }
  if (scores.rows != idx.size() || scores.cols != idx.size()) {
    throw DimensionError("spurious_rate: scores do not match index list");
  }
  std::size_t triggers = 0;
  std::size_t hits = 0;
  for (std::size_t q = 0; q < idx.size(); ++q) {
    const PairRecord& qrec = corpus.records[idx[q]];
    bool is_trigger = false;
    for (const auto& p : planted) {
      if (std::find(qrec.visual_concepts.begin(), qrec.visual_concepts.end(),
                    p.trigger) != qrec.visual_concepts.end()) {
        is_trigger = true;
        break;
      }
    }
    if (!is_trigger) continue;
    ++triggers;

    std::size_t top = 0;
    for (std::size_t j = 1; j < idx.size(); ++j) {
      if (scores.at(q, j) > scores.at(q, top)) top = j;
    }
    const PairRecord& top_rec = corpus.records[idx[top]];
    const PairRecord& truth_rec = qrec;
    for (const auto& p : planted) {
      const bool triggered =
          std::find(qrec.visual_concepts.begin(), qrec.visual_concepts.end(),
                    p.trigger) != qrec.visual_concepts.end();
      if (!triggered) continue;
      const bool top_has =
          std::find(top_rec.caption_tokens.begin(),
                    top_rec.caption_tokens.end(),
                    p.spurious) != top_rec.caption_tokens.end();
      const bool truth_has =
          std::find(truth_rec.caption_tokens.begin(),
                    truth_rec.caption_tokens.end(),
                    p.spurious) != truth_rec.caption_tokens.end();
      if (top_has && !truth_has) {
        ++hits;
        break;
      }
    }
  }
  if (triggers == 0) {
    throw ValidationError("spurious_rate: no queries contain a trigger concept");
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(triggers);
}

Matrix score_corpus(const model::DcinModel& m, const Corpus& corpus,
                    const std::vector<std::size_t>& idx,
                    std::optional<double> lambda_override) {
  Tape tape;
  Tensor s = m.score_matrix(tape, corpus, idx, lambda_override);
  Matrix out(s.rows(), s.cols());
  out.data = s.data();
  return out;
}

RetrievalReport evaluate(const model::DcinModel& m, const Corpus& corpus,
                         const std::vector<PlantedPair>* planted,
                         std::optional<double> lambda_override) {
  const std::vector<std::size_t> idx = m.eligible_indices(corpus);
  if (idx.size() < 2) {
    throw ValidationError("evaluate: need at least 2 records with captions");
  }
  const Matrix scores = score_corpus(m, corpus, idx, lambda_override);
  RetrievalReport report = retrieval_report(scores);
  if (planted) {
    report.spurious_top1_rate = spurious_rate(scores, corpus, idx, *planted);
  }
  return report;
}

std::string report_to_json(const RetrievalReport& report, bool timestamp) {
  json j;
  if (timestamp) j["created_at"] = iso_now();
  j["i2t"] = {{"r1", report.r_at.at({Direction::kImageToText, 1})},
              {"r5", report.r_at.at({Direction::kImageToText, 5})},
              {"r10", report.r_at.at({Direction::kImageToText, 10})}};
  j["t2i"] = {{"r1", report.r_at.at({Direction::kTextToImage, 1})},
              {"r5", report.r_at.at({Direction::kTextToImage, 5})},
              {"r10", report.r_at.at({Direction::kTextToImage, 10})}};
  j["rsum"] = report.rsum;
  if (report.spurious_top1_rate) {
    j["spurious_top1_rate"] = *report.spurious_top1_rate;
  }
  return j.dump(2);
}

std::vector<double> parse_lambda_range(const std::string& text) {
  double start = 0.0, stop = 0.0, step = 0.0;
  std::istringstream ss(text);
  char c1 = 0, c2 = 0;
  if (!(ss >> start >> c1 >> stop >> c2 >> step) || c1 != ':' || c2 != ':' ||
      step <= 0.0) {
    throw ConfigError("lambda sweep: expected start:stop:step, got '" + text +
                      "'");
  }
  std::vector<double> out;
  for (int i = 0;; ++i) {
    const double v = start + step * i;
    if (v > stop + step * 0.5) break;
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("lambda sweep: empty range");
  return out;
}

std::vector<SweepPoint> sweep_lambda(const model::DcinModel& m,
                                     const Corpus& corpus,
                                     const std::vector<double>& lambdas,
                                     const std::vector<PlantedPair>* planted) {
  std::vector<SweepPoint> points;
  for (double l : lambdas) {
    points.push_back({l, evaluate(m, corpus, planted, l)});
  }
  return points;
}

std::string sweep_to_csv(const std::vector<SweepPoint>& points) {
  std::ostringstream os;
  os << "lambda,i2t_r1,i2t_r5,i2t_r10,t2i_r1,t2i_r5,t2i_r10,rsum";
  const bool with_spurious =
      !points.empty() && points.front().report.spurious_top1_rate.has_value();
  if (with_spurious) os << ",spurious_top1_rate";
  os << "\n";
  for (const auto& p : points) {
    os << format_double(p.lambda);
    for (Direction dir : {Direction::kImageToText, Direction::kTextToImage}) {
      for (int k : {1, 5, 10}) {
        os << "," << format_double(p.report.r_at.at({dir, k}));
      }
    }
    os << "," << format_double(p.report.rsum);
    if (with_spurious) {
      os << "," << format_double(*p.report.spurious_top1_rate);
    }
    os << "\n";
  }
  return os.str();
}

std::vector<PlantedPair> load_planted_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("planted pairs '" + path + "': malformed JSON (" +
                  std::string(e.what()) + ")");
  }
  std::vector<PlantedPair> pairs;
  try {
    for (const auto& p : j) {
      pairs.push_back({p.at("trigger").get<std::string>(),
                       p.at("spurious").get<std::string>()});
    }
  } catch (const json::exception& e) {
    throw IoError("planted pairs '" + path + "': does not match schema (" +
                  std::string(e.what()) + ")");
  }
  if (pairs.empty()) {
    throw ValidationError("planted pairs '" + path + "': empty list");
  }
  return pairs;
}

}  // namespace dcin::eval
