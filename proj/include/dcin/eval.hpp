#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dcin/corpus.hpp"
#include "dcin/matrix.hpp"
#include "dcin/model.hpp"

namespace dcin::eval {

enum class Direction { kImageToText, kTextToImage };

struct RetrievalReport {
  // (direction, K) -> percentage, for K in {1, 5, 10}.
  std::map<std::pair<Direction, int>, double> r_at;
  double rsum = 0.0;
  std::optional<double> spurious_top1_rate;
};

// Percentage of queries whose ground-truth match (the diagonal pairing) ranks
// in the top K by descending score; equal scores rank the smaller index
// first.
double recall_at_k(const Matrix& scores, int k, Direction direction);

// Exact sum of the six recalls; errors when any of them is missing.
double rsum(const RetrievalReport& report);

RetrievalReport retrieval_report(const Matrix& scores);

struct PlantedPair {
  std::string trigger;   // visual concept
  std::string spurious;  // linguistic concept
};

// Over image queries containing a trigger concept: the percentage whose top-1
// retrieved caption contains the paired spurious concept while the
// ground-truth caption does not. idx maps score rows/cols to corpus records.
double spurious_rate(const Matrix& scores, const Corpus& corpus,
                     const std::vector<std::size_t>& idx,
                     const std::vector<PlantedPair>& planted);

// Runs the model over the eligible records of a corpus and returns the plain
// score matrix (no gradients kept).
Matrix score_corpus(const model::DcinModel& m, const Corpus& corpus,
                    const std::vector<std::size_t>& idx,
                    std::optional<double> lambda_override = std::nullopt);

RetrievalReport evaluate(const model::DcinModel& m, const Corpus& corpus,
                         const std::vector<PlantedPair>* planted = nullptr,
                         std::optional<double> lambda_override = std::nullopt);

std::string report_to_json(const RetrievalReport& report, bool timestamp);

struct SweepPoint {
  double lambda;
  RetrievalReport report;
};

// Parses "start:stop:step" (inclusive stop within half a step).
std::vector<double> parse_lambda_range(const std::string& text);

std::vector<SweepPoint> sweep_lambda(const model::DcinModel& m,
                                     const Corpus& corpus,
                                     const std::vector<double>& lambdas,
                                     const std::vector<PlantedPair>* planted);

std::string sweep_to_csv(const std::vector<SweepPoint>& points);

std::vector<PlantedPair> load_planted_pairs(const std::string& path);

}  // namespace dcin::eval
