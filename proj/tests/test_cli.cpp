#include <doctest.h>

#include <cstdlib>
#include <fstream>

#include <json.hpp>

#include "helpers.hpp"

using nlohmann::json;
using testutil::TempDir;
using testutil::read_file;

namespace {

int run(const std::string& args, const std::string& log) {
  const std::string cmd =
      std::string(DCIN_BIN_PATH) + " " + args + " >" + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

void write_benchmark_spec(const std::string& path) {
  json spec;
  spec["strata"] = {{{"id", "in"}, {"prior", 0.6}},
                    {{"id", "out"}, {"prior", 0.4}}};
  json concepts = json::array();
  auto vis = [&](const std::string& id, double pa, double pb) {
    concepts.push_back({{"id", id},
                        {"modality", "visual"},
                        {"category", "object"},
                        {"prob_given", {{"in", pa}, {"out", pb}}}});
  };
  auto echo = [&](const std::string& id, const std::string& src) {
    concepts.push_back({{"id", id},
                        {"modality", "linguistic"},
                        {"category", "object"},
                        {"prob_given", {{"in", 0.05}, {"out", 0.05}}},
                        {"echo_source", src},
                        {"echo_prob", 0.9}});
  };
  vis("dog", 0.5, 0.5);
  vis("cat", 0.5, 0.5);
  vis("car", 0.4, 0.6);
  echo("dog_w", "dog");
  echo("cat_w", "cat");
  echo("car_w", "car");
  // A purely stratum-driven caption word: the planted spurious signal.
  concepts.push_back({{"id", "spur_w"},
                      {"modality", "linguistic"},
                      {"category", "object"},
                      {"prob_given", {{"in", 0.85}, {"out", 0.05}}}});
  spec["concepts"] = concepts;
  spec["feature_dim"] = 6;
  spec["regions_per_image"] = 3;
  spec["noise_scale"] = 0.05;
  spec["prototypes"] = {{"mode", "seeded"}, {"seed", 3}, {"scale", 1.0}};
  std::ofstream out(path);
  out << spec.dump(2);
}

void write_train_config(const std::string& path, const TempDir& dir) {
  json cfg;
  cfg["corpus"] = dir.file("train.jsonl");
  cfg["val_corpus"] = dir.file("val.jsonl");
  cfg["vocab"] = dir.file("vocab.json");
  cfg["checkpoint_out"] = dir.file("model.json");
  cfg["metrics_out"] = dir.file("metrics.jsonl");
  cfg["epochs"] = 2;
  cfg["batch_size"] = 16;
  cfg["d"] = 8;
  cfg["d_t"] = 6;
  cfg["k"] = 3;
  cfg["ratio"] = {1, 0, 0};
  cfg["seed"] = 7;
  cfg["lambda"] = 0.05;
  std::ofstream out(path);
  out << cfg.dump(2);
}

std::size_t count_lines(const std::string& path) {
  std::ifstream in(path);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("full pipeline: generate, stats, train, eval, query") {
  TempDir dir;
  write_benchmark_spec(dir.file("scm.json"));

  SUBCASE("generate honors the record count and is deterministic") {
    REQUIRE(run("generate --scm " + dir.file("scm.json") +
                    " --n 50 --seed 1 --out " + dir.file("a.jsonl") +
                    " --vocab-out " + dir.file("vocab.json"),
                dir.file("log")) == 0);
    CHECK(count_lines(dir.file("a.jsonl")) == 50);
    REQUIRE(run("generate --scm " + dir.file("scm.json") +
                    " --n 50 --seed 1 --out " + dir.file("b.jsonl"),
                dir.file("log")) == 0);
    CHECK(read_file(dir.file("a.jsonl")) == read_file(dir.file("b.jsonl")));
    REQUIRE(run("generate --scm " + dir.file("scm.json") +
                    " --n 50 --seed 2 --out " + dir.file("c.jsonl"),
                dir.file("log")) == 0);
    CHECK(read_file(dir.file("a.jsonl")) != read_file(dir.file("c.jsonl")));
  }

  SUBCASE("stats writes cooc and relation artifacts") {
    REQUIRE(run("generate --scm " + dir.file("scm.json") +
                    " --n 80 --seed 3 --out " + dir.file("corpus.jsonl") +
                    " --vocab-out " + dir.file("vocab.json"),
                dir.file("log")) == 0);
    REQUIRE(run("stats --corpus " + dir.file("corpus.jsonl") + " --vocab " +
                    dir.file("vocab.json") + " --strata explicit --out " +
                    dir.file("cooc.json") + " --relation-out " +
                    dir.file("rel.json") + " --k 3 --ratio 1:0:0",
                dir.file("log")) == 0);
    json cooc = json::parse(read_file(dir.file("cooc.json")));
    CHECK(cooc.at("total").get<int>() == 80);
    json rel = json::parse(read_file(dir.file("rel.json")));
    CHECK(rel.at("concepts").size() == 6);
    // Diagonal pinned to one.
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(rel.at("e")[i][i].get<double>() == 1.0);
    }
  }

  SUBCASE("train, eval, sweep, and query artifacts") {
    REQUIRE(run("generate --scm " + dir.file("scm.json") +
                    " --n 60 --seed 4 --out " + dir.file("train.jsonl") +
                    " --vocab-out " + dir.file("vocab.json"),
                dir.file("log")) == 0);
    REQUIRE(run("generate --scm " + dir.file("scm.json") +
                    " --n 20 --seed 5 --out " + dir.file("val.jsonl"),
                dir.file("log")) == 0);
    REQUIRE(run("generate --scm " + dir.file("scm.json") +
                    " --n 20 --seed 6 --counterfactual --out " +
                    dir.file("test.jsonl"),
                dir.file("log")) == 0);
    write_train_config(dir.file("cfg.json"), dir);

    REQUIRE(run("train --config " + dir.file("cfg.json") + " --no-timestamp",
                dir.file("log")) == 0);
    CHECK(count_lines(dir.file("metrics.jsonl")) == 2);
    const std::string ckpt1 = read_file(dir.file("model.json"));

    // Determinism: the same run reproduces the checkpoint byte for byte.
    REQUIRE(run("train --config " + dir.file("cfg.json") + " --no-timestamp",
                dir.file("log")) == 0);
    CHECK(read_file(dir.file("model.json")) == ckpt1);

    json planted = json::array();
    planted.push_back({{"trigger", "dog"}, {"spurious", "spur_w"}});
    {
      std::ofstream out(dir.file("pairs.json"));
      out << planted.dump();
    }
    REQUIRE(run("eval --ckpt " + dir.file("model.json") + " --corpus " +
                    dir.file("test.jsonl") + " --report " +
                    dir.file("report.json") +
                    " --debiased --planted " + dir.file("pairs.json") +
                    " --sweep-lambda 0:0.15:0.025 --sweep-out " +
                    dir.file("curve.csv") + " --no-timestamp",
                dir.file("log")) == 0);
    json report = json::parse(read_file(dir.file("report.json")));
    double manual = 0.0;
    for (const auto& d : {"i2t", "t2i"}) {
      for (const auto& k : {"r1", "r5", "r10"}) {
        manual += report.at(d).at(k).get<double>();
      }
    }
    CHECK(report.at("rsum").get<double>() == manual);
    CHECK(report.contains("spurious_top1_rate"));

    // Sweep: header plus seven points, reproduced exactly on a second run.
    CHECK(count_lines(dir.file("curve.csv")) == 8);
    const std::string curve1 = read_file(dir.file("curve.csv"));
    REQUIRE(run("eval --ckpt " + dir.file("model.json") + " --corpus " +
                    dir.file("test.jsonl") + " --report " +
                    dir.file("report2.json") +
                    " --sweep-lambda 0:0.15:0.025 --sweep-out " +
                    dir.file("curve2.csv") + " --no-timestamp",
                dir.file("log")) == 0);
    CHECK(read_file(dir.file("curve2.csv")) == curve1);

    // Query by image id and by tokens.
    json first = json::parse(read_file(dir.file("train.jsonl")).substr(
        0, read_file(dir.file("train.jsonl")).find('\n')));
    const std::string image_id = first.at("id").get<std::string>();
    REQUIRE(run("query --ckpt " + dir.file("model.json") + " --corpus " +
                    dir.file("train.jsonl") + " --image-id " + image_id +
                    " --topk 3 >" + dir.file("query.json"),
                dir.file("qlog")) == 0);
    json q = json::parse(read_file(dir.file("query.json")));
    CHECK(q.at("results").size() == 3);

    REQUIRE(run("query --ckpt " + dir.file("model.json") + " --corpus " +
                    dir.file("train.jsonl") + " --tokens dog_w,cat_w --topk 2 >" +
                    dir.file("query2.json"),
                dir.file("qlog")) == 0);
    json q2 = json::parse(read_file(dir.file("query2.json")));
    CHECK(q2.at("results").size() == 2);
  }

  SUBCASE("module errors exit nonzero with a one-line error") {
    const int rc = run("stats --corpus missing.jsonl --vocab missing.json "
                       "--out x.json",
                       dir.file("err.log"));
    CHECK(rc == 1);
    const std::string log = read_file(dir.file("err.log"));
    CHECK(log.find("error: config:") != std::string::npos);
  }
}

}  // TEST_SUITE
