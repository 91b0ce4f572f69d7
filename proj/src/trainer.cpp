#include "dcin/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "dcin/eval.hpp"
#include "dcin/rng.hpp"

namespace dcin::trainer {

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (margin <= 0.0) throw ConfigError("margin must be positive");
  if (lr <= 0.0) throw ConfigError("lr must be positive");
  if (lr_decay <= 0.0 || lr_decay > 1.0) {
    throw ConfigError("lr_decay must lie in (0,1]");
  }
  if (lr_decay_every == 0) throw ConfigError("lr_decay_every must be >= 1");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (eps <= 0.0) throw ConfigError("eps must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw ConfigError("betas must lie in [0,1)");
  }
}

Tensor triplet_loss(Tape& tape, const Tensor& scores, double alpha) {
  const std::size_t b = scores.rows();
  if (scores.cols() != b) {
    throw DimensionError("triplet_loss: score matrix must be square");
  }
  if (b < 2) {
    throw ValidationError("triplet_loss: batch of " + std::to_string(b) +
                          " has no negatives");
  }
  // Hardest negatives from the forward values; indices are not
  // differentiated, the selected entries are.
  std::vector<std::size_t> diag_idx(b), neg_text_idx(b), neg_image_idx(b);
  for (std::size_t i = 0; i < b; ++i) {
    diag_idx[i] = i * b + i;
    std::size_t best_t = i == 0 ? 1 : 0;
    std::size_t best_v = best_t;
    for (std::size_t j = 0; j < b; ++j) {
      if (j == i) continue;
      if (scores.at(i, j) > scores.at(i, best_t)) best_t = j;
      if (scores.at(j, i) > scores.at(best_v, i)) best_v = j;
    }
    neg_text_idx[i] = i * b + best_t;
    neg_image_idx[i] = best_v * b + i;
  }
  Tensor truth = tape.take(scores, diag_idx);
  Tensor neg_text = tape.take(scores, neg_text_idx);
  Tensor neg_image = tape.take(scores, neg_image_idx);
  Tensor hinge_t =
      tape.relu(tape.add_scalar(tape.sub(neg_text, truth), alpha));
  Tensor hinge_v =
      tape.relu(tape.add_scalar(tape.sub(neg_image, truth), alpha));
  Tensor total = tape.sum_all(tape.add(hinge_t, hinge_v));
  return tape.scale(total, 1.0 / static_cast<double>(b));
}

void adamw_step(std::map<std::string, Tensor>& params,
                const std::vector<std::string>& names, const Tape& tape,
                AdamWState& state, const TrainConfig& cfg, double lr_now) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (const auto& name : names) {
    Tensor& p = params.at(name);
    const std::vector<double> g = tape.grad(p);
    for (double v : g) {
      if (!std::isfinite(v)) {
        throw NumericError("non-finite gradient for parameter '" + name + "'");
      }
    }
    auto& [m, v] = state.moments[name];
    if (m.empty()) {
      m.assign(p.size(), 0.0);
      v.assign(p.size(), 0.0);
    }
    auto& data = p.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      data[i] -= lr_now * m_hat / (std::sqrt(v_hat) + cfg.eps);
      data[i] -= lr_now * cfg.weight_decay * data[i];
    }
  }
}

TrainResult train(const Corpus& train_corpus, const Corpus& val_corpus,
                  const model::Settings& settings, const TrainConfig& cfg) {
  cfg.validate();
  if (train_corpus.records.empty()) {
    throw ValidationError("train: empty training split");
  }
  if (val_corpus.records.empty()) {
    throw ValidationError("train: empty validation split");
  }

  model::DcinModel m = model::DcinModel::build(train_corpus, settings);
  const std::vector<std::string> names = m.trainable_names();
  const std::vector<std::size_t> train_idx = m.eligible_indices(train_corpus);
  if (train_idx.size() < 2) {
    throw ValidationError("train: fewer than 2 trainable records");
  }

  TrainResult result;
  result.best = m;
  result.best.params = m.clone_params();
  result.best_epoch = 0;
  result.best_val_rsum = -1.0;

  AdamWState opt;
  Rng shuffle_rng = SeedStream(cfg.seed).stream("sampling");

  std::vector<std::size_t> order = train_idx;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr_now =
        cfg.lr * std::pow(cfg.lr_decay,
                          static_cast<double>((epoch - 1) / cfg.lr_decay_every));

    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = shuffle_rng.uniform_below(i);
      std::swap(order[i - 1], order[j]);
    }

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_size) {
      const std::size_t end = std::min(start + cfg.batch_size, order.size());
      if (end - start < 2) break;  // a single leftover record has no negative
      std::vector<std::size_t> batch(order.begin() + start,
                                     order.begin() + end);
      Tape tape;
      Tensor s = m.score_matrix(tape, train_corpus, batch);
      Tensor loss = triplet_loss(tape, s, cfg.margin);
      tape.backward(loss);
      adamw_step(m.params, names, tape, opt, cfg, lr_now);
      loss_sum += loss.value();
      ++batches;
    }

    const double epoch_loss = batches ? loss_sum / static_cast<double>(batches)
                                      : 0.0;
    const eval::RetrievalReport val_report = eval::evaluate(m, val_corpus);
    result.metrics.push_back({epoch, epoch_loss, val_report.rsum, lr_now});
    if (val_report.rsum > result.best_val_rsum) {
      result.best_val_rsum = val_report.rsum;
      result.best_epoch = epoch;
      result.best.params = m.clone_params();
    }
  }
  if (cfg.epochs == 0) {
    // Initialization is the checkpoint; score it for the record.
    result.best_val_rsum = eval::evaluate(m, val_corpus).rsum;
  }
  return result;
}

}  // namespace dcin::trainer
