#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dcin/corpus.hpp"
#include "dcin/model.hpp"
#include "dcin/tensor.hpp"

namespace dcin::trainer {

struct TrainConfig {
  std::size_t batch_size = 128;
  double margin = 0.2;
  double lr = 5e-4;
  double lr_decay = 0.9;
  std::size_t lr_decay_every = 10;  // epochs
  std::size_t epochs = 25;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 42;

  void validate() const;
};

// Hinge-based bidirectional triplet loss over a square score batch, using the
// hardest in-batch negative per direction (argmax ties to the smallest
// index), averaged over the batch.
Tensor triplet_loss(Tape& tape, const Tensor& scores, double alpha);

struct AdamWState {
  long long step = 0;
  // name -> (first moment, second moment)
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>
      moments;
};

// One decoupled-weight-decay adaptive update over the named parameters, using
// the gradients recorded on the tape.
void adamw_step(std::map<std::string, Tensor>& params,
                const std::vector<std::string>& names, const Tape& tape,
                AdamWState& state, const TrainConfig& cfg, double lr_now);

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss = 0.0;
  double val_rsum = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  model::DcinModel best;
  std::size_t best_epoch = 0;
  double best_val_rsum = 0.0;
  std::vector<EpochMetrics> metrics;
};

// Deterministic end-to-end training: builds the model from the train corpus,
// runs seeded shuffled mini-batches, decays the learning rate every
// lr_decay_every epochs, and keeps the checkpoint with the best validation
// rSum (the initialization when epochs == 0).
TrainResult train(const Corpus& train_corpus, const Corpus& val_corpus,
                  const model::Settings& settings, const TrainConfig& cfg);

}  // namespace dcin::trainer
