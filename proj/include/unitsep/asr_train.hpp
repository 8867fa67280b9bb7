// Copyright 2026 unitsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <fstream>
#include <map>

#include "unitsep/checkpoint.hpp"
#include "unitsep/nn/adam.hpp"
#include "unitsep/pit.hpp"

namespace unitsep {

// One training example: a mixture plus its K quantized target streams.
struct AsrExample {
  Waveform mixture;
  std::vector<UnitSequence> targets;
  std::vector<int> speakers;  // empty when the speaker head is unused
};

struct AsrTrainOptions {
  int epochs = 20;
  int batch_size = 8;
  nn::AdamConfig adam;  // lr 1e-3, clip 5.0
  double speaker_weight = 0.5;
  std::uint64_t seed = 1;
  std::string progress_path;    // newline-delimited JSON records, "" disables
  std::string checkpoint_path;  // "" disables checkpointing/resume
  bool resume = false;
  int log_every = 20;
};

struct AsrTrainStats {
  std::vector<double> epoch_loss;
  std::int64_t steps = 0;
};

namespace detail {

inline void verify_fingerprints(const SeparatorModel& model,
                                const std::vector<AsrExample>& dataset) {
  for (const auto& ex : dataset) {
    if (static_cast<int>(ex.targets.size()) != model.config().num_streams) {
      throw ShapeError("train: example stream count does not match model K");
    }
    for (const auto& t : ex.targets) {
      if (t.codebook_id != model.codebook_id()) {
        throw FormatError("train: target fingerprint '" + t.codebook_id +
                          "' does not match model codebook '" + model.codebook_id() +
                          "'");
      }
    }
  }
}

// Equal-length batches in shuffled order; mixtures of different lengths
// never share a graph.
inline std::vector<std::vector<int>> make_batches(const std::vector<AsrExample>& dataset,
                                                  int batch_size, Rng& rng) {
  std::vector<int> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);
  std::map<std::size_t, std::vector<int>> by_len;
  for (int idx : order) by_len[dataset[idx].mixture.size()].push_back(idx);
  std::vector<std::vector<int>> batches;
  for (auto& [len, idxs] : by_len) {
    for (std::size_t at = 0; at < idxs.size(); at += batch_size) {
      const std::size_t end = std::min(at + batch_size, idxs.size());
      batches.emplace_back(idxs.begin() + at, idxs.begin() + end);
    }
  }
  // Interleave length groups deterministically.
  rng.shuffle(batches);
  return batches;
}

}  // namespace detail

// Minimizes the mean uPIT loss over the dataset with adaptive-moment descent.
// Deterministic under (model init seed, options seed); resumable from the
// checkpoint without perturbing the trajectory.
inline AsrTrainStats train_separator(SeparatorModel& model,
                                     const std::vector<AsrExample>& dataset,
                                     const AsrTrainOptions& opts) {
  if (dataset.empty()) throw FormatError("train: empty dataset");
  detail::verify_fingerprints(model, dataset);

  nn::Adam adam(opts.adam);
  Rng rng(opts.seed);
  int start_epoch = 0;
  std::int64_t step = 0;

  if (opts.resume && !opts.checkpoint_path.empty()) {
    std::ifstream probe(opts.checkpoint_path);
    if (probe.good()) {
      const CheckpointMeta meta = load_checkpoint(opts.checkpoint_path, model.params());
      adam.set_steps(meta.adam_t);
      rng.load_state(meta.rng_state);
      start_epoch = meta.extra.value("epoch", 0);
      step = meta.step;
    }
  }

  std::ofstream progress;
  if (!opts.progress_path.empty()) {
    progress.open(opts.progress_path, start_epoch > 0 ? std::ios::app : std::ios::out);
    if (!progress) throw IoError("train: cannot open progress file");
  }

  const bool use_speakers = model.config().num_speakers > 0 &&
                            !dataset.front().speakers.empty();
  std::vector<std::vector<int>> last_perm(dataset.size());

  AsrTrainStats stats;
  stats.steps = step;
  for (int epoch = start_epoch; epoch < opts.epochs; ++epoch) {
    const auto batches = detail::make_batches(dataset, opts.batch_size, rng);
    double epoch_loss = 0.0;
    std::int64_t epoch_frames = 0;

    for (const auto& batch : batches) {
      nn::Graph g;
      std::vector<Waveform> waves;
      waves.reserve(batch.size());
      for (int idx : batch) waves.push_back(dataset[idx].mixture);
      auto outs = model.forward(g, waves);

      nn::Var total;
      int swaps = 0;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const AsrExample& ex = dataset[batch[i]];
        PitResult pit =
            use_speakers
                ? upit_loss(g, outs[i], ex.targets, &ex.speakers, opts.speaker_weight)
                : upit_loss(g, outs[i], ex.targets);
        auto& prev = last_perm[batch[i]];
        if (!prev.empty() && prev != pit.permutation) ++swaps;
        prev = pit.permutation;
        total = i == 0 ? pit.loss_var : g.add(total, pit.loss_var);
      }
      nn::Var loss = g.smul(total, 1.0 / static_cast<double>(batch.size()));
      model.params().zero_grads();
      g.backward(loss);
      adam.step(model.params());
      ++step;

      const double loss_value = loss.val()(0, 0);
      epoch_loss += loss_value * static_cast<double>(batch.size());
      epoch_frames += static_cast<std::int64_t>(batch.size());
      if (progress.is_open() && (step % opts.log_every == 0 || step == 1)) {
        progress << "{\"step\":" << step << ",\"epoch\":" << epoch
                 << ",\"loss\":" << loss_value << ",\"perm_swap_rate\":"
                 << static_cast<double>(swaps) / static_cast<double>(batch.size())
                 << "}\n";
        progress.flush();
      }
    }
    stats.epoch_loss.push_back(epoch_loss / static_cast<double>(dataset.size()));
    (void)epoch_frames;

    if (!opts.checkpoint_path.empty()) {
      CheckpointMeta meta;
      meta.kind = "separator";
      meta.config = model.config().to_json();
      meta.codebook_id = model.codebook_id();
      meta.step = step;
      meta.adam_t = adam.steps();
      meta.rng_state = rng.save_state();
      meta.extra = {{"epoch", epoch + 1},
                    {"last_epoch_loss", stats.epoch_loss.back()}};
      save_checkpoint(opts.checkpoint_path + ".tmp", meta, model.params());
      std::rename((opts.checkpoint_path + ".tmp").c_str(),
                  opts.checkpoint_path.c_str());
    }
  }
  stats.steps = step;
  return stats;
}

// Convenience for inference: decode a mixture into K unit sequences plus
// speaker ids with a frozen model.
inline DecodedStreams separate_units(SeparatorModel& model, const Waveform& mixture) {
  nn::Graph g;
  const SeparationOutput out = model.forward_one(g, mixture);
  return decode_units(out, model.config().unit_hop, model.codebook_id());
}

}  // namespace unitsep
