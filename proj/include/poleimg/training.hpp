#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "poleimg/adam.hpp"
#include "poleimg/checkpoint.hpp"
#include "poleimg/dataset.hpp"
#include "poleimg/encoder.hpp"

namespace poleimg {

enum class Regime { Contrastive, Supervised };

std::string to_string(Regime regime);
Regime regime_from_string(const std::string& s);

struct TrainConfig {
  Regime regime = Regime::Contrastive;
  int epochs = 30;
  double lr = 1e-3;
  double temperature = 0.07;
  int batch_pole_ids = 32;  // contrastive: pole ids per batch (2 views each)
  int sl_batch_pairs = 64;  // supervised: pairs per step
  double split_ratio = 0.8;
  bool augment_shift = false;
  int emb_dim = 128;
  std::uint64_t seed = 1;

  void validate() const;
};

struct Split {
  ObservationSet train;
  ObservationSet val;
  std::vector<std::int64_t> train_ids;
  std::vector<std::int64_t> val_ids;
};

// Shuffles the distinct pole ids with `seed` and assigns round(ratio * n)
// of them (at least one, at most n - 1) to train. Observations follow their
// pole id, so no pole appears on both sides.
Split split_by_pole(const ObservationSet& obs, double ratio, std::uint64_t seed);

struct ClBatch {
  // 2N images: views a_1..a_N followed by views b_1..b_N.
  std::vector<ImageMatrix<double>> images;
  std::vector<std::size_t> source;  // index into the observation set, per image
  std::vector<int> shifts;          // circular column shift applied, per image
  std::vector<std::pair<std::size_t, std::size_t>> positives;  // (i, i + N)
};

ClBatch build_cl_batch(const ObservationSet& train, const std::vector<std::int64_t>& ids,
                       std::uint64_t seed, bool augment_shift = false);

struct SlPair {
  std::size_t a = 0;  // indices into the observation set
  std::size_t b = 0;
  int label = 0;      // 1 = same pole
};

// ceil(count / 2) positive and floor(count / 2) negative pairs, no pair of
// observations repeated within one call.
std::vector<SlPair> build_sl_pairs(const ObservationSet& train, int count, std::uint64_t seed);

// Cross-session Recall@1 on `obs`: queries come from the lowest session id,
// the database is every other session.
double cross_session_recall_at_1(const ParameterSet<double>& params, const EncoderShape& shape,
                                 const ObservationSet& obs);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_recall_at_1 = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochRecord> history;
  double initial_val_recall_at_1 = 0.0;
  Split split;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Calibration tensors appended to the encoder parameters for supervised runs.
inline constexpr const char* kSlAlpha = "sl.alpha";
inline constexpr const char* kSlBeta = "sl.beta";

TrainResult train(const ObservationSet& obs, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

struct StepResult {
  double loss = 0.0;
  ParameterSet<double> grads;  // same layout as the parameters
};

// Mean NT-Xent over one contrastive batch and its parameter gradient.
StepResult contrastive_step(const ParameterSet<double>& params, const EncoderShape& shape,
                            const ClBatch& batch, double temperature);

// Mean SL-BCE over `pairs` (indices into `images`). `params` must carry the
// sl.alpha and sl.beta calibration tensors after the encoder tensors.
StepResult supervised_step(const ParameterSet<double>& params, const EncoderShape& shape,
                           const std::vector<ImageMatrix<double>>& images,
                           const std::vector<SlPair>& pairs);

void write_history(const std::vector<EpochRecord>& history, const std::filesystem::path& path);

}  // namespace poleimg
