#include "poleimg/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "poleimg/errors.hpp"
#include "poleimg/losses.hpp"
#include "poleimg/retrieval.hpp"
#include "poleimg/rng.hpp"

namespace poleimg {

namespace {

std::map<std::int64_t, std::vector<std::size_t>> index_by_pole(const ObservationSet& obs) {
  std::map<std::int64_t, std::vector<std::size_t>> by_pole;
  for (std::size_t i = 0; i < obs.size(); ++i) by_pole[obs[i].pole_id].push_back(i);
  return by_pole;
}

std::uint64_t step_index(int epoch, std::size_t step) {
  return (static_cast<std::uint64_t>(epoch) << 32) | static_cast<std::uint64_t>(step);
}

ImageMatrix<double> shifted(const BinaryGrid& grid, int shift) {
  return to_matrix(shift == 0 ? grid : circular_shift(grid, shift));
}

}  // namespace

StepResult contrastive_step(const ParameterSet<double>& params, const EncoderShape& shape,
                            const ClBatch& batch, double temperature) {
  EncoderCache<double> cache;
  const Matrix<double> desc = encoder_forward<double>(params, shape, batch.images, &cache);
  const auto loss = nt_xent_loss<double>(desc, temperature);
  return {loss.loss, encoder_backward(params, cache, loss.grad)};
}

StepResult supervised_step(const ParameterSet<double>& params, const EncoderShape& shape,
                           const std::vector<ImageMatrix<double>>& images,
                           const std::vector<SlPair>& pairs) {
  const auto* alpha_t = params.find(kSlAlpha);
  const auto* beta_t = params.find(kSlBeta);
  if (!alpha_t || !beta_t) throw ContractError("supervised parameters lack calibration tensors");
  const double alpha = alpha_t->value(0, 0);
  const double beta = beta_t->value(0, 0);

  // Each pair contributes its two views; layout [a_1..a_P, b_1..b_P].
  std::vector<ImageMatrix<double>> batch;
  batch.reserve(2 * pairs.size());
  for (const auto& p : pairs) batch.push_back(images[p.a]);
  for (const auto& p : pairs) batch.push_back(images[p.b]);

  EncoderCache<double> cache;
  const Matrix<double> desc = encoder_forward<double>(params, shape, batch, &cache);
  const auto n = static_cast<Eigen::Index>(pairs.size());
  Matrix<double> ddesc = Matrix<double>::Zero(desc.rows(), desc.cols());
  double loss = 0.0, dalpha = 0.0, dbeta = 0.0;
  const double scale = 1.0 / static_cast<double>(pairs.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto r = sl_bce_loss<double>(desc.col(i), desc.col(n + i), pairs[static_cast<std::size_t>(i)].label,
                                       alpha, beta);
    loss += r.loss * scale;
    ddesc.col(i) = r.grad_a * scale;
    ddesc.col(n + i) = r.grad_b * scale;
    dalpha += r.grad_alpha * scale;
    dbeta += r.grad_beta * scale;
  }
  StepResult out{loss, encoder_backward(params, cache, ddesc)};
  out.grads.find(kSlAlpha)->value(0, 0) = dalpha;
  out.grads.find(kSlBeta)->value(0, 0) = dbeta;
  return out;
}

std::string to_string(Regime regime) { return regime == Regime::Contrastive ? "cl" : "sl"; }

Regime regime_from_string(const std::string& s) {
  if (s == "cl" || s == "CL") return Regime::Contrastive;
  if (s == "sl" || s == "SL") return Regime::Supervised;
  throw ConfigError("unknown training regime '" + s + "' (expected cl or sl)");
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("invalid TrainConfig: epochs must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("invalid TrainConfig: lr must be > 0");
  if (!(temperature > 0.0)) throw ConfigError("invalid TrainConfig: temperature must be > 0");
  if (batch_pole_ids < 2) throw ConfigError("invalid TrainConfig: batch_pole_ids must be >= 2");
  if (sl_batch_pairs < 2) throw ConfigError("invalid TrainConfig: sl_batch_pairs must be >= 2");
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) {
    throw ConfigError("invalid TrainConfig: split_ratio must be in (0, 1)");
  }
  if (emb_dim < 1) throw ConfigError("invalid TrainConfig: emb_dim must be >= 1");
}

Split split_by_pole(const ObservationSet& obs, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw SplitError("split ratio must be in (0, 1)");
  std::vector<std::int64_t> ids = pole_ids(obs);
  if (ids.size() < 2) {
    throw SplitError("split needs at least 2 distinct pole ids, got " + std::to_string(ids.size()));
  }
  Rng rng(seed, "split");
  rng.shuffle(ids);
  const auto n = static_cast<long>(ids.size());
  const long n_train = std::clamp(std::lround(ratio * static_cast<double>(n)), 1L, n - 1);

  Split split;
  split.train_ids.assign(ids.begin(), ids.begin() + n_train);
  split.val_ids.assign(ids.begin() + n_train, ids.end());
  std::sort(split.train_ids.begin(), split.train_ids.end());
  std::sort(split.val_ids.begin(), split.val_ids.end());
  const std::set<std::int64_t> train_set(split.train_ids.begin(), split.train_ids.end());
  for (const auto& o : obs) (train_set.count(o.pole_id) ? split.train : split.val).push_back(o);
  return split;
}

ClBatch build_cl_batch(const ObservationSet& train, const std::vector<std::int64_t>& ids,
                       std::uint64_t seed, bool augment_shift) {
  const auto by_pole = index_by_pole(train);
  const std::size_t n = ids.size();
  std::vector<std::size_t> view_a(n), view_b(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto it = by_pole.find(ids[k]);
    if (it == by_pole.end() || it->second.size() < 2) {
      throw BatchError("pole " + std::to_string(ids[k]) + " has fewer than 2 observations");
    }
    const auto& members = it->second;
    Rng rng(seed, "cl-views", static_cast<std::uint64_t>(k));
    const std::size_t first = members[static_cast<std::size_t>(rng.below(members.size()))];
    std::vector<std::size_t> other_session, rest;
    for (std::size_t m : members) {
      if (m == first) continue;
      rest.push_back(m);
      if (train[m].session_id != train[first].session_id) other_session.push_back(m);
    }
    const auto& pool = other_session.empty() ? rest : other_session;
    view_a[k] = first;
    view_b[k] = pool[static_cast<std::size_t>(rng.below(pool.size()))];
  }

  ClBatch batch;
  Rng shift_rng(seed, "cl-shift");
  auto add = [&](std::size_t obs_index) {
    const int cols = static_cast<int>(train[obs_index].image.grid.cols());
    const int shift = augment_shift ? static_cast<int>(shift_rng.below(static_cast<std::uint64_t>(cols))) : 0;
    batch.images.push_back(shifted(train[obs_index].image.grid, shift));
    batch.source.push_back(obs_index);
    batch.shifts.push_back(shift);
  };
  for (std::size_t k = 0; k < n; ++k) add(view_a[k]);
  for (std::size_t k = 0; k < n; ++k) add(view_b[k]);
  for (std::size_t k = 0; k < n; ++k) batch.positives.emplace_back(k, k + n);
  return batch;
}

std::vector<SlPair> build_sl_pairs(const ObservationSet& train, int count, std::uint64_t seed) {
  if (count < 1) throw PairingError("pair count must be >= 1");
  const auto by_pole = index_by_pole(train);
  if (by_pole.size() < 2) throw PairingError("pairing needs at least 2 pole ids");

  std::vector<std::pair<std::size_t, std::size_t>> positives;
  for (const auto& [id, members] : by_pole) {
    for (std::size_t i = 0; i < members.size(); ++i) {
      for (std::size_t j = i + 1; j < members.size(); ++j) positives.emplace_back(members[i], members[j]);
    }
  }
  const auto n_pos = static_cast<std::size_t>((count + 1) / 2);
  const auto n_neg = static_cast<std::size_t>(count / 2);
  if (positives.empty()) throw PairingError("no pole has two observations; cannot form a positive pair");
  if (positives.size() < n_pos) {
    throw PairingError("requested " + std::to_string(n_pos) + " distinct positive pairs, only " +
                       std::to_string(positives.size()) + " exist");
  }
  const std::size_t n_obs = train.size();
  const std::size_t all_pairs = n_obs * (n_obs - 1) / 2;
  const std::size_t negatives_available = all_pairs - positives.size();
  if (negatives_available < n_neg) {
    throw PairingError("requested " + std::to_string(n_neg) + " distinct negative pairs, only " +
                       std::to_string(negatives_available) + " exist");
  }

  Rng rng(seed, "sl-pairs");
  std::vector<SlPair> pairs;
  pairs.reserve(static_cast<std::size_t>(count));
  // Partial Fisher-Yates draws positives uniformly without replacement.
  for (std::size_t i = 0; i < n_pos; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(positives.size() - i));
    std::swap(positives[i], positives[j]);
    pairs.push_back({positives[i].first, positives[i].second, 1});
  }

  std::set<std::pair<std::size_t, std::size_t>> seen;
  if (negatives_available <= 4 * n_neg) {
    std::vector<std::pair<std::size_t, std::size_t>> negatives;
    for (std::size_t i = 0; i < n_obs; ++i) {
      for (std::size_t j = i + 1; j < n_obs; ++j) {
        if (train[i].pole_id != train[j].pole_id) negatives.emplace_back(i, j);
      }
    }
    for (std::size_t i = 0; i < n_neg; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(negatives.size() - i));
      std::swap(negatives[i], negatives[j]);
      pairs.push_back({negatives[i].first, negatives[i].second, 0});
    }
  } else {
    while (seen.size() < n_neg) {
      std::size_t a = static_cast<std::size_t>(rng.below(n_obs));
      std::size_t b = static_cast<std::size_t>(rng.below(n_obs));
      if (train[a].pole_id == train[b].pole_id) continue;
      if (a > b) std::swap(a, b);
      if (seen.emplace(a, b).second) pairs.push_back({a, b, 0});
    }
  }
  // Interleave labels so neither class is clustered at one end of the batch.
  rng.shuffle(pairs);
  return pairs;
}

double cross_session_recall_at_1(const ParameterSet<double>& params, const EncoderShape& shape,
                                 const ObservationSet& obs) {
  if (obs.empty()) return 0.0;
  std::uint32_t query_session = obs.front().session_id;
  for (const auto& o : obs) query_session = std::min(query_session, o.session_id);
  std::set<std::int64_t> in_db;
  for (const auto& o : obs) {
    if (o.session_id != query_session) in_db.insert(o.pole_id);
  }
  ObservationSet queries, db;
  for (const auto& o : obs) {
    if (o.session_id != query_session) {
      db.push_back(o);
    } else if (in_db.count(o.pole_id)) {
      queries.push_back(o);
    }
  }
  if (queries.empty()) return 0.0;
  const Matrix<double> q = embed_descriptors(params, shape, queries);
  const Matrix<double> d = embed_descriptors(params, shape, db);
  std::vector<EntryLabel> ql, dl;
  for (const auto& o : queries) ql.push_back({o.pole_id, o.session_id});
  for (const auto& o : db) dl.push_back({o.pole_id, o.session_id});
  const EvalReport report = evaluate_ranking(ql, dl, [&](std::size_t i, std::size_t j) {
    return (q.col(static_cast<Eigen::Index>(i)) - d.col(static_cast<Eigen::Index>(j))).squaredNorm();
  });
  return report.recall_at.at(1);
}

TrainResult train(const ObservationSet& obs, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  require_unique_observations(obs);
  if (obs.empty()) throw SplitError("no observations to train on");

  const auto& first = obs.front().image.grid;
  const EncoderShape shape{static_cast<int>(first.rows()), static_cast<int>(first.cols()), config.emb_dim};
  for (const auto& o : obs) {
    if (o.image.grid.rows() != shape.rows || o.image.grid.cols() != shape.cols) {
      throw ShapeError("all training images must share one shape");
    }
  }

  TrainResult result;
  result.split = split_by_pole(obs, config.split_ratio, config.seed);
  const ObservationSet& train_set = result.split.train;

  ParameterSet<double> params = init_encoder_params<double>(shape, derive_seed(config.seed, "encoder-init"));
  if (config.regime == Regime::Supervised) {
    auto alpha = make_tensor<double>(kSlAlpha, {1});
    alpha.value(0, 0) = 10.0;
    params.tensors.push_back(std::move(alpha));
    params.tensors.push_back(make_tensor<double>(kSlBeta, {1}));
  }
  AdamState<double> adam = adam_init(params, config.lr);
  result.initial_val_recall_at_1 = cross_session_recall_at_1(params, shape, result.split.val);

  std::vector<std::int64_t> cl_ids;
  std::vector<ImageMatrix<double>> images;
  if (config.regime == Regime::Contrastive) {
    for (const auto& [id, members] : index_by_pole(train_set)) {
      if (members.size() >= 2) cl_ids.push_back(id);
    }
    if (config.epochs > 0 && cl_ids.size() < static_cast<std::size_t>(config.batch_pole_ids)) {
      throw BatchError("only " + std::to_string(cl_ids.size()) +
                       " training poles have two observations; batch_pole_ids is " +
                       std::to_string(config.batch_pole_ids));
    }
  } else {
    images.reserve(train_set.size());
    for (const auto& o : train_set) images.push_back(to_matrix(o.image.grid));
  }

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t steps = 0;
    auto apply = [&](StepResult&& step, std::size_t index) {
      if (!std::isfinite(step.loss)) {
        throw TrainingError("epoch " + std::to_string(epoch) + " step " + std::to_string(index) +
                            ": non-finite loss");
      }
      try {
        adam_step(adam, params, step.grads);
      } catch (const TrainingError& e) {
        throw TrainingError("epoch " + std::to_string(epoch) + " step " + std::to_string(index) +
                            ": " + e.what());
      }
      loss_sum += step.loss;
      ++steps;
    };

    if (config.regime == Regime::Contrastive) {
      std::vector<std::int64_t> order = cl_ids;
      Rng(config.seed, "cl-epoch", static_cast<std::uint64_t>(epoch)).shuffle(order);
      const std::size_t n = static_cast<std::size_t>(config.batch_pole_ids);
      for (std::size_t b = 0; b + 1 <= order.size() / n; ++b) {
        const std::vector<std::int64_t> ids(order.begin() + static_cast<std::ptrdiff_t>(b * n),
                                            order.begin() + static_cast<std::ptrdiff_t>((b + 1) * n));
        const ClBatch batch = build_cl_batch(train_set, ids,
                                             derive_seed(config.seed, "cl-batch", step_index(epoch, b)),
                                             config.augment_shift);
        apply(contrastive_step(params, shape, batch, config.temperature), b);
      }
    } else {
      const std::size_t n_steps =
          std::max<std::size_t>(1, train_set.size() / static_cast<std::size_t>(config.sl_batch_pairs));
      for (std::size_t s = 0; s < n_steps; ++s) {
        const auto pairs = build_sl_pairs(train_set, config.sl_batch_pairs,
                                          derive_seed(config.seed, "sl-step", step_index(epoch, s)));
        apply(supervised_step(params, shape, images, pairs), s);
      }
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = steps ? loss_sum / static_cast<double>(steps) : 0.0;
    record.val_recall_at_1 = cross_session_recall_at_1(params, shape, result.split.val);
    result.history.push_back(record);
    if (on_epoch) on_epoch(record);
  }

  result.checkpoint.shape = shape;
  result.checkpoint.params = std::move(params);
  return result;
}

void write_history(const std::vector<EpochRecord>& history, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "epoch\ttrain_loss\tval_recall_at_1\n";
  out.precision(17);
  for (const auto& r : history) out << r.epoch << '\t' << r.train_loss << '\t' << r.val_recall_at_1 << '\n';
}

}  // namespace poleimg
