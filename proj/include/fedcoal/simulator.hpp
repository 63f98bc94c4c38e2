#pragma once

// Experiment orchestration: data, partitions, rounds, evaluation.
//
// Round r (r >= 1) for both strategies:
//   theta(r) <- aggregate(omega(r-1))        coalition round or FedAvg
//   omega_i(r) <- client_update(theta(r))    every client, possibly concurrently
//   evaluate theta(r) on the test set        every eval_every rounds and at r = R
// with omega(0) = client_update(theta(0)) and theta(0) = init_model.
//
// Sub-seeds come from derive_seed(master_seed, purpose, round, client).

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "fedcoal/coalition.hpp"
#include "fedcoal/data.hpp"
#include "fedcoal/error.hpp"
#include "fedcoal/fedavg.hpp"
#include "fedcoal/models.hpp"
#include "fedcoal/paramvec.hpp"
#include "fedcoal/rng.hpp"

namespace fedcoal {

enum class StrategyKind { Coalition, FedAvg };

struct Strategy {
  StrategyKind kind = StrategyKind::Coalition;
  std::size_t coalitions = 3;
  FedAvgWeighting weighting = FedAvgWeighting::Uniform;

  std::string label() const { return kind == StrategyKind::Coalition ? "coalition" : "fedavg"; }

  static Strategy coalition(std::size_t k = 3) { return {StrategyKind::Coalition, k, FedAvgWeighting::Uniform}; }
  static Strategy fedavg(FedAvgWeighting w = FedAvgWeighting::Uniform) { return {StrategyKind::FedAvg, 3, w}; }
};

struct SynthSource {
  std::size_t classes = 3;
  std::size_t per_class = 200;
  std::size_t test_per_class = 200;
  std::size_t input_dim = 10;
  double separation = 5.0;
};

struct IdxSource {
  std::filesystem::path train_images;
  std::filesystem::path train_labels;
  std::filesystem::path test_images;
  std::filesystem::path test_labels;
};

struct ExperimentConfig {
  std::uint64_t master_seed = 0;
  std::size_t client_count = 10;
  std::size_t rounds = 50;
  Strategy strategy;
  ModelSpec model;
  TrainConfig train;
  PartitionPlan partition;
  std::variant<SynthSource, IdxSource> source = SynthSource{};
  std::size_t eval_every = 1;
  std::size_t threads = 1;
  bool snapshot_weights = false;
  bool record_wall_time = true;

  // Test-harness overrides: every client trains on the full training set /
  // every client draws from the same shuffle stream.
  bool replicate_data = false;
  bool shared_client_seed = false;

  void validate() const {
    if (client_count < 1) throw InvalidArgument("config: client_count must be >= 1");
    if (rounds < 1) throw InvalidArgument("config: rounds must be >= 1");
    if (eval_every < 1) throw InvalidArgument("config: eval_every must be >= 1");
    if (threads < 1) throw InvalidArgument("config: threads must be >= 1");
    if (strategy.kind == StrategyKind::Coalition) {
      if (strategy.coalitions < 2) throw InvalidArgument("config: coalitions must be >= 2");
      if (client_count < strategy.coalitions) {
        throw InvalidArgument("config: client_count (" + std::to_string(client_count) +
                              ") must be >= coalitions (" + std::to_string(strategy.coalitions) + ")");
      }
    }
    model.validate();
    train.validate();
  }
};

struct RoundRecord {
  std::uint64_t round = 0;
  std::string strategy;
  double test_accuracy = 0.0;
  double test_loss = 0.0;
  std::vector<double> client_train_loss;
  // Coalition strategy only.
  std::vector<std::size_t> coalition_sizes;
  std::vector<ClientId> center_ids;              // centers elected for the next round
  std::vector<double> barycenter_distances;      // pairs (0,1), (0,2), ..., (K-2,K-1)
  std::optional<double> wall_ms;
  // Present when snapshot_weights is set: the client weights and coalition
  // state this round aggregated.
  std::optional<ClientWeights> weight_snapshot;
  std::optional<CoalitionState> coalition_snapshot;
};

/// Thrown when a run stops early; carries the records completed so far.
class ExperimentAborted : public Error {
 public:
  ExperimentAborted(const std::string& what, std::vector<RoundRecord> partial)
      : Error(what), partial_(std::move(partial)) {}
  const std::vector<RoundRecord>& partial_records() const noexcept { return partial_; }

 private:
  std::vector<RoundRecord> partial_;
};

struct PreparedData {
  std::shared_ptr<const LabeledDataset> train;
  std::shared_ptr<const LabeledDataset> test;
  std::vector<ClientDataset> clients;
};

/// The config with every sub-seed derived from master_seed.
inline ExperimentConfig seeded(ExperimentConfig cfg) {
  cfg.model.init_seed = derive_seed(cfg.master_seed, "model-init");
  cfg.partition.seed = derive_seed(cfg.master_seed, "partition");
  cfg.partition.client_count = cfg.client_count;
  cfg.train.shuffle_seed = derive_seed(cfg.master_seed, "client-train");
  return cfg;
}

inline PreparedData prepare_data(const ExperimentConfig& raw) {
  const ExperimentConfig cfg = seeded(raw);
  PreparedData out;
  if (const auto* synth = std::get_if<SynthSource>(&cfg.source)) {
    out.train = std::make_shared<const LabeledDataset>(synth_blobs(
        synth->classes, synth->per_class, synth->input_dim, synth->separation,
        derive_seed(cfg.master_seed, "synth-train")));
    out.test = std::make_shared<const LabeledDataset>(synth_blobs(
        synth->classes, synth->test_per_class, synth->input_dim, synth->separation,
        derive_seed(cfg.master_seed, "synth-test")));
  } else {
    const auto& idx = std::get<IdxSource>(cfg.source);
    out.train = std::make_shared<const LabeledDataset>(
        load_idx(idx.train_images, idx.train_labels, cfg.model.class_count));
    out.test = std::make_shared<const LabeledDataset>(
        load_idx(idx.test_images, idx.test_labels, cfg.model.class_count));
  }
  if (cfg.replicate_data) {
    for (std::size_t c = 0; c < cfg.client_count; ++c) {
      auto shard = whole(out.train, c);
      out.clients.push_back(std::move(shard));
    }
  } else {
    out.clients = partition(out.train, cfg.partition);
  }
  return out;
}

namespace detail {

/// Runs fn(i) for i in [0, n) on `threads` workers (static stride split).
/// Rethrows the exception of the lowest failing index.
template <typename Fn>
void for_each_client(std::size_t n, std::size_t threads, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t i = first; i < n; i += stride) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t t = std::min(threads, n);
  if (t <= 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(t);
    for (std::size_t w = 0; w < t; ++w) pool.emplace_back(work, w, t);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct LocalResult {
  ClientWeights weights;
  std::vector<double> train_loss;
};

inline LocalResult train_all(const ParamVector& theta, const ExperimentConfig& cfg,
                             const PreparedData& data, std::uint64_t round) {
  const std::size_t n = data.clients.size();
  std::vector<std::optional<ParamVector>> slots(n);
  std::vector<double> losses(n, 0.0);
  for_each_client(n, cfg.threads, [&](std::size_t i) {
    const auto& shard = data.clients[i];
    const std::uint64_t stream = cfg.shared_client_seed ? 0 : shard.client_id;
    slots[i] = client_update(theta, cfg.model, shard, cfg.train, round, stream);
    losses[i] = loss_and_accuracy(*slots[i], cfg.model, shard).loss;
  });
  LocalResult r;
  r.weights.reserve(n);
  for (auto& s : slots) r.weights.push_back(std::move(*s));
  r.train_loss = std::move(losses);
  return r;
}

}  // namespace detail

/// Runs cfg.strategy on already prepared data.
inline std::vector<RoundRecord> run_prepared(const ExperimentConfig& raw, const PreparedData& data) {
  raw.validate();
  const ExperimentConfig cfg = seeded(raw);
  const Strategy& strategy = cfg.strategy;
  if (strategy.kind == StrategyKind::Coalition && data.clients.size() < strategy.coalitions) {
    throw InvalidArgument("config: fewer clients than coalitions");
  }
  std::vector<std::size_t> sizes;
  for (const auto& c : data.clients) sizes.push_back(c.size());
  const ClientDataset test_view = whole(data.test);

  std::vector<RoundRecord> records;
  try {
    const ParamVector theta0 = init_model(cfg.model);
    auto local = detail::train_all(theta0, cfg, data, 0);

    CoalitionState state;
    if (strategy.kind == StrategyKind::Coalition) {
      std::vector<ClientId> centers;
      try {
        centers = init_centers(local.weights, strategy.coalitions, derive_seed(cfg.master_seed, "init-centers"));
      } catch (const DegenerateWeights&) {
        // All candidate subsets contain a zero distance (e.g. identical
        // clients); fall back to the lowest ids.
        for (ClientId c = 0; c < strategy.coalitions; ++c) centers.push_back(c);
      }
      state = initial_state(std::move(centers));
    }

    for (std::uint64_t r = 1; r <= cfg.rounds; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      RoundRecord rec;
      rec.round = r;
      rec.strategy = strategy.label();
      if (cfg.snapshot_weights) rec.weight_snapshot = local.weights;

      std::optional<ParamVector> theta;
      if (strategy.kind == StrategyKind::Coalition) {
        auto result = coalition_round(local.weights, state);
        state = std::move(result.state);
        theta = std::move(result.global.theta);
        for (const auto& m : state.members) rec.coalition_sizes.push_back(m.size());
        rec.center_ids = state.centers;
        for (std::size_t a = 0; a < state.barycenters.size(); ++a) {
          for (std::size_t b = a + 1; b < state.barycenters.size(); ++b) {
            rec.barycenter_distances.push_back(euclidean_distance(state.barycenters[a], state.barycenters[b]));
          }
        }
        if (cfg.snapshot_weights) rec.coalition_snapshot = state;
      } else {
        theta = fedavg_aggregate(local.weights, sizes, strategy.weighting);
      }

      local = detail::train_all(*theta, cfg, data, r);
      rec.client_train_loss = local.train_loss;

      if (r % cfg.eval_every == 0 || r == cfg.rounds) {
        const auto eval = loss_and_accuracy(*theta, cfg.model, test_view);
        rec.test_accuracy = eval.accuracy;
        rec.test_loss = eval.loss;
        if (cfg.record_wall_time) {
          rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        }
        records.push_back(std::move(rec));
      }
    }
  } catch (const TrainingDiverged& e) {
    throw ExperimentAborted(std::string("training diverged: ") + e.what(), std::move(records));
  }
  return records;
}

inline std::vector<RoundRecord> run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  return run_prepared(cfg, prepare_data(cfg));
}

struct StrategyRun {
  Strategy strategy;
  std::vector<RoundRecord> records;
};

/// Runs every strategy on the same partition and initial weights.
inline std::vector<StrategyRun> compare_strategies(const ExperimentConfig& base,
                                                   const std::vector<Strategy>& strategies) {
  if (strategies.empty()) throw InvalidArgument("compare_strategies: no strategies");
  for (const auto& s : strategies) {
    ExperimentConfig c = base;
    c.strategy = s;
    c.validate();
  }
  const PreparedData data = prepare_data(base);
  std::vector<StrategyRun> out;
  for (const auto& s : strategies) {
    ExperimentConfig c = base;
    c.strategy = s;
    out.push_back({s, run_prepared(c, data)});
  }
  return out;
}

}  // namespace fedcoal
