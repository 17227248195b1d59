#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "tsembed/data.hpp"
#include "tsembed/embedder.hpp"
#include "tsembed/errors.hpp"
#include "tsembed/losses.hpp"
#include "tsembed/mining.hpp"
#include "tsembed/optim.hpp"
#include "tsembed/rng.hpp"

namespace tsembed {

struct TrainSpec {
  LossConfig loss_config;
  BatchSpec batch_spec;
  std::int64_t steps = 1000;
  std::uint64_t seed = 0;
  ArchitectureSpec architecture;
  LRSchedule schedule;
  double weight_decay = 0.01;
};

struct TrainResult {
  EmbedderParams params;
  std::vector<double> loss_trace;  // one entry per step
};

namespace detail {
inline constexpr std::uint64_t kInitTag = 0xB007u;
inline constexpr std::uint64_t kBatchTag = 0xBA7Cu;
}  // namespace detail

// One iteration = sample a balanced batch, embed it, take the product ladder
// loss and its exact gradients, then an AdamW step at the 1cycle rate.
// Single-threaded by contract; identical seeds give identical traces and
// parameters.
inline TrainResult train_embedder(const Dataset& dataset, const TrainSpec& spec) {
  if (spec.steps < 1) throw UsageError("training needs steps >= 1");
  validate_config(spec.loss_config);
  LRSchedule sched = spec.schedule;
  sched.total_steps = spec.steps >= 2 ? spec.steps : 2;
  validate_schedule(sched);

  TrainResult result;
  result.params =
      init_params(spec.architecture, derive_seed(spec.seed, detail::kInitTag));
  OptimizerState opt = make_optimizer_state(result.params, spec.weight_decay);
  RngStream batch_rng(
      derive_seed(spec.seed, detail::kBatchTag + spec.batch_spec.stream_id));

  result.loss_trace.reserve(static_cast<std::size_t>(spec.steps));
  for (std::int64_t step = 0; step < spec.steps; ++step) {
    const Batch batch = sample_batch(dataset, spec.batch_spec, batch_rng);
    std::vector<Trial> trials;
    trials.reserve(batch.indices.size());
    for (int idx : batch.indices) trials.push_back(dataset.trials[idx]);
    LossAndGrads lg =
        loss_gradient(result.params, trials, batch.labels, spec.loss_config);
    adamw_step(result.params, lg.grads, opt, onecycle_lr(sched, step));
    result.loss_trace.push_back(lg.loss);
  }
  return result;
}

}  // namespace tsembed
