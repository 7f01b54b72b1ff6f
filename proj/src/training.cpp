#include "fedsim/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

#include "fedsim/error.hpp"

namespace fedsim {

ClientUpdate local_train(const ModelSpec& spec, const ParamVector& start, const Dataset& data,
                         const LocalTrainOptions& opts, const std::optional<Proximal>& proximal, Rng& rng) {
  if (data.size() == 0) throw ProtocolError("local_train: client has no training data");
  if (opts.epochs < 1 || opts.batch_size < 1) throw ConfigError("local_train: epochs and batch size must be positive");

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  ClientUpdate update;
  ParamVector params = start;
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t pos = 0; pos < order.size(); pos += opts.batch_size) {
      const std::size_t end = std::min(order.size(), pos + opts.batch_size);
      const Batch batch = data.batch(std::span<const std::size_t>(order).subspan(pos, end - pos));
      const ParamVector g = proximal ? fedprox_gradient(spec, params, proximal->anchor, proximal->lambda, batch, opts.loss)
                                     : grad(spec, params, batch, opts.loss);
      params = sgd_step(params, g, opts.eta, opts.weight_decay);
      ++update.local_steps;
    }
  }
  if (!std::all_of(params.begin(), params.end(), [](double v) { return std::isfinite(v); })) {
    throw std::runtime_error("local training diverged (non-finite weights); lower the learning rate");
  }

  update.delta.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) update.delta[i] = params[i] - start[i];
  update.params = std::move(params);
  update.num_samples = data.size();
  update.num_labels = std::set<std::size_t>(data.labels.begin(), data.labels.end()).size();
  return update;
}

}  // namespace fedsim
