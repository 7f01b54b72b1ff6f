#pragma once

#include <cstddef>
#include <optional>

#include "fedsim/data.hpp"
#include "fedsim/fedalgos.hpp"
#include "fedsim/nn.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

struct LocalTrainOptions {
  std::size_t epochs = 1;
  std::size_t batch_size = 64;
  double eta = 0.05;
  double weight_decay = 0.004;
  LossKind loss = LossKind::cross_entropy;
};

/// FedProx anchor: adds lambda/2 ||theta - anchor||^2 to the local objective.
struct Proximal {
  ParamVector anchor;
  double lambda = 0.0;
};

/// E epochs of mini-batch SGD over a fresh shuffle per epoch; the last
/// partial batch is kept. Throws ProtocolError for empty client data.
ClientUpdate local_train(const ModelSpec& spec, const ParamVector& start, const Dataset& data,
                         const LocalTrainOptions& opts, const std::optional<Proximal>& proximal, Rng& rng);

}  // namespace fedsim
