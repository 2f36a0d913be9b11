#pragma once

#include <optional>

namespace distdpo {

// One row per communication round, evaluated at the round-start parameters
// (global theta in fed mode, network average in dec mode). consensus_error is
// absent in fed mode.
struct RoundMetrics {
  int round = 0;
  double grad_norm_sq = 0.0;
  double loss = 0.0;
  std::optional<double> consensus_error;
  double elapsed_ms = 0.0;
};

}  // namespace distdpo
