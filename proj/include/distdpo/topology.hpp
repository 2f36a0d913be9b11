#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace distdpo {

enum class GraphKind { path, ring, star, complete };
enum class MixScheme { uniform_neighbor, metropolis };

GraphKind graph_kind_from_name(const std::string& name);
std::string graph_kind_name(GraphKind kind);
MixScheme mix_scheme_from_name(const std::string& name);
std::string mix_scheme_name(MixScheme scheme);

// uniform_neighbor for the regular graphs (ring, complete), metropolis for the
// irregular ones (path, star).
MixScheme default_scheme(GraphKind kind);

struct Graph {
  int n = 0;
  std::vector<std::pair<int, int>> edges;  // stored with first < second

  std::vector<int> degrees() const;
  bool connected() const;
};

Graph build_graph(GraphKind kind, int n);

// Symmetric doubly stochastic gossip weights plus the spectral contraction
// factor rho = ||weights - (1/n) 11^T||.
struct MixingMatrix {
  int n = 0;
  std::vector<double> weights;  // row-major n x n
  double rho = 0.0;

  double at(int i, int j) const { return weights[static_cast<std::size_t>(i) * n + j]; }
  nlohmann::json to_json() const;
};

MixingMatrix build_mixing(const Graph& graph, MixScheme scheme);

// Convenience: graph and scheme (kind default when unset) in one call. A
// single node yields the trivial 1x1 matrix with rho = 0.
MixingMatrix build_mixing(GraphKind kind, int n, std::optional<MixScheme> scheme = {});

// Recomputes rho by dense symmetric eigendecomposition; throws a
// degenerate-topology error when the result reaches 1.
double spectral_rho(const MixingMatrix& m);

}  // namespace distdpo
