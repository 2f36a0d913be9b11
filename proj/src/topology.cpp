#include "distdpo/topology.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace distdpo {

GraphKind graph_kind_from_name(const std::string& name) {
  if (name == "path") return GraphKind::path;
  if (name == "ring") return GraphKind::ring;
  if (name == "star") return GraphKind::star;
  if (name == "complete") return GraphKind::complete;
  throw std::invalid_argument("unknown topology: " + name);
}

std::string graph_kind_name(GraphKind kind) {
  switch (kind) {
    case GraphKind::path: return "path";
    case GraphKind::ring: return "ring";
    case GraphKind::star: return "star";
    case GraphKind::complete: return "complete";
  }
  throw std::invalid_argument("unknown topology enum value");
}

MixScheme mix_scheme_from_name(const std::string& name) {
  if (name == "uniform_neighbor") return MixScheme::uniform_neighbor;
  if (name == "metropolis") return MixScheme::metropolis;
  throw std::invalid_argument("unknown mixing scheme: " + name);
}

std::string mix_scheme_name(MixScheme scheme) {
  return scheme == MixScheme::uniform_neighbor ? "uniform_neighbor" : "metropolis";
}

MixScheme default_scheme(GraphKind kind) {
  return (kind == GraphKind::ring || kind == GraphKind::complete) ? MixScheme::uniform_neighbor
                                                                  : MixScheme::metropolis;
}

std::vector<int> Graph::degrees() const {
  std::vector<int> deg(n, 0);
  for (const auto& [i, j] : edges) {
    ++deg[i];
    ++deg[j];
  }
  return deg;
}

bool Graph::connected() const {
  if (n <= 0) return false;
  std::vector<std::vector<int>> adj(n);
  for (const auto& [i, j] : edges) {
    adj[i].push_back(j);
    adj[j].push_back(i);
  }
  std::vector<bool> seen(n, false);
  std::vector<int> stack{0};
  seen[0] = true;
  int count = 1;
  while (!stack.empty()) {
    const int cur = stack.back();
    stack.pop_back();
    for (int next : adj[cur])
      if (!seen[next]) {
        seen[next] = true;
        ++count;
        stack.push_back(next);
      }
  }
  return count == n;
}

Graph build_graph(GraphKind kind, int n) {
  const int min_n = kind == GraphKind::ring ? 3 : 2;
  if (n < min_n) throw std::invalid_argument("node count too small for topology");
  Graph g;
  g.n = n;
  switch (kind) {
    case GraphKind::path:
      for (int i = 0; i + 1 < n; ++i) g.edges.emplace_back(i, i + 1);
      break;
    case GraphKind::ring:
      for (int i = 0; i + 1 < n; ++i) g.edges.emplace_back(i, i + 1);
      g.edges.emplace_back(0, n - 1);
      break;
    case GraphKind::star:
      for (int i = 1; i < n; ++i) g.edges.emplace_back(0, i);
      break;
    case GraphKind::complete:
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) g.edges.emplace_back(i, j);
      break;
  }
  for (auto& [i, j] : g.edges)
    if (i > j) std::swap(i, j);
  std::sort(g.edges.begin(), g.edges.end());
  return g;
}

nlohmann::json MixingMatrix::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < n; ++i) {
    rows.push_back(std::vector<double>(weights.begin() + static_cast<std::size_t>(i) * n,
                                       weights.begin() + static_cast<std::size_t>(i + 1) * n));
  }
  return nlohmann::json{{"n", n}, {"weights", std::move(rows)}, {"rho", rho}};
}

double spectral_rho(const MixingMatrix& m) {
  if (m.n <= 0 || m.weights.size() != static_cast<std::size_t>(m.n) * m.n)
    throw std::invalid_argument("mixing matrix shape mismatch");
  Eigen::MatrixXd shifted(m.n, m.n);
  const double uniform = 1.0 / m.n;
  for (int i = 0; i < m.n; ++i)
    for (int j = 0; j < m.n; ++j) shifted(i, j) = m.at(i, j) - uniform;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(shifted, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
  const auto& vals = solver.eigenvalues();
  double rho = 0.0;
  for (int i = 0; i < m.n; ++i) rho = std::max(rho, std::abs(vals(i)));
  if (rho >= 1.0 - 1e-12)
    throw std::domain_error("degenerate topology: contraction factor reaches 1");
  return rho;
}

MixingMatrix build_mixing(const Graph& graph, MixScheme scheme) {
  if (!graph.connected()) throw std::invalid_argument("mixing requires a connected graph");
  const int n = graph.n;
  const std::vector<int> deg = graph.degrees();
  MixingMatrix m;
  m.n = n;
  m.weights.assign(static_cast<std::size_t>(n) * n, 0.0);
  const auto set = [&](int i, int j, double v) {
    m.weights[static_cast<std::size_t>(i) * n + j] = v;
  };

  if (scheme == MixScheme::uniform_neighbor) {
    for (int i = 1; i < n; ++i)
      if (deg[i] != deg[0])
        throw std::invalid_argument("uniform_neighbor weights need a regular graph");
    const double w = 1.0 / (deg[0] + 1);
    for (int i = 0; i < n; ++i) set(i, i, w);
    for (const auto& [i, j] : graph.edges) {
      set(i, j, w);
      set(j, i, w);
    }
  } else {
    for (const auto& [i, j] : graph.edges) {
      const double w = 1.0 / (1.0 + std::max(deg[i], deg[j]));
      set(i, j, w);
      set(j, i, w);
    }
    for (int i = 0; i < n; ++i) {
      double off = 0.0;
      for (int j = 0; j < n; ++j)
        if (j != i) off += m.at(i, j);
      set(i, i, 1.0 - off);
    }
  }

  m.rho = spectral_rho(m);
  return m;
}

MixingMatrix build_mixing(GraphKind kind, int n, std::optional<MixScheme> scheme) {
  if (n == 1) return MixingMatrix{1, {1.0}, 0.0};
  return build_mixing(build_graph(kind, n), scheme.value_or(default_scheme(kind)));
}

}  // namespace distdpo
