#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

#include "distdpo/bench_suite.hpp"
#include "distdpo/lowerbound.hpp"
#include "distdpo/theory_constants.hpp"

namespace distdpo {

// Bad or inconsistent configuration; maps to exit code 2.
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Filesystem failure; maps to exit code 4.
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Full declarative run description. Defaults reproduce the reference setup:
// five clients with 120 pairs each, beta 0.2, step size 1e-4, clip 1.0, 80
// rounds, 3 federated / 5 decentralized local steps, seeds {42,43,44}.
struct RunConfig {
  std::string mode = "fed";
  ExperimentBase base;
  // Sweep grids.
  std::vector<int> s_grid{1, 3, 5};
  std::vector<int> e_grid{1, 3, 6};
  std::vector<int> q_grid{0, 2, 5};
  std::vector<GraphKind> topologies{GraphKind::path, GraphKind::ring, GraphKind::star,
                                    GraphKind::complete};
  std::vector<std::uint64_t> seeds{42, 43, 44};
  // Quadratic lower-bound sweep.
  QuadraticInstance quad{8, 1.0, 0.3};
  std::vector<int> lb_e_grid{1, 2, 4};
  std::vector<int> lb_s_grid{1, 2, 4, 8};
  EtaRule eta_rule;
  int lb_rounds = 150;
  std::vector<std::uint64_t> lb_seeds{42, 43, 44, 45, 46};

  std::uint64_t master_seed = 42;
  std::string output_dir = "out";
  int constants_samples = 20000;

  void validate() const;  // throws config_error naming the violated invariant
};

// Strict parse: unknown fields are errors naming the field; every sub-config
// invariant is checked. An empty document yields the all-defaults config.
RunConfig parse_config(const std::string& text);
nlohmann::json config_to_json(const RunConfig& cfg);

// Streams rows as `round,grad_norm_sq,loss,consensus_error,elapsed_ms`,
// flushing per row so partial runs stay inspectable. consensus_error prints
// blank when absent.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path);
  ~MetricsWriter();
  MetricsWriter(const MetricsWriter&) = delete;
  MetricsWriter& operator=(const MetricsWriter&) = delete;

  void write(const RoundMetrics& row);

 private:
  std::FILE* file_ = nullptr;
  std::string path_;
};

// Runs the configured mode and writes metrics CSV, summary JSON, and a
// manifest (config echo, resolved constants, rng roots, timestamps) into
// output_dir. Returns the process exit code.
int execute(const RunConfig& cfg);

// `distdpo <mode> --config <path> [--out <dir>] [--seed <u64>]`
// Exit codes: 0 success, 2 config error, 3 runtime error, 4 I/O error.
int run_cli(int argc, const char* const* argv);

}  // namespace distdpo
