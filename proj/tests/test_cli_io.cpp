#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "distdpo/cli_io.hpp"

using namespace distdpo;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("distdpo_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  REQUIRE(out.good());
  out << text;
}

int cli(std::vector<std::string> args) {
  std::vector<const char*> argv{"distdpo"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

// Small, fast run setup used by the execute/cli tests.
std::string tiny_config_text() {
  return R"({
    "fed": {"rounds": 5, "step_size": 0.05},
    "dec": {"rounds": 5, "step_size": 0.05},
    "data": {"pairs_per_client": 20},
    "constants_samples": 200
  })";
}

}  // namespace

TEST_CASE("an empty document parses to the reference defaults") {
  RunConfig cfg = parse_config("{}");
  CHECK(cfg.mode == "fed");
  CHECK(cfg.base.num_clients == 5);
  CHECK(cfg.base.instance.num_states == 6);
  CHECK(cfg.base.instance.num_actions == 4);
  CHECK(cfg.base.instance.horizon == 5);
  CHECK(cfg.base.instance.feature_dim == 8);
  CHECK(cfg.base.data.pairs_per_client == 120);
  CHECK(cfg.base.dpo.beta == 0.2);
  CHECK(cfg.base.fed.num_clients == 5);
  CHECK(cfg.base.fed.participation == 5);
  CHECK(cfg.base.fed.local_steps == 3);
  CHECK(cfg.base.fed.rounds == 80);
  CHECK(cfg.base.fed.step_size == 1e-4);
  CHECK(cfg.base.fed.batch_size == 4);
  CHECK(cfg.base.fed.clip_norm == 1.0);
  CHECK(cfg.base.fed.q_max == 0);
  CHECK(cfg.base.dec.rounds == 80);
  CHECK(cfg.base.dec.local_steps_per_round == 5);
  CHECK(cfg.base.dec.topology == GraphKind::ring);
  CHECK(!cfg.base.dec.scheme.has_value());
  CHECK(cfg.s_grid == std::vector<int>{1, 3, 5});
  CHECK(cfg.e_grid == std::vector<int>{1, 3, 6});
  CHECK(cfg.q_grid == std::vector<int>{0, 2, 5});
  CHECK(cfg.topologies.size() == 4);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{42, 43, 44});
  CHECK(cfg.quad.num_clients == 8);
  CHECK(cfg.quad.noise_std == 0.3);
  CHECK(cfg.lb_e_grid == std::vector<int>{1, 2, 4});
  CHECK(cfg.lb_s_grid == std::vector<int>{1, 2, 4, 8});
  CHECK(cfg.lb_rounds == 150);
  CHECK(cfg.lb_seeds == std::vector<std::uint64_t>{42, 43, 44, 45, 46});
  CHECK(cfg.master_seed == 42);
  CHECK(cfg.output_dir == "out");
  CHECK(cfg.constants_samples == 20000);
  CHECK(cfg.base.workers == 1);
}

TEST_CASE("strict parsing names unknown or invalid fields") {
  CHECK_THROWS_WITH_AS(parse_config(R"({"fed": {"bogus": 1}})"),
                       "unknown field: fed.bogus", config_error);
  CHECK_THROWS_WITH_AS(parse_config(R"({"nonsense": 3})"), "unknown field: nonsense",
                       config_error);
  CHECK_THROWS_WITH_AS(parse_config(R"({"fed": {"rounds": "eighty"}})"),
                       "invalid value for field: fed.rounds", config_error);
  CHECK_THROWS_AS(parse_config("not json at all"), config_error);
  CHECK_THROWS_AS(parse_config(R"({"mode": "warp"})"), config_error);
  CHECK_THROWS_WITH_AS(parse_config(R"({"fed": {"participation": 7}})"),
                       "participation exceeds client count", config_error);
  CHECK_THROWS_WITH_AS(parse_config(R"({"dec": {"topology": "torus"}})"),
                       "unknown topology: torus in field: dec.topology", config_error);
  CHECK_THROWS_WITH_AS(parse_config(R"({"dpo": {"ref_theta": [1.0, 2.0]}})"),
                       "ref_theta length must match feature_dim", config_error);
  CHECK_THROWS_WITH_AS(parse_config(R"({"lowerbound": {"num_clients": 7}})"),
                       "num_clients must be even and at least 2", config_error);
  CHECK_THROWS_AS(parse_config(R"({"sweep": {"s_grid": []}})"), config_error);
}

TEST_CASE("sweep modes reject runs shorter than their measurement tails") {
  CHECK_THROWS_WITH_AS(parse_config(R"({"mode": "sweep:participation", "fed": {"rounds": 5}})"),
                       "fed.rounds must be at least 10 for sweep modes", config_error);
  CHECK_THROWS_WITH_AS(parse_config(R"({"mode": "sweep:staleness", "fed": {"rounds": 9}})"),
                       "fed.rounds must be at least 10 for sweep modes", config_error);
  CHECK_THROWS_WITH_AS(parse_config(R"({"mode": "sweep:topology", "dec": {"rounds": 19}})"),
                       "dec.rounds must be at least 20 for the topology sweep", config_error);
  CHECK_THROWS_WITH_AS(parse_config(R"({"mode": "lowerbound", "lowerbound": {"rounds": 5}})"),
                       "lowerbound.rounds must be at least 10", config_error);
  // Short plain runs stay legal; their summaries clamp the tail instead.
  CHECK_NOTHROW(parse_config(R"({"mode": "fed", "fed": {"rounds": 5}})"));
  CHECK_NOTHROW(parse_config(R"({"mode": "dec", "dec": {"rounds": 5}})"));
}

TEST_CASE("explicit nulls clear the optional clipping thresholds") {
  RunConfig cfg = parse_config(R"({"fed": {"clip_norm": null}, "dec": {"clip_norm": 0.7}})");
  CHECK(!cfg.base.fed.clip_norm.has_value());
  CHECK(cfg.base.dec.clip_norm == 0.7);
  RunConfig scheme = parse_config(R"({"dec": {"scheme": "metropolis"}})");
  CHECK(scheme.base.dec.scheme == MixScheme::metropolis);
  RunConfig nulled = parse_config(R"({"dec": {"scheme": null}})");
  CHECK(!nulled.base.dec.scheme.has_value());
}

TEST_CASE("randomized configs survive a serialize-parse round trip") {
  RngStream rng(42);
  const std::vector<std::string> mode_pool{
      "fed", "dec", "lowerbound", "check-constants", "gradcheck",
      "sweep:participation", "sweep:local_steps", "sweep:staleness", "sweep:topology"};
  for (int trial = 0; trial < 100; ++trial) {
    RunConfig cfg;
    cfg.mode = mode_pool[rng.uniform_int(mode_pool.size())];
    cfg.base.instance.num_states = 2 + static_cast<int>(rng.uniform_int(5));
    cfg.base.instance.num_actions = 2 + static_cast<int>(rng.uniform_int(4));
    cfg.base.instance.horizon = 1 + static_cast<int>(rng.uniform_int(6));
    cfg.base.instance.feature_dim = 1 + static_cast<int>(rng.uniform_int(10));
    cfg.base.instance.phi_bound = rng.uniform(0.5, 3.0);
    if (rng.uniform01() < 0.5) {
      cfg.base.data.base_weights.assign(cfg.base.instance.feature_dim, 0.0);
      for (double& w : cfg.base.data.base_weights) w = rng.normal();
    }
    cfg.base.data.perturbation_scale = rng.uniform(0.0, 2.0);
    cfg.base.data.pairs_per_client = 1 + static_cast<int>(rng.uniform_int(200));
    cfg.base.data_seed = rng.next_u64();
    cfg.base.dpo.beta = rng.uniform(0.01, 2.0);
    cfg.base.dpo.loss_offset = rng.uniform(-1.0, 1.0);
    if (rng.uniform01() < 0.3)
      cfg.base.dpo.ref_theta.theta.assign(cfg.base.instance.feature_dim, 0.25);
    cfg.base.fed.num_clients = 2 + static_cast<int>(rng.uniform_int(8));
    cfg.base.num_clients = cfg.base.fed.num_clients;
    cfg.base.fed.participation =
        1 + static_cast<int>(rng.uniform_int(cfg.base.fed.num_clients));
    cfg.base.fed.local_steps = 1 + static_cast<int>(rng.uniform_int(6));
    cfg.base.fed.rounds = 10 + static_cast<int>(rng.uniform_int(91));
    cfg.base.fed.step_size = rng.uniform(1e-5, 0.5);
    cfg.base.fed.batch_size = 1 + static_cast<int>(rng.uniform_int(8));
    cfg.base.fed.clip_norm =
        rng.uniform01() < 0.5 ? std::optional<double>{} : std::optional<double>{rng.uniform(0.1, 2.0)};
    cfg.base.fed.q_max = static_cast<int>(rng.uniform_int(6));
    cfg.base.fed.weighting = rng.uniform01() < 0.5 ? Weighting::uniform : Weighting::data_size;
    cfg.base.dec.topology =
        std::vector<GraphKind>{GraphKind::path, GraphKind::ring, GraphKind::star,
                               GraphKind::complete}[rng.uniform_int(4)];
    cfg.base.dec.scheme = rng.uniform01() < 0.5
                              ? std::optional<MixScheme>{}
                              : std::optional<MixScheme>{MixScheme::metropolis};
    cfg.base.dec.rounds = 20 + static_cast<int>(rng.uniform_int(81));
    cfg.base.dec.step_size = rng.uniform(1e-5, 0.5);
    cfg.base.dec.batch_size = 1 + static_cast<int>(rng.uniform_int(8));
    cfg.base.dec.local_steps_per_round = 1 + static_cast<int>(rng.uniform_int(8));
    cfg.s_grid = {1, cfg.base.fed.num_clients};
    cfg.e_grid = {1 + static_cast<int>(rng.uniform_int(4))};
    cfg.q_grid = {0, static_cast<int>(rng.uniform_int(5))};
    cfg.seeds = {rng.next_u64(), rng.next_u64()};
    cfg.quad.num_clients = 2 * (1 + static_cast<int>(rng.uniform_int(6)));
    cfg.quad.alpha = rng.uniform(0.1, 3.0);
    cfg.quad.noise_std = rng.uniform(0.0, 1.0);
    cfg.lb_e_grid = {1, 2};
    cfg.lb_s_grid = {1, cfg.quad.num_clients};
    cfg.eta_rule.numerator = rng.uniform(0.01, 1.0);
    cfg.lb_rounds = 10 + static_cast<int>(rng.uniform_int(191));
    cfg.lb_seeds = {rng.next_u64()};
    cfg.master_seed = rng.next_u64();
    cfg.output_dir = "out_" + std::to_string(trial);
    cfg.base.workers = 1 + static_cast<int>(rng.uniform_int(4));
    cfg.constants_samples = 1 + static_cast<int>(rng.uniform_int(5000));

    CHECK_NOTHROW(cfg.validate());
    nlohmann::json doc = config_to_json(cfg);
    RunConfig back = parse_config(doc.dump());
    CHECK(config_to_json(back) == doc);
  }
}

TEST_CASE("metrics files carry the fixed header and one row per round") {
  fs::path dir = fresh_dir("metrics");
  fs::path path = dir / "metrics.csv";
  {
    MetricsWriter writer(path.string());
  }
  CHECK(read_file(path) == "round,grad_norm_sq,loss,consensus_error,elapsed_ms\n");

  {
    MetricsWriter writer(path.string());
    for (int r = 0; r < 80; ++r) {
      RoundMetrics row;
      row.round = r;
      row.grad_norm_sq = 0.5 / (r + 1);
      row.loss = std::log(2.0) + 0.01 * r;
      if (r % 2 == 1) row.consensus_error = 1e-3 * r;
      row.elapsed_ms = 0.25;
      writer.write(row);
    }
  }
  std::istringstream in(read_file(path));
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "round,grad_norm_sq,loss,consensus_error,elapsed_ms");
  int rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    int round = -1;
    double grad = 0.0, loss = 0.0, elapsed = 0.0;
    if (rows % 2 == 0) {
      // Rows without consensus print an empty column.
      CHECK(line.find(",,") != std::string::npos);
      REQUIRE(std::sscanf(line.c_str(), "%d,%lf,%lf,,%lf", &round, &grad, &loss, &elapsed) == 4);
    } else {
      double consensus = 0.0;
      REQUIRE(std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf", &round, &grad, &loss, &consensus,
                          &elapsed) == 5);
      CHECK(consensus == 1e-3 * rows);
    }
    CHECK(round == rows);
    CHECK(grad == 0.5 / (rows + 1));
    ++rows;
  }
  CHECK(rows == 80);
  fs::remove_all(dir);

  CHECK_THROWS_AS(MetricsWriter((dir / "missing" / "metrics.csv").string()), io_error);
}

TEST_CASE("execute writes metrics, summary, and manifest for a federated run") {
  fs::path dir = fresh_dir("execute");
  RunConfig cfg = parse_config(tiny_config_text());
  cfg.output_dir = (dir / "run").string();
  CHECK(execute(cfg) == 0);

  CHECK(fs::exists(dir / "run" / "metrics.csv"));
  CHECK(fs::exists(dir / "run" / "summary.json"));
  CHECK(fs::exists(dir / "run" / "manifest.json"));

  std::istringstream in(read_file(dir / "run" / "metrics.csv"));
  std::string line;
  int lines = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++lines;
  CHECK(lines == 6);  // header + five rounds

  nlohmann::json manifest = nlohmann::json::parse(read_file(dir / "run" / "manifest.json"));
  CHECK(manifest.at("config") == config_to_json(cfg));
  CHECK(manifest.at("rng_roots").at("master_seed").get<std::uint64_t>() == 42);
  CHECK(!manifest.at("finished_at").is_null());
  CHECK(manifest.at("constants").contains("smoothness_L"));

  nlohmann::json summary = nlohmann::json::parse(read_file(dir / "run" / "summary.json"));
  CHECK(summary.at("mode") == "fed");
  CHECK(summary.at("rounds").get<int>() == 5);
  CHECK(summary.at("stationary_gap").get<double>() > 0.0);
  fs::remove_all(dir);
}

TEST_CASE("the command line maps failures to distinct exit codes") {
  fs::path dir = fresh_dir("cli");
  fs::path config = dir / "run.json";
  write_file(config, tiny_config_text());

  CHECK(cli({"fed"}) == 2);  // missing --config
  CHECK(cli({"fed", "--config", (dir / "absent.json").string()}) == 4);
  CHECK(cli({"warp", "--config", config.string()}) == 2);  // unknown mode

  write_file(dir / "bad.json", R"({"fed": {"bogus": 1}})");
  CHECK(cli({"fed", "--config", (dir / "bad.json").string()}) == 2);

  fs::path out = dir / "out";
  CHECK(cli({"fed", "--config", config.string(), "--out", out.string(), "--seed", "777"}) == 0);
  nlohmann::json manifest = nlohmann::json::parse(read_file(out / "manifest.json"));
  CHECK(manifest.at("config").at("master_seed").get<std::uint64_t>() == 777);
  CHECK(manifest.at("config").at("output_dir").get<std::string>() == out.string());
  CHECK(manifest.at("rng_roots").at("master_seed").get<std::uint64_t>() == 777);
  fs::remove_all(dir);
}

TEST_CASE("dec runs report consensus columns end to end") {
  fs::path dir = fresh_dir("dec_mode");
  RunConfig cfg = parse_config(tiny_config_text());
  cfg.mode = "dec";
  cfg.output_dir = (dir / "run").string();
  CHECK(execute(cfg) == 0);

  std::istringstream in(read_file(dir / "run" / "metrics.csv"));
  std::string line;
  REQUIRE(std::getline(in, line));  // header
  int rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++rows;
    CHECK(line.find(",,") == std::string::npos);  // consensus column is filled
  }
  CHECK(rows == 5);

  nlohmann::json summary = nlohmann::json::parse(read_file(dir / "run" / "summary.json"));
  CHECK(summary.at("consensus_floor").is_number());
  CHECK(summary.at("rho").get<double>() > 0.0);
  fs::remove_all(dir);
}
