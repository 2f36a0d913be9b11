#include "distdpo/cli_io.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include "CLI11.hpp"

namespace distdpo {
namespace {

constexpr const char* kVersion = "distdpo 0.1.0";

const std::vector<std::string>& known_modes() {
  static const std::vector<std::string> modes{"fed",
                                              "dec",
                                              "lowerbound",
                                              "check-constants",
                                              "gradcheck",
                                              "sweep:participation",
                                              "sweep:local_steps",
                                              "sweep:staleness",
                                              "sweep:topology"};
  return modes;
}

// Strict section reader: rejects unknown keys, converts type mismatches into
// config errors naming the offending field.
class FieldReader {
 public:
  FieldReader(const nlohmann::json& j, std::string section,
              std::initializer_list<const char*> allowed)
      : j_(j), section_(std::move(section)) {
    if (!j_.is_object())
      throw config_error((section_.empty() ? std::string("config") : section_) +
                         " must be an object");
    for (const auto& item : j_.items()) {
      const bool ok = std::any_of(allowed.begin(), allowed.end(),
                                  [&](const char* name) { return item.key() == name; });
      if (!ok) throw config_error("unknown field: " + qualify(item.key()));
    }
  }

  template <typename T>
  void get(const char* name, T& out) const {
    if (!j_.contains(name)) return;
    try {
      j_.at(name).get_to(out);
    } catch (const nlohmann::json::exception&) {
      throw config_error("invalid value for field: " + qualify(name));
    }
  }

  // number or null (null clears the optional)
  void get_optional(const char* name, std::optional<double>& out) const {
    if (!j_.contains(name)) return;
    const nlohmann::json& v = j_.at(name);
    if (v.is_null()) {
      out.reset();
      return;
    }
    if (!v.is_number()) throw config_error("invalid value for field: " + qualify(name));
    out = v.get<double>();
  }

  template <typename T, typename Parse>
  void get_named(const char* name, T& out, const Parse& parse) const {
    if (!j_.contains(name)) return;
    std::string text;
    get(name, text);
    try {
      out = parse(text);
    } catch (const std::invalid_argument& e) {
      throw config_error(std::string(e.what()) + " in field: " + qualify(name));
    }
  }

  bool has(const char* name) const { return j_.contains(name); }
  const nlohmann::json& at(const char* name) const { return j_.at(name); }
  std::string qualify(const std::string& key) const {
    return section_.empty() ? key : section_ + "." + key;
  }

 private:
  const nlohmann::json& j_;
  std::string section_;
};

void check_positive_int(int v, const char* what) {
  if (v < 1) throw config_error(std::string(what) + " must be positive");
}

std::string timestamp_utc() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string file_stamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[24];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%S", &tm);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw io_error("cannot open for writing: " + path.string());
  const bool ok =
      std::fwrite(text.data(), 1, text.size(), f) == text.size() && std::fflush(f) == 0;
  std::fclose(f);
  if (!ok) throw io_error("write failed: " + path.string());
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v.has_value() ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

void emit_error(const char* type, const std::string& message) {
  const nlohmann::json j{{"error", {{"type", type}, {"message", message}}}};
  std::fprintf(stderr, "%s\n", j.dump().c_str());
}

}  // namespace

void RunConfig::validate() const {
  const auto& modes = known_modes();
  if (std::find(modes.begin(), modes.end(), mode) == modes.end())
    throw config_error("unknown mode: " + mode);

  if (base.instance.num_states < 2) throw config_error("num_states must be at least 2");
  if (base.instance.num_actions < 2) throw config_error("num_actions must be at least 2");
  check_positive_int(base.instance.horizon, "horizon");
  check_positive_int(base.instance.feature_dim, "feature_dim");
  if (!(base.instance.phi_bound > 0.0)) throw config_error("phi_bound must be positive");
  if (!base.dpo.ref_theta.theta.empty() &&
      static_cast<int>(base.dpo.ref_theta.theta.size()) != base.instance.feature_dim)
    throw config_error("ref_theta length must match feature_dim");

  try {
    base.data.validate(base.instance.feature_dim);
    base.dpo.validate();
    base.fed.validate();
    base.dec.validate();
    quad.validate();
  } catch (const std::invalid_argument& e) {
    throw config_error(e.what());
  }

  if (base.num_clients != base.fed.num_clients)
    throw config_error("client count disagrees between data and federated sections");
  check_positive_int(base.workers, "workers");
  check_positive_int(constants_samples, "constants_samples");
  check_positive_int(lb_rounds, "lowerbound.rounds");
  if (!(eta_rule.numerator > 0.0)) throw config_error("eta_numerator must be positive");

  if (s_grid.empty() || e_grid.empty() || q_grid.empty() || topologies.empty() ||
      lb_e_grid.empty() || lb_s_grid.empty())
    throw config_error("sweep grids must be nonempty");
  if (seeds.empty() || lb_seeds.empty()) throw config_error("seeds must be nonempty");
  for (int s : s_grid)
    if (s < 1 || s > base.fed.num_clients)
      throw config_error("participation exceeds client count");
  for (int e : e_grid) check_positive_int(e, "local_steps");
  for (int q : q_grid)
    if (q < 0) throw config_error("q_max must be nonnegative");
  for (int s : lb_s_grid)
    if (s < 1 || s > quad.num_clients)
      throw config_error("participation exceeds client count");
  for (int e : lb_e_grid) check_positive_int(e, "local_steps");

  // Sweeps report fixed-width measurement tails (10 rounds for the stationary
  // gap, 20 for the consensus floor), so short runs must be rejected up front
  // rather than failing after the first cell completes.
  if ((mode == "sweep:participation" || mode == "sweep:local_steps" ||
       mode == "sweep:staleness") &&
      base.fed.rounds < 10)
    throw config_error("fed.rounds must be at least 10 for sweep modes");
  if (mode == "sweep:topology" && base.dec.rounds < 20)
    throw config_error("dec.rounds must be at least 20 for the topology sweep");
  if (mode == "lowerbound" && lb_rounds < 10)
    throw config_error("lowerbound.rounds must be at least 10");
}

RunConfig parse_config(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("config is not valid JSON: ") + e.what());
  }

  RunConfig cfg;
  const FieldReader top(doc, "",
                        {"mode", "instance", "data", "dpo", "fed", "dec", "sweep", "lowerbound",
                         "master_seed", "output_dir", "workers", "constants_samples"});
  top.get("mode", cfg.mode);
  top.get("master_seed", cfg.master_seed);
  top.get("output_dir", cfg.output_dir);
  top.get("workers", cfg.base.workers);
  top.get("constants_samples", cfg.constants_samples);

  if (top.has("instance")) {
    const FieldReader r(top.at("instance"), "instance",
                        {"num_states", "num_actions", "horizon", "feature_dim", "phi_bound"});
    r.get("num_states", cfg.base.instance.num_states);
    r.get("num_actions", cfg.base.instance.num_actions);
    r.get("horizon", cfg.base.instance.horizon);
    r.get("feature_dim", cfg.base.instance.feature_dim);
    r.get("phi_bound", cfg.base.instance.phi_bound);
  }
  if (top.has("data")) {
    const FieldReader r(top.at("data"), "data",
                        {"base_weights", "perturbation_scale", "pairs_per_client",
                         "behavior_seed"});
    r.get("base_weights", cfg.base.data.base_weights);
    r.get("perturbation_scale", cfg.base.data.perturbation_scale);
    r.get("pairs_per_client", cfg.base.data.pairs_per_client);
    r.get("behavior_seed", cfg.base.data_seed);
  }
  if (top.has("dpo")) {
    const FieldReader r(top.at("dpo"), "dpo", {"beta", "loss_offset", "ref_theta"});
    r.get("beta", cfg.base.dpo.beta);
    r.get("loss_offset", cfg.base.dpo.loss_offset);
    r.get("ref_theta", cfg.base.dpo.ref_theta.theta);
  }
  if (top.has("fed")) {
    const FieldReader r(top.at("fed"), "fed",
                        {"num_clients", "participation", "local_steps", "rounds", "step_size",
                         "batch_size", "clip_norm", "q_max", "weighting"});
    r.get("num_clients", cfg.base.fed.num_clients);
    r.get("participation", cfg.base.fed.participation);
    r.get("local_steps", cfg.base.fed.local_steps);
    r.get("rounds", cfg.base.fed.rounds);
    r.get("step_size", cfg.base.fed.step_size);
    r.get("batch_size", cfg.base.fed.batch_size);
    r.get_optional("clip_norm", cfg.base.fed.clip_norm);
    r.get("q_max", cfg.base.fed.q_max);
    r.get_named("weighting", cfg.base.fed.weighting, weighting_from_name);
  }
  if (top.has("dec")) {
    const FieldReader r(top.at("dec"), "dec",
                        {"topology", "scheme", "rounds", "step_size", "batch_size",
                         "local_steps_per_round", "clip_norm"});
    r.get_named("topology", cfg.base.dec.topology, graph_kind_from_name);
    if (r.has("scheme")) {
      if (r.at("scheme").is_null()) {
        cfg.base.dec.scheme.reset();
      } else {
        MixScheme scheme = MixScheme::uniform_neighbor;
        r.get_named("scheme", scheme, mix_scheme_from_name);
        cfg.base.dec.scheme = scheme;
      }
    }
    r.get("rounds", cfg.base.dec.rounds);
    r.get("step_size", cfg.base.dec.step_size);
    r.get("batch_size", cfg.base.dec.batch_size);
    r.get("local_steps_per_round", cfg.base.dec.local_steps_per_round);
    r.get_optional("clip_norm", cfg.base.dec.clip_norm);
  }
  if (top.has("sweep")) {
    const FieldReader r(top.at("sweep"), "sweep",
                        {"s_grid", "e_grid", "q_grid", "topologies", "seeds"});
    r.get("s_grid", cfg.s_grid);
    r.get("e_grid", cfg.e_grid);
    r.get("q_grid", cfg.q_grid);
    if (r.has("topologies")) {
      std::vector<std::string> names;
      r.get("topologies", names);
      cfg.topologies.clear();
      for (const std::string& name : names) {
        try {
          cfg.topologies.push_back(graph_kind_from_name(name));
        } catch (const std::invalid_argument& e) {
          throw config_error(std::string(e.what()) + " in field: sweep.topologies");
        }
      }
    }
    r.get("seeds", cfg.seeds);
  }
  if (top.has("lowerbound")) {
    const FieldReader r(top.at("lowerbound"), "lowerbound",
                        {"num_clients", "alpha", "noise_std", "e_grid", "s_grid",
                         "eta_numerator", "rounds", "seeds"});
    r.get("num_clients", cfg.quad.num_clients);
    r.get("alpha", cfg.quad.alpha);
    r.get("noise_std", cfg.quad.noise_std);
    r.get("e_grid", cfg.lb_e_grid);
    r.get("s_grid", cfg.lb_s_grid);
    r.get("eta_numerator", cfg.eta_rule.numerator);
    r.get("rounds", cfg.lb_rounds);
    r.get("seeds", cfg.lb_seeds);
  }

  cfg.base.num_clients = cfg.base.fed.num_clients;
  cfg.validate();
  return cfg;
}

nlohmann::json config_to_json(const RunConfig& cfg) {
  std::vector<std::string> topo_names;
  for (GraphKind kind : cfg.topologies) topo_names.push_back(graph_kind_name(kind));

  nlohmann::json dec{{"topology", graph_kind_name(cfg.base.dec.topology)},
                     {"scheme", cfg.base.dec.scheme.has_value()
                                    ? nlohmann::json(mix_scheme_name(*cfg.base.dec.scheme))
                                    : nlohmann::json(nullptr)},
                     {"rounds", cfg.base.dec.rounds},
                     {"step_size", cfg.base.dec.step_size},
                     {"batch_size", cfg.base.dec.batch_size},
                     {"local_steps_per_round", cfg.base.dec.local_steps_per_round},
                     {"clip_norm", optional_json(cfg.base.dec.clip_norm)}};

  return nlohmann::json{
      {"mode", cfg.mode},
      {"instance",
       {{"num_states", cfg.base.instance.num_states},
        {"num_actions", cfg.base.instance.num_actions},
        {"horizon", cfg.base.instance.horizon},
        {"feature_dim", cfg.base.instance.feature_dim},
        {"phi_bound", cfg.base.instance.phi_bound}}},
      {"data",
       {{"base_weights", cfg.base.data.base_weights},
        {"perturbation_scale", cfg.base.data.perturbation_scale},
        {"pairs_per_client", cfg.base.data.pairs_per_client},
        {"behavior_seed", cfg.base.data_seed}}},
      {"dpo",
       {{"beta", cfg.base.dpo.beta},
        {"loss_offset", cfg.base.dpo.loss_offset},
        {"ref_theta", cfg.base.dpo.ref_theta.theta}}},
      {"fed",
       {{"num_clients", cfg.base.fed.num_clients},
        {"participation", cfg.base.fed.participation},
        {"local_steps", cfg.base.fed.local_steps},
        {"rounds", cfg.base.fed.rounds},
        {"step_size", cfg.base.fed.step_size},
        {"batch_size", cfg.base.fed.batch_size},
        {"clip_norm", optional_json(cfg.base.fed.clip_norm)},
        {"q_max", cfg.base.fed.q_max},
        {"weighting", weighting_name(cfg.base.fed.weighting)}}},
      {"dec", std::move(dec)},
      {"sweep",
       {{"s_grid", cfg.s_grid},
        {"e_grid", cfg.e_grid},
        {"q_grid", cfg.q_grid},
        {"topologies", topo_names},
        {"seeds", cfg.seeds}}},
      {"lowerbound",
       {{"num_clients", cfg.quad.num_clients},
        {"alpha", cfg.quad.alpha},
        {"noise_std", cfg.quad.noise_std},
        {"e_grid", cfg.lb_e_grid},
        {"s_grid", cfg.lb_s_grid},
        {"eta_numerator", cfg.eta_rule.numerator},
        {"rounds", cfg.lb_rounds},
        {"seeds", cfg.lb_seeds}}},
      {"master_seed", cfg.master_seed},
      {"output_dir", cfg.output_dir},
      {"workers", cfg.base.workers},
      {"constants_samples", cfg.constants_samples}};
}

MetricsWriter::MetricsWriter(const std::string& path) : path_(path) {
  file_ = std::fopen(path.c_str(), "wb");
  if (!file_) throw io_error("cannot open metrics file: " + path_);
  if (std::fputs("round,grad_norm_sq,loss,consensus_error,elapsed_ms\n", file_) < 0 ||
      std::fflush(file_) != 0) {
    std::fclose(file_);
    file_ = nullptr;
    throw io_error("cannot write metrics file: " + path_);
  }
}

MetricsWriter::~MetricsWriter() {
  if (file_) std::fclose(file_);
}

void MetricsWriter::write(const RoundMetrics& row) {
  char line[256];
  int n;
  if (row.consensus_error.has_value()) {
    n = std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g,%.17g\n", row.round,
                      row.grad_norm_sq, row.loss, *row.consensus_error, row.elapsed_ms);
  } else {
    n = std::snprintf(line, sizeof line, "%d,%.17g,%.17g,,%.17g\n", row.round, row.grad_norm_sq,
                      row.loss, row.elapsed_ms);
  }
  if (n < 0 || std::fputs(line, file_) < 0 || std::fflush(file_) != 0)
    throw io_error("cannot write metrics file: " + path_);
}

int execute(const RunConfig& cfg) {
  cfg.validate();
  const std::filesystem::path out_dir(cfg.output_dir);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw io_error("cannot create output directory: " + cfg.output_dir);

  nlohmann::json manifest{
      {"config", config_to_json(cfg)},
      {"constants", nullptr},
      {"code_version", kVersion},
      {"rng_roots",
       {{"master_seed", cfg.master_seed},
        {"master_stream", RngStream(cfg.master_seed).stream_id()},
        {"data_seed", cfg.base.data_seed},
        {"data_stream", RngStream(cfg.base.data_seed).stream_id()}}},
      {"started_at", timestamp_utc()},
      {"finished_at", nullptr}};
  const std::filesystem::path manifest_path = out_dir / "manifest.json";
  // First write doubles as a writability probe before any compute.
  write_text(manifest_path, manifest.dump(2) + "\n");

  nlohmann::json summary{{"mode", cfg.mode}};
  std::string pending_error;

  const bool dpo_mode = cfg.mode != "lowerbound" && cfg.mode != "gradcheck";
  if (dpo_mode) {
    const Experiment exp = prepare_experiment(cfg.base);
    const int dim = exp.instance.features.feature_dim;
    const PolicyParams zero{std::vector<double>(static_cast<std::size_t>(dim), 0.0)};
    RngStream const_rng = RngStream(cfg.master_seed).split(stream_key::kMonteCarlo);
    const ConstantReport constants =
        build_constant_report(exp.instance.mdp, exp.instance.features, exp.clients, zero, zero,
                              cfg.base.dpo, cfg.constants_samples, const_rng);
    manifest["constants"] = constants.to_json();

    if (cfg.mode == "fed") {
      const GradientEnv env =
          make_dpo_gradient_env(exp.instance.mdp, exp.instance.features, exp.clients,
                                cfg.base.dpo, cfg.base.fed.batch_size, cfg.base.fed.weighting);
      MetricsWriter writer((out_dir / "metrics.csv").string());
      RngStream rng(cfg.master_seed);
      const std::vector<RoundMetrics> metrics =
          run_feddpo(env, cfg.base.fed, zero, rng, cfg.base.workers,
                     [&writer](const ServerState&, const RoundMetrics& row) { writer.write(row); });
      summary["rounds"] = metrics.size();
      summary["stationary_gap"] =
          stationary_gap(metrics, std::min<int>(10, static_cast<int>(metrics.size())));
      summary["final_grad_norm_sq"] = metrics.back().grad_norm_sq;
      summary["final_loss"] = metrics.back().loss;
    } else if (cfg.mode == "dec") {
      const GradientEnv env =
          make_dpo_gradient_env(exp.instance.mdp, exp.instance.features, exp.clients,
                                cfg.base.dpo, cfg.base.dec.batch_size, Weighting::uniform);
      const MixingMatrix mixing = build_mixing(
          cfg.base.dec.topology, static_cast<int>(exp.clients.size()), cfg.base.dec.scheme);
      MetricsWriter writer((out_dir / "metrics.csv").string());
      RngStream rng(cfg.master_seed);
      const DecRunResult run =
          run_decdpo(env, cfg.base.dec, mixing, zero, rng, cfg.base.workers,
                     [&writer](const NodeStates&, const RoundMetrics& row) { writer.write(row); });
      summary["rounds"] = run.metrics.size();
      summary["stationary_gap"] =
          stationary_gap(run.metrics, std::min<int>(10, static_cast<int>(run.metrics.size())));
      summary["final_grad_norm_sq"] = run.metrics.back().grad_norm_sq;
      summary["final_loss"] = run.metrics.back().loss;
      summary["consensus_floor"] =
          consensus_floor(run.metrics, std::min<int>(20, static_cast<int>(run.metrics.size())));
      summary["rho"] = mixing.rho;
    } else if (cfg.mode == "check-constants") {
      write_text(out_dir / "constants.json", constants.to_json().dump(2) + "\n");
      summary["constants"] = constants.to_json();
    } else {
      const std::string axis = cfg.mode.substr(std::string("sweep:").size());
      SweepResult result;
      if (axis == "participation") {
        result = sweep_participation(cfg.base, cfg.s_grid, cfg.seeds);
      } else if (axis == "local_steps") {
        result = sweep_local_steps(cfg.base, cfg.e_grid, cfg.seeds);
      } else if (axis == "staleness") {
        result = sweep_staleness(cfg.base, cfg.q_grid, cfg.seeds);
      } else {
        result = sweep_topology(cfg.base, cfg.topologies, cfg.seeds);
      }
      const std::string stem = axis + "_" + file_stamp();
      write_text(out_dir / (stem + ".csv"), sweep_csv(result));
      summary = result.to_json();
      summary["mode"] = cfg.mode;
      summary["csv"] = stem + ".csv";
    }
  } else if (cfg.mode == "lowerbound") {
    const LowerboundSweep sweep =
        run_lowerbound_sweep(cfg.quad, cfg.lb_e_grid, cfg.lb_s_grid, cfg.eta_rule, cfg.lb_rounds,
                             cfg.lb_seeds, cfg.base.workers);
    const std::string stem = "lowerbound_" + file_stamp();
    write_text(out_dir / (stem + ".csv"), lowerbound_csv(sweep));
    summary = sweep.to_json();
    summary["mode"] = cfg.mode;
    summary["csv"] = stem + ".csv";
  } else {  // gradcheck
    const GradCheckReport report = run_gradient_check(20, cfg.master_seed);
    write_text(out_dir / "gradcheck.json", report.to_json().dump(2) + "\n");
    summary["gradcheck"] = report.to_json();
    if (!report.pass)
      pending_error = "gradient check failed: max relative error " +
                      std::to_string(report.max_rel_error);
  }

  manifest["finished_at"] = timestamp_utc();
  write_text(manifest_path, manifest.dump(2) + "\n");
  write_text(out_dir / "summary.json", summary.dump(2) + "\n");

  if (!pending_error.empty()) throw std::runtime_error(pending_error);
  return 0;
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Preference-optimization simulator for federated and decentralized training"};
  std::string mode;
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  app.add_option("mode", mode,
                 "fed | dec | lowerbound | check-constants | gradcheck | sweep:<axis>")
      ->required();
  app.add_option("--config", config_path, "path to the JSON run configuration")->required();
  CLI::Option* out_opt = app.add_option("--out", out_dir, "output directory (overrides config)");
  CLI::Option* seed_opt = app.add_option("--seed", seed, "master seed (overrides config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    std::ifstream in(config_path, std::ios::binary);
    if (!in) throw io_error("cannot read config file: " + config_path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    RunConfig cfg = parse_config(buffer.str());
    cfg.mode = mode;
    if (out_opt->count() > 0) cfg.output_dir = out_dir;
    if (seed_opt->count() > 0) cfg.master_seed = seed;
    return execute(cfg);
  } catch (const config_error& e) {
    emit_error("config", e.what());
    return 2;
  } catch (const io_error& e) {
    emit_error("io", e.what());
    return 4;
  } catch (const std::exception& e) {
    emit_error("runtime", e.what());
    return 3;
  }
}

}  // namespace distdpo
