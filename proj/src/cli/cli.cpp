// SPDX-License-Identifier: Apache-2.0

#include "taskmod/cli/cli.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "taskmod/common/error.hpp"
#include "taskmod/eval/evaluator.hpp"
#include "taskmod/eval/resources.hpp"
#include "taskmod/train/checkpoint.hpp"

namespace taskmod {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersionStamp = "taskmod 0.1.0";

std::vector<int> parse_int_list(const std::string& csv) {
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t pos = 0;
      out.push_back(std::stoi(item, &pos));
      if (pos != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("not an integer list: '" + csv + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty integer list");
  return out;
}

json read_json(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw IoError("cannot open " + p.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::trunc);
  if (!os) throw IoError("cannot write " + p.string());
  os << text;
  if (!os) throw IoError("write failed for " + p.string());
}

// Creates `dir`; refuses a non-empty existing directory unless forced.
void prepare_out_dir(const fs::path& dir, bool force) {
  std::error_code ec;
  if (fs::exists(dir, ec)) {
    if (!fs::is_directory(dir, ec)) throw IoError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir, ec) && !force) throw IoError(dir.string() + " is not empty (use --force)");
  }
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

// Flags shared by train, ablate and resources. Each is applied only when
// given, so a --config file keeps its values otherwise.
struct NetFlags {
  std::string tasks = "edge,seg,norm,depth";
  int stem = 0;
  std::string stages;
  int blocks = 0;
  int se_reduction = 0;
  double lr = 0.0;
  int batch = 0;
  std::string config_path;

  void attach(CLI::App* app) {
    app->add_option("--tasks", tasks, "comma-separated task list")->capture_default_str();
    app->add_option("--stem", stem, "stem channels");
    app->add_option("--stages", stages, "stage widths, e.g. 16,32,64");
    app->add_option("--blocks", blocks, "residual blocks per stage");
    app->add_option("--se-reduction", se_reduction, "SE bottleneck reduction");
    app->add_option("--lr", lr, "base learning rate");
    app->add_option("--batch", batch, "mini-batch size");
    app->add_option("--config", config_path, "JSON training config (flags override it)");
  }

  TrainConfig base(const CLI::App* app) const {
    TrainConfig c;
    if (!config_path.empty()) from_json(read_json(config_path), c);
    if (app->count("--tasks") || c.net.tasks.empty()) c.net.tasks = parse_task_list(tasks);
    if (app->count("--stem")) c.net.stem_channels = stem;
    if (app->count("--stages")) c.net.stage_channels = parse_int_list(stages);
    if (app->count("--blocks")) c.net.blocks_per_stage = blocks;
    if (app->count("--se-reduction")) c.net.se_reduction = se_reduction;
    if (app->count("--lr")) c.optim.base_lr = lr;
    if (app->count("--batch")) c.optim.batch_size = batch;
    return c;
  }
};

SeMode se_mode_from_flag(const std::string& s) {
  if (s == "none") return SeMode::None;
  if (s == "shared") return SeMode::Shared;
  if (s == "task") return SeMode::PerTask;
  throw ConfigError("--se must be none, shared or task, got '" + s + "'");
}

SeScope se_scope_from_flag(const std::string& s) {
  if (s == "enc") return SeScope::Encoder;
  if (s == "dec") return SeScope::Decoder;
  if (s == "both") return SeScope::Both;
  throw ConfigError("--se-scope must be enc, dec or both, got '" + s + "'");
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

TrainConfig run_config(const fs::path& run_dir) {
  const auto m = read_json(run_dir / "manifest.json");
  TrainConfig c;
  try {
    from_json(m.at("config"), c);
  } catch (const json::exception& e) {
    throw FormatError((run_dir / "manifest.json").string() + ": " + e.what());
  }
  return c;
}

// Network and trained parameters of a run directory, checked against the
// layout the config implies.
std::pair<Network, ParameterStore> load_run(const fs::path& run_dir) {
  const TrainConfig cfg = run_config(run_dir);
  const Trainer fresh(cfg);
  ParameterStore store = load_checkpoint(run_dir / "checkpoint.mtck");
  require_same_layout(fresh.store(), store);
  return {fresh.network(), std::move(store)};
}

void write_report(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

int cmd_gen(const fs::path& out, std::int64_t n_train, std::int64_t n_test, int size, std::uint64_t seed, bool force,
            std::ostream& os) {
  prepare_out_dir(out, force);
  const Dataset d = generate_dataset(seed, size, n_train, n_test);
  write_dataset(out, d);
  os << "wrote " << n_train << " train and " << n_test << " test samples (" << size << "x" << size << ")\n";
  return kExitOk;
}

int cmd_train(TrainConfig cfg, const fs::path& data_dir, const fs::path& out, bool force, std::ostream& os) {
  const Dataset data = read_dataset(data_dir);
  cfg.net.input_size = data.manifest.size;
  cfg.validate();
  prepare_out_dir(out, force);
  const auto started = utc_now();
  const auto t0 = std::chrono::steady_clock::now();

  Trainer trainer(cfg);
  std::ostringstream csv;
  csv << "epoch";
  for (const auto& t : cfg.net.tasks) csv << ',' << t.name;
  csv << ",disc,composite\n";
  trainer.fit(data.train, [&](const EpochStats& e) {
    csv << e.epoch;
    for (const auto& [t, l] : e.mean_task_loss) csv << ',' << format_double(l);
    csv << ',' << format_double(e.mean_disc_loss) << ',' << format_double(e.mean_composite) << '\n';
    os << "epoch " << e.epoch << " composite " << format_double(e.mean_composite) << '\n';
  });
  save_checkpoint(out / "checkpoint.mtck", trainer.store());
  write_text(out / "losses.csv", csv.str());

  const json manifest{
      {"config", cfg},
      {"config_digest", config_digest(cfg)},
      {"data", {{"seed", data.manifest.seed}, {"size", data.manifest.size}, {"n_train", data.manifest.n_train}}},
      {"checkpoint", "checkpoint.mtck"},
      {"metrics", "metrics.json"},
      {"version", kVersionStamp},
      {"started_utc", started},
      {"wall_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}};
  write_report(out / "manifest.json", manifest);
  return kExitOk;
}

int cmd_eval(const fs::path& run_dir, const fs::path& data_dir, const std::vector<std::string>& baselines,
             const fs::path& out_path, std::ostream& os) {
  const Dataset data = read_dataset(data_dir);
  const auto [net, store] = load_run(run_dir);
  const TrainConfig cfg = run_config(run_dir);
  MetricsReport rep = evaluate_network(net, store, data.test);
  rep.config_digest = config_digest(cfg);
  json j = rep;
  if (!baselines.empty()) {
    std::vector<MetricsReport> base_reports;
    json digests = json::array();
    for (const auto& b : baselines) {
      const auto [bnet, bstore] = load_run(b);
      MetricsReport br = evaluate_network(bnet, bstore, data.test);
      br.config_digest = config_digest(run_config(b));
      digests.push_back(br.config_digest);
      base_reports.push_back(std::move(br));
    }
    const MetricsReport baseline = combine_baselines(base_reports);
    j["delta_m"] = delta_m(rep, baseline, net.config().tasks);
    j["baseline_digests"] = digests;
  }
  write_report(out_path, j);
  for (const auto& [name, e] : rep.per_task) os << name << ' ' << to_string(e.metric) << ' ' << format_double(e.value) << '\n';
  if (j.contains("delta_m")) os << "delta_m " << format_double(j["delta_m"].get<double>()) << '\n';
  return kExitOk;
}

int cmd_ablate(const TrainConfig& base, const fs::path& data_dir, int seeds, std::uint64_t seed0, int epochs,
               const fs::path& out_csv, std::ostream& os) {
  if (seeds < 1) throw ConfigError("--seeds must be >= 1");
  const Dataset data = read_dataset(data_dir);
  NetworkConfig net = base.net;
  net.input_size = data.manifest.size;
  const auto grid = ablation_grid(net);
  std::ofstream csv(out_csv, std::ios::trunc);
  if (!csv) throw IoError("cannot write " + out_csv.string());
  csv << "config,seed";
  for (const auto& t : net.tasks) csv << ',' << t.name;
  csv << ",delta_m,params,madds\n" << std::flush;
  for (int s = 0; s < seeds; ++s) {
    const std::uint64_t seed = seed0 + static_cast<std::uint64_t>(s);
    std::vector<MetricsReport> singles;
    for (const auto& entry : grid) {
      TrainConfig cfg = base;
      cfg.net = entry.net;
      cfg.seed = seed;
      cfg.epochs = epochs;
      const MetricsReport rep = train_and_evaluate(cfg, data);
      const bool single = entry.net.num_tasks() == 1;
      double dm = 0.0;
      if (single) {
        singles.push_back(rep);
      } else {
        dm = delta_m(rep, combine_baselines(singles), entry.net.tasks);
      }
      const ResourceReport res = count_resources(entry.net, cfg.adv.disc_hidden);
      std::int64_t madds = 0;
      for (const auto& [t, m] : res.madds_per_forward) madds += m;
      csv << entry.name << ',' << seed;
      for (const auto& t : net.tasks) {
        csv << ',';
        if (auto it = rep.per_task.find(t.name); it != rep.per_task.end()) csv << format_double(it->second.value);
      }
      csv << ',' << format_double(dm) << ',' << res.total_params << ',' << madds << '\n' << std::flush;
      if (!csv) throw IoError("write failed for " + out_csv.string());
      os << entry.name << " seed " << seed << " delta_m " << format_double(dm) << '\n';
    }
  }
  return kExitOk;
}

int cmd_resources(const TrainConfig& base, bool from_config, int size, const std::string& json_path, std::ostream& os) {
  std::vector<GridEntry> entries;
  if (from_config) {
    entries.push_back({"config", base.net});
  } else {
    NetworkConfig net = base.net;
    net.input_size = size;
    entries = ablation_grid(net);
  }
  json arr = json::array();
  os << std::left << std::setw(14) << "config" << std::right << std::setw(12) << "shared" << std::setw(12) << "per-task"
     << std::setw(12) << "total" << std::setw(14) << "madds/task" << '\n';
  for (const auto& e : entries) {
    const ResourceReport r = count_resources(e.net, base.adv.disc_hidden);
    const std::int64_t per_task = r.per_task_params.empty() ? 0 : r.per_task_params.begin()->second;
    const std::int64_t madds = r.madds_per_forward.empty() ? 0 : r.madds_per_forward.begin()->second;
    os << std::left << std::setw(14) << e.name << std::right << std::setw(12) << r.shared_params << std::setw(12)
       << per_task << std::setw(12) << r.total_params << std::setw(14) << madds << '\n';
    arr.push_back({{"config", e.name}, {"resources", r}});
  }
  if (!json_path.empty()) write_report(json_path, arr);
  return kExitOk;
}

}  // namespace

std::vector<GridEntry> ablation_grid(const NetworkConfig& base) {
  std::vector<GridEntry> out;
  NetworkConfig plain = base;
  plain.se_mode = SeMode::None;
  plain.se_scope = SeScope::Both;
  plain.ra_enabled = false;
  plain.adv_enabled = false;
  plain.bn_mode.reset();
  for (const auto& t : base.tasks) {
    NetworkConfig c = plain;
    c.tasks = {task_preset(t.name, 0)};
    out.push_back({"single:" + t.name, c});
  }
  out.push_back({"plain", plain});
  NetworkConfig adv = plain;
  adv.adv_enabled = true;
  out.push_back({"adv", adv});
  NetworkConfig se_dec = plain;
  se_dec.se_mode = SeMode::PerTask;
  se_dec.se_scope = SeScope::Decoder;
  out.push_back({"se-dec", se_dec});
  NetworkConfig se_both = plain;
  se_both.se_mode = SeMode::PerTask;
  out.push_back({"se-both", se_both});
  NetworkConfig full = se_both;
  full.ra_enabled = true;
  full.adv_enabled = true;
  out.push_back({"se-ra-adv", full});
  return out;
}

MetricsReport train_and_evaluate(const TrainConfig& config, const Dataset& data, int eval_threads) {
  TrainConfig cfg = config;
  cfg.net.input_size = data.manifest.size;
  Trainer trainer(cfg);
  trainer.fit(data.train);
  MetricsReport rep = evaluate_network(trainer.network(), trainer.store(), data.test, eval_threads);
  rep.config_digest = config_digest(cfg);
  return rep;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Task-conditioned multi-task learning on synthetic scenes"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  std::string gen_out;
  std::int64_t n_train = 0, n_test = 0;
  int gen_size = 64;
  std::uint64_t gen_seed = 0;
  bool gen_force = false;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--n-train", n_train, "training samples")->required();
  gen->add_option("--n-test", n_test, "test samples")->required();
  gen->add_option("--size", gen_size, "image side")->required();
  gen->add_option("--seed", gen_seed, "dataset seed")->required();
  gen->add_flag("--force", gen_force, "allow a non-empty output directory");

  auto* train = app.add_subcommand("train", "train one configuration");
  NetFlags train_net;
  train_net.attach(train);
  std::string train_data, train_out, mode = "multi", se = "none", se_scope = "both";
  bool ra = false, adv = false, train_force = false;
  double lambda = 1.0, w_d = 0.1;
  int epochs = 1;
  std::uint64_t train_seed = 0;
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "run directory")->required();
  train->add_option("--mode", mode, "single:<task> or multi")->capture_default_str();
  train->add_option("--se", se, "none, shared or task");
  train->add_option("--se-scope", se_scope, "enc, dec or both");
  train->add_flag("--ra", ra, "per-task residual adapters");
  train->add_flag("--adv", adv, "adversarial gradient disentanglement");
  train->add_option("--lambda", lambda, "gradient reversal scale");
  train->add_option("--wd", w_d, "discriminator loss weight w_d");
  train->add_option("--epochs", epochs, "training epochs");
  train->add_option("--seed", train_seed, "initialization and shuffle seed");
  train->add_flag("--force", train_force, "allow a non-empty run directory");

  auto* eval = app.add_subcommand("eval", "evaluate a run on the test split");
  std::string eval_run, eval_data, eval_out;
  std::vector<std::string> baselines;
  eval->add_option("--run", eval_run, "run directory")->required();
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--baseline", baselines, "baseline run directory (repeatable; tasks are matched by name)");
  eval->add_option("--out", eval_out, "report path (default <run>/metrics.json)");

  auto* ablate = app.add_subcommand("ablate", "train and evaluate the ablation grid");
  NetFlags ablate_net;
  ablate_net.attach(ablate);
  std::string ablate_data, ablate_out;
  int seeds = 1, ablate_epochs = 1;
  std::uint64_t ablate_seed = 0;
  ablate->add_option("--data", ablate_data, "dataset directory")->required();
  ablate->add_option("--out", ablate_out, "results CSV")->required();
  ablate->add_option("--seeds", seeds, "seeds per configuration")->capture_default_str();
  ablate->add_option("--seed", ablate_seed, "first seed")->capture_default_str();
  ablate->add_option("--epochs", ablate_epochs, "training epochs")->capture_default_str();

  auto* resources = app.add_subcommand("resources", "parameter and multiply-add counts");
  NetFlags res_net;
  res_net.attach(resources);
  int res_size = 64;
  std::string res_json;
  resources->add_option("--size", res_size, "input side for the preset grid")->capture_default_str();
  resources->add_option("--json", res_json, "also write the report as JSON");

  std::vector<const char*> argv{"taskmod"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen(gen_out, n_train, n_test, gen_size, gen_seed, gen_force, out);
    if (train->parsed()) {
      TrainConfig cfg = train_net.base(train);
      if (mode.rfind("single:", 0) == 0) {
        cfg.net.tasks = {task_preset(mode.substr(7), 0)};
      } else if (mode != "multi") {
        throw ConfigError("--mode must be multi or single:<task>, got '" + mode + "'");
      }
      if (train->count("--se")) cfg.net.se_mode = se_mode_from_flag(se);
      if (train->count("--se-scope")) cfg.net.se_scope = se_scope_from_flag(se_scope);
      if (ra) cfg.net.ra_enabled = true;
      if (adv) cfg.net.adv_enabled = true;
      if (train->count("--lambda")) cfg.adv.lambda = lambda;
      if (train->count("--wd")) cfg.adv.w_d = w_d;
      if (train->count("--epochs")) cfg.epochs = epochs;
      if (train->count("--seed")) cfg.seed = train_seed;
      return cmd_train(cfg, train_data, train_out, train_force, out);
    }
    if (eval->parsed()) {
      const fs::path report = eval_out.empty() ? fs::path(eval_run) / "metrics.json" : fs::path(eval_out);
      return cmd_eval(eval_run, eval_data, baselines, report, out);
    }
    if (ablate->parsed()) return cmd_ablate(ablate_net.base(ablate), ablate_data, seeds, ablate_seed, ablate_epochs, ablate_out, out);
    if (resources->parsed()) {
      const TrainConfig cfg = res_net.base(resources);
      return cmd_resources(cfg, !res_net.config_path.empty(), res_size, res_json, out);
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << '\n';
    return kExitIo;
  } catch (const DivergenceError& e) {
    err << "diverged: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const IncompatibleError& e) {
    err << "incompatible: " << e.what() << '\n';
    return kExitIncompatible;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitOther;
  }
  return kExitUsage;
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace taskmod
