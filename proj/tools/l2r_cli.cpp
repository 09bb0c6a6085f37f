// l2r: generate synthetic streams, run lifelong retrieval methods, compare
// methods across seeds and aggregate finished runs.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "l2r/benchmark.hpp"
#include "l2r/runner.hpp"

namespace fs = std::filesystem;
using namespace l2r;

namespace {

struct Overrides {
  std::map<std::string, std::string> values;
};

// One --key option per config field, so flags mirror the config file.
template <class Cfg>
void add_config_flags(CLI::App* app, Overrides& o, const std::string& group) {
  for (const auto& key : Cfg::keys()) {
    std::string flag = "--" + key;
    for (auto& ch : flag) {
      if (ch == '_') ch = '-';
    }
    app->add_option_function<std::string>(flag, [&o, key](const std::string& v) { o.values[key] = v; })
        ->group(group);
  }
}

template <class Cfg>
void apply(Cfg& cfg, const Overrides& o) {
  for (const auto& [k, v] : o.values) cfg.set(k, v);
}

benchmark::GeneratorConfig generator_config(const std::string& path, const Overrides& o) {
  benchmark::GeneratorConfig g = path.empty() ? benchmark::GeneratorConfig{} : benchmark::GeneratorConfig::load(path);
  apply(g, o);
  g.validate();
  return g;
}

benchmark::SessionStream obtain_stream(const runner::RunConfig& cfg, const benchmark::GeneratorConfig& gen,
                                       std::uint64_t seed) {
  const fs::path root = runner::resolve_data_root(cfg.data);
  if (!root.empty()) {
    auto stream = benchmark::load_external_stream(root);
    for (const auto& w : stream.warnings) std::cerr << "warning: " << w << '\n';
    return stream;
  }
  return benchmark::generate_synthetic_stream(gen, seed);
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4) << v;
  return out.str();
}

void print_summary(const runner::RunConfig& cfg, const runner::RunResult& r) {
  const auto& m = r.primary(cfg);
  std::cout << cfg.run_name() << "  " << cfg.primary_metric << "  P:";
  for (int t = 0; t <= m.last_session(); ++t) std::cout << ' ' << fmt(m.at(t, t));
  if (m.last_session() >= 1) std::cout << "  AP " << fmt(metrics::average_perf(m));
  if (m.last_session() >= 1 && cfg.evaluate_future) std::cout << "  Forget " << fmt(metrics::forgetting(m, m.last_session()));
  if (m.last_session() >= 2 && cfg.evaluate_future) std::cout << "  FWT " << fmt(metrics::forward_transfer(m));
  std::cout << "  embed_ops " << r.cost.embed_ops << "  " << fmt(r.seconds) << "s\n";
}

/// One row per run directory holding a summary.json.
int report(const fs::path& runs, const fs::path& out_csv) {
  std::vector<fs::path> dirs;
  for (const auto& e : fs::recursive_directory_iterator(runs)) {
    if (e.is_regular_file() && e.path().filename() == "summary.json") dirs.push_back(e.path().parent_path());
  }
  std::sort(dirs.begin(), dirs.end());
  std::ofstream csv(out_csv);
  csv << "run,method,seed,metric,AP,Forget_T,FWT,embed_ops\n";
  struct Acc {
    double sum = 0.0;
    int n = 0;
  };
  std::map<std::pair<std::string, std::string>, Acc> ap;
  for (const auto& d : dirs) {
    std::ifstream in(d / "summary.json");
    const auto j = nlohmann::json::parse(in);
    for (const auto& [metric, s] : j.at("metrics").items()) {
      auto num = [](const nlohmann::json& v) { return v.is_number() ? fmt(v.get<double>()) : std::string(""); };
      csv << d.filename().string() << ',' << j.at("method").get<std::string>() << ',' << j.at("seed") << ','
          << metric << ',' << num(s.value("AP", nlohmann::json())) << ',' << num(s.value("Forget", nlohmann::json()))
          << ',' << num(s.value("FWT", nlohmann::json())) << ',' << j.at("embed_ops") << '\n';
      if (s.contains("AP") && s.at("AP").is_number()) {
        auto& a = ap[{j.at("method").get<std::string>(), metric}];
        a.sum += s.at("AP").get<double>();
        ++a.n;
      }
    }
  }
  std::cout << std::left << std::setw(18) << "method" << std::setw(10) << "metric" << "mean AP (runs)\n";
  for (const auto& [key, a] : ap) {
    std::cout << std::left << std::setw(18) << key.first << std::setw(10) << key.second << fmt(a.sum / a.n) << " (" << a.n
              << ")\n";
  }
  std::cout << "wrote " << out_csv.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lifelong dense retrieval simulator"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "write a synthetic session stream");
  std::string gen_out;
  std::string gen_cfg_path;
  std::uint64_t gen_seed = 1;
  Overrides gen_over;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--gen-config", gen_cfg_path, "generator key=value file");
  gen->add_option("--seed", gen_seed, "generator seed");
  add_config_flags<benchmark::GeneratorConfig>(gen, gen_over, "Generator");

  // run
  auto* run = app.add_subcommand("run", "run one method over a stream");
  std::string run_cfg_path;
  std::string run_gen_path;
  Overrides run_over;
  Overrides run_gen_over;
  run->add_option("--config", run_cfg_path, "run key=value file (flags override)");
  run->add_option("--gen-config", run_gen_path, "generator config when no data root is given");
  add_config_flags<runner::RunConfig>(run, run_over, "Run");
  add_config_flags<benchmark::GeneratorConfig>(run, run_gen_over, "Generator");

  // compare
  auto* cmp = app.add_subcommand("compare", "methods x seeds");
  std::string cmp_cfg_path;
  std::string cmp_gen_path;
  std::string cmp_methods = "initial,l2r_vanilla,l2r_emb,l2r_rank,er_emb";
  std::string cmp_seeds = "1,2,3";
  std::string cmp_name = "compare";
  Overrides cmp_over;
  Overrides cmp_gen_over;
  cmp->add_option("--config", cmp_cfg_path, "run key=value file");
  cmp->add_option("--gen-config", cmp_gen_path, "generator config when no data root is given");
  cmp->add_option("--methods", cmp_methods, "comma-separated methods");
  cmp->add_option("--seeds", cmp_seeds, "comma-separated seeds");
  cmp->add_option("--compare-name", cmp_name, "subdirectory of --out for this comparison");
  add_config_flags<runner::RunConfig>(cmp, cmp_over, "Run");
  add_config_flags<benchmark::GeneratorConfig>(cmp, cmp_gen_over, "Generator");

  // report
  auto* rep = app.add_subcommand("report", "aggregate summary.json files into a CSV");
  std::string rep_runs = "runs";
  std::string rep_out = "report.csv";
  rep->add_option("--runs", rep_runs, "directory searched for summary.json");
  rep->add_option("--out", rep_out, "CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const auto g = generator_config(gen_cfg_path, gen_over);
      const auto stream = benchmark::generate_synthetic_stream(g, gen_seed);
      benchmark::write_stream(stream, gen_out, &g);
      std::cout << "sessions " << stream.sessions.size() << ", docs " << stream.docs_through(stream.last_session())
                << ", train queries " << stream.split("train").size() << " -> " << gen_out << '\n';
      return 0;
    }
    if (*run) {
      runner::RunConfig cfg = run_cfg_path.empty() ? runner::RunConfig{} : runner::RunConfig::load(run_cfg_path);
      apply(cfg, run_over);
      const auto g = generator_config(run_gen_path, run_gen_over);
      const auto stream = obtain_stream(cfg, g, cfg.seed);
      const auto result = runner::run_and_write(stream, cfg);
      print_summary(cfg, result);
      return 0;
    }
    if (*cmp) {
      runner::RunConfig base = cmp_cfg_path.empty() ? runner::RunConfig{} : runner::RunConfig::load(cmp_cfg_path);
      apply(base, cmp_over);
      const auto g = generator_config(cmp_gen_path, cmp_gen_over);
      const fs::path out = base.out / cmp_name;
      for (const auto& s : split_csv(cmp_seeds)) {
        const std::uint64_t seed = std::stoull(s);
        runner::RunConfig seeded = base;
        seeded.seed = seed;
        const auto stream = obtain_stream(seeded, g, seed);
        for (const auto& m : split_csv(cmp_methods)) {
          runner::RunConfig cfg = seeded;
          cfg.method = runner::parse_method(m);
          cfg.out = out;
          cfg.name = m + "_s" + s;
          print_summary(cfg, runner::run_and_write(stream, cfg));
        }
      }
      return report(out, out / "report.csv");
    }
    if (*rep) return report(rep_runs, rep_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
