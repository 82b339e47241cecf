// Command-line front end: benchmark suites, single episodes, file validation
// and the live session server.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "scriptdrive/benchmark.hpp"
#include "scriptdrive/runtime.hpp"
#include "scriptdrive/scenario.hpp"
#include "scriptdrive/schedule/script.hpp"
#include "scriptdrive/session.hpp"

namespace fs = std::filesystem;
using namespace scriptdrive;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error(path.string() + ": cannot open");
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

struct BackendOptions {
  std::string backend = "stub";
  std::string prompt_template;
  std::string step_template;
};

bench::InterpreterFactory make_factory(const BackendOptions& opts, bool use_context) {
  if (opts.backend == "stub") {
    return [use_context] { return std::make_unique<interpreter::StubInterpreter>(use_context); };
  }
  auto backend = std::make_shared<interpreter::HttpChatBackend>(
      interpreter::HttpBackendConfig::from_env());
  const auto templates = interpreter::PromptTemplates::load(opts.prompt_template, opts.step_template);
  return [backend, templates] {
    return std::make_unique<interpreter::LlmInterpreter>(backend, templates);
  };
}

runtime::ControllerConfig controller_config(const std::string& path) {
  return path.empty() ? runtime::ControllerConfig{} : runtime::load_controller_config(path);
}

int run_bench(const std::string& corpus_path, std::vector<std::string> methods, int seeds,
              std::uint64_t seed_offset,
              std::vector<double> latencies, const std::string& ablation,
              const BackendOptions& backend, const std::string& out_dir, int jobs,
              const std::string& config_path) {
  const bench::Corpus corpus = bench::load_corpus(corpus_path);
  if (corpus.entries.empty()) {
    std::cerr << "warning: corpus " << corpus_path << " has no episodes\n";
  }
  const runtime::ControllerConfig controller = controller_config(config_path);
  bench::ExpertCache experts(controller);

  std::vector<bench::SuiteConfig> runs;
  auto add = [&](const bench::Method& m, double latency, bool context, std::string label) {
    bench::SuiteConfig cfg;
    cfg.method = m;
    cfg.seeds = seeds;
    cfg.seed_offset = seed_offset;
    cfg.latency = latency;
    cfg.jobs = jobs;
    cfg.controller = controller;
    cfg.label = std::move(label);
    cfg.count_backend_latency = backend.backend != "stub";
    if (m.uses_interpreter()) {
      cfg.make_interpreter = make_factory(backend, context);
    }
    runs.push_back(std::move(cfg));
  };
  const auto ours = *bench::Method::parse("ours_mode3");

  if (ablation == "none") {
    if (methods.empty()) {
      methods.push_back("ours_mode3");
    }
    if (latencies.empty()) {
      latencies.push_back(0.0);
    }
    for (const auto& name : methods) {
      const auto m = bench::Method::parse(name);
      if (!m) {
        throw CLI::ValidationError("--method", "unknown method '" + name + "'");
      }
      for (double l : latencies) {
        std::string label = m->name();
        if (latencies.size() > 1 || l != 0.0) {
          label += "@" + schedule::format_number(l) + "s";
        }
        add(*m, l, true, label);
      }
    }
  } else if (ablation == "no_context") {
    add(ours, 0.0, true, "ours_mode3");
    add(ours, 0.0, false, "ours_mode3:no_context");
  } else if (ablation == "single_planner") {
    add(ours, 0.0, true, "ours_mode3");
    for (auto b : planners::kAllBehaviors) {
      add({bench::MethodKind::single_planner, b}, 0.0, true, "");
    }
  } else if (ablation == "latency") {
    if (latencies.empty()) {
      latencies = {0.0, 1.0, 2.0, 4.0, 8.0};
    }
    for (double l : latencies) {
      add(ours, l, true, "ours_mode3@" + schedule::format_number(l) + "s");
    }
  }

  std::vector<bench::SuiteReport> reports;
  for (const auto& cfg : runs) {
    std::cerr << "running " << (cfg.label.empty() ? cfg.method.name() : cfg.label) << " ...\n";
    reports.push_back(bench::run_suite(corpus, cfg, experts));
  }
  std::vector<const bench::SuiteReport*> ptrs;
  for (const auto& r : reports) {
    ptrs.push_back(&r);
  }
  const std::string summary = bench::render_summary(ptrs);
  std::cout << summary;

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream results(fs::path(out_dir) / "results.jsonl");
    for (const auto& r : reports) {
      for (const auto& e : r.episodes) {
        results << bench::episode_json(e) << "\n";
      }
    }
    std::ofstream(fs::path(out_dir) / "summary.txt") << summary;
    std::ofstream csv(fs::path(out_dir) / "suites.csv");
    csv << "label,method,latency,episodes,failed,recognition,realization,collision,ttc,drivable,"
           "speed,direction,progress,interpreter_calls,safe_rate\n";
    for (std::size_t i = 0; i < reports.size(); ++i) {
      const auto& m = reports[i].means;
      char row[512];
      std::snprintf(row, sizeof(row),
                    "%s,%s,%g,%zu,%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                    reports[i].label.c_str(), runs[i].method.name().c_str(), runs[i].latency,
                    m.episodes, reports[i].failed_episodes, m.recognition, m.realization,
                    m.collision, m.ttc, m.drivable, m.speed, m.direction, m.progress,
                    m.interpreter_calls, m.safe_rate);
      csv << row;
    }
    std::cerr << "wrote results.jsonl, summary.txt and suites.csv to " << out_dir << "\n";
  }
  return 0;
}

int run_single(const std::string& scenario_path, const std::string& instruction,
               std::uint64_t seed, const std::string& method_name, const BackendOptions& backend,
               double latency, double horizon, const std::string& trace_path,
               const std::string& config_path) {
  const auto method = bench::Method::parse(method_name);
  if (!method) {
    throw CLI::ValidationError("--method", "unknown method '" + method_name + "'");
  }
  const world::Scenario scenario = world::load_scenario(scenario_path);
  const runtime::ControllerConfig controller = controller_config(config_path);
  bench::ExpertCache experts(controller);
  std::unique_ptr<interpreter::Interpreter> interp = make_factory(backend, true)();

  bench::EpisodeSpec spec;
  spec.id = "cli";
  spec.scenario = &scenario;
  spec.instruction.id = "cli";
  spec.instruction.text = instruction;
  spec.seed = seed;
  spec.horizon = horizon;
  spec.latency = latency;
  bench::EpisodeContext ctx;
  ctx.interpreter = interp.get();
  ctx.experts = &experts;
  ctx.controller = controller;
  ctx.count_backend_latency = backend.backend != "stub";
  const bench::EpisodeReport rep = bench::run_episode(spec, *method, ctx);
  if (!rep.script_text.empty()) {
    std::cout << rep.script_text;
  }
  std::cout << bench::episode_json(rep) << "\n";

  if (!trace_path.empty()) {
    std::ofstream out(trace_path);
    out << "tick,time,x,y,heading,speed,lane,behavior,fallback,phase,stage,k,accel,steer\n";
    for (const auto& r : rep.trace.records) {
      char line[256];
      std::snprintf(line, sizeof(line), "%lld,%.1f,%.3f,%.3f,%.4f,%.3f,%d,%s,%d,%s,%d,%d,%.3f,%.4f\n",
                    static_cast<long long>(r.tick), r.time, r.ego.x, r.ego.y, r.ego.heading,
                    r.ego.speed, r.lane_index, std::string(planners::to_string(r.behavior)).c_str(),
                    r.from_fallback ? 1 : 0, std::string(schedule::to_string(r.phase)).c_str(),
                    r.stage_index, r.completed, r.command.acceleration, r.command.steering_angle);
      out << line;
    }
  }
  return 0;
}

int run_validate(const std::vector<std::string>& files, const std::string& kind) {
  int failures = 0;
  for (const auto& f : files) {
    std::string k = kind;
    if (k == "auto") {
      const std::string ext = fs::path(f).extension().string();
      k = ext == ".yaml" || ext == ".yml" ? "scenario" : "script";
      if (k == "scenario" && fs::path(f).filename().string().find("corpus") != std::string::npos) {
        k = "corpus";
      }
    }
    try {
      if (k == "script") {
        const auto script = schedule::parse_script(read_text(f));
        std::cout << f << ": ok (" << script.stages.size() << " stages, "
                  << script.fallbacks.size() << " fallbacks)\n"
                  << schedule::render(script);
      } else if (k == "scenario") {
        const auto sc = world::load_scenario(f);
        std::cout << f << ": ok (" << sc.vehicles.size() << " vehicles)\n";
      } else if (k == "corpus") {
        const auto corpus = bench::load_corpus(f);
        for (const auto& e : corpus.entries) {
          world::load_scenario(corpus.base_dir / e.scenario);
        }
        std::cout << f << ": ok (" << corpus.entries.size() << " episodes)\n";
      } else if (k == "config") {
        runtime::load_controller_config(f);
        std::cout << f << ": ok\n";
      } else {
        throw std::runtime_error("unknown kind '" + k + "'");
      }
    } catch (const schedule::ScriptError& e) {
      std::cerr << f << ":" << e.line() << ":" << e.column() << ": " << e.detail() << "\n";
      ++failures;
    } catch (const std::exception& e) {
      std::cerr << f << ": " << e.what() << "\n";
      ++failures;
    }
  }
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Instruction-conditioned planner scheduling: benchmark and live sessions"};
  app.require_subcommand(1);

  BackendOptions backend;
  auto add_backend = [&](CLI::App* sub) {
    sub->add_option("--backend", backend.backend, "Interpreter backend")
        ->check(CLI::IsMember({"stub", "llm"}));
    sub->add_option("--prompt-template", backend.prompt_template,
                    "Script prompt template with {instruction}, {scene}, {grammar}");
    sub->add_option("--step-template", backend.step_template,
                    "Per-second prompt template with {instruction}, {scene}, {history}");
  };
  std::string config_path;

  std::uint64_t seed = 0;
  auto* bench_cmd = app.add_subcommand("bench", "Run a benchmark suite over a corpus");
  std::string corpus_path = "data/corpus.yaml";
  std::vector<std::string> methods;
  int seeds = 5;
  std::vector<double> latencies;
  std::string ablation = "none";
  std::string out_dir;
  int jobs = 1;
  bench_cmd->add_option("--corpus", corpus_path, "Corpus file")->check(CLI::ExistingFile);
  bench_cmd->add_option("--method", methods,
                        "ours_mode3, mode2_baseline, idm_only or single_planner:<behavior>");
  bench_cmd->add_option("--seeds", seeds, "Seeds per corpus entry")->check(CLI::NonNegativeNumber);
  bench_cmd->add_option("--latency", latencies, "Injected interpreter latency in seconds");
  bench_cmd->add_option("--ablation", ablation, "Ablation preset")
      ->check(CLI::IsMember({"none", "no_context", "single_planner", "latency"}));
  bench_cmd->add_option("--out", out_dir, "Directory for results.jsonl and summary.txt");
  bench_cmd->add_option("--jobs", jobs, "Parallel episodes")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--seed", seed, "Offset added to every corpus seed");
  bench_cmd->add_option("--config", config_path, "Planner config file");
  add_backend(bench_cmd);

  auto* run_cmd = app.add_subcommand("run", "Run one episode and print its report");
  std::string scenario_path;
  std::string instruction;
  std::string method = "ours_mode3";
  double latency = 0.0;
  double horizon = bench::kDefaultHorizon;
  std::string trace_path;
  run_cmd->add_option("--scenario", scenario_path, "Scenario file")
      ->required()
      ->check(CLI::ExistingFile);
  run_cmd->add_option("--instruction", instruction, "Passenger instruction")->required();
  run_cmd->add_option("--seed", seed, "World seed");
  run_cmd->add_option("--method", method, "Method");
  run_cmd->add_option("--latency", latency, "Injected interpreter latency in seconds");
  run_cmd->add_option("--horizon", horizon, "Episode length in seconds")
      ->check(CLI::PositiveNumber);
  run_cmd->add_option("--trace", trace_path, "Write the per-tick trace as CSV");
  run_cmd->add_option("--config", config_path, "Planner config file");
  add_backend(run_cmd);

  auto* validate_cmd = app.add_subcommand("validate", "Check scripts, scenarios, corpora");
  std::vector<std::string> files;
  std::string kind = "auto";
  validate_cmd->add_option("files", files, "Files to check")->required();
  validate_cmd->add_option("--kind", kind, "File kind")
      ->check(CLI::IsMember({"auto", "script", "scenario", "corpus", "config"}));

  auto* serve_cmd = app.add_subcommand("serve", "Serve live sessions over HTTP and WebSocket");
  std::string host = "127.0.0.1";
  unsigned short port = 8080;
  std::string scenario_dir = "data/scenarios";
  serve_cmd->add_option("--host", host, "Listen address");
  serve_cmd->add_option("--port", port, "Listen port");
  serve_cmd->add_option("--scenarios", scenario_dir, "Directory of scenario files")
      ->check(CLI::ExistingDirectory);
  serve_cmd->add_option("--seed", seed, "World seed for new sessions without one");
  serve_cmd->add_option("--latency", latency, "Injected interpreter latency in seconds");
  serve_cmd->add_option("--config", config_path, "Planner config file");
  add_backend(serve_cmd);

  CLI11_PARSE(app, argc, argv);

  try {
    if (bench_cmd->parsed()) {
      return run_bench(corpus_path, methods, seeds, seed, latencies, ablation, backend, out_dir, jobs,
                       config_path);
    }
    if (run_cmd->parsed()) {
      return run_single(scenario_path, instruction, seed, method, backend, latency, horizon,
                        trace_path, config_path);
    }
    if (validate_cmd->parsed()) {
      return run_validate(files, kind);
    }
    if (serve_cmd->parsed()) {
      session::ServiceConfig cfg;
      cfg.host = host;
      cfg.port = port;
      cfg.scenario_dir = scenario_dir;
      cfg.controller = controller_config(config_path);
      cfg.seed = seed;
      cfg.injected_latency = latency;
      cfg.backends["stub"] = make_factory(BackendOptions{"stub", "", ""}, true);
      if (backend.backend == "llm") {
        cfg.backends["llm"] = make_factory(backend, true);
      }
      return session::serve(cfg);
    }
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
