#include <atomic>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "../yaml_util.hpp"
#include "scriptdrive/benchmark.hpp"

namespace scriptdrive::bench {

namespace {

using detail::get;
using detail::get_or;

}  // namespace

Corpus parse_corpus(const std::string& text, const std::string& origin,
                    const std::filesystem::path& base_dir) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw CorpusError(origin + ": " + e.what());
  }
  detail::require_map<CorpusError>(root, origin, "corpus");
  detail::reject_unknown_keys<CorpusError>(root, origin, {"seeds", "horizon", "episodes"});

  Corpus corpus;
  corpus.base_dir = base_dir;
  corpus.horizon = get_or<double, CorpusError>(root, "horizon", kDefaultHorizon, origin);
  if (!(corpus.horizon > 0.0)) {
    throw CorpusError(detail::where(origin, root["horizon"]) + ": horizon must be positive");
  }
  const auto default_seeds =
      get_or<std::vector<std::uint64_t>, CorpusError>(root, "seeds", {0}, origin);

  const YAML::Node episodes = root["episodes"];
  if (episodes && !episodes.IsSequence()) {
    throw CorpusError(detail::where(origin, episodes) + ": episodes must be a list");
  }
  for (const YAML::Node& e : episodes) {
    detail::require_map<CorpusError>(e, origin, "episode");
    detail::reject_unknown_keys<CorpusError>(
        e, origin, {"id", "category", "instruction", "scenario", "ground_truth", "seeds"});
    CorpusEntry entry;
    entry.instruction.id = get<std::string, CorpusError>(e, "id", origin);
    entry.instruction.text = get<std::string, CorpusError>(e, "instruction", origin);
    if (entry.instruction.text.empty()) {
      throw CorpusError(detail::where(origin, e) + ": empty instruction");
    }
    entry.category = get_or<std::string, CorpusError>(e, "category", "uncategorized", origin);
    entry.scenario = get<std::string, CorpusError>(e, "scenario", origin);
    entry.seeds = get_or<std::vector<std::uint64_t>, CorpusError>(e, "seeds", default_seeds, origin);
    if (e["ground_truth"]) {
      std::vector<BehaviorSpec> truth;
      for (const auto& item : get<std::vector<std::string>, CorpusError>(e, "ground_truth", origin)) {
        const auto spec = interpreter::parse_behavior_spec(item);
        if (!spec) {
          throw CorpusError(detail::where(origin, e["ground_truth"]) + ": unknown behavior '" +
                            item + "'");
        }
        truth.push_back(*spec);
      }
      if (truth.empty() || truth.size() > interpreter::kMaxSequenceLength) {
        throw CorpusError(detail::where(origin, e["ground_truth"]) +
                          ": ground truth must have 1 to 8 behaviors");
      }
      entry.instruction.ground_truth = std::move(truth);
    }
    for (const auto& other : corpus.entries) {
      if (other.instruction.id == entry.instruction.id) {
        throw CorpusError(detail::where(origin, e) + ": duplicate id '" + entry.instruction.id +
                          "'");
      }
    }
    corpus.entries.push_back(std::move(entry));
  }
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw CorpusError(path.string() + ": cannot open");
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_corpus(buffer.str(), path.string(), path.parent_path());
}

MetricMeans mean_metrics(const std::vector<const EpisodeReport*>& episodes) {
  MetricMeans m;
  m.episodes = episodes.size();
  if (episodes.empty()) {
    return m;
  }
  for (const EpisodeReport* e : episodes) {
    m.recognition += e->recognition;
    m.realization += e->realization;
    m.collision += e->collision;
    m.ttc += e->ttc;
    m.drivable += e->drivable;
    m.speed += e->speed;
    m.direction += e->direction;
    m.progress += e->progress;
    m.interpreter_calls += e->interpreter_calls;
    m.safe_rate += (e->collision == 1 && e->drivable >= 1.0) ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(episodes.size());
  for (double* v : {&m.recognition, &m.realization, &m.collision, &m.ttc, &m.drivable, &m.speed,
                    &m.direction, &m.progress, &m.interpreter_calls, &m.safe_rate}) {
    *v /= n;
  }
  return m;
}

SuiteReport run_suite(const Corpus& corpus, const SuiteConfig& config, ExpertCache& experts) {
  SuiteReport report;
  report.label = config.label.empty() ? config.method.name() : config.label;

  std::map<std::string, world::Scenario> scenarios;
  for (const auto& entry : corpus.entries) {
    if (!scenarios.count(entry.scenario)) {
      world::Scenario sc = world::load_scenario(corpus.base_dir / entry.scenario);
      scenarios.emplace(entry.scenario, std::move(sc));
    }
  }

  std::vector<EpisodeSpec> specs;
  for (const auto& entry : corpus.entries) {
    const std::size_t n =
        std::min(entry.seeds.size(), static_cast<std::size_t>(std::max(0, config.seeds)));
    for (std::size_t i = 0; i < n; ++i) {
      EpisodeSpec spec;
      spec.id = entry.instruction.id;
      spec.category = entry.category;
      spec.scenario = &scenarios.at(entry.scenario);
      spec.instruction = entry.instruction;
      spec.seed = entry.seeds[i] + config.seed_offset;
      spec.horizon = corpus.horizon;
      spec.latency = config.latency;
      specs.push_back(std::move(spec));
    }
  }

  report.episodes.resize(specs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < specs.size(); i = next++) {
      std::unique_ptr<interpreter::Interpreter> interp;
      if (config.make_interpreter) {
        interp = config.make_interpreter();
      }
      EpisodeContext ctx;
      ctx.interpreter = interp.get();
      ctx.experts = &experts;
      ctx.controller = config.controller;
      ctx.count_backend_latency = config.count_backend_latency;
      try {
        report.episodes[i] = run_episode(specs[i], config.method, ctx);
      } catch (const std::exception& e) {
        EpisodeReport& r = report.episodes[i];
        r.id = specs[i].id;
        r.method = config.method.name();
        r.scenario = specs[i].scenario->name;
        r.category = specs[i].category;
        r.seed = specs[i].seed;
        r.latency = specs[i].latency;
        r.termination = "error";
        r.error = e.what();
      }
    }
  };
  const int jobs = std::max(1, config.jobs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) {
      pool.emplace_back(worker);
    }
    for (auto& th : pool) {
      th.join();
    }
  }

  std::vector<const EpisodeReport*> ok;
  std::map<std::string, std::vector<const EpisodeReport*>> by_category;
  for (const EpisodeReport& r : report.episodes) {
    if (r.termination == "error") {
      ++report.failed_episodes;
      continue;
    }
    ok.push_back(&r);
    by_category[r.category].push_back(&r);
  }
  report.means = mean_metrics(ok);
  for (const auto& [cat, list] : by_category) {
    report.by_category[cat] = mean_metrics(list);
  }
  return report;
}

std::string episode_json(const EpisodeReport& r) {
  nlohmann::json j;
  j["id"] = r.id;
  j["method"] = r.method;
  j["scenario"] = r.scenario;
  j["category"] = r.category;
  j["seed"] = r.seed;
  j["latency"] = r.latency;
  j["recognition"] = r.recognition;
  j["recognition_applicable"] = r.recognition_applicable;
  j["realization"] = r.realization;
  j["collision"] = r.collision;
  j["ttc"] = r.ttc;
  j["drivable"] = r.drivable;
  j["speed"] = r.speed;
  j["direction"] = r.direction;
  j["progress"] = r.progress;
  j["interpreter_calls"] = r.interpreter_calls;
  j["stages_total"] = r.stages_total;
  j["stages_completed"] = r.stages_completed;
  j["executor_completed"] = r.executor_completed;
  j["reward_sum"] = r.reward_sum;
  j["intent_failed"] = r.intent_failed;
  j["emergencies"] = r.emergencies;
  j["duration"] = r.duration;
  j["termination"] = r.termination;
  if (!r.error.empty()) {
    j["error"] = r.error;
  }
  nlohmann::json predicted = nlohmann::json::array();
  for (const auto& s : r.predicted) {
    predicted.push_back(interpreter::to_string(s));
  }
  j["predicted"] = predicted;
  j["script"] = r.script_text;
  nlohmann::json events = nlohmann::json::array();
  for (const auto& e : r.events) {
    events.push_back({{"tick", e.tick}, {"kind", std::string(schedule::to_string(e.kind))},
                      {"index", e.stage}});
  }
  j["events"] = events;
  return j.dump();
}

std::string render_summary(const std::vector<const SuiteReport*>& suites) {
  std::ostringstream out;
  char line[256];
  const char* header = "%-28s %5s %6s %6s %6s %6s %6s %6s %6s %6s %8s\n";
  const char* row = "%-28s %5zu %6.3f %6.3f %6.3f %6.3f %6.3f %6.3f %6.3f %6.3f %8.2f\n";
  std::snprintf(line, sizeof(line), header, "method", "n", "REC", "REA", "COL", "TTC", "DRI",
                "SPD", "DIR", "PRO", "calls/ep");
  out << line;
  auto emit = [&](const std::string& name, const MetricMeans& m) {
    std::snprintf(line, sizeof(line), row, name.c_str(), m.episodes, m.recognition, m.realization,
                  m.collision, m.ttc, m.drivable, m.speed, m.direction, m.progress,
                  m.interpreter_calls);
    out << line;
  };
  for (const SuiteReport* s : suites) {
    emit(s->label, s->means);
  }
  if (!suites.empty() && !suites.front()->by_category.empty()) {
    out << "\nby category (" << suites.front()->label << ")\n";
    for (const auto& [cat, m] : suites.front()->by_category) {
      emit("  " + cat, m);
    }
  }
  for (const SuiteReport* s : suites) {
    if (s->failed_episodes > 0) {
      out << "\n" << s->label << ": " << s->failed_episodes << " episode(s) failed\n";
    }
  }
  return out.str();
}

}  // namespace scriptdrive::bench
