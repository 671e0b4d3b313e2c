// SPDX-License-Identifier: Apache-2.0
#include "mozolab/metrics_io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "mozolab/config.hpp"

namespace mozolab {

namespace {

using nlohmann::json;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("metrics: cannot open " + path);
  os << content;
  if (!os) throw std::runtime_error("metrics: write failed for " + path);
}

std::string loss_csv(const std::vector<LossEvent>& events) {
  std::ostringstream os;
  os << "task,epoch,step,loss\n";
  for (const auto& e : events) {
    os << e.task << ',' << e.epoch << ',' << e.step << ',' << fmt_double(e.value) << '\n';
  }
  return os.str();
}

std::string gradvar_csv(const std::vector<GradVarEvent>& events) {
  std::ostringstream os;
  os << "task,step,branch,layer,variance\n";
  for (const auto& e : events) {
    os << e.task << ',' << e.step << ',' << branch_name(e.branch) << ',' << e.layer << ','
       << fmt_double(e.variance) << '\n';
  }
  return os.str();
}

std::string gradvar_norms_csv(const std::vector<GradVarEvent>& events) {
  // Cross-step alternative: variance of the per-step estimate norms, per unit.
  std::map<std::pair<int, int>, std::vector<double>> norms;  // (branch idx, layer)
  for (const auto& e : events) {
    norms[{e.branch == Branch::kVision ? 0 : 1, e.layer}].push_back(e.norm);
  }
  std::ostringstream os;
  os << "branch,layer,variance_of_norms\n";
  for (const auto& [key, values] : norms) {
    os << (key.first == 0 ? "vision" : "language") << ',' << key.second << ','
       << fmt_double(sample_variance(values)) << '\n';
  }
  return os.str();
}

std::string summary_csv(const std::string& policy, const std::string& seed,
                        const RunMetrics& m) {
  std::ostringstream os;
  os << "policy,seed,last,avg,tape_floats,grad_floats,perturb_floats\n";
  os << policy << ',' << seed << ',' << fmt_double(m.last_acc) << ',' << fmt_double(m.avg_acc)
     << ',' << m.memory.tape_floats << ',' << m.memory.grad_floats << ','
     << m.memory.perturb_floats << '\n';
  return os.str();
}

void check_metric_identities(const RunMetrics& m) {
  if (m.per_task_accuracy.empty()) return;
  if (m.last_acc != m.per_task_accuracy.back()) {
    throw std::logic_error("metrics: last_acc does not equal the final task accuracy");
  }
  double sum = 0.0;
  for (double a : m.per_task_accuracy) sum += a;
  if (m.avg_acc != sum / static_cast<double>(m.per_task_accuracy.size())) {
    throw std::logic_error("metrics: avg_acc does not equal the task-accuracy mean");
  }
}

json summary_json(const RunMetrics& m) {
  return json{{"event", "summary"},
              {"last", m.last_acc},
              {"avg", m.avg_acc},
              {"tape_floats", m.memory.tape_floats},
              {"grad_floats", m.memory.grad_floats},
              {"perturb_floats", m.memory.perturb_floats},
              {"observed_tape_peak", m.observed_tape_peak},
              {"backward_calls", m.backward_calls},
              {"partial", m.partial}};
}

}  // namespace

void write_run_outputs(const std::string& dir, const RunConfig& cfg, const RunMetrics& metrics) {
  check_metric_identities(metrics);
  std::filesystem::create_directories(dir);

  write_file(dir + "/effective_config.json", run_config_to_json(cfg) + "\n");

  std::ostringstream jl;
  jl << json{{"schema", 1},
             {"policy", metrics.policy_string},
             {"seed", metrics.seed},
             {"config_digest", metrics.config_digest}}
            .dump()
     << '\n';
  for (const auto& e : metrics.losses) {
    jl << json{{"event", "loss"}, {"task", e.task}, {"epoch", e.epoch}, {"step", e.step},
               {"value", e.value}}
              .dump()
       << '\n';
  }
  for (const auto& e : metrics.grad_vars) {
    jl << json{{"event", "gradvar"}, {"task", e.task}, {"step", e.step},
               {"branch", branch_name(e.branch)}, {"layer", e.layer},
               {"variance", e.variance}, {"norm", e.norm}}
              .dump()
       << '\n';
  }
  for (std::size_t i = 0; i < metrics.per_task_accuracy.size(); ++i) {
    jl << json{{"event", "task_acc"}, {"task", static_cast<int>(i)},
               {"value", metrics.per_task_accuracy[i]}}
              .dump()
       << '\n';
  }
  if (metrics.partial) {
    jl << json{{"event", "aborted"}, {"task", metrics.abort_task}, {"step", metrics.abort_step},
               {"reason", metrics.abort_reason}}
              .dump()
       << '\n';
  }
  jl << summary_json(metrics).dump() << '\n';
  write_file(dir + "/metrics.jsonl", jl.str());

  write_file(dir + "/loss.csv", loss_csv(metrics.losses));
  write_file(dir + "/gradvar.csv", gradvar_csv(metrics.grad_vars));
  write_file(dir + "/gradvar_norms.csv", gradvar_norms_csv(metrics.grad_vars));
  write_file(dir + "/summary.csv",
             summary_csv(metrics.policy_string, std::to_string(metrics.seed), metrics));
}

std::string export_plotdata(const std::string& run_dir, const std::string& kind) {
  const std::string jsonl_path = run_dir + "/metrics.jsonl";
  std::ifstream is(jsonl_path);
  if (!is) throw std::runtime_error("export: missing " + jsonl_path);

  std::string policy = "?";
  std::string seed = "?";
  RunMetrics m;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error("export: bad JSONL line in " + jsonl_path + ": " + e.what());
    }
    if (j.contains("schema")) {
      policy = j.at("policy").get<std::string>();
      seed = std::to_string(j.at("seed").get<std::uint64_t>());
      continue;
    }
    const std::string event = j.at("event").get<std::string>();
    if (event == "loss") {
      m.losses.push_back({j.at("task").get<int>(), j.at("epoch").get<int>(),
                          j.at("step").get<int>(), j.at("value").get<double>()});
    } else if (event == "gradvar") {
      m.grad_vars.push_back({j.at("task").get<int>(), j.at("step").get<int>(),
                             parse_branch(j.at("branch").get<std::string>()),
                             j.at("layer").get<int>(), j.at("variance").get<double>(),
                             j.at("norm").get<double>()});
    } else if (event == "summary") {
      m.last_acc = j.at("last").get<double>();
      m.avg_acc = j.at("avg").get<double>();
      m.memory.tape_floats = j.at("tape_floats").get<std::size_t>();
      m.memory.grad_floats = j.at("grad_floats").get<std::size_t>();
      m.memory.perturb_floats = j.at("perturb_floats").get<std::size_t>();
    }
  }

  std::string path;
  if (kind == "loss") {
    path = run_dir + "/loss.csv";
    write_file(path, loss_csv(m.losses));
  } else if (kind == "gradvar") {
    path = run_dir + "/gradvar.csv";
    write_file(path, gradvar_csv(m.grad_vars));
  } else if (kind == "summary") {
    path = run_dir + "/summary.csv";
    write_file(path, summary_csv(policy, seed, m));
  } else {
    throw std::invalid_argument("export: unknown kind '" + kind +
                                "' (expected loss|gradvar|summary)");
  }
  return path;
}

void write_seed_summary(const std::string& dir, const std::vector<RunMetrics>& runs) {
  if (runs.empty()) return;
  std::filesystem::create_directories(dir);
  std::ostringstream os;
  os << "policy,seed,last,avg,tape_floats,grad_floats,perturb_floats\n";
  for (const RunMetrics& m : runs) {
    os << m.policy_string << ',' << m.seed << ',' << fmt_double(m.last_acc) << ','
       << fmt_double(m.avg_acc) << ',' << m.memory.tape_floats << ',' << m.memory.grad_floats
       << ',' << m.memory.perturb_floats << '\n';
  }
  if (runs.size() >= 2) {
    const SeedAggregate agg = aggregate_seeds(runs);
    os << runs.front().policy_string << ",mean," << fmt_double(agg.last_acc.mean) << ','
       << fmt_double(agg.avg_acc.mean) << ',' << runs.front().memory.tape_floats << ','
       << runs.front().memory.grad_floats << ',' << runs.front().memory.perturb_floats << '\n';
  }
  write_file(dir + "/summary.csv", os.str());
}

}  // namespace mozolab
