#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "sksim/analysis.hpp"
#include "sksim/engine.hpp"
#include "sksim/scenario.hpp"
#include "sksim/trace.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitInput = 3;

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

void print_counters(const sksim::Counters& c) {
  for (const auto& [sb, n] : c.monitor_entries)
    std::cout << "  sandbox " << sb << ": monitor entries " << n << ", tlb flushes "
              << c.tlb_flushes.at(sb) << "\n";
  std::cout << "  interrupts delivered: " << c.irqs_delivered << "\n";
  std::cout << "  violations logged:    " << c.violations << "\n";
}

int run_validate(const std::string& scenario_path) {
  const sksim::Scenario s = sksim::load_scenario_file(scenario_path);
  std::cout << "ok: " << (s.name.empty() ? scenario_path : s.name) << " ("
            << s.sandboxes.size() << " sandboxes, " << s.platform.pcpu_count << " pcpus)\n";
  return kExitOk;
}

int run_simulate(const std::string& scenario_path, std::int64_t until_us, std::int64_t seed,
                 const std::string& out_path, const std::string& format,
                 const std::string& violations_path) {
  sksim::Scenario s = sksim::load_scenario_file(scenario_path);
  if (until_us >= 0) s.run.until = sksim::usec(until_us);
  if (seed >= 0) s.run.seed = static_cast<std::uint64_t>(seed);

  const sksim::Trace trace = sksim::run_scenario(s);

  if (!out_path.empty()) {
    if (format == "json") {
      write_file(out_path, sksim::export_json(trace));
      std::cout << "trace written to " << out_path << "\n";
    } else {
      const std::string prefix = out_path.size() > 4 && out_path.ends_with(".csv")
                                     ? out_path.substr(0, out_path.size() - 4)
                                     : out_path;
      for (const std::string& p : sksim::export_csv(trace, prefix))
        std::cout << "trace written to " << p << "\n";
    }
  }
  if (!violations_path.empty()) {
    write_file(violations_path, sksim::violations_jsonl(trace));
    std::cout << "violation log written to " << violations_path << "\n";
  }

  std::cout << "simulated " << trace.meta.until / 1000 << "us, " << trace.records().size()
            << " records\n";
  print_counters(trace.counters);
  return kExitOk;
}

int run_analyze(const std::string& scenario_path, const std::string& trace_path,
                std::vector<std::string> checks, const std::string& out_path) {
  if (checks.empty()) checks = {"admission", "windows", "isolation", "traps", "pci"};

  std::optional<sksim::Scenario> scenario;
  if (!scenario_path.empty()) scenario = sksim::load_scenario_file(scenario_path);

  std::optional<sksim::Trace> trace;
  if (!trace_path.empty()) {
    std::ifstream in(trace_path, std::ios::binary);
    if (!in) throw sksim::ParseError("cannot open trace file: " + trace_path);
    std::stringstream ss;
    ss << in.rdbuf();
    trace = sksim::import_json(ss.str());
  } else if (scenario) {
    trace = sksim::run_scenario(*scenario);
  }

  bool all_pass = true;
  nlohmann::ordered_json report = nlohmann::ordered_json::array();

  for (const std::string& check : checks) {
    if (check == "admission") {
      if (!scenario) throw sksim::ParseError("the admission check needs --scenario");
      const auto audit = sksim::admission_audit(*scenario);
      report.push_back(sksim::to_json(audit));
      for (const auto& p : audit.pcpus)
        std::cout << "admission: pcpu " << p.pcpu << " (sandbox " << p.sandbox << "): "
                  << p.n << " vcpus, utilization " << p.total_utilization << " vs bound "
                  << p.bound << (p.admitted ? " -> admitted" : " -> REJECTED") << "\n";
      all_pass = all_pass && audit.pass;
    } else if (check == "windows") {
      if (!trace) throw sksim::ParseError("the windows check needs --trace or --scenario");
      const auto audit = sksim::window_audit(*trace);
      report.push_back(sksim::to_json(audit));
      for (const auto& e : audit.entries)
        std::cout << "windows: sandbox " << e.sandbox << " vcpu " << e.vcpu << ": worst "
                  << e.result.worst_window_sum / 1000 << "us of " << e.budget / 1000
                  << "us budget per " << e.period / 1000 << "us -> "
                  << (e.result.pass ? "pass" : "FAIL") << "\n";
      all_pass = all_pass && audit.pass;
    } else if (check == "isolation") {
      if (!trace) throw sksim::ParseError("the isolation check needs --trace or --scenario");
      const auto audit = sksim::isolation_audit(*trace);
      report.push_back(sksim::to_json(audit));
      std::cout << "isolation: " << audit.summary.faults_contained << "/"
                << audit.summary.faults_injected << " faults contained, "
                << audit.summary.escapes << " escapes -> " << (audit.pass ? "pass" : "FAIL")
                << "\n";
      for (const std::string& d : audit.summary.details) std::cout << "  " << d << "\n";
      all_pass = all_pass && audit.pass;
    } else if (check == "traps") {
      if (!trace) throw sksim::ParseError("the traps check needs --trace or --scenario");
      const auto audit = sksim::trap_audit(*trace);
      report.push_back(sksim::to_json(audit));
      std::cout << "monitor traps after t=0: " << audit.total_after_start << "\n";
      for (const auto& [sb, n] : audit.traps_after_start)
        std::cout << "  sandbox " << sb << ": " << n << "\n";
      std::cout << "traps: counters " << (audit.counters_consistent ? "consistent" : "DIVERGED")
                << " -> " << (audit.pass ? "pass" : "FAIL") << "\n";
      all_pass = all_pass && audit.pass;
    } else if (check == "pci") {
      if (!trace) throw sksim::ParseError("the pci check needs --trace or --scenario");
      const auto audit = sksim::pci_audit(*trace);
      report.push_back(sksim::to_json(audit));
      std::cout << "pci: " << audit.allowed << " allowed, " << audit.completed
                << " single-stepped, " << audit.debug_traps << " re-masks, "
                << audit.denied_blacklist << " blacklist denials -> "
                << (audit.pass ? "pass" : "FAIL") << "\n";
      all_pass = all_pass && audit.pass;
    } else {
      std::cerr << "unknown check: " << check << "\n";
      return kExitUsage;
    }
  }

  if (!out_path.empty()) write_file(out_path, report.dump(2) + "\n");
  std::cout << (all_pass ? "all checks passed" : "CHECKS FAILED") << "\n";
  return all_pass ? kExitOk : kExitCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"separation-kernel partitioning simulator"};
  app.require_subcommand(1);

  std::string scenario_path, trace_path, out_path, violations_path;
  std::string format = "json";
  std::int64_t until_us = -1, seed = -1;
  std::vector<std::string> checks;

  auto* validate = app.add_subcommand("validate", "parse and validate a scenario file");
  validate->add_option("--scenario", scenario_path, "scenario JSON path")->required();

  auto* simulate = app.add_subcommand("simulate", "run a scenario and export the trace");
  simulate->add_option("--scenario", scenario_path, "scenario JSON path")->required();
  simulate->add_option("--until", until_us, "override run.until_us");
  simulate->add_option("--seed", seed, "override run.seed");
  simulate->add_option("--out", out_path, "trace output path");
  simulate->add_option("--format", format, "json or csv")
      ->check(CLI::IsMember({"json", "csv"}));
  simulate->add_option("--violations", violations_path, "violation log (JSON lines) path");

  auto* analyze = app.add_subcommand("analyze", "run checks over a scenario or trace");
  analyze->add_option("--scenario", scenario_path, "scenario JSON path");
  analyze->add_option("--trace", trace_path, "trace JSON path");
  analyze->add_option("--checks", checks, "subset of admission,windows,isolation,traps,pci")
      ->delimiter(',');
  analyze->add_option("--out", out_path, "machine-readable report path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (app.got_subcommand(validate)) return run_validate(scenario_path);
    if (app.got_subcommand(simulate))
      return run_simulate(scenario_path, until_us, seed, out_path, format, violations_path);
    if (app.got_subcommand(analyze)) {
      if (scenario_path.empty() && trace_path.empty()) {
        std::cerr << "analyze needs --scenario or --trace\n";
        return kExitUsage;
      }
      return run_analyze(scenario_path, trace_path, checks, out_path);
    }
  } catch (const sksim::ValidationError& e) {
    std::cerr << "invalid scenario: " << e.what() << "\n";
    return kExitInput;
  } catch (const sksim::ParseError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const sksim::EngineError& e) {
    std::cerr << "engine error: " << e.what() << "\n";
    return kExitCheckFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }
  return kExitUsage;
}
