#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>
#include <optional>

#include "json.hpp"
#include "sksim/analysis.hpp"
#include "sksim/engine.hpp"
#include "sksim/scenario.hpp"
#include "sksim/trace.hpp"

namespace py = pybind11;
using namespace sksim;

namespace {

py::object json_to_py(const ordered_json& j) {
  switch (j.type()) {
    case ordered_json::value_t::null: return py::none();
    case ordered_json::value_t::boolean: return py::bool_(j.get<bool>());
    case ordered_json::value_t::number_integer: return py::int_(j.get<std::int64_t>());
    case ordered_json::value_t::number_unsigned: return py::int_(j.get<std::uint64_t>());
    case ordered_json::value_t::number_float: return py::float_(j.get<double>());
    case ordered_json::value_t::string: return py::str(j.get<std::string>());
    case ordered_json::value_t::array: {
      py::list out;
      for (const auto& item : j) out.append(json_to_py(item));
      return out;
    }
    case ordered_json::value_t::object: {
      py::dict out;
      for (const auto& [key, val] : j.items()) out[py::str(key)] = json_to_py(val);
      return out;
    }
    default: return py::none();
  }
}

py::dict counters_dict(const Counters& c) {
  py::dict entries, flushes;
  for (const auto& [sb, n] : c.monitor_entries) entries[py::int_(sb)] = n;
  for (const auto& [sb, n] : c.tlb_flushes) flushes[py::int_(sb)] = n;
  py::dict out;
  out["monitor_entries"] = entries;
  out["tlb_flushes"] = flushes;
  out["irqs_delivered"] = c.irqs_delivered;
  out["violations"] = c.violations;
  return out;
}

PageSize page_policy(const std::string& policy) {
  if (policy == "2m" || policy == "2M") return PageSize::k2M;
  if (policy == "4k" || policy == "4K") return PageSize::k4K;
  throw std::invalid_argument("page policy must be '2m' or '4k'");
}

Trace run_with_overrides(const Scenario& s, std::optional<std::int64_t> until_us,
                         std::optional<std::uint64_t> seed) {
  Scenario copy = s;
  if (until_us) copy.run.until = usec(*until_us);
  if (seed) copy.run.seed = *seed;
  return run_scenario(copy);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Deterministic simulation of a statically partitioned separation kernel: "
            "two-stage address translation, mediated I/O partitioning, per-sandbox "
            "monitors, and sporadic-server scheduling.";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<EngineError>(m, "EngineError", PyExc_RuntimeError);

  py::class_<Scenario>(m, "Scenario")
      .def_property_readonly("name", [](const Scenario& s) { return s.name; })
      .def_property_readonly("until_us", [](const Scenario& s) { return s.run.until / 1000; })
      .def_property_readonly("seed", [](const Scenario& s) { return s.run.seed; })
      .def_property_readonly("sandboxes",
                             [](const Scenario& s) {
                               py::list ids;
                               for (const auto& sb : s.sandboxes) ids.append(sb.id);
                               return ids;
                             })
      .def("__repr__", [](const Scenario& s) {
        return "<Scenario '" + s.name + "': " + std::to_string(s.sandboxes.size()) +
               " sandboxes, " + std::to_string(s.platform.pcpu_count) + " pcpus>";
      });

  py::class_<Trace>(m, "Trace")
      .def_property_readonly("counters", [](const Trace& t) { return counters_dict(t.counters); })
      .def_property_readonly("num_records",
                             [](const Trace& t) { return t.records().size(); })
      .def_property_readonly("until_ns", [](const Trace& t) { return t.meta.until; })
      .def_property_readonly("seed", [](const Trace& t) { return t.meta.seed; })
      .def_property_readonly("warnings", [](const Trace& t) { return t.meta.warnings; })
      .def_property_readonly("isolation",
                             [](const Trace& t) {
                               return json_to_py(to_json(isolation_audit(t)));
                             })
      .def("to_json", [](const Trace& t) { return export_json(t); })
      .def("save_json",
           [](const Trace& t, const std::string& path) {
             std::ofstream out(path, std::ios::binary);
             if (!out) throw std::runtime_error("cannot write " + path);
             out << export_json(t);
           })
      .def("save_csv",
           [](const Trace& t, const std::string& prefix) { return export_csv(t, prefix); })
      .def("__repr__", [](const Trace& t) {
        return "<Trace: " + std::to_string(t.records().size()) + " records over " +
               std::to_string(t.meta.until / 1000) + "us>";
      });

  m.def("load_scenario", &load_scenario_file, py::arg("path"),
        "Parse and validate a scenario file.");
  m.def("scenario_from_json", &load_scenario, py::arg("text"),
        "Parse and validate a scenario document from a JSON string.");
  m.def("run", &run_with_overrides, py::arg("scenario"), py::arg("until_us") = py::none(),
        py::arg("seed") = py::none(),
        "Run a scenario to completion and return its trace.");
  m.def("load_trace",
        [](const std::string& path) {
          std::ifstream in(path, std::ios::binary);
          if (!in) throw ParseError("cannot open trace file: " + path);
          std::stringstream ss;
          ss << in.rdbuf();
          return import_json(ss.str());
        },
        py::arg("path"), "Load a previously exported JSON trace.");
  m.def("trace_from_json", &import_json, py::arg("text"));

  m.def("admission_report",
        [](const Scenario& s) { return json_to_py(to_json(admission_audit(s))); },
        py::arg("scenario"), "Liu-Layland admission test per pcpu.");
  m.def("window_report",
        [](const Trace& t) { return json_to_py(to_json(window_audit(t))); },
        py::arg("trace"), "Sliding-window budget bound for every vcpu in the trace.");
  m.def("trap_report", [](const Trace& t) { return json_to_py(to_json(trap_audit(t))); },
        py::arg("trace"));
  m.def("pci_report", [](const Trace& t) { return json_to_py(to_json(pci_audit(t))); },
        py::arg("trace"));
  m.def("isolation_report",
        [](const Trace& t) { return json_to_py(to_json(isolation_audit(t))); },
        py::arg("trace"));

  m.def("ept_footprint",
        [](std::uint64_t memory_bytes, const std::string& policy) {
          return ept_footprint(memory_bytes, page_policy(policy));
        },
        py::arg("memory_bytes"), py::arg("policy") = "2m",
        "Bytes of second-stage structure pages needed to map the range.");
  m.def("pci_decode",
        [](std::uint32_t word) -> py::object {
          auto t = pci_decode(word);
          if (!t) return py::none();
          py::dict out;
          out["bus"] = t->bus;
          out["dev"] = t->dev;
          out["func"] = t->func;
          out["offset"] = t->offset;
          return out;
        },
        py::arg("address_word"), "Decode a config-address word; None when not enabled.");
  m.def("liu_layland_bound", &liu_layland_bound, py::arg("n"));
  m.def("admission_check",
        [](const std::vector<std::pair<std::int64_t, std::int64_t>>& existing_us,
           std::pair<std::int64_t, std::int64_t> candidate_us) {
          std::vector<VcpuParams> existing;
          for (const auto& [c, t] : existing_us) existing.push_back({usec(c), usec(t)});
          const auto r = admission_check(existing, {usec(candidate_us.first),
                                                    usec(candidate_us.second)});
          py::dict out;
          out["n"] = r.n;
          out["utilization"] = r.total_utilization;
          out["bound"] = r.bound;
          out["admitted"] = r.admitted;
          return out;
        },
        py::arg("existing_us"), py::arg("candidate_us"),
        "Incremental admission of (budget_us, period_us) pairs on one pcpu.");
}
