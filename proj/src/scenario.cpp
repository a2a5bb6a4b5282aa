#include "sksim/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace sksim {

using json = nlohmann::json;

const SandboxSpec* Scenario::find_sandbox(SandboxId id) const {
  for (const auto& s : sandboxes)
    if (s.id == id) return &s;
  return nullptr;
}

const DeviceSpec* Scenario::find_device(const std::string& name) const {
  for (const auto& d : platform.devices)
    if (d.name == name) return &d;
  return nullptr;
}

SandboxId Scenario::device_owner(const std::string& name) const {
  for (const auto& s : sandboxes)
    for (const auto& d : s.devices)
      if (d == name) return s.id;
  return -1;
}

namespace {

void check_keys(const json& j, const std::string& path,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ValidationError(path, "expected an object");
  for (const auto& [key, val] : j.items()) {
    (void)val;
    if (std::find_if(allowed.begin(), allowed.end(),
                     [&](const char* a) { return key == a; }) == allowed.end())
      throw ValidationError(path + "." + key, "unknown field");
  }
}

const json& require(const json& j, const std::string& path, const char* key) {
  if (!j.contains(key)) throw ValidationError(path + "." + key, "missing field");
  return j.at(key);
}

std::int64_t get_int(const json& j, const std::string& path, const char* key,
                     std::int64_t lo, std::int64_t hi) {
  const json& v = require(j, path, key);
  if (!v.is_number_integer())
    throw ValidationError(path + "." + key, "expected an integer");
  const std::int64_t n = v.get<std::int64_t>();
  if (n < lo || n > hi)
    throw ValidationError(path + "." + key, "value " + std::to_string(n) + " out of range [" +
                                                std::to_string(lo) + ", " + std::to_string(hi) +
                                                "]");
  return n;
}

std::int64_t get_int_or(const json& j, const std::string& path, const char* key,
                        std::int64_t fallback, std::int64_t lo, std::int64_t hi) {
  if (!j.contains(key)) return fallback;
  return get_int(j, path, key, lo, hi);
}

// Integer microseconds -> nanoseconds.
Time get_time_us(const json& j, const std::string& path, const char* key, Time lo_us,
                 Time hi_us = std::int64_t(1) << 40) {
  return usec(get_int(j, path, key, lo_us, hi_us));
}

// Cost knobs may be fractional microseconds as long as they land on a whole
// nanosecond.
Time get_cost_us(const json& j, const std::string& path, const char* key, Time fallback_ns) {
  if (!j.contains(key)) return fallback_ns;
  const json& v = j.at(key);
  if (!v.is_number()) throw ValidationError(path + "." + key, "expected a number");
  const double ns = v.get<double>() * 1000.0;
  const double rounded = std::round(ns);
  if (ns < 0 || std::abs(ns - rounded) > 1e-6)
    throw ValidationError(path + "." + key,
                          "must be a non-negative multiple of 0.001 microseconds");
  return static_cast<Time>(rounded);
}

std::string get_string(const json& j, const std::string& path, const char* key) {
  const json& v = require(j, path, key);
  if (!v.is_string()) throw ValidationError(path + "." + key, "expected a string");
  return v.get<std::string>();
}

Permissions get_perms(const json& j, const std::string& path, const char* key) {
  const std::string s = get_string(j, path, key);
  try {
    return permissions_from_string(s);
  } catch (const std::invalid_argument&) {
    throw ValidationError(path + "." + key, "expected a permission string like \"rw\"");
  }
}

DeviceSpec parse_device(const json& j, const std::string& path) {
  check_keys(j, path,
             {"name", "vendor_id", "device_id", "bus", "dev", "func", "irq", "ports",
              "mmio_kb"});
  DeviceSpec d;
  d.name = get_string(j, path, "name");
  d.vendor_id = static_cast<std::uint16_t>(get_int(j, path, "vendor_id", 0, 0xFFFF));
  d.device_id = static_cast<std::uint16_t>(get_int(j, path, "device_id", 0, 0xFFFF));
  d.bus = static_cast<std::uint8_t>(get_int_or(j, path, "bus", 0, 0, 255));
  d.dev = static_cast<std::uint8_t>(get_int_or(j, path, "dev", 0, 0, 31));
  d.func = static_cast<std::uint8_t>(get_int_or(j, path, "func", 0, 0, 7));
  d.irq = static_cast<int>(get_int(j, path, "irq", 0, 23));
  if (j.contains("ports")) {
    const json& ports = j.at("ports");
    if (!ports.is_array()) throw ValidationError(path + ".ports", "expected an array");
    for (std::size_t i = 0; i < ports.size(); ++i) {
      const json& pr = ports[i];
      const std::string ppath = path + ".ports[" + std::to_string(i) + "]";
      if (!pr.is_array() || pr.size() != 2 || !pr[0].is_number_integer() ||
          !pr[1].is_number_integer())
        throw ValidationError(ppath, "expected [lo, hi]");
      const std::int64_t lo = pr[0].get<std::int64_t>(), hi = pr[1].get<std::int64_t>();
      if (lo < 0 || hi > 0xFFFF || lo > hi)
        throw ValidationError(ppath, "port range out of order or out of bounds");
      d.ports.push_back({static_cast<std::uint16_t>(lo), static_cast<std::uint16_t>(hi)});
    }
  }
  d.mmio_bytes = static_cast<std::uint64_t>(get_int_or(j, path, "mmio_kb", 0, 0, 1 << 20)) << 10;
  return d;
}

DemandSpec parse_demand(const json& j, const std::string& path) {
  DemandSpec d;
  const std::string kind = get_string(j, path, "kind");
  if (kind == "periodic") {
    check_keys(j, path, {"kind", "start_us", "period_us", "compute_us", "count"});
    d.kind = DemandSpec::Kind::Periodic;
    d.start = get_time_us(j, path, "start_us", 0);
    d.period = get_time_us(j, path, "period_us", 1);
    d.compute = get_time_us(j, path, "compute_us", 1);
    d.count = static_cast<int>(get_int_or(j, path, "count", -1, 1, 1 << 30));
  } else if (kind == "list") {
    check_keys(j, path, {"kind", "jobs"});
    d.kind = DemandSpec::Kind::List;
    const json& jobs = require(j, path, "jobs");
    if (!jobs.is_array() || jobs.empty())
      throw ValidationError(path + ".jobs", "expected a non-empty array");
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      const std::string jpath = path + ".jobs[" + std::to_string(i) + "]";
      check_keys(jobs[i], jpath, {"arrival_us", "compute_us"});
      d.jobs.emplace_back(get_time_us(jobs[i], jpath, "arrival_us", 0),
                          get_time_us(jobs[i], jpath, "compute_us", 1));
    }
    if (!std::is_sorted(d.jobs.begin(), d.jobs.end(),
                        [](const auto& a, const auto& b) { return a.first < b.first; }))
      throw ValidationError(path + ".jobs", "arrivals must be non-decreasing");
  } else if (kind == "busy") {
    check_keys(j, path, {"kind"});
    d.kind = DemandSpec::Kind::Busy;
  } else {
    throw ValidationError(path + ".kind", "expected periodic, list, or busy");
  }
  return d;
}

SandboxSpec parse_sandbox(const json& j, const std::string& path) {
  check_keys(j, path,
             {"id", "pcpus", "mem_mb", "devices", "ioapic_authorization", "vcpus", "threads"});
  SandboxSpec s;
  s.id = static_cast<SandboxId>(get_int(j, path, "id", 1, 1 << 20));
  const json& pcpus = require(j, path, "pcpus");
  if (!pcpus.is_array() || pcpus.empty())
    throw ValidationError(path + ".pcpus", "expected a non-empty array");
  for (const json& p : pcpus) {
    if (!p.is_number_integer() || p.get<int>() < 0)
      throw ValidationError(path + ".pcpus", "expected non-negative integers");
    s.pcpus.push_back(p.get<int>());
  }
  s.mem_bytes = static_cast<std::uint64_t>(get_int(j, path, "mem_mb", 2, 1 << 20)) << 20;
  if (j.contains("devices")) {
    const json& devs = j.at("devices");
    if (!devs.is_array()) throw ValidationError(path + ".devices", "expected an array");
    for (const json& d : devs) {
      if (!d.is_string()) throw ValidationError(path + ".devices", "expected device names");
      s.devices.push_back(d.get<std::string>());
    }
  }
  if (j.contains("ioapic_authorization")) {
    const json& auth = j.at("ioapic_authorization");
    if (!auth.is_array())
      throw ValidationError(path + ".ioapic_authorization", "expected an array");
    std::vector<int> lines;
    for (const json& l : auth) {
      if (!l.is_number_integer())
        throw ValidationError(path + ".ioapic_authorization", "expected irq numbers");
      lines.push_back(l.get<int>());
    }
    s.ioapic_authorization = lines;
  }
  if (j.contains("vcpus")) {
    const json& vcpus = j.at("vcpus");
    if (!vcpus.is_array()) throw ValidationError(path + ".vcpus", "expected an array");
    for (std::size_t i = 0; i < vcpus.size(); ++i) {
      const std::string vpath = path + ".vcpus[" + std::to_string(i) + "]";
      check_keys(vcpus[i], vpath, {"id", "flavor", "budget_us", "period_us", "pcpu", "irqs"});
      VcpuSpec v;
      v.id = static_cast<VcpuId>(get_int(vcpus[i], vpath, "id", 0, 1 << 20));
      const std::string flavor = get_string(vcpus[i], vpath, "flavor");
      if (flavor == "main")
        v.flavor = VcpuFlavor::Main;
      else if (flavor == "io")
        v.flavor = VcpuFlavor::Io;
      else
        throw ValidationError(vpath + ".flavor", "expected main or io");
      v.budget = get_time_us(vcpus[i], vpath, "budget_us", 1);
      v.period = get_time_us(vcpus[i], vpath, "period_us", 1);
      v.pcpu = static_cast<PcpuId>(get_int(vcpus[i], vpath, "pcpu", 0, 1 << 20));
      if (vcpus[i].contains("irqs")) {
        const json& irqs = vcpus[i].at("irqs");
        if (!irqs.is_array()) throw ValidationError(vpath + ".irqs", "expected an array");
        for (const json& l : irqs) {
          if (!l.is_number_integer())
            throw ValidationError(vpath + ".irqs", "expected irq numbers");
          v.irqs.push_back(l.get<int>());
        }
      }
      s.vcpus.push_back(std::move(v));
    }
  }
  if (j.contains("threads")) {
    const json& threads = j.at("threads");
    if (!threads.is_array()) throw ValidationError(path + ".threads", "expected an array");
    for (std::size_t i = 0; i < threads.size(); ++i) {
      const std::string tpath = path + ".threads[" + std::to_string(i) + "]";
      check_keys(threads[i], tpath, {"id", "vcpu", "demand"});
      ThreadSpec t;
      t.id = static_cast<int>(get_int(threads[i], tpath, "id", 0, 1 << 20));
      t.vcpu = static_cast<VcpuId>(get_int(threads[i], tpath, "vcpu", 0, 1 << 20));
      t.demand = parse_demand(require(threads[i], tpath, "demand"), tpath + ".demand");
      s.threads.push_back(std::move(t));
    }
  }
  return s;
}

FaultSpec parse_fault(const json& j, const std::string& path, const Scenario& scenario) {
  check_keys(j, path, {"time_us", "sandbox", "kind", "target"});
  FaultSpec f;
  f.time = get_time_us(j, path, "time_us", 0);
  f.sandbox = static_cast<SandboxId>(get_int(j, path, "sandbox", 1, 1 << 20));
  const std::string kind = get_string(j, path, "kind");
  const json& target = require(j, path, "target");
  const std::string tpath = path + ".target";

  if (kind == "rogue_read" || kind == "rogue_write") {
    f.kind = kind == "rogue_read" ? FaultSpec::Kind::RogueRead : FaultSpec::Kind::RogueWrite;
    check_keys(target, tpath, {"victim", "offset", "gpa"});
    if (target.contains("victim") == target.contains("gpa"))
      throw ValidationError(tpath, "expected exactly one of victim or gpa");
    if (target.contains("victim")) {
      f.victim = static_cast<SandboxId>(get_int(target, tpath, "victim", 1, 1 << 20));
      f.victim_offset =
          static_cast<std::uint64_t>(get_int_or(target, tpath, "offset", 0, 0, INT64_MAX));
    } else {
      f.gpa = static_cast<std::uint64_t>(get_int(target, tpath, "gpa", 0, INT64_MAX));
    }
  } else if (kind == "pci_probe") {
    f.kind = FaultSpec::Kind::PciProbe;
    check_keys(target, tpath, {"device", "bus", "dev", "func", "offset", "dir", "width", "value"});
    const bool by_name = target.contains("device");
    const bool by_bdf = target.contains("bus") || target.contains("dev") || target.contains("func");
    if (by_name == by_bdf)
      throw ValidationError(tpath, "expected either device or bus/dev/func");
    if (by_name) {
      f.device = get_string(target, tpath, "device");
    } else {
      PciConfigTarget bdf;
      bdf.bus = static_cast<std::uint8_t>(get_int_or(target, tpath, "bus", 0, 0, 255));
      bdf.dev = static_cast<std::uint8_t>(get_int_or(target, tpath, "dev", 0, 0, 31));
      bdf.func = static_cast<std::uint8_t>(get_int_or(target, tpath, "func", 0, 0, 7));
      f.bdf = bdf;
    }
    f.pci_offset = static_cast<std::uint8_t>(get_int_or(target, tpath, "offset", 0, 0, 255));
    if (target.contains("dir")) {
      const std::string dir = get_string(target, tpath, "dir");
      if (dir == "in")
        f.dir = Direction::In;
      else if (dir == "out")
        f.dir = Direction::Out;
      else
        throw ValidationError(tpath + ".dir", "expected in or out");
    }
    f.width = static_cast<int>(get_int_or(target, tpath, "width", 4, 1, 4));
    if (f.width == 3) throw ValidationError(tpath + ".width", "expected 1, 2, or 4");
    if (f.pci_offset % 4 + f.width > 4)
      throw ValidationError(tpath + ".offset", "access crosses a dword boundary");
    f.value = static_cast<std::uint32_t>(get_int_or(target, tpath, "value", 0, 0, 0xFFFFFFFFll));
  } else if (kind == "ioapic_hijack") {
    f.kind = FaultSpec::Kind::IoapicHijack;
    check_keys(target, tpath, {"entry", "irq", "destinations", "masked"});
    f.entry_index = static_cast<int>(get_int(target, tpath, "entry", 0, 255));
    f.entry.irq_line = static_cast<int>(get_int(target, tpath, "irq", 0, 23));
    const json& dests = require(target, tpath, "destinations");
    if (!dests.is_array()) throw ValidationError(tpath + ".destinations", "expected an array");
    for (const json& d : dests) {
      if (!d.is_number_integer())
        throw ValidationError(tpath + ".destinations", "expected sandbox ids");
      f.entry.destinations.insert(d.get<int>());
    }
    if (target.contains("masked")) {
      if (!target.at("masked").is_boolean())
        throw ValidationError(tpath + ".masked", "expected a boolean");
      f.entry.masked = target.at("masked").get<bool>();
    }
  } else {
    throw ValidationError(path + ".kind",
                          "expected rogue_read, rogue_write, pci_probe, or ioapic_hijack");
  }
  (void)scenario;
  return f;
}

}  // namespace

Scenario load_scenario(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("scenario is not valid JSON: ") + e.what());
  }

  Scenario s;
  check_keys(j, "$", {"name", "platform", "sandboxes", "channels", "workload", "faults",
                      "costs", "run"});
  if (j.contains("name")) s.name = get_string(j, "$", "name");

  const json& platform = require(j, "$", "platform");
  check_keys(platform, "platform",
             {"pcpu_count", "ram_mb", "channel_pool_mb", "monitor_reservation_kb", "devices"});
  s.platform.pcpu_count = static_cast<int>(get_int(platform, "platform", "pcpu_count", 1, 4096));
  s.platform.ram_bytes =
      static_cast<std::uint64_t>(get_int(platform, "platform", "ram_mb", 1, 1 << 24)) << 20;
  s.platform.channel_pool_bytes =
      static_cast<std::uint64_t>(get_int_or(platform, "platform", "channel_pool_mb", 16, 0, 4096))
      << 20;
  s.platform.monitor_reservation_bytes =
      static_cast<std::uint64_t>(
          get_int_or(platform, "platform", "monitor_reservation_kb", 64, 0, 1 << 20))
      << 10;
  if (platform.contains("devices")) {
    const json& devices = platform.at("devices");
    if (!devices.is_array()) throw ValidationError("platform.devices", "expected an array");
    for (std::size_t i = 0; i < devices.size(); ++i)
      s.platform.devices.push_back(
          parse_device(devices[i], "platform.devices[" + std::to_string(i) + "]"));
  }

  const json& sandboxes = require(j, "$", "sandboxes");
  if (!sandboxes.is_array() || sandboxes.empty())
    throw ValidationError("sandboxes", "expected a non-empty array");
  for (std::size_t i = 0; i < sandboxes.size(); ++i)
    s.sandboxes.push_back(parse_sandbox(sandboxes[i], "sandboxes[" + std::to_string(i) + "]"));

  if (j.contains("channels")) {
    const json& channels = j.at("channels");
    if (!channels.is_array()) throw ValidationError("channels", "expected an array");
    for (std::size_t i = 0; i < channels.size(); ++i) {
      const std::string cpath = "channels[" + std::to_string(i) + "]";
      const json& cj = channels[i];
      check_keys(cj, cpath, {"time_us", "a", "b", "pages", "perms_a", "perms_b"});
      ChannelSpec c;
      c.time = usec(get_int(cj, cpath, "time_us", -(std::int64_t(1) << 40), std::int64_t(1) << 40));
      c.a = static_cast<SandboxId>(get_int(cj, cpath, "a", 1, 1 << 20));
      c.b = static_cast<SandboxId>(get_int(cj, cpath, "b", 1, 1 << 20));
      c.pages = static_cast<std::uint64_t>(get_int_or(cj, cpath, "pages", 1, 1, 1 << 20));
      if (cj.contains("perms_a")) c.perms_a = get_perms(cj, cpath, "perms_a");
      if (cj.contains("perms_b")) c.perms_b = get_perms(cj, cpath, "perms_b");
      s.channels.push_back(c);
    }
  }

  if (j.contains("workload")) {
    const json& workload = j.at("workload");
    check_keys(workload, "workload", {"interrupts"});
    if (workload.contains("interrupts")) {
      const json& gens = workload.at("interrupts");
      if (!gens.is_array()) throw ValidationError("workload.interrupts", "expected an array");
      for (std::size_t i = 0; i < gens.size(); ++i) {
        const std::string gpath = "workload.interrupts[" + std::to_string(i) + "]";
        const json& gj = gens[i];
        check_keys(gj, gpath,
                   {"device", "kind", "start_us", "period_us", "mean_us", "handler_us", "count"});
        InterruptGenSpec g;
        g.device = get_string(gj, gpath, "device");
        const std::string kind = get_string(gj, gpath, "kind");
        if (kind == "periodic") {
          g.kind = InterruptGenSpec::Kind::Periodic;
          g.period = get_time_us(gj, gpath, "period_us", 1);
          if (gj.contains("mean_us"))
            throw ValidationError(gpath + ".mean_us", "not valid for periodic generators");
        } else if (kind == "poisson") {
          g.kind = InterruptGenSpec::Kind::Poisson;
          g.mean = get_time_us(gj, gpath, "mean_us", 1);
          if (gj.contains("period_us"))
            throw ValidationError(gpath + ".period_us", "not valid for poisson generators");
        } else {
          throw ValidationError(gpath + ".kind", "expected periodic or poisson");
        }
        g.start = usec(get_int_or(gj, gpath, "start_us", 0, 0, std::int64_t(1) << 40));
        g.handler = get_time_us(gj, gpath, "handler_us", 1);
        g.count = static_cast<int>(get_int_or(gj, gpath, "count", -1, 1, 1 << 30));
        s.interrupts.push_back(std::move(g));
      }
    }
  }

  if (j.contains("faults")) {
    const json& faults = j.at("faults");
    if (!faults.is_array()) throw ValidationError("faults", "expected an array");
    for (std::size_t i = 0; i < faults.size(); ++i)
      s.faults.push_back(parse_fault(faults[i], "faults[" + std::to_string(i) + "]", s));
  }

  if (j.contains("costs")) {
    const json& costs = j.at("costs");
    check_keys(costs, "costs", {"trap_us", "tlb_flush_us"});
    s.costs.trap = get_cost_us(costs, "costs", "trap_us", s.costs.trap);
    s.costs.tlb_flush = get_cost_us(costs, "costs", "tlb_flush_us", s.costs.tlb_flush);
  }

  const json& run = require(j, "$", "run");
  check_keys(run, "run", {"until_us", "seed", "replenishment_policy"});
  s.run.until = get_time_us(run, "run", "until_us", 0);
  s.run.seed = static_cast<std::uint64_t>(get_int_or(run, "run", "seed", 0, 0, INT64_MAX));
  if (run.contains("replenishment_policy")) {
    const std::string p = get_string(run, "run", "replenishment_policy");
    if (p == "chunked")
      s.run.policy = ReplenishPolicy::Chunked;
    else if (p == "single_deferred")
      s.run.policy = ReplenishPolicy::SingleDeferred;
    else
      throw ValidationError("run.replenishment_policy", "expected chunked or single_deferred");
  }

  validate_scenario(s);
  return s;
}

Scenario load_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open scenario file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return load_scenario(ss.str());
}

void validate_scenario(const Scenario& s) {
  // Platform devices.
  std::set<std::string> device_names;
  std::set<std::tuple<int, int, int>> bdfs;
  std::vector<std::pair<PortRange, std::string>> all_ports;
  for (std::size_t i = 0; i < s.platform.devices.size(); ++i) {
    const DeviceSpec& d = s.platform.devices[i];
    const std::string path = "platform.devices[" + std::to_string(i) + "]";
    if (!device_names.insert(d.name).second)
      throw ValidationError(path + ".name", "duplicate device name " + d.name);
    if (!bdfs.insert({d.bus, d.dev, d.func}).second)
      throw ValidationError(path, "duplicate bus/dev/func");
    for (const PortRange& r : d.ports) {
      for (const auto& [other, owner] : all_ports)
        if (r.lo <= other.hi && other.lo <= r.hi)
          throw ValidationError(path + ".ports",
                                "port range overlaps device " + owner);
      all_ports.push_back({r, d.name});
    }
  }

  // Sandboxes: disjoint PCPUs, exclusive devices, memory budget.
  std::set<SandboxId> ids;
  std::set<PcpuId> used_pcpus;
  std::set<std::string> assigned_devices;
  std::uint64_t total_mem = 0;
  for (std::size_t i = 0; i < s.sandboxes.size(); ++i) {
    const SandboxSpec& sb = s.sandboxes[i];
    const std::string path = "sandboxes[" + std::to_string(i) + "]";
    if (!ids.insert(sb.id).second)
      throw ValidationError(path + ".id", "duplicate sandbox id");
    for (PcpuId p : sb.pcpus) {
      if (p < 0 || p >= s.platform.pcpu_count)
        throw ValidationError(path + ".pcpus", "pcpu " + std::to_string(p) +
                                                   " not on the platform");
      if (!used_pcpus.insert(p).second)
        throw ValidationError(path + ".pcpus",
                              "pcpu " + std::to_string(p) + " assigned to two sandboxes");
    }
    if (sb.mem_bytes % kSuperpageBytes != 0)
      throw ValidationError(path + ".mem_mb", "must be a multiple of 2MB");
    total_mem += sb.mem_bytes;

    for (const std::string& dev : sb.devices) {
      if (!device_names.count(dev))
        throw ValidationError(path + ".devices", "unknown device " + dev);
      if (!assigned_devices.insert(dev).second)
        throw ValidationError(path + ".devices", "device " + dev +
                                                     " assigned to two sandboxes");
    }

    std::set<int> owned_irqs;
    for (const std::string& dev : sb.devices) owned_irqs.insert(s.find_device(dev)->irq);

    std::set<VcpuId> vcpu_ids;
    for (std::size_t vi = 0; vi < sb.vcpus.size(); ++vi) {
      const VcpuSpec& v = sb.vcpus[vi];
      const std::string vpath = path + ".vcpus[" + std::to_string(vi) + "]";
      if (!vcpu_ids.insert(v.id).second)
        throw ValidationError(vpath + ".id", "duplicate vcpu id in sandbox");
      if (v.budget > v.period)
        throw ValidationError(vpath + ".budget_us", "C_max exceeds V_T");
      if (std::find(sb.pcpus.begin(), sb.pcpus.end(), v.pcpu) == sb.pcpus.end())
        throw ValidationError(vpath + ".pcpu", "pcpu not owned by the sandbox");
      if (v.flavor == VcpuFlavor::Main && !v.irqs.empty())
        throw ValidationError(vpath + ".irqs", "main vcpus take no irq lines");
      for (int irq : v.irqs)
        if (!owned_irqs.count(irq))
          throw ValidationError(vpath + ".irqs", "irq " + std::to_string(irq) +
                                                     " does not belong to an owned device");
    }

    std::set<int> thread_ids;
    for (std::size_t ti = 0; ti < sb.threads.size(); ++ti) {
      const ThreadSpec& t = sb.threads[ti];
      const std::string tpath = path + ".threads[" + std::to_string(ti) + "]";
      if (!thread_ids.insert(t.id).second)
        throw ValidationError(tpath + ".id", "duplicate thread id in sandbox");
      auto vit = std::find_if(sb.vcpus.begin(), sb.vcpus.end(),
                              [&](const VcpuSpec& v) { return v.id == t.vcpu; });
      if (vit == sb.vcpus.end())
        throw ValidationError(tpath + ".vcpu", "no such vcpu in sandbox");
      if (vit->flavor != VcpuFlavor::Main)
        throw ValidationError(tpath + ".vcpu", "threads bind to main vcpus");
    }
  }

  const std::uint64_t reserved = s.platform.channel_pool_bytes +
                                 s.platform.monitor_reservation_bytes * s.sandboxes.size();
  if (total_mem + reserved > s.platform.ram_bytes)
    throw ValidationError("sandboxes",
                          "sandbox memory plus reservations exceeds platform ram_mb");

  std::uint64_t channel_pages = 0;
  for (std::size_t i = 0; i < s.channels.size(); ++i) {
    const ChannelSpec& c = s.channels[i];
    const std::string path = "channels[" + std::to_string(i) + "]";
    if (!ids.count(c.a)) throw ValidationError(path + ".a", "unknown sandbox");
    if (!ids.count(c.b)) throw ValidationError(path + ".b", "unknown sandbox");
    if (c.a == c.b) throw ValidationError(path, "endpoints must differ");
    channel_pages += c.pages;
  }
  if (channel_pages > s.platform.channel_pool_bytes / kPageBytes)
    throw ValidationError("channels", "total channel pages exceed the channel pool");

  for (std::size_t i = 0; i < s.interrupts.size(); ++i) {
    const InterruptGenSpec& g = s.interrupts[i];
    const std::string path = "workload.interrupts[" + std::to_string(i) + "]";
    if (!device_names.count(g.device))
      throw ValidationError(path + ".device", "unknown device " + g.device);
  }

  for (std::size_t i = 0; i < s.faults.size(); ++i) {
    const FaultSpec& f = s.faults[i];
    const std::string path = "faults[" + std::to_string(i) + "]";
    if (!ids.count(f.sandbox)) throw ValidationError(path + ".sandbox", "unknown sandbox");
    if (f.victim && !ids.count(*f.victim))
      throw ValidationError(path + ".target.victim", "unknown sandbox");
    if (f.victim && *f.victim == f.sandbox)
      throw ValidationError(path + ".target.victim", "victim equals the faulting sandbox");
    if (f.kind == FaultSpec::Kind::PciProbe && !f.device.empty() &&
        !device_names.count(f.device))
      throw ValidationError(path + ".target.device", "unknown device " + f.device);
    if (f.kind == FaultSpec::Kind::IoapicHijack) {
      for (SandboxId d : f.entry.destinations)
        if (!ids.count(d))
          throw ValidationError(path + ".target.destinations", "unknown sandbox");
    }
  }
}

}  // namespace sksim
