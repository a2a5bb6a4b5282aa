#include "sksim/trace.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace sksim {

using ordered_json = nlohmann::ordered_json;

namespace {

const char* to_string(SchedWork w) {
  switch (w) {
    case SchedWork::Thread: return "thread";
    case SchedWork::Handler: return "handler";
    case SchedWork::MonitorTrap: return "monitor_trap";
    case SchedWork::TlbFlush: return "tlb_flush";
    case SchedWork::Idle: return "idle";
  }
  return "?";
}

SchedWork sched_work_from(const std::string& s) {
  if (s == "thread") return SchedWork::Thread;
  if (s == "handler") return SchedWork::Handler;
  if (s == "monitor_trap") return SchedWork::MonitorTrap;
  if (s == "tlb_flush") return SchedWork::TlbFlush;
  if (s == "idle") return SchedWork::Idle;
  throw std::invalid_argument("bad sched work: " + s);
}

const char* to_string(XlateOutcome o) {
  switch (o) {
    case XlateOutcome::Ok: return "ok";
    case XlateOutcome::GuestFault: return "guest_fault";
    case XlateOutcome::EptViolation: return "ept_violation";
  }
  return "?";
}

XlateOutcome xlate_outcome_from(const std::string& s) {
  if (s == "ok") return XlateOutcome::Ok;
  if (s == "guest_fault") return XlateOutcome::GuestFault;
  if (s == "ept_violation") return XlateOutcome::EptViolation;
  throw std::invalid_argument("bad xlate outcome: " + s);
}

const char* to_string(PciOutcome o) {
  switch (o) {
    case PciOutcome::Allowed: return "allowed";
    case PciOutcome::Completed: return "completed";
    case PciOutcome::DeniedBlacklist: return "denied_blacklist";
    case PciOutcome::DeniedAbsent: return "denied_absent";
    case PciOutcome::DeniedNotEnabled: return "denied_not_enabled";
  }
  return "?";
}

PciOutcome pci_outcome_from(const std::string& s) {
  if (s == "allowed") return PciOutcome::Allowed;
  if (s == "completed") return PciOutcome::Completed;
  if (s == "denied_blacklist") return PciOutcome::DeniedBlacklist;
  if (s == "denied_absent") return PciOutcome::DeniedAbsent;
  if (s == "denied_not_enabled") return PciOutcome::DeniedNotEnabled;
  throw std::invalid_argument("bad pci outcome: " + s);
}

Access access_from(const std::string& s) {
  if (s == "read") return Access::Read;
  if (s == "write") return Access::Write;
  if (s == "execute") return Access::Execute;
  throw std::invalid_argument("bad access: " + s);
}

TrapKind trap_kind_from(const std::string& s) {
  if (s == "ept_violation") return TrapKind::EptViolation;
  if (s == "io_port_trap") return TrapKind::IoPortTrap;
  if (s == "debug_exception") return TrapKind::DebugException;
  if (s == "channel_setup") return TrapKind::ChannelSetup;
  throw std::invalid_argument("bad trap kind: " + s);
}

Direction direction_from(const std::string& s) {
  if (s == "in") return Direction::In;
  if (s == "out") return Direction::Out;
  throw std::invalid_argument("bad direction: " + s);
}

ordered_json to_json(const Record& r) {
  ordered_json j;
  std::visit(
      [&](const auto& rec) {
        using T = std::decay_t<decltype(rec)>;
        if constexpr (std::is_same_v<T, SchedRecord>) {
          j["type"] = "sched";
          j["t0"] = rec.t0;
          j["t1"] = rec.t1;
          j["pcpu"] = rec.pcpu;
          j["sandbox"] = rec.sandbox;
          j["vcpu"] = rec.vcpu;
          j["work"] = to_string(rec.work);
          j["work_id"] = rec.work_id;
          j["fg"] = rec.foreground;
        } else if constexpr (std::is_same_v<T, XlateRecord>) {
          j["type"] = "xlate";
          j["t"] = rec.t;
          j["sandbox"] = rec.sandbox;
          j["gva"] = rec.gva;
          j["gpa"] = rec.gpa;
          j["hpa"] = rec.hpa;
          j["access"] = sksim::to_string(rec.access);
          j["outcome"] = to_string(rec.outcome);
          j["instr"] = rec.instr;
        } else if constexpr (std::is_same_v<T, PortRecord>) {
          j["type"] = "port";
          j["t"] = rec.t;
          j["sandbox"] = rec.sandbox;
          j["port"] = rec.port;
          j["dir"] = sksim::to_string(rec.dir);
          j["width"] = rec.width;
          j["value"] = rec.value;
          j["trapped"] = rec.trapped;
          j["instr"] = rec.instr;
        } else if constexpr (std::is_same_v<T, PciRecord>) {
          j["type"] = "pci";
          j["t"] = rec.t;
          j["sandbox"] = rec.sandbox;
          j["bus"] = rec.bus;
          j["dev"] = rec.dev;
          j["func"] = rec.func;
          j["offset"] = rec.offset;
          j["dir"] = sksim::to_string(rec.dir);
          j["width"] = rec.width;
          j["value"] = rec.value;
          j["outcome"] = to_string(rec.outcome);
          j["instr"] = rec.instr;
        } else if constexpr (std::is_same_v<T, IoapicRecord>) {
          j["type"] = "ioapic";
          j["t"] = rec.t;
          j["sandbox"] = rec.sandbox;
          j["index"] = rec.index;
          j["applied"] = rec.applied;
          j["detail"] = rec.detail;
        } else if constexpr (std::is_same_v<T, IrqRecord>) {
          j["type"] = "irq";
          j["t"] = rec.t;
          j["irq"] = rec.irq;
          j["delivered"] = rec.delivered;
          j["dropped"] = rec.dropped;
        } else if constexpr (std::is_same_v<T, TrapRecord>) {
          j["type"] = "trap";
          j["t"] = rec.t;
          j["sandbox"] = rec.sandbox;
          j["kind"] = sksim::to_string(rec.kind);
          j["detail"] = rec.detail;
        } else if constexpr (std::is_same_v<T, ChannelRecord>) {
          j["type"] = "channel";
          j["t"] = rec.t;
          j["id"] = rec.id;
          j["a"] = rec.a;
          j["b"] = rec.b;
          j["pages"] = rec.pages;
          j["gpa_a"] = rec.gpa_a;
          j["gpa_b"] = rec.gpa_b;
        } else if constexpr (std::is_same_v<T, ViolationRecord>) {
          j["type"] = "violation";
          j["t"] = rec.t;
          j["sandbox"] = rec.sandbox;
          j["kind"] = rec.kind;
          j["detail"] = rec.detail;
          j["action"] = rec.action;
        }
      },
      r);
  return j;
}

Record record_from_json(const ordered_json& j) {
  const std::string type = j.at("type");
  if (type == "sched") {
    SchedRecord r;
    r.t0 = j.at("t0");
    r.t1 = j.at("t1");
    r.pcpu = j.at("pcpu");
    r.sandbox = j.at("sandbox");
    r.vcpu = j.at("vcpu");
    r.work = sched_work_from(j.at("work"));
    r.work_id = j.at("work_id");
    r.foreground = j.at("fg");
    return r;
  }
  if (type == "xlate") {
    XlateRecord r;
    r.t = j.at("t");
    r.sandbox = j.at("sandbox");
    r.gva = j.at("gva");
    r.gpa = j.at("gpa");
    r.hpa = j.at("hpa");
    r.access = access_from(j.at("access"));
    r.outcome = xlate_outcome_from(j.at("outcome"));
    r.instr = j.at("instr");
    return r;
  }
  if (type == "port") {
    PortRecord r;
    r.t = j.at("t");
    r.sandbox = j.at("sandbox");
    r.port = j.at("port");
    r.dir = direction_from(j.at("dir"));
    r.width = j.at("width");
    r.value = j.at("value");
    r.trapped = j.at("trapped");
    r.instr = j.at("instr");
    return r;
  }
  if (type == "pci") {
    PciRecord r;
    r.t = j.at("t");
    r.sandbox = j.at("sandbox");
    r.bus = j.at("bus");
    r.dev = j.at("dev");
    r.func = j.at("func");
    r.offset = j.at("offset");
    r.dir = direction_from(j.at("dir"));
    r.width = j.at("width");
    r.value = j.at("value");
    r.outcome = pci_outcome_from(j.at("outcome"));
    r.instr = j.at("instr");
    return r;
  }
  if (type == "ioapic") {
    IoapicRecord r;
    r.t = j.at("t");
    r.sandbox = j.at("sandbox");
    r.index = j.at("index");
    r.applied = j.at("applied");
    r.detail = j.at("detail");
    return r;
  }
  if (type == "irq") {
    IrqRecord r;
    r.t = j.at("t");
    r.irq = j.at("irq");
    r.delivered = j.at("delivered").get<std::vector<SandboxId>>();
    r.dropped = j.at("dropped").get<std::vector<SandboxId>>();
    return r;
  }
  if (type == "trap") {
    TrapRecord r;
    r.t = j.at("t");
    r.sandbox = j.at("sandbox");
    r.kind = trap_kind_from(j.at("kind"));
    r.detail = j.at("detail");
    return r;
  }
  if (type == "channel") {
    ChannelRecord r;
    r.t = j.at("t");
    r.id = j.at("id");
    r.a = j.at("a");
    r.b = j.at("b");
    r.pages = j.at("pages");
    r.gpa_a = j.at("gpa_a");
    r.gpa_b = j.at("gpa_b");
    return r;
  }
  if (type == "violation") {
    ViolationRecord r;
    r.t = j.at("t");
    r.sandbox = j.at("sandbox");
    r.kind = j.at("kind");
    r.detail = j.at("detail");
    r.action = j.at("action");
    return r;
  }
  throw std::invalid_argument("unknown record type: " + type);
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace

Time record_time(const Record& r) {
  return std::visit(
      [](const auto& rec) -> Time {
        using T = std::decay_t<decltype(rec)>;
        if constexpr (std::is_same_v<T, SchedRecord>)
          return rec.t0;
        else
          return rec.t;
      },
      r);
}

const char* record_family(const Record& r) {
  return std::visit(
      [](const auto& rec) -> const char* {
        using T = std::decay_t<decltype(rec)>;
        if constexpr (std::is_same_v<T, SchedRecord>) return "sched";
        if constexpr (std::is_same_v<T, XlateRecord>) return "xlate";
        if constexpr (std::is_same_v<T, PortRecord>) return "port";
        if constexpr (std::is_same_v<T, PciRecord>) return "pci";
        if constexpr (std::is_same_v<T, IoapicRecord>) return "ioapic";
        if constexpr (std::is_same_v<T, IrqRecord>) return "irq";
        if constexpr (std::is_same_v<T, TrapRecord>) return "trap";
        if constexpr (std::is_same_v<T, ChannelRecord>) return "channel";
        if constexpr (std::is_same_v<T, ViolationRecord>) return "violation";
        return "?";
      },
      r);
}

void Trace::append(Record r) {
  // Coalesce contiguous scheduling slices of the same dispatch.
  if (auto* s = std::get_if<SchedRecord>(&r); s && !records_.empty()) {
    if (auto* prev = std::get_if<SchedRecord>(&records_.back())) {
      if (prev->t1 == s->t0 && prev->pcpu == s->pcpu && prev->sandbox == s->sandbox &&
          prev->vcpu == s->vcpu && prev->work == s->work && prev->work_id == s->work_id &&
          prev->foreground == s->foreground) {
        prev->t1 = s->t1;
        return;
      }
    }
  }
  records_.push_back(std::move(r));
}

void Trace::sort_by_time() {
  std::stable_sort(records_.begin(), records_.end(),
                   [](const Record& a, const Record& b) {
                     return record_time(a) < record_time(b);
                   });
  // Ordering can bring slices of one dispatch back together; canonicalize
  // so that export/import/export is byte-stable.
  std::vector<Record> merged;
  merged.reserve(records_.size());
  for (Record& r : records_) {
    if (auto* s = std::get_if<SchedRecord>(&r); s && !merged.empty()) {
      if (auto* prev = std::get_if<SchedRecord>(&merged.back());
          prev && prev->t1 == s->t0 && prev->pcpu == s->pcpu &&
          prev->sandbox == s->sandbox && prev->vcpu == s->vcpu && prev->work == s->work &&
          prev->work_id == s->work_id && prev->foreground == s->foreground) {
        prev->t1 = s->t1;
        continue;
      }
    }
    merged.push_back(std::move(r));
  }
  records_ = std::move(merged);
}

bool Trace::is_time_ordered() const {
  for (std::size_t i = 1; i < records_.size(); ++i)
    if (record_time(records_[i]) < record_time(records_[i - 1])) return false;
  return true;
}

Counters Trace::recount() const {
  Counters c;
  for (const auto& [sb, n] : counters.monitor_entries) {
    (void)n;
    c.monitor_entries[sb] = 0;
    c.tlb_flushes[sb] = 1;  // boot handoff
  }
  for (const Record& r : records_) {
    if (record_time(r) < 0) continue;
    if (const auto* t = std::get_if<TrapRecord>(&r)) {
      c.monitor_entries[t->sandbox]++;
      c.tlb_flushes[t->sandbox]++;
    } else if (const auto* irq = std::get_if<IrqRecord>(&r)) {
      c.irqs_delivered += irq->delivered.size();
    } else if (std::holds_alternative<ViolationRecord>(r)) {
      c.violations++;
    }
  }
  return c;
}

std::string export_json(const Trace& trace) {
  ordered_json j;
  ordered_json meta;
  meta["format"] = "sksim-trace-v1";
  meta["scenario"] = trace.meta.scenario;
  meta["seed"] = trace.meta.seed;
  meta["until_ns"] = trace.meta.until;
  ordered_json vcpus = ordered_json::array();
  for (const VcpuInfo& v : trace.meta.vcpus) {
    ordered_json vj;
    vj["sandbox"] = v.sandbox;
    vj["vcpu"] = v.vcpu;
    vj["pcpu"] = v.pcpu;
    vj["flavor"] = v.io_flavor ? "io" : "main";
    vj["budget_ns"] = v.budget;
    vj["period_ns"] = v.period;
    vcpus.push_back(vj);
  }
  meta["vcpus"] = vcpus;
  ordered_json chans = ordered_json::array();
  for (const Channel& c : trace.meta.channel_registry) {
    ordered_json cj;
    cj["id"] = c.id;
    cj["a"] = c.a;
    cj["b"] = c.b;
    cj["hpa_first_page"] = c.hpa_first;
    cj["pages"] = c.pages;
    cj["gpa_a"] = c.gpa_base_a;
    cj["gpa_b"] = c.gpa_base_b;
    cj["perms_a"] = to_string(c.perms_a);
    cj["perms_b"] = to_string(c.perms_b);
    chans.push_back(cj);
  }
  meta["channels"] = chans;
  ordered_json iso;
  iso["checked"] = trace.meta.isolation.checked;
  iso["faults_injected"] = trace.meta.isolation.faults_injected;
  iso["faults_contained"] = trace.meta.isolation.faults_contained;
  iso["escapes"] = trace.meta.isolation.escapes;
  iso["details"] = trace.meta.isolation.details;
  meta["isolation"] = iso;
  meta["warnings"] = trace.meta.warnings;
  j["meta"] = meta;

  ordered_json records = ordered_json::array();
  for (const Record& r : trace.records()) records.push_back(to_json(r));
  j["records"] = records;

  ordered_json counters;
  ordered_json entries, flushes;
  for (const auto& [sb, n] : trace.counters.monitor_entries) entries[std::to_string(sb)] = n;
  for (const auto& [sb, n] : trace.counters.tlb_flushes) flushes[std::to_string(sb)] = n;
  counters["monitor_entries"] = entries;
  counters["tlb_flushes"] = flushes;
  counters["irqs_delivered"] = trace.counters.irqs_delivered;
  counters["violations"] = trace.counters.violations;
  j["counters"] = counters;

  return j.dump(2) + "\n";
}

Trace import_json(const std::string& text) {
  const ordered_json j = ordered_json::parse(text);
  Trace t;
  const auto& meta = j.at("meta");
  if (meta.at("format") != "sksim-trace-v1")
    throw std::invalid_argument("unsupported trace format");
  t.meta.scenario = meta.at("scenario");
  t.meta.seed = meta.at("seed");
  t.meta.until = meta.at("until_ns");
  for (const auto& vj : meta.at("vcpus")) {
    VcpuInfo v;
    v.sandbox = vj.at("sandbox");
    v.vcpu = vj.at("vcpu");
    v.pcpu = vj.at("pcpu");
    v.io_flavor = vj.at("flavor") == "io";
    v.budget = vj.at("budget_ns");
    v.period = vj.at("period_ns");
    t.meta.vcpus.push_back(v);
  }
  for (const auto& cj : meta.at("channels")) {
    Channel c;
    c.id = cj.at("id");
    c.a = cj.at("a");
    c.b = cj.at("b");
    c.hpa_first = cj.at("hpa_first_page");
    c.pages = cj.at("pages");
    c.gpa_base_a = cj.at("gpa_a");
    c.gpa_base_b = cj.at("gpa_b");
    c.perms_a = permissions_from_string(cj.at("perms_a"));
    c.perms_b = permissions_from_string(cj.at("perms_b"));
    t.meta.channel_registry.push_back(c);
  }
  const auto& iso = meta.at("isolation");
  t.meta.isolation.checked = iso.at("checked");
  t.meta.isolation.faults_injected = iso.at("faults_injected");
  t.meta.isolation.faults_contained = iso.at("faults_contained");
  t.meta.isolation.escapes = iso.at("escapes");
  t.meta.isolation.details = iso.at("details").get<std::vector<std::string>>();
  t.meta.warnings = meta.at("warnings").get<std::vector<std::string>>();

  for (const auto& rj : j.at("records")) t.append(record_from_json(rj));

  const auto& counters = j.at("counters");
  for (const auto& [key, val] : counters.at("monitor_entries").items())
    t.counters.monitor_entries[std::stoi(key)] = val;
  for (const auto& [key, val] : counters.at("tlb_flushes").items())
    t.counters.tlb_flushes[std::stoi(key)] = val;
  t.counters.irqs_delivered = counters.at("irqs_delivered");
  t.counters.violations = counters.at("violations");
  return t;
}

std::vector<std::string> export_csv(const Trace& trace, const std::string& prefix) {
  std::map<std::string, std::ofstream> files;
  std::vector<std::string> paths;
  auto file = [&](const std::string& family, const std::string& header) -> std::ofstream& {
    auto it = files.find(family);
    if (it == files.end()) {
      const std::string path = prefix + "_" + family + ".csv";
      paths.push_back(path);
      auto [nit, ok] = files.emplace(family, std::ofstream(path));
      if (!ok || !nit->second) throw std::runtime_error("cannot open " + path);
      nit->second << header << "\n";
      it = nit;
    }
    return it->second;
  };

  for (const Record& r : trace.records()) {
    std::visit(
        [&](const auto& rec) {
          using T = std::decay_t<decltype(rec)>;
          if constexpr (std::is_same_v<T, SchedRecord>) {
            file("sched", "t0,t1,pcpu,sandbox,vcpu,work,work_id,fg")
                << rec.t0 << ',' << rec.t1 << ',' << rec.pcpu << ',' << rec.sandbox << ','
                << rec.vcpu << ',' << to_string(rec.work) << ',' << rec.work_id << ','
                << (rec.foreground ? 1 : 0) << "\n";
          } else if constexpr (std::is_same_v<T, XlateRecord>) {
            file("xlate", "t,sandbox,gva,gpa,hpa,access,outcome,instr")
                << rec.t << ',' << rec.sandbox << ',' << rec.gva << ',' << rec.gpa << ','
                << rec.hpa << ',' << sksim::to_string(rec.access) << ','
                << to_string(rec.outcome) << ',' << rec.instr << "\n";
          } else if constexpr (std::is_same_v<T, PortRecord>) {
            file("port", "t,sandbox,port,dir,width,value,trapped,instr")
                << rec.t << ',' << rec.sandbox << ',' << rec.port << ','
                << sksim::to_string(rec.dir) << ',' << rec.width << ',' << rec.value << ','
                << (rec.trapped ? 1 : 0) << ',' << rec.instr << "\n";
          } else if constexpr (std::is_same_v<T, PciRecord>) {
            file("pci", "t,sandbox,bus,dev,func,offset,dir,width,value,outcome,instr")
                << rec.t << ',' << rec.sandbox << ',' << int(rec.bus) << ',' << int(rec.dev)
                << ',' << int(rec.func) << ',' << int(rec.offset) << ','
                << sksim::to_string(rec.dir) << ',' << rec.width << ',' << rec.value << ','
                << to_string(rec.outcome) << ',' << rec.instr << "\n";
          } else if constexpr (std::is_same_v<T, IoapicRecord>) {
            file("ioapic", "t,sandbox,index,applied,detail")
                << rec.t << ',' << rec.sandbox << ',' << rec.index << ','
                << (rec.applied ? 1 : 0) << ',' << csv_escape(rec.detail) << "\n";
          } else if constexpr (std::is_same_v<T, IrqRecord>) {
            std::string delivered, dropped;
            for (SandboxId s : rec.delivered)
              delivered += (delivered.empty() ? "" : " ") + std::to_string(s);
            for (SandboxId s : rec.dropped)
              dropped += (dropped.empty() ? "" : " ") + std::to_string(s);
            file("irq", "t,irq,delivered,dropped")
                << rec.t << ',' << rec.irq << ',' << delivered << ',' << dropped << "\n";
          } else if constexpr (std::is_same_v<T, TrapRecord>) {
            file("trap", "t,sandbox,kind,detail")
                << rec.t << ',' << rec.sandbox << ',' << sksim::to_string(rec.kind) << ','
                << csv_escape(rec.detail) << "\n";
          } else if constexpr (std::is_same_v<T, ChannelRecord>) {
            file("channel", "t,id,a,b,pages,gpa_a,gpa_b")
                << rec.t << ',' << rec.id << ',' << rec.a << ',' << rec.b << ',' << rec.pages
                << ',' << rec.gpa_a << ',' << rec.gpa_b << "\n";
          } else if constexpr (std::is_same_v<T, ViolationRecord>) {
            file("violation", "t,sandbox,kind,detail,action")
                << rec.t << ',' << rec.sandbox << ',' << csv_escape(rec.kind) << ','
                << csv_escape(rec.detail) << ',' << csv_escape(rec.action) << "\n";
          }
        },
        r);
  }

  {
    const std::string path = prefix + "_counters.csv";
    paths.push_back(path);
    std::ofstream out(path);
    out << "counter,sandbox,value\n";
    for (const auto& [sb, n] : trace.counters.monitor_entries)
      out << "monitor_entries," << sb << ',' << n << "\n";
    for (const auto& [sb, n] : trace.counters.tlb_flushes)
      out << "tlb_flushes," << sb << ',' << n << "\n";
    out << "irqs_delivered,," << trace.counters.irqs_delivered << "\n";
    out << "violations,," << trace.counters.violations << "\n";
  }
  return paths;
}

std::vector<SchedRecord> sched_records_from_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<SchedRecord> out;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    SchedRecord r;
    std::getline(ss, field, ',');
    r.t0 = std::stoll(field);
    std::getline(ss, field, ',');
    r.t1 = std::stoll(field);
    std::getline(ss, field, ',');
    r.pcpu = std::stoi(field);
    std::getline(ss, field, ',');
    r.sandbox = std::stoi(field);
    std::getline(ss, field, ',');
    r.vcpu = std::stoi(field);
    std::getline(ss, field, ',');
    r.work = sched_work_from(field);
    std::getline(ss, field, ',');
    r.work_id = std::stoi(field);
    std::getline(ss, field, ',');
    r.foreground = field == "1";
    out.push_back(r);
  }
  return out;
}

std::string violations_jsonl(const Trace& trace) {
  std::string out;
  for (const Record& r : trace.records()) {
    if (const auto* v = std::get_if<ViolationRecord>(&r)) {
      ordered_json j;
      j["time"] = v->t;
      j["sandbox"] = v->sandbox;
      j["kind"] = v->kind;
      j["detail"] = v->detail;
      j["action"] = v->action;
      out += j.dump() + "\n";
    }
  }
  return out;
}

}  // namespace sksim
