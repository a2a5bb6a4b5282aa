#include "sksim/analysis.hpp"

#include <algorithm>

namespace sksim {

std::vector<SchedRecord> sched_records(const Trace& trace) {
  std::vector<SchedRecord> out;
  for (const Record& r : trace.records())
    if (const auto* s = std::get_if<SchedRecord>(&r)) out.push_back(*s);
  return out;
}

std::vector<std::pair<Time, Time>> foreground_intervals(const std::vector<SchedRecord>& recs,
                                                        SandboxId sandbox, VcpuId vcpu) {
  std::vector<std::pair<Time, Time>> out;
  for (const SchedRecord& r : recs) {
    if (r.sandbox != sandbox || r.vcpu != vcpu || !r.foreground) continue;
    if (!out.empty() && out.back().second == r.t0)
      out.back().second = r.t1;
    else
      out.push_back({r.t0, r.t1});
  }
  return out;
}

AdmissionAudit admission_audit(const Scenario& scenario) {
  AdmissionAudit audit;
  std::map<PcpuId, std::pair<SandboxId, std::vector<VcpuParams>>> per_pcpu;
  for (const SandboxSpec& sb : scenario.sandboxes)
    for (const VcpuSpec& v : sb.vcpus)
      per_pcpu[v.pcpu] = {sb.id, {}};
  for (const SandboxSpec& sb : scenario.sandboxes)
    for (const VcpuSpec& v : sb.vcpus)
      per_pcpu[v.pcpu].second.push_back({v.budget, v.period});

  for (const auto& [pcpu, entry] : per_pcpu) {
    const auto& [sandbox, params] = entry;
    if (params.empty()) continue;
    std::vector<VcpuParams> existing(params.begin(), params.end() - 1);
    const AdmissionReport r = admission_check(existing, params.back());
    PcpuAdmission pa;
    pa.pcpu = pcpu;
    pa.sandbox = sandbox;
    pa.n = r.n;
    pa.total_utilization = r.total_utilization;
    pa.bound = r.bound;
    pa.admitted = r.admitted;
    audit.pcpus.push_back(pa);
    if (!r.admitted) audit.pass = false;
  }
  return audit;
}

WindowAudit window_audit(const std::vector<SchedRecord>& recs,
                         const std::vector<VcpuInfo>& vcpus, Time until) {
  WindowAudit audit;
  for (const VcpuInfo& v : vcpus) {
    WindowAuditEntry e;
    e.sandbox = v.sandbox;
    e.vcpu = v.vcpu;
    e.budget = v.budget;
    e.period = v.period;
    e.result = window_check(foreground_intervals(recs, v.sandbox, v.vcpu), v.budget, v.period,
                            until);
    if (!e.result.pass) audit.pass = false;
    audit.entries.push_back(e);
  }
  return audit;
}

WindowAudit window_audit(const Trace& trace) {
  return window_audit(sched_records(trace), trace.meta.vcpus, trace.meta.until);
}

TrapAudit trap_audit(const Trace& trace) {
  TrapAudit audit;
  audit.counters_consistent = trace.recount() == trace.counters;
  for (const auto& [sb, n] : trace.counters.monitor_entries) {
    (void)n;
    audit.traps_after_start[sb] = 0;
  }
  for (const Record& r : trace.records()) {
    if (const auto* t = std::get_if<TrapRecord>(&r)) {
      if (t->t >= 0) {
        audit.traps_after_start[t->sandbox]++;
        audit.total_after_start++;
      }
    }
  }
  audit.pass = audit.counters_consistent;
  return audit;
}

PciAudit pci_audit(const Trace& trace) {
  PciAudit audit;
  // Per sandbox, walk the protocol: Allowed -> Completed -> DebugException,
  // with no other guest PCI activity for that sandbox in between. The
  // completed access must be the same instruction that trapped.
  std::map<SandboxId, int> phase;  // 0 masked, 1 armed, 2 stepped
  std::map<SandboxId, std::uint64_t> armed_instr;
  for (const Record& r : trace.records()) {
    if (const auto* p = std::get_if<PciRecord>(&r)) {
      int& ph = phase[p->sandbox];
      switch (p->outcome) {
        case PciOutcome::Allowed:
          audit.allowed++;
          if (ph != 0) audit.protocol_breaks++;
          armed_instr[p->sandbox] = p->instr;
          ph = 1;
          break;
        case PciOutcome::Completed:
          audit.completed++;
          if (ph != 1 || armed_instr[p->sandbox] != p->instr) audit.protocol_breaks++;
          ph = 2;
          break;
        case PciOutcome::DeniedBlacklist:
          audit.denied_blacklist++;
          if (ph != 0) audit.protocol_breaks++;
          if (p->dir == Direction::In && p->value != all_ones(p->width))
            audit.bad_deny_values++;
          break;
        case PciOutcome::DeniedAbsent:
        case PciOutcome::DeniedNotEnabled:
          if (ph != 0) audit.protocol_breaks++;
          if (p->dir == Direction::In && p->value != all_ones(p->width))
            audit.bad_deny_values++;
          break;
      }
    } else if (const auto* t = std::get_if<TrapRecord>(&r)) {
      if (t->kind == TrapKind::DebugException) {
        audit.debug_traps++;
        int& ph = phase[t->sandbox];
        if (ph != 2) audit.protocol_breaks++;
        ph = 0;
      }
    }
  }
  for (const auto& [sb, ph] : phase)
    if (ph != 0) audit.protocol_breaks++;  // armed at end of run
  audit.pass = audit.protocol_breaks == 0 && audit.bad_deny_values == 0 &&
               audit.allowed == audit.completed && audit.allowed == audit.debug_traps;
  return audit;
}

IsolationAudit isolation_audit(const Trace& trace) {
  IsolationAudit audit;
  audit.summary = trace.meta.isolation;
  audit.pass = audit.summary.checked && audit.summary.escapes == 0 &&
               audit.summary.faults_contained == audit.summary.faults_injected;
  return audit;
}

ordered_json to_json(const AdmissionAudit& a) {
  ordered_json j;
  j["check"] = "admission";
  j["pass"] = a.pass;
  ordered_json rows = ordered_json::array();
  for (const PcpuAdmission& p : a.pcpus) {
    ordered_json r;
    r["pcpu"] = p.pcpu;
    r["sandbox"] = p.sandbox;
    r["vcpus"] = p.n;
    r["utilization"] = p.total_utilization;
    r["bound"] = p.bound;
    r["admitted"] = p.admitted;
    rows.push_back(r);
  }
  j["pcpus"] = rows;
  return j;
}

ordered_json to_json(const WindowAudit& a) {
  ordered_json j;
  j["check"] = "windows";
  j["pass"] = a.pass;
  ordered_json rows = ordered_json::array();
  for (const WindowAuditEntry& e : a.entries) {
    ordered_json r;
    r["sandbox"] = e.sandbox;
    r["vcpu"] = e.vcpu;
    r["budget_ns"] = e.budget;
    r["period_ns"] = e.period;
    r["worst_window_ns"] = e.result.worst_window_sum;
    r["worst_window_start_ns"] = e.result.worst_window_start;
    r["pass"] = e.result.pass;
    rows.push_back(r);
  }
  j["vcpus"] = rows;
  return j;
}

ordered_json to_json(const TrapAudit& a) {
  ordered_json j;
  j["check"] = "traps";
  j["pass"] = a.pass;
  j["counters_consistent"] = a.counters_consistent;
  ordered_json per;
  for (const auto& [sb, n] : a.traps_after_start) per[std::to_string(sb)] = n;
  j["traps_after_t0"] = per;
  j["total_after_t0"] = a.total_after_start;
  return j;
}

ordered_json to_json(const PciAudit& a) {
  ordered_json j;
  j["check"] = "pci";
  j["pass"] = a.pass;
  j["allowed"] = a.allowed;
  j["completed"] = a.completed;
  j["debug_traps"] = a.debug_traps;
  j["denied_blacklist"] = a.denied_blacklist;
  j["bad_deny_values"] = a.bad_deny_values;
  j["protocol_breaks"] = a.protocol_breaks;
  return j;
}

ordered_json to_json(const IsolationAudit& a) {
  ordered_json j;
  j["check"] = "isolation";
  j["pass"] = a.pass;
  j["checked"] = a.summary.checked;
  j["faults_injected"] = a.summary.faults_injected;
  j["faults_contained"] = a.summary.faults_contained;
  j["escapes"] = a.summary.escapes;
  j["details"] = a.summary.details;
  return j;
}

}  // namespace sksim
