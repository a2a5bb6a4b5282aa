#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sksim/scenario.hpp"
#include "sksim/sched.hpp"
#include "sksim/trace.hpp"
#include "sksim/types.hpp"

#include "json.hpp"

namespace sksim {

using ordered_json = nlohmann::ordered_json;

std::vector<SchedRecord> sched_records(const Trace& trace);

// Foreground execution intervals of one VCPU, in time order (monitor
// occupancy that consumed budget counts as foreground time).
std::vector<std::pair<Time, Time>> foreground_intervals(const std::vector<SchedRecord>& recs,
                                                        SandboxId sandbox, VcpuId vcpu);

struct PcpuAdmission {
  PcpuId pcpu = -1;
  SandboxId sandbox = -1;
  int n = 0;
  double total_utilization = 0;
  double bound = 0;
  bool admitted = false;
};

struct AdmissionAudit {
  bool pass = true;
  std::vector<PcpuAdmission> pcpus;
};

// Liu-Layland test per PCPU over the scenario's VCPU set.
AdmissionAudit admission_audit(const Scenario& scenario);

struct WindowAuditEntry {
  SandboxId sandbox = -1;
  VcpuId vcpu = -1;
  Time budget = 0;
  Time period = 0;
  WindowCheckResult result;
};

struct WindowAudit {
  bool pass = true;
  std::vector<WindowAuditEntry> entries;
};

// Sliding-window budget bound for every VCPU recorded in the trace.
WindowAudit window_audit(const Trace& trace);
WindowAudit window_audit(const std::vector<SchedRecord>& recs,
                         const std::vector<VcpuInfo>& vcpus, Time until);

struct TrapAudit {
  bool pass = true;
  bool counters_consistent = true;
  std::map<SandboxId, std::uint64_t> traps_after_start;
  std::uint64_t total_after_start = 0;
};

// Counter exactness: live counters must equal a recount over the records.
TrapAudit trap_audit(const Trace& trace);

struct PciAudit {
  bool pass = true;
  std::uint64_t allowed = 0;
  std::uint64_t completed = 0;
  std::uint64_t debug_traps = 0;
  std::uint64_t denied_blacklist = 0;
  std::uint64_t bad_deny_values = 0;  // blacklisted reads that leaked content
  std::uint64_t protocol_breaks = 0;  // arm without matching re-mask sequence
};

// Mediation protocol audit: every Allow is followed by exactly one
// completed access and one debug-exception re-mask for that sandbox, and
// denied blacklist reads observe all-ones.
PciAudit pci_audit(const Trace& trace);

struct IsolationAudit {
  bool pass = true;
  IsolationSummary summary;
};

IsolationAudit isolation_audit(const Trace& trace);

ordered_json to_json(const AdmissionAudit& a);
ordered_json to_json(const WindowAudit& a);
ordered_json to_json(const TrapAudit& a);
ordered_json to_json(const PciAudit& a);
ordered_json to_json(const IsolationAudit& a);

}  // namespace sksim
