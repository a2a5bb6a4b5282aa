#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "sksim/monitor.hpp"
#include "sksim/types.hpp"

namespace sksim {

inline constexpr std::uint64_t kNoAddr = ~0ull;

enum class SchedWork { Thread, Handler, MonitorTrap, TlbFlush, Idle };

struct SchedRecord {
  Time t0 = 0;
  Time t1 = 0;
  PcpuId pcpu = -1;
  SandboxId sandbox = -1;
  VcpuId vcpu = -1;  // -1 when no vcpu context (monitor time on an idle core)
  SchedWork work = SchedWork::Thread;
  int work_id = -1;  // thread id or irq line
  bool foreground = false;
};

enum class XlateOutcome { Ok, GuestFault, EptViolation };

struct XlateRecord {
  Time t = 0;
  SandboxId sandbox = -1;
  std::uint64_t gva = 0;
  std::uint64_t gpa = kNoAddr;
  std::uint64_t hpa = kNoAddr;
  Access access = Access::Read;
  XlateOutcome outcome = XlateOutcome::Ok;
  std::uint64_t instr = 0;
};

struct PortRecord {
  Time t = 0;
  SandboxId sandbox = -1;
  std::uint16_t port = 0;
  Direction dir = Direction::In;
  int width = 1;
  std::uint32_t value = 0;
  bool trapped = false;
  std::uint64_t instr = 0;
};

enum class PciOutcome {
  Allowed,          // mediation passed; single step armed
  Completed,        // the single-stepped access itself
  DeniedBlacklist,
  DeniedAbsent,
  DeniedNotEnabled,
};

struct PciRecord {
  Time t = 0;
  SandboxId sandbox = -1;
  std::uint8_t bus = 0;
  std::uint8_t dev = 0;
  std::uint8_t func = 0;
  std::uint8_t offset = 0;
  Direction dir = Direction::In;
  int width = 4;
  std::uint32_t value = 0;
  PciOutcome outcome = PciOutcome::Allowed;
  std::uint64_t instr = 0;
};

struct IoapicRecord {
  Time t = 0;
  SandboxId sandbox = -1;
  int index = -1;
  bool applied = false;
  std::string detail;
};

struct IrqRecord {
  Time t = 0;
  int irq = -1;
  std::vector<SandboxId> delivered;
  std::vector<SandboxId> dropped;  // destinations lacking an I/O VCPU
};

struct TrapRecord {
  Time t = 0;
  SandboxId sandbox = -1;
  TrapKind kind = TrapKind::EptViolation;
  std::string detail;
};

struct ChannelRecord {
  Time t = 0;
  int id = -1;
  SandboxId a = -1;
  SandboxId b = -1;
  std::uint64_t pages = 0;
  std::uint64_t gpa_a = 0;
  std::uint64_t gpa_b = 0;
};

struct ViolationRecord {
  Time t = 0;
  SandboxId sandbox = -1;
  std::string kind;
  std::string detail;
  std::string action;
};

using Record = std::variant<SchedRecord, XlateRecord, PortRecord, PciRecord, IoapicRecord,
                            IrqRecord, TrapRecord, ChannelRecord, ViolationRecord>;

Time record_time(const Record& r);
const char* record_family(const Record& r);

struct Counters {
  std::map<SandboxId, std::uint64_t> monitor_entries;
  std::map<SandboxId, std::uint64_t> tlb_flushes;
  std::uint64_t irqs_delivered = 0;
  std::uint64_t violations = 0;

  bool operator==(const Counters&) const = default;
};

struct IsolationSummary {
  bool checked = false;
  std::uint64_t faults_injected = 0;
  std::uint64_t faults_contained = 0;
  std::uint64_t escapes = 0;
  std::vector<std::string> details;
};

struct VcpuInfo {
  SandboxId sandbox = -1;
  VcpuId vcpu = -1;
  PcpuId pcpu = -1;
  bool io_flavor = false;
  Time budget = 0;
  Time period = 0;
};

struct TraceMeta {
  std::string scenario;
  std::uint64_t seed = 0;
  Time until = 0;
  std::vector<VcpuInfo> vcpus;
  std::vector<Channel> channel_registry;
  IsolationSummary isolation;
  std::vector<std::string> warnings;
};

class Trace {
 public:
  TraceMeta meta;
  Counters counters;

  void append(Record r);
  const std::vector<Record>& records() const { return records_; }
  std::vector<Record>& records() { return records_; }

  // Records are appended as events resolve; monitor bookings can reach a
  // little into the future, so the engine orders the stream once at the end.
  void sort_by_time();
  bool is_time_ordered() const;

  // Recomputes the counters from the record stream (bootstrap records at
  // t < 0 are exempt, matching the live tallies).
  Counters recount() const;

 private:
  std::vector<Record> records_;
};

std::string export_json(const Trace& trace);
Trace import_json(const std::string& text);

// One file per record family: <prefix>_sched.csv, <prefix>_trap.csv, ...
// plus <prefix>_counters.csv. Returns the paths written.
std::vector<std::string> export_csv(const Trace& trace, const std::string& prefix);
std::vector<SchedRecord> sched_records_from_csv(const std::string& path);

// Monitor violation log as JSON lines.
std::string violations_jsonl(const Trace& trace);

}  // namespace sksim
