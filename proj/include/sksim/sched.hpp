#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "sksim/types.hpp"

namespace sksim {

// Demand larger than any run horizon; used for always-backlogged threads.
inline constexpr Time kInfiniteWork = std::int64_t(1) << 60;

struct VcpuParams {
  Time budget = 0;  // C_max
  Time period = 0;  // V_T

  double utilization() const { return static_cast<double>(budget) / static_cast<double>(period); }
};

enum class VcpuFlavor { Main, Io };
enum class VcpuMode { Foreground, Background };

// Budget replenishment policy. Chunked queues one replenishment per
// execution chunk at chunk start + period; SingleDeferred is the classic
// defective variant (everything consumed since first activation comes back
// in one piece) kept as a negative control for the window checker.
enum class ReplenishPolicy { Chunked, SingleDeferred };

struct Work {
  enum class Kind { Thread, Handler };
  Kind kind = Kind::Thread;
  int id = -1;  // thread id, or irq line for handler jobs
  Time arrival = 0;
  Time remaining = 0;
  std::uint64_t seq = 0;  // global enqueue order; FIFO tie-break
};

class Vcpu {
 public:
  VcpuId id = -1;
  SandboxId sandbox = -1;
  VcpuFlavor flavor = VcpuFlavor::Main;
  VcpuParams params;
  PcpuId pcpu = -1;
  std::set<int> irq_lines;  // Io VCPUs: lines whose handlers run here

  Time budget_remaining = 0;
  std::map<Time, Time> replenishments;  // due time -> amount
  Time activation = 0;                  // start of the current execution chunk
  bool running_fg = false;
  std::deque<Work> queue;

  VcpuMode mode() const {
    return budget_remaining == 0 ? VcpuMode::Background : VcpuMode::Foreground;
  }
  bool runnable() const { return !queue.empty(); }

  // Deducts executed time and queues its replenishment one period after the
  // chunk's activation. Engine slices execution so delta never exceeds the
  // remaining budget. Returns the due time of the queued replenishment, or
  // -1 when delta was zero.
  Time consume(Time delta, ReplenishPolicy policy);

  // Applies every replenishment due at or before `now`; returns whether any
  // was applied (the caller restarts the chunk clock in that case).
  bool apply_due_replenishments(Time now);

  std::optional<Time> next_replenish_due() const;

  // budget + pending == C_max, budget >= 0.
  void check_conservation() const;

 private:
  std::optional<Time> defect_anchor_;  // SingleDeferred bookkeeping
};

// Strict scheduling order on one PCPU: every foreground VCPU outranks every
// background one; within a class, shorter period first, then lower id.
bool rms_before(const Vcpu& a, const Vcpu& b);

// Highest-ranked VCPU with runnable work, or null for an idle PCPU.
// Foreground selection requires budget; a budgetless VCPU may still be
// chosen, at background rank, and then runs without consuming budget.
Vcpu* pick_next(const std::vector<Vcpu*>& on_pcpu);

// n(2^(1/n) - 1); exactly 1 for n = 1.
double liu_layland_bound(int n);

struct AdmissionReport {
  int n = 0;
  double total_utilization = 0;
  double bound = 0;
  bool admitted = false;
};

AdmissionReport admission_check(const std::vector<VcpuParams>& existing, VcpuParams candidate);

struct WindowCheckResult {
  bool pass = true;
  Time worst_window_start = 0;
  Time worst_window_sum = 0;
};

// Verifies that no window of length `period` anywhere in [0, run_end]
// contains more than `budget` of the given foreground execution time.
// Exact: evaluates every window position where the sliding sum can peak.
WindowCheckResult window_check(std::vector<std::pair<Time, Time>> fg_intervals, Time budget,
                               Time period, Time run_end);

struct ServiceCheckResult {
  bool pass = true;
  Time first_activation = -1;  // -1 when the VCPU never ran foreground
  Time bad_window_start = 0;
  Time bad_window_sum = 0;
  int windows_checked = 0;
};

// Verifies the service guarantee for an always-backlogged VCPU: exactly
// `budget` of foreground time in every complete period window on the grid
// anchored at its first activation. Exact equality is a property of
// harmonic period sets; non-harmonic sets can drift off the grid while
// still honoring the sliding-window upper bound.
ServiceCheckResult service_check(const std::vector<std::pair<Time, Time>>& fg_intervals,
                                 Time budget, Time period, Time run_end);

}  // namespace sksim
