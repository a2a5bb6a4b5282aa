#include "sksim/sched.hpp"

#include <algorithm>
#include <cmath>

namespace sksim {

Time Vcpu::consume(Time delta, ReplenishPolicy policy) {
  if (delta == 0) return -1;
  if (delta > budget_remaining) throw EngineError("vcpu budget over-consumed");
  budget_remaining -= delta;
  Time anchor = activation;
  if (policy == ReplenishPolicy::SingleDeferred) {
    if (!defect_anchor_) defect_anchor_ = activation;
    anchor = *defect_anchor_;
  }
  const Time due = anchor + params.period;
  replenishments[due] += delta;
  return due;
}

bool Vcpu::apply_due_replenishments(Time now) {
  bool any = false;
  while (!replenishments.empty() && replenishments.begin()->first <= now) {
    budget_remaining += replenishments.begin()->second;
    replenishments.erase(replenishments.begin());
    any = true;
  }
  if (any) {
    defect_anchor_.reset();
    if (budget_remaining > params.budget) throw EngineError("vcpu budget exceeds C_max");
  }
  return any;
}

std::optional<Time> Vcpu::next_replenish_due() const {
  if (replenishments.empty()) return std::nullopt;
  return replenishments.begin()->first;
}

void Vcpu::check_conservation() const {
  Time pending = 0;
  for (const auto& [due, amount] : replenishments) {
    (void)due;
    pending += amount;
  }
  if (budget_remaining < 0 || budget_remaining + pending != params.budget)
    throw EngineError("vcpu budget conservation violated");
}

bool rms_before(const Vcpu& a, const Vcpu& b) {
  const bool a_fg = a.mode() == VcpuMode::Foreground;
  const bool b_fg = b.mode() == VcpuMode::Foreground;
  if (a_fg != b_fg) return a_fg;
  if (a.params.period != b.params.period) return a.params.period < b.params.period;
  return a.id < b.id;
}

Vcpu* pick_next(const std::vector<Vcpu*>& on_pcpu) {
  Vcpu* best = nullptr;
  for (Vcpu* v : on_pcpu) {
    if (!v->runnable()) continue;
    if (!best || rms_before(*v, *best)) best = v;
  }
  return best;
}

double liu_layland_bound(int n) {
  if (n <= 0) return 0.0;
  if (n == 1) return 1.0;
  const long double ln = static_cast<long double>(n);
  return static_cast<double>(ln * (std::pow(2.0L, 1.0L / ln) - 1.0L));
}

AdmissionReport admission_check(const std::vector<VcpuParams>& existing, VcpuParams candidate) {
  AdmissionReport r;
  r.n = static_cast<int>(existing.size()) + 1;
  long double sum = 0.0L;
  for (const VcpuParams& p : existing)
    sum += static_cast<long double>(p.budget) / static_cast<long double>(p.period);
  sum += static_cast<long double>(candidate.budget) / static_cast<long double>(candidate.period);
  r.total_utilization = static_cast<double>(sum);
  r.bound = liu_layland_bound(r.n);
  r.admitted = sum <= static_cast<long double>(r.bound);
  return r;
}

namespace {

// Merge into disjoint, sorted, non-adjacent intervals.
std::vector<std::pair<Time, Time>> merge_intervals(std::vector<std::pair<Time, Time>> iv) {
  std::erase_if(iv, [](const auto& p) { return p.second <= p.first; });
  std::sort(iv.begin(), iv.end());
  std::vector<std::pair<Time, Time>> out;
  for (const auto& p : iv) {
    if (!out.empty() && p.first <= out.back().second)
      out.back().second = std::max(out.back().second, p.second);
    else
      out.push_back(p);
  }
  return out;
}

// Total interval time in [0, t).
Time coverage_before(const std::vector<std::pair<Time, Time>>& merged,
                     const std::vector<Time>& prefix, Time t) {
  auto it = std::upper_bound(merged.begin(), merged.end(), t,
                             [](Time v, const auto& p) { return v < p.first; });
  const std::size_t i = static_cast<std::size_t>(it - merged.begin());
  Time total = prefix[i];
  if (i > 0 && merged[i - 1].second > t) total -= merged[i - 1].second - t;
  return total;
}

}  // namespace

WindowCheckResult window_check(std::vector<std::pair<Time, Time>> fg_intervals, Time budget,
                               Time period, Time run_end) {
  WindowCheckResult r;
  auto merged = merge_intervals(std::move(fg_intervals));
  if (merged.empty()) return r;

  std::vector<Time> prefix(merged.size() + 1, 0);
  for (std::size_t i = 0; i < merged.size(); ++i)
    prefix[i + 1] = prefix[i] + (merged[i].second - merged[i].first);

  const Time lo = 0;
  const Time hi = std::max<Time>(run_end - period, 0);

  // The window sum is piecewise linear in its start position; the maximum
  // sits where either edge of the window crosses an interval boundary.
  std::vector<Time> candidates{lo, hi};
  for (const auto& [s, e] : merged) {
    for (Time b : {s, e, s - period, e - period}) {
      if (b >= lo && b <= hi) candidates.push_back(b);
    }
  }

  for (Time t : candidates) {
    const Time sum = coverage_before(merged, prefix, t + period) -
                     coverage_before(merged, prefix, t);
    if (sum > r.worst_window_sum) {
      r.worst_window_sum = sum;
      r.worst_window_start = t;
    }
  }
  r.pass = r.worst_window_sum <= budget;
  return r;
}

ServiceCheckResult service_check(const std::vector<std::pair<Time, Time>>& fg_intervals,
                                 Time budget, Time period, Time run_end) {
  ServiceCheckResult r;
  auto merged = merge_intervals(fg_intervals);
  if (merged.empty()) return r;

  std::vector<Time> prefix(merged.size() + 1, 0);
  for (std::size_t i = 0; i < merged.size(); ++i)
    prefix[i + 1] = prefix[i] + (merged[i].second - merged[i].first);

  r.first_activation = merged.front().first;
  for (Time start = r.first_activation; start + period <= run_end; start += period) {
    const Time sum = coverage_before(merged, prefix, start + period) -
                     coverage_before(merged, prefix, start);
    ++r.windows_checked;
    if (sum != budget) {
      r.pass = false;
      r.bad_window_start = start;
      r.bad_window_sum = sum;
      return r;
    }
  }
  return r;
}

}  // namespace sksim
