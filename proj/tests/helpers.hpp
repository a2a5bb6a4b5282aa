#pragma once

#include <string>
#include <vector>

#include "sksim/scenario.hpp"

namespace sksim::testing {

// One sandbox, one or more pcpus, no devices: pure scheduling scenarios.
inline Scenario sched_scenario(std::vector<VcpuSpec> vcpus, std::vector<ThreadSpec> threads,
                               Time until, std::uint64_t seed = 1,
                               ReplenishPolicy policy = ReplenishPolicy::Chunked) {
  Scenario s;
  s.name = "sched";
  int max_pcpu = 0;
  for (const auto& v : vcpus) max_pcpu = std::max(max_pcpu, v.pcpu);
  s.platform.pcpu_count = max_pcpu + 1;
  s.platform.ram_bytes = 64ull << 20;
  SandboxSpec sb;
  sb.id = 1;
  for (int p = 0; p <= max_pcpu; ++p) sb.pcpus.push_back(p);
  sb.mem_bytes = 16ull << 20;
  sb.vcpus = std::move(vcpus);
  sb.threads = std::move(threads);
  s.sandboxes.push_back(std::move(sb));
  s.costs.trap = usec(2);
  s.costs.tlb_flush = 500;
  s.run.until = until;
  s.run.seed = seed;
  s.run.policy = policy;
  validate_scenario(s);
  return s;
}

inline VcpuSpec main_vcpu(VcpuId id, Time budget, Time period, PcpuId pcpu = 0) {
  VcpuSpec v;
  v.id = id;
  v.flavor = VcpuFlavor::Main;
  v.budget = budget;
  v.period = period;
  v.pcpu = pcpu;
  return v;
}

inline ThreadSpec busy_thread(int id, VcpuId vcpu) {
  ThreadSpec t;
  t.id = id;
  t.vcpu = vcpu;
  t.demand.kind = DemandSpec::Kind::Busy;
  return t;
}

inline ThreadSpec jobs_thread(int id, VcpuId vcpu, std::vector<std::pair<Time, Time>> jobs) {
  ThreadSpec t;
  t.id = id;
  t.vcpu = vcpu;
  t.demand.kind = DemandSpec::Kind::List;
  t.demand.jobs = std::move(jobs);
  return t;
}

inline ThreadSpec periodic_thread(int id, VcpuId vcpu, Time start, Time period, Time compute,
                                  int count = -1) {
  ThreadSpec t;
  t.id = id;
  t.vcpu = vcpu;
  t.demand.kind = DemandSpec::Kind::Periodic;
  t.demand.start = start;
  t.demand.period = period;
  t.demand.compute = compute;
  t.demand.count = count;
  return t;
}

inline std::string scenario_dir() { return SKSIM_SCENARIO_DIR; }

}  // namespace sksim::testing
