#pragma once

#include <array>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "sksim/io.hpp"
#include "sksim/memory.hpp"
#include "sksim/monitor.hpp"
#include "sksim/scenario.hpp"
#include "sksim/sched.hpp"
#include "sksim/trace.hpp"
#include "sksim/types.hpp"

namespace sksim {

// Deterministic discrete-event simulation of one scenario. Static
// partitioning happens in a bootstrap phase before t = 0; the event loop
// then runs to scenario.run.until. Identical (scenario, seed) pairs produce
// byte-identical traces.
class Engine {
 public:
  explicit Engine(Scenario scenario);

  Trace run();

  // Post-run inspection.
  const Scenario& scenario() const { return scenario_; }
  const MemoryModel& memory() const { return memory_; }
  MemoryModel& memory() { return memory_; }
  const IoModel& io() const { return io_; }
  const Monitor& monitor(SandboxId id) const;
  const ChannelRegistry& channels() const { return channels_; }
  std::uint64_t ram_base(SandboxId id) const;  // byte address

  // Inserts an event that does nothing; event ordering must be unaffected.
  void schedule_noop(Time t);

 private:
  struct Event {
    Time t = 0;
    std::uint64_t seq = 0;
    enum class Kind {
      ThreadArrival,
      IrqFire,
      ChannelCreate,
      FaultInject,
      Replenish,
      SliceEnd,
      PciResume,
      Noop,
    } kind = Kind::Noop;
    SandboxId sandbox = -1;
    VcpuId vcpu = -1;
    int index = -1;  // thread id, generator index, channel/fault index
    Time amount = 0;
    PcpuId pcpu = -1;
    std::uint64_t gen = 0;
  };
  struct EventOrder {
    bool operator()(const Event& a, const Event& b) const {
      if (a.t != b.t) return a.t > b.t;
      return a.seq > b.seq;
    }
  };

  struct PcpuState {
    PcpuId id = -1;
    SandboxId owner = -1;
    std::vector<Vcpu*> vcpus;
    Vcpu* current = nullptr;
    bool current_fg = false;
    Time slice_start = 0;
    Time busy_until = 0;  // monitor occupancy blocks dispatch
    std::uint64_t resched_gen = 0;
  };

  struct ThreadState {
    ThreadSpec spec;
    SandboxId sandbox = -1;
    int fired = 0;
  };

  struct IrqGenState {
    InterruptGenSpec spec;
    int fired = 0;
    std::uint64_t rng = 0;
  };

  void setup();
  void setup_memory();
  void setup_devices();
  void setup_scheduling();
  void setup_workload();
  void snapshot_baseline();

  void push(Event e);
  void handle(const Event& e);

  void resched(PcpuState& p, Time now);
  void close_slice(PcpuState& p, Time now);
  void schedule_slice_end(PcpuState& p, Time t);

  Vcpu* find_vcpu(SandboxId sandbox, VcpuId id);
  Vcpu* io_vcpu_for(SandboxId sandbox, int irq);
  PcpuState& pcpu(PcpuId id);
  PcpuState& trap_pcpu(SandboxId sandbox);

  // Books monitor occupancy (trap cost then TLB-flush cost) on the
  // sandbox's core and returns the resolution plus the guest resume time.
  struct TrapReturn {
    TrapResolution resolution;
    Time entry;   // when the monitor took the trap
    Time resume;  // when the guest resumes
  };
  TrapReturn monitor_entry(SandboxId sandbox, TrapKind kind, std::string detail, Time now,
                           std::variant<TrapCtxEpt, TrapCtxPort, TrapCtxDebug, TrapCtxChannel> ctx);
  void book_occupancy(PcpuState& p, Vcpu* v, Time start, Time dur, SchedWork label);

  void handle_thread_arrival(const Event& e);
  void handle_irq_fire(const Event& e);
  void handle_channel_create(const Event& e);
  void handle_fault(const Event& e);
  void run_pci_probe(const FaultSpec& f, Time now);
  void handle_rogue_access(const FaultSpec& f, Time now);
  void handle_ioapic_hijack(const FaultSpec& f, Time now);

  void finalize(Time end);

  std::uint64_t next_exponential(std::uint64_t& state, Time mean);

  Scenario scenario_;
  MemoryModel memory_;
  IoModel io_;
  std::map<SandboxId, Monitor> monitors_;
  ChannelRegistry channels_;
  Trace trace_;

  std::priority_queue<Event, std::vector<Event>, EventOrder> queue_;
  std::uint64_t next_seq_ = 0;
  std::uint64_t next_work_seq_ = 0;

  std::vector<std::unique_ptr<Vcpu>> vcpus_;
  std::map<PcpuId, PcpuState> pcpus_;
  std::vector<ThreadState> threads_;
  std::vector<IrqGenState> irq_gens_;

  std::map<SandboxId, std::uint64_t> ram_base_;       // byte addresses
  std::map<SandboxId, std::uint64_t> channel_gpa_next_;
  std::map<SandboxId, std::uint64_t> instr_seq_;
  std::map<SandboxId, std::deque<int>> pending_pci_;  // deferred fault indices
  PageNum ioapic_hpa_page_ = 0;
  PageNum scratch_gva_page_ = page_of(0x7F0000000000ull);

  // Post-setup baselines for the containment sweep.
  std::map<PageNum, std::uint64_t> baseline_checksums_;
  std::vector<std::array<std::uint8_t, 256>> baseline_config_;
  std::vector<std::map<std::uint16_t, std::uint8_t>> baseline_port_regs_;
  std::vector<bool> device_dirtied_by_owner_;
  std::set<PageNum> dirtied_own_pages_;
  std::vector<RtEntry> expected_rt_;

  Counters tally_;
  bool ran_ = false;
};

Trace run_scenario(const Scenario& scenario);

}  // namespace sksim
