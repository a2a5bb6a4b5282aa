#include "sksim/engine.hpp"

#include <algorithm>
#include <cmath>

namespace sksim {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::string hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out = "0x";
  bool started = false;
  for (int shift = 60; shift >= 0; shift -= 4) {
    const int d = (v >> shift) & 0xF;
    if (d != 0 || started || shift == 0) {
      out += digits[d];
      started = true;
    }
  }
  return out;
}

}  // namespace

Engine::Engine(Scenario scenario) : scenario_(std::move(scenario)) { setup(); }

const Monitor& Engine::monitor(SandboxId id) const {
  auto it = monitors_.find(id);
  if (it == monitors_.end()) throw EngineError("unknown sandbox monitor");
  return it->second;
}

std::uint64_t Engine::ram_base(SandboxId id) const {
  auto it = ram_base_.find(id);
  if (it == ram_base_.end()) throw EngineError("unknown sandbox ram base");
  return it->second;
}

void Engine::schedule_noop(Time t) {
  Event e;
  e.t = t;
  e.kind = Event::Kind::Noop;
  push(e);
}

void Engine::push(Event e) {
  e.seq = next_seq_++;
  queue_.push(e);
}

void Engine::setup() {
  setup_memory();
  setup_devices();
  setup_scheduling();
  setup_workload();

  // Boot handoff: each monitor launches its guest, flushing translation
  // state on the way out. Counters start clean at t = 0.
  for (const SandboxSpec& sb : scenario_.sandboxes) {
    memory_.tlb_flush(sb.id);
    tally_.tlb_flushes[sb.id] = 1;
    tally_.monitor_entries[sb.id] = 0;
    instr_seq_[sb.id] = 0;
  }
  snapshot_baseline();
}

void Engine::setup_memory() {
  PageNum cursor = 0;
  for (const SandboxSpec& sb : scenario_.sandboxes) {
    memory_.add_sandbox(sb.id);
    const PageNum pages = sb.mem_bytes >> kPageShift;
    ram_base_[sb.id] = page_addr(cursor);
    channel_gpa_next_[sb.id] = sb.mem_bytes;
    for (PageNum off = 0; off < pages; off += kPagesPerSuperpage) {
      auto err = memory_.ept_map(sb.id, off, cursor + off, Permissions::rwx(),
                                 PageSize::k2M, false, OwnershipMode::Claim);
      if (err) throw EngineError("ram mapping failed: " + std::string(to_string(*err)));
    }
    cursor += pages;
  }

  channels_.set_pool(cursor, scenario_.platform.channel_pool_bytes >> kPageShift);
  cursor += scenario_.platform.channel_pool_bytes >> kPageShift;

  ioapic_hpa_page_ = cursor;
  memory_.register_system_pages(ioapic_hpa_page_, 1);
  cursor += 1;

  const PageNum window = io_.redirection_table().window_gpa_page;
  for (const SandboxSpec& sb : scenario_.sandboxes) {
    auto err = memory_.ept_map(sb.id, window, ioapic_hpa_page_, Permissions::deny_all(),
                               PageSize::k4K, false, OwnershipMode::SystemRef);
    if (err) throw EngineError("ioapic window mapping failed");
  }

  // Device register windows live far above RAM; owners get identity
  // GPA = HPA passthrough mappings.
  PageNum mmio_cursor = cursor + (1ull << 18);  // 1GB gap
  for (DeviceSpec& d : scenario_.platform.devices) {
    if (d.mmio_bytes == 0) continue;
    const PageNum pages = (d.mmio_bytes + kPageBytes - 1) >> kPageShift;
    const SandboxId owner = scenario_.device_owner(d.name);
    if (owner >= 0) {
      for (PageNum i = 0; i < pages; ++i) {
        auto err = memory_.ept_map(owner, mmio_cursor + i, mmio_cursor + i,
                                   Permissions::rw(), PageSize::k4K, false,
                                   OwnershipMode::Claim);
        if (err) throw EngineError("device mmio mapping failed");
      }
    }
    mmio_cursor += pages;
  }
}

void Engine::setup_devices() {
  for (const SandboxSpec& sb : scenario_.sandboxes) io_.add_sandbox(sb.id);

  std::vector<int> device_index;
  for (const DeviceSpec& d : scenario_.platform.devices) {
    PciDevice dev;
    dev.name = d.name;
    dev.vendor_id = d.vendor_id;
    dev.device_id = d.device_id;
    dev.bus = d.bus;
    dev.dev = d.dev;
    dev.func = d.func;
    dev.irq_line = d.irq;
    dev.ports = d.ports;
    dev.owner = scenario_.device_owner(d.name);
    device_index.push_back(io_.add_device(std::move(dev)));
  }

  // Port partitioning: everything traps except a sandbox's own device
  // registers. The PCI address port bypasses the bitmap check entirely;
  // the data port stays masked for everyone.
  for (const SandboxSpec& sb : scenario_.sandboxes) {
    for (int p = 0; p < 65536; ++p) io_.trap_set_add(sb.id, static_cast<std::uint16_t>(p));
    for (const std::string& name : sb.devices) {
      const PciDevice* dev = io_.find_device_by_name(name);
      for (const PortRange& r : dev->ports)
        for (int p = r.lo; p <= r.hi; ++p)
          io_.trap_set_remove(sb.id, static_cast<std::uint16_t>(p));
    }
  }

  RedirectionTable& rt = io_.redirection_table();
  for (int i = 0; i < rt.size(); ++i) rt.set_entry(i, RtEntry{i, {}, true});
  for (const DeviceSpec& d : scenario_.platform.devices) {
    const SandboxId owner = scenario_.device_owner(d.name);
    if (owner < 0 || d.irq < 0 || d.irq >= rt.size()) continue;
    rt.set_entry(d.irq, RtEntry{d.irq, {owner}, false});
  }

  for (const SandboxSpec& sb : scenario_.sandboxes) {
    std::set<std::pair<std::uint16_t, std::uint16_t>> blacklist;
    for (const DeviceSpec& d : scenario_.platform.devices)
      if (scenario_.device_owner(d.name) != sb.id)
        blacklist.insert({d.vendor_id, d.device_id});
    std::set<int> auth;
    if (sb.ioapic_authorization) {
      auth.insert(sb.ioapic_authorization->begin(), sb.ioapic_authorization->end());
    } else {
      for (const std::string& name : sb.devices) auth.insert(scenario_.find_device(name)->irq);
    }
    monitors_.emplace(sb.id, Monitor(sb.id, std::move(blacklist), std::move(auth)));
  }
}

void Engine::setup_scheduling() {
  for (const SandboxSpec& sb : scenario_.sandboxes) {
    for (PcpuId p : sb.pcpus) {
      PcpuState& st = pcpus_[p];
      st.id = p;
      st.owner = sb.id;
    }
    for (const VcpuSpec& vs : sb.vcpus) {
      auto v = std::make_unique<Vcpu>();
      v->id = vs.id;
      v->sandbox = sb.id;
      v->flavor = vs.flavor;
      v->params = {vs.budget, vs.period};
      v->pcpu = vs.pcpu;
      v->irq_lines.insert(vs.irqs.begin(), vs.irqs.end());
      v->budget_remaining = vs.budget;
      pcpus_[vs.pcpu].vcpus.push_back(v.get());
      vcpus_.push_back(std::move(v));
    }
  }
}

void Engine::setup_workload() {
  for (const SandboxSpec& sb : scenario_.sandboxes) {
    for (const ThreadSpec& ts : sb.threads) {
      ThreadState st;
      st.spec = ts;
      st.sandbox = sb.id;
      const int index = static_cast<int>(threads_.size());
      threads_.push_back(st);

      Event e;
      e.kind = Event::Kind::ThreadArrival;
      e.sandbox = sb.id;
      e.index = index;
      switch (ts.demand.kind) {
        case DemandSpec::Kind::Periodic: e.t = ts.demand.start; break;
        case DemandSpec::Kind::List: e.t = ts.demand.jobs.front().first; break;
        case DemandSpec::Kind::Busy: e.t = 0; break;
      }
      push(e);
    }
  }

  for (std::size_t i = 0; i < scenario_.interrupts.size(); ++i) {
    IrqGenState st;
    st.spec = scenario_.interrupts[i];
    st.rng = scenario_.run.seed ^ (0x9e3779b97f4a7c15ull * (i + 1));
    irq_gens_.push_back(st);

    Event e;
    e.kind = Event::Kind::IrqFire;
    e.index = static_cast<int>(i);
    e.t = st.spec.start;
    if (st.spec.kind == InterruptGenSpec::Kind::Poisson)
      e.t += next_exponential(irq_gens_.back().rng, st.spec.mean);
    push(e);
  }

  // Boot-time channels are installed before the clock starts and are part
  // of the bootstrap exemption: no traps, no counter movement.
  std::vector<int> boot;
  for (std::size_t i = 0; i < scenario_.channels.size(); ++i) {
    if (scenario_.channels[i].time < 0)
      boot.push_back(static_cast<int>(i));
    else {
      Event e;
      e.kind = Event::Kind::ChannelCreate;
      e.index = static_cast<int>(i);
      e.t = scenario_.channels[i].time;
      push(e);
    }
  }
  std::stable_sort(boot.begin(), boot.end(), [&](int a, int b) {
    return scenario_.channels[a].time < scenario_.channels[b].time;
  });
  for (int i : boot) {
    const ChannelSpec& c = scenario_.channels[i];
    std::uint64_t gpa_a = channel_gpa_next_[c.a];
    std::uint64_t gpa_b = channel_gpa_next_[c.b];
    channel_gpa_next_[c.a] += c.pages * kPageBytes;
    channel_gpa_next_[c.b] += c.pages * kPageBytes;
    auto result = create_channel(memory_, channels_, c.a, c.b, c.pages, c.perms_a, c.perms_b,
                                 gpa_a, gpa_b);
    if (std::holds_alternative<ChannelError>(result))
      throw EngineError("boot channel creation failed");
    const Channel& ch = std::get<Channel>(result);
    trace_.append(ChannelRecord{c.time, ch.id, ch.a, ch.b, ch.pages, ch.gpa_base_a,
                                ch.gpa_base_b});
  }

  for (std::size_t i = 0; i < scenario_.faults.size(); ++i) {
    Event e;
    e.kind = Event::Kind::FaultInject;
    e.index = static_cast<int>(i);
    e.t = scenario_.faults[i].time;
    push(e);
  }
}

void Engine::snapshot_baseline() {
  baseline_checksums_ = memory_.store().checksums();
  for (const PciDevice& d : io_.devices()) {
    baseline_config_.push_back(d.config);
    baseline_port_regs_.push_back(d.port_regs);
    device_dirtied_by_owner_.push_back(false);
  }
  expected_rt_ = io_.redirection_table().entries();
}

Trace Engine::run() {
  if (ran_) throw EngineError("engine instances run once");
  ran_ = true;
  const Time until = scenario_.run.until;

  // The run interval is half-open: events at exactly `until` never execute.
  while (!queue_.empty() && queue_.top().t < until) {
    const Event e = queue_.top();
    queue_.pop();
    handle(e);
  }

  finalize(until);
  return trace_;
}

void Engine::handle(const Event& e) {
  switch (e.kind) {
    case Event::Kind::ThreadArrival: handle_thread_arrival(e); break;
    case Event::Kind::IrqFire: handle_irq_fire(e); break;
    case Event::Kind::ChannelCreate: handle_channel_create(e); break;
    case Event::Kind::FaultInject: handle_fault(e); break;
    case Event::Kind::Replenish: resched(pcpu(e.pcpu), e.t); break;
    case Event::Kind::SliceEnd: {
      PcpuState& p = pcpu(e.pcpu);
      if (e.gen == p.resched_gen) resched(p, e.t);
      break;
    }
    case Event::Kind::PciResume: {
      // Another probe may have armed the single-step in the meantime; put
      // this one back at the head of the line.
      if (io_.mediation_phase(scenario_.faults[e.index].sandbox) != MediationPhase::Masked)
        pending_pci_[scenario_.faults[e.index].sandbox].push_front(e.index);
      else
        run_pci_probe(scenario_.faults[e.index], e.t);
      break;
    }
    case Event::Kind::Noop: break;
  }
}

Vcpu* Engine::find_vcpu(SandboxId sandbox, VcpuId id) {
  for (auto& v : vcpus_)
    if (v->sandbox == sandbox && v->id == id) return v.get();
  return nullptr;
}

Vcpu* Engine::io_vcpu_for(SandboxId sandbox, int irq) {
  for (auto& v : vcpus_)
    if (v->sandbox == sandbox && v->flavor == VcpuFlavor::Io && v->irq_lines.count(irq))
      return v.get();
  return nullptr;
}

Engine::PcpuState& Engine::pcpu(PcpuId id) {
  auto it = pcpus_.find(id);
  if (it == pcpus_.end()) throw EngineError("unknown pcpu");
  return it->second;
}

Engine::PcpuState& Engine::trap_pcpu(SandboxId sandbox) {
  const SandboxSpec* sb = scenario_.find_sandbox(sandbox);
  if (!sb) throw EngineError("unknown sandbox");
  for (PcpuId p : sb->pcpus) {
    PcpuState& st = pcpu(p);
    if (st.current != nullptr) return st;
  }
  return pcpu(sb->pcpus.front());
}

void Engine::schedule_slice_end(PcpuState& p, Time t) {
  ++p.resched_gen;
  if (t > scenario_.run.until) return;  // the final close handles it
  Event e;
  e.kind = Event::Kind::SliceEnd;
  e.pcpu = p.id;
  e.gen = p.resched_gen;
  e.t = t;
  push(e);
}

void Engine::close_slice(PcpuState& p, Time now) {
  if (!p.current) return;
  Vcpu* v = p.current;
  const bool fg = p.current_fg;
  const Time d = now - p.slice_start;
  p.current = nullptr;
  if (d == 0) return;
  if (d < 0) throw EngineError("slice closed before it started");

  Work& w = v->queue.front();
  if (fg) {
    const Time due = v->consume(d, scenario_.run.policy);
    if (due >= 0) {
      Event e;
      e.kind = Event::Kind::Replenish;
      e.pcpu = p.id;
      e.t = due;
      push(e);
    }
  }
  w.remaining -= d;
  trace_.append(SchedRecord{p.slice_start, now, p.id, v->sandbox, v->id,
                            w.kind == Work::Kind::Thread ? SchedWork::Thread
                                                         : SchedWork::Handler,
                            w.id, fg});
  if (w.remaining == 0) v->queue.pop_front();
  v->check_conservation();
}

void Engine::resched(PcpuState& p, Time now) {
  if (now < p.busy_until) {
    schedule_slice_end(p, p.busy_until);
    return;
  }
  close_slice(p, now);

  Vcpu* replenished = nullptr;
  for (Vcpu* v : p.vcpus) {
    if (v->apply_due_replenishments(now) && v->running_fg) replenished = v;
  }

  Vcpu* next = pick_next(p.vcpus);
  if (!next) {
    for (Vcpu* v : p.vcpus) v->running_fg = false;
    ++p.resched_gen;  // invalidate any stale slice end
    return;
  }

  const bool fg = next->mode() == VcpuMode::Foreground;
  if (fg && (!next->running_fg || replenished == next)) next->activation = now;
  for (Vcpu* v : p.vcpus) v->running_fg = (v == next && fg);

  p.current = next;
  p.current_fg = fg;
  p.slice_start = now;
  const Time cap = fg ? std::min(next->budget_remaining, next->queue.front().remaining)
                      : next->queue.front().remaining;
  schedule_slice_end(p, now + cap);
}

void Engine::book_occupancy(PcpuState& p, Vcpu* v, Time start, Time dur, SchedWork label) {
  if (dur <= 0) return;
  const Time end_cap = scenario_.run.until;
  const Time eff = std::min(start + dur, end_cap) - std::min(start, end_cap);
  if (eff <= 0) return;
  const Time t0 = std::min(start, end_cap);

  Time fg_part = 0;
  if (v && v->running_fg) fg_part = std::min(v->budget_remaining, eff);
  if (fg_part > 0) {
    const Time due = v->consume(fg_part, scenario_.run.policy);
    if (due >= 0) {
      Event e;
      e.kind = Event::Kind::Replenish;
      e.pcpu = p.id;
      e.t = due;
      push(e);
    }
    trace_.append(SchedRecord{t0, t0 + fg_part, p.id, p.owner, v->id, label, -1, true});
  }
  if (eff > fg_part)
    trace_.append(SchedRecord{t0 + fg_part, t0 + eff, p.id, p.owner, v ? v->id : -1, label,
                              -1, false});
}

Engine::TrapReturn Engine::monitor_entry(
    SandboxId sandbox, TrapKind kind, std::string detail, Time now,
    std::variant<TrapCtxEpt, TrapCtxPort, TrapCtxDebug, TrapCtxChannel> ctx) {
  PcpuState& p = trap_pcpu(sandbox);
  const Time start = std::max(now, p.busy_until);

  Vcpu* v = p.current;
  if (now >= p.busy_until) close_slice(p, now);

  Trap trap;
  trap.kind = kind;
  trap.sandbox = sandbox;
  trap.time = start;
  trap.ctx = std::move(ctx);

  trace_.append(TrapRecord{start, sandbox, kind, std::move(detail)});
  tally_.monitor_entries[sandbox]++;

  Monitor& m = monitors_.at(sandbox);
  const std::size_t logged_before = m.violation_log().size();
  TrapResolution res = m.handle_trap(trap, memory_, io_);
  for (std::size_t i = logged_before; i < m.violation_log().size(); ++i) {
    const ViolationEntry& ve = m.violation_log()[i];
    trace_.append(ViolationRecord{ve.time, ve.sandbox, ve.kind, ve.detail, ve.action});
    tally_.violations++;
  }

  book_occupancy(p, v, start, scenario_.costs.trap, SchedWork::MonitorTrap);
  book_occupancy(p, v, start + scenario_.costs.trap, scenario_.costs.tlb_flush,
                 SchedWork::TlbFlush);
  memory_.tlb_flush(sandbox);
  tally_.tlb_flushes[sandbox]++;

  // Whenever mediation is masked, the data port must be back in the trap
  // set; anything else is a protocol bug.
  if (io_.mediation_phase(sandbox) == MediationPhase::Masked &&
      !io_.traps(sandbox, io_.pci_data_port()))
    throw EngineError("pci data port unmasked outside a single-step");

  const Time resume = start + scenario_.costs.trap + scenario_.costs.tlb_flush;
  p.busy_until = resume;
  schedule_slice_end(p, resume);
  return {std::move(res), start, resume};
}

void Engine::handle_thread_arrival(const Event& e) {
  ThreadState& st = threads_[e.index];
  Vcpu* v = find_vcpu(st.sandbox, st.spec.vcpu);
  if (!v) throw EngineError("thread bound to unknown vcpu");

  Time compute = 0;
  switch (st.spec.demand.kind) {
    case DemandSpec::Kind::Periodic: compute = st.spec.demand.compute; break;
    case DemandSpec::Kind::List: compute = st.spec.demand.jobs[st.fired].second; break;
    case DemandSpec::Kind::Busy: compute = kInfiniteWork; break;
  }
  v->queue.push_back(Work{Work::Kind::Thread, st.spec.id, e.t, compute, next_work_seq_++});
  st.fired++;

  Event next = e;
  switch (st.spec.demand.kind) {
    case DemandSpec::Kind::Periodic:
      if (st.spec.demand.count < 0 || st.fired < st.spec.demand.count) {
        next.t = e.t + st.spec.demand.period;
        push(next);
      }
      break;
    case DemandSpec::Kind::List:
      if (st.fired < static_cast<int>(st.spec.demand.jobs.size())) {
        next.t = st.spec.demand.jobs[st.fired].first;
        push(next);
      }
      break;
    case DemandSpec::Kind::Busy: break;
  }

  resched(pcpu(v->pcpu), e.t);
}

void Engine::handle_irq_fire(const Event& e) {
  IrqGenState& g = irq_gens_[e.index];
  const DeviceSpec* dev = scenario_.find_device(g.spec.device);
  const int irq = dev->irq;

  IrqRecord rec;
  rec.t = e.t;
  rec.irq = irq;
  for (SandboxId dest : route_interrupt(irq, io_.redirection_table())) {
    Vcpu* v = io_vcpu_for(dest, irq);
    if (!v) {
      rec.dropped.push_back(dest);
      const std::string w = "irq " + std::to_string(irq) + " has no io vcpu in sandbox " +
                            std::to_string(dest) + "; interrupt dropped";
      if (std::find(trace_.meta.warnings.begin(), trace_.meta.warnings.end(), w) ==
          trace_.meta.warnings.end())
        trace_.meta.warnings.push_back(w);
      continue;
    }
    v->queue.push_back(Work{Work::Kind::Handler, irq, e.t, g.spec.handler, next_work_seq_++});
    rec.delivered.push_back(dest);
    resched(pcpu(v->pcpu), e.t);
  }
  tally_.irqs_delivered += rec.delivered.size();
  trace_.append(rec);

  g.fired++;
  if (g.spec.count < 0 || g.fired < g.spec.count) {
    Event next = e;
    next.t = e.t + (g.spec.kind == InterruptGenSpec::Kind::Periodic
                        ? g.spec.period
                        : next_exponential(g.rng, g.spec.mean));
    push(next);
  }
}

void Engine::handle_channel_create(const Event& e) {
  const ChannelSpec& c = scenario_.channels[e.index];
  std::uint64_t gpa_a = channel_gpa_next_[c.a];
  std::uint64_t gpa_b = channel_gpa_next_[c.b];
  channel_gpa_next_[c.a] += c.pages * kPageBytes;
  channel_gpa_next_[c.b] += c.pages * kPageBytes;

  auto result = create_channel(memory_, channels_, c.a, c.b, c.pages, c.perms_a, c.perms_b,
                               gpa_a, gpa_b);
  if (std::holds_alternative<ChannelError>(result))
    throw EngineError("runtime channel creation failed");
  const Channel& ch = std::get<Channel>(result);
  trace_.append(ChannelRecord{e.t, ch.id, ch.a, ch.b, ch.pages, ch.gpa_base_a, ch.gpa_base_b});

  // Establishing the mapping is the sanctioned monitor entry on each side.
  monitor_entry(c.a, TrapKind::ChannelSetup, "channel " + std::to_string(ch.id), e.t,
                TrapCtxChannel{ch.id});
  monitor_entry(c.b, TrapKind::ChannelSetup, "channel " + std::to_string(ch.id), e.t,
                TrapCtxChannel{ch.id});
}

void Engine::handle_fault(const Event& e) {
  const FaultSpec& f = scenario_.faults[e.index];
  trace_.meta.isolation.faults_injected++;
  switch (f.kind) {
    case FaultSpec::Kind::RogueRead:
    case FaultSpec::Kind::RogueWrite:
      handle_rogue_access(f, e.t);
      break;
    case FaultSpec::Kind::PciProbe:
      if (io_.mediation_phase(f.sandbox) != MediationPhase::Masked) {
        pending_pci_[f.sandbox].push_back(e.index);
        return;
      }
      run_pci_probe(f, e.t);
      break;
    case FaultSpec::Kind::IoapicHijack:
      handle_ioapic_hijack(f, e.t);
      break;
  }
}

void Engine::handle_rogue_access(const FaultSpec& f, Time now) {
  const SandboxId s = f.sandbox;
  const Access access = f.kind == FaultSpec::Kind::RogueWrite ? Access::Write : Access::Read;
  // A sandbox cannot name foreign memory through its own EPT; the attempt
  // shows up as a guest mapping to a GPA its second stage never covers.
  const std::uint64_t gpa =
      f.gpa ? *f.gpa : (1ull << 46) + ram_base_.at(*f.victim) + f.victim_offset;

  const std::uint64_t instr = ++instr_seq_[s];
  memory_.guest_map(s, scratch_gva_page_, page_of(gpa), Permissions::rwx());
  const std::uint64_t gva = page_addr(scratch_gva_page_) | page_offset(gpa);
  const AccessOutcome outcome = memory_.translate(s, gva, access);

  XlateRecord rec;
  rec.t = now;
  rec.sandbox = s;
  rec.gva = gva;
  rec.gpa = gpa;
  rec.access = access;
  rec.instr = instr;

  if (const auto* ok = std::get_if<AccessOk>(&outcome)) {
    rec.hpa = ok->hpa;
    rec.outcome = XlateOutcome::Ok;
    trace_.append(rec);
    // Only possible when the fault names a GPA inside the sandbox's own
    // partition; anything else is an isolation escape.
    auto owner = memory_.ownership().owner_of(page_of(ok->hpa));
    const bool own = owner && owner->kind == HpaOwner::Kind::Sandbox && owner->id == s;
    if (access == Access::Write) memory_.store().write(ok->hpa, 0x42);
    if (own) {
      if (access == Access::Write) dirtied_own_pages_.insert(page_of(ok->hpa));
      trace_.meta.isolation.faults_contained++;
    } else {
      trace_.meta.isolation.escapes++;
      trace_.meta.isolation.details.push_back(
          "rogue access by sandbox " + std::to_string(s) + " reached hpa " + hex(ok->hpa));
    }
  } else if (std::holds_alternative<GuestPageFault>(outcome)) {
    rec.outcome = XlateOutcome::GuestFault;
    trace_.append(rec);
    trace_.meta.isolation.faults_contained++;  // stays inside the guest
  } else {
    rec.outcome = XlateOutcome::EptViolation;
    trace_.append(rec);
    monitor_entry(s, TrapKind::EptViolation,
                  std::string(to_string(access)) + " gpa " + hex(gpa), now,
                  TrapCtxEpt{gva, gpa, access, std::nullopt});
    trace_.meta.isolation.faults_contained++;
  }
  memory_.guest_unmap(s, scratch_gva_page_);
}

void Engine::run_pci_probe(const FaultSpec& f, Time now) {
  const SandboxId s = f.sandbox;
  PciConfigTarget target;
  if (f.bdf) {
    target = *f.bdf;
  } else {
    const PciDevice* dev = io_.find_device_by_name(f.device);
    if (!dev) throw EngineError("pci probe names unknown device");
    target
        = PciConfigTarget{dev->bus, dev->dev, dev->func, 0};
  }
  target.offset = f.pci_offset & 0xFC;

  const std::uint32_t addr_word = 0x80000000u | (std::uint32_t(target.bus) << 16) |
                                  (std::uint32_t(target.dev) << 11) |
                                  (std::uint32_t(target.func) << 8) | target.offset;

  // out to the address port latches and never traps.
  std::uint64_t instr = ++instr_seq_[s];
  io_.io_port_access(s, io_.pci_address_port(), Direction::Out, 4, addr_word);
  trace_.append(PortRecord{now, s, io_.pci_address_port(), Direction::Out, 4, addr_word,
                           false, instr});

  const std::uint16_t data_port =
      static_cast<std::uint16_t>(io_.pci_data_port() + (f.pci_offset & 3));
  instr = ++instr_seq_[s];
  const PortAccessResult attempt = io_.io_port_access(s, data_port, f.dir, f.width, f.value);
  if (!std::holds_alternative<PortTrapped>(attempt))
    throw EngineError("pci data port access did not trap");
  trace_.append(PortRecord{now, s, data_port, f.dir, f.width, f.value, true, instr});

  TrapReturn tr = monitor_entry(s, TrapKind::IoPortTrap,
                                "pci data port " + std::string(to_string(f.dir)), now,
                                TrapCtxPort{data_port, f.dir, f.width, f.value});

  const PciDevice* dev = io_.find_device(target.bus, target.dev, target.func);
  const bool foreign = !dev || dev->owner != s;

  PciRecord rec;
  rec.sandbox = s;
  rec.bus = target.bus;
  rec.dev = target.dev;
  rec.func = target.func;
  rec.offset = static_cast<std::uint8_t>(target.offset + (f.pci_offset & 3));
  rec.dir = f.dir;
  rec.width = f.width;
  rec.instr = instr;

  switch (tr.resolution.action) {
    case TrapResolution::Action::PciDenied: {
      rec.t = tr.entry;
      rec.value = f.dir == Direction::In ? tr.resolution.value : f.value;
      if (!dev)
        rec.outcome = PciOutcome::DeniedAbsent;
      else
        rec.outcome = PciOutcome::DeniedBlacklist;
      trace_.append(rec);
      trace_.meta.isolation.faults_contained++;
      break;
    }
    case TrapResolution::Action::PciAllowArmed: {
      rec.t = tr.entry;
      rec.value = 0;
      rec.outcome = PciOutcome::Allowed;
      trace_.append(rec);
      if (foreign) {
        trace_.meta.isolation.escapes++;
        trace_.meta.isolation.details.push_back(
            "blacklisted pci config access allowed for sandbox " + std::to_string(s));
      } else {
        trace_.meta.isolation.faults_contained++;
      }

      // Guest re-executes the one I/O instruction with the port unmasked.
      const PortAccessResult redo = io_.io_port_access(s, data_port, f.dir, f.width, f.value);
      const auto* direct = std::get_if<PortDirect>(&redo);
      if (!direct) throw EngineError("armed single-step still trapped");
      PciRecord done = rec;
      done.t = tr.resume;
      done.value = direct->value;
      done.outcome = PciOutcome::Completed;
      trace_.append(done);
      if (f.dir == Direction::Out && dev && dev->owner == s) {
        auto& devices = io_.devices();
        for (std::size_t i = 0; i < devices.size(); ++i)
          if (&devices[i] == dev) device_dirtied_by_owner_[i] = true;
      }

      TrapReturn dbg = monitor_entry(s, TrapKind::DebugException, "single-step back to monitor",
                                     tr.resume, TrapCtxDebug{});
      if (dbg.resolution.action != TrapResolution::Action::SingleStepDone)
        throw EngineError("debug exception resolved unexpectedly");

      if (!pending_pci_[s].empty()) {
        Event next;
        next.kind = Event::Kind::PciResume;
        next.index = pending_pci_[s].front();
        pending_pci_[s].pop_front();
        next.t = dbg.resume;
        push(next);
      }
      break;
    }
    default:
      throw EngineError("pci trap resolved unexpectedly");
  }
}

void Engine::handle_ioapic_hijack(const FaultSpec& f, Time now) {
  const SandboxId s = f.sandbox;
  RedirectionTable& rt = io_.redirection_table();

  const std::uint64_t instr = ++instr_seq_[s];
  memory_.guest_map(s, scratch_gva_page_, rt.window_gpa_page, Permissions::rwx());
  const std::uint64_t offset = static_cast<std::uint64_t>(std::max(f.entry_index, 0)) * 16;
  const std::uint64_t gva = page_addr(scratch_gva_page_) | (offset & (kPageBytes - 1));
  const std::uint64_t gpa = page_addr(rt.window_gpa_page) | (offset & (kPageBytes - 1));

  const AccessOutcome outcome = memory_.translate(s, gva, Access::Write);
  if (!std::holds_alternative<EptViolation>(outcome))
    throw EngineError("ioapic window access did not fault");

  XlateRecord rec;
  rec.t = now;
  rec.sandbox = s;
  rec.gva = gva;
  rec.gpa = gpa;
  rec.access = Access::Write;
  rec.outcome = XlateOutcome::EptViolation;
  rec.instr = instr;
  trace_.append(rec);

  TrapReturn tr = monitor_entry(
      s, TrapKind::EptViolation, "write to interrupt controller window", now,
      TrapCtxEpt{gva, gpa, Access::Write, IoapicUpdate{f.entry_index, f.entry}});

  IoapicRecord io_rec;
  io_rec.t = tr.entry;
  io_rec.sandbox = s;
  io_rec.index = f.entry_index;
  io_rec.applied = tr.resolution.action == TrapResolution::Action::IoapicApplied;
  io_rec.detail = tr.resolution.detail;
  trace_.append(io_rec);

  // Ground truth for the escape sweep, derived from the scenario rather
  // than the monitor's own decision.
  std::set<int> truth_auth;
  const SandboxSpec* sb = scenario_.find_sandbox(s);
  if (sb->ioapic_authorization) {
    truth_auth.insert(sb->ioapic_authorization->begin(), sb->ioapic_authorization->end());
  } else {
    for (const std::string& name : sb->devices) truth_auth.insert(scenario_.find_device(name)->irq);
  }
  bool authorized = f.entry_index >= 0 && f.entry_index < rt.size();
  if (authorized) {
    const int current_line = expected_rt_[f.entry_index].irq_line;
    if (current_line >= 0 && !truth_auth.count(current_line)) authorized = false;
    if (f.entry.irq_line >= 0 && !truth_auth.count(f.entry.irq_line)) authorized = false;
  }

  if (io_rec.applied) {
    if (authorized) {
      expected_rt_[f.entry_index] = f.entry;
      trace_.meta.isolation.faults_contained++;
    } else {
      trace_.meta.isolation.escapes++;
      trace_.meta.isolation.details.push_back(
          "unauthorized redirection update applied for sandbox " + std::to_string(s));
    }
  } else {
    trace_.meta.isolation.faults_contained++;
  }

  memory_.guest_unmap(s, scratch_gva_page_);
}

void Engine::finalize(Time end) {
  for (auto& [id, p] : pcpus_) {
    (void)id;
    close_slice(p, std::max(end, p.slice_start));
  }

  trace_.meta.scenario = scenario_.name;
  trace_.meta.seed = scenario_.run.seed;
  trace_.meta.until = end;
  for (const auto& v : vcpus_)
    trace_.meta.vcpus.push_back(VcpuInfo{v->sandbox, v->id, v->pcpu,
                                         v->flavor == VcpuFlavor::Io, v->params.budget,
                                         v->params.period});
  trace_.meta.channel_registry = channels_.channels();
  trace_.meta.isolation.checked = true;

  auto escape = [&](const std::string& detail) {
    trace_.meta.isolation.escapes++;
    trace_.meta.isolation.details.push_back(detail);
  };

  if (auto breach = memory_.check_hpa_disjointness()) escape("hpa disjointness: " + *breach);

  // Channel mappings must still be exactly what creation installed.
  for (const Channel& c : channels_.channels()) {
    struct End {
      SandboxId sb;
      std::uint64_t gpa;
      Permissions perms;
    };
    for (const End& ep : {End{c.a, c.gpa_base_a, c.perms_a}, End{c.b, c.gpa_base_b, c.perms_b}}) {
      for (std::uint64_t i = 0; i < c.pages; ++i) {
        auto hit = memory_.ept(ep.sb).lookup(page_of(ep.gpa) + i);
        if (!hit || !hit->immutable || hit->hpa_page != c.hpa_first + i ||
            !(hit->perms == ep.perms))
          escape("channel " + std::to_string(c.id) + " mapping changed in sandbox " +
                 std::to_string(ep.sb));
      }
    }
  }

  // Memory sweep: no page checksum may move unless its owner wrote it.
  for (const auto& [page, sum] : memory_.store().checksums()) {
    auto it = baseline_checksums_.find(page);
    const std::uint64_t before = it == baseline_checksums_.end() ? 0 : it->second;
    if (sum != before && !dirtied_own_pages_.count(page))
      escape("ram page " + hex(page_addr(page)) + " modified");
  }
  for (const auto& [page, sum] : baseline_checksums_) {
    if (!memory_.store().checksums().count(page) && sum != 0)
      escape("ram page " + hex(page_addr(page)) + " checksum vanished");
  }

  const auto& devices = io_.devices();
  for (std::size_t i = 0; i < devices.size(); ++i) {
    if (device_dirtied_by_owner_[i]) continue;
    if (devices[i].config != baseline_config_[i])
      escape("device " + devices[i].name + " config space modified");
    if (devices[i].port_regs != baseline_port_regs_[i])
      escape("device " + devices[i].name + " port registers modified");
  }

  const auto& rt = io_.redirection_table();
  for (int i = 0; i < rt.size(); ++i) {
    if (!(rt.entry(i) == expected_rt_[i]))
      escape("redirection entry " + std::to_string(i) + " diverged from authorized state");
  }

  trace_.sort_by_time();
  if (!trace_.is_time_ordered()) throw EngineError("trace is not time ordered");

  trace_.counters = tally_;
  const Counters recount = trace_.recount();
  if (!(recount == tally_))
    throw EngineError("live counters disagree with the record stream");
}

std::uint64_t Engine::next_exponential(std::uint64_t& state, Time mean) {
  const double u =
      static_cast<double>(splitmix64(state) >> 11) * (1.0 / 9007199254740992.0);  // [0,1)
  const double dt = -static_cast<double>(mean) * std::log(1.0 - u);
  const double clamped = std::max(1.0, std::min(dt, 9e15));
  return static_cast<std::uint64_t>(std::llround(clamped));
}

Trace run_scenario(const Scenario& scenario) {
  Engine engine(scenario);
  return engine.run();
}

}  // namespace sksim
