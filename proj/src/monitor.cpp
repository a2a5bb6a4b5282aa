#include "sksim/monitor.hpp"

namespace sksim {

const char* to_string(TrapKind k) {
  switch (k) {
    case TrapKind::EptViolation: return "ept_violation";
    case TrapKind::IoPortTrap: return "io_port_trap";
    case TrapKind::DebugException: return "debug_exception";
    case TrapKind::ChannelSetup: return "channel_setup";
  }
  return "?";
}

void Monitor::log(Time t, const std::string& kind, const std::string& detail,
                  const std::string& action) {
  violation_log_.push_back(ViolationEntry{t, sandbox_, kind, detail, action});
}

TrapResolution Monitor::handle_trap(const Trap& trap, MemoryModel& memory, IoModel& io) {
  if (trap.sandbox != sandbox_) throw EngineError("trap routed to wrong monitor");
  ++monitor_entries_;

  switch (trap.kind) {
    case TrapKind::EptViolation: {
      const auto& ctx = std::get<TrapCtxEpt>(trap.ctx);
      const PageNum gpa_page = page_of(ctx.gpa);
      const RedirectionTable& rt = io.redirection_table();
      if (gpa_page == rt.window_gpa_page && ctx.ioapic) {
        const auto result = ioapic_write(io.redirection_table(), sandbox_, ctx.ioapic->index,
                                         ctx.ioapic->entry, ioapic_auth_);
        if (result == IoapicWriteResult::Applied)
          return {TrapResolution::Action::IoapicApplied, 0,
                  "redirection entry " + std::to_string(ctx.ioapic->index) + " updated"};
        const char* why = result == IoapicWriteResult::DeniedBadIndex
                              ? "redirection index out of range"
                              : "sandbox not authorized for irq line";
        log(trap.time, "ioapic_write", why, "dropped");
        return {TrapResolution::Action::IoapicDenied, 0, why};
      }
      // Catch-all second-stage violation: log and deny. Reads observe
      // all-ones; the faulting instruction is treated as a no-op.
      log(trap.time, "ept_violation",
          "gpa 0x" + std::to_string(ctx.gpa) + " " + to_string(ctx.access), "denied");
      return {TrapResolution::Action::MemoryDenied, 0xFFFFFFFFu, "access denied"};
    }

    case TrapKind::IoPortTrap: {
      const auto& ctx = std::get<TrapCtxPort>(trap.ctx);
      if (io.is_pci_data_port(ctx.port)) {
        auto decision = io.mediate_pci(sandbox_, ctx.dir, ctx.width, ctx.value, ctx.port,
                                       blacklist_);
        if (auto* deny = std::get_if<IoModel::MediationDeny>(&decision)) {
          log(trap.time, "pci_config", deny->reason, "denied");
          return {TrapResolution::Action::PciDenied, deny->value, deny->reason};
        }
        return {TrapResolution::Action::PciAllowArmed, 0, "single-step armed"};
      }
      log(trap.time, "io_port",
          std::string(to_string(ctx.dir)) + " port 0x" + std::to_string(ctx.port),
          "denied");
      return {TrapResolution::Action::PortDenied,
              ctx.dir == Direction::In ? all_ones(ctx.width) : 0, "port not owned"};
    }

    case TrapKind::DebugException:
      io.complete_single_step(sandbox_);
      return {TrapResolution::Action::SingleStepDone, 0, "data port re-masked"};

    case TrapKind::ChannelSetup: {
      const auto& ctx = std::get<TrapCtxChannel>(trap.ctx);
      (void)memory;
      return {TrapResolution::Action::ChannelEstablished, 0,
              "channel " + std::to_string(ctx.channel_id)};
    }
  }
  throw EngineError("unhandled trap kind");
}

void ChannelRegistry::set_pool(PageNum first, std::uint64_t pages) {
  pool_next_ = first;
  pool_end_ = first + pages;
}

PageNum ChannelRegistry::allocate(std::uint64_t pages) {
  if (pool_available() < pages) throw EngineError("channel pool exhausted");
  const PageNum first = pool_next_;
  pool_next_ += pages;
  return first;
}

Channel& ChannelRegistry::add(Channel c) {
  c.id = static_cast<int>(channels_.size());
  channels_.push_back(c);
  return channels_.back();
}

std::variant<Channel, ChannelError> create_channel(MemoryModel& memory,
                                                   ChannelRegistry& registry, SandboxId a,
                                                   SandboxId b, std::uint64_t n_pages,
                                                   Permissions perms_a, Permissions perms_b,
                                                   std::uint64_t gpa_base_a,
                                                   std::uint64_t gpa_base_b) {
  if (n_pages == 0) throw std::invalid_argument("channel needs at least one page");
  if (!memory.has_sandbox(a) || !memory.has_sandbox(b)) return ChannelError::SandboxUnknown;
  if (registry.pool_available() < n_pages) return ChannelError::PoolExhausted;

  const PageNum hpa_first = registry.allocate(n_pages);
  if (!memory.ownership().claim(hpa_first, n_pages, HpaOwner{HpaOwner::Kind::Channel, 0}))
    throw EngineError("channel pool pages already claimed");
  for (std::uint64_t i = 0; i < n_pages; ++i)
    memory.store().register_channel_page(hpa_first + i);

  struct Endpoint {
    SandboxId sb;
    std::uint64_t gpa_base;
    Permissions perms;
  };
  for (const Endpoint& ep : {Endpoint{a, gpa_base_a, perms_a}, Endpoint{b, gpa_base_b, perms_b}}) {
    for (std::uint64_t i = 0; i < n_pages; ++i) {
      auto err = memory.ept_map(ep.sb, page_of(ep.gpa_base) + i, hpa_first + i, ep.perms,
                                PageSize::k4K, /*immutable=*/true, OwnershipMode::ChannelRef);
      if (err) throw EngineError("channel mapping failed: " + std::string(to_string(*err)));
      // The sandbox kernel maps the new range into its own address space;
      // identity GVA = GPA keeps it simple.
      memory.guest_map(ep.sb, page_of(ep.gpa_base) + i, page_of(ep.gpa_base) + i,
                       Permissions::rwx());
    }
  }

  Channel c;
  c.a = a;
  c.b = b;
  c.hpa_first = hpa_first;
  c.pages = n_pages;
  c.gpa_base_a = gpa_base_a;
  c.gpa_base_b = gpa_base_b;
  c.perms_a = perms_a;
  c.perms_b = perms_b;
  return registry.add(c);
}

}  // namespace sksim
