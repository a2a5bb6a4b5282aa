#include "sksim/io.hpp"

#include <algorithm>

namespace sksim {

const char* to_string(Direction d) { return d == Direction::In ? "in" : "out"; }

void PciDevice::reset_config() {
  config.fill(0);
  config[0x00] = static_cast<std::uint8_t>(vendor_id);
  config[0x01] = static_cast<std::uint8_t>(vendor_id >> 8);
  config[0x02] = static_cast<std::uint8_t>(device_id);
  config[0x03] = static_cast<std::uint8_t>(device_id >> 8);
  config[0x3C] = static_cast<std::uint8_t>(irq_line >= 0 ? irq_line : 0xFF);
}

std::uint32_t PciDevice::config_read(std::uint8_t offset, int width) const {
  std::uint32_t v = 0;
  for (int i = width - 1; i >= 0; --i) {
    const int at = offset + i;
    v = (v << 8) | (at < 256 ? config[at] : 0xFF);
  }
  return v;
}

void PciDevice::config_write(std::uint8_t offset, int width, std::uint32_t value) {
  for (int i = 0; i < width; ++i) {
    const int at = offset + i;
    if (at >= 4 && at < 256) config[at] = static_cast<std::uint8_t>(value >> (8 * i));
  }
}

std::optional<PciConfigTarget> pci_decode(std::uint32_t word) {
  if (!(word & 0x80000000u)) return std::nullopt;
  PciConfigTarget t;
  t.bus = static_cast<std::uint8_t>((word >> 16) & 0xFF);
  t.dev = static_cast<std::uint8_t>((word >> 11) & 0x1F);
  t.func = static_cast<std::uint8_t>((word >> 8) & 0x07);
  t.offset = static_cast<std::uint8_t>(word & 0xFC);
  return t;
}

std::vector<SandboxId> route_interrupt(int irq_line, const RedirectionTable& table) {
  std::set<SandboxId> dests;
  for (const RtEntry& e : table.entries()) {
    if (e.masked || e.irq_line != irq_line) continue;
    dests.insert(e.destinations.begin(), e.destinations.end());
  }
  return {dests.begin(), dests.end()};
}

IoapicWriteResult ioapic_write(RedirectionTable& table, SandboxId sandbox, int index,
                               const RtEntry& entry, const std::set<int>& authorized_irqs) {
  if (index < 0 || index >= table.size()) return IoapicWriteResult::DeniedBadIndex;
  const RtEntry& current = table.entry(index);
  if (current.irq_line >= 0 && !authorized_irqs.count(current.irq_line))
    return IoapicWriteResult::DeniedUnauthorized;
  if (entry.irq_line >= 0 && !authorized_irqs.count(entry.irq_line))
    return IoapicWriteResult::DeniedUnauthorized;
  (void)sandbox;
  table.set_entry(index, entry);
  return IoapicWriteResult::Applied;
}

void IoModel::add_sandbox(SandboxId id) { sandboxes_.try_emplace(id); }

int IoModel::add_device(PciDevice dev) {
  dev.reset_config();
  devices_.push_back(std::move(dev));
  return static_cast<int>(devices_.size()) - 1;
}

const PciDevice* IoModel::find_device(std::uint8_t bus, std::uint8_t dev,
                                      std::uint8_t func) const {
  for (const auto& d : devices_)
    if (d.bus == bus && d.dev == dev && d.func == func) return &d;
  return nullptr;
}

const PciDevice* IoModel::find_device_by_name(const std::string& name) const {
  for (const auto& d : devices_)
    if (d.name == name) return &d;
  return nullptr;
}

IoModel::PerSandbox& IoModel::sb(SandboxId id) {
  auto it = sandboxes_.find(id);
  if (it == sandboxes_.end()) throw EngineError("unknown sandbox in io model");
  return it->second;
}

const IoModel::PerSandbox& IoModel::sb(SandboxId id) const {
  auto it = sandboxes_.find(id);
  if (it == sandboxes_.end()) throw EngineError("unknown sandbox in io model");
  return it->second;
}

void IoModel::trap_set_add(SandboxId id, std::uint16_t port) { sb(id).trap_on.set(port); }
void IoModel::trap_set_remove(SandboxId id, std::uint16_t port) { sb(id).trap_on.reset(port); }
bool IoModel::traps(SandboxId id, std::uint16_t port) const { return sb(id).trap_on.test(port); }

int IoModel::device_at_port(std::uint16_t port) const {
  for (std::size_t i = 0; i < devices_.size(); ++i)
    for (const PortRange& r : devices_[i].ports)
      if (r.contains(port)) return static_cast<int>(i);
  return -1;
}

PortAccessResult IoModel::io_port_access(SandboxId id, std::uint16_t port, Direction dir,
                                         int width, std::uint32_t value) {
  auto& s = sb(id);

  // The config address port is per-sandbox latched state and never traps.
  if (port >= pci_address_port_ && port < pci_address_port_ + 4) {
    if (dir == Direction::Out) {
      s.latched_addr = value;  // dword writes only, per mechanism #1
      return PortDirect{value};
    }
    return PortDirect{s.latched_addr};
  }

  if (s.trap_on.test(port)) return PortTrapped{};

  if (is_pci_data_port(port)) {
    // Reached only while this sandbox's single-step is armed (or if a
    // scenario deliberately unmasks config ports).
    auto target = pci_decode(s.latched_addr);
    if (!target) return PortDirect{dir == Direction::In ? all_ones(width) : value};
    const std::uint8_t offset =
        static_cast<std::uint8_t>(target->offset + (port - pci_data_port_));
    for (auto& d : devices_) {
      if (d.bus == target->bus && d.dev == target->dev && d.func == target->func) {
        if (dir == Direction::In) return PortDirect{d.config_read(offset, width)};
        d.config_write(offset, width, value);
        return PortDirect{value};
      }
    }
    return PortDirect{dir == Direction::In ? all_ones(width) : value};
  }

  const int di = device_at_port(port);
  if (di < 0) return PortDirect{dir == Direction::In ? all_ones(width) : value};
  PciDevice& d = devices_[di];
  if (dir == Direction::In) {
    std::uint32_t v = 0;
    for (int i = width - 1; i >= 0; --i) {
      auto it = d.port_regs.find(static_cast<std::uint16_t>(port + i));
      v = (v << 8) | (it == d.port_regs.end() ? 0 : it->second);
    }
    return PortDirect{v};
  }
  for (int i = 0; i < width; ++i)
    d.port_regs[static_cast<std::uint16_t>(port + i)] =
        static_cast<std::uint8_t>(value >> (8 * i));
  return PortDirect{value};
}

std::uint32_t IoModel::latched_config_address(SandboxId id) const { return sb(id).latched_addr; }

MediationPhase IoModel::mediation_phase(SandboxId id) const { return sb(id).phase; }

const std::optional<PendingPciAccess>& IoModel::pending_access(SandboxId id) const {
  return sb(id).pending;
}

IoModel::MediationDecision IoModel::mediate_pci(
    SandboxId id, Direction dir, int width, std::uint32_t value, std::uint16_t port,
    const std::set<std::pair<std::uint16_t, std::uint16_t>>& blacklist) {
  auto& s = sb(id);
  if (s.phase != MediationPhase::Masked)
    throw EngineError("mediate_pci while a single-step is already armed");

  const std::uint32_t deny_value = dir == Direction::In ? all_ones(width) : 0;
  auto target = pci_decode(s.latched_addr);
  if (!target) return MediationDeny{deny_value, "config address not enabled"};

  int device_index = -1;
  for (std::size_t i = 0; i < devices_.size(); ++i) {
    const auto& d = devices_[i];
    if (d.bus == target->bus && d.dev == target->dev && d.func == target->func) {
      device_index = static_cast<int>(i);
      break;
    }
  }
  if (device_index < 0) return MediationDeny{deny_value, "no device at decoded address"};

  const PciDevice& d = devices_[device_index];
  if (blacklist.count({d.vendor_id, d.device_id}))
    return MediationDeny{deny_value, "device blacklisted for sandbox"};

  for (std::uint16_t p = pci_data_port_; p < pci_data_port_ + 4; ++p) s.trap_on.reset(p);
  s.phase = MediationPhase::SingleStepArmed;
  s.pending = PendingPciAccess{*target, device_index, dir, width, value, port};
  return MediationAllow{*target};
}

void IoModel::complete_single_step(SandboxId id) {
  auto& s = sb(id);
  if (s.phase != MediationPhase::SingleStepArmed)
    throw EngineError("debug exception with no armed single-step");
  for (std::uint16_t p = pci_data_port_; p < pci_data_port_ + 4; ++p) s.trap_on.set(p);
  s.phase = MediationPhase::Masked;
  s.pending.reset();
}

}  // namespace sksim
