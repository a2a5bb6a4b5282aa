#pragma once

#include <array>
#include <bitset>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "sksim/types.hpp"

namespace sksim {

enum class Direction { In, Out };

const char* to_string(Direction d);

constexpr std::uint32_t all_ones(int width) {
  return width >= 4 ? 0xFFFFFFFFu : ((1u << (8 * width)) - 1);
}

struct PortRange {
  std::uint16_t lo = 0;
  std::uint16_t hi = 0;  // inclusive
  bool contains(std::uint16_t p) const { return p >= lo && p <= hi; }
};

struct MmioRange {
  PageNum hpa_first = 0;
  std::uint64_t pages = 0;
};

// A device is a register file plus an interrupt line; there is no
// functional device behavior behind the registers.
struct PciDevice {
  std::string name;
  std::uint16_t vendor_id = 0;
  std::uint16_t device_id = 0;
  std::uint8_t bus = 0;
  std::uint8_t dev = 0;   // 0..31
  std::uint8_t func = 0;  // 0..7
  int irq_line = -1;
  std::vector<PortRange> ports;
  MmioRange mmio;
  SandboxId owner = -1;

  std::array<std::uint8_t, 256> config{};
  std::map<std::uint16_t, std::uint8_t> port_regs;

  void reset_config();
  std::uint32_t config_read(std::uint8_t offset, int width) const;
  // Offsets 0x00-0x03 (vendor/device id) are read-only.
  void config_write(std::uint8_t offset, int width, std::uint32_t value);
};

struct PciConfigTarget {
  std::uint8_t bus = 0;
  std::uint8_t dev = 0;
  std::uint8_t func = 0;
  std::uint8_t offset = 0;  // low two bits forced to zero

  bool operator==(const PciConfigTarget&) const = default;
};

// Config-address decoding: bit 31 enable, 16-23 bus, 11-15 device,
// 8-10 function, 0-7 register offset. Returns nothing when not enabled.
std::optional<PciConfigTarget> pci_decode(std::uint32_t address_word);

enum class MediationPhase { Masked, SingleStepArmed };

struct PendingPciAccess {
  PciConfigTarget target;
  int device_index = -1;
  Direction dir = Direction::In;
  int width = 4;
  std::uint32_t value = 0;  // value to write for Out
  std::uint16_t port = 0;
};

struct RtEntry {
  int irq_line = -1;
  std::set<SandboxId> destinations;
  bool masked = false;

  bool operator==(const RtEntry&) const = default;
};

class RedirectionTable {
 public:
  explicit RedirectionTable(int entries = 24) : entries_(entries) {}

  int size() const { return static_cast<int>(entries_.size()); }
  const RtEntry& entry(int index) const { return entries_.at(index); }
  void set_entry(int index, RtEntry e) { entries_.at(index) = std::move(e); }
  const std::vector<RtEntry>& entries() const { return entries_; }

  PageNum window_gpa_page = page_of(0xFEC00000ull);

 private:
  std::vector<RtEntry> entries_;
};

// Destinations of every unmasked entry matching the line, in sandbox-id
// order. Delivery never involves a monitor.
std::vector<SandboxId> route_interrupt(int irq_line, const RedirectionTable& table);

enum class IoapicWriteResult { Applied, DeniedUnauthorized, DeniedBadIndex };

// Applies an authorized redirection-table update. Authorization covers both
// the line currently in the entry and the line being written.
IoapicWriteResult ioapic_write(RedirectionTable& table, SandboxId sandbox, int index,
                               const RtEntry& entry, const std::set<int>& authorized_irqs);

struct PortDirect {
  std::uint32_t value = 0;
};
struct PortTrapped {};
using PortAccessResult = std::variant<PortDirect, PortTrapped>;

// Per-sandbox port partitioning plus the PCI config mediation state machine.
class IoModel {
 public:
  static constexpr std::uint16_t kDefaultPciAddressPort = 0xCF8;
  static constexpr std::uint16_t kDefaultPciDataPort = 0xCFC;

  IoModel(std::uint16_t pci_address_port = kDefaultPciAddressPort,
          std::uint16_t pci_data_port = kDefaultPciDataPort)
      : pci_address_port_(pci_address_port), pci_data_port_(pci_data_port) {}

  void add_sandbox(SandboxId id);
  int add_device(PciDevice dev);  // returns device index

  std::vector<PciDevice>& devices() { return devices_; }
  const std::vector<PciDevice>& devices() const { return devices_; }
  const PciDevice* find_device(std::uint8_t bus, std::uint8_t dev, std::uint8_t func) const;
  const PciDevice* find_device_by_name(const std::string& name) const;

  std::uint16_t pci_address_port() const { return pci_address_port_; }
  std::uint16_t pci_data_port() const { return pci_data_port_; }
  bool is_pci_data_port(std::uint16_t port) const {
    return port >= pci_data_port_ && port < pci_data_port_ + 4;
  }

  void trap_set_add(SandboxId id, std::uint16_t port);
  void trap_set_remove(SandboxId id, std::uint16_t port);
  bool traps(SandboxId id, std::uint16_t port) const;

  // A port access either completes against the register files or produces
  // a trap for the local monitor. Address-port writes always complete and
  // update the per-sandbox latch.
  PortAccessResult io_port_access(SandboxId id, std::uint16_t port, Direction dir,
                                  int width, std::uint32_t value = 0);

  std::uint32_t latched_config_address(SandboxId id) const;

  MediationPhase mediation_phase(SandboxId id) const;
  const std::optional<PendingPciAccess>& pending_access(SandboxId id) const;

  struct MediationDeny {
    std::uint32_t value;  // all-ones for reads
    std::string reason;
  };
  struct MediationAllow {
    PciConfigTarget target;
  };
  using MediationDecision = std::variant<MediationDeny, MediationAllow>;

  // Decides a trapped data-port access. Allow unmasks the data port, arms
  // the single-step, and records the pending access; Deny leaves the port
  // masked and the guest resumes past the instruction.
  MediationDecision mediate_pci(SandboxId id, Direction dir, int width, std::uint32_t value,
                                std::uint16_t port,
                                const std::set<std::pair<std::uint16_t, std::uint16_t>>& blacklist);

  // Debug-exception handler: restores the data-port mask. Throws EngineError
  // if no single-step is in flight (a simulator bug, not a guest action).
  void complete_single_step(SandboxId id);

  RedirectionTable& redirection_table() { return rt_; }
  const RedirectionTable& redirection_table() const { return rt_; }

 private:
  struct PerSandbox {
    std::bitset<65536> trap_on;
    std::uint32_t latched_addr = 0;
    MediationPhase phase = MediationPhase::Masked;
    std::optional<PendingPciAccess> pending;
  };

  PerSandbox& sb(SandboxId id);
  const PerSandbox& sb(SandboxId id) const;

  int device_at_port(std::uint16_t port) const;  // -1 when unclaimed

  std::uint16_t pci_address_port_;
  std::uint16_t pci_data_port_;
  std::vector<PciDevice> devices_;
  std::map<SandboxId, PerSandbox> sandboxes_;
  RedirectionTable rt_;
};

}  // namespace sksim
