#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sksim/io.hpp"
#include "sksim/sched.hpp"
#include "sksim/types.hpp"

namespace sksim {

// Scenario documents speak microseconds and megabytes; everything here is
// already converted to nanoseconds and bytes.

struct DeviceSpec {
  std::string name;
  std::uint16_t vendor_id = 0;
  std::uint16_t device_id = 0;
  std::uint8_t bus = 0;
  std::uint8_t dev = 0;
  std::uint8_t func = 0;
  int irq = -1;
  std::vector<PortRange> ports;
  std::uint64_t mmio_bytes = 0;
};

struct VcpuSpec {
  VcpuId id = -1;
  VcpuFlavor flavor = VcpuFlavor::Main;
  Time budget = 0;
  Time period = 0;
  PcpuId pcpu = -1;
  std::vector<int> irqs;  // I/O VCPUs only
};

struct DemandSpec {
  enum class Kind { Periodic, List, Busy };
  Kind kind = Kind::Periodic;
  Time start = 0;
  Time period = 0;
  Time compute = 0;
  int count = -1;  // -1: unbounded
  std::vector<std::pair<Time, Time>> jobs;  // (arrival, compute) for List
};

struct ThreadSpec {
  int id = -1;
  VcpuId vcpu = -1;
  DemandSpec demand;
};

struct SandboxSpec {
  SandboxId id = -1;
  std::vector<PcpuId> pcpus;
  std::uint64_t mem_bytes = 0;
  std::vector<std::string> devices;
  std::optional<std::vector<int>> ioapic_authorization;  // default: owned irqs
  std::vector<VcpuSpec> vcpus;
  std::vector<ThreadSpec> threads;
};

struct ChannelSpec {
  Time time = 0;  // < 0 installs during bootstrap
  SandboxId a = -1;
  SandboxId b = -1;
  std::uint64_t pages = 1;
  Permissions perms_a = Permissions::rw();
  Permissions perms_b = Permissions::rw();
};

struct InterruptGenSpec {
  enum class Kind { Periodic, Poisson };
  std::string device;
  Kind kind = Kind::Periodic;
  Time start = 0;
  Time period = 0;  // Periodic
  Time mean = 0;    // Poisson
  Time handler = 0;
  int count = -1;
};

struct FaultSpec {
  enum class Kind { RogueRead, RogueWrite, PciProbe, IoapicHijack };
  Time time = 0;
  SandboxId sandbox = -1;
  Kind kind = Kind::RogueRead;

  // rogue_read / rogue_write
  std::optional<SandboxId> victim;
  std::uint64_t victim_offset = 0;
  std::optional<std::uint64_t> gpa;

  // pci_probe
  std::string device;
  std::optional<PciConfigTarget> bdf;
  std::uint8_t pci_offset = 0;
  Direction dir = Direction::In;
  int width = 4;
  std::uint32_t value = 0;

  // ioapic_hijack
  int entry_index = -1;
  RtEntry entry;
};

struct CostsSpec {
  Time trap = usec(2);
  Time tlb_flush = 500;  // 0.5us
};

struct RunSpec {
  Time until = 0;
  std::uint64_t seed = 0;
  ReplenishPolicy policy = ReplenishPolicy::Chunked;
};

struct PlatformSpec {
  int pcpu_count = 0;
  std::uint64_t ram_bytes = 0;
  std::uint64_t channel_pool_bytes = 16ull << 20;
  std::uint64_t monitor_reservation_bytes = 64ull << 10;  // per sandbox
  std::vector<DeviceSpec> devices;
};

struct Scenario {
  std::string name;
  PlatformSpec platform;
  std::vector<SandboxSpec> sandboxes;
  std::vector<ChannelSpec> channels;
  std::vector<InterruptGenSpec> interrupts;
  std::vector<FaultSpec> faults;
  CostsSpec costs;
  RunSpec run;

  const SandboxSpec* find_sandbox(SandboxId id) const;
  const DeviceSpec* find_device(const std::string& name) const;
  SandboxId device_owner(const std::string& name) const;  // -1 if unassigned
};

// Input problems; `field` is the JSON path of the offending value.
struct ValidationError : std::runtime_error {
  std::string field;
  ValidationError(std::string field_path, const std::string& message)
      : std::runtime_error(field_path + ": " + message), field(std::move(field_path)) {}
};

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Parses and fully validates. Unknown fields are rejected.
Scenario load_scenario(const std::string& json_text);
Scenario load_scenario_file(const std::string& path);

// Semantic validation of an already-built scenario (load_scenario runs this).
void validate_scenario(const Scenario& s);

}  // namespace sksim
