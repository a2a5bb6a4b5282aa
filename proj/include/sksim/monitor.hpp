#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "sksim/io.hpp"
#include "sksim/memory.hpp"
#include "sksim/types.hpp"

namespace sksim {

enum class TrapKind { EptViolation, IoPortTrap, DebugException, ChannelSetup };

const char* to_string(TrapKind k);

struct IoapicUpdate {
  int index = -1;
  RtEntry entry;
};

struct TrapCtxEpt {
  std::uint64_t gva = 0;
  std::uint64_t gpa = 0;
  Access access = Access::Read;
  // Present when the violation is a write into the interrupt-controller
  // register window carrying a redirection-table update.
  std::optional<IoapicUpdate> ioapic;
};

struct TrapCtxPort {
  std::uint16_t port = 0;
  Direction dir = Direction::In;
  int width = 4;
  std::uint32_t value = 0;
};

struct TrapCtxDebug {};

struct TrapCtxChannel {
  int channel_id = -1;
};

struct Trap {
  TrapKind kind = TrapKind::EptViolation;
  SandboxId sandbox = -1;
  Time time = 0;
  std::variant<TrapCtxEpt, TrapCtxPort, TrapCtxDebug, TrapCtxChannel> ctx;
};

struct ViolationEntry {
  Time time = 0;
  SandboxId sandbox = -1;
  std::string kind;
  std::string detail;
  std::string action;
};

// What the monitor decided; the engine applies timing and trace effects.
struct TrapResolution {
  enum class Action {
    MemoryDenied,      // EPT violation logged, access dropped, reads all-ones
    IoapicApplied,
    IoapicDenied,
    PortDenied,        // foreign or unclaimed port, reads all-ones
    PciDenied,
    PciAllowArmed,     // data port unmasked, trap flag set
    SingleStepDone,    // data port re-masked
    ChannelEstablished,
  };
  Action action;
  std::uint32_t value = 0;
  std::string detail;
};

// One monitor per sandbox. It owns that sandbox's trap handling and is the
// only code path that edits the sandbox's EPT after boot.
class Monitor {
 public:
  Monitor(SandboxId sandbox, std::set<std::pair<std::uint16_t, std::uint16_t>> blacklist,
          std::set<int> ioapic_authorization)
      : sandbox_(sandbox),
        blacklist_(std::move(blacklist)),
        ioapic_auth_(std::move(ioapic_authorization)) {}

  SandboxId sandbox() const { return sandbox_; }
  std::uint64_t monitor_entries() const { return monitor_entries_; }
  const std::vector<ViolationEntry>& violation_log() const { return violation_log_; }
  const std::set<std::pair<std::uint16_t, std::uint16_t>>& blacklist() const {
    return blacklist_;
  }
  const std::set<int>& ioapic_authorization() const { return ioapic_auth_; }

  // Dispatches one trap. Counts the entry, resolves the cause, and leaves
  // the TLB flush and time accounting to the caller (they happen on the
  // return path).
  TrapResolution handle_trap(const Trap& trap, MemoryModel& memory, IoModel& io);

 private:
  void log(Time t, const std::string& kind, const std::string& detail,
           const std::string& action);

  SandboxId sandbox_;
  std::set<std::pair<std::uint16_t, std::uint16_t>> blacklist_;
  std::set<int> ioapic_auth_;
  std::uint64_t monitor_entries_ = 0;
  std::vector<ViolationEntry> violation_log_;
};

struct Channel {
  int id = -1;
  SandboxId a = -1;
  SandboxId b = -1;
  PageNum hpa_first = 0;
  std::uint64_t pages = 0;
  std::uint64_t gpa_base_a = 0;  // byte addresses
  std::uint64_t gpa_base_b = 0;
  Permissions perms_a;
  Permissions perms_b;
};

enum class ChannelError { PoolExhausted, SandboxUnknown };

class ChannelRegistry {
 public:
  void set_pool(PageNum first, std::uint64_t pages);
  std::uint64_t pool_available() const { return pool_end_ - pool_next_; }
  PageNum allocate(std::uint64_t pages);  // throws EngineError on exhaustion

  const std::vector<Channel>& channels() const { return channels_; }
  Channel& add(Channel c);

 private:
  PageNum pool_next_ = 0;
  PageNum pool_end_ = 0;
  std::vector<Channel> channels_;
};

// Allocates pages from the channel pool and maps them into both endpoints'
// EPTs as immutable entries, with matching identity guest mappings so the
// kernels can reach them. No partial effects on failure.
std::variant<Channel, ChannelError> create_channel(MemoryModel& memory,
                                                   ChannelRegistry& registry, SandboxId a,
                                                   SandboxId b, std::uint64_t n_pages,
                                                   Permissions perms_a, Permissions perms_b,
                                                   std::uint64_t gpa_base_a,
                                                   std::uint64_t gpa_base_b);

}  // namespace sksim
