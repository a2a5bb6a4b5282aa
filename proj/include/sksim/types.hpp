#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace sksim {

// Simulated time in integer nanoseconds. Scenario files speak microseconds;
// the finer internal unit keeps sub-microsecond cost knobs exact.
using Time = std::int64_t;

constexpr Time usec(std::int64_t v) { return v * 1000; }
constexpr Time msec(std::int64_t v) { return v * 1000000; }

using SandboxId = int;
using PcpuId = int;
using VcpuId = int;

// Page numbers are byte addresses shifted right by the 4KB page shift.
using PageNum = std::uint64_t;

inline constexpr int kPageShift = 12;
inline constexpr std::uint64_t kPageBytes = 1ull << kPageShift;
inline constexpr std::uint64_t kPagesPerSuperpage = 512;  // 2MB / 4KB
inline constexpr std::uint64_t kSuperpageBytes = kPageBytes * kPagesPerSuperpage;

inline constexpr int kGuestAddressBits = 48;
inline constexpr int kHostAddressBits = 52;
inline constexpr PageNum kMaxGuestPage = (1ull << (kGuestAddressBits - kPageShift)) - 1;
inline constexpr PageNum kMaxHostPage = (1ull << (kHostAddressBits - kPageShift)) - 1;

constexpr PageNum page_of(std::uint64_t addr) { return addr >> kPageShift; }
constexpr std::uint64_t page_offset(std::uint64_t addr) { return addr & (kPageBytes - 1); }
constexpr std::uint64_t page_addr(PageNum page) { return page << kPageShift; }

enum class Access { Read, Write, Execute };

const char* to_string(Access a);

struct Permissions {
  bool read = false;
  bool write = false;
  bool execute = false;

  constexpr bool allows(Access a) const {
    switch (a) {
      case Access::Read: return read;
      case Access::Write: return write;
      case Access::Execute: return execute;
    }
    return false;
  }

  constexpr bool none() const { return !read && !write && !execute; }

  constexpr Permissions intersect(Permissions o) const {
    return {read && o.read, write && o.write, execute && o.execute};
  }

  constexpr bool operator==(const Permissions&) const = default;

  static constexpr Permissions rwx() { return {true, true, true}; }
  static constexpr Permissions rw() { return {true, true, false}; }
  static constexpr Permissions ro() { return {true, false, false}; }
  static constexpr Permissions deny_all() { return {false, false, false}; }
};

std::string to_string(Permissions p);
Permissions permissions_from_string(const std::string& s);

// Thrown when the simulator itself reaches an impossible state. Never used
// for bad input; scenario problems surface as ValidationError instead.
struct EngineError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace sksim
