#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <unordered_map>
#include <variant>
#include <vector>

#include "sksim/types.hpp"

namespace sksim {

// First translation stage, owned by the sandbox kernel. A flat page map:
// the isolation argument only needs the stage split, not a guest radix tree.
class GuestPageTable {
 public:
  struct Entry {
    PageNum gpa_page = 0;
    Permissions perms;
  };

  void map(PageNum gva_page, PageNum gpa_page, Permissions perms);
  void unmap(PageNum gva_page);
  std::optional<Entry> lookup(PageNum gva_page) const;

  const std::unordered_map<PageNum, Entry>& entries() const { return entries_; }

 private:
  std::unordered_map<PageNum, Entry> entries_;
};

enum class PageSize { k4K, k2M };

constexpr std::uint64_t pages_in(PageSize s) {
  return s == PageSize::k4K ? 1 : kPagesPerSuperpage;
}

struct EptEntry {
  PageNum hpa_page = 0;
  Permissions perms;
  PageSize size = PageSize::k4K;
  bool immutable = false;

  std::uint64_t page_count() const { return pages_in(size); }
};

enum class EptMapError { ImmutableEntry, OwnershipConflict, MisalignedSuperpage };

const char* to_string(EptMapError e);

// How an EPT mapping relates to the host-page ownership registry.
//  Claim:      the pages become exclusively owned by the EPT's sandbox.
//  ChannelRef: the pages must already be registered to a channel.
//  SystemRef:  the pages must already be registered as platform-shared
//              (e.g. the interrupt-controller register window).
enum class OwnershipMode { Claim, ChannelRef, SystemRef };

// Second stage, GPA -> HPA. Only monitors hold mutable references to these;
// no guest-facing operation can touch them.
class ExtendedPageTable {
 public:
  explicit ExtendedPageTable(SandboxId owner) : owner_(owner) {}

  SandboxId owner() const { return owner_; }

  // Keyed by the first GPA page the entry covers.
  const std::map<PageNum, EptEntry>& entries() const { return entries_; }

  struct Hit {
    PageNum hpa_page;
    Permissions perms;
    bool immutable;
  };
  std::optional<Hit> lookup(PageNum gpa_page) const;

 private:
  friend class MemoryModel;
  SandboxId owner_;
  std::map<PageNum, EptEntry> entries_;
};

struct AccessOk {
  std::uint64_t hpa = 0;
};
struct GuestPageFault {
  std::uint64_t gva = 0;
  Access access = Access::Read;
};
struct EptViolation {
  std::uint64_t gpa = 0;
  Access access = Access::Read;
};
using AccessOutcome = std::variant<AccessOk, GuestPageFault, EptViolation>;

bool is_ok(const AccessOutcome& o);

// Who owns a range of host pages.
struct HpaOwner {
  enum class Kind { Sandbox, Channel, System };
  Kind kind = Kind::Sandbox;
  int id = 0;  // sandbox id or channel id; unused for System

  bool operator==(const HpaOwner&) const = default;
};

// Interval registry of host-physical page ownership. Distinct sandboxes may
// never claim the same page; channel and system pages are shared by design.
class HpaOwnership {
 public:
  std::optional<HpaOwner> owner_of(PageNum hpa_page) const;
  bool range_free(PageNum first, std::uint64_t count) const;
  // Returns false (and changes nothing) on conflict.
  bool claim(PageNum first, std::uint64_t count, HpaOwner owner);
  void release(PageNum first, std::uint64_t count);
  bool range_is(PageNum first, std::uint64_t count, HpaOwner::Kind kind) const;

  // All pages owned per sandbox, for disjointness scans.
  std::map<int, std::vector<std::pair<PageNum, std::uint64_t>>> sandbox_ranges() const;

 private:
  // start -> (end exclusive, owner)
  std::map<PageNum, std::pair<PageNum, HpaOwner>> segs_;
};

// Simulated memory content. Guest RAM is tracked as one checksum per host
// page; channel pages hold real bytes so cross-sandbox reads see writes.
class MemoryStore {
 public:
  void register_channel_page(PageNum hpa_page);
  bool is_channel_page(PageNum hpa_page) const;

  std::uint8_t read(std::uint64_t hpa) const;
  void write(std::uint64_t hpa, std::uint8_t value);

  std::uint64_t page_checksum(PageNum hpa_page) const;
  const std::map<PageNum, std::uint64_t>& checksums() const { return checksums_; }

 private:
  std::map<PageNum, std::uint64_t> checksums_;
  std::map<PageNum, std::array<std::uint8_t, kPageBytes>> channel_bytes_;
};

struct TranslationStats {
  std::uint64_t walks = 0;
  std::uint64_t tlb_hits = 0;
  std::uint64_t flushes = 0;
};

// Two-stage address translation with a software-visible TLB per sandbox.
// The cache is unbounded and emptied only on monitor-to-guest return;
// guest page-table edits invalidate their own GVAs immediately.
class MemoryModel {
 public:
  void add_sandbox(SandboxId id);
  bool has_sandbox(SandboxId id) const;

  GuestPageTable& gpt(SandboxId id);
  const GuestPageTable& gpt(SandboxId id) const;
  ExtendedPageTable& ept(SandboxId id);
  const ExtendedPageTable& ept(SandboxId id) const;

  void guest_map(SandboxId id, PageNum gva_page, PageNum gpa_page, Permissions perms);
  void guest_unmap(SandboxId id, PageNum gva_page);

  std::optional<EptMapError> ept_map(SandboxId id, PageNum gpa_page, PageNum hpa_page,
                                     Permissions perms, PageSize size, bool immutable,
                                     OwnershipMode mode = OwnershipMode::Claim);

  AccessOutcome translate(SandboxId id, std::uint64_t gva, Access access);

  void tlb_flush(SandboxId id);
  std::size_t tlb_size(SandboxId id) const;
  const TranslationStats& stats(SandboxId id) const;

  struct TlbView {
    PageNum gva_page;
    PageNum hpa_page;
    Permissions perms;
  };
  std::vector<TlbView> tlb_entries(SandboxId id) const;

  HpaOwnership& ownership() { return ownership_; }
  const HpaOwnership& ownership() const { return ownership_; }
  MemoryStore& store() { return store_; }
  const MemoryStore& store() const { return store_; }

  // Pages every sandbox may reference via SystemRef mappings.
  void register_system_pages(PageNum first, std::uint64_t count);

  // Disjointness: HPA pages of distinct sandboxes never overlap except
  // through channel or system registrations. Returns a diagnostic on breach.
  std::optional<std::string> check_hpa_disjointness() const;

  const std::vector<SandboxId>& sandbox_ids() const { return ids_; }

 private:
  struct TlbEntry {
    PageNum hpa_page;
    Permissions perms;
  };
  struct PerSandbox {
    GuestPageTable gpt;
    ExtendedPageTable ept;
    std::unordered_map<PageNum, TlbEntry> tlb;
    TranslationStats stats;
    explicit PerSandbox(SandboxId id) : ept(id) {}
  };

  PerSandbox& sb(SandboxId id);
  const PerSandbox& sb(SandboxId id) const;

  std::map<SandboxId, PerSandbox> sandboxes_;
  std::vector<SandboxId> ids_;
  HpaOwnership ownership_;
  MemoryStore store_;
};

// Structure pages (4KB each, 512 eight-byte slots) needed to map
// `memory_bytes` contiguously from GPA zero with a four-level table,
// using `policy` as the leaf size for bulk mappings. Partial leaves are
// rounded up to whole entries of the chosen size.
std::uint64_t ept_footprint(std::uint64_t memory_bytes, PageSize policy);

}  // namespace sksim
