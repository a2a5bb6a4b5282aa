#include "sksim/memory.hpp"

#include <algorithm>

namespace sksim {

const char* to_string(Access a) {
  switch (a) {
    case Access::Read: return "read";
    case Access::Write: return "write";
    case Access::Execute: return "execute";
  }
  return "?";
}

std::string to_string(Permissions p) {
  std::string s;
  if (p.read) s += 'r';
  if (p.write) s += 'w';
  if (p.execute) s += 'x';
  if (s.empty()) s = "none";
  return s;
}

Permissions permissions_from_string(const std::string& s) {
  if (s == "none") return Permissions::deny_all();
  Permissions p;
  for (char c : s) {
    switch (c) {
      case 'r': p.read = true; break;
      case 'w': p.write = true; break;
      case 'x': p.execute = true; break;
      default: throw std::invalid_argument("bad permission string: " + s);
    }
  }
  return p;
}

const char* to_string(EptMapError e) {
  switch (e) {
    case EptMapError::ImmutableEntry: return "ImmutableEntry";
    case EptMapError::OwnershipConflict: return "OwnershipConflict";
    case EptMapError::MisalignedSuperpage: return "MisalignedSuperpage";
  }
  return "?";
}

bool is_ok(const AccessOutcome& o) { return std::holds_alternative<AccessOk>(o); }

void GuestPageTable::map(PageNum gva_page, PageNum gpa_page, Permissions perms) {
  entries_[gva_page] = Entry{gpa_page, perms};
}

void GuestPageTable::unmap(PageNum gva_page) { entries_.erase(gva_page); }

std::optional<GuestPageTable::Entry> GuestPageTable::lookup(PageNum gva_page) const {
  auto it = entries_.find(gva_page);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::optional<ExtendedPageTable::Hit> ExtendedPageTable::lookup(PageNum gpa_page) const {
  auto it = entries_.upper_bound(gpa_page);
  if (it == entries_.begin()) return std::nullopt;
  --it;
  const PageNum base = it->first;
  const EptEntry& e = it->second;
  if (gpa_page >= base + e.page_count()) return std::nullopt;
  return Hit{e.hpa_page + (gpa_page - base), e.perms, e.immutable};
}

std::optional<HpaOwner> HpaOwnership::owner_of(PageNum hpa_page) const {
  auto it = segs_.upper_bound(hpa_page);
  if (it == segs_.begin()) return std::nullopt;
  --it;
  if (hpa_page >= it->second.first) return std::nullopt;
  return it->second.second;
}

bool HpaOwnership::range_free(PageNum first, std::uint64_t count) const {
  const PageNum end = first + count;
  auto it = segs_.upper_bound(first);
  if (it != segs_.begin()) {
    auto prev = std::prev(it);
    if (prev->second.first > first) return false;
  }
  return it == segs_.end() || it->first >= end;
}

bool HpaOwnership::claim(PageNum first, std::uint64_t count, HpaOwner owner) {
  if (!range_free(first, count)) return false;
  segs_[first] = {first + count, owner};
  return true;
}

void HpaOwnership::release(PageNum first, std::uint64_t count) {
  const PageNum end = first + count;
  auto it = segs_.upper_bound(first);
  if (it != segs_.begin()) --it;
  while (it != segs_.end() && it->first < end) {
    PageNum seg_start = it->first;
    PageNum seg_end = it->second.first;
    HpaOwner owner = it->second.second;
    if (seg_end <= first) {
      ++it;
      continue;
    }
    it = segs_.erase(it);
    if (seg_start < first) segs_[seg_start] = {first, owner};
    if (seg_end > end) it = segs_.insert({end, {seg_end, owner}}).first;
  }
}

bool HpaOwnership::range_is(PageNum first, std::uint64_t count, HpaOwner::Kind kind) const {
  PageNum page = first;
  const PageNum end = first + count;
  while (page < end) {
    auto it = segs_.upper_bound(page);
    if (it == segs_.begin()) return false;
    --it;
    if (page >= it->second.first || it->second.second.kind != kind) return false;
    page = it->second.first;
  }
  return true;
}

std::map<int, std::vector<std::pair<PageNum, std::uint64_t>>> HpaOwnership::sandbox_ranges() const {
  std::map<int, std::vector<std::pair<PageNum, std::uint64_t>>> out;
  for (const auto& [start, seg] : segs_) {
    if (seg.second.kind == HpaOwner::Kind::Sandbox)
      out[seg.second.id].push_back({start, seg.first - start});
  }
  return out;
}

namespace {
// 64-bit mix used for page checksums; any stable mixer works, this is
// splitmix64's finalizer.
std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}
}  // namespace

void MemoryStore::register_channel_page(PageNum hpa_page) {
  channel_bytes_.try_emplace(hpa_page);  // zero-filled
}

bool MemoryStore::is_channel_page(PageNum hpa_page) const {
  return channel_bytes_.count(hpa_page) != 0;
}

std::uint8_t MemoryStore::read(std::uint64_t hpa) const {
  auto it = channel_bytes_.find(page_of(hpa));
  if (it != channel_bytes_.end()) return it->second[page_offset(hpa)];
  // RAM content is not modeled byte-for-byte; reads return a stable
  // pseudo-value derived from the address.
  return static_cast<std::uint8_t>(mix64(hpa));
}

void MemoryStore::write(std::uint64_t hpa, std::uint8_t value) {
  auto it = channel_bytes_.find(page_of(hpa));
  if (it != channel_bytes_.end()) {
    it->second[page_offset(hpa)] = value;
    return;
  }
  std::uint64_t& sum = checksums_[page_of(hpa)];
  sum = mix64(sum ^ mix64((page_offset(hpa) << 8) | value));
}

std::uint64_t MemoryStore::page_checksum(PageNum hpa_page) const {
  auto it = checksums_.find(hpa_page);
  return it == checksums_.end() ? 0 : it->second;
}

void MemoryModel::add_sandbox(SandboxId id) {
  if (sandboxes_.count(id)) throw EngineError("duplicate sandbox id in memory model");
  sandboxes_.emplace(id, PerSandbox{id});
  ids_.push_back(id);
}

bool MemoryModel::has_sandbox(SandboxId id) const { return sandboxes_.count(id) != 0; }

MemoryModel::PerSandbox& MemoryModel::sb(SandboxId id) {
  auto it = sandboxes_.find(id);
  if (it == sandboxes_.end()) throw EngineError("unknown sandbox in memory model");
  return it->second;
}

const MemoryModel::PerSandbox& MemoryModel::sb(SandboxId id) const {
  auto it = sandboxes_.find(id);
  if (it == sandboxes_.end()) throw EngineError("unknown sandbox in memory model");
  return it->second;
}

GuestPageTable& MemoryModel::gpt(SandboxId id) { return sb(id).gpt; }
const GuestPageTable& MemoryModel::gpt(SandboxId id) const { return sb(id).gpt; }
ExtendedPageTable& MemoryModel::ept(SandboxId id) { return sb(id).ept; }
const ExtendedPageTable& MemoryModel::ept(SandboxId id) const { return sb(id).ept; }

void MemoryModel::guest_map(SandboxId id, PageNum gva_page, PageNum gpa_page,
                            Permissions perms) {
  auto& s = sb(id);
  s.gpt.map(gva_page, gpa_page, perms);
  s.tlb.erase(gva_page);  // keep cached tuples re-derivable
}

void MemoryModel::guest_unmap(SandboxId id, PageNum gva_page) {
  auto& s = sb(id);
  s.gpt.unmap(gva_page);
  s.tlb.erase(gva_page);
}

std::optional<EptMapError> MemoryModel::ept_map(SandboxId id, PageNum gpa_page,
                                                PageNum hpa_page, Permissions perms,
                                                PageSize size, bool immutable,
                                                OwnershipMode mode) {
  auto& s = sb(id);
  const std::uint64_t count = pages_in(size);
  if (size == PageSize::k2M &&
      (gpa_page % kPagesPerSuperpage != 0 || hpa_page % kPagesPerSuperpage != 0))
    return EptMapError::MisalignedSuperpage;

  // Entries overlapping the new GPA range get replaced; immutable ones never do.
  std::vector<PageNum> overlapped;
  auto it = s.ept.entries_.lower_bound(
      gpa_page >= kPagesPerSuperpage ? gpa_page - (kPagesPerSuperpage - 1) : 0);
  for (; it != s.ept.entries_.end() && it->first < gpa_page + count; ++it) {
    if (it->first + it->second.page_count() <= gpa_page) continue;
    if (it->second.immutable) return EptMapError::ImmutableEntry;
    overlapped.push_back(it->first);
  }

  switch (mode) {
    case OwnershipMode::Claim: {
      // Release the pages the replaced entries held, then claim the new range.
      for (PageNum base : overlapped) {
        const EptEntry& old = s.ept.entries_.at(base);
        ownership_.release(old.hpa_page, old.page_count());
      }
      if (!ownership_.claim(hpa_page, count, HpaOwner{HpaOwner::Kind::Sandbox, id})) {
        for (PageNum base : overlapped) {  // roll the releases back
          const EptEntry& old = s.ept.entries_.at(base);
          ownership_.claim(old.hpa_page, old.page_count(),
                           HpaOwner{HpaOwner::Kind::Sandbox, id});
        }
        return EptMapError::OwnershipConflict;
      }
      break;
    }
    case OwnershipMode::ChannelRef:
      if (!ownership_.range_is(hpa_page, count, HpaOwner::Kind::Channel))
        return EptMapError::OwnershipConflict;
      break;
    case OwnershipMode::SystemRef:
      if (!ownership_.range_is(hpa_page, count, HpaOwner::Kind::System))
        return EptMapError::OwnershipConflict;
      break;
  }

  for (PageNum base : overlapped) s.ept.entries_.erase(base);
  s.ept.entries_[gpa_page] = EptEntry{hpa_page, perms, size, immutable};
  return std::nullopt;
}

AccessOutcome MemoryModel::translate(SandboxId id, std::uint64_t gva, Access access) {
  auto& s = sb(id);
  const PageNum gva_page = page_of(gva);

  if (auto it = s.tlb.find(gva_page); it != s.tlb.end() && it->second.perms.allows(access)) {
    s.stats.tlb_hits++;
    return AccessOk{page_addr(it->second.hpa_page) | page_offset(gva)};
  }

  s.stats.walks++;
  auto g = s.gpt.lookup(gva_page);
  if (!g || !g->perms.allows(access)) return GuestPageFault{gva, access};

  auto e = s.ept.lookup(g->gpa_page);
  const std::uint64_t gpa = page_addr(g->gpa_page) | page_offset(gva);
  if (!e || !e->perms.allows(access)) return EptViolation{gpa, access};

  s.tlb[gva_page] = TlbEntry{e->hpa_page, g->perms.intersect(e->perms)};
  return AccessOk{page_addr(e->hpa_page) | page_offset(gva)};
}

void MemoryModel::tlb_flush(SandboxId id) {
  auto& s = sb(id);
  s.tlb.clear();
  s.stats.flushes++;
}

std::size_t MemoryModel::tlb_size(SandboxId id) const { return sb(id).tlb.size(); }

const TranslationStats& MemoryModel::stats(SandboxId id) const { return sb(id).stats; }

void MemoryModel::register_system_pages(PageNum first, std::uint64_t count) {
  if (!ownership_.claim(first, count, HpaOwner{HpaOwner::Kind::System, 0}))
    throw EngineError("system page range already claimed");
}

std::optional<std::string> MemoryModel::check_hpa_disjointness() const {
  // Map every HPA page referenced by any EPT back to its claimant; any page
  // reachable from two sandboxes must be a channel or system registration.
  std::map<PageNum, SandboxId> seen;  // hpa page -> first sandbox mapping it
  for (const auto& [id, s] : sandboxes_) {
    for (const auto& [gpa_base, e] : s.ept.entries_) {
      (void)gpa_base;
      for (std::uint64_t i = 0; i < e.page_count(); ++i) {
        const PageNum hpa = e.hpa_page + i;
        auto owner = ownership_.owner_of(hpa);
        if (owner && owner->kind != HpaOwner::Kind::Sandbox) continue;
        auto [it, inserted] = seen.insert({hpa, id});
        if (!inserted && it->second != id)
          return "hpa page " + std::to_string(hpa) + " mapped by sandboxes " +
                 std::to_string(it->second) + " and " + std::to_string(id);
        if (owner && owner->id != id)
          return "hpa page " + std::to_string(hpa) + " mapped by sandbox " +
                 std::to_string(id) + " but owned by sandbox " + std::to_string(owner->id);
      }
    }
  }
  return std::nullopt;
}

std::uint64_t ept_footprint(std::uint64_t memory_bytes, PageSize policy) {
  if (memory_bytes == 0) throw std::invalid_argument("memory_bytes must be positive");
  constexpr std::uint64_t kSlots = 512;  // 8-byte entries per 4KB structure page
  auto div_up = [](std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; };

  std::uint64_t structure_pages = 1;  // root
  if (policy == PageSize::k2M) {
    const std::uint64_t leaves = div_up(memory_bytes, kSuperpageBytes);  // 2MB entries
    const std::uint64_t directories = div_up(leaves, kSlots);
    const std::uint64_t pointers = div_up(directories, kSlots);
    structure_pages += pointers + directories;
  } else {
    const std::uint64_t leaves = div_up(memory_bytes, kPageBytes);  // 4KB entries
    const std::uint64_t tables = div_up(leaves, kSlots);
    const std::uint64_t directories = div_up(tables, kSlots);
    const std::uint64_t pointers = div_up(directories, kSlots);
    structure_pages += pointers + directories + tables;
  }
  return structure_pages * kPageBytes;
}

}  // namespace sksim
