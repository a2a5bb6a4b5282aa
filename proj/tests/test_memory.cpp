#include <random>
#include <set>

#include "doctest.h"
#include "sksim/memory.hpp"

using namespace sksim;

namespace {

// Reference two-stage walk straight off the table contents. No TLB, no
// shared code with MemoryModel::translate.
AccessOutcome oracle_translate(const GuestPageTable& gpt, const ExtendedPageTable& ept,
                               std::uint64_t gva, Access access) {
  const PageNum gva_page = page_of(gva);
  auto g = gpt.entries().find(gva_page);
  if (g == gpt.entries().end() || !g->second.perms.allows(access))
    return GuestPageFault{gva, access};
  const PageNum gpa_page = g->second.gpa_page;
  const std::uint64_t gpa = page_addr(gpa_page) | page_offset(gva);
  for (const auto& [base, entry] : ept.entries()) {
    if (gpa_page < base || gpa_page >= base + entry.page_count()) continue;
    if (!entry.perms.allows(access)) return EptViolation{gpa, access};
    return AccessOk{page_addr(entry.hpa_page + (gpa_page - base)) | page_offset(gva)};
  }
  return EptViolation{gpa, access};
}

// Builds the four-level structure page set one leaf entry at a time.
std::uint64_t oracle_footprint(std::uint64_t bytes, PageSize policy) {
  const std::uint64_t leaf_bytes = policy == PageSize::k2M ? kSuperpageBytes : kPageBytes;
  const std::uint64_t leaves = (bytes + leaf_bytes - 1) / leaf_bytes;
  std::set<std::uint64_t> pointer_pages, directory_pages, table_pages;
  for (std::uint64_t i = 0; i < leaves; ++i) {
    if (policy == PageSize::k2M) {
      directory_pages.insert(i / 512);
      pointer_pages.insert(i / 512 / 512);
    } else {
      table_pages.insert(i / 512);
      directory_pages.insert(i / 512 / 512);
      pointer_pages.insert(i / 512 / 512 / 512);
    }
  }
  const std::uint64_t pages =
      1 + pointer_pages.size() + directory_pages.size() + table_pages.size();
  return pages * kPageBytes;
}

bool same_outcome(const AccessOutcome& a, const AccessOutcome& b) {
  if (a.index() != b.index()) return false;
  if (const auto* ok = std::get_if<AccessOk>(&a))
    return ok->hpa == std::get<AccessOk>(b).hpa;
  if (const auto* gf = std::get_if<GuestPageFault>(&a)) {
    const auto& o = std::get<GuestPageFault>(b);
    return gf->gva == o.gva && gf->access == o.access;
  }
  const auto& ev = std::get<EptViolation>(a);
  const auto& o = std::get<EptViolation>(b);
  return ev.gpa == o.gpa && ev.access == o.access;
}

Permissions random_perms(std::mt19937_64& rng) {
  const auto bits = rng() % 8;
  return {(bits & 1) != 0, (bits & 2) != 0, (bits & 4) != 0};
}

}  // namespace

TEST_CASE("guest page table maps and overwrites") {
  GuestPageTable gpt;
  gpt.map(0x10, 0x10, Permissions::rwx());
  REQUIRE(gpt.lookup(0x10));
  CHECK(gpt.lookup(0x10)->gpa_page == 0x10);

  gpt.map(0x401, 0x1, Permissions::rw());
  CHECK(gpt.lookup(0x401)->gpa_page == 0x1);

  gpt.map(0x401, 0x7, Permissions::ro());
  CHECK(gpt.lookup(0x401)->gpa_page == 0x7);  // last write wins
  CHECK(gpt.lookup(0x401)->perms == Permissions::ro());
  CHECK(!gpt.lookup(0x999));
}

TEST_CASE("superpage mapping translates with page offset arithmetic") {
  MemoryModel mm;
  mm.add_sandbox(1);
  auto err = mm.ept_map(1, 0, 0x40000, Permissions::rw(), PageSize::k2M, false);
  REQUIRE(!err);
  auto hit = mm.ept(1).lookup(3);
  REQUIRE(hit);
  CHECK(hit->hpa_page == 0x40003);
  CHECK(!mm.ept(1).lookup(512));  // one superpage covers exactly 512 pages
}

TEST_CASE("immutable entries can never be remapped") {
  MemoryModel mm;
  mm.add_sandbox(1);
  REQUIRE(!mm.ept_map(1, 100, 500, Permissions::rw(), PageSize::k4K, true));
  auto err = mm.ept_map(1, 100, 501, Permissions::rw(), PageSize::k4K, false);
  REQUIRE(err);
  CHECK(*err == EptMapError::ImmutableEntry);
  // Unchanged by the failed attempt.
  CHECK(mm.ept(1).lookup(100)->hpa_page == 500);
}

TEST_CASE("hpa ownership is exclusive across sandboxes") {
  MemoryModel mm;
  mm.add_sandbox(1);
  mm.add_sandbox(2);
  REQUIRE(!mm.ept_map(2, 0, 0x1000, Permissions::rwx(), PageSize::k4K, false));
  auto err = mm.ept_map(1, 7, 0x1000, Permissions::rwx(), PageSize::k4K, false);
  REQUIRE(err);
  CHECK(*err == EptMapError::OwnershipConflict);
  CHECK(!mm.check_hpa_disjointness());

  // Remapping my own entry elsewhere releases the old claim.
  REQUIRE(!mm.ept_map(2, 0, 0x2000, Permissions::rwx(), PageSize::k4K, false));
  CHECK(!mm.ept_map(1, 7, 0x1000, Permissions::rwx(), PageSize::k4K, false));
}

TEST_CASE("superpages must be 512-page aligned") {
  MemoryModel mm;
  mm.add_sandbox(1);
  auto err = mm.ept_map(1, 1, 512, Permissions::rw(), PageSize::k2M, false);
  REQUIRE(err);
  CHECK(*err == EptMapError::MisalignedSuperpage);
  err = mm.ept_map(1, 512, 513, Permissions::rw(), PageSize::k2M, false);
  REQUIRE(err);
  CHECK(*err == EptMapError::MisalignedSuperpage);
}

TEST_CASE("identity composition and the two-stage walk") {
  MemoryModel mm;
  mm.add_sandbox(1);
  mm.guest_map(1, 1, 1, Permissions::rwx());
  REQUIRE(!mm.ept_map(1, 1, 1, Permissions::rwx(), PageSize::k4K, false));
  auto out = mm.translate(1, 0x1234, Access::Read);
  REQUIRE(is_ok(out));
  CHECK(std::get<AccessOk>(out).hpa == 0x1234);

  mm.guest_map(1, 0x401, 0x1, Permissions::rwx());
  REQUIRE(!mm.ept_map(1, 0x1, 0x80001, Permissions::ro(), PageSize::k4K, false));
  out = mm.translate(1, 0x401ABC, Access::Read);
  REQUIRE(is_ok(out));
  CHECK(std::get<AccessOk>(out).hpa == 0x80001ABCull);
  CHECK(same_outcome(out, oracle_translate(mm.gpt(1), mm.ept(1), 0x401ABC, Access::Read)));

  // Stage-2 denial goes to the monitor as an EPT violation carrying the GPA.
  auto denied = mm.translate(1, 0x401ABC, Access::Write);
  REQUIRE(std::holds_alternative<EptViolation>(denied));
  CHECK(std::get<EptViolation>(denied).gpa == 0x1ABC);
  CHECK(std::get<EptViolation>(denied).access == Access::Write);
}

TEST_CASE("stage-1 faults stay guest faults even with a warm tlb") {
  MemoryModel mm;
  mm.add_sandbox(1);
  mm.guest_map(1, 5, 5, Permissions::ro());
  REQUIRE(!mm.ept_map(1, 5, 9, Permissions::rwx(), PageSize::k4K, false));

  REQUIRE(is_ok(mm.translate(1, page_addr(5), Access::Read)));
  // Cached read mapping must not let a write through stage 1.
  auto out = mm.translate(1, page_addr(5) + 8, Access::Write);
  REQUIRE(std::holds_alternative<GuestPageFault>(out));

  auto missing = mm.translate(1, page_addr(77), Access::Read);
  CHECK(std::holds_alternative<GuestPageFault>(missing));
}

TEST_CASE("tlb caches walks and flush empties it") {
  MemoryModel mm;
  mm.add_sandbox(1);
  mm.guest_map(1, 2, 3, Permissions::rwx());
  REQUIRE(!mm.ept_map(1, 3, 40, Permissions::rwx(), PageSize::k4K, false));

  CHECK(is_ok(mm.translate(1, page_addr(2), Access::Read)));
  CHECK(mm.stats(1).walks == 1);
  CHECK(is_ok(mm.translate(1, page_addr(2) + 100, Access::Read)));
  CHECK(mm.stats(1).walks == 1);  // served from the tlb
  CHECK(mm.stats(1).tlb_hits == 1);

  mm.tlb_flush(1);
  CHECK(mm.tlb_size(1) == 0);
  CHECK(is_ok(mm.translate(1, page_addr(2), Access::Read)));
  CHECK(mm.stats(1).walks == 2);  // cold cache after flush

  const auto flushes = mm.stats(1).flushes;
  mm.tlb_flush(1);
  mm.tlb_flush(1);
  CHECK(mm.stats(1).flushes == flushes + 2);  // counted even when empty
  CHECK(mm.tlb_size(1) == 0);
}

TEST_CASE("guest table edits invalidate their cached translations") {
  MemoryModel mm;
  mm.add_sandbox(1);
  mm.guest_map(1, 2, 3, Permissions::rwx());
  REQUIRE(!mm.ept_map(1, 3, 40, Permissions::rwx(), PageSize::k4K, false));
  REQUIRE(!mm.ept_map(1, 4, 41, Permissions::rwx(), PageSize::k4K, false));

  REQUIRE(is_ok(mm.translate(1, page_addr(2), Access::Read)));
  mm.guest_map(1, 2, 4, Permissions::rwx());  // sandbox kernel edit, no trap
  auto out = mm.translate(1, page_addr(2), Access::Read);
  REQUIRE(is_ok(out));
  CHECK(std::get<AccessOk>(out).hpa == page_addr(41));
}

TEST_CASE("translate agrees with the tlb-free walker over random tables") {
  std::mt19937_64 rng(0xA11CE5EEDull);
  for (int instance = 0; instance < 60; ++instance) {
    MemoryModel mm;
    mm.add_sandbox(1);

    for (int i = 0; i < 24; ++i)
      mm.guest_map(1, rng() % 64, rng() % 64, random_perms(rng));
    for (int i = 0; i < 16; ++i) {
      if (rng() % 5 == 0) {
        const PageNum gpa = (rng() % 4) * kPagesPerSuperpage;
        const PageNum hpa = (rng() % 4) * kPagesPerSuperpage + 4096;
        mm.ept_map(1, gpa, hpa, random_perms(rng), PageSize::k2M, false);
      } else {
        mm.ept_map(1, rng() % 64, 8192 + rng() % 256, random_perms(rng), PageSize::k4K, false);
      }
    }

    for (int q = 0; q < 200; ++q) {
      if (q % 17 == 5)  // interleave edits to exercise invalidation
        mm.guest_map(1, rng() % 64, rng() % 64, random_perms(rng));
      const std::uint64_t gva = (rng() % 64) * kPageBytes + rng() % kPageBytes;
      const Access access = static_cast<Access>(rng() % 3);
      const auto got = mm.translate(1, gva, access);
      const auto want = oracle_translate(mm.gpt(1), mm.ept(1), gva, access);
      REQUIRE(same_outcome(got, want));
    }
  }
}

TEST_CASE("ept footprint matches the stated sizes") {
  CHECK(ept_footprint(1ull << 30, PageSize::k2M) == 12 * 1024);  // 1GB, 2MB pages
  CHECK(ept_footprint(2ull << 20, PageSize::k4K) == 16 * 1024);  // 2MB, 4KB pages
  CHECK(ept_footprint(1, PageSize::k2M) == 12 * 1024);
  CHECK(ept_footprint(2ull << 20, PageSize::k2M) == 12 * 1024);
  CHECK(ept_footprint(4096, PageSize::k4K) == 16 * 1024);
}

TEST_CASE("ept footprint equals the brute-force structure constructor") {
  for (std::uint64_t bytes = 4096; bytes <= (4ull << 30); bytes *= 2) {
    const std::uint64_t probes[] = {bytes, bytes + 4096, bytes + (1ull << 20)};
    for (std::uint64_t probe : probes) {
      if (probe > (4ull << 30)) continue;
      CHECK(ept_footprint(probe, PageSize::k2M) == oracle_footprint(probe, PageSize::k2M));
      CHECK(ept_footprint(probe, PageSize::k4K) == oracle_footprint(probe, PageSize::k4K));
    }
  }
}

TEST_CASE("channel pages hold real bytes, ram pages hold checksums") {
  MemoryStore store;
  store.register_channel_page(10);
  store.write(page_addr(10) + 5, 0x42);
  CHECK(store.read(page_addr(10) + 5) == 0x42);

  const auto before = store.page_checksum(20);
  store.write(page_addr(20) + 5, 0x42);
  CHECK(store.page_checksum(20) != before);
}
