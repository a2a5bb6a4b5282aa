// Acceptance suite: one line per criterion, exit 0 only when all pass.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "sksim/analysis.hpp"
#include "sksim/engine.hpp"

using namespace sksim;
using namespace sksim::testing;

namespace {

int failures = 0;

void report(int index, const std::string& name, bool pass, const std::string& detail = "") {
  std::printf("[%d] %-32s %s%s%s\n", index, name.c_str(), pass ? "PASS" : "FAIL",
              detail.empty() ? "" : "  -- ", detail.c_str());
  if (!pass) failures++;
}

Scenario canonical() {
  return load_scenario_file(scenario_dir() + "/mixed_criticality.json");
}

// ---- criterion 1: zero traps in steady state -------------------------------

void criterion_zero_trap() {
  Scenario s = canonical();  // 10 simulated seconds as shipped
  const Trace t = run_scenario(s);
  bool pass = true;
  std::string detail;
  for (const auto& [sb, n] : t.counters.monitor_entries) {
    if (n != 0) {
      pass = false;
      detail = "sandbox " + std::to_string(sb) + " took " + std::to_string(n) + " traps";
    }
  }
  if (t.counters.irqs_delivered == 0) {
    pass = false;
    detail = "no interrupts delivered; scenario not exercising the no-trap path";
  }

  // One runtime channel at t=1ms: exactly one setup trap per endpoint and
  // nothing afterwards.
  Scenario with_channel = canonical();
  ChannelSpec c;
  c.time = usec(1000);
  c.a = 1;
  c.b = 2;
  c.pages = 2;
  with_channel.channels.push_back(c);
  const Trace t2 = run_scenario(with_channel);
  if (t2.counters.monitor_entries.at(1) != 1 || t2.counters.monitor_entries.at(2) != 1 ||
      t2.counters.monitor_entries.at(3) != 0) {
    pass = false;
    detail = "channel setup trap count off";
  }
  Time last_trap = -1;
  for (const Record& r : t2.records())
    if (const auto* trap = std::get_if<TrapRecord>(&r)) last_trap = std::max(last_trap, trap->t);
  if (last_trap != usec(1000)) {
    pass = false;
    detail = "monitor entered after channel setup";
  }
  report(1, "zero-trap steady state", pass, detail);
}

// ---- criterion 2: isolation fuzzing ----------------------------------------

Scenario fuzz_scenario(std::uint64_t seed, int fault_count) {
  Scenario s = canonical();
  s.run.until = usec(1200000);
  s.run.seed = seed;
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + 1);
  const std::vector<SandboxId> ids = {1, 2, 3};
  for (int i = 0; i < fault_count; ++i) {
    FaultSpec f;
    f.time = usec(1000 + (rng() % 1000000));
    f.sandbox = ids[rng() % ids.size()];
    SandboxId victim = ids[rng() % ids.size()];
    while (victim == f.sandbox) victim = ids[rng() % ids.size()];
    switch (rng() % 4) {
      case 0:
        f.kind = FaultSpec::Kind::RogueRead;
        f.victim = victim;
        f.victim_offset = (rng() % 4096) * kPageBytes;
        break;
      case 1:
        f.kind = FaultSpec::Kind::RogueWrite;
        f.victim = victim;
        f.victim_offset = (rng() % 4096) * kPageBytes;
        break;
      case 2: {
        f.kind = FaultSpec::Kind::PciProbe;
        // Probe a device the sandbox does not own, or an absent one.
        const char* names[] = {"nic", "serial", "usb", "gpu"};
        std::string dev = names[rng() % 4];
        if (s.device_owner(dev) == f.sandbox || rng() % 5 == 0) {
          f.bdf = PciConfigTarget{static_cast<std::uint8_t>(1 + rng() % 200),
                                  static_cast<std::uint8_t>(rng() % 32),
                                  static_cast<std::uint8_t>(rng() % 8), 0};
        } else {
          f.device = dev;
        }
        f.pci_offset = static_cast<std::uint8_t>((rng() % 64) * 4);
        f.dir = rng() % 3 == 0 ? Direction::Out : Direction::In;
        f.width = 4;
        f.value = static_cast<std::uint32_t>(rng());
        break;
      }
      default: {
        f.kind = FaultSpec::Kind::IoapicHijack;
        const int foreign_lines[3][2] = {{4, 16}, {11, 16}, {11, 4}};
        const int* lines = foreign_lines[f.sandbox - 1];
        const int line = lines[rng() % 2];
        f.entry_index = line;
        f.entry = RtEntry{line, {f.sandbox}, rng() % 4 == 0};
        break;
      }
    }
    s.faults.push_back(f);
  }
  return s;
}

void criterion_isolation_fuzz() {
  std::uint64_t injected = 0, contained = 0, escapes = 0;
  bool audits_pass = true;
  for (std::uint64_t seed = 1; seed <= 22; ++seed) {
    const Scenario s = fuzz_scenario(seed, 50);
    const Trace t = run_scenario(s);
    const auto iso = isolation_audit(t);
    injected += iso.summary.faults_injected;
    contained += iso.summary.faults_contained;
    escapes += iso.summary.escapes;
    audits_pass = audits_pass && iso.pass && trap_audit(t).pass;
  }
  const bool pass = audits_pass && injected >= 1000 && contained == injected && escapes == 0;
  report(2, "isolation fuzzing", pass,
         std::to_string(contained) + "/" + std::to_string(injected) + " contained, " +
             std::to_string(escapes) + " escapes");
}

// ---- criteria 3 and 4: scheduler properties --------------------------------

struct RandomSet {
  Scenario scenario;
  int vcpus = 0;
};

RandomSet random_sched_set(std::mt19937_64& rng, bool always_backlogged) {
  const int pcpus = 1 + static_cast<int>(rng() % 2);
  std::vector<VcpuSpec> vcpus;
  std::vector<ThreadSpec> threads;
  int id = 0;
  for (int p = 0; p < pcpus; ++p) {
    const int n = 1 + static_cast<int>(rng() % 4);
    std::vector<VcpuParams> admitted;
    for (int i = 0; i < n; ++i) {
      for (int attempt = 0; attempt < 12; ++attempt) {
        const Time period = usec(2 + rng() % 40000);
        Time budget = usec(1 + rng() % std::max<std::int64_t>(1, period / 1000));
        if (budget > period) budget = period;
        if (!admission_check(admitted, {budget, period}).admitted) continue;
        admitted.push_back({budget, period});
        vcpus.push_back(main_vcpu(id, budget, period, p));
        if (always_backlogged) {
          threads.push_back(busy_thread(id, id));
        } else {
          switch (rng() % 3) {
            case 0: threads.push_back(busy_thread(id, id)); break;
            case 1:
              threads.push_back(periodic_thread(id, id, usec(rng() % 5000),
                                                usec(1000 + rng() % 20000),
                                                usec(1 + rng() % 3000)));
              break;
            default: {
              std::vector<std::pair<Time, Time>> jobs;
              Time at = usec(rng() % 2000);
              for (int j = 0; j < 8; ++j) {
                jobs.push_back({at, usec(1 + rng() % 4000)});
                at += usec(1 + rng() % 30000);
              }
              threads.push_back(jobs_thread(id, id, jobs));
              break;
            }
          }
        }
        ++id;
        break;
      }
    }
  }
  RandomSet out{sched_scenario(std::move(vcpus), std::move(threads), usec(1000000),
                               rng() % 100000),
                id};
  return out;
}

void criterion_window_bound() {
  std::mt19937_64 rng(0x5EED0003);
  bool pass = true;
  std::string detail;
  int checked_vcpus = 0;
  for (int i = 0; i < 100; ++i) {
    const RandomSet set = random_sched_set(rng, false);
    const Trace t = run_scenario(set.scenario);
    const auto audit = window_audit(t);
    checked_vcpus += static_cast<int>(audit.entries.size());
    if (!audit.pass) {
      pass = false;
      detail = "window bound broken in random scenario " + std::to_string(i);
      break;
    }
  }

  // Negative control: the defective single-replenishment variant must fail
  // on the constructed counterexample.
  const auto vcpus = {main_vcpu(1, usec(1000), usec(9000)),
                      main_vcpu(2, usec(5000), usec(10000))};
  const auto threads = {jobs_thread(0, 1, {{usec(2000), usec(1000)}}), busy_thread(1, 2)};
  auto defective =
      sched_scenario(vcpus, threads, usec(40000), 1, ReplenishPolicy::SingleDeferred);
  const auto bad_audit = window_audit(run_scenario(defective));
  if (bad_audit.pass) {
    pass = false;
    detail = "defective scheduler slipped past the window checker";
  }
  auto chunked = sched_scenario(vcpus, threads, usec(40000), 1, ReplenishPolicy::Chunked);
  if (!window_audit(run_scenario(chunked)).pass) {
    pass = false;
    detail = "correct scheduler failed the counterexample scenario";
  }

  report(3, "sliding-window budget bound", pass,
         detail.empty()
             ? std::to_string(checked_vcpus) + " vcpus over 100 scenarios, defect caught"
             : detail);
}

// Admitted always-backlogged sets with harmonic periods: the phase-locked
// case where the sporadic server is exactly a periodic task. Non-harmonic
// sets keep the window upper bound (criterion 3) but can drift off the
// activation grid; see the characterization test in the unit suite.
Scenario random_harmonic_set(std::mt19937_64& rng) {
  const int pcpus = 1 + static_cast<int>(rng() % 2);
  std::vector<VcpuSpec> vcpus;
  std::vector<ThreadSpec> threads;
  int id = 0;
  for (int p = 0; p < pcpus; ++p) {
    const int n = 1 + static_cast<int>(rng() % 4);
    Time period = usec(2 + rng() % 3000);
    std::vector<VcpuParams> admitted;
    const int multipliers[] = {1, 2, 2, 3, 4, 5, 8};
    for (int i = 0; i < n; ++i) {
      if (i > 0) period *= multipliers[rng() % 7];
      Time budget = usec(1) + static_cast<Time>(rng() % static_cast<std::uint64_t>(period));
      int tries = 0;
      while (!admission_check(admitted, {budget, period}).admitted && ++tries < 24)
        budget = std::max<Time>(usec(1), budget / 2);
      if (!admission_check(admitted, {budget, period}).admitted) continue;
      admitted.push_back({budget, period});
      vcpus.push_back(main_vcpu(id, budget, period, p));
      threads.push_back(busy_thread(id, id));
      ++id;
    }
  }
  return sched_scenario(std::move(vcpus), std::move(threads), usec(1000000), rng());
}

void criterion_service_guarantee() {
  std::mt19937_64 rng(0x5EED0004);
  bool pass = true;
  std::string detail;
  std::int64_t windows = 0;
  for (int i = 0; i < 100 && pass; ++i) {
    const Scenario scn = random_harmonic_set(rng);
    const Trace t = run_scenario(scn);
    const auto recs = sched_records(t);
    for (const VcpuInfo& v : t.meta.vcpus) {
      const auto fg = foreground_intervals(recs, v.sandbox, v.vcpu);
      const auto svc = service_check(fg, v.budget, v.period, t.meta.until);
      windows += svc.windows_checked;
      if (!svc.pass) {
        pass = false;
        detail = "vcpu " + std::to_string(v.vcpu) + " in scenario " + std::to_string(i) +
                 " got " + std::to_string(svc.bad_window_sum) + "ns in the window at " +
                 std::to_string(svc.bad_window_start) + "ns";
        break;
      }
    }
  }
  report(4, "rms service guarantee", pass,
         detail.empty() ? std::to_string(windows) + " period windows exact (harmonic sets)"
                        : detail);
}

// ---- criterion 5: ept footprint --------------------------------------------

std::uint64_t constructor_footprint(std::uint64_t bytes, PageSize policy) {
  const std::uint64_t leaf_bytes = policy == PageSize::k2M ? kSuperpageBytes : kPageBytes;
  const std::uint64_t leaves = (bytes + leaf_bytes - 1) / leaf_bytes;
  std::set<std::uint64_t> pointers, directories, tables;
  for (std::uint64_t i = 0; i < leaves; ++i) {
    if (policy == PageSize::k2M) {
      directories.insert(i / 512);
      pointers.insert(i / 512 / 512);
    } else {
      tables.insert(i / 512);
      directories.insert(i / 512 / 512);
      pointers.insert(i / 512 / 512 / 512);
    }
  }
  return (1 + pointers.size() + directories.size() + tables.size()) * kPageBytes;
}

void criterion_footprint() {
  bool pass = ept_footprint(1ull << 30, PageSize::k2M) == 12 * 1024;
  std::string detail = "1GB with 2MB pages -> " +
                       std::to_string(ept_footprint(1ull << 30, PageSize::k2M) / 1024) + "KB";
  std::mt19937_64 rng(5);
  for (std::uint64_t bytes = 4096; bytes <= (4ull << 30) && pass; bytes *= 2) {
    const std::uint64_t samples[] = {bytes, bytes + 1 + rng() % bytes};
    for (std::uint64_t b : samples) {
      if (b > (4ull << 30)) continue;
      for (PageSize p : {PageSize::k2M, PageSize::k4K}) {
        if (ept_footprint(b, p) != constructor_footprint(b, p)) {
          pass = false;
          detail = "formula and constructor disagree at " + std::to_string(b) + " bytes";
        }
      }
    }
  }
  report(5, "ept footprint", pass, detail);
}

// ---- criterion 6: admission bound ------------------------------------------

void criterion_admission() {
  bool pass = liu_layland_bound(1) == 1.0;
  const double two = liu_layland_bound(2);
  if (std::abs(two - 0.8284271247) > 5e-7) pass = false;  // six decimal places
  const auto accept = admission_check({{usec(40), usec(100)}}, {usec(40), usec(100)});
  const auto reject = admission_check({{usec(45), usec(100)}}, {usec(45), usec(100)});
  if (!accept.admitted || reject.admitted) pass = false;
  char buf[96];
  std::snprintf(buf, sizeof buf, "n=2 bound %.7f, 0.8 in, 0.9 out", two);
  report(6, "liu-layland admission", pass, buf);
}

// ---- criterion 7: translation oracle ---------------------------------------

AccessOutcome walker(const GuestPageTable& gpt, const ExtendedPageTable& ept,
                     std::uint64_t gva, Access access) {
  const PageNum gva_page = page_of(gva);
  auto g = gpt.entries().find(gva_page);
  if (g == gpt.entries().end() || !g->second.perms.allows(access))
    return GuestPageFault{gva, access};
  const std::uint64_t gpa = page_addr(g->second.gpa_page) | page_offset(gva);
  for (const auto& [base, entry] : ept.entries()) {
    if (g->second.gpa_page < base || g->second.gpa_page >= base + entry.page_count()) continue;
    if (!entry.perms.allows(access)) return EptViolation{gpa, access};
    return AccessOk{page_addr(entry.hpa_page + (g->second.gpa_page - base)) | page_offset(gva)};
  }
  return EptViolation{gpa, access};
}

void criterion_translation_oracle() {
  std::mt19937_64 rng(0x5EED0007);
  int cases = 0;
  bool pass = true;
  while (cases < 10000 && pass) {
    MemoryModel mm;
    mm.add_sandbox(1);
    auto perms = [&]() {
      const auto bits = rng() % 8;
      return Permissions{(bits & 1) != 0, (bits & 2) != 0, (bits & 4) != 0};
    };
    for (int i = 0; i < 20; ++i) mm.guest_map(1, rng() % 48, rng() % 48, perms());
    for (int i = 0; i < 14; ++i) {
      if (rng() % 4 == 0)
        mm.ept_map(1, (rng() % 3) * 512, (rng() % 3) * 512 + 2048, perms(), PageSize::k2M,
                   false);
      else
        mm.ept_map(1, rng() % 48, 8192 + rng() % 128, perms(), PageSize::k4K, false);
    }
    for (int q = 0; q < 250 && pass; ++q, ++cases) {
      if (q % 13 == 7) mm.guest_map(1, rng() % 48, rng() % 48, perms());
      const std::uint64_t gva = (rng() % 48) * kPageBytes + rng() % kPageBytes;
      const Access access = static_cast<Access>(rng() % 3);
      const auto got = mm.translate(1, gva, access);
      const auto want = walker(mm.gpt(1), mm.ept(1), gva, access);
      if (got.index() != want.index()) pass = false;
      if (pass) {
        if (const auto* ok = std::get_if<AccessOk>(&got))
          if (ok->hpa != std::get<AccessOk>(want).hpa) pass = false;
      }
    }
  }
  report(7, "translation oracle", pass, std::to_string(cases) + " randomized lookups");
}

// ---- criterion 8: pci mediation protocol ------------------------------------

void criterion_pci_protocol() {
  bool pass = true;
  std::string detail;
  std::uint64_t allowed = 0, denied = 0;
  for (std::uint64_t seed = 100; seed < 110 && pass; ++seed) {
    Scenario s = canonical();
    s.run.until = usec(2000000);
    s.run.seed = seed;
    std::mt19937_64 rng(seed);
    const char* names[] = {"nic", "serial", "usb", "gpu"};
    for (int i = 0; i < 60; ++i) {
      FaultSpec f;
      f.time = usec(500 + (rng() % 1800000));
      f.sandbox = static_cast<SandboxId>(1 + rng() % 3);
      f.kind = FaultSpec::Kind::PciProbe;
      if (rng() % 6 == 0) {
        f.bdf = PciConfigTarget{7, 31, 0, 0};  // nobody home
      } else {
        f.device = names[rng() % 4];  // sometimes owned, sometimes not
      }
      f.pci_offset = static_cast<std::uint8_t>((rng() % 16) * 4);
      f.dir = rng() % 4 == 0 ? Direction::Out : Direction::In;
      f.width = rng() % 3 == 0 ? 2 : 4;
      f.value = static_cast<std::uint32_t>(rng());
      s.faults.push_back(f);
    }
    const Trace t = run_scenario(s);
    const auto audit = pci_audit(t);
    allowed += audit.allowed;
    denied += audit.denied_blacklist;
    if (!audit.pass) {
      pass = false;
      detail = "protocol audit failed for seed " + std::to_string(seed);
    }
  }
  if (allowed == 0 || denied == 0) {
    pass = false;
    detail = "workload failed to exercise both mediation paths";
  }
  report(8, "pci mediation protocol", pass,
         detail.empty() ? std::to_string(allowed) + " arm/step/re-mask cycles, " +
                              std::to_string(denied) + " blacklist denials"
                        : detail);
}

// ---- criterion 9: determinism ----------------------------------------------

void criterion_determinism() {
  bool pass = true;
  std::string detail;

  auto twice_identical = [&](const Scenario& s, const std::string& label) {
    const std::string a = export_json(run_scenario(s));
    const std::string b = export_json(run_scenario(s));
    if (a != b) {
      pass = false;
      detail = label + " diverged between runs";
    }
  };

  Scenario steady = canonical();
  steady.run.until = usec(2000000);
  twice_identical(steady, "steady state");

  Scenario with_channel = steady;
  ChannelSpec c;
  c.time = usec(1000);
  c.a = 1;
  c.b = 2;
  with_channel.channels.push_back(c);
  twice_identical(with_channel, "channel scenario");

  twice_identical(fuzz_scenario(7, 40), "fuzz scenario");

  std::mt19937_64 rng(0x5EED0009);
  twice_identical(random_sched_set(rng, false).scenario, "random scheduling scenario");

  // CSV export is covered by the same contract.
  const Trace t = run_scenario(steady);
  export_csv(t, "/tmp/sksim_acc_a");
  export_csv(run_scenario(steady), "/tmp/sksim_acc_b");
  for (const char* fam : {"_sched.csv", "_irq.csv", "_counters.csv"}) {
    std::ifstream fa(std::string("/tmp/sksim_acc_a") + fam);
    std::ifstream fb(std::string("/tmp/sksim_acc_b") + fam);
    std::stringstream sa, sb;
    sa << fa.rdbuf();
    sb << fb.rdbuf();
    if (sa.str() != sb.str() || sa.str().empty()) {
      pass = false;
      detail = std::string("csv family ") + fam + " diverged";
    }
  }

  report(9, "determinism", pass, detail);
}

}  // namespace

int main() {
  std::printf("acceptance criteria\n");
  criterion_zero_trap();
  criterion_isolation_fuzz();
  criterion_window_bound();
  criterion_service_guarantee();
  criterion_footprint();
  criterion_admission();
  criterion_translation_oracle();
  criterion_pci_protocol();
  criterion_determinism();
  if (failures == 0)
    std::printf("all 9 criteria passed\n");
  else
    std::printf("%d criteria FAILED\n", failures);
  return failures == 0 ? 0 : 1;
}
