// Acceptance suite: one verdict line per criterion, exit 0 only if all pass.

#include "manakin/harness.hpp"
#include "manakin/image.hpp"
#include "manakin/restart.hpp"
#include "manakin/system.hpp"
#include "manakin/workloads.hpp"

#include "image_gen.hpp"

#include <chrono>
#include <iostream>
#include <memory>
#include <sstream>

using namespace manakin;

namespace {

int g_failures = 0;

void verdict(int criterion, bool pass, const std::string &what, const std::string &detail = "") {
    std::cout << (pass ? "PASS" : "FAIL") << " criterion-" << criterion << ": " << what;
    if (!detail.empty()) {
        std::cout << " [" << detail << "]";
    }
    std::cout << std::endl;
    if (!pass) {
        ++g_failures;
    }
}

std::uint64_t native_steps(const std::string &workload, const WorkloadParams &params,
                           const RunConfig &cfg) {
    System sys(cfg, make_workload(workload, params));
    RunResult r = sys.run(50'000'000);
    if (r.what != RunResult::What::Finished) {
        throw SimError(Err::InvalidConfiguration, "workload did not complete natively");
    }
    return sys.global_step();
}

// Grows the round count until the native run offers at least `minPoints`
// multiples of the stride.
WorkloadParams size_for_points(const std::string &workload, WorkloadParams params,
                               const RunConfig &cfg, std::uint64_t stride,
                               std::uint64_t minPoints) {
    for (;;) {
        const std::uint64_t steps = native_steps(workload, params, cfg);
        if (steps / stride >= minPoints) {
            return params;
        }
        if (workload == "straggler") {
            params.delaySteps = params.delaySteps * 2 + 100;
        } else {
            params.rounds *= 2;
        }
    }
}

// -------------------------------------------------------------------------
// 1. Transparency sweep
// -------------------------------------------------------------------------
std::uint64_t g_sweepRounds = 0; // checkpoint rounds completed inside criteria 1-2

void criterion1() {
    const std::uint64_t stride = 10;
    std::uint64_t totalInjections = 0;
    std::uint64_t totalPasses = 0;
    std::ostringstream detail;
    bool ok = true;

    for (const std::string workload : {"p2p-ring", "collective-storm", "straggler"}) {
        for (int n : {2, 4, 8, 16}) {
            RunConfig cfg;
            cfg.procs = n;
            cfg.seed = 11;
            WorkloadParams base;
            base.rounds = 4;
            base.msgBytes = 48;
            base.delaySteps = 400;
            WorkloadParams params = size_for_points(workload, base, cfg, stride, 50);

            SweepResult r = ckpt_sweep(workload, params, cfg, stride);
            totalInjections += r.injections;
            totalPasses += r.passes;
            if (r.injections < 50 || !r.failures.empty()) {
                ok = false;
                detail << workload << "/N=" << n << " injections=" << r.injections
                       << " failures=" << r.failures.size() << "; ";
            }
        }
    }
    std::ostringstream what;
    what << "transparency sweep: " << totalPasses << "/" << totalInjections
         << " injections byte-identical across {p2p-ring, collective-storm, straggler} x N in "
            "{2,4,8,16}";
    verdict(1, ok && totalPasses == totalInjections, what.str(), detail.str());
    g_sweepRounds += totalPasses; // each passing injection completed one round
}

// -------------------------------------------------------------------------
// 2. Ten-round endurance at N=32
// -------------------------------------------------------------------------
void criterion2() {
    bool ok = true;
    std::ostringstream detail;
    for (const std::string workload : {"p2p-ring", "collective-storm"}) {
        WorkloadParams params;
        params.rounds = workload == "p2p-ring" ? 24 : 8;
        RunConfig cfg;
        cfg.procs = 32;
        cfg.seed = 2;

        const std::uint64_t total = native_steps(workload, params, cfg);
        const std::uint64_t gap = std::max<std::uint64_t>(total / 12, 20);
        std::vector<std::uint64_t> points;
        for (int k = 1; k <= 10; ++k) {
            points.push_back(gap * static_cast<std::uint64_t>(k));
        }
        EquivalenceResult r = run_equivalence(workload, params, cfg, points);
        if (!r.pass || r.roundsCompleted != 10) {
            ok = false;
            detail << workload << ": rounds=" << r.roundsCompleted << " " << r.diagnosis << "; ";
        }
        g_sweepRounds += r.roundsCompleted;
    }
    verdict(2, ok, "ten consecutive checkpoint-kill-restart rounds at N=32 stay transparent",
            detail.str());
}

// -------------------------------------------------------------------------
// 3. Deadlock reproduction across 100 seeds
// -------------------------------------------------------------------------
void criterion3() {
    bool ok = true;
    std::ostringstream detail;
    for (std::uint64_t seed = 1; seed <= 100 && ok; ++seed) {
        for (Mode m : {Mode::NaiveBarrier, Mode::P2PEmulation, Mode::Hybrid2PC}) {
            RunConfig cfg;
            cfg.procs = 2;
            cfg.seed = seed;
            cfg.mode = m;
            System sys(cfg, make_workload("bcast-deadlock", {}));
            RunResult r = sys.run(1'000'000);
            const bool wantDeadlock = m == Mode::NaiveBarrier;
            const bool gotDeadlock = r.what == RunResult::What::Deadlock;
            if (wantDeadlock != gotDeadlock) {
                ok = false;
                detail << "seed " << seed << " mode " << mode_name(m) << " -> "
                       << (gotDeadlock ? "deadlock" : "completion");
                break;
            }
        }
    }
    verdict(3, ok,
            "bcast-deadlock deadlocks under naive-barrier and completes under p2p-emulation and "
            "hybrid-2pc for 100 seeds",
            detail.str());
}

// -------------------------------------------------------------------------
// 4. Drain invariant (zero tolerance)
// -------------------------------------------------------------------------
void criterion4() {
    // Every drain in criteria 1-2 already ran the embedded network-empty and
    // per-pair balance checks (a violation aborts the round and fails the
    // sweep). Re-verify here explicitly on a live post-drain system.
    bool ok = g_sweepRounds > 0;
    std::string detail;
    try {
        WorkloadParams params;
        params.rounds = 40;
        RunConfig cfg;
        cfg.procs = 8;
        System sys(cfg, make_workload("p2p-ring", params));
        bool requested = false;
        RunResult r = sys.run(UINT64_MAX, [&](System &s) {
            if (!requested && s.global_step() == 97) {
                s.request_checkpoint(0);
                requested = true;
            }
        });
        if (r.what != RunResult::What::Checkpoint) {
            ok = false;
            detail = "no checkpoint produced";
        } else {
            sys.check_drain_invariants(); // throws on any imbalance
            if (!sys.lower_half().network_empty()) {
                ok = false;
            }
        }
    } catch (const SimError &e) {
        ok = false;
        detail = e.what();
    }
    std::ostringstream what;
    what << "network-empty and sent = received + buffered held exactly across " << g_sweepRounds
         << " drains";
    verdict(4, ok, what.str(), detail);
}

// -------------------------------------------------------------------------
// 5. Retirement / garbage collection
// -------------------------------------------------------------------------
void criterion5() {
    bool ok = true;
    std::ostringstream detail;
    std::size_t highWaterShort = 0;
    std::size_t highWaterLong = 0;
    for (std::uint64_t rounds : {25ULL, 400ULL}) {
        WorkloadParams params;
        params.rounds = rounds;
        RunConfig cfg;
        cfg.procs = 4;
        System sys(cfg, make_workload("p2p-ring", params));
        if (sys.run().what != RunResult::What::Finished) {
            ok = false;
            break;
        }
        std::size_t hw = 0;
        for (const auto &p : sys.processes()) {
            if (!p.requestTable.empty()) {
                ok = false;
                detail << "rank " << p.rank() << " table not empty; ";
            }
            hw = std::max(hw, p.metrics.requestTableHighWater);
        }
        (rounds == 25 ? highWaterShort : highWaterLong) = hw;
    }
    if (highWaterLong > 4) {
        ok = false;
        detail << "high water " << highWaterLong << " > 4; ";
    }
    if (highWaterLong != highWaterShort) {
        ok = false;
        detail << "high water grew with round count; ";
    }
    // Also empty after a collective-heavy workload that waits everything.
    {
        WorkloadParams params;
        params.rounds = 12;
        RunConfig cfg;
        cfg.procs = 4;
        System sys(cfg, make_workload("collective-storm", params));
        if (sys.run().what != RunResult::What::Finished) {
            ok = false;
        }
        for (const auto &p : sys.processes()) {
            if (!p.requestTable.empty()) {
                ok = false;
                detail << "storm left entries; ";
            }
        }
    }
    std::ostringstream what;
    what << "request table empty at termination; ring high-water " << highWaterLong
         << " <= 4 regardless of round count";
    verdict(5, ok, what.str(), detail.str());
}

// -------------------------------------------------------------------------
// 6. Restart frugality
// -------------------------------------------------------------------------
void criterion6() {
    bool ok = true;
    std::ostringstream detail;
    try {
        WorkloadParams params;
        params.creates = 20;
        params.frees = 15;
        RunConfig cfg;
        cfg.procs = 4;
        ProgramFactory factory = make_workload("comm-churn", params);

        System native(cfg, factory);
        if (native.run().what != RunResult::What::Finished) {
            throw SimError(Err::InvalidConfiguration, "churn did not complete natively");
        }
        const auto expected = native.outputs();

        System sys(cfg, factory);
        bool requested = false;
        RunResult r = sys.run(UINT64_MAX, [&](System &s) {
            if (requested) {
                return;
            }
            for (const auto &p : s.processes()) {
                if (p.program() == nullptr || p.program()->phase_tag() != 1) {
                    return;
                }
            }
            s.request_checkpoint(0);
            requested = true;
        });
        if (r.what != RunResult::What::Checkpoint) {
            throw SimError(Err::InvalidConfiguration, "no checkpoint produced");
        }

        System restarted(cfg, factory, r.imageBlobs);
        // Counted via the lower-half event log of the restarted instance.
        std::size_t createEvents = 0;
        for (const auto &ev : restarted.log().records()) {
            if (ev.kind == EvKind::CommCreate) {
                ++createEvents;
            }
        }
        const std::uint64_t rebuilt = createEvents - 1; // minus the bootstrap world
        if (rebuilt != 5 || restarted.restartCommCreations != 5) {
            ok = false;
            detail << "created " << rebuilt << " (expected 5); ";
        }
        if (restarted.run().what != RunResult::What::Finished ||
            restarted.outputs() != expected) {
            ok = false;
            detail << "restarted churn not transparent; ";
        }
    } catch (const SimError &e) {
        ok = false;
        detail << e.what();
    }
    verdict(6, ok, "20 created / 15 freed before checkpoint: restart creates exactly 5 communicators",
            detail.str());
}

// -------------------------------------------------------------------------
// 7. Emulation equivalence, exhaustive interleavings
// -------------------------------------------------------------------------
class OneCollectiveProgram final : public Program {
public:
    OneCollectiveProgram(int n, WorldRank rank, CollKind kind) : m_rank(rank), m_kind(kind) {
        (void)n;
    }
    void step(AppApi &api) override {
        switch (m_pc) {
        case 0: {
            Bytes contribution;
            if (m_kind == CollKind::Allreduce) {
                put_u64(contribution, static_cast<std::uint64_t>(m_rank) + 3);
            } else if (m_kind == CollKind::Bcast && m_rank == 0) {
                contribution = Bytes(5, 0x6E);
            }
            api.collective(api.world_comm(), m_kind, 0, ReduceOp::Sum, std::move(contribution), 0);
            m_pc = 1;
            return;
        }
        default:
            m_out = api.mem().buffer(0);
            m_fin = true;
            return;
        }
    }
    bool finished() const override { return m_fin; }
    Bytes output() const override { return m_out; }
    void save(Bytes &out) const override {
        put_u64(out, m_pc);
        put_bytes(out, m_out);
        out.push_back(m_fin ? 1 : 0);
    }
    void load(ByteReader &in) override {
        m_pc = in.read_u64();
        m_out = in.read_bytes();
        m_fin = in.read_u8() != 0;
    }

private:
    WorldRank m_rank;
    CollKind m_kind;
    std::uint64_t m_pc = 0;
    Bytes m_out;
    bool m_fin = false;
};

void criterion7() {
    bool ok = true;
    std::uint64_t schedules = 0;
    std::ostringstream detail;

    for (int n = 2; n <= 3 && ok; ++n) {
        for (CollKind kind : {CollKind::Barrier, CollKind::Bcast, CollKind::Allreduce}) {
            ProgramFactory factory = [kind](int nn, WorldRank r) -> std::unique_ptr<Program> {
                return std::make_unique<OneCollectiveProgram>(nn, r, kind);
            };
            // Native reference through the lower-half collective engine.
            RunConfig nativeCfg;
            nativeCfg.procs = n;
            nativeCfg.mode = Mode::Hybrid2PC;
            System native(nativeCfg, factory);
            if (native.run().what != RunResult::What::Finished) {
                ok = false;
                break;
            }
            const auto expected = native.outputs();

            // Exhaustive DFS over scheduler choices of the emulated run.
            std::vector<std::vector<std::size_t>> frontier = {{}};
            while (!frontier.empty() && ok) {
                std::vector<std::size_t> prefix = frontier.back();
                frontier.pop_back();
                RunConfig cfg;
                cfg.procs = n;
                cfg.mode = Mode::P2PEmulation;
                System sys(cfg, factory);
                auto sched = std::make_unique<ScriptedSchedule>();
                sched->choices = prefix;
                ScriptedSchedule *raw = sched.get();
                sys.set_schedule(std::move(sched));
                RunResult r = sys.run(100000);
                ++schedules;
                if (r.what != RunResult::What::Finished) {
                    ok = false;
                    detail << coll_kind_name(kind) << "/N=" << n << " deadlocked under emulation; ";
                    break;
                }
                if (sys.outputs() != expected) {
                    ok = false;
                    detail << coll_kind_name(kind) << "/N=" << n << " output mismatch; ";
                    break;
                }
                if (schedules > 2'000'000) {
                    ok = false;
                    detail << "schedule space blew up; ";
                    break;
                }
                for (std::size_t d = prefix.size(); d < raw->fanout.size(); ++d) {
                    if (raw->fanout[d] > 1) {
                        for (std::size_t c = 1; c < raw->fanout[d]; ++c) {
                            auto next = prefix;
                            next.resize(d, 0);
                            next.push_back(c);
                            frontier.push_back(std::move(next));
                        }
                        break;
                    }
                }
            }
        }
    }
    std::ostringstream what;
    what << "p2p emulation of barrier/bcast/allreduce output-equivalent to the collective engine "
            "over "
         << schedules << " exhaustive interleavings (N<=3)";
    verdict(7, ok, what.str(), detail.str());
}

// -------------------------------------------------------------------------
// 8. Image format round-trip and rejection
// -------------------------------------------------------------------------
void criterion8() {
    bool ok = true;
    std::ostringstream detail;
    for (std::uint64_t seed = 1; seed <= 1000; ++seed) {
        ProcessImage img = random_image(seed);
        ProcessImage back = parse_image(serialize_image(img));
        if (!(back == img)) {
            ok = false;
            detail << "round-trip mismatch at seed " << seed << "; ";
            break;
        }
    }
    {
        Bytes wire = serialize_image(random_image(31337));
        Bytes corrupt = wire;
        corrupt[corrupt.size() - 2] ^= 0x10;
        try {
            parse_image(corrupt);
            ok = false;
            detail << "corrupt CRC accepted; ";
        } catch (const SimError &e) {
            if (e.code() != Err::CorruptImage) {
                ok = false;
                detail << "corrupt CRC -> wrong error; ";
            }
        }
        Bytes truncated(wire.begin(), wire.begin() + static_cast<std::ptrdiff_t>(wire.size() / 3));
        try {
            parse_image(truncated);
            ok = false;
            detail << "truncated image accepted; ";
        } catch (const SimError &e) {
            if (e.code() != Err::CorruptImage) {
                ok = false;
                detail << "truncation -> wrong error; ";
            }
        }
        // Truncated section body with a recomputed trailer.
        Bytes chopped(wire.begin(), wire.end() - 20);
        put_u32(chopped, crc32(chopped));
        try {
            parse_image(chopped);
            ok = false;
            detail << "chopped section accepted; ";
        } catch (const SimError &) {
        }
    }
    verdict(8, ok, "serialize/deserialize identity on 1000 randomized states; corrupt CRC and "
                   "truncated sections rejected",
            detail.str());
}

} // namespace

int main() {
    const auto t0 = std::chrono::steady_clock::now();
    try {
        criterion1();
        criterion2();
        criterion3();
        criterion4();
        criterion5();
        criterion6();
        criterion7();
        criterion8();
    } catch (const std::exception &e) {
        std::cout << "FAIL: acceptance aborted: " << e.what() << std::endl;
        return 1;
    }
    const auto t1 = std::chrono::steady_clock::now();
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(t1 - t0).count();
    std::cout << (g_failures == 0 ? "ALL CRITERIA PASS" : "FAILURES PRESENT") << " (" << secs
              << "s)" << std::endl;
    return g_failures == 0 ? 0 : 1;
}
