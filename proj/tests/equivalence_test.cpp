// The native-vs-checkpointed transparency oracle: exhaustive injection
// sweeps on small configurations, schedule fuzz, and mode coverage.

#include "manakin/harness.hpp"

#include <doctest.h>

using namespace manakin;

TEST_CASE("injection sweep over every step of a small 2-rank exchange") {
    WorkloadParams params;
    params.rounds = 3;
    params.msgBytes = 24;
    RunConfig cfg;
    cfg.procs = 2;
    cfg.seed = 4;

    System probe(cfg, make_workload("p2p-ring", params));
    REQUIRE(probe.run().what == RunResult::What::Finished);
    const std::uint64_t total = probe.global_step();

    for (std::uint64_t k = 1; k < total; ++k) {
        EquivalenceResult r = run_equivalence("p2p-ring", params, cfg, {k});
        INFO("injection at step ", k, ": ", r.diagnosis);
        CHECK(r.pass);
    }
}

TEST_CASE("sweep covers every wrapper phase class") {
    WorkloadParams params;
    params.rounds = 6;
    RunConfig ring;
    ring.procs = 2;
    SweepResult ringSweep = ckpt_sweep("p2p-ring", params, ring, 3);
    CHECK(ringSweep.failures.empty());

    RunConfig storm;
    storm.procs = 3;
    storm.mode = Mode::P2PEmulation;
    SweepResult stormSweep = ckpt_sweep("collective-storm", params, storm, 3);
    CHECK(stormSweep.failures.empty());

    std::set<PhaseClass> covered = ringSweep.coveredClasses;
    covered.insert(stormSweep.coveredClasses.begin(), stormSweep.coveredClasses.end());
    CHECK(covered.count(PhaseClass::SendLoop) == 1);
    CHECK(covered.count(PhaseClass::RecvLoop) == 1);
    CHECK(covered.count(PhaseClass::CollectiveEmulation) == 1);
    CHECK(covered.count(PhaseClass::CreateTestGap) == 1);
}

TEST_CASE("multi-round injections stay transparent in every mode") {
    WorkloadParams params;
    params.rounds = 12;
    for (const char *w : {"p2p-ring", "collective-storm"}) {
        for (Mode m : {Mode::Hybrid2PC, Mode::P2PEmulation, Mode::NaiveBarrier}) {
            RunConfig cfg;
            cfg.procs = 4;
            cfg.mode = m;
            cfg.seed = 23;
            EquivalenceResult r = run_equivalence(w, params, cfg, {30, 90, 160});
            INFO(w, " under ", mode_name(m), ": ", r.diagnosis);
            CHECK(r.pass);
            CHECK(r.roundsCompleted == 3);
        }
    }
}

TEST_CASE("straggler checkpoint in the compute gap stays transparent") {
    WorkloadParams params;
    params.delaySteps = 2000;
    RunConfig cfg;
    cfg.procs = 4;
    EquivalenceResult r = run_equivalence_when(
        "straggler", params, cfg,
        [](System &s) {
            // Request while the straggler is mid-gap and someone already
            // waits inside the lower-half barrier.
            bool inBarrier = false;
            for (const auto &p : s.processes()) {
                if (p.in_lower_half()) {
                    inBarrier = true;
                }
            }
            return inBarrier && s.processes()[0].program()->phase_tag() == 1;
        },
        1);
    INFO(r.diagnosis);
    CHECK(r.pass);
    CHECK(r.roundsCompleted == 1);
}

TEST_CASE("naive-barrier sweep: checkpoints inside inserted barriers stay transparent") {
    WorkloadParams params;
    params.rounds = 5;
    RunConfig cfg;
    cfg.procs = 3;
    cfg.mode = Mode::NaiveBarrier;
    SweepResult r = ckpt_sweep("collective-storm", params, cfg, 7);
    CHECK(r.injections > 10);
    CHECK(r.failures.empty());
}

TEST_CASE("seeded schedule fuzz: 1000 trials all transparent") {
    WorkloadParams params;
    params.rounds = 4;
    params.msgBytes = 16;
    RunConfig cfg;
    cfg.procs = 3;
    FuzzResult r = fuzz("p2p-ring", params, cfg, 1000, 0xF00D);
    CHECK(r.trials == 1000);
    CHECK(r.passes == 1000);
    CHECK(r.failingSeeds.empty());
}

TEST_CASE("deadlocking runs are reported with a wait-graph dump") {
    RunConfig cfg;
    cfg.procs = 2;
    cfg.mode = Mode::NaiveBarrier;
    EquivalenceResult r = run_equivalence("bcast-deadlock", {}, cfg, {5});
    CHECK_FALSE(r.pass);
    CHECK(r.deadlocked);
    CHECK(r.diagnosis.find("rank 0") != std::string::npos);
    CHECK(r.diagnosis.find("rank 1") != std::string::npos);
}

TEST_CASE("mixed-stress: wildcards, carried requests, subcomm traffic under checkpoints") {
    WorkloadParams params;
    params.rounds = 8;
    params.splitEvery = 3;
    for (Mode m : {Mode::Hybrid2PC, Mode::P2PEmulation, Mode::NaiveBarrier}) {
        RunConfig cfg;
        cfg.procs = 4;
        cfg.mode = m;
        cfg.seed = 71;
        EquivalenceResult r = run_equivalence("mixed-stress", params, cfg, {25, 75, 140, 220});
        INFO("mode ", mode_name(m), ": ", r.diagnosis);
        CHECK(r.pass);
        CHECK(r.roundsCompleted == 4);
    }
}

TEST_CASE("mixed-stress sweep and fuzz stay transparent") {
    WorkloadParams params;
    params.rounds = 4;
    params.splitEvery = 2;
    RunConfig cfg;
    cfg.procs = 3;
    SweepResult sweep = ckpt_sweep("mixed-stress", params, cfg, 5);
    CHECK(sweep.injections > 20);
    CHECK(sweep.failures.empty());

    FuzzResult fz = fuzz("mixed-stress", params, cfg, 300, 0xBEEF);
    CHECK(fz.passes == fz.trials);
}
