#include "manakin/harness.hpp"

#include <algorithm>
#include <ostream>
#include <sstream>

namespace manakin {

std::string phase_class_name(PhaseClass c) {
    switch (c) {
    case PhaseClass::Idle: return "idle";
    case PhaseClass::SendLoop: return "send-loop";
    case PhaseClass::RecvLoop: return "recv-loop";
    case PhaseClass::CollectiveEmulation: return "collective-emulation";
    case PhaseClass::CreateTestGap: return "between-create-and-test";
    }
    return "?";
}

namespace {

std::string hex_prefix(const Bytes &b, std::size_t n = 16) {
    static const char *digits = "0123456789abcdef";
    std::string out;
    for (std::size_t i = 0; i < b.size() && i < n; ++i) {
        out.push_back(digits[b[i] >> 4]);
        out.push_back(digits[b[i] & 0xF]);
    }
    return out;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t round) {
    SplitMix64 s(base ^ (0x9E3779B97f4A7C15ULL * (round + 1)));
    return s.next();
}

struct CheckpointedRun {
    bool finished = false;
    bool deadlocked = false;
    std::string diagnosis;
    std::vector<Bytes> outputs;
    std::uint64_t rounds = 0;
    std::set<PhaseClass> classes;
    SystemMetrics metrics;
    WrapperMetrics wrapper;
};

void accumulate_metrics(SystemMetrics &into, const SystemMetrics &from) {
    into.drainIterations += from.drainIterations;
    into.drainBytes += from.drainBytes;
    into.drainBuffered += from.drainBuffered;
    into.checkpointRounds += from.checkpointRounds;
    into.steps += from.steps;
}

void accumulate_wrapper(WrapperMetrics &into, const WrapperMetrics &from) {
    into.sends += from.sends;
    into.recvs += from.recvs;
    into.isends += from.isends;
    into.irecvs += from.irecvs;
    into.tests += from.tests;
    into.waits += from.waits;
    into.collectives += from.collectives;
    into.icollectives += from.icollectives;
    into.commOps += from.commOps;
    into.lowerHalfEntries += from.lowerHalfEntries;
    into.barrierInsertions += from.barrierInsertions;
    into.requestTableHighWater = std::max(into.requestTableHighWater, from.requestTableHighWater);
}

// Runs the workload with checkpoint-kill-restart rounds triggered by
// `shouldInject` (called with cumulative step count); each completed round
// discards the live system and restarts from the serialized images.
CheckpointedRun run_checkpointed(const std::string &workload, const WorkloadParams &params,
                                 const RunConfig &cfg,
                                 const std::function<bool(System &, std::uint64_t)> &shouldInject,
                                 int maxRounds, std::uint64_t stepLimit) {
    CheckpointedRun out;
    ProgramFactory factory = make_workload(workload, params);
    auto sys = std::make_unique<System>(cfg, factory);
    std::uint64_t baseSteps = 0;
    int round = 0;

    for (;;) {
        bool requestedThisRun = false;
        auto hook = [&](System &s) {
            if (requestedThisRun || round >= maxRounds) {
                return;
            }
            if (s.coordinator().phase() != Phase::Running) {
                return;
            }
            if (shouldInject(s, baseSteps + s.global_step())) {
                s.request_checkpoint(round);
                requestedThisRun = true;
                for (const auto &p : s.processes()) {
                    out.classes.insert(p.phase_class());
                }
            }
        };
        RunResult r = sys->run(stepLimit, hook);
        switch (r.what) {
        case RunResult::What::Finished:
            out.finished = true;
            out.outputs = sys->outputs();
            accumulate_metrics(out.metrics, sys->metrics());
            accumulate_wrapper(out.wrapper, aggregate_wrapper_metrics(*sys));
            return out;
        case RunResult::What::Deadlock:
            out.deadlocked = true;
            out.diagnosis = r.deadlock.to_string();
            accumulate_metrics(out.metrics, sys->metrics());
            accumulate_wrapper(out.wrapper, aggregate_wrapper_metrics(*sys));
            return out;
        case RunResult::What::StepLimit:
            out.diagnosis = "step limit reached";
            accumulate_metrics(out.metrics, sys->metrics());
            accumulate_wrapper(out.wrapper, aggregate_wrapper_metrics(*sys));
            return out;
        case RunResult::What::Checkpoint: {
            ++out.rounds;
            baseSteps += sys->global_step();
            accumulate_metrics(out.metrics, sys->metrics());
            accumulate_wrapper(out.wrapper, aggregate_wrapper_metrics(*sys));
            RunConfig next = cfg;
            next.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(round) + 1);
            // Kill: the old system is dropped whole; only the images survive.
            sys = std::make_unique<System>(next, factory, r.imageBlobs);
            ++round;
            break;
        }
        }
    }
}

} // namespace

EquivalenceResult run_equivalence(const std::string &workload, const WorkloadParams &params,
                                  const RunConfig &cfg,
                                  const std::vector<std::uint64_t> &ckptSteps) {
    EquivalenceResult res;
    ProgramFactory factory = make_workload(workload, params);

    System native(cfg, factory);
    RunResult nr = native.run(10'000'000);
    res.nativeSteps = native.global_step();
    if (nr.what == RunResult::What::Deadlock) {
        res.deadlocked = true;
        res.diagnosis = "native run deadlocked\n" + nr.deadlock.to_string();
        return res;
    }
    if (nr.what != RunResult::What::Finished) {
        res.diagnosis = "native run did not finish";
        return res;
    }
    res.nativeOutputs = native.outputs();

    std::vector<std::uint64_t> targets = ckptSteps;
    std::sort(targets.begin(), targets.end());
    std::size_t nextTarget = 0;
    auto inject = [&](System &, std::uint64_t cumulative) {
        if (nextTarget >= targets.size()) {
            return false;
        }
        if (cumulative >= targets[nextTarget]) {
            ++nextTarget;
            return true;
        }
        return false;
    };
    CheckpointedRun cr = run_checkpointed(workload, params, cfg, inject,
                                          static_cast<int>(targets.size()), 10'000'000);
    res.roundsCompleted = cr.rounds;
    res.coveredClasses = cr.classes;
    res.checkpointedMetrics = cr.metrics;
    res.checkpointedWrapper = cr.wrapper;
    if (cr.deadlocked) {
        res.deadlocked = true;
        res.diagnosis = "checkpointed run deadlocked\n" + cr.diagnosis;
        return res;
    }
    if (!cr.finished) {
        res.diagnosis = "checkpointed run did not finish: " + cr.diagnosis;
        return res;
    }
    res.checkpointedOutputs = cr.outputs;

    if (res.nativeOutputs.size() != res.checkpointedOutputs.size()) {
        res.diagnosis = "rank count mismatch";
        return res;
    }
    for (std::size_t r = 0; r < res.nativeOutputs.size(); ++r) {
        if (res.nativeOutputs[r] != res.checkpointedOutputs[r]) {
            std::ostringstream os;
            os << "first divergence at rank " << r << " (after " << cr.rounds
               << " checkpoint rounds): native=" << hex_prefix(res.nativeOutputs[r])
               << " checkpointed=" << hex_prefix(res.checkpointedOutputs[r]);
            res.diagnosis = os.str();
            return res;
        }
    }
    res.pass = true;
    return res;
}

EquivalenceResult run_equivalence_when(const std::string &workload, const WorkloadParams &params,
                                       const RunConfig &cfg,
                                       const std::function<bool(System &)> &injectWhen,
                                       int maxRounds) {
    EquivalenceResult res;
    ProgramFactory factory = make_workload(workload, params);

    System native(cfg, factory);
    RunResult nr = native.run(10'000'000);
    res.nativeSteps = native.global_step();
    if (nr.what != RunResult::What::Finished) {
        res.diagnosis = nr.what == RunResult::What::Deadlock
                            ? "native run deadlocked\n" + nr.deadlock.to_string()
                            : "native run did not finish";
        res.deadlocked = nr.what == RunResult::What::Deadlock;
        return res;
    }
    res.nativeOutputs = native.outputs();

    auto inject = [&](System &s, std::uint64_t) { return injectWhen(s); };
    CheckpointedRun cr = run_checkpointed(workload, params, cfg, inject, maxRounds, 10'000'000);
    res.roundsCompleted = cr.rounds;
    res.coveredClasses = cr.classes;
    res.checkpointedMetrics = cr.metrics;
    res.checkpointedWrapper = cr.wrapper;
    if (!cr.finished) {
        res.deadlocked = cr.deadlocked;
        res.diagnosis = cr.deadlocked ? "checkpointed run deadlocked\n" + cr.diagnosis
                                      : "checkpointed run did not finish: " + cr.diagnosis;
        return res;
    }
    res.checkpointedOutputs = cr.outputs;
    res.pass = res.nativeOutputs == res.checkpointedOutputs;
    if (!res.pass) {
        res.diagnosis = "outputs differ";
    }
    return res;
}

SweepResult ckpt_sweep(const std::string &workload, const WorkloadParams &params,
                       const RunConfig &cfg, std::uint64_t stride) {
    if (stride == 0) {
        throw SimError(Err::InvalidConfiguration, "sweep stride must be positive");
    }
    SweepResult out;
    ProgramFactory factory = make_workload(workload, params);
    System native(cfg, factory);
    RunResult nr = native.run(10'000'000);
    if (nr.what != RunResult::What::Finished) {
        throw SimError(Err::InvalidConfiguration, "sweep workload must complete natively");
    }
    const std::uint64_t total = native.global_step();
    for (std::uint64_t k = stride; k < total; k += stride) {
        EquivalenceResult r = run_equivalence(workload, params, cfg, {k});
        ++out.injections;
        if (r.pass) {
            ++out.passes;
        } else {
            out.failures.push_back(k);
        }
        out.coveredClasses.insert(r.coveredClasses.begin(), r.coveredClasses.end());
    }
    return out;
}

FuzzResult fuzz(const std::string &workload, const WorkloadParams &params, const RunConfig &base,
                std::uint64_t trials, std::uint64_t fuzzSeed) {
    FuzzResult out;
    SplitMix64 prng(fuzzSeed);
    ProgramFactory factory = make_workload(workload, params);
    System probe(base, factory);
    RunResult nr = probe.run(10'000'000);
    if (nr.what != RunResult::What::Finished) {
        throw SimError(Err::InvalidConfiguration, "fuzz workload must complete natively");
    }
    const std::uint64_t total = std::max<std::uint64_t>(probe.global_step(), 2);

    for (std::uint64_t t = 0; t < trials; ++t) {
        RunConfig cfg = base;
        cfg.seed = prng.next();
        const std::uint64_t nPoints = 1 + prng.bounded(3);
        std::vector<std::uint64_t> points;
        for (std::uint64_t i = 0; i < nPoints; ++i) {
            points.push_back(1 + prng.bounded(total * 2));
        }
        EquivalenceResult r = run_equivalence(workload, params, cfg, points);
        ++out.trials;
        if (r.pass) {
            ++out.passes;
        } else {
            out.failingSeeds.push_back(cfg.seed);
        }
    }
    return out;
}

WrapperMetrics aggregate_wrapper_metrics(const System &sys) {
    WrapperMetrics total;
    for (const auto &p : sys.processes()) {
        accumulate_wrapper(total, p.metrics);
    }
    return total;
}

void emit_metrics(std::ostream &os, const System &sys, const std::string &runLabel) {
    emit_metrics(os, sys.metrics(), aggregate_wrapper_metrics(sys), runLabel);
}

void emit_metrics(std::ostream &os, const SystemMetrics &s, const WrapperMetrics &total,
                  const std::string &runLabel) {
    const auto line = [&os, &runLabel](const std::string &key, auto value) {
        os << "metric run=" << runLabel << " " << key << "=" << value << "\n";
    };
    line("steps", s.steps);
    line("wrapper.send", total.sends);
    line("wrapper.recv", total.recvs);
    line("wrapper.isend", total.isends);
    line("wrapper.irecv", total.irecvs);
    line("wrapper.test", total.tests);
    line("wrapper.wait", total.waits);
    line("wrapper.collective", total.collectives);
    line("wrapper.icollective", total.icollectives);
    line("wrapper.comm_ops", total.commOps);
    line("lower_half.entries", total.lowerHalfEntries);
    line("request_table.high_water", total.requestTableHighWater);
    line("barrier.insertions", total.barrierInsertions);
    line("drain.iterations", s.drainIterations);
    line("drain.bytes", s.drainBytes);
    line("drain.buffered", s.drainBuffered);
    line("checkpoint.rounds", s.checkpointRounds);
    const double perStep =
        s.steps == 0 ? 0.0 : static_cast<double>(total.collectives + total.icollectives) /
                                 static_cast<double>(s.steps);
    line("collective.calls_per_step", perStep);
}

} // namespace manakin
