#pragma once

#include "manakin/system.hpp"
#include "manakin/workloads.hpp"

#include <iosfwd>
#include <set>
#include <string>
#include <vector>

namespace manakin {

struct EquivalenceResult {
    bool pass = false;
    bool deadlocked = false;
    std::string diagnosis;
    std::vector<Bytes> nativeOutputs;
    std::vector<Bytes> checkpointedOutputs;
    std::uint64_t roundsCompleted = 0;
    std::uint64_t nativeSteps = 0;
    std::set<PhaseClass> coveredClasses; // classes occupied at injection instants
    SystemMetrics checkpointedMetrics;
    WrapperMetrics checkpointedWrapper; // summed across restarts
};

// The transparency oracle: runs the workload natively and once more with
// checkpoint-kill-restart rounds injected at the given cumulative steps,
// then compares per-rank final outputs byte for byte.
EquivalenceResult run_equivalence(const std::string &workload, const WorkloadParams &params,
                                  const RunConfig &cfg, const std::vector<std::uint64_t> &ckptSteps);

// run_equivalence with injection triggered by a predicate over the live
// system instead of fixed steps (used for phase-targeted checkpoints).
EquivalenceResult run_equivalence_when(const std::string &workload, const WorkloadParams &params,
                                       const RunConfig &cfg,
                                       const std::function<bool(System &)> &injectWhen,
                                       int maxRounds);

struct SweepResult {
    std::uint64_t injections = 0;
    std::uint64_t passes = 0;
    std::vector<std::uint64_t> failures; // failing injection steps
    std::set<PhaseClass> coveredClasses;
};

// Checkpoint injection at every multiple of `stride` steps of the native
// execution, one independent run per injection point.
SweepResult ckpt_sweep(const std::string &workload, const WorkloadParams &params,
                       const RunConfig &cfg, std::uint64_t stride);

struct FuzzResult {
    std::uint64_t trials = 0;
    std::uint64_t passes = 0;
    std::vector<std::uint64_t> failingSeeds;
};

// Seeded schedule fuzz: random scheduler seed and random injection steps per
// trial; every trial must stay transparent.
FuzzResult fuzz(const std::string &workload, const WorkloadParams &params, const RunConfig &base,
                std::uint64_t trials, std::uint64_t fuzzSeed);

// Metrics in a self-describing key=value text form, one record per line.
void emit_metrics(std::ostream &os, const System &sys, const std::string &runLabel);
void emit_metrics(std::ostream &os, const SystemMetrics &sys, const WrapperMetrics &wrapper,
                  const std::string &runLabel);
WrapperMetrics aggregate_wrapper_metrics(const System &sys);

std::string phase_class_name(PhaseClass c);

} // namespace manakin
