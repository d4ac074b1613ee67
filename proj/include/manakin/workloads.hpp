#pragma once

#include "manakin/process.hpp"
#include "manakin/system.hpp"

#include <string>

namespace manakin {

struct WorkloadParams {
    std::uint64_t rounds = 10;
    std::uint64_t msgBytes = 64;
    std::uint64_t delaySteps = 1000;
    std::uint64_t creates = 20;
    std::uint64_t frees = 15;
    std::uint64_t splitEvery = 5;
};

// Named deterministic workloads. Throws invalid-configuration for an unknown
// name; process-count constraints surface when the factory runs.
ProgramFactory make_workload(const std::string &name, const WorkloadParams &params);

const std::vector<std::string> &workload_names();

// Deterministic message payload shared by the ring workload and its oracle.
Bytes ring_payload(WorldRank src, std::uint64_t round, std::uint64_t msgBytes);
int ring_tag(std::uint64_t round);

} // namespace manakin
