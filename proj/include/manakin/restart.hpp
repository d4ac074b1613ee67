#pragma once

#include "manakin/bytes.hpp"
#include "manakin/image.hpp"

#include <vector>

namespace manakin {

class System;

struct RestartPlan {
    std::vector<ProcessImage> images; // indexed by rank
    int newEpoch = 0;
    // One entry per communicator, in the globally agreed rebuild order
    // (member count, gid, then creation identity as the tiebreaker for
    // communicators that share a membership).
    struct RebuildEntry {
        std::vector<WorldRank> members;
        std::uint64_t gid = 0;
        std::uint64_t birth = 0;
    };
    std::vector<RebuildEntry> rebuildOrder;
};

// Parses and validates a full image set. Throws restart-incomplete on a
// missing or duplicated rank, incompatible-image on version/epoch/world
// mismatches, corrupt-image on CRC or structural damage.
RestartPlan plan_restart(const std::vector<Bytes> &blobs);

// Rebuilds the lower half bindings of a freshly constructed restart System:
// communicators from membership alone, re-issued non-blocking collectives,
// re-posted receives, rebound virtual ids.
void execute_restart(System &sys, const std::vector<Bytes> &blobs);

// Single-table rebind used by execute_restart and exposed for tests.
void rebind_comm(Process &p, Vid vid, CommHandle real);

} // namespace manakin
