#pragma once

#include "manakin/errors.hpp"
#include "manakin/event_log.hpp"
#include "manakin/runtime.hpp"

#include <cstdint>
#include <map>
#include <vector>

namespace manakin {

enum class Phase : std::uint8_t {
    Running = 0,
    CkptRequested = 1,
    Draining = 2,
    Committed = 3,
    Writing = 4,
    Resumed = 5,
};

inline const char *phase_name(Phase p) {
    switch (p) {
    case Phase::Running: return "running";
    case Phase::CkptRequested: return "ckpt-requested";
    case Phase::Draining: return "draining";
    case Phase::Committed: return "committed";
    case Phase::Writing: return "writing";
    case Phase::Resumed: return "resumed";
    }
    return "?";
}

struct ProcessReport {
    WorldRank rank = -1;
    bool inCollective = false;
    std::uint64_t gid = 0; // meaningful iff inCollective
    bool safe = false;
};

// Centralized checkpoint coordinator. It carries the phase machine and the
// per-process reports (in-collective flag + communicator gid); everything
// data-bearing flows between the processes themselves.
class Coordinator {
public:
    Coordinator(EventLog &log, int worldSize);

    Phase phase() const { return m_phase; }
    int round() const { return m_round; }
    void set_now(std::uint64_t step) { m_now = step; }

    // phase = running required; broadcasts the ckpt-pending flag.
    void request_checkpoint(int round);

    void to_draining();
    void to_committed();
    void to_writing();
    void to_resumed();
    void to_running();
    // Abort path: serialization failure rolls the round back with no images.
    void abort_round();

    void update_report(WorldRank rank, bool inCollective, std::uint64_t gid, bool safe);
    const ProcessReport &report(WorldRank rank) const { return m_reports.at(static_cast<std::size_t>(rank)); }
    bool all_safe() const;

    // Open-collective bookkeeping, rebuilt by the runner from the rendezvous
    // state and the wrappers' emulation engagements. Gid collisions (same
    // hash, different membership) are detected rather than silently
    // tolerated.
    struct OpenInstance {
        std::uint64_t gid = 0;
        std::vector<WorldRank> members;
        bool real = true;
    };
    void set_open_instances(const std::vector<OpenInstance> &open);
    bool gid_open(std::uint64_t gid) const;       // real or emulated
    bool gid_open_real(std::uint64_t gid) const;  // lower-half instances only
    bool any_open() const { return !m_openCounts.empty(); }

    // Hybrid commit query, logged as coordinator traffic.
    bool query_gid_open(WorldRank asker, std::uint64_t gid);

    struct DrainStats {
        std::uint64_t iterations = 0;
        std::uint64_t bytesDrained = 0;
        std::uint64_t messagesBuffered = 0;
        std::uint64_t recvCompletions = 0;
    };

private:
    void set_phase(Phase p);

    EventLog *m_log;
    std::uint64_t m_now = 0;
    Phase m_phase = Phase::Running;
    int m_round = 0;
    std::vector<ProcessReport> m_reports;
    std::map<std::uint64_t, std::size_t> m_openCounts;
    std::map<std::uint64_t, std::size_t> m_openRealCounts;
    std::map<std::uint64_t, std::vector<WorldRank>> m_openMembers;
};

class Process;
struct ProcessImage;

// The distributed drain: counters exchanged with one alltoall among the
// processes, then each process pulls its missing bytes with probe/recv and
// by testing its posted receives. The coordinator never carries per-pair
// data.
Coordinator::DrainStats drain_p2p(Coordinator &coord, LowerHalf &lh, std::vector<Process> &procs);

// Serialize every process's upper half; all N images or none.
std::vector<Bytes> build_image_blobs(Coordinator &coord, LowerHalf &lh,
                                     const std::vector<Process> &procs);

void write_image_files(const std::string &ckptDir, int round, const std::vector<Bytes> &blobs);

} // namespace manakin
