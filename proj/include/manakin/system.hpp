#pragma once

#include "manakin/coordinator.hpp"
#include "manakin/event_log.hpp"
#include "manakin/process.hpp"
#include "manakin/runtime.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace manakin {

using ProgramFactory = std::function<std::unique_ptr<Program>(int worldSize, WorldRank rank)>;

struct RunConfig {
    int procs = 2;
    std::uint64_t seed = 1;
    Mode mode = Mode::Hybrid2PC;
    std::string ckptDir; // when set, checkpoint rounds also land on disk
};

struct DeadlockReport {
    std::uint64_t step = 0;
    std::vector<std::string> waits; // one line per unfinished process
    std::string to_string() const;
};

struct RunResult {
    enum class What { Finished, Checkpoint, Deadlock, StepLimit };
    What what = What::Finished;
    std::vector<Bytes> imageBlobs; // Checkpoint only
    DeadlockReport deadlock;       // Deadlock only
};

struct SystemMetrics {
    std::uint64_t drainIterations = 0;
    std::uint64_t drainBytes = 0;
    std::uint64_t drainBuffered = 0;
    std::uint64_t checkpointRounds = 0;
    std::uint64_t steps = 0;
};

// Scheduler choice source: seeded pseudo-random by default, scripted for
// exhaustive interleaving exploration.
struct ScheduleSource {
    virtual ~ScheduleSource() = default;
    virtual std::size_t pick(std::size_t nRunnable) = 0;
};

struct RandomSchedule final : ScheduleSource {
    explicit RandomSchedule(std::uint64_t seed) : prng(seed) {}
    std::size_t pick(std::size_t n) override { return n <= 1 ? 0 : prng.bounded(n); }
    SplitMix64 prng;
};

// Scripted choices; appends the branching factor at each decision so an
// exhaustive driver can enumerate schedules.
struct ScriptedSchedule final : ScheduleSource {
    std::vector<std::size_t> choices;
    std::vector<std::size_t> fanout; // recorded branching factors
    std::size_t cursor = 0;
    std::size_t pick(std::size_t n) override {
        fanout.push_back(n);
        if (cursor < choices.size()) {
            return choices[cursor++] % n;
        }
        ++cursor;
        return 0;
    }
};

// One simulation instance: the lower half, the simulated processes, the
// coordinator, and the deterministic scheduler. Instances share no state.
class System {
public:
    System(RunConfig cfg, ProgramFactory factory);

    // Restart path: fresh lower half at the next epoch, state from images.
    System(RunConfig cfg, ProgramFactory factory, const std::vector<Bytes> &imageBlobs);

    RunResult run(std::uint64_t stepLimit = UINT64_MAX,
                  const std::function<void(System &)> &afterStep = {});

    // Forwards to the coordinator and raises the pending flag everywhere.
    void request_checkpoint(int round);
    // Continue-in-place after a checkpoint round (no kill).
    void resume_after_checkpoint();

    std::uint64_t global_step() const { return m_step; }
    const RunConfig &config() const { return m_cfg; }
    LowerHalf &lower_half() { return *m_lh; }
    Coordinator &coordinator() { return m_coord; }
    EventLog &log() { return m_logStore; }
    const EventLog &log() const { return m_logStore; }
    std::vector<Process> &processes() { return m_procs; }
    const std::vector<Process> &processes() const { return m_procs; }
    SystemMetrics &metrics() { return m_metrics; }
    const SystemMetrics &metrics() const { return m_metrics; }

    void set_schedule(std::unique_ptr<ScheduleSource> s) { m_schedule = std::move(s); }

    bool all_finished() const;
    std::vector<Bytes> outputs() const;

    // Zero-tolerance invariants checked after every drain and available to
    // the test suites directly.
    void check_drain_invariants() const;
    void check_conservation() const;

    // Restart bookkeeping (filled when constructed from images).
    std::uint64_t restartCommCreations = 0; // excluding the bootstrap world comm
    std::uint64_t restartCommsRebuilt = 0;
    std::uint64_t restartReplaysIssued = 0;

private:
    friend void execute_restart(System &sys, const std::vector<Bytes> &blobs);

    bool single_step();
    bool checkpoint_safe_now() const;
    std::vector<Bytes> complete_checkpoint_round();
    void sync_coordinator();
    void wake_for_open_gids(const std::vector<std::uint64_t> &newlyOpen);
    WrapperEnv make_env();

    RunConfig m_cfg;
    ProgramFactory m_factory;
    EventLog m_logStore;
    std::unique_ptr<LowerHalf> m_lh;
    Coordinator m_coord;
    std::vector<Process> m_procs;
    std::unique_ptr<ScheduleSource> m_schedule;
    SystemMetrics m_metrics;
    std::uint64_t m_step = 0;

    // Blocked-process bookkeeping: a process that made no progress sleeps
    // until the event log grows past its stamp.
    std::vector<bool> m_blocked;
    std::vector<std::uint64_t> m_blockStamp;
    std::vector<std::uint64_t> m_lastOpenGids;
};

} // namespace manakin
