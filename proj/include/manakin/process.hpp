#pragma once

#include "manakin/bytes.hpp"
#include "manakin/errors.hpp"
#include "manakin/event_log.hpp"
#include "manakin/runtime.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <unordered_map>
#include <vector>

namespace manakin {

// Virtual handle ids: stable across restarts, never reused. 0 is the null
// sentinel an application request variable holds after retirement.
using Vid = std::int64_t;
inline constexpr Vid kNullVid = 0;

enum class Mode : std::uint8_t {
    NaiveBarrier = 0,
    P2PEmulation = 1,
    Hybrid2PC = 2,
};

inline const char *mode_name(Mode m) {
    switch (m) {
    case Mode::NaiveBarrier: return "naive-barrier";
    case Mode::P2PEmulation: return "p2p-emulation";
    case Mode::Hybrid2PC: return "hybrid-2pc";
    }
    return "?";
}

// gid: hash of the sorted world-rank membership, 4-byte little-endian per
// rank, FNV-1a-64. Computable from local state only.
std::uint64_t membership_gid(std::vector<WorldRank> members);

enum class Dir : std::uint8_t { Send = 0, Recv = 1 };

struct P2PRecord {
    Vid vreq = 0;
    Dir dir = Dir::Send;
    WorldRank peer = -1; // kAnySource allowed for recv
    int tag = 0;
    Vid vcomm = 0;
    std::uint64_t bytes = 0;
    int bufSlot = -1; // recv destination; -1 = inline payload below
    Bytes payload;    // inline destination for wrapper-internal receives
    bool completed = false;
    bool hasStatus = false;
    Status status;
    friend bool operator==(const P2PRecord &, const P2PRecord &) = default;
};

struct ReplayRecord {
    Vid vreq = 0;
    CollKind kind = CollKind::Barrier;
    Vid vcomm = 0;
    int rootLocal = 0;
    ReduceOp op = ReduceOp::Sum;
    std::int64_t instance = -1;
    Bytes contribution;
    int resultBufSlot = -1;
    bool completed = false;       // retired; pruned from images
    bool hasCachedResult = false; // instance closed globally before retirement
    Bytes cachedResult;
    friend bool operator==(const ReplayRecord &, const ReplayRecord &) = default;
};

struct CommDesc {
    Vid vid = 0;
    std::vector<WorldRank> members;
    std::uint64_t gid = 0;
    std::int64_t collIndex = 0; // next collective instance on this comm
    // Identity of the creation event, agreed by every member: a hash of
    // (parent birth, creating instance, color). Distinguishes communicators
    // that happen to share a membership; carries no lineage to replay.
    std::uint64_t birth = 0;
    friend bool operator==(const CommDesc &, const CommDesc &) = default;
};

struct GroupDesc {
    Vid vid = 0;
    std::vector<WorldRank> members;
    std::uint64_t gid = 0;
    friend bool operator==(const GroupDesc &, const GroupDesc &) = default;
};

struct DrainedMsg {
    WorldRank src = -1;
    int tag = 0;
    std::uint64_t commGid = 0;
    Bytes payload;
    std::uint64_t seq = 0; // original arrival order; FIFO among equal keys
    friend bool operator==(const DrainedMsg &, const DrainedMsg &) = default;
};

// Application-owned addressable memory: request variable slots (which the
// two-step retirement may overwrite with the null sentinel) and receive /
// result buffers.
struct AppStorage {
    std::vector<Vid> reqSlots;
    std::vector<Bytes> buffers;
    bool lastHasStatus = false;
    Status lastStatus;
    Vid lastVid = kNullVid;

    Vid &slot(int i);
    Bytes &buffer(int i);
    friend bool operator==(const AppStorage &, const AppStorage &) = default;
};

struct TestOutcome {
    bool done = false;
    bool hasStatus = false;
    Status status;
    Bytes payload;
};

// Point-to-point emulation of a collective: a small resumable state machine
// whose traffic flows through the checkpoint-safe wrappers.
struct EmuState {
    std::uint8_t phase = 0;
    std::vector<Vid> reqs;                      // outstanding wrapper requests
    std::vector<std::uint8_t> gatheredPresent;  // per member index
    std::vector<Bytes> gathered;
    Bytes result;
    friend bool operator==(const EmuState &, const EmuState &) = default;
};

enum class ActKind : std::uint8_t {
    None = 0,
    SendLoop = 1,
    RecvLoop = 2,
    WaitLoop = 3,
    Collective = 4,
};

enum class CollPath : std::uint8_t {
    Undecided = 0,
    RealParked = 1,   // inside the lower-half rendezvous
    Emulated = 2,
    NaiveBarrier = 3, // inserted barrier running via emulation
    NaiveReal = 4,    // barrier done; committed to the real collective
};

struct Activation {
    ActKind kind = ActKind::None;
    Vid vreq = kNullVid; // SendLoop / RecvLoop
    int reqSlot = -1;    // WaitLoop
    int bufSlot = -1;    // result destination
    // Collective state.
    Vid vcomm = kNullVid;
    CollKind collKind = CollKind::Barrier;
    int rootLocal = 0;
    ReduceOp op = ReduceOp::Sum;
    Bytes contribution;
    std::int64_t instance = -1;
    CollPath path = CollPath::Undecided;
    EmuState emu;
    friend bool operator==(const Activation &, const Activation &) = default;
};

class Process;

// Per-step services a process needs from its runner.
struct WrapperEnv {
    LowerHalf *lh = nullptr;
    Mode mode = Mode::Hybrid2PC;
    std::function<bool(WorldRank, std::uint64_t)> gidOpenQuery; // hybrid commit check
};

// The interface a workload program calls. Blocking calls set up an activation
// and return; the result is visible (buffers / lastStatus / lastVid) before
// the program's next step.
class AppApi {
public:
    AppApi(Process &p, WrapperEnv &env) : m_p(p), m_env(env) {}

    int world_size() const;
    WorldRank world_rank() const;
    Vid world_comm() const;
    AppStorage &mem();

    Vid isend(int dstLocal, int tag, Vid vcomm, Bytes payload);
    Vid irecv(int srcLocal, int tag, Vid vcomm, int bufSlot); // -1 = any source/tag
    std::pair<bool, Status> test(int reqSlot);
    Vid icollective(Vid vcomm, CollKind kind, int rootLocal, ReduceOp op, Bytes contribution,
                    int resultBufSlot);

    void send(int dstLocal, int tag, Vid vcomm, Bytes payload);
    void recv(int srcLocal, int tag, Vid vcomm, int bufSlot);
    void wait(int reqSlot);
    void collective(Vid vcomm, CollKind kind, int rootLocal, ReduceOp op, Bytes contribution,
                    int bufSlot);
    void comm_split(Vid vcomm, int color, int key);
    void comm_create(Vid vcomm, const std::vector<WorldRank> &members);

    std::uint64_t comm_gid(Vid vcomm) const;
    std::vector<WorldRank> comm_members(Vid vcomm) const;
    int comm_size(Vid vcomm) const;
    int comm_local_rank(Vid vcomm) const;
    std::vector<WorldRank> translate_group_ranks(Vid vcomm);
    void comm_free(Vid vcomm);
    Vid comm_group(Vid vcomm);
    Vid group_incl(Vid vgroup, const std::vector<int> &indices);
    void group_free(Vid vgroup);

private:
    Process &m_p;
    WrapperEnv &m_env;
};

// A deterministic per-rank application state machine. All state lives in
// serializable registers so execution can resume from an image.
class Program {
public:
    virtual ~Program() = default;
    virtual void step(AppApi &api) = 0;
    virtual bool finished() const = 0;
    virtual Bytes output() const = 0;
    virtual void save(Bytes &out) const = 0;
    virtual void load(ByteReader &in) = 0;
    // Coarse progress marker for harness-side injection targeting.
    virtual int phase_tag() const { return 0; }
};

enum class ProcStatus : std::uint8_t {
    Running = 0,
    AwaitingCkpt = 1,
    Finished = 2,
};

enum class PhaseClass : std::uint8_t {
    Idle = 0,
    SendLoop = 1,
    RecvLoop = 2,
    CollectiveEmulation = 3,
    CreateTestGap = 4,
};

struct WrapperMetrics {
    std::uint64_t sends = 0, recvs = 0, isends = 0, irecvs = 0, tests = 0, waits = 0;
    std::uint64_t collectives = 0, icollectives = 0, commOps = 0;
    std::uint64_t lowerHalfEntries = 0;
    std::uint64_t barrierInsertions = 0;
    std::size_t requestTableHighWater = 0;
};

// One simulated process's upper half: wrapper tables, counters, drained
// buffers, the running program, and the activation of the wrapper call in
// progress. Exactly this state (minus the epoch-scoped real handles) goes
// into a checkpoint image.
class Process {
public:
    Process(WorldRank rank, int worldSize);

    void install_program(std::unique_ptr<Program> program) { m_program = std::move(program); }
    Program *program() { return m_program.get(); }
    const Program *program() const { return m_program.get(); }

    // Binds the world communicator virtual id to the given lower half.
    void bind_world(LowerHalf &lh);

    WorldRank rank() const { return m_rank; }
    int world_size() const { return m_worldSize; }
    ProcStatus status() const { return m_status; }
    void set_status(ProcStatus s) { m_status = s; }
    bool in_lower_half() const {
        return m_act.kind == ActKind::Collective && m_act.path == CollPath::RealParked;
    }
    bool ckpt_pending() const { return m_ckptPending; }
    void set_ckpt_pending(bool v) { m_ckptPending = v; }
    bool finished() const { return m_status == ProcStatus::Finished; }

    // One cooperative step; returns true if observable progress was made.
    bool step(WrapperEnv &env);

    // True if this process may park for a pending checkpoint right now.
    bool may_park(const std::function<bool(std::uint64_t)> &gidOpen) const;

    PhaseClass phase_class() const;
    std::string wait_description() const;

    // ---- wrapper operations (used by AppApi, emulation, drain, tests) ----
    Vid w_isend(WrapperEnv &env, int dstLocal, int tag, Vid vcomm, Bytes payload);
    Vid w_irecv(WrapperEnv &env, int srcLocal, int tag, Vid vcomm, int bufSlot);
    TestOutcome w_test_slot(WrapperEnv &env, Vid &slotRef);
    Vid w_icollective(WrapperEnv &env, Vid vcomm, CollKind kind, int rootLocal, ReduceOp op,
                      Bytes contribution, int resultBufSlot);
    std::uint64_t w_comm_gid(Vid vcomm) const;
    std::vector<WorldRank> w_translate(WrapperEnv &env, Vid vcomm);
    void w_comm_free(WrapperEnv &env, Vid vcomm);
    Vid w_comm_group(WrapperEnv &env, Vid vcomm);
    Vid w_group_incl(Vid vgroup, const std::vector<int> &indices);
    void w_group_free(Vid vgroup);

    void begin_send(WrapperEnv &env, int dstLocal, int tag, Vid vcomm, Bytes payload);
    void begin_recv(WrapperEnv &env, int srcLocal, int tag, Vid vcomm, int bufSlot);
    void begin_wait(int reqSlot);
    void begin_collective(Vid vcomm, CollKind kind, int rootLocal, ReduceOp op, Bytes contribution,
                          int bufSlot);

    // Drain-side entry points (coordinator module drives these).
    bool drain_test_recv_records(WrapperEnv &env, WorldRank fromSrc);

    const CommDesc &desc_of(Vid vcomm) const;
    CommDesc &desc_of_mut(Vid vcomm);

    // ---- state exposed to the coordinator, restart engine, and tests ----
    std::vector<CommDesc> comms;   // the active communicator list
    std::vector<GroupDesc> groups; // active groups
    AppStorage mem;
    std::vector<P2PRecord> p2pList;
    std::vector<ReplayRecord> replayLog;
    std::vector<DrainedMsg> drainedBuffers;
    std::uint64_t drainedSeqCounter = 0;

    std::unordered_map<Vid, CommHandle> commTable;
    std::unordered_map<Vid, GroupHandle> groupTable;
    std::unordered_map<Vid, ReqHandle> requestTable; // null() marks step-A retirement
    Vid nextCommVid = 1;
    Vid nextGroupVid = 1;
    Vid nextReqVid = 1;
    Vid worldVid = kNullVid;

    std::vector<std::uint64_t> sentBytes, sentMsgs, recvBytes, recvMsgs;

    Activation &activation() { return m_act; }
    const Activation &activation() const { return m_act; }
    void set_activation(const Activation &a) { m_act = a; }

    WrapperMetrics metrics;

    // Engagements in open blocking collective instances (epoch-local).
    struct Engagement {
        std::int32_t commId;
        std::int64_t instance;
        std::uint64_t gid;
        std::vector<WorldRank> members;
        bool real = true;
    };
    std::vector<Engagement> engagements;

    P2PRecord *find_p2p(Vid vreq);
    ReplayRecord *find_replay(Vid vreq);
    void note_table_size();

private:
    friend class AppApi;

    bool advance_activation(WrapperEnv &env);
    bool advance_collective(WrapperEnv &env);
    bool advance_emulation(WrapperEnv &env, bool naiveBarrierPhase);
    void decide_collective_path(WrapperEnv &env);
    void enter_real_collective(WrapperEnv &env);
    bool try_finish_real_collective(WrapperEnv &env);
    void finish_collective_result(WrapperEnv &env, Bytes payload, std::optional<CommHandle> newComm,
                                  std::vector<WorldRank> newMembers);
    void emu_init(WrapperEnv &env, bool naiveBarrier);
    bool emu_evidence_in_buffers() const;
    int emu_tag(std::int64_t instance, int phase, bool naiveBarrier) const;
    bool emu_pump_requests(WrapperEnv &env, bool &anyNew);

    Vid alloc_req_vid();
    CommHandle real_comm(Vid vcomm) const;

    WorldRank m_rank;
    int m_worldSize;
    ProcStatus m_status = ProcStatus::Running;
    bool m_ckptPending = false;
    std::unique_ptr<Program> m_program;
    Activation m_act;
};

} // namespace manakin
