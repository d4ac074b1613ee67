#pragma once

#include "manakin/bytes.hpp"
#include "manakin/errors.hpp"
#include "manakin/event_log.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <vector>

namespace manakin {

using WorldRank = std::int32_t;

inline constexpr WorldRank kAnySource = -1;
inline constexpr int kAnyTag = -1;

// Epoch-scoped handles. A handle minted in epoch k is rejected by every
// operation of epoch k+1 (stale-handle) instead of silently aliasing.
struct CommHandle {
    std::int32_t id = -1;
    std::int32_t epoch = -1;
    bool valid() const { return id > 0; }
    friend bool operator==(const CommHandle &, const CommHandle &) = default;
};

struct GroupHandle {
    std::int32_t id = -1;
    std::int32_t epoch = -1;
    bool valid() const { return id > 0; }
    friend bool operator==(const GroupHandle &, const GroupHandle &) = default;
};

struct ReqHandle {
    std::int32_t id = 0; // 0 is the null sentinel
    std::int32_t epoch = -1;
    bool is_null() const { return id == 0; }
    static ReqHandle null() { return ReqHandle{}; }
    friend bool operator==(const ReqHandle &, const ReqHandle &) = default;
};

enum class CollKind : std::uint8_t {
    Barrier = 0,
    Bcast = 1,
    Allreduce = 2,
    Alltoall = 3,
    CommSplit = 4,
    CommCreate = 5,
};

inline const char *coll_kind_name(CollKind k) {
    switch (k) {
    case CollKind::Barrier: return "barrier";
    case CollKind::Bcast: return "bcast";
    case CollKind::Allreduce: return "allreduce";
    case CollKind::Alltoall: return "alltoall";
    case CollKind::CommSplit: return "comm-split";
    case CollKind::CommCreate: return "comm-create";
    }
    return "?";
}

enum class ReduceOp : std::uint8_t {
    Sum = 0,
    Max = 1,
    Bxor = 2,
};

struct Status {
    WorldRank src = -1;
    int tag = -1;
    std::uint64_t bytes = 0;
    friend bool operator==(const Status &, const Status &) = default;
};

struct TestResult {
    bool done = false;
    std::optional<Status> status;
    Bytes payload; // recv payload / collective result, empty otherwise
};

// Result of completing one member's part of a collective instance.
struct CollResult {
    Bytes payload;
    std::optional<CommHandle> newComm;  // comm-split / comm-create only
    std::vector<WorldRank> newMembers;
};

// Lane-wise u64 reduction used by both the collective engine and the
// point-to-point emulation path (they must agree bit for bit).
Bytes reduce_lanes(ReduceOp op, const Bytes &a, const Bytes &b);

// The simulated lower half: processes' shared transport, collective
// rendezvous, and handle namespace for exactly one epoch. Everything in here
// is discarded at checkpoint and rebuilt by the restart engine.
class LowerHalf {
public:
    LowerHalf(EventLog &log, int worldSize, int epoch);

    int world_size() const { return m_worldSize; }
    int epoch() const { return m_epoch; }
    CommHandle world() const { return m_world; }

    void set_now(std::uint64_t step) { m_now = step; }
    EventLog &log() { return *m_log; }

    const std::vector<WorldRank> &members(CommHandle c) const;
    std::vector<WorldRank> translate_group_ranks(WorldRank p, CommHandle c) const;

    // Point-to-point. Sends are eager: the returned request is already
    // complete and the payload waits in the network.
    ReqHandle isend(WorldRank p, WorldRank dst, int tag, CommHandle c, Bytes payload);
    ReqHandle irecv(WorldRank p, WorldRank src, int tag, CommHandle c);
    TestResult test(WorldRank p, ReqHandle r);
    std::optional<std::uint64_t> iprobe(WorldRank p, WorldRank src, int tag, CommHandle c) const;

    // Collectives, decomposed for the cooperative step model: deposit your
    // contribution, poll readiness, then take the result. Blocking callers
    // park between deposit and take; non-blocking callers get a request.
    void coll_deposit(WorldRank p, CommHandle c, std::int64_t instance, CollKind kind,
                      int rootLocal, ReduceOp op, Bytes contribution);
    ReqHandle icoll_deposit(WorldRank p, CommHandle c, std::int64_t instance, CollKind kind,
                            int rootLocal, ReduceOp op, Bytes contribution);
    bool coll_member_ready(WorldRank p, CommHandle c, std::int64_t instance) const;
    CollResult coll_take(WorldRank p, CommHandle c, std::int64_t instance);

    // True while some blocking collective instance has started but not every
    // member has completed its part. gid supplied by the wrapper at deposit.
    bool blocking_instance_open(std::uint64_t gid) const;
    std::vector<std::uint64_t> open_blocking_gids() const;
    void tag_instance_gid(CommHandle c, std::int64_t instance, std::uint64_t gid);

    // Local handle creation (comm-split results, restart reconstruction).
    CommHandle comm_from_members(std::vector<WorldRank> members);
    GroupHandle group_from_members(std::vector<WorldRank> members);
    const std::vector<WorldRank> &group_members(GroupHandle g) const;
    void free_comm(WorldRank p, CommHandle c);

    // Restart replay: materialize an already-complete request carrying a
    // saved result, bypassing the rendezvous.
    ReqHandle make_completed_request(WorldRank p, Bytes payload, std::optional<Status> status);

    // Introspection for drain and for test oracles.
    std::size_t inflight_message_count() const { return m_inflight.size(); }
    std::uint64_t inflight_bytes(WorldRank src, WorldRank dst) const;
    std::uint64_t inflight_msgs(WorldRank src, WorldRank dst) const;
    bool network_empty() const { return m_inflight.empty(); }
    std::uint64_t comm_creations() const { return m_commCreations; }

private:
    struct MsgObj {
        WorldRank src = -1;
        WorldRank dst = -1;
        std::int32_t commId = -1;
        int tag = 0;
        Bytes payload;
        std::uint64_t channelSeq = 0;
        std::int32_t claimedBy = 0; // request id, 0 = unclaimed
    };

    struct ReqObj {
        enum class Kind : std::uint8_t { Send, Recv, NbColl, Precompleted };
        Kind kind = Kind::Send;
        WorldRank owner = -1;
        bool done = false;
        // Recv matching criteria.
        WorldRank wantSrc = kAnySource;
        int wantTag = kAnyTag;
        std::int32_t commId = -1;
        std::int64_t claimedArrival = -1; // arrival seq of claimed message, -1 none
        // Non-blocking collective backing.
        std::int64_t instance = -1;
        // Completed result.
        std::optional<Status> status;
        Bytes payload;
        bool consumed = false;
    };

    struct CommObj {
        std::int32_t id = -1;
        std::vector<WorldRank> members;
    };

    struct GroupObj {
        std::int32_t id = -1;
        std::vector<WorldRank> members;
    };

    struct Instance {
        CollKind kind = CollKind::Barrier;
        bool nonblocking = false;
        int rootLocal = 0;
        ReduceOp op = ReduceOp::Sum;
        std::map<int, Bytes> contributions; // member index -> contribution
        std::set<int> arrived;
        std::set<int> completed;
        bool released = false; // all members arrived, results computed
        std::map<int, Bytes> results;
        std::map<int, CommHandle> resultComms;
        std::uint64_t gid = 0;
        bool blockingEngaged = false;
    };

    const CommObj &comm_of(CommHandle c) const;
    void check_epoch(int epoch, const char *what) const;
    int member_index(const CommObj &comm, WorldRank p, const char *what) const;
    void try_claim_for_recv(std::int32_t reqId);
    void try_claim_for_message(std::int64_t arrival);
    bool recv_matches(const ReqObj &r, const MsgObj &m) const;
    Instance &instance_at(CommHandle c, std::int64_t instance, const char *what);
    const Instance *find_instance(std::int32_t commId, std::int64_t instance) const;
    void deposit_common(WorldRank p, CommHandle c, std::int64_t instance, CollKind kind,
                        bool nonblocking, int rootLocal, ReduceOp op, Bytes contribution);
    void release_instance(std::int32_t commId, std::int64_t instance, Instance &inst);
    bool member_ready(const Instance &inst, int memberIdx) const;
    CollResult take_result(std::int32_t commId, std::int64_t inst, WorldRank p);
    void close_if_complete(std::int32_t commId, std::int64_t instanceIdx);

    EventLog *m_log;
    int m_worldSize;
    int m_epoch;
    std::uint64_t m_now = 0;
    CommHandle m_world;

    std::map<std::int32_t, CommObj> m_comms;
    std::map<std::int32_t, GroupObj> m_groups;
    std::map<std::int32_t, ReqObj> m_requests;
    std::map<std::int64_t, MsgObj> m_inflight; // arrival seq -> message
    std::map<std::tuple<WorldRank, WorldRank, std::int32_t, int>, std::uint64_t> m_channelSeq;
    std::vector<std::int32_t> m_postedRecvs; // request ids in post order (all ranks)
    std::map<std::pair<std::int32_t, std::int64_t>, Instance> m_instances;

    std::int32_t m_nextCommId = 1;
    std::int32_t m_nextGroupId = 1;
    std::int32_t m_nextReqId = 1;
    std::int64_t m_nextArrival = 1;
    std::uint64_t m_commCreations = 0;
};

} // namespace manakin
