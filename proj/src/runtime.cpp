#include "manakin/runtime.hpp"

#include <algorithm>

namespace manakin {

Bytes reduce_lanes(ReduceOp op, const Bytes &a, const Bytes &b) {
    if (a.size() != b.size() || a.size() % 8 != 0) {
        throw SimError(Err::ProtocolViolation, "reduction contributions must be equal-length u64 vectors");
    }
    Bytes out(a.size());
    for (std::size_t i = 0; i < a.size(); i += 8) {
        std::uint64_t x = 0;
        std::uint64_t y = 0;
        for (int k = 0; k < 8; ++k) {
            x |= static_cast<std::uint64_t>(a[i + k]) << (8 * k);
            y |= static_cast<std::uint64_t>(b[i + k]) << (8 * k);
        }
        std::uint64_t z = 0;
        switch (op) {
        case ReduceOp::Sum: z = x + y; break;
        case ReduceOp::Max: z = std::max(x, y); break;
        case ReduceOp::Bxor: z = x ^ y; break;
        }
        for (int k = 0; k < 8; ++k) {
            out[i + k] = static_cast<std::uint8_t>(z >> (8 * k));
        }
    }
    return out;
}

LowerHalf::LowerHalf(EventLog &log, int worldSize, int epoch)
    : m_log(&log), m_worldSize(worldSize), m_epoch(epoch) {
    if (worldSize < 1) {
        throw SimError(Err::InvalidConfiguration, "world size must be >= 1");
    }
    std::vector<WorldRank> all(static_cast<std::size_t>(worldSize));
    for (int i = 0; i < worldSize; ++i) {
        all[static_cast<std::size_t>(i)] = i;
    }
    m_world = comm_from_members(std::move(all));
}

void LowerHalf::check_epoch(int epoch, const char *what) const {
    if (epoch != m_epoch) {
        throw SimError(Err::StaleHandle, std::string(what) + " handle from epoch " +
                                             std::to_string(epoch) + " used in epoch " +
                                             std::to_string(m_epoch));
    }
}

const LowerHalf::CommObj &LowerHalf::comm_of(CommHandle c) const {
    check_epoch(c.epoch, "comm");
    auto it = m_comms.find(c.id);
    if (it == m_comms.end()) {
        throw SimError(Err::StaleHandle, "unknown comm id " + std::to_string(c.id));
    }
    return it->second;
}

int LowerHalf::member_index(const CommObj &comm, WorldRank p, const char *what) const {
    for (std::size_t i = 0; i < comm.members.size(); ++i) {
        if (comm.members[i] == p) {
            return static_cast<int>(i);
        }
    }
    throw SimError(Err::InvalidRank, std::string(what) + ": rank " + std::to_string(p) +
                                         " not a member of comm " + std::to_string(comm.id));
}

const std::vector<WorldRank> &LowerHalf::members(CommHandle c) const {
    return comm_of(c).members;
}

std::vector<WorldRank> LowerHalf::translate_group_ranks(WorldRank p, CommHandle c) const {
    const CommObj &comm = comm_of(c);
    member_index(comm, p, "translate_group_ranks");
    // Answered from local state; logged as a local query so tests can assert
    // no network event was generated.
    m_log->append(m_now, p, EvKind::LocalQuery, comm.id);
    return comm.members;
}

ReqHandle LowerHalf::isend(WorldRank p, WorldRank dst, int tag, CommHandle c, Bytes payload) {
    const CommObj &comm = comm_of(c);
    member_index(comm, p, "isend");
    member_index(comm, dst, "isend dst");

    MsgObj msg;
    msg.src = p;
    msg.dst = dst;
    msg.commId = comm.id;
    msg.tag = tag;
    msg.payload = std::move(payload);
    msg.channelSeq = ++m_channelSeq[{p, dst, comm.id, tag}];

    const std::int64_t arrival = m_nextArrival++;
    m_log->append(m_now, p, EvKind::MsgEnqueue, dst, tag,
                  static_cast<std::int64_t>(msg.payload.size()));
    m_inflight.emplace(arrival, std::move(msg));
    try_claim_for_message(arrival);

    ReqObj req;
    req.kind = ReqObj::Kind::Send;
    req.owner = p;
    req.done = true; // eager send: complete at enqueue
    const std::int32_t id = m_nextReqId++;
    m_requests.emplace(id, std::move(req));
    return ReqHandle{id, m_epoch};
}

bool LowerHalf::recv_matches(const ReqObj &r, const MsgObj &m) const {
    if (m.claimedBy != 0) {
        return false;
    }
    if (m.dst != r.owner || m.commId != r.commId) {
        return false;
    }
    if (r.wantSrc != kAnySource && r.wantSrc != m.src) {
        return false;
    }
    if (r.wantTag != kAnyTag && r.wantTag != m.tag) {
        return false;
    }
    return true;
}

void LowerHalf::try_claim_for_recv(std::int32_t reqId) {
    ReqObj &r = m_requests.at(reqId);
    // Lowest global arrival sequence among eligible messages; per-channel
    // FIFO follows because arrival order respects send order on a channel.
    for (auto &[arrival, msg] : m_inflight) {
        if (recv_matches(r, msg)) {
            msg.claimedBy = reqId;
            r.claimedArrival = arrival;
            m_log->append(m_now, r.owner, EvKind::MsgClaim, msg.src, msg.tag,
                          static_cast<std::int64_t>(msg.payload.size()));
            return;
        }
    }
}

void LowerHalf::try_claim_for_message(std::int64_t arrival) {
    MsgObj &msg = m_inflight.at(arrival);
    // Oldest posted receive first.
    for (std::int32_t reqId : m_postedRecvs) {
        ReqObj &r = m_requests.at(reqId);
        if (r.claimedArrival >= 0 || r.done) {
            continue;
        }
        if (recv_matches(r, msg)) {
            msg.claimedBy = reqId;
            r.claimedArrival = arrival;
            m_log->append(m_now, r.owner, EvKind::MsgClaim, msg.src, msg.tag,
                          static_cast<std::int64_t>(msg.payload.size()));
            return;
        }
    }
}

ReqHandle LowerHalf::irecv(WorldRank p, WorldRank src, int tag, CommHandle c) {
    const CommObj &comm = comm_of(c);
    member_index(comm, p, "irecv");
    if (src != kAnySource) {
        member_index(comm, src, "irecv src");
    }

    ReqObj req;
    req.kind = ReqObj::Kind::Recv;
    req.owner = p;
    req.wantSrc = src;
    req.wantTag = tag;
    req.commId = comm.id;
    const std::int32_t id = m_nextReqId++;
    m_requests.emplace(id, std::move(req));
    m_postedRecvs.push_back(id);
    try_claim_for_recv(id);
    return ReqHandle{id, m_epoch};
}

TestResult LowerHalf::test(WorldRank p, ReqHandle r) {
    if (r.is_null()) {
        return TestResult{true, std::nullopt, {}};
    }
    check_epoch(r.epoch, "request");
    auto it = m_requests.find(r.id);
    if (it == m_requests.end()) {
        throw SimError(Err::StaleHandle, "unknown request id " + std::to_string(r.id));
    }
    ReqObj &req = it->second;

    switch (req.kind) {
    case ReqObj::Kind::Send:
        return TestResult{true, std::nullopt, {}};
    case ReqObj::Kind::Precompleted:
        return TestResult{true, req.status, req.payload};
    case ReqObj::Kind::Recv: {
        if (req.done) {
            return TestResult{true, req.status, req.payload};
        }
        if (req.claimedArrival < 0) {
            return TestResult{false, std::nullopt, {}};
        }
        auto msgIt = m_inflight.find(req.claimedArrival);
        MsgObj &msg = msgIt->second;
        req.done = true;
        req.status = Status{msg.src, msg.tag, msg.payload.size()};
        req.payload = std::move(msg.payload);
        m_log->append(m_now, p, EvKind::MsgDeliver, msg.src, msg.tag,
                      static_cast<std::int64_t>(req.payload.size()));
        m_inflight.erase(msgIt);
        m_postedRecvs.erase(std::remove(m_postedRecvs.begin(), m_postedRecvs.end(), r.id),
                            m_postedRecvs.end());
        return TestResult{true, req.status, req.payload};
    }
    case ReqObj::Kind::NbColl: {
        if (req.done) {
            return TestResult{true, req.status, req.payload};
        }
        const Instance *inst = find_instance(req.commId, req.instance);
        if (inst == nullptr) {
            throw SimError(Err::RestartInconsistency, "non-blocking collective lost its instance");
        }
        if (!inst->released) {
            return TestResult{false, std::nullopt, {}};
        }
        CollResult res = take_result(req.commId, req.instance, p);
        req.done = true;
        req.payload = std::move(res.payload);
        req.status = Status{-1, -1, req.payload.size()};
        return TestResult{true, req.status, req.payload};
    }
    }
    return TestResult{};
}

std::optional<std::uint64_t> LowerHalf::iprobe(WorldRank p, WorldRank src, int tag,
                                               CommHandle c) const {
    const CommObj &comm = comm_of(c);
    member_index(comm, p, "iprobe");
    // Only unclaimed messages are visible: a message already matched to a
    // posted receive cannot be probed any more.
    for (const auto &[arrival, msg] : m_inflight) {
        if (msg.claimedBy != 0 || msg.dst != p || msg.commId != comm.id) {
            continue;
        }
        if (src != kAnySource && src != msg.src) {
            continue;
        }
        if (tag != kAnyTag && tag != msg.tag) {
            continue;
        }
        return msg.payload.size();
    }
    return std::nullopt;
}

void LowerHalf::deposit_common(WorldRank p, CommHandle c, std::int64_t instanceIdx, CollKind kind,
                               bool nonblocking, int rootLocal, ReduceOp op, Bytes contribution) {
    const CommObj &comm = comm_of(c);
    const int me = member_index(comm, p, "collective");

    auto [it, fresh] = m_instances.try_emplace({comm.id, instanceIdx});
    Instance &inst = it->second;
    if (fresh) {
        inst.kind = kind;
        inst.nonblocking = nonblocking;
        inst.rootLocal = rootLocal;
        inst.op = op;
    } else {
        if (inst.kind != kind || inst.rootLocal != rootLocal || inst.op != op) {
            throw SimError(Err::ProtocolViolation,
                           "mismatched collective on comm " + std::to_string(comm.id) +
                               " instance " + std::to_string(instanceIdx) + ": " +
                               coll_kind_name(inst.kind) + " vs " + coll_kind_name(kind));
        }
        if (inst.nonblocking != nonblocking) {
            throw SimError(Err::ProtocolViolation,
                           "blocking and non-blocking collectives do not match");
        }
    }
    if (inst.arrived.count(me) != 0) {
        throw SimError(Err::ProtocolViolation, "double deposit by rank " + std::to_string(p));
    }
    if (!nonblocking) {
        inst.blockingEngaged = true;
    }
    inst.arrived.insert(me);
    inst.contributions[me] = std::move(contribution);
    m_log->append(m_now, p, EvKind::CollDeposit, comm.id, instanceIdx,
                  static_cast<std::int64_t>(kind));
    if (inst.arrived.size() == comm.members.size()) {
        release_instance(comm.id, instanceIdx, inst);
    }
}

void LowerHalf::coll_deposit(WorldRank p, CommHandle c, std::int64_t instance, CollKind kind,
                             int rootLocal, ReduceOp op, Bytes contribution) {
    deposit_common(p, c, instance, kind, false, rootLocal, op, std::move(contribution));
}

ReqHandle LowerHalf::icoll_deposit(WorldRank p, CommHandle c, std::int64_t instance, CollKind kind,
                                   int rootLocal, ReduceOp op, Bytes contribution) {
    if (kind == CollKind::CommSplit || kind == CollKind::CommCreate) {
        throw SimError(Err::InvalidOperation, "communicator creation has no non-blocking form");
    }
    deposit_common(p, c, instance, kind, true, rootLocal, op, std::move(contribution));

    ReqObj req;
    req.kind = ReqObj::Kind::NbColl;
    req.owner = p;
    req.commId = comm_of(c).id;
    req.instance = instance;
    const std::int32_t id = m_nextReqId++;
    m_requests.emplace(id, std::move(req));
    return ReqHandle{id, m_epoch};
}

void LowerHalf::release_instance(std::int32_t commId, std::int64_t instanceIdx, Instance &inst) {
    const CommObj &comm = m_comms.at(commId);
    const int m = static_cast<int>(comm.members.size());

    switch (inst.kind) {
    case CollKind::Barrier:
        break;
    case CollKind::Bcast:
        // Results for bcast are served straight from the root contribution in
        // member_ready/take_result so non-roots can fetch before everyone
        // arrives; nothing to precompute here.
        break;
    case CollKind::Allreduce: {
        Bytes acc = inst.contributions.at(0);
        for (int i = 1; i < m; ++i) {
            acc = reduce_lanes(inst.op, acc, inst.contributions.at(i));
        }
        for (int i = 0; i < m; ++i) {
            inst.results[i] = acc;
        }
        break;
    }
    case CollKind::Alltoall: {
        const std::size_t total = inst.contributions.at(0).size();
        if (total % static_cast<std::size_t>(m) != 0) {
            throw SimError(Err::ProtocolViolation, "alltoall contribution not divisible by size");
        }
        for (int i = 0; i < m; ++i) {
            if (inst.contributions.at(i).size() != total) {
                throw SimError(Err::ProtocolViolation, "alltoall contributions differ in size");
            }
        }
        const std::size_t block = total / static_cast<std::size_t>(m);
        for (int j = 0; j < m; ++j) {
            Bytes out;
            out.reserve(total);
            for (int i = 0; i < m; ++i) {
                const Bytes &src = inst.contributions.at(i);
                out.insert(out.end(), src.begin() + static_cast<std::ptrdiff_t>(block * j),
                           src.begin() + static_cast<std::ptrdiff_t>(block * (j + 1)));
            }
            inst.results[j] = std::move(out);
        }
        break;
    }
    case CollKind::CommSplit: {
        // contribution = (color i32, key i32); children created per color,
        // members ordered by (key, world rank).
        std::map<std::int32_t, std::vector<std::pair<std::int32_t, WorldRank>>> byColor;
        for (int i = 0; i < m; ++i) {
            ByteReader rd(inst.contributions.at(i));
            const std::int32_t color = rd.read_i32();
            const std::int32_t key = rd.read_i32();
            byColor[color].push_back({key, comm.members[static_cast<std::size_t>(i)]});
        }
        std::map<std::int32_t, CommHandle> child;
        for (auto &[color, entries] : byColor) {
            std::sort(entries.begin(), entries.end());
            std::vector<WorldRank> members;
            members.reserve(entries.size());
            for (const auto &[key, rank] : entries) {
                members.push_back(rank);
            }
            child[color] = comm_from_members(std::move(members));
        }
        for (int i = 0; i < m; ++i) {
            ByteReader rd(inst.contributions.at(i));
            const std::int32_t color = rd.read_i32();
            inst.resultComms[i] = child.at(color);
        }
        break;
    }
    case CollKind::CommCreate: {
        // contribution = member list; all depositors must agree.
        const Bytes &first = inst.contributions.at(0);
        for (int i = 1; i < m; ++i) {
            if (inst.contributions.at(i) != first) {
                throw SimError(Err::ProtocolViolation, "comm-create member lists differ");
            }
        }
        ByteReader rd(first);
        const std::uint32_t n = rd.read_u32();
        std::vector<WorldRank> newMembers;
        newMembers.reserve(n);
        for (std::uint32_t i = 0; i < n; ++i) {
            newMembers.push_back(rd.read_i32());
        }
        CommHandle h = comm_from_members(newMembers);
        for (int i = 0; i < m; ++i) {
            const WorldRank rank = comm.members[static_cast<std::size_t>(i)];
            if (std::find(newMembers.begin(), newMembers.end(), rank) != newMembers.end()) {
                inst.resultComms[i] = h;
            }
        }
        break;
    }
    }
    inst.released = true;
    m_log->append(m_now, -1, EvKind::CollRelease, commId, instanceIdx, m);
}

bool LowerHalf::member_ready(const Instance &inst, int memberIdx) const {
    if (inst.kind == CollKind::Bcast) {
        return memberIdx == inst.rootLocal || inst.arrived.count(inst.rootLocal) != 0;
    }
    return inst.released;
}

bool LowerHalf::coll_member_ready(WorldRank p, CommHandle c, std::int64_t instanceIdx) const {
    const CommObj &comm = comm_of(c);
    const int me = member_index(comm, p, "collective");
    const Instance *inst = find_instance(comm.id, instanceIdx);
    if (inst == nullptr) {
        return false;
    }
    if (inst->arrived.count(me) == 0) {
        return false;
    }
    return member_ready(*inst, me);
}

const LowerHalf::Instance *LowerHalf::find_instance(std::int32_t commId,
                                                    std::int64_t instance) const {
    auto it = m_instances.find({commId, instance});
    return it == m_instances.end() ? nullptr : &it->second;
}

CollResult LowerHalf::take_result(std::int32_t commId, std::int64_t instanceIdx, WorldRank p) {
    const CommObj &comm = m_comms.at(commId);
    const int me = member_index(comm, p, "collective take");
    Instance &inst = m_instances.at({commId, instanceIdx});
    if (inst.arrived.count(me) == 0 || !member_ready(inst, me)) {
        throw SimError(Err::ProtocolViolation, "collective result taken before ready");
    }

    CollResult out;
    if (inst.kind == CollKind::Bcast) {
        out.payload = inst.contributions.at(inst.rootLocal);
    } else if (auto it = inst.results.find(me); it != inst.results.end()) {
        out.payload = it->second;
    }
    if (auto it = inst.resultComms.find(me); it != inst.resultComms.end()) {
        out.newComm = it->second;
        out.newMembers = m_comms.at(it->second.id).members;
    }
    inst.completed.insert(me);
    close_if_complete(commId, instanceIdx);
    return out;
}

CollResult LowerHalf::coll_take(WorldRank p, CommHandle c, std::int64_t instanceIdx) {
    const CommObj &comm = comm_of(c);
    return take_result(comm.id, instanceIdx, p);
}

void LowerHalf::close_if_complete(std::int32_t commId, std::int64_t instanceIdx) {
    auto it = m_instances.find({commId, instanceIdx});
    if (it == m_instances.end()) {
        return;
    }
    const CommObj &comm = m_comms.at(commId);
    if (it->second.completed.size() == comm.members.size()) {
        m_instances.erase(it);
    }
}

void LowerHalf::tag_instance_gid(CommHandle c, std::int64_t instance, std::uint64_t gid) {
    const CommObj &comm = comm_of(c);
    auto it = m_instances.find({comm.id, instance});
    if (it != m_instances.end()) {
        it->second.gid = gid;
    }
}

bool LowerHalf::blocking_instance_open(std::uint64_t gid) const {
    for (const auto &[key, inst] : m_instances) {
        if (inst.blockingEngaged && inst.gid == gid) {
            return true;
        }
    }
    return false;
}

std::vector<std::uint64_t> LowerHalf::open_blocking_gids() const {
    std::vector<std::uint64_t> out;
    for (const auto &[key, inst] : m_instances) {
        if (inst.blockingEngaged) {
            out.push_back(inst.gid);
        }
    }
    return out;
}

CommHandle LowerHalf::comm_from_members(std::vector<WorldRank> members) {
    if (members.empty()) {
        throw SimError(Err::InvalidConfiguration, "communicator must have members");
    }
    CommObj comm;
    comm.id = m_nextCommId++;
    comm.members = std::move(members);
    const std::int32_t id = comm.id;
    const auto count = static_cast<std::int64_t>(comm.members.size());
    m_comms.emplace(id, std::move(comm));
    ++m_commCreations;
    m_log->append(m_now, -1, EvKind::CommCreate, id, count);
    return CommHandle{id, m_epoch};
}

GroupHandle LowerHalf::group_from_members(std::vector<WorldRank> members) {
    if (members.empty()) {
        throw SimError(Err::InvalidConfiguration, "group must have members");
    }
    GroupObj g;
    g.id = m_nextGroupId++;
    g.members = std::move(members);
    const std::int32_t id = g.id;
    m_groups.emplace(id, std::move(g));
    m_log->append(m_now, -1, EvKind::GroupCreate, id);
    return GroupHandle{id, m_epoch};
}

const std::vector<WorldRank> &LowerHalf::group_members(GroupHandle g) const {
    check_epoch(g.epoch, "group");
    auto it = m_groups.find(g.id);
    if (it == m_groups.end()) {
        throw SimError(Err::StaleHandle, "unknown group id " + std::to_string(g.id));
    }
    return it->second.members;
}

void LowerHalf::free_comm(WorldRank p, CommHandle c) {
    const CommObj &comm = comm_of(c);
    member_index(comm, p, "free_comm");
    m_log->append(m_now, p, EvKind::CommFree, comm.id);
}

ReqHandle LowerHalf::make_completed_request(WorldRank p, Bytes payload,
                                            std::optional<Status> status) {
    ReqObj req;
    req.kind = ReqObj::Kind::Precompleted;
    req.owner = p;
    req.done = true;
    req.payload = std::move(payload);
    req.status = status;
    const std::int32_t id = m_nextReqId++;
    m_requests.emplace(id, std::move(req));
    return ReqHandle{id, m_epoch};
}

std::uint64_t LowerHalf::inflight_bytes(WorldRank src, WorldRank dst) const {
    std::uint64_t total = 0;
    for (const auto &[arrival, msg] : m_inflight) {
        if (msg.src == src && msg.dst == dst) {
            total += msg.payload.size();
        }
    }
    return total;
}

std::uint64_t LowerHalf::inflight_msgs(WorldRank src, WorldRank dst) const {
    std::uint64_t total = 0;
    for (const auto &[arrival, msg] : m_inflight) {
        if (msg.src == src && msg.dst == dst) {
            ++total;
        }
    }
    return total;
}

} // namespace manakin
