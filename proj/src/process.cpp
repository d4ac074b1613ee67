#include "manakin/process.hpp"

#include <algorithm>
#include <cassert>

namespace manakin {

std::uint64_t membership_gid(std::vector<WorldRank> members) {
    std::sort(members.begin(), members.end());
    Bytes buf;
    buf.reserve(members.size() * 4);
    for (WorldRank r : members) {
        put_i32(buf, r);
    }
    return fnv1a64(buf);
}

Vid &AppStorage::slot(int i) {
    if (i < 0) {
        throw SimError(Err::InvalidOperation, "negative request slot");
    }
    if (static_cast<std::size_t>(i) >= reqSlots.size()) {
        reqSlots.resize(static_cast<std::size_t>(i) + 1, kNullVid);
    }
    return reqSlots[static_cast<std::size_t>(i)];
}

Bytes &AppStorage::buffer(int i) {
    if (i < 0) {
        throw SimError(Err::InvalidOperation, "negative buffer slot");
    }
    if (static_cast<std::size_t>(i) >= buffers.size()) {
        buffers.resize(static_cast<std::size_t>(i) + 1);
    }
    return buffers[static_cast<std::size_t>(i)];
}

Process::Process(WorldRank rank, int worldSize)
    : sentBytes(static_cast<std::size_t>(worldSize), 0),
      sentMsgs(static_cast<std::size_t>(worldSize), 0),
      recvBytes(static_cast<std::size_t>(worldSize), 0),
      recvMsgs(static_cast<std::size_t>(worldSize), 0),
      m_rank(rank), m_worldSize(worldSize) {}

void Process::bind_world(LowerHalf &lh) {
    if (worldVid == kNullVid) {
        worldVid = nextCommVid++;
        CommDesc desc;
        desc.vid = worldVid;
        desc.members = lh.members(lh.world());
        desc.gid = membership_gid(desc.members);
        comms.push_back(std::move(desc));
    }
    commTable[worldVid] = lh.world();
}

const CommDesc &Process::desc_of(Vid vcomm) const {
    for (const auto &d : comms) {
        if (d.vid == vcomm) {
            return d;
        }
    }
    throw SimError(Err::UnknownVirtualHandle, "comm vid " + std::to_string(vcomm));
}

CommDesc &Process::desc_of_mut(Vid vcomm) {
    for (auto &d : comms) {
        if (d.vid == vcomm) {
            return d;
        }
    }
    throw SimError(Err::UnknownVirtualHandle, "comm vid " + std::to_string(vcomm));
}

CommHandle Process::real_comm(Vid vcomm) const {
    auto it = commTable.find(vcomm);
    if (it == commTable.end()) {
        throw SimError(Err::UnknownVirtualHandle, "comm vid " + std::to_string(vcomm));
    }
    return it->second;
}

Vid Process::alloc_req_vid() {
    return nextReqVid++;
}

void Process::note_table_size() {
    metrics.requestTableHighWater = std::max(metrics.requestTableHighWater, requestTable.size());
}

P2PRecord *Process::find_p2p(Vid vreq) {
    for (auto &r : p2pList) {
        if (r.vreq == vreq) {
            return &r;
        }
    }
    return nullptr;
}

ReplayRecord *Process::find_replay(Vid vreq) {
    for (auto &r : replayLog) {
        if (r.vreq == vreq) {
            return &r;
        }
    }
    return nullptr;
}

// ---------------------------------------------------------------------------
// Wrapper operations
// ---------------------------------------------------------------------------

Vid Process::w_isend(WrapperEnv &env, int dstLocal, int tag, Vid vcomm, Bytes payload) {
    const CommDesc &desc = desc_of(vcomm);
    if (dstLocal < 0 || static_cast<std::size_t>(dstLocal) >= desc.members.size()) {
        throw SimError(Err::InvalidRank, "isend dst local rank " + std::to_string(dstLocal));
    }
    const WorldRank dstWorld = desc.members[static_cast<std::size_t>(dstLocal)];
    const std::uint64_t n = payload.size();

    ++metrics.isends;
    ++metrics.lowerHalfEntries;
    ReqHandle real = env.lh->isend(m_rank, dstWorld, tag, real_comm(vcomm), std::move(payload));

    // Counters advance at isend time: the bytes are committed to the network.
    sentBytes[static_cast<std::size_t>(dstWorld)] += n;
    sentMsgs[static_cast<std::size_t>(dstWorld)] += 1;

    const Vid vid = alloc_req_vid();
    requestTable[vid] = real;
    note_table_size();

    P2PRecord rec;
    rec.vreq = vid;
    rec.dir = Dir::Send;
    rec.peer = dstWorld;
    rec.tag = tag;
    rec.vcomm = vcomm;
    rec.bytes = n;
    p2pList.push_back(std::move(rec));
    return vid;
}

Vid Process::w_irecv(WrapperEnv &env, int srcLocal, int tag, Vid vcomm, int bufSlot) {
    const CommDesc &desc = desc_of(vcomm);
    WorldRank srcWorld = kAnySource;
    if (srcLocal >= 0) {
        if (static_cast<std::size_t>(srcLocal) >= desc.members.size()) {
            throw SimError(Err::InvalidRank, "irecv src local rank " + std::to_string(srcLocal));
        }
        srcWorld = desc.members[static_cast<std::size_t>(srcLocal)];
    }
    ++metrics.irecvs;

    const Vid vid = alloc_req_vid();
    P2PRecord rec;
    rec.vreq = vid;
    rec.dir = Dir::Recv;
    rec.peer = srcWorld;
    rec.tag = tag;
    rec.vcomm = vcomm;
    rec.bufSlot = bufSlot;

    // Drained buffers are consumed before any network receive. List order is
    // arrival order, so the first match is the FIFO-correct one.
    for (auto it = drainedBuffers.begin(); it != drainedBuffers.end(); ++it) {
        if (it->commGid != desc.gid) {
            continue;
        }
        if (srcWorld != kAnySource && it->src != srcWorld) {
            continue;
        }
        if (tag != kAnyTag && it->tag != tag) {
            continue;
        }
        rec.completed = true;
        rec.hasStatus = true;
        rec.status = Status{it->src, it->tag, it->payload.size()};
        rec.bytes = it->payload.size();
        recvBytes[static_cast<std::size_t>(it->src)] += it->payload.size();
        recvMsgs[static_cast<std::size_t>(it->src)] += 1;
        if (bufSlot >= 0) {
            mem.buffer(bufSlot) = it->payload;
        } else {
            rec.payload = it->payload;
        }
        drainedBuffers.erase(it);
        requestTable[vid] = ReqHandle::null(); // completion already observed
        note_table_size();
        p2pList.push_back(std::move(rec));
        return vid;
    }

    ++metrics.lowerHalfEntries;
    ReqHandle real = env.lh->irecv(m_rank, srcWorld, tag, real_comm(vcomm));
    requestTable[vid] = real;
    note_table_size();
    p2pList.push_back(std::move(rec));
    return vid;
}

TestOutcome Process::w_test_slot(WrapperEnv &env, Vid &slotRef) {
    ++metrics.tests;
    const Vid vid = slotRef;
    if (vid == kNullVid) {
        return TestOutcome{true, false, {}, {}};
    }
    auto it = requestTable.find(vid);
    if (it == requestTable.end()) {
        throw SimError(Err::UnknownVirtualHandle,
                       "request vid " + std::to_string(vid) + " (already retired?)");
    }

    if (it->second.is_null()) {
        // Retirement step B: the real side is the null sentinel, so the entry
        // can go and the application's request variable is nulled.
        TestOutcome out;
        out.done = true;
        for (auto rit = p2pList.begin(); rit != p2pList.end(); ++rit) {
            if (rit->vreq == vid) {
                out.hasStatus = rit->hasStatus;
                out.status = rit->status;
                if (rit->bufSlot < 0) {
                    out.payload = rit->payload;
                }
                p2pList.erase(rit);
                break;
            }
        }
        requestTable.erase(it);
        slotRef = kNullVid;
        return out;
    }

    ++metrics.lowerHalfEntries;
    TestResult tr = env.lh->test(m_rank, it->second);
    if (!tr.done) {
        return TestOutcome{false, false, {}, {}};
    }

    if (P2PRecord *rec = find_p2p(vid)) {
        // Retirement step A: completion observed, but the application may
        // hold copies of the handle at unknown addresses. Repoint the table
        // entry to the null sentinel and keep the record until the next test.
        rec->completed = true;
        if (tr.status) {
            rec->hasStatus = true;
            rec->status = *tr.status;
        }
        if (rec->dir == Dir::Recv) {
            const WorldRank from = tr.status ? tr.status->src : rec->peer;
            rec->bytes = tr.payload.size();
            recvBytes[static_cast<std::size_t>(from)] += tr.payload.size();
            recvMsgs[static_cast<std::size_t>(from)] += 1;
            if (rec->bufSlot >= 0) {
                mem.buffer(rec->bufSlot) = tr.payload;
            } else {
                rec->payload = tr.payload;
            }
        }
        it->second = ReqHandle::null();
        TestOutcome out;
        out.done = true;
        out.hasStatus = tr.status.has_value();
        if (tr.status) {
            out.status = *tr.status;
        }
        out.payload = std::move(tr.payload);
        return out;
    }

    if (ReplayRecord *rr = find_replay(vid)) {
        // Non-blocking collectives retire immediately: the tested address is
        // known here, so the variable is nulled and the entry pruned now.
        if (rr->resultBufSlot >= 0) {
            mem.buffer(rr->resultBufSlot) = tr.payload;
        }
        replayLog.erase(std::remove_if(replayLog.begin(), replayLog.end(),
                                       [&](const ReplayRecord &r) { return r.vreq == vid; }),
                        replayLog.end());
        requestTable.erase(it);
        slotRef = kNullVid;
        TestOutcome out;
        out.done = true;
        out.hasStatus = tr.status.has_value();
        if (tr.status) {
            out.status = *tr.status;
        }
        out.payload = std::move(tr.payload);
        return out;
    }

    requestTable.erase(it);
    slotRef = kNullVid;
    TestOutcome out;
    out.done = true;
    out.payload = std::move(tr.payload);
    return out;
}

Vid Process::w_icollective(WrapperEnv &env, Vid vcomm, CollKind kind, int rootLocal, ReduceOp op,
                           Bytes contribution, int resultBufSlot) {
    CommDesc &desc = desc_of_mut(vcomm);
    const std::int64_t instance = desc.collIndex++;
    ++metrics.icollectives;
    ++metrics.lowerHalfEntries;
    ReqHandle real =
        env.lh->icoll_deposit(m_rank, real_comm(vcomm), instance, kind, rootLocal, op, contribution);

    const Vid vid = alloc_req_vid();
    requestTable[vid] = real;
    note_table_size();

    ReplayRecord rec;
    rec.vreq = vid;
    rec.kind = kind;
    rec.vcomm = vcomm;
    rec.rootLocal = rootLocal;
    rec.op = op;
    rec.instance = instance;
    rec.contribution = std::move(contribution);
    rec.resultBufSlot = resultBufSlot;
    replayLog.push_back(std::move(rec));
    return vid;
}

std::uint64_t Process::w_comm_gid(Vid vcomm) const {
    // Pure function of the membership; generates no lower-half traffic.
    return desc_of(vcomm).gid;
}

std::vector<WorldRank> Process::w_translate(WrapperEnv &env, Vid vcomm) {
    ++metrics.lowerHalfEntries;
    return env.lh->translate_group_ranks(m_rank, real_comm(vcomm));
}

void Process::w_comm_free(WrapperEnv &env, Vid vcomm) {
    if (vcomm == worldVid) {
        throw SimError(Err::InvalidOperation, "cannot free the world communicator");
    }
    const CommDesc &desc = desc_of(vcomm); // throws if unknown
    (void)desc;
    ++metrics.commOps;
    ++metrics.lowerHalfEntries;
    env.lh->free_comm(m_rank, real_comm(vcomm));
    commTable.erase(vcomm);
    comms.erase(std::remove_if(comms.begin(), comms.end(),
                                 [&](const CommDesc &d) { return d.vid == vcomm; }),
                  comms.end());
}

Vid Process::w_comm_group(WrapperEnv &env, Vid vcomm) {
    const CommDesc &desc = desc_of(vcomm);
    ++metrics.commOps;
    ++metrics.lowerHalfEntries;
    GroupHandle g = env.lh->group_from_members(desc.members);
    const Vid vid = nextGroupVid++;
    groupTable[vid] = g;
    groups.push_back(GroupDesc{vid, desc.members, desc.gid});
    return vid;
}

Vid Process::w_group_incl(Vid vgroup, const std::vector<int> &indices) {
    const GroupDesc *src = nullptr;
    for (const auto &g : groups) {
        if (g.vid == vgroup) {
            src = &g;
        }
    }
    if (src == nullptr) {
        throw SimError(Err::UnknownVirtualHandle, "group vid " + std::to_string(vgroup));
    }
    std::vector<WorldRank> members;
    members.reserve(indices.size());
    for (int i : indices) {
        if (i < 0 || static_cast<std::size_t>(i) >= src->members.size()) {
            throw SimError(Err::InvalidRank, "group_incl index " + std::to_string(i));
        }
        members.push_back(src->members[static_cast<std::size_t>(i)]);
    }
    ++metrics.commOps;
    const Vid vid = nextGroupVid++;
    groups.push_back(GroupDesc{vid, std::move(members), 0});
    groups.back().gid = membership_gid(groups.back().members);
    return vid;
}

void Process::w_group_free(Vid vgroup) {
    const auto before = groups.size();
    groups.erase(std::remove_if(groups.begin(), groups.end(),
                                  [&](const GroupDesc &g) { return g.vid == vgroup; }),
                   groups.end());
    if (groups.size() == before) {
        throw SimError(Err::UnknownVirtualHandle, "group vid " + std::to_string(vgroup));
    }
    ++metrics.commOps;
    groupTable.erase(vgroup);
}

// ---------------------------------------------------------------------------
// Blocking wrappers (activations)
// ---------------------------------------------------------------------------

void Process::begin_send(WrapperEnv &env, int dstLocal, int tag, Vid vcomm, Bytes payload) {
    if (m_act.kind != ActKind::None) {
        throw SimError(Err::ProtocolViolation, "nested blocking wrapper call");
    }
    ++metrics.sends;
    Activation act;
    act.kind = ActKind::SendLoop;
    act.vreq = w_isend(env, dstLocal, tag, vcomm, std::move(payload));
    m_act = act;
}

void Process::begin_recv(WrapperEnv &env, int srcLocal, int tag, Vid vcomm, int bufSlot) {
    if (m_act.kind != ActKind::None) {
        throw SimError(Err::ProtocolViolation, "nested blocking wrapper call");
    }
    ++metrics.recvs;
    Activation act;
    act.kind = ActKind::RecvLoop;
    act.bufSlot = bufSlot;
    act.vreq = w_irecv(env, srcLocal, tag, vcomm, bufSlot);
    m_act = act;
}

void Process::begin_wait(int reqSlot) {
    if (m_act.kind != ActKind::None) {
        throw SimError(Err::ProtocolViolation, "nested blocking wrapper call");
    }
    ++metrics.waits;
    Activation act;
    act.kind = ActKind::WaitLoop;
    act.reqSlot = reqSlot;
    m_act = act;
}

void Process::begin_collective(Vid vcomm, CollKind kind, int rootLocal, ReduceOp op,
                               Bytes contribution, int bufSlot) {
    if (m_act.kind != ActKind::None) {
        throw SimError(Err::ProtocolViolation, "nested blocking wrapper call");
    }
    ++metrics.collectives;
    CommDesc &desc = desc_of_mut(vcomm);
    if (rootLocal < 0 || static_cast<std::size_t>(rootLocal) >= desc.members.size()) {
        throw SimError(Err::InvalidRank, "collective root " + std::to_string(rootLocal));
    }
    Activation act;
    act.kind = ActKind::Collective;
    act.vcomm = vcomm;
    act.collKind = kind;
    act.rootLocal = rootLocal;
    act.op = op;
    act.contribution = std::move(contribution);
    act.bufSlot = bufSlot;
    act.instance = desc.collIndex++;
    act.path = CollPath::Undecided;
    m_act = act;
}

// ---------------------------------------------------------------------------
// Stepping
// ---------------------------------------------------------------------------

bool Process::may_park(const std::function<bool(std::uint64_t)> &gidOpen) const {
    if (in_lower_half()) {
        return false;
    }
    // A member of a communicator with an open blocking collective must keep
    // running: it may be the straggler everyone else is waiting for.
    for (const auto &d : comms) {
        if (gidOpen(d.gid)) {
            return false;
        }
    }
    return true;
}

bool Process::step(WrapperEnv &env) {
    if (m_status != ProcStatus::Running) {
        return false;
    }
    if (m_act.kind != ActKind::None) {
        return advance_activation(env);
    }
    if (m_program != nullptr && !m_program->finished()) {
        AppApi api(*this, env);
        m_program->step(api);
        if (m_program->finished() && m_act.kind == ActKind::None) {
            m_status = ProcStatus::Finished;
        }
        return true;
    }
    m_status = ProcStatus::Finished;
    return true;
}

bool Process::advance_activation(WrapperEnv &env) {
    switch (m_act.kind) {
    case ActKind::None:
        return false;
    case ActKind::SendLoop:
    case ActKind::RecvLoop: {
        TestOutcome out = w_test_slot(env, m_act.vreq);
        if (!out.done) {
            return false;
        }
        if (m_act.vreq != kNullVid) {
            w_test_slot(env, m_act.vreq); // step B
        }
        mem.lastHasStatus = out.hasStatus;
        mem.lastStatus = out.status;
        const bool wasRecv = m_act.kind == ActKind::RecvLoop;
        m_act = Activation{};
        if (wasRecv && m_program != nullptr && m_program->finished()) {
            m_status = ProcStatus::Finished;
        }
        return true;
    }
    case ActKind::WaitLoop: {
        Vid &slot = mem.slot(m_act.reqSlot);
        TestOutcome out = w_test_slot(env, slot);
        if (!out.done) {
            return false;
        }
        if (slot != kNullVid) {
            w_test_slot(env, slot); // step B
        }
        mem.lastHasStatus = out.hasStatus;
        mem.lastStatus = out.status;
        m_act = Activation{};
        return true;
    }
    case ActKind::Collective:
        return advance_collective(env);
    }
    return false;
}

bool Process::advance_collective(WrapperEnv &env) {
    switch (m_act.path) {
    case CollPath::Undecided:
        decide_collective_path(env);
        return true;
    case CollPath::RealParked:
        return try_finish_real_collective(env);
    case CollPath::Emulated:
        return advance_emulation(env, false);
    case CollPath::NaiveBarrier:
        return advance_emulation(env, true);
    case CollPath::NaiveReal:
        enter_real_collective(env);
        return true;
    }
    return false;
}

void Process::decide_collective_path(WrapperEnv &env) {
    const bool isCommBuild =
        m_act.collKind == CollKind::CommSplit || m_act.collKind == CollKind::CommCreate;

    if (env.mode == Mode::NaiveBarrier) {
        ++metrics.barrierInsertions;
        m_act.path = CollPath::NaiveBarrier;
        emu_init(env, true);
        return;
    }
    if (isCommBuild) {
        // Communicator construction always uses the lower half.
        enter_real_collective(env);
        return;
    }
    if (env.mode == Mode::P2PEmulation) {
        m_act.path = CollPath::Emulated;
        emu_init(env, false);
        return;
    }
    // Hybrid. A peer may already have emulated this instance before a
    // checkpoint (an early-returning bcast root); its traffic sits in the
    // drained buffers under the instance's internal tags and commits us to
    // the emulation path regardless of the pending flag.
    const CommDesc &desc = desc_of(m_act.vcomm);
    if (emu_evidence_in_buffers()) {
        m_act.path = CollPath::Emulated;
        engagements.push_back(Engagement{0, m_act.instance, desc.gid, desc.members, false});
        emu_init(env, false);
        return;
    }
    // Real collectives while no checkpoint is pending. Once pending, join a
    // collective a peer already entered in the lower half; everything else
    // runs on the checkpoint-safe emulation path.
    if (!m_ckptPending) {
        enter_real_collective(env);
        return;
    }
    if (env.gidOpenQuery && env.gidOpenQuery(m_rank, desc.gid)) {
        enter_real_collective(env);
        return;
    }
    // The emulation is reported as an open collective so the round waits for
    // it to finish through the checkpoint-safe path, and so peers that have
    // not reached this instance yet keep running to join it.
    m_act.path = CollPath::Emulated;
    engagements.push_back(Engagement{0, m_act.instance, desc.gid, desc.members, false});
    emu_init(env, false);
}

bool Process::emu_evidence_in_buffers() const {
    const CommDesc &desc = desc_of(m_act.vcomm);
    const int tag0 = emu_tag(m_act.instance, 0, false);
    const int tag1 = emu_tag(m_act.instance, 1, false);
    for (const auto &b : drainedBuffers) {
        if (b.commGid == desc.gid && (b.tag == tag0 || b.tag == tag1)) {
            return true;
        }
    }
    return false;
}

void Process::enter_real_collective(WrapperEnv &env) {
    const CommDesc &desc = desc_of(m_act.vcomm);
    CommHandle rc = real_comm(m_act.vcomm);
    ++metrics.lowerHalfEntries;
    env.lh->coll_deposit(m_rank, rc, m_act.instance, m_act.collKind, m_act.rootLocal, m_act.op,
                         m_act.contribution);
    env.lh->tag_instance_gid(rc, m_act.instance, desc.gid);
    engagements.push_back(Engagement{rc.id, m_act.instance, desc.gid, desc.members, true});
    m_act.path = CollPath::RealParked;
    try_finish_real_collective(env);
}

bool Process::try_finish_real_collective(WrapperEnv &env) {
    CommHandle rc = real_comm(m_act.vcomm);
    if (!env.lh->coll_member_ready(m_rank, rc, m_act.instance)) {
        return false;
    }
    ++metrics.lowerHalfEntries;
    CollResult res = env.lh->coll_take(m_rank, rc, m_act.instance);
    finish_collective_result(env, std::move(res.payload), res.newComm, std::move(res.newMembers));
    return true;
}

void Process::finish_collective_result(WrapperEnv &env, Bytes payload,
                                       std::optional<CommHandle> newComm,
                                       std::vector<WorldRank> newMembers) {
    (void)env;
    if (m_act.collKind == CollKind::CommSplit || m_act.collKind == CollKind::CommCreate) {
        if (newComm) {
            const Vid vid = nextCommVid++;
            commTable[vid] = *newComm;
            CommDesc desc;
            desc.vid = vid;
            desc.members = std::move(newMembers);
            desc.gid = membership_gid(desc.members);
            std::int32_t color = 0;
            if (m_act.collKind == CollKind::CommSplit) {
                ByteReader rd(m_act.contribution);
                color = rd.read_i32();
            }
            Bytes birthSeed;
            put_u64(birthSeed, desc_of(m_act.vcomm).birth);
            put_i64(birthSeed, m_act.instance);
            put_i32(birthSeed, color);
            desc.birth = fnv1a64(birthSeed);
            comms.push_back(std::move(desc));
            mem.lastVid = vid;
        } else {
            mem.lastVid = kNullVid;
        }
    } else if (m_act.bufSlot >= 0) {
        mem.buffer(m_act.bufSlot) = std::move(payload);
    }
    mem.lastHasStatus = false;
    engagements.erase(std::remove_if(engagements.begin(), engagements.end(),
                                     [](const Engagement &e) { return !e.real; }),
                      engagements.end());
    m_act = Activation{};
    if (m_program != nullptr && m_program->finished()) {
        m_status = ProcStatus::Finished;
    }
}

// ---------------------------------------------------------------------------
// Point-to-point emulation of collectives
// ---------------------------------------------------------------------------

int Process::emu_tag(std::int64_t instance, int phase, bool naiveBarrier) const {
    // Wrapper-internal tag space: negative, disjoint per (instance, phase,
    // purpose) so channels never cross-match application traffic.
    const std::int64_t v = 1 + instance * 4 + phase * 2 + (naiveBarrier ? 1 : 0);
    return static_cast<int>(-v);
}

void Process::emu_init(WrapperEnv &env, bool naiveBarrier) {
    const CommDesc &desc = desc_of(m_act.vcomm);
    const int m = static_cast<int>(desc.members.size());
    int me = -1;
    for (int i = 0; i < m; ++i) {
        if (desc.members[static_cast<std::size_t>(i)] == m_rank) {
            me = i;
        }
    }
    if (me < 0) {
        throw SimError(Err::InvalidRank, "not a member of the collective communicator");
    }

    EmuState e;
    e.gathered.assign(static_cast<std::size_t>(2 * m), Bytes{});
    e.gatheredPresent.assign(static_cast<std::size_t>(2 * m), 0);

    const CollKind kind = naiveBarrier ? CollKind::Barrier : m_act.collKind;
    const std::int64_t inst = m_act.instance;
    const int tag0 = emu_tag(inst, 0, naiveBarrier);
    const int tag1 = emu_tag(inst, 1, naiveBarrier);
    const Vid vcomm = m_act.vcomm;

    switch (kind) {
    case CollKind::Barrier: {
        if (me != 0) {
            e.reqs.push_back(w_isend(env, 0, tag0, vcomm, {}));
            e.reqs.push_back(w_irecv(env, 0, tag1, vcomm, -1));
        } else {
            for (int i = 1; i < m; ++i) {
                e.reqs.push_back(w_irecv(env, i, tag0, vcomm, -1));
            }
        }
        break;
    }
    case CollKind::Bcast: {
        if (me == m_act.rootLocal) {
            for (int i = 0; i < m; ++i) {
                if (i != me) {
                    e.reqs.push_back(w_isend(env, i, tag0, vcomm, m_act.contribution));
                }
            }
        } else {
            e.reqs.push_back(w_irecv(env, m_act.rootLocal, tag0, vcomm, -1));
        }
        break;
    }
    case CollKind::Allreduce: {
        if (me != 0) {
            e.reqs.push_back(w_isend(env, 0, tag0, vcomm, m_act.contribution));
            e.reqs.push_back(w_irecv(env, 0, tag1, vcomm, -1));
        } else {
            for (int i = 1; i < m; ++i) {
                e.reqs.push_back(w_irecv(env, i, tag0, vcomm, -1));
            }
        }
        break;
    }
    case CollKind::Alltoall: {
        const std::size_t total = m_act.contribution.size();
        if (total % static_cast<std::size_t>(m) != 0) {
            throw SimError(Err::ProtocolViolation, "alltoall contribution not divisible by size");
        }
        const std::size_t block = total / static_cast<std::size_t>(m);
        for (int j = 0; j < m; ++j) {
            if (j == me) {
                continue;
            }
            Bytes blk(m_act.contribution.begin() + static_cast<std::ptrdiff_t>(block * j),
                      m_act.contribution.begin() + static_cast<std::ptrdiff_t>(block * (j + 1)));
            e.reqs.push_back(w_isend(env, j, tag0, vcomm, std::move(blk)));
        }
        for (int j = 0; j < m; ++j) {
            if (j != me) {
                e.reqs.push_back(w_irecv(env, j, tag0, vcomm, -1));
            }
        }
        break;
    }
    case CollKind::CommSplit:
    case CollKind::CommCreate:
        throw SimError(Err::ConfigurationError, "communicator construction cannot be emulated");
    }
    m_act.emu = std::move(e);
}

bool Process::emu_pump_requests(WrapperEnv &env, bool &anyNew) {
    EmuState &e = m_act.emu;
    bool anyOutstanding = false;
    anyNew = false;
    for (std::size_t k = 0; k < e.reqs.size(); ++k) {
        if (e.reqs[k] == kNullVid) {
            continue;
        }
        TestOutcome out = w_test_slot(env, e.reqs[k]);
        if (out.done) {
            anyNew = true;
            if (!e.gatheredPresent[k]) {
                e.gatheredPresent[k] = 1;
                e.gathered[k] = std::move(out.payload);
            }
            if (e.reqs[k] != kNullVid) {
                w_test_slot(env, e.reqs[k]); // step B
            }
        }
        if (e.reqs[k] != kNullVid) {
            anyOutstanding = true;
        }
    }
    return !anyOutstanding;
}

bool Process::advance_emulation(WrapperEnv &env, bool naiveBarrierPhase) {
    const CommDesc &desc = desc_of(m_act.vcomm);
    const int m = static_cast<int>(desc.members.size());
    int me = -1;
    for (int i = 0; i < m; ++i) {
        if (desc.members[static_cast<std::size_t>(i)] == m_rank) {
            me = i;
        }
    }
    const CollKind kind = naiveBarrierPhase ? CollKind::Barrier : m_act.collKind;
    const std::int64_t inst = m_act.instance;
    const Vid vcomm = m_act.vcomm;
    EmuState &e = m_act.emu;

    bool anyNew = false;
    const bool allRetired = emu_pump_requests(env, anyNew);
    if (!allRetired) {
        return anyNew;
    }

    // All requests of the current phase are retired; run the phase logic.
    switch (kind) {
    case CollKind::Barrier: {
        if (me == 0 && e.phase == 0) {
            e.phase = 1;
            e.reqs.clear();
            e.gathered.assign(static_cast<std::size_t>(m), Bytes{});
            e.gatheredPresent.assign(static_cast<std::size_t>(m), 0);
            for (int i = 1; i < m; ++i) {
                e.reqs.push_back(w_isend(env, i, emu_tag(inst, 1, naiveBarrierPhase), vcomm, {}));
            }
            return true;
        }
        e.result.clear();
        break;
    }
    case CollKind::Bcast: {
        e.result = (me == m_act.rootLocal) ? m_act.contribution : e.gathered[0];
        break;
    }
    case CollKind::Allreduce: {
        if (me == 0) {
            if (e.phase == 0) {
                // Reduce in ascending member order, identically to the
                // lower-half engine.
                Bytes acc = m_act.contribution;
                for (int i = 1; i < m; ++i) {
                    acc = reduce_lanes(m_act.op, acc, e.gathered[static_cast<std::size_t>(i - 1)]);
                }
                e.result = acc;
                e.phase = 1;
                e.reqs.clear();
                e.gathered.assign(static_cast<std::size_t>(m), Bytes{});
                e.gatheredPresent.assign(static_cast<std::size_t>(m), 0);
                for (int i = 1; i < m; ++i) {
                    e.reqs.push_back(w_isend(env, i, emu_tag(inst, 1, naiveBarrierPhase), vcomm,
                                             e.result));
                }
                return true;
            }
        } else {
            e.result = e.gathered[1];
        }
        break;
    }
    case CollKind::Alltoall: {
        const std::size_t total = m_act.contribution.size();
        const std::size_t block = total / static_cast<std::size_t>(m);
        Bytes out;
        out.reserve(total);
        std::size_t recvIdx = static_cast<std::size_t>(m - 1); // recvs follow the sends
        for (int j = 0; j < m; ++j) {
            if (j == me) {
                out.insert(out.end(),
                           m_act.contribution.begin() + static_cast<std::ptrdiff_t>(block * j),
                           m_act.contribution.begin() + static_cast<std::ptrdiff_t>(block * (j + 1)));
            } else {
                const Bytes &blk = e.gathered[recvIdx++];
                out.insert(out.end(), blk.begin(), blk.end());
            }
        }
        e.result = std::move(out);
        break;
    }
    default:
        break;
    }

    if (naiveBarrierPhase) {
        // Inserted barrier is done; commit to the real collective in the same
        // step so no checkpoint can slip between barrier and collective.
        m_act.path = CollPath::NaiveReal;
        enter_real_collective(env);
        return true;
    }
    finish_collective_result(env, std::move(e.result), std::nullopt, {});
    return true;
}

// ---------------------------------------------------------------------------
// Drain support
// ---------------------------------------------------------------------------

bool Process::drain_test_recv_records(WrapperEnv &env, WorldRank fromSrc) {
    // Completion observed internally (no application call site): exactly the
    // address-unknown case, so only retirement step A happens here.
    for (auto &rec : p2pList) {
        if (rec.dir != Dir::Recv || rec.completed) {
            continue;
        }
        auto it = requestTable.find(rec.vreq);
        if (it == requestTable.end() || it->second.is_null()) {
            continue;
        }
        ++metrics.lowerHalfEntries;
        TestResult tr = env.lh->test(m_rank, it->second);
        if (!tr.done) {
            continue;
        }
        const WorldRank from = tr.status ? tr.status->src : rec.peer;
        if (fromSrc != kAnySource && from != fromSrc) {
            // Wrong pair; the completion still counts (it is recorded), but
            // report no progress for the requested pair.
        }
        rec.completed = true;
        rec.bytes = tr.payload.size();
        if (tr.status) {
            rec.hasStatus = true;
            rec.status = *tr.status;
        }
        recvBytes[static_cast<std::size_t>(from)] += tr.payload.size();
        recvMsgs[static_cast<std::size_t>(from)] += 1;
        if (rec.bufSlot >= 0) {
            mem.buffer(rec.bufSlot) = tr.payload;
        } else {
            rec.payload = tr.payload;
        }
        it->second = ReqHandle::null();
        return true;
    }
    return false;
}

PhaseClass Process::phase_class() const {
    switch (m_act.kind) {
    case ActKind::SendLoop:
        return PhaseClass::SendLoop;
    case ActKind::RecvLoop:
    case ActKind::WaitLoop:
        return PhaseClass::RecvLoop;
    case ActKind::Collective:
        if (m_act.path == CollPath::Emulated || m_act.path == CollPath::NaiveBarrier) {
            return PhaseClass::CollectiveEmulation;
        }
        return PhaseClass::Idle;
    case ActKind::None:
        break;
    }
    for (const auto &[vid, real] : requestTable) {
        if (!real.is_null()) {
            return PhaseClass::CreateTestGap;
        }
    }
    return PhaseClass::Idle;
}

std::string Process::wait_description() const {
    switch (m_act.kind) {
    case ActKind::None:
        return m_status == ProcStatus::Finished ? "finished" : "app step";
    case ActKind::SendLoop:
        return "send completion loop (vreq " + std::to_string(m_act.vreq) + ")";
    case ActKind::RecvLoop:
        return "recv completion loop (vreq " + std::to_string(m_act.vreq) + ")";
    case ActKind::WaitLoop:
        return "wait on request slot " + std::to_string(m_act.reqSlot);
    case ActKind::Collective: {
        std::string base = std::string(coll_kind_name(m_act.collKind)) + " instance " +
                           std::to_string(m_act.instance) + " on comm vid " +
                           std::to_string(m_act.vcomm);
        switch (m_act.path) {
        case CollPath::RealParked: return "blocked in lower-half " + base;
        case CollPath::Emulated: return "emulating " + base;
        case CollPath::NaiveBarrier: return "inserted barrier before " + base;
        default: return base;
        }
    }
    }
    return "?";
}

// ---------------------------------------------------------------------------
// AppApi
// ---------------------------------------------------------------------------

int AppApi::world_size() const { return m_p.world_size(); }
WorldRank AppApi::world_rank() const { return m_p.rank(); }
Vid AppApi::world_comm() const { return m_p.worldVid; }
AppStorage &AppApi::mem() { return m_p.mem; }

namespace {

// Negative tags are the wrapper-internal emulation namespace.
int check_app_tag(int tag) {
    if (tag < 0 && tag != kAnyTag) {
        throw SimError(Err::InvalidOperation, "application tags must be non-negative");
    }
    return tag;
}

} // namespace

Vid AppApi::isend(int dstLocal, int tag, Vid vcomm, Bytes payload) {
    return m_p.w_isend(m_env, dstLocal, check_app_tag(tag), vcomm, std::move(payload));
}
Vid AppApi::irecv(int srcLocal, int tag, Vid vcomm, int bufSlot) {
    return m_p.w_irecv(m_env, srcLocal, tag == kAnyTag ? tag : check_app_tag(tag), vcomm, bufSlot);
}
std::pair<bool, Status> AppApi::test(int reqSlot) {
    TestOutcome out = m_p.w_test_slot(m_env, m_p.mem.slot(reqSlot));
    return {out.done, out.status};
}
Vid AppApi::icollective(Vid vcomm, CollKind kind, int rootLocal, ReduceOp op, Bytes contribution,
                        int resultBufSlot) {
    return m_p.w_icollective(m_env, vcomm, kind, rootLocal, op, std::move(contribution),
                             resultBufSlot);
}
void AppApi::send(int dstLocal, int tag, Vid vcomm, Bytes payload) {
    m_p.begin_send(m_env, dstLocal, check_app_tag(tag), vcomm, std::move(payload));
}
void AppApi::recv(int srcLocal, int tag, Vid vcomm, int bufSlot) {
    m_p.begin_recv(m_env, srcLocal, tag == kAnyTag ? tag : check_app_tag(tag), vcomm, bufSlot);
}
void AppApi::wait(int reqSlot) { m_p.begin_wait(reqSlot); }
void AppApi::collective(Vid vcomm, CollKind kind, int rootLocal, ReduceOp op, Bytes contribution,
                        int bufSlot) {
    m_p.begin_collective(vcomm, kind, rootLocal, op, std::move(contribution), bufSlot);
}
void AppApi::comm_split(Vid vcomm, int color, int key) {
    Bytes contribution;
    put_i32(contribution, color);
    put_i32(contribution, key);
    m_p.begin_collective(vcomm, CollKind::CommSplit, 0, ReduceOp::Sum, std::move(contribution), -1);
}
void AppApi::comm_create(Vid vcomm, const std::vector<WorldRank> &members) {
    Bytes contribution;
    put_u32(contribution, static_cast<std::uint32_t>(members.size()));
    for (WorldRank r : members) {
        put_i32(contribution, r);
    }
    m_p.begin_collective(vcomm, CollKind::CommCreate, 0, ReduceOp::Sum, std::move(contribution), -1);
}
std::uint64_t AppApi::comm_gid(Vid vcomm) const { return m_p.w_comm_gid(vcomm); }
std::vector<WorldRank> AppApi::comm_members(Vid vcomm) const { return m_p.desc_of(vcomm).members; }
int AppApi::comm_size(Vid vcomm) const {
    return static_cast<int>(m_p.desc_of(vcomm).members.size());
}
int AppApi::comm_local_rank(Vid vcomm) const {
    const auto &members = m_p.desc_of(vcomm).members;
    for (std::size_t i = 0; i < members.size(); ++i) {
        if (members[i] == m_p.rank()) {
            return static_cast<int>(i);
        }
    }
    throw SimError(Err::InvalidRank, "calling rank not in communicator");
}
std::vector<WorldRank> AppApi::translate_group_ranks(Vid vcomm) {
    return m_p.w_translate(m_env, vcomm);
}
void AppApi::comm_free(Vid vcomm) { m_p.w_comm_free(m_env, vcomm); }
Vid AppApi::comm_group(Vid vcomm) { return m_p.w_comm_group(m_env, vcomm); }
Vid AppApi::group_incl(Vid vgroup, const std::vector<int> &indices) {
    return m_p.w_group_incl(vgroup, indices);
}
void AppApi::group_free(Vid vgroup) { m_p.w_group_free(vgroup); }

} // namespace manakin
