#include "manakin/image.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>

namespace manakin {

namespace {

void put_status(Bytes &out, bool has, const Status &s) {
    out.push_back(has ? 1 : 0);
    put_i32(out, s.src);
    put_i32(out, s.tag);
    put_u64(out, s.bytes);
}

std::pair<bool, Status> read_status(ByteReader &rd) {
    const bool has = rd.read_u8() != 0;
    Status s;
    s.src = rd.read_i32();
    s.tag = rd.read_i32();
    s.bytes = rd.read_u64();
    return {has, s};
}

Bytes encode_vtables(const VtableSnapshot &v) {
    Bytes out;
    put_i64(out, v.nextCommVid);
    put_i64(out, v.nextGroupVid);
    put_i64(out, v.nextReqVid);
    put_u32(out, static_cast<std::uint32_t>(v.commVids.size()));
    for (Vid x : v.commVids) {
        put_i64(out, x);
    }
    put_u32(out, static_cast<std::uint32_t>(v.groupVids.size()));
    for (Vid x : v.groupVids) {
        put_i64(out, x);
    }
    put_u32(out, static_cast<std::uint32_t>(v.requests.size()));
    for (const auto &[vid, isNull] : v.requests) {
        put_i64(out, vid);
        out.push_back(isNull ? 1 : 0);
    }
    return out;
}

VtableSnapshot decode_vtables(ByteReader &rd) {
    VtableSnapshot v;
    v.nextCommVid = rd.read_i64();
    v.nextGroupVid = rd.read_i64();
    v.nextReqVid = rd.read_i64();
    const std::uint32_t nc = rd.read_u32();
    for (std::uint32_t i = 0; i < nc; ++i) {
        v.commVids.push_back(rd.read_i64());
    }
    const std::uint32_t ng = rd.read_u32();
    for (std::uint32_t i = 0; i < ng; ++i) {
        v.groupVids.push_back(rd.read_i64());
    }
    const std::uint32_t nr = rd.read_u32();
    for (std::uint32_t i = 0; i < nr; ++i) {
        const Vid vid = rd.read_i64();
        const bool isNull = rd.read_u8() != 0;
        v.requests.push_back({vid, isNull});
    }
    return v;
}

Bytes encode_counters(const CounterRows &c) {
    Bytes out;
    put_u32(out, static_cast<std::uint32_t>(c.sentBytes.size()));
    for (const auto *row : {&c.sentBytes, &c.sentMsgs, &c.recvBytes, &c.recvMsgs}) {
        for (std::uint64_t x : *row) {
            put_u64(out, x);
        }
    }
    return out;
}

CounterRows decode_counters(ByteReader &rd) {
    CounterRows c;
    const std::uint32_t n = rd.read_u32();
    for (auto *row : {&c.sentBytes, &c.sentMsgs, &c.recvBytes, &c.recvMsgs}) {
        row->resize(n);
        for (std::uint32_t i = 0; i < n; ++i) {
            (*row)[i] = rd.read_u64();
        }
    }
    return c;
}

Bytes encode_p2p(const std::vector<P2PRecord> &list) {
    Bytes out;
    put_u32(out, static_cast<std::uint32_t>(list.size()));
    for (const auto &r : list) {
        put_i64(out, r.vreq);
        out.push_back(static_cast<std::uint8_t>(r.dir));
        put_i32(out, r.peer);
        put_i32(out, r.tag);
        put_i64(out, r.vcomm);
        put_u64(out, r.bytes);
        put_i32(out, r.bufSlot);
        put_bytes(out, r.payload);
        out.push_back(r.completed ? 1 : 0);
        put_status(out, r.hasStatus, r.status);
    }
    return out;
}

std::vector<P2PRecord> decode_p2p(ByteReader &rd) {
    std::vector<P2PRecord> list;
    const std::uint32_t n = rd.read_u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        P2PRecord r;
        r.vreq = rd.read_i64();
        r.dir = static_cast<Dir>(rd.read_u8());
        r.peer = rd.read_i32();
        r.tag = rd.read_i32();
        r.vcomm = rd.read_i64();
        r.bytes = rd.read_u64();
        r.bufSlot = rd.read_i32();
        r.payload = rd.read_bytes();
        r.completed = rd.read_u8() != 0;
        auto [has, st] = read_status(rd);
        r.hasStatus = has;
        r.status = st;
        list.push_back(std::move(r));
    }
    return list;
}

Bytes encode_replay(const std::vector<ReplayRecord> &list) {
    Bytes out;
    put_u32(out, static_cast<std::uint32_t>(list.size()));
    for (const auto &r : list) {
        put_i64(out, r.vreq);
        out.push_back(static_cast<std::uint8_t>(r.kind));
        put_i64(out, r.vcomm);
        put_i32(out, r.rootLocal);
        out.push_back(static_cast<std::uint8_t>(r.op));
        put_i64(out, r.instance);
        put_bytes(out, r.contribution);
        put_i32(out, r.resultBufSlot);
        out.push_back(r.hasCachedResult ? 1 : 0);
        put_bytes(out, r.cachedResult);
    }
    return out;
}

std::vector<ReplayRecord> decode_replay(ByteReader &rd) {
    std::vector<ReplayRecord> list;
    const std::uint32_t n = rd.read_u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        ReplayRecord r;
        r.vreq = rd.read_i64();
        r.kind = static_cast<CollKind>(rd.read_u8());
        r.vcomm = rd.read_i64();
        r.rootLocal = rd.read_i32();
        r.op = static_cast<ReduceOp>(rd.read_u8());
        r.instance = rd.read_i64();
        r.contribution = rd.read_bytes();
        r.resultBufSlot = rd.read_i32();
        r.hasCachedResult = rd.read_u8() != 0;
        r.cachedResult = rd.read_bytes();
        list.push_back(std::move(r));
    }
    return list;
}

Bytes encode_comms(const std::vector<CommDesc> &comms, const std::vector<GroupDesc> &groups) {
    Bytes out;
    put_u32(out, static_cast<std::uint32_t>(comms.size()));
    for (const auto &c : comms) {
        put_i64(out, c.vid);
        put_u32(out, static_cast<std::uint32_t>(c.members.size()));
        for (WorldRank r : c.members) {
            put_i32(out, r);
        }
        put_u64(out, c.gid);
        put_i64(out, c.collIndex);
        put_u64(out, c.birth);
    }
    put_u32(out, static_cast<std::uint32_t>(groups.size()));
    for (const auto &g : groups) {
        put_i64(out, g.vid);
        put_u32(out, static_cast<std::uint32_t>(g.members.size()));
        for (WorldRank r : g.members) {
            put_i32(out, r);
        }
        put_u64(out, g.gid);
    }
    return out;
}

void decode_comms(ByteReader &rd, std::vector<CommDesc> &comms, std::vector<GroupDesc> &groups) {
    const std::uint32_t nc = rd.read_u32();
    for (std::uint32_t i = 0; i < nc; ++i) {
        CommDesc c;
        c.vid = rd.read_i64();
        const std::uint32_t m = rd.read_u32();
        for (std::uint32_t k = 0; k < m; ++k) {
            c.members.push_back(rd.read_i32());
        }
        c.gid = rd.read_u64();
        c.collIndex = rd.read_i64();
        c.birth = rd.read_u64();
        comms.push_back(std::move(c));
    }
    const std::uint32_t ng = rd.read_u32();
    for (std::uint32_t i = 0; i < ng; ++i) {
        GroupDesc g;
        g.vid = rd.read_i64();
        const std::uint32_t m = rd.read_u32();
        for (std::uint32_t k = 0; k < m; ++k) {
            g.members.push_back(rd.read_i32());
        }
        g.gid = rd.read_u64();
        groups.push_back(std::move(g));
    }
}

Bytes encode_buffers(const std::vector<DrainedMsg> &buffers) {
    Bytes out;
    put_u32(out, static_cast<std::uint32_t>(buffers.size()));
    for (const auto &b : buffers) {
        put_i32(out, b.src);
        put_i32(out, b.tag);
        put_u64(out, b.commGid);
        put_bytes(out, b.payload);
        put_u64(out, b.seq);
    }
    return out;
}

std::vector<DrainedMsg> decode_buffers(ByteReader &rd) {
    std::vector<DrainedMsg> buffers;
    const std::uint32_t n = rd.read_u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        DrainedMsg b;
        b.src = rd.read_i32();
        b.tag = rd.read_i32();
        b.commGid = rd.read_u64();
        b.payload = rd.read_bytes();
        b.seq = rd.read_u64();
        buffers.push_back(std::move(b));
    }
    return buffers;
}

} // namespace

Bytes serialize_image(const ProcessImage &img) {
    Bytes out;
    out.insert(out.end(), kImageMagic, kImageMagic + 8);
    put_u32(out, img.version);
    put_u32(out, img.epoch);
    put_u32(out, img.worldSize);
    put_u32(out, img.rank);

    const Bytes sections[7] = {
        img.appState,
        encode_vtables(img.vtables),
        encode_counters(img.counters),
        encode_p2p(img.p2pList),
        encode_replay(img.replayLog),
        encode_comms(img.comms, img.groups),
        encode_buffers(img.buffers),
    };
    for (const Bytes &s : sections) {
        put_bytes(out, s);
    }
    put_u32(out, crc32(out));
    return out;
}

ProcessImage parse_image(std::span<const std::uint8_t> data) {
    if (data.size() < 8 + 16 + 7 * 8 + 4) {
        throw SimError(Err::CorruptImage, "image shorter than any valid layout");
    }
    if (std::memcmp(data.data(), kImageMagic, 8) != 0) {
        throw SimError(Err::CorruptImage, "bad magic");
    }
    const std::size_t bodyLen = data.size() - 4;
    std::uint32_t storedCrc = 0;
    for (int i = 0; i < 4; ++i) {
        storedCrc |= static_cast<std::uint32_t>(data[bodyLen + static_cast<std::size_t>(i)])
                     << (8 * i);
    }
    if (crc32(data.subspan(0, bodyLen)) != storedCrc) {
        throw SimError(Err::CorruptImage, "CRC mismatch");
    }

    try {
        ByteReader rd(data.subspan(8, bodyLen - 8));
        ProcessImage img;
        img.version = rd.read_u32();
        if (img.version != kImageVersion) {
            throw SimError(Err::IncompatibleImage,
                           "format version " + std::to_string(img.version));
        }
        img.epoch = rd.read_u32();
        img.worldSize = rd.read_u32();
        img.rank = rd.read_u32();

        img.appState = rd.read_bytes();
        // Remaining six sections, each length-prefixed.
        Bytes vt = rd.read_bytes();
        Bytes ct = rd.read_bytes();
        Bytes pp = rd.read_bytes();
        Bytes rp = rd.read_bytes();
        Bytes cm = rd.read_bytes();
        Bytes bf = rd.read_bytes();
        if (!rd.at_end()) {
            throw SimError(Err::CorruptImage, "trailing bytes after sections");
        }
        {
            ByteReader s(vt);
            img.vtables = decode_vtables(s);
            if (!s.at_end()) {
                throw SimError(Err::CorruptImage, "vtables section overlong");
            }
        }
        {
            ByteReader s(ct);
            img.counters = decode_counters(s);
            if (!s.at_end()) {
                throw SimError(Err::CorruptImage, "counters section overlong");
            }
        }
        {
            ByteReader s(pp);
            img.p2pList = decode_p2p(s);
            if (!s.at_end()) {
                throw SimError(Err::CorruptImage, "p2p-list section overlong");
            }
        }
        {
            ByteReader s(rp);
            img.replayLog = decode_replay(s);
            if (!s.at_end()) {
                throw SimError(Err::CorruptImage, "replay-log section overlong");
            }
        }
        {
            ByteReader s(cm);
            decode_comms(s, img.comms, img.groups);
            if (!s.at_end()) {
                throw SimError(Err::CorruptImage, "active-comms section overlong");
            }
        }
        {
            ByteReader s(bf);
            img.buffers = decode_buffers(s);
            if (!s.at_end()) {
                throw SimError(Err::CorruptImage, "drained-buffers section overlong");
            }
        }
        return img;
    } catch (const std::out_of_range &) {
        throw SimError(Err::CorruptImage, "truncated section");
    }
}

std::string describe_image(std::span<const std::uint8_t> data) {
    ProcessImage img = parse_image(data);
    std::ostringstream os;
    os << "magic MANAKIN1, version " << img.version << ", epoch " << img.epoch << ", world "
       << img.worldSize << ", rank " << img.rank << "\n";
    os << "  app-state: " << img.appState.size() << " bytes\n";
    os << "  vtables: " << img.vtables.commVids.size() << " comms, "
       << img.vtables.groupVids.size() << " groups, " << img.vtables.requests.size()
       << " requests\n";
    os << "  counters: " << img.counters.sentBytes.size() << " peers\n";
    os << "  p2p-list: " << img.p2pList.size() << " records\n";
    os << "  replay-log: " << img.replayLog.size() << " uncompleted entries\n";
    os << "  active-comms: " << img.comms.size() << " comms, " << img.groups.size()
       << " groups\n";
    os << "  drained-buffers: " << img.buffers.size() << " messages\n";
    os << "  CRC OK\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Exec state (app-state section payload)
// ---------------------------------------------------------------------------

namespace {

Bytes encode_activation(const Activation &a) {
    Bytes out;
    out.push_back(static_cast<std::uint8_t>(a.kind));
    put_i64(out, a.vreq);
    put_i32(out, a.reqSlot);
    put_i32(out, a.bufSlot);
    put_i64(out, a.vcomm);
    out.push_back(static_cast<std::uint8_t>(a.collKind));
    put_i32(out, a.rootLocal);
    out.push_back(static_cast<std::uint8_t>(a.op));
    put_bytes(out, a.contribution);
    put_i64(out, a.instance);
    out.push_back(static_cast<std::uint8_t>(a.path));
    out.push_back(a.emu.phase);
    put_u32(out, static_cast<std::uint32_t>(a.emu.reqs.size()));
    for (Vid v : a.emu.reqs) {
        put_i64(out, v);
    }
    put_u32(out, static_cast<std::uint32_t>(a.emu.gathered.size()));
    for (std::size_t i = 0; i < a.emu.gathered.size(); ++i) {
        out.push_back(a.emu.gatheredPresent[i]);
        put_bytes(out, a.emu.gathered[i]);
    }
    put_bytes(out, a.emu.result);
    return out;
}

Activation decode_activation(ByteReader &rd) {
    Activation a;
    a.kind = static_cast<ActKind>(rd.read_u8());
    a.vreq = rd.read_i64();
    a.reqSlot = rd.read_i32();
    a.bufSlot = rd.read_i32();
    a.vcomm = rd.read_i64();
    a.collKind = static_cast<CollKind>(rd.read_u8());
    a.rootLocal = rd.read_i32();
    a.op = static_cast<ReduceOp>(rd.read_u8());
    a.contribution = rd.read_bytes();
    a.instance = rd.read_i64();
    a.path = static_cast<CollPath>(rd.read_u8());
    a.emu.phase = rd.read_u8();
    const std::uint32_t nr = rd.read_u32();
    for (std::uint32_t i = 0; i < nr; ++i) {
        a.emu.reqs.push_back(rd.read_i64());
    }
    const std::uint32_t ng = rd.read_u32();
    for (std::uint32_t i = 0; i < ng; ++i) {
        a.emu.gatheredPresent.push_back(rd.read_u8());
        a.emu.gathered.push_back(rd.read_bytes());
    }
    a.emu.result = rd.read_bytes();
    return a;
}

} // namespace

Bytes serialize_exec_state(const ExecState &s) {
    Bytes out;
    put_bytes(out, s.programState);
    put_u32(out, static_cast<std::uint32_t>(s.memory.reqSlots.size()));
    for (Vid v : s.memory.reqSlots) {
        put_i64(out, v);
    }
    put_u32(out, static_cast<std::uint32_t>(s.memory.buffers.size()));
    for (const Bytes &b : s.memory.buffers) {
        put_bytes(out, b);
    }
    put_status(out, s.memory.lastHasStatus, s.memory.lastStatus);
    put_i64(out, s.memory.lastVid);
    Bytes act = encode_activation(s.act);
    put_bytes(out, act);
    out.push_back(s.finished ? 1 : 0);
    put_u64(out, s.drainedSeqCounter);
    return out;
}

ExecState parse_exec_state(std::span<const std::uint8_t> data) {
    try {
        ByteReader rd(data);
        ExecState s;
        s.programState = rd.read_bytes();
        const std::uint32_t nslots = rd.read_u32();
        for (std::uint32_t i = 0; i < nslots; ++i) {
            s.memory.reqSlots.push_back(rd.read_i64());
        }
        const std::uint32_t nbufs = rd.read_u32();
        for (std::uint32_t i = 0; i < nbufs; ++i) {
            s.memory.buffers.push_back(rd.read_bytes());
        }
        auto [has, st] = read_status(rd);
        s.memory.lastHasStatus = has;
        s.memory.lastStatus = st;
        s.memory.lastVid = rd.read_i64();
        Bytes act = rd.read_bytes();
        ByteReader ar(act);
        s.act = decode_activation(ar);
        s.finished = rd.read_u8() != 0;
        s.drainedSeqCounter = rd.read_u64();
        if (!rd.at_end()) {
            throw SimError(Err::CorruptImage, "app-state overlong");
        }
        return s;
    } catch (const std::out_of_range &) {
        throw SimError(Err::CorruptImage, "truncated app-state");
    }
}

// ---------------------------------------------------------------------------
// Live process <-> image
// ---------------------------------------------------------------------------

ProcessImage snapshot_process(const Process &p, int epoch) {
    ProcessImage img;
    img.epoch = static_cast<std::uint32_t>(epoch);
    img.worldSize = static_cast<std::uint32_t>(p.world_size());
    img.rank = static_cast<std::uint32_t>(p.rank());

    ExecState exec;
    if (p.program() != nullptr) {
        p.program()->save(exec.programState);
    }
    exec.memory = p.mem;
    exec.act = p.activation();
    exec.finished = p.finished();
    exec.drainedSeqCounter = p.drainedSeqCounter;
    img.appState = serialize_exec_state(exec);

    img.vtables.nextCommVid = p.nextCommVid;
    img.vtables.nextGroupVid = p.nextGroupVid;
    img.vtables.nextReqVid = p.nextReqVid;
    for (const auto &d : p.comms) {
        img.vtables.commVids.push_back(d.vid);
    }
    std::sort(img.vtables.commVids.begin(), img.vtables.commVids.end());
    for (const auto &g : p.groups) {
        img.vtables.groupVids.push_back(g.vid);
    }
    std::sort(img.vtables.groupVids.begin(), img.vtables.groupVids.end());
    {
        std::vector<std::pair<Vid, bool>> reqs;
        for (const auto &[vid, real] : p.requestTable) {
            reqs.push_back({vid, real.is_null()});
        }
        std::sort(reqs.begin(), reqs.end());
        img.vtables.requests = std::move(reqs);
    }

    img.counters.sentBytes = p.sentBytes;
    img.counters.sentMsgs = p.sentMsgs;
    img.counters.recvBytes = p.recvBytes;
    img.counters.recvMsgs = p.recvMsgs;

    img.p2pList = p.p2pList;
    for (const auto &r : p.replayLog) {
        if (!r.completed) {
            img.replayLog.push_back(r);
        }
    }
    img.comms = p.comms;
    img.groups = p.groups;
    img.buffers = p.drainedBuffers;
    return img;
}

void restore_process_state(Process &p, const ProcessImage &img) {
    ExecState exec = parse_exec_state(img.appState);
    p.mem = exec.memory;
    p.set_activation(exec.act);
    p.set_status(exec.finished ? ProcStatus::Finished : ProcStatus::Running);
    p.drainedSeqCounter = exec.drainedSeqCounter;
    if (p.program() != nullptr && !exec.programState.empty()) {
        ByteReader rd(exec.programState);
        p.program()->load(rd);
    }

    p.nextCommVid = img.vtables.nextCommVid;
    p.nextGroupVid = img.vtables.nextGroupVid;
    p.nextReqVid = img.vtables.nextReqVid;
    p.comms = img.comms;
    p.groups = img.groups;
    p.p2pList = img.p2pList;
    p.replayLog = img.replayLog;
    p.drainedBuffers = img.buffers;
    p.sentBytes = img.counters.sentBytes;
    p.sentMsgs = img.counters.sentMsgs;
    p.recvBytes = img.counters.recvBytes;
    p.recvMsgs = img.counters.recvMsgs;

    // Tables are rebuilt with placeholder null entries; the restart engine
    // rebinds every virtual id to an epoch-current real handle.
    p.commTable.clear();
    p.groupTable.clear();
    p.requestTable.clear();
    for (const auto &[vid, isNull] : img.vtables.requests) {
        p.requestTable[vid] = ReqHandle::null();
        (void)isNull;
    }
}

} // namespace manakin
