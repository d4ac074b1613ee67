#include "manakin/coordinator.hpp"

#include "manakin/image.hpp"
#include "manakin/process.hpp"

#include <filesystem>
#include <fstream>

namespace manakin {

Coordinator::Coordinator(EventLog &log, int worldSize) : m_log(&log) {
    m_reports.resize(static_cast<std::size_t>(worldSize));
    for (int i = 0; i < worldSize; ++i) {
        m_reports[static_cast<std::size_t>(i)].rank = i;
    }
}

void Coordinator::set_phase(Phase p) {
    m_phase = p;
    m_log->append(m_now, -1, EvKind::CoordPhase, static_cast<std::int64_t>(p));
}

void Coordinator::request_checkpoint(int round) {
    if (m_phase != Phase::Running) {
        throw SimError(Err::RejectedBusy, "checkpoint round " + std::to_string(m_round) +
                                              " still in progress (phase " +
                                              phase_name(m_phase) + ")");
    }
    m_round = round;
    set_phase(Phase::CkptRequested);
    m_log->append(m_now, -1, EvKind::CoordFlag, 1);
}

void Coordinator::to_draining() {
    if (m_phase != Phase::CkptRequested) {
        throw SimError(Err::ProtocolViolation, "draining only follows ckpt-requested");
    }
    set_phase(Phase::Draining);
}

void Coordinator::to_committed() {
    if (m_phase != Phase::Draining) {
        throw SimError(Err::ProtocolViolation, "committed only follows draining");
    }
    set_phase(Phase::Committed);
}

void Coordinator::to_writing() {
    if (m_phase != Phase::Committed) {
        throw SimError(Err::ProtocolViolation, "writing only follows committed");
    }
    if (!all_safe()) {
        throw SimError(Err::ProtocolViolation, "image write while a process is unsafe");
    }
    set_phase(Phase::Writing);
}

void Coordinator::to_resumed() {
    if (m_phase != Phase::Writing) {
        throw SimError(Err::ProtocolViolation, "resumed only follows writing");
    }
    set_phase(Phase::Resumed);
}

void Coordinator::to_running() {
    if (m_phase != Phase::Resumed) {
        throw SimError(Err::ProtocolViolation, "running only follows resumed");
    }
    set_phase(Phase::Running);
    m_log->append(m_now, -1, EvKind::CoordFlag, 0);
}

void Coordinator::abort_round() {
    set_phase(Phase::Running);
    m_log->append(m_now, -1, EvKind::CoordFlag, 0);
}

void Coordinator::update_report(WorldRank rank, bool inCollective, std::uint64_t gid, bool safe) {
    ProcessReport &r = m_reports.at(static_cast<std::size_t>(rank));
    if (r.inCollective == inCollective && r.gid == gid && r.safe == safe) {
        return;
    }
    r.inCollective = inCollective;
    r.gid = inCollective ? gid : 0;
    r.safe = safe;
    m_log->append(m_now, rank, EvKind::CoordReport, rank, inCollective ? 1 : 0, safe ? 1 : 0);
}

bool Coordinator::all_safe() const {
    for (const auto &r : m_reports) {
        if (!r.safe) {
            return false;
        }
    }
    return true;
}

void Coordinator::set_open_instances(const std::vector<OpenInstance> &open) {
    m_openCounts.clear();
    m_openRealCounts.clear();
    std::map<std::uint64_t, std::vector<WorldRank>> members;
    for (const auto &inst : open) {
        auto it = members.find(inst.gid);
        if (it != members.end() && it->second != inst.members) {
            throw SimError(Err::GidCollision,
                           "two communicators with different membership share gid " +
                               std::to_string(inst.gid));
        }
        members[inst.gid] = inst.members;
        ++m_openCounts[inst.gid];
        if (inst.real) {
            ++m_openRealCounts[inst.gid];
        }
    }
    m_openMembers = std::move(members);
}

bool Coordinator::gid_open(std::uint64_t gid) const {
    return m_openCounts.count(gid) != 0;
}

bool Coordinator::gid_open_real(std::uint64_t gid) const {
    return m_openRealCounts.count(gid) != 0;
}

bool Coordinator::query_gid_open(WorldRank asker, std::uint64_t gid) {
    const bool open = gid_open_real(gid);
    m_log->append(m_now, asker, EvKind::CoordQuery, asker, open ? 1 : 0);
    return open;
}

// ---------------------------------------------------------------------------
// Drain
// ---------------------------------------------------------------------------

namespace {

struct PairExpectation {
    std::uint64_t bytes = 0;
    std::uint64_t msgs = 0;
};

std::uint64_t buffered_bytes_from(const Process &p, WorldRank src) {
    std::uint64_t total = 0;
    for (const auto &b : p.drainedBuffers) {
        if (b.src == src) {
            total += b.payload.size();
        }
    }
    return total;
}

std::uint64_t buffered_msgs_from(const Process &p, WorldRank src) {
    std::uint64_t total = 0;
    for (const auto &b : p.drainedBuffers) {
        if (b.src == src) {
            ++total;
        }
    }
    return total;
}

} // namespace

Coordinator::DrainStats drain_p2p(Coordinator &coord, LowerHalf &lh, std::vector<Process> &procs) {
    if (coord.phase() != Phase::Draining) {
        throw SimError(Err::ProtocolViolation, "drain requires phase draining");
    }
    const int n = static_cast<int>(procs.size());
    for (const auto &p : procs) {
        if (p.in_lower_half()) {
            throw SimError(Err::ProtocolViolation, "drain while a process is in the lower half");
        }
    }

    Coordinator::DrainStats stats;
    WrapperEnv env;
    env.lh = &lh;

    // (1) One alltoall among the processes carrying each sender's per-peer
    // counters. A reserved negative instance index keeps it clear of
    // application collectives.
    const std::int64_t drainInstance = -(static_cast<std::int64_t>(coord.round()) + 1);
    for (int i = 0; i < n; ++i) {
        Bytes row;
        const auto &sentBytes = procs[static_cast<std::size_t>(i)].sentBytes;
        const auto &sentMsgs = procs[static_cast<std::size_t>(i)].sentMsgs;
        for (int j = 0; j < n; ++j) {
            put_u64(row, sentBytes[static_cast<std::size_t>(j)]);
            put_u64(row, sentMsgs[static_cast<std::size_t>(j)]);
        }
        lh.coll_deposit(i, lh.world(), drainInstance, CollKind::Alltoall, 0, ReduceOp::Sum,
                        std::move(row));
    }
    std::vector<std::vector<PairExpectation>> expected(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
        CollResult res = lh.coll_take(j, lh.world(), drainInstance);
        ByteReader rd(res.payload);
        auto &row = expected[static_cast<std::size_t>(j)];
        row.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            row[static_cast<std::size_t>(i)].bytes = rd.read_u64();
            row[static_cast<std::size_t>(i)].msgs = rd.read_u64();
        }
    }

    // (2)-(4) Per-pair pull loop: probe the network first; when the probe
    // sees nothing but counts disagree, the message must be claimed by a
    // posted receive, so test the existing records instead.
    for (int j = 0; j < n; ++j) {
        Process &pj = procs[static_cast<std::size_t>(j)];
        for (int i = 0; i < n; ++i) {
            if (i == j) {
                continue;
            }
            const PairExpectation want = expected[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)];
            for (;;) {
                const std::uint64_t gotBytes =
                    pj.recvBytes[static_cast<std::size_t>(i)] + buffered_bytes_from(pj, i);
                const std::uint64_t gotMsgs =
                    pj.recvMsgs[static_cast<std::size_t>(i)] + buffered_msgs_from(pj, i);
                if (gotBytes == want.bytes && gotMsgs == want.msgs) {
                    break;
                }
                if (gotBytes > want.bytes || gotMsgs > want.msgs) {
                    throw SimError(Err::DrainStuck,
                                   "pair (" + std::to_string(i) + " -> " + std::to_string(j) +
                                       "): received more than sent");
                }
                ++stats.iterations;
                bool progressed = false;
                // Probe across this process's active communicators.
                for (const auto &desc : pj.comms) {
                    auto realIt = pj.commTable.find(desc.vid);
                    if (realIt == pj.commTable.end()) {
                        continue;
                    }
                    if (lh.iprobe(j, i, kAnyTag, realIt->second)) {
                        ReqHandle r = lh.irecv(j, i, kAnyTag, realIt->second);
                        TestResult tr = lh.test(j, r);
                        if (!tr.done || !tr.status) {
                            throw SimError(Err::DrainStuck,
                                           "probed message vanished for pair (" +
                                               std::to_string(i) + " -> " + std::to_string(j) + ")");
                        }
                        DrainedMsg buf;
                        buf.src = tr.status->src;
                        buf.tag = tr.status->tag;
                        buf.commGid = desc.gid;
                        buf.payload = std::move(tr.payload);
                        buf.seq = pj.drainedSeqCounter++;
                        stats.bytesDrained += buf.payload.size();
                        ++stats.messagesBuffered;
                        pj.drainedBuffers.push_back(std::move(buf));
                        progressed = true;
                        break;
                    }
                }
                if (!progressed) {
                    if (pj.drain_test_recv_records(env, i)) {
                        ++stats.recvCompletions;
                        progressed = true;
                    }
                }
                if (!progressed) {
                    throw SimError(Err::DrainStuck,
                                   "no progress for pair (" + std::to_string(i) + " -> " +
                                       std::to_string(j) + "): expected " +
                                       std::to_string(want.bytes) + " bytes / " +
                                       std::to_string(want.msgs) + " msgs, have " +
                                       std::to_string(gotBytes) + " / " + std::to_string(gotMsgs));
                }
            }
        }
    }

    // Cache results of non-blocking collectives whose instance closed before
    // every participant retired its request; the lower half (and the result
    // with it) is about to be discarded.
    for (auto &p : procs) {
        for (auto &rec : p.replayLog) {
            if (rec.completed || rec.hasCachedResult) {
                continue;
            }
            auto it = p.requestTable.find(rec.vreq);
            if (it == p.requestTable.end() || it->second.is_null()) {
                continue;
            }
            TestResult tr = lh.test(p.rank(), it->second);
            if (tr.done) {
                rec.hasCachedResult = true;
                rec.cachedResult = std::move(tr.payload);
            }
        }
    }

    return stats;
}

std::vector<Bytes> build_image_blobs(Coordinator &coord, LowerHalf &lh,
                                     const std::vector<Process> &procs) {
    if (coord.phase() != Phase::Writing) {
        throw SimError(Err::ProtocolViolation, "image write requires phase writing");
    }
    for (const auto &p : procs) {
        if (p.in_lower_half()) {
            throw SimError(Err::ProtocolViolation, "image write while a process is in the lower half");
        }
    }
    std::vector<Bytes> blobs;
    blobs.reserve(procs.size());
    for (const auto &p : procs) {
        blobs.push_back(serialize_image(snapshot_process(p, lh.epoch())));
    }
    return blobs;
}

void write_image_files(const std::string &ckptDir, int round, const std::vector<Bytes> &blobs) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::path(ckptDir) / ("round_" + std::to_string(round));
    fs::create_directories(dir);
    for (std::size_t r = 0; r < blobs.size(); ++r) {
        const fs::path file = dir / ("rank_" + std::to_string(r) + ".img");
        std::ofstream out(file, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw SimError(Err::CheckpointAborted, "cannot open " + file.string());
        }
        out.write(reinterpret_cast<const char *>(blobs[r].data()),
                  static_cast<std::streamsize>(blobs[r].size()));
        if (!out) {
            throw SimError(Err::CheckpointAborted, "short write to " + file.string());
        }
    }
}

} // namespace manakin
