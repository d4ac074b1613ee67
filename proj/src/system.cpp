#include "manakin/system.hpp"

#include "manakin/restart.hpp"

#include <algorithm>
#include <sstream>

namespace manakin {

std::string DeadlockReport::to_string() const {
    std::ostringstream os;
    os << "deadlock at step " << step << ":\n";
    for (const auto &w : waits) {
        os << "  " << w << "\n";
    }
    return os.str();
}

System::System(RunConfig cfg, ProgramFactory factory)
    : m_cfg(cfg), m_factory(std::move(factory)), m_coord(m_logStore, cfg.procs) {
    if (cfg.procs < 1) {
        throw SimError(Err::InvalidConfiguration, "need at least one process");
    }
    m_lh = std::make_unique<LowerHalf>(m_logStore, cfg.procs, 0);
    for (int r = 0; r < cfg.procs; ++r) {
        Process p(r, cfg.procs);
        p.bind_world(*m_lh);
        if (m_factory) {
            p.install_program(m_factory(cfg.procs, r));
        }
        m_procs.push_back(std::move(p));
    }
    m_schedule = std::make_unique<RandomSchedule>(cfg.seed);
    m_blocked.assign(static_cast<std::size_t>(cfg.procs), false);
    m_blockStamp.assign(static_cast<std::size_t>(cfg.procs), 0);
}

System::System(RunConfig cfg, ProgramFactory factory, const std::vector<Bytes> &imageBlobs)
    : m_cfg(cfg), m_factory(std::move(factory)), m_coord(m_logStore, cfg.procs) {
    execute_restart(*this, imageBlobs);
    m_schedule = std::make_unique<RandomSchedule>(cfg.seed);
    m_blocked.assign(static_cast<std::size_t>(m_procs.size()), false);
    m_blockStamp.assign(static_cast<std::size_t>(m_procs.size()), 0);
}

WrapperEnv System::make_env() {
    WrapperEnv env;
    env.lh = m_lh.get();
    env.mode = m_cfg.mode;
    env.gidOpenQuery = [this](WorldRank asker, std::uint64_t gid) {
        return m_coord.query_gid_open(asker, gid);
    };
    return env;
}

bool System::all_finished() const {
    for (const auto &p : m_procs) {
        if (!p.finished()) {
            return false;
        }
    }
    return true;
}

std::vector<Bytes> System::outputs() const {
    std::vector<Bytes> out;
    for (const auto &p : m_procs) {
        out.push_back(p.program() != nullptr ? p.program()->output() : Bytes{});
    }
    return out;
}

void System::request_checkpoint(int round) {
    m_coord.set_now(m_step);
    m_coord.request_checkpoint(round);
    for (auto &p : m_procs) {
        p.set_ckpt_pending(true);
    }
}

void System::resume_after_checkpoint() {
    m_coord.set_now(m_step);
    m_coord.to_resumed();
    for (auto &p : m_procs) {
        p.set_ckpt_pending(false);
        if (p.status() == ProcStatus::AwaitingCkpt) {
            p.set_status(ProcStatus::Running);
        }
    }
    m_coord.to_running();
    sync_coordinator();
}

void System::sync_coordinator() {
    // Engagements end when their instance leaves the rendezvous; rebuild the
    // coordinator's open-gid view and the per-process reports from what is
    // actually live.
    std::vector<Coordinator::OpenInstance> open;
    for (auto &p : m_procs) {
        auto &eng = p.engagements;
        eng.erase(std::remove_if(eng.begin(), eng.end(),
                                 [&](const Process::Engagement &e) {
                                     return e.real && !m_lh->blocking_instance_open(e.gid);
                                 }),
                  eng.end());
        for (const auto &e : eng) {
            open.push_back(Coordinator::OpenInstance{e.gid, e.members, e.real});
        }
    }
    m_coord.set_open_instances(open);

    for (auto &p : m_procs) {
        const bool safe = p.status() == ProcStatus::AwaitingCkpt || p.finished();
        const bool inColl = !p.engagements.empty();
        const std::uint64_t gid = inColl ? p.engagements.front().gid : 0;
        m_coord.update_report(p.rank(), inColl, gid, safe);
    }

    // A newly opened instance (real or emulated) may need members that
    // already parked.
    std::vector<std::uint64_t> nowOpen;
    for (const auto &inst : open) {
        nowOpen.push_back(inst.gid);
    }
    std::sort(nowOpen.begin(), nowOpen.end());
    nowOpen.erase(std::unique(nowOpen.begin(), nowOpen.end()), nowOpen.end());
    std::vector<std::uint64_t> fresh;
    for (std::uint64_t g : nowOpen) {
        if (!std::binary_search(m_lastOpenGids.begin(), m_lastOpenGids.end(), g)) {
            fresh.push_back(g);
        }
    }
    if (!fresh.empty()) {
        wake_for_open_gids(fresh);
    }
    m_lastOpenGids = std::move(nowOpen);
}

void System::wake_for_open_gids(const std::vector<std::uint64_t> &newlyOpen) {
    for (auto &p : m_procs) {
        if (p.status() != ProcStatus::AwaitingCkpt) {
            continue;
        }
        for (const auto &d : p.comms) {
            if (std::find(newlyOpen.begin(), newlyOpen.end(), d.gid) != newlyOpen.end()) {
                p.set_status(ProcStatus::Running);
                m_blocked[static_cast<std::size_t>(p.rank())] = false;
                break;
            }
        }
    }
}

bool System::single_step() {
    m_lh->set_now(m_step);
    m_coord.set_now(m_step);

    std::vector<std::size_t> runnable;
    for (std::size_t i = 0; i < m_procs.size(); ++i) {
        if (m_procs[i].status() != ProcStatus::Running) {
            continue;
        }
        if (m_blocked[i] && m_logStore.size() <= m_blockStamp[i]) {
            continue;
        }
        runnable.push_back(i);
    }
    if (runnable.empty()) {
        return false;
    }

    const std::size_t pick = runnable[m_schedule->pick(runnable.size())];
    Process &p = m_procs[pick];

    const bool pending = p.ckpt_pending();
    bool progressed = false;
    if (pending && p.status() == ProcStatus::Running && !p.in_lower_half() &&
        p.may_park([this](std::uint64_t gid) { return m_coord.gid_open(gid); })) {
        p.set_status(ProcStatus::AwaitingCkpt);
        progressed = true;
    } else {
        WrapperEnv env = make_env();
        progressed = p.step(env);
    }

    if (progressed) {
        m_blocked[pick] = false;
    } else {
        m_blocked[pick] = true;
        m_blockStamp[pick] = m_logStore.size();
    }

    sync_coordinator();
    ++m_step;
    ++m_metrics.steps;
    return true;
}

bool System::checkpoint_safe_now() const {
    if (m_coord.phase() != Phase::CkptRequested) {
        return false;
    }
    for (const auto &p : m_procs) {
        if (p.status() == ProcStatus::Running) {
            return false;
        }
    }
    return !m_coord.any_open();
}

std::vector<Bytes> System::complete_checkpoint_round() {
    m_coord.to_draining();
    auto stats = drain_p2p(m_coord, *m_lh, m_procs);
    m_metrics.drainIterations += stats.iterations;
    m_metrics.drainBytes += stats.bytesDrained;
    m_metrics.drainBuffered += stats.messagesBuffered;
    ++m_metrics.checkpointRounds;
    check_drain_invariants();
    m_coord.to_committed();
    m_coord.to_writing();
    std::vector<Bytes> blobs;
    try {
        blobs = build_image_blobs(m_coord, *m_lh, m_procs);
    } catch (const SimError &e) {
        m_coord.abort_round();
        throw SimError(Err::CheckpointAborted, e.what());
    }
    if (!m_cfg.ckptDir.empty()) {
        write_image_files(m_cfg.ckptDir, m_coord.round(), blobs);
    }
    return blobs;
}

RunResult System::run(std::uint64_t stepLimit, const std::function<void(System &)> &afterStep) {
    for (;;) {
        if (checkpoint_safe_now()) {
            RunResult r;
            r.what = RunResult::What::Checkpoint;
            r.imageBlobs = complete_checkpoint_round();
            return r;
        }
        if (all_finished()) {
            RunResult r;
            r.what = RunResult::What::Finished;
            return r;
        }
        if (m_step >= stepLimit) {
            RunResult r;
            r.what = RunResult::What::StepLimit;
            return r;
        }
        if (!single_step()) {
            RunResult r;
            r.what = RunResult::What::Deadlock;
            r.deadlock.step = m_step;
            for (const auto &p : m_procs) {
                if (!p.finished()) {
                    r.deadlock.waits.push_back("rank " + std::to_string(p.rank()) + ": " +
                                               (p.status() == ProcStatus::AwaitingCkpt
                                                    ? "parked for checkpoint"
                                                    : p.wait_description()));
                }
            }
            return r;
        }
        if (afterStep) {
            afterStep(*this);
        }
    }
}

void System::check_drain_invariants() const {
    if (!m_lh->network_empty()) {
        throw SimError(Err::ProtocolViolation,
                       "network not empty after drain: " +
                           std::to_string(m_lh->inflight_message_count()) + " messages");
    }
    const int n = static_cast<int>(m_procs.size());
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const std::uint64_t sent = m_procs[static_cast<std::size_t>(i)]
                                           .sentBytes[static_cast<std::size_t>(j)];
            std::uint64_t got =
                m_procs[static_cast<std::size_t>(j)].recvBytes[static_cast<std::size_t>(i)];
            for (const auto &b : m_procs[static_cast<std::size_t>(j)].drainedBuffers) {
                if (b.src == i) {
                    got += b.payload.size();
                }
            }
            if (sent != got) {
                throw SimError(Err::ProtocolViolation,
                               "pair (" + std::to_string(i) + " -> " + std::to_string(j) +
                                   ") unbalanced after drain: sent " + std::to_string(sent) +
                                   ", received+buffered " + std::to_string(got));
            }
        }
    }
}

void System::check_conservation() const {
    const int n = static_cast<int>(m_procs.size());
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const std::uint64_t sent = m_procs[static_cast<std::size_t>(i)]
                                           .sentBytes[static_cast<std::size_t>(j)];
            std::uint64_t accounted =
                m_procs[static_cast<std::size_t>(j)].recvBytes[static_cast<std::size_t>(i)] +
                m_lh->inflight_bytes(i, j);
            for (const auto &b : m_procs[static_cast<std::size_t>(j)].drainedBuffers) {
                if (b.src == i) {
                    accounted += b.payload.size();
                }
            }
            if (sent != accounted) {
                throw SimError(Err::ProtocolViolation,
                               "conservation violated for (" + std::to_string(i) + " -> " +
                                   std::to_string(j) + "): sent " + std::to_string(sent) +
                                   ", accounted " + std::to_string(accounted));
            }
        }
    }
}

} // namespace manakin
