#include "manakin/workloads.hpp"

#include <algorithm>

namespace manakin {

Bytes ring_payload(WorldRank src, std::uint64_t round, std::uint64_t msgBytes) {
    Bytes out(msgBytes);
    for (std::uint64_t i = 0; i < msgBytes; ++i) {
        out[i] = static_cast<std::uint8_t>((static_cast<std::uint64_t>(src) * 31 + round * 7 + i) &
                                           0xFF);
    }
    return out;
}

int ring_tag(std::uint64_t round) {
    return static_cast<int>(round % 5);
}

namespace {

Bytes u64_payload(std::uint64_t v) {
    Bytes b;
    put_u64(b, v);
    return b;
}

// ---------------------------------------------------------------------------
// p2p-ring: each rank sends to (rank+1) mod N and receives from (rank-1)
// mod N each round, alternating blocking and non-blocking variants, folding
// every received payload into a running checksum.
// ---------------------------------------------------------------------------
class RingProgram final : public Program {
public:
    RingProgram(int n, WorldRank rank, std::uint64_t rounds, std::uint64_t msgBytes)
        : m_n(n), m_rank(rank), m_rounds(rounds), m_msgBytes(msgBytes) {
        if (n < 2) {
            throw SimError(Err::InvalidConfiguration, "p2p-ring needs at least 2 processes");
        }
    }

    void step(AppApi &api) override {
        const int next = (m_rank + 1) % m_n;
        const int prev = (m_rank - 1 + m_n) % m_n;
        switch (m_pc) {
        case 0:
            if (m_round >= m_rounds) {
                m_fin = true;
                return;
            }
            if (m_round % 2 == 0) {
                api.send(next, ring_tag(m_round), api.world_comm(),
                         ring_payload(m_rank, m_round, m_msgBytes));
                m_pc = 1;
            } else {
                api.mem().slot(0) = api.isend(next, ring_tag(m_round), api.world_comm(),
                                              ring_payload(m_rank, m_round, m_msgBytes));
                api.mem().slot(1) = api.irecv(prev, ring_tag(m_round), api.world_comm(), 0);
                m_pc = 3;
            }
            return;
        case 1:
            api.recv(prev, ring_tag(m_round), api.world_comm(), 0);
            m_pc = 2;
            return;
        case 2:
            fold(api.mem().buffer(0));
            ++m_round;
            m_pc = 0;
            return;
        case 3:
            api.wait(1);
            m_pc = 4;
            return;
        case 4:
            api.wait(0);
            m_pc = 5;
            return;
        case 5:
            fold(api.mem().buffer(0));
            ++m_round;
            m_pc = 0;
            return;
        default:
            m_fin = true;
            return;
        }
    }

    bool finished() const override { return m_fin; }
    Bytes output() const override { return u64_payload(m_checksum); }

    void save(Bytes &out) const override {
        put_u64(out, m_pc);
        put_u64(out, m_round);
        put_u64(out, m_checksum);
        out.push_back(m_fin ? 1 : 0);
    }
    void load(ByteReader &in) override {
        m_pc = in.read_u64();
        m_round = in.read_u64();
        m_checksum = in.read_u64();
        m_fin = in.read_u8() != 0;
    }

private:
    void fold(const Bytes &b) { m_checksum = fnv1a64(b, m_checksum); }

    int m_n;
    WorldRank m_rank;
    std::uint64_t m_rounds;
    std::uint64_t m_msgBytes;
    std::uint64_t m_pc = 0;
    std::uint64_t m_round = 0;
    std::uint64_t m_checksum = 0xcbf29ce484222325ULL;
    bool m_fin = false;
};

// ---------------------------------------------------------------------------
// collective-storm: allreduce + rotating-root bcast + alltoall every round,
// one non-blocking collective held open across the round, a comm-split every
// splitEvery rounds with the previous subcommunicator freed.
// ---------------------------------------------------------------------------
class StormProgram final : public Program {
public:
    StormProgram(int n, WorldRank rank, std::uint64_t rounds, std::uint64_t splitEvery)
        : m_n(n), m_rank(rank), m_rounds(rounds), m_splitEvery(splitEvery) {
        if (n < 2) {
            throw SimError(Err::InvalidConfiguration, "collective-storm needs at least 2 processes");
        }
    }

    void step(AppApi &api) override {
        switch (m_pc) {
        case 0:
            if (m_round >= m_rounds) {
                m_fin = true;
                return;
            }
            if (m_round % 3 == 0) {
                const int root = static_cast<int>(m_round) % m_n;
                Bytes contribution;
                if (m_rank == root) {
                    contribution = u64_payload(0x1B000000 + m_round);
                }
                api.mem().slot(2) = api.icollective(api.world_comm(), CollKind::Bcast, root,
                                                    ReduceOp::Sum, std::move(contribution), 4);
                m_nbIsBcast = true;
            } else {
                api.mem().slot(2) = api.icollective(api.world_comm(), CollKind::Barrier, 0,
                                                    ReduceOp::Sum, {}, -1);
                m_nbIsBcast = false;
            }
            m_pc = 1;
            return;
        case 1:
            api.collective(api.world_comm(), CollKind::Allreduce, 0, ReduceOp::Sum,
                           u64_payload(static_cast<std::uint64_t>(m_rank) + m_round), 0);
            m_pc = 2;
            return;
        case 2:
            fold(api.mem().buffer(0));
            {
                const int root = static_cast<int>(m_round) % m_n;
                Bytes contribution;
                if (m_rank == root) {
                    contribution = u64_payload(0xB0057 + m_round * 13);
                }
                api.collective(api.world_comm(), CollKind::Bcast, root, ReduceOp::Sum,
                               std::move(contribution), 1);
            }
            m_pc = 3;
            return;
        case 3:
            fold(api.mem().buffer(1));
            {
                Bytes contribution;
                for (int j = 0; j < m_n; ++j) {
                    put_u64(contribution, static_cast<std::uint64_t>(m_rank) * 1000 +
                                              static_cast<std::uint64_t>(j) + m_round);
                }
                api.collective(api.world_comm(), CollKind::Alltoall, 0, ReduceOp::Sum,
                               std::move(contribution), 2);
            }
            m_pc = 4;
            return;
        case 4:
            fold(api.mem().buffer(2));
            if (m_splitEvery != 0 && m_round % m_splitEvery == m_splitEvery - 1) {
                api.comm_split(api.world_comm(), m_rank % 2, m_rank);
                m_pc = 5;
            } else {
                m_pc = 7;
            }
            return;
        case 5: {
            const Vid fresh = api.mem().lastVid;
            if (m_sub != kNullVid) {
                api.comm_free(m_sub);
            }
            m_sub = fresh;
            m_pc = 6;
            return;
        }
        case 6:
            api.collective(m_sub, CollKind::Allreduce, 0, ReduceOp::Max,
                           u64_payload(static_cast<std::uint64_t>(m_rank) * 3 + m_round), 3);
            m_pc = 8;
            return;
        case 8:
            fold(api.mem().buffer(3));
            m_pc = 7;
            return;
        case 7:
            api.wait(2); // the round's non-blocking collective
            m_pc = 9;
            return;
        case 9:
            if (m_nbIsBcast) {
                fold(api.mem().buffer(4));
            }
            ++m_round;
            m_pc = 0;
            return;
        default:
            m_fin = true;
            return;
        }
    }

    bool finished() const override { return m_fin; }
    Bytes output() const override { return u64_payload(m_digest); }

    void save(Bytes &out) const override {
        put_u64(out, m_pc);
        put_u64(out, m_round);
        put_u64(out, m_digest);
        put_i64(out, m_sub);
        out.push_back(m_nbIsBcast ? 1 : 0);
        out.push_back(m_fin ? 1 : 0);
    }
    void load(ByteReader &in) override {
        m_pc = in.read_u64();
        m_round = in.read_u64();
        m_digest = in.read_u64();
        m_sub = in.read_i64();
        m_nbIsBcast = in.read_u8() != 0;
        m_fin = in.read_u8() != 0;
    }

private:
    void fold(const Bytes &b) { m_digest = fnv1a64(b, m_digest); }

    int m_n;
    WorldRank m_rank;
    std::uint64_t m_rounds;
    std::uint64_t m_splitEvery;
    std::uint64_t m_pc = 0;
    std::uint64_t m_round = 0;
    std::uint64_t m_digest = 0xcbf29ce484222325ULL;
    Vid m_sub = kNullVid;
    bool m_nbIsBcast = false;
    bool m_fin = false;
};

// ---------------------------------------------------------------------------
// bcast-deadlock: rank 0 broadcasts as root and then sends; rank 1 receives
// and then joins the broadcast. Natively fine (the root does not block); an
// inserted barrier before the broadcast creates a cycle.
// ---------------------------------------------------------------------------
class BcastDeadlockProgram final : public Program {
public:
    BcastDeadlockProgram(int n, WorldRank rank) : m_rank(rank) {
        if (n != 2) {
            throw SimError(Err::InvalidConfiguration, "bcast-deadlock runs on exactly 2 processes");
        }
    }

    void step(AppApi &api) override {
        if (m_rank == 0) {
            switch (m_pc) {
            case 0:
                api.collective(api.world_comm(), CollKind::Bcast, 0, ReduceOp::Sum,
                               u64_payload(0xB17D), 0);
                m_pc = 1;
                return;
            case 1:
                fold(api.mem().buffer(0));
                api.send(1, 9, api.world_comm(), u64_payload(0x5E7D));
                m_pc = 2;
                return;
            default:
                m_fin = true;
                return;
            }
        }
        switch (m_pc) {
        case 0:
            api.recv(0, 9, api.world_comm(), 1);
            m_pc = 1;
            return;
        case 1:
            fold(api.mem().buffer(1));
            api.collective(api.world_comm(), CollKind::Bcast, 0, ReduceOp::Sum, {}, 0);
            m_pc = 2;
            return;
        case 2:
            fold(api.mem().buffer(0));
            m_fin = true;
            return;
        default:
            m_fin = true;
            return;
        }
    }

    bool finished() const override { return m_fin; }
    Bytes output() const override { return u64_payload(m_digest); }
    void save(Bytes &out) const override {
        put_u64(out, m_pc);
        put_u64(out, m_digest);
        out.push_back(m_fin ? 1 : 0);
    }
    void load(ByteReader &in) override {
        m_pc = in.read_u64();
        m_digest = in.read_u64();
        m_fin = in.read_u8() != 0;
    }

private:
    void fold(const Bytes &b) { m_digest = fnv1a64(b, m_digest); }

    WorldRank m_rank;
    std::uint64_t m_pc = 0;
    std::uint64_t m_digest = 0xcbf29ce484222325ULL;
    bool m_fin = false;
};

// ---------------------------------------------------------------------------
// straggler: rank 0 computes for delaySteps before a barrier everyone else
// reaches immediately, then a verification allreduce.
// ---------------------------------------------------------------------------
class StragglerProgram final : public Program {
public:
    StragglerProgram(int n, WorldRank rank, std::uint64_t delaySteps)
        : m_n(n), m_rank(rank), m_delay(delaySteps) {
        if (n < 2) {
            throw SimError(Err::InvalidConfiguration, "straggler needs at least 2 processes");
        }
    }

    void step(AppApi &api) override {
        switch (m_pc) {
        case 0:
            if (m_rank == 0 && m_counter < m_delay) {
                ++m_counter;
                m_digest = m_digest * 6364136223846793005ULL + 1442695040888963407ULL;
                return;
            }
            api.collective(api.world_comm(), CollKind::Barrier, 0, ReduceOp::Sum, {}, -1);
            m_pc = 1;
            return;
        case 1:
            api.collective(api.world_comm(), CollKind::Allreduce, 0, ReduceOp::Sum,
                           u64_payload(static_cast<std::uint64_t>(m_rank) + 1), 0);
            m_pc = 2;
            return;
        case 2:
            fold(api.mem().buffer(0));
            m_fin = true;
            return;
        default:
            m_fin = true;
            return;
        }
    }

    bool finished() const override { return m_fin; }
    Bytes output() const override { return u64_payload(m_digest); }
    int phase_tag() const override { return (m_rank == 0 && m_pc == 0) ? 1 : 0; }

    void save(Bytes &out) const override {
        put_u64(out, m_pc);
        put_u64(out, m_counter);
        put_u64(out, m_digest);
        out.push_back(m_fin ? 1 : 0);
    }
    void load(ByteReader &in) override {
        m_pc = in.read_u64();
        m_counter = in.read_u64();
        m_digest = in.read_u64();
        m_fin = in.read_u8() != 0;
    }

private:
    void fold(const Bytes &b) { m_digest = fnv1a64(b, m_digest); }

    int m_n;
    WorldRank m_rank;
    std::uint64_t m_delay;
    std::uint64_t m_pc = 0;
    std::uint64_t m_counter = 0;
    std::uint64_t m_digest = 0xcbf29ce484222325ULL;
    bool m_fin = false;
};

// ---------------------------------------------------------------------------
// comm-churn: create a run of communicators, free a prefix of them, sit in a
// wide compute window (phase tag 1, the checkpoint target), then verify the
// survivors are usable.
// ---------------------------------------------------------------------------
class ChurnProgram final : public Program {
public:
    ChurnProgram(int n, WorldRank rank, std::uint64_t creates, std::uint64_t frees)
        : m_n(n), m_rank(rank), m_creates(creates), m_frees(frees) {
        if (n < 2) {
            throw SimError(Err::InvalidConfiguration, "comm-churn needs at least 2 processes");
        }
        if (frees > creates) {
            throw SimError(Err::InvalidConfiguration, "cannot free more comms than created");
        }
    }

    void step(AppApi &api) override {
        switch (m_pc) {
        case 0:
            if (m_made < m_creates) {
                api.comm_split(api.world_comm(), 0, m_rank);
                m_pc = 1;
            } else {
                m_pc = 2;
            }
            return;
        case 1:
            m_vids.push_back(api.mem().lastVid);
            ++m_made;
            m_pc = 0;
            return;
        case 2:
            if (m_freed < m_frees) {
                api.comm_free(m_vids[static_cast<std::size_t>(m_freed)]);
                ++m_freed;
                return;
            }
            m_pc = 3;
            return;
        case 3:
            if (m_computeLeft > 0) {
                --m_computeLeft;
                return;
            }
            m_pc = 4;
            return;
        case 4: {
            if (m_verified < m_made - m_freed) {
                const Vid v = m_vids[static_cast<std::size_t>(m_freed + m_verified)];
                api.collective(v, CollKind::Allreduce, 0, ReduceOp::Sum,
                               u64_payload(static_cast<std::uint64_t>(m_rank) + m_verified), 0);
                m_pc = 5;
            } else {
                m_fin = true;
            }
            return;
        }
        case 5:
            fold(api.mem().buffer(0));
            ++m_verified;
            m_pc = 4;
            return;
        default:
            m_fin = true;
            return;
        }
    }

    bool finished() const override { return m_fin; }
    Bytes output() const override { return u64_payload(m_digest); }
    int phase_tag() const override { return m_pc == 3 ? 1 : 0; }

    void save(Bytes &out) const override {
        put_u64(out, m_pc);
        put_u64(out, m_made);
        put_u64(out, m_freed);
        put_u64(out, m_verified);
        put_u64(out, m_computeLeft);
        put_u64(out, m_digest);
        put_u32(out, static_cast<std::uint32_t>(m_vids.size()));
        for (Vid v : m_vids) {
            put_i64(out, v);
        }
        out.push_back(m_fin ? 1 : 0);
    }
    void load(ByteReader &in) override {
        m_pc = in.read_u64();
        m_made = in.read_u64();
        m_freed = in.read_u64();
        m_verified = in.read_u64();
        m_computeLeft = in.read_u64();
        m_digest = in.read_u64();
        m_vids.clear();
        const std::uint32_t nv = in.read_u32();
        for (std::uint32_t i = 0; i < nv; ++i) {
            m_vids.push_back(in.read_i64());
        }
        m_fin = in.read_u8() != 0;
    }

private:
    void fold(const Bytes &b) { m_digest = fnv1a64(b, m_digest); }

    int m_n;
    WorldRank m_rank;
    std::uint64_t m_creates;
    std::uint64_t m_frees;
    std::uint64_t m_pc = 0;
    std::uint64_t m_made = 0;
    std::uint64_t m_freed = 0;
    std::uint64_t m_verified = 0;
    std::uint64_t m_computeLeft = 200;
    std::uint64_t m_digest = 0xcbf29ce484222325ULL;
    std::vector<Vid> m_vids;
    bool m_fin = false;
};

// ---------------------------------------------------------------------------
// mixed-stress: cross-round outstanding sends, wildcard receives, zero-byte
// envelopes, split/free cycling, and non-blocking collectives on the
// subcommunicator, all in one deterministic program.
// ---------------------------------------------------------------------------
class MixedProgram final : public Program {
public:
    MixedProgram(int n, WorldRank rank, std::uint64_t rounds, std::uint64_t splitEvery)
        : m_n(n), m_rank(rank), m_rounds(rounds), m_splitEvery(splitEvery) {
        if (n < 2) {
            throw SimError(Err::InvalidConfiguration, "mixed-stress needs at least 2 processes");
        }
    }

    void step(AppApi &api) override {
        const int next = (m_rank + 1) % m_n;
        const int tag = static_cast<int>(m_round % 3);
        switch (m_pc) {
        case 0:
            if (m_round >= m_rounds) {
                m_pc = m_round == 0 ? 99 : 90;
                return;
            }
            m_pc = m_round == 0 ? 2 : 1;
            return;
        case 1:
            api.wait(0); // previous round's send, carried across the round
            m_pc = 2;
            return;
        case 2: {
            Bytes payload;
            put_u64(payload, static_cast<std::uint64_t>(m_rank) * 131 + m_round);
            api.mem().slot(0) = api.isend(next, tag, api.world_comm(), std::move(payload));
            // Wildcard receive; the ring shape keeps it single-sender.
            api.mem().slot(1) = api.irecv(-1, tag, api.world_comm(), 0);
            m_pc = 3;
            return;
        }
        case 3:
            api.wait(1);
            m_pc = 4;
            return;
        case 4:
            fold(api.mem().buffer(0));
            if (m_round % 4 == 0) {
                api.mem().slot(4) = api.isend(next, 7, api.world_comm(), {});
                api.mem().slot(5) = api.irecv(-1, 7, api.world_comm(), 1);
                m_pc = 5;
            } else {
                m_pc = 6;
            }
            return;
        case 5:
            api.wait(5);
            m_pc = 51;
            return;
        case 51:
            api.wait(4);
            m_pc = 6;
            return;
        case 6:
            if (m_splitEvery != 0 && m_round % m_splitEvery == m_splitEvery - 1) {
                api.comm_split(api.world_comm(), m_rank % 2, m_rank);
                m_pc = 7;
            } else {
                m_pc = 8;
            }
            return;
        case 7: {
            const Vid fresh = api.mem().lastVid;
            if (m_sub != kNullVid) {
                api.comm_free(m_sub);
            }
            m_sub = fresh;
            m_pc = 8;
            return;
        }
        case 8:
            if (m_sub != kNullVid) {
                Bytes rootPayload;
                if (api.comm_local_rank(m_sub) == 0) {
                    put_u64(rootPayload, 0xCAFE0000 + m_round);
                }
                api.mem().slot(6) = api.icollective(m_sub, CollKind::Bcast, 0, ReduceOp::Sum,
                                                    std::move(rootPayload), 2);
                m_pc = 9;
            } else {
                m_pc = 10;
            }
            return;
        case 9: {
            Bytes c;
            put_u64(c, static_cast<std::uint64_t>(m_rank) + m_round);
            api.collective(m_sub, CollKind::Allreduce, 0, ReduceOp::Sum, std::move(c), 3);
            m_pc = 91;
            return;
        }
        case 91:
            fold(api.mem().buffer(3));
            api.wait(6);
            m_pc = 92;
            return;
        case 92:
            fold(api.mem().buffer(2));
            m_pc = 10;
            return;
        case 10:
            ++m_round;
            m_pc = 0;
            return;
        case 90:
            api.wait(0); // the final carried send
            m_pc = 99;
            return;
        default:
            m_fin = true;
            return;
        }
    }

    bool finished() const override { return m_fin; }
    Bytes output() const override { return u64_payload(m_digest); }

    void save(Bytes &out) const override {
        put_u64(out, m_pc);
        put_u64(out, m_round);
        put_u64(out, m_digest);
        put_i64(out, m_sub);
        out.push_back(m_fin ? 1 : 0);
    }
    void load(ByteReader &in) override {
        m_pc = in.read_u64();
        m_round = in.read_u64();
        m_digest = in.read_u64();
        m_sub = in.read_i64();
        m_fin = in.read_u8() != 0;
    }

private:
    void fold(const Bytes &b) { m_digest = fnv1a64(b, m_digest); }

    int m_n;
    WorldRank m_rank;
    std::uint64_t m_rounds;
    std::uint64_t m_splitEvery;
    std::uint64_t m_pc = 0;
    std::uint64_t m_round = 0;
    std::uint64_t m_digest = 0xcbf29ce484222325ULL;
    Vid m_sub = kNullVid;
    bool m_fin = false;
};

} // namespace

const std::vector<std::string> &workload_names() {
    static const std::vector<std::string> names = {
        "p2p-ring", "collective-storm", "bcast-deadlock", "straggler", "comm-churn",
        "mixed-stress",
    };
    return names;
}

ProgramFactory make_workload(const std::string &name, const WorkloadParams &params) {
    if (name == "p2p-ring") {
        return [params](int n, WorldRank r) -> std::unique_ptr<Program> {
            return std::make_unique<RingProgram>(n, r, params.rounds, params.msgBytes);
        };
    }
    if (name == "collective-storm") {
        return [params](int n, WorldRank r) -> std::unique_ptr<Program> {
            return std::make_unique<StormProgram>(n, r, params.rounds, params.splitEvery);
        };
    }
    if (name == "bcast-deadlock") {
        return [](int n, WorldRank r) -> std::unique_ptr<Program> {
            return std::make_unique<BcastDeadlockProgram>(n, r);
        };
    }
    if (name == "straggler") {
        return [params](int n, WorldRank r) -> std::unique_ptr<Program> {
            return std::make_unique<StragglerProgram>(n, r, params.delaySteps);
        };
    }
    if (name == "mixed-stress") {
        return [params](int n, WorldRank r) -> std::unique_ptr<Program> {
            return std::make_unique<MixedProgram>(n, r, params.rounds, params.splitEvery);
        };
    }
    if (name == "comm-churn") {
        return [params](int n, WorldRank r) -> std::unique_ptr<Program> {
            return std::make_unique<ChurnProgram>(n, r, params.creates, params.frees);
        };
    }
    throw SimError(Err::InvalidConfiguration, "unknown workload: " + name);
}

} // namespace manakin
