#pragma once

#include "manakin/bytes.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace manakin {

// One record per observable simulator event: {step, proc, op, args-digest}.
// The structured a/b/c fields keep assertions cheap; the digest folds the full
// argument list so two runs can be compared byte-for-byte.
enum class EvKind : std::uint8_t {
    // Network events (anything that moves data between processes).
    MsgEnqueue,    // a=dst, b=tag, c=bytes
    MsgClaim,      // a=src, b=tag, c=bytes (message matched to a posted recv)
    MsgDeliver,    // a=src, b=tag, c=bytes (payload handed over, message leaves the network)
    CollDeposit,   // a=comm id, b=instance, c=kind
    CollRelease,   // a=comm id, b=instance, c=member count
    // Lower-half local events.
    CommCreate,    // a=comm id, b=member count
    CommFree,      // a=comm id
    GroupCreate,   // a=group id
    LocalQuery,    // a=comm id (rank translation and similar local-only calls)
    ReplayIssue,   // a=comm id, b=instance, c=kind (restart-time re-issue)
    // Coordinator events (out-of-band channel; must stay free of per-pair data).
    CoordPhase,    // a=phase
    CoordFlag,     // a=1 pending set, 0 cleared
    CoordReport,   // a=rank, b=in-collective, c=safe
    CoordQuery,    // a=rank (gid-open query during hybrid commit)
};

struct EventRecord {
    std::uint64_t step = 0;
    std::int32_t proc = -1; // -1 for coordinator-originated records
    EvKind kind = EvKind::CoordPhase;
    std::int64_t a = 0;
    std::int64_t b = 0;
    std::int64_t c = 0;
    std::uint64_t argsDigest = 0;
};

inline bool is_network_event(EvKind k) {
    switch (k) {
    case EvKind::MsgEnqueue:
    case EvKind::MsgClaim:
    case EvKind::MsgDeliver:
    case EvKind::CollDeposit:
    case EvKind::CollRelease:
        return true;
    default:
        return false;
    }
}

inline bool is_coordinator_event(EvKind k) {
    switch (k) {
    case EvKind::CoordPhase:
    case EvKind::CoordFlag:
    case EvKind::CoordReport:
    case EvKind::CoordQuery:
        return true;
    default:
        return false;
    }
}

class EventLog {
public:
    void append(std::uint64_t step, std::int32_t proc, EvKind kind, std::int64_t a = 0,
                std::int64_t b = 0, std::int64_t c = 0) {
        EventRecord r;
        r.step = step;
        r.proc = proc;
        r.kind = kind;
        r.a = a;
        r.b = b;
        r.c = c;
        Bytes buf;
        put_u64(buf, step);
        put_i32(buf, proc);
        buf.push_back(static_cast<std::uint8_t>(kind));
        put_i64(buf, a);
        put_i64(buf, b);
        put_i64(buf, c);
        r.argsDigest = fnv1a64(buf);
        m_records.push_back(r);
    }

    const std::vector<EventRecord> &records() const { return m_records; }
    std::size_t size() const { return m_records.size(); }

    std::size_t count_if(const std::function<bool(const EventRecord &)> &pred) const {
        std::size_t n = 0;
        for (const auto &r : m_records) {
            if (pred(r)) {
                ++n;
            }
        }
        return n;
    }

    std::size_t network_event_count() const {
        return count_if([](const EventRecord &r) { return is_network_event(r.kind); });
    }

    // Byte-serialized form of the whole log; equal seeds and workloads must
    // produce equal bytes (the determinism property).
    Bytes serialize() const {
        Bytes out;
        put_u64(out, m_records.size());
        for (const auto &r : m_records) {
            put_u64(out, r.step);
            put_i32(out, r.proc);
            out.push_back(static_cast<std::uint8_t>(r.kind));
            put_i64(out, r.a);
            put_i64(out, r.b);
            put_i64(out, r.c);
            put_u64(out, r.argsDigest);
        }
        return out;
    }

private:
    std::vector<EventRecord> m_records;
};

} // namespace manakin
