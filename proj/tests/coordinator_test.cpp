// Coordinator phase machine and the drain protocol, driven directly.

#include "manakin/coordinator.hpp"
#include "manakin/image.hpp"
#include "manakin/process.hpp"

#include <doctest.h>

using namespace manakin;

namespace {

struct DrainRig {
    EventLog log;
    LowerHalf lh;
    std::vector<Process> procs;
    Coordinator coord;
    WrapperEnv env;

    explicit DrainRig(int n) : lh(log, n, 0), coord(log, n) {
        for (int r = 0; r < n; ++r) {
            Process p(r, n);
            p.bind_world(lh);
            procs.push_back(std::move(p));
        }
        env.lh = &lh;
    }

    void to_draining() {
        coord.request_checkpoint(0);
        coord.to_draining();
    }

    void mark_all_safe() {
        for (auto &p : procs) {
            coord.update_report(p.rank(), false, 0, true);
        }
    }
};

} // namespace

TEST_CASE("phase transitions follow the listed order") {
    EventLog log;
    Coordinator c(log, 2);
    CHECK(c.phase() == Phase::Running);
    CHECK_THROWS_AS(c.to_draining(), SimError);
    c.request_checkpoint(3);
    CHECK(c.round() == 3);
    CHECK(c.phase() == Phase::CkptRequested);
    CHECK_THROWS_AS(c.to_writing(), SimError);
    c.to_draining();
    CHECK_THROWS_AS(c.request_checkpoint(4), SimError); // rejected-busy
    c.to_committed();
    c.update_report(0, false, 0, true);
    c.update_report(1, false, 0, true);
    c.to_writing();
    c.to_resumed();
    c.to_running();
    CHECK(c.phase() == Phase::Running);
}

TEST_CASE("image write requires every report safe") {
    EventLog log;
    Coordinator c(log, 2);
    c.request_checkpoint(0);
    c.to_draining();
    c.to_committed();
    c.update_report(0, false, 0, true); // rank 1 not safe
    CHECK_THROWS_AS(c.to_writing(), SimError);
}

TEST_CASE("abort returns the round to running with no images") {
    EventLog log;
    Coordinator c(log, 1);
    c.request_checkpoint(7);
    c.abort_round();
    CHECK(c.phase() == Phase::Running);
    c.request_checkpoint(8); // a fresh round is accepted again
    CHECK(c.round() == 8);
}

TEST_CASE("gid collision detection compares memberships") {
    EventLog log;
    Coordinator c(log, 4);
    c.set_open_instances({{42, {0, 1}}, {42, {0, 1}}}); // same members: fine
    CHECK(c.gid_open(42));
    CHECK_THROWS_AS(c.set_open_instances({{42, {0, 1}}, {42, {2, 3}}}), SimError);
    try {
        c.set_open_instances({{42, {0, 1}}, {42, {2, 3}}});
    } catch (const SimError &e) {
        CHECK(e.code() == Err::GidCollision);
    }
}

TEST_CASE("drain with balanced counters does nothing") {
    DrainRig rig(3);
    // A completed exchange: send and receive both observed.
    rig.procs[0].w_isend(rig.env, 1, 0, rig.procs[0].worldVid, Bytes(64, 1));
    Vid v = rig.procs[1].w_irecv(rig.env, 0, 0, rig.procs[1].worldVid, 0);
    Vid slot = v;
    rig.procs[1].w_test_slot(rig.env, slot);

    rig.to_draining();
    auto stats = drain_p2p(rig.coord, rig.lh, rig.procs);
    CHECK(stats.iterations == 0);
    CHECK(stats.messagesBuffered == 0);
    CHECK(rig.lh.network_empty());
}

TEST_CASE("drain buffers an unreceived message and balances the pair") {
    DrainRig rig(2);
    rig.procs[0].w_isend(rig.env, 1, 6, rig.procs[0].worldVid, Bytes(100, 0xD7));

    rig.to_draining();
    auto stats = drain_p2p(rig.coord, rig.lh, rig.procs);
    CHECK(stats.bytesDrained == 100);
    CHECK(stats.messagesBuffered == 1);
    REQUIRE(rig.procs[1].drainedBuffers.size() == 1);
    const DrainedMsg &b = rig.procs[1].drainedBuffers[0];
    CHECK(b.src == 0);
    CHECK(b.tag == 6);
    CHECK(b.payload == Bytes(100, 0xD7));
    CHECK(b.commGid == rig.procs[1].w_comm_gid(rig.procs[1].worldVid));
    CHECK(rig.lh.network_empty());
}

TEST_CASE("a message claimed by a pending irecv drains through the test path") {
    DrainRig rig(2);
    rig.procs[0].w_isend(rig.env, 1, 2, rig.procs[0].worldVid, Bytes(40, 0x11));
    // The receive is posted but never tested: the message is claimed and
    // probe-invisible.
    Vid v = rig.procs[1].w_irecv(rig.env, 0, 2, rig.procs[1].worldVid, 3);

    rig.to_draining();
    auto stats = drain_p2p(rig.coord, rig.lh, rig.procs);
    CHECK(stats.messagesBuffered == 0); // not an extra receive
    CHECK(stats.recvCompletions == 1);  // completed via the posted irecv
    CHECK(rig.procs[1].mem.buffer(3) == Bytes(40, 0x11));
    CHECK(rig.procs[1].recvBytes[0] == 40);
    CHECK(rig.lh.network_empty());

    // The internally completed request sits in retirement step A.
    REQUIRE(rig.procs[1].requestTable.count(v) == 1);
    CHECK(rig.procs[1].requestTable.at(v).is_null());
}

TEST_CASE("zero-byte envelopes are drained") {
    DrainRig rig(2);
    rig.procs[0].w_isend(rig.env, 1, 0, rig.procs[0].worldVid, {});
    rig.to_draining();
    auto stats = drain_p2p(rig.coord, rig.lh, rig.procs);
    CHECK(stats.messagesBuffered == 1);
    CHECK(stats.bytesDrained == 0);
    CHECK(rig.lh.network_empty());
}

TEST_CASE("drain-stuck diagnostic names the unbalanced pair") {
    DrainRig rig(2);
    // Tampered counter: claims bytes that were never sent.
    rig.procs[0].sentBytes[1] += 999;
    rig.to_draining();
    try {
        drain_p2p(rig.coord, rig.lh, rig.procs);
        FAIL("expected drain-stuck");
    } catch (const SimError &e) {
        CHECK(e.code() == Err::DrainStuck);
        CHECK(std::string(e.what()).find("(0 -> 1)") != std::string::npos);
    }
}

TEST_CASE("the coordinator carries no per-pair data during drain") {
    DrainRig rig(3);
    rig.procs[0].w_isend(rig.env, 1, 0, rig.procs[0].worldVid, Bytes(10, 1));
    rig.procs[2].w_isend(rig.env, 1, 0, rig.procs[2].worldVid, Bytes(20, 2));
    rig.to_draining();
    const std::size_t mark = rig.log.size();
    drain_p2p(rig.coord, rig.lh, rig.procs);

    std::size_t coordEvents = 0;
    std::size_t alltoallDeposits = 0;
    for (std::size_t i = mark; i < rig.log.records().size(); ++i) {
        const EventRecord &ev = rig.log.records()[i];
        if (is_coordinator_event(ev.kind)) {
            ++coordEvents;
        }
        if (ev.kind == EvKind::CollDeposit && ev.c == static_cast<std::int64_t>(CollKind::Alltoall)) {
            ++alltoallDeposits;
        }
    }
    // Counter exchange flowed through the alltoall among the processes; the
    // coordinator stayed silent.
    CHECK(coordEvents == 0);
    CHECK(alltoallDeposits == 3);
}

TEST_CASE("drain caches results of globally closed non-blocking collectives") {
    DrainRig rig(2);
    // Both ranks enter an ibarrier; rank 0 retires it, rank 1 never tests.
    Vid v0 = rig.procs[0].w_icollective(rig.env, rig.procs[0].worldVid, CollKind::Barrier, 0,
                                        ReduceOp::Sum, {}, -1);
    Vid v1 = rig.procs[1].w_icollective(rig.env, rig.procs[1].worldVid, CollKind::Barrier, 0,
                                        ReduceOp::Sum, {}, -1);
    Vid slot0 = v0;
    rig.procs[0].w_test_slot(rig.env, slot0);
    CHECK(rig.procs[0].replayLog.empty());

    rig.to_draining();
    drain_p2p(rig.coord, rig.lh, rig.procs);
    REQUIRE(rig.procs[1].replayLog.size() == 1);
    CHECK_FALSE(rig.procs[1].replayLog[0].completed);
    CHECK(rig.procs[1].replayLog[0].hasCachedResult);
    (void)v1;
}

TEST_CASE("open non-blocking instances are left for replay, not cached") {
    DrainRig rig(2);
    // Only rank 0 deposited; the instance is globally open.
    rig.procs[0].w_icollective(rig.env, rig.procs[0].worldVid, CollKind::Barrier, 0,
                               ReduceOp::Sum, {}, -1);
    rig.to_draining();
    drain_p2p(rig.coord, rig.lh, rig.procs);
    REQUIRE(rig.procs[0].replayLog.size() == 1);
    CHECK_FALSE(rig.procs[0].replayLog[0].hasCachedResult);
}

TEST_CASE("image build requires the writing phase and produces all ranks") {
    DrainRig rig(2);
    rig.to_draining();
    drain_p2p(rig.coord, rig.lh, rig.procs);
    CHECK_THROWS_AS(build_image_blobs(rig.coord, rig.lh, rig.procs), SimError);
    rig.coord.to_committed();
    rig.mark_all_safe();
    rig.coord.to_writing();
    auto blobs = build_image_blobs(rig.coord, rig.lh, rig.procs);
    CHECK(blobs.size() == 2);
    for (const auto &b : blobs) {
        ProcessImage img = parse_image(b);
        CHECK(img.epoch == 0);
        CHECK(img.worldSize == 2);
    }
}

TEST_CASE("completed replay-log entries are absent from images") {
    DrainRig rig(2);
    Vid v0 = rig.procs[0].w_icollective(rig.env, rig.procs[0].worldVid, CollKind::Barrier, 0,
                                        ReduceOp::Sum, {}, -1);
    rig.procs[1].w_icollective(rig.env, rig.procs[1].worldVid, CollKind::Barrier, 0,
                               ReduceOp::Sum, {}, -1);
    Vid slot = v0;
    rig.procs[0].w_test_slot(rig.env, slot); // retires rank 0's entry
    rig.to_draining();
    drain_p2p(rig.coord, rig.lh, rig.procs);
    rig.coord.to_committed();
    rig.mark_all_safe();
    rig.coord.to_writing();
    auto blobs = build_image_blobs(rig.coord, rig.lh, rig.procs);
    CHECK(parse_image(blobs[0]).replayLog.empty());     // pruned
    CHECK(parse_image(blobs[1]).replayLog.size() == 1); // still pending
}

TEST_CASE("freed communicators are absent from images") {
    DrainRig rig(2);
    for (auto &p : rig.procs) {
        AppApi api(p, rig.env);
        api.comm_split(p.worldVid, 0, p.rank());
    }
    for (bool any = true; any;) {
        any = false;
        for (auto &p : rig.procs) {
            if (p.activation().kind != ActKind::None) {
                p.step(rig.env);
                any = true;
            }
        }
    }
    rig.procs[0].w_comm_free(rig.env, rig.procs[0].mem.lastVid);

    rig.to_draining();
    drain_p2p(rig.coord, rig.lh, rig.procs);
    rig.coord.to_committed();
    rig.mark_all_safe();
    rig.coord.to_writing();
    auto blobs = build_image_blobs(rig.coord, rig.lh, rig.procs);
    CHECK(parse_image(blobs[0]).comms.size() == 1); // world only
    CHECK(parse_image(blobs[1]).comms.size() == 2); // world + live child
}
