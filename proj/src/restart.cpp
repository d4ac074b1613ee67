#include "manakin/restart.hpp"

#include "manakin/system.hpp"

#include <algorithm>
#include <map>

namespace manakin {

RestartPlan plan_restart(const std::vector<Bytes> &blobs) {
    if (blobs.empty()) {
        throw SimError(Err::RestartIncomplete, "no images");
    }
    RestartPlan plan;
    std::vector<ProcessImage> parsed;
    parsed.reserve(blobs.size());
    for (const auto &b : blobs) {
        parsed.push_back(parse_image(b));
    }

    const std::uint32_t world = parsed.front().worldSize;
    const std::uint32_t epoch = parsed.front().epoch;
    if (world != blobs.size()) {
        throw SimError(Err::RestartIncomplete,
                       "image set has " + std::to_string(blobs.size()) + " images for world size " +
                           std::to_string(world));
    }
    plan.images.resize(world);
    std::vector<bool> seen(world, false);
    for (auto &img : parsed) {
        if (img.worldSize != world || img.epoch != epoch) {
            throw SimError(Err::IncompatibleImage, "mixed epoch or world size in image set");
        }
        if (img.rank >= world || seen[img.rank]) {
            throw SimError(Err::RestartIncomplete,
                           "missing or duplicate rank " + std::to_string(img.rank));
        }
        seen[img.rank] = true;
        plan.images[img.rank] = std::move(img);
    }
    for (std::uint32_t r = 0; r < world; ++r) {
        if (!seen[r]) {
            throw SimError(Err::RestartIncomplete, "missing rank " + std::to_string(r));
        }
    }
    plan.newEpoch = static_cast<int>(epoch) + 1;

    // Merge per-process descriptors into one entry per communicator. The
    // creation identity pairs descriptors across processes even when several
    // communicators share a membership.
    std::map<std::uint64_t, RestartPlan::RebuildEntry> byBirth;
    for (const auto &img : plan.images) {
        for (const auto &d : img.comms) {
            auto it = byBirth.find(d.birth);
            if (it == byBirth.end()) {
                byBirth[d.birth] = RestartPlan::RebuildEntry{d.members, d.gid, d.birth};
            } else if (it->second.members != d.members || it->second.gid != d.gid) {
                throw SimError(Err::RestartInconsistency,
                               "members disagree on a communicator descriptor");
            }
        }
    }
    for (auto &[birth, entry] : byBirth) {
        plan.rebuildOrder.push_back(std::move(entry));
    }
    std::sort(plan.rebuildOrder.begin(), plan.rebuildOrder.end(),
              [](const RestartPlan::RebuildEntry &a, const RestartPlan::RebuildEntry &b) {
                  if (a.members.size() != b.members.size()) {
                      return a.members.size() < b.members.size();
                  }
                  if (a.gid != b.gid) {
                      return a.gid < b.gid;
                  }
                  return a.birth < b.birth;
              });
    return plan;
}

void rebind_comm(Process &p, Vid vid, CommHandle real) {
    bool known = false;
    for (const auto &d : p.comms) {
        if (d.vid == vid) {
            known = true;
        }
    }
    if (!known) {
        throw SimError(Err::RestartInconsistency,
                       "rebind of unknown comm vid " + std::to_string(vid));
    }
    p.commTable[vid] = real;
}

void execute_restart(System &sys, const std::vector<Bytes> &blobs) {
    RestartPlan plan = plan_restart(blobs);
    const int n = static_cast<int>(plan.images.size());
    if (sys.config().procs != n) {
        throw SimError(Err::RestartIncomplete, "configured process count does not match images");
    }

    sys.m_lh = std::make_unique<LowerHalf>(sys.m_logStore, n, plan.newEpoch);
    LowerHalf &lh = *sys.m_lh;
    const std::uint64_t creationsAtStart = lh.comm_creations(); // the bootstrap world

    sys.m_procs.clear();
    for (int r = 0; r < n; ++r) {
        Process p(r, n);
        if (sys.m_factory) {
            p.install_program(sys.m_factory(n, r));
        }
        restore_process_state(p, plan.images[static_cast<std::size_t>(r)]);
        sys.m_procs.push_back(std::move(p));
    }

    // Reconstruct communicators from membership alone, in the globally
    // agreed (size, gid, birth) order; every member binds its descriptor
    // with that creation identity to the same rebuilt handle. The world
    // communicator (birth 0) rebinds to the bootstrap comm.
    for (const auto &entry : plan.rebuildOrder) {
        const CommHandle handle =
            entry.birth == 0 ? lh.world() : lh.comm_from_members(entry.members);
        for (WorldRank member : entry.members) {
            Process &p = sys.m_procs[static_cast<std::size_t>(member)];
            bool bound = false;
            for (const auto &d : p.comms) {
                if (d.birth == entry.birth) {
                    if (bound) {
                        throw SimError(Err::RestartInconsistency,
                                       "duplicate communicator identity in one process");
                    }
                    rebind_comm(p, d.vid, handle);
                    if (entry.birth == 0) {
                        p.worldVid = d.vid;
                    }
                    bound = true;
                }
            }
            // A member with no descriptor freed its handle before the
            // checkpoint; the communicator is rebuilt for the rest.
            (void)bound;
        }
    }
    sys.restartCommsRebuilt = plan.rebuildOrder.size();
    sys.restartCommCreations = lh.comm_creations() - creationsAtStart;

    // Groups are local state; recreate them per process.
    for (auto &p : sys.m_procs) {
        for (const auto &g : p.groups) {
            p.groupTable[g.vid] = lh.group_from_members(g.members);
        }
    }

    // Rebind request virtual ids. Receives never re-posted out of creation
    // order; sends are never re-sent (their bytes were drained or received).
    for (auto &p : sys.m_procs) {
        const auto &img = plan.images[static_cast<std::size_t>(p.rank())];
        std::map<Vid, bool> vtableNull;
        for (const auto &[vid, isNull] : img.vtables.requests) {
            vtableNull[vid] = isNull;
        }

        std::vector<P2PRecord *> recs;
        for (auto &rec : p.p2pList) {
            recs.push_back(&rec);
        }
        std::sort(recs.begin(), recs.end(),
                  [](const P2PRecord *a, const P2PRecord *b) { return a->vreq < b->vreq; });
        for (P2PRecord *rec : recs) {
            auto it = vtableNull.find(rec->vreq);
            if (it == vtableNull.end()) {
                throw SimError(Err::RestartInconsistency,
                               "p2p record without table entry: vid " + std::to_string(rec->vreq));
            }
            if (it->second) {
                continue; // retirement step A already done; entry stays null
            }
            if (rec->dir == Dir::Send) {
                p.requestTable[rec->vreq] = lh.make_completed_request(p.rank(), {}, std::nullopt);
                continue;
            }
            // Pending receive: drained buffers are consumed before any
            // network receive, in arrival order.
            const CommDesc &desc = p.desc_of(rec->vcomm);
            bool fromBuffer = false;
            for (auto bit = p.drainedBuffers.begin(); bit != p.drainedBuffers.end(); ++bit) {
                if (bit->commGid != desc.gid) {
                    continue;
                }
                if (rec->peer != kAnySource && bit->src != rec->peer) {
                    continue;
                }
                if (rec->tag != kAnyTag && bit->tag != rec->tag) {
                    continue;
                }
                rec->completed = true;
                rec->hasStatus = true;
                rec->status = Status{bit->src, bit->tag, bit->payload.size()};
                rec->bytes = bit->payload.size();
                p.recvBytes[static_cast<std::size_t>(bit->src)] += bit->payload.size();
                p.recvMsgs[static_cast<std::size_t>(bit->src)] += 1;
                if (rec->bufSlot >= 0) {
                    p.mem.buffer(rec->bufSlot) = bit->payload;
                } else {
                    rec->payload = bit->payload;
                }
                p.drainedBuffers.erase(bit);
                p.requestTable[rec->vreq] = ReqHandle::null();
                fromBuffer = true;
                break;
            }
            if (!fromBuffer) {
                p.requestTable[rec->vreq] =
                    lh.irecv(p.rank(), rec->peer, rec->tag, p.commTable.at(rec->vcomm));
            }
        }

        // Replay uncompleted non-blocking collectives: re-issue those whose
        // instance was still open, materialize cached results for the rest.
        for (auto &rec : p.replayLog) {
            const CommHandle rc = p.commTable.at(rec.vcomm);
            lh.log().append(0, p.rank(), EvKind::ReplayIssue, rc.id, rec.instance,
                            static_cast<std::int64_t>(rec.kind));
            ++sys.restartReplaysIssued;
            if (rec.hasCachedResult) {
                p.requestTable[rec.vreq] = lh.make_completed_request(
                    p.rank(), rec.cachedResult,
                    Status{-1, -1, rec.cachedResult.size()});
            } else {
                p.requestTable[rec.vreq] = lh.icoll_deposit(p.rank(), rc, rec.instance, rec.kind,
                                                            rec.rootLocal, rec.op,
                                                            rec.contribution);
            }
        }
    }
}

} // namespace manakin
