#pragma once

#include "manakin/bytes.hpp"
#include "manakin/errors.hpp"
#include "manakin/process.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace manakin {

inline constexpr char kImageMagic[8] = {'M', 'A', 'N', 'A', 'K', 'I', 'N', '1'};
inline constexpr std::uint32_t kImageVersion = 1;

struct VtableSnapshot {
    Vid nextCommVid = 1;
    Vid nextGroupVid = 1;
    Vid nextReqVid = 1;
    std::vector<Vid> commVids;
    std::vector<Vid> groupVids;
    std::vector<std::pair<Vid, bool>> requests; // (vid, points-at-null-sentinel)
    friend bool operator==(const VtableSnapshot &, const VtableSnapshot &) = default;
};

struct CounterRows {
    std::vector<std::uint64_t> sentBytes, sentMsgs, recvBytes, recvMsgs;
    friend bool operator==(const CounterRows &, const CounterRows &) = default;
};

// One process's serialized upper half. The app-state section is opaque here;
// it carries the program registers, storage, and wrapper activation.
struct ProcessImage {
    std::uint32_t version = kImageVersion;
    std::uint32_t epoch = 0;
    std::uint32_t worldSize = 0;
    std::uint32_t rank = 0;
    Bytes appState;
    VtableSnapshot vtables;
    CounterRows counters;
    std::vector<P2PRecord> p2pList;
    std::vector<ReplayRecord> replayLog; // uncompleted entries only
    std::vector<CommDesc> comms;
    std::vector<GroupDesc> groups;
    std::vector<DrainedMsg> buffers;
    friend bool operator==(const ProcessImage &, const ProcessImage &) = default;
};

// Wire form: magic, version u32, epoch u32, world u32, rank u32, seven
// length-prefixed sections in fixed order, trailing CRC32 over everything
// before it. All integers little-endian.
Bytes serialize_image(const ProcessImage &img);
ProcessImage parse_image(std::span<const std::uint8_t> data);

// Human-readable section summary (the inspect-image command).
std::string describe_image(std::span<const std::uint8_t> data);

// App-state payload: program registers plus the wrapper execution state.
struct ExecState {
    Bytes programState;
    AppStorage memory;
    Activation act;
    bool finished = false;
    std::uint64_t drainedSeqCounter = 0;
    friend bool operator==(const ExecState &, const ExecState &) = default;
};

Bytes serialize_exec_state(const ExecState &s);
ExecState parse_exec_state(std::span<const std::uint8_t> data);

// State capture / restore between a live process and its image.
ProcessImage snapshot_process(const Process &p, int epoch);
void restore_process_state(Process &p, const ProcessImage &img);

} // namespace manakin
