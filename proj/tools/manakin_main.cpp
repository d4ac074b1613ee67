// Command-line driver: run workloads under the checkpointing simulator,
// sweep and fuzz checkpoint injection points, and inspect image files.

#include "manakin/harness.hpp"
#include "manakin/image.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace {

using namespace manakin;

constexpr int kExitOk = 0;
constexpr int kExitVerificationFailure = 1;
constexpr int kExitUsage = 2;

Mode parse_mode(const std::string &s) {
    if (s == "naive-barrier") {
        return Mode::NaiveBarrier;
    }
    if (s == "p2p-emulation") {
        return Mode::P2PEmulation;
    }
    if (s == "hybrid-2pc") {
        return Mode::Hybrid2PC;
    }
    throw CLI::ValidationError("--mode", "expected naive-barrier|p2p-emulation|hybrid-2pc");
}

struct CommonOpts {
    std::string workload = "p2p-ring";
    int procs = 4;
    std::uint64_t rounds = 10;
    std::uint64_t seed = 1;
    std::string mode = "hybrid-2pc";
    std::string ckptAt;
    std::string ckptDir;
    std::string metricsOut;
    std::uint64_t msgBytes = 64;
    std::uint64_t delaySteps = 1000;
};

void add_common(CLI::App *cmd, CommonOpts &o) {
    cmd->add_option("--workload", o.workload, "workload name")
        ->check(CLI::IsMember(workload_names()));
    cmd->add_option("--procs", o.procs, "simulated process count");
    cmd->add_option("--rounds", o.rounds, "workload rounds");
    cmd->add_option("--seed", o.seed, "scheduler seed");
    cmd->add_option("--mode", o.mode, "collective mode")
        ->check(CLI::IsMember({"naive-barrier", "p2p-emulation", "hybrid-2pc"}));
    cmd->add_option("--ckpt-dir", o.ckptDir, "directory for checkpoint image files");
    cmd->add_option("--metrics-out", o.metricsOut, "metrics output path");
    cmd->add_option("--msg-bytes", o.msgBytes, "p2p-ring message size");
    cmd->add_option("--delay-steps", o.delaySteps, "straggler compute delay");
}

WorkloadParams params_of(const CommonOpts &o) {
    WorkloadParams p;
    p.rounds = o.rounds;
    p.msgBytes = o.msgBytes;
    p.delaySteps = o.delaySteps;
    return p;
}

RunConfig config_of(const CommonOpts &o) {
    RunConfig cfg;
    cfg.procs = o.procs;
    cfg.seed = o.seed;
    cfg.mode = parse_mode(o.mode);
    cfg.ckptDir = o.ckptDir;
    return cfg;
}

std::vector<std::uint64_t> parse_steps(const std::string &s) {
    std::vector<std::uint64_t> steps;
    std::string cur;
    for (char c : s + ",") {
        if (c == ',') {
            if (!cur.empty()) {
                steps.push_back(std::stoull(cur));
                cur.clear();
            }
        } else {
            cur.push_back(c);
        }
    }
    return steps;
}

void write_metrics(const std::string &path, const std::function<void(std::ostream &)> &emit) {
    if (path.empty()) {
        return;
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw SimError(Err::ConfigurationError, "cannot open metrics file " + path);
    }
    emit(out);
}

int cmd_run(const CommonOpts &o) {
    const WorkloadParams params = params_of(o);
    const RunConfig cfg = config_of(o);
    const std::vector<std::uint64_t> injections = parse_steps(o.ckptAt);

    if (injections.empty()) {
        // Plain native run with a final output report.
        System sys(cfg, make_workload(o.workload, params));
        RunResult r = sys.run(50'000'000);
        write_metrics(o.metricsOut, [&](std::ostream &os) { emit_metrics(os, sys, o.workload); });
        if (r.what == RunResult::What::Deadlock) {
            std::cout << r.deadlock.to_string();
            return kExitVerificationFailure;
        }
        if (r.what != RunResult::What::Finished) {
            std::cout << "run did not finish\n";
            return kExitVerificationFailure;
        }
        std::cout << "completed in " << sys.global_step() << " steps\n";
        return kExitOk;
    }

    EquivalenceResult res = run_equivalence(o.workload, params, cfg, injections);
    write_metrics(o.metricsOut, [&](std::ostream &os) {
        emit_metrics(os, res.checkpointedMetrics, res.checkpointedWrapper, o.workload);
    });
    if (!res.pass) {
        std::cout << "VERIFY FAIL: " << res.diagnosis << "\n";
        return kExitVerificationFailure;
    }
    std::cout << "VERIFY PASS: " << res.roundsCompleted
              << " checkpoint round(s), outputs byte-identical to the native run\n";
    return kExitOk;
}

int cmd_sweep(const CommonOpts &o, std::uint64_t stride) {
    SweepResult res = ckpt_sweep(o.workload, params_of(o), config_of(o), stride);
    std::cout << "sweep: " << res.passes << "/" << res.injections << " injections transparent\n";
    std::cout << "covered phase classes:";
    for (PhaseClass c : res.coveredClasses) {
        if (c != PhaseClass::Idle) {
            std::cout << " " << phase_class_name(c);
        }
    }
    std::cout << "\n";
    for (std::uint64_t k : res.failures) {
        std::cout << "  failed at injection step " << k << "\n";
    }
    return res.failures.empty() ? kExitOk : kExitVerificationFailure;
}

int cmd_fuzz(const CommonOpts &o, std::uint64_t trials, std::uint64_t fuzzSeed) {
    FuzzResult res = fuzz(o.workload, params_of(o), config_of(o), trials, fuzzSeed);
    std::cout << "fuzz: " << res.passes << "/" << res.trials << " trials transparent\n";
    for (std::uint64_t s : res.failingSeeds) {
        std::cout << "  failing seed " << s << "\n";
    }
    return res.failingSeeds.empty() ? kExitOk : kExitVerificationFailure;
}

int cmd_inspect(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        std::cerr << "cannot open " << path << "\n";
        return kExitUsage;
    }
    Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::cout << describe_image(data);
    return kExitOk;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"manakin: transparent checkpoint-restart protocol simulator"};
    app.require_subcommand(1);

    CommonOpts runOpts;
    CLI::App *run = app.add_subcommand("run", "run a workload, optionally with checkpoints");
    add_common(run, runOpts);
    run->add_option("--ckpt-at", runOpts.ckptAt, "comma-separated checkpoint injection steps");

    CommonOpts sweepOpts;
    std::uint64_t stride = 10;
    CLI::App *sweep = app.add_subcommand("ckpt-sweep", "inject a checkpoint at every stride");
    add_common(sweep, sweepOpts);
    sweep->add_option("--every", stride, "injection stride in steps");

    CommonOpts fuzzOpts;
    std::uint64_t trials = 100;
    std::uint64_t fuzzSeed = 42;
    CLI::App *fz = app.add_subcommand("fuzz", "randomized schedule + injection trials");
    add_common(fz, fuzzOpts);
    fz->add_option("--trials", trials, "number of trials");
    fz->add_option("--fuzz-seed", fuzzSeed, "fuzz campaign seed");

    std::string imagePath;
    CLI::App *inspect = app.add_subcommand("inspect-image", "print image sections and CRC state");
    inspect->add_option("path", imagePath, "image file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (run->parsed()) {
            return cmd_run(runOpts);
        }
        if (sweep->parsed()) {
            return cmd_sweep(sweepOpts, stride);
        }
        if (fz->parsed()) {
            return cmd_fuzz(fuzzOpts, trials, fuzzSeed);
        }
        if (inspect->parsed()) {
            return cmd_inspect(imagePath);
        }
    } catch (const SimError &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitVerificationFailure;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
