"""Command-line front end.

Every run writes into its own directory, starting with ``manifest.json``
(command line, seed, profile digest, versions) so it can be rerun exactly.

Exit codes::

    0  success
    2  bad command line
    3  invalid or unknown profile
    4  output directory not writable
    5  unknown experiment kind
    6  trace file truncated, corrupt or from another version
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ProfileError, load_profile

EXIT_OK, EXIT_USAGE, EXIT_PROFILE, EXIT_OUTPUT, EXIT_KIND, EXIT_TRACE = 0, 2, 3, 4, 5, 6
KINDS = ("policy-infer", "leader-locate", "attack-aes", "attack-rsa", "telemetry", "replay")
TRACE_MAGIC = "# cachelab trace v1"
MODE_POLICY = {"1": "quadage-mode1", "2": "quadage-mode2", "duel": "quadage-duel"}


class CliError(Exception):
    def __init__(self, code, msg):
        super().__init__(msg)
        self.code = code


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cachelab", allow_abbrev=False,
                                description="LLC replacement-policy and attack simulator")
    p.add_argument("--version", action="version", version=f"cachelab {__version__}")
    sub = p.add_subparsers(dest="kind", metavar="EXPERIMENT")

    def common(sp, trials=None, samples=None):
        sp.add_argument("--profile", default="i5-7600K")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default=None, help="run directory (default runs/<kind>-<profile>-s<seed>)")
        sp.add_argument("--mode", choices=("1", "2", "duel"), default=None,
                        help="override the LLC insertion mode")
        if trials is not None:
            sp.add_argument("--trials", type=int, default=trials)
        if samples is not None:
            sp.add_argument("--samples", type=int, default=samples)

    sp = sub.add_parser("policy-infer", allow_abbrev=False, help="score every shadow model")
    common(sp, trials=1000)
    sp.add_argument("--jitter", type=int, default=0)

    sp = sub.add_parser("leader-locate", allow_abbrev=False, help="find set-dueling leader sets")
    common(sp)

    sp = sub.add_parser("attack-aes", allow_abbrev=False, help="last-round AES key recovery")
    common(sp, samples=20000)
    sp.add_argument("--technique", choices=("rr", "fr", "pp"), default="rr")
    sp.add_argument("--key", default=None, help="planted key as 32 hex digits (default: random)")
    sp.add_argument("--noise", type=int, default=0, metavar="K",
                    help="co-resident noise agent touching K lines of each monitored set")
    sp.add_argument("--trace", action="store_true", help="also write trace.csv for replay")

    sp = sub.add_parser("attack-rsa", allow_abbrev=False, help="square-and-multiply exponent recovery")
    common(sp)
    sp.add_argument("--technique", choices=("rr", "fr", "pp"), default="rr")
    sp.add_argument("--bits", type=int, default=2048)
    sp.add_argument("--period", type=int, default=3000, help="idle cycles between samples")
    sp.add_argument("--trace", action="store_true", help="also write trace.csv for replay")

    sp = sub.add_parser("telemetry", allow_abbrev=False, help="victim miss histograms and traces")
    common(sp, trials=10000)
    sp.add_argument("--bits", type=int, default=2048)
    sp.add_argument("--warmup", type=int, default=100)

    sp = sub.add_parser("replay", allow_abbrev=False, help="re-simulate a trace and print its digest")
    sp.add_argument("trace_file")
    return p


# run directory and manifest

def _profile(args):
    try:
        prof = load_profile(args.profile)
    except ProfileError as e:
        raise CliError(EXIT_PROFILE, str(e))
    if args.mode is not None:
        prof = prof.replace(llc_policy=MODE_POLICY[args.mode])
    return prof


def _rundir(args, prof) -> Path:
    out = Path(args.out or f"runs/{args.kind}-{prof.name}-s{args.seed}")
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        raise CliError(EXIT_OUTPUT, f"cannot write to {out}: {e}")
    return out


def _manifest(out: Path, args, argv, prof) -> dict:
    m = {
        "experiment": args.kind,
        "argv": argv,
        "seed": args.seed,
        "profile": prof.name,
        "profile_digest": prof.digest(),
        "llc_policy": prof.llc.policy,
        "versions": {"cachelab": __version__, "python": platform.python_version(),
                     "numpy": np.__version__},
        "started": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    (out / "manifest.json").write_text(json.dumps(m, indent=2, sort_keys=True))
    return m


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str))


def _say(*a):
    print(*a, flush=True)


# experiments

def run_policy_infer(args, prof, out):
    from .cache import Hierarchy
    from .inference import infer_policy
    h = Hierarchy(prof, seed=args.seed)
    scores = infer_policy(h, trials=args.trials, seed=args.seed, jitter=args.jitter)
    rows = sorted(scores.items(), key=lambda kv: -kv[1].accuracy)
    with open(out / "accuracy.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "accuracy", "hits", "valid", "trials"])
        for name, s in rows:
            w.writerow([name, f"{s.accuracy:.4f}", s.hits, s.valid, s.trials])
    _say(f"{'model':16s} accuracy  valid")
    for name, s in rows:
        _say(f"{name:16s} {s.accuracy:8.4f}  {s.valid}/{s.trials}")
    return {"best": rows[0][0], "accuracy": {k: v.accuracy for k, v in scores.items()}}


def run_leader_locate(args, prof, out):
    from .cache import Hierarchy
    from .inference import Prober, index_pool, locate_leader_sets, slice_classes
    h = Hierarchy(prof, seed=args.seed)
    pr = Prober(h, seed=args.seed)
    w = prof.ways
    classes = slice_classes(index_pool(h, 0, 4 * w * prof.llc.slice_count), pr, w)
    rep = locate_leader_sets(pr, classes, prof.llc.sets, seed=args.seed)
    res = {"dueling": rep.dueling, "regions": rep.regions, "passes": rep.passes,
           "leaders": {str(k): v for k, v in rep.leaders.items()}}
    _write_json(out / "leaders.json", res)
    _say(f"dueling: {rep.dueling}")
    for m, r in rep.regions.items():
        _say(f"{m} leader regions start at {r}")
    return {"dueling": rep.dueling, "regions": rep.regions}


def _noise_agents(sched, h, cfgs, k, seed):
    from .attacks import eviction_set_for, lockstep_noise_script
    from .scheduler import AgentProgram
    used = [a for c in cfgs for a in c.eviction_set]
    lines = []
    for c in cfgs:
        got = eviction_set_for(h, c.target, k, first_tag=1 << 24, exclude=used)
        used += got
        lines += got
    core = 2 if h.cores > 2 else 0
    sched.add(AgentProgram("noise", core, lockstep_noise_script(lines, 0.5, seed), daemon=True))


def run_attack_aes(args, prof, out):
    import random
    from .attacks import calibrate
    from .cache import Hierarchy
    from .scheduler import AgentProgram, Scheduler
    from .attacks import attacker_script
    from .telemetry import KEY_LINES, aes_attack_configs, recovery_states
    from .victims import AesTTableVictim, aes_last_round_recover, aes_victim_script, random_plaintexts
    if args.key is not None:
        try:
            key = bytes.fromhex(args.key)
        except ValueError:
            raise CliError(EXIT_USAGE, "--key must be hex")
        if len(key) != 16:
            raise CliError(EXIT_USAGE, "--key must be 16 bytes")
    else:
        key = random.Random(args.seed).randbytes(16)
    n = args.samples
    h = Hierarchy(prof, seed=args.seed)
    victim = AesTTableVictim(key)
    lines = KEY_LINES
    cfgs = aes_attack_configs(h, victim, args.technique, lines)
    thr = calibrate(prof, args.technique)
    samples, records = [], []
    sched = Scheduler(h, seed=args.seed, record_trace=args.trace)
    sched.add(AgentProgram("attacker", 0, attacker_script(cfgs, thr, samples, n)))
    sched.add(AgentProgram("victim", 1, aes_victim_script(victim, random_plaintexts(n, args.seed + 1),
                                                          records)))
    if args.noise:
        _noise_agents(sched, h, cfgs, args.noise, args.seed)
    sched.run("lockstep")
    states = recovery_states([r.ciphertext for r in records], samples, lines)
    master, per = aes_last_round_recover(states)
    with open(out / "samples.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["line", "cycle", "reload_time", "refresh_time", "verdict"])
        for s in samples:
            for i, x in enumerate(s):
                w.writerow([i, *x.row()])
    with open(out / "scores.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["position", "guess", "margin"])
        for p in range(16):
            g, m = per[p]
            w.writerow([p, "" if g is None else f"{g:02x}", f"{m:.6f}"])
    if args.trace:
        sched.write_trace_csv(out / "trace.csv")
    ok = master == key
    _say(f"planted   {key.hex()}")
    _say(f"recovered {master.hex() if master else 'ambiguous'}")
    _say(f"match: {ok}  samples per line: {n}")
    return {"planted": key.hex(), "recovered": master.hex() if master else None, "match": ok,
            "samples_per_line": n, "technique": args.technique, "digest": h.digest()}


def run_attack_rsa(args, prof, out):
    from .scheduler import Scheduler
    from .telemetry import run_rsa_scenario
    from .victims import rsa_recover_bits
    run = run_rsa_scenario(prof, args.technique, args.bits, args.seed, args.period)
    v = run.victim
    rec = rsa_recover_bits(run.windows(), len(v.bits()), run.first_op, v.square_cost,
                           v.multiply_cost, v.reduce_cost, truth=v.bits())
    with open(out / "windows.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["start", "end", "accessed"])
        w.writerows(run.windows())
    (out / "recovered_bits.txt").write_text(rec.bits + "\n")
    label = {"rr": "RELOAD+REFRESH", "fr": "FLUSH+RELOAD", "pp": "PRIME+PROBE"}[args.technique]
    _say("technique\tTP\tFP")
    _say(rec.table_row(label))
    _say(f"bits correct: {100 * rec.bit_accuracy:.2f}%")
    for wmsg in rec.warnings:
        _say(f"warning: {wmsg}")
    if args.trace:
        _say("note: attack-rsa traces are not recorded; use attack-aes --trace")
    return {"tp": rec.tp, "fp": rec.fp, "detected": rec.detected, "correct": rec.correct,
            "executed": rec.executed, "bit_accuracy": rec.bit_accuracy, "warnings": rec.warnings}


def run_telemetry(args, prof, out):
    from .telemetry import SCENARIOS, encryption_time_distribution, periodic_miss_trace, \
        per_encryption_miss_histogram
    res = {}
    meta = {"profile": prof.name, "seed": args.seed, "warmup": args.warmup}
    _say("scenario  zero-miss%  mean-cycles  steady-misses/period")
    for sc in SCENARIOS:
        hist = per_encryption_miss_histogram(prof, sc, args.trials, args.seed, args.warmup)
        hist.to_csv(out / f"aes_misses_{sc}.csv", {**meta, "scenario": sc, "n": args.trials})
        td = encryption_time_distribution(prof, sc, min(args.trials, 5000), args.seed, args.warmup)
        td.histogram.to_csv(out / f"aes_time_{sc}.csv", {**meta, "scenario": sc,
                                                        "mean": td.mean, "levels": td.levels})
        tr = periodic_miss_trace(prof, sc, args.bits, args.seed)
        tr.to_csv(out / f"rsa_trace_{sc}.csv", {**meta, "scenario": sc, "period": tr.period,
                                                "steady_mean": tr.steady_mean})
        res[sc] = {"zero_miss": hist.fraction(0), "mean_cycles": td.mean,
                   "steady_mean": tr.steady_mean}
        _say(f"{sc:8s}  {100 * hist.fraction(0):9.3f}  {td.mean:11.1f}  {tr.steady_mean:8.2f}")
    _write_json(out / "summary.json", res)
    return res


# replay

def read_trace(path):
    """Header fields and event rows of a trace; raises CliError when damaged."""
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise CliError(EXIT_TRACE, f"cannot read trace: {e}")
    if not lines or not lines[0].startswith(TRACE_MAGIC):
        raise CliError(EXIT_TRACE, "not a cachelab v1 trace")
    head = dict(kv.split("=", 1) for kv in lines[0][len(TRACE_MAGIC):].split())
    if not lines[-1].startswith("# end "):
        raise CliError(EXIT_TRACE, "trace is truncated (no end marker)")
    foot = dict(kv.split("=", 1) for kv in lines[-1][len("# end "):].split())
    rows = list(csv.reader(lines[2:-1]))
    if len(rows) != int(foot.get("events", -1)):
        raise CliError(EXIT_TRACE, "trace event count does not match its end marker")
    return head, rows, foot


def replay(path) -> tuple[str, str]:
    """Re-run the trace's reads and flushes; returns (recorded digest, replayed digest)."""
    from .cache import Hierarchy
    head, rows, foot = read_trace(path)
    try:
        prof = load_profile(head["profile"])
        if "policy" in head:
            prof = prof.replace(llc_policy=head["policy"])
        h = Hierarchy(prof, seed=int(head["seed"]))
    except (KeyError, ValueError, ProfileError) as e:
        raise CliError(EXIT_TRACE, f"trace header unusable: {e}")
    for r in rows:
        try:
            _, _, event, _, _, core, addr = r
            if event == "read":
                h.access(int(addr, 16), int(core))
            elif event == "flush":
                h.flush(int(addr, 16))
        except ValueError as e:
            raise CliError(EXIT_TRACE, f"bad trace row {r}: {e}")
    return foot.get("digest", ""), h.digest()


RUNNERS = {"policy-infer": run_policy_infer, "leader-locate": run_leader_locate,
           "attack-aes": run_attack_aes, "attack-rsa": run_attack_rsa, "telemetry": run_telemetry}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    first = next((a for a in argv if not a.startswith("-")), None)
    if first is not None and first not in KINDS:
        print(f"cachelab: unknown experiment kind {first!r}; choose from {', '.join(KINDS)}",
              file=sys.stderr)
        return EXIT_KIND
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    if args.kind is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        if args.kind == "replay":
            recorded, got = replay(args.trace_file)
            print(got)
            if recorded and recorded != got:
                print(f"digest mismatch: trace says {recorded}", file=sys.stderr)
                return EXIT_TRACE
            return EXIT_OK
        prof = _profile(args)
        out = _rundir(args, prof)
        manifest = _manifest(out, args, argv, prof)
        t0 = time.time()
        result = RUNNERS[args.kind](args, prof, out)
        manifest.update(result=result, seconds=round(time.time() - t0, 3))
        _write_json(out / "manifest.json", manifest)
        _say(f"artifacts in {out}")
        return EXIT_OK
    except CliError as e:
        print(f"cachelab: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
