"""What a performance-counter based detector would see from the victim.

The runners here set up a victim plus an optional attacker and return the
per-encryption (AES) or per-period (RSA) miss counts that the victim's own
counters record.  Scenario names are ``none``, ``rr``, ``fr`` and ``pp``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .attacks import AttackConfig, Thresholds, attacker_script, calibrate, eviction_set_for
from .cache import Hierarchy
from .config import MachineProfile
from .scheduler import AgentProgram, Scheduler
from .victims import (AesTTableVictim, KeyRecoveryState, RsaSqmVictim, aes_last_round_recover,
                      aes_victim_script, multiply_times, random_plaintexts, rsa_victim_script)

SCENARIOS = ("none", "rr", "fr", "pp")


def _check_scenario(s):
    if s not in SCENARIOS:
        raise ValueError(f"unknown scenario {s!r}; expected one of {SCENARIOS}")


@dataclass
class Histogram:
    edges: list
    counts: list

    @classmethod
    def of_integers(cls, values) -> "Histogram":
        """One unit-wide bin per integer value from 0 to max."""
        values = np.asarray(list(values), dtype=np.int64)
        top = int(values.max()) + 1 if len(values) else 1
        counts = np.bincount(values, minlength=top)
        return cls(list(range(top + 1)), counts.tolist())

    @classmethod
    def of_values(cls, values, bins: int = 50) -> "Histogram":
        counts, edges = np.histogram(np.asarray(list(values), dtype=float), bins=bins)
        return cls(edges.tolist(), counts.tolist())

    @property
    def total(self) -> int:
        return int(sum(self.counts))

    def percentages(self) -> list[float]:
        n = self.total
        return [100.0 * c / n if n else 0.0 for c in self.counts]

    def fraction(self, bin_index: int) -> float:
        n = self.total
        return self.counts[bin_index] / n if n and bin_index < len(self.counts) else 0.0

    def modes(self) -> int:
        """Number of local maxima among non-empty bins."""
        c = self.counts
        peaks = 0
        for i, x in enumerate(c):
            if x and (i == 0 or c[i - 1] < x) and (i == len(c) - 1 or c[i + 1] <= x):
                peaks += 1
        return peaks

    def rows(self):
        pct = self.percentages()
        for i, n in enumerate(self.counts):
            yield self.edges[i], self.edges[i + 1], n, pct[i]

    def to_csv(self, path, meta: dict | None = None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lo", "hi", "count", "percent"])
            for lo, hi, n, p in self.rows():
                w.writerow([lo, hi, n, f"{p:.4f}"])
        if meta is not None:
            write_sidecar(path, meta)


def write_sidecar(path, meta: dict) -> None:
    with open(f"{path}.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=str)


# AES

@dataclass
class AesRun:
    scenario: str
    records: list
    samples: list
    victim: AesTTableVictim
    configs: list
    hierarchy: Hierarchy
    plaintexts: list

    def steady(self, warmup: int = 100):
        return self.records[warmup:]


def aes_attack_configs(h: Hierarchy, victim: AesTTableVictim, technique: str, lines,
                       **kw) -> list[AttackConfig]:
    """One attack config per monitored (table, line), eviction sets kept disjoint."""
    w = h.profile.llc.ways
    used = []
    cfgs = []
    for table, line in lines:
        target = victim.line_address(table, line)
        ev = eviction_set_for(h, target, w, exclude=used)
        used += ev
        cfgs.append(AttackConfig(technique, target, tuple(ev), **kw))
    return cfgs


def run_aes_scenario(profile: MachineProfile, scenario: str, n: int, seed: int = 0,
                     key: bytes | None = None, lines=((0, 0),), lockstep: bool = True,
                     gap: int = 3000, thresholds: Thresholds | None = None) -> AesRun:
    """Encrypt ``n`` random blocks with an optional attacker on another core.

    In lockstep runs the attacker takes one sample per encryption.
    """
    _check_scenario(scenario)
    import random
    if key is None:
        key = random.Random(seed).randbytes(16)
    h = Hierarchy(profile, seed=seed)
    victim = AesTTableVictim(key)
    pts = list(random_plaintexts(n, seed + 1))
    records, samples, cfgs = [], [], []
    sched = Scheduler(h, seed=seed)
    if scenario != "none":
        thr = thresholds or calibrate(profile, scenario)
        cfgs = aes_attack_configs(h, victim, scenario, lines)
        script = attacker_script(cfgs, thr, samples, n if lockstep else None, lockstep=lockstep)
        sched.add(AgentProgram("attacker", 0, script, daemon=not lockstep))
    sched.add(AgentProgram("victim", 1, aes_victim_script(victim, pts, records,
                                                          yield_each=lockstep, gap=gap)))
    sched.run("lockstep" if lockstep else "concurrent")
    return AesRun(scenario, records, samples, victim, cfgs, h, pts)


KEY_LINES = tuple((t, 0) for t in range(4))


def recovery_states(ciphertexts, samples, lines) -> list[KeyRecoveryState]:
    """Score tables from lockstep samples; ``samples[i][j]`` is line ``j`` for encryption ``i``."""
    states = []
    for j, (t, L) in enumerate(lines):
        st = KeyRecoveryState(t, L)
        st.add(ciphertexts, [s[j].accessed for s in samples])
        states.append(st)
    return states


def recover_aes_key(profile: MachineProfile, key: bytes, n: int, technique: str = "rr",
                    seed: int = 0, lines=KEY_LINES, method: str = "rates"):
    """Monitor one line of each last-round table for ``n`` encryptions and rebuild the key.

    Returns ``(master key or None, per-position (guess, margin))``.
    """
    run = run_aes_scenario(profile, technique, n, seed, key=key, lines=lines)
    states = recovery_states([r.ciphertext for r in run.records], run.samples, lines)
    return aes_last_round_recover(states, method)


def per_encryption_miss_histogram(profile: MachineProfile, scenario: str, n: int,
                                  seed: int = 0, warmup: int = 100, **kw) -> Histogram:
    run = run_aes_scenario(profile, scenario, n + warmup, seed, **kw)
    return Histogram.of_integers(r.misses for r in run.steady(warmup))


@dataclass
class TimeDistribution:
    histogram: Histogram
    mean: float
    # mean reads per encryption served by each level
    levels: dict

    def predicted_mean(self, latencies: dict) -> float:
        return sum(self.levels[k] * latencies[k] for k in self.levels)


def encryption_time_distribution(profile: MachineProfile, scenario: str, n: int, seed: int = 0,
                                 warmup: int = 100, bins: int = 40, **kw) -> TimeDistribution:
    run = run_aes_scenario(profile, scenario, n + warmup, seed, **kw)
    recs = run.steady(warmup)
    times = [r.cycles for r in recs]
    from .victims import LOOKUPS_PER_ENCRYPTION
    k = len(recs) or 1
    levels = {
        "L1": sum(r.l1_hits for r in recs) / k,
        "L2": sum(r.l2_hits for r in recs) / k,
        "LLC": sum(r.llc_accesses - r.misses for r in recs) / k,
        "MEMORY": sum(r.misses for r in recs) / k,
    }
    assert abs(sum(levels.values()) - LOOKUPS_PER_ENCRYPTION) < 1e-9 or not recs
    return TimeDistribution(Histogram.of_values(times, bins), float(np.mean(times)) if times else 0.0,
                            levels)


# RSA

@dataclass
class RsaRun:
    scenario: str
    log: list
    samples: list
    victim: RsaSqmVictim
    config: AttackConfig | None
    end: int
    series: list = field(default_factory=list)
    period: int = 0

    @property
    def first_op(self) -> int:
        return self.log[0][0] if self.log else 0

    def windows(self):
        """(start, end, accessed) per sample.

        A sample sees victim activity from the moment the previous round put
        the target back until its own decisive read.
        """
        out = []
        prev = 0
        for s in self.samples:
            out.append((prev, s.cycle, s.accessed))
            prev = s.cycle if s.reopened is None else s.reopened
        return out


def run_rsa_scenario(profile: MachineProfile, scenario: str, bits: int = 2048, seed: int = 0,
                     sampling_period: int = 3000, period: int | None = None,
                     victim: RsaSqmVictim | None = None, lead_in: int = 0) -> RsaRun:
    """One exponentiation on core 1, attacker on core 0 monitoring the multiply line."""
    _check_scenario(scenario)
    h = Hierarchy(profile, seed=seed)
    victim = victim or RsaSqmVictim.for_bits(bits, seed)
    period = period or profile.cycles_per_sample
    log, samples = [], []
    cfg = None
    sched = Scheduler(h, seed=seed)
    if scenario != "none":
        thr = calibrate(profile, scenario)
        target = victim.code["M"]
        ev = eviction_set_for(h, target, profile.llc.ways)
        cfg = AttackConfig(scenario, target, tuple(ev), sampling_period=sampling_period)
        sched.add(AgentProgram("attacker", 0, attacker_script(cfg, thr, samples, None,
                                                              lockstep=False), daemon=True))
    sched.add(AgentProgram("victim", 1, rsa_victim_script(victim, log), start=lead_in))
    sampler = sched.periodic_sampler("victim", period)
    res = sched.run("concurrent")
    return RsaRun(scenario, log, samples, victim, cfg, res.end_cycle, sampler.series(), period)


@dataclass
class MissTrace:
    scenario: str
    series: list
    period: int
    steady_from: int

    @property
    def steady(self) -> list:
        return self.series[self.steady_from:]

    @property
    def steady_mean(self) -> float:
        s = self.steady
        return float(np.mean(s)) if s else 0.0

    @property
    def init_burst(self) -> int:
        return max(self.series[:self.steady_from], default=0)

    def to_csv(self, path, meta: dict | None = None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["period", "start_cycle", "misses"])
            for i, m in enumerate(self.series):
                w.writerow([i, i * self.period, m])
        if meta is not None:
            write_sidecar(path, meta)


def periodic_miss_trace(profile: MachineProfile, scenario: str, bits: int = 2048, seed: int = 0,
                        period: int | None = None, sampling_period: int = 3000,
                        warmup_periods: int = 1) -> MissTrace:
    """Victim misses per period; the periods holding the initialisation are not steady state."""
    run = run_rsa_scenario(profile, scenario, bits, seed, sampling_period, period)
    p = run.period
    # the last partial period is dropped, it would understate the rate
    full = int(math.floor(run.end / p))
    series = run.series[:full] if full else run.series
    steady_from = min(len(series), run.first_op // p + warmup_periods)
    return MissTrace(scenario, series, p, steady_from)


def rsa_multiply_truth(run: RsaRun) -> list[int]:
    return multiply_times(run.log)
