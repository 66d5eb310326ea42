"""Machine profiles: cache geometry, latencies and timing thresholds."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib


class ProfileError(ValueError):
    """Raised for unknown, unreadable or inconsistent machine profiles."""


def _pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


@dataclass(frozen=True)
class CacheLevelConfig:
    name: str
    sets: int
    ways: int
    latency_cycles: int
    inclusive_of_lower: bool = False
    sliced: bool = False
    slice_count: int = 1
    policy: str = "lru"

    def __post_init__(self):
        if not _pow2(self.sets) or not _pow2(self.slice_count):
            raise ProfileError(f"{self.name}: sets and slice_count must be powers of two")
        if self.ways < 1 or self.latency_cycles <= 0:
            raise ProfileError(f"{self.name}: bad ways/latency")

    @property
    def index_bits(self) -> int:
        return self.sets.bit_length() - 1


@dataclass(frozen=True)
class DuelingConfig:
    """Leader-set layout for set dueling.

    ``leaders_mode1[s]`` lists the set indices of slice ``s`` that always
    insert with mode 1, likewise for mode 2.  psel counts up on misses in
    mode-1 leaders unless ``increment_on`` is 2.
    """

    leaders_mode1: tuple = ()
    leaders_mode2: tuple = ()
    psel_bits: int = 10
    increment_on: int = 1
    psel_init: int | None = None

    @property
    def psel_max(self) -> int:
        return (1 << self.psel_bits) - 1

    @property
    def threshold(self) -> int:
        return 1 << (self.psel_bits - 1)

    @classmethod
    def from_regions(cls, slices, mode1_region=512, mode2_region=768, region_size=64,
                     mode1_offset=3, mode2_offset=9, slice_stride=16, **kw):
        def place(base, off, s):
            return base + (off + s * slice_stride) % region_size
        m1 = tuple((place(mode1_region, mode1_offset, s),) for s in range(slices))
        m2 = tuple((place(mode2_region, mode2_offset, s),) for s in range(slices))
        return cls(leaders_mode1=m1, leaders_mode2=m2, **kw)


INSERTION_MODES = ("mode1", "mode2", "duel")
_MODE_POLICY = {"mode1": "quadage-mode1", "mode2": "quadage-mode2", "duel": "quadage-duel"}


@dataclass(frozen=True)
class MachineProfile:
    name: str
    generation: int
    cores: int
    l1: CacheLevelConfig
    l2: CacheLevelConfig
    llc: CacheLevelConfig
    insertion_mode: str = "mode1"
    memory_latency: int = 345
    ll_threshold: int = 58
    mem_threshold: int = 300
    flush_cycles: int = 40
    cycles_per_sample: int = 100_000
    dueling: DuelingConfig | None = None
    policy_options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.insertion_mode not in INSERTION_MODES:
            raise ProfileError(f"unknown insertion mode {self.insertion_mode!r}")
        lat = [self.l1.latency_cycles, self.l2.latency_cycles, self.llc.latency_cycles,
               self.memory_latency]
        if lat != sorted(set(lat)):
            raise ProfileError("latencies must be strictly increasing L1<L2<LLC<memory")
        if not self.llc.latency_cycles < self.mem_threshold < self.memory_latency:
            raise ProfileError("mem_threshold must separate LLC from memory")
        if not self.l2.latency_cycles < self.ll_threshold < self.memory_latency:
            raise ProfileError("ll_threshold must sit above L2 latency")
        if self.insertion_mode == "duel" and self.dueling is None:
            raise ProfileError("set-dueling profile needs a [dueling] section")
        if self.cores < 1:
            raise ProfileError("cores must be >= 1")

    @property
    def ways(self) -> int:
        return self.llc.ways

    @property
    def llc_policy(self) -> str:
        return self.llc.policy

    def latencies(self) -> dict:
        return {"L1": self.l1.latency_cycles, "L2": self.l2.latency_cycles,
                "LLC": self.llc.latency_cycles, "MEMORY": self.memory_latency}

    def replace(self, **changes) -> "MachineProfile":
        """Copy with top-level fields or ``llc_policy``/``llc_*`` overrides."""
        import dataclasses
        llc = self.llc
        llc_changes = {k[4:]: changes.pop(k) for k in list(changes) if k.startswith("llc_")}
        if llc_changes:
            llc = dataclasses.replace(llc, **llc_changes)
        return dataclasses.replace(self, llc=llc, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _level(name, d, latency, **kw):
    try:
        return CacheLevelConfig(name=name, sets=int(d["sets"]), ways=int(d["ways"]),
                                latency_cycles=int(latency), policy=d.get("policy", "lru"), **kw)
    except KeyError as e:
        raise ProfileError(f"[{name.lower()}] missing key {e}") from None


def profile_from_dict(d: dict) -> MachineProfile:
    try:
        lat = d["latency"]
        mode = d.get("insertion_mode", "mode1")
        slices = int(d["llc"].get("slices", 1))
        llc_d = dict(d["llc"])
        llc_d.setdefault("policy", _MODE_POLICY.get(mode, "quadage-mode1"))
        dueling = None
        if "dueling" in d:
            dd = dict(d["dueling"])
            if "leaders_mode1" in dd:
                dueling = DuelingConfig(
                    leaders_mode1=tuple(tuple(x) for x in dd.pop("leaders_mode1")),
                    leaders_mode2=tuple(tuple(x) for x in dd.pop("leaders_mode2")),
                    **dd)
            else:
                dueling = DuelingConfig.from_regions(slices, **dd)
        thr = d.get("thresholds", {})
        return MachineProfile(
            name=d["name"], generation=int(d.get("generation", 0)), cores=int(d.get("cores", 1)),
            l1=_level("L1", d["l1"], lat["l1"]),
            l2=_level("L2", d["l2"], lat["l2"]),
            llc=_level("LLC", llc_d, lat["llc"], inclusive_of_lower=True,
                       sliced=slices > 1, slice_count=slices),
            insertion_mode=mode, memory_latency=int(lat["memory"]),
            ll_threshold=int(thr.get("ll", 58)), mem_threshold=int(thr.get("mem", 300)),
            flush_cycles=int(d.get("flush_cycles", 40)),
            cycles_per_sample=int(d.get("cycles_per_sample", 100_000)),
            dueling=dueling, policy_options=dict(d.get("policy_options", {})))
    except (KeyError, TypeError) as e:
        raise ProfileError(f"malformed profile: {e}") from None


BUILTIN_DIR = Path(__file__).with_name("profiles")
DEFAULT_PROFILE = "i5-7600K"


def profile_dirs() -> list[Path]:
    dirs = []
    env = os.environ.get("CACHELAB_PROFILE_DIR")
    if env:
        dirs += [Path(p) for p in env.split(os.pathsep) if p]
    dirs.append(BUILTIN_DIR)
    return dirs


def available_profiles() -> list[str]:
    names = set()
    for d in profile_dirs():
        if d.is_dir():
            names.update(p.stem for p in d.glob("*.toml"))
    return sorted(names)


def load_profile(name_or_path: str = DEFAULT_PROFILE) -> MachineProfile:
    p = Path(name_or_path)
    if p.suffix == ".toml" and p.is_file():
        path = p
    else:
        path = next((d / f"{name_or_path}.toml" for d in profile_dirs()
                     if (d / f"{name_or_path}.toml").is_file()), None)
        if path is None:
            raise ProfileError(f"unknown profile {name_or_path!r}; known: {available_profiles()}")
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as e:
        raise ProfileError(f"cannot read profile {path}: {e}") from None
    prof = profile_from_dict(data)
    from .policies import check_policy_name
    check_policy_name(prof.llc.policy)
    check_policy_name(prof.l1.policy)
    check_policy_name(prof.l2.policy)
    return prof
