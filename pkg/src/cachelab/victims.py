"""Victim workloads and the analyses that turn attack samples into secrets.

AES-128 is the classic four-table T-table implementation.  The last round
reuses the encryption tables with byte masks, the way OpenSSL 1.0.x does::

    out0 = (Te2[t0 >> 24] & 0xff000000) ^ (Te3[(t1 >> 16) & 0xff] & 0x00ff0000)
         ^ (Te0[(t2 >> 8) & 0xff] & 0x0000ff00) ^ (Te1[t3 & 0xff] & 0x000000ff) ^ rk[40]

so ciphertext byte ``p`` is ``S[x] ^ k10[p]`` with ``x`` looked up in Te2,
Te3, Te0, Te1 for ``p % 4`` equal to 0, 1, 2, 3.  Each table is 1 KiB,
64-byte aligned, 16 entries per line; line ``L`` of a table holds entries
``16 L .. 16 L + 15``.

RSA is reduced to its control flow: one read of the square, multiply or
reduce code line per operation, followed by the operation's cycle cost.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np

from .scheduler import Read, ReadSeq, Timestamp, Wait, Yield, COUNTERS, TIMESTAMP


# AES tables

def _xtime(b):
    b <<= 1
    return (b ^ 0x11B) & 0xFF if b & 0x100 else b


def _gmul(a, b):
    r = 0
    while b:
        if b & 1:
            r ^= a
        a = _xtime(a)
        b >>= 1
    return r


def _sbox():
    inv = [0] * 256
    for a in range(1, 256):
        for b in range(1, 256):
            if _gmul(a, b) == 1:
                inv[a] = b
                break
    s = []
    for x in range(256):
        b = inv[x]
        y = b
        for k in range(1, 5):
            y ^= ((b << k) | (b >> (8 - k))) & 0xFF
        s.append(y ^ 0x63)
    return s


SBOX = _sbox()


def _ror8(w):
    return ((w >> 8) | (w << 24)) & 0xFFFFFFFF


TE0 = [(_gmul(s, 2) << 24) | (s << 16) | (s << 8) | _gmul(s, 3) for s in SBOX]
TE1 = [_ror8(w) for w in TE0]
TE2 = [_ror8(w) for w in TE1]
TE3 = [_ror8(w) for w in TE2]
TABLES = (TE0, TE1, TE2, TE3)
RCON = (0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1B, 0x36)

# ciphertext byte position p is produced by table LAST_ROUND_TABLE[p % 4]
LAST_ROUND_TABLE = (2, 3, 0, 1)


def _subword(w):
    return (SBOX[w >> 24] << 24) | (SBOX[(w >> 16) & 255] << 16) | \
        (SBOX[(w >> 8) & 255] << 8) | SBOX[w & 255]


def expand_key(key: bytes) -> list[int]:
    if len(key) != 16:
        raise ValueError("AES-128 key must be 16 bytes")
    rk = [int.from_bytes(key[4 * i:4 * i + 4], "big") for i in range(4)]
    for i in range(4, 44):
        t = rk[i - 1]
        if i % 4 == 0:
            t = _subword(((t << 8) | (t >> 24)) & 0xFFFFFFFF) ^ (RCON[i // 4 - 1] << 24)
        rk.append(rk[i - 4] ^ t)
    return rk


def invert_key_schedule(last_round_key: bytes) -> bytes:
    """Master key from the tenth round key."""
    w = [0] * 44
    for i in range(4):
        w[40 + i] = int.from_bytes(last_round_key[4 * i:4 * i + 4], "big")
    for i in range(43, 3, -1):
        t = w[i - 1]
        if i % 4 == 0:
            t = _subword(((t << 8) | (t >> 24)) & 0xFFFFFFFF) ^ (RCON[i // 4 - 1] << 24)
        w[i - 4] = w[i] ^ t
    return b"".join(x.to_bytes(4, "big") for x in w[:4])


@dataclass
class AesTTableVictim:
    key: bytes
    base: int = 0x4000_0000
    table_stride: int = 0x400

    def __post_init__(self):
        if self.base % 64 or self.table_stride % 64 or self.table_stride < 1024:
            raise ValueError("tables must be 64-byte aligned and not overlap")
        self.rk = expand_key(self.key)
        # line address of entry x in table t is lines[t][x >> 4]
        self.lines = [[self.table_base(t) + 64 * L for L in range(16)] for t in range(4)]

    def table_base(self, table: int) -> int:
        return self.base + table * self.table_stride

    def line_address(self, table: int, line: int) -> int:
        return self.lines[table][line]

    def entry_address(self, table: int, index: int) -> int:
        return self.table_base(table) + 4 * index

    def encrypt(self, plaintext: bytes) -> tuple[bytes, list[int]]:
        """Ciphertext plus the line address of every table lookup, in order."""
        if len(plaintext) != 16:
            raise ValueError("AES block is 16 bytes")
        rk = self.rk
        T0, T1, T2, T3 = TABLES
        L0, L1, L2, L3 = self.lines
        trace = []
        add = trace.append
        s0, s1, s2, s3 = (int.from_bytes(plaintext[4 * i:4 * i + 4], "big") ^ rk[i]
                          for i in range(4))
        for r in range(1, 10):
            k = 4 * r
            a0, b1, c2, d3 = s0 >> 24, (s1 >> 16) & 255, (s2 >> 8) & 255, s3 & 255
            a1, b2, c3, d0 = s1 >> 24, (s2 >> 16) & 255, (s3 >> 8) & 255, s0 & 255
            a2, b3, c0, d1 = s2 >> 24, (s3 >> 16) & 255, (s0 >> 8) & 255, s1 & 255
            a3, b0, c1, d2 = s3 >> 24, (s0 >> 16) & 255, (s1 >> 8) & 255, s2 & 255
            add(L0[a0 >> 4]); add(L1[b1 >> 4]); add(L2[c2 >> 4]); add(L3[d3 >> 4])
            add(L0[a1 >> 4]); add(L1[b2 >> 4]); add(L2[c3 >> 4]); add(L3[d0 >> 4])
            add(L0[a2 >> 4]); add(L1[b3 >> 4]); add(L2[c0 >> 4]); add(L3[d1 >> 4])
            add(L0[a3 >> 4]); add(L1[b0 >> 4]); add(L2[c1 >> 4]); add(L3[d2 >> 4])
            s0, s1, s2, s3 = (T0[a0] ^ T1[b1] ^ T2[c2] ^ T3[d3] ^ rk[k],
                              T0[a1] ^ T1[b2] ^ T2[c3] ^ T3[d0] ^ rk[k + 1],
                              T0[a2] ^ T1[b3] ^ T2[c0] ^ T3[d1] ^ rk[k + 2],
                              T0[a3] ^ T1[b0] ^ T2[c1] ^ T3[d2] ^ rk[k + 3])
        out = []
        for i, (w, x, y, z) in enumerate(((s0, s1, s2, s3), (s1, s2, s3, s0),
                                          (s2, s3, s0, s1), (s3, s0, s1, s2))):
            a, b, c, d = w >> 24, (x >> 16) & 255, (y >> 8) & 255, z & 255
            add(L2[a >> 4]); add(L3[b >> 4]); add(L0[c >> 4]); add(L1[d >> 4])
            out.append(((T2[a] & 0xFF000000) ^ (T3[b] & 0x00FF0000) ^ (T0[c] & 0x0000FF00)
                        ^ (T1[d] & 0x000000FF) ^ rk[40 + i]))
        return b"".join(v.to_bytes(4, "big") for v in out), trace


LOOKUPS_PER_ENCRYPTION = 160


@dataclass
class EncryptionRecord:
    ciphertext: bytes
    start: int
    cycles: int
    misses: int
    llc_accesses: int
    l1_hits: int
    l2_hits: int


def aes_victim_script(victim: AesTTableVictim, plaintexts, log: list, yield_each: bool = True,
                      gap: int = 0):
    """One encryption per plaintext, bracketed by counter reads.

    In lockstep runs the victim yields after each encryption; in concurrent
    runs it idles ``gap`` cycles instead.
    """
    for pt in plaintexts:
        c0 = yield COUNTERS
        t0 = yield TIMESTAMP
        ct, trace = victim.encrypt(pt)
        yield ReadSeq(trace)
        t1 = yield TIMESTAMP
        c1 = yield COUNTERS
        d = c1 - c0
        log.append(EncryptionRecord(ct, t0, t1 - t0, d.llc_misses, d.llc_accesses,
                                    d.l1_hits, d.l2_hits))
        if yield_each:
            yield Yield()
        elif gap:
            yield Wait(gap)


def random_plaintexts(n: int, seed: int):
    rng = random.Random(seed)
    for _ in range(n):
        yield rng.randbytes(16)


# last-round key recovery

def line_values(table: int, line: int) -> np.ndarray:
    """Last-round output bytes S[x] for the 16 entries x of one table line."""
    return np.array([SBOX[x] for x in range(16 * line, 16 * line + 16)], dtype=np.uint8)


def positions_for_table(table: int) -> list[int]:
    return [p for p in range(16) if LAST_ROUND_TABLE[p % 4] == table]


@dataclass
class KeyRecoveryState:
    """Counting attack on one monitored table line.

    ``accessed[p, k]`` counts Accessed samples in which key guess ``k`` for
    ciphertext byte ``p`` would put the last-round lookup inside the
    monitored line; ``idle`` counts the same for NotAccessed samples.
    The ranking score is the difference of the two rates: the right guess
    never lands in the line when the line was not touched.
    """

    table: int
    line: int
    accessed: np.ndarray = field(default=None)
    idle: np.ndarray = field(default=None)
    n_accessed: int = 0
    n_idle: int = 0

    def __post_init__(self):
        if self.accessed is None:
            self.accessed = np.zeros((16, 256), dtype=np.int64)
            self.idle = np.zeros((16, 256), dtype=np.int64)
        self.values = line_values(self.table, self.line)
        self.positions = positions_for_table(self.table)

    @property
    def samples(self) -> int:
        return self.n_accessed + self.n_idle

    def add(self, ciphertexts, verdicts) -> None:
        ct = np.frombuffer(b"".join(ciphertexts), dtype=np.uint8).reshape(-1, 16)
        v = np.asarray(verdicts, dtype=bool)
        for p in self.positions:
            guesses = ct[:, p][:, None] ^ self.values[None, :]
            self.accessed[p] += np.bincount(guesses[v].ravel(), minlength=256)
            self.idle[p] += np.bincount(guesses[~v].ravel(), minlength=256)
        self.n_accessed += int(v.sum())
        self.n_idle += int((~v).sum())

    def scores(self, p: int, method: str = "rates") -> np.ndarray:
        if method == "accessed":
            return self.accessed[p].astype(float)
        a = self.accessed[p] / max(self.n_accessed, 1)
        i = self.idle[p] / max(self.n_idle, 1)
        return a - i

    def recover(self, method: str = "rates") -> dict:
        """Position -> (best guess or None when tied, margin over runner-up)."""
        out = {}
        for p in self.positions:
            s = self.scores(p, method)
            order = np.argsort(s)[::-1]
            margin = float(s[order[0]] - s[order[1]])
            out[p] = (int(order[0]) if margin > 0 else None, margin)
        return out


def aes_last_round_recover(states, method: str = "rates") -> tuple[bytes | None, dict]:
    """Combine per-line states into the tenth round key and the master key.

    Returns ``(master_key or None, per_position)`` where per_position maps
    each byte position to ``(guess, margin)``.
    """
    per = {}
    for st in states:
        for p, (g, m) in st.recover(method).items():
            if p not in per or m > per[p][1]:
                per[p] = (g, m)
    if len(per) < 16 or any(g is None for g, _ in per.values()):
        return None, per
    k10 = bytes(per[p][0] for p in range(16))
    return invert_key_schedule(k10), per


# RSA square-and-multiply

SQUARE, MULTIPLY, REDUCE = "S", "M", "R"


@dataclass
class RsaSqmVictim:
    exponent: str
    square_cost: int = 775
    multiply_cost: int = 775
    reduce_cost: int = 775
    code_base: int = 0x7000_0000
    skip_leading: bool = False
    init_lines: int = 512
    data_base: int = 0x5000_0000

    def __post_init__(self):
        if not self.exponent or set(self.exponent) - {"0", "1"}:
            raise ValueError("exponent must be a non-empty bit string")
        # code lines in distinct sets, far apart
        self.code = {SQUARE: self.code_base, MULTIPLY: self.code_base + 0x1040,
                     REDUCE: self.code_base + 0x2080}
        self.cost = {SQUARE: self.square_cost, MULTIPLY: self.multiply_cost,
                     REDUCE: self.reduce_cost}

    @classmethod
    def for_bits(cls, bits: int, seed: int = 0, **kw):
        """Random exponent with its top bit set; 1024-bit keys get cheaper ops."""
        rng = random.Random(seed)
        e = "1" + "".join(rng.choice("01") for _ in range(bits - 1))
        if bits <= 1024:
            kw.setdefault("square_cost", 350)
            kw.setdefault("multiply_cost", 350)
            kw.setdefault("reduce_cost", 350)
        return cls(e, **kw)

    def bits(self) -> str:
        return self.exponent[1:] if self.skip_leading else self.exponent

    def operations(self) -> list[str]:
        ops = []
        for b in self.bits():
            ops += [SQUARE, REDUCE]
            if b == "1":
                ops += [MULTIPLY, REDUCE]
        return ops

    def decrypt_trace(self, start: int = 0) -> list[tuple[int, str, int]]:
        """(start cycle, op, code address) for every operation, costs as configured."""
        t = start
        out = []
        for op in self.operations():
            out.append((t, op, self.code[op]))
            t += self.cost[op]
        return out

    def iteration_cycles(self, bit: str) -> int:
        c = self.square_cost + self.reduce_cost
        return c + (self.multiply_cost + self.reduce_cost if bit == "1" else 0)

    def init_addresses(self) -> list[int]:
        return [self.data_base + 64 * i for i in range(self.init_lines)]


def rsa_victim_script(victim: RsaSqmVictim, log: list, idle_after: int = 0):
    """Runs the exponentiation once; appends (cycle, op) for every operation.

    Every operation takes exactly its configured cost, whatever the code
    fetch latency was, so the schedule does not depend on the attack.
    """
    for a in victim.init_addresses():
        yield Read(a)
    for op in victim.operations():
        t = yield TIMESTAMP
        out = yield Read(victim.code[op])
        log.append((t, op))
        yield Wait(max(0, victim.cost[op] - out.latency))
    if idle_after:
        yield Wait(idle_after)


def multiply_times(log) -> list[int]:
    return [t for t, op in log if op == MULTIPLY]


# RSA exponent recovery

def fp_rate(detected: int, correct: int) -> float:
    """False-positive share as (detected - correct) / detected."""
    if detected <= 0:
        return 0.0
    return (detected - correct) / detected


def tp_rate(correct: int, executed: int) -> float:
    return correct / executed if executed else 0.0


@dataclass
class RsaRecovery:
    bits: str
    bit_accuracy: float
    detected: int
    correct: int
    executed: int
    warnings: list

    @property
    def tp(self) -> float:
        return tp_rate(self.correct, self.executed)

    @property
    def fp(self) -> float:
        return fp_rate(self.detected, self.correct)

    def table_row(self, technique: str) -> str:
        return f"{technique}\tTP {100 * self.tp:.2f}%\tFP {100 * self.fp:.2f}%"


def match_detections(windows, mult_times) -> tuple[int, int]:
    """(detected, correct): windows flagged Accessed, and those that contain a multiply.

    ``windows`` is a list of (start, end, accessed) spans; a window holds
    the multiplies in ``(start, end]``.
    """
    mt = np.asarray(sorted(mult_times), dtype=np.int64)
    detected = correct = 0
    for start, end, acc in windows:
        if not acc:
            continue
        detected += 1
        lo = np.searchsorted(mt, start, side="right")
        hi = np.searchsorted(mt, end, side="right")
        correct += int(hi > lo)
    return detected, correct


def rsa_recover_bits(windows, n_bits: int, start: int, square: int, multiply: int,
                     reduce: int, truth: str | None = None) -> RsaRecovery:
    """Most consistent bit string given which sampling windows saw a multiply.

    The victim's schedule is known up to the bits: the multiply of bit
    ``i`` starts at ``start + i * (square + reduce) + v * (multiply + reduce) + square + reduce``
    where ``v`` counts the ones before ``i``.  A Viterbi pass over (bit
    index, ones so far) scores +1 for the first multiply placed in an
    Accessed window and -1 for any multiply placed in a quiet one; zeros
    are free.  Each state remembers the window of its last multiply.
    """
    warnings = []
    a = square + reduce
    b = multiply + reduce
    spans = [(s, e) for s, e, _ in windows]
    if spans and max(e - s for s, e in spans) > a:
        warnings.append("sampling period exceeds one iteration; bit positions are ambiguous")
    starts = np.array([s for s, _ in spans], dtype=np.int64)
    ends = np.array([e for _, e in spans], dtype=np.int64)
    flags = np.array([acc for _, _, acc in windows], dtype=bool)
    nwin = len(flags)
    NEG = np.iinfo(np.int64).min // 4
    score = np.zeros(1, dtype=np.int64)
    last = np.full(1, -1, dtype=np.int64)
    back = []
    for i in range(n_bits):
        v = np.arange(i + 1)
        t = start + i * a + v * b + a
        # window j covers (end[j-1], end[j]]
        j = np.searchsorted(ends, t, side="left")
        jj = np.minimum(j, max(nwin - 1, 0))
        # gaps between windows are blind: no evidence either way
        inside = (j < nwin) & (t > starts[jj]) if nwin else np.zeros(i + 1, dtype=bool)
        flagged = inside & flags[jj] if nwin else np.zeros(i + 1, dtype=bool)
        reward = np.where(flagged, np.where(last == j, 0, 1), np.where(inside, -1, 0))
        new = np.full(i + 2, NEG, dtype=np.int64)
        new_last = np.full(i + 2, -1, dtype=np.int64)
        new[:i + 1] = score
        new_last[:i + 1] = last
        cand = score + reward
        better = cand > new[1:]
        new[1:] = np.where(better, cand, new[1:])
        new_last[1:] = np.where(better, j, new_last[1:])
        back.append(better)
        score, last = new, new_last
    v = int(np.argmax(score))
    out = []
    for i in range(n_bits - 1, -1, -1):
        bit = bool(back[i][v - 1]) if v > 0 else False
        out.append("1" if bit else "0")
        v -= int(bit)
    bits = "".join(reversed(out))
    acc = 0.0
    truth_mult = []
    if truth is not None:
        acc = sum(x == y for x, y in zip(bits, truth)) / max(len(truth), 1)
        ones = 0
        for i, bit in enumerate(truth):
            if bit == "1":
                truth_mult.append(start + i * a + ones * b + a)
                ones += 1
    detected, correct = match_detections(windows, truth_mult) if truth is not None else (0, 0)
    return RsaRecovery(bits, acc, detected, correct, len(truth_mult), warnings)
