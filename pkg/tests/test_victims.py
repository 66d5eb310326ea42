import random

import numpy as np
import pytest
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from hypothesis import given
from hypothesis import strategies as st

from cachelab.victims import (LAST_ROUND_TABLE, LOOKUPS_PER_ENCRYPTION, SBOX, AesTTableVictim,
                              KeyRecoveryState, RsaSqmVictim, aes_last_round_recover,
                              expand_key, fp_rate, invert_key_schedule, match_detections,
                              rsa_recover_bits, tp_rate)


def reference_encrypt(key, pt):
    enc = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    return enc.update(pt) + enc.finalize()


def test_fips197_vector():
    key = bytes(range(16))
    pt = bytes.fromhex("00112233445566778899aabbccddeeff")
    ct, _ = AesTTableVictim(key).encrypt(pt)
    assert ct.hex() == "69c4e0d86a7b0430d8cdb78070b4c55a"


def test_matches_reference_on_many_pairs():
    rng = random.Random(0)
    for _ in range(100):
        v = AesTTableVictim(rng.randbytes(16))
        for _ in range(100):
            pt = rng.randbytes(16)
            assert v.encrypt(pt)[0] == reference_encrypt(v.key, pt)


@given(st.binary(min_size=16, max_size=16))
def test_key_schedule_inverts(key):
    k10 = b"".join(w.to_bytes(4, "big") for w in expand_key(key)[40:44])
    assert invert_key_schedule(k10) == key


def test_sbox_known_entries():
    assert (SBOX[0], SBOX[1], SBOX[0x53], SBOX[255]) == (0x63, 0x7C, 0xED, 0x16)
    assert sorted(SBOX) == list(range(256))


def test_trace_shape():
    v = AesTTableVictim(bytes(16))
    ct, trace = v.encrypt(bytes(16))
    assert len(trace) == LOOKUPS_PER_ENCRYPTION
    last = trace[-16:]
    # last round reads Te2, Te3, Te0, Te1 for byte positions 0..3 of each column
    for p, addr in enumerate(last):
        t = LAST_ROUND_TABLE[p % 4]
        assert v.table_base(t) <= addr < v.table_base(t) + 1024
    all_lines = {a for row in v.lines for a in row}
    assert set(trace) <= all_lines and all(a % 64 == 0 for a in trace)


def test_last_round_line_matches_ciphertext():
    rng = random.Random(3)
    v = AesTTableVictim(rng.randbytes(16))
    k10 = b"".join(w.to_bytes(4, "big") for w in expand_key(v.key)[40:44])
    inv = {s: x for x, s in enumerate(SBOX)}
    for _ in range(50):
        ct, trace = v.encrypt(rng.randbytes(16))
        for p in range(16):
            x = inv[ct[p] ^ k10[p]]
            assert trace[-16 + p] == v.line_address(LAST_ROUND_TABLE[p % 4], x >> 4)


def test_victim_layout_validation():
    with pytest.raises(ValueError):
        AesTTableVictim(bytes(16), base=0x10)
    with pytest.raises(ValueError):
        AesTTableVictim(bytes(16), table_stride=512)
    with pytest.raises(ValueError):
        AesTTableVictim(bytes(16)).encrypt(b"short")


def _observe(v, n, seed, oracle):
    rng = random.Random(seed)
    cts, verdicts = [], []
    for _ in range(n):
        ct, trace = v.encrypt(rng.randbytes(16))
        cts.append(ct)
        verdicts.append([oracle(trace, t) for t in range(4)])
    return cts, verdicts


def _states(cts, verdicts):
    out = []
    for t in range(4):
        st_ = KeyRecoveryState(t, 0)
        st_.add(cts, [v[t] for v in verdicts])
        out.append(st_)
    return out


def test_key_recovery_with_perfect_verdicts():
    v = AesTTableVictim(random.Random(9).randbytes(16))
    cts, verdicts = _observe(v, 5000, 1, lambda tr, t: v.line_address(t, 0) in tr)
    master, per = aes_last_round_recover(_states(cts, verdicts))
    assert master == v.key
    assert all(m > 0 for _, m in per.values())


def test_coin_flip_verdicts_recover_nothing():
    v = AesTTableVictim(random.Random(9).randbytes(16))
    coin = random.Random(4)
    cts, verdicts = _observe(v, 1500, 1, lambda tr, t: coin.random() < 0.5)
    master, _ = aes_last_round_recover(_states(cts, verdicts))
    assert master != v.key


def test_state_counts():
    s = KeyRecoveryState(0, 0)
    s.add([bytes(16)] * 3, [True, False, True])
    assert (s.n_accessed, s.n_idle, s.samples) == (2, 1, 3)
    p = s.positions[0]
    assert s.accessed[p].sum() == 2 * 16 and s.idle[p].sum() == 16


# RSA

def test_operations_for_1011():
    v = RsaSqmVictim("1011")
    assert "".join(v.operations()) == "SRMRSRSRMRSRMR"
    assert v.bits() == "1011"
    assert RsaSqmVictim("1011", skip_leading=True).bits() == "011"


def test_zero_exponent_never_multiplies():
    v = RsaSqmVictim("0000")
    assert "M" not in v.operations()


@given(st.text(alphabet="01", min_size=1, max_size=64))
def test_multiplies_equal_hamming_weight(bits):
    v = RsaSqmVictim(bits)
    assert v.operations().count("M") == bits.count("1")
    trace = v.decrypt_trace(100)
    assert trace[0][0] == 100
    assert trace[-1][0] - 100 == sum(v.iteration_cycles(b) for b in bits) - v.cost[trace[-1][1]]


def test_iteration_cost():
    v = RsaSqmVictim("1")
    assert v.iteration_cycles("1") == 3100 and v.iteration_cycles("0") == 1550
    assert RsaSqmVictim.for_bits(1024).square_cost == 350
    assert len(RsaSqmVictim.for_bits(2048, 1).exponent) == 2048


def test_bad_exponent():
    with pytest.raises(ValueError):
        RsaSqmVictim("")
    with pytest.raises(ValueError):
        RsaSqmVictim("10x")


def test_fp_formula_worked_value():
    assert fp_rate(160, 98) == pytest.approx(0.3875)
    assert fp_rate(0, 0) == 0.0
    assert tp_rate(98, 100) == pytest.approx(0.98)


def _truth_times(bits, start, a, b):
    out, ones = [], 0
    for i, bit in enumerate(bits):
        if bit == "1":
            out.append(start + i * a + ones * b + a)
            ones += 1
    return out


def _ideal_windows(mult, end, period):
    mt = np.asarray(mult)
    wins = []
    s = 0
    while s < end:
        e = s + period
        wins.append((s, e, bool(((mt > s) & (mt <= e)).any())))
        s = e
    return wins


@pytest.mark.parametrize("period", [1000, 1550])
def test_ideal_windows_decode_exactly(period):
    v = RsaSqmVictim.for_bits(256, 2, square_cost=775, multiply_cost=775, reduce_cost=775)
    bits = v.bits()
    start = 5000
    mult = _truth_times(bits, start, 1550, 1550)
    end = start + sum(v.iteration_cycles(b) for b in bits) + period
    rec = rsa_recover_bits(_ideal_windows(mult, end, period), len(bits), start, 775, 775, 775,
                           truth=bits)
    assert rec.bits == bits and rec.bit_accuracy == 1.0
    assert rec.executed == bits.count("1") and rec.correct == rec.executed
    assert rec.fp == 0.0 and not rec.warnings


def test_coarse_windows_warn():
    bits = "1" * 32
    mult = _truth_times(bits, 0, 1550, 1550)
    rec = rsa_recover_bits(_ideal_windows(mult, 32 * 3100, 5000), 32, 0, 775, 775, 775, truth=bits)
    assert rec.warnings and "ambiguous" in rec.warnings[0]


def test_match_detections_counts_windows():
    wins = [(0, 10, True), (10, 20, True), (20, 30, False), (30, 40, True)]
    assert match_detections(wins, [5, 7, 25]) == (3, 1)
