import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uraccess.channel import rng_stream
from uraccess.ldpc import (LLR_CLAMP, BpDecoder, CodeError, Encoder, ParityCheckMatrix, bp_decode,
                           bpsk_map, construct_code, encode, format_alist, load_parity_matrix,
                           parse_alist, shipped_code, shipped_code_names)

TOY = """5 3
2 3
1 2 2 2 1
2 3 3
1 0
1 2
2 3
2 3
3 0
1 2 0
2 3 4
3 4 5
"""


def test_toy_alist_parses():
    pcm = parse_alist(TOY)
    assert (pcm.n, pcm.m) == (5, 3)
    np.testing.assert_array_equal(pcm.row_degrees, [2, 3, 3])
    np.testing.assert_array_equal(pcm.col_degrees, [1, 2, 2, 2, 1])
    assert parse_alist(format_alist(pcm)).H.tolist() == pcm.H.tolist()


def test_alist_zero_degree_row_rejected():
    bad = TOY.replace("2 3 3\n", "0 3 3\n", 1)
    with pytest.raises(CodeError):
        parse_alist(bad)


def test_alist_inconsistent_lists_rejected():
    with pytest.raises(CodeError):
        parse_alist(TOY.replace("3 4 5\n", "1 4 5\n"))
    with pytest.raises(CodeError):
        parse_alist(TOY.replace("2 3\n1 2 2", "2 2\n1 2 2", 1))
    with pytest.raises(CodeError):
        parse_alist("5 3\n2 2\n1 2")


def test_load_from_file(tmp_path):
    p = tmp_path / "toy.alist"
    p.write_text(TOY)
    assert load_parity_matrix(p).n == 5


def test_shipped_codes():
    assert {"ldpc_400_100", "ldpc_200_100", "ldpc_32_16"} <= set(shipped_code_names())
    pcm = shipped_code("ldpc_400_100")
    assert pcm.n == 400 and pcm.n - pcm.m == 100
    Encoder(pcm, 100)     # full rank, systematic encoder exists


def test_encode_and_bpsk():
    pcm = shipped_code("ldpc_128_64")
    enc = Encoder(pcm, 64)
    z = enc.encode(np.zeros(64, np.uint8))
    assert not z.any()
    np.testing.assert_array_equal(bpsk_map(z, 2.0), np.full(128, math.sqrt(2.0)))
    msgs = rng_stream(0).integers(0, 2, (50, 64), dtype=np.uint8)
    cws = enc.encode(msgs)
    for m, c in zip(msgs, cws):
        assert pcm.is_codeword(c)
        np.testing.assert_array_equal(enc.extract(c), m)
        s = bpsk_map(c, 0.7)
        assert np.sum(np.abs(s) ** 2) == pytest.approx(128 * 0.7)
        assert np.all(s.imag == 0)


def test_rank_deficient_code_rejected():
    # rank 2, so only n - 2 = 2 information bits fit
    H = np.array([[1, 1, 0, 0], [1, 1, 0, 0], [0, 0, 1, 1]], np.uint8)
    Encoder(ParityCheckMatrix(H), 2)
    with pytest.raises(CodeError):
        Encoder(ParityCheckMatrix(H), 3)


def test_noiseless_llrs_converge_immediately():
    pcm = shipped_code("ldpc_128_64")
    c = encode(rng_stream(1).integers(0, 2, 64), pcm)
    out = bp_decode(20.0 * (1 - 2.0 * c), pcm)
    assert out.converged and out.iterations_used == 1
    np.testing.assert_array_equal(out.bits, c)


def test_far_non_codeword_fails():
    pcm = shipped_code("ldpc_128_64")
    signs = rng_stream(2).choice([-1.0, 1.0], 128)
    out = bp_decode(20.0 * signs, pcm)
    assert not out.converged


def test_tree_code_marginals_match_enumeration():
    # cycle-free Tanner graph: the two checks share only variable 2
    H = np.array([[1, 1, 1, 0, 0], [0, 0, 1, 1, 1]], np.uint8)
    pcm = ParityCheckMatrix(H)
    words = [np.array(b, np.uint8) for b in itertools.product((0, 1), repeat=5)
             if pcm.is_codeword(np.array(b, np.uint8))]
    assert len(words) <= 16
    L = rng_stream(3).normal(0, 2, 5)
    # bitwise-MAP by brute force: P(c) ∝ exp(sum_j (1 - 2 c_j) L_j / 2)
    logp = np.array([0.5 * np.sum((1 - 2.0 * w) * L) for w in words])
    p = np.exp(logp - logp.max())
    p /= p.sum()
    W = np.array(words)
    p0 = p @ (W == 0)
    exact = np.log(p0) - np.log1p(-p0)
    out = BpDecoder(pcm).decode(L, max_iters=10, early_stop=False)
    np.testing.assert_allclose(out.posterior, exact, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32), st.floats(0.1, 1.5))
def test_min_sum_scale_invariant(seed, scale):
    pcm = shipped_code("ldpc_32_16")
    rng = rng_stream(seed)
    c = encode(rng.integers(0, 2, 16), pcm)
    llr = (1 - 2.0 * c) * 2.0 + rng.normal(0, 2.0, 32)
    llr = np.clip(llr, -15, 15)        # stay clear of the clamp after scaling
    a = bp_decode(llr, pcm, 20, "min-sum")
    b = bp_decode(scale * llr, pcm, 20, "min-sum")
    np.testing.assert_array_equal(a.bits, b.bits)
    assert a.converged == b.converged and a.iterations_used == b.iterations_used


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32), st.sampled_from(["sum-product", "min-sum"]))
def test_converged_implies_zero_syndrome(seed, variant):
    pcm = shipped_code("ldpc_128_64")
    rng = rng_stream(seed)
    c = encode(rng.integers(0, 2, 64), pcm)
    llr = 4 * (1 - 2.0 * c) / 1.0 + rng.normal(0, 2.0, 128) * 1.5
    out = bp_decode(llr, pcm, 50, variant)
    if out.converged:
        assert not pcm.syndrome(out.bits).any()
    assert np.all(np.abs(out.posterior) <= 2 * LLR_CLAMP * pcm.col_degrees.max())


def test_fer_monotone_on_biawgn():
    pcm = shipped_code("ldpc_128_64")
    enc, dec = Encoder(pcm, 64), BpDecoder(pcm)
    rate = 0.5
    grid = np.arange(1.0, 4.1, 0.6)           # Eb/N0 in dB, 6 points
    fer = []
    for i, eb in enumerate(grid):
        rng = rng_stream(4, i)
        sigma2 = 1 / (2 * rate * 10 ** (eb / 10))
        err = 0
        for _ in range(1000):
            c = enc.encode(rng.integers(0, 2, 64, dtype=np.uint8))
            y = (1 - 2.0 * c) + math.sqrt(sigma2) * rng.standard_normal(128)
            out = dec.decode(2 * y / sigma2, 50)
            err += not (out.converged and np.array_equal(out.bits, c))
        fer.append(err / 1000)
    fer = np.array(fer)
    se = np.sqrt(np.maximum(fer * (1 - fer), 1 / 1000) / 1000)
    inversions = [i for i in range(5) if fer[i + 1] > fer[i]]
    assert len(inversions) <= 1
    for i in inversions:
        assert fer[i + 1] - fer[i] <= 2 * math.hypot(se[i], se[i + 1])
    assert fer[0] > fer[-1]


def test_constructed_code_has_odd_checks():
    pcm = construct_code(64, 32, seed=5)
    assert np.all(pcm.row_degrees % 2 == 1)
    Encoder(pcm, 32)
