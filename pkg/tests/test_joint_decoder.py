import math

import numpy as np
import pytest

from uraccess.aloha import LdpcSlotDecoder, draw_messages
from uraccess.channel import draw_fading, rng_stream, transmit
from uraccess.gm import GaussianMixture, GmConfig
from uraccess.joint_decoder import (HALF, JointDecoder, JointDecoderConfig, UserBranchState,
                                    fading_prior, msg1_functional_to_fading,
                                    msg2_fading_to_functional, msg3_functional_to_llr, msg3_llrs)
from uraccess.ldpc import LLR_CLAMP, Encoder, bpsk_map, shipped_code

EXACT = GmConfig(merge_distance=None, prune_cum_weight=0.0)


def states_for(llrs, fadings=None):
    out = []
    for k, l in enumerate(llrs):
        s = UserBranchState.initial(1)
        s.llrs = np.array([l], float)
        if fadings is not None:
            s.fading = fadings[k]
        out.append(s)
    return out


def test_msg1_single_user_certain_bit():
    P, y = 2.0, 1.3 - 0.4j
    m = msg1_functional_to_fading(0, 0, states_for([LLR_CLAMP]), y, P, EXACT)
    mean, var = m.moments()
    np.testing.assert_allclose(mean, [y.real / math.sqrt(P), y.imag / math.sqrt(P)], atol=1e-9)
    np.testing.assert_allclose(var, HALF / P, rtol=1e-9)


def test_msg1_unknown_bit_is_symmetric():
    m = msg1_functional_to_fading(0, 0, states_for([0.0, 0.8]), 0.9 + 0.2j, 1.5, EXACT)
    g = np.stack(np.meshgrid(np.linspace(-3, 3, 41), np.linspace(-3, 3, 41)), -1)
    np.testing.assert_allclose(m.pdf(g), m.pdf(-g), rtol=1e-10)


def test_msg1_two_users_matches_grid_bayes():
    P, y, L0, L1 = 1.7, 0.9 - 1.2j, 0.6, -1.1
    m = msg1_functional_to_fading(0, 0, states_for([L0, L1]), y, P, EXACT)
    sp = math.sqrt(P)
    h = np.linspace(-6, 6, 241)
    g = np.linspace(-6, 6, 1201)
    prior_g = np.exp(-g ** 2 / (2 * HALF)) / math.sqrt(2 * math.pi * HALF)

    def part(yp, xu, xj):
        # integral over the other user's fading part on a grid, for each h value
        e = yp - xu * h[:, None] - xj * g[None, :]
        lik = np.exp(-e ** 2 / (2 * HALF)) / math.sqrt(2 * math.pi * HALF)
        return np.trapezoid(lik * prior_g, g, axis=1)

    pu = 1 / (1 + math.exp(-L0))
    pj = 1 / (1 + math.exp(-L1))
    dens = np.zeros((len(h), len(h)))
    for xu, wu in ((sp, pu), (-sp, 1 - pu)):
        for xj, wj in ((sp, pj), (-sp, 1 - pj)):
            dens += wu * wj * np.outer(part(y.real, xu, xj), part(y.imag, xu, xj))
    dh = h[1] - h[0]
    dens /= dens.sum() * dh * dh
    grid = np.stack(np.meshgrid(h, h, indexing="ij"), -1)
    l1 = np.abs(m.pdf(grid) - dens).sum() * dh * dh
    assert l1 < 1e-3


def test_msg2_gaussian_product():
    msgs = [GaussianMixture.single([0.3, -0.2], 0.8) for _ in range(10)]
    q = msg2_fading_to_functional(msgs, EXACT, subset_size=4, rng=rng_stream(0))
    mean, var = q.moments()
    np.testing.assert_allclose(mean, [0.3, -0.2], atol=1e-12)
    np.testing.assert_allclose(var, 0.2, rtol=1e-12)
    one = msg2_fading_to_functional(msgs[:1] + [GaussianMixture.single([5.0, 5.0], 1.0)], EXACT,
                                    subset_size=1, rng=None)
    np.testing.assert_allclose(one.mean, msgs[0].mean)
    for k in (1, 2, 5):
        q = msg2_fading_to_functional([fading_prior()] * k, EXACT)
        np.testing.assert_allclose(q.moments()[1], 1 / (2 * k), rtol=1e-12)


def test_msg3_single_user_coherent_llr():
    P = 2.0
    llr = msg3_functional_to_llr(0, 0, np.ones((1, 5), complex), math.sqrt(P),
                                 states_for([0.0]), P)
    assert llr == pytest.approx(4 * P)
    y0 = msg3_functional_to_llr(0, 0, np.array([[0.7 + 0.1j, -0.3j]]), 0.0, states_for([0.0]), P)
    assert y0 == pytest.approx(0.0, abs=1e-12)


def test_msg3_two_users_matches_quadrature():
    P, y, L1 = 1.5, 0.6 + 0.9j, 0.7
    m0, v0 = np.array([0.8, 0.3]), 0.05
    m1, v1 = np.array([-0.5, 0.6]), 0.1
    rng = rng_stream(1)
    S = 10_000
    h0 = m0[0] + 1j * m0[1] + math.sqrt(v0) * (rng.standard_normal(S) + 1j * rng.standard_normal(S))
    h1 = m1[0] + 1j * m1[1] + math.sqrt(v1) * (rng.standard_normal(S) + 1j * rng.standard_normal(S))
    est = float(msg3_llrs(np.array([y]), 0, np.vstack([h0, h1]),
                          np.array([[0.0], [L1]]), P)[0])
    sp = math.sqrt(P)
    a = np.linspace(-4, 4, 801)
    A, B = np.meshgrid(a, a, indexing="ij")

    def expect(yp, x0, x1, c0, c1):
        w = (np.exp(-(A - c0) ** 2 / (2 * v0)) * np.exp(-(B - c1) ** 2 / (2 * v1))
             / (2 * math.pi * math.sqrt(v0 * v1)))
        f = np.exp(-(yp - x0 * A - x1 * B) ** 2) * w
        return np.trapezoid(np.trapezoid(f, a, axis=1), a)

    p1 = 1 / (1 + math.exp(-L1))
    num = den = 0.0
    for x1, w1 in ((sp, p1), (-sp, 1 - p1)):
        num += w1 * expect(y.real, sp, x1, m0[0], m1[0]) * expect(y.imag, sp, x1, m0[1], m1[1])
        den += w1 * expect(y.real, -sp, x1, m0[0], m1[0]) * expect(y.imag, -sp, x1, m0[1], m1[1])
    assert abs(est - math.log(num / den)) < 0.1


CODE = "ldpc_128_64"


def _slot(decoder, r, ebno_db, seed, t, messages=None):
    rng = rng_stream(seed, t)
    msgs = draw_messages(r, 64, rng) if messages is None else messages
    return decoder.simulate(msgs, 10 ** (ebno_db / 10) * 64 / 128, rng)


def test_identical_messages_give_one_codeword():
    dec = LdpcSlotDecoder(shipped_code(CODE), 64, JointDecoderConfig(T=2, patience=4))
    m = draw_messages(1, 64, rng_stream(2))
    cws, res = _slot(dec, 2, 25.0, 2, 0, np.vstack([m, m]))
    assert len(res.codewords) <= 1


def test_more_attempts_never_lose_codewords():
    # the first attempt consumes the same draws in both decoders, so the
    # four-attempt list must contain the one-attempt list
    pcm = shipped_code(CODE)
    enc = Encoder(pcm, 64)
    one = JointDecoder(pcm, 3.0, JointDecoderConfig(T=2, attempts=1, patience=3, outer_iters=10))
    four = JointDecoder(pcm, 3.0, JointDecoderConfig(T=2, attempts=4, patience=3, outer_iters=10))
    for t in range(6):
        rng = rng_stream(3, t)
        cws = enc.encode(draw_messages(2, 64, rng))
        rx = transmit([bpsk_map(c, 3.0) for c in cws], draw_fading(2, rng), rng=rng)
        a = one.decode(rx, rng_stream(5, t))
        b = four.decode(rx, rng_stream(5, t))
        assert {c.tobytes() for c in a.codewords} <= {c.tobytes() for c in b.codewords}
        for c in b.codewords:
            assert pcm.is_codeword(c)


@pytest.mark.slow
def test_single_user_high_snr_is_found():
    dec = LdpcSlotDecoder(shipped_code(CODE), 64, JointDecoderConfig(patience=4))
    ok = 0
    for t in range(200):
        cws, res = _slot(dec, 1, 30.0, 4, t)
        ok += len(res.codewords) == 1 and res.contains(cws[0])
    assert ok >= 198


@pytest.mark.slow
def test_empty_slot_returns_empty_list():
    dec = LdpcSlotDecoder(shipped_code(CODE), 64, JointDecoderConfig())
    empty = sum(len(_slot(dec, 0, 10.0, 5, t)[1].codewords) == 0 for t in range(200))
    assert empty >= 198
