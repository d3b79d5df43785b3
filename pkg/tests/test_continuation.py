import numpy as np
import pytest

from ganhash import autodiff as ad
from ganhash.continuation import (
    ContinuationSchedule,
    advance_stage,
    pack_codes,
    sign_binarize,
    surrogate_activation,
    unpack_codes,
)
from ganhash.datatypes import ValidationError


def surrogate_values(z, beta, kind):
    t = surrogate_activation(ad.Tensor(np.asarray(z, dtype=np.float64)), beta, kind)
    return t.data


class TestSignBinarize:
    def test_zero_goes_positive(self):
        assert sign_binarize(np.array([0.2, -0.1, 0.0])).tolist() == [1.0, -1.0, 1.0]

    def test_idempotent(self):
        z = np.random.default_rng(0).standard_normal(50)
        once = sign_binarize(z)
        assert np.array_equal(sign_binarize(once), once)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValidationError, match="non-finite"):
            sign_binarize(np.array([1.0, np.nan]))

    def test_accepts_tensors(self):
        t = ad.Tensor(np.array([-3.0, 5.0]))
        assert sign_binarize(t).tolist() == [-1.0, 1.0]


class TestSurrogates:
    def test_clip_surrogate_values(self):
        assert surrogate_values([0.3], 2.0, "app")[0] == pytest.approx(0.6)
        assert surrogate_values([0.8], 2.0, "app")[0] == 1.0
        assert surrogate_values([-3.0, 0.4, 2.0], 1.0, "app").tolist() == [-1.0, 0.4, 1.0]

    def test_tanh_surrogate_at_zero(self):
        for beta in (1.0, 5.0, 100.0):
            assert surrogate_values([0.0], beta, "tanh")[0] == 0.0

    def test_range(self):
        z = np.random.default_rng(1).standard_normal(200) * 3
        for kind in ("app", "tanh"):
            v = surrogate_values(z, 7.0, kind)
            assert np.all(v >= -1.0) and np.all(v <= 1.0)

    def test_clip_saturates_at_reciprocal_sharpness(self):
        # once beta >= 1/|z| the clipped surrogate equals the hard sign exactly
        z = np.array([0.5, -0.25, 2.0])
        for beta in (4.0, 10.0, 100.0):
            assert np.array_equal(surrogate_values(z, beta, "app"), sign_binarize(z))

    def test_sign_agreement(self):
        z = np.random.default_rng(2).standard_normal(100)
        z[np.abs(z) < 1e-6] = 0.5
        for kind in ("app", "tanh"):
            for beta in (1.0, 2.0, 5.0, 10.0, 100.0):
                v = surrogate_values(z, beta, kind)
                assert np.array_equal(sign_binarize(v), sign_binarize(z))

    def test_monotone_approach_to_sign(self):
        z = np.concatenate(
            [np.linspace(-4, -0.05, 30), np.linspace(0.05, 4, 30)]
        )
        target = sign_binarize(z)
        for kind in ("app", "tanh"):
            gaps = [
                np.abs(surrogate_values(z, b, kind) - target) for b in (1.0, 2.0, 5.0, 10.0, 100.0)
            ]
            for g1, g2 in zip(gaps, gaps[1:]):
                assert np.all(g2 <= g1 + 1e-15)
            assert np.max(gaps[-1]) < 0.05

    def test_bad_kind(self):
        with pytest.raises(ValidationError, match="surrogate kind"):
            surrogate_activation(ad.Tensor(np.zeros(2)), 1.0, "sign")

    def test_beta_below_one(self):
        with pytest.raises(ValidationError, match="beta"):
            surrogate_activation(ad.Tensor(np.zeros(2)), 0.5, "app")

    def test_gradients_flow(self):
        z = ad.Tensor(np.array([0.1, -0.2, 0.05]), requires_grad=True)
        out = surrogate_activation(z, 3.0, "app")
        ad.backward(ad.ssum(out))
        assert z.grad.tolist() == [3.0, 3.0, 3.0]


class TestSchedule:
    def test_validation(self):
        with pytest.raises(ValidationError):
            ContinuationSchedule(betas=())
        with pytest.raises(ValidationError):
            ContinuationSchedule(betas=(2.0, 5.0))
        with pytest.raises(ValidationError):
            ContinuationSchedule(betas=(1.0, 1.0))
        with pytest.raises(ValidationError):
            ContinuationSchedule(betas=(1.0, 3.0), stage=2)

    def test_beta_property(self):
        s = ContinuationSchedule(betas=(1.0, 3.0, 10.0))
        assert s.beta == 1.0 and not s.is_terminal
        assert ContinuationSchedule(betas=(1.0, 3.0, 10.0), stage=2).is_terminal

    def test_flat_history_advances(self):
        s = ContinuationSchedule(betas=(1.0, 10.0), plateau_window=3)
        assert advance_stage(s, [5.0] * 6).stage == 1

    def test_decreasing_history_holds(self):
        s = ContinuationSchedule(betas=(1.0, 10.0), plateau_window=3)
        assert advance_stage(s, [10.0, 9.0, 8.0, 7.0, 6.0, 5.0]).stage == 0

    def test_short_history_holds(self):
        s = ContinuationSchedule(betas=(1.0, 10.0), plateau_window=3)
        assert advance_stage(s, [5.0] * 5).stage == 0

    def test_terminal_stage_sticks(self):
        s = ContinuationSchedule(betas=(1.0, 10.0), stage=1, plateau_window=2)
        assert advance_stage(s, [1.0] * 10) is s

    def test_empty_history_rejected(self):
        with pytest.raises(ValidationError, match="empty loss history"):
            advance_stage(ContinuationSchedule(betas=(1.0,)), [])

    def test_three_stage_trace_advances_twice(self):
        # plateau, drop, plateau, drop, plateau: ends at the last beta
        s = ContinuationSchedule(betas=(1.0, 3.0, 10.0), plateau_window=2)
        trace = []
        stages = []
        level = 8.0
        for epoch in range(18):
            trace.append(level)
            stages.append(s.stage)
            new = advance_stage(s, trace)
            if new.stage != s.stage:
                s = new
                trace = []
                level -= 3.0  # sharper surrogate shifts the loss level
        assert s.stage == 2
        assert stages.count(0) >= 4 and stages.count(1) >= 4


class TestPacking:
    def test_layout_fixture(self):
        cs = pack_codes([0], np.array([[1, -1, 1, 1]]))
        assert cs.words[0, 0] == 0b1101
        assert cs.n_bits == 4

    def test_round_trip(self):
        rng = np.random.default_rng(3)
        for bits in (1, 12, 48, 63, 64, 65, 130):
            b = sign_binarize(rng.standard_normal((7, bits)))
            cs = pack_codes(np.arange(7), b)
            assert np.array_equal(unpack_codes(cs), b)

    def test_two_word_layout(self):
        b = np.ones((1, 65))
        cs = pack_codes([0], b)
        assert cs.words.shape == (1, 2)
        assert cs.words[0, 1] == 1  # single meaningful bit in the spill word

    def test_non_pm1_rejected(self):
        with pytest.raises(ValidationError, match=r"\+-1"):
            pack_codes([0], np.array([[1.0, 0.5]]))

    def test_width_mismatch(self):
        with pytest.raises(ValidationError, match="columns"):
            pack_codes([0], np.ones((1, 4)), n_bits=8)
