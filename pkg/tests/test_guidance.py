"""Classifier-free guidance: the log-space mix, its short circuits, and
the null-condition construction."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_counting
from mdmkit.diffusion import LOG_ZERO, NoisyState
from mdmkit.errors import ContractError, DomainError
from mdmkit.guidance import cfg_combine, guided_predict, null_condition


def _grid(rows):
    """Normalized log grid from probability rows."""
    p = np.asarray(rows, dtype=np.float64)
    return np.log(p / p.sum(axis=1, keepdims=True))


def test_hand_example():
    """gamma = 2 against a uniform unconditional squares the conditional
    probabilities (up to normalization): [.49, .04, .01] / .54."""
    cond = _grid([[0.7, 0.2, 0.1]])
    uncond = _grid([[1 / 3, 1 / 3, 1 / 3]])
    out = np.exp(cfg_combine(cond, uncond, 2.0))
    np.testing.assert_allclose(out[0], [0.9074, 0.0741, 0.0185], atol=1e-4)


def test_gamma_one_returns_cond_object():
    cond = _grid([[0.5, 0.25, 0.25]])
    uncond = _grid([[0.1, 0.1, 0.8]])
    assert cfg_combine(cond, uncond, 1.0) is cond


def test_gamma_zero_returns_uncond():
    cond = _grid([[0.5, 0.25, 0.25]])
    uncond = _grid([[0.1, 0.1, 0.8]])
    assert cfg_combine(cond, uncond, 0.0) is uncond


def test_identical_grids_are_a_fixed_point():
    g = _grid([[0.2, 0.3, 0.5], [0.6, 0.2, 0.2]])
    for gamma in (0.3, 1.7, 4.0):
        np.testing.assert_allclose(cfg_combine(g, g.copy(), gamma), g, atol=1e-12)


def test_rows_renormalize():
    rng = np.random.default_rng(0)
    cond = _grid(rng.dirichlet(np.ones(7), size=5))
    uncond = _grid(rng.dirichlet(np.ones(7), size=5))
    for gamma in (0.5, 1.4, 3.0):
        out = cfg_combine(cond, uncond, gamma)
        np.testing.assert_allclose(np.exp(out).sum(axis=1), 1.0, atol=1e-9)
        assert np.all(out >= LOG_ZERO)


def test_gamma_validation():
    g = _grid([[0.5, 0.5]])
    for bad in (-0.1, float("nan"), float("inf")):
        with pytest.raises(DomainError):
            cfg_combine(g, g, bad)


def test_shape_mismatch():
    with pytest.raises(ContractError):
        cfg_combine(_grid([[0.5, 0.5]]), _grid([[0.3, 0.3, 0.4]]), 2.0)


@settings(max_examples=60, deadline=None)
@given(
    probs=st.lists(
        st.floats(min_value=1e-3, max_value=1.0), min_size=3, max_size=6
    ),
    gamma=st.floats(min_value=1.0, max_value=8.0),
)
def test_sharpening_against_uniform(probs, gamma):
    """Against a uniform unconditional, the mix is a power transform of
    the conditional row, so gamma >= 1 never decreases the top token's
    probability and never changes which token is on top."""
    p = np.asarray(probs) / np.sum(probs)
    cond = np.log(p)[None, :]
    uniform = np.full((1, p.size), -np.log(p.size))
    out = np.exp(cfg_combine(cond, uniform, gamma))[0]
    k = int(np.argmax(p))
    assert out[k] >= p[k] - 1e-12
    assert int(np.argmax(out)) == k or p[k] == pytest.approx(out.max(), abs=1e-12)


def test_null_condition_masks_content_keeps_sep():
    cond = np.asarray([7, 8, 9, 2], dtype=np.int64)
    phi = null_condition(cond, mask_id=1, sep_id=2)
    np.testing.assert_array_equal(phi, [1, 1, 1, 2])


def test_null_condition_validation():
    with pytest.raises(DomainError):
        null_condition(np.asarray([], dtype=np.int64), 1, 2)
    with pytest.raises(ContractError):
        null_condition(np.asarray([7, 8], dtype=np.int64), 1, 2)


def test_guided_predict_gamma_one_single_call(small_net, masked_state):
    counting = make_counting(small_net)
    cond = masked_state.tokens[: masked_state.condition_len]
    out = guided_predict(counting, masked_state, cond, 1.0)
    assert counting.calls == 1
    np.testing.assert_array_equal(out, small_net.predict_grid(masked_state))


def test_guided_predict_two_calls_and_phi_state(small_net, masked_state):
    """At gamma != 1 the second call sees the same target but an all-mask
    condition with the separator kept."""
    seen = []

    class Recording:
        vocab = small_net.vocab

        def predict_grid(self, state):
            seen.append(state.tokens.copy())
            return small_net.predict_grid(state)

    cond = masked_state.tokens[: masked_state.condition_len]
    out = guided_predict(Recording(), masked_state, cond, 1.4)
    assert len(seen) == 2
    np.testing.assert_array_equal(seen[0], masked_state.tokens)
    v = small_net.vocab
    np.testing.assert_array_equal(seen[1][:3], [v.mask_id, v.mask_id, v.sep_id])
    np.testing.assert_array_equal(seen[1][3:], masked_state.tokens[3:])

    phi_tokens = masked_state.tokens.copy()
    phi_tokens[:2] = v.mask_id
    phi_state = NoisyState(tokens=phi_tokens, condition_len=3, t=masked_state.t)
    expected = cfg_combine(
        small_net.predict_grid(masked_state),
        small_net.predict_grid(phi_state),
        1.4,
    )
    np.testing.assert_allclose(out, expected, atol=1e-12)
