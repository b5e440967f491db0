import itertools

import numpy as np
import pytest

from pbl.matrix import (EnumerationTooLarge, MatrixDomainError, MatrixGameSpec,
                        default_matrix_spec, expected_payoff, matrix_optimum, matrix_step)


def best_response_optimum(spec):
    # Player 2 can reply optimally to each (a1, card2) separately
    n = spec.n_cards
    best = -np.inf
    for p1 in itertools.product(range(spec.n_a1), repeat=n):
        total = 0.0
        for a1 in set(p1):
            senders = [c for c in range(n) if p1[c] == a1]
            for c2 in range(n):
                total += max(sum(spec.payoff[c1, c2, a1, a2] for c1 in senders)
                             for a2 in range(spec.n_a2))
        best = max(best, total / n ** 2)
    return best


def test_default_optimum_and_profile():
    spec = default_matrix_spec()
    value, profile = matrix_optimum(spec)
    assert value == pytest.approx(10.0)
    assert profile.p1 == (2, 0)  # card 1 -> C, card 2 -> A
    assert value == pytest.approx(best_response_optimum(spec))


def test_constant_payoff():
    spec = MatrixGameSpec(np.full((2, 2, 3, 3), 3.5))
    assert matrix_optimum(spec)[0] == pytest.approx(3.5)


def test_random_payoffs_match_best_response_oracle():
    rng = np.random.default_rng(0)
    for _ in range(5):
        spec = MatrixGameSpec(rng.normal(size=(2, 2, 3, 3)))
        assert matrix_optimum(spec)[0] == pytest.approx(best_response_optimum(spec))


def test_relabelling_actions_keeps_optimum():
    spec = default_matrix_spec()
    perm = [2, 0, 1]
    relabelled = MatrixGameSpec(spec.payoff[:, :, perm][:, :, :, perm])
    assert matrix_optimum(relabelled)[0] == pytest.approx(matrix_optimum(spec)[0])


def test_uninformative_profile_is_worse():
    spec = default_matrix_spec()
    p1 = np.tile([0, 1.0, 0], (2, 1))
    p2 = np.zeros((3, 2, 3))
    p2[:, :, 1] = 1
    assert expected_payoff(spec, p1, p2) == pytest.approx(8.0)


def test_matrix_step_and_errors():
    spec = default_matrix_spec()
    obs = matrix_step(spec, 1, (0, 1), 2)
    assert obs.own_card == 1 and obs.a1 == 2
    assert matrix_step(spec, 2, (0, 1), 2, 2) == 10.0
    with pytest.raises(MatrixDomainError):
        matrix_step(spec, 1, (0, 1), 3)
    with pytest.raises(MatrixDomainError):
        MatrixGameSpec(np.zeros((2, 2, 3)))
    with pytest.raises(EnumerationTooLarge):
        matrix_optimum(spec, limit=100)


def test_json_roundtrip(tmp_path):
    spec = default_matrix_spec()
    spec.save(tmp_path / "m.json")
    back = MatrixGameSpec.load(tmp_path / "m.json")
    assert np.array_equal(back.payoff, spec.payoff)
