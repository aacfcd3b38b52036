import math

import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import given

import oracles
from bose2d.errors import UsageError
from bose2d.fock import (
    OccupationState,
    apply_ladder,
    assemble_hamiltonian,
    enumerate_fock,
    enumerate_sector,
    ladder_matrix,
    number_and_momentum,
)
from bose2d.model import FOUR_PI_SQ, ModeSet, Potential


class TestEnumerate:
    def test_two_modes_two_particles(self):
        b = enumerate_sector(2, 2)
        assert [tuple(s) for s in b.states] == [(2, 0), (1, 1), (0, 2)]

    def test_vacuum(self, five_modes):
        b = enumerate_sector(five_modes, 0)
        assert len(b) == 1 and b.states.sum() == 0

    @given(st.integers(1, 6), st.integers(0, 7))
    def test_stars_and_bars(self, m, n):
        b = enumerate_sector(m, n)
        assert len(b) == math.comb(n + m - 1, m - 1)
        rows = [tuple(s) for s in b.states]
        assert rows == sorted(rows, reverse=True)
        assert len(set(rows)) == len(rows)
        assert (b.states.sum(axis=1) == n).all()

    @given(st.lists(st.integers(0, 3), min_size=1, max_size=5), st.integers(0, 8))
    def test_caps_respected_and_complete(self, caps, n):
        b = enumerate_sector(len(caps), n, caps)
        brute = {
            s for s in np.ndindex(*[c + 1 for c in caps]) if sum(s) == n
        }
        assert {tuple(s) for s in b.states} == brute
        for i, s in enumerate(b.states):
            assert b.index(s) == i

    def test_negative_n(self, five_modes):
        with pytest.raises(UsageError):
            enumerate_sector(five_modes, -1)

    def test_lookup_missing(self):
        b = enumerate_sector(3, 2, (1, 1, 1))
        assert b.lookup(np.array([[2, 0, 0], [1, 1, 0]])).tolist() == [-1, b.index((1, 1, 0))]

    def test_fock_sectors(self, five_modes):
        secs = enumerate_fock(five_modes, (1, 1, 2, 1, 1))
        assert sum(len(s) for s in secs) == 2**4 * 3
        assert [s.n for s in secs] == list(range(len(secs)))


class TestLadder:
    def test_annihilate_empty(self, five_modes):
        assert apply_ladder((0, 0, 0, 0, 0), (0, 0), "annihilate", five_modes) is None

    def test_create_amplitude(self, five_modes):
        state, amp = apply_ladder((0, 0, 3, 0, 0), (0, 0), "create", five_modes)
        assert state == (0, 0, 4, 0, 0) and amp == 2.0

    def test_number_operator(self):
        s1, a1 = apply_ladder(OccupationState((5,)), 0, "annihilate")
        s2, a2 = apply_ladder(s1, 0, "create")
        assert tuple(s2) == (5,) and a1 * a2 == pytest.approx(5.0)

    def test_cap_blocks_creation(self):
        assert apply_ladder((2, 0), 0, "create", caps=(2, 2)) is None

    def test_unknown_mode(self, five_modes):
        with pytest.raises(UsageError):
            apply_ladder((0,) * 5, (3, 3), "create", five_modes)

    def test_ladder_matrix_adjoint(self):
        src, dst = enumerate_sector(3, 2), enumerate_sector(3, 3)
        up = ladder_matrix(src, dst, 1, "create").toarray()
        down = ladder_matrix(dst, src, 1, "annihilate").toarray()
        np.testing.assert_allclose(up.T, down, atol=1e-15)


class TestHamiltonian:
    def test_single_mode_diagonal(self):
        S = ModeSet.ball(0)
        for n in range(6):
            H = assemble_hamiltonian(enumerate_sector(S, n), S, Potential.constant(1.0), 1.0).toarray()
            assert H[0, 0] == pytest.approx(0.5 * n * (n - 1), abs=1e-14)

    def test_kinetic_entry(self, five_modes):
        b = enumerate_sector(five_modes, 1)
        H = assemble_hamiltonian(b, five_modes, Potential.constant(1.0), 0.0).toarray()
        i = b.index((1, 0, 0, 0, 0))
        assert H[i, i] == pytest.approx(FOUR_PI_SQ)
        assert np.count_nonzero(H - np.diag(np.diag(H))) == 0

    @pytest.mark.parametrize("n", [2, 3, 4])
    def test_hermitian_and_deterministic(self, five_modes, gaussian_w, n):
        b = enumerate_sector(five_modes, n)
        H1 = assemble_hamiltonian(b, five_modes, gaussian_w, 0.7)
        H2 = assemble_hamiltonian(b, five_modes, gaussian_w, 0.7)
        assert abs(H1 - H1.T).max() < 1e-12
        assert (H1 != H2).nnz == 0

    def test_matches_dense_oracle(self, five_modes, gaussian_w):
        caps = (2, 2, 3, 2, 2)
        dense = oracles.DenseFock([tuple(m) for m in five_modes], caps)
        Hd = dense.hamiltonian(oracles.gaussian_w(1.0, 0.02), 0.5)
        for n in range(sum(caps) + 1):
            b = enumerate_sector(five_modes, n, caps)
            ids = [dense.states.tolist().index(list(s)) for s in b.states]
            H = assemble_hamiltonian(b, five_modes, gaussian_w, 0.5).toarray()
            np.testing.assert_allclose(H, Hd[np.ix_(ids, ids)], atol=1e-11)

    def test_interaction_psd(self, five_modes, gaussian_w):
        for n in (2, 3, 4):
            b = enumerate_sector(five_modes, n)
            assert len(b) <= 200
            full = assemble_hamiltonian(b, five_modes, gaussian_w, 1.0).toarray()
            kin = assemble_hamiltonian(b, five_modes, gaussian_w, 0.0).toarray()
            assert np.linalg.eigvalsh(full - kin).min() >= -1e-10

    def test_table_potential(self, five_modes):
        table = {tuple(q): 0.3 for q in five_modes.transfers()}
        b = enumerate_sector(five_modes, 3)
        A = assemble_hamiltonian(b, five_modes, Potential.from_table(table), 1.0).toarray()
        B = assemble_hamiltonian(b, five_modes, Potential.constant(0.3), 1.0).toarray()
        np.testing.assert_allclose(A, B, atol=1e-14)


class TestNumberMomentum:
    def test_vacuum(self, five_modes):
        N, (px, py) = number_and_momentum(enumerate_sector(five_modes, 0), five_modes)
        assert N.toarray().item() == 0 and px.toarray().item() == 0 and py.toarray().item() == 0

    def test_opposite_pair_has_zero_momentum(self, five_modes):
        b = enumerate_sector(five_modes, 2)
        i = b.index((1, 0, 0, 0, 1))
        _, (px, py) = number_and_momentum(b, five_modes)
        assert px.diagonal()[i] == 0 and py.diagonal()[i] == 0

    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_commutes_with_hamiltonian(self, gaussian_w, n):
        S = ModeSet.ball(math.sqrt(2))
        b = enumerate_sector(S, n)
        H = assemble_hamiltonian(b, S, gaussian_w, 1.0).toarray()
        N, (px, py) = number_and_momentum(b, S)
        assert np.allclose(N.diagonal(), n)
        for P in (px.toarray(), py.toarray()):
            assert np.abs(H @ P - P @ H).max() < 1e-10
