"""Grand-canonical Gibbs states on the truncated Fock space.

Each particle-number sector is split into the connected components of the
Hamiltonian's sparsity graph (these refine the total-momentum blocks) and
every component is diagonalized densely.  Blocks of equal size are stacked
and diagonalized in one batched ``eigh`` call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.special import gammaln, logsumexp

from .errors import DivergenceError, DomainError, TruncationError, UsageError
from .fock import SectorBasis, assemble_hamiltonian, enumerate_fock, enumerate_sector, interaction_terms
from .model import ModeSet, Potential, coupling_schedule

DEFAULT_MAX_BLOCK_DIM = 5000
DEFAULT_MAX_STATES = 20_000_000


@dataclass(eq=False)
class GibbsSolution:
    """Spectral data and thermodynamics of one Gibbs state.

    Eigenstates are stored block by block: block ``b`` covers eigen-slots
    ``block_start[b] : block_start[b] + block_size[b]`` and its eigenvectors
    sit in ``vectors[vec_start[b]:...]`` as a row-major ``(size, size)``
    matrix whose columns are eigenvectors over the block's basis states.
    """

    modes: ModeSet
    potential: Potential
    kappa: float
    T: float
    lam: float
    nu: float
    E0: float
    caps: tuple[int, ...]
    sectors: list[SectorBasis]
    states: np.ndarray  # (n_states, n_modes), sectors concatenated
    state_block: np.ndarray
    state_local: np.ndarray
    block_states: np.ndarray  # global state ids in block order
    block_start: np.ndarray
    block_size: np.ndarray
    vec_start: np.ndarray
    vectors: np.ndarray
    energies: np.ndarray  # eigenvalues of H, block order
    eigen_n: np.ndarray
    log_z: float = 0.0
    sector_log_weights: np.ndarray = field(default=None)
    diagnostics: dict = field(default_factory=dict)

    @property
    def partition_function(self) -> float:
        return math.exp(self.log_z)

    @property
    def free_energy(self) -> float:
        return -self.T * self.log_z + self.E0

    @cached_property
    def probabilities(self) -> np.ndarray:
        return np.exp(-(self.energies - self.nu * self.eigen_n) / self.T - self.log_z)

    @property
    def mean_particle_number(self) -> float:
        return float(np.dot(self.probabilities, self.eigen_n))

    def expected_binomial(self, k: int) -> float:
        """``E[C(N, k)]`` under the Gibbs weights."""
        n = self.eigen_n.astype(float)
        logc = np.where(n >= k, gammaln(n + 1) - gammaln(k + 1) - gammaln(np.maximum(n - k, 0) + 1), -np.inf)
        return float(np.dot(self.probabilities, np.exp(logc)))

    @property
    def sector_shares(self) -> np.ndarray:
        return np.exp(self.sector_log_weights - self.log_z)

    @cached_property
    def state_probabilities(self) -> np.ndarray:
        """Diagonal of the density matrix in the occupation basis."""
        out = np.zeros(len(self.states))
        p = self.probabilities
        for size, blocks in self._size_groups().items():
            vecs = self._stack_vectors(blocks, size)
            pb = p[self.block_start[blocks][:, None] + np.arange(size)]
            diag = np.einsum("bij,bj->bi", vecs * vecs, pb)
            ids = self.block_states[self.block_start[blocks][:, None] + np.arange(size)]
            out[ids] = diag
        return out

    @cached_property
    def boundary_weights(self) -> np.ndarray:
        """Probability that mode ``m`` sits exactly at its cap."""
        sp_ = self.state_probabilities
        caps = np.asarray(self.caps)
        return np.array([sp_[self.states[:, m] == caps[m]].sum() for m in range(len(caps))])

    @property
    def top_sector_share(self) -> float:
        return float(self.sector_shares[-1])

    @property
    def tail(self) -> float:
        """Weight share of the highest retained sector."""
        return self.top_sector_share

    def _size_groups(self) -> dict[int, np.ndarray]:
        groups = {}
        for size in np.unique(self.block_size):
            groups[int(size)] = np.flatnonzero(self.block_size == size)
        return groups

    def _stack_vectors(self, blocks: np.ndarray, size: int) -> np.ndarray:
        idx = self.vec_start[blocks][:, None] + np.arange(size * size)
        return self.vectors[idx].reshape(len(blocks), size, size)

    def block_densities(self) -> np.ndarray:
        """Flat storage of each block's density matrix, same layout as ``vectors``."""
        return self._block_densities

    @cached_property
    def _block_densities(self) -> np.ndarray:
        out = np.empty_like(self.vectors)
        p = self.probabilities
        for size, blocks in self._size_groups().items():
            vecs = self._stack_vectors(blocks, size)
            pb = p[self.block_start[blocks][:, None] + np.arange(size)]
            rho = np.einsum("bij,bj,bkj->bik", vecs, pb, vecs)
            idx = self.vec_start[blocks][:, None] + np.arange(size * size)
            out[idx] = rho.reshape(len(blocks), -1)
        return out

    @cached_property
    def _global_codes(self):
        radix = np.array([c + 1 for c in self.caps], dtype=np.int64)
        w = np.ones(len(radix), dtype=np.int64)
        for i in range(len(radix) - 2, -1, -1):
            w[i] = w[i + 1] * radix[i + 1]
        codes = self.states @ w
        order = np.argsort(codes, kind="stable")
        return w, codes[order], order

    def lookup(self, states: np.ndarray) -> np.ndarray:
        """Global ids of occupation vectors, ``-1`` if outside the truncation."""
        states = np.asarray(states, dtype=np.int64)
        out = np.full(states.shape[0], -1, dtype=np.int64)
        ok = (states >= 0).all(axis=1) & (states <= np.asarray(self.caps)).all(axis=1)
        if not ok.any():
            return out
        w, sorted_codes, order = self._global_codes
        codes = states[ok] @ w
        pos = np.minimum(np.searchsorted(sorted_codes, codes), len(sorted_codes) - 1)
        out[ok] = np.where(sorted_codes[pos] == codes, order[pos], -1)
        return out

    def sector_density(self, n: int) -> np.ndarray:
        """Dense ``Gamma_n`` (unnormalized by sector) in the sector basis order."""
        basis = self.sectors[n]
        first = int(self.diagnostics["sector_offsets"][n])
        dim = len(basis)
        rho = self.block_densities()
        out = np.zeros((dim, dim))
        ids = np.arange(first, first + dim)
        blocks = np.unique(self.state_block[ids])
        for b in blocks:
            s = int(self.block_size[b])
            members = self.block_states[self.block_start[b]:self.block_start[b] + s] - first
            out[np.ix_(members, members)] = rho[self.vec_start[b]:self.vec_start[b] + s * s].reshape(s, s)
        return out

    def summary(self) -> dict:
        return {
            "T": self.T,
            "lambda": self.lam,
            "nu": self.nu,
            "E0": self.E0,
            "log_Z": self.log_z,
            "F": self.free_energy,
            "mean_N": self.mean_particle_number,
            "caps": " ".join(str(c) for c in self.caps),
            "tail": self.tail,
        }


def _check_divergence(modes: ModeSet, w: Potential, lam: float, nu: float) -> None:
    free = lam == 0 or not interaction_terms(modes, w)
    if free and nu >= float(modes.kinetic.min()):
        raise DivergenceError(
            f"non-interacting partition function diverges: nu = {nu} >= lowest kinetic energy"
        )


def _split_sector(basis: SectorBasis, modes: ModeSet, w: Potential, lam: float, interacting: bool):
    """Connected components of H on one sector as (labels, coo entries)."""
    dim = len(basis)
    if not interacting or basis.n < 2:
        diag = basis.states @ modes.kinetic
        return np.arange(dim), dim, (np.arange(dim), np.arange(dim), diag.astype(float))
    h = assemble_hamiltonian(basis, modes, w, lam).tocoo()
    ncomp, labels = connected_components(h, directed=False)
    return labels, ncomp, (h.row, h.col, h.data)


def gibbs_state(
    modes: ModeSet,
    w: Potential,
    kappa: float,
    T: float,
    lam: float,
    caps,
    *,
    nu: float | None = None,
    E0: float | None = None,
    max_block_dim: int = DEFAULT_MAX_BLOCK_DIM,
    max_states: int = DEFAULT_MAX_STATES,
) -> GibbsSolution:
    """Exact Gibbs state ``exp(-(H - nu N)/T)/Z`` on the capped Fock space.

    ``nu`` and ``E0`` default to the coupled schedule values for ``(T, lam)``.
    """
    if not T > 0:
        raise DomainError(f"T must be > 0, got {T}")
    sched_nu, sched_e0 = coupling_schedule(modes, w, kappa, T, lam)
    nu = sched_nu if nu is None else float(nu)
    E0 = sched_e0 if E0 is None else float(E0)
    _check_divergence(modes, w, lam, nu)
    caps = tuple(int(c) for c in caps)
    sectors = enumerate_fock(modes, caps, max_states=max_states)
    interacting = lam > 0 and bool(interaction_terms(modes, w))

    n_states = sum(len(b) for b in sectors)
    states = np.concatenate([b.states for b in sectors])
    state_block = np.empty(n_states, dtype=np.int64)
    state_local = np.empty(n_states, dtype=np.int64)
    block_states_parts, block_size_parts = [], []
    energies = np.empty(n_states)
    eigen_n = np.empty(n_states, dtype=np.int64)
    vec_parts = []
    sector_offsets = np.zeros(len(sectors) + 1, dtype=np.int64)
    n_blocks = 0
    slot = 0
    max_seen = 0

    for basis in sectors:
        first = sector_offsets[basis.n]
        dim = len(basis)
        sector_offsets[basis.n + 1] = first + dim
        labels, ncomp, (rows, cols, vals) = _split_sector(basis, modes, w, lam, interacting)
        perm = np.argsort(labels, kind="stable")
        sizes = np.bincount(labels, minlength=ncomp)
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        local = np.empty(dim, dtype=np.int64)
        local[perm] = np.arange(dim) - starts[labels[perm]]
        max_seen = max(max_seen, int(sizes.max()))
        if sizes.max() > max_block_dim:
            raise TruncationError(
                f"sector n={basis.n} has a block of dimension {sizes.max()} > {max_block_dim}",
                {"caps": caps, "n": basis.n},
            )
        vstarts = np.concatenate([[0], np.cumsum(sizes * sizes)[:-1]])
        dense = np.zeros(int((sizes * sizes).sum()))
        lab = labels[rows]
        np.add.at(dense, vstarts[lab] + local[rows] * sizes[lab] + local[cols], vals)
        vecs = np.zeros_like(dense)
        evals = np.empty(dim)
        for size in np.unique(sizes):
            comps = np.flatnonzero(sizes == size)
            idx = vstarts[comps][:, None] + np.arange(size * size)
            if size == 1:
                ev = dense[idx[:, 0]][:, None]
                vv = np.ones((len(comps), 1, 1))
            else:
                ev, vv = np.linalg.eigh(dense[idx].reshape(len(comps), size, size))
            evals[starts[comps][:, None] + np.arange(size)] = ev
            vecs[idx] = vv.reshape(len(comps), -1)

        state_block[first:first + dim] = labels + n_blocks
        state_local[first:first + dim] = local
        block_states_parts.append(perm + first)
        block_size_parts.append(sizes)
        energies[slot:slot + dim] = evals
        eigen_n[slot:slot + dim] = basis.n
        vec_parts.append(vecs)
        slot += dim
        n_blocks += ncomp

    block_size = np.concatenate(block_size_parts)
    block_start = np.concatenate([[0], np.cumsum(block_size)[:-1]])
    vec_start = np.concatenate([[0], np.cumsum(block_size * block_size)[:-1]])
    x = -(energies - nu * eigen_n) / T
    log_z = float(logsumexp(x))
    sector_log_weights = np.array(
        [logsumexp(x[sector_offsets[n]:sector_offsets[n + 1]]) for n in range(len(sectors))]
    )
    return GibbsSolution(
        modes=modes,
        potential=w,
        kappa=float(kappa),
        T=float(T),
        lam=float(lam),
        nu=nu,
        E0=E0,
        caps=caps,
        sectors=sectors,
        states=states,
        state_block=state_block,
        state_local=state_local,
        block_states=np.concatenate(block_states_parts),
        block_start=block_start,
        block_size=block_size,
        vec_start=vec_start,
        vectors=np.concatenate(vec_parts),
        energies=energies,
        eigen_n=eigen_n,
        log_z=log_z,
        sector_log_weights=sector_log_weights,
        diagnostics={"sector_offsets": sector_offsets, "max_block_dim": max_seen, "n_states": n_states},
    )


def free_energy_noninteracting(modes: ModeSet, kappa: float, T: float) -> float:
    """Closed form ``T * sum log(1 - exp(-(|k|^2 + kappa)/T))``."""
    if not kappa > 0 or not T > 0:
        raise DomainError("kappa and T must be > 0")
    x = (modes.kinetic + kappa) / T
    # log(1 - e^-x), accurate on both sides of x = log 2
    terms = np.where(x < math.log(2.0), np.log(-np.expm1(-np.minimum(x, 1.0))), np.log1p(-np.exp(-np.maximum(x, 0.5))))
    return float(T * math.fsum(terms))


def free_energy_functional(weights: np.ndarray, sol: GibbsSolution) -> float:
    """``tr[(H - nu N) G] + T tr[G log G] + E0`` for a state diagonal in H's eigenbasis.

    ``weights`` are the state's eigenvalues, aligned with ``sol.energies``.
    """
    p = np.asarray(weights, dtype=float)
    if p.shape != sol.energies.shape:
        raise UsageError("weights must align with the solution's eigenstates")
    if (p < 0).any() or abs(p.sum() - 1.0) > 1e-10:
        raise UsageError("state must be positive with unit trace")
    energy = np.dot(p, sol.energies - sol.nu * sol.eigen_n)
    nz = p > 0
    entropy_term = np.dot(p[nz], np.log(p[nz]))
    return float(energy + sol.T * entropy_term + sol.E0)


def thermal_weights(sol: GibbsSolution, T: float) -> np.ndarray:
    """Eigen-weights of the Gibbs state at another temperature (same H, nu)."""
    x = -(sol.energies - sol.nu * sol.eigen_n) / T
    return np.exp(x - logsumexp(x))


def vacuum_weights(sol: GibbsSolution) -> np.ndarray:
    p = np.zeros_like(sol.energies)
    p[np.flatnonzero(sol.eigen_n == 0)[0]] = 1.0
    return p


@dataclass(frozen=True)
class DensityMatrix:
    order: int
    basis: SectorBasis
    matrix: np.ndarray

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        return bool(np.abs(self.matrix - self.matrix.conj().T).max(initial=0.0) <= tol)

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.conj().T)).min())


def _log_falling(n: np.ndarray, a: np.ndarray) -> np.ndarray:
    """``sum_m log(n_m! / (n_m - a_m)!)`` row-wise (requires ``n >= a``)."""
    return (gammaln(n + 1) - gammaln(n - a + 1)).sum(axis=1)


def _correlator_rdm(sol: GibbsSolution, k: int, basis: SectorBasis) -> np.ndarray:
    rho = sol.block_densities()
    occ = basis.states
    momenta = occ @ sol.modes.indices
    log_fact = gammaln(occ + 1).sum(axis=1)
    dim = len(basis)
    out = np.zeros((dim, dim))
    states = sol.states
    for a in range(dim):
        can = (states >= occ[a]).all(axis=1)
        src = np.flatnonzero(can)
        if not len(src):
            continue
        base = states[src] - occ[a]
        log_amp_a = _log_falling(states[src], np.broadcast_to(occ[a], base.shape))
        for b in range(dim):
            if (momenta[a] != momenta[b]).any():
                continue
            tgt_states = base + occ[b]
            tgt = sol.lookup(tgt_states)
            ok = tgt >= 0
            if not ok.any():
                continue
            s_ok, t_ok = src[ok], tgt[ok]
            blk = sol.state_block[s_ok]
            same = blk == sol.state_block[t_ok]
            s_ok, t_ok, blk = s_ok[same], t_ok[same], blk[same]
            log_amp = 0.5 * (log_amp_a[ok][same] + _log_falling(tgt_states[ok][same], np.broadcast_to(occ[b], (len(t_ok), occ.shape[1]))))
            size = sol.block_size[blk]
            vals = rho[sol.vec_start[blk] + sol.state_local[s_ok] * size + sol.state_local[t_ok]]
            out[a, b] = np.dot(np.exp(log_amp - 0.5 * (log_fact[a] + log_fact[b])), vals)
    return out


def partial_trace_reduction(gamma_n: np.ndarray, basis_n: SectorBasis, k: int) -> np.ndarray:
    """``C(n, k)`` times the partial trace of an ``n``-particle block over ``n - k`` particles.

    Works directly on occupation vectors: removing ``r`` particles maps
    ``|n>`` to ``|n - r>`` with weight ``sqrt(n!) / (sqrt((n-r)!) sqrt(r!))``
    per mode; contributions with equal remainders are summed.  The result is
    expressed in the uncapped ``k``-particle basis order.
    """
    n = basis_n.n
    if k < 0 or k > n:
        raise UsageError(f"need 0 <= k <= n, got k={k}, n={n}")
    gamma_n = np.asarray(gamma_n)
    dim = len(basis_n)
    if gamma_n.shape != (dim, dim):
        raise UsageError("density block does not match its basis")
    basis_k = enumerate_sector(basis_n.num_modes, k)
    occ_k = basis_k.states
    states = basis_n.states
    pair_n, pair_m, remainders, coef = [], [], [], []
    for m in range(len(basis_k)):
        ok = np.flatnonzero((states >= occ_k[m]).all(axis=1))
        if not len(ok):
            continue
        rem = states[ok] - occ_k[m]
        lc = 0.5 * (gammaln(states[ok] + 1).sum(1) - gammaln(occ_k[m] + 1).sum() - gammaln(rem + 1).sum(1))
        pair_n.append(ok)
        pair_m.append(np.full(len(ok), m))
        remainders.append(rem)
        coef.append(np.exp(lc))
    out = np.zeros((len(basis_k), len(basis_k)), dtype=gamma_n.dtype)
    if not pair_n:
        return out
    pair_n = np.concatenate(pair_n)
    pair_m = np.concatenate(pair_m)
    coef = np.concatenate(coef)
    rem = np.concatenate(remainders)
    _, group = np.unique(rem, axis=0, return_inverse=True)
    group = group.ravel()
    n_groups = group.max() + 1
    table_n = np.full((n_groups, len(basis_k)), -1, dtype=np.int64)
    table_c = np.zeros((n_groups, len(basis_k)))
    table_n[group, pair_m] = pair_n
    table_c[group, pair_m] = coef
    valid = table_n >= 0
    safe = np.where(valid, table_n, 0)
    sub = gamma_n[safe[:, :, None], safe[:, None, :]]
    sub = sub * (valid[:, :, None] & valid[:, None, :])
    out += np.einsum("gi,gj,gij->ij", table_c, table_c, sub)
    return out


def reduced_density_matrix(sol: GibbsSolution, k: int, method: str = "correlator") -> DensityMatrix:
    """Reduced ``k``-body density matrix ``sum_n C(n,k) tr_{n-k} Gamma_n``.

    ``method="correlator"`` evaluates normal-ordered correlators
    ``tr[a+^{n'} a^{n} Gamma] / sqrt(n! n'!)``; ``method="partial_trace"``
    reduces each dense sector block with :func:`partial_trace_reduction`.
    """
    if k < 1:
        raise UsageError("k must be >= 1")
    if k > len(sol.sectors) - 1:
        raise UsageError(f"k={k} exceeds the largest retained sector {len(sol.sectors) - 1}")
    basis = enumerate_sector(sol.modes, k)
    if method == "correlator":
        mat = _correlator_rdm(sol, k, basis)
    elif method == "partial_trace":
        mat = np.zeros((len(basis), len(basis)))
        for n in range(k, len(sol.sectors)):
            if sol.sector_shares[n] == 0.0:
                continue
            mat += partial_trace_reduction(sol.sector_density(n), sol.sectors[n], k)
    else:
        raise UsageError(f"unknown method {method!r}")
    return DensityMatrix(k, basis, mat)


@dataclass
class TruncationResult:
    caps: tuple[int, ...]
    solution: GibbsSolution
    converged: bool
    history: list[dict]


def initial_caps(modes: ModeSet, kappa: float, T: float) -> tuple[int, ...]:
    caps = []
    for kin in modes.kinetic:
        if kin == 0:
            caps.append(max(1, math.ceil(8 * T / kappa)))
        else:
            caps.append(max(4, math.ceil(8 * T / (kin + kappa))))
    return tuple(caps)


def truncation_control(
    modes: ModeSet,
    w: Potential,
    kappa: float,
    T: float,
    lam: float,
    *,
    eps_z: float = 1e-8,
    eps_tail: float = 1e-10,
    growth: float = 1.25,
    max_states: int = DEFAULT_MAX_STATES,
    max_block_dim: int = DEFAULT_MAX_BLOCK_DIM,
    max_iter: int = 40,
    start_caps=None,
    nu: float | None = None,
    E0: float | None = None,
) -> TruncationResult:
    """Grow per-mode caps until ``Z`` is stable and the top sector is negligible.

    Stops once two successive solves give ``|Z'/Z - 1| <= eps_z`` and the
    weight share of the highest retained sector is ``<= eps_tail``.  Between
    solves, every mode whose probability of sitting at its cap exceeds
    ``eps_z`` grows by the factor ``growth`` (at least by one); if none does,
    the mode with the largest such probability grows.
    """
    caps = list(start_caps) if start_caps is not None else list(initial_caps(modes, kappa, T))
    history: list[dict] = []
    prev_log_z = None
    for _ in range(max_iter):
        if math.prod(c + 1 for c in caps) > max_states:
            raise TruncationError(
                f"cap budget exceeded: caps {caps} need more than {max_states} states",
                {"history": history, "caps": tuple(caps)},
            )
        sol = gibbs_state(modes, w, kappa, T, lam, caps, nu=nu, E0=E0, max_block_dim=max_block_dim, max_states=max_states)
        boundary = sol.boundary_weights
        rel = math.inf if prev_log_z is None else abs(math.expm1(sol.log_z - prev_log_z))
        history.append(
            {
                "caps": tuple(caps),
                "log_Z": sol.log_z,
                "rel_change": rel,
                "top_sector_share": sol.top_sector_share,
                "boundary_max": float(boundary.max()),
            }
        )
        if rel <= eps_z and sol.top_sector_share <= eps_tail:
            sol.diagnostics["truncation_history"] = history
            return TruncationResult(tuple(caps), sol, True, history)
        grow = boundary > eps_z
        if not grow.any():
            grow = boundary == boundary.max()
        for m in np.flatnonzero(grow):
            caps[m] = max(caps[m] + 1, math.ceil(caps[m] * growth))
        prev_log_z = sol.log_z
        del sol
    raise TruncationError(
        f"truncation did not converge in {max_iter} iterations", {"history": history, "caps": tuple(caps)}
    )
