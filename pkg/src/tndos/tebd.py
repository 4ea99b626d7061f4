"""Real-time TEBD evolution with delayed overlaps.

A second-order step reads ``U = A B A`` with ``A`` the half step on odd bonds
and ``B`` the full step on even bonds.  Consecutive half steps are merged:
the engine evolves ``phi_1 = B A psi_0`` and ``phi_k = B A A phi_{k-1}`` so
that ``psi_k = A phi_k``.  Overlaps are then read as
``<psi_0|psi_k> = <A^dag psi_0|phi_k>`` against a bra prepared once, which
saves one gate layer per step.  Observables use the bra ``A^dag Theta^dag psi_0``.

Trajectories can be batched: all states of a batch share index structure
(zero padded where their bond sectors differ) and are updated together, but
every batch member is truncated exactly as it would be alone.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, StructuralError, TrajectoryDivergenceError
from .mps import MatrixProductState, _shift_center, apply_mpo, expect_mpo, stack_states
from .tensor import DEFAULT_CUTOFF, contract, svd_truncate

__all__ = ["TrajectoryRecord", "evolve_trajectory", "evolve_batch", "DEFAULT_ABORT_THRESHOLD"]

#: Per-step discarded weight above which a trajectory is declared diverged.
DEFAULT_ABORT_THRESHOLD = 1e-2


@dataclass
class TrajectoryRecord:
    """Time series produced by one trajectory.

    ``truncation_profile[k]`` is the cumulative discarded weight after step
    ``k`` and ``norm_profile[k]`` the norm the state would have after ``k``
    steps without renormalization.
    """

    seed: int | None
    times: np.ndarray
    overlaps: np.ndarray
    observable_elements: dict
    truncation_profile: np.ndarray
    norm_profile: np.ndarray
    final_state: MatrixProductState | None = field(default=None, repr=False, compare=False)

    def to_csv(self, path) -> None:
        names = sorted(self.observable_elements)
        header = ["k", "t", "re_overlap", "im_overlap"]
        for n in names:
            header += [f"re_{n}", f"im_{n}"]
        header += ["truncation", "norm"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k, t in enumerate(self.times):
                row = [k, _fmt(t), _fmt(self.overlaps[k].real), _fmt(self.overlaps[k].imag)]
                for n in names:
                    v = self.observable_elements[n][k]
                    row += [_fmt(v.real), _fmt(v.imag)]
                row += [_fmt(self.truncation_profile[k]), _fmt(self.norm_profile[k])]
                w.writerow(row)


def _fmt(x) -> str:
    return format(float(x), ".17g")


class _Chain:
    """Mutable list of (possibly batched) site tensors with a tracked center."""

    def __init__(self, tensors, center, max_dim=None, cutoff=DEFAULT_CUTOFF, exact=False):
        self.tensors = list(tensors)
        self.center = center
        self.max_dim = max_dim
        self.cutoff = cutoff
        self.exact = exact

    def apply_layer(self, layer, sweep_right: bool):
        """Apply the gates of one layer; returns (summed weight, product of norms)."""
        weight, norm = 0.0, 1.0
        items = layer if sweep_right else layer[::-1]
        for j, g in items:
            if g.ndim == 2:
                x = contract(g, self.tensors[j], [(1, 1)])
                self.tensors[j] = x.transpose([1, 0, 2])
                continue
            if not self.exact:
                if sweep_right:
                    target = j if self.center <= j else j + 1
                else:
                    target = j + 1 if self.center >= j + 1 else j
                self.center = _shift_center(self.tensors, self.center, target)
            theta = contract(self.tensors[j], self.tensors[j + 1], [(2, 0)])
            theta = contract(theta, g, [(1, 2), (2, 3)]).transpose([0, 2, 3, 1])
            if self.exact:
                res = svd_truncate(theta, [0, 1], cutoff=0.0, absorb="right")
            else:
                res = svd_truncate(theta, [0, 1], max_dim=self.max_dim, cutoff=self.cutoff,
                                   absorb="right" if sweep_right else "left", normalize=True)
                weight = weight + res.truncation_weight
                norm = norm * res.norm
                self.center = j + 1 if sweep_right else j
            self.tensors[j], self.tensors[j + 1] = res.left, res.right
        return weight, norm


def _adjoint_gate(g):
    k = g.ndim // 2
    return g.conj().transpose(list(range(k, 2 * k)) + list(range(k)))


def _compose(a, b):
    """Gate ``a`` applied after gate ``b``."""
    k = a.ndim // 2
    return contract(a, b, [(k + i, i) for i in range(k)])


def _bra_env(bra_tensors, ket_tensors):
    env = contract(bra_tensors[0], ket_tensors[0], [(0, 0), (1, 1)])
    for b, k in zip(bra_tensors[1:], ket_tensors[1:]):
        env = contract(contract(b, env, [(0, 0)]), k, [(2, 0), (0, 1)])
    return env.data[..., 0, 0]


def evolve_batch(states, gates, steps: int, max_dim: int | None, observables=(),
                 cutoff: float = DEFAULT_CUTOFF, abort_threshold: float = DEFAULT_ABORT_THRESHOLD,
                 seeds=None, keep_final: bool = False) -> list:
    """Evolve several trajectories in lockstep.

    Parameters
    ----------
    states : MatrixProductState or sequence of them
        Normalized initial states (a batched state or a list of unbatched ones).
    gates : GateSequence
    steps : int
        Number of Trotter steps ``N``; records hold ``N + 1`` samples.
    max_dim : int or None
        Bond dimension cap.
    observables : sequence of MatrixProductOperator
        Operators ``Theta`` for the elements ``<psi_0|Theta|psi_k>``.
    seeds : sequence of int, optional
        Provenance attached to records and divergence errors.
    keep_final : bool
        Store the final state ``psi_N`` on each record.

    Returns
    -------
    list of TrajectoryRecord
    """
    if steps < 1:
        raise ConfigurationError("steps must be >= 1")
    if isinstance(states, MatrixProductState):
        psi0 = states if states.nbatch else stack_states([states])
    else:
        psi0 = stack_states(list(states))
    B = psi0.batch_size
    seeds = [None] * B if seeds is None else list(seeds)
    if len(seeds) != B:
        raise ConfigurationError("one seed per trajectory is required")
    if gates.n_sites != psi0.n_sites:
        raise StructuralError("gate sequence and state have different lengths")
    norms = np.real(_bra_env([t.conj() for t in psi0.tensors], psi0.tensors))
    if np.any(np.abs(norms - 1) > 1e-8):
        raise ConfigurationError("initial states must be normalized")
    if psi0.center is None:
        psi0 = psi0.canonicalize(0)
    observables = list(observables)

    odd, even = gates.odd_half, gates.even_full
    odd_full = [(j, _compose(g, g)) for j, g in odd]
    odd_adj = [(j, _adjoint_gate(g)) for j, g in odd]

    def exact_bra(mps_like):
        ch = _Chain(mps_like.tensors, None, exact=True)
        ch.apply_layer(odd_adj, True)
        return [t.conj() for t in ch.tensors]

    bra_plain = exact_bra(psi0)
    obs_bras = []
    for op in observables:
        if op.is_identity:
            obs_bras.append(None)
        else:
            obs_bras.append(exact_bra(apply_mpo(op.adjoint(), psi0)))
    psi0_conj = [t.conj() for t in psi0.tensors]

    overlaps = np.empty((B, steps + 1), complex)
    obs_vals = [np.empty((B, steps + 1), complex) for _ in observables]
    trunc = np.zeros((B, steps + 1))
    normp = np.ones((B, steps + 1))
    overlaps[:, 0] = _bra_env(psi0_conj, psi0.tensors)
    for i, op in enumerate(observables):
        if op.is_identity:
            obs_vals[i][:, 0] = overlaps[:, 0]
        else:
            obs_vals[i][:, 0] = expect_mpo(psi0, op, psi0)

    chain = _Chain(psi0.tensors, psi0.center, max_dim=max_dim, cutoff=cutoff)
    cum_w = np.zeros(B)
    cum_n = np.ones(B)
    for k in range(1, steps + 1):
        w1, n1 = chain.apply_layer(odd if k == 1 else odd_full, True)
        w2, n2 = chain.apply_layer(even, False)
        w = np.broadcast_to(np.asarray(w1 + w2, float), (B,))
        bad = np.flatnonzero(w > abort_threshold)
        if bad.size:
            b = int(bad[0])
            raise TrajectoryDivergenceError(k, float(w[b]), seeds[b])
        cum_w = cum_w + w
        cum_n = cum_n * np.broadcast_to(np.asarray(n1 * n2, float), (B,))
        trunc[:, k] = cum_w
        normp[:, k] = cum_n
        overlaps[:, k] = _bra_env(bra_plain, chain.tensors)
        for i, op in enumerate(observables):
            obs_vals[i][:, k] = overlaps[:, k] if op.is_identity else _bra_env(obs_bras[i], chain.tensors)

    finals = [None] * B
    if keep_final:
        wf, _ = chain.apply_layer(odd, True)
        final = MatrixProductState(chain.tensors, charge=psi0.charge, center=chain.center,
                                   bond_cap=max_dim, cumulative_truncation=cum_w + wf)
        finals = [final.unbatch(b) for b in range(B)]

    times = gates.dt * np.arange(steps + 1)
    return [
        TrajectoryRecord(
            seed=seeds[b],
            times=times,
            overlaps=overlaps[b],
            observable_elements={op.name or f"obs{i}": obs_vals[i][b] for i, op in enumerate(observables)},
            truncation_profile=trunc[b],
            norm_profile=normp[b],
            final_state=finals[b],
        )
        for b in range(B)
    ]


def evolve_trajectory(psi0: MatrixProductState, gates, steps: int, max_dim: int | None, observables=(),
                      cutoff: float = DEFAULT_CUTOFF, abort_threshold: float = DEFAULT_ABORT_THRESHOLD,
                      seed: int | None = None, keep_final: bool = False) -> TrajectoryRecord:
    """Evolve a single normalized state; see :func:`evolve_batch`."""
    if psi0.nbatch:
        raise StructuralError("evolve_trajectory expects an unbatched state")
    return evolve_batch([psi0], gates, steps, max_dim, observables, cutoff, abort_threshold,
                        seeds=[seed], keep_final=keep_final)[0]
