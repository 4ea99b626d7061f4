"""Lattice models: local operators, Trotter gates, MPOs and spectral bounds.

Two chains are supported:

* ``"ising"``: transverse-field Ising, ``H = -sum X_j X_{j+1} + h sum Z_j``,
  conserved parity ``prod Z_j`` (charge ``0`` = spin up = ``Z = +1``).
* ``"hubbard"``: Fermi-Hubbard, ``H = -J sum (c^dag_{j s} c_{j+1 s} + h.c.) + U sum n_up n_dn``,
  conserved ``(N_up, N_dn)``.  Fermionic signs are carried by a local parity
  string so that nearest-neighbour terms stay two-site operators.

When ``HamiltonianSpec.sector`` is ``None`` the model is treated as living on
the full Hilbert space without symmetry labels.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from .errors import ConfigurationError, SectorError
from .mps import MatrixProductOperator
from .tensor import TRIVIAL, U1xU1, Z2, BlockTensor, ChargeIndex, Symmetry

__all__ = [
    "HamiltonianSpec",
    "LocalTerm",
    "GateSequence",
    "build_hamiltonian",
    "bond_hamiltonians",
    "trotter_gates",
    "estimate_spectral_width",
    "observable_mpo",
    "symmetry_mpo",
    "local_operator_mpo",
    "local_operators",
    "lift_gate",
    "lift_mpo",
    "OBSERVABLES",
]

# ---------------------------------------------------------------------------
# local operators
# ---------------------------------------------------------------------------

_PAULI = {
    "id": np.eye(2, dtype=complex),
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def _fermion_ops():
    # basis |0>, |up>, |dn>, |up dn>
    c_up = np.zeros((4, 4), complex)
    c_up[0, 1] = 1.0
    c_up[2, 3] = 1.0
    c_dn = np.zeros((4, 4), complex)
    c_dn[0, 2] = 1.0
    c_dn[1, 3] = -1.0
    n_up = c_up.conj().T @ c_up
    n_dn = c_dn.conj().T @ c_dn
    return {
        "id": np.eye(4, dtype=complex),
        "c_up": c_up,
        "c_dn": c_dn,
        "cdag_up": c_up.conj().T,
        "cdag_dn": c_dn.conj().T,
        "n_up": n_up,
        "n_dn": n_dn,
        "n_updn": n_up @ n_dn,
        "F": np.diag([1.0, -1.0, -1.0, 1.0]).astype(complex),
    }


def local_operators(model: str) -> dict:
    """Dense single-site operators of ``model`` keyed by name."""
    if model == "ising":
        return dict(_PAULI)
    if model == "hubbard":
        return _fermion_ops()
    raise ConfigurationError(f"unknown model {model!r}")


_MODELS = {
    "ising": dict(d=2, symmetry=Z2, charges=[(0,), (1,)]),
    "hubbard": dict(d=4, symmetry=U1xU1, charges=[(0, 0), (1, 0), (0, 1), (1, 1)]),
}

#: Observables available through :func:`observable_mpo`, per model.
OBSERVABLES = {
    "ising": ("identity", "hamiltonian", "zz", "parity"),
    "hubbard": ("identity", "hamiltonian", "double_occupancy", "n_up", "n_dn"),
}


@dataclass(frozen=True)
class HamiltonianSpec:
    """Model definition.

    Parameters
    ----------
    model : {"ising", "hubbard"}
    n_sites : int
    h : float
        Ising transverse field.
    U, J : float
        Hubbard interaction and hopping.
    sector : tuple of int or None
        Conserved charge to work in; ``None`` means the full Hilbert space.
        Ising parity ``(0,)`` is the even sector; Hubbard sectors are
        ``(N_up, N_dn)``.
    """

    model: str
    n_sites: int
    h: float = 1.0
    U: float = 1.0
    J: float = 1.0
    sector: tuple | None = None

    def __post_init__(self):
        if self.model not in _MODELS:
            raise ConfigurationError(f"unknown model {self.model!r}; expected one of {sorted(_MODELS)}")
        if int(self.n_sites) != self.n_sites or self.n_sites < 1:
            raise ConfigurationError("n_sites must be a positive integer")
        if self.model == "hubbard" and self.n_sites < 2:
            raise ConfigurationError("the Hubbard chain needs at least two sites")
        for name in ("h", "U", "J"):
            if not np.isfinite(getattr(self, name)):
                raise ConfigurationError(f"{name} must be finite")
        if self.sector is not None:
            sector = self.model_symmetry.reduce(self.sector)
            object.__setattr__(self, "sector", sector)
            if self.model == "hubbard" and not all(0 <= n <= self.n_sites for n in sector):
                raise SectorError(f"sector {sector} impossible on {self.n_sites} sites")

    # convenience constructors ------------------------------------------------
    @classmethod
    def ising(cls, n_sites: int, h: float = 1.0, parity: str | None = "even") -> "HamiltonianSpec":
        sector = None if parity is None else {"even": (0,), "odd": (1,)}[parity]
        return cls("ising", n_sites, h=h, sector=sector)

    @classmethod
    def hubbard(cls, n_sites: int, U: float = 1.0, J: float = 1.0, filling="half") -> "HamiltonianSpec":
        if filling == "half":
            sector = (n_sites // 2, n_sites // 2)
        else:
            sector = None if filling is None else tuple(filling)
        return cls("hubbard", n_sites, U=U, J=J, sector=sector)

    # derived ---------------------------------------------------------------
    @property
    def d(self) -> int:
        return _MODELS[self.model]["d"]

    @property
    def model_symmetry(self) -> Symmetry:
        return _MODELS[self.model]["symmetry"]

    @property
    def symmetry(self) -> Symmetry:
        """Symmetry used for tensors: the model group, or trivial on the full space."""
        return TRIVIAL if self.sector is None else self.model_symmetry

    @property
    def site_charges(self) -> list:
        return list(_MODELS[self.model]["charges"])

    @property
    def physical_index(self) -> ChargeIndex:
        if self.sector is None:
            return ChargeIndex.trivial(self.d)
        return ChargeIndex(tuple((q, 1) for q in self.site_charges), 1)

    @property
    def charge(self) -> tuple:
        return () if self.sector is None else self.sector

    @property
    def sector_dim(self) -> int:
        L = self.n_sites
        if self.sector is None:
            return self.d ** L
        if self.model == "ising":
            return 2 ** (L - 1) if L > 1 else 1
        return comb(L, self.sector[0]) * comb(L, self.sector[1])

    @property
    def param_dict(self) -> dict:
        if self.model == "ising":
            return {"h": self.h}
        return {"U": self.U, "J": self.J}


@dataclass(frozen=True)
class LocalTerm:
    """One term of the Hamiltonian acting on consecutive ``sites``.

    ``matrix`` is dense with shape ``(d**k, d**k)``; ``tensor`` is the same
    operator as a charge-conserving :class:`BlockTensor` with legs
    ``(out_1..out_k, in_1..in_k)``.
    """

    sites: tuple
    matrix: np.ndarray
    tensor: BlockTensor
    label: str = ""


def _op_tensor(matrix, spec: HamiltonianSpec, nsite: int) -> BlockTensor:
    d = spec.d
    p = spec.physical_index
    data = np.asarray(matrix, complex).reshape((d,) * (2 * nsite))
    return BlockTensor(data, (p,) * nsite + (p.dual(),) * nsite, spec.symmetry)


def _single_and_pairs(spec: HamiltonianSpec):
    """Site operator and nearest-neighbour pairs ``[(A, B), ...]`` with ``sum A (x) B``."""
    ops = local_operators(spec.model)
    if spec.model == "ising":
        return spec.h * ops["z"], [(-ops["x"], ops["x"])]
    J = spec.J
    pairs = []
    for s in ("up", "dn"):
        pairs.append((-J * ops[f"cdag_{s}"] @ ops["F"], ops[f"c_{s}"]))
        pairs.append((-J * ops["F"] @ ops[f"c_{s}"], ops[f"cdag_{s}"]))
    return spec.U * ops["n_updn"], pairs


def build_hamiltonian(spec: HamiltonianSpec) -> list:
    """The Hamiltonian as a list of one-site and two-site :class:`LocalTerm` objects."""
    onsite, pairs = _single_and_pairs(spec)
    terms = []
    if np.any(onsite):
        for j in range(spec.n_sites):
            terms.append(LocalTerm((j,), onsite, _op_tensor(onsite, spec, 1), "onsite"))
    if pairs:
        bond = sum(np.kron(a, b) for a, b in pairs)
        for j in range(spec.n_sites - 1):
            terms.append(LocalTerm((j, j + 1), bond, _op_tensor(bond, spec, 2), "bond"))
    return terms


def bond_hamiltonians(spec: HamiltonianSpec) -> list:
    """Dense two-site Hamiltonians ``h_{j,j+1}`` that sum to ``H``.

    Each single-site term is shared equally between its two bonds; boundary
    sites give their whole term to their only bond.  For a single site the
    list holds the one-site Hamiltonian.
    """
    L, d = spec.n_sites, spec.d
    onsite, pairs = _single_and_pairs(spec)
    if L == 1:
        return [onsite]
    eye = np.eye(d)
    bond = sum(np.kron(a, b) for a, b in pairs)
    out = []
    for j in range(L - 1):
        wl = 1.0 if j == 0 else 0.5
        wr = 1.0 if j + 1 == L - 1 else 0.5
        out.append(bond + wl * np.kron(onsite, eye) + wr * np.kron(eye, onsite))
    return out


@dataclass
class GateSequence:
    """Second-order Trotter step ``A B A`` with ``A`` the half step on odd bonds.

    ``odd_half`` and ``even_full`` are lists of ``(first_site, gate)``; a gate is
    a :class:`BlockTensor` with legs ``(out, out, in, in)`` (or ``(out, in)``
    for a single-site chain).  Bonds are counted from zero, so the odd layer
    holds bonds ``(0,1), (2,3), ...``.
    """

    odd_half: list
    even_full: list
    dt: float
    n_sites: int
    order: int = 2

    @property
    def layers(self) -> list:
        return [self.odd_half, self.even_full, self.odd_half]

    def step_matrix(self) -> np.ndarray:
        """Dense one-step propagator on the full space (small chains only)."""
        from .oracles import embed_operator

        d = self.odd_half[0][1].indices[0].dim
        U = np.eye(d ** self.n_sites, dtype=complex)
        for layer in self.layers:
            for j, g in layer:
                k = g.ndim // 2
                U = embed_operator(g.data.reshape(d ** k, d ** k), j, self.n_sites, d) @ U
        return U


def _expm_hermitian(h, tau, labels=None):
    """``exp(-i tau h)``, diagonalized charge block by charge block when ``labels`` are given.

    Working per block keeps the result exactly block diagonal even when
    degenerate eigenvalues would let a global eigensolver mix sectors.
    """
    if labels is None:
        w, v = np.linalg.eigh(h)
        return (v * np.exp(-1j * tau * w)) @ v.conj().T
    out = np.zeros(h.shape, complex)
    for q in np.unique(labels, axis=0):
        idx = np.flatnonzero(np.all(labels == q, axis=1))
        w, v = np.linalg.eigh(h[np.ix_(idx, idx)])
        out[np.ix_(idx, idx)] = (v * np.exp(-1j * tau * w)) @ v.conj().T
    return out


def _basis_charges(spec: HamiltonianSpec, nsite: int) -> np.ndarray:
    """Total charge of every basis state of ``nsite`` consecutive sites (rows in C order)."""
    site = np.array(spec.site_charges, dtype=np.int64)
    if spec.sector is None:
        return np.zeros((spec.d ** nsite, 0), dtype=np.int64)
    total = np.zeros((1, site.shape[1]), dtype=np.int64)
    for _ in range(nsite):
        total = (total[:, None, :] + site[None, :, :]).reshape(-1, site.shape[1])
    return spec.model_symmetry.reduce_array(total)


def trotter_gates(spec: HamiltonianSpec, dt: float) -> GateSequence:
    """Gates ``exp(-i h_b dt/2)`` on odd bonds and ``exp(-i h_b dt)`` on even bonds."""
    if not dt > 0:
        raise ConfigurationError("dt must be positive")
    hb = bond_hamiltonians(spec)
    if spec.n_sites == 1:
        g = _expm_hermitian(hb[0], dt / 2, _basis_charges(spec, 1))
        return GateSequence([(0, _op_tensor(g, spec, 1))], [], dt, 1)
    labels = _basis_charges(spec, 2)
    odd, even = [], []
    for j, h in enumerate(hb):
        if j % 2 == 0:
            odd.append((j, _op_tensor(_expm_hermitian(h, dt / 2, labels), spec, 2)))
        else:
            even.append((j, _op_tensor(_expm_hermitian(h, dt, labels), spec, 2)))
    return GateSequence(odd, even, dt, spec.n_sites)


def estimate_spectral_width(spec: HamiltonianSpec, tight: bool = False) -> tuple:
    """Interval ``(E_min, E_max)`` guaranteed to contain the spectrum.

    The default is a triangle-inequality bound from operator norms of the
    local terms.  ``tight=True`` computes the extremal eigenvalues of the
    working sector with a sparse Lanczos solver (small chains only) and pads
    them by a relative margin of ``1e-6``.
    """
    L = spec.n_sites
    if tight:
        from .oracles import sector_hamiltonian

        import scipy.sparse.linalg as sla

        H = sector_hamiltonian(spec)
        n = H.shape[0]
        if n <= 64:
            w = np.linalg.eigvalsh(H.toarray())
            lo, hi = w[0], w[-1]
        else:
            lo = sla.eigsh(H, k=1, which="SA", return_eigenvectors=False, tol=1e-10)[0]
            hi = sla.eigsh(H, k=1, which="LA", return_eigenvectors=False, tol=1e-10)[0]
        pad = 1e-6 * max(1.0, hi - lo)
        return float(lo - pad), float(hi + pad)
    if spec.model == "ising":
        r = (L - 1) + abs(spec.h) * L
        return -r, r
    U, J = spec.U, spec.J
    hop = 2 * abs(J) * (L - 1)
    return min(0.0, U * L) - hop, max(0.0, U * L) + hop


# ---------------------------------------------------------------------------
# MPOs
# ---------------------------------------------------------------------------

def _charge_change(op: np.ndarray, spec: HamiltonianSpec) -> tuple:
    """Definite charge transferred by ``op`` (``out - in``)."""
    sym = spec.symmetry
    if sym.ncomp == 0:
        return ()
    charges = spec.site_charges
    found = set()
    for o, i in zip(*np.nonzero(np.abs(op) > 0)):
        found.add(sym.fuse(charges[o], sym.dual(charges[i])))
    if len(found) > 1:
        raise SectorError("operator does not carry a definite charge")
    return found.pop() if found else sym.identity


def _nearest_neighbour_mpo(spec: HamiltonianSpec, onsite, pairs, name="") -> MatrixProductOperator:
    """Finite-automaton MPO for ``sum_j onsite_j + sum_j sum_a A_a(j) B_a(j+1)``."""
    L, d = spec.n_sites, spec.d
    sym = spec.symmetry
    pairs = [(a, b) for a, b in pairs if np.any(a) and np.any(b)]
    n = len(pairs)
    w = n + 2  # state 0: nothing yet, 1..n: A_a placed, n+1: done
    eye = np.eye(d, dtype=complex)
    W = np.zeros((w, d, d, w), complex)
    W[0, :, :, 0] = eye
    W[n + 1, :, :, n + 1] = eye
    W[0, :, :, n + 1] = onsite
    state_charge = [sym.identity] * w
    for k, (a, b) in enumerate(pairs, start=1):
        W[0, :, :, k] = a
        W[k, :, :, n + 1] = b
        state_charge[k] = _charge_change(a, spec)
    order = sorted(range(w), key=lambda s: (state_charge[s], s))
    W = W[np.ix_(order, range(d), range(d), order)]
    pos = {s: k for k, s in enumerate(order)}
    first, last = pos[0], pos[n + 1]
    sectors: dict = {}
    for s in order:
        sectors[state_charge[s]] = sectors.get(state_charge[s], 0) + 1
    bond = tuple(sectors.items())
    p = spec.physical_index
    one = sym.identity
    tensors = []
    for j in range(L):
        lo = slice(first, first + 1) if j == 0 else slice(None)
        hi = slice(last, last + 1) if j == L - 1 else slice(None)
        left = ChargeIndex(((one, 1),), 1) if j == 0 else ChargeIndex(bond, 1)
        right = ChargeIndex(((one, 1),), -1) if j == L - 1 else ChargeIndex(bond, -1)
        tensors.append(BlockTensor(W[lo, :, :, hi], (left, p, p.dual(), right), sym))
    return MatrixProductOperator(tensors, name=name)


def _product_mpo(spec: HamiltonianSpec, op, name="", is_identity=False) -> MatrixProductOperator:
    sym, p = spec.symmetry, spec.physical_index
    one = ((sym.identity, 1),)
    t = BlockTensor(np.asarray(op, complex).reshape(1, spec.d, spec.d, 1),
                    (ChargeIndex(one, 1), p, p.dual(), ChargeIndex(one, -1)), sym)
    return MatrixProductOperator([t] * spec.n_sites, name=name, is_identity=is_identity)


def observable_mpo(name: str, spec: HamiltonianSpec) -> MatrixProductOperator:
    """Charge-neutral observable as an MPO.

    ``"identity"``, ``"hamiltonian"``; Ising: ``"zz"`` (mean nearest-neighbour
    ``Z Z``), ``"parity"``; Hubbard: ``"double_occupancy"`` (mean ``n_up n_dn``
    per site), ``"n_up"``, ``"n_dn"`` (totals).
    """
    ops = local_operators(spec.model)
    L = spec.n_sites
    if name not in OBSERVABLES[spec.model]:
        raise ConfigurationError(f"observable {name!r} not available for {spec.model}; "
                                 f"choose from {OBSERVABLES[spec.model]}")
    if name == "identity":
        return _product_mpo(spec, ops["id"], name, is_identity=True)
    if name == "hamiltonian":
        onsite, pairs = _single_and_pairs(spec)
        return _nearest_neighbour_mpo(spec, onsite, pairs if L > 1 else [], name)
    if name == "parity":
        return _product_mpo(spec, ops["z"], name)
    zero = np.zeros_like(ops["id"])
    if name == "zz":
        if L < 2:
            raise ConfigurationError("zz needs at least two sites")
        return _nearest_neighbour_mpo(spec, zero, [(ops["z"] / (L - 1), ops["z"])], name)
    if name == "double_occupancy":
        return _nearest_neighbour_mpo(spec, ops["n_updn"] / L, [], name)
    return _nearest_neighbour_mpo(spec, ops[name], [], name)


def local_operator_mpo(spec: HamiltonianSpec, op, site: int, name: str = "") -> MatrixProductOperator:
    """Charge-neutral single-site operator ``op`` on ``site``, identity elsewhere."""
    if not 0 <= site < spec.n_sites:
        raise ConfigurationError("site out of range")
    ops = local_operators(spec.model)
    mpo = _product_mpo(spec, ops["id"])
    tensors = list(mpo.tensors)
    tensors[site] = _product_mpo(spec, op).tensors[site]
    return MatrixProductOperator(tensors, name=name)


def symmetry_mpo(spec: HamiltonianSpec) -> MatrixProductOperator:
    """Generator of the conserved quantity: parity for Ising, ``N_up`` for Hubbard."""
    return observable_mpo("parity" if spec.model == "ising" else "n_up", spec)


# ---------------------------------------------------------------------------
# lifting to the doubled (system x copy) space
# ---------------------------------------------------------------------------

def lift_gate(gate: BlockTensor) -> BlockTensor:
    """``G (x) 1`` on merged sites of dimension ``d**2`` (trivial symmetry)."""
    k = gate.ndim // 2
    d = gate.indices[0].dim
    eye = np.eye(d)
    data = gate.data
    if k == 1:
        out = np.einsum("ab,ef->aebf", data, eye).reshape(d * d, d * d)
    else:
        out = np.einsum("abcd,ef,gh->aebgcfdh", data, eye, eye).reshape((d * d,) * 4)
    p = ChargeIndex.trivial(d * d)
    return BlockTensor(out, (p,) * k + (p.dual(),) * k, TRIVIAL, check=False)


def lift_mpo(op: MatrixProductOperator) -> MatrixProductOperator:
    """``O (x) 1`` on merged sites (trivial symmetry)."""
    out = []
    for w in op.tensors:
        d = w.indices[1].dim
        data = np.einsum("lair,ef->laeifr", w.data, np.eye(d))
        data = data.reshape(w.shape[0], d * d, d * d, w.shape[3])
        p = ChargeIndex.trivial(d * d)
        out.append(BlockTensor(data, (ChargeIndex.trivial(w.shape[0], 1), p, p.dual(),
                                      ChargeIndex.trivial(w.shape[3], -1)), TRIVIAL, check=False))
    return MatrixProductOperator(out, name=op.name, is_identity=op.is_identity)


def lift_gates(gates: GateSequence) -> GateSequence:
    return GateSequence([(j, lift_gate(g)) for j, g in gates.odd_half],
                        [(j, lift_gate(g)) for j, g in gates.even_full],
                        gates.dt, gates.n_sites, gates.order)

