"""Matrix product states and operators on top of :mod:`tndos.tensor`.

Leg conventions
---------------
MPS site tensor: ``(left bond in, physical in, right bond out)``.
MPO site tensor: ``(left bond in, physical out-going-up, physical in, right bond out)``,
i.e. directions ``(+1, +1, -1, -1)``; the third leg contracts with an MPS
physical leg.

States may be batched (every site tensor then carries the same leading batch
axis); all routines here broadcast over that axis.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import SectorError, StructuralError
from .tensor import (
    TRIVIAL,
    BlockTensor,
    ChargeIndex,
    Symmetry,
    contract,
    get_symmetry,
    lq,
    qr,
    stack,
    svd_truncate,
)

__all__ = [
    "MatrixProductState",
    "MatrixProductOperator",
    "overlap",
    "expect_mpo",
    "apply_mpo",
    "random_symmetric_mps",
    "default_physical_index",
    "doubled_identity_mps",
    "mps_from_dense",
    "stack_states",
    "save_mps",
    "load_mps",
    "SNAPSHOT_VERSION",
]

SNAPSHOT_VERSION = 1


def _boundary(symmetry: Symmetry, charge, direction: int) -> ChargeIndex:
    return ChargeIndex(((tuple(charge), 1),), direction)


@dataclass
class MatrixProductState:
    """Finite MPS.

    Attributes
    ----------
    tensors : list of BlockTensor
    charge : tuple of int
        Total charge (carried by the right boundary leg).
    center : int or None
        Orthogonality center, ``None`` when the gauge is unknown.
    bond_cap : int or None
        Maximal bond dimension used when the state was produced.
    cumulative_truncation : float or ndarray
        Sum of discarded weights accumulated so far.
    """

    tensors: list
    charge: tuple = ()
    center: int | None = None
    bond_cap: int | None = None
    cumulative_truncation: object = 0.0

    def __post_init__(self):
        self.tensors = list(self.tensors)
        if not self.tensors:
            raise StructuralError("an MPS needs at least one site")
        sym = self.tensors[0].symmetry
        self.charge = sym.reduce(self.charge) if sym.ncomp else ()
        for k, t in enumerate(self.tensors):
            if t.ndim != 3:
                raise StructuralError(f"site {k} tensor must have rank 3")
            if t.symmetry != sym:
                raise StructuralError("all site tensors must share one symmetry")
            if [ix.direction for ix in t.indices] != [1, 1, -1]:
                raise StructuralError(f"site {k} tensor has wrong leg directions")
        for k in range(len(self.tensors) - 1):
            if not self.tensors[k].indices[2].contractible_with(self.tensors[k + 1].indices[0]):
                raise StructuralError(f"bond {k}-{k + 1} legs do not match")
        first, last = self.tensors[0].indices[0], self.tensors[-1].indices[2]
        if first.dim != 1 or last.dim != 1:
            raise StructuralError("boundary bonds must have dimension 1")
        if first.charges[0] != sym.identity or last.charges[0] != self.charge:
            raise StructuralError("boundary charges inconsistent with the total charge")

    # ------------------------------------------------------------------
    @property
    def symmetry(self) -> Symmetry:
        return self.tensors[0].symmetry

    @property
    def n_sites(self) -> int:
        return len(self.tensors)

    @property
    def nbatch(self) -> int:
        return self.tensors[0].nbatch

    @property
    def batch_size(self) -> int | None:
        return self.tensors[0].batch_shape[0] if self.nbatch else None

    @property
    def physical_indices(self) -> list:
        return [t.indices[1] for t in self.tensors]

    @property
    def bond_dims(self) -> list:
        return [t.indices[2].dim for t in self.tensors[:-1]]

    def copy(self) -> "MatrixProductState":
        return replace(self, tensors=list(self.tensors))

    def unbatch(self, b: int) -> "MatrixProductState":
        ct = self.cumulative_truncation
        return replace(self, tensors=[t.unbatch(b) for t in self.tensors],
                       cumulative_truncation=float(np.asarray(ct)[b]) if np.ndim(ct) else ct)

    def norm(self):
        return np.sqrt(np.real(overlap(self, self)))

    def to_dense(self) -> np.ndarray:
        """Full state vector (batch axis first if batched)."""
        acc = self.tensors[0]
        for t in self.tensors[1:]:
            acc = contract(acc, t, [(acc.ndim - 1, 0)])
        data = acc.data
        nb = acc.nbatch
        return data.reshape(data.shape[:nb] + (-1,))

    def move_center(self, target: int) -> "MatrixProductState":
        """Return a copy with the orthogonality center moved to ``target``."""
        if not 0 <= target < self.n_sites:
            raise StructuralError("center out of range")
        out = self.copy()
        if out.center is None:
            return out.canonicalize(target)
        out.center = _shift_center(out.tensors, out.center, target)
        return out

    def canonicalize(self, center: int = 0) -> "MatrixProductState":
        """Bring the state into mixed canonical form around ``center``."""
        tensors = list(self.tensors)
        L = len(tensors)
        c = _shift_center(tensors, 0, L - 1)  # full left sweep makes every site left-isometric
        c = _shift_center(tensors, c, center)
        return replace(self, tensors=tensors, center=c)

    def normalized(self) -> "MatrixProductState":
        out = self.copy()
        c = 0 if out.center is None else out.center
        if out.center is None:
            out = out.canonicalize(0)
        n = np.real(np.sqrt(overlap(out, out)))
        t = out.tensors[c]
        out.tensors[c] = t.scale_batch(1.0 / n) if t.nbatch else t / n
        return out


def _shift_center(tensors: list, center: int, target: int) -> int:
    """Move the orthogonality center in place using QR/LQ; returns ``target``."""
    while center < target:
        q, r = qr(tensors[center], [0, 1])
        tensors[center] = q
        tensors[center + 1] = contract(r, tensors[center + 1], [(1, 0)])
        center += 1
    while center > target:
        l_, q = lq(tensors[center], [0])
        tensors[center] = q
        tensors[center - 1] = contract(tensors[center - 1], l_, [(2, 0)])
        center -= 1
    return center


@dataclass
class MatrixProductOperator:
    """Finite MPO with bond dimension one at both ends and neutral total charge."""

    tensors: list
    name: str = ""
    is_identity: bool = field(default=False, compare=False)

    def __post_init__(self):
        self.tensors = list(self.tensors)
        for k, w in enumerate(self.tensors):
            if w.ndim != 4 or [ix.direction for ix in w.indices] != [1, 1, -1, -1]:
                raise StructuralError(f"MPO site {k} must have legs (in, out, in, out) = (+1, +1, -1, -1)")
        for k in range(len(self.tensors) - 1):
            if not self.tensors[k].indices[3].contractible_with(self.tensors[k + 1].indices[0]):
                raise StructuralError(f"MPO bond {k}-{k + 1} legs do not match")

    @property
    def symmetry(self) -> Symmetry:
        return self.tensors[0].symmetry

    @property
    def n_sites(self) -> int:
        return len(self.tensors)

    def adjoint(self) -> "MatrixProductOperator":
        out = []
        for w in self.tensors:
            wc = w.conj().transpose([0, 2, 1, 3])
            out.append(wc.flip_legs([0, 3]))
        return MatrixProductOperator(out, name=f"{self.name}^dag", is_identity=self.is_identity)

    def to_dense(self) -> np.ndarray:
        acc = self.tensors[0].data[0]  # (out, in, right)
        dims = [acc.shape[0]]
        for w in self.tensors[1:]:
            acc = np.einsum("...r,rabs->...abs", acc, w.data)
            dims.append(w.shape[1])
        acc = acc[..., 0]
        n = len(dims)
        perm = list(range(0, 2 * n, 2)) + list(range(1, 2 * n, 2))
        D = int(np.prod(dims))
        return acc.transpose(perm).reshape(D, D)


# ----------------------------------------------------------------------
# contractions
# ----------------------------------------------------------------------

def _check_pair(bra: MatrixProductState, ket: MatrixProductState):
    if bra.n_sites != ket.n_sites:
        raise StructuralError("states have different lengths")
    if bra.symmetry != ket.symmetry:
        raise StructuralError("states have different symmetries")
    for a, b in zip(bra.physical_indices, ket.physical_indices):
        if a.sectors != b.sectors:
            raise StructuralError("physical spaces differ")


def _zero_like(bra, ket):
    nb = max(bra.nbatch, ket.nbatch)
    if nb == 0:
        return 0j
    return np.zeros(bra.batch_size or ket.batch_size, complex)


def overlap(bra: MatrixProductState, ket: MatrixProductState):
    """``<bra|ket>``; exactly zero when the total charges differ."""
    _check_pair(bra, ket)
    if bra.charge != ket.charge:
        return _zero_like(bra, ket)
    env = contract(bra.tensors[0].conj(), ket.tensors[0], [(0, 0), (1, 1)])
    for b, k in zip(bra.tensors[1:], ket.tensors[1:]):
        x = contract(b.conj(), env, [(0, 0)])  # (s, b', a)
        env = contract(x, k, [(2, 0), (0, 1)])  # (b', b)
    val = env.data[..., 0, 0]
    return complex(val) if env.nbatch == 0 else val


def expect_mpo(bra: MatrixProductState, op: MatrixProductOperator, ket: MatrixProductState):
    """``<bra|op|ket>`` for a charge-neutral MPO."""
    _check_pair(bra, ket)
    if op.n_sites != ket.n_sites:
        raise StructuralError("operator and state lengths differ")
    if bra.charge != ket.charge:
        return _zero_like(bra, ket)
    env = None
    for b, w, k in zip(bra.tensors, op.tensors, ket.tensors):
        if env is None:
            x = contract(b.conj(), w, [(1, 1)])       # (a', b', l, i, r)
            x = contract(x, k, [(3, 1)])               # (a', b', l, r, a, c)
            env = BlockTensor(x.data[..., 0, :, 0, :, 0, :], (x.indices[1], x.indices[3], x.indices[5]),
                              x.symmetry, nbatch=x.nbatch, check=False)
            continue
        x = contract(env, b.conj(), [(0, 0)])          # (w, a, s', b')
        x = contract(x, w, [(0, 0), (2, 1)])           # (a, b', i, r)
        env = contract(x, k, [(0, 0), (2, 1)])         # (b', r, c)
    val = env.data[..., 0, 0, 0]
    return complex(val) if env.nbatch == 0 else val


def apply_mpo(op: MatrixProductOperator, psi: MatrixProductState) -> MatrixProductState:
    """Exact product ``op |psi>``; bond dimensions multiply."""
    if op.n_sites != psi.n_sites:
        raise StructuralError("operator and state lengths differ")
    out = []
    for w, a in zip(op.tensors, psi.tensors):
        x = contract(w, a, [(2, 1)])        # (l, o, r, a, b)
        x = x.transpose([0, 3, 1, 2, 4])    # (l, a, o, r, b)
        x = x.fuse_legs(3, 5).fuse_legs(0, 2)
        out.append(x)
    return MatrixProductState(out, charge=psi.charge, center=None, bond_cap=psi.bond_cap,
                              cumulative_truncation=psi.cumulative_truncation)


# ----------------------------------------------------------------------
# construction
# ----------------------------------------------------------------------

def _charge_counts(phys: ChargeIndex, symmetry: Symmetry, L: int, reverse=False):
    """Number of basis states per total charge for growing blocks of sites."""
    out = [{symmetry.identity: 1}]
    for _ in range(L):
        nxt: dict = {}
        for c, n in out[-1].items():
            for q, g in phys.sectors:
                key = symmetry.fuse(c, q)
                nxt[key] = nxt.get(key, 0) + n * g
        out.append(nxt)
    return out


def default_physical_index(d: int, symmetry: Symmetry) -> ChargeIndex:
    """Site basis used by the benchmark models for a given local dimension and symmetry."""
    if symmetry.ncomp == 0:
        return ChargeIndex.trivial(d)
    if symmetry.name == "Z2" and d == 2:
        return ChargeIndex((((0,), 1), ((1,), 1)), 1)
    if symmetry.name == "U1xU1" and d == 4:
        return ChargeIndex((((0, 0), 1), ((1, 0), 1), ((0, 1), 1), ((1, 1), 1)), 1)
    if symmetry.name == "U1":
        return ChargeIndex(tuple(((n,), 1) for n in range(d)), 1)
    raise StructuralError(f"no default site basis for d={d} with symmetry {symmetry.name}")


def random_symmetric_mps(n_sites: int, d, max_dim: int, charge, symmetry: Symmetry,
                         seed=None) -> MatrixProductState:
    """Normalized random MPS with complex Gaussian entries in a fixed charge sector.

    ``d`` is the local dimension (the benchmark site basis is assumed) or an
    explicit physical :class:`ChargeIndex`.  Bond sectors are drawn at random
    (uniformly over charges that can still accommodate another state, up to
    ``max_dim`` states per bond) and the allowed blocks are filled with complex
    normal entries.  The state is then gauged: sites left of the middle become
    left isometries, sites right of it right isometries, and the middle tensor
    keeps the Gaussian weights.  The result is returned right-canonical with
    its center on site 0.

    Contracting the raw Gaussian tensors instead would overweight basis
    configurations reached by many bond paths, and the short bonds near the
    chain ends would make local expectation values fluctuate at order one for
    any ``max_dim``.  With the isometric gauge a saturated draw is a uniformly
    random state of the sector.
    """
    if n_sites < 1 or max_dim < 1:
        raise StructuralError("n_sites and max_dim must be positive")
    rng = np.random.default_rng(seed)
    charge = symmetry.reduce(charge) if symmetry.ncomp else ()
    phys = d if isinstance(d, ChargeIndex) else default_physical_index(int(d), symmetry)
    phys = ChargeIndex(phys.sectors, 1)
    left_counts = _charge_counts(phys, symmetry, n_sites)
    if left_counts[n_sites].get(charge, 0) == 0:
        raise SectorError(f"charge {charge} is not reachable on {n_sites} sites")
    right_counts = _charge_counts(phys, symmetry, n_sites)  # by length of the right block

    bonds = [{symmetry.identity: 1}]
    for k in range(1, n_sites):
        prev = bonds[-1]
        cap = {}
        for c, n_left in left_counts[k].items():
            rest = symmetry.fuse(charge, symmetry.dual(c))
            mult = min(n_left, right_counts[n_sites - k].get(rest, 0))
            reach = sum(prev.get(symmetry.fuse(c, symmetry.dual(q)), 0) * g for q, g in phys.sectors)
            cap[c] = min(mult, reach, max_dim)
        cands = sorted(c for c, v in cap.items() if v > 0)
        target = min(max_dim, sum(cap[c] for c in cands))
        counts = {c: 0 for c in cands}
        for _ in range(target):
            open_ = [c for c in cands if counts[c] < cap[c]]
            counts[open_[int(rng.integers(len(open_)))]] += 1
        bonds.append({c: n for c, n in counts.items() if n})
    bonds.append({charge: 1})

    tensors = []
    for k in range(n_sites):
        left = ChargeIndex(tuple(sorted(bonds[k].items())), 1)
        right = ChargeIndex(tuple(sorted(bonds[k + 1].items())), -1)
        tensors.append(BlockTensor.random((left, phys, right), symmetry, rng))

    # Replace every tensor except the middle one by the isometric factor of its SVD.  The
    # unitary factor moves towards the middle, which leaves the neighbour's Gaussian
    # statistics unchanged; the singular values are dropped.  Directions that cannot reach
    # the boundary disappear on the way.
    middle = n_sites // 2
    for k in range(middle):
        res = svd_truncate(tensors[k], [0, 1], cutoff=1e-14)
        tensors[k] = res.left
        tensors[k + 1] = contract(res.right, tensors[k + 1], [(1, 0)])
    for k in range(n_sites - 1, middle, -1):
        res = svd_truncate(tensors[k], [0], cutoff=1e-14)
        tensors[k] = res.right
        tensors[k - 1] = contract(tensors[k - 1], res.left, [(2, 0)])
    tensors[middle] = tensors[middle] / tensors[middle].norm()
    # plain gauge move of the center to site 0
    for k in range(middle, 0, -1):
        res = svd_truncate(tensors[k], [0], cutoff=0.0, absorb="left")
        tensors[k] = res.right
        tensors[k - 1] = contract(tensors[k - 1], res.left, [(2, 0)])
    return MatrixProductState(tensors, charge=charge, center=0, bond_cap=max_dim)


def doubled_identity_mps(n_sites: int, d: int) -> MatrixProductState:
    """Maximally entangled product state on ``n_sites`` merged sites of dimension ``d**2``.

    Each merged site holds ``sum_s |s>|s>``; the state is unnormalized with
    squared norm ``d**n_sites``.
    """
    vec = np.eye(d, dtype=complex).reshape(d * d)
    phys = ChargeIndex.trivial(d * d)
    tensors = [BlockTensor(vec.reshape(1, d * d, 1),
                           (ChargeIndex.trivial(1, 1), phys, ChargeIndex.trivial(1, -1)), TRIVIAL, check=False)
               for _ in range(n_sites)]
    return MatrixProductState(tensors, charge=(), center=None)


def mps_from_dense(vector, phys: ChargeIndex, n_sites: int, symmetry: Symmetry = TRIVIAL, charge=None,
                   max_dim=None, cutoff: float = 1e-14) -> MatrixProductState:
    """Exact (up to ``cutoff``) MPS decomposition of a dense state in one charge sector."""
    vector = np.asarray(vector, dtype=complex)
    d = phys.dim
    if vector.shape != (d ** n_sites,):
        raise StructuralError("vector length must be d**n_sites")
    if charge is None:
        charge = symmetry.identity
    charge = symmetry.reduce(charge) if symmetry.ncomp else ()
    phys = ChargeIndex(phys.sectors, 1)
    indices = (_boundary(symmetry, symmetry.identity, 1),) + (phys,) * n_sites + (_boundary(symmetry, charge, -1),)
    full = BlockTensor(vector.reshape((1,) + (d,) * n_sites + (1,)), indices, symmetry, check=False)
    if not full.conserves_charge():
        raise SectorError("vector has weight outside the requested charge sector")
    tensors = []
    rest = full
    for k in range(n_sites - 1):
        res = svd_truncate(rest, [0, 1], max_dim=max_dim, cutoff=cutoff, absorb="right")
        tensors.append(res.left)
        rest = res.right
    tensors.append(rest)
    return MatrixProductState(tensors, charge=charge, center=n_sites - 1, bond_cap=max_dim)


def stack_states(states) -> MatrixProductState:
    """Combine unbatched states into one batched state, zero-padding bond sectors."""
    states = list(states)
    first = states[0]
    for s in states[1:]:
        if s.n_sites != first.n_sites or s.charge != first.charge or s.symmetry != first.symmetry:
            raise StructuralError("states to stack must share length, symmetry and charge")
        if s.nbatch:
            raise StructuralError("states to stack must be unbatched")
    tensors = []
    for k in range(first.n_sites):
        legs = []
        for axis in range(3):
            merged: dict = {}
            for s in states:
                for q, n in s.tensors[k].indices[axis].sectors:
                    merged[q] = max(merged.get(q, 0), n)
            # the physical leg keeps its site-basis order so gates still contract with it
            items = tuple(merged.items()) if axis == 1 else tuple(sorted(merged.items()))
            legs.append(ChargeIndex(items, first.tensors[k].indices[axis].direction))
        tensors.append(stack([s.tensors[k].embed(legs) for s in states]))
    centers = {s.center for s in states}
    return MatrixProductState(tensors, charge=first.charge,
                              center=centers.pop() if len(centers) == 1 else None,
                              bond_cap=first.bond_cap,
                              cumulative_truncation=np.array([s.cumulative_truncation for s in states], float))


# ----------------------------------------------------------------------
# snapshots
# ----------------------------------------------------------------------

def _index_to_json(ix: ChargeIndex):
    return {"sectors": [[list(q), n] for q, n in ix.sectors], "direction": ix.direction}


def _index_from_json(obj) -> ChargeIndex:
    return ChargeIndex(tuple((tuple(q), n) for q, n in obj["sectors"]), obj["direction"])


def save_mps(path, psi: MatrixProductState) -> Path:
    """Write ``psi`` to an ``.npz`` archive with a versioned JSON header."""
    path = Path(path)
    ct = psi.cumulative_truncation
    header = {
        "format": "tndos-mps",
        "version": SNAPSHOT_VERSION,
        "symmetry": psi.symmetry.name,
        "charge": list(psi.charge),
        "center": psi.center,
        "bond_cap": psi.bond_cap,
        "nbatch": psi.nbatch,
        "cumulative_truncation": np.asarray(ct).tolist(),
        "indices": [[_index_to_json(ix) for ix in t.indices] for t in psi.tensors],
    }
    arrays = {f"site_{k}": t.data for k, t in enumerate(psi.tensors)}
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header)), **arrays)
    return path


def load_mps(path) -> MatrixProductState:
    with np.load(Path(path), allow_pickle=False) as archive:
        header = json.loads(str(archive["header"]))
        if header.get("format") != "tndos-mps":
            raise StructuralError("not an MPS snapshot")
        if header.get("version") != SNAPSHOT_VERSION:
            raise StructuralError(f"unsupported snapshot version {header.get('version')}")
        symmetry = get_symmetry(header["symmetry"])
        tensors = [
            BlockTensor(archive[f"site_{k}"], [_index_from_json(ix) for ix in idx], symmetry,
                        nbatch=header["nbatch"], check=False)
            for k, idx in enumerate(header["indices"])
        ]
    ct = header["cumulative_truncation"]
    return MatrixProductState(tensors, charge=tuple(header["charge"]), center=header["center"],
                              bond_cap=header["bond_cap"],
                              cumulative_truncation=np.asarray(ct) if isinstance(ct, list) else ct)
