"""Block-sparse complex tensors with Abelian charge conservation.

Every index carries an ordered list of charge sectors.  A tensor stores its
entries in a dense array laid out sector by sector; the block structure is
implied by the charge labels and every entry outside a charge-conserving
block is exactly zero.  All contractions therefore reduce to single dense
matrix products (zeros times anything stay exactly zero), while
factorizations act block by block so that the selection rule survives
truncation exactly.

A tensor may carry one leading *batch* axis.  Batched tensors share their
index structure and are used to evolve many trajectories in lockstep; all
operations broadcast over the batch.

Charge conservation convention: with ``direction = +1`` for incoming and
``-1`` for outgoing indices, a block is allowed iff ``sum(direction * charge)``
is the group identity.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .errors import DegenerateInputError, StructuralError

__all__ = [
    "Symmetry",
    "TRIVIAL",
    "Z2",
    "U1",
    "U1xU1",
    "get_symmetry",
    "ChargeIndex",
    "BlockTensor",
    "SvdResult",
    "contract",
    "svd_truncate",
    "qr",
    "lq",
    "DEFAULT_CUTOFF",
]

#: Relative squared singular-value cutoff applied by default in truncations.
DEFAULT_CUTOFF = 1e-24


@dataclass(frozen=True)
class Symmetry:
    """Abelian group given as a product of cyclic (``modulus > 0``) and
    integer (``modulus == 0``) factors."""

    name: str
    moduli: tuple[int, ...]

    @property
    def ncomp(self) -> int:
        return len(self.moduli)

    @property
    def identity(self) -> tuple[int, ...]:
        return (0,) * self.ncomp

    def reduce(self, charge) -> tuple[int, ...]:
        charge = tuple(int(c) for c in charge)
        if len(charge) != self.ncomp:
            raise StructuralError(f"charge {charge} has wrong length for symmetry {self.name}")
        return tuple(c % m if m else c for c, m in zip(charge, self.moduli))

    def fuse(self, a, b) -> tuple[int, ...]:
        return self.reduce(tuple(x + y for x, y in zip(a, b)))

    def dual(self, a) -> tuple[int, ...]:
        return self.reduce(tuple(-x for x in a))

    def reduce_array(self, arr: np.ndarray) -> np.ndarray:
        out = np.array(arr, dtype=np.int64, copy=True)
        for k, m in enumerate(self.moduli):
            if m:
                out[..., k] %= m
        return out


TRIVIAL = Symmetry("trivial", ())
Z2 = Symmetry("Z2", (2,))
U1 = Symmetry("U1", (0,))
U1xU1 = Symmetry("U1xU1", (0, 0))

_SYMMETRIES = {s.name: s for s in (TRIVIAL, Z2, U1, U1xU1)}


def get_symmetry(name: str) -> Symmetry:
    try:
        return _SYMMETRIES[name]
    except KeyError:
        raise StructuralError(f"unknown symmetry {name!r}") from None


@dataclass(frozen=True)
class ChargeIndex:
    """One tensor leg: ordered ``(charge, degeneracy)`` sectors plus a direction.

    Parameters
    ----------
    sectors : tuple of (tuple of int, int)
        Charges must be distinct and degeneracies positive.
    direction : {+1, -1}
        ``+1`` for an incoming leg, ``-1`` for an outgoing one.
    """

    sectors: tuple
    direction: int = 1

    def __post_init__(self):
        sectors = tuple((tuple(int(c) for c in q), int(n)) for q, n in self.sectors)
        object.__setattr__(self, "sectors", sectors)
        if self.direction not in (1, -1):
            raise StructuralError("direction must be +1 (incoming) or -1 (outgoing)")
        charges = [q for q, _ in sectors]
        if len(set(charges)) != len(charges):
            raise StructuralError(f"repeated charges in index: {charges}")
        if any(n < 1 for _, n in sectors):
            raise StructuralError("sector degeneracies must be >= 1")
        if len({len(q) for q in charges}) > 1:
            raise StructuralError("charges of one index must share a length")

    @classmethod
    def trivial(cls, dim: int, direction: int = 1) -> "ChargeIndex":
        return cls((((), dim),), direction)

    @property
    def dim(self) -> int:
        return sum(n for _, n in self.sectors)

    @property
    def charges(self) -> list:
        return [q for q, _ in self.sectors]

    @property
    def degeneracies(self) -> list:
        return [n for _, n in self.sectors]

    @cached_property
    def labels(self) -> np.ndarray:
        """Charge of every basis element, shape ``(dim, ncomp)``."""
        if not self.sectors:
            return np.zeros((0, 0), dtype=np.int64)
        ncomp = len(self.sectors[0][0])
        rows = [np.tile(np.asarray(q, dtype=np.int64), (n, 1)) if ncomp else np.zeros((n, 0), np.int64)
                for q, n in self.sectors]
        return np.concatenate(rows, axis=0)

    @cached_property
    def slices(self) -> dict:
        out, start = {}, 0
        for q, n in self.sectors:
            out[q] = slice(start, start + n)
            start += n
        return out

    def dual(self) -> "ChargeIndex":
        return ChargeIndex(self.sectors, -self.direction)

    def contractible_with(self, other: "ChargeIndex") -> bool:
        return self.sectors == other.sectors and self.direction == -other.direction

    def flip(self, symmetry: "Symmetry") -> "ChargeIndex":
        """Same leg seen from the other side: direction and charges inverted."""
        return ChargeIndex(tuple((symmetry.dual(q), n) for q, n in self.sectors), -self.direction)


def _fused_labels(indices, symmetry, signs=None) -> np.ndarray:
    """Signed, group-reduced charge sum over a product of legs, flattened C-style."""
    dims = [ix.dim for ix in indices]
    ncomp = symmetry.ncomp
    if ncomp == 0:
        return np.zeros((int(np.prod(dims, dtype=np.int64)), 0), dtype=np.int64)
    total = np.zeros(dims + [ncomp], dtype=np.int64)
    for k, ix in enumerate(indices):
        sign = ix.direction if signs is None else signs[k] * ix.direction
        shape = [1] * len(dims) + [ncomp]
        shape[k] = dims[k]
        total = total + sign * ix.labels.reshape(shape)
    return symmetry.reduce_array(total.reshape(-1, ncomp))


@lru_cache(maxsize=8192)
def _allowed_mask(indices: tuple, symmetry: Symmetry) -> np.ndarray:
    fused = _fused_labels(indices, symmetry)
    mask = np.all(fused == 0, axis=1) if symmetry.ncomp else np.ones(len(fused), dtype=bool)
    return mask.reshape([ix.dim for ix in indices])


@lru_cache(maxsize=8192)
def _block_plan(left: tuple, right: tuple, symmetry: Symmetry):
    """Charge blocks of the matrix obtained by grouping ``left`` legs into rows.

    Returns a list of ``(charge, row_positions, col_positions)`` sorted by charge.
    """
    rows = _fused_labels(left, symmetry)
    cols = _fused_labels(right, symmetry, signs=[-1] * len(right))
    if symmetry.ncomp == 0:
        return [((), np.arange(len(rows)), np.arange(len(cols)))]
    row_q, row_inv = np.unique(rows, axis=0, return_inverse=True)
    col_q = {tuple(q): i for i, q in enumerate(np.unique(cols, axis=0))}
    col_keys = np.unique(cols, axis=0, return_inverse=True)[1].ravel()
    plan = []
    for i, q in enumerate(row_q):
        key = tuple(int(c) for c in q)
        if key not in col_q:
            continue
        r = np.flatnonzero(row_inv.ravel() == i)
        c = np.flatnonzero(col_keys == col_q[key])
        plan.append((key, r, c))
    return plan


class BlockTensor:
    """Charge-conserving complex tensor.

    Parameters
    ----------
    data : array_like
        Dense entries, shape ``batch + (ix.dim for ix in indices)``.
    indices : sequence of ChargeIndex
    symmetry : Symmetry
    nbatch : {0, 1}
        Number of leading batch axes.
    check : bool
        Verify that every entry outside an allowed block is exactly zero.
    """

    __slots__ = ("data", "indices", "symmetry", "nbatch")

    def __init__(self, data, indices, symmetry: Symmetry = TRIVIAL, nbatch: int = 0, check: bool = True):
        data = np.asarray(data, dtype=np.complex128)
        indices = tuple(indices)
        if nbatch not in (0, 1):
            raise StructuralError("at most one batch axis is supported")
        if data.shape[nbatch:] != tuple(ix.dim for ix in indices):
            raise StructuralError(
                f"data shape {data.shape[nbatch:]} does not match index dims "
                f"{tuple(ix.dim for ix in indices)}"
            )
        for ix in indices:
            if ix.sectors and len(ix.sectors[0][0]) != symmetry.ncomp:
                raise StructuralError(f"index charges incompatible with symmetry {symmetry.name}")
        self.data = data
        self.indices = indices
        self.symmetry = symmetry
        self.nbatch = nbatch
        if check and not self.conserves_charge():
            raise StructuralError("tensor has nonzero entries outside charge-conserving blocks")

    # -- construction -------------------------------------------------------
    @classmethod
    def zeros(cls, indices, symmetry=TRIVIAL, batch=()):
        indices = tuple(indices)
        batch = tuple(batch)
        return cls(np.zeros(batch + tuple(ix.dim for ix in indices), complex), indices, symmetry,
                   nbatch=len(batch), check=False)

    @classmethod
    def from_blocks(cls, blocks: dict, indices, symmetry=TRIVIAL):
        """Assemble a tensor from ``{(charge_0, ..., charge_n): array}``."""
        t = cls.zeros(indices, symmetry)
        data = t.data
        for key, block in blocks.items():
            key = tuple(symmetry.reduce(q) for q in key)
            if len(key) != len(t.indices):
                raise StructuralError("block key length does not match tensor rank")
            try:
                sl = tuple(ix.slices[q] for ix, q in zip(t.indices, key))
            except KeyError as exc:
                raise StructuralError(f"charge {exc} not present on index") from None
            if not _key_allowed(key, t.indices, symmetry):
                raise StructuralError(f"block {key} violates charge conservation")
            block = np.asarray(block, dtype=complex)
            if block.shape != tuple(s.stop - s.start for s in sl):
                raise StructuralError(f"block {key} has shape {block.shape}, expected sector degeneracies")
            data[sl] = block
        return t

    @classmethod
    def random(cls, indices, symmetry=TRIVIAL, rng=None, batch=()):
        """Complex standard-normal entries on every allowed block."""
        rng = np.random.default_rng(rng)
        indices = tuple(indices)
        batch = tuple(batch)
        shape = batch + tuple(ix.dim for ix in indices)
        data = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        data = data * _allowed_mask(indices, symmetry)
        return cls(data, indices, symmetry, nbatch=len(batch), check=False)

    # -- structure ------------------------------------------------------------
    @property
    def ndim(self) -> int:
        return len(self.indices)

    @property
    def shape(self) -> tuple:
        return tuple(ix.dim for ix in self.indices)

    @property
    def batch_shape(self) -> tuple:
        return self.data.shape[: self.nbatch]

    def allowed_mask(self) -> np.ndarray:
        return _allowed_mask(self.indices, self.symmetry)

    def conserves_charge(self) -> bool:
        forbidden = ~self.allowed_mask()
        if not forbidden.any():
            return True
        return not np.any(self.data[..., forbidden])

    @property
    def blocks(self) -> dict:
        """Stored (allowed and not identically zero) blocks as array views."""
        out = {}
        for key in itertools.product(*(ix.charges for ix in self.indices)):
            if not _key_allowed(key, self.indices, self.symmetry):
                continue
            sl = (Ellipsis,) + tuple(ix.slices[q] for ix, q in zip(self.indices, key))
            block = self.data[sl]
            if np.any(block):
                out[key] = block
        return out

    def to_dense(self) -> np.ndarray:
        return self.data

    def norm(self):
        axes = tuple(range(self.nbatch, self.data.ndim))
        n = np.sqrt(np.sum(np.abs(self.data) ** 2, axis=axes))
        return float(n) if self.nbatch == 0 else n

    # -- elementwise -----------------------------------------------------------
    def _like(self, data, indices=None):
        return BlockTensor(data, self.indices if indices is None else indices, self.symmetry,
                           nbatch=self.nbatch, check=False)

    def conj(self) -> "BlockTensor":
        return self._like(self.data.conj(), tuple(ix.dual() for ix in self.indices))

    def transpose(self, perm) -> "BlockTensor":
        perm = list(perm)
        if sorted(perm) != list(range(self.ndim)):
            raise StructuralError(f"invalid permutation {perm}")
        full = list(range(self.nbatch)) + [self.nbatch + p for p in perm]
        return self._like(self.data.transpose(full), tuple(self.indices[p] for p in perm))

    def _check_same(self, other):
        if not isinstance(other, BlockTensor):
            return NotImplemented
        if other.indices != self.indices or other.symmetry != self.symmetry:
            raise StructuralError("tensors have different index structure")
        return None

    def __add__(self, other):
        if self._check_same(other) is NotImplemented:
            return NotImplemented
        return BlockTensor(self.data + other.data, self.indices, self.symmetry,
                           nbatch=max(self.nbatch, other.nbatch), check=False)

    def __sub__(self, other):
        if self._check_same(other) is NotImplemented:
            return NotImplemented
        return BlockTensor(self.data - other.data, self.indices, self.symmetry,
                           nbatch=max(self.nbatch, other.nbatch), check=False)

    def __mul__(self, scalar):
        if not np.isscalar(scalar):
            return NotImplemented
        return self._like(self.data * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return self._like(-self.data)

    def __truediv__(self, scalar):
        return self._like(self.data / scalar)

    # -- batching --------------------------------------------------------------
    def unbatch(self, b: int) -> "BlockTensor":
        if self.nbatch != 1:
            raise StructuralError("tensor is not batched")
        return BlockTensor(self.data[b], self.indices, self.symmetry, check=False)

    def scale_batch(self, factors) -> "BlockTensor":
        """Multiply batch member ``b`` by ``factors[b]``."""
        f = np.asarray(factors).reshape(self.batch_shape + (1,) * self.ndim)
        return self._like(self.data * f)

    def flip_legs(self, axes) -> "BlockTensor":
        """Invert direction and charges of the given legs (data unchanged)."""
        axes = set(axes)
        indices = tuple(ix.flip(self.symmetry) if k in axes else ix for k, ix in enumerate(self.indices))
        return self._like(self.data, indices)

    def fuse_legs(self, start: int, stop: int) -> "BlockTensor":
        """Merge the consecutive legs ``start:stop`` (equal direction) into one.

        The fused basis is the C-ordered product basis, stably sorted by charge,
        so fusing the same legs on two tensors yields identical indices.
        """
        legs = self.indices[start:stop]
        if len(legs) < 1 or len({ix.direction for ix in legs}) != 1:
            raise StructuralError("fused legs must exist and share one direction")
        direction = legs[0].direction
        lab = _fused_labels(legs, self.symmetry, signs=[direction] * len(legs))
        if self.symmetry.ncomp:
            uniq, inv = np.unique(lab, axis=0, return_inverse=True)
            inv = inv.ravel()
            perm = np.argsort(inv, kind="stable")
            counts = np.bincount(inv, minlength=len(uniq))
            sectors = tuple((tuple(int(c) for c in q), int(n)) for q, n in zip(uniq, counts))
        else:
            perm = np.arange(len(lab))
            sectors = (((), len(lab)),)
        fused = ChargeIndex(sectors, direction)
        nb = self.nbatch
        shape = self.data.shape
        data = self.data.reshape(shape[: nb + start] + (len(lab),) + shape[nb + stop:])
        data = np.take(data, perm, axis=nb + start)
        indices = self.indices[:start] + (fused,) + self.indices[stop:]
        return BlockTensor(data, indices, self.symmetry, nbatch=nb, check=False)

    def embed(self, indices) -> "BlockTensor":
        """Place this tensor inside a larger index structure.

        Each target index must contain every source sector with at least the
        source degeneracy; source slots occupy the first positions of each
        target sector and the remainder is zero filled.
        """
        indices = tuple(indices)
        if len(indices) != self.ndim:
            raise StructuralError("rank mismatch in embed")
        positions = []
        for src, dst in zip(self.indices, indices):
            if src.direction != dst.direction:
                raise StructuralError("direction mismatch in embed")
            pos = []
            for q, n in src.sectors:
                if q not in dst.slices or dst.slices[q].stop - dst.slices[q].start < n:
                    raise StructuralError(f"sector {q} does not fit into target index")
                start = dst.slices[q].start
                pos.extend(range(start, start + n))
            positions.append(np.asarray(pos, dtype=np.intp))
        data = np.zeros(self.batch_shape + tuple(ix.dim for ix in indices), complex)
        data[(Ellipsis,) + np.ix_(*positions)] = self.data
        return BlockTensor(data, indices, self.symmetry, nbatch=self.nbatch, check=False)

    def __repr__(self):
        batch = f", batch={self.batch_shape}" if self.nbatch else ""
        return f"BlockTensor(shape={self.shape}, symmetry={self.symmetry.name}{batch})"


def _key_allowed(key, indices, symmetry) -> bool:
    total = symmetry.identity
    for ix, q in zip(indices, key):
        total = symmetry.fuse(total, q if ix.direction == 1 else symmetry.dual(q))
    return total == symmetry.identity


def stack(tensors) -> BlockTensor:
    """Stack unbatched tensors with identical indices along a new batch axis."""
    tensors = list(tensors)
    first = tensors[0]
    for t in tensors[1:]:
        if t.indices != first.indices:
            raise StructuralError("cannot stack tensors with different indices")
    return BlockTensor(np.stack([t.data for t in tensors]), first.indices, first.symmetry,
                       nbatch=1, check=False)


# ---------------------------------------------------------------------------
# contraction
# ---------------------------------------------------------------------------

def contract(a: BlockTensor, b: BlockTensor, index_pairs) -> BlockTensor:
    """Contract ``a`` and ``b`` over ``index_pairs = [(axis_a, axis_b), ...]``.

    The result carries the free legs of ``a`` followed by those of ``b``.
    Paired legs must have identical sectors and opposite directions.
    """
    pairs = [(int(i), int(j)) for i, j in index_pairs]
    ax_a = [i for i, _ in pairs]
    ax_b = [j for _, j in pairs]
    if len(set(ax_a)) != len(ax_a) or len(set(ax_b)) != len(ax_b):
        raise StructuralError("an index appears twice in index_pairs")
    if a.symmetry != b.symmetry:
        raise StructuralError("cannot contract tensors with different symmetries")
    for i, j in pairs:
        if not (0 <= i < a.ndim and 0 <= j < b.ndim):
            raise StructuralError(f"index pair {(i, j)} out of range")
        if not a.indices[i].contractible_with(b.indices[j]):
            raise StructuralError(
                f"legs {i} and {j} are not contractible (sectors or directions differ)"
            )
    return _contract_unchecked(a, b, ax_a, ax_b)


def _contract_unchecked(a, b, ax_a, ax_b) -> BlockTensor:
    free_a = [i for i in range(a.ndim) if i not in ax_a]
    free_b = [j for j in range(b.ndim) if j not in ax_b]
    na, nb = a.nbatch, b.nbatch
    dims_a = [a.indices[i].dim for i in free_a]
    dims_b = [b.indices[j].dim for j in free_b]
    k = int(np.prod([a.indices[i].dim for i in ax_a], dtype=np.int64))
    A = a.data.transpose(list(range(na)) + [na + i for i in free_a] + [na + i for i in ax_a])
    A = A.reshape(a.data.shape[:na] + (int(np.prod(dims_a, dtype=np.int64)), k))
    B = b.data.transpose(list(range(nb)) + [nb + j for j in ax_b] + [nb + j for j in free_b])
    B = B.reshape(b.data.shape[:nb] + (k, int(np.prod(dims_b, dtype=np.int64))))
    C = np.matmul(A, B)
    batch = C.shape[:-2]
    C = C.reshape(batch + tuple(dims_a) + tuple(dims_b))
    indices = tuple(a.indices[i] for i in free_a) + tuple(b.indices[j] for j in free_b)
    return BlockTensor(C, indices, a.symmetry, nbatch=len(batch), check=False)


# ---------------------------------------------------------------------------
# factorizations
# ---------------------------------------------------------------------------

@dataclass
class SvdResult:
    """Outcome of :func:`svd_truncate`.

    ``singular_values`` maps each bond charge to the kept values (descending);
    for batched input the arrays have a leading batch axis and zero entries
    mark slots that are padding for that batch member.  ``truncation_weight``
    is the discarded fraction of the squared singular values (float, or an
    array over the batch).  ``norm`` is the root of the kept squared weight
    before optional renormalization.
    """

    left: BlockTensor
    singular_values: dict
    right: BlockTensor
    truncation_weight: object
    norm: object
    bond: ChargeIndex

    @property
    def kept_dim(self) -> int:
        return self.bond.dim


def _matricize(t: BlockTensor, left_axes):
    left_axes = [int(i) for i in left_axes]
    right_axes = [i for i in range(t.ndim) if i not in left_axes]
    if not left_axes or not right_axes:
        raise StructuralError("bipartition must be nonempty on both sides")
    if len(set(left_axes)) != len(left_axes) or any(not 0 <= i < t.ndim for i in left_axes):
        raise StructuralError(f"invalid bipartition {left_axes}")
    nb = t.nbatch
    data = t.data.transpose(list(range(nb)) + [nb + i for i in left_axes] + [nb + i for i in right_axes])
    left = tuple(t.indices[i] for i in left_axes)
    right = tuple(t.indices[i] for i in right_axes)
    nr = int(np.prod([ix.dim for ix in left], dtype=np.int64))
    nc = int(np.prod([ix.dim for ix in right], dtype=np.int64))
    M = data.reshape(t.batch_shape + (nr, nc))
    if nb == 0:
        M = M[None]
    return M, left, right


def _finish(t, left, right, U, Vh, bond_sectors):
    bond = ChargeIndex(tuple(bond_sectors), -1)
    if t.nbatch == 0:
        U, Vh = U[0], Vh[0]
    lshape = t.batch_shape + tuple(ix.dim for ix in left) + (bond.dim,)
    rshape = t.batch_shape + (bond.dim,) + tuple(ix.dim for ix in right)
    lt = BlockTensor(U.reshape(lshape), left + (bond,), t.symmetry, nbatch=t.nbatch, check=False)
    rt = BlockTensor(Vh.reshape(rshape), (bond.dual(),) + right, t.symmetry, nbatch=t.nbatch, check=False)
    return lt, rt, bond


def svd_truncate(t: BlockTensor, split, max_dim=None, cutoff: float = DEFAULT_CUTOFF,
                 absorb=None, normalize: bool = False) -> SvdResult:
    """Charge-block SVD of ``t`` across the bipartition ``split | rest``.

    Parameters
    ----------
    t : BlockTensor
    split : sequence of int
        Legs grouped into the left factor (in this order).
    max_dim : int, optional
        Keep at most this many singular values in total, selected jointly over
        all charge blocks.  Exact ties are resolved towards the lowest charge.
    cutoff : float
        Drop values with ``s**2 / sum(s**2) <= cutoff``.
    absorb : {None, 'left', 'right'}
        Multiply the kept singular values into one of the factors.
    normalize : bool
        Rescale the kept singular values to unit 2-norm.

    Returns
    -------
    SvdResult
        ``left`` has legs ``split + [bond(out)]``, ``right`` has
        ``[bond(in)] + rest``.

    Raises
    ------
    DegenerateInputError
        If all singular values vanish.
    """
    if max_dim is not None and max_dim < 1:
        raise StructuralError("max_dim must be >= 1")
    if cutoff < 0:
        raise StructuralError("cutoff must be >= 0")
    M, left, right = _matricize(t, split)
    nbatch, nr, nc = M.shape
    plan = _block_plan(left, right, t.symmetry)
    us, ss, vhs = [], [], []
    for _, r, c in plan:
        u, s, vh = np.linalg.svd(M[:, r[:, None], c[None, :]], full_matrices=False)
        us.append(u)
        ss.append(s)
        vhs.append(vh)
    if not ss:
        raise DegenerateInputError("tensor has no charge-conserving blocks")
    S = np.concatenate(ss, axis=1)
    S2 = S ** 2
    total = S2.sum(axis=1)
    if np.any(total == 0):
        raise DegenerateInputError("all singular values are zero")
    order = np.argsort(-S, axis=1, kind="stable")
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(S.shape[1])[None, :].repeat(nbatch, 0), axis=1)
    n_keep = np.count_nonzero(S2 > cutoff * total[:, None], axis=1)
    n_keep = np.maximum(n_keep, 1)
    if max_dim is not None:
        n_keep = np.minimum(n_keep, max_dim)
    keep = rank < n_keep[:, None]
    kept2 = np.where(keep, S2, 0.0).sum(axis=1)
    weight = np.clip((total - kept2) / total, 0.0, 1.0)
    norm = np.sqrt(kept2)

    sectors, svals = [], {}
    blocks = []
    off = 0
    for (q, r, c), u, s, vh in zip(plan, us, ss, vhs):
        k = s.shape[1]
        mask = keep[:, off:off + k]
        off += k
        kc = int(mask.sum(axis=1).max())
        if kc == 0:
            continue
        m = mask[:, :kc]
        sk = np.where(m, s[:, :kc], 0.0)
        if normalize:
            sk = sk / norm[:, None]
        sectors.append((q, kc))
        blocks.append((r, c, u[:, :, :kc] * m[:, None, :], sk, vh[:, :kc, :] * m[:, :, None]))
        svals[q] = sk if t.nbatch else sk[0]
    K = sum(kc for _, kc in sectors)
    U = np.zeros((nbatch, nr, K), complex)
    Vh = np.zeros((nbatch, K, nc), complex)
    off = 0
    for r, c, u, sk, vh in blocks:
        kc = sk.shape[1]
        if absorb == "left":
            u = u * sk[:, None, :]
        elif absorb == "right":
            vh = vh * sk[:, :, None]
        U[:, r, off:off + kc] = u
        Vh[:, off:off + kc, c] = vh
        off += kc
    lt, rt, bond = _finish(t, left, right, U, Vh, sectors)
    if t.nbatch == 0:
        weight, norm = float(weight[0]), float(norm[0])
    return SvdResult(lt, svals, rt, weight, norm, bond)


def qr(t: BlockTensor, split):
    """Charge-block QR: ``t = Q R`` with ``Q`` an isometry from the ``split`` legs."""
    M, left, right = _matricize(t, split)
    nbatch, nr, nc = M.shape
    plan = _block_plan(left, right, t.symmetry)
    sectors, parts = [], []
    for q, r, c in plan:
        qq, rr = np.linalg.qr(M[:, r[:, None], c[None, :]])
        sectors.append((q, qq.shape[-1]))
        parts.append((r, c, qq, rr))
    K = sum(k for _, k in sectors)
    Q = np.zeros((nbatch, nr, K), complex)
    R = np.zeros((nbatch, K, nc), complex)
    off = 0
    for r, c, qq, rr in parts:
        k = qq.shape[-1]
        Q[:, r, off:off + k] = qq
        R[:, off:off + k, c] = rr
        off += k
    lt, rt, _ = _finish(t, left, right, Q, R, sectors)
    return lt, rt


def lq(t: BlockTensor, split):
    """Charge-block LQ: ``t = L Q`` with ``Q`` a co-isometry onto the non-split legs."""
    M, left, right = _matricize(t, split)
    nbatch, nr, nc = M.shape
    plan = _block_plan(left, right, t.symmetry)
    sectors, parts = [], []
    for q, r, c in plan:
        qq, rr = np.linalg.qr(np.conj(np.swapaxes(M[:, r[:, None], c[None, :]], -1, -2)))
        ll = np.conj(np.swapaxes(rr, -1, -2))
        qh = np.conj(np.swapaxes(qq, -1, -2))
        sectors.append((q, qh.shape[-2]))
        parts.append((r, c, ll, qh))
    K = sum(k for _, k in sectors)
    Lm = np.zeros((nbatch, nr, K), complex)
    Qm = np.zeros((nbatch, K, nc), complex)
    off = 0
    for r, c, ll, qh in parts:
        k = qh.shape[-2]
        Lm[:, r, off:off + k] = ll
        Qm[:, off:off + k, c] = qh
        off += k
    lt, rt, _ = _finish(t, left, right, Lm, Qm, sectors)
    return lt, rt
