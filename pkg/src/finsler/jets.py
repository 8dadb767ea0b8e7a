"""Truncated multivariate Taylor arithmetic.

A :class:`Jet` stores the Taylor coefficients of a (possibly tensor-valued)
quantity in ``nvars`` infinitesimal seeds, truncated at total degree
``order``.  Coefficients live in a dense trailing axis indexed by the
monomials of a :class:`JetSpace`; monomials are enumerated degree by degree,
so the space of a lower order is always a prefix of a higher one and
truncation is a slice.

Every quantity the engine needs (fundamental tensor, spray, Christoffel
symbols, curvature and their derivatives) is obtained by running ordinary
arithmetic on jets seeded at a base point, so derivatives are exact up to
floating-point roundoff.
"""
from __future__ import annotations

import functools
import itertools
import math
from collections.abc import Sequence

import numpy as np

_SUM_INDEX = "z"


class DomainError(ArithmeticError):
    """An elementary operation is singular at the value part of its argument."""


class JetSpace:
    """Monomial bookkeeping for jets in ``nvars`` seeds up to ``order``."""

    def __init__(self, nvars: int, order: int):
        if nvars < 1 or order < 0:
            raise ValueError(f"invalid jet space ({nvars} seeds, order {order})")
        self.nvars = nvars
        self.order = order
        exps = []
        self.degree_start = []
        for d in range(order + 1):
            self.degree_start.append(len(exps))
            for combo in itertools.combinations_with_replacement(range(nvars), d):
                e = [0] * nvars
                for i in combo:
                    e[i] += 1
                exps.append(e)
        self.degree_start.append(len(exps))
        self.exponents = np.array(exps, dtype=np.int64).reshape(-1, nvars)
        self.size = len(exps)
        self.degrees = self.exponents.sum(axis=1)
        self._base = order + 1
        self._weights = self._base ** np.arange(nvars, dtype=np.int64)
        self.keys = self.exponents @ self._weights
        self._key_order = np.argsort(self.keys)
        self._sorted_keys = self.keys[self._key_order]
        self.index = {tuple(int(a) for a in e): i for i, e in enumerate(self.exponents)}
        self.factorials = np.array(
            [math.prod(math.factorial(int(a)) for a in e) for e in self.exponents],
            dtype=float,
        )
        self._build_products()

    def lookup(self, keys):
        pos = np.searchsorted(self._sorted_keys, keys)
        return self._key_order[pos]

    def _build_products(self):
        pa, pb = [], []
        ds = self.degree_start
        for da in range(self.order + 1):
            ia = np.arange(ds[da], ds[da + 1])
            for db in range(self.order + 1 - da):
                ib = np.arange(ds[db], ds[db + 1])
                A, B = np.meshgrid(ia, ib, indexing="ij")
                pa.append(A.ravel())
                pb.append(B.ravel())
        pa = np.concatenate(pa)
        pb = np.concatenate(pb)
        pc = self.lookup(self.keys[pa] + self.keys[pb])
        perm = np.argsort(pc, kind="stable")
        self.pa = pa[perm]
        self.pb = pb[perm]
        self.starts = np.searchsorted(pc[perm], np.arange(self.size))

    def key_of(self, exps):
        return np.asarray(exps, dtype=np.int64) @ self._weights

    @functools.cached_property
    def _diff_tables(self):
        lower = self.degree_start[self.order]
        low_exps = self.exponents[:lower]
        tables = []
        for v in range(self.nvars):
            src = self.lookup(self.key_of(low_exps) + self._weights[v])
            tables.append((src, (low_exps[:, v] + 1).astype(float)))
        return tables

    def mul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Cauchy product of coefficient arrays (broadcast over leading axes)."""
        prod = a[..., self.pa] * b[..., self.pb]
        return np.add.reduceat(prod, self.starts, axis=-1)

    def __repr__(self):
        return f"JetSpace(nvars={self.nvars}, order={self.order})"


@functools.lru_cache(maxsize=None)
def jet_space(nvars: int, order: int) -> JetSpace:
    return JetSpace(nvars, order)


def _is_jet(obj) -> bool:
    return isinstance(obj, Jet)


class Jet:
    """Truncated Taylor expansion, optionally tensor-valued.

    ``c`` has shape ``(*shape, space.size)``; ``c[..., 0]`` is the value part.
    Arithmetic is elementwise over the tensor axes with numpy broadcasting;
    contractions go through :func:`jeinsum`.
    """

    __slots__ = ("space", "c")
    __array_priority__ = 1000

    def __init__(self, space: JetSpace, coeffs):
        self.space = space
        self.c = np.asarray(coeffs, dtype=float)
        if self.c.shape[-1:] != (space.size,):
            raise ValueError("coefficient axis does not match the jet space")

    # construction -----------------------------------------------------
    @classmethod
    def constant(cls, space: JetSpace, value) -> Jet:
        value = np.asarray(value, dtype=float)
        c = np.zeros(value.shape + (space.size,))
        c[..., 0] = value
        return cls(space, c)

    @classmethod
    def variable(cls, space: JetSpace, seed: int, value: float = 0.0) -> Jet:
        c = np.zeros(space.size)
        c[0] = value
        e = [0] * space.nvars
        e[seed] = 1
        if space.order > 0:
            c[space.index[tuple(e)]] = 1.0
        return cls(space, c)

    @classmethod
    def stack(cls, items: Sequence, axis: int = 0) -> Jet:
        """Stack jets (or plain numbers) into one tensor-valued jet."""
        jets = [it for it in items if _is_jet(it)]
        if not jets:
            raise ValueError("stack needs at least one jet")
        order = min(j.order for j in jets)
        space = jet_space(jets[0].space.nvars, order)
        arrs = []
        for it in items:
            if _is_jet(it):
                arrs.append(it.truncate(order).c)
            else:
                arrs.append(Jet.constant(space, it).c)
        if axis < 0:
            axis -= 1
        return cls(space, np.stack(arrs, axis=axis))

    # inspection --------------------------------------------------------
    @property
    def order(self) -> int:
        return self.space.order

    @property
    def shape(self) -> tuple:
        return self.c.shape[:-1]

    @property
    def value(self):
        v = self.c[..., 0]
        return float(v) if v.ndim == 0 else v.copy()

    def coeff(self, multi_index) -> float | np.ndarray:
        return self.c[..., self.space.index[tuple(multi_index)]]

    def partial(self, multi_index):
        """Mixed partial derivative with the given exponents, at the base point."""
        idx = self.space.index[tuple(multi_index)]
        return self.c[..., idx] * self.space.factorials[idx]

    @property
    def coeffs(self) -> dict:
        """Coefficients keyed by exponent tuple (scalar jets only)."""
        if self.shape:
            raise ValueError("coeffs view is only defined for scalar jets")
        return {tuple(int(a) for a in e): float(v) for e, v in zip(self.space.exponents, self.c)}

    def __float__(self):
        if self.shape:
            raise TypeError("only scalar jets convert to float")
        return float(self.c[0])

    def __repr__(self):
        return f"Jet(shape={self.shape}, nvars={self.space.nvars}, order={self.order}, value={self.value!r})"

    # structural --------------------------------------------------------
    def truncate(self, order: int) -> Jet:
        if order == self.order:
            return self
        if order > self.order:
            raise ValueError("cannot raise the order of a jet")
        space = jet_space(self.space.nvars, order)
        return Jet(space, self.c[..., : space.size])

    def extend(self, order: int) -> Jet:
        """Raise the order, taking the missing coefficients to be zero."""
        if order <= self.order:
            return self.truncate(order)
        space = jet_space(self.space.nvars, order)
        c = np.zeros(self.shape + (space.size,))
        c[..., : self.space.size] = self.c
        return Jet(space, c)

    def __getitem__(self, idx) -> Jet:
        if not isinstance(idx, tuple):
            idx = (idx,)
        if any(i is Ellipsis for i in idx):
            raise IndexError("Ellipsis is not supported when indexing a jet")
        return Jet(self.space, self.c[idx + (Ellipsis,)])

    def __len__(self):
        return self.shape[0]

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def transpose(self, *axes) -> Jet:
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        nd = len(self.shape)
        return Jet(self.space, self.c.transpose(tuple(axes) + (nd,)))

    def sum(self, axis=None) -> Jet:
        nd = len(self.shape)
        if axis is None:
            axis = tuple(range(nd))
        return Jet(self.space, self.c.sum(axis=axis))

    def copy(self) -> Jet:
        return Jet(self.space, self.c.copy())

    # calculus ----------------------------------------------------------
    def diff(self, seed: int) -> Jet:
        """Partial derivative in one seed; the result has order one lower."""
        if self.order == 0:
            raise ValueError("cannot differentiate an order-0 jet")
        src, fac = self.space._diff_tables[seed]
        return Jet(jet_space(self.space.nvars, self.order - 1), self.c[..., src] * fac)

    def grad(self, seeds) -> Jet:
        """Derivatives in the given seeds, stacked on a new trailing tensor axis."""
        if self.order == 0:
            raise ValueError("cannot differentiate an order-0 jet")
        space = jet_space(self.space.nvars, self.order - 1)
        parts = []
        for s in seeds:
            src, fac = self.space._diff_tables[s]
            parts.append(self.c[..., src] * fac)
        return Jet(space, np.stack(parts, axis=-2))

    def integrate(self, seed: int) -> Jet:
        """Antiderivative in one seed vanishing at seed = 0 (truncated at ``order``)."""
        if self.order == 0:
            return Jet(self.space, np.zeros_like(self.c))
        src, fac = self.space._diff_tables[seed]
        out = np.zeros_like(self.c)
        lower = self.space.degree_start[self.order]
        out[..., src] = self.c[..., :lower] / fac
        return Jet(self.space, out)

    def compose(self, subs: Sequence[Jet]) -> Jet:
        """Substitute jets (with zero value part) for the seeds of this jet.

        ``subs[i]`` replaces seed ``i``; all substitutions share one target
        space.  The result has order ``min(self.order, target order)``.
        """
        if len(subs) != self.space.nvars:
            raise ValueError("need one substitution per seed")
        target = min(s.order for s in subs)
        order = min(self.order, target)
        tspace = jet_space(subs[0].space.nvars, order)
        S = np.stack([s.truncate(order).c for s in subs])
        if np.any(np.abs(S[:, 0]) > 0.0):
            raise ValueError("substitutions must have zero value part")
        src_space = jet_space(self.space.nvars, order)
        exps = src_space.exponents
        mono = np.zeros((src_space.size, tspace.size))
        mono[0, 0] = 1.0
        for d in range(1, order + 1):
            lo, hi = src_space.degree_start[d], src_space.degree_start[d + 1]
            block = exps[lo:hi]
            var = np.argmax(block > 0, axis=1)
            parent_exps = block.copy()
            parent_exps[np.arange(len(block)), var] -= 1
            parents = src_space.lookup(src_space.key_of(parent_exps))
            mono[lo:hi] = tspace.mul(mono[parents], S[var])
        return Jet(tspace, self.truncate(order).c @ mono)

    # arithmetic --------------------------------------------------------
    def _coerce(self, other):
        """Return (space, a, b) coefficient arrays, or None for plain operands."""
        if self.space.nvars != other.space.nvars:
            raise ValueError("jets over different seed sets")
        order = min(self.order, other.order)
        return jet_space(self.space.nvars, order), self.truncate(order).c, other.truncate(order).c

    def __add__(self, other):
        if _is_jet(other):
            space, a, b = self._coerce(other)
            return Jet(space, a + b)
        other = np.asarray(other, dtype=float)
        shape = np.broadcast_shapes(self.shape, other.shape)
        c = np.broadcast_to(self.c, shape + (self.space.size,)).copy()
        c[..., 0] += other
        return Jet(self.space, c)

    __radd__ = __add__

    def __neg__(self):
        return Jet(self.space, -self.c)

    def __pos__(self):
        return self

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if _is_jet(other):
            space, a, b = self._coerce(other)
            return Jet(space, space.mul(a, b))
        return Jet(self.space, self.c * np.asarray(other, dtype=float)[..., None])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if _is_jet(other):
            return self * reciprocal(other)
        other = np.asarray(other, dtype=float)
        if np.any(other == 0.0):
            raise DomainError("division by zero")
        return Jet(self.space, self.c / other[..., None])

    def __rtruediv__(self, other):
        return reciprocal(self) * other

    def __pow__(self, p):
        return power(self, p)


# elementwise functions ------------------------------------------------------

def _series(u: Jet, coefs) -> Jet:
    """Evaluate sum_k coefs[k] * (u - u0)^k on the nilpotent part of ``u``."""
    space = u.space
    h = u.c.copy()
    h[..., 0] = 0.0
    out = np.zeros_like(u.c)
    out[..., 0] = coefs[0]
    p = h
    for k in range(1, space.order + 1):
        out += np.asarray(coefs[k])[..., None] * p
        if k < space.order:
            p = space.mul(p, h)
    return Jet(space, out)


def _value(u: Jet) -> np.ndarray:
    return u.c[..., 0]


def reciprocal(u: Jet) -> Jet:
    c0 = _value(u)
    if np.any(c0 == 0.0):
        raise DomainError("division by a jet with zero value part")
    coefs = [(-1.0) ** k / c0 ** (k + 1) for k in range(u.order + 1)]
    return _series(u, coefs)


def _binom(p: float, k: int) -> float:
    out = 1.0
    for j in range(k):
        out *= (p - j) / (j + 1)
    return out


def sqrt(u):
    if _is_jet(u):
        c0 = _value(u)
        if np.any(c0 <= 0.0):
            raise DomainError("sqrt of a jet with non-positive value part")
        coefs = [_binom(0.5, k) * c0 ** (0.5 - k) for k in range(u.order + 1)]
        return _series(u, coefs)
    if np.any(np.asarray(u) < 0.0):
        raise DomainError("sqrt of a negative number")
    return np.sqrt(u) if np.ndim(u) else math.sqrt(u)


def exp(u):
    if _is_jet(u):
        e = np.exp(_value(u))
        return _series(u, [e / math.factorial(k) for k in range(u.order + 1)])
    return np.exp(u) if np.ndim(u) else math.exp(u)


def sin(u):
    if _is_jet(u):
        c0 = _value(u)
        return _series(u, [np.sin(c0 + k * math.pi / 2) / math.factorial(k) for k in range(u.order + 1)])
    return np.sin(u) if np.ndim(u) else math.sin(u)


def cos(u):
    if _is_jet(u):
        c0 = _value(u)
        return _series(u, [np.cos(c0 + k * math.pi / 2) / math.factorial(k) for k in range(u.order + 1)])
    return np.cos(u) if np.ndim(u) else math.cos(u)


def _int_power(u: Jet, n: int) -> Jet:
    result = None
    base = u
    while n:
        if n & 1:
            result = base if result is None else result * base
        n >>= 1
        if n:
            base = base * base
    return result


def power(u, p):
    """``u ** p`` for a constant exponent ``p``.

    Integer exponents are computed by repeated multiplication and accept
    any base; other exponents need a positive value part.
    """
    if _is_jet(p):
        raise TypeError("jet-valued exponents are not supported")
    p = float(p)
    if not _is_jet(u):
        if p != int(p) and np.any(np.asarray(u) < 0.0):
            raise DomainError("non-integer power of a negative number")
        if p < 0 and np.any(np.asarray(u) == 0.0):
            raise DomainError("negative power of zero")
        return np.power(u, p) if np.ndim(u) else float(u) ** p
    if p == int(p):
        n = int(p)
        if n == 0:
            return Jet.constant(u.space, np.ones(u.shape))
        if n > 0:
            return _int_power(u, n)
        return reciprocal(_int_power(u, -n))
    c0 = _value(u)
    if np.any(c0 <= 0.0):
        raise DomainError("non-integer power of a jet with non-positive value part")
    return _series(u, [_binom(p, k) * c0 ** (p - k) for k in range(u.order + 1)])


# contractions -------------------------------------------------------------

def _split_subscripts(subscripts: str):
    lhs, out = subscripts.replace(" ", "").split("->")
    return lhs.split(","), out


def jeinsum(subscripts: str, *operands):
    """``np.einsum`` over the tensor axes of jets and plain arrays.

    Jet operands are multiplied with the truncated Cauchy product; plain
    arrays act as constants.  Explicit output subscripts are required.
    """
    ins, out = _split_subscripts(subscripts)
    if len(ins) != len(operands):
        raise ValueError("subscripts do not match operands")
    if _SUM_INDEX in subscripts:
        raise ValueError(f"subscript letter {_SUM_INDEX!r} is reserved")
    items = list(zip(ins, operands))
    jets = [(s, op) for s, op in items if _is_jet(op)]
    consts = [(s, np.asarray(op, dtype=float)) for s, op in items if not _is_jet(op)]
    if not jets:
        return np.einsum(subscripts, *operands)
    # fold the constants into the first jet
    s0, j0 = jets[0]
    if consts:
        keep = set(out) | set("".join(s for s, _ in jets[1:]))
        letters = s0 + "".join(s for s, _ in consts)
        mid = "".join(dict.fromkeys(ch for ch in letters if ch in keep))
        spec = ",".join([s0 + _SUM_INDEX] + [s for s, _ in consts]) + "->" + mid + _SUM_INDEX
        j0 = Jet(j0.space, np.einsum(spec, j0.c, *[a for _, a in consts]))
        s0 = mid
    acc_s, acc = s0, j0
    rest = jets[1:]
    for k, (s, op) in enumerate(rest):
        keep = set(out) | set("".join(t for t, _ in rest[k + 1:]))
        mid = "".join(dict.fromkeys(ch for ch in acc_s + s if ch in keep))
        space, a, b = acc._coerce(op)
        ga = a[..., space.pa]
        gb = b[..., space.pb]
        prod = np.einsum(f"{acc_s}{_SUM_INDEX},{s}{_SUM_INDEX}->{mid}{_SUM_INDEX}", ga, gb)
        acc = Jet(space, np.add.reduceat(prod, space.starts, axis=-1))
        acc_s = mid
    if acc_s != out:
        acc = Jet(acc.space, np.einsum(f"{acc_s}{_SUM_INDEX}->{out}{_SUM_INDEX}", acc.c))
    return acc


def matinv(a: Jet) -> Jet:
    """Inverse of a matrix-valued jet by the Neumann series around its value."""
    a0 = _value(a)
    inv0 = np.linalg.inv(a0)
    h = a.c.copy()
    h[..., 0] = 0.0
    x = Jet(a.space, -np.einsum("ij,jkz->ikz", inv0, h))
    term = Jet.constant(a.space, inv0)
    result = term
    for _ in range(a.order):
        term = jeinsum("ij,jk->ik", x, term)
        result = result + term
    return result


def derive(f, base, directions, orders) -> float:
    """Mixed directional derivative of ``f`` at ``base``.

    Returns ``d^k1/dt1^k1 ... d^kr/dtr^kr f(base + sum_i t_i d_i)`` at t = 0,
    where ``f`` takes a sequence of scalars and is evaluated on jets.
    """
    base = np.asarray(base, dtype=float)
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    orders = tuple(int(k) for k in orders)
    if len(orders) != len(dirs):
        raise ValueError("one order per direction is required")
    if any(k < 0 for k in orders):
        raise ValueError("orders must be non-negative")
    space = jet_space(len(dirs), sum(orders))
    args = []
    for i in range(len(base)):
        c = np.zeros(space.size)
        c[0] = base[i]
        for s in range(len(dirs)):
            e = [0] * len(dirs)
            e[s] = 1
            if space.order >= 1:
                c[space.index[tuple(e)]] = dirs[s, i]
        args.append(Jet(space, c))
    res = f(args)
    if not _is_jet(res):
        return float(res) if sum(orders) == 0 else 0.0
    return float(res.partial(orders))
