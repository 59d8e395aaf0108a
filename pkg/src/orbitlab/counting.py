"""Exact counts of lattice points, primitive vectors and congruence orbits in balls.

Representation numbers are built by convolving one-dimensional square
supports: the first two coordinates as a sparse x sparse pair enumeration
(chunked ``bincount``), every further coordinate as dense x sparse shifted
slice additions.  Primitive counts follow by Moebius inversion over square
divisors.  All arithmetic is integer-exact; widths are checked, never
wrapped.

Congruence orbits: the orbit of e_m under the principal congruence subgroup
of level q is taken to be the set of primitive v with v = residue (mod q).
This identification is an input assumption and is reported as such.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import CountOverflowError, DomainError, StructuralFailure

CHUNK = 1 << 22
MAGIC = b"OCNT"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHHQ")

ORBIT_ASSUMPTION = (
    "orbit of e_m under the level-q principal congruence subgroup is identified with "
    "the primitive vectors congruent to the residue mod q (strong approximation); assumed, not proved"
)


# ---------------------------------------------------------------------------
# integer helpers


def isqrt_array(a) -> np.ndarray:
    """Exact floor(sqrt(a)) for a non-negative int64 array."""
    a = np.asarray(a, dtype=np.int64)
    if a.size and a.min() < 0:
        raise DomainError("isqrt of a negative number")
    s = np.floor(np.sqrt(a.astype(np.float64))).astype(np.int64)
    s = np.minimum(s, 3037000499)  # keeps (s + 1)^2 comparisons overflow free
    # float sqrt can be off by one near perfect squares above 2^52
    pos = np.maximum(s, 1)
    s -= ((s > 0) & (s > a // pos)).astype(np.int64)
    s += (s + 1 <= a // (s + 1)).astype(np.int64)
    return s


def norm_bound(T) -> int:
    """floor(T^2) computed exactly, so |v| <= T iff |v|^2 <= norm_bound(T)."""
    if isinstance(T, (int, np.integer)):
        return int(T) * int(T)
    f = Fraction(T)
    return math.floor(f * f)


def mobius_sieve(n: int) -> np.ndarray:
    """mu(0..n) as int8 (mu(0) = 0)."""
    mu = np.ones(n + 1, dtype=np.int8)
    if n >= 0:
        mu[0] = 0
    is_comp = np.zeros(n + 1, dtype=bool)
    for p in range(2, n + 1):
        if is_comp[p]:
            continue
        is_comp[p * p::p] = True
        mu[p::p] *= -1
        mu[p * p::p * p] = 0
    return mu


# ---------------------------------------------------------------------------
# orbit specification


@dataclass(frozen=True)
class OrbitSpec:
    m: int
    q: int = 1
    residue: tuple = field(default=None)

    def __post_init__(self):
        if self.m < 1:
            raise DomainError("m must be >= 1")
        if self.q < 1:
            raise DomainError("modulus q must be >= 1")
        res = self.residue
        if res is None:
            res = (0,) * (self.m - 1) + (1,)
        res = tuple(int(c) % self.q for c in res)
        if len(res) != self.m:
            raise DomainError(f"residue has length {len(res)}, expected {self.m}")
        object.__setattr__(self, "residue", res)
        if math.gcd(self.q, *res) != 1:
            raise DomainError(f"residue {res} is not primitive mod {self.q}: the orbit is empty")

    def scaled(self, u: int) -> tuple:
        return tuple((u * c) % self.q for c in self.residue)

    def to_dict(self) -> dict:
        return {"m": self.m, "q": self.q, "residue": list(self.residue)}


# ---------------------------------------------------------------------------
# theta convolution


def square_support(c: int, q: int, n_max: int):
    """Distinct squares a^2 <= n_max over a = c (mod q), with multiplicities."""
    A = math.isqrt(n_max)
    a = np.arange(-A, A + 1, dtype=np.int64)
    a = a[(a - c) % q == 0]
    k, w = np.unique(a * a, return_counts=True)
    return k.astype(np.int64), w.astype(np.int64)


def _count_bound(m, n_max, q):
    per_coord = 2 * math.isqrt(n_max) // q + 2
    return per_coord ** m


def _auto_dtype(bound):
    if bound < 2**31:
        return np.int32
    if bound < 2**62:
        return np.int64
    return object


def _pair_convolve(s1, s2, n_max, out):
    """out[n] = sum_{k1 + k2 = n} w1 w2, chunked over n."""
    k1, w1 = s1
    k2, w2 = s2
    for lo in range(0, n_max + 1, CHUNK):
        hi = min(lo + CHUNK, n_max + 1)
        sel = k1 < hi
        a_k, a_w = k1[sel], w1[sel]
        i_lo = np.searchsorted(k2, lo - a_k, side="left")
        i_hi = np.searchsorted(k2, hi - a_k, side="left")
        lens = i_hi - i_lo
        keep = lens > 0
        a_k, a_w, i_lo, lens = a_k[keep], a_w[keep], i_lo[keep], lens[keep]
        total = int(lens.sum())
        if total == 0:
            continue
        starts = np.repeat(np.cumsum(lens) - lens, lens)
        idx = np.repeat(i_lo, lens) + (np.arange(total) - starts)
        vals = np.repeat(a_k, lens) + k2[idx] - lo
        wts = (np.repeat(a_w, lens) * w2[idx]).astype(np.float64)
        # weights are tiny integers; float64 bincount is exact far below 2^53
        counts = np.rint(np.bincount(vals, weights=wts, minlength=hi - lo)).astype(np.int64)
        out[lo:hi] = counts


def _dense_sparse(prev, support, n_max, dtype):
    k, w = support
    out = np.zeros(n_max + 1, dtype=dtype)
    for kk, ww in zip(k.tolist(), w.tolist()):
        if kk > n_max:
            break
        if dtype is object:
            out[kk:] += prev[: n_max + 1 - kk] * ww
        else:
            out[kk:] += prev[: n_max + 1 - kk] * dtype(ww)
    return out


def theta_convolve(m: int, n_max: int, dtype=None, q: int = 1, residue=None) -> np.ndarray:
    """r(n) = #{a in Z^m : |a|^2 = n, a = residue (mod q)} for 0 <= n <= n_max.

    ``dtype`` declares the result width; a count that does not fit raises
    :class:`CountOverflowError`.  By default the narrowest safe width is
    chosen from an a-priori bound (object dtype, i.e. Python ints, past int64).
    """
    if m < 1:
        raise DomainError("m must be >= 1")
    if n_max < 0:
        raise DomainError("n_max must be >= 0")
    residue = (0,) * m if residue is None else tuple(int(c) % q for c in residue)
    if len(residue) != m:
        raise DomainError("residue length must equal m")
    bound = _count_bound(m, n_max, q)
    work = np.int64 if bound < 2**62 else object
    supports = [square_support(c, q, n_max) for c in residue]
    if m == 1:
        acc = np.zeros(n_max + 1, dtype=np.int64)
        k, w = supports[0]
        acc[k] = w
    else:
        acc = np.zeros(n_max + 1, dtype=np.int64)
        _pair_convolve(supports[0], supports[1], n_max, acc)
        if work is object:
            acc = acc.astype(object)
        for sup in supports[2:]:
            acc = _dense_sparse(acc, sup, n_max, work)
    target = _auto_dtype(bound) if dtype is None else dtype
    return _narrow(acc, target)


def _narrow(arr, dtype):
    if dtype is object:
        return arr.astype(object)
    dtype = np.dtype(dtype)
    info = np.iinfo(dtype)
    if arr.size:
        hi, lo = max(arr.max(), 0), min(arr.min(), 0)
        if hi > info.max or lo < info.min:
            raise CountOverflowError(f"count {hi} does not fit declared width {dtype}")
    return arr.astype(dtype)


# ---------------------------------------------------------------------------
# primitive tables


def _square_mobius_invert(tables, n_max, q, mu=None):
    """prim(n) = sum_{d^2 | n, gcd(d, q) = 1} mu(d) r_{u(d)}(n / d^2).

    ``tables`` maps the unit u = d^{-1} mod q to the representation table of
    residue class u * residue.  Every partial sum is bounded by the total
    number of vectors of norm n, so the input width is safe throughout.
    """
    D = math.isqrt(n_max)
    mu = mobius_sieve(D) if mu is None else mu
    any_table = next(iter(tables.values()))
    prim = np.array(tables[1 % q], copy=True)
    for d in range(2, D + 1):
        md = int(mu[d])
        if md == 0 or math.gcd(d, q) != 1:
            continue
        src = tables[pow(d, -1, q) if q > 1 else 0]
        length = n_max // (d * d) + 1
        if any_table.dtype == object:
            prim[:: d * d][:length] += src[:length] * md
        else:
            prim[:: d * d][:length] += src[:length] * any_table.dtype.type(md)
    prim[0] = 0
    return prim


def primitive_table(r_all, n_max: int | None = None) -> np.ndarray:
    """r_prim(n) = sum_{d^2 | n} mu(d) r_all(n / d^2); r_prim(0) = 0."""
    r_all = np.asarray(r_all) if not isinstance(r_all, np.ndarray) else r_all
    n_max = len(r_all) - 1 if n_max is None else n_max
    if n_max > len(r_all) - 1:
        raise DomainError("r_all table is shorter than n_max")
    return _square_mobius_invert({0: r_all[: n_max + 1]}, n_max, 1)


@dataclass
class CountTable:
    m: int
    n_max: int
    r_all: np.ndarray
    r_prim: np.ndarray
    _cumulative: np.ndarray | None = field(default=None, repr=False)

    @property
    def cumulative(self) -> np.ndarray:
        """cumulative[n] = sum_{1 <= k <= n} r_prim(k) = N_m(sqrt(n))."""
        if self._cumulative is None:
            dt = object if self.r_prim.dtype == object else np.int64
            c = np.cumsum(self.r_prim, dtype=dt)
            self._cumulative = c
        return self._cumulative

    def count(self, T) -> int:
        n = norm_bound(T)
        if n > self.n_max:
            raise DomainError(f"T^2 = {n} exceeds table size {self.n_max}")
        if self._cumulative is not None:
            return int(self._cumulative[n])
        return int(self.r_prim[1: n + 1].sum(dtype=None if self.r_prim.dtype == object else np.int64))

    def ball_count(self, X) -> int:
        """B_m(X): nonzero lattice points (all, not only primitive) with |v| <= X."""
        n = norm_bound(X)
        return int(self.r_all[1: n + 1].sum(dtype=None if self.r_all.dtype == object else np.int64))

    def save(self, path) -> None:
        """Binary layout: 16-byte header, then r_all and r_prim as little-endian u64."""
        with open(path, "wb") as fh:
            fh.write(HEADER.pack(MAGIC, FORMAT_VERSION, self.m, self.n_max))
            for arr in (self.r_all, self.r_prim):
                for lo in range(0, self.n_max + 1, CHUNK):
                    block = arr[lo: lo + CHUNK]
                    if block.dtype == object:
                        if any(v < 0 or v >= 2**64 for v in block):
                            raise CountOverflowError("count does not fit u64")
                        block = np.array(block.tolist(), dtype=np.uint64)
                    elif block.size and block.min() < 0:
                        raise CountOverflowError("negative count cannot be stored as u64")
                    block.astype("<u8").tofile(fh)

    @classmethod
    def load(cls, path) -> "CountTable":
        path = Path(path)
        with open(path, "rb") as fh:
            head = fh.read(HEADER.size)
        if len(head) != HEADER.size:
            raise DomainError("truncated count table header")
        magic, version, m, n_max = HEADER.unpack(head)
        if magic != MAGIC:
            raise DomainError(f"bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise DomainError(f"unsupported table version {version}")
        data = np.fromfile(path, dtype="<u8", offset=HEADER.size)
        if len(data) != 2 * (n_max + 1):
            raise DomainError("count table body has the wrong length")
        dt = np.int64 if (data.size == 0 or data.max() < 2**63) else object
        r_all = data[: n_max + 1].astype(dt)
        r_prim = data[n_max + 1:].astype(dt)
        return cls(m, n_max, r_all, r_prim)

    def to_csv(self, fh) -> None:
        fh.write("n,r_all,r_prim\n")
        for lo in range(0, self.n_max + 1, CHUNK):
            hi = min(lo + CHUNK, self.n_max + 1)
            ns = range(lo, hi)
            fh.writelines(f"{n},{a},{p}\n" for n, a, p in zip(ns, self.r_all[lo:hi].tolist(),
                                                               self.r_prim[lo:hi].tolist()))


def build_table(m: int, n_max: int, dtype=None) -> CountTable:
    r_all = theta_convolve(m, n_max, dtype=dtype)
    return CountTable(m, n_max, r_all, primitive_table(r_all, n_max))


# ---------------------------------------------------------------------------
# lattice points in balls


def lattice_points_in_ball(m: int, N) -> np.ndarray:
    """#{v in Z^m : |v|^2 <= N} (zero vector included), vectorised over N."""
    N = np.atleast_1d(np.asarray(N, dtype=np.int64))
    out = np.zeros(len(N), dtype=np.int64)
    valid = N >= 0
    if not np.any(valid):
        return out
    if m == 1:
        out[valid] = 2 * isqrt_array(N[valid]) + 1
        return out
    uniq, inv = np.unique(N[valid], return_inverse=True)
    A = int(isqrt_array(uniq.max())[()]) if uniq.size else 0
    a2 = np.arange(A + 1, dtype=np.int64) ** 2
    args = uniq[:, None] - a2[None, :]
    weights = np.where(np.arange(A + 1) == 0, 1, 2)
    sub = np.zeros(args.shape, dtype=np.int64)
    ok = args >= 0
    sub[ok] = lattice_points_in_ball(m - 1, args[ok])
    out[valid] = (sub * weights[None, :]).sum(axis=1)[inv]
    return out


def ball_count(m: int, X) -> int:
    """B_m(X) = #{v in Z^m, v != 0, |v| <= X}."""
    return int(lattice_points_in_ball(m, [norm_bound(X)])[0]) - 1


def _count_primitive_mobius(m, n):
    D = math.isqrt(n)
    mu = mobius_sieve(D)
    ds = np.nonzero(mu)[0]
    ds = ds[ds >= 1]
    args = n // (ds.astype(np.int64) ** 2)
    total = 0
    # a block of arguments at a time keeps the level-2 broadcast small
    step = 256 if m > 2 else 64
    for lo in range(0, len(ds), step):
        pts = lattice_points_in_ball(m, args[lo: lo + step]) - 1
        total += int(np.dot(mu[ds[lo: lo + step]].astype(np.int64), pts))
    return total


def count_primitive(m: int, T, method: str = "mobius") -> int:
    """N_m(T): primitive v in Z^m with |v| <= T.

    ``method``: "mobius" sums mu(d) B_m(T/d); "table" sums the r_prim table;
    "both" runs the two and raises :class:`StructuralFailure` on mismatch.
    """
    if m < 1:
        raise DomainError("m must be >= 1")
    if T < 1:
        raise DomainError("T must be >= 1")
    n = norm_bound(T)
    if method == "mobius":
        return _count_primitive_mobius(m, n)
    if method == "table":
        return build_table(m, n).count(T)
    if method == "both":
        a = _count_primitive_mobius(m, n)
        b = build_table(m, n).count(T)
        if a != b:
            raise StructuralFailure(f"Moebius path {a} != table path {b} for m={m}, T={T}",
                                    {"mobius": a, "table": b})
        return a
    raise DomainError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# congruence orbits


def orbit_shell_counts(spec: OrbitSpec, n_max: int) -> np.ndarray:
    """c[n] = #{primitive v = residue (mod q) : |v|^2 = n}."""
    if n_max < 0:
        raise DomainError("n_max must be >= 0")
    q = spec.q
    if q == 1:
        return primitive_table(theta_convolve(spec.m, n_max), n_max)
    cache = {}
    tables = {}
    for u in range(1, q):
        if math.gcd(u, q) != 1:
            continue
        res = spec.scaled(u)
        neg = tuple((-c) % q for c in res)
        key = min(res, neg)  # v -> -v preserves norms
        if key not in cache:
            cache[key] = theta_convolve(spec.m, n_max, dtype=np.int64, q=q, residue=res)
        tables[u] = cache[key]
    return _square_mobius_invert(tables, n_max, q)


class OrbitCounter:
    """Reusable exact counter for one orbit; grows its shell table on demand."""

    def __init__(self, spec: OrbitSpec):
        self.spec = spec
        self._n_max = -1
        self._shells = None
        self._cum = None

    def _ensure(self, n):
        if n > self._n_max:
            size = max(n, 2 * self._n_max if self._n_max > 0 else n)
            self._shells = orbit_shell_counts(self.spec, size)
            dt = object if self._shells.dtype == object else np.int64
            self._cum = np.cumsum(self._shells, dtype=dt)
            self._n_max = size

    def shells(self, n_max: int) -> np.ndarray:
        self._ensure(n_max)
        return self._shells[: n_max + 1]

    def count(self, T) -> int:
        n = norm_bound(T)
        self._ensure(n)
        return int(self._cum[n])

    def counts(self, Ts) -> list:
        ns = [norm_bound(T) for T in Ts]
        self._ensure(max(ns))
        return [int(self._cum[n]) for n in ns]


def count_congruence_orbit(spec: OrbitSpec, T) -> int:
    if T < 1:
        raise DomainError("T must be >= 1")
    return OrbitCounter(spec).count(T)


def orbital_dirichlet_partial(spec: OrbitSpec, s: float, R) -> float:
    """sum over orbit points with |v| <= R of |v|^{-s}."""
    if R < 1:
        raise DomainError("R must be >= 1")
    return dirichlet_partial_sums(spec, s, [R])[0]


def dirichlet_partial_sums(spec: OrbitSpec, s: float, radii, counter: OrbitCounter | None = None) -> list:
    ns = [norm_bound(R) for R in radii]
    counter = OrbitCounter(spec) if counter is None else counter
    shells = counter.shells(max(ns)).astype(np.float64)
    idx = np.arange(len(shells), dtype=np.float64)
    terms = np.zeros(len(shells))
    nz = shells > 0
    terms[nz] = shells[nz] * idx[nz] ** (-0.5 * s)
    cum = np.cumsum(terms)
    return [float(cum[n]) for n in ns]
