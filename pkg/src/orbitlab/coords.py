"""The chart g = n_H(x) a_H(t) k_H(phi) a(r) k(theta) on SL_m(R).

Conventions:

* ``n_H(x)``: identity plus the strictly upper triangular entries of rows
  0..m-2 (row-major), which covers the SL_{m-1} unipotent part and the
  translation column of H.
* ``a_H(t)``: diag(a_1, ..., a_{m-1}, 1) with log a = sum_i t_i (E_ii - E_{i+1,i+1}).
* ``k_H(phi)``: SO(m-1) in the upper-left block, nested sphere charts.
* ``a(r)``: diag(r^{-1/(m-1)}, ..., r^{-1/(m-1)}, r).
* ``k(theta)``: k_1(theta_1) ... k_{m-1}(theta_{m-1}), k_i the rotation
  generated by E_{m,i} - E_{i,m}, so e_m k(theta) is the unit vector
  u_i = cos(theta_1)...cos(theta_{i-1}) sin(theta_i), u_m = prod cos(theta_i).

Angles theta_1..theta_{n-2} of an n-sphere chart live in (-pi/2, pi/2) and
the last one in (-pi, pi].  All functions with an ``_arrays`` suffix are
vectorised over a leading batch axis.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ChartError, ChartSingularityError, DomainError
from .liealg import build_basis

DET_TOL = 1e-10
SINGULAR_COS = 1e-8


def chart_dims(m: int) -> dict:
    if m < 2:
        raise DomainError(f"m must be >= 2, got {m}")
    return {
        "x": m * (m - 1) // 2,
        "t": m - 2,
        "phi": (m - 1) * (m - 2) // 2,
        "r": 1,
        "theta": m - 1,
    }


@dataclass
class CoordinateChart:
    x: np.ndarray
    t: np.ndarray
    phi: np.ndarray
    r: float
    theta: np.ndarray
    m: int = field(init=False)

    def __post_init__(self):
        self.x = np.atleast_1d(np.asarray(self.x, dtype=float))
        self.t = np.atleast_1d(np.asarray(self.t, dtype=float))
        self.phi = np.atleast_1d(np.asarray(self.phi, dtype=float))
        self.theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        self.r = float(self.r)
        self.m = len(self.theta) + 1
        dims = chart_dims(self.m)
        for name in ("x", "t", "phi"):
            if len(getattr(self, name)) != dims[name]:
                raise DomainError(
                    f"chart field {name} has length {len(getattr(self, name))}, expected {dims[name]} for m={self.m}"
                )
        if not self.r > 0:
            raise DomainError(f"chart radius must be positive, got {self.r}")

    @classmethod
    def zero(cls, m: int, r: float = 1.0) -> "CoordinateChart":
        d = chart_dims(m)
        return cls(np.zeros(d["x"]), np.zeros(d["t"]), np.zeros(d["phi"]), r, np.zeros(d["theta"]))

    @classmethod
    def from_vector(cls, vec, m: int) -> "CoordinateChart":
        vec = np.asarray(vec, dtype=float)
        d = chart_dims(m)
        if vec.shape != (m * m - 1,):
            raise DomainError(f"chart vector must have length {m * m - 1}")
        parts = np.split(vec, np.cumsum([d["x"], d["t"], d["phi"], 1]))
        return cls(parts[0], parts[1], parts[2], parts[3][0], parts[4])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.x, self.t, self.phi, [self.r], self.theta])

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "x": self.x.tolist(),
            "t": self.t.tolist(),
            "phi": self.phi.tolist(),
            "r": self.r,
            "theta": self.theta.tolist(),
        }


def as_group_element(g, m: int | None = None) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise DomainError(f"group element must be a square matrix, got shape {g.shape}")
    if m is not None and g.shape[0] != m:
        raise DomainError(f"expected a {m}x{m} matrix, got {g.shape}")
    if abs(np.linalg.det(g) - 1.0) > DET_TOL:
        raise DomainError(f"determinant {np.linalg.det(g)!r} is not 1")
    return g


# ---------------------------------------------------------------------------
# building blocks (batched)


def unipotent_arrays(x, m: int) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.broadcast_to(np.eye(m), (len(x), m, m)).copy()
    rows, cols = np.triu_indices(m, k=1)
    # rows are 0..m-2 automatically, so this is exactly the H-unipotent block
    out[:, rows, cols] = x
    return out


def h_diagonal_logs(t, m: int) -> np.ndarray:
    """log a_1..log a_{m-1} for a_H(t); shape (N, m-1)."""
    t = np.atleast_2d(np.asarray(t, dtype=float))
    n = len(t)
    logs = np.zeros((n, m - 1))
    if m > 2:
        logs[:, :-1] += t
        logs[:, 1:] -= t
    return logs


def a_h_arrays(t, m: int) -> np.ndarray:
    logs = h_diagonal_logs(t, m)
    d = np.concatenate([np.exp(logs), np.ones((len(logs), 1))], axis=1)
    return _diag_batch(d)


def _diag_batch(d):
    n, m = d.shape
    out = np.zeros((n, m, m))
    idx = np.arange(m)
    out[:, idx, idx] = d
    return out


def a_radial(r, m: int) -> np.ndarray:
    """a(r) = diag(r^{-1/(m-1)}, ..., r); batched when r is an array."""
    r = np.asarray(r, dtype=float)
    scalar = r.ndim == 0
    r = r.reshape(-1)
    d = np.repeat((r ** (-1.0 / (m - 1)))[:, None], m, axis=1)
    d[:, -1] = r
    out = _diag_batch(d)
    return out[0] if scalar else out


def sphere_rotation_arrays(theta, n: int) -> np.ndarray:
    """k_1(theta_1)...k_{n-1}(theta_{n-1}) in SO(n); batch shape (N, n, n)."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    N = len(theta)
    out = np.broadcast_to(np.eye(n), (N, n, n)).copy()
    last = n - 1
    for i in range(n - 1):
        c, s = np.cos(theta[:, i]), np.sin(theta[:, i])
        rot = np.broadcast_to(np.eye(n), (N, n, n)).copy()
        rot[:, i, i] = c
        rot[:, last, last] = c
        rot[:, last, i] = s
        rot[:, i, last] = -s
        out = out @ rot
    return out


def sphere_point_arrays(theta) -> np.ndarray:
    """u = e_n k(theta) in closed form; shape (N, n)."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    N, k = theta.shape
    u = np.empty((N, k + 1))
    run = np.ones(N)
    for i in range(k):
        u[:, i] = run * np.sin(theta[:, i])
        run = run * np.cos(theta[:, i])
    u[:, k] = run
    return u


def sphere_angles(u) -> np.ndarray:
    """Invert :func:`sphere_point_arrays` for one unit vector u in R^n."""
    u = np.asarray(u, dtype=float)
    n = len(u)
    nrm = np.linalg.norm(u)
    if nrm == 0:
        raise ChartError("zero vector has no sphere coordinates")
    u = u / nrm
    theta = np.empty(n - 1)
    for i in range(n - 2):
        rest = np.linalg.norm(u[i + 1:])
        theta[i] = math.atan2(u[i], rest)
        # cos(theta_i) relative to the current running radius
        running = np.linalg.norm(u[i:])
        if rest < SINGULAR_COS * max(running, 1e-300):
            raise ChartSingularityError(f"sphere chart degenerates at angle index {i}")
    theta[n - 2] = math.atan2(u[n - 2], u[n - 1])
    return theta


def sphere_density_arrays(theta, n: int) -> np.ndarray:
    """Area density of S^{n-1} in the nested angles: prod_j cos(theta_j)^(n-2-j)."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    dens = np.ones(len(theta))
    for j in range(n - 2):
        dens *= np.cos(theta[:, j]) ** (n - 2 - j)
    return dens


def so_compose_arrays(phi, n: int) -> np.ndarray:
    """SO(n) element from nested sphere angles (SO(n-1) block first)."""
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    N = len(phi)
    if n == 1:
        return np.ones((N, 1, 1))
    p = (n - 1) * (n - 2) // 2
    inner = so_compose_arrays(phi[:, :p], n - 1)
    emb = np.broadcast_to(np.eye(n), (N, n, n)).copy()
    emb[:, : n - 1, : n - 1] = inner
    return emb @ sphere_rotation_arrays(phi[:, p:], n)


def so_angles(Q) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    n = Q.shape[0]
    if n == 1:
        return np.zeros(0)
    theta = sphere_angles(Q[-1])
    rest = Q @ sphere_rotation_arrays(theta, n)[0].T
    return np.concatenate([so_angles(rest[: n - 1, : n - 1]), theta])


def so_density_arrays(phi, n: int) -> np.ndarray:
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    dens = np.ones(len(phi))
    start = 0
    for k in range(2, n + 1):
        dens *= sphere_density_arrays(phi[:, start:start + k - 1], k)
        start += k - 1
    return dens


# ---------------------------------------------------------------------------
# chart


def _split(vecs, m):
    d = chart_dims(m)
    cuts = np.cumsum([d["x"], d["t"], d["phi"], 1])
    x, t, phi, r, theta = np.split(np.atleast_2d(vecs), cuts, axis=1)
    return x, t, phi, r[:, 0], theta


def compose_arrays(vecs, m: int) -> np.ndarray:
    """Batched compose on chart vectors (x, t, phi, r, theta) of shape (N, m^2-1)."""
    x, t, phi, r, theta = _split(vecs, m)
    N = len(r)
    k_h = np.broadcast_to(np.eye(m), (N, m, m)).copy()
    k_h[:, : m - 1, : m - 1] = so_compose_arrays(phi, m - 1)
    return (
        unipotent_arrays(x, m)
        @ a_h_arrays(t, m)
        @ k_h
        @ a_radial(r, m).reshape(N, m, m)
        @ sphere_rotation_arrays(theta, m)
    )


def compose(chart: CoordinateChart, m: int | None = None) -> np.ndarray:
    if m is not None and m != chart.m:
        raise DomainError(f"chart has m={chart.m}, requested m={m}")
    return compose_arrays(chart.to_vector()[None, :], chart.m)[0]


def decompose(g, m: int | None = None) -> CoordinateChart:
    """Constructive inverse of :func:`compose` on the chart domain."""
    g = as_group_element(g, m)
    m = g.shape[0]
    last = g[-1]
    r = float(np.linalg.norm(last))
    if r == 0.0:
        raise ChartError("last row is zero: outside the chart")
    theta = sphere_angles(last / r)
    k_inv = sphere_rotation_arrays(theta, m)[0].T
    a_inv = np.diag(1.0 / np.diag(a_radial(r, m)))
    h = g @ k_inv @ a_inv
    e_m = np.zeros(m)
    e_m[-1] = 1.0
    if np.abs(h[-1] - e_m).max() > 1e-9 * max(1.0, np.abs(g).max()):
        raise ChartError("stabilizer factor does not fix e_m; chart inversion failed")
    x = h[:-1, -1].copy()
    A = h[:-1, :-1]
    if m == 2:
        return CoordinateChart(x, [], [], r, theta)
    R, Q = _rq_positive(A)
    d = np.diag(R)
    N = R / d[None, :]
    logs = np.log(d)
    t = np.cumsum(logs)[:-1]
    # n_H holds N's strictly-upper part together with the translation column
    full = np.eye(m)
    full[:-1, :-1] = N
    full[:-1, -1] = x
    rows, cols = np.triu_indices(m, k=1)
    return CoordinateChart(full[rows, cols], t, so_angles(Q), r, theta)


def _rq_positive(A):
    from scipy.linalg import rq

    R, Q = rq(A)
    s = np.sign(np.diag(R))
    s[s == 0] = 1.0
    R = R * s[None, :]
    Q = Q * s[:, None]
    if np.any(np.diag(R) <= 0):
        raise ChartError("degenerate SL_{m-1} block")
    return R, Q


def in_domain_arrays(vecs, m: int, margin: float = 0.0) -> np.ndarray:
    """Boolean mask of chart vectors inside the open chart domain."""
    x, t, phi, r, theta = _split(vecs, m)
    ok = r > 0
    half = np.pi / 2 - margin

    def check_sphere(block):
        good = np.ones(len(block), dtype=bool)
        if block.shape[1] > 1:
            good &= np.all(np.abs(block[:, :-1]) < half, axis=1)
        if block.shape[1] >= 1:
            good &= (block[:, -1] > -np.pi) & (block[:, -1] <= np.pi)
        return good

    ok &= check_sphere(theta)
    start = 0
    for k in range(2, m):
        ok &= check_sphere(phi[:, start:start + k - 1])
        start += k - 1
    return ok


# ---------------------------------------------------------------------------
# Haar measure


def haar_density_arrays(vecs, m: int) -> np.ndarray:
    """Closed-form Haar density in chart coordinates, normalised to 1 at the origin chart.

    It factors as (density of H) * r^(m-1) * (sphere density of theta).  The
    H factor is the left Haar density of H = N_H A_H K_H: the modular factor
    prod_{i<j} a_j/a_i of the SL_{m-1} diagonal times the SO(m-1) Euler
    density.  The translation column carries Lebesgue measure.
    """
    x, t, phi, r, theta = _split(vecs, m)
    n = m - 1
    logs = h_diagonal_logs(t, m)
    weights = 2 * np.arange(n) - n + 1
    h_density = np.exp(logs @ weights) * so_density_arrays(phi, n)
    return h_density * r ** (m - 1) * sphere_density_arrays(theta, m)


def _maurer_cartan_jacobian(vec, m, step):
    basis = np.array([b.ravel() for b in build_basis(m).elements]).T
    g = compose_arrays(vec[None, :], m)[0]
    g_inv = np.linalg.inv(g)
    d = len(vec)
    plus = np.repeat(vec[None, :], d, axis=0) + step * np.eye(d)
    minus = np.repeat(vec[None, :], d, axis=0) - step * np.eye(d)
    dg = (compose_arrays(plus, m) - compose_arrays(minus, m)) / (2 * step)
    cols = np.einsum("ij,kjl->kil", g_inv, dg).reshape(d, -1).T
    coeffs, *_ = np.linalg.lstsq(basis, cols, rcond=None)
    return abs(np.linalg.det(coeffs))


def haar_density(chart: CoordinateChart, m: int | None = None, method: str = "closed",
                 step: float = 1e-5) -> float:
    """Haar density at ``chart``; both methods are normalised to 1 at the origin chart.

    ``method="jacobian"`` takes |det| of the chart differential expressed in
    the left-invariant frame g^{-1} dg, by central differences.
    """
    if m is not None and m != chart.m:
        raise DomainError(f"chart has m={chart.m}, requested m={m}")
    m = chart.m
    vec = chart.to_vector()
    if not in_domain_arrays(vec[None, :], m)[0]:
        raise ChartSingularityError("chart outside the open domain")
    if method == "closed":
        return float(haar_density_arrays(vec[None, :], m)[0])
    if method == "jacobian":
        ref = CoordinateChart.zero(m).to_vector()
        return _maurer_cartan_jacobian(vec, m, step) / _maurer_cartan_jacobian(ref, m, step)
    raise DomainError(f"unknown haar_density method {method!r}")


# ---------------------------------------------------------------------------
# Monte-Carlo invariance certifier


class FrobeniusBump:
    """f(g) = (1 - |g - I|_F^2 / R^2)^3 on |g - I|_F < R, zero outside."""

    def __init__(self, radius: float = 0.25):
        self.support_radius = float(radius)

    def __call__(self, gs):
        m = gs.shape[-1]
        d2 = np.sum((gs - np.eye(m)) ** 2, axis=(-2, -1)) / self.support_radius**2
        return np.where(d2 < 1.0, (1.0 - np.minimum(d2, 1.0)) ** 3, 0.0)


@dataclass
class HaarCheckResult:
    m: int
    discrepancy: float
    integral: float
    integral_translated: float
    stderr: float
    stderr_translated: float
    samples: int
    seed: int
    blocks: int

    @property
    def discrepancy_stderr(self) -> float:
        return math.hypot(self.stderr, self.stderr_translated) / abs(self.integral)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["discrepancy_stderr"] = self.discrepancy_stderr
        return d


@dataclass
class _Ellipsoid:
    center: np.ndarray
    transform: np.ndarray  # delta = transform @ z, z in the unit ball
    volume: float


def _unit_ball_volume(d):
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def _support_ellipsoid(m, g0, radius, margin, step=1e-6):
    """Coordinate ellipsoid around decompose(g0^{-1}) covering {g : |g g0 - I|_F < radius}."""
    center = decompose(np.linalg.inv(g0)).to_vector()
    d = len(center)
    plus = center[None, :] + step * np.eye(d)
    minus = center[None, :] - step * np.eye(d)
    jac = ((compose_arrays(plus, m) - compose_arrays(minus, m)) @ g0 / (2 * step)).reshape(d, -1).T
    L = np.linalg.cholesky(jac.T @ jac)
    rho = radius * margin
    transform = rho * np.linalg.inv(L).T
    volume = _unit_ball_volume(d) * abs(np.linalg.det(transform))
    return _Ellipsoid(center, transform, volume)


def _bump_ball(rng, n, d, power):
    """Samples of the unit d-ball with density proportional to (1 - |z|^2)^power."""
    z = rng.standard_normal((n, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    # |z|^2 ~ Beta(d/2, power + 1) under this density
    radius_sq = rng.beta(d / 2, power + 1, size=n)
    return z * np.sqrt(radius_sq)[:, None], radius_sq


def _bump_ball_mass(d, power):
    return math.pi ** (d / 2) * math.gamma(power + 1) / math.gamma(power + 1 + d / 2)


def _block_sums(f, g0, m, ell, n, seed_seq, power, norm, density):
    rng = np.random.default_rng(seed_seq)
    z, radius_sq = _bump_ball(rng, n, len(ell.center), power)
    vecs = ell.center + z @ ell.transform.T
    if not np.all(in_domain_arrays(vecs, m)):
        raise ChartError("sampling region leaves the chart domain")
    weight = norm / (1.0 - radius_sq) ** power
    vals = f(compose_arrays(vecs, m) @ g0) * density(vecs, m) * weight
    return float(np.sum(vals)), float(np.sum(vals * vals))


def _integrate(f, g0, m, ell, samples, seeds, power, workers=1, density=haar_density_arrays):
    """Importance-sampled integral of f(g g0) dg over the ellipsoid, block by block.

    Block sums are reduced in block order whatever ``workers`` is, so the
    result depends only on the seeds.
    """
    d = len(ell.center)
    norm = _bump_ball_mass(d, power) * ell.volume / _unit_ball_volume(d)
    counts = np.full(len(seeds), samples // len(seeds))
    counts[: samples % len(seeds)] += 1
    jobs = [(f, g0, m, ell, int(n), ss, power, norm, density) for n, ss in zip(counts, seeds)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            sums = list(pool.map(lambda job: _block_sums(*job), jobs))
    else:
        sums = [_block_sums(*job) for job in jobs]
    total = math.fsum(s for s, _ in sums)
    total_sq = math.fsum(q for _, q in sums)
    mean = total / samples
    var = max(total_sq / samples - mean * mean, 0.0)
    return mean, math.sqrt(var / samples)


def _checked_ellipsoid(f, g0, m, rng, margin=1.3, boundary_points=2048):
    for _ in range(5):
        ell = _support_ellipsoid(m, g0, f.support_radius, margin)
        z = rng.standard_normal((boundary_points, len(ell.center)))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        vecs = ell.center + z @ ell.transform.T
        if np.all(in_domain_arrays(vecs, m)) and np.all(f(compose_arrays(vecs, m) @ g0) == 0.0):
            return ell
        margin *= 1.25
    raise ChartError("test-function support escapes the sampled chart region")


def haar_invariance_check(m: int, g0, f=None, samples: int = 1_000_000, seed: int = 0,
                          blocks: int = 8, proposal_power: float = 2.0,
                          workers: int = 1, density=None) -> HaarCheckResult:
    """Compare Monte-Carlo estimates of int f(g g0) dg and int f(g) dg.

    Each integral samples chart coordinates from an ellipsoid adapted to the
    support of its integrand, with proposal density proportional to
    (1 - |z|^2)^proposal_power in normalised ellipsoid coordinates, and
    weights by the chart density over the proposal density.  The sample
    stream is split into ``blocks`` independently seeded blocks, so results
    depend only on (seed, samples, blocks).

    ``density(vecs, m)`` defaults to :func:`haar_density_arrays`; passing a
    wrong density is how the check is shown to have teeth.
    """
    density = haar_density_arrays if density is None else density
    if f is None:
        f = FrobeniusBump()
    g0 = as_group_element(g0, m)
    if samples < blocks:
        raise DomainError("need at least one sample per block")
    root = np.random.SeedSequence(seed)
    s_base, s_shift, s_bnd = root.spawn(3)
    rng_bnd = np.random.default_rng(s_bnd)
    eye = np.eye(m)
    ell0 = _checked_ellipsoid(f, eye, m, rng_bnd)
    ell1 = _checked_ellipsoid(f, g0, m, rng_bnd)
    i0, se0 = _integrate(f, eye, m, ell0, samples, s_base.spawn(blocks), proposal_power, workers, density)
    i1, se1 = _integrate(f, g0, m, ell1, samples, s_shift.spawn(blocks), proposal_power, workers, density)
    if i0 == 0.0:
        raise ChartError("test function integrates to zero")
    return HaarCheckResult(m, abs(i1 - i0) / abs(i0), i0, i1, se0, se1, samples, seed, blocks)
