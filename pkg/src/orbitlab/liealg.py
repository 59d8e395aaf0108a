"""Lie algebra sl_m(R) adapted to the stabilizer of e_m.

The basis is split into three blocks:

* ``h_part``: generators of H = Stab(e_m), the traceless matrices whose last
  row vanishes (so ``e_m @ X == 0`` and ``e_m @ expm(tX) == e_m``);
* ``a_part``: X_A = diag(-1/(m-1), ..., -1/(m-1), 1);
* ``k_part``: rotations X_{K,i} with (X)_{m,i} = 1, (X)_{i,m} = -1.

Group elements act on row vectors from the right throughout.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import DomainError

TRACE_TOL = 1e-12


def unit(m: int, i: int, j: int) -> np.ndarray:
    """Matrix unit E_ij (zero based)."""
    e = np.zeros((m, m))
    e[i, j] = 1.0
    return e


def h_generators(m: int) -> list[np.ndarray]:
    """Basis of Lie(H), ordered as unipotent, diagonal, rotation.

    The unipotent block lists E_ij (i < j, i <= m-2) row-major, so the
    translation column E_{i,m-1} is interleaved with the SL_{m-1} part.
    """
    gens = []
    for i in range(m - 1):
        for j in range(i + 1, m):
            gens.append(unit(m, i, j))
    for i in range(m - 2):
        gens.append(unit(m, i, i) - unit(m, i + 1, i + 1))
    for i in range(m - 1):
        for j in range(i + 1, m - 1):
            gens.append(unit(m, j, i) - unit(m, i, j))
    return gens


def a_generator(m: int) -> np.ndarray:
    d = np.full(m, -1.0 / (m - 1))
    d[-1] = 1.0
    return np.diag(d)


def k_generators(m: int) -> list[np.ndarray]:
    return [unit(m, m - 1, i) - unit(m, i, m - 1) for i in range(m - 1)]


def explicit_basis_m3() -> tuple[list[np.ndarray], np.ndarray, list[np.ndarray]]:
    """The eight explicit sl_3 matrices with a fixed reference order.

    Note that the two rotations here carry the opposite sign to the
    general-m rule used by :func:`k_generators`.
    """
    e = lambda i, j: unit(3, i - 1, j - 1)  # noqa: E731  (1-based, as printed)
    h = [
        e(2, 3),
        e(1, 2),
        e(1, 3),
        e(1, 1) - e(2, 2),
        e(1, 2) - e(2, 1),
    ]
    a = np.diag([-0.5, -0.5, 1.0])
    k = [e(1, 3) - e(3, 1), e(2, 3) - e(3, 2)]
    return h, a, k


def killing_form(X, Y, m: int | None = None) -> float:
    """Killing form of sl_m in closed form, B(X, Y) = 2m tr(XY)."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if m is None:
        m = X.shape[0]
    if X.shape != (m, m) or Y.shape != (m, m):
        raise DomainError(f"expected {m}x{m} matrices, got {X.shape} and {Y.shape}")
    for Z in (X, Y):
        if abs(np.trace(Z)) > TRACE_TOL * max(1.0, np.abs(Z).max()):
            raise DomainError("killing_form needs traceless matrices")
    return 2.0 * m * float(np.sum(X * Y.T))


def bracket(X, Y):
    return X @ Y - Y @ X


def _standard_sl_basis(m: int) -> np.ndarray:
    gens = [unit(m, i, j) for i in range(m) for j in range(m) if i != j]
    gens += [unit(m, i, i) - unit(m, i + 1, i + 1) for i in range(m - 1)]
    return np.array(gens)


def ad_matrix(X, basis) -> np.ndarray:
    """Matrix of ad_X in the given basis of sl_m (columns = images)."""
    B = np.array([b.ravel() for b in basis]).T
    images = np.array([bracket(X, b).ravel() for b in basis]).T
    coeffs, *_ = np.linalg.lstsq(B, images, rcond=None)
    return coeffs


def killing_form_adjoint(X, Y, m: int | None = None) -> float:
    """Brute-force Killing form tr(ad_X ad_Y) over the adjoint representation."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if m is None:
        m = X.shape[0]
    basis = _standard_sl_basis(m)
    return float(np.trace(ad_matrix(X, basis) @ ad_matrix(Y, basis)))


@dataclass
class LieBasis:
    """A basis of sl_m split into H, A and K blocks, with its Killing dual."""

    dim_m: int
    h_part: list
    a_part: np.ndarray
    k_part: list
    dual: list = field(default_factory=list)

    def __post_init__(self):
        if not self.dual:
            self.dual = dual_basis(self.elements, self.dim_m)

    @property
    def elements(self) -> list:
        return list(self.h_part) + [self.a_part] + list(self.k_part)

    def __len__(self):
        return len(self.h_part) + 1 + len(self.k_part)

    def gram(self) -> np.ndarray:
        els = self.elements
        return np.array([[killing_form(a, b, self.dim_m) for b in els] for a in els])

    def coordinates(self, X) -> np.ndarray:
        """Coefficients c with X = sum_i c_i X_i, read off through the dual basis."""
        return np.array([killing_form(X, d, self.dim_m) for d in self.dual])


def dual_basis(elements, m: int) -> list:
    els = list(elements)
    gram = np.array([[killing_form(a, b, m) for b in els] for a in els])
    inv = np.linalg.inv(gram)
    stack = np.array(els)
    # X_j* = sum_k (G^{-1})_{kj} X_k
    return list(np.einsum("kj,kab->jab", inv, stack))


def build_basis(m: int) -> LieBasis:
    if not isinstance(m, (int, np.integer)) or m < 2:
        raise DomainError(f"dimension m must be an integer >= 2, got {m!r}")
    m = int(m)
    basis = LieBasis(m, h_generators(m), a_generator(m), k_generators(m))
    stack = np.array(basis.elements).reshape(len(basis), -1)
    if np.linalg.matrix_rank(stack) != m * m - 1:
        raise DomainError("basis construction is degenerate")  # unreachable for m >= 2
    return basis


def build_explicit_basis_m3() -> LieBasis:
    h, a, k = explicit_basis_m3()
    return LieBasis(3, h, a, k)


def exp_flow(X, t: float = 1.0) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    E = expm(t * X)
    if not X[-1].any():
        # stabilizer direction: the last row of exp(tX) is exactly e_m
        E[-1] = 0.0
        E[-1, -1] = 1.0
    return E


def directional_derivative(f, g, X, h_step: float = 1e-4, richardson: bool = False) -> float:
    """Central difference of t -> f(g exp(tX)) at t = 0.

    With ``richardson`` the h and h/2 estimates are combined to cancel the
    O(h^2) term.
    """
    if h_step <= 0:
        raise DomainError("h_step must be positive")
    g = np.asarray(g, dtype=float)

    def central(h):
        return (f(g @ exp_flow(X, h)) - f(g @ exp_flow(X, -h))) / (2.0 * h)

    d = central(h_step)
    if richardson:
        d = (4.0 * central(h_step / 2) - d) / 3.0
    return float(d)
