"""Double-well bond potential, influence functions and calibration.

The bond potential is written in terms of a concave profile ``h`` with
``Psi(r) = h(r**2)``.  For a bond of reference length ``L`` inside a horizon
``eps`` the pairwise potential per unit length and its strain derivative are::

    W(S)    = J(L/eps) / (eps**3 * pi * L) * h(L * S**2)
    dW/dS   = 2 / (eps**3 * pi) * J(L/eps) * S * h'(L * S**2)

so the bond force peaks at ``S_c = r_c / sqrt(L)`` where ``r_c`` is the
inflection point of ``Psi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate, optimize

OMEGA_2 = math.pi  # area of the unit disk


class ProfileError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Potential profiles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExponentialProfile:
    """``h(s) = C_plus * (1 - exp(-beta * s))``.

    Smooth, concave and bounded.  The force only reaches zero asymptotically,
    so the failure strain is defined through a force cutoff.
    """

    C_plus: float
    beta: float
    kind: str = field(default="exponential", init=False)

    def __post_init__(self):
        if not (self.C_plus > 0 and self.beta > 0):
            raise ProfileError("C_plus and beta must be positive")

    def h(self, s):
        return self.C_plus * -np.expm1(-self.beta * np.asarray(s, dtype=float))

    def dh(self, s):
        return self.C_plus * self.beta * np.exp(-self.beta * np.asarray(s, dtype=float))

    def d2h(self, s):
        return -self.C_plus * self.beta**2 * np.exp(-self.beta * np.asarray(s, dtype=float))

    @property
    def dh0(self) -> float:
        return self.C_plus * self.beta

    @property
    def r_c(self) -> float:
        return 1.0 / math.sqrt(2.0 * self.beta)

    @property
    def support_radius(self) -> float:
        return math.inf

    @property
    def params(self) -> tuple[float, float]:
        return (self.C_plus, self.beta)


@dataclass(frozen=True)
class CompactProfile:
    """``h(s) = C_plus * (1 - (1 - s/s_plus)**4)`` for ``s < s_plus``, else ``C_plus``.

    Concave, C3 at ``s_plus``; the bond force vanishes identically for
    ``r >= r_plus = sqrt(s_plus)``.  Inflection of ``Psi`` at ``r_plus / sqrt(7)``.
    """

    C_plus: float
    s_plus: float
    kind: str = field(default="compact", init=False)

    def __post_init__(self):
        if not (self.C_plus > 0 and self.s_plus > 0):
            raise ProfileError("C_plus and s_plus must be positive")

    def _x(self, s):
        return np.clip(np.asarray(s, dtype=float) / self.s_plus, 0.0, 1.0)

    def h(self, s):
        return self.C_plus * (1.0 - (1.0 - self._x(s)) ** 4)

    def dh(self, s):
        return 4.0 * self.C_plus / self.s_plus * (1.0 - self._x(s)) ** 3

    def d2h(self, s):
        return -12.0 * self.C_plus / self.s_plus**2 * (1.0 - self._x(s)) ** 2

    @property
    def dh0(self) -> float:
        return 4.0 * self.C_plus / self.s_plus

    @property
    def r_c(self) -> float:
        return math.sqrt(self.s_plus / 7.0)

    @property
    def support_radius(self) -> float:
        return math.sqrt(self.s_plus)

    @property
    def params(self) -> tuple[float, float]:
        return (self.C_plus, self.s_plus)


PROFILE_KINDS = {"exponential": ExponentialProfile, "compact": CompactProfile}
PROFILE_CODES = {"exponential": 0, "compact": 1}


def psi(profile, r):
    r = np.asarray(r, dtype=float)
    return profile.h(r * r)


def dpsi(profile, r):
    r = np.asarray(r, dtype=float)
    return 2.0 * r * profile.dh(r * r)


# ---------------------------------------------------------------------------
# Influence functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Influence:
    """Influence profile ``J(r)`` on ``[0, 1)``, zero for ``r >= 1``."""

    kind: str = "constant"

    def __post_init__(self):
        if self.kind not in INFLUENCE_KINDS:
            raise ValueError(f"unknown influence kind {self.kind!r}")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        inside = (r >= 0) & (r < 1)
        return np.where(inside, INFLUENCE_KINDS[self.kind](np.clip(r, 0.0, 1.0)), 0.0)

    @property
    def bound(self) -> float:
        return 1.0


INFLUENCE_KINDS = {
    "constant": lambda r: np.ones_like(r),
    "linear": lambda r: 1.0 - r,
    "quadratic": lambda r: 1.0 - r * r,
}


def second_moment(J) -> float:
    """``M = int_0^1 r^2 J(r) dr``."""
    val, _ = integrate.quad(lambda r: r * r * float(J(r)), 0.0, 1.0, epsabs=0.0, epsrel=1e-12, limit=200)
    return val


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Calibration:
    lam: float
    mu: float
    G_c: float
    M: float

    def as_dict(self) -> dict:
        return {"lambda": self.lam, "mu": self.mu, "G_c": self.G_c, "M": self.M}


def calibrate(profile, J) -> Calibration:
    """Macroscopic moduli and fracture toughness of the bond model.

    ``mu = lam = M h'(0) / 4`` and ``G_c = (4/pi) C_plus M``, taking the
    degenerate well value ``C_plus`` for ``h(S_+)``.
    """
    M = second_moment(J)
    mu = M * profile.dh0 / 4.0
    G_c = 4.0 / math.pi * profile.C_plus * M
    return Calibration(lam=mu, mu=mu, G_c=G_c, M=M)


def invert_calibration(mu: float, G_c: float, J, kind: str = "exponential"):
    """Profile whose calibration gives the requested ``mu`` and ``G_c``."""
    if mu <= 0 or G_c <= 0:
        raise ProfileError("target mu and G_c must be positive")
    M = second_moment(J)
    C_plus = math.pi * G_c / (4.0 * M)
    dh0 = 4.0 * mu / M
    if kind == "exponential":
        return ExponentialProfile(C_plus=C_plus, beta=dh0 / C_plus)
    if kind == "compact":
        return CompactProfile(C_plus=C_plus, s_plus=4.0 * C_plus / dh0)
    raise ProfileError(f"unknown profile kind {kind!r}")


def elasticity_tensor(lam: float, mu: float) -> np.ndarray:
    """Isotropic 2D elasticity tensor ``C_ijkl``, shape (2, 2, 2, 2)."""
    if not (mu > 0 and math.isclose(lam, mu, rel_tol=1e-12)):
        raise ValueError("central-force model requires lam == mu > 0")
    d = np.eye(2)
    return (
        mu * (np.einsum("ik,jl->ijkl", d, d) + np.einsum("il,jk->ijkl", d, d))
        + lam * np.einsum("ij,kl->ijkl", d, d)
    )


# ---------------------------------------------------------------------------
# Material model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MaterialModel:
    profile: ExponentialProfile | CompactProfile
    influence: Influence
    horizon: float
    density: float = 1.0
    cutoff_tol: float = 1e-2

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.density <= 0:
            raise ValueError("density must be positive")
        if not 0 < self.cutoff_tol < 1:
            raise ValueError("cutoff_tol must lie in (0, 1)")

    @cached_property
    def calibration(self) -> Calibration:
        return calibrate(self.profile, self.influence)

    @property
    def M(self) -> float:
        return self.calibration.M

    @property
    def mu(self) -> float:
        return self.calibration.mu

    @property
    def lam(self) -> float:
        return self.calibration.lam

    @property
    def G_c(self) -> float:
        return self.calibration.G_c

    @property
    def r_c(self) -> float:
        return self.profile.r_c

    @cached_property
    def r_plus(self) -> float:
        """Argument at which the bond force is considered to have vanished."""
        p = self.profile
        if math.isfinite(p.support_radius):
            return p.support_radius
        rc = p.r_c
        peak = float(dpsi(p, rc))
        fn = lambda r: float(dpsi(p, r)) - self.cutoff_tol * peak
        if fn(20.0 * rc) > 0:
            raise ProfileError("force cutoff root not bracketed in (r_c, 20 r_c)")
        return optimize.brentq(fn, rc, 20.0 * rc, xtol=1e-14, rtol=1e-14)

    @property
    def eps3_omega(self) -> float:
        return self.horizon**3 * OMEGA_2

    def J(self, L):
        return self.influence(np.asarray(L, dtype=float) / self.horizon)

    def _check_length(self, L):
        L = np.asarray(L, dtype=float)
        if np.any(L <= 0) or np.any(L >= self.horizon):
            raise ValueError("bond length must lie in (0, eps)")
        return L

    # Vectorized bond laws taking the influence weight explicitly; these are
    # the kernels used by assembly, where straddling cells carry an effective J.
    def force_from_weight(self, S, L, Jw):
        S = np.asarray(S, dtype=float)
        return 2.0 / self.eps3_omega * Jw * S * self.profile.dh(L * S * S)

    def energy_from_weight(self, S, L, Jw):
        S = np.asarray(S, dtype=float)
        return Jw / (self.eps3_omega * L) * self.profile.h(L * S * S)


def bond_force_scalar(S, L, m: MaterialModel):
    """Strain derivative of the pairwise potential for a bond of length ``L``."""
    L = m._check_length(L)
    return m.force_from_weight(S, L, m.J(L))


def bond_energy(S, L, m: MaterialModel):
    """Pairwise force potential per unit length for a bond of length ``L``."""
    L = m._check_length(L)
    return m.energy_from_weight(S, L, m.J(L))


def critical_strains(L, m: MaterialModel) -> tuple:
    """Peak-force strain ``S_c`` and failure strain ``S_plus`` for length ``L``."""
    L = np.asarray(L, dtype=float)
    if np.any(L <= 0):
        raise ValueError("bond length must be positive")
    root = np.sqrt(L)
    return m.r_c / root, m.r_plus / root


def bond_force_bound(L, Jw, m: MaterialModel):
    """Upper bound on ``|dW/dS|`` over all strains for a bond."""
    rc = m.r_c
    return 2.0 / m.eps3_omega * Jw * float(dpsi(m.profile, rc)) / (2.0 * np.sqrt(L))
