"""Rigid residue frames, SO(3) utilities, forward noising and reverse steps.

Rotations are plain ``(..., 3, 3)`` float arrays and translations ``(..., 3)``
arrays; a structure of N residues is a :class:`StructureState` holding
``rots (N, 3, 3)`` and ``trans (N, 3)`` together with region labels.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.transform import Rotation as _ScipyRotation

from .exceptions import ContractError, DomainError, SamplingError

CDR = "CDR"
FRAMEWORK = "framework"
TARGET = "target"
REGIONS = (CDR, FRAMEWORK, TARGET)

# Angle grid used for inverse-CDF sampling of the IGSO3 rotation angle.
IGSO3_GRID_POINTS = 4096


# ---------------------------------------------------------------------------
# so(3) / SO(3) primitives
# ---------------------------------------------------------------------------

def hat(v):
    """Map 3-vectors to skew-symmetric matrices, ``hat(v) @ w == cross(v, w)``."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def vee(m):
    """Inverse of :func:`hat` (reads the antisymmetric part)."""
    m = np.asarray(m, dtype=float)
    return 0.5 * np.stack(
        [m[..., 2, 1] - m[..., 1, 2],
         m[..., 0, 2] - m[..., 2, 0],
         m[..., 1, 0] - m[..., 0, 1]],
        axis=-1,
    )


def skew(a):
    a = np.asarray(a, dtype=float)
    return 0.5 * (a - np.swapaxes(a, -1, -2))


def expmap(v):
    """Rodrigues exponential of rotation vectors ``(..., 3) -> (..., 3, 3)``."""
    v = np.asarray(v, dtype=float)
    theta = np.linalg.norm(v, axis=-1)[..., None, None]
    k = hat(v)
    k2 = k @ k
    small = theta < 1e-8
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    return np.eye(3) + a * k + b * k2


def logmap(r):
    """Rotation vector of a rotation matrix ``(..., 3, 3) -> (..., 3)``."""
    r = np.asarray(r, dtype=float)
    flat = r.reshape(-1, 3, 3)
    vec = _ScipyRotation.from_matrix(flat).as_rotvec()
    return vec.reshape(r.shape[:-2] + (3,))


def rotation_angle(r):
    """Geodesic angle of a rotation, in ``[0, pi]``."""
    r = np.asarray(r, dtype=float)
    c = (np.trace(r, axis1=-2, axis2=-1) - 1.0) / 2.0
    return np.arccos(np.clip(c, -1.0, 1.0))


def geodesic_distance(r1, r2):
    return rotation_angle(np.swapaxes(r1, -1, -2) @ r2)


def project_so3(m):
    """Nearest rotation in Frobenius norm (polar decomposition via SVD)."""
    m = np.asarray(m, dtype=float)
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    d = np.where(d == 0, 1.0, d)
    fix = np.ones(m.shape[:-1])
    fix[..., -1] = d
    return (u * fix[..., None, :]) @ vt


def is_rotation(m, atol=1e-9):
    m = np.asarray(m, dtype=float)
    eye = np.broadcast_to(np.eye(3), m.shape)
    orth = np.allclose(m @ np.swapaxes(m, -1, -2), eye, atol=atol, rtol=0.0)
    det = np.allclose(np.linalg.det(m), 1.0, atol=atol, rtol=0.0)
    return bool(orth and det)


def random_rotation(rng, size=None):
    """Haar-uniform rotations from normalised Gaussian quaternions."""
    shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
    q = rng.standard_normal(shape + (4,))
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q, -1, 0)
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)], -1),
            np.stack([2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)], -1),
            np.stack([2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=-2,
    )


# ---------------------------------------------------------------------------
# score and sampling on SO(3)
# ---------------------------------------------------------------------------

def skew_project(rot_t, rot_0):
    """``skew(rot_t^T rot_0)``; broadcasts over leading axes."""
    return skew(np.swapaxes(rot_t, -1, -2) @ rot_0)


def rotation_score(rot_t, rot_0, sigma_t):
    """Riemannian gradient of ``tr(rot_0^T rot_t) / sigma_t**2`` at ``rot_t``."""
    if not sigma_t > 0:
        raise DomainError(f"sigma_t must be positive, got {sigma_t!r}")
    return (rot_t @ skew_project(rot_t, rot_0)) / sigma_t**2


def igso3_log_density_angle(omega, sigma):
    """Unnormalised log-density of the IGSO3 rotation angle, Haar factor included.

    The density ``exp(tr(R0^T R)/sigma^2)`` depends on the angle only through
    ``tr = 1 + 2 cos(omega)``; the Haar measure on angles is ``(1 - cos)/pi``.
    """
    omega = np.asarray(omega, dtype=float)
    with np.errstate(divide="ignore"):
        return 2.0 * (np.cos(omega) - 1.0) / sigma**2 + np.log1p(-np.cos(omega))


def _angle_grid(sigma, n=IGSO3_GRID_POINTS):
    # mass sits at omega ~ sigma; beyond 12 sigma the density is below exp(-140)
    upper = min(np.pi, 12.0 * sigma)
    omega = np.linspace(0.0, upper, n)
    logp = igso3_log_density_angle(omega, sigma)
    p = np.exp(logp - np.max(logp[1:]))
    p[0] = 0.0
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * np.diff(omega))])
    return omega, cdf / cdf[-1]


def sample_igso3_angle(sigma, rng, size=None):
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma!r}")
    omega, cdf = _angle_grid(sigma)
    u = rng.uniform(size=size)
    out = np.interp(u, cdf, omega)
    if not np.all(np.isfinite(out)):
        raise SamplingError("non-finite IGSO3 angle sample")
    return out


def sample_igso3(rot_0, sigma_t, rng):
    """Draw ``R_t ~ IGSO3(rot_0, sigma_t)`` for one or a stack of centres.

    The perturbation is applied on the right, ``R_t = rot_0 exp(omega * axis)``,
    so left-multiplying the centre by Q left-multiplies the sample by Q.
    """
    rot_0 = np.asarray(rot_0, dtype=float)
    batch = rot_0.shape[:-2]
    omega = sample_igso3_angle(sigma_t, rng, size=batch)
    axis = rng.standard_normal(batch + (3,))
    axis /= np.linalg.norm(axis, axis=-1, keepdims=True)
    return project_so3(rot_0 @ expmap(axis * np.asarray(omega)[..., None]))


def reverse_rotation_step(rot_t, rot_0_hat, sigma_t, dt, rng=None, xi=None):
    """One score-driven reverse step on SO(3).

    ``rot_t exp(dt/(2 sigma^2) skew(rot_t^T rot_0_hat) + sqrt(dt) sigma hat(xi))``
    followed by projection back onto SO(3). ``xi`` defaults to a standard normal
    draw from ``rng``; pass it explicitly to control the noise.
    """
    if not sigma_t > 0:
        raise DomainError(f"sigma_t must be positive, got {sigma_t!r}")
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt!r}")
    rot_t = np.asarray(rot_t, dtype=float)
    if xi is None:
        if rng is None:
            raise ContractError("either rng or xi is required")
        xi = rng.standard_normal(rot_t.shape[:-2] + (3,))
    drift = (dt / (2.0 * sigma_t**2)) * skew_project(rot_t, rot_0_hat)
    tangent = drift + np.sqrt(dt) * sigma_t * hat(xi)
    return project_so3(rot_t @ expmap(vee(tangent)))


# ---------------------------------------------------------------------------
# translations
# ---------------------------------------------------------------------------

def forward_translate(t_0, sigma_t, rng):
    """Gaussian translation noise with the centre of mass held fixed."""
    t_0 = np.asarray(t_0, dtype=float)
    if t_0.ndim != 2 or t_0.shape[0] < 1 or t_0.shape[1] != 3:
        raise ContractError(f"expected (N, 3) translations, got shape {t_0.shape}")
    noise = sigma_t * rng.standard_normal(t_0.shape)
    noise -= noise.mean(axis=0)
    return t_0 + noise


# ---------------------------------------------------------------------------
# noise schedule
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step ``alpha``, cumulative ``alpha_bar`` and rotation ``sigma``.

    Arrays are indexed by timestep ``0..T``; index 0 is the clean state with
    ``alpha[0] = alpha_bar[0] = 1``. ``trans_scale`` is the standard deviation
    (angstrom) of fully noised translations about the diffusion centre.
    """

    T: int
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray
    trans_scale: float = 10.0

    def __post_init__(self):
        if self.T < 1:
            raise DomainError("T must be >= 1")
        for name in ("alpha", "alpha_bar", "sigma"):
            arr = getattr(self, name)
            if np.shape(arr) != (self.T + 1,):
                raise ContractError(f"{name} must have length T + 1")
        if np.any(self.sigma <= 0):
            raise DomainError("sigma must be strictly positive")
        if not self.trans_scale > 0:
            raise DomainError("trans_scale must be positive")

    @classmethod
    def cosine(cls, T=50, sigma_min=0.02, sigma_max=1.5, s=0.008, max_beta=0.999,
               trans_scale=10.0):
        if T < 1:
            raise DomainError("T must be >= 1")
        steps = np.arange(T + 1, dtype=float)
        f = np.cos((steps / T + s) / (1.0 + s) * np.pi / 2.0) ** 2
        ratio = f[1:] / f[:-1]
        alpha = np.concatenate([[1.0], np.clip(ratio, 1.0 - max_beta, 1.0)])
        alpha_bar = np.cumprod(alpha)
        sigma = sigma_min + (sigma_max - sigma_min) * steps / T
        return cls(T=T, alpha=alpha, alpha_bar=alpha_bar, sigma=sigma, trans_scale=trans_scale)


# ---------------------------------------------------------------------------
# structures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StructureState:
    """Residue frames plus region annotations at one diffusion timestep.

    ``hotspots`` holds residue indices (into the full structure) that must be
    target residues.
    """

    rots: np.ndarray
    trans: np.ndarray
    region: np.ndarray
    hotspots: tuple = ()
    timestep: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        rots = np.asarray(self.rots, dtype=float)
        trans = np.asarray(self.trans, dtype=float)
        region = np.asarray(self.region, dtype=object)
        object.__setattr__(self, "rots", rots)
        object.__setattr__(self, "trans", trans)
        object.__setattr__(self, "region", region)
        object.__setattr__(self, "hotspots", tuple(int(h) for h in self.hotspots))
        n = trans.shape[0] if trans.ndim == 2 else -1
        if trans.shape != (n, 3) or rots.shape != (n, 3, 3) or region.shape != (n,):
            raise ContractError(
                f"inconsistent shapes: rots {rots.shape}, trans {trans.shape}, "
                f"region {region.shape}"
            )
        bad = set(region.tolist()) - set(REGIONS)
        if bad:
            raise ContractError(f"unknown region labels {sorted(bad)}")
        for h in self.hotspots:
            if not 0 <= h < n or region[h] != TARGET:
                raise ContractError(f"hotspot {h} is not a target residue")

    @property
    def n(self):
        return self.trans.shape[0]

    def indices(self, label):
        return np.flatnonzero(self.region == label)

    @property
    def cdr(self):
        return self.indices(CDR)

    @property
    def target(self):
        return self.indices(TARGET)

    @property
    def generated_mask(self):
        """Residues that are diffused and guided (everything except target)."""
        return self.region != TARGET

    def with_coords(self, rots=None, trans=None, timestep=None):
        return replace(
            self,
            rots=self.rots if rots is None else rots,
            trans=self.trans if trans is None else trans,
            timestep=self.timestep if timestep is None else timestep,
        )

    def transformed(self, q, u):
        """Apply the rigid motion ``x -> q x + u`` to every frame."""
        q = np.asarray(q, dtype=float)
        return self.with_coords(rots=q @ self.rots, trans=self.trans @ q.T + u)

    def require_guidance_regions(self):
        if self.cdr.size == 0 or self.target.size == 0:
            raise ContractError("guidance needs at least one CDR and one target residue")


def diffusion_center(state):
    """Fixed origin for translation diffusion: the target centroid if present.

    Working relative to this point keeps the affine denoising updates
    equivariant under rigid motions of the whole complex.
    """
    idx = state.target if state.target.size else np.arange(state.n)
    return state.trans[idx].mean(axis=0)


def noise_translations(x_0, eps, alpha_bar_t, center, scale=1.0):
    """Variance-preserving forward noising about ``center``; ``eps`` is in units of ``scale``."""
    return center + np.sqrt(alpha_bar_t) * (x_0 - center) + scale * np.sqrt(1.0 - alpha_bar_t) * eps


def predict_x0(x_t, eps_trans, eps_rot, schedule, t, center=None):
    """Clean-structure estimate from a noise prediction.

    Translations invert the variance-preserving noising about ``center``
    (default :func:`diffusion_center`). Rotation noise is a tangent 3-vector,
    removed by geodesic extrapolation in the body frame.
    """
    if not 0 < t <= schedule.T:
        raise DomainError(f"timestep {t} outside (0, {schedule.T}]")
    ab = float(schedule.alpha_bar[t])
    if ab <= 0.0:
        raise DomainError("alpha_bar_t is zero; the clean estimate is undefined")
    eps_trans = np.asarray(eps_trans, dtype=float)
    eps_rot = np.asarray(eps_rot, dtype=float)
    if eps_trans.shape != x_t.trans.shape or eps_rot.shape != x_t.trans.shape:
        raise ContractError("noise prediction shape does not match the structure")
    if center is None:
        center = diffusion_center(x_t)
    trans = center + (x_t.trans - center - schedule.trans_scale * np.sqrt(1.0 - ab) * eps_trans) / np.sqrt(ab)
    scale = np.sqrt(1.0 - ab) / np.sqrt(ab)
    rots = project_so3(x_t.rots @ expmap(-scale * eps_rot))
    return x_t.with_coords(rots=rots, trans=trans, timestep=0)


def noise_structure(reference, schedule, t, rng):
    """Forward-noise the generated residues of ``reference`` to timestep ``t``.

    Target residues are left untouched. ``t = T`` gives the sampler's start state.
    """
    mask = reference.generated_mask
    center = diffusion_center(reference)
    trans = reference.trans.copy()
    rots = reference.rots.copy()
    k = int(mask.sum())
    if t > 0 and k:
        eps = rng.standard_normal((k, 3))
        trans[mask] = noise_translations(
            reference.trans[mask], eps, schedule.alpha_bar[t], center, schedule.trans_scale
        )
        rots[mask] = sample_igso3(reference.rots[mask], schedule.sigma[t], rng)
    return reference.with_coords(rots=rots, trans=trans, timestep=t)
