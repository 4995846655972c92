"""Phantoms, data simulation and noise."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError


@dataclass(frozen=True)
class Inclusion:
    center: tuple
    radius: float
    sigma: float


@dataclass(frozen=True)
class Phantom:
    inclusions: tuple = ()
    sigma0: float = 1.0
    name: str = "phantom"

    def __post_init__(self):
        if self.sigma0 <= 0:
            raise ConfigError("background conductivity must be positive")
        for inc in self.inclusions:
            if inc.sigma <= 0 or inc.radius <= 0:
                raise ConfigError(f"invalid inclusion {inc}")


@dataclass(frozen=True)
class NoiseSpec:
    snr: float = 50.0
    seed: int = 0

    def __post_init__(self):
        if not self.snr > 0:
            raise ConfigError("SNR must be positive")


def rasterize_phantom(phantom, mesh):
    """Element conductivities: inclusion sigma where the centroid is inside, later inclusions win."""
    m = np.full(mesh.n_elems, phantom.sigma0, dtype=float)
    for inc in phantom.inclusions:
        inside = np.linalg.norm(mesh.centroids - np.asarray(inc.center), axis=1) < inc.radius
        m[inside] = inc.sigma
    return m


def add_noise(d, spec):
    """d + eps with eps ~ N(0, s^2 I), s = RMS(d) / SNR."""
    d = np.asarray(d, dtype=float)
    if np.isinf(spec.snr):
        return d.copy()
    s = np.sqrt(np.mean(d**2)) / spec.snr
    rng = np.random.default_rng(spec.seed)
    return d + s * rng.standard_normal(d.shape)


def single_inclusion(sigma=2.3, radius=0.25, center=(0.3, 0.3)):
    return Phantom((Inclusion(tuple(center), radius, sigma),), name=f"single_s{sigma:g}")


def two_inclusions(radius, offset, sigmas=(2.0, 3.0)):
    """Two inclusions on the line x = y, each ``offset`` from the origin on opposite sides."""
    u = np.array([1.0, 1.0]) / np.sqrt(2.0)
    c1, c2 = tuple(offset * u), tuple(-offset * u)
    return Phantom((Inclusion(c1, radius, sigmas[0]), Inclusion(c2, radius, sigmas[1])),
                   name=f"two_r{radius:g}_s{offset:g}")


def reconstruction_phantoms(r0=1.0):
    """The four two-inclusion scenarios: (radius, offset) in units of r0."""
    return [two_inclusions(0.16 * r0, 0.25 * r0), two_inclusions(0.16 * r0, 0.3 * r0),
            two_inclusions(0.16 * r0, 0.4 * r0), two_inclusions(0.25 * r0, 0.3 * r0)]


def slice_profile(mesh, m, n_samples=201, extent=0.98):
    """Values of ``m`` sampled along the diagonal x = y; returns (t, values)."""
    t = np.linspace(-extent, extent, n_samples) * mesh.radius
    pts = np.outer(t, [1.0, 1.0]) / np.sqrt(2.0)
    el = mesh.locate(pts)
    vals = np.where(el >= 0, np.asarray(m)[np.maximum(el, 0)], np.nan)
    return t, vals


def profile_peaks(values):
    """Local maxima of a (plateau-aware) profile: list of (index, value)."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    # collapse runs of equal values
    keep = np.r_[True, np.diff(v) != 0]
    runs = v[keep]
    idx = np.nonzero(keep)[0]
    peaks = []
    for k in range(1, len(runs) - 1):
        if runs[k] > runs[k - 1] and runs[k] > runs[k + 1]:
            peaks.append((int(idx[k]), float(runs[k])))
    return peaks


def valley_depth(values):
    """Relative depth of the dip between the two highest peaks (0 when fewer than two)."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    peaks = profile_peaks(v)
    if len(peaks) < 2:
        return 0.0
    top = sorted(peaks, key=lambda p: -p[1])[:2]
    i, j = sorted(p[0] for p in top)
    low = v[i:j + 1].min()
    base = min(p[1] for p in top)
    return float((base - low) / base) if base > 0 else 0.0


def separated_peaks(t, values):
    """True when the profile has two or more local maxima and the two highest lie on opposite sides of t = 0."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    ok = np.isfinite(v)
    t, v = t[ok], v[ok]
    peaks = profile_peaks(v)
    if len(peaks) < 2:
        return False
    top = sorted(peaks, key=lambda p: -p[1])[:2]
    return bool(t[top[0][0]] * t[top[1][0]] < 0)
