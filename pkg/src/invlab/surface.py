"""Band-limited fractal surfaces from a piecewise power-law spectrum.

Wavenumbers are integer DFT frequency indices, i.e. cycles per surface
side. The power spectrum of a map ``h`` is taken as ``|fft2(h)|**2 / N**2``,
so a synthesized map has exactly ``psd(|k|)`` at each frequency when the
deterministic amplitude mode is used.
"""

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class SurfaceSpec:
    H: float = 0.5          # Hurst exponent
    C: float = 1e11         # spectral level of the flat segment
    k_l: float = 16.0       # lower roll-off
    k_r: float = 16.0       # upper roll-off, start of the power law
    k_s: float = 64.0       # cutoff

    def validate(self):
        if not (0 < self.H <= 1):
            raise ValueError(f"H must be in (0, 1], got {self.H}")
        if not self.C > 0:
            raise ValueError(f"C must be positive, got {self.C}")
        if not (0 < self.k_l <= self.k_r <= self.k_s):
            raise ValueError(f"need 0 < k_l <= k_r <= k_s, got "
                             f"{self.k_l}, {self.k_r}, {self.k_s}")
        return self


MEDIUM_ROUGH = SurfaceSpec(H=0.5, C=1e11, k_l=16, k_r=16, k_s=64)
ROUGH = SurfaceSpec(H=0.5, C=1e11, k_l=32, k_r=32, k_s=256)


def psd(k_mag, spec):
    """Piecewise spectrum: flat at C on [k_l, k_r], power law out to k_s, zero elsewhere."""
    spec.validate()
    k = np.asarray(k_mag, dtype=float)
    if np.any(k < 0):
        raise ValueError("wavenumber magnitudes must be non-negative")
    out = np.zeros_like(k)
    flat = (k >= spec.k_l) & (k <= spec.k_r)
    tail = (k > spec.k_r) & (k <= spec.k_s)
    out[flat] = spec.C
    out[tail] = spec.C * (k[tail] / spec.k_r) ** (-2.0 * (1.0 + spec.H))
    return out if out.ndim else float(out)


def wavenumber_grid(N):
    f = np.fft.fftfreq(N, d=1.0 / N)
    return np.hypot(f[:, None], f[None, :])


@dataclass
class HeightMap:
    heights: np.ndarray
    spec: Optional[SurfaceSpec] = None
    seed: Optional[int] = None
    imag_residue: float = 0.0

    @property
    def N(self):
        return self.heights.shape[0]

    def rms(self):
        return float(np.sqrt(np.mean(self.heights ** 2)))


def synthesize_surface(spec, N=256, seed=0, rayleigh=False):
    """Random-phase spectral synthesis of an N x N height map.

    Amplitudes are ``sqrt(psd(|k|))``; phases are antisymmetrized so the
    spectrum is Hermitian and the inverse transform is real. With
    ``rayleigh=True`` the amplitudes additionally carry unit-power Rayleigh
    factors (the spectrum of a Gaussian white field).
    """
    spec.validate()
    if N < 8 or N & (N - 1):
        raise ValueError(f"N must be a power of two >= 8, got {N}")
    if spec.k_s > N / 2:
        raise ValueError(f"k_s={spec.k_s} exceeds the Nyquist index {N // 2} for N={N}")
    rng = np.random.default_rng(seed)
    amp = np.sqrt(psd(wavenumber_grid(N), spec))
    amp[0, 0] = 0.0
    neg = (-np.arange(N)) % N
    if rayleigh:
        white = np.fft.fft2(rng.standard_normal((N, N))) / N
        spectrum = amp * white
    else:
        theta = rng.uniform(0.0, 2 * np.pi, (N, N))
        phase = theta - theta[neg][:, neg]
        spectrum = amp * np.exp(1j * phase)
    h = N * np.fft.ifft2(spectrum)
    real = h.real.copy()
    rms = np.sqrt(np.mean(real ** 2))
    residue = float(np.max(np.abs(h.imag)) / rms) if rms > 0 else 0.0
    if residue > 1e-9:
        raise ArithmeticError(f"synthesis left an imaginary residue of {residue:.3g} x RMS")
    return HeightMap(real, spec, seed, residue)


def power_spectrum(heights):
    N = heights.shape[0]
    return np.abs(np.fft.fft2(heights)) ** 2 / N ** 2


def radial_psd(heights, n_bins=64, k_max=None):
    """Annulus-averaged power spectrum.

    Bins are equal-width annuli on ``[0, k_max]`` (default ``N/2``). Returns
    ``(centers, means, counts)``; empty bins get a NaN mean.
    """
    if isinstance(heights, HeightMap):
        heights = heights.heights
    heights = np.asarray(heights, dtype=float)
    if heights.ndim != 2 or heights.shape[0] != heights.shape[1]:
        raise ValueError(f"expected a square map, got shape {heights.shape}")
    N = heights.shape[0]
    if N < 8:
        raise ValueError(f"map side must be >= 8, got {N}")
    if n_bins < 2:
        raise ValueError(f"n_bins must be >= 2, got {n_bins}")
    k_max = N / 2 if k_max is None else float(k_max)
    edges = np.linspace(0.0, k_max, n_bins + 1)
    kmag = wavenumber_grid(N).ravel()
    power = power_spectrum(heights).ravel()
    keep = kmag <= k_max
    idx = np.clip(np.digitize(kmag[keep], edges) - 1, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    sums = np.bincount(idx, weights=power[keep], minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return centers, means, counts


def band_energy_fraction(heights, k_lo, k_hi):
    """Fraction of spectral energy outside the closed annulus [k_lo, k_hi]."""
    if isinstance(heights, HeightMap):
        heights = heights.heights
    p = power_spectrum(heights)
    k = wavenumber_grid(heights.shape[0])
    outside = (k < k_lo) | (k > k_hi)
    total = p.sum()
    return float(p[outside].sum() / total) if total > 0 else 0.0


def loglog_slope(k, power):
    """Least-squares slope of log(power) against log(k)."""
    k, power = np.asarray(k, float), np.asarray(power, float)
    ok = (k > 0) & (power > 0) & np.isfinite(power)
    return float(np.polyfit(np.log(k[ok]), np.log(power[ok]), 1)[0])


# -- export ---------------------------------------------------------------

def export_heightmap(hmap, path):
    """Write ``<path>.csv``, a 16-bit ``<path>.pgm`` and a ``<path>.json`` sidecar."""
    base = Path(path)
    if base.suffix in (".csv", ".pgm", ".json"):
        base = base.with_suffix("")
    h = np.asarray(hmap.heights, dtype=float)
    lo, hi = float(h.min()), float(h.max())
    degenerate = hi == lo
    if degenerate:
        gray = np.full(h.shape, 32768, dtype=">u2")
    else:
        gray = np.round((h - lo) / (hi - lo) * 65535).astype(">u2")
    sidecar = {
        "N": int(h.shape[0]),
        "spec": asdict(hmap.spec) if hmap.spec is not None else None,
        "seed": hmap.seed,
        "normalization": {"min": lo, "max": hi, "maxval": 65535, "degenerate": degenerate},
    }
    paths = {ext: base.with_name(base.name + "." + ext) for ext in ("csv", "pgm", "json")}
    try:
        base.parent.mkdir(parents=True, exist_ok=True)
        with open(paths["csv"], "w") as fh:
            for row in h:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        with open(paths["pgm"], "wb") as fh:
            fh.write(f"P5\n{h.shape[1]} {h.shape[0]}\n65535\n".encode("ascii"))
            fh.write(gray.tobytes())
        paths["json"].write_text(json.dumps(sidecar, indent=1) + "\n")
    except OSError as exc:
        raise OSError(f"cannot export height map to {base}: {exc}") from exc
    return paths


def read_heightmap_csv(path):
    return np.loadtxt(path, delimiter=",", dtype=float, ndmin=2)


def read_pgm16(path):
    """Minimal reader for the binary 16-bit graymaps written above."""
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    maxval = int(parts[2])
    return np.frombuffer(parts[3], dtype=">u2").reshape(h, w), maxval
