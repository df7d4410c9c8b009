"""Time grid and complex joint temporal waveform of a photon pair.

The relative waveform psi(tau) = A(tau) * exp(i*phi(tau)) gives the
amplitude for detecting the second (anti-Stokes) photon a time tau after
its partner (Stokes).  Time ordering of the emission process makes the
source waveform causal: A(tau) = 0 for tau < 0.

Conventions
-----------
* tau is carried in nanoseconds on a uniform bin lattice (`TimeGrid`);
  rates and angular frequencies are in SI units (1/s, rad/s).
* |psi|^2 is a probability density over tau in seconds, so parametric
  envelopes are normalized to sum(|psi_k|^2 * dtau_s) = 1 and psi carries
  units of s^(-1/2).  Absolute brightness lives in `SourceSpec.pair_rate`.
* No interpolation: evaluating psi at an arbitrary tau returns the sample
  of the bin containing tau (zero outside the grid).  All downstream
  algorithms operate on this common lattice.
* At amplitude nodes the stored phase follows a floor-step convention
  (the pi jump happens at the node, not spread over neighboring bins);
  any convention is unobservable there, but one must be fixed for
  reproducible round trips.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NS_TO_S = 1e-9

__all__ = [
    "NS_TO_S",
    "TimeGrid",
    "ComplexEnvelope",
    "SourceSpec",
    "RabiParams",
    "make_time_grid",
    "damped_rabi_envelope",
    "exponential_envelope",
    "sampled_envelope",
    "envelope_at",
    "write_envelope_csv",
    "read_envelope_csv",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform tau lattice shared by envelopes and coincidence histograms.

    Bin k spans [tau_min + k*bin_width, tau_min + (k+1)*bin_width) and its
    center sits at tau_min + (k + 0.5)*bin_width.  All times in ns.
    """

    tau_min: float
    bin_width: float
    n_bins: int

    def __post_init__(self):
        if self.bin_width <= 0:
            raise ValueError(f"bin_width must be positive, got {self.bin_width}")
        if self.n_bins < 2:
            raise ValueError(f"need at least 2 bins, got {self.n_bins}")

    @property
    def tau_max(self) -> float:
        return self.tau_min + self.n_bins * self.bin_width

    @property
    def centers(self) -> np.ndarray:
        return self.tau_min + (np.arange(self.n_bins) + 0.5) * self.bin_width

    def bin_index(self, tau):
        """Index of the bin containing tau; -1 outside the grid."""
        tau = np.asarray(tau, dtype=float)
        idx = np.floor((tau - self.tau_min) / self.bin_width).astype(np.int64)
        idx = np.where((tau >= self.tau_min) & (tau < self.tau_max), idx, -1)
        # guard the top edge against float round-up
        idx = np.minimum(idx, self.n_bins - 1)
        return idx if idx.ndim else int(idx)

    def is_symmetric(self, tol: float = 1e-9) -> bool:
        return abs(self.tau_min + self.tau_max) < tol * self.bin_width

    def mirror_index(self, k: int) -> int:
        """Bin containing -center(k); requires a symmetric grid."""
        if not self.is_symmetric():
            raise ValueError("mirror_index requires a grid symmetric about tau=0")
        return self.n_bins - 1 - int(k)

    def same_lattice(self, other: "TimeGrid", tol: float = 1e-9) -> bool:
        return (
            abs(self.bin_width - other.bin_width) < tol
            and abs(self.tau_min - other.tau_min) < tol
            and self.n_bins == other.n_bins
        )


def make_time_grid(tau_min: float, tau_max: float, bin_width: float) -> TimeGrid:
    """Build a grid covering [tau_min, tau_max] with the given bin width (ns).

    The span must be an integer number of bins (within rounding tolerance).
    """
    if bin_width <= 0:
        raise ValueError(f"bin_width must be positive, got {bin_width}")
    if tau_max <= tau_min:
        raise ValueError("tau_max must exceed tau_min")
    ratio = (tau_max - tau_min) / bin_width
    n_bins = int(round(ratio))
    if abs(ratio - n_bins) > 1e-9 * max(1.0, ratio):
        raise ValueError(
            f"span {tau_max - tau_min} ns is not an integer multiple of "
            f"bin_width {bin_width} ns"
        )
    return TimeGrid(tau_min=float(tau_min), bin_width=float(bin_width), n_bins=n_bins)


@dataclass(frozen=True)
class ComplexEnvelope:
    """Sampled relative waveform psi(tau) on a `TimeGrid`.

    `amplitude` and `phase` are stored separately so that the phase
    convention at zero-amplitude bins survives round trips; `samples`
    recombines them.  Immutable after construction.
    """

    grid: TimeGrid
    amplitude: np.ndarray
    phase: np.ndarray

    def __post_init__(self):
        amp = np.asarray(self.amplitude, dtype=float)
        ph = np.asarray(self.phase, dtype=float)
        if amp.shape != (self.grid.n_bins,) or ph.shape != (self.grid.n_bins,):
            raise ValueError(
                f"expected {self.grid.n_bins} samples, got amplitude {amp.shape}, "
                f"phase {ph.shape}"
            )
        if np.any(amp < 0):
            raise ValueError("amplitude must be non-negative")
        bad = np.nonzero((self.grid.centers < 0) & (amp > 0))[0]
        if bad.size:
            raise ValueError(
                f"causality violated: nonzero amplitude at tau < 0 "
                f"(first offending bin {bad[0]}, center {self.grid.centers[bad[0]]} ns)"
            )
        amp.setflags(write=False)
        ph.setflags(write=False)
        object.__setattr__(self, "amplitude", amp)
        object.__setattr__(self, "phase", ph)

    @property
    def samples(self) -> np.ndarray:
        return self.amplitude * np.exp(1j * self.phase)

    def lookup(self, tau) -> np.ndarray:
        """psi at arbitrary tau (ns): sample of the containing bin, 0 outside."""
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        idx = np.floor((tau - self.grid.tau_min) / self.grid.bin_width).astype(np.int64)
        inside = (idx >= 0) & (idx < self.grid.n_bins)
        out = np.zeros(tau.shape, dtype=complex)
        out[inside] = self.samples[idx[inside]]
        return out

    def norm_squared(self) -> float:
        return float(np.sum(self.amplitude**2) * self.grid.bin_width * NS_TO_S)


@dataclass(frozen=True)
class SourceSpec:
    """Central frequencies and brightness of the pair source.

    delta = omega_as0 - omega_s0 is the frequency difference between the
    two photons (rad/s); consistency is enforced at construction.
    """

    omega_s0: float
    omega_as0: float
    delta: float
    pair_rate: float

    def __post_init__(self):
        expected = self.omega_as0 - self.omega_s0
        scale = max(abs(self.omega_s0), abs(self.omega_as0), 1.0)
        if abs(self.delta - expected) > max(1e-3, 1e-12 * scale):
            raise ValueError(
                f"delta={self.delta} inconsistent with omega_as0-omega_s0={expected}"
            )
        if self.pair_rate < 0:
            raise ValueError("pair_rate must be non-negative")

    @classmethod
    def from_delta(cls, delta: float, pair_rate: float, omega_s0: float = 2.414e15) -> "SourceSpec":
        """Convenience constructor: only delta matters to the interference model."""
        return cls(omega_s0=omega_s0, omega_as0=omega_s0 + delta, delta=delta, pair_rate=pair_rate)


@dataclass(frozen=True)
class RabiParams:
    """Effective parameters of the damped-oscillation waveform family."""

    omega_e: float  # effective Rabi angular frequency, rad/s
    gamma: float    # amplitude decay rate, 1/s
    phi0: float = 0.0

    def __post_init__(self):
        if self.omega_e <= 0:
            raise ValueError("omega_e must be positive")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")


def _normalize(amplitude: np.ndarray, grid: TimeGrid, what: str) -> np.ndarray:
    total = np.sum(amplitude**2) * grid.bin_width * NS_TO_S
    if total <= 0 or not np.isfinite(total):
        raise ValueError(f"{what}: all samples underflow to zero on this grid")
    return amplitude / np.sqrt(total)


def damped_rabi_envelope(params: RabiParams, grid: TimeGrid) -> ComplexEnvelope:
    """Damped Rabi-oscillation waveform with pi phase flips at the nodes.

    For bin centers tau > 0:

        A(tau)   = N * exp(-gamma*tau) * |sin(omega_e*tau/2)|
        phi(tau) = phi0 + pi * floor(omega_e*tau / (2*pi))

    i.e. the amplitude vanishes at tau_n = 2*pi*n/omega_e and the phase
    steps by exactly pi across each node.  N normalizes the shape to unit
    L2 norm.  Samples at tau <= 0 are zero.
    """
    tau_s = grid.centers * NS_TO_S
    positive = tau_s > 0
    tau_pos = np.clip(tau_s, 0.0, None)
    amp = np.where(
        positive,
        np.exp(-params.gamma * tau_pos) * np.abs(np.sin(params.omega_e * tau_pos / 2.0)),
        0.0,
    )
    amp = _normalize(amp, grid, "damped_rabi_envelope")
    phase = np.where(
        positive,
        params.phi0 + np.pi * np.floor(params.omega_e * tau_s / (2.0 * np.pi)),
        0.0,
    )
    return ComplexEnvelope(grid=grid, amplitude=amp, phase=phase)


def exponential_envelope(gamma: float, grid: TimeGrid) -> ComplexEnvelope:
    """Single-sided exponential waveform with flat (zero) phase.

    A(tau) = N * exp(-gamma*tau/2) for tau > 0, so |psi|^2 decays with
    rate gamma; the flat phase makes the waveform transform limited.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    tau_s = grid.centers * NS_TO_S
    amp = np.where(tau_s > 0, np.exp(-gamma * np.clip(tau_s, 0.0, None) / 2.0), 0.0)
    amp = _normalize(amp, grid, "exponential_envelope")
    return ComplexEnvelope(grid=grid, amplitude=amp, phase=np.zeros(grid.n_bins))


def sampled_envelope(grid: TimeGrid, values) -> ComplexEnvelope:
    """Wrap user-supplied complex samples verbatim (no renormalization).

    Validates length and causality; the stored phase is the argument of
    each sample (zero where the amplitude vanishes).
    """
    values = np.asarray(values, dtype=complex)
    if values.shape != (grid.n_bins,):
        raise ValueError(f"expected {grid.n_bins} samples, got shape {values.shape}")
    amp = np.abs(values)
    phase = np.where(amp > 0, np.angle(values), 0.0)
    return ComplexEnvelope(grid=grid, amplitude=amp, phase=phase)


def envelope_at(env: ComplexEnvelope, tau: float) -> complex:
    """psi at a single tau (ns); exactly 0 outside the grid, no interpolation."""
    return complex(env.lookup(tau)[0])


def write_envelope_csv(env: ComplexEnvelope, path) -> None:
    """Write `tau_ns,re,im` rows, one per bin, 12 significant digits."""
    samples = env.samples
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("tau_ns,re,im\n")
        for tau, value in zip(env.grid.centers, samples):
            fh.write(f"{tau:.12g},{value.real:.12g},{value.imag:.12g}\n")


def read_envelope_csv(path) -> ComplexEnvelope:
    """Inverse of `write_envelope_csv`; the grid is rebuilt from the tau column."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 3:
        raise ValueError(f"{path}: expected 3 columns tau_ns,re,im")
    tau = data[:, 0]
    if tau.size < 2:
        raise ValueError(f"{path}: need at least 2 rows")
    widths = np.diff(tau)
    width = widths[0]
    if np.any(np.abs(widths - width) > 1e-9 * width):
        raise ValueError(f"{path}: tau column is not uniformly spaced")
    grid = TimeGrid(tau_min=float(tau[0] - width / 2), bin_width=float(width), n_bins=tau.size)
    return sampled_envelope(grid, data[:, 1] + 1j * data[:, 2])
