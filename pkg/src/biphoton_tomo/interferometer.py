"""Forward model of the six-projection two-photon interference measurement.

The two photons of a pair enter a 50/50 splitter from opposite ports (H
polarized in one arm, V in the other, with a relative delay T applied to
the second arm).  Each splitter output passes a polarization projector
P_m = (alpha_m, theta_m) selecting cos(alpha)|H> + sin(alpha)e^{i theta}|V>,
and coincidences between the two outputs are histogrammed versus
tau = t4 - t3.

With the splitter convention a3 = (a1 + i*a2)/sqrt(2), a4 = (i*a1 + a2)/sqrt(2)
the post-splitter two-photon amplitude reduces (global phases dropped, they
cancel in every modulus) to

    psi34(T, tau) = c1 * [e^{-i delta (tau-T)} psi(tau-T) + psi(T-tau)]
                  - c2 * [e^{i delta T} psi(-tau-T) + e^{-i delta tau} psi(tau+T)]

    c1 = (1/2) cos(alpha3) sin(alpha4) e^{i theta4}
    c2 = (1/2) sin(alpha3) cos(alpha4) e^{i theta3}

where psi is the source waveform and delta the photon frequency
difference.  Expected coincidence counts follow the count law

    C(T, tau) = pair_rate * |psi34(T, tau)|^2 * eta * dt * t_measure

plus an optional flat accidental floor.  An optional residual phase
(imperfect optics) multiplies the first bracket by e^{i lambda0}; it is
a global phase in the two single-bracket settings and only moves the
interference angle between the brackets, which is exactly what the
tomography estimates and removes.

Poisson sampling and time-tagged event-stream generation derive their RNG
streams from (seed, labels, T) so artifacts are reproducible and
order-independent.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .waveform import NS_TO_S, ComplexEnvelope, SourceSpec, TimeGrid

__all__ = [
    "PROJECTOR_TABLE",
    "SIX_SETTINGS",
    "ProjectorSetting",
    "AcquisitionConfig",
    "CoincidenceHistogram",
    "EventStreams",
    "joint_amplitude",
    "joint_amplitude_profile",
    "expected_histogram",
    "sample_histogram",
    "source_coincidence",
    "generate_event_streams",
    "derived_rng",
    "write_histogram_csv",
    "read_histogram_csv",
    "write_events_csv",
    "read_events_csv",
]

# label -> (alpha, theta): H/V linear basis, D/A diagonal, R/L circular
PROJECTOR_TABLE = {
    "H": (0.0, 0.0),
    "V": (np.pi / 2, 0.0),
    "D": (np.pi / 4, 0.0),
    "A": (-np.pi / 4, 0.0),
    "R": (np.pi / 4, np.pi / 2),
    "L": (np.pi / 4, -np.pi / 2),
}

# the six (P3, P4) coincidence settings used by the reconstruction
SIX_SETTINGS = (("V", "H"), ("H", "V"), ("D", "D"), ("D", "A"), ("D", "R"), ("D", "L"))


@dataclass(frozen=True)
class ProjectorSetting:
    """Polarization projection (alpha, theta) of one detector arm."""

    alpha: float
    theta: float
    label: str

    def __post_init__(self):
        if self.label not in PROJECTOR_TABLE:
            raise ValueError(f"unknown projector label {self.label!r}")
        alpha, theta = PROJECTOR_TABLE[self.label]
        if abs(self.alpha - alpha) > 1e-12 or abs(self.theta - theta) > 1e-12:
            raise ValueError(
                f"(alpha, theta)=({self.alpha}, {self.theta}) does not match "
                f"label {self.label!r} ({alpha}, {theta})"
            )

    @classmethod
    def named(cls, label: str) -> "ProjectorSetting":
        alpha, theta = PROJECTOR_TABLE[label]
        return cls(alpha=alpha, theta=theta, label=label)


@dataclass(frozen=True)
class AcquisitionConfig:
    """Detection efficiency, binning and integration time of one run."""

    eta: float               # joint detection efficiency
    bin_width: float         # coincidence bin width, seconds
    measure_time: float      # total integration time, seconds
    background_rate: float = 0.0  # expected accidental counts per bin
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.eta <= 1:
            raise ValueError("eta must be in (0, 1]")
        if self.bin_width <= 0:
            raise ValueError("bin_width must be positive")
        if self.measure_time <= 0:
            raise ValueError("measure_time must be positive")
        if self.background_rate < 0:
            raise ValueError("background_rate must be non-negative")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass(frozen=True)
class CoincidenceHistogram:
    """Per-bin coincidence counts for one (P3, P4, T) configuration.

    kind == "expected" holds real-valued Poisson means; kind == "sampled"
    holds integer draws.  setting3/setting4 are None for the source
    coincidence measurement taken before the splitter.
    """

    grid: TimeGrid
    delay_ns: float
    setting3: ProjectorSetting | None
    setting4: ProjectorSetting | None
    values: np.ndarray
    kind: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.n_bins,):
            raise ValueError(
                f"expected {self.grid.n_bins} values, got shape {values.shape}"
            )
        if np.any(values < 0):
            raise ValueError("histogram values must be non-negative")
        if self.kind not in ("expected", "sampled"):
            raise ValueError(f"kind must be 'expected' or 'sampled', got {self.kind!r}")
        if self.kind == "sampled" and np.any(values != np.round(values)):
            raise ValueError("sampled histogram must contain integers")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def labels(self) -> tuple[str, str]:
        s3 = self.setting3.label if self.setting3 else "-"
        s4 = self.setting4.label if self.setting4 else "-"
        return s3, s4


@dataclass(frozen=True)
class EventStreams:
    """Time tags (seconds) of the two detectors over one acquisition."""

    stokes: np.ndarray
    antistokes: np.ndarray
    duration: float

    def __post_init__(self):
        for name in ("stokes", "antistokes"):
            tags = np.asarray(getattr(self, name), dtype=float)
            if np.any(np.diff(tags) < 0):
                raise ValueError(f"{name} tags must be sorted ascending")
            if tags.size and (tags[0] < 0 or tags[-1] > self.duration):
                raise ValueError(f"{name} tags must lie in [0, duration]")
            tags.setflags(write=False)
            object.__setattr__(self, name, tags)
        if self.duration <= 0:
            raise ValueError("duration must be positive")


def derived_rng(seed: int, *tokens) -> np.random.Generator:
    """RNG stream keyed on (seed, tokens); stable across runs and call order."""
    digest = hashlib.sha256("/".join(str(t) for t in tokens).encode()).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([int(seed), *words]))


def _coefficients(s3: ProjectorSetting, s4: ProjectorSetting, residual_phase: float):
    c1 = 0.5 * np.cos(s3.alpha) * np.sin(s4.alpha) * np.exp(1j * s4.theta)
    c2 = 0.5 * np.sin(s3.alpha) * np.cos(s4.alpha) * np.exp(1j * s3.theta)
    return c1 * np.exp(1j * residual_phase), c2


def joint_amplitude_profile(
    env: ComplexEnvelope,
    delta: float,
    s3: ProjectorSetting,
    s4: ProjectorSetting,
    t_ns: float,
    tau_ns,
    residual_phase: float = 0.0,
) -> np.ndarray:
    """Vectorized psi34(T, tau) over an array of tau values (ns).

    Waveform lookups snap to the bin containing each shifted time, so any
    non-negative delay T is usable; when T is an integer multiple of the
    bin width the lookups are exact lattice reads.
    """
    if t_ns < 0:
        raise ValueError("delay T must be non-negative")
    tau = np.atleast_1d(np.asarray(tau_ns, dtype=float))
    b1 = (
        np.exp(-1j * delta * (tau - t_ns) * NS_TO_S) * env.lookup(tau - t_ns)
        + env.lookup(t_ns - tau)
    )
    b2 = (
        np.exp(1j * delta * t_ns * NS_TO_S) * env.lookup(-tau - t_ns)
        + np.exp(-1j * delta * tau * NS_TO_S) * env.lookup(tau + t_ns)
    )
    c1, c2 = _coefficients(s3, s4, residual_phase)
    return c1 * b1 - c2 * b2


def joint_amplitude(
    env: ComplexEnvelope,
    delta: float,
    s3: ProjectorSetting,
    s4: ProjectorSetting,
    t_ns: float,
    tau_ns: float,
    residual_phase: float = 0.0,
) -> complex:
    """psi34(T, tau) at a single tau (ns)."""
    return complex(
        joint_amplitude_profile(env, delta, s3, s4, t_ns, tau_ns, residual_phase)[0]
    )


def _check_alignment(grid: TimeGrid, env: ComplexEnvelope):
    if abs(grid.bin_width - env.grid.bin_width) > 1e-9 * env.grid.bin_width:
        raise ValueError("histogram grid and envelope grid have different bin widths")
    offset = (grid.tau_min - env.grid.tau_min) / env.grid.bin_width
    if abs(offset - round(offset)) > 1e-6:
        raise ValueError("histogram grid is not lattice-aligned with the envelope grid")


def expected_histogram(
    env: ComplexEnvelope,
    source: SourceSpec,
    s3: ProjectorSetting,
    s4: ProjectorSetting,
    t_ns: float,
    acq: AcquisitionConfig,
    grid: TimeGrid | None = None,
    residual_phase: float = 0.0,
) -> CoincidenceHistogram:
    """Expected coincidence histogram via the count law.

    values[k] = pair_rate * |psi34(T, tau_k)|^2 * eta * dt * t_measure
                + background per bin.
    """
    grid = grid or env.grid
    _check_alignment(grid, env)
    psi34 = joint_amplitude_profile(env, source.delta, s3, s4, t_ns, grid.centers, residual_phase)
    scale = source.pair_rate * acq.eta * acq.bin_width * acq.measure_time
    values = np.abs(psi34) ** 2 * scale + acq.background_rate
    return CoincidenceHistogram(
        grid=grid, delay_ns=float(t_ns), setting3=s3, setting4=s4, values=values, kind="expected"
    )


def sample_histogram(expected: CoincidenceHistogram, seed: int) -> CoincidenceHistogram:
    """Per-bin independent Poisson draws around the expected histogram.

    The RNG substream is derived from (seed, setting labels, T), so sampling
    the six settings in any order gives identical per-setting results.
    """
    if expected.kind != "expected":
        raise ValueError("sample_histogram requires an expected-kind histogram")
    s3, s4 = expected.labels
    rng = derived_rng(seed, "histogram", s3, s4, f"{expected.delay_ns:.6f}")
    values = rng.poisson(expected.values).astype(float)
    return CoincidenceHistogram(
        grid=expected.grid,
        delay_ns=expected.delay_ns,
        setting3=expected.setting3,
        setting4=expected.setting4,
        values=values,
        kind="sampled",
    )


def source_coincidence(
    env: ComplexEnvelope,
    source: SourceSpec,
    acq: AcquisitionConfig,
    grid: TimeGrid | None = None,
) -> CoincidenceHistogram:
    """Coincidence histogram taken before the splitter.

    Counting either photon first folds the waveform onto both signs of tau:
    values[k] ~ A^2(tau_k) + A^2(-tau_k), scaled by the count law.
    """
    grid = grid or env.grid
    _check_alignment(grid, env)
    if not grid.is_symmetric():
        raise ValueError("source coincidence requires a grid symmetric about tau=0")
    a2 = np.abs(env.lookup(grid.centers)) ** 2
    a2_mirror = np.abs(env.lookup(-grid.centers)) ** 2
    scale = source.pair_rate * acq.eta * acq.bin_width * acq.measure_time
    values = (a2 + a2_mirror) * scale + acq.background_rate
    return CoincidenceHistogram(
        grid=grid, delay_ns=0.0, setting3=None, setting4=None, values=values, kind="expected"
    )


def generate_event_streams(
    env: ComplexEnvelope,
    source: SourceSpec,
    acq: AcquisitionConfig,
    singles_background_s: float,
    singles_background_as: float,
    duration: float,
    seed: int,
) -> EventStreams:
    """Time-tagged detection record of the source (no splitter).

    Detected pairs arrive as a Poisson process of rate pair_rate*eta; each
    pair produces a Stokes tag t and an anti-Stokes tag t + tau with tau
    drawn from the normalized |psi|^2 density (uniform within a bin).
    Independent Poisson background singles are merged into each stream.
    Pairs whose anti-Stokes tag would fall past the end of the record are
    dropped (an edge effect, negligible for duration >> waveform length).
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    if singles_background_s < 0 or singles_background_as < 0:
        raise ValueError("background rates must be non-negative")

    rng = derived_rng(seed, "events", f"{duration:.6f}")
    n_pairs = rng.poisson(source.pair_rate * acq.eta * duration)
    t_s = np.sort(rng.uniform(0.0, duration, size=n_pairs))

    prob = env.amplitude**2 * env.grid.bin_width * NS_TO_S
    total = prob.sum()
    if n_pairs > 0 and total <= 0:
        raise ValueError("envelope carries no probability mass")
    if n_pairs > 0:
        prob = prob / total
        bins = rng.choice(env.grid.n_bins, size=n_pairs, p=prob)
        offsets = rng.uniform(0.0, 1.0, size=n_pairs)
        tau = (env.grid.tau_min + (bins + offsets) * env.grid.bin_width) * NS_TO_S
        t_as = t_s + tau
        keep = (t_as >= 0) & (t_as <= duration)
        t_s, t_as = t_s[keep], t_as[keep]
    else:
        t_as = np.empty(0)

    n_bg_s = rng.poisson(singles_background_s * duration)
    n_bg_as = rng.poisson(singles_background_as * duration)
    stokes = np.sort(np.concatenate([t_s, rng.uniform(0.0, duration, size=n_bg_s)]))
    antistokes = np.sort(np.concatenate([t_as, rng.uniform(0.0, duration, size=n_bg_as)]))
    return EventStreams(stokes=stokes, antistokes=antistokes, duration=float(duration))


def write_histogram_csv(hist: CoincidenceHistogram, path) -> None:
    """Histogram CSV: `# T_ns=`, `# setting3=`, `# setting4=`, `# kind=` then rows."""
    s3, s4 = hist.labels
    integer = hist.kind == "sampled"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# T_ns={hist.delay_ns:.12g}\n")
        fh.write(f"# setting3={s3}\n")
        fh.write(f"# setting4={s4}\n")
        fh.write(f"# kind={hist.kind}\n")
        fh.write("tau_ns,counts\n")
        for tau, value in zip(hist.grid.centers, hist.values):
            if integer:
                fh.write(f"{tau:.12g},{int(value)}\n")
            else:
                fh.write(f"{tau:.12g},{value:.12g}\n")


def read_histogram_csv(path) -> CoincidenceHistogram:
    """Inverse of `write_histogram_csv`."""
    meta = {}
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition("=")
                meta[key.strip()] = value.strip()
            elif line.startswith("tau_ns"):
                continue
            else:
                parts = line.split(",")
                if len(parts) != 2:
                    raise ValueError(f"{path}:{line_no}: malformed row {line!r}")
                rows.append((float(parts[0]), float(parts[1])))
    for key in ("T_ns", "setting3", "setting4", "kind"):
        if key not in meta:
            raise ValueError(f"{path}: missing '# {key}=' header")
    tau = np.array([r[0] for r in rows])
    values = np.array([r[1] for r in rows])
    if tau.size < 2:
        raise ValueError(f"{path}: need at least 2 rows")
    width = tau[1] - tau[0]
    if np.any(np.abs(np.diff(tau) - width) > 1e-9 * width):
        raise ValueError(f"{path}: tau column is not uniformly spaced")
    grid = TimeGrid(tau_min=float(tau[0] - width / 2), bin_width=float(width), n_bins=tau.size)
    s3 = None if meta["setting3"] == "-" else ProjectorSetting.named(meta["setting3"])
    s4 = None if meta["setting4"] == "-" else ProjectorSetting.named(meta["setting4"])
    return CoincidenceHistogram(
        grid=grid,
        delay_ns=float(meta["T_ns"]),
        setting3=s3,
        setting4=s4,
        values=values,
        kind=meta["kind"],
    )


def write_events_csv(streams: EventStreams, path) -> None:
    """Event CSV: `channel,time_s` rows (channel in {s, as}), merged by time."""
    channels = np.concatenate(
        [np.zeros(streams.stokes.size, dtype=int), np.ones(streams.antistokes.size, dtype=int)]
    )
    times = np.concatenate([streams.stokes, streams.antistokes])
    order = np.lexsort((channels, times))
    names = ("s", "as")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# duration_s={streams.duration:.12g}\n")
        fh.write("channel,time_s\n")
        for i in order:
            fh.write(f"{names[channels[i]]},{times[i]:.12g}\n")


def read_events_csv(path) -> EventStreams:
    """Inverse of `write_events_csv`."""
    duration = None
    stokes, antistokes = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition("=")
                if key.strip() == "duration_s":
                    duration = float(value)
                continue
            if line.startswith("channel"):
                continue
            parts = line.split(",")
            if len(parts) != 2 or parts[0] not in ("s", "as"):
                raise ValueError(f"{path}:{line_no}: malformed row {line!r}")
            (stokes if parts[0] == "s" else antistokes).append(float(parts[1]))
    if duration is None:
        raise ValueError(f"{path}: missing '# duration_s=' header")
    return EventStreams(
        stokes=np.sort(np.array(stokes)),
        antistokes=np.sort(np.array(antistokes)),
        duration=duration,
    )
