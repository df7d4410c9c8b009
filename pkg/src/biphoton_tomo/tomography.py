"""Inverse problem: recover amplitude and phase of the pair waveform.

Inputs are the six polarization-projected coincidence histograms
(`SixPack`) measured at a fine delay T_s and a coarse delay T_l, plus the
direct (pre-splitter) coincidence histogram.  The chain is

    compute_B -> compute_lambda -> estimate_lambda0 -> compute_xi
      -> estimate_delta -> detect_islands -> recursive_phase (T_s)
      -> stitch_two_step (T_l) -> reconstruct_amplitude

The per-bin interference angle Lambda is obtained from count ratios; after
removing the constant residual offset Lambda0 of the optics it encodes the
combined phase difference

    Xi(T, tau) = phi(tau+T) - phi(tau-T) - delta*T      (tau >  T)
    Xi(T, tau) = phi(-tau-T) - phi(-tau+T) + delta*T    (tau < -T)

which is antisymmetric in tau and drives the phase recursion

    phi(tau0 + 2nT) = phi(tau0 + 2(n-1)T) + Xi(T, tau0 + (2n-1)T) + delta*T

from a reference point phi(tau0) = 0.  A fine delay resolves the phase
inside each amplitude island (regions between nodes, where the phase is
observable); a single coarse-delay step bridges adjacent islands without
touching the nodes.

Delays: the fine delay must be an integer number of bins so the recursion
lattice is exact.  The coarse delay may be any value (e.g. 5.8 ns on a
1 ns lattice); its waveform and Xi lookups snap to the containing bin, and
the bridge step follows the same snapped-lookup chain, so it stays exact
in the noise-free limit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .angles import circular_mean, wrap_angle, wrapped_median
from .interferometer import (
    SIX_SETTINGS,
    AcquisitionConfig,
    CoincidenceHistogram,
    ProjectorSetting,
    expected_histogram,
    sample_histogram,
)
from .waveform import NS_TO_S, ComplexEnvelope, SourceSpec, TimeGrid

__all__ = [
    "PHASE_INCREMENT_SIGN",
    "TomographyError",
    "SixPack",
    "LambdaProfile",
    "XiProfile",
    "TomographyPlan",
    "IslandPhase",
    "StitchResult",
    "Lambda0Estimate",
    "DeltaEstimate",
    "ReconstructionResult",
    "six_pack_expected",
    "six_pack_sampled",
    "compute_B",
    "compute_lambda",
    "estimate_lambda0",
    "compute_xi",
    "estimate_delta",
    "resolve_delta",
    "detect_islands",
    "recursive_phase",
    "stitch_two_step",
    "reconstruct_amplitude",
    "reconstruct",
    "write_result_csv",
    "read_result_csv",
    "result_summary",
    "write_result_json",
]

# Relation between the interference angle measured from the count ratios and
# the phase increment Xi used by the recursion:  Lambda = Lambda0 - Xi.
# The overall sign is fixed by the splitter convention (the i factors in the
# port transformation) and is pinned once here, by requiring the noise-free
# pipeline to reproduce injected ground truth.
PHASE_INCREMENT_SIGN = -1.0

DEFAULT_COUNT_FLOOR = 20.0


class TomographyError(ValueError):
    """Raised when a reconstruction stage cannot proceed; names the stage."""


@dataclass(frozen=True)
class SixPack:
    """The six projection histograms sharing one grid and one delay.

    Order: (V,H), (H,V), (D,D), (D,A), (D,R), (D,L) for (P3, P4).
    """

    c_vh: CoincidenceHistogram
    c_hv: CoincidenceHistogram
    c_dd: CoincidenceHistogram
    c_da: CoincidenceHistogram
    c_dr: CoincidenceHistogram
    c_dl: CoincidenceHistogram

    def __post_init__(self):
        ref = self.c_vh
        for name, hist in self.items():
            if not hist.grid.same_lattice(ref.grid):
                raise ValueError(f"{name}: grid differs within the six-pack")
            if abs(hist.delay_ns - ref.delay_ns) > 1e-9:
                raise ValueError(f"{name}: delay differs within the six-pack")
            if hist.kind != ref.kind:
                raise ValueError(f"{name}: kind differs within the six-pack")
        for (l3, l4), (_, hist) in zip(SIX_SETTINGS, self.items()):
            if hist.labels != (l3, l4):
                raise ValueError(
                    f"histogram with labels {hist.labels} in the ({l3},{l4}) slot"
                )

    def items(self):
        return [
            ("c_vh", self.c_vh),
            ("c_hv", self.c_hv),
            ("c_dd", self.c_dd),
            ("c_da", self.c_da),
            ("c_dr", self.c_dr),
            ("c_dl", self.c_dl),
        ]

    @property
    def grid(self) -> TimeGrid:
        return self.c_vh.grid

    @property
    def delay_ns(self) -> float:
        return self.c_vh.delay_ns

    @property
    def kind(self) -> str:
        return self.c_vh.kind

    def total_counts(self) -> np.ndarray:
        """Per-bin counts summed over the six settings."""
        return sum(hist.values for _, hist in self.items())

    @classmethod
    def from_label_map(cls, histograms: dict) -> "SixPack":
        """Build from a {(label3, label4): histogram} mapping."""
        missing = [pair for pair in SIX_SETTINGS if pair not in histograms]
        if missing:
            raise ValueError(f"missing settings: {missing}")
        return cls(*(histograms[pair] for pair in SIX_SETTINGS))

    def subtract_background(self, background: float) -> "SixPack":
        """Return a copy with a flat accidental floor removed (clipped at 0)."""
        if background == 0:
            return self
        adjusted = {}
        for pair, (_, hist) in zip(SIX_SETTINGS, self.items()):
            adjusted[pair] = CoincidenceHistogram(
                grid=hist.grid,
                delay_ns=hist.delay_ns,
                setting3=hist.setting3,
                setting4=hist.setting4,
                values=np.clip(hist.values - background, 0.0, None),
                kind="expected",
            )
        return SixPack.from_label_map(adjusted)


def six_pack_expected(
    env: ComplexEnvelope,
    source: SourceSpec,
    t_ns: float,
    acq: AcquisitionConfig,
    grid: TimeGrid | None = None,
    residual_phase: float = 0.0,
) -> SixPack:
    """Forward-model the six expected histograms at one delay."""
    histograms = {}
    for l3, l4 in SIX_SETTINGS:
        histograms[(l3, l4)] = expected_histogram(
            env,
            source,
            ProjectorSetting.named(l3),
            ProjectorSetting.named(l4),
            t_ns,
            acq,
            grid=grid,
            residual_phase=residual_phase,
        )
    return SixPack.from_label_map(histograms)


def six_pack_sampled(expected: SixPack, seed: int) -> SixPack:
    """Poisson-sample every histogram of an expected six-pack."""
    sampled = {}
    for pair, (_, hist) in zip(SIX_SETTINGS, expected.items()):
        sampled[pair] = sample_histogram(hist, seed)
    return SixPack.from_label_map(sampled)


@dataclass(frozen=True)
class LambdaProfile:
    """Per-bin interference angle with confidence weights and validity."""

    grid: TimeGrid
    delay_ns: float
    lam: np.ndarray
    weight: np.ndarray
    stderr: np.ndarray
    valid: np.ndarray


@dataclass(frozen=True)
class XiProfile:
    """Per-bin combined phase difference after residual-offset removal."""

    grid: TimeGrid
    delay_ns: float
    xi: np.ndarray
    weight: np.ndarray
    stderr: np.ndarray
    valid: np.ndarray


@dataclass(frozen=True)
class TomographyPlan:
    """Delays, thresholds and reference choices of one reconstruction.

    t_s_ns must be an integer number of bins; t_l_ns may be arbitrary
    (lookups snap to the containing bin).  reference_tau0_ns "auto" puts
    the phase reference at the peak of the background-subtracted direct
    coincidence histogram (tau > 0).  lambda0_window_ns limits the
    symmetric average for the residual offset; None uses every mutually
    valid pair.  delta_window_bins sets how many near-edge bins enter the
    frequency-difference medians.
    """

    t_s_ns: float
    t_l_ns: float
    island_threshold: float = 0.05
    count_floor: float = DEFAULT_COUNT_FLOOR
    reference_tau0_ns: float | str = "auto"
    lambda0_window_ns: float | None = None
    delta_window_bins: int = 24
    stitch_anchors: int = 5

    def __post_init__(self):
        if self.t_s_ns <= 0 or self.t_l_ns <= 0:
            raise ValueError("delays must be positive")
        if self.t_s_ns >= self.t_l_ns:
            raise ValueError("t_s_ns must be smaller than t_l_ns")
        if not 0 < self.island_threshold < 1:
            raise ValueError("island_threshold must be in (0, 1)")
        if self.count_floor < 0:
            raise ValueError("count_floor must be non-negative")
        if self.delta_window_bins < 1:
            raise ValueError("delta_window_bins must be at least 1")
        if self.stitch_anchors < 1:
            raise ValueError("stitch_anchors must be at least 1")


def compute_B(pack: SixPack, count_floor: float = DEFAULT_COUNT_FLOOR):
    """Count ratio B = C_VH / C_HV with a per-bin validity mask.

    Bins where either histogram does not exceed the floor are invalid
    (invalidity is per-bin, never fatal).
    """
    c_vh = pack.c_vh.values
    c_hv = pack.c_hv.values
    valid = (c_vh > count_floor) & (c_hv > count_floor)
    ratio = np.full(pack.grid.n_bins, np.nan)
    ratio[valid] = c_vh[valid] / c_hv[valid]
    return ratio, valid


def compute_lambda(pack: SixPack, count_floor: float = DEFAULT_COUNT_FLOOR) -> LambdaProfile:
    """Interference angle Lambda per bin from the six count ratios.

    cos-quadrature:  c = (B+1)/(-2 sqrt(B)) * (C_DD - C_DA)/(C_DD + C_DA)
    sin-quadrature:  s = (B+1)/(+2 sqrt(B)) * (C_DR - C_DL)/(C_DR + C_DL)

    each clamped to [-1, 1], then Lambda = atan2(s, c).  The per-bin
    standard error is propagated from Poisson statistics of the two
    difference ratios (the common B factor cancels inside atan2); counts
    are regularized by +1/2 so empty bins keep a finite error.
    """
    ratio, valid = compute_B(pack, count_floor)
    dd, da = pack.c_dd.values, pack.c_da.values
    dr, dl = pack.c_dr.values, pack.c_dl.values
    sum_c = dd + da
    sum_s = dr + dl
    valid = valid & (sum_c > 0) & (sum_s > 0)

    n = pack.grid.n_bins
    lam = np.full(n, np.nan)
    stderr = np.full(n, np.inf)
    weight = pack.total_counts().astype(float)

    v = valid
    with np.errstate(invalid="ignore", divide="ignore"):
        r_c = (dd[v] - da[v]) / sum_c[v]
        r_s = (dr[v] - dl[v]) / sum_s[v]
        g = (ratio[v] + 1.0) / (2.0 * np.sqrt(ratio[v]))
        cos_q = np.clip(-g * r_c, -1.0, 1.0)
        sin_q = np.clip(g * r_s, -1.0, 1.0)
        lam[v] = np.arctan2(sin_q, cos_q)

        var_rc = 4.0 * (dd[v] + 0.5) * (da[v] + 0.5) / sum_c[v] ** 3
        var_rs = 4.0 * (dr[v] + 0.5) * (dl[v] + 0.5) / sum_s[v] ** 3
        denom = (r_c**2 + r_s**2) ** 2
        var_lam = np.where(
            denom > 0, (r_c**2 * var_rs + r_s**2 * var_rc) / denom, np.inf
        )
        stderr[v] = np.sqrt(var_lam)

    valid = valid & np.isfinite(stderr)
    return LambdaProfile(
        grid=pack.grid,
        delay_ns=pack.delay_ns,
        lam=lam,
        weight=weight,
        stderr=stderr,
        valid=valid,
    )


@dataclass(frozen=True)
class Lambda0Estimate:
    value: float
    stderr: float
    n_pairs: int


def _symmetric_pairs(profile: LambdaProfile, t_a_ns: float | None):
    """Indices (k, mirror(k)) of mutually valid bins with |tau| in (T, t_a]."""
    grid = profile.grid
    centers = grid.centers
    pos = np.nonzero((centers > profile.delay_ns) & profile.valid)[0]
    pairs = []
    for k in pos:
        if t_a_ns is not None and centers[k] > t_a_ns:
            continue
        m = grid.mirror_index(k)
        if profile.valid[m]:
            pairs.append((int(k), int(m)))
    return pairs


def estimate_lambda0(profile: LambdaProfile, t_a_ns: float | None = None) -> Lambda0Estimate:
    """Residual constant offset of the optics from the symmetric average.

    Xi is antisymmetric in tau while the residual offset is constant, so
    for every mirror pair Lambda(tau) + Lambda(-tau) = 2*Lambda0 modulo
    2*pi.  The wrapped pair sums determine Lambda0 modulo pi (a half-angle
    ambiguity); the branch is chosen by weighted alignment with the raw
    angles, which is reliable whenever most of the weight sits where |Xi|
    stays away from pi/2 -- true of the fine-delay profile.  All averaging
    is circular, so offsets near the branch cut survive intact.
    """
    pairs = _symmetric_pairs(profile, t_a_ns)
    if len(pairs) < 3:
        raise TomographyError(
            f"estimate_lambda0: only {len(pairs)} valid symmetric pairs "
            f"(need at least 3)"
        )
    k_idx = np.array([p[0] for p in pairs])
    m_idx = np.array([p[1] for p in pairs])
    pair_sum = profile.lam[k_idx] + profile.lam[m_idx]
    var_pair = profile.stderr[k_idx] ** 2 + profile.stderr[m_idx] ** 2
    w = 1.0 / np.maximum(var_pair, 1e-300)

    double_angle, _ = circular_mean(pair_sum, weights=w)
    alpha = 0.5 * double_angle
    candidates = (wrap_angle(alpha), wrap_angle(alpha + np.pi))

    # branch pick: alignment of the raw angles with each candidate
    w_bin = 1.0 / np.maximum(profile.stderr[np.concatenate([k_idx, m_idx])] ** 2, 1e-300)
    lam_all = profile.lam[np.concatenate([k_idx, m_idx])]
    scores = [np.sum(w_bin * np.cos(lam_all - cand)) for cand in candidates]
    value = candidates[int(np.argmax(scores))]

    # propagated SE of the weighted mean of the half pair-sums, plus an
    # empirical term from the residual scatter
    se_prop = 1.0 / (2.0 * np.sqrt(np.sum(w)))
    residuals = 0.5 * wrap_angle(pair_sum - 2.0 * value)
    se_emp = np.sqrt(np.sum(w**2 * residuals**2)) / np.sum(w)
    return Lambda0Estimate(value=float(value), stderr=float(max(se_prop, se_emp)), n_pairs=len(pairs))


def compute_xi(profile: LambdaProfile, lambda0: float) -> XiProfile:
    """Combined phase difference Xi from the angle profile.

    Xi = -wrap(Lambda - Lambda0) (see PHASE_INCREMENT_SIGN); bins with
    |tau| <= T are masked because both detection orderings contribute
    there and the angle measures a different phase combination.
    """
    centers = profile.grid.centers
    outside = np.abs(centers) > profile.delay_ns
    valid = profile.valid & outside
    xi = np.full(profile.grid.n_bins, np.nan)
    xi[valid] = wrap_angle(PHASE_INCREMENT_SIGN * wrap_angle(profile.lam[valid] - lambda0))
    return XiProfile(
        grid=profile.grid,
        delay_ns=profile.delay_ns,
        xi=xi,
        weight=profile.weight,
        stderr=profile.stderr,
        valid=valid,
    )


@dataclass(frozen=True)
class DeltaEstimate:
    """Wing-median step of Xi across tau=0 and the implied frequency difference."""

    jump: float          # wrapped step (negative wing minus positive wing), rad
    delta: float         # jump / (2T), rad/s
    delay_ns: float
    n_pos: int
    n_neg: int


def estimate_delta(xi: XiProfile, window_bins: int = 24) -> DeltaEstimate:
    """Frequency difference from the Xi step across the masked region.

    Takes wrap-safe medians of Xi over the `window_bins` valid bins nearest
    the mask edge on each wing; the wrapped difference (negative wing minus
    positive wing) equals 2*delta*T for a flat-phase waveform.  The result
    is only known modulo pi/T; combine two delays with `resolve_delta` to
    pick the branch.
    """
    centers = xi.grid.centers
    pos = np.nonzero(xi.valid & (centers > xi.delay_ns))[0]
    neg = np.nonzero(xi.valid & (centers < -xi.delay_ns))[0]
    if pos.size == 0 or neg.size == 0:
        raise TomographyError("estimate_delta: empty wing window")
    pos = pos[np.argsort(centers[pos])][:window_bins]
    neg = neg[np.argsort(-centers[neg])][:window_bins]
    med_pos = wrapped_median(xi.xi[pos])
    med_neg = wrapped_median(xi.xi[neg])
    jump = float(wrap_angle(med_neg - med_pos))
    delta = jump / (2.0 * xi.delay_ns * NS_TO_S)
    return DeltaEstimate(
        jump=jump, delta=delta, delay_ns=xi.delay_ns, n_pos=pos.size, n_neg=neg.size
    )


def resolve_delta(fine: DeltaEstimate, coarse: XiProfile, window_bins: int = 24):
    """Branch-resolved coarse-delay step, anchored on the fine-delay estimate.

    The fine-delay step 2*delta*T_s is assumed unwrapped (|delta| below
    pi/(2*T_s)), so it predicts where the coarse-wing Xi values must sit:
    -delta*T_l on the positive wing, +delta*T_l on the negative one, both
    modulo the pi jumps produced by amplitude nodes inside the window.
    Wing bins are kept only when their wrapped residual against the
    prediction stays below pi/2 (this drops node-straddling bins), and the
    medians of the surviving residuals give the unwrapped coarse step

        step = med_neg - med_pos  ~  2*delta*T_l  (branch already chosen)

    Returns (delta, step) with delta = step/(2*T_l): the long lever arm
    sets the precision, the short one the branch.
    """
    grid = coarse.grid
    centers = grid.centers
    t_l = coarse.delay_ns
    results = []
    for sign, wing in ((-1, centers > t_l), (+1, centers < -t_l)):
        idx = np.nonzero(coarse.valid & wing)[0]
        if idx.size == 0:
            raise TomographyError("resolve_delta: empty coarse wing")
        order = np.argsort(centers[idx]) if sign < 0 else np.argsort(-centers[idx])
        idx = idx[order][:window_bins]
        base = sign * fine.delta * t_l * NS_TO_S
        residuals = wrap_angle(coarse.xi[idx] - base)
        kept = residuals[np.abs(residuals) <= np.pi / 2]
        if kept.size == 0:
            kept = residuals
        results.append(base + np.median(kept))
    med_pos, med_neg = results
    step = float(med_neg - med_pos)
    return step / (2.0 * t_l * NS_TO_S), step


def detect_islands(
    hist: CoincidenceHistogram, threshold: float, background: float = 0.0
) -> list[tuple[int, int]]:
    """Maximal runs of bins at tau>0 with counts >= threshold * peak.

    Returns inclusive (lo, hi) bin-index intervals ordered by tau.
    """
    if not 0 < threshold < 1:
        raise ValueError("threshold must be in (0, 1)")
    signal = np.clip(hist.values - background, 0.0, None)
    positive = hist.grid.centers > 0
    if not np.any(positive) or signal[positive].max() <= 0:
        raise TomographyError("detect_islands: no counts above background at tau > 0")
    peak = signal[positive].max()
    above = positive & (signal >= threshold * peak)
    islands = []
    start = None
    for k in range(hist.grid.n_bins + 1):
        inside = k < hist.grid.n_bins and above[k]
        if inside and start is None:
            start = k
        elif not inside and start is not None:
            islands.append((start, k - 1))
            start = None
    if not islands:
        raise TomographyError("detect_islands: no island found")
    return islands


@dataclass(frozen=True)
class IslandPhase:
    """Fine-delay recursion solution on one island's 2T lattice."""

    island: tuple[int, int]
    tau0_bin: int
    phase: np.ndarray      # full-length, nan off the reached lattice
    reached: np.ndarray    # bool mask of reached bins
    truncated: bool        # hit an invalid Xi bin before the island edge


def recursive_phase(
    xi: XiProfile, tau0_bin: int, delta: float, island: tuple[int, int]
) -> IslandPhase:
    """Accumulate the phase on the lattice tau0 + 2nT inside one island.

    phi(tau0) = 0; each step consumes the Xi bin halfway between lattice
    points and adds delta*T.  Marching stops at the island boundary or at
    the first invalid Xi bin (the island is truncated there, not fatal).
    The fine delay must be an integer number of bins.
    """
    grid = xi.grid
    steps = xi.delay_ns / grid.bin_width
    m = int(round(steps))
    if m < 1 or abs(steps - m) > 1e-9:
        raise TomographyError(
            f"recursive_phase: delay {xi.delay_ns} ns is not an integer multiple "
            f"of the bin width {grid.bin_width} ns"
        )
    lo, hi = island
    if not lo <= tau0_bin <= hi:
        raise TomographyError(
            f"recursive_phase: tau0 bin {tau0_bin} outside island [{lo}, {hi}]"
        )
    delta_t = delta * xi.delay_ns * NS_TO_S
    phase = np.full(grid.n_bins, np.nan)
    reached = np.zeros(grid.n_bins, dtype=bool)
    phase[tau0_bin] = 0.0
    reached[tau0_bin] = True
    truncated = False

    b = tau0_bin
    while b + 2 * m <= hi:
        x = b + m
        if x >= grid.n_bins or not xi.valid[x]:
            truncated = True
            break
        phase[b + 2 * m] = phase[b] + xi.xi[x] + delta_t
        reached[b + 2 * m] = True
        b += 2 * m

    b = tau0_bin
    while b - 2 * m >= lo:
        x = b - m
        if x < 0 or not xi.valid[x]:
            truncated = True
            break
        phase[b - 2 * m] = phase[b] - xi.xi[x] - delta_t
        reached[b - 2 * m] = True
        b -= 2 * m

    return IslandPhase(
        island=island, tau0_bin=tau0_bin, phase=phase, reached=reached, truncated=truncated
    )


def _coarse_step(grid: TimeGrid, anchor_bin: int, t_l_ns: float, direction: int):
    """Bins touched by one coarse recursion step from an anchor bin.

    Returns (xi_bin, landing_bin); either is -1 when it falls off the grid.
    The chain uses containing-bin lookups, mirroring how the forward model
    samples the waveform at a non-lattice delay.
    """
    center = grid.centers[anchor_bin]
    r = grid.bin_index(center + direction * t_l_ns)
    if r < 0:
        return -1, -1
    q = grid.bin_index(grid.centers[r] + direction * t_l_ns)
    return int(r), int(q)


@dataclass(frozen=True)
class StitchResult:
    phase: np.ndarray
    valid: np.ndarray
    offsets: list
    components: list


def stitch_two_step(
    fine: list[IslandPhase],
    xi_coarse: XiProfile,
    delta: float,
    root: int = 0,
    n_anchors: int = 5,
) -> StitchResult:
    """Chain the per-island fine solutions with coarse-delay bridge steps.

    Island `root` keeps its gauge (phi = 0 at its reference bin).  For each
    neighbor, anchors in the already-stitched island are tried in
    descending count weight; every anchor whose coarse step lands on a
    reached bin of the next island yields an offset estimate, and the
    median of up to `n_anchors` of them (re-branched onto one 2*pi sheet,
    since a bridge Xi bin sitting near +-pi can wrap either way) fixes the
    island.  Islands with no usable bridge stay in their own gauge and are
    reported as a new connected component.
    """
    if not fine:
        raise TomographyError("stitch_two_step: no islands")
    n = fine[0].phase.size
    grid = xi_coarse.grid
    t_l = xi_coarse.delay_ns
    delta_t = delta * t_l * NS_TO_S

    phase = np.full(n, np.nan)
    valid = np.zeros(n, dtype=bool)
    offsets: list = [None] * len(fine)
    components = [0] * len(fine)

    phase[fine[root].reached] = fine[root].phase[fine[root].reached]
    valid |= fine[root].reached
    component = 0
    components[root] = component

    def bridge(prev: IslandPhase, nxt: IslandPhase, direction: int):
        anchors = np.nonzero(prev.reached & valid)[0]
        anchors = anchors[np.argsort(-xi_coarse.weight[anchors])]
        candidates = []
        for a in anchors:
            r, q = _coarse_step(grid, int(a), t_l, direction)
            if r < 0 or q < 0 or not xi_coarse.valid[r] or not nxt.reached[q]:
                continue
            target = phase[a] + direction * (xi_coarse.xi[r] + delta_t)
            candidates.append(float(target - nxt.phase[q]))
            if len(candidates) >= n_anchors:
                break
        if not candidates:
            return None
        base = candidates[0]
        rebranched = [base + wrap_angle(c - base) for c in candidates]
        return float(np.median(rebranched))

    for i in range(root + 1, len(fine)):
        offset = bridge(fine[i - 1], fine[i], direction=+1)
        if offset is None:
            component += 1
        else:
            offsets[i] = offset
        components[i] = component
        shift = offset if offset is not None else 0.0
        phase[fine[i].reached] = fine[i].phase[fine[i].reached] + shift
        valid |= fine[i].reached

    component_left = 0
    for i in range(root - 1, -1, -1):
        offset = bridge(fine[i + 1], fine[i], direction=-1)
        if offset is None:
            component_left -= 1
        else:
            offsets[i] = offset
        components[i] = component_left
        shift = offset if offset is not None else 0.0
        phase[fine[i].reached] = fine[i].phase[fine[i].reached] + shift
        valid |= fine[i].reached

    return StitchResult(phase=phase, valid=valid, offsets=offsets, components=components)


def reconstruct_amplitude(c12: CoincidenceHistogram, background: float = 0.0) -> np.ndarray:
    """Amplitude from the direct coincidence histogram, unit-normalized.

    A(tau) = sqrt(max(counts - background, 0)) on tau > 0 bins (causality
    fixes A = 0 elsewhere), then normalized to unit L2 norm; the absolute
    count-law scale cancels in the normalization.
    """
    signal = np.clip(c12.values - background, 0.0, None)
    positive = c12.grid.centers > 0
    amp = np.where(positive, np.sqrt(signal), 0.0)
    total = np.sum(amp**2) * c12.grid.bin_width * NS_TO_S
    if total <= 0:
        raise TomographyError("reconstruct_amplitude: no counts above background")
    return amp / np.sqrt(total)


def _mirror_branch(
    phase: np.ndarray,
    valid: np.ndarray,
    fine: list[IslandPhase],
    xi_fine: XiProfile,
    delta: float,
) -> None:
    """Fill the tau<0 display branch from the negative-wing Xi data.

    Each island chain is mirrored bin-for-bin; the mirrored increments use
    the measured Xi at the mirrored half-lattice bins (equivalent to the
    positive-wing increments through antisymmetry, but statistically
    independent).  In the swapped detection-order convention the mirrored
    branch accumulates an extra -2*delta*T per step relative to the even
    image of phi.
    """
    grid = xi_fine.grid
    if not grid.is_symmetric():
        return
    delta_t = delta * xi_fine.delay_ns * NS_TO_S
    for isl in fine:
        chain = np.nonzero(isl.reached & valid)[0]
        if chain.size == 0:
            continue
        anchor_pos = int(chain[np.argmin(np.abs(chain - isl.tau0_bin))])
        anchor_neg = grid.mirror_index(anchor_pos)
        j0 = int(np.searchsorted(chain, anchor_pos))

        phase[anchor_neg] = phase[anchor_pos]
        valid[anchor_neg] = True
        # march toward larger tau on the positive chain = more negative mirror
        for j in range(j0 + 1, chain.size):
            prev_b, b = int(chain[j - 1]), int(chain[j])
            x = grid.mirror_index((prev_b + b) // 2)
            if x < 0 or not xi_fine.valid[x]:
                break
            mb = grid.mirror_index(b)
            phase[mb] = phase[grid.mirror_index(prev_b)] + (-xi_fine.xi[x] - delta_t)
            valid[mb] = True
        # march toward smaller tau = mirror approaches zero
        for j in range(j0 - 1, -1, -1):
            b, nxt_b = int(chain[j]), int(chain[j + 1])
            x = grid.mirror_index((b + nxt_b) // 2)
            if x < 0 or not xi_fine.valid[x]:
                break
            mb = grid.mirror_index(b)
            phase[mb] = phase[grid.mirror_index(nxt_b)] - (-xi_fine.xi[x] - delta_t)
            valid[mb] = True


@dataclass(frozen=True)
class ReconstructionResult:
    """Recovered waveform, frequency difference and bookkeeping of one run."""

    grid: TimeGrid
    amplitude: np.ndarray
    phase: np.ndarray
    valid: np.ndarray
    delta_hat: float
    lambda0_hat: float
    lambda0_stderr: float
    xi_step_rad: float
    islands: list
    tau0_bin: int
    stitch_offsets: list = field(default_factory=list)
    components: list = field(default_factory=list)


def _stage(name: str):
    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, TomographyError):
                raise TomographyError(f"{name}: {exc}") from exc
            if isinstance(exc, TomographyError) and not str(exc).startswith(name):
                raise TomographyError(f"{name}: {exc}") from exc
            return False

    return _Ctx()


def reconstruct(
    pack_fine: SixPack,
    pack_coarse: SixPack,
    c12: CoincidenceHistogram,
    plan: TomographyPlan,
    background: float = 0.0,
) -> ReconstructionResult:
    """Full reconstruction from the two six-packs and the direct histogram.

    Runs the whole chain and assembles the result; the validity mask is the
    set of bins actually reached by the recursion lattice (fine spacing
    2*T_s within islands, coarse bridges between them, mirrored display
    branch at tau < 0).  Stage failures raise `TomographyError` with the
    stage name.
    """
    grid = c12.grid
    if not (pack_fine.grid.same_lattice(grid) and pack_coarse.grid.same_lattice(grid)):
        raise TomographyError("inputs: six-packs and direct histogram on different grids")
    if abs(pack_fine.delay_ns - plan.t_s_ns) > 1e-9 or abs(pack_coarse.delay_ns - plan.t_l_ns) > 1e-9:
        raise TomographyError("inputs: six-pack delays do not match the plan")
    if not grid.is_symmetric():
        raise TomographyError("inputs: reconstruction requires a grid symmetric about tau=0")

    with _stage("compute_lambda"):
        fine_adj = pack_fine.subtract_background(background)
        coarse_adj = pack_coarse.subtract_background(background)
        lam_fine = compute_lambda(fine_adj, plan.count_floor)
        lam_coarse = compute_lambda(coarse_adj, plan.count_floor)

    with _stage("estimate_lambda0"):
        lam0 = estimate_lambda0(lam_fine, plan.lambda0_window_ns)

    with _stage("compute_xi"):
        xi_fine = compute_xi(lam_fine, lam0.value)
        xi_coarse = compute_xi(lam_coarse, lam0.value)

    with _stage("estimate_delta"):
        est_fine = estimate_delta(xi_fine, plan.delta_window_bins)
        delta_hat, xi_step = resolve_delta(est_fine, xi_coarse, plan.delta_window_bins)

    with _stage("reconstruct_amplitude"):
        amplitude = reconstruct_amplitude(c12, background)

    with _stage("detect_islands"):
        islands = detect_islands(c12, plan.island_threshold, background)

    with _stage("reference"):
        signal = np.clip(c12.values - background, 0.0, None)
        positive = grid.centers > 0
        if plan.reference_tau0_ns == "auto" or plan.reference_tau0_ns is None:
            tau0_bin = int(np.argmax(np.where(positive, signal, -np.inf)))
        else:
            tau0_bin = grid.bin_index(float(plan.reference_tau0_ns))
            if tau0_bin < 0:
                raise TomographyError(f"reference tau0 {plan.reference_tau0_ns} ns off the grid")
        root = next(
            (i for i, (lo, hi) in enumerate(islands) if lo <= tau0_bin <= hi), None
        )
        if root is None:
            raise TomographyError(
                f"reference bin {tau0_bin} lies outside every amplitude island"
            )

    with _stage("recursive_phase"):
        fine_solutions: list[IslandPhase] = [None] * len(islands)
        fine_solutions[root] = recursive_phase(xi_fine, tau0_bin, delta_hat, islands[root])
        for i in range(root + 1, len(islands)):
            fine_solutions[i] = _anchored_island(
                fine_solutions[i - 1], islands[i], xi_fine, xi_coarse, delta_hat, signal, +1
            )
        for i in range(root - 1, -1, -1):
            fine_solutions[i] = _anchored_island(
                fine_solutions[i + 1], islands[i], xi_fine, xi_coarse, delta_hat, signal, -1
            )

    with _stage("stitch_two_step"):
        stitched = stitch_two_step(
            fine_solutions, xi_coarse, delta_hat, root=root, n_anchors=plan.stitch_anchors
        )
        phase = stitched.phase.copy()
        valid = stitched.valid.copy()

    with _stage("mirror_branch"):
        _mirror_branch(phase, valid, fine_solutions, xi_fine, delta_hat)

    return ReconstructionResult(
        grid=grid,
        amplitude=amplitude,
        phase=phase,
        valid=valid,
        delta_hat=delta_hat,
        lambda0_hat=lam0.value,
        lambda0_stderr=lam0.stderr,
        xi_step_rad=xi_step,
        islands=islands,
        tau0_bin=tau0_bin,
        stitch_offsets=stitched.offsets,
        components=stitched.components,
    )


def _anchored_island(
    neighbor: IslandPhase,
    island: tuple[int, int],
    xi_fine: XiProfile,
    xi_coarse: XiProfile,
    delta: float,
    signal: np.ndarray,
    direction: int,
) -> IslandPhase:
    """Fine solution for an island, anchored where the coarse bridge lands.

    Anchoring the new island's recursion at the landing bin guarantees the
    bridge connects lattice points of both islands (the fine lattice only
    covers every other bin, so an arbitrary reference could be unreachable
    from the neighbor).  Falls back to the island's count peak when no
    bridge lands inside.
    """
    grid = xi_fine.grid
    lo, hi = island
    anchors = np.nonzero(neighbor.reached)[0]
    anchors = anchors[np.argsort(-xi_coarse.weight[anchors])]
    for a in anchors:
        r, q = _coarse_step(grid, int(a), xi_coarse.delay_ns, direction)
        if r >= 0 and q >= 0 and xi_coarse.valid[r] and lo <= q <= hi:
            return recursive_phase(xi_fine, q, delta, island)
    peak = lo + int(np.argmax(signal[lo : hi + 1]))
    return recursive_phase(xi_fine, peak, delta, island)


def write_result_csv(result: ReconstructionResult, path) -> None:
    """Result CSV: `tau_ns,amplitude,phase_rad,valid` (phase nan when invalid)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("tau_ns,amplitude,phase_rad,valid\n")
        for k, tau in enumerate(result.grid.centers):
            phase = result.phase[k] if result.valid[k] else float("nan")
            fh.write(
                f"{tau:.12g},{result.amplitude[k]:.12g},{phase:.12g},"
                f"{1 if result.valid[k] else 0}\n"
            )


def read_result_csv(path):
    """Read back a result CSV; returns (grid, amplitude, phase, valid)."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    tau = data[:, 0]
    width = tau[1] - tau[0]
    grid = TimeGrid(tau_min=float(tau[0] - width / 2), bin_width=float(width), n_bins=tau.size)
    return grid, data[:, 1], data[:, 2], data[:, 3].astype(bool)


def result_summary(
    result: ReconstructionResult,
    rmse_vs_truth: float | None = None,
    fidelity: float | None = None,
) -> dict:
    summary = {
        "delta_hat_rad_per_s": result.delta_hat,
        "lambda0_hat_rad": result.lambda0_hat,
        "lambda0_stderr_rad": result.lambda0_stderr,
        "xi_step_rad": result.xi_step_rad,
        "islands": [[int(lo), int(hi)] for lo, hi in result.islands],
        "tau0_bin": int(result.tau0_bin),
        "n_valid_bins": int(np.sum(result.valid)),
    }
    if rmse_vs_truth is not None:
        summary["rmse_vs_truth"] = rmse_vs_truth
    if fidelity is not None:
        summary["fidelity"] = fidelity
    return summary


def write_result_json(summary: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
