"""Temporal tomography of narrowband photon-pair waveforms.

A numpy toolkit that forward-models the six-projection two-photon
interference measurement of a photon-pair source and inverts it to
recover the complex joint temporal waveform (amplitude and phase), the
photon frequency difference, and nonclassicality metrics.

Layout:

* `waveform`       -- time grid, complex envelope type, waveform families
* `interferometer` -- forward model, count law, Poisson sampling, events
* `tomography`     -- angle extraction, phase recursion, island stitching
* `metrics`        -- g2 estimators, Cauchy-Schwarz, fidelity scores
* `cli`            -- simulate | reconstruct | metrics | pipeline commands
"""

__version__ = "0.1.0"

from .waveform import (  # noqa: F401
    ComplexEnvelope,
    RabiParams,
    SourceSpec,
    TimeGrid,
    damped_rabi_envelope,
    envelope_at,
    exponential_envelope,
    make_time_grid,
    read_envelope_csv,
    sampled_envelope,
    write_envelope_csv,
)
from .interferometer import (  # noqa: F401
    AcquisitionConfig,
    CoincidenceHistogram,
    EventStreams,
    ProjectorSetting,
    expected_histogram,
    generate_event_streams,
    joint_amplitude,
    sample_histogram,
    source_coincidence,
)
from .tomography import (  # noqa: F401
    ReconstructionResult,
    SixPack,
    TomographyPlan,
    compute_B,
    compute_lambda,
    compute_xi,
    detect_islands,
    estimate_delta,
    estimate_lambda0,
    reconstruct,
    reconstruct_amplitude,
    recursive_phase,
    six_pack_expected,
    six_pack_sampled,
    stitch_two_step,
)
from .metrics import (  # noqa: F401
    auto_g2_zero,
    cauchy_schwarz,
    conditional_g2,
    cross_g2,
    phase_rmse,
    waveform_fidelity,
)
