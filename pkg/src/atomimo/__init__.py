"""Multi-user detection for atomic (Rydberg-sensor) MIMO receivers.

The receiver observes only per-element field magnitudes, so symbol
detection is a biased phase-retrieval problem.  This package provides
the forward model and Rician likelihood, spectral initialization, the
alternating GS detector and its EM refinement, genie/exhaustive
baselines, the Fisher-information lower bound, and a reproducible Monte
Carlo sweep harness with a CLI.
"""

from .bessel import (BesselRatioTable, LogBesselI0Table, bessel_i0_scaled,
                     bessel_i1_scaled, bessel_ratio, log_bessel_i0)
from .crlb import FisherMatrix, beta, beta_batch, fisher, normalized_crlb, score
from .detectors import (DetectionResult, DetectorConfig, SpectralInit,
                        biased_gs, em_gs, exhaustive_search, spectral_init,
                        zf_known_phase)
from .exceptions import ConfigError, NumericalError, SingularMatrixError
from .harness import (CSV_COLUMNS, DETECTOR_NAMES, SweepRow, SweepSpec,
                      ber_low_confidence, rows_to_csv, run_sweep, run_trial,
                      write_csv)
from .model import (Constellation, augmented_channel, demap, forward,
                    ls_objective, make_constellation, ml_objective,
                    rician_logpdf)
from .scenario import (PhysicalConstants, Scenario, ScenarioConfig,
                       empirical_snr, generate, load_instance,
                       physical_snr_closed_form, save_instance, substream)

__version__ = "0.1.0"

__all__ = [
    "BesselRatioTable", "LogBesselI0Table", "bessel_i0_scaled",
    "bessel_i1_scaled", "bessel_ratio", "log_bessel_i0",
    "FisherMatrix", "beta", "beta_batch", "fisher", "normalized_crlb", "score",
    "DetectionResult", "DetectorConfig", "SpectralInit", "biased_gs", "em_gs",
    "exhaustive_search", "spectral_init", "zf_known_phase",
    "ConfigError", "NumericalError", "SingularMatrixError",
    "CSV_COLUMNS", "DETECTOR_NAMES", "SweepRow", "SweepSpec",
    "ber_low_confidence", "rows_to_csv", "run_sweep", "run_trial", "write_csv",
    "Constellation", "augmented_channel", "demap", "forward", "ls_objective",
    "make_constellation", "ml_objective", "rician_logpdf",
    "PhysicalConstants", "Scenario", "ScenarioConfig", "empirical_snr",
    "generate", "load_instance", "physical_snr_closed_form", "save_instance",
    "substream",
]
