"""Zero-noise limit simulation lab for jump-diffusion SDEs."""

__version__ = "0.1.0"

from .core import (ITO, STRATONOVICH, JumpCatalogue, ModelSpec, NoiseRecord, PathSample,
                   additive_jumps, constant_diffusion, stratonovich_to_ito)
from .dynamics import (CandidateSet, birkhoff_candidates, classify_equilibrium,
                       find_equilibria, omega_limit_sample)
from .errors import *  # noqa: F401,F403
from .generator import (LyapunovSpec, generator_apply, hopfield_condition, lyapunov_scan,
                        polynomial_growth_check, quadratic_lyapunov)
from .integrate import (DelayModel, EnsembleJob, SegmentState, SimParams, coupled_pair, em_path,
                        flow, run_ensemble, sfde_path, simulate_batch)
from .measures import (EmpiricalMeasure, Grid, SweepReport, convergence_sweep,
                       occupation_estimate, sliced_w1, support_mass, tightness_scan,
                       w1_distance_1d)
from .models import decomposition_check, parse_field, zoo_build
from .noise import RngStream, derive_stream
from .sensitivity import bel_gradient, fd_gradient, variational_path
