"""Stochastic NLS simulation and rare-event analysis on periodic grids.

Subpackages by concern: grid (spectral grid, norms, free group), noise
(kernel operators, Wiener increments), integrator (split-step SDE solver,
blow-up detection, batched ensembles), skeleton (controlled deterministic
flow, control energy, Wiener rate), rate (event-constrained energy
minimization), mc (naive and Girsanov importance-sampling estimators), tails
(exponential tail constants and their audit), blowup (blow-up-time tail
experiments), config/cli (strict run configuration and the subcommands).
"""

__version__ = "0.1.0"

from .grid import (Field, Grid, admissible_rate, free_group_apply, gaussian,
                   gradient, hamiltonian, load_field, momentum, norm,
                   plane_wave, save_field, soliton)
from .noise import (KernelOperator, NoiseIncrement, apply, correlation,
                    explicit_kernel, f_phi, gaussian_kernel, hs_norm,
                    rank_r_kernel, sample_increment)
from .integrator import (DrivePlan, SimParams, Trajectory, blowup_time,
                         run_ensemble, simulate, step)
from .events import (H1Below, H1Exceed, TerminalMatch, TubeExit,
                     blowup_before, make_tube_event, survive_beyond)
from .skeleton import (ControlPath, cancel_nonlinearity_control,
                       constant_control, control_energy, load_control,
                       save_control, skeleton_solve, wiener_rate,
                       wiener_rate_of_path)
from .rate import (OptimizerOptions, RateCertificate, minimize_rate,
                   rate_certificate_check)
from .mc import (MCEstimate, estimate_is, estimate_naive, girsanov_log_weight,
                 ldp_curve)
from .tails import (TailConstants, compute_constants, embedding_constant,
                    empirical_tail_check)
from .blowup import (deterministic_blowup_time, nonrare_check, tail_after_T,
                     tail_before_T)
from .config import RunConfig, load_config
from .rng import stream
