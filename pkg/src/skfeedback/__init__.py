"""Power-adaptive Schalkwijk-Kailath feedback scheme for additive channels
with individual noise sequences: session simulation, closed-form bounds,
an exact enumeration oracle and a Monte Carlo harness."""

from .analysis import (BoundsReport, DesignError, ExactExpectation, bounds_report, choose_alpha,
                       exact_expectation, mse_bound, pe_bound, power_bound, power_profile)
from .harness import ExperimentConfig, TrialStats, run_experiment, run_sweep
from .noise import (CoherentCheat, EndImpulse, FixedSequence, GaussianIID, NoisePolicy, PowerTracker,
                    ZeroNoise, apply_channel, make_policy)
from .scheme import (SchemeParams, Transcript, decode, message_to_theta, receive_step, run_batch,
                     run_session, transmit_step, transmitter_update)

__version__ = "0.1.0"
