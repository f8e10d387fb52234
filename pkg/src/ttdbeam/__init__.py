"""Near-field wideband multi-user hybrid beamforming with adaptive TTDs."""

from .assignment import Assignment, CostMatrix, brute_force_assignment, hungarian_max
from .beamformer import (BeamformerSet, ConfigMode, ConstraintResiduals, DelayBank,
                         DigitalBeamformer, EvalReport, PhaseShifterBank, SwitchMatrix,
                         build_analog, count_configurations, cumulative_delays,
                         project_power, spectral_efficiency, user_rate, validate)
from .channel import (ChannelInstance, array_response, element_distance,
                      element_distances, generate_channel, path_loss,
                      subcarrier_frequencies, subcarrier_frequency)
from .objective import LossBreakdown, Parameterization, total_loss
from .optimize import (OptimizerConfig, conventional_baseline, full_digital_baseline,
                       optimize_instance, ttd_infinite_baseline, water_filling)
from .params import (SPEED_OF_LIGHT, ArrayGeometry, Placement, Scenario, SystemParams,
                     sample_scenario)

__all__ = [name for name in dir() if not name.startswith("_")]
