"""Numerical laboratory for statistical properties of smooth dynamics.

The package is organized bottom-up:

* dynamics: phase spaces, smooth systems, orbit iteration, flow time-one maps
* perturb: compactly supported bump families composed after a base map
* systems: the shipped example systems (torus automorphisms, a pitchfork
  deformation with coexisting saddle indices, the Lorenz time-one map)
* measures: grid partitions, empirical measures, a multiscale weak-* style
  distance, ensemble estimates of physical measures
* tangent: Lyapunov spectra, dominated splitting estimation, cone
  contraction rates, Bowen balls
* pressure: itinerary entropy rates, expansion potentials, Gibbs defect
  reports, separated sets and their pressure sums
* experiments: config-driven drivers writing CSV, JSON, and figures
* cli: the `gibbslab` command
"""

from .dynamics import (EscapeError, FlowSpec, IntegrationError, Orbit,
                       PhaseSpace, SmoothSystem, box, iterate, jacobian_at,
                       low_discrepancy_sequence, orbit_jacobian_product,
                       time_one_map, torus)
from .experiments import (ConfigError, ExperimentConfig, PerturbationConfig,
                          RecurrenceConfig, RecurrenceDiagnostic,
                          StabilityReport, expanding_eigenframe,
                          run_gibbs_audit, run_recurrence_probe,
                          run_stability_sweep, sample_initial_conditions)
from .measures import (EnsembleEscapeError, GridMeasure, GridPartition,
                       MeasureDistanceConfig, MeasureMismatchError,
                       NonFiniteObservableError, PartialMeasureError,
                       PhysicalMeasureEstimate, birkhoff_average,
                       default_distance_config, empirical_measure,
                       physical_measure_estimate, weak_star_distance)
from .perturb import (KINDS, PerturbationFamily, PerturbationRejected,
                      bump_profile, perturb)
from .pressure import (EntropyRateEstimate, GibbsReport, ItinerarySample,
                       PressureEstimationError, SeparatedSet,
                       SingularPotentialError, birkhoff_potential_sum,
                       coevolved_potential_average, entropy_rate_from_sample,
                       expansion_potential, gibbs_defect,
                       greedy_separated_set, itinerary_entropy_rate,
                       pressure_estimate, sample_itineraries,
                       separation_violations, shannon_entropy,
                       write_pressure_curve)
from .systems import (BVSpec, LinearToralSpec, LorenzSpec, SYSTEM_REGISTRY,
                      find_fixed_points, lorenz_origin_eigenvalues,
                      make_anosov_T4, make_bonatti_viana, make_cat_map,
                      make_lorenz, make_system)
from .tangent import (ConeInvarianceWarning, ConeSpec, DegenerateFrameError,
                      DominationReport, LyapunovResult, NoDominationError,
                      TangentSplitting, bowen_ball_contains, cone_contraction,
                      domination_check, estimate_splitting, lyapunov_spectrum,
                      splittings_to_csv)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
