"""spiderlab: spider walks (k interacting walkers under local configuration rules).

Modules
-------
graphs    substrates with rates and finite networks
spider    configuration rules and spider networks
chain     jump chains, resistances, hitting times, simulation
quotient  lumpability, factor chains, exact speeds
classify  drift and resistance diagnostics, distortion scans
cli       command-line front end and presets
"""
from .errors import (AbsorbingStateError, LumpabilityError, NonReversibleError, NotFoundError,
                     NumericalError, ParameterError, ReducibleError, RuleViolationError, SizeError,
                     SolverError, SpiderlabError, UnreachableError)
from .graphs import FiniteNetwork, Substrate, distance, generate, materialize_ball
from .spider import (ConfigRule, FirstLegHeight, MidpointHeight, SpiderNetwork, SpiderWalk,
                     build_spider_network, check_irreducible, config_diameter, global_position,
                     midpoint_height)
from .chain import (SpeedReport, effective_resistance, hitting_times, jump_chain, mc_speed,
                    reversible_measure, simulate)
from .quotient import (DistanceHeightKey, FactorChain, SpanKey, exact_speed, explore_factor_chain,
                       factor_chain, ksk_identity_check, lumpability_check, stationary)
from .classify import (DriftProfile, Verdict, distortion_scan, drift_profile, lamperti_classify,
                       resistance_growth, spider_drift_profile)

__version__ = "0.1.0"
