"""Differentiated bandwidth allocation for adaptive video flows.

Inter-class alpha-fair allocation, z-score sub-class splitting, EWMA flow
statistics, a per-epoch controller, and a fluid bottleneck simulator with a
DASH client population to exercise them.
"""
from .controller import (ControllerConfig, EnforcementPlan, MeterGroup, control_epoch,
                         null_plan, plan_diff)
from .dash import (AbrConfig, ClientTrace, DashClientState, QoEParams, VideoSpec, abr_select,
                   advance, qoe, spawn_arrivals)
from .exceptions import *  # noqa: F401,F403
from .inter_class import (AlphaFairAllocator, InterClassAllocation, InterClassInput,
                          ServiceClassSpec, allocate_closed_form, allocate_numeric_oracle,
                          per_flow_ratio, verify_kkt)
from .intra_class import (ClassThroughputStats, FlowThroughputSample, IntraClassAllocation,
                          SubClassPartition, ZScorePartitioner, allocate_subclasses,
                          compute_stats, partition)
from .netsim import (FlowPathConfig, LinkConfig, World, counters, equilibrium_shares, kappa_of,
                     step)
from .runner import RunReport, run_scenario, write_report
from .scenario import ScenarioConfig, load_scenario, parse_scenario, shipped_scenarios
from .stats_collector import EstimatorConfig, ThroughputEstimator

__version__ = "0.1.0"
