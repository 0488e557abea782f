"""tubenav: deterministic 2D swarm navigation through narrow virtual tubes.

Navigates robot swarms along corridor-shaped safe regions with a saturated
velocity command combining potential-field safe navigation and kernel
density feedback toward a capacity-proportional target distribution.
"""

from .control import ControllerParams, VelocityCommand, compose_velocity
from .density import (
    DensityView,
    DesiredDensity,
    OccupiedRegion,
    density_error_l2,
    occupied_region,
    relative_error_field,
    silverman_bandwidth,
)
from .engine import SimulationLog, apply_exit_rule, run, step, validate_initial
from .errors import (
    OutsideTubeError,
    SafetyViolation,
    ScenarioError,
    TubeDomainError,
    TubeNavError,
)
from .geometry import (
    ArcSegment,
    CatmullRomSegment,
    CurvilinearCoord,
    GeneratingCurve,
    LineSegment,
    VirtualTube,
    WidthProfile,
    narrow_intervals,
)
from .metrics import amd, audit_condition23, min_boundary_distance, min_pairwise_distance, throughput
from .scenario import Scenario, bundled_scenario_path, load_scenario, scenario_from_dict
from .state import RobotState, SwarmState, make_swarm

__version__ = "0.1.0"
