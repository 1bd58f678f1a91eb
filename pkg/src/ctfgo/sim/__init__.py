"""Synthetic scenarios: ground truth, constellation and measurement streams."""

from .constellation import GPS_ORBIT_RADIUS, Constellation, make_constellation, visible_constellation, walker_constellation
from .scenario import (
    Degradation,
    Scenario,
    ScenarioError,
    bundled_scenario_path,
    load_scenario,
    scenario_from_dict,
    to_dict,
)
from .sensors import (
    ClockTruth,
    Streams,
    antenna_state,
    cn0_lambda,
    schedule,
    synth_clock,
    synth_gnss_epoch,
    synth_imu,
    synth_odometry,
    synth_pvt,
    synth_speed,
    synthesize,
)
from .trajectory import SegmentTrajectory, SplineTrajectory, TwistSegment, level_attitude, screw_increment
