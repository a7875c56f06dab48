import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from scope_kit import sim
from scope_kit.errors import FormatError, GenerationError, InvalidArgument
from scope_kit.motion import Pose2D
from scope_kit.sim import Pedestrian, SensorConfig, TrajectorySpec, WorldModel

QUIET = SensorConfig(noise_sigma=0.0)
CENTER = 540  # beam pointing straight ahead


def test_sensor_defaults():
    cfg = SensorConfig()
    assert cfg.n_beams == 1081
    assert cfg.angle_min == pytest.approx(-3 * math.pi / 4)
    assert cfg.angle_min + CENTER * cfg.angular_resolution == pytest.approx(0.0, abs=1e-12)


def test_raycast_examples():
    empty = sim.raycast(WorldModel(), Pose2D(), QUIET)
    assert np.all(empty.ranges == 30.0) and not empty.hits.any()
    wall = WorldModel((((2.0, -5.0), (2.0, 5.0)),))
    assert sim.raycast(wall, Pose2D(), QUIET).ranges[CENTER] == pytest.approx(2.0, abs=1e-12)
    disc = WorldModel((), (Pedestrian((1.0, 0.0)),))
    assert sim.raycast(disc, Pose2D(), QUIET).ranges[CENTER] == pytest.approx(0.7, abs=1e-12)


def test_raycast_against_hand_geometry():
    # a beam at bearing b hits the wall x = 2 at range 2 / cos(b)
    wall = WorldModel((((2.0, -50.0), (2.0, 50.0)),))
    scan = sim.raycast(wall, Pose2D(), QUIET)
    b = scan.bearings
    front = np.abs(b) < 1.2
    assert np.allclose(scan.ranges[front], 2.0 / np.cos(b[front]), atol=1e-9)


@given(st.randoms(use_true_random=False))
def test_wall_order_does_not_matter(rnd):
    segs = list(sim.static_scene(np.random.default_rng(2)).segments)
    shuffled = list(segs)
    rnd.shuffle(shuffled)
    a = sim.raycast(WorldModel(tuple(segs)), Pose2D(0.5, 0.1, 0.2), QUIET)
    b = sim.raycast(WorldModel(tuple(shuffled)), Pose2D(0.5, 0.1, 0.2), QUIET)
    assert np.array_equal(a.ranges, b.ranges)


def test_step_world_examples():
    still = WorldModel((), (Pedestrian((1.0, 1.0)),))
    assert sim.step_world(still, 0.1) == still
    moving = WorldModel((), (Pedestrian((1.0, 1.0), (1.0, 0.0)),))
    assert sim.step_world(moving, 0.1).pedestrians[0].position == pytest.approx((1.1, 1.0))
    walled = WorldModel((((2.0, -5.0), (2.0, 5.0)),), (Pedestrian((1.65, 0.0), (1.0, 0.0)),))
    after = sim.step_world(walled, 0.1).pedestrians[0]
    assert after.velocity == pytest.approx((-1.0, 0.0))
    bounded = WorldModel((), (Pedestrian((4.6, 0.0), (1.0, 0.5)),), (-5, -5, 5, 5))
    after = sim.step_world(bounded, 0.2).pedestrians[0]
    assert after.velocity == pytest.approx((-1.0, 0.5))
    with pytest.raises(InvalidArgument):
        sim.step_world(still, 0.0)


def test_dataset_examples(tmp_path):
    world = WorldModel((((3.0, -5.0), (3.0, 5.0)),))
    recs = sim.generate_dataset(world, TrajectorySpec(), seed=1, duration=10.0)
    assert len(recs) == 100
    assert recs[1].stamp == pytest.approx(0.1)
    r = np.array([d.scan.ranges[CENTER] for d in recs])
    assert np.abs(r - 3.0).max() < 0.06
    sim.write_dataset(recs, tmp_path / "a.ndjson")
    sim.write_dataset(sim.generate_dataset(world, TrajectorySpec(), seed=1, duration=10.0), tmp_path / "b.ndjson")
    assert (tmp_path / "a.ndjson").read_bytes() == (tmp_path / "b.ndjson").read_bytes()
    back = sim.read_dataset(tmp_path / "a.ndjson")
    assert len(back) == 100 and back[5].scan.ranges[CENTER] == pytest.approx(recs[5].scan.ranges[CENTER], rel=1e-8)


def test_dataset_errors(tmp_path):
    with pytest.raises(GenerationError, match="tick 11"):
        sim.generate_dataset(WorldModel(bounds=(-1, -1, 1, 1)), TrajectorySpec(profile=((5.0, 1.0, 0.0),)),
                             duration=3.0)
    with pytest.raises(InvalidArgument):
        sim.generate_dataset(WorldModel(), TrajectorySpec(), duration=0)
    (tmp_path / "bad").write_text('{"stamp": 1}\n')
    with pytest.raises(FormatError):
        sim.read_dataset(tmp_path / "bad")
    recs = sim.generate_dataset(WorldModel(), TrajectorySpec(), duration=0.2)
    sim.write_dataset(recs[::-1], tmp_path / "rev")
    with pytest.raises(FormatError):
        sim.read_dataset(tmp_path / "rev")


def test_trajectory_follows_profile_and_waypoints():
    recs = sim.generate_dataset(WorldModel(), TrajectorySpec(profile=((1.0, 1.0, 0.0), (1.0, 0.0, 0.5))),
                                duration=2.0)
    assert recs[10].pose.x == pytest.approx(1.0) and recs[-1].pose.theta == pytest.approx(0.45)
    wp = TrajectorySpec(waypoints=((2.0, 0.0), (2.0, 2.0)), speed=1.0, turn_rate=2.0)
    end = sim.generate_dataset(WorldModel(), wp, duration=8.0)[-1].pose
    assert math.hypot(end.x - 2.0, end.y - 2.0) < 0.15


def test_future_truth_is_noise_free():
    world = sim.corridor_scene()
    a = sim.future_truth(world, Pose2D(0.5, 0.0, 0.0))
    assert np.array_equal(a.ranges, sim.future_truth(world, Pose2D(0.5, 0.0, 0.0)).ranges)
    assert a.ranges[CENTER] == pytest.approx(3.2 - 0.3 - 0.5, abs=1e-12)


def test_scenarios_are_seeded():
    a = sim.crowd_scene(5, np.random.default_rng(3))
    b = sim.crowd_scene(5, np.random.default_rng(3))
    assert a == b and len(a.pedestrians) == 5
    assert sim.static_scene(np.random.default_rng(1)) == sim.static_scene(np.random.default_rng(1))
