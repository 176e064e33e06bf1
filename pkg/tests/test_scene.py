import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from specklepose.errors import ConfigError
from specklepose.optics import LaserSpec, OpticalParams
from specklepose.scene import (
    SweepSpec,
    derive_seed,
    grid_values,
    make_schedule,
    simulate_dataset,
    split_counts,
    split_dataset,
)

# coarse pitch keeps 0.2 m inside the unaliased range of a 128 grid
TINY_OPTICS = OpticalParams(grid_n=128, pitch_m=35e-6, sensor_w_px=32, sensor_h_px=32)
DESK_SPEC = SweepSpec((0.0, 40.0, 5.0), (0.0, 90.0, 15.0), (0.20, 0.20, 0.0))


def test_static_schedule_repeats_each_pose():
    s = make_schedule(SweepSpec((0.0, 40.0, 10.0), (0.0, 0.0, 0.0), (0.2, 0.2, 0.0)))
    assert len(s) == 25
    for g in range(5):
        assert len(set(s[5 * g : 5 * g + 5])) == 1
    assert [s[5 * g].theta_y_deg for g in range(5)] == [0, 10, 20, 30, 40]


def test_per_frame_increment():
    spec = SweepSpec((10.0, 10.0, 0.0), (0.0, 90.0, 45.0), (0.2, 0.2, 0.0), rpm=(6.0,))
    assert spec.step_deg(6.0) == pytest.approx(1.2)
    s = make_schedule(spec)
    for g in range(len(s) // 5):
        z = [p.theta_z_deg for p in s[5 * g : 5 * g + 5]]
        assert np.allclose(np.diff(z), 1.2, atol=1e-12)
        assert 0 <= min(z) and max(z) <= 90


@settings(max_examples=30, deadline=None)
@given(rpm=st.floats(0.5, 10.0), fps=st.sampled_from([15.0, 30.0, 60.0]), axis=st.sampled_from(["y", "z"]))
def test_motion_consistency(rpm, fps, axis):
    spec = SweepSpec((0.0, 40.0, 20.0), (0.0, 90.0, 45.0), (0.2, 0.2, 0.0), rpm=(rpm,), fps=fps, motion_axis=axis)
    s = make_schedule(spec)
    for g in range(len(s) // 5):
        stack = s[5 * g : 5 * g + 5]
        v = [p.theta_y_deg if axis == "y" else p.theta_z_deg for p in stack]
        assert np.allclose(np.diff(v), rpm * 6 / fps, atol=1e-9)
        assert all(p.in_range() for p in stack)


def test_paper_sweep_size():
    spec = SweepSpec((0.0, 40.0, 1.0), (0.0, 90.0, 1.0), (0.16, 0.28, 0.04))
    assert len(make_schedule(spec)) == 41 * 91 * 4 * 5


def test_separate_axis_sweeps():
    spec = SweepSpec((0.0, 40.0, 10.0), (0.0, 90.0, 30.0), (0.2, 0.2, 0.0), factorial=False)
    assert len(make_schedule(spec)) == (5 + 3) * 5


def test_grid_values():
    assert np.allclose(grid_values((0.16, 0.28, 0.04)), [0.16, 0.20, 0.24, 0.28])
    assert np.allclose(grid_values((0.2, 0.2, None)), [0.2])
    with pytest.raises(ConfigError):
        grid_values((1.0, 0.0, 0.5))


def test_sweep_validation():
    with pytest.raises(ConfigError):
        SweepSpec(frames_per_pose=4)
    with pytest.raises(ConfigError):
        SweepSpec(fps=0)
    with pytest.raises(ConfigError):
        SweepSpec(theta_y_range_deg=(0.0, 50.0, 5.0))
    with pytest.raises(ConfigError):
        SweepSpec(rpm=(-1.0,))


def test_seed_splitting():
    a = derive_seed(7, 1, 3)
    assert a == derive_seed(7, 1, 3)
    assert len({derive_seed(7, 1, k) for k in range(100)}) == 100
    assert derive_seed(7, 0, 0) != derive_seed(8, 0, 0)
    assert 0 <= a < 2**64


@pytest.fixture(scope="module")
def tiny_dataset():
    return simulate_dataset(DESK_SPEC, TINY_OPTICS, LaserSpec(), 42)


def test_desk_dataset_size_and_labels(tiny_dataset):
    seq = tiny_dataset
    assert len(seq) == 9 * 7 * 5 == 315
    assert len(seq.group_ids()) == 63
    assert [f.pose for f in seq.frames] == make_schedule(DESK_SPEC) == seq.schedule
    assert [f.frame_index for f in seq.frames] == list(range(315))


def test_dataset_bitwise_reproducible(tiny_dataset):
    again = simulate_dataset(DESK_SPEC, TINY_OPTICS, LaserSpec(), 42)
    assert all(a.pixels.tobytes() == b.pixels.tobytes() for a, b in zip(tiny_dataset.frames, again.frames))
    other = simulate_dataset(DESK_SPEC, TINY_OPTICS, LaserSpec(), 43)
    assert other.frames[0].pixels.tobytes() != tiny_dataset.frames[0].pixels.tobytes()


def test_split_counts():
    assert split_counts(63, (0.8, 0.1, 0.1)) == [50, 6, 7]
    assert split_counts(10, (1.0, 0.0, 0.0)) == [10, 0, 0]
    with pytest.raises(ConfigError):
        split_counts(10, (0.5, 0.2, 0.2))


def test_split_partition(tiny_dataset):
    tr, va, te = split_dataset(tiny_dataset, (0.8, 0.1, 0.1), seed=3)
    sets = [set(p.group_ids()) for p in (tr, va, te)]
    assert [len(s) for s in sets] == [50, 6, 7]
    assert not (sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2])
    assert set.union(*sets) == set(tiny_dataset.group_ids())
    # whole groups stay together
    assert all(len(p.group(g)) == 5 for p in (tr, va, te) for g in p.group_ids())


def test_split_deterministic_and_stratified(tiny_dataset):
    a = split_dataset(tiny_dataset, seed=1)
    b = split_dataset(tiny_dataset, seed=1)
    assert [p.group_ids() for p in a] == [p.group_ids() for p in b]
    test_y = sorted({f.pose.theta_y_deg for f in a[2].frames})
    # seven test groups spread over the theta_y range
    assert test_y[0] <= 10 and test_y[-1] >= 30


def test_split_all_train(tiny_dataset):
    tr, va, te = split_dataset(tiny_dataset, (1.0, 0.0, 0.0))
    assert len(tr) == len(tiny_dataset) and len(va) == len(te) == 0


def test_split_needs_enough_groups(tiny_dataset):
    with pytest.raises(ConfigError):
        split_dataset(tiny_dataset.subset([0, 1]), (0.8, 0.1, 0.1))
