"""Demonstration ingestion, velocity estimation and normalization."""

import json

import numpy as np
import pytest

from stable_ds import data


def make_demo(states, dt=0.1, index=0):
    states = np.asarray(states, dtype=float)
    return data.Demonstration(states, data.estimate_velocities(states, dt), dt, index)


# ---------------------------------------------------------------------------
# velocities


def test_estimate_velocities_linear_is_exact():
    states = np.array([[0.0], [1.0], [2.0]])
    assert np.array_equal(data.estimate_velocities(states, 1.0), [[1.0], [1.0], [1.0]])


def test_estimate_velocities_quadratic():
    states = np.array([[0.0], [1.0], [4.0]])
    assert np.allclose(data.estimate_velocities(states, 1.0), [[1.0], [2.0], [3.0]])


def test_estimate_velocities_two_samples():
    states = np.array([[0.0, 0.0], [0.2, -0.1]])
    v = data.estimate_velocities(states, 0.1)
    assert np.allclose(v, [[2.0, -1.0], [2.0, -1.0]])


def test_estimate_velocities_exact_on_quadratic_interior():
    t = np.arange(20) * 0.05
    states = np.stack([3.0 * t * t - t, 0.5 * t * t + 2.0], axis=1)
    v = data.estimate_velocities(states, 0.05)
    expected = np.stack([6.0 * t - 1.0, t], axis=1)
    assert np.allclose(v[1:-1], expected[1:-1], rtol=1e-10, atol=1e-10)


def test_estimate_velocities_rejects_bad_dt():
    with pytest.raises(ValueError):
        data.estimate_velocities(np.zeros((3, 2)), 0.0)


def test_demonstration_validation():
    with pytest.raises(ValueError):
        data.Demonstration(np.zeros((1, 2)), np.zeros((1, 2)), 0.1, 0)  # K < 2
    with pytest.raises(ValueError):
        data.Demonstration(np.zeros((3, 2)), np.zeros((2, 2)), 0.1, 0)  # shape
    with pytest.raises(ValueError):
        bad = np.zeros((3, 2))
        bad[1, 1] = np.nan
        data.Demonstration(bad, np.zeros((3, 2)), 0.1, 0)
    demo = make_demo([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]], dt=0.5)
    assert demo.duration == pytest.approx(1.0)
    assert demo.state_dim == 2


# ---------------------------------------------------------------------------
# normalization


def test_normalize_maps_target_to_zero_and_box():
    demo = make_demo([[-10.0, 5.0], [-4.0, 2.0], [0.0, 0.0]])
    ds = data.normalize([demo], target=np.array([0.0, 0.0]))
    assert np.array_equal(ds.normalization.normalize_states(ds.target), [0.0, 0.0])
    assert np.array_equal(ds.scale, [10.0, 5.0])
    states = ds.demos[0].states
    assert np.abs(states).max() <= 1.0
    assert np.array_equal(states[-1], [0.0, 0.0])


def test_normalize_default_target_is_mean_final():
    a = make_demo([[0.0, 0.0], [2.0, 0.0]])
    b = make_demo([[0.0, 0.0], [0.0, 4.0]])
    ds = data.normalize([a, b])
    assert np.array_equal(ds.target, [1.0, 2.0])


def test_velocity_scaling_chain_rule():
    norm = data.Normalization(
        scale=np.array([10.0, 10.0]), offset=np.zeros(2), target=np.zeros(2)
    )
    assert np.array_equal(norm.normalize_velocities(np.array([10.0, 0.0])), [1.0, 0.0])
    assert np.array_equal(norm.denormalize_velocities(np.array([1.0, 0.0])), [10.0, 0.0])


def test_normalize_roundtrip_100_points():
    demo = make_demo([[3.0, -2.0], [5.5, 0.5], [4.0, 1.0]])
    norm = data.normalize([demo]).normalization
    rng = np.random.default_rng(0)
    x = rng.uniform(-50.0, 50.0, size=(100, 2))
    assert np.allclose(norm.denormalize_states(norm.normalize_states(x)), x, atol=1e-12)
    v = rng.uniform(-50.0, 50.0, size=(100, 2))
    assert np.allclose(norm.denormalize_velocities(norm.normalize_velocities(v)), v, atol=1e-12)


def test_normalize_zero_extent_dimension_warns():
    demo = make_demo([[0.0, 1.0], [2.0, 1.0], [4.0, 1.0]])
    with pytest.warns(UserWarning, match="zero extent"):
        ds = data.normalize([demo], target=np.array([4.0, 1.0]))
    assert ds.scale[1] == 1.0


def test_normalize_rejects_empty_and_mixed_dims():
    with pytest.raises(ValueError):
        data.normalize([])
    a = make_demo([[0.0, 0.0], [1.0, 1.0]])
    b = make_demo([[0.0], [1.0]])
    with pytest.raises(ValueError):
        data.normalize([a, b])


def test_stacked_concatenates_all_demos(small_dataset):
    states, velocities = small_dataset.stacked()
    total = sum(len(d.states) for d in small_dataset.demos)
    assert states.shape == (total, 2)
    assert velocities.shape == (total, 2)
    assert np.abs(states).max() <= 1.0 + 1e-12


# ---------------------------------------------------------------------------
# CSV


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n")
    return path


def test_csv_with_velocities_passthrough(tmp_path):
    path = write_lines(
        tmp_path / "demo.csv",
        [
            "t,x1,x2,v1,v2",
            "0.0,0.0,0.0,1.0,0.0",
            "0.1,0.1,0.0,1.0,0.0",
            "0.2,0.2,0.0,1.0,0.0",
        ],
    )
    demos = data.load_demonstrations(path)
    assert len(demos) == 1
    assert demos[0].states.shape == (3, 2)
    assert np.array_equal(demos[0].velocities, [[1.0, 0.0]] * 3)
    assert demos[0].dt == pytest.approx(0.1)


def test_csv_without_velocities_estimates(tmp_path):
    path = write_lines(
        tmp_path / "demo.csv",
        ["t,x1,x2", "0.0,0.0,5.0", "0.1,0.1,5.0", "0.2,0.2,5.0"],
    )
    demos = data.load_demonstrations(path)
    assert np.allclose(demos[0].velocities, [[1.0, 0.0]] * 3)


def test_csv_demo_column_groups_and_sorts(tmp_path):
    path = write_lines(
        tmp_path / "demo.csv",
        [
            "demo,t,x1,x2",
            "1,0.0,9.0,9.0",
            "1,0.1,9.5,9.0",
            "0,0.0,0.0,0.0",
            "0,0.1,1.0,0.0",
        ],
    )
    demos = data.load_demonstrations(path)
    assert [d.index for d in demos] == [0, 1]
    assert np.array_equal(demos[0].states[0], [0.0, 0.0])
    assert np.array_equal(demos[1].states[0], [9.0, 9.0])


def test_csv_error_carries_line_number(tmp_path):
    path = write_lines(
        tmp_path / "bad.csv",
        ["t,x1,x2", "0.0,0.0,0.0", "0.1,oops,0.0", "0.2,0.2,0.0"],
    )
    with pytest.raises(data.FormatError) as err:
        data.load_demonstrations(path)
    assert "bad.csv:3" in str(err.value)


def test_csv_ragged_row_rejected(tmp_path):
    path = write_lines(tmp_path / "bad.csv", ["t,x1,x2", "0.0,0.0,0.0", "0.1,0.1"])
    with pytest.raises(data.FormatError) as err:
        data.load_demonstrations(path)
    assert ":3" in str(err.value)


def test_csv_empty_file_rejected(tmp_path):
    path = (tmp_path / "empty.csv")
    path.write_text("")
    with pytest.raises(data.FormatError, match="empty"):
        data.load_demonstrations(path)


def test_csv_bad_header_rejected(tmp_path):
    path = write_lines(tmp_path / "bad.csv", ["a,b,c", "0,0,0"])
    with pytest.raises(data.FormatError):
        data.load_demonstrations(path)


def test_csv_nonuniform_sampling_rejected(tmp_path):
    path = write_lines(
        tmp_path / "bad.csv",
        ["t,x1,x2", "0.0,0.0,0.0", "0.1,0.1,0.0", "0.35,0.2,0.0"],
    )
    with pytest.raises(data.FormatError, match="uniform"):
        data.load_demonstrations(path)


def test_csv_single_row_demo_rejected(tmp_path):
    path = write_lines(tmp_path / "bad.csv", ["t,x1,x2", "0.0,0.0,0.0"])
    with pytest.raises(data.FormatError, match="fewer than two"):
        data.load_demonstrations(path)


def test_missing_file_raises_file_not_found(tmp_path):
    with pytest.raises(FileNotFoundError):
        data.load_demonstrations(tmp_path / "nope.csv")


def test_write_demos_csv_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(4)
    demos = [
        data.Demonstration(
            states=rng.standard_normal((12, 2)) * 40.0,
            velocities=rng.standard_normal((12, 2)) * 15.0,
            dt=0.004,
            index=i,
        )
        for i in range(3)
    ]
    path = data.write_demos_csv(demos, tmp_path / "out.csv")
    loaded = data.load_demonstrations(path)
    assert len(loaded) == 3
    for src, back in zip(demos, loaded):
        assert np.array_equal(back.states, src.states)  # repr() round-trips floats
        assert np.array_equal(back.velocities, src.velocities)
        assert back.dt == pytest.approx(src.dt, rel=1e-12)


# ---------------------------------------------------------------------------
# JSON and directories


def test_json_roundtrip(tmp_path):
    payload = [
        {
            "dt": 0.05,
            "states": [[0.0, 0.0], [1.0, 0.5], [2.0, 1.5]],
            "velocities": [[20.0, 10.0], [20.0, 15.0], [20.0, 20.0]],
        },
        {"dt": 0.05, "states": [[5.0, 5.0], [4.0, 4.0]]},
    ]
    path = tmp_path / "demos.json"
    path.write_text(json.dumps(payload))
    demos = data.load_demonstrations(path)
    assert len(demos) == 2
    assert np.array_equal(demos[0].velocities, payload[0]["velocities"])
    assert np.allclose(demos[1].velocities, [[-20.0, -20.0], [-20.0, -20.0]])


def test_json_missing_dt_rejected(tmp_path):
    path = tmp_path / "demos.json"
    path.write_text(json.dumps([{"states": [[0, 0], [1, 1]]}]))
    with pytest.raises(data.FormatError, match="dt"):
        data.load_demonstrations(path)


def test_json_invalid_syntax_reports_line(tmp_path):
    path = tmp_path / "demos.json"
    path.write_text('[{"dt": 0.1,\n "states": oops}]')
    with pytest.raises(data.FormatError) as err:
        data.load_demonstrations(path)
    assert "demos.json:2" in str(err.value)


def test_directory_loading_sorted_and_reindexed(tmp_path):
    write_lines(tmp_path / "b.csv", ["t,x1,x2", "0.0,1.0,1.0", "0.1,2.0,2.0"])
    write_lines(tmp_path / "a.csv", ["t,x1,x2", "0.0,0.0,0.0", "0.1,1.0,1.0"])
    demos = data.load_demonstrations(tmp_path)
    assert [d.index for d in demos] == [0, 1]
    assert np.array_equal(demos[0].states[0], [0.0, 0.0])  # a.csv first
    assert np.array_equal(demos[1].states[0], [1.0, 1.0])


def test_directory_without_data_rejected(tmp_path):
    (tmp_path / "readme.txt").write_text("nothing here")
    with pytest.raises(data.FormatError):
        data.load_demonstrations(tmp_path)


def test_directory_ignores_manifest_sidecar(tmp_path):
    write_lines(tmp_path / "demo_00.csv", ["t,x1,x2", "0.0,1.0,1.0", "0.1,2.0,2.0"])
    (tmp_path / "manifest.json").write_text('{"shape": "Angle", "demo_count": 1}\n')
    demos = data.load_demonstrations(tmp_path)
    assert len(demos) == 1


def test_unknown_format_rejected(tmp_path):
    path = tmp_path / "demo.xml"
    path.write_text("<xml/>")
    with pytest.raises(data.FormatError, match="unsupported format"):
        data.load_demonstrations(path)
