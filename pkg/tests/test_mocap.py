import math

import numpy as np
import pytest

from mimickit import mocap
from mimickit.demos import DemoFormatError, DemoSet, read_demoset, write_demoset
from mimickit.mocap import (FeatureSpec, MocapParseError, MotionSequence, ee_vectors,
                            extract_features, parse_amc, parse_asf, resample_spline,
                            serialize_amc, serialize_asf, skeleton_fk)

TWO_BONE_ASF = """\
# hand-written two-bone fixture
:version 1.10
:name TESTRIG
:units
  mass 1.0
  length 1.0
  angle deg
:documentation
  fixture used by the parser tests
:root
  order tx ty tz rx ry rz
  axis XYZ
  position 0 0 0
  orientation 0 0 0
:bonedata
  begin
    id 1
    name upper
    direction 0 1 0
    length 2
    axis 0 0 0 XYZ
    dof rx ry rz
    limits (-180.0 180.0)
           (-180.0 180.0)
           (-180.0 180.0)
  end
  begin
    id 2
    name lower
    direction 1 0 0
    length 1.5
    axis 0 0 0 XYZ
    dof rz
    limits (-170.0 170.0)
  end
:hierarchy
  begin
    root upper
    upper lower
  end
"""

THREE_FRAME_AMC = """\
#!test clip
:FULLY-SPECIFIED
:DEGREES
1
root 0 0 0 0 0 0
upper 0 0 0
lower 0
2
root 0 0.1 0 0 0 0
upper 10 0 0
lower 5
3
root 0 0.2 0 0 0 0
upper 20 0 0
lower 10
"""


@pytest.fixture
def skeleton():
    return parse_asf(TWO_BONE_ASF)


def make_sequence(channel_rows, frame_rate=120.0):
    """Single-dof-bone sequence over the two-bone skeleton layout."""
    n = len(channel_rows)
    return MotionSequence(
        bone_order=["root", "upper", "lower"],
        channels={
            "root": np.zeros((n, 6)),
            "upper": np.zeros((n, 3)),
            "lower": np.asarray(channel_rows, dtype=np.float64).reshape(n, 1),
        },
        frame_rate=frame_rate)


class TestParseAsf:
    def test_two_bone_fixture_fields(self, skeleton):
        assert skeleton.bone_names == ["upper", "lower"]
        upper = skeleton.bone("upper")
        assert np.allclose(upper.direction, [0, 1, 0])
        assert upper.length == 2.0
        assert upper.dof == ("rx", "ry", "rz")
        assert upper.limits == ((-180.0, 180.0),) * 3
        lower = skeleton.bone("lower")
        assert np.allclose(lower.direction, [1, 0, 0])
        assert lower.length == 1.5
        assert lower.dof == ("rz",)
        assert skeleton.hierarchy == {"root": ["upper"], "upper": ["lower"]}
        assert skeleton.units["length"] == 1.0
        assert skeleton.root.order == ("tx", "ty", "tz", "rx", "ry", "rz")

    def test_missing_hierarchy_is_an_error(self):
        text = TWO_BONE_ASF[:TWO_BONE_ASF.index(":hierarchy")]
        with pytest.raises(MocapParseError, match="hierarchy"):
            parse_asf(text)

    def test_missing_bonedata_is_an_error(self):
        text = TWO_BONE_ASF.replace(":bonedata", ":mystery")
        with pytest.raises(MocapParseError, match="bonedata"):
            parse_asf(text)

    def test_cyclic_hierarchy_is_an_error(self):
        text = TWO_BONE_ASF.replace("    upper lower\n", "    upper lower\n    lower upper\n")
        with pytest.raises(MocapParseError, match="cycl"):
            parse_asf(text)

    def test_unknown_bone_keyword_warned_and_ignored(self, caplog):
        text = TWO_BONE_ASF.replace("    length 2\n", "    length 2\n    bodymass 3.5\n")
        with caplog.at_level("WARNING", logger="mimickit.mocap"):
            skel = parse_asf(text)
        assert "bodymass" in caplog.text
        assert skel.bone("upper").length == 2.0

    def test_error_carries_line_number(self):
        text = "junk before sections\n" + TWO_BONE_ASF
        with pytest.raises(MocapParseError, match="line 1"):
            parse_asf(text)

    def test_serialize_parse_fixed_point(self, skeleton):
        text1 = serialize_asf(skeleton)
        again = parse_asf(text1)
        assert again == skeleton
        assert serialize_asf(again) == text1


class TestParseAmc:
    def test_three_frame_fixture(self, skeleton):
        seq = parse_amc(THREE_FRAME_AMC, skeleton)
        assert seq.n_frames == 3
        assert seq.duration == 3 / 120.0
        assert np.allclose(seq.channels["lower"][:, 0], [0, 5, 10])
        assert np.allclose(seq.channels["root"][1], [0, 0.1, 0, 0, 0, 0])

    def test_extra_channel_names_bone_and_frame(self, skeleton):
        bad = THREE_FRAME_AMC.replace("lower 5", "lower 5 9")
        with pytest.raises(MocapParseError, match=r"lower.*frame 2"):
            parse_amc(bad, skeleton)

    def test_missing_bone_line_is_an_error(self, skeleton):
        bad = THREE_FRAME_AMC.replace("upper 10 0 0\n", "")
        with pytest.raises(MocapParseError, match="upper"):
            parse_amc(bad, skeleton)

    def test_non_consecutive_frame_numbers_error(self, skeleton):
        bad = THREE_FRAME_AMC.replace("\n3\n", "\n5\n")
        with pytest.raises(MocapParseError, match="consecutively"):
            parse_amc(bad, skeleton)

    def test_frames_must_start_at_one(self, skeleton):
        bad = THREE_FRAME_AMC.replace("\n1\nroot 0 0 0 0 0 0", "\n2\nroot 0 0 0 0 0 0", 1)
        with pytest.raises(MocapParseError):
            parse_amc(bad, skeleton)

    def test_serialize_parse_fixed_point(self, skeleton):
        seq = parse_amc(THREE_FRAME_AMC, skeleton)
        text1 = serialize_amc(seq)
        again = parse_amc(text1, skeleton)
        assert again == seq
        assert serialize_amc(again) == text1


class TestResample:
    def test_constant_channel_stays_constant(self):
        seq = make_sequence([7.5] * 12)
        out = resample_spline(seq, 0.03)
        assert np.allclose(out.channels["lower"], 7.5, atol=1e-12)
        assert out.frame_rate == 1.0 / 0.03

    def test_linear_ramp_reproduced_exactly(self):
        t = np.arange(24) / 120.0
        seq = make_sequence(3.0 + 40.0 * t)
        out = resample_spline(seq, 0.005)
        new_t = np.arange(out.n_frames) * 0.005
        assert np.max(np.abs(out.channels["lower"][:, 0] - (3.0 + 40.0 * new_t))) <= 1e-9

    def test_sine_at_native_rate_down_to_30ms(self):
        t = np.arange(120) / 120.0
        seq = make_sequence(np.degrees(0.0) + np.sin(2 * np.pi * t))  # small values, no wrap
        out = resample_spline(seq, 0.03)
        new_t = np.arange(out.n_frames) * 0.03
        err = np.abs(out.channels["lower"][:, 0] - np.sin(2 * np.pi * new_t))
        assert np.max(err[2:-2]) <= 1e-4

    def test_identity_grid_reproduces_samples(self):
        # Smooth signal (steps well under 180 deg), so unwrapping is a no-op
        # and the knots must be reproduced exactly.
        rng = np.random.default_rng(0)
        values = np.cumsum(rng.uniform(-40, 40, 30))
        seq = make_sequence(values)
        out = resample_spline(seq, 1.0 / 120.0)
        assert out.n_frames == 30
        assert np.max(np.abs(out.channels["lower"][:, 0] - values)) <= 1e-9

    def test_fewer_than_four_frames_rejected(self):
        with pytest.raises(MocapParseError, match="4 frames"):
            resample_spline(make_sequence([0, 1, 2]), 0.03)

    def test_wrapping_channel_unwraps_cleanly(self):
        # 350 -> 358 -> 2 -> 10: naive interpolation would sweep through 180.
        values = [350.0, 354.0, 358.0, 2.0, 6.0, 10.0]
        seq = make_sequence(values, frame_rate=120.0)
        out = resample_spline(seq, 0.002)
        samples = np.mod(out.channels["lower"][:, 0], 360.0)
        assert not np.any((samples > 90.0) & (samples < 270.0))

    def test_translation_channels_not_unwrapped(self, skeleton):
        # root ty walks past 180 units; it must not be treated as an angle.
        n = 8
        seq = MotionSequence(
            bone_order=["root", "upper", "lower"],
            channels={"root": np.column_stack([np.zeros(n), np.linspace(0, 400, n),
                                               np.zeros(n), np.zeros(n), np.zeros(n), np.zeros(n)]),
                      "upper": np.zeros((n, 3)), "lower": np.zeros((n, 1))},
            frame_rate=120.0)
        out = resample_spline(seq, 1.0 / 120.0, skeleton=skeleton)
        assert np.max(np.abs(out.channels["root"][:, 1] - np.linspace(0, 400, n))) <= 1e-9


class TestForwardKinematics:
    def test_zero_pose_chains_direction_times_length(self, skeleton):
        seq = parse_amc(THREE_FRAME_AMC, skeleton)
        pos = skeleton_fk(skeleton, seq.frame(0))
        assert np.allclose(pos["root"], [0, 0, 0])
        assert np.allclose(pos["upper"], [0, 2, 0], atol=1e-12)
        assert np.allclose(pos["lower"], [1.5, 2, 0], atol=1e-12)

    def test_single_bone_quarter_turn_about_z(self):
        asf = TWO_BONE_ASF.replace("direction 0 1 0", "direction 1 0 0")
        skel = parse_asf(asf)
        frame = {"root": np.zeros(6), "upper": np.array([0.0, 0.0, 90.0]), "lower": np.zeros(1)}
        pos = skeleton_fk(skel, frame)
        assert np.allclose(pos["upper"], [0, 2, 0], atol=1e-12)

    def test_zero_pose_reach_is_sum_of_lengths(self):
        bones = "\n".join(
            f"""  begin
    id {i}
    name b{i}
    direction 0 1 0
    length {ln}
    axis 0 0 0 XYZ
    dof rz
    limits (-180.0 180.0)
  end""" for i, ln in enumerate([1.0, 2.0, 3.0], start=1))
        asf = f"""\
:version 1.10
:name CHAIN
:units
  mass 1.0
  length 1.0
  angle deg
:root
  order tx ty tz rx ry rz
  axis XYZ
  position 0 0 0
  orientation 0 0 0
:bonedata
{bones}
:hierarchy
  begin
    root b1
    b1 b2
    b2 b3
  end
"""
        skel = parse_asf(asf)
        frame = {"root": np.zeros(6), "b1": np.zeros(1), "b2": np.zeros(1), "b3": np.zeros(1)}
        pos = skeleton_fk(skel, frame)
        assert math.isclose(np.linalg.norm(pos["b3"]), 6.0, rel_tol=1e-12)

    def test_root_translation_moves_everything(self, skeleton):
        frame = {"root": np.array([1.0, 2.0, 3.0, 0, 0, 0]),
                 "upper": np.zeros(3), "lower": np.zeros(1)}
        pos = skeleton_fk(skeleton, frame)
        assert np.allclose(pos["root"], [1, 2, 3])
        assert np.allclose(pos["upper"], [1, 4, 3], atol=1e-12)

    def test_missing_channels_error(self, skeleton):
        with pytest.raises(MocapParseError, match="lower"):
            skeleton_fk(skeleton, {"root": np.zeros(6), "upper": np.zeros(3)})

    def test_declaration_order_invariance(self):
        # Same tree, bones declared in swapped order: FK must agree.
        swapped = TWO_BONE_ASF.replace(
            TWO_BONE_ASF[TWO_BONE_ASF.index("  begin"):TWO_BONE_ASF.index(":hierarchy")],
            """  begin
    id 2
    name lower
    direction 1 0 0
    length 1.5
    axis 0 0 0 XYZ
    dof rz
    limits (-170.0 170.0)
  end
  begin
    id 1
    name upper
    direction 0 1 0
    length 2
    axis 0 0 0 XYZ
    dof rx ry rz
    limits (-180.0 180.0)
           (-180.0 180.0)
           (-180.0 180.0)
  end
""")
        a, b = parse_asf(TWO_BONE_ASF), parse_asf(swapped)
        frame = {"root": np.zeros(6), "upper": np.array([10.0, 20.0, 30.0]),
                 "lower": np.array([45.0])}
        pa, pb = skeleton_fk(a, frame), skeleton_fk(b, frame)
        for name in ("root", "upper", "lower"):
            assert np.allclose(pa[name], pb[name], atol=1e-12)


class TestExtractFeatures:
    def test_static_pose_has_zero_velocities(self, skeleton):
        seq = make_sequence([15.0] * 6, frame_rate=1.0 / 0.03)
        spec = FeatureSpec(items=(mocap.JOINT_ANGLES, mocap.JOINT_VELOCITIES,
                                  mocap.ROOT_LINEAR_VELOCITY), dt=0.03)
        demos = extract_features(seq, skeleton, spec)
        assert demos.size == 6
        names = demos.feature_names
        vel_cols = [i for i, n in enumerate(names) if n.startswith(("angvel", "rootvel"))]
        assert np.allclose(demos.rows[:, vel_cols], 0.0, atol=1e-12)
        ang_cols = [i for i, n in enumerate(names) if n == "ang:lower:rz"]
        assert np.allclose(demos.rows[:, ang_cols], math.radians(15.0))

    def test_constant_root_velocity_recovered_exactly(self, skeleton):
        n = 8
        dt = 0.03
        seq = MotionSequence(
            bone_order=["root", "upper", "lower"],
            channels={"root": np.column_stack([0.4 * dt * np.arange(n), np.zeros(n),
                                               -0.2 * dt * np.arange(n),
                                               np.zeros(n), np.zeros(n), np.zeros(n)]),
                      "upper": np.zeros((n, 3)), "lower": np.zeros((n, 1))},
            frame_rate=1.0 / dt)
        demos = extract_features(seq, skeleton, FeatureSpec((mocap.ROOT_LINEAR_VELOCITY,), dt))
        assert np.allclose(demos.rows, np.tile([0.4, 0.0, -0.2], (n, 1)), atol=1e-9)

    def test_root_ee_vector_is_zero(self, skeleton):
        seq = make_sequence([0.0] * 4, frame_rate=1.0 / 0.03)
        demos = extract_features(seq, skeleton, FeatureSpec((ee_vectors("root"),), 0.03))
        assert np.allclose(demos.rows, 0.0, atol=1e-15)

    def test_ee_vector_root_relative(self, skeleton):
        n = 4
        seq = MotionSequence(
            bone_order=["root", "upper", "lower"],
            channels={"root": np.column_stack([np.full(n, 5.0), np.zeros(n), np.zeros(n),
                                               np.zeros(n), np.zeros(n), np.zeros(n)]),
                      "upper": np.zeros((n, 3)), "lower": np.zeros((n, 1))},
            frame_rate=1.0 / 0.03)
        demos = extract_features(seq, skeleton, FeatureSpec((ee_vectors("lower"),), 0.03))
        # translation cancels: lower end sits at root + (1.5, 2, 0)
        assert np.allclose(demos.rows, np.tile([1.5, 2.0, 0.0], (n, 1)), atol=1e-12)

    def test_unknown_bone_rejected(self, skeleton):
        seq = make_sequence([0.0] * 4, frame_rate=1.0 / 0.03)
        with pytest.raises(MocapParseError, match="ghost"):
            extract_features(seq, skeleton, FeatureSpec((ee_vectors("ghost"),), 0.03))

    def test_wrong_rate_rejected(self, skeleton):
        seq = make_sequence([0.0] * 4, frame_rate=120.0)
        with pytest.raises(ValueError, match="resample"):
            extract_features(seq, skeleton, FeatureSpec((mocap.JOINT_ANGLES,), 0.03))

    def test_row_count_matches_resampled_frames(self, skeleton):
        t = np.arange(120) / 120.0
        seq = make_sequence(20 * np.sin(2 * np.pi * t))
        out = resample_spline(seq, 0.03, skeleton=skeleton)
        demos = extract_features(out, skeleton, FeatureSpec((mocap.JOINT_ANGLES,), 0.03))
        assert demos.size == out.n_frames
        # duration/dt plus the t=0 row
        assert abs(demos.size - (t[-1] / 0.03 + 1)) <= 1


class TestDemoSetFormat:
    def _demoset(self):
        rng = np.random.default_rng(0)
        return DemoSet(feature_names=["a", "b"], dt=0.03, rows=rng.standard_normal((7, 2)),
                       contexts=np.array([0, 0, 1, 1, 0, 1, 0]), context_k=2, source="test")

    def test_write_read_round_trip(self, tmp_path):
        demos = self._demoset()
        write_demoset(demos, str(tmp_path / "set"))
        assert read_demoset(str(tmp_path / "set")) == demos

    def test_truncated_data_rejected(self, tmp_path):
        demos = self._demoset()
        path = tmp_path / "set"
        write_demoset(demos, str(path))
        data = (path / "data.csv").read_text()
        (path / "data.csv").write_text(data[: len(data) // 2])
        with pytest.raises(DemoFormatError, match="truncated|hash"):
            read_demoset(str(path))

    def test_version_mismatch_rejected(self, tmp_path):
        import json
        demos = self._demoset()
        path = tmp_path / "set"
        write_demoset(demos, str(path))
        meta = json.loads((path / "meta.json").read_text())
        meta["format_version"] = 99
        (path / "meta.json").write_text(json.dumps(meta))
        with pytest.raises(DemoFormatError, match="version"):
            read_demoset(str(path))

    def test_empty_demoset_round_trips(self, tmp_path):
        demos = DemoSet(feature_names=["x", "y"], dt=0.03, rows=np.zeros((0, 2)),
                        contexts=np.zeros(0, dtype=np.int64), context_k=1)
        write_demoset(demos, str(tmp_path / "empty"))
        back = read_demoset(str(tmp_path / "empty"))
        assert back.size == 0 and back.feature_names == ["x", "y"]

    def test_layout_descriptor_round_trips(self, tmp_path, skeleton):
        seq = make_sequence([1.0, 2.0, 3.0, 4.0], frame_rate=1.0 / 0.03)
        spec = FeatureSpec((mocap.JOINT_ANGLES, ee_vectors("lower")), 0.03)
        demos = extract_features(seq, skeleton, spec)
        write_demoset(demos, str(tmp_path / "m"))
        back = read_demoset(str(tmp_path / "m"))
        assert back.feature_names == demos.feature_names
        assert back.dt == 0.03

    def test_missing_directory_rejected(self, tmp_path):
        with pytest.raises(DemoFormatError):
            read_demoset(str(tmp_path / "nope"))
