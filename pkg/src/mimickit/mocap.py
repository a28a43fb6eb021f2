"""Acclaim ASF/AMC motion-capture ingestion.

Parses skeleton definitions and per-frame joint-angle clips (the text formats
shipped with the CMU database), resamples channels onto a fixed control
timestep with natural cubic splines, runs forward kinematics down the bone
hierarchy, and emits kinematic feature rows in the shared DemoSet format.

Conventions: channel values stay in degrees inside parsed structures (so
parse -> serialize -> parse is a fixed point) and are converted to radians the
moment they enter kinematics or feature extraction. Rotations compose with
the first-declared axis applied first; a bone's ``axis`` triple defines the
local frame C in which its dof rotations act (C R C^-1). Lengths and root
translations are divided by the ASF ``:units length`` scale. The up axis is
y; the root yaw frame is the rotation about y aligned with the root's heading.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .demos import DemoSet, read_demoset, write_demoset  # re-exported API

__all__ = [
    "Bone", "Skeleton", "MotionSequence", "FeatureSpec", "MocapParseError",
    "parse_asf", "serialize_asf", "parse_amc", "serialize_amc",
    "resample_spline", "skeleton_fk", "extract_features",
    "read_demoset", "write_demoset",
]

log = logging.getLogger(__name__)


class MocapParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class Bone:
    name: str
    direction: np.ndarray            # unit 3-vector (as declared, normalized)
    length: float
    axis: np.ndarray                 # local-frame Euler angles, degrees
    axis_order: str                  # e.g. "XYZ"; first letter applied first
    dof: tuple[str, ...]             # ordered subset of (rx, ry, rz)
    bone_id: int | None = None
    limits: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        self.direction = np.asarray(self.direction, dtype=np.float64)
        norm = float(np.linalg.norm(self.direction))
        # Skip renormalizing near-unit vectors so serialization is a fixed point.
        if norm > 0.0 and abs(norm - 1.0) > 1e-12:
            self.direction = self.direction / norm
        if self.length < 0.0:
            raise ValueError(f"bone {self.name}: negative length")

    def __eq__(self, other):
        return (isinstance(other, Bone) and self.name == other.name
                and np.allclose(self.direction, other.direction, atol=1e-12)
                and self.length == other.length
                and np.array_equal(self.axis, other.axis)
                and self.axis_order == other.axis_order and self.dof == other.dof
                and self.bone_id == other.bone_id and self.limits == other.limits)


@dataclass
class Root:
    order: tuple[str, ...] = ("tx", "ty", "tz", "rx", "ry", "rz")
    axis_order: str = "XYZ"
    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    orientation: tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass
class Skeleton:
    bones: list[Bone]
    hierarchy: dict[str, list[str]]          # parent name -> children
    root: Root = field(default_factory=Root)
    units: dict[str, float | str] = field(default_factory=dict)
    name: str = ""
    version: str = ""
    documentation: list[str] = field(default_factory=list)

    def bone(self, name: str) -> Bone:
        for b in self.bones:
            if b.name == name:
                return b
        raise KeyError(name)

    @property
    def bone_names(self) -> list[str]:
        return [b.name for b in self.bones]

    @property
    def length_scale(self) -> float:
        return float(self.units.get("length", 1.0))

    def parent_of(self, name: str) -> str:
        for parent, children in self.hierarchy.items():
            if name in children:
                return parent
        raise KeyError(name)


@dataclass
class MotionSequence:
    bone_order: list[str]                    # 'root' first, then bones with dof
    channels: dict[str, np.ndarray]          # name -> (frames, n_channels), degrees
    frame_rate: float = 120.0
    headers: tuple[str, ...] = (":FULLY-SPECIFIED", ":DEGREES")

    @property
    def n_frames(self) -> int:
        return next(iter(self.channels.values())).shape[0] if self.channels else 0

    @property
    def duration(self) -> float:
        return self.n_frames / self.frame_rate

    def frame(self, i: int) -> dict[str, np.ndarray]:
        return {name: self.channels[name][i] for name in self.bone_order}

    def __eq__(self, other):
        return (isinstance(other, MotionSequence)
                and self.bone_order == other.bone_order
                and self.frame_rate == other.frame_rate
                and self.channels.keys() == other.channels.keys()
                and all(np.array_equal(self.channels[k], other.channels[k])
                        for k in self.channels))


# ---------------------------------------------------------------------------
# ASF parsing
# ---------------------------------------------------------------------------

def _clean_lines(text: str):
    """(line_number, stripped_content) pairs with comments and blanks removed."""
    out = []
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            out.append((i, line))
    return out


_FLOAT = r"[-+0-9.eE]+"


def parse_asf(text: str) -> Skeleton:
    """Parse an Acclaim Skeleton File."""
    lines = _clean_lines(text)
    sections: dict[str, list[tuple[int, str]]] = {}
    current = None
    for no, line in lines:
        if line.startswith(":"):
            key = line.split()[0][1:].lower()
            rest = line[len(key) + 1:].strip()
            sections[key] = [(no, rest)] if rest else []
            current = key
        elif current is not None:
            sections[current].append((no, line))
        else:
            raise MocapParseError(f"content before any section: {line!r}", no)

    for required in ("bonedata", "hierarchy"):
        if required not in sections:
            raise MocapParseError(f"missing required section :{required}")

    units: dict[str, float | str] = {}
    for no, line in sections.get("units", []):
        parts = line.split()
        if len(parts) != 2:
            raise MocapParseError(f"bad units entry {line!r}", no)
        key, value = parts
        try:
            units[key.lower()] = float(value)
        except ValueError:
            units[key.lower()] = value.lower()
    if str(units.get("angle", "deg")) != "deg":
        raise MocapParseError("only degree-angle files are supported")

    root = Root()
    for no, line in sections.get("root", []):
        parts = line.split()
        key = parts[0].lower()
        if key == "order":
            root.order = tuple(p.lower() for p in parts[1:])
        elif key == "axis":
            root.axis_order = parts[1].upper()
        elif key == "position":
            root.position = tuple(float(v) for v in parts[1:4])
        elif key == "orientation":
            root.orientation = tuple(float(v) for v in parts[1:4])
        else:
            log.warning("ignoring unknown :root keyword %r (line %d)", key, no)

    bones = _parse_bonedata(sections["bonedata"])
    hierarchy = _parse_hierarchy(sections["hierarchy"], bones)

    version = " ".join(v for _, v in sections.get("version", [])[:1])
    name = " ".join(v for _, v in sections.get("name", [])[:1])
    documentation = [line for _, line in sections.get("documentation", [])]
    return Skeleton(bones=bones, hierarchy=hierarchy, root=root, units=units,
                    name=name, version=version, documentation=documentation)


def _parse_bonedata(entries) -> list[Bone]:
    bones: list[Bone] = []
    fields: dict | None = None
    start_line = None
    i = 0
    while i < len(entries):
        no, line = entries[i]
        word = line.split()[0].lower()
        if word == "begin":
            if fields is not None:
                raise MocapParseError("nested begin in :bonedata", no)
            fields = {"limits": []}
            start_line = no
        elif word == "end":
            if fields is None:
                raise MocapParseError("end without begin in :bonedata", no)
            if "name" not in fields:
                raise MocapParseError("bone block missing a name", start_line)
            bones.append(Bone(
                name=fields["name"], direction=fields.get("direction", np.zeros(3)),
                length=fields.get("length", 0.0), axis=fields.get("axis", np.zeros(3)),
                axis_order=fields.get("axis_order", "XYZ"),
                dof=tuple(fields.get("dof", ())), bone_id=fields.get("id"),
                limits=tuple(fields["limits"])))
            fields = None
        elif fields is None:
            raise MocapParseError(f"bone data outside begin/end: {line!r}", no)
        elif word == "id":
            fields["id"] = int(line.split()[1])
        elif word == "name":
            fields["name"] = line.split()[1]
        elif word == "direction":
            fields["direction"] = np.array([float(v) for v in line.split()[1:4]])
        elif word == "length":
            fields["length"] = float(line.split()[1])
        elif word == "axis":
            parts = line.split()[1:]
            fields["axis"] = np.array([float(v) for v in parts[:3]])
            if len(parts) > 3:
                fields["axis_order"] = parts[3].upper()
        elif word == "dof":
            dof = tuple(t.lower() for t in line.split()[1:])
            bad = [t for t in dof if t not in ("rx", "ry", "rz")]
            if bad:
                raise MocapParseError(f"unsupported dof tokens {bad}", no)
            fields["dof"] = dof
        elif word == "limits" or line.startswith("("):
            body = line[len("limits"):] if word == "limits" else line
            for lo, hi in re.findall(rf"\(\s*({_FLOAT})\s+({_FLOAT})\s*\)", body):
                fields["limits"].append((float(lo), float(hi)))
        else:
            log.warning("ignoring unknown bonedata keyword %r (line %d)", word, no)
        i += 1
    if fields is not None:
        raise MocapParseError("unterminated bone block", start_line)
    return bones


def _parse_hierarchy(entries, bones) -> dict[str, list[str]]:
    known = {b.name for b in bones} | {"root"}
    hierarchy: dict[str, list[str]] = {}
    inside = False
    for no, line in entries:
        word = line.split()[0].lower()
        if word == "begin":
            inside = True
        elif word == "end":
            inside = False
        elif inside:
            parts = line.split()
            parent, children = parts[0], parts[1:]
            for name in [parent, *children]:
                if name not in known:
                    raise MocapParseError(f"hierarchy references unknown bone {name!r}", no)
            hierarchy.setdefault(parent, []).extend(children)
        else:
            raise MocapParseError("hierarchy content outside begin/end", no)

    # Reject cycles / reparenting: walking from root must visit each bone once.
    seen = set()
    stack = ["root"]
    while stack:
        node = stack.pop()
        if node in seen:
            raise MocapParseError(f"cyclic hierarchy at {node!r}")
        seen.add(node)
        stack.extend(hierarchy.get(node, []))
    missing = {b.name for b in bones} - seen
    if missing:
        raise MocapParseError(f"bones unreachable from root: {sorted(missing)}")
    return hierarchy


def _fmt(value: float) -> str:
    return repr(float(value))


def serialize_asf(skeleton: Skeleton) -> str:
    """Canonical (whitespace-normalized) ASF text; a parse fixed point."""
    out = []
    if skeleton.version:
        out.append(f":version {skeleton.version}")
    if skeleton.name:
        out.append(f":name {skeleton.name}")
    out.append(":units")
    for key, value in skeleton.units.items():
        out.append(f"  {key} {value if isinstance(value, str) else _fmt(value)}")
    if skeleton.documentation:
        out.append(":documentation")
        out.extend(f"  {line}" for line in skeleton.documentation)
    root = skeleton.root
    out.append(":root")
    out.append("  order " + " ".join(root.order))
    out.append(f"  axis {root.axis_order}")
    out.append("  position " + " ".join(_fmt(v) for v in root.position))
    out.append("  orientation " + " ".join(_fmt(v) for v in root.orientation))
    out.append(":bonedata")
    for bone in skeleton.bones:
        out.append("  begin")
        if bone.bone_id is not None:
            out.append(f"    id {bone.bone_id}")
        out.append(f"    name {bone.name}")
        out.append("    direction " + " ".join(_fmt(v) for v in bone.direction))
        out.append(f"    length {_fmt(bone.length)}")
        out.append("    axis " + " ".join(_fmt(v) for v in bone.axis) + f" {bone.axis_order}")
        if bone.dof:
            out.append("    dof " + " ".join(bone.dof))
        if bone.limits:
            pads = [f"({_fmt(lo)} {_fmt(hi)})" for lo, hi in bone.limits]
            out.append(f"    limits {pads[0]}")
            out.extend(f"           {p}" for p in pads[1:])
        out.append("  end")
    out.append(":hierarchy")
    out.append("  begin")
    for parent, children in skeleton.hierarchy.items():
        out.append(f"    {parent} " + " ".join(children))
    out.append("  end")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# AMC parsing
# ---------------------------------------------------------------------------

def parse_amc(text: str, skeleton: Skeleton, frame_rate: float = 120.0) -> MotionSequence:
    """Parse an Acclaim Motion Capture clip against a parsed skeleton.

    Frames must be numbered consecutively from 1; every frame must provide
    exactly the channels declared by the skeleton (root order plus each
    bone's dof).
    """
    expected = {"root": len(skeleton.root.order)}
    for bone in skeleton.bones:
        if bone.dof:
            expected[bone.name] = len(bone.dof)
    order = ["root"] + [b.name for b in skeleton.bones if b.dof]

    frames: list[dict[str, np.ndarray]] = []
    current: dict[str, np.ndarray] | None = None
    frame_no = 0
    headers = []
    for no, line in _clean_lines(text):
        if line.startswith(":"):
            headers.append(line.upper())
            continue
        parts = line.split()
        if len(parts) == 1 and parts[0].lstrip("-").isdigit():
            number = int(parts[0])
            if number != frame_no + 1:
                raise MocapParseError(
                    f"frame numbers must increase consecutively from 1; got {number} "
                    f"after {frame_no}", no)
            if current is not None:
                _check_frame_complete(current, expected, frame_no)
                frames.append(current)
            current = {}
            frame_no = number
            continue
        if current is None:
            raise MocapParseError(f"channel data before any frame number: {line!r}", no)
        name = parts[0]
        if name not in expected:
            raise MocapParseError(f"unknown or channel-free bone {name!r} in frame {frame_no}", no)
        values = np.array([float(v) for v in parts[1:]])
        if values.size != expected[name]:
            raise MocapParseError(
                f"bone {name!r} in frame {frame_no} has {values.size} channels, "
                f"expected {expected[name]}", no)
        if name in current:
            raise MocapParseError(f"bone {name!r} repeated in frame {frame_no}", no)
        current[name] = values
    if current is not None:
        _check_frame_complete(current, expected, frame_no)
        frames.append(current)
    if not frames:
        raise MocapParseError("no frames found")

    channels = {name: np.stack([f[name] for f in frames]) for name in order}
    return MotionSequence(bone_order=order, channels=channels, frame_rate=frame_rate,
                          headers=tuple(headers) or (":FULLY-SPECIFIED", ":DEGREES"))


def _check_frame_complete(frame: dict, expected: dict, frame_no: int):
    missing = sorted(set(expected) - set(frame))
    if missing:
        raise MocapParseError(f"frame {frame_no} is missing channels for {missing}")


def serialize_amc(seq: MotionSequence) -> str:
    """Canonical AMC text; a parse fixed point."""
    out = list(seq.headers)
    for i in range(seq.n_frames):
        out.append(str(i + 1))
        for name in seq.bone_order:
            out.append(name + " " + " ".join(_fmt(v) for v in seq.channels[name][i]))
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

def _angle_channel_flags(seq: MotionSequence, skeleton: Skeleton | None) -> dict[str, np.ndarray]:
    """Which channels are angles (unwrap candidates) vs translations."""
    flags = {}
    for name in seq.bone_order:
        n_ch = seq.channels[name].shape[1]
        if name == "root":
            tokens = skeleton.root.order if skeleton is not None else ("tx", "ty", "tz", "rx", "ry", "rz")
            flags[name] = np.array([t.startswith("r") for t in tokens[:n_ch]])
        else:
            flags[name] = np.ones(n_ch, dtype=bool)
    return flags


def resample_spline(seq: MotionSequence, dt: float,
                    skeleton: Skeleton | None = None) -> MotionSequence:
    """Resample every channel onto the grid {0, dt, 2dt, ...} within the clip.

    Angle channels are unwrapped first (removing jumps larger than 180
    degrees), then fit with a natural cubic spline over the original
    timestamps. Output values stay on the unwrapped branch. Requires at
    least 4 frames.
    """
    if dt <= 0.0:
        raise ValueError("dt must be > 0")
    if seq.n_frames < 4:
        raise MocapParseError(f"resampling needs at least 4 frames, got {seq.n_frames}")
    times = np.arange(seq.n_frames) / seq.frame_rate
    n_new = int(math.floor(times[-1] / dt + 1e-9)) + 1
    new_times = np.arange(n_new) * dt
    flags = _angle_channel_flags(seq, skeleton)
    channels = {}
    for name in seq.bone_order:
        block = seq.channels[name]
        cols = []
        for j in range(block.shape[1]):
            y = block[:, j]
            if flags[name][j]:
                y = np.unwrap(y, period=360.0)
            spline = CubicSpline(times, y, bc_type="natural")
            cols.append(spline(new_times))
        channels[name] = np.stack(cols, axis=1)
    return MotionSequence(bone_order=list(seq.bone_order), channels=channels,
                          frame_rate=1.0 / dt, headers=seq.headers)


# ---------------------------------------------------------------------------
# Forward kinematics
# ---------------------------------------------------------------------------

_AXES = {"x": 0, "y": 1, "z": 2}


def _axis_rot(axis: str, degrees: float) -> np.ndarray:
    a = math.radians(degrees)
    c, s = math.cos(a), math.sin(a)
    if axis == "x":
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=np.float64)
    if axis == "y":
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=np.float64)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.float64)


def _euler(angles_deg, order: str) -> np.ndarray:
    """Compose rotations with the first axis in ``order`` applied first."""
    rot = np.eye(3)
    for axis_letter, angle in zip(order.lower(), angles_deg):
        rot = _axis_rot(axis_letter, angle) @ rot
    return rot


def skeleton_fk(skeleton: Skeleton, frame: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Global 3D position of each bone's distal end (plus 'root').

    Rotations follow the Acclaim convention: a bone's dof rotations act in
    its ``axis`` frame, R_local = C R_dof C^-1, composed down the hierarchy;
    the bone then extends by direction * length / length_scale.
    """
    scale = 1.0 / skeleton.length_scale
    root_ch = frame.get("root")
    if root_ch is None:
        raise MocapParseError("frame is missing root channels")
    trans = np.zeros(3)
    rot_angles = dict(rx=0.0, ry=0.0, rz=0.0)
    rot_order = []
    for token, value in zip(skeleton.root.order, root_ch):
        if token.startswith("t"):
            trans[_AXES[token[1]]] = value * scale
        else:
            rot_angles[token] = value
            rot_order.append(token)
    c_root = _euler(skeleton.root.orientation, skeleton.root.axis_order)
    r_dof = np.eye(3)
    for token in rot_order:
        r_dof = _axis_rot(token[1], rot_angles[token]) @ r_dof
    root_rot = c_root @ r_dof @ c_root.T

    positions = {"root": trans}
    rotations = {"root": root_rot}

    def visit(parent: str):
        for child in skeleton.hierarchy.get(parent, []):
            bone = skeleton.bone(child)
            c = _euler(bone.axis, bone.axis_order)
            if bone.dof:
                values = frame.get(child)
                if values is None or len(values) != len(bone.dof):
                    raise MocapParseError(f"missing channels for bone {child!r}")
                r_local = np.eye(3)
                for token, value in zip(bone.dof, values):
                    r_local = _axis_rot(token[1], value) @ r_local
                motion = c @ r_local @ c.T
            else:
                motion = np.eye(3)
            rotations[child] = rotations[parent] @ motion
            positions[child] = positions[parent] + rotations[child] @ (
                bone.direction * bone.length * scale)
            visit(child)

    visit("root")
    return positions


def _root_yaw(skeleton: Skeleton, frame) -> float:
    """Heading of the root about the vertical (y) axis."""
    rot_angles = dict(rx=0.0, ry=0.0, rz=0.0)
    rot_order = []
    for token, value in zip(skeleton.root.order, frame["root"]):
        if token.startswith("r"):
            rot_angles[token] = value
            rot_order.append(token)
    c_root = _euler(skeleton.root.orientation, skeleton.root.axis_order)
    r_dof = np.eye(3)
    for token in rot_order:
        r_dof = _axis_rot(token[1], rot_angles[token]) @ r_dof
    rot = c_root @ r_dof @ c_root.T
    # yaw of the local z axis projected into the horizontal x-z plane
    return math.atan2(rot[0, 2], rot[2, 2])


# ---------------------------------------------------------------------------
# Feature extraction
# ---------------------------------------------------------------------------

JOINT_ANGLES = "joint_angles"
JOINT_VELOCITIES = "joint_velocities"
ROOT_LINEAR_VELOCITY = "root_linear_velocity"


def ee_vectors(*bone_names: str) -> tuple:
    return ("ee_vectors", tuple(bone_names))


@dataclass(frozen=True)
class FeatureSpec:
    """Ordered selection of kinematic features and the timestep they live on.

    Items are JOINT_ANGLES, JOINT_VELOCITIES, ROOT_LINEAR_VELOCITY, or
    ``ee_vectors(name, ...)`` for root-relative end-effector vectors.
    """

    items: tuple
    dt: float

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError("dt must be > 0")
        for item in self.items:
            if isinstance(item, tuple):
                if item[0] != "ee_vectors" or not item[1]:
                    raise ValueError(f"bad feature item {item!r}")
            elif item not in (JOINT_ANGLES, JOINT_VELOCITIES, ROOT_LINEAR_VELOCITY):
                raise ValueError(f"unknown feature item {item!r}")


def _central_diff(rows: np.ndarray, dt: float) -> np.ndarray:
    """Central differences with one-sided stencils at both ends."""
    out = np.empty_like(rows)
    if rows.shape[0] == 1:
        out[:] = 0.0
        return out
    out[1:-1] = (rows[2:] - rows[:-2]) / (2.0 * dt)
    out[0] = (rows[1] - rows[0]) / dt
    out[-1] = (rows[-1] - rows[-2]) / dt
    return out


def feature_layout(skeleton: Skeleton, seq: MotionSequence, spec: FeatureSpec) -> list[str]:
    names = []
    for item in spec.items:
        if item == JOINT_ANGLES or item == JOINT_VELOCITIES:
            prefix = "ang" if item == JOINT_ANGLES else "angvel"
            for bone in seq.bone_order:
                if bone == "root":
                    continue
                for token in skeleton.bone(bone).dof:
                    names.append(f"{prefix}:{bone}:{token}")
        elif item == ROOT_LINEAR_VELOCITY:
            names.extend(f"rootvel:{axis}" for axis in "xyz")
        else:
            for bone in item[1]:
                names.extend(f"ee:{bone}:{axis}" for axis in "xyz")
    return names


def extract_features(seq: MotionSequence, skeleton: Skeleton, spec: FeatureSpec,
                     context_label: int = 0, context_k: int = 1,
                     source: str = "") -> DemoSet:
    """Per-frame kinematic feature rows as a DemoSet.

    End-effector vectors are expressed relative to the root position in the
    root yaw frame; velocities are central finite differences at spec.dt
    (one-sided at the clip ends). Angles are emitted in radians.
    """
    if abs(1.0 / seq.frame_rate - spec.dt) > 1e-9:
        raise ValueError(f"sequence at {seq.frame_rate} Hz is not on the spec.dt={spec.dt} grid; "
                         "resample first")
    for item in spec.items:
        if isinstance(item, tuple):
            for bone in item[1]:
                if bone != "root" and bone not in skeleton.bone_names:
                    raise MocapParseError(f"feature references unknown bone {bone!r}")

    n = seq.n_frames
    angle_block = np.hstack([np.radians(seq.channels[b]) for b in seq.bone_order if b != "root"]) \
        if any(b != "root" for b in seq.bone_order) else np.zeros((n, 0))

    need_fk = any(isinstance(item, tuple) for item in spec.items)
    need_rootvel = ROOT_LINEAR_VELOCITY in spec.items
    fk_frames = []
    yaws = np.zeros(n)
    if need_fk or need_rootvel:
        for i in range(n):
            frame = seq.frame(i)
            fk_frames.append(skeleton_fk(skeleton, frame) if need_fk else
                             {"root": _root_position(skeleton, frame)})
            yaws[i] = _root_yaw(skeleton, frame)
    root_positions = np.array([f["root"] for f in fk_frames]) if fk_frames else np.zeros((n, 3))
    root_vel_world = _central_diff(root_positions, spec.dt) if need_rootvel else None

    blocks = []
    for item in spec.items:
        if item == JOINT_ANGLES:
            blocks.append(angle_block)
        elif item == JOINT_VELOCITIES:
            blocks.append(_central_diff(angle_block, spec.dt))
        elif item == ROOT_LINEAR_VELOCITY:
            rows = np.empty((n, 3))
            for i in range(n):
                rows[i] = _yaw_frame(yaws[i]).T @ root_vel_world[i]
            blocks.append(rows)
        else:
            for bone in item[1]:
                rows = np.empty((n, 3))
                for i in range(n):
                    rows[i] = _yaw_frame(yaws[i]).T @ (fk_frames[i][bone] - fk_frames[i]["root"])
                blocks.append(rows)
    rows = np.hstack(blocks) if blocks else np.zeros((n, 0))
    return DemoSet(feature_names=feature_layout(skeleton, seq, spec), dt=spec.dt,
                   rows=rows, contexts=np.full(n, context_label, dtype=np.int64),
                   context_k=context_k, source=source or f"mocap clip ({n} frames)")


def _root_position(skeleton: Skeleton, frame) -> np.ndarray:
    scale = 1.0 / skeleton.length_scale
    trans = np.zeros(3)
    for token, value in zip(skeleton.root.order, frame["root"]):
        if token.startswith("t"):
            trans[_AXES[token[1]]] = value * scale
    return trans


def _yaw_frame(yaw: float) -> np.ndarray:
    return _axis_rot("y", math.degrees(yaw))
