"""Kinematic chain model: segments, forward kinematics, parameter packing.

The chain alternates static segments and joints::

    T = st(base) * jt(q_1) * st(link_1) * ... * jt(q_n) * st(ee)

Each static segment between two joints carries four scalars
(alpha, beta, x, y); the terminal segment additionally carries gamma and
z.  Every joint moves along the local z axis: revolute joints rotate
about it, prismatic joints translate along it.

The packed parameter vector is laid out base-to-tip, per segment
(alpha, beta, x, y), with the terminal segment packed as
(alpha, beta, gamma, x, y, z).  This order is also the on-disk order of
the model file.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionError, InvalidParameterError, ParseError
from .transforms import RigidTransform, rot_x, rot_y, rot_z


class JointKind(enum.Enum):
    REVOLUTE = "revolute"
    PRISMATIC = "prismatic"


@dataclass(frozen=True)
class Segment:
    """Static segment; ``joint`` is the joint following it (None = terminal)."""

    alpha: float = 0.0
    beta: float = 0.0
    x: float = 0.0
    y: float = 0.0
    joint: JointKind | None = None

    def __post_init__(self):
        for name in ("alpha", "beta", "x", "y"):
            value = getattr(self, name)
            if not np.isfinite(value):
                raise InvalidParameterError(f"segment {name} must be finite")
        if self.joint is JointKind.PRISMATIC and (self.x != 0.0 or self.y != 0.0):
            raise InvalidParameterError(
                "segment followed by a prismatic joint must have x = y = 0"
            )

    @property
    def params(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.x, self.y])


@dataclass(frozen=True)
class EESegment:
    """Terminal segment with the two extra degrees of freedom gamma and z."""

    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "x", "y", "z"):
            if not np.isfinite(getattr(self, name)):
                raise InvalidParameterError(f"EE segment {name} must be finite")

    @property
    def params(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.gamma, self.x, self.y, self.z])


@dataclass(frozen=True)
class KinematicModel:
    """Ordered chain: base segment, inner link segments, terminal segment.

    ``base.joint`` is the kind of joint 1; ``links[i].joint`` the kind of
    joint i+2.  A model with no joints has ``base.joint is None`` and an
    empty ``links`` tuple.
    """

    base: Segment
    links: tuple[Segment, ...]
    ee: EESegment

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        if self.links and self.base.joint is None:
            raise InvalidParameterError("base segment must carry a joint when links exist")
        # only the EE segment is joint-free
        for i, link in enumerate(self.links):
            if link.joint is None:
                raise InvalidParameterError(f"link {i} is missing its joint")

    @property
    def joint_count(self) -> int:
        count = 1 if self.base.joint is not None else 0
        return count + sum(1 for link in self.links if link.joint is not None)

    @property
    def joint_kinds(self) -> tuple[JointKind, ...]:
        kinds = []
        if self.base.joint is not None:
            kinds.append(self.base.joint)
        kinds.extend(link.joint for link in self.links if link.joint is not None)
        return tuple(kinds)

    @property
    def param_count(self) -> int:
        return 4 * (1 + len(self.links)) + 6


@dataclass(frozen=True)
class ParamMask:
    """Per-scalar optimization flags over the packed parameter vector."""

    flags: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "flags", np.asarray(self.flags, dtype=bool))

    def check(self, model: KinematicModel):
        if self.flags.shape != (model.param_count,):
            raise DimensionError(
                f"mask length {self.flags.size} != parameter count {model.param_count}"
            )

    @property
    def free_indices(self) -> np.ndarray:
        return np.flatnonzero(self.flags)

    def __len__(self) -> int:
        return self.flags.size


def default_mask(model: KinematicModel) -> ParamMask:
    """All parameters free except the base segment, (beta, y) of the first
    link, and (x, y) of segments feeding prismatic joints."""
    flags = np.ones(model.param_count, dtype=bool)
    flags[0:4] = False
    if model.links:
        offset = 4  # first link starts after the base block
        flags[offset + 1] = False  # beta
        flags[offset + 3] = False  # y
    for i, seg in enumerate([model.base, *model.links]):
        if seg.joint is JointKind.PRISMATIC:
            flags[4 * i + 2] = False
            flags[4 * i + 3] = False
    return ParamMask(flags)


def check_joints(model: KinematicModel, joints) -> np.ndarray:
    joints = np.asarray(joints, dtype=float)
    if joints.shape != (model.joint_count,):
        raise DimensionError(
            f"joint vector length {joints.shape} != joint count {model.joint_count}"
        )
    if not np.all(np.isfinite(joints)):
        raise InvalidParameterError("joint vector contains non-finite values")
    return joints


# --- elementary transforms -------------------------------------------------

def static_segment_transform(seg: Segment) -> RigidTransform:
    """rot_x(alpha) * rot_y(beta) * trans(x, y, 0)."""
    rotation = rot_x(seg.alpha) @ rot_y(seg.beta)
    return RigidTransform(rotation, rotation @ np.array([seg.x, seg.y, 0.0]),
                          _skip_checks=True)


def ee_segment_transform(ee: EESegment) -> RigidTransform:
    """rot_x(alpha) * rot_y(beta) * rot_z(gamma) * trans(x, y, z)."""
    rotation = rot_x(ee.alpha) @ rot_y(ee.beta) @ rot_z(ee.gamma)
    return RigidTransform(rotation, rotation @ np.array([ee.x, ee.y, ee.z]),
                          _skip_checks=True)


def joint_transform(kind: JointKind, q: float) -> RigidTransform:
    if not np.isfinite(q):
        raise InvalidParameterError("joint position must be finite")
    if kind is JointKind.REVOLUTE:
        return RigidTransform(rot_z(q), np.zeros(3), _skip_checks=True)
    if kind is JointKind.PRISMATIC:
        return RigidTransform(np.eye(3), np.array([0.0, 0.0, q]), _skip_checks=True)
    raise InvalidParameterError(f"unknown joint kind {kind!r}")


def forward_kinematics(model: KinematicModel, joints) -> RigidTransform:
    """Pose of the terminal (sensor) frame in the base frame."""
    joints = check_joints(model, joints)
    pose = static_segment_transform(model.base)
    idx = 0
    if model.base.joint is not None:
        pose = pose @ joint_transform(model.base.joint, joints[idx])
        idx += 1
    for link in model.links:
        pose = pose @ static_segment_transform(link)
        if link.joint is not None:
            pose = pose @ joint_transform(link.joint, joints[idx])
            idx += 1
    return pose @ ee_segment_transform(model.ee)


# --- parameter vector ------------------------------------------------------

def pack_params(model: KinematicModel) -> np.ndarray:
    parts = [model.base.params]
    parts.extend(link.params for link in model.links)
    parts.append(model.ee.params)
    return np.concatenate(parts)


def unpack_params(vector, template: KinematicModel) -> KinematicModel:
    vector = np.asarray(vector, dtype=float)
    if vector.shape != (template.param_count,):
        raise DimensionError(
            f"vector length {vector.shape} != parameter count {template.param_count}"
        )
    base = replace(template.base, alpha=vector[0], beta=vector[1],
                   x=vector[2], y=vector[3])
    links = []
    for i, link in enumerate(template.links):
        o = 4 * (i + 1)
        links.append(replace(link, alpha=vector[o], beta=vector[o + 1],
                             x=vector[o + 2], y=vector[o + 3]))
    o = 4 * (1 + len(template.links))
    ee = EESegment(alpha=vector[o], beta=vector[o + 1], gamma=vector[o + 2],
                   x=vector[o + 3], y=vector[o + 4], z=vector[o + 5])
    return KinematicModel(base, tuple(links), ee)


def translation_flags(template: KinematicModel) -> np.ndarray:
    """True for packed entries holding meters rather than radians."""
    flags = np.zeros(template.param_count, dtype=bool)
    for i in range(1 + len(template.links)):
        flags[4 * i + 2] = True
        flags[4 * i + 3] = True
    flags[-3:] = True
    return flags


def normalize_params(vector, s: float, template: KinematicModel) -> np.ndarray:
    """Divide translation entries by the scale s; angles stay untouched."""
    if not np.isfinite(s) or s <= 0.0:
        raise InvalidParameterError(f"scale must be positive, got {s}")
    vector = np.asarray(vector, dtype=float).copy()
    flags = translation_flags(template)
    vector[flags] /= s
    return vector


def denormalize_params(vector, s: float, template: KinematicModel) -> np.ndarray:
    if not np.isfinite(s) or s <= 0.0:
        raise InvalidParameterError(f"scale must be positive, got {s}")
    vector = np.asarray(vector, dtype=float).copy()
    flags = translation_flags(template)
    vector[flags] *= s
    return vector


# --- chain factorization for analytic derivatives --------------------------

_DX = np.zeros((4, 4)); _DX[0, 3] = 1.0
_DY = np.zeros((4, 4)); _DY[1, 3] = 1.0
_DZ = np.zeros((4, 4)); _DZ[2, 3] = 1.0


def _hom(rotation, translation=(0.0, 0.0, 0.0)):
    out = np.eye(4)
    out[:3, :3] = rotation
    out[:3, 3] = translation
    return out


def _rot_derivative(axis_builder, angle):
    c, s = np.cos(angle), np.sin(angle)
    if axis_builder is rot_x:
        return np.array([[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]])
    if axis_builder is rot_y:
        return np.array([[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]])
    return np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])


def chain_factors(model: KinematicModel, joints):
    """Elementary 4x4 factors of the chain plus per-factor derivatives.

    Returns a list of (matrix, {param_index: d_matrix}) in product order.
    Joint factors carry no parameters.
    """
    joints = check_joints(model, joints)
    factors = []

    def add_segment(seg, offset):
        factors.append((_hom(rot_x(seg.alpha)),
                        {offset: np.pad(_rot_derivative(rot_x, seg.alpha), ((0, 1), (0, 1)))}))
        factors.append((_hom(rot_y(seg.beta)),
                        {offset + 1: np.pad(_rot_derivative(rot_y, seg.beta), ((0, 1), (0, 1)))}))
        factors.append((_hom(np.eye(3), (seg.x, seg.y, 0.0)),
                        {offset + 2: _DX, offset + 3: _DY}))

    idx = 0
    add_segment(model.base, 0)
    if model.base.joint is not None:
        factors.append((joint_transform(model.base.joint, joints[idx]).matrix, {}))
        idx += 1
    for i, link in enumerate(model.links):
        add_segment(link, 4 * (i + 1))
        if link.joint is not None:
            factors.append((joint_transform(link.joint, joints[idx]).matrix, {}))
            idx += 1
    o = 4 * (1 + len(model.links))
    ee = model.ee
    factors.append((_hom(rot_x(ee.alpha)),
                    {o: np.pad(_rot_derivative(rot_x, ee.alpha), ((0, 1), (0, 1)))}))
    factors.append((_hom(rot_y(ee.beta)),
                    {o + 1: np.pad(_rot_derivative(rot_y, ee.beta), ((0, 1), (0, 1)))}))
    factors.append((_hom(rot_z(ee.gamma)),
                    {o + 2: np.pad(_rot_derivative(rot_z, ee.gamma), ((0, 1), (0, 1)))}))
    factors.append((_hom(np.eye(3), (ee.x, ee.y, ee.z)),
                    {o + 3: _DX, o + 4: _DY, o + 5: _DZ}))
    return factors


def transform_and_derivatives(model: KinematicModel, joints, free_indices):
    """Chain transform T and dT/dk for the requested packed indices.

    Returns (T, dT) with T of shape (4, 4) and dT of shape (F, 4, 4)
    ordered like ``free_indices``.
    """
    free_indices = np.asarray(free_indices, dtype=int)
    factors = chain_factors(model, joints)
    n = len(factors)
    prefix = [np.eye(4)]
    for mat, _ in factors:
        prefix.append(prefix[-1] @ mat)
    suffix = [np.eye(4)] * (n + 1)
    acc = np.eye(4)
    for i in range(n - 1, -1, -1):
        acc = factors[i][0] @ acc
        suffix[i] = acc
    transform = prefix[-1]

    position = {int(p): j for j, p in enumerate(free_indices)}
    deriv = np.zeros((free_indices.size, 4, 4))
    for i, (_, params) in enumerate(factors):
        for param_idx, d_mat in params.items():
            slot = position.get(param_idx)
            if slot is not None:
                deriv[slot] += prefix[i] @ d_mat @ suffix[i + 1]
    return transform, deriv


# --- model file I/O ---------------------------------------------------------

_HEADER = "mcpc v1"


def save_model(model: KinematicModel, mask: ParamMask, path):
    """Write the model as documented structured text.

    One line per segment, base to tip: ``base|seg <joint-kind> alpha beta
    x y m m m m`` and ``ee alpha beta gamma x y z m m m m m m``.  Angles
    in radians, lengths in meters, mask flags 0/1.
    """
    mask.check(model)
    flags = mask.flags.astype(int)
    lines = [_HEADER]

    def seg_line(tag, seg, offset):
        kind = seg.joint.value if seg.joint is not None else "none"
        vals = " ".join(repr(float(v)) for v in seg.params)
        bits = " ".join(str(b) for b in flags[offset:offset + 4])
        return f"{tag} {kind} {vals} {bits}"

    lines.append(seg_line("base", model.base, 0))
    for i, link in enumerate(model.links):
        lines.append(seg_line("seg", link, 4 * (i + 1)))
    o = 4 * (1 + len(model.links))
    vals = " ".join(repr(float(v)) for v in model.ee.params)
    bits = " ".join(str(b) for b in flags[o:o + 6])
    lines.append(f"ee {vals} {bits}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> tuple[KinematicModel, ParamMask]:
    with open(path) as fh:
        raw = [line.strip() for line in fh]
    lines = [(i + 1, line) for i, line in enumerate(raw)
             if line and not line.startswith("#")]
    if not lines or lines[0][1] != _HEADER:
        raise ParseError(f"{path}: missing '{_HEADER}' header")

    def parse_kind(token, lineno):
        if token == "none":
            return None
        try:
            return JointKind(token)
        except ValueError:
            raise ParseError(f"{path}:{lineno}: unknown joint kind {token!r}") from None

    base = None
    links = []
    ee = None
    flag_parts = []
    for lineno, line in lines[1:]:
        tokens = line.split()
        tag = tokens[0]
        try:
            if tag in ("base", "seg"):
                if len(tokens) != 10:
                    raise ParseError(f"{path}:{lineno}: expected 10 fields, got {len(tokens)}")
                kind = parse_kind(tokens[1], lineno)
                vals = [float(t) for t in tokens[2:6]]
                seg = Segment(*vals, joint=kind)
                flag_parts.append([int(t) for t in tokens[6:10]])
                if tag == "base":
                    if base is not None:
                        raise ParseError(f"{path}:{lineno}: duplicate base line")
                    base = seg
                else:
                    links.append(seg)
            elif tag == "ee":
                if len(tokens) != 13:
                    raise ParseError(f"{path}:{lineno}: expected 13 fields, got {len(tokens)}")
                ee = EESegment(*[float(t) for t in tokens[1:7]])
                flag_parts.append([int(t) for t in tokens[7:13]])
            else:
                raise ParseError(f"{path}:{lineno}: unknown line tag {tag!r}")
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
    if base is None or ee is None:
        raise ParseError(f"{path}: model needs a base line and an ee line")
    model = KinematicModel(base, tuple(links), ee)
    mask = ParamMask(np.concatenate(flag_parts).astype(bool))
    mask.check(model)
    return model, mask
