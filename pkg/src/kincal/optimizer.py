"""Point-to-plane bundle-adjustment cost, masked LM solve, and the outer
ICP-style calibration loop.

Each outer iteration re-projects, re-filters and re-matches all datasets
with the current parameters, then runs a damped least-squares solve over
the masked-in parameters with the correspondences and normals frozen.
Everything inside the solve happens in normalized units (translations
divided by the scene scale s); the stop criterion and the returned model
are denormalized.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import ProjectedCloud, ScanDataset, project_to_base
from .errors import (ConfigurationError, MatchingFailure, SingularSystemError)
from .geomfilter import (VIEW_DIRECTION_RULE, FilteredCloud, compute_scale,
                         filter_cloud)
from .kincore import (JointKind, KinematicModel, ParamMask, default_mask,
                      denormalize_params, forward_kinematics, normalize_params,
                      pack_params, transform_and_derivatives, unpack_params)
from .matching import MatchSet, match_all, validate_matches


@dataclass(frozen=True)
class CalibrationConfig:
    """Filter, validation, solver and stop parameters.

    Defaults follow the Kinect-class depth camera row of the sensor
    parameter table; d_max is in meters and divided by the scene scale
    once before matching normalized clouds.
    """

    n: int = 2
    m: int = 2
    g_min: float = 0.75
    d_max: float = 0.020
    f_min: float = 0.80
    epsilon: float = 1e-4
    i_max: int = 50
    mask: ParamMask | None = None
    orientation_rule: str = VIEW_DIRECTION_RULE
    # inner LM solve
    lm_lambda0: float = 1e-4
    lm_max_iterations: int = 25
    lm_gradient_tol: float = 1e-10
    # normalization variants for non-uniform scenes
    scale_from_all: bool = False
    center_shift: bool = False

    def __post_init__(self):
        if self.epsilon <= 0.0:
            raise ConfigurationError("epsilon must be positive")
        if self.i_max < 1:
            raise ConfigurationError("i_max must be at least 1")
        if not 0.0 <= self.g_min <= 1.0:
            raise ConfigurationError("g_min must lie in [0, 1]")
        if self.d_max <= 0.0:
            raise ConfigurationError("d_max must be positive")
        if not -1.0 <= self.f_min <= 1.0:
            raise ConfigurationError("f_min must lie in [-1, 1]")


@dataclass(frozen=True)
class IterationStats:
    cost: float
    match_count: int
    delta_k: float
    inner_costs: tuple[float, ...]


@dataclass(frozen=True)
class CalibrationReport:
    final_model: KinematicModel
    scale: float
    converged: bool
    iterations: tuple[IterationStats, ...]
    wall_time: float


# --- residuals over frozen correspondences ----------------------------------

@dataclass
class CorrespondenceSet:
    """Frozen matches: raw sensor-frame endpoints, joint frames, normals.

    Endpoints reference one of ``frame_joints`` rows; frames flagged
    frozen keep the fixed transform in ``frozen_transforms`` instead of
    being re-evaluated from the candidate model (used to anchor the
    reference cloud in the joint-free rigid subcase).
    """

    points_a: np.ndarray   # (N, 4) homogeneous sensor-frame points
    points_b: np.ndarray   # (N, 4)
    frame_a: np.ndarray    # (N,) index into frame_joints
    frame_b: np.ndarray    # (N,)
    normals: np.ndarray    # (N, 3) frozen normals of the first endpoint
    frame_joints: np.ndarray        # (F, J)
    frame_frozen: np.ndarray        # (F,) bool
    frozen_transforms: np.ndarray   # (F, 4, 4); identity where not frozen

    def __len__(self) -> int:
        return self.points_a.shape[0]

    def frame_transforms(self, model: KinematicModel) -> np.ndarray:
        out = np.empty((self.frame_joints.shape[0], 4, 4))
        for f, joints in enumerate(self.frame_joints):
            if self.frame_frozen[f]:
                out[f] = self.frozen_transforms[f]
            else:
                out[f] = forward_kinematics(model, joints).matrix
        return out

    def residuals(self, model: KinematicModel,
                  transforms: np.ndarray | None = None) -> np.ndarray:
        if transforms is None:
            transforms = self.frame_transforms(model)
        proj_a = np.einsum("nij,nj->ni",
                           transforms[self.frame_a][:, :3, :], self.points_a)
        proj_b = np.einsum("nij,nj->ni",
                           transforms[self.frame_b][:, :3, :], self.points_b)
        return np.einsum("nk,nk->n", proj_a - proj_b, self.normals)

    def jacobian(self, model: KinematicModel, free_indices) -> np.ndarray:
        """Analytic d residual / d k over the masked-in packed indices."""
        free_indices = np.asarray(free_indices, dtype=int)
        jac = np.zeros((len(self), free_indices.size))
        for f, joints in enumerate(self.frame_joints):
            if self.frame_frozen[f]:
                continue
            rows_a = np.flatnonzero(self.frame_a == f)
            rows_b = np.flatnonzero(self.frame_b == f)
            if rows_a.size == 0 and rows_b.size == 0:
                continue
            _, deriv = transform_and_derivatives(model, joints, free_indices)
            deriv = deriv[:, :3, :]
            if rows_a.size:
                jac[rows_a] += np.einsum("pij,nj,ni->np", deriv,
                                         self.points_a[rows_a],
                                         self.normals[rows_a])
            if rows_b.size:
                jac[rows_b] -= np.einsum("pij,nj,ni->np", deriv,
                                         self.points_b[rows_b],
                                         self.normals[rows_b])
        return jac


def residual(model: KinematicModel, point_a, joints_a, point_b, joints_b,
             normal) -> float:
    """Signed point-to-plane distance of one re-projected match."""
    proj_a = forward_kinematics(model, joints_a).apply(np.asarray(point_a, dtype=float))
    proj_b = forward_kinematics(model, joints_b).apply(np.asarray(point_b, dtype=float))
    return float((proj_a - proj_b) @ np.asarray(normal, dtype=float))


def total_error(corr: CorrespondenceSet, model: KinematicModel) -> float:
    """Sum of squared residuals; normal signs are immaterial."""
    if len(corr) == 0:
        warnings.warn("empty match set: total error is trivially zero",
                      RuntimeWarning, stacklevel=2)
        return 0.0
    res = corr.residuals(model)
    return float(res @ res)


def build_correspondences(ms: MatchSet, datasets: dict,
                          anchor_transforms: dict | None = None) -> CorrespondenceSet:
    """Resolve a validated MatchSet against the raw datasets.

    ``datasets`` maps dataset id to the (normalized) ScanDataset.
    ``anchor_transforms`` maps dataset ids whose pose is held fixed to a
    callable joints -> 4x4 transform evaluated once here.
    """
    anchor_transforms = anchor_transforms or {}
    count = len(ms)
    points_a = np.ones((count, 4))
    points_b = np.ones((count, 4))
    normals = np.empty((count, 3))
    joints_a = None
    joints_b = None

    for ds_id, cloud in ms.clouds.items():
        ds = datasets[ds_id]
        if joints_a is None:
            jdim = ds.joint_count
            joints_a = np.empty((count, jdim))
            joints_b = np.empty((count, jdim))
        sel = ms.a_id == ds_id
        if np.any(sel):
            rows = cloud.rows[ms.a_idx[sel]]
            cols = cloud.cols[ms.a_idx[sel]]
            points_a[sel, :3] = ds.points[rows, cols]
            joints_a[sel] = ds.joints[rows, cols]
            normals[sel] = cloud.normals[ms.a_idx[sel]]
        sel = ms.b_id == ds_id
        if np.any(sel):
            rows = cloud.rows[ms.b_idx[sel]]
            cols = cloud.cols[ms.b_idx[sel]]
            points_b[sel, :3] = ds.points[rows, cols]
            joints_b[sel] = ds.joints[rows, cols]

    frozen_a = np.isin(ms.a_id, list(anchor_transforms)) if anchor_transforms else \
        np.zeros(count, dtype=bool)
    frozen_b = np.isin(ms.b_id, list(anchor_transforms)) if anchor_transforms else \
        np.zeros(count, dtype=bool)

    # frames are unique (frozen?, joint vector) pairs
    jdim = joints_a.shape[1]
    all_joints = np.concatenate([joints_a, joints_b])
    all_frozen = np.concatenate([frozen_a, frozen_b])
    all_ids = np.concatenate([ms.a_id, ms.b_id])
    key = np.column_stack([all_frozen.astype(float).reshape(-1, 1),
                           all_joints.reshape(2 * count, jdim)])
    uniq, inverse = np.unique(key, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    frame_a = inverse[:count]
    frame_b = inverse[count:]
    frame_frozen = uniq[:, 0] > 0.5
    frame_joints = uniq[:, 1:]

    frozen_transforms = np.broadcast_to(np.eye(4), (uniq.shape[0], 4, 4)).copy()
    for f in np.flatnonzero(frame_frozen):
        # all endpoints of a frozen frame come from the same anchored dataset
        member = np.flatnonzero(inverse == f)[0]
        ds_id = int(all_ids[member])
        frozen_transforms[f] = anchor_transforms[ds_id](frame_joints[f])

    return CorrespondenceSet(points_a, points_b, frame_a, frame_b, normals,
                             frame_joints, frame_frozen, frozen_transforms)


# --- masked Levenberg-Marquardt ----------------------------------------------

@dataclass(frozen=True)
class LMResult:
    model: KinematicModel
    accepted_costs: tuple[float, ...]
    updated: bool


def lm_minimize(corr: CorrespondenceSet, model: KinematicModel,
                mask: ParamMask, lambda0: float = 1e-4,
                max_iterations: int = 25,
                gradient_tol: float = 1e-10) -> LMResult:
    """Minimize the total error over masked-in parameters only.

    Masked-out scalars are bit-identical in the returned model; accepted
    damping steps never increase the cost.
    """
    mask.check(model)
    free = mask.free_indices
    if free.size == 0:
        return LMResult(model, (total_error(corr, model),), updated=False)
    if len(corr) < free.size:
        raise ConfigurationError(
            f"{len(corr)} residuals cannot constrain {free.size} free parameters"
        )

    params = pack_params(model)
    current = model
    res = corr.residuals(current)
    cost = float(res @ res)
    accepted = [cost]
    lam = lambda0
    jac = None

    for _ in range(max_iterations):
        if jac is None:
            jac = corr.jacobian(current, free)
            col_norms = np.linalg.norm(jac, axis=0)
            dead = np.flatnonzero(col_norms <= 1e-14 * max(col_norms.max(), 1.0))
            if dead.size:
                raise SingularSystemError(
                    "residuals do not constrain packed parameter indices "
                    f"{[int(free[d]) for d in dead]}",
                    indices=(int(free[d]) for d in dead),
                )
            gram = jac.T @ jac
            grad = jac.T @ res
        if np.max(np.abs(grad)) < gradient_tol:
            break

        stepped = False
        while lam < 1e12:
            try:
                delta = np.linalg.solve(gram + lam * np.eye(free.size), -grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial_params = params.copy()
            trial_params[free] += delta
            trial = unpack_params(trial_params, current)
            trial_res = corr.residuals(trial)
            trial_cost = float(trial_res @ trial_res)
            if trial_cost < cost:
                params = trial_params
                current = trial
                res = trial_res
                cost = trial_cost
                accepted.append(cost)
                lam = max(lam / 10.0, 1e-12)
                jac = None
                stepped = True
                break
            lam *= 10.0
        if not stepped:
            break

    # re-assemble through unpack so masked-out scalars come from the original
    final_params = pack_params(model)
    final_params[free] = params[free]
    final = unpack_params(final_params, model)
    return LMResult(final, tuple(accepted), updated=len(accepted) > 1)


# --- outer loop ---------------------------------------------------------------

def _normalize_dataset(ds: ScanDataset, s: float,
                       prismatic: np.ndarray) -> ScanDataset:
    joints = ds.joints.copy()
    if prismatic.any():
        joints[..., prismatic] /= s
    return ScanDataset(ds.kind, ds.points / s, ds.valid, joints)


def calibrate(datasets, k_init: KinematicModel,
              cfg: CalibrationConfig | None = None) -> CalibrationReport:
    """Estimate the kinematic parameters from two or more scan datasets.

    Runs the outer loop: project -> filter -> match -> validate -> solve,
    until the denormalized parameter change drops below cfg.epsilon
    (max-abs norm) or cfg.i_max iterations are reached.

    A joint-free model cannot move between scans, so in that rigid
    subcase the first dataset is anchored at the initial model and the
    terminal segment aligns the remaining scans to it; this degenerates
    to classic point-to-plane registration.
    """
    start = time.perf_counter()
    cfg = cfg or CalibrationConfig()
    datasets = list(datasets)
    if len(datasets) < 2:
        raise ConfigurationError("calibration needs at least two datasets")
    for ds in datasets:
        if ds.joint_count != k_init.joint_count:
            raise ConfigurationError(
                f"dataset joint arity {ds.joint_count} does not match the model"
            )
    mask = cfg.mask if cfg.mask is not None else default_mask(k_init)
    mask.check(k_init)

    # scale from the initial projection; frozen for the whole run
    if cfg.scale_from_all:
        scale_clouds = [project_to_base(ds, k_init) for ds in datasets]
    else:
        scale_clouds = [project_to_base(datasets[0], k_init)]
    all_points = np.concatenate([c.points[c.valid] for c in scale_clouds])
    if all_points.shape[0] == 0:
        raise ConfigurationError("no valid points available to compute the scale")
    if cfg.center_shift:
        center = all_points.mean(axis=0)
        s = float(np.mean(np.linalg.norm(all_points - center, axis=1)))
    else:
        s = float(np.mean(np.linalg.norm(all_points, axis=1)))
    if s <= 0.0:
        raise ConfigurationError("degenerate scene: scale is zero")

    prismatic = np.array([k is JointKind.PRISMATIC for k in k_init.joint_kinds],
                         dtype=bool)
    datasets_hat = [_normalize_dataset(ds, s, prismatic) for ds in datasets]
    d_max_hat = cfg.d_max / s

    template = k_init
    k_hat = unpack_params(normalize_params(pack_params(k_init), s, template),
                          template)

    rigid_subcase = k_init.joint_count == 0
    anchor_model = k_hat if rigid_subcase else None

    prev_denorm = denormalize_params(pack_params(k_hat), s, template)
    iterations = []
    converged = False

    for _ in range(cfg.i_max):
        clouds = []
        for ds_id, ds in enumerate(datasets_hat):
            proj_model = anchor_model if (rigid_subcase and ds_id == 0) else k_hat
            proj = project_to_base(ds, proj_model)
            clouds.append(filter_cloud(proj, cfg.n, cfg.m, cfg.g_min,
                                       dataset_id=ds_id,
                                       orientation_rule=cfg.orientation_rule))
        candidates = match_all(clouds)
        matches = validate_matches(candidates, d_max_hat, cfg.f_min)
        if len(matches) == 0:
            raise MatchingFailure(
                "no validated matches in this iteration; candidate counts per "
                f"dataset pair: {candidates.pair_counts()}",
                pair_counts=candidates.pair_counts(),
            )

        anchors = {}
        if rigid_subcase:
            anchors[0] = lambda joints: forward_kinematics(anchor_model, joints).matrix
        corr = build_correspondences(matches, dict(enumerate(datasets_hat)),
                                     anchor_transforms=anchors)
        result = lm_minimize(corr, k_hat, mask, lambda0=cfg.lm_lambda0,
                             max_iterations=cfg.lm_max_iterations,
                             gradient_tol=cfg.lm_gradient_tol)
        k_hat = result.model

        denorm = denormalize_params(pack_params(k_hat), s, template)
        delta = float(np.max(np.abs(denorm - prev_denorm)))
        prev_denorm = denorm
        iterations.append(IterationStats(cost=result.accepted_costs[-1],
                                         match_count=len(matches),
                                         delta_k=delta,
                                         inner_costs=result.accepted_costs))
        if delta <= cfg.epsilon:
            converged = True
            break

    final = unpack_params(prev_denorm, template)
    # masked-out scalars must survive bit-exactly
    final_params = pack_params(k_init)
    final_params[mask.free_indices] = pack_params(final)[mask.free_indices]
    final = unpack_params(final_params, template)
    return CalibrationReport(final_model=final, scale=s, converged=converged,
                             iterations=tuple(iterations),
                             wall_time=time.perf_counter() - start)
