"""Cross-dataset nearest-neighbor correspondences with validation.

For every ordered pair of filtered clouds (i < j) a k-d tree over cloud
j answers one exact nearest-neighbor query per point of cloud i.  The
tree is rebuilt from scratch by every caller: clouds deform between ICP
iterations, so nothing may be cached across them.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigurationError, InvalidParameterError
from .geomfilter import FilteredCloud

# worker threads for nearest-neighbor queries; -1 means all cores.
# Results are identical for any value, only wall time changes.
QUERY_WORKERS = -1


@dataclass(frozen=True)
class Match:
    a_id: int
    a_row: int
    a_col: int
    b_id: int
    b_row: int
    b_col: int


class SpatialIndex:
    """Exact nearest-neighbor index over a filtered cloud.

    Ties at identical distance resolve to the lowest point index, which
    is row-major grid order (lowest row, then column).
    """

    def __init__(self, cloud: FilteredCloud):
        self.cloud = cloud
        self._tree = cKDTree(cloud.positions) if len(cloud) else None

    def query(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Indices and distances of the nearest indexed point per query.

        Empty index: returns empty results for zero queries and index -1
        with infinite distance otherwise.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self._tree is None:
            return (np.full(points.shape[0], -1, dtype=int),
                    np.full(points.shape[0], np.inf))
        k = min(2, len(self.cloud))
        dist, idx = self._tree.query(points, k=k, workers=QUERY_WORKERS)
        if k == 1:
            return idx.reshape(-1).astype(int), dist.reshape(-1)
        best_idx = idx[:, 0].astype(int)
        best_dist = dist[:, 0]
        ties = np.flatnonzero(dist[:, 1] == best_dist)
        for row in ties:
            candidates = self._tree.query_ball_point(points[row], best_dist[row])
            keep = [c for c in candidates
                    if np.linalg.norm(self.cloud.positions[c] - points[row])
                    == best_dist[row]]
            if keep:
                best_idx[row] = min(keep)
        return best_idx, best_dist


def build_index(cloud: FilteredCloud) -> SpatialIndex:
    return SpatialIndex(cloud)


@dataclass(frozen=True)
class MatchSet:
    """Point-pair indices across two or more filtered clouds.

    Pairs are unordered across datasets (a_id < b_id, never equal); the
    arrays reference positions/normals inside ``clouds``.
    """

    a_id: np.ndarray
    a_idx: np.ndarray
    b_id: np.ndarray
    b_idx: np.ndarray
    clouds: dict

    def __len__(self) -> int:
        return self.a_id.size

    def __getitem__(self, k: int) -> Match:
        ca = self.clouds[int(self.a_id[k])]
        cb = self.clouds[int(self.b_id[k])]
        ia, ib = int(self.a_idx[k]), int(self.b_idx[k])
        return Match(ca.dataset_id, int(ca.rows[ia]), int(ca.cols[ia]),
                     cb.dataset_id, int(cb.rows[ib]), int(cb.cols[ib]))

    def pair_counts(self) -> dict:
        counts = {}
        for a, b in zip(self.a_id, self.b_id):
            counts[(int(a), int(b))] = counts.get((int(a), int(b)), 0) + 1
        return counts


def find_matches(qa: FilteredCloud, qb: FilteredCloud,
                 index: SpatialIndex | None = None) -> MatchSet:
    """One unvalidated candidate per point of qa: its nearest point of qb."""
    if index is None:
        index = build_index(qb)
    if len(qa) == 0 or len(qb) == 0:
        empty = np.zeros(0, dtype=int)
        return MatchSet(empty, empty, empty.copy(), empty.copy(),
                        {qa.dataset_id: qa, qb.dataset_id: qb})
    idx, _ = index.query(qa.positions)
    a_idx = np.arange(len(qa))
    return MatchSet(np.full(len(qa), qa.dataset_id, dtype=int), a_idx,
                    np.full(len(qa), qb.dataset_id, dtype=int), idx,
                    {qa.dataset_id: qa, qb.dataset_id: qb})


def match_all(clouds) -> MatchSet:
    """Candidates over all dataset pairs i < j (bundle adjustment style)."""
    clouds = list(clouds)
    if len(clouds) < 2:
        raise ConfigurationError("matching needs at least two clouds")
    ids = [c.dataset_id for c in clouds]
    if len(set(ids)) != len(ids):
        raise ConfigurationError("cloud dataset ids must be unique")
    by_id = {c.dataset_id: c for c in clouds}
    order = sorted(ids)
    indexes = {i: build_index(by_id[i]) for i in order}

    parts_a_id, parts_a_idx, parts_b_id, parts_b_idx = [], [], [], []
    for pos, i in enumerate(order):
        for j in order[pos + 1:]:
            ms = find_matches(by_id[i], by_id[j], index=indexes[j])
            parts_a_id.append(ms.a_id)
            parts_a_idx.append(ms.a_idx)
            parts_b_id.append(ms.b_id)
            parts_b_idx.append(ms.b_idx)
    return MatchSet(np.concatenate(parts_a_id), np.concatenate(parts_a_idx),
                    np.concatenate(parts_b_id), np.concatenate(parts_b_idx),
                    by_id)


def validate_matches(ms: MatchSet, d_max: float, f_min: float) -> MatchSet:
    """Keep matches within d_max and with normal agreement >= f_min.

    d_max is interpreted in the same units as the cloud positions, so
    callers matching normalized clouds must divide the configured value
    by the scale once.
    """
    if d_max <= 0.0:
        raise InvalidParameterError(f"d_max must be positive, got {d_max}")
    if not -1.0 <= f_min <= 1.0:
        raise InvalidParameterError(f"f_min must lie in [-1, 1], got {f_min}")
    if len(ms) == 0:
        return ms
    pos_a = np.empty((len(ms), 3))
    pos_b = np.empty((len(ms), 3))
    nrm_a = np.empty((len(ms), 3))
    nrm_b = np.empty((len(ms), 3))
    for ds_id, cloud in ms.clouds.items():
        sel_a = ms.a_id == ds_id
        sel_b = ms.b_id == ds_id
        pos_a[sel_a] = cloud.positions[ms.a_idx[sel_a]]
        nrm_a[sel_a] = cloud.normals[ms.a_idx[sel_a]]
        pos_b[sel_b] = cloud.positions[ms.b_idx[sel_b]]
        nrm_b[sel_b] = cloud.normals[ms.b_idx[sel_b]]
    dist_ok = np.linalg.norm(pos_a - pos_b, axis=1) <= d_max
    overlap_ok = np.einsum("nk,nk->n", nrm_a, nrm_b) >= f_min
    keep = dist_ok & overlap_ok
    return replace(ms, a_id=ms.a_id[keep], a_idx=ms.a_idx[keep],
                   b_id=ms.b_id[keep], b_idx=ms.b_idx[keep])
