"""Unknown-pool exploration: clustering, 2-D projection, lasso, ranking.

K-means is written out (rather than wrapped) because the tests need the
per-iteration SSE trace and an init scheme that makes the SSE-vs-k curve
provably non-increasing. Projection uses exact t-SNE for fidelity at desk
scale, with PCA as the cheap fallback.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .vectors import cosine_similarity


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray
    assignments: dict
    sse: float
    sse_history: list[float] = field(default_factory=list)
    n_iter: int = 0


def _kmeanspp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total == 0.0:
            centroids[i:] = centroids[0]
            break
        probs = d2 / total
        centroids[i] = x[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, ((x - centroids[i]) ** 2).sum(axis=1))
    return centroids


def _lloyd(x: np.ndarray, centroids: np.ndarray, max_iter: int):
    """Lloyd iterations from a given init. Returns (centroids, assign, sse, history).

    The recorded SSE at iteration t uses the fresh assignment against the
    centroids that produced it, which makes the sequence non-increasing.
    """
    centroids = centroids.copy()
    prev = None
    history: list[float] = []
    assign = np.zeros(x.shape[0], dtype=int)
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        history.append(float(d2[np.arange(x.shape[0]), assign].sum()))
        if prev is not None and np.array_equal(assign, prev):
            break
        point_d2 = d2[np.arange(x.shape[0]), assign]
        for c in range(centroids.shape[0]):
            members = assign == c
            if members.any():
                centroids[c] = x[members].mean(axis=0)
        for c in range(centroids.shape[0]):
            if not (assign == c).any():
                centroids[c] = x[int(point_d2.argmax())]
        prev = assign
    return centroids, assign, history[-1], history


def kmeans(embeddings: list[tuple[str, np.ndarray]], k: int, seed: int,
           max_iter: int = 100) -> ClusterModel:
    """Seeded k-means++ init followed by Lloyd iterations."""
    if not embeddings:
        raise InputError("no points to cluster")
    if max_iter < 1:
        raise InputError("max_iter must be >= 1")
    ids = [pid for pid, _ in embeddings]
    x = np.stack([np.asarray(v, dtype=np.float64) for _, v in embeddings])
    if k > x.shape[0]:
        raise InputError(f"k={k} exceeds {x.shape[0]} points")
    if k < 1:
        raise InputError("k must be >= 1")
    rng = np.random.default_rng(seed)
    centroids, assign, sse, history = _lloyd(x, _kmeanspp_init(x, k, rng), max_iter)
    return ClusterModel(k=k, centroids=centroids,
                        assignments={pid: int(a) for pid, a in zip(ids, assign)},
                        sse=sse, sse_history=history, n_iter=len(history))


def _best_of_inits(x, k, seed, max_iter, n_restarts, grow_from=None):
    seeds = np.random.SeedSequence(seed).spawn(n_restarts)
    best = None
    for ss in seeds:
        rng = np.random.default_rng(ss)
        result = _lloyd(x, _kmeanspp_init(x, k, rng), max_iter)
        if best is None or result[2] < best[2]:
            best = result
    if grow_from is not None:
        # Previous solution plus its worst-served point: start SSE is already
        # at most the previous optimum, so the k-curve stays non-increasing.
        d2 = ((x[:, None, :] - grow_from[None, :, :]) ** 2).sum(axis=2).min(axis=1)
        init = np.vstack([grow_from, x[int(d2.argmax())]])
        result = _lloyd(x, init, max_iter)
        if result[2] < best[2]:
            best = result
    return best


def select_k(embeddings: list[tuple[str, np.ndarray]], k_range, seed: int,
             max_iter: int = 100, n_restarts: int = 4):
    """Pick the cluster count at the elbow of the SSE curve.

    The elbow is the k with the largest second difference of SSE; the curve
    is extended one k past each end so every k in range has a curvature
    estimate. Ties break toward the smallest k. Returns (k_star, curve)
    where curve is [(k, sse), ...] over the requested range.
    """
    ks = sorted(set(int(k) for k in k_range))
    if len(ks) < 2:
        raise InputError("k_range must contain at least two values")
    x = np.stack([np.asarray(v, dtype=np.float64) for _, v in embeddings])
    n = x.shape[0]
    if ks[0] < 2 or ks[-1] > n - 1:
        raise InputError(f"k_range must lie within [2, {n - 1}]")
    if ks != list(range(ks[0], ks[-1] + 1)):
        raise InputError("k_range must be contiguous")

    ks_ext = [ks[0] - 1] + ks + [ks[-1] + 1]
    sse: dict[int, float] = {}
    prev_centroids = None
    for k in ks_ext:
        result = _best_of_inits(x, k, seed + k, max_iter, n_restarts,
                                grow_from=prev_centroids)
        sse[k] = result[2]
        prev_centroids = result[0]
    d2 = [sse[k - 1] - 2 * sse[k] + sse[k + 1] for k in ks]
    k_star = ks[int(np.argmax(d2))]
    return k_star, [(k, sse[k]) for k in ks]


@dataclass
class Projection2D:
    points: dict
    method: str
    seed: int


def _pca_2d(x: np.ndarray) -> np.ndarray:
    centered = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:2]
    if comps.shape[0] < 2:
        comps = np.vstack([comps, np.zeros_like(comps[0])])
    for i in range(2):
        j = int(np.abs(comps[i]).argmax())
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    return centered @ comps.T


def project_2d(embeddings: list[tuple[str, np.ndarray]], method: str = "tsne",
               seed: int = 0, perplexity: float = 30.0,
               n_iter: int = 500) -> Projection2D:
    """Exact t-SNE (or PCA) onto the plane, deterministic per seed."""
    if len(embeddings) < 2:
        raise InputError("need at least 2 points to project")
    ids = [pid for pid, _ in embeddings]
    x = np.stack([np.asarray(v, dtype=np.float64) for _, v in embeddings])
    if method == "pca":
        coords = _pca_2d(x)
    elif method == "tsne":
        from sklearn.manifold import TSNE

        n = x.shape[0]
        perp = min(perplexity, (n - 1) / 3)
        perp = max(perp, 0.5)
        kwargs = dict(n_components=2, method="exact", perplexity=perp,
                      init="random", random_state=seed, learning_rate=200.0)
        try:
            tsne = TSNE(max_iter=n_iter, **kwargs)
        except TypeError:  # older sklearn spells it n_iter
            tsne = TSNE(n_iter=n_iter, **kwargs)
        coords = tsne.fit_transform(x).astype(np.float64)
    else:
        raise InputError(f"unknown projection method '{method}'")
    points = {pid: (float(cx), float(cy)) for pid, (cx, cy) in zip(ids, coords)}
    return Projection2D(points=points, method=method, seed=seed)


def _on_segment(px, py, ax, ay, bx, by) -> bool:
    cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    if cross != 0.0:
        return False
    return min(ax, bx) <= px <= max(ax, bx) and min(ay, by) <= py <= max(ay, by)


def point_in_polygon(point, polygon) -> bool:
    """Even-odd rule; points exactly on an edge count as inside."""
    px, py = point
    inside = False
    n = len(polygon)
    for i in range(n):
        ax, ay = polygon[i]
        bx, by = polygon[(i + 1) % n]
        if _on_segment(px, py, ax, ay, bx, by):
            return True
        if (ay > py) != (by > py):
            x_cross = ax + (py - ay) * (bx - ax) / (by - ay)
            if px < x_cross:
                inside = not inside
    return inside


def lasso_select(projection: Projection2D, polygon) -> list[str]:
    """Ids whose projected point falls inside the polygon."""
    if len(polygon) < 3:
        raise InputError("lasso polygon needs at least 3 vertices")
    return [pid for pid, pt in projection.points.items()
            if point_in_polygon(pt, polygon)]


def related_images(query_id: str, pool: list[tuple[str, np.ndarray]],
                   k: int = 100) -> list[str]:
    """Top-k pool ids by cosine similarity to the query, query excluded."""
    if k < 1:
        raise InputError("k must be >= 1")
    lookup = {pid: vec for pid, vec in pool}
    if query_id not in lookup:
        raise InputError(f"query '{query_id}' not in pool")
    query = lookup[query_id]
    scored = [(cosine_similarity(vec, query), i, pid)
              for i, (pid, vec) in enumerate(pool) if pid != query_id]
    scored.sort(key=lambda t: (-t[0], t[1]))
    return [pid for _, _, pid in scored[:k]]


def pool_digest(embeddings: list[tuple[str, np.ndarray]]) -> str:
    """Content hash used to cache projections by (input, method, seed)."""
    h = hashlib.sha256()
    for pid, vec in embeddings:
        h.update(str(pid).encode("utf-8"))
        h.update(np.ascontiguousarray(vec, dtype="<f8").tobytes())
    return h.hexdigest()
