"""Synthetic end-to-end benchmark.

Builds a Gaussian mini open-world corpus (known + unknown classes on
orthogonal unit centroids), then a scripted annotator drives the real HTTP
API through the whole loop: project, lasso a cluster, name it, pick mock
phrases, widen the threshold filter, curate with Delete/Reserve, finalize,
train, evaluate. Ground truth plays the role of the human eye.

Also hosts the completeness probe: eval embeddings interpolated between a
class centroid and background noise, checking that the trained model's
ground-truth probability tracks completeness.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..data import Proposal, write_manifest
from ..discovery import pool_digest
from ..encoders import PrecomputedEmbeddingBackend
from ..errors import StateError
from ..smoothing import Difficulty, SmoothingConfig, build_target, make_train_samples
from ..store import write_embedding_store
from ..tuner import (ClassEntry, ClassFeatureSource, Episode, Hyperparams,
                     classify, train_episode)
from ..vectors import l2_normalize
from .config import load_config
from .workbench import Workbench

N_KNOWN_DEFAULT = 8
N_UNKNOWN_DEFAULT = 4
SIGMA_DEFAULT = 0.2
# The hash text backend has no cross-modal alignment, so context vectors
# start from random directions rather than class-informative ones. A mild
# training temperature keeps softmax gradients alive long enough for the
# vectors to reach their class means within the fixed 20-epoch budget.
BENCH_TEMPERATURE = 0.3


@dataclass
class SyntheticCorpus:
    dim: int
    known_labels: list[str]
    unknown_labels: list[str]
    centroids: dict[str, np.ndarray]
    gt: dict[str, str]
    manifest_path: Path
    store_path: Path
    train_ids: dict[str, list[str]] = field(default_factory=dict)
    eval_ids: dict[str, list[str]] = field(default_factory=dict)

    @property
    def labels(self) -> list[str]:
        return self.known_labels + self.unknown_labels


def make_synthetic_corpus(out_dir, n_known: int = N_KNOWN_DEFAULT,
                          n_unknown: int = N_UNKNOWN_DEFAULT, dim: int = 16,
                          train_per_class: int = 200, eval_per_class: int = 50,
                          sigma: float = SIGMA_DEFAULT, seed: int = 0) -> SyntheticCorpus:
    """Gaussian classes on orthonormal centroids, written as manifest + store."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n_classes = n_known + n_unknown
    basis = np.linalg.qr(rng.standard_normal((dim, n_classes)))[0].T
    labels = [f"class{i:02d}" for i in range(n_classes)]

    corpus = SyntheticCorpus(
        dim=dim, known_labels=labels[:n_known], unknown_labels=labels[n_known:],
        centroids={lab: basis[i] for i, lab in enumerate(labels)},
        gt={}, manifest_path=out_dir / "manifest.jsonl",
        store_path=out_dir / "corpus.owemb")

    proposals, ids, vectors = [], [], []
    offset = 0
    for lab in labels:
        corpus.train_ids[lab] = []
        corpus.eval_ids[lab] = []
        for split, count, tag in (("train", train_per_class, "tr"),
                                  ("eval", eval_per_class, "ev")):
            for i in range(count):
                pid = f"{lab}_{tag}{i:03d}"
                vec = l2_normalize(corpus.centroids[lab] + sigma * rng.standard_normal(dim))
                ids.append(pid)
                vectors.append(vec)
                corpus.gt[pid] = lab
                (corpus.train_ids if split == "train" else corpus.eval_ids)[lab].append(pid)
                # disjoint boxes so detections only ever match their own row
                box = (float(offset), 0.0, float(offset + 100), 100.0)
                offset += 200
                proposals.append(Proposal(proposal_id=pid, image_path="synthetic://pool",
                                          box=box, split=split,
                                          gt_label=lab if split == "eval" else lab))
    write_manifest(corpus.manifest_path, proposals)
    write_embedding_store(corpus.store_path, ids,
                          np.stack(vectors).astype(np.float32))
    return corpus


def centroid_oracle_accuracy(corpus: SyntheticCorpus, backend: PrecomputedEmbeddingBackend,
                             target_labels: list[str]) -> float:
    """Nearest-centroid classifier fit on train embeddings, scored on the
    eval split of the target classes (argmax over every class)."""
    cents = {}
    for lab in corpus.labels:
        vecs = np.stack([backend.embed_proposal(pid) for pid in corpus.train_ids[lab]])
        cents[lab] = l2_normalize(vecs.mean(axis=0))
    order = corpus.labels
    hits = total = 0
    for lab in target_labels:
        for pid in corpus.eval_ids[lab]:
            emb = backend.embed_proposal(pid)
            sims = [float(emb @ cents[c]) for c in order]
            hits += int(order[int(np.argmax(sims))] == lab)
            total += 1
    return hits / total


def _convex_hull(points: np.ndarray) -> list[tuple[float, float]]:
    """Andrew's monotone chain, padded outward a little for the lasso gesture."""
    pts = sorted(map(tuple, points))
    if len(pts) <= 2:
        pts = list(pts)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = np.array(lower[:-1] + upper[:-1], dtype=float)
    if hull.shape[0] < 3:
        base = np.array(pts, dtype=float)
        center = base.mean(axis=0)
        hull = np.array([center + [1e-3, 1e-3], center - [1e-3, 1e-3],
                         center + [1e-3, -1e-3]])
    center = hull.mean(axis=0)
    padded = center + (hull - center) * 1.05
    return [(float(x), float(y)) for x, y in padded]


class ScriptedAnnotator:
    """Drives the workbench HTTP API the way Fig.-7-style users would,
    with corpus ground truth standing in for the human's judgment."""

    def __init__(self, client, corpus: SyntheticCorpus, seed: int = 0,
                 n_hard: int = 10, projection_method: str = "pca"):
        self.client = client
        self.corpus = corpus
        self.seed = seed
        self.n_hard = n_hard
        self.projection_method = projection_method

    def _get(self, path, **params):
        resp = self.client.get(path, params=params)
        assert resp.status_code == 200, f"GET {path}: {resp.status_code} {resp.text}"
        return resp.json()

    def _post(self, path, payload):
        resp = self.client.post(path, json=payload)
        assert resp.status_code == 200, f"POST {path}: {resp.status_code} {resp.text}"
        return resp.json()

    def identify_cluster_label(self, lasso_ids: list[str]) -> str:
        votes: dict[str, int] = {}
        for pid in lasso_ids:
            lab = self.corpus.gt[pid]
            votes[lab] = votes.get(lab, 0) + 1
        return max(votes, key=votes.get)

    def annotate_class(self, label: str) -> str:
        """One full session: lasso the cluster, name it, pick phrases, filter,
        curate, finalize. Returns the session id."""
        proj = self._get("/projection", seed=self.seed, method=self.projection_method)
        coords = {p["id"]: (p["x"], p["y"]) for p in proj["points"]}
        member_pts = np.array([coords[pid] for pid in coords
                               if self.corpus.gt[pid] == label])
        lasso = self._post("/lasso", {"polygon": _convex_hull(member_pts),
                                      "method": self.projection_method,
                                      "seed": self.seed})
        assert self.identify_cluster_label(lasso["ids"]) == label

        session = self._post("/sessions", {"label": label})
        sid = session["session_id"]
        self._post(f"/sessions/{sid}/phrases/select", {"indices": [0, 1, 2]})

        # open the filter all the way, then curate by eye (= ground truth)
        cands = self._get(f"/sessions/{sid}/candidates",
                          ls=-1.0, hs=1.0, lh=-1.0, hh=1.0)
        self._get(f"/sessions/{sid}/density")
        hard_ids = [pid for pid in cands["hard"]
                    if self.corpus.gt[pid] == label][:self.n_hard]
        hard_set = set(hard_ids)
        to_delete = [pid for pid in cands["simple"]
                     if self.corpus.gt[pid] != label or pid in hard_set]
        self._post(f"/sessions/{sid}/annotate", {"mode": "delete", "ids": to_delete})
        self._post(f"/sessions/{sid}/annotate", {"mode": "reserve", "ids": hard_ids})
        self._post(f"/sessions/{sid}/finalize", {})
        return sid

    def train_episode(self, session_ids: list[str], hyperparams: dict | None = None,
                      ablation: str | None = None, timeout: float = 300.0) -> dict:
        self._post("/train", {"session_ids": session_ids,
                              "hyperparams": hyperparams or {},
                              "ablation": ablation})
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            status = self._get("/train/status")
            if status["state"] == "done":
                return status
            if status["state"] == "failed":
                raise StateError(f"training failed: {status['error']}")
            time.sleep(0.05)
        raise StateError("training did not finish in time")


@dataclass
class MiniOwodResult:
    known_accuracy_before: float
    known_accuracy_after: float
    current_accuracy: float
    oracle_accuracy: float
    eval_after: dict
    reports: list[dict]

    def to_json(self) -> dict:
        return {
            "known_accuracy_before": self.known_accuracy_before,
            "known_accuracy_after": self.known_accuracy_after,
            "forgetting": self.known_accuracy_before - self.known_accuracy_after,
            "current_accuracy": self.current_accuracy,
            "oracle_accuracy": self.oracle_accuracy,
            "eval_after": self.eval_after,
            "reports": self.reports,
        }


def run_mini_owod(workdir, seed: int = 0, ablation: str | None = None,
                  hyperparams: dict | None = None, sigma: float = SIGMA_DEFAULT,
                  n_hard: int = 10) -> MiniOwodResult:
    """Full scripted loop: ingest, annotate episode 1 (known classes), train,
    annotate episode 2 (unknown classes), train, compare accuracies."""
    from fastapi.testclient import TestClient

    from .api import create_app

    workdir = Path(workdir)
    hyperparams = {"temperature": BENCH_TEMPERATURE, **(hyperparams or {})}
    corpus = make_synthetic_corpus(workdir / "corpus", sigma=sigma, seed=seed)
    # strict routing threshold: with softmax probabilities, a mid-range t
    # admits too many unseen-class proposals into the known pool
    config = load_config(None, data_dir=str(workdir / "wb"), backend="precomputed",
                         store_path=str(corpus.store_path), dim=corpus.dim, seed=seed,
                         t_threshold=0.9)
    workbench = Workbench(config)
    app = create_app(workbench)
    client = TestClient(app)
    annotator = ScriptedAnnotator(client, corpus, seed=seed, n_hard=n_hard)

    summary = annotator._post("/ingest", {"manifest_path": str(corpus.manifest_path)})
    assert summary["n_unknown"] == summary["n_train"]  # nothing is known yet

    reports = []
    ep1_sessions = [annotator.annotate_class(lab) for lab in corpus.known_labels]
    status = annotator.train_episode(ep1_sessions, hyperparams, ablation)
    reports.append(status["report"])
    known_before = workbench.group_accuracy(corpus.known_labels)

    ep2_sessions = [annotator.annotate_class(lab) for lab in corpus.unknown_labels]
    status = annotator.train_episode(ep2_sessions, hyperparams, ablation)
    reports.append(status["report"])

    known_after = workbench.group_accuracy(corpus.known_labels)
    current = workbench.group_accuracy(corpus.unknown_labels)
    backend = PrecomputedEmbeddingBackend.from_store(corpus.store_path)
    oracle = centroid_oracle_accuracy(corpus, backend, corpus.unknown_labels)
    return MiniOwodResult(
        known_accuracy_before=known_before, known_accuracy_after=known_after,
        current_accuracy=current, oracle_accuracy=oracle,
        eval_after=status["eval"], reports=reports)


# ---- completeness probe ----

@dataclass
class CompletenessProbe:
    mode: str
    spearman: float
    mean_prob_by_level: dict[float, float]


def run_completeness_probe(seed: int, mode: str = "full", n_classes: int = 6,
                           dim: int = 16, train_per_class: int = 120,
                           eval_per_level: int = 40,
                           sigma: float = 0.1) -> CompletenessProbe:
    """Train on a Gaussian corpus (with or without completeness-aware crops),
    then measure how the gt probability tracks eval completeness.

    Eval points interpolate between the class centroid and fresh unit noise
    at completeness levels 0.2..1.0; the returned Spearman correlation is
    computed per-sample over (completeness, gt probability) pairs.
    """
    from scipy.stats import spearmanr

    if mode not in ("full", "wo-CS"):
        raise ValueError(f"mode must be 'full' or 'wo-CS', got '{mode}'")
    rng = np.random.default_rng(seed)
    basis = np.linalg.qr(rng.standard_normal((dim, n_classes)))[0].T
    labels = [f"c{i}" for i in range(n_classes)]

    vectors = {}
    proposals = {}
    for k, lab in enumerate(labels):
        for i in range(train_per_class):
            pid = f"{lab}_{i}"
            vectors[pid] = l2_normalize(basis[k] + sigma * rng.standard_normal(dim))
            proposals[pid] = Proposal(proposal_id=pid, image_path="synthetic://probe",
                                      box=(0, 0, 1, 1), split="train", gt_label=lab)
    backend = PrecomputedEmbeddingBackend(vectors, seed=seed)

    smoothing = SmoothingConfig()
    samples = []
    for k, lab in enumerate(labels):
        for i in range(train_per_class):
            pid = f"{lab}_{i}"
            if mode == "wo-CS":
                samples.append(_plain_sample(backend, proposals[pid], k, n_classes))
            else:
                samples.extend(make_train_samples(
                    proposals[pid], k, Difficulty.SIMPLE, smoothing.n_crops,
                    smoothing, backend, q=n_classes, seed=(seed, k, i)))

    source = ClassFeatureSource(dim=dim)
    for k, lab in enumerate(labels):
        source.add(ClassEntry(lab, l2_normalize(rng.standard_normal(dim)), [], 0))
    episode = Episode(episode_id=0, class_indices=list(range(n_classes)),
                      hyperparams=Hyperparams(seed=seed, holdout_fraction=0.0))
    train_episode(samples, episode, source)

    levels = [round(0.2 + 0.1 * i, 1) for i in range(9)]
    cs, probs = [], []
    by_level = {lv: [] for lv in levels}
    for lv in levels:
        for k in range(n_classes):
            for _ in range(eval_per_level):
                noise = l2_normalize(rng.standard_normal(dim))
                emb = l2_normalize(lv * basis[k] + (1.0 - lv) * noise)
                p = float(classify(emb, source).probs[k])
                cs.append(lv)
                probs.append(p)
                by_level[lv].append(p)
    rho = float(spearmanr(cs, probs).statistic)
    return CompletenessProbe(
        mode=mode, spearman=rho,
        mean_prob_by_level={lv: float(np.mean(vals)) for lv, vals in by_level.items()})


def _plain_sample(backend, proposal, class_index: int, q: int):
    from ..smoothing import TrainSample

    return TrainSample(embedding=backend.embed_proposal(proposal),
                       class_index=class_index, epsilon=1.0,
                       difficulty=Difficulty.SIMPLE,
                       target=build_target(q, 1.0, 1.0, class_index),
                       proposal_id=proposal.proposal_id)
