"""Acceptance suite: one test per criterion, each printing a pass line with
its runtime. Budgets are asserted, not just observed."""

import hashlib
import math
import time

import numpy as np
import pytest
from helpers import (annotate_class, oracle_ap, oracle_filter,
                     oracle_point_in_polygon, oracle_related, state_dump)

from owclip.discovery import kmeans, lasso_select, related_images, select_k
from owclip.discovery import Projection2D
from owclip.evaluation import Detection, GroundTruth, average_precision
from owclip.refine import SimilarityRecord, filter_candidates
from owclip.smoothing import build_target, crop_smoothing_loss
from owclip.tuner import gradient_check

pytestmark = pytest.mark.acceptance


class Budget:
    def __init__(self, name, seconds):
        self.name = name
        self.seconds = seconds

    def __enter__(self):
        self.start = time.monotonic()
        return self

    def __exit__(self, exc_type, *rest):
        elapsed = time.monotonic() - self.start
        if exc_type is None:
            assert elapsed < self.seconds, (
                f"{self.name} took {elapsed:.1f}s, budget {self.seconds}s")
            print(f"\nACCEPTANCE PASS: {self.name} ({elapsed:.1f}s)")
        return False


def test_eq1_target_suite():
    with Budget("Eq.1 target suite (sums, positivity, monotonicity, CE limit)", 5):
        rng = np.random.default_rng(0)
        for _ in range(10_000):
            q = int(rng.integers(2, 50))
            d = float(rng.uniform(0.01, 1.0))
            eps = float(rng.uniform(1e-6, 1.0))
            gt = int(rng.integers(q))
            t = build_target(q, d, eps, gt)
            assert abs(t.gt_mass + (q - 1) * t.other_mass - 1.0) < 1e-12
            assert t.gt_mass >= 0.0 and t.other_mass >= 0.0
            # strictly increasing in epsilon
            eps_hi = float(min(1.0, eps + rng.uniform(1e-6, 0.2)))
            if eps_hi > eps:
                assert build_target(q, d, eps_hi, gt).gt_mass > t.gt_mass
        # with D = eps = 1 the loss is plain cross-entropy for every probs vector
        for _ in range(200):
            q = int(rng.integers(2, 12))
            gt = int(rng.integers(q))
            probs = rng.dirichlet(np.ones(q))
            t = build_target(q, 1.0, 1.0, gt)
            ce = -math.log(max(probs[gt], 1e-12))
            assert abs(crop_smoothing_loss(t, probs) - ce) < 1e-12


def test_gradient_correctness_full_pipeline():
    from test_tuner import full_pipeline_loss

    with Budget("gradient correctness, 20 seeds, full toy pipeline", 60):
        worst = 0.0
        for seed in range(20):
            loss, params = full_pipeline_loss(seed)
            err = gradient_check(loss, params, h=1e-5)
            worst = max(worst, err)
        assert worst < 1e-4, f"max relative error {worst:.2e}"


def _mini_workbench(tmp_path, seed=0):
    from owclip.service.bench import make_synthetic_corpus
    from owclip.service.config import load_config
    from owclip.service.workbench import Workbench

    corpus = make_synthetic_corpus(tmp_path / "corpus", n_known=3, n_unknown=2,
                                   dim=16, train_per_class=30, eval_per_class=10,
                                   sigma=0.2, seed=seed)
    config = load_config(None, data_dir=str(tmp_path / "wb"), backend="precomputed",
                         store_path=str(corpus.store_path), dim=16, seed=seed,
                         epochs=8, t_threshold=0.9)
    wb = Workbench(config)
    wb.ingest(corpus.manifest_path)
    return corpus, wb


def test_freeze_contract(tmp_path):
    from owclip.tuner import classify

    with Budget("freeze contract across two episodes (hash + scores)", 30):
        corpus, wb = _mini_workbench(tmp_path)
        sids = [annotate_class(wb, corpus, lab) for lab in corpus.known_labels]
        wb.finalize_and_train(sids)

        ep1_hash = hashlib.sha256(wb.source.params_bytes(before_episode=1)).hexdigest()
        ep1_indices = list(wb.episodes[0].class_indices)
        eval_pids = [p.proposal_id for p in wb.proposals.values() if p.split == "eval"]
        scores_before = {
            pid: classify(wb.embeddings[pid], wb.source, 0.07).scores[ep1_indices]
            for pid in eval_pids}

        sids2 = [annotate_class(wb, corpus, lab) for lab in corpus.unknown_labels]
        wb.finalize_and_train(sids2)

        assert hashlib.sha256(
            wb.source.params_bytes(before_episode=1)).hexdigest() == ep1_hash
        for pid in eval_pids:
            after = classify(wb.embeddings[pid], wb.source, 0.07).scores[ep1_indices]
            assert np.max(np.abs(after - scores_before[pid])) < 1e-9


def test_filtering_ranking_oracles():
    rng = np.random.default_rng(42)
    with Budget("filter/related/lasso/AP vs brute-force oracles, 100 instances each", 60):
        # filter_candidates
        for _ in range(100):
            n = int(10 ** rng.uniform(1, 4))
            scores = rng.uniform(-1, 1, size=n)
            records = [SimilarityRecord(f"p{i}", float(s), 1.0)
                       for i, s in enumerate(scores)]
            low = float(rng.uniform(-1, 1))
            high = low + float(rng.uniform(0, 1.5))
            got = filter_candidates(records, (low, high))
            assert set(got) == oracle_filter(records, low, high)
            got_scores = [scores[int(pid[1:])] for pid in got]
            assert all(a >= b for a, b in zip(got_scores, got_scores[1:]))

        # related_images
        for trial in range(100):
            n = int(10 ** rng.uniform(1, 3.5)) + 2
            pool = [(f"p{i}", rng.standard_normal(16)) for i in range(n)]
            k = int(rng.integers(1, n + 3))
            query = f"p{rng.integers(n)}"
            assert related_images(query, pool, k) == oracle_related(query, pool, k)

        # lasso_select
        for trial in range(100):
            n = int(rng.integers(5, 500))
            pts = {f"p{i}": (float(x), float(y))
                   for i, (x, y) in enumerate(rng.uniform(-1, 1, size=(n, 2)))}
            proj = Projection2D(points=pts, method="pca", seed=0)
            poly = [tuple(map(float, v))
                    for v in rng.uniform(-1, 1, size=(int(rng.integers(3, 9)), 2))]
            got = set(lasso_select(proj, poly))
            want = {pid for pid, pt in pts.items() if oracle_point_in_polygon(pt, poly)}
            assert got == want

        # average precision
        for trial in range(100):
            n_gt = int(rng.integers(0, 20))
            n_det = int(rng.integers(0, 100))
            images = [f"im{i}" for i in range(int(rng.integers(1, 5)))]

            def box():
                x1, y1 = rng.uniform(0, 60, 2)
                w, h = rng.uniform(1, 40, 2)
                return (float(x1), float(y1), float(x1 + w), float(y1 + h))

            gts = [GroundTruth(images[rng.integers(len(images))], box(), "c")
                   for _ in range(n_gt)]
            dets = [Detection(images[rng.integers(len(images))], box(), "c",
                              float(rng.uniform(0, 1)), det_id=i)
                    for i in range(n_det)]
            got = average_precision(dets, gts)
            want = oracle_ap(dets, gts)
            if want is None:
                assert got is None
            else:
                assert abs(got - want) < 1e-12


def test_discovery_sse_and_elbow():
    with Budget("k-means SSE non-increasing (50 runs) + elbow recovery (20 seeds)", 120):
        for seed in range(50):
            rng = np.random.default_rng(seed)
            pool = [(f"p{i}", rng.standard_normal(8) * rng.uniform(0.5, 3))
                    for i in range(120)]
            model = kmeans(pool, k=int(rng.integers(2, 10)), seed=seed)
            hist = model.sse_history
            assert all(hist[i + 1] <= hist[i] + 1e-9 for i in range(len(hist) - 1))

        hits = 0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            basis = np.linalg.qr(rng.standard_normal((16, 8)))[0].T
            pool = [(f"c{c}_{i}", 6.0 * basis[c] + 0.4 * rng.standard_normal(16))
                    for c in range(8) for i in range(25)]
            k_star, _ = select_k(pool, range(2, 13), seed=seed)
            hits += int(k_star == 8)
        assert hits >= 18, f"elbow found the true k in only {hits}/20 seeds"


def test_mini_owod_end_to_end(tmp_path):
    from owclip.service.bench import run_mini_owod

    with Budget("synthetic mini open-world loop over the API", 300):
        result = run_mini_owod(tmp_path, seed=0)
        gap = result.current_accuracy - result.oracle_accuracy
        drop = result.known_accuracy_before - result.known_accuracy_after
        print(f"\n  current {result.current_accuracy:.4f} vs oracle "
              f"{result.oracle_accuracy:.4f} (gap {gap:+.4f}); "
              f"forgetting {drop:+.4f}")
        assert gap >= -0.02, "current-known accuracy fell more than 2 points below oracle"
        assert drop <= 0.02, "previously-known accuracy dropped more than 2 points"


def test_crop_smoothing_effect(tmp_path):
    from owclip.service.bench import run_completeness_probe

    with Budget("completeness correlation: full vs wo-CS on shared seeds", 300):
        for seed in (0, 1, 2):
            full = run_completeness_probe(seed, "full")
            wocs = run_completeness_probe(seed, "wo-CS")
            print(f"\n  seed {seed}: full rho {full.spearman:.3f}, "
                  f"wo-CS rho {wocs.spearman:.3f}")
            assert full.spearman >= 0.8
            assert wocs.spearman < full.spearman


def test_persistence_round_trip(tmp_path):
    from owclip.service.workbench import Workbench

    with Budget("crash-restart byte-exact state, 20 randomized sessions", 30):
        corpus, wb = _mini_workbench(tmp_path, seed=5)
        rng = np.random.default_rng(11)
        trained = [annotate_class(wb, corpus, lab) for lab in corpus.known_labels[:2]]
        wb.finalize_and_train(trained, hyperparams={"epochs": 2})
        for i in range(20):
            s = wb.create_session(f"label{i:02d}")
            n = len(s.phrase_list.phrases)
            picks = rng.choice(n, size=int(rng.integers(1, 4)), replace=False)
            wb.select_session_phrases(s.session_id, sorted(int(v) for v in picks))
            lo, hi = sorted(rng.uniform(-1, 1, 2).tolist())
            cands = wb.set_ranges(s.session_id, lo, hi, lo, hi)
            if cands["simple"] and i % 3 == 0:
                cut = int(rng.integers(0, len(cands["simple"]) + 1))
                wb.annotate(s.session_id, "delete", cands["simple"][:cut])
            if cands["hard"] and i % 3 == 1:
                cut = int(rng.integers(0, len(cands["hard"]) + 1))
                wb.annotate(s.session_id, "reserve", cands["hard"][:cut])

        reloaded = Workbench(wb.config)
        assert state_dump(reloaded) == state_dump(wb)
        ckpt = wb.data_dir / "episodes" / "ep0000.ckpt"
        before = ckpt.read_bytes()
        from owclip.tuner import save_episode_checkpoint

        save_episode_checkpoint(ckpt, reloaded.episodes[0], reloaded.source)
        assert ckpt.read_bytes() == before
