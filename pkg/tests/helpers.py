"""Shared test helpers: independent brute-force oracles and flow drivers.

Oracles here deliberately re-derive results with different code paths
(plain loops, Fraction arithmetic, a +y ray cast) so they cannot share a
transcription bug with the production implementations they check.
"""

from fractions import Fraction

import numpy as np

from owclip.evaluation import iou


def oracle_ap(dets, gts, thr=0.5):
    """All-point AP via exact rational arithmetic."""
    if not gts:
        return None
    if not dets:
        return 0.0
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, dets[i].det_id))
    claimed = set()
    flags = []
    for i in order:
        det = dets[i]
        best, best_j = 0.0, None
        for j, gt in enumerate(gts):
            if j in claimed or gt.image != det.image:
                continue
            ov = iou(det.box, gt.box)
            if ov > best:
                best, best_j = ov, j
        if best_j is not None and best >= thr:
            claimed.add(best_j)
            flags.append(1)
        else:
            flags.append(0)

    n_gt = len(gts)
    points = []
    tp = 0
    for rank, flag in enumerate(flags, start=1):
        tp += flag
        points.append((Fraction(tp, n_gt), Fraction(tp, rank)))
    area = Fraction(0)
    prev_recall = Fraction(0)
    for idx, (recall, _) in enumerate(points):
        if recall == prev_recall:
            continue
        area += (recall - prev_recall) * max(p for _, p in points[idx:])
        prev_recall = recall
    return float(area)


def oracle_filter(records, low, high):
    """Set-membership filter, unordered."""
    return {r.proposal_id for r in records if low <= r.score <= high}


def oracle_related(query_id, pool, k):
    """Full sort by (cosine to query, pool index)."""
    lookup = dict(pool)
    q = np.asarray(lookup[query_id], dtype=float)
    qn = q / np.linalg.norm(q)
    scored = []
    for idx, (pid, vec) in enumerate(pool):
        if pid == query_id:
            continue
        v = np.asarray(vec, dtype=float)
        scored.append((-float(v @ qn / np.linalg.norm(v)), idx, pid))
    scored.sort()
    return [pid for _, _, pid in scored[:k]]


def oracle_point_in_polygon(point, polygon):
    """Even-odd with a +y ray (production casts along +x); boundary inside."""
    px, py = point
    n = len(polygon)
    inside = False
    for i in range(n):
        ax, ay = polygon[i]
        bx, by = polygon[(i + 1) % n]
        cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
        if cross == 0.0 and min(ax, bx) <= px <= max(ax, bx) \
                and min(ay, by) <= py <= max(ay, by):
            return True
        if (ax > px) != (bx > px):
            y_cross = ay + (px - ax) * (by - ay) / (bx - ax)
            if py < y_cross:
                inside = not inside
    return inside


def annotate_class(wb, corpus, label, n_hard=3, select=(0, 1)):
    """Oracle-curated workbench session for one class."""
    session = wb.create_session(label)
    wb.select_session_phrases(session.session_id, list(select))
    cands = wb.set_ranges(session.session_id, -1.0, 1.0, -1.0, 1.0)
    hard = [pid for pid in cands["hard"] if corpus.gt[pid] == label][:n_hard]
    hard_set = set(hard)
    to_delete = [pid for pid in cands["simple"]
                 if corpus.gt[pid] != label or pid in hard_set]
    wb.annotate(session.session_id, "delete", to_delete)
    wb.annotate(session.session_id, "reserve", hard)
    wb.finalize_session(session.session_id)
    return session.session_id


def state_dump(wb) -> bytes:
    """Canonical byte serialization of all durable workbench state."""
    import json

    payload = {
        "proposals": sorted((p.to_json() for p in wb.proposals.values()),
                            key=lambda d: d["proposal_id"]),
        "pools": {"known": wb.known, "unknown": wb.unknown},
        "classes": [{
            "label": e.label, "episode_id": e.episode_id, "phrases": e.phrases,
            "vector": e.context_vector.tobytes().hex(),
        } for e in wb.source.entries],
        "episodes": [{
            "id": e.episode_id, "classes": e.class_indices,
            "fingerprint": e.frozen_fingerprint,
            "hyperparams": e.hyperparams.__dict__,
            "prompt": e.prompt_block.tokens_per_layer.tobytes().hex()
            if e.prompt_block else None,
        } for e in wb.episodes],
        "sessions": {sid: s.to_json() for sid, s in wb.sessions.items()},
        "embeddings": {pid: v.tobytes().hex() for pid, v in wb.embeddings.items()},
    }
    return json.dumps(payload, sort_keys=True).encode()
