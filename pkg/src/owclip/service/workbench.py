"""The annotation/training workbench behind the HTTP API and CLI.

Owns the full loop state: ingested proposals and their embeddings, the
known/unknown pools, annotation sessions, the class feature source, and the
episode history. Every mutation is persisted to the data dir (JSONL event
log per session plus JSON snapshots), so a restarted workbench reloads the
identical state.

Routing always scores the embeddings computed at ingest time with the base
backend. Together with the freeze contract this keeps every recognition
score of an earlier episode bit-stable across later ones.
"""

from __future__ import annotations

import hashlib
import threading
from pathlib import Path

import numpy as np

from ..data import Proposal, load_manifest
from ..discovery import (Projection2D, lasso_select, pool_digest, project_2d,
                         related_images)
from ..encoders import (HashTextEncoder, PrecomputedEmbeddingBackend,
                        ToyPixelBackend)
from ..errors import (ConflictError, IngestError, InputError, NoPhrasesError,
                      StateError)
from ..evaluation import Detection, EvalResult, GroundTruth, evaluate_detections
from ..phrases import (HttpChatProvider, MockLLMProvider, PhraseList,
                       generate_phrases, select_phrases)
from ..refine import (SimilarityRecord, ThresholdRanges, apply_annotation,
                      default_ranges, density_curve, filter_candidates,
                      score_pool)
from ..smoothing import (Difficulty, build_target, make_train_samples,
                         warn_if_inversion_possible)
from ..store import read_embedding_store, write_embedding_store
from ..toy_vit import ToyImageEncoder, init_prompt_block
from ..tuner import (ClassFeatureSource, ClassEntry, Episode, Hyperparams,
                     TrainReport, classify, init_class_entry,
                     load_episode_checkpoint, parameter_fingerprint,
                     route_proposal, save_episode_checkpoint, train_episode)
from ..vectors import l2_normalize
from .config import WorkbenchConfig
from .persistence import append_event, atomic_write_json, read_json

ABLATION_MODES = (None, "full", "wo-PhraseSelection", "wo-LLM",
                  "wo-Differentiation", "wo-CS")


class Session:
    def __init__(self, session_id: str, class_label: str, phrase_list: PhraseList,
                 records: list[SimilarityRecord], ranges: ThresholdRanges):
        self.session_id = session_id
        self.class_label = class_label
        self.phrase_list = phrase_list
        self.records = records
        self.ranges = ranges
        self.accepted_simple: list[str] = []
        self.accepted_hard: list[str] = []
        self.state = "open"
        self.version = 0

    def candidates(self, ranges: ThresholdRanges | None = None) -> dict:
        r = (ranges or self.ranges).validate()
        return {"simple": filter_candidates(self.records, r.simple),
                "hard": filter_candidates(self.records, r.hard)}

    def to_json(self) -> dict:
        return {
            "session_id": self.session_id,
            "class_label": self.class_label,
            "phrase_list": self.phrase_list.to_json(),
            "records": [[r.proposal_id, r.score, r.relative_score] for r in self.records],
            "ranges": [self.ranges.l_s, self.ranges.h_s, self.ranges.l_h, self.ranges.h_h],
            "accepted_simple": self.accepted_simple,
            "accepted_hard": self.accepted_hard,
            "state": self.state,
            "version": self.version,
        }

    @classmethod
    def from_json(cls, row: dict) -> "Session":
        session = cls(
            session_id=row["session_id"],
            class_label=row["class_label"],
            phrase_list=PhraseList.from_json(row["phrase_list"]),
            records=[SimilarityRecord(pid, s, rs) for pid, s, rs in row["records"]],
            ranges=ThresholdRanges(*row["ranges"]),
        )
        session.accepted_simple = list(row["accepted_simple"])
        session.accepted_hard = list(row["accepted_hard"])
        session.state = row["state"]
        session.version = row["version"]
        return session


class Workbench:
    def __init__(self, config: WorkbenchConfig):
        self.config = config.validate()
        self.data_dir = Path(config.data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        (self.data_dir / "sessions").mkdir(exist_ok=True)
        (self.data_dir / "episodes").mkdir(exist_ok=True)

        self.text_encoder = HashTextEncoder(dim=config.dim, seed=config.seed)
        self.encoder: ToyImageEncoder | None = None
        if config.backend == "toy":
            from ..toy_vit import EncoderConfig

            self.encoder = ToyImageEncoder(EncoderConfig(seed=config.seed))
            self.image_backend = ToyPixelBackend(self.encoder)
        else:
            self.image_backend = None  # bound to the store at ingest

        if config.llm_provider == "http":
            self.provider = HttpChatProvider(config.llm_endpoint, config.llm_model,
                                             config.llm_api_key_env)
        else:
            self.provider = MockLLMProvider()

        self.proposals: dict[str, Proposal] = {}
        self.embeddings: dict[str, np.ndarray] = {}
        self.known: dict[str, dict] = {}
        self.unknown: list[str] = []
        self.source = ClassFeatureSource(dim=config.dim)
        self.episodes: list[Episode] = []
        self.sessions: dict[str, Session] = {}
        self._session_counter = 0
        self._projection_cache: dict = {}
        self._train_mutex = threading.Lock()
        self._state_lock = threading.RLock()

        atomic_write_json(self.data_dir / "config.json", config.to_json())
        self._restore()

    # ---- persistence ----

    def _store_path(self) -> Path:
        return self.data_dir / "embeddings.owemb"

    def _save_pools(self):
        atomic_write_json(self.data_dir / "pools.json",
                          {"known": self.known, "unknown": self.unknown})

    def _save_classes(self):
        atomic_write_json(self.data_dir / "classes.json", {
            "dim": self.source.dim,
            "entries": [{
                "label": e.label,
                "vector": [float(v) for v in e.context_vector],
                "phrases": e.phrases,
                "episode_id": e.episode_id,
            } for e in self.source.entries],
        })

    def _save_proposals(self):
        from ..data import write_manifest

        write_manifest(self.data_dir / "proposals.jsonl", list(self.proposals.values()))

    def _save_session(self, session: Session, event: dict):
        session.version += 1
        append_event(self.data_dir / "sessions" / f"{session.session_id}.events.jsonl",
                     {"version": session.version, **event})
        atomic_write_json(self.data_dir / "sessions" / f"{session.session_id}.json",
                          session.to_json())

    def _restore(self):
        proposals_path = self.data_dir / "proposals.jsonl"
        if proposals_path.exists():
            for p in load_manifest(proposals_path):
                self.proposals[p.proposal_id] = p
        if self._store_path().exists():
            ids, vectors = read_embedding_store(self._store_path())
            for pid, vec in zip(ids, vectors):
                self.embeddings[pid] = l2_normalize(np.asarray(vec, dtype=np.float64))
            if self.config.backend == "precomputed":
                self.image_backend = PrecomputedEmbeddingBackend(
                    dict(zip(ids, vectors)), seed=self.config.seed)
        pools_path = self.data_dir / "pools.json"
        if pools_path.exists():
            pools = read_json(pools_path)
            self.known = pools["known"]
            self.unknown = pools["unknown"]
        classes_path = self.data_dir / "classes.json"
        if classes_path.exists():
            for row in read_json(classes_path)["entries"]:
                self.source.add(ClassEntry(
                    label=row["label"],
                    context_vector=np.array(row["vector"], dtype=np.float64),
                    phrases=list(row["phrases"]), episode_id=row["episode_id"]))
        for path in sorted((self.data_dir / "episodes").glob("ep*.ckpt")):
            header, _, prompt, fingerprint = load_episode_checkpoint(path)
            block = None
            if prompt is not None:
                from ..toy_vit import PromptBlock

                block = PromptBlock(header["episode_id"], prompt).freeze()
            self.episodes.append(Episode(
                episode_id=header["episode_id"],
                class_indices=list(header["class_indices"]),
                hyperparams=Hyperparams(**header["hyperparams"]),
                prompt_block=block, frozen_fingerprint=fingerprint,
                finalized=header["finalized"]))
        for path in sorted((self.data_dir / "sessions").glob("s*.json")):
            session = Session.from_json(read_json(path))
            self.sessions[session.session_id] = session
            num = int(session.session_id.lstrip("s"))
            self._session_counter = max(self._session_counter, num + 1)

    # ---- ingest ----

    def ingest(self, manifest_path, store_path=None) -> dict:
        """Load proposals, compute/copy embeddings, route the train split."""
        with self._state_lock:
            proposals = load_manifest(manifest_path)
            new = [p for p in proposals if p.proposal_id not in self.proposals]
            if len(new) != len(proposals):
                dupes = [p.proposal_id for p in proposals if p.proposal_id in self.proposals]
                raise IngestError(f"proposals already ingested: {dupes[:5]}")

            store_path = store_path or self.config.store_path
            if self.config.backend == "precomputed":
                if store_path is None:
                    raise IngestError("precomputed backend requires a store_path")
                ids, vectors = read_embedding_store(store_path)
                lookup = dict(zip(ids, vectors))
                missing = [p.proposal_id for p in new if p.proposal_id not in lookup]
                if missing:
                    raise IngestError(f"no stored embedding for proposals: {missing[:5]}")
                fresh = {p.proposal_id: lookup[p.proposal_id] for p in new}
            else:
                fresh = {}
                for p in new:
                    if not Path(p.image_path).exists():
                        raise IngestError(f"image not found for {p.proposal_id}: {p.image_path}")
                    fresh[p.proposal_id] = self.image_backend.embed_proposal(p).astype(np.float32)

            for p in new:
                self.proposals[p.proposal_id] = p
            all_ids = list(self.proposals.keys())
            if not all_ids:
                self._save_proposals()
                self._save_pools()
                return {"n_proposals": 0, "n_train": 0, "n_eval": 0,
                        "n_known": 0, "n_unknown": len(self.unknown)}
            matrix = np.stack([
                np.asarray(self.embeddings[pid], dtype=np.float32) if pid in self.embeddings
                else np.asarray(fresh[pid], dtype=np.float32) for pid in all_ids])
            write_embedding_store(self._store_path(), all_ids, matrix)
            ids, vectors = read_embedding_store(self._store_path())
            self.embeddings = {pid: l2_normalize(np.asarray(v, dtype=np.float64))
                               for pid, v in zip(ids, vectors)}
            if self.config.backend == "precomputed":
                self.image_backend = PrecomputedEmbeddingBackend(
                    dict(zip(ids, vectors)), seed=self.config.seed)

            routed_known = 0
            for p in new:
                if p.split != "train":
                    continue
                decision = route_proposal(self.embeddings[p.proposal_id], self.source,
                                          self.config.t_threshold, self.config.temperature)
                if decision.known:
                    self.known[p.proposal_id] = {
                        "label": decision.label,
                        "score": float(classify(self.embeddings[p.proposal_id], self.source,
                                                self.config.temperature).scores[decision.class_index]),
                        "prob": decision.prob,
                    }
                    routed_known += 1
                else:
                    self.unknown.append(p.proposal_id)
            self._projection_cache.clear()
            self._save_proposals()
            self._save_pools()
            return {
                "n_proposals": len(new),
                "n_train": sum(1 for p in new if p.split == "train"),
                "n_eval": sum(1 for p in new if p.split == "eval"),
                "n_known": routed_known,
                "n_unknown": len(self.unknown),
            }

    # ---- discovery over the unknown pool ----

    def unknown_pool(self) -> list[tuple[str, np.ndarray]]:
        return [(pid, self.embeddings[pid]) for pid in self.unknown]

    def projection(self, method: str = "tsne", seed: int = 0) -> Projection2D:
        pool = self.unknown_pool()
        key = (pool_digest(pool), method, seed)
        cached = self._projection_cache.get(key)
        if cached is None:
            cached = project_2d(pool, method=method, seed=seed)
            self._projection_cache[key] = cached
        return cached

    def lasso(self, polygon, method: str = "tsne", seed: int = 0) -> list[str]:
        return lasso_select(self.projection(method, seed), polygon)

    def related(self, query_id: str, k: int = 100) -> list[str]:
        return related_images(query_id, self.unknown_pool(), k=k)

    # ---- annotation sessions ----

    def _session(self, session_id: str) -> Session:
        if session_id not in self.sessions:
            raise InputError(f"no such session '{session_id}'")
        return self.sessions[session_id]

    def create_session(self, class_label: str) -> Session:
        with self._state_lock:
            if class_label in self.source.labels:
                raise ConflictError(f"class '{class_label}' was already learned")
            for s in self.sessions.values():
                if s.class_label == class_label and s.state == "open":
                    raise ConflictError(f"open session already exists for '{class_label}'")
            if not self.unknown:
                raise InputError("unknown pool is empty; ingest data first")
            phrase_list = generate_phrases(self.provider, class_label,
                                           self.config.n_phrases)
            records = score_pool(self.unknown_pool(), class_label, self.text_encoder)
            session = Session(
                session_id=f"s{self._session_counter:04d}", class_label=class_label,
                phrase_list=phrase_list, records=records,
                ranges=default_ranges(records))
            self._session_counter += 1
            self.sessions[session.session_id] = session
            self._save_session(session, {"event": "created", "label": class_label,
                                         "phrases": phrase_list.phrases})
            return session

    def _check_open(self, session: Session):
        if session.state != "open":
            raise StateError(f"session {session.session_id} is finalized")

    def select_session_phrases(self, session_id: str, indices: list[int]) -> PhraseList:
        with self._state_lock:
            session = self._session(session_id)
            self._check_open(session)
            select_phrases(session.phrase_list, indices)
            self._save_session(session, {"event": "phrases_selected", "indices": list(indices)})
            return session.phrase_list

    def set_ranges(self, session_id: str, l_s: float, h_s: float,
                   l_h: float, h_h: float) -> dict:
        with self._state_lock:
            session = self._session(session_id)
            self._check_open(session)
            session.ranges = ThresholdRanges(l_s, h_s, l_h, h_h).validate()
            self._save_session(session, {"event": "ranges_set",
                                         "ranges": [l_s, h_s, l_h, h_h]})
            return session.candidates()

    def session_density(self, session_id: str, value: str = "score",
                        bandwidth: float | None = None):
        session = self._session(session_id)
        return density_curve(session.records, bandwidth=bandwidth, value=value)

    def annotate(self, session_id: str, mode: str, ids: list[str]) -> list[str]:
        """Delete prunes the Simple candidate set; Reserve picks from the Hard set."""
        with self._state_lock:
            session = self._session(session_id)
            self._check_open(session)
            candidates = session.candidates()
            if mode == "delete":
                accepted = apply_annotation(candidates["simple"], ids, "delete")
                session.accepted_simple = accepted
            elif mode == "reserve":
                accepted = apply_annotation(candidates["hard"], ids, "reserve")
                session.accepted_hard = accepted
            else:
                raise InputError(f"mode must be 'delete' or 'reserve', got '{mode}'")
            self._save_session(session, {"event": "annotated", "mode": mode,
                                         "selection": list(ids), "accepted": accepted})
            return accepted

    def finalize_session(self, session_id: str, ablation: str | None = None) -> Session:
        with self._state_lock:
            session = self._session(session_id)
            self._check_open(session)
            if not session.phrase_list.selected_phrases():
                if ablation == "wo-PhraseSelection":
                    select_phrases(session.phrase_list,
                                   list(range(len(session.phrase_list.phrases))))
                else:
                    raise NoPhrasesError(
                        f"session {session_id} has no selected phrases")
            if not session.accepted_simple and not session.accepted_hard:
                raise InputError(f"session {session_id} accepted no images")
            session.state = "finalized"
            self._save_session(session, {"event": "finalized", "ablation": ablation})
            return session

    # ---- training ----

    def _phrases_for(self, session: Session, ablation: str | None) -> list[str]:
        if ablation == "wo-LLM":
            return [f"a photo of {session.class_label}"]
        if ablation == "wo-PhraseSelection":
            return list(session.phrase_list.phrases)
        return session.phrase_list.selected_phrases()

    def _episode_samples(self, session: Session, class_index: int, q: int,
                         ablation: str | None, seed_base: int):
        smoothing = self.config.smoothing()
        backend = self.image_backend
        samples = []

        def proposal_seed(pid):
            digest = hashlib.sha256(f"{seed_base}:{pid}".encode()).digest()
            return int.from_bytes(digest[:8], "little")

        for pid in session.accepted_simple:
            proposal = self.proposals[pid]
            if ablation == "wo-CS":
                samples.append(_one_hot_sample(backend, proposal, class_index, q,
                                               Difficulty.SIMPLE))
            else:
                samples.extend(make_train_samples(
                    proposal, class_index, Difficulty.SIMPLE, smoothing.n_crops,
                    smoothing, backend, q, seed=proposal_seed(pid)))
        if ablation == "wo-Differentiation":
            return samples
        for pid in session.accepted_hard:
            proposal = self.proposals[pid]
            if ablation == "wo-CS":
                samples.append(_one_hot_sample(backend, proposal, class_index, q,
                                               Difficulty.HARD))
            else:
                samples.extend(make_train_samples(
                    proposal, class_index, Difficulty.HARD, 0, smoothing,
                    backend, q, seed=proposal_seed(pid)))
        return samples

    def finalize_and_train(self, session_ids: list[str],
                           hyperparams: dict | None = None,
                           ablation: str | None = None):
        """Assemble one episode from finalized sessions, train it, re-route,
        evaluate. Returns (TrainReport, EvalResult)."""
        if ablation not in ABLATION_MODES:
            raise InputError(f"unknown ablation mode '{ablation}'")
        if ablation == "full":
            ablation = None
        if not session_ids:
            raise InputError("no sessions given")
        if not self._train_mutex.acquire(blocking=False):
            raise StateError("a training job is already running")
        try:
            sessions = [self._session(sid) for sid in session_ids]
            for s in sessions:
                if s.state != "finalized":
                    raise StateError(f"session {s.session_id} is not finalized")
            labels = [s.class_label for s in sessions]
            if len(set(labels)) != len(labels):
                raise ConflictError(f"duplicate labels in episode: {labels}")
            taken = set(self.source.labels) & set(labels)
            if taken:
                raise ConflictError(f"labels already learned: {sorted(taken)}")

            hp_values = dict(epochs=self.config.epochs, batch_size=self.config.batch_size,
                             learning_rate=self.config.learning_rate,
                             temperature=self.config.temperature,
                             holdout_fraction=self.config.holdout_fraction,
                             seed=self.config.seed)
            hp_values.update(hyperparams or {})
            hp = Hyperparams(**hp_values).validate()

            episode_id = len(self.episodes)
            k0 = len(self.source)
            q = k0 + len(sessions)
            if q < 2:
                raise InputError(
                    "training needs at least 2 total classes; smoothed targets "
                    "are undefined for Q=1")
            warn_if_inversion_possible(q, 1.0, self.config.epsilon_min)
            warn_if_inversion_possible(q, self.config.d_hard, 1.0)

            new_entries = []
            for s in sessions:
                phrases = self._phrases_for(s, ablation)
                if not phrases:
                    raise NoPhrasesError(f"session {s.session_id} has no usable phrases")
                new_entries.append(init_class_entry(s.class_label, phrases,
                                                    self.text_encoder, episode_id))
            all_samples = []
            for i, s in enumerate(sessions):
                built = self._episode_samples(s, k0 + i, q, ablation,
                                              seed_base=hp.seed + episode_id)
                if not built:
                    raise InputError(f"session {s.session_id} produced no samples")
                all_samples.extend(built)

            frozen_blocks = [e.prompt_block for e in self.episodes
                             if e.prompt_block is not None]
            fingerprint = parameter_fingerprint(self.source, episode_id,
                                                frozen_blocks, self.encoder)
            prompt_block = None
            if self.encoder is not None and self.config.prompt_length > 0:
                prompt_block = init_prompt_block(
                    episode_id, self.encoder.config.layers, self.config.prompt_length,
                    self.encoder.config.d_model, seed=hp.seed + episode_id)
            episode = Episode(episode_id=episode_id,
                              class_indices=list(range(k0, q)),
                              hyperparams=hp, prompt_block=prompt_block,
                              frozen_fingerprint=fingerprint)

            with self._state_lock:
                for entry in new_entries:
                    self.source.add(entry)
            try:
                report = train_episode(all_samples, episode, self.source,
                                       encoder=self.encoder, frozen_blocks=frozen_blocks)
            except Exception:
                with self._state_lock:
                    del self.source.entries[k0:]  # episode admission is all-or-nothing
                raise
            after = parameter_fingerprint(self.source, episode_id, frozen_blocks,
                                          self.encoder)
            assert after == fingerprint, "freeze contract violated"

            with self._state_lock:
                episode.finalized = True
                if prompt_block is not None:
                    prompt_block.freeze()
                self.episodes.append(episode)
                self._reroute_unknown()
                ep_dir = self.data_dir / "episodes"
                save_episode_checkpoint(ep_dir / f"ep{episode_id:04d}.ckpt",
                                        episode, self.source)
                atomic_write_json(ep_dir / f"ep{episode_id:04d}.report.json",
                                  report.to_json())
                with open(ep_dir / f"ep{episode_id:04d}.samples.jsonl", "w") as fh:
                    import json as _json

                    for sample in all_samples:
                        fh.write(_json.dumps(sample.audit_row(), sort_keys=True) + "\n")
                self._save_classes()
                self._save_pools()
                result = self.evaluate()
                atomic_write_json(ep_dir / f"ep{episode_id:04d}.eval.json",
                                  result.to_json())
            return report, result
        finally:
            self._train_mutex.release()

    def _reroute_unknown(self):
        still = []
        for pid in self.unknown:
            decision = route_proposal(self.embeddings[pid], self.source,
                                      self.config.t_threshold, self.config.temperature)
            if decision.known:
                self.known[pid] = {
                    "label": decision.label,
                    "score": float(classify(self.embeddings[pid], self.source,
                                            self.config.temperature).scores[decision.class_index]),
                    "prob": decision.prob,
                }
            else:
                still.append(pid)
        self.unknown = still
        self._projection_cache.clear()

    # ---- evaluation ----

    def evaluate(self, t_threshold: float | None = None) -> EvalResult:
        t = t_threshold if t_threshold is not None else self.config.t_threshold
        eval_props = [p for p in self.proposals.values() if p.split == "eval"]
        learned = set(self.source.labels)
        gts = [GroundTruth(p.image_path, p.box, p.gt_label)
               for p in eval_props if p.gt_label in learned]
        dets = []
        unlearned_total = unlearned_unknown = 0
        for i, p in enumerate(eval_props):
            if len(self.source) == 0:
                break
            decision = route_proposal(self.embeddings[p.proposal_id], self.source,
                                      t, self.config.temperature)
            if p.gt_label not in learned:
                unlearned_total += 1
                unlearned_unknown += int(not decision.known)
            if decision.known:
                dets.append(Detection(p.image_path, p.box, decision.label,
                                      decision.prob, det_id=i))
        if self.episodes:
            current_ids = set(self.episodes[-1].class_indices)
            current = [e.label for i, e in enumerate(self.source.entries) if i in current_ids]
            previous = [e.label for i, e in enumerate(self.source.entries)
                        if i not in current_ids]
        else:
            current, previous = list(learned), []
        result = evaluate_detections(dets, gts, current_labels=current,
                                     previous_labels=previous)
        result.t_threshold = t
        if unlearned_total:
            result.unknown_recall = unlearned_unknown / unlearned_total
        return result

    def group_accuracy(self, labels: list[str]) -> float | None:
        """Fraction of eval proposals of the given classes whose argmax class
        is their gt label. Used by the synthetic benchmark."""
        if not labels or len(self.source) == 0:
            return None
        wanted = set(labels)
        hits = total = 0
        for p in self.proposals.values():
            if p.split != "eval" or p.gt_label not in wanted:
                continue
            row = classify(self.embeddings[p.proposal_id], self.source,
                           self.config.temperature)
            predicted = self.source.entries[int(np.argmax(row.probs))].label
            hits += int(predicted == p.gt_label)
            total += 1
        return hits / total if total else None

    # ---- summaries ----

    def class_summary(self) -> list[dict]:
        return [{"label": e.label, "episode_id": e.episode_id, "phrases": e.phrases}
                for e in self.source.entries]

    def pool_summary(self) -> dict:
        return {"n_proposals": len(self.proposals), "n_known": len(self.known),
                "n_unknown": len(self.unknown), "n_classes": len(self.source),
                "n_episodes": len(self.episodes)}


def _one_hot_sample(backend, proposal, class_index: int, q: int,
                    difficulty: Difficulty):
    from ..smoothing import TrainSample

    tokens_for = getattr(backend, "tokens_for", None)
    return TrainSample(
        embedding=backend.embed_proposal(proposal), class_index=class_index,
        epsilon=1.0, difficulty=difficulty,
        target=build_target(q, 1.0, 1.0, class_index),
        proposal_id=proposal.proposal_id,
        tokens=tokens_for(proposal) if tokens_for else None)
