"""Dataset manifest ingestion: proposals emitted by an upstream detector."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import IngestError

SPLITS = ("train", "eval")


@dataclass
class Proposal:
    """One cropped detection region from the frozen proposal generator."""

    proposal_id: str
    image_path: str
    box: tuple[float, float, float, float]  # x1, y1, x2, y2 in pixels
    split: str
    gt_label: str | None = None

    def to_json(self) -> dict:
        return {
            "proposal_id": self.proposal_id,
            "image_path": self.image_path,
            "box": list(self.box),
            "split": self.split,
            "gt_label": self.gt_label,
        }

    @classmethod
    def from_json(cls, row: dict) -> "Proposal":
        return cls(
            proposal_id=row["proposal_id"],
            image_path=row["image_path"],
            box=tuple(row["box"]),
            split=row["split"],
            gt_label=row.get("gt_label"),
        )


def _validate_row(row: dict, line_no: int) -> Proposal:
    for key in ("image_path", "proposal_id", "box", "split"):
        if key not in row:
            raise IngestError(f"line {line_no}: missing field '{key}'")
    box = row["box"]
    if not (isinstance(box, (list, tuple)) and len(box) == 4):
        raise IngestError(f"line {line_no}: box must be [x1, y1, x2, y2]")
    x1, y1, x2, y2 = (float(v) for v in box)
    if not (x1 < x2 and y1 < y2):
        raise IngestError(f"line {line_no}: degenerate box {box} (need x1<x2 and y1<y2)")
    split = row["split"]
    if split not in SPLITS:
        raise IngestError(f"line {line_no}: unknown split '{split}'")
    gt_label = row.get("gt_label")
    if split == "eval" and not gt_label:
        raise IngestError(f"line {line_no}: eval rows require gt_label")
    return Proposal(
        proposal_id=str(row["proposal_id"]),
        image_path=str(row["image_path"]),
        box=(x1, y1, x2, y2),
        split=split,
        gt_label=gt_label,
    )


def load_manifest(path) -> list[Proposal]:
    """Parse a JSONL manifest; raises IngestError with the offending line number."""
    path = Path(path)
    if not path.exists():
        raise IngestError(f"manifest not found: {path}")
    proposals: list[Proposal] = []
    seen: set[str] = set()
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError(f"line {line_no}: invalid JSON ({exc})") from exc
            proposal = _validate_row(row, line_no)
            if proposal.proposal_id in seen:
                raise IngestError(f"line {line_no}: duplicate proposal_id '{proposal.proposal_id}'")
            seen.add(proposal.proposal_id)
            proposals.append(proposal)
    return proposals


def write_manifest(path, proposals: list[Proposal]) -> None:
    with open(path, "w") as fh:
        for p in proposals:
            fh.write(json.dumps(p.to_json()) + "\n")
