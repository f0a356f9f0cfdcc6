"""Video vote protocol: trigger on first detection, count per-class frames,
finish after a patience window with no detections, decide by majority.

A class is counted at most once per frame regardless of duplicate boxes;
any detection at or above the probability threshold resets the patience
counter. Ties and all-zero counts are explicit outcomes routed to manual
review, never broken arbitrarily.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .detmetrics import Detection
from .errors import StateError, ValidationError

IDLE = "idle"
COUNTING = "counting"
FINISHED = "finished"

UNDECIDED = "undecided"
TIE = "tie"

Decision = int | str  # class id, or UNDECIDED / TIE


@dataclass
class VoteSession:
    patience: int = 100
    prob_threshold: float = 0.95
    state: str = IDLE
    counts: dict[int, int] = field(default_factory=dict)
    frames_since_last_detection: int = 0
    frames_seen: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise ValidationError(f"patience must be >= 1, got {self.patience}")
        if not (0.0 <= self.prob_threshold <= 1.0):
            raise ValidationError(f"prob_threshold {self.prob_threshold} outside [0, 1]")

    def count(self, class_id: int) -> int:
        return self.counts.get(class_id, 0)


def session_step(session: VoteSession, frame_dets: Sequence[Detection]) -> VoteSession:
    """Advance the session by one frame; mutates and returns the session."""
    if session.state == FINISHED:
        raise StateError("cannot step a finished session")
    session.frames_seen += 1
    hits = {d.class_id for d in frame_dets if d.probability >= session.prob_threshold}
    if session.state == IDLE:
        if hits:
            session.state = COUNTING
            _tally(session, hits)
        return session
    if hits:
        _tally(session, hits)
        session.frames_since_last_detection = 0
    else:
        session.frames_since_last_detection += 1
        if session.frames_since_last_detection >= session.patience:
            session.state = FINISHED
    return session


def _tally(session: VoteSession, hits: set[int]) -> None:
    for class_id in hits:
        session.counts[class_id] = session.counts.get(class_id, 0) + 1


def session_finish(session: VoteSession) -> VoteSession:
    """Force-finish at end of stream (the patience window may not have elapsed)."""
    session.state = FINISHED
    return session


def session_decision(session: VoteSession, class_group: Iterable[int]) -> Decision:
    """Majority class id within the group, or UNDECIDED / TIE."""
    if session.state != FINISHED:
        raise StateError("decision requested before the session finished")
    group = list(class_group)
    if not group:
        raise ValidationError("empty class group")
    counts = [(session.count(c), c) for c in group]
    top = max(n for n, _ in counts)
    if top == 0:
        return UNDECIDED
    winners = [c for n, c in counts if n == top]
    return winners[0] if len(winners) == 1 else TIE


@dataclass
class SessionResult:
    session: VoteSession
    decisions: dict[str, Decision]
    history: list[list[Detection]]

    def count_rows(self) -> list[tuple[int, int]]:
        return sorted(self.session.counts.items())


def run_session(
    frames: Iterable,
    detector_source: Callable[[object], list[Detection]],
    class_groups: dict[str, Sequence[int]],
    patience: int = 100,
    prob_threshold: float = 0.95,
) -> SessionResult:
    """Replay a frame stream through a fresh session and decide each group.

    ``detector_source`` may be a live model adapter or an annotation replay;
    the stream stops early once the patience window elapses.
    """
    session = VoteSession(patience=patience, prob_threshold=prob_threshold)
    history: list[list[Detection]] = []
    for frame in frames:
        dets = detector_source(frame)
        history.append(dets)
        session_step(session, dets)
        if session.state == FINISHED:
            break
    if session.state != FINISHED:
        session_finish(session)
    decisions = {name: session_decision(session, group) for name, group in class_groups.items()}
    return SessionResult(session=session, decisions=decisions, history=history)


def write_count_csv(result: SessionResult, video: str, path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["video", "class", "frames_counted"])
        for class_id, n in result.count_rows():
            w.writerow([video, class_id, n])


def write_decision_json(video: str, decisions: dict[str, Decision], path: str | os.PathLike) -> None:
    """Decision record: {"video": ..., "<group>": class-or-type | "undecided" | "tie"}."""
    doc: dict[str, object] = {"video": video}
    doc.update(decisions)
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)
