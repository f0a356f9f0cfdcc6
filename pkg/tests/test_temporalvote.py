import json

import numpy as np
import pytest

from lineinspect import classes
from lineinspect.detmetrics import BoundingBox, Detection
from lineinspect.errors import StateError, ValidationError
from lineinspect.temporalvote import (
    COUNTING,
    FINISHED,
    IDLE,
    TIE,
    UNDECIDED,
    SessionResult,
    VoteSession,
    run_session,
    session_decision,
    session_finish,
    session_step,
    write_count_csv,
    write_decision_json,
)

BOX = BoundingBox(0.0, 0.0, 5.0, 5.0)


def det(class_id, prob=0.97):
    return Detection(BOX, class_id, prob)


class TestStateMachine:
    def test_idle_empty_frame_stays_idle(self):
        s = VoteSession()
        session_step(s, [])
        assert s.state == IDLE
        assert s.counts == {}

    def test_first_detection_triggers_counting(self):
        s = VoteSession()
        session_step(s, [det(0, 0.97)])
        assert s.state == COUNTING
        assert s.count(0) == 1

    def test_sub_threshold_detection_does_not_trigger(self):
        s = VoteSession(prob_threshold=0.95)
        session_step(s, [det(0, 0.90)])
        assert s.state == IDLE

    def test_hundred_empty_frames_finish(self):
        s = VoteSession(patience=100)
        session_step(s, [det(1)])
        for _ in range(99):
            session_step(s, [])
            assert s.state == COUNTING
        session_step(s, [])
        assert s.state == FINISHED

    def test_detection_resets_patience(self):
        s = VoteSession(patience=5)
        session_step(s, [det(1)])
        for _ in range(4):
            session_step(s, [])
        session_step(s, [det(1)])
        assert s.frames_since_last_detection == 0
        for _ in range(4):
            session_step(s, [])
        assert s.state == COUNTING

    def test_class_counted_once_per_frame(self):
        s = VoteSession()
        session_step(s, [det(2), det(2), det(2)])
        assert s.count(2) == 1

    def test_stepping_finished_session_raises(self):
        s = VoteSession(patience=1)
        session_step(s, [det(0)])
        session_step(s, [])
        assert s.state == FINISHED
        with pytest.raises(StateError):
            session_step(s, [])

    def test_bad_patience_rejected(self):
        with pytest.raises(ValidationError):
            VoteSession(patience=0)


class TestDecision:
    def finished(self, counts):
        s = VoteSession()
        s.counts = dict(counts)
        s.state = FINISHED
        return s

    def test_majority_single_class(self):
        s = self.finished({0: 113})
        assert session_decision(s, classes.DISC_CLASS_IDS) == 0

    def test_all_zero_is_undecided(self):
        s = self.finished({})
        assert session_decision(s, classes.DISC_CLASS_IDS) == UNDECIDED

    def test_equal_top_counts_is_tie(self):
        s = self.finished({0: 5, 1: 5})
        assert session_decision(s, classes.DISC_CLASS_IDS) == TIE

    def test_decision_before_finish_raises(self):
        s = VoteSession()
        session_step(s, [det(0)])
        with pytest.raises(StateError):
            session_decision(s, classes.DISC_CLASS_IDS)

    def test_decision_only_sees_group(self):
        s = self.finished({0: 3, 3: 50})
        assert session_decision(s, classes.DISC_CLASS_IDS) == 0


def replay_source(per_frame):
    return lambda frame_index: per_frame[frame_index]


class TestRunSession:
    GROUPS = {"disc": classes.DISC_CLASS_IDS, "calliper": classes.CALLIPER_CLASS_IDS}

    def test_replay_with_both_components(self):
        disc2, cal2 = classes.disc_class(2), classes.calliper_class(2)
        per_frame = [[det(disc2), det(cal2)] for _ in range(118)]
        for f in per_frame[115:]:  # trailing frames lose the calliper
            f.pop()
        frames = list(range(len(per_frame)))
        result = run_session(frames, replay_source(per_frame), self.GROUPS)
        assert result.session.count(disc2) == 118
        assert result.session.count(cal2) == 115
        assert result.decisions == {"disc": disc2, "calliper": cal2}

    def test_empty_video_undecided(self):
        result = run_session(range(10), lambda i: [], self.GROUPS)
        assert result.decisions == {"disc": UNDECIDED, "calliper": UNDECIDED}

    def test_single_dropout_frame_keeps_decision(self):
        disc1, cal1 = classes.disc_class(1), classes.calliper_class(1)
        per_frame = [[det(disc1), det(cal1)] for _ in range(10)]
        per_frame[4] = [det(cal1)]  # missed disc on one mid-video frame
        result = run_session(range(10), replay_source(per_frame), self.GROUPS)
        assert result.decisions == {"disc": disc1, "calliper": cal1}
        assert result.session.count(disc1) == 9

    def test_stops_early_after_patience(self):
        seen = []

        def source(i):
            seen.append(i)
            return [det(0)] if i == 0 else []

        result = run_session(range(500), source, self.GROUPS, patience=50)
        assert result.session.state == FINISHED
        assert len(seen) == 51  # trigger frame + 50 empties, rest never pulled

    def test_history_records_all_consumed_frames(self):
        per_frame = [[det(0)], [], [det(0)]]
        result = run_session(range(3), replay_source(per_frame), self.GROUPS)
        assert len(result.history) == 3

    def test_counts_match_bruteforce_tally(self):
        rng = np.random.default_rng(42)
        per_frame = []
        for _ in range(60):
            frame = []
            for c in range(6):
                if rng.random() < 0.4:
                    frame.append(det(c, prob=float(rng.uniform(0.95, 1.0))))
            per_frame.append(frame)
        result = run_session(range(60), replay_source(per_frame), self.GROUPS)
        # oracle: frame tally after the first frame containing any detection
        first = next(i for i, f in enumerate(per_frame) if f)
        for c in range(6):
            expect = sum(
                1 for f in per_frame[first:] if any(d.class_id == c for d in f)
            )
            assert result.session.count(c) == expect


class TestVoteRobustness:
    def test_monte_carlo_two_hundred_seeded_trials(self):
        # desk-scale slice of the acceptance property: FN prob <= 0.3,
        # no cross-class confusion, >= 20 counting frames -> always correct
        groups = {"disc": classes.DISC_CLASS_IDS, "calliper": classes.CALLIPER_CLASS_IDS}
        for trial in range(200):
            rng = np.random.default_rng(10_000 + trial)
            disc_t = int(rng.integers(1, 4))
            cal_t = int(rng.integers(1, 4))
            disc_c, cal_c = classes.disc_class(disc_t), classes.calliper_class(cal_t)
            per_frame = []
            for _ in range(40):
                frame = []
                if rng.random() > 0.3:
                    frame.append(det(disc_c))
                if rng.random() > 0.3:
                    frame.append(det(cal_c))
                per_frame.append(frame)
            result = run_session(
                range(40), lambda i: per_frame[i], groups, patience=100
            )
            assert result.decisions == {"disc": disc_c, "calliper": cal_c}


class TestOutputs:
    def test_count_csv_format(self, tmp_path):
        s = VoteSession()
        session_step(s, [det(0), det(3)])
        session_finish(s)
        result = SessionResult(
            session=s, decisions={"disc": 0, "calliper": 3}, history=[[det(0), det(3)]]
        )
        p = tmp_path / "counts.csv"
        write_count_csv(result, "vid1", p)
        lines = p.read_text().strip().splitlines()
        assert lines[0] == "video,class,frames_counted"
        assert lines[1] == "vid1,0,1"
        assert lines[2] == "vid1,3,1"

    def test_decision_json_format(self, tmp_path):
        p = tmp_path / "decision.json"
        write_decision_json("vid7", {"disc": 2, "calliper": "tie"}, p)
        doc = json.loads(p.read_text())
        assert doc == {"video": "vid7", "disc": 2, "calliper": "tie"}
