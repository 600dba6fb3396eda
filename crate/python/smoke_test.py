"""Smoke test for the `tutor` extension module.

Build and install first:  cd crates/py && maturin develop --release
"""

import tempfile

import tutor


def check_metrics():
    p = tutor.pause_profile(10.0, [(1.0, 4.0), (5.0, 9.0)])
    assert abs(p.silence_ratio - 0.3) < 1e-12, p
    assert abs(p.pause_rate - 0.1) < 1e-12, p
    assert abs(p.avg_pause_length - 1.0) < 1e-12, p

    wav = tutor.synth_wav(4.0, [(0.0, 0.8), (1.6, 2.4), (3.2, 4.0)])
    segments = tutor.detect_speech(wav)
    assert len(segments) == 3, segments
    hesitant = tutor.analyze_clip(wav)
    assert abs(hesitant.avg_pause_length - 0.8) < 0.03, hesitant

    calm = {"angry": 0.1, "calm": 0.2, "disgust": 0.0, "fearful": 0.0,
            "happy": 0.2, "neutral": 0.5, "sad": 0.0, "surprised": 0.0}
    d = tutor.decide_distress(calm, hesitant)
    assert d["pauses"] and d["distressed"] and not d["negative_affect"], d
    angry = dict(calm, angry=0.5, neutral=0.1)
    assert tutor.decide_distress(angry, p)["negative_affect"]


def check_grammar_and_rules():
    ext = tutor.validate_correction(
        "Love story", "Love story. Maybe I will write a book one of these days.")
    assert not ext["accepted"] and ext["rejection_reason"] == "MultiSentence", ext
    assert tutor.recast("Love story", "Love story.") is None
    fb = tutor.recast("I like to read book and study English.",
                      "I like to read books and study English.")
    assert "books" in fb["full_text"], fb

    assert tutor.is_feedback_query("What grammar mistake did I make?")
    assert not tutor.is_feedback_query("How are you?")
    prefix, text = tutor.build_transition("Thanks!", "Tell me more.", 3)
    assert text == f"{prefix} Tell me more.", text
    assert tutor.build_transition("Thanks!", "Tell me more.", 3)[0] == prefix

    f1 = tutor.weighted_f1(["n", "n", "p", "p"], ["n", "p", "p", "p"])
    assert abs(f1 - 0.7333) < 1e-4, f1


def check_sessions():
    fluent = tutor.synth_wav(2.0, [(0.0, 2.0)], frequency=300.0)
    transcripts = {tutor.fingerprint(fluent): "I like to read book and study English."}
    with tempfile.TemporaryDirectory() as data:
        t = tutor.Tutor(data, transcripts)
        sid = t.create_session({"topic": "Books"})
        rec = t.process_turn(sid, fluent)
        assert rec["action"] == "grammar_feedback", rec
        assert "books and study English" in rec["bot_text"], rec["bot_text"]
        assert len(t.history(sid)) == 1
        assert tutor.Tutor(data).history(sid) == [rec]

        for bad, exc in [({"min_gap_empathy": -1}, tutor.InvalidConfig)]:
            try:
                t.create_session(bad)
            except exc:
                pass
            else:
                raise AssertionError(f"{bad} accepted")
        try:
            t.process_turn(sid, b"not audio")
        except tutor.MalformedFile:
            pass
        else:
            raise AssertionError("garbage audio accepted")
        try:
            t.history("missing")
        except tutor.SessionNotFound:
            pass
        else:
            raise AssertionError("missing session found")


if __name__ == "__main__":
    check_metrics()
    check_grammar_and_rules()
    check_sessions()
    print("smoke test ok")
