import pytest
from conftest import TABLE4_IDS, reply_text
from hypothesis import given
from hypothesis import strategies as st

from phqscreen import parsing as ps


def _values(outcomes):
    return {pid: o.value for pid, o in outcomes.items()}


# -- likelihood -------------------------------------------------------------------

def test_table4_reply():
    out = ps.parse_likelihood(reply_text("table4_reply.txt"), TABLE4_IDS)
    assert _values(out) == {300: 2, 306: 3, 308: 6, 309: 5, 311: 7}
    assert all(o.matched_rule == "likelihood/anchor-n-of-7" for o in out.values())


def test_bold_score():
    reply = "Participant 308:\nLikelihood of Ongoing Mental Health Disorder: **6/7**."
    assert ps.parse_likelihood(reply, [308])[308].value == 6


def test_out_of_range_likelihood():
    out = ps.parse_likelihood("Participant 5:\nLikelihood of Ongoing Mental Health Disorder: 8/7", [5])
    assert out[5].is_na
    assert any("out of range" in d for d in out[5].diagnostics)


def test_absent_participant_is_na():
    out = ps.parse_likelihood("Participant 1:\nLikelihood of Ongoing Mental Health Disorder: 4/7", [1, 2])
    assert out[1].value == 4
    assert out[2].is_na and out[2].matched_rule is None


def test_last_match_in_segment_wins():
    reply = ("Participant 9:\nLikelihood of Ongoing Mental Health Disorder: 3/7\n"
             "On reflection, Likelihood of Ongoing Mental Health Disorder: 5/7\n")
    assert ps.parse_likelihood(reply, [9])[9].value == 5


def test_single_id_without_header():
    reply = "Mental Health Assessment: calm.\nLikelihood of Ongoing Mental Health Disorder: 1/7"
    assert ps.parse_likelihood(reply, [42])[42].value == 1
    assert ps.parse_likelihood(reply, [42, 43])[42].is_na


def test_word_numbers_disabled_by_default():
    reply = "Participant 3: the likelihood is six out of 7."
    assert ps.parse_likelihood(reply, [3])[3].is_na
    out = ps.parse_likelihood(reply, [3], word_numbers=True)[3]
    assert (out.value, out.matched_rule) == (6, "likelihood/word-number")


def test_segment_rationale():
    text = ps.segment_rationale(reply_text("table4_reply.txt"), 306)
    assert text.startswith("Mental Health Assessment: The participant discusses past challenges")
    assert "Participant 308" not in text
    assert ps.segment_rationale("no headers here", 1, single=True) == "no headers here"


# -- PHQ-8 totals ---------------------------------------------------------------------

def test_stage1_sample_total():
    out = ps.parse_phq8_total(reply_text("stage1_reply.txt"))
    assert out.value == ps.Phq8Total(13, (2, 3, 1, 2, 1, 2, 1, 1))
    assert out.matched_rule == "phq8/sum-expression"


def test_stage2_sample_total():
    assert ps.parse_phq8_total(reply_text("stage2_reply.txt")).value.total == 10


def test_arithmetic_mismatch():
    out = ps.parse_phq8_total("Estimated PHQ-8 Score: 2+2=5")
    assert out.is_na
    assert any("arithmetic mismatch" in d for d in out.diagnostics)
    out = ps.parse_phq8_total("Estimated PHQ-8 Score: 1+1+1+1+1+1+1+1=9")
    assert out.is_na and any("arithmetic mismatch" in d for d in out.diagnostics)


@pytest.mark.parametrize("reply,total", [
    ("Estimated PHQ-8 Score: 7", 7),
    ("Estimated PHQ-8 Score : 2 + 3 + 1 + 2 + 1 + 2 + 1 + 1 = 13", 13),
    ("**Estimated PHQ-8 Score:** 0", 0),
    ("Final PHQ8 Score: 24.", 24),
])
def test_total_forms(reply, total):
    assert ps.parse_phq8_total(reply).value.total == total


@pytest.mark.parametrize("reply", [
    "Estimated PHQ-8 Score: 25",
    "Estimated PHQ-8 Score: 4+1+1+1+1+1+1+1=11",
    "I think the score is moderate.",
])
def test_total_na(reply):
    assert ps.parse_phq8_total(reply).is_na


# -- item breakdown --------------------------------------------------------------

def test_stage2_sample_breakdown():
    out = ps.parse_item_breakdown(reply_text("stage2_reply.txt"))
    assert out.value == (2, 3, 0, 2, 0, 2, 1, 0)
    assert sum(out.value) == 10
    assert out.matched_rule == "items/sum-expression"


def _score_lines(scores):
    return "\n".join(f"{i}. Item {i}\n- Score: {k} (frequency)" for i, k in enumerate(scores, 1))


def test_eight_score_lines_without_expression():
    out = ps.parse_item_breakdown(_score_lines([1, 0, 3, 2, 2, 0, 1, 1]))
    assert out.value == (1, 0, 3, 2, 2, 0, 1, 1)
    assert out.matched_rule == "items/score-lines"


@pytest.mark.parametrize("scores", [[1] * 7, [1] * 9, [1, 1, 1, 1, 1, 1, 1, 4]])
def test_score_lines_na(scores):
    assert ps.parse_item_breakdown(_score_lines(scores)).is_na


def test_invalid_expression_falls_back_to_lines():
    reply = _score_lines([0, 0, 1, 1, 2, 2, 3, 3]) + "\nTotal PHQ-8 Score: 1+1 = 3"
    out = ps.parse_item_breakdown(reply)
    assert out.value == (0, 0, 1, 1, 2, 2, 3, 3)
    assert out.diagnostics


# -- verdict ----------------------------------------------------------------------

def test_stage3_sample_verdict():
    out = ps.parse_verdict(reply_text("stage3_reply.txt"))
    assert out.value == ps.Verdict("Disagree", 10)


@pytest.mark.parametrize("reply,expected", [
    ("I agree with the assigned score.", ps.Verdict("Agree")),
    ("The assessment is agreeable... however I do not agree overall.", ps.Verdict("Disagree")),
    ("I disagree. Estimated PHQ-8 Score: 12", ps.Verdict("Disagree", 12)),
    ("I cannot agree at first, but after review I agree.", ps.Verdict("Agree")),
    ("The re-evaluated score of 9 fits. I don't agree with 4.", ps.Verdict("Disagree", 9)),
])
def test_verdict_examples(reply, expected):
    assert ps.parse_verdict(reply).value == expected


def test_unclear_verdict():
    out = ps.parse_verdict("The transcript is ambiguous.")
    assert out.value.verdict == "Unclear"
    assert out.matched_rule == "verdict/unclear"


def test_revised_out_of_range_ignored():
    out = ps.parse_verdict("I disagree. The revised PHQ-8 score of 30 is wrong.")
    assert out.value == ps.Verdict("Disagree")
    assert out.diagnostics


# -- properties -------------------------------------------------------------------

_FIXTURES = ["table4_reply.txt", "stage1_reply.txt", "stage2_reply.txt", "stage3_reply.txt"]

_prose = st.text(
    st.sampled_from("abcdefghijklmnopqrstuvwxyz ,.\n"), max_size=120
).filter(lambda s: "agree" not in s and "score" not in s)


def _parse_all(text):
    return (
        _values(ps.parse_likelihood(text, TABLE4_IDS)),
        ps.parse_phq8_total(text).value,
        ps.parse_item_breakdown(text).value,
        ps.parse_verdict(text).value,
    )


@pytest.mark.parametrize("name", _FIXTURES)
def test_idempotent(name):
    text = reply_text(name)
    assert _parse_all(text) == _parse_all(text)


@given(st.sampled_from(_FIXTURES), _prose, _prose, st.sampled_from(["**", "*", "__", "<b>"]))
def test_noise_tolerance(name, before, after, marker):
    text = reply_text(name)
    close = marker.replace("<", "</") if marker.startswith("<") else marker
    emphasized = (text.replace("2/7", f"{marker}2/7{close}")
                      .replace("=13", f"={marker}13{close}")
                      .replace("= 10", f"= {marker}10{close}"))
    noisy = f"{before}\n\n{emphasized}\n\n{after}"
    assert _parse_all(noisy) == _parse_all(text)


_any_reply = st.lists(
    st.sampled_from(list("0123456789+=/: \n*") + ["Participant 1", "Likelihood", "PHQ-8 Score",
                                                  "Score", "agree", "not ", "revised PHQ-8 score of "]),
    max_size=40,
).map("".join)


@given(_any_reply)
def test_range_safety(reply):
    lk = ps.parse_likelihood(reply, [1])[1]
    assert lk.is_na or 1 <= lk.value <= 7
    tot = ps.parse_phq8_total(reply)
    assert tot.is_na or 0 <= tot.value.total <= 24
    items = ps.parse_item_breakdown(reply)
    assert items.is_na or (len(items.value) == 8 and all(0 <= k <= 3 for k in items.value))
    rev = ps.parse_verdict(reply).value.revised_total
    assert rev is None or 0 <= rev <= 24
    for outcome in (lk, tot, items):
        assert outcome.is_na == (outcome.matched_rule is None)


@given(st.permutations(TABLE4_IDS))
def test_segment_permutation(order):
    segments = ps.segment_by_participant(reply_text("table4_reply.txt"))
    reply = "\n".join(f"Participant {pid}:{segments[pid]}" for pid in order)
    assert _values(ps.parse_likelihood(reply, TABLE4_IDS)) == {
        300: 2, 306: 3, 308: 6, 309: 5, 311: 7
    }
