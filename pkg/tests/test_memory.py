import pytest
from hypothesis import given
from hypothesis import strategies as st

from gatedchain.agents import Decision, JudgeVerdict, Winner
from gatedchain.backend import Rule, script_backend
from gatedchain.errors import OutOfOrderAppend, StaleConflict, UnrelatedAppend
from gatedchain.memory import (
    TRUNCATION_NOTICE,
    ConflictPair,
    LLMDetector,
    MemoryBank,
    MemoryEntry,
    Status,
    extract_answer,
    heuristic_detector,
)


def entry(i, text="", **kw):
    text = text or f"evidence {i}"
    return MemoryEntry(i, (i * 10, i * 10 + 9), text, text, **kw)


def bank_of(*entries):
    bank = MemoryBank("doc")
    for e in entries:
        bank.append_related(e)
    return bank


def test_append_order():
    bank = MemoryBank("doc")
    bank.append_related(entry(1))
    assert len(bank) == 1
    bank.append_related(entry(2)).append_related(entry(3))
    assert bank.indices == [1, 2, 3]
    with pytest.raises(OutOfOrderAppend):
        bank_of(entry(1), entry(3)).append_related(entry(2))
    with pytest.raises(UnrelatedAppend):
        bank.append_related(entry(4, decision=Decision.UNRELATED))


def test_find_conflicts():
    one = bank_of(entry(1, "Answer: 1939"))
    assert one.find_conflicts(one.get(1), heuristic_detector) == []
    bank = bank_of(entry(1, "Answer: 1939"), entry(2, "Answer: 1940"))
    pairs = bank.find_conflicts(bank.get(2), heuristic_detector)
    assert [(p.earlier, p.later) for p in pairs] == [(1, 2)]
    assert bank.find_conflicts(bank.get(2), None) == []


def test_heuristic_detector_ignores_missing_or_equal_answers():
    assert extract_answer("blah\nAnswer: The Gary Cooper.\nmore") == "gary cooper"
    assert heuristic_detector(entry(1, "Answer: 1939"), entry(2, "answer:  1939.")) is None
    assert heuristic_detector(entry(1, "no answer here"), entry(2, "Answer: 1940")) is None


def test_llm_detector():
    spec = script_backend([Rule("CONSISTENT\nsame year", repeat=True)])
    det = LLMDetector(spec, "When?")
    bank = bank_of(entry(1), entry(2), entry(3))
    assert bank.find_conflicts(bank.get(3), det) == []
    assert len(det.calls) == 2 and det.calls[0][0].role.value == "filter"
    spec = script_backend([Rule("CONFLICTING: 1939 vs 1940", repeat=True)])
    pairs = bank.find_conflicts(bank.get(3), LLMDetector(spec))
    assert [(p.earlier, p.later) for p in pairs] == [(1, 3), (2, 3)]


def test_resolve_later_wins():
    bank = bank_of(entry(1), entry(3))
    bank.resolve_conflict(ConflictPair(1, 3), JudgeVerdict(Winner.LATER, "x"), node=3)
    assert bank.get(1).status is Status.SUPERSEDED and bank.get(1).resolved_by == 3
    assert bank.get(3).status is Status.ACTIVE


def test_resolve_earlier_wins():
    bank = bank_of(entry(1), entry(3))
    bank.resolve_conflict(ConflictPair(1, 3), JudgeVerdict(Winner.EARLIER, "x"), node=3)
    assert bank.get(3).status is Status.SUPERSEDED and bank.get(1).status is Status.ACTIVE


def test_resolve_merged():
    bank = bank_of(entry(1), entry(3))
    bank.resolve_conflict(ConflictPair(1, 3), JudgeVerdict(Winner.MERGED, "merged text"), node=3)
    assert bank.get(1).status is Status.SUPERSEDED
    assert bank.get(3).status is Status.CORRECTED and bank.get(3).current_text == "merged text"
    with pytest.raises(StaleConflict):
        bank.resolve_conflict(ConflictPair(1, 3), JudgeVerdict(Winner.LATER, "y"), node=3)


def test_render_context_filters_superseded():
    a, b, c = entry(1, "A-text"), entry(2, "B-text"), entry(3, "C-text")
    bank = bank_of(a, b, c)
    b.status = Status.SUPERSEDED
    c.status, c.correction = Status.CORRECTED, "C-corrected"
    assert bank.render_context(100) == "[1] A-text\n\n[3] C-corrected"
    assert MemoryBank().render_context(10) == ""


def test_render_context_truncation():
    bank = bank_of(entry(1, "one two three"), entry(2, "four five six"), entry(3, "seven eight nine ten"))
    # all three need 4 + 4 + 5 = 13 words
    assert bank.render_context(13).startswith("[1]")
    dropped = bank.render_context(12)
    assert dropped == f"{TRUNCATION_NOTICE}\n\n[2] four five six\n\n[3] seven eight nine ten"
    tiny = bank.render_context(6)
    assert tiny == f"{TRUNCATION_NOTICE}\n\n[3] seven eight"


def test_jsonl_round_trip():
    bank = bank_of(entry(1), entry(2), entry(4))
    bank.resolve_conflict(ConflictPair(2, 4), JudgeVerdict(Winner.MERGED, "m"), node=4)
    again = MemoryBank.from_jsonl(bank.to_jsonl(), "doc")
    assert again == bank


# -- properties ---------------------------------------------------------------

RANK = {Status.ACTIVE: 0, Status.CORRECTED: 1, Status.SUPERSEDED: 2}


@given(
    st.integers(2, 8),
    st.lists(st.tuples(st.integers(1, 8), st.integers(1, 8), st.sampled_from(list(Winner))), max_size=25),
)
def test_status_machine_and_exclusion(n, ops):
    bank = bank_of(*[entry(i, f"payload-{i}-x") for i in range(1, n + 1)])
    for a, b, winner in ops:
        if a >= b or b > n:
            continue
        before = {e.index: e.status for e in bank.entries}
        pair = ConflictPair(a, b)
        if bank.is_stale(pair):
            with pytest.raises(StaleConflict):
                bank.resolve_conflict(pair, JudgeVerdict(winner, f"fix-{a}-{b}"), node=b)
            continue
        bank.resolve_conflict(pair, JudgeVerdict(winner, f"fix-{a}-{b}"), node=b)
        for e in bank.entries:
            old = before[e.index]
            assert old is e.status or (old is Status.ACTIVE or old is Status.CORRECTED) and RANK[e.status] >= RANK[old]
            assert old is not Status.SUPERSEDED or e.status is Status.SUPERSEDED
        assert bank.indices == sorted(bank.indices)
    context = bank.render_context(10_000)
    for e in bank.entries:
        if e.status is Status.SUPERSEDED:
            assert f"payload-{e.index}-x" not in context
        else:
            assert e.current_text in context
