from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgreason.backend import EntityCandidate, RelationCandidate
from kgreason.graph import Direction, EntityId, Literal, RelationId
from kgreason.llm import ScriptedLlm
from kgreason.selector import (
    GoldPath,
    GoldStep,
    LexicalSelector,
    LlmSelector,
    OraclePlan,
    OracleSelector,
    Question,
    SelectorDecision,
    SelectorError,
    extract_topic_mentions,
    filter_entities,
    filter_relations,
    lexical_mentions,
    lexical_score,
    parse_mentions,
    parse_scored_reply,
)

from oracles import jaccard_by_hand


def rc(name, direction=Direction.OUTGOING, label=None):
    return RelationCandidate(RelationId(name, label), direction)


def ec(name, label=None):
    return EntityCandidate(EntityId(name, label))


BLUEY_RELATIONS = {rc("date_of_birth"), rc("date_of_death"), rc("instance_of")}


def test_lexical_mentions_for_question_two(q2):
    assert extract_topic_mentions(LexicalSelector(), q2) == ["South Korea"]


def test_single_proper_noun():
    assert lexical_mentions("Bluey") == ["Bluey"]


def test_quoted_span_is_a_mention():
    assert lexical_mentions('What is the capital of the founder of "Topic 003"?') == ["Topic 003"]


def test_lowercase_question_falls_back_to_content_words(q1):
    mentions = lexical_mentions(q1.text)
    assert 1 <= len(mentions) <= 8
    assert "dog" in mentions


def test_oracle_mentions_come_from_plan(oracle, q1, q2):
    assert oracle.extract_topic_mentions(q1) == ["Bluey"]
    assert oracle.extract_topic_mentions(q2) == ["South Korea"]


def test_oracle_mentions_default_to_path_starts():
    plan = OraclePlan((GoldPath("South_Korea", (GoldStep("head_of_government", Direction.OUTGOING, "Y"),)),))
    sel = OracleSelector({"x": plan})
    assert sel.extract_topic_mentions(Question("x", "?")) == ["South Korea"]


def test_oracle_without_plan_raises():
    with pytest.raises(SelectorError):
        OracleSelector({}).extract_topic_mentions(Question("nope", "what?"))


def test_single_candidate_gets_all_mass(oracle, q2):
    d = filter_relations(oracle, q2, EntityId("South_Korea"), {rc("head_of_government")}, 3)
    assert d.choices == (("head_of_government", 1.0),)


def test_oracle_uniform_over_gold_relations(oracle, q1):
    d = filter_relations(oracle, q1, EntityId("Bluey"), BLUEY_RELATIONS, 2)
    assert d.choices == (("date_of_birth", 0.5), ("date_of_death", 0.5))


def test_oracle_pads_to_width_with_zero_scores(oracle, q1):
    d = filter_relations(oracle, q1, EntityId("Bluey"), BLUEY_RELATIONS, 3)
    assert d.choices == (("date_of_birth", 0.5), ("date_of_death", 0.5), ("instance_of", 0.0))


def test_empty_candidates_yield_empty_decision(oracle, q1):
    for sel in (oracle, LexicalSelector()):
        assert filter_relations(sel, q1, EntityId("Bluey"), set(), 2) == SelectorDecision()


def test_oracle_entity_choice(oracle, q2):
    d = filter_entities(oracle, q2, EntityId("South_Korea"), RelationId("head_of_government"),
                        Direction.OUTGOING, {ec("Yoon_Suk_Yeol")}, 10)
    assert d.choices == (("Yoon_Suk_Yeol", 1.0),)


def test_oracle_rejects_off_path_entities(oracle, q2):
    d = filter_entities(oracle, q2, EntityId("Bluey"), RelationId("instance_of"), Direction.OUTGOING, {ec("dog")}, 10)
    assert d.choices == () and d.mass == 0.0


def test_lexical_entity_top_ten_of_twenty_five():
    q = Question("x", "alpha beta gamma delta")
    words = ["alpha", "beta", "gamma", "delta", "zeta"]
    cands = set()
    for j in range(25):
        label = " ".join(words[m] for m in range(5) if (j >> m) & 1) or "omega"
        cands.add(ec(f"E{j:02d}", label))
    d = LexicalSelector().filter_entities(q, EntityId("s"), RelationId("r"), Direction.OUTGOING, cands, 10)
    expected = sorted(cands, key=lambda c: (-jaccard_by_hand(q.text, c.object.display), c.item_id))[:10]
    assert d.ids == [c.item_id for c in expected]


def test_lexical_score_by_hand():
    # {ruling, party, government, south, korea} vs {head, of, government}: 1 shared of 7
    assert lexical_score("ruling party government south korea", "head of government") == pytest.approx(1 / 7)
    assert lexical_score("ruling party government south korea", "head of government") == jaccard_by_hand(
        "ruling party government south korea", "head of government")


@given(st.text(alphabet="abc XY_-", min_size=0, max_size=30), st.text(alphabet="abc XY_-", max_size=30))
def test_lexical_score_bounds_and_symmetry(a, b):
    s = lexical_score(a, b)
    assert 0.0 <= s <= 1.0
    assert s == lexical_score(b, a)


@given(st.text(alphabet="abcdef ", min_size=1, max_size=20).filter(lambda s: s.strip()))
def test_self_similarity_is_one(s):
    assert lexical_score(s, s) == 1.0


def test_disjoint_tokens_score_zero():
    assert lexical_score("alpha beta", "gamma delta") == 0.0


candidate_sets = st.sets(
    st.tuples(st.sampled_from(["born", "died", "party", "head", "spouse", "capital", "x_y"]),
              st.sampled_from(list(Direction))),
    max_size=12,
)


def _gold_plan():
    steps = (GoldStep("party", Direction.OUTGOING, "P"), GoldStep("head", Direction.INCOMING, "H"))
    return OracleSelector({"q": OraclePlan((GoldPath("E", steps[:1]), GoldPath("E", steps[1:])))})


@given(candidate_sets, st.integers(1, 6))
@settings(max_examples=150)
def test_decision_invariants_hold_for_all_selectors(pairs, k):
    q = Question("q", "who is the head of the party born in the capital")
    cands = {RelationCandidate(RelationId(r), d) for r, d in pairs}
    offered = {c.item_id for c in cands}
    scripted = ScriptedLlm(default=json.dumps([{"id": i, "score": 0.5} for i in sorted(offered)][:k]))
    for sel in (LexicalSelector(), _gold_plan(), LlmSelector(scripted)):
        d = sel.filter_relations(q, EntityId("E"), cands, k)
        d.check(offered, k)
        if not isinstance(sel, LlmSelector):
            if isinstance(sel, OracleSelector) and not d.choices:
                continue
            assert len(d.choices) == min(k, len(cands))


@given(candidate_sets, st.integers(1, 6))
def test_oracle_never_omits_gold(pairs, k):
    cands = {RelationCandidate(RelationId(r), d) for r, d in pairs}
    d = _gold_plan().filter_relations(Question("q", "?"), EntityId("E"), cands, max(k, 2))
    for gold in ("party", "^head"):
        if gold in {c.item_id for c in cands}:
            assert gold in d.ids


@given(candidate_sets, st.integers(1, 6))
def test_selectors_are_pure(pairs, k):
    cands = {RelationCandidate(RelationId(r), d) for r, d in pairs}
    q = Question("q", "head of the party")
    for sel in (LexicalSelector(), _gold_plan()):
        a = sel.filter_relations(q, EntityId("E"), cands, k)
        b = sel.filter_relations(q, EntityId("E"), set(sorted(cands, key=lambda c: c.item_id, reverse=True)), k)
        assert json.dumps(a.to_json()) == json.dumps(b.to_json())


@given(st.lists(st.tuples(st.text("abcdefgh", min_size=1, max_size=3), st.floats(0, 5)), max_size=15),
       st.integers(1, 8))
def test_from_scores_invariants(scored, cap):
    dedup = dict(scored)
    d = SelectorDecision.from_scores(dedup.items(), cap)
    d.check(set(dedup), cap)


def test_decision_json_round_trip():
    d = SelectorDecision.from_scores([("a", 2.0), ("b", 1.0)], 2, rationale="why", notes=["n"])
    assert SelectorDecision.from_json(json.loads(json.dumps(d.to_json()))) == d


# LLM-backed selector -------------------------------------------------------


def test_parse_scored_reply_clips_and_renormalizes():
    d = parse_scored_reply('Sure: [{"id": "a", "score": 3}, {"id": "b", "score": 1}, {"id": "zz", "score": 1}]',
                           {"a", "b"}, 3)
    assert d.choices == (("a", 0.5), ("b", 0.5))
    assert d.notes == ("dropped 1 unknown id(s)",)


def test_parse_scored_reply_rejects_garbage():
    with pytest.raises(ValueError):
        parse_scored_reply("no idea", {"a"}, 2)
    with pytest.raises(ValueError):
        parse_scored_reply('[{"id": "nope"}]', {"a"}, 2)


def test_parse_scored_reply_caps():
    d = parse_scored_reply(json.dumps(["a", "b", "c"]), {"a", "b", "c"}, 2)
    assert len(d.choices) == 2


def test_parse_mentions_variants():
    assert parse_mentions('["South Korea", "ruling party"]') == ["South Korea", "ruling party"]
    assert parse_mentions("Entities: South Korea, ruling party") == ["South Korea", "ruling party"]
    assert parse_mentions("- Bluey\n- dog") == ["Bluey", "dog"]


def test_llm_selector_uses_reply(q2):
    llm = ScriptedLlm(default='[{"id": "head_of_government", "score": 0.9}]')
    d = LlmSelector(llm).filter_relations(q2, EntityId("South_Korea"), {rc("head_of_government"), rc("anthem")}, 3)
    assert d.choices == (("head_of_government", 1.0),)
    req = llm.calls[0]
    assert req.temperature == 0.4
    assert "head_of_government" in req.messages[-1][1] and "South Korea" in req.messages[-1][1]


def test_llm_selector_reprompts_once(q2):
    # the corrective prompt is the only one that quotes the problem back
    llm = ScriptedLlm([("previous reply", '["head_of_government"]')], default="I think head of government")
    d = LlmSelector(llm).filter_relations(q2, EntityId("South_Korea"), {rc("head_of_government")}, 3)
    assert d.ids == ["head_of_government"]
    assert "reprompted once" in d.notes


def test_llm_selector_falls_back_to_lexical(q2):
    llm = ScriptedLlm(default="no json at all")
    cands = {rc("head_of_government"), rc("anthem")}
    d = LlmSelector(llm).filter_relations(q2, EntityId("South_Korea"), cands, 1)
    assert d.ids == ["head_of_government"]
    assert any(n.startswith("fallback:lexical") for n in d.notes)
    assert len(llm.calls) == 2
    assert llm.calls[1].messages[-2][0] == "assistant"


def test_llm_selector_prunes_large_candidate_lists(q2):
    cands = {rc(f"rel_{j:03d}") for j in range(80)} | {rc("ruling_party")}
    llm = ScriptedLlm(default='["ruling_party"]')
    d = LlmSelector(llm, prompt_budget=60).filter_relations(q2, EntityId("South_Korea"), cands, 3)
    assert d.ids == ["ruling_party"]
    assert "pruned 81->60 by lexical score" in d.notes
    assert llm.calls[0].messages[-1][1].count("\n- ") <= 60


def test_llm_selector_may_return_fewer(q2):
    llm = ScriptedLlm(default="[]")
    d = LlmSelector(llm).filter_relations(q2, EntityId("South_Korea"), {rc("a"), rc("b")}, 2)
    assert d == SelectorDecision()


def test_llm_entity_filter_marks_literals(q1):
    llm = ScriptedLlm(default="[]")
    cand = EntityCandidate(Literal("1910-06-07T00:00:00Z"))
    LlmSelector(llm).filter_entities(q1, EntityId("Bluey"), RelationId("date_of_birth"), Direction.OUTGOING, {cand}, 3)
    assert "(value)" in llm.calls[0].messages[-1][1]


def test_llm_extraction(q2):
    llm = ScriptedLlm(default='["South Korea"]')
    assert LlmSelector(llm).extract_topic_mentions(q2) == ["South Korea"]


def test_llm_extraction_failure_raises(q2):
    llm = ScriptedLlm(default="")
    with pytest.raises(SelectorError):
        LlmSelector(llm).extract_topic_mentions(q2)


def test_nonpositive_width_rejected(q1):
    with pytest.raises(ValueError):
        LexicalSelector().filter_relations(q1, EntityId("Bluey"), BLUEY_RELATIONS, 0)
