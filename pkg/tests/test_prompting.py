import re

import pytest
from hypothesis import given, strategies as st

from clausecheck.models import Checkpoint, Suggestion, SuggestionSet, Verdict
from clausecheck.prompting import (
    PromptLibrary,
    UnparseableAnswer,
    UnparseableVote,
    parse_answer,
    parse_vote,
)
from conftest import golden_prompt_inputs, read_fixture

OPTIONS_LINE = "Choose from the following options: [A] contradict [B] entail [C] not found"


@pytest.fixture(scope="module")
def library():
    return PromptLibrary()


@pytest.fixture(scope="module")
def golden():
    return golden_prompt_inputs()


# -- rendering -------------------------------------------------------------------


def test_qa_prompt_matches_golden_file(library, golden):
    checkpoint, bundle, pairs, _ = golden
    rendered = library.render_qa_prompt(checkpoint, bundle, pairs)
    assert rendered.text == read_fixture("golden/qa_prompt.txt")
    assert rendered.kind == "qa"


def test_selection_prompt_matches_golden_file(library, golden):
    checkpoint, bundle, _, suggestions = golden
    rendered = library.render_selection_prompt(
        checkpoint, bundle.merged_text, suggestions
    )
    assert rendered.text == read_fixture("golden/selection_prompt.txt")


def test_standard_prompt_matches_golden_file(library, golden):
    checkpoint, bundle, _, _ = golden
    rendered = library.render_standard_prompt(checkpoint, bundle.merged_text)
    assert rendered.text == read_fixture("golden/standard_prompt.txt")


def test_three_pairs_give_three_exemplar_blocks(library, golden):
    checkpoint, bundle, pairs, _ = golden
    rendered = library.render_qa_prompt(checkpoint, bundle, pairs)
    # one options line per exemplar plus one for the new question
    assert rendered.text.count(OPTIONS_LINE) == 4
    assert rendered.text.count("The answer is therefore") == 4
    assert "Summary: <Summarize here>" in rendered.text


def test_one_pair_degenerate_structure(library, golden):
    checkpoint, bundle, pairs, _ = golden
    rendered = library.render_qa_prompt(checkpoint, bundle, pairs[:1])
    assert rendered.text.count(OPTIONS_LINE) == 2
    assert rendered.text.index("Summary:") > rendered.text.index(
        pairs[0].pair.review_text
    )


def test_qa_prompt_requires_pairs(library, golden):
    checkpoint, bundle, _, _ = golden
    with pytest.raises(ValueError):
        library.render_qa_prompt(checkpoint, bundle, [])


def test_inserted_texts_appear_verbatim(library, golden):
    checkpoint, bundle, pairs, _ = golden
    rendered = library.render_qa_prompt(checkpoint, bundle, pairs)
    assert f"```{checkpoint.text}```" in rendered.text
    assert f"```{bundle.merged_text}```" in rendered.text
    for scored in pairs:
        assert f"```{scored.pair.clause_text}```" in rendered.text
        assert f"```{scored.pair.review_text}```" in rendered.text


def test_selection_prompt_counts_choices(library, golden):
    checkpoint, bundle, _, _ = golden

    def suggestion_set(n):
        return SuggestionSet.of(
            Suggestion(Verdict.ENTAIL, "e", f"raw answer {i}", i) for i in range(n)
        )

    five = library.render_selection_prompt(
        checkpoint, bundle.merged_text, suggestion_set(5)
    )
    assert [f"choice {i}:" in five.text for i in range(1, 6)] == [True] * 5
    assert "choice 6:" not in five.text
    two = library.render_selection_prompt(
        checkpoint, bundle.merged_text, suggestion_set(2)
    )
    assert len(re.findall(r"^choice \d+:", two.text, re.MULTILINE)) == 2
    with pytest.raises(ValueError):
        library.render_selection_prompt(
            checkpoint, bundle.merged_text, suggestion_set(1)
        )


def test_standard_prompt_allows_empty_conditions(library, golden):
    checkpoint, _, _, _ = golden
    rendered = library.render_standard_prompt(checkpoint, "")
    assert "Condition situation: <contradict or entail or not found>" in rendered.text
    assert f"checkpoint: ```{checkpoint.text}```" in rendered.text


def test_rendering_is_pure(library, golden):
    checkpoint, bundle, pairs, _ = golden
    first = library.render_qa_prompt(checkpoint, bundle, pairs)
    second = library.render_qa_prompt(checkpoint, bundle, pairs)
    assert first.text == second.text
    assert first.slots == second.slots


def test_braces_in_clause_text_are_inert(library, golden):
    checkpoint, bundle, pairs, _ = golden
    spiked = Checkpoint(id="c", text="brace {checkpoint} stays literal")
    rendered = library.render_standard_prompt(spiked, bundle.merged_text)
    assert "brace {checkpoint} stays literal" in rendered.text


def test_template_dir_override(tmp_path, golden):
    (tmp_path / "standard.txt").write_text("custom: {checkpoint}|{specific_conditions}")
    library = PromptLibrary(template_dir=tmp_path)
    checkpoint, bundle, _, _ = golden
    rendered = library.render_standard_prompt(checkpoint, "cond")
    assert rendered.text == f"custom: {checkpoint.text}|cond"


def test_slots_record_inserted_values(library, golden):
    checkpoint, bundle, pairs, _ = golden
    rendered = library.render_qa_prompt(checkpoint, bundle, pairs)
    assert rendered.slots["checkpoint"] == checkpoint.text
    assert rendered.slots["clause_1"] == pairs[0].pair.clause_text
    assert rendered.slots["review_3"] == pairs[2].pair.review_text


# -- answer parsing -----------------------------------------------------------------


def test_parse_bracketed_contradict_fixture():
    parsed = parse_answer(read_fixture("responses/answer_contradict.txt"))
    assert parsed.verdict is Verdict.CONTRADICT
    assert "waived by the Employer" in parsed.explanation
    assert "The answer is therefore" not in parsed.explanation


def test_parse_bracketed_entail_fixture():
    parsed = parse_answer(read_fixture("responses/answer_entail.txt"))
    assert parsed.verdict is Verdict.ENTAIL


def test_parse_condition_situation_not_found_fixture():
    parsed = parse_answer(read_fixture("responses/answer_not_found.txt"))
    assert parsed.verdict is Verdict.NOT_FOUND
    assert parsed.explanation.startswith("The provided specific condition")


def test_parse_keyword_fallbacks():
    assert (
        parse_answer(read_fixture("responses/answer_standard_entail.txt")).verdict
        is Verdict.ENTAIL
    )
    assert (
        parse_answer(
            read_fixture("responses/answer_standard_contradict.txt")
        ).verdict
        is Verdict.CONTRADICT
    )


def test_parse_last_occurrence_wins():
    text = "It could entail at first glance. The answer is therefore [A] contradicts."
    assert parse_answer(text).verdict is Verdict.CONTRADICT
    text2 = "Options were [A] contradict [B] entail. The answer is therefore [C]."
    assert parse_answer(text2).verdict is Verdict.NOT_FOUND


def test_parse_no_verdict_raises():
    with pytest.raises(UnparseableAnswer):
        parse_answer("no idea")
    with pytest.raises(UnparseableAnswer):
        parse_answer("the contradiction is unresolvable")  # embedded, not standalone


@given(
    explanation=st.text(
        alphabet=st.characters(whitelist_categories=("Lu", "Ll", "Nd"),
                               whitelist_characters=" ,;"),
        min_size=1,
        max_size=120,
    ),
    verdict=st.sampled_from(list(Verdict)),
)
def test_parse_round_trips_template_shaped_outputs(explanation, verdict):
    letter = {"contradict": "A", "entail": "B", "not_found": "C"}[verdict.value]
    word = {"contradict": "contradicts", "entail": "entails",
            "not_found": "not found"}[verdict.value]
    text = f"{explanation.strip()}. The answer is therefore [{letter}] {word}."
    assert parse_answer(text).verdict is verdict


def test_explanation_excludes_answer_sentence_only():
    text = (
        "First sentence stays. Second sentence stays too. "
        "The answer is therefore [B] entails."
    )
    parsed = parse_answer(text)
    assert parsed.explanation == "First sentence stays. Second sentence stays too."


# -- vote parsing ---------------------------------------------------------------------


def test_parse_vote_simple():
    assert parse_vote("the most promising is choice 2", 5).chosen_index == 2


def test_parse_vote_last_mention_wins():
    text = "choice 1 is weak because it skips the waiver... therefore choice 3"
    assert parse_vote(text, 5).chosen_index == 3


def test_parse_vote_out_of_range():
    with pytest.raises(UnparseableVote):
        parse_vote("choice 7", 5)
    with pytest.raises(UnparseableVote):
        parse_vote("none of them convince me", 5)


def test_parse_vote_requires_two_choices():
    with pytest.raises(ValueError):
        parse_vote("choice 1", 1)


def test_parse_vote_case_and_spacing():
    assert parse_vote("I pick Choice  4 at the end", 5).chosen_index == 4
    assert parse_vote("conclusion: choice #2", 3).chosen_index == 2
