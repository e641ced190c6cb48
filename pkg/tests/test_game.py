import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mnklab.game import (
    EMPTY, P1, P2, GameError, GameRecord, GameSpec, Outcome, State, apply, canonical_form, classify, decode, encode,
    legal_actions, payoff, symmetries, transform_action,
)

from reference_oracle import make


def board(spec, text):
    return decode(text.replace(" ", ""), spec)


def test_empty_board_has_nine_actions(spec):
    assert legal_actions(spec.initial()) == list(range(9))


def test_one_empty_cell_gives_one_action(spec):
    s = board(spec, "121 211 220")
    assert classify(s) is Outcome.CONT
    assert legal_actions(s) == [8]


def test_action_count_matches_turn_everywhere(space):
    for i in space.cont_indices:
        s = space.state(i)
        assert len(legal_actions(s)) == s.spec.cells - s.turn + 1


def test_apply_center(spec):
    s = apply(spec.initial(), 4)
    assert s.cells[4] == P1 and s.mover == P2


def test_apply_twice_is_an_error(spec):
    s = apply(spec.initial(), 4)
    with pytest.raises(GameError):
        apply(s, 4)


@pytest.mark.parametrize("bad", [-1, 9, 100])
def test_apply_out_of_range(spec, bad):
    with pytest.raises(GameError):
        apply(spec.initial(), bad)


def test_terminal_has_no_actions(spec):
    s = board(spec, "111 220 000")
    assert classify(s) is Outcome.WIN
    with pytest.raises(GameError):
        legal_actions(s)
    with pytest.raises(GameError):
        apply(s, 8)


def test_classify_examples(spec):
    assert classify(board(spec, "111 220 000")) is Outcome.WIN
    assert classify(board(spec, "112 221 112")) is Outcome.DRAW
    assert classify(board(spec, "222 110 100")) is Outcome.LOSS


def test_payoffs(spec):
    win = board(spec, "111 220 000")
    assert (payoff(win, 1), payoff(win, 2)) == (1, -1)
    draw = board(spec, "112 221 112")
    assert (payoff(draw, 1), payoff(draw, 2)) == (0, 0)
    with pytest.raises(GameError):
        payoff(spec.initial(), 1)


def test_reachable_count_and_exclusive_tags(space):
    bfs, *_ = make(3, 3, 3)
    ref = bfs()
    assert len(space) == len(ref) == 5478
    assert {"".join(map(str, space.state(i).cells)) for i in range(len(space))} == ref
    tags = [classify(space.state(i)) for i in range(len(space))]
    assert all(isinstance(t, Outcome) for t in tags)
    counts = {t: tags.count(t) for t in Outcome}
    assert sum(counts.values()) == 5478


def test_zero_sum_on_all_terminals(space):
    for i in range(len(space)):
        s = space.state(i)
        if classify(s).terminal:
            assert payoff(s, 1) + payoff(s, 2) == 0


def test_symmetry_orbits(spec):
    diagonal = board(spec, "100 020 000")
    generic = board(spec, "120 000 001")
    assert len(symmetries(generic)) == 8
    assert len(symmetries(generic, deduplicate=True)) == 8
    assert len(symmetries(spec.initial(), deduplicate=True)) == 1
    assert len(symmetries(diagonal)) == 8
    assert len(symmetries(diagonal, deduplicate=True)) == 4


def test_classify_and_actions_commute_with_symmetry(space, spec):
    for i in range(len(space)):
        s = space.state(i)
        out = classify(s)
        for g, t in enumerate(symmetries(s)):
            assert classify(t) is out
            if not out.terminal:
                mapped = sorted(transform_action(spec, a, g) for a in legal_actions(s))
                assert mapped == legal_actions(t)


def test_transform_action_tracks_the_stone(spec):
    s = apply(spec.initial(), 0)
    for g, t in enumerate(symmetries(s)):
        assert t.cells[transform_action(spec, 0, g)] == P1


def test_encode_decode_roundtrip(random_states, spec):
    for s in random_states:
        assert decode(encode(s), spec) == s


def test_encode_injective(space):
    keys = {encode(space.state(i)) for i in range(len(space))}
    assert len(keys) == len(space)


def test_canonical_key_shared_by_orbit(random_states):
    for s in random_states[:200]:
        keys = {encode(t, canonical=True) for t in symmetries(s)}
        assert len(keys) == 1


def test_canonical_form_transform_reaches_key(random_states, spec):
    for s in random_states[:200]:
        key, g = canonical_form(spec, s.cells)
        assert "".join(str(s.cells[i]) for i in spec.transforms[g]) == key


def test_decode_rejects_bad_keys(spec):
    for bad in ("0000", "000000003", "111111111"):
        with pytest.raises(GameError):
            decode(bad, spec)


def test_spec_validation():
    with pytest.raises(GameError):
        GameSpec(6, 6, 3)  # too many cells
    with pytest.raises(GameError):
        GameSpec(3, 3, 4)
    with pytest.raises(GameError):
        GameSpec.parse("3x3")
    assert str(GameSpec.parse("4,4,3")) == "4,4,3"


def test_rectangular_board_has_four_symmetries():
    spec = GameSpec(3, 4, 3)
    s = apply(spec.initial(), 0)
    assert len(symmetries(s)) == 4


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_random_play_terminates_within_board_size(data):
    spec = GameSpec(*data.draw(st.sampled_from([(3, 3, 3), (3, 4, 3), (4, 4, 3)])))
    s = spec.initial()
    moves = []
    while not classify(s).terminal:
        a = data.draw(st.sampled_from(legal_actions(s)))
        s = apply(s, a)
        moves.append(a)
    assert len(moves) <= spec.cells
    rec = GameRecord(spec, tuple(moves), classify(s))
    back = GameRecord.from_json(rec.to_json())
    assert back == rec and back.final_state() == s


def test_record_with_wrong_outcome_rejected(spec):
    rec = GameRecord(spec, (0, 3, 1, 4, 2), Outcome.DRAW)
    with pytest.raises(GameError):
        GameRecord.from_json(rec.to_json())


def test_state_validation(spec):
    with pytest.raises(GameError):
        State(spec, (P2,) + (EMPTY,) * 8)
    with pytest.raises(GameError):
        State(spec, (EMPTY,) * 8)
    assert np.array_equal(spec.initial().board(), np.zeros((3, 3), dtype=np.int8))
