import pytest

from app.corefud.document import Document, Sentence, Token
from app.errors import WindowError
from app.schemas import WindowConfig
from app.services.windowing import Window, WindowPrediction, build_windows, stitch_predictions


def make_doc(lengths):
    sentences = [
        Sentence(tuple(Token(f"w{i}", i + 1) for i in range(length)), sentence_id=f"s{k}")
        for k, length in enumerate(lengths)
    ]
    return Document("d", tuple(sentences))


@pytest.fixture
def long_doc():
    return make_doc([20] * 100)


def test_every_window_fits(long_doc):
    windows = build_windows(long_doc, WindowConfig(window_size=512, right_context=50))
    assert len(windows) == 100
    assert all(len(w) == 512 for w in windows)
    assert all(w.start <= w.focus[0] and w.focus[1] <= w.end for w in windows)


def test_middle_window_layout(long_doc):
    window = build_windows(long_doc, WindowConfig(window_size=512, right_context=50))[50]
    assert window.focus == (1000, 1019)
    assert window.right_size == 50
    assert window.left_size == 442
    assert (window.start, window.end) == (558, 1069)


def test_unused_left_budget_moves_right(long_doc):
    first, last = build_windows(long_doc, WindowConfig(window_size=512, right_context=50))[::99]
    assert (first.start, first.end) == (0, 511)
    assert (last.start, last.end) == (1488, 1999)
    assert last.right_size == 0


def test_zero_right_context(long_doc):
    windows = build_windows(long_doc, WindowConfig(window_size=512, right_context=0))
    assert all(w.end == w.focus[1] for w in windows[25:])


def test_short_document_is_one_window_per_sentence():
    windows = build_windows(make_doc([3, 4]), WindowConfig(window_size=512, right_context=50))
    assert [(w.start, w.end) for w in windows] == [(0, 6), (0, 6)]
    assert [w.focus for w in windows] == [(0, 2), (3, 6)]


def test_reserved_positions_and_pieces():
    doc = make_doc([5, 5, 5])
    windows = build_windows(doc, WindowConfig(window_size=12, right_context=2), reserved=2, pieces=[2] * 15)
    assert all(w.encoder_length <= 12 for w in windows)
    middle = windows[1]
    assert middle.focus == (5, 9)
    assert middle.right_size == 0


def test_sentence_too_long():
    with pytest.raises(WindowError, match="needs 600 positions"):
        build_windows(make_doc([10, 600]), WindowConfig(window_size=512, right_context=50))


def test_window_without_room():
    with pytest.raises(WindowError):
        build_windows(make_doc([1]), WindowConfig(window_size=4), reserved=4)
    with pytest.raises(WindowError, match="piece counts"):
        build_windows(make_doc([3]), WindowConfig(window_size=8), pieces=[1])


def test_pool_and_focus_membership():
    window = Window(1, 2, 9, (4, 6), (1,) * 8)
    assert window.in_pool((2, 3)) and window.in_pool((5, 6))
    assert not window.in_pool((6, 7))
    assert window.in_focus((4, 4)) and not window.in_focus((3, 4))
    assert window.local(4) == 2


def test_stitch_joins_links_across_windows():
    first = WindowPrediction(Window(0, 0, 6, (0, 3), (1,) * 7), [(0, 0), (2, 3)], {1: 0})
    second = WindowPrediction(Window(1, 0, 6, (4, 6), (1,) * 7), [(0, 0), (2, 3), (5, 5)], {2: 1})
    assert stitch_predictions([second, first]) == [[(0, 0), (2, 3), (5, 5)]]


def test_stitch_later_window_wins():
    first = WindowPrediction(Window(0, 0, 6, (0, 3), (1,) * 7), [(0, 0), (2, 3)], {1: 0})
    second = WindowPrediction(Window(1, 0, 6, (4, 6), (1,) * 7), [(0, 0), (2, 3), (5, 5)], {1: 1, 2: 0})
    assert stitch_predictions([first, second]) == [[(0, 0), (5, 5)], [(2, 3)]]


def test_stitch_without_links_gives_singletons():
    prediction = WindowPrediction(Window(0, 0, 3, (0, 3), (1,) * 4), [(0, 1), (3, 3)])
    assert stitch_predictions([prediction]) == [[(0, 1)], [(3, 3)]]
    assert stitch_predictions([]) == []
