import re

import numpy as np
import pytest

from zoneprobe.data import Example, Vocabulary, encode, make_batch, sequence_tokens
from zoneprobe.model import ModelConfig, TransformerQA
from zoneprobe.probe import DeltaMatrix
from zoneprobe.viz import (
    HeatmapStyle,
    box_shade,
    diverging_color,
    emit_attention_lines,
    emit_heatmap,
    load_style,
    render_attention_lines,
    render_head_boxes,
    render_heatmap,
)

PASSAGE = "There is a red book on the desk and a green pen on the chair."
QUESTION = "Where is the pen?"


def _matrix(cells):
    rows = ["Q2", "Q2P", "P2Q", "P2", "All"][: len(cells)]
    return DeltaMatrix(rows, [f"L{i}" for i in range(len(cells[0]))], cells, 50.0, "layer", 10)


def _fills(svg, cls="cell"):
    return re.findall(rf'class="{cls}"[^>]*fill="(#[0-9a-f]{{6}})"', svg)


def test_all_zero_matrix_is_neutral():
    svg = render_heatmap(_matrix([[0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]))
    fills = _fills(svg)
    assert len(fills) == 10
    assert set(fills) == {HeatmapStyle().zero}


def test_signed_cells_use_their_anchor():
    style = HeatmapStyle()
    svg = render_heatmap(_matrix([[-4.0, 4.0, 0.0]]), style)
    assert _fills(svg) == [style.negative, style.positive, style.zero]


def test_diverging_color_clamps_and_blends():
    s = HeatmapStyle(zero="#ffffff", positive="#ff0000", negative="#0000ff")
    assert diverging_color(10.0, 5.0, s) == "#ff0000"
    assert diverging_color(-10.0, 5.0, s) == "#0000ff"
    assert diverging_color(2.5, 5.0, s) == "#ff8080"
    assert diverging_color(1.0, 0.0, s) == "#ffffff"


def test_fixed_clamp_from_style():
    style = HeatmapStyle(clamp=100.0, zero="#ffffff", positive="#ff0000")
    svg = render_heatmap(_matrix([[50.0]]), style)
    assert _fills(svg) == ["#ff8080"]


def test_heatmap_is_deterministic_and_written(tmp_path):
    m = _matrix([[1.5, -2.0], [0.25, 0.0]])
    out = tmp_path / "h.svg"
    text = emit_heatmap(m, out, title="delta <EM>")
    assert out.read_text() == text == render_heatmap(m, title="delta <EM>")
    assert "delta &lt;EM&gt;" in text
    assert text.startswith("<?xml")


def test_empty_matrix_rejected():
    with pytest.raises(ValueError):
        render_heatmap(DeltaMatrix([], [], [], 0.0, "layer", 0))


def test_style_file_round_trip(tmp_path):
    p = tmp_path / "style.json"
    p.write_text('{"positive": "#000000", "cell_size": 30}')
    s = load_style(p)
    assert s.positive == "#000000" and s.cell_size == 30
    with pytest.raises(ValueError, match="unknown style"):
        HeatmapStyle.from_dict({"colour": "#fff"})


def test_box_shade_is_monotone():
    assert box_shade(0.0) == "#ffffff"
    levels = [int(box_shade(v)[1:3], 16) for v in np.linspace(0, 1, 11)]
    assert levels == sorted(levels, reverse=True)
    assert box_shade(2.0) == box_shade(1.0)


@pytest.fixture(scope="module")
def example_record():
    ex = Example("fig", PASSAGE, QUESTION, [])
    vocab = Vocabulary.build([ex])
    model = TransformerQA(ModelConfig(vocab_size=len(vocab), n_layers=2, n_heads=4, d_model=16, d_ff=32), 0, vocab)
    item = encode(ex, vocab, 64)
    _, rec = model.forward(make_batch([item]), record=True)
    return rec, item.layout, sequence_tokens(item)


def test_line_diagram_on_example_passage(example_record, tmp_path):
    rec, layout, tokens = example_record
    out = tmp_path / "lines.svg"
    svg = emit_attention_lines(rec, 1, [0, 1, 2, 3], layout, tokens, filter_special=True, threshold=0.05, path=out)
    assert out.read_text() == svg
    assert "[CLS]" not in svg and "[SEP]" not in svg
    assert ">pen<" in svg and ">chair<" in svg
    specials = set(layout.special_indices)
    for src, dst in re.findall(r'data-src="(\d+)" data-dst="(\d+)"', svg):
        assert int(src) not in specials and int(dst) not in specials


def test_line_count_follows_threshold(example_record):
    rec, layout, tokens = example_record
    n = layout.used_length - 3
    svg = render_attention_lines(rec, 0, [0, 2], layout, tokens, threshold=0.0)
    assert svg.count("<line") == 2 * n * n
    kept = render_attention_lines(rec, 0, [0], layout, tokens, filter_special=False, threshold=0.0)
    assert "[CLS]" in kept
    assert render_attention_lines(rec, 0, [0], layout, tokens, threshold=1.01).count("<line") == 0


def test_line_diagram_rejects_bad_indices(example_record):
    rec, layout, tokens = example_record
    with pytest.raises(ValueError):
        render_attention_lines(rec, 5, [0], layout, tokens)
    with pytest.raises(ValueError):
        render_attention_lines(rec, 0, [9], layout, tokens)


def test_head_boxes(example_record):
    rec, layout, tokens = example_record
    focus = tokens.index("pen", layout.passage_range[0])
    svg = render_head_boxes(rec, 1, [0, 1, 2, 3], layout, tokens, focus)
    assert svg.count("<rect") == 4 * layout.used_length
    assert 'font-weight="bold">pen<' in svg
    values = [float(v) for v in re.findall(r'data-value="([^"]+)"', svg)]
    assert sum(values) == pytest.approx(4.0)  # each head's row from the focus token sums to one
    with pytest.raises(ValueError):
        render_head_boxes(rec, 1, [0], layout, tokens, layout.used_length)
