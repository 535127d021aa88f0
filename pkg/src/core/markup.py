"""
Bracket markup for word-level annotations.

Annotated texts mark pathological fragments inline, e.g. ``the <<red>> cat``.
Parsing strips the delimiters and returns character offsets into the plain text.
"""

from typing import List, Sequence, Tuple

from .errors import EmptySpan, NestedMarkup, UnbalancedMarkup
from .types import AnnotatedSpan, Side

DEFAULT_OPEN = "<<"
DEFAULT_CLOSE = ">>"


def _check_delimiters(open_: str, close: str) -> None:
    if not open_ or not close:
        raise ValueError("span delimiters must be non-empty")
    if open_ == close:
        raise ValueError("open and close delimiters must differ")


def parse_span_markup(
    marked: str,
    open_: str = DEFAULT_OPEN,
    close: str = DEFAULT_CLOSE,
    side: Side = Side.TARGET,
) -> Tuple[str, List[AnnotatedSpan]]:
    """Strip span delimiters from ``marked`` and return (plain, spans)."""
    _check_delimiters(open_, close)

    # Count mismatch is reported first so "a <b <c> d" is unbalanced, not nested.
    n_open = marked.count(open_)
    n_close = marked.count(close)
    if n_open != n_close:
        raise UnbalancedMarkup(f"{n_open} open vs {n_close} close delimiters", 0)

    plain: List[str] = []
    spans: List[AnnotatedSpan] = []
    plain_len = 0
    span_start = -1
    i = 0
    while i < len(marked):
        if marked.startswith(open_, i):
            if span_start >= 0:
                raise NestedMarkup("delimiter opened inside an open span", i)
            span_start = plain_len
            i += len(open_)
        elif marked.startswith(close, i):
            if span_start < 0:
                raise UnbalancedMarkup("close delimiter without open", i)
            if plain_len == span_start:
                raise EmptySpan("empty span", i)
            spans.append(AnnotatedSpan(span_start, plain_len, side))
            span_start = -1
            i += len(close)
        else:
            plain.append(marked[i])
            plain_len += 1
            i += 1
    if span_start >= 0:
        raise UnbalancedMarkup("span left open", len(marked))
    return "".join(plain), spans


def render_span_markup(
    plain: str,
    spans: Sequence[AnnotatedSpan],
    open_: str = DEFAULT_OPEN,
    close: str = DEFAULT_CLOSE,
) -> str:
    """Inverse of parse_span_markup for sorted, non-overlapping spans."""
    _check_delimiters(open_, close)
    pieces: List[str] = []
    cursor = 0
    for span in sorted(spans):
        pieces.append(plain[cursor : span.start])
        pieces.append(open_ + plain[span.start : span.end] + close)
        cursor = span.end
    pieces.append(plain[cursor:])
    return "".join(pieces)
