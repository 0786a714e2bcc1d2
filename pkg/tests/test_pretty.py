import random

import pytest

from docmark.pretty import (
    Block,
    Break,
    Str,
    block,
    char_metric,
    format,
    from_plain_text,
    tree_width,
    unbroken,
)


def random_tree(rng, depth=0, wide_atoms=False):
    """Blocks alternate atoms and breaks, so every pair of adjacent atoms has
    a break opportunity between them."""
    def atom():
        if depth < 3 and rng.random() < 0.3:
            return random_tree(rng, depth + 1, wide_atoms)
        hi = 25 if wide_atoms else 8
        return Str("x" * rng.randint(1, hi))

    items = [atom()]
    for _ in range(rng.randint(0, 5)):
        items.append(Break(rng.randint(0, 2), rng.randint(0, 3)))
        items.append(atom())
    return Block(rng.randint(0, 4), tuple(items), consistent=rng.random() < 0.4)


class TestUnbroken:
    def test_str(self):
        assert unbroken(Str("a")) == "a"

    def test_break_spaces(self):
        assert unbroken(Break(2, 0)) == "  "

    def test_nested_blocks_concatenate(self):
        t = block("f(", Break(0, 0), block("x,", Break(1, 2), "y", indent=1), ")", indent=2)
        assert unbroken(t) == "f(x, y)"


class TestFormat:
    def test_single_string(self):
        assert format(Str("abc"), 80) == ["abc"]

    def test_worked_example_consistent_break(self):
        t = Block(2, (Str("f("), Break(0, 0), Str("x)")), consistent=True)
        assert format(t, 3) == ["f(", "  x)"]

    def test_worked_example_fits_when_wide(self):
        t = Block(2, (Str("f("), Break(0, 0), Str("x)")), consistent=True)
        assert format(t, 4) == ["f(x)"]

    def test_inconsistent_breaks_greedily(self):
        t = block("aa", Break(1), "bb", Break(1), "cc", indent=0)
        assert format(t, 5) == ["aa bb", "cc"]

    def test_consistent_breaks_everywhere(self):
        t = block("aa", Break(1), "bb", Break(1), "cc", indent=0, consistent=True)
        assert format(t, 5) == ["aa", "bb", "cc"]

    def test_break_indent_adds_to_block_base(self):
        t = block("head", Break(1, 2), "tail", indent=1, consistent=True)
        assert format(t, 4) == ["head", "   tail"]

    def test_rejects_nonpositive_margin(self):
        with pytest.raises(ValueError):
            format(Str("x"), 0)

    def test_huge_margin_single_line(self):
        rng = random.Random(7)
        for _ in range(50):
            t = random_tree(rng)
            assert format(t, 10 ** 6) == [unbroken(t)]

    def test_metric_scales(self):
        double = lambda s: 2.0 * len(s)
        t = block("aa", Break(1), "bb", indent=0)
        assert format(t, 9, double) == ["aa", "bb"]
        assert format(t, 10, double) == ["aa bb"]


class TestLaws:
    def test_content_preservation(self):
        rng = random.Random(21)
        for _ in range(300):
            t = random_tree(rng)
            joined = "\n".join(format(t, rng.randint(1, 60)))
            # identical characters modulo whitespace runs at break positions
            assert "".join(joined.split()) == "".join(unbroken(t).split())

    def test_content_preservation_nonzero_breaks(self):
        rng = random.Random(22)

        def widen(t):
            if isinstance(t, Break):
                return Break(max(1, t.spaces), t.indent)
            if isinstance(t, Block):
                return Block(t.indent, tuple(widen(c) for c in t.body), t.consistent)
            return t

        for _ in range(300):
            t = widen(random_tree(rng))
            joined = "\n".join(format(t, rng.randint(1, 60)))
            assert joined.split() == unbroken(t).split()

    def test_margin_law(self):
        rng = random.Random(42)
        for trial in range(1000):
            margin = rng.randint(4, 40)
            t = random_tree(rng, wide_atoms=rng.random() < 0.3)
            for line in format(t, margin):
                content = line.lstrip(" ")
                if char_metric(content) > margin:
                    # only a single over-wide atom may overflow the margin
                    assert "x" * (margin + 1) in content

    def test_halving_margin_never_reduces_lines(self):
        rng = random.Random(99)
        for _ in range(1000):
            t = random_tree(rng)
            margin = rng.randint(2, 80)
            wide = len(format(t, margin))
            narrow = len(format(t, max(1, margin // 2)))
            assert narrow >= wide


class TestPlainText:
    def test_single_line(self):
        assert unbroken(from_plain_text("hello")) == "hello"

    def test_multi_line_round_trip(self):
        t = from_plain_text("a\nbb\nccc")
        assert [ln for ln in format(t, 2)] == ["a", "bb", "ccc"]
        assert tree_width(t) == len("a bb ccc")
