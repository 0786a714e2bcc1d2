import random

import pytest

from docmark.presentation import (
    HandlerRegistry,
    PresentationError,
    default_handlers,
    escape_latex,
    present,
    unescape_latex,
)
from docmark.syntax import BASE_KEYWORDS, CommandSpec

KW = BASE_KEYWORDS.with_commands(
    text=CommandSpec(), section=CommandSpec(), subsection=CommandSpec(),
    ML=CommandSpec())


class TestBasics:
    def test_text_block_becomes_paragraph(self):
        out = present("text \u27e8hello\u27e9", KW)
        assert "hello" in out
        assert out.endswith("\n\n")

    def test_section_heading(self):
        out = present("section \u27e8Intro\u27e9", KW)
        assert "\\section{Intro}" in out

    def test_subsection_html(self):
        out = present("subsection \u27e8Deep\u27e9", KW, fmt="html")
        assert "<h2>Deep</h2>" in out

    def test_symbol_substitution(self):
        out = present("text \u27e8take \\<alpha> now\u27e9", KW)
        assert "\\(\\alpha\\)" in out
        html = present("text \u27e8take \\<alpha> now\u27e9", KW, fmt="html")
        assert "\u03b1" in html

    def test_unknown_symbol_escaped_verbatim(self):
        out = present("text \u27e8\\<mystery>\u27e9", KW)
        assert "textbackslash" in out and "mystery" in out

    def test_formal_source_escaped(self):
        out = present("ML \u27e8val x = 1\u27e9", KW)
        # the command and its cartouche render verbatim-escaped
        assert "ML" in out and "val x = 1" in out

    def test_embedded_comment_macro(self):
        out = present("text \u27e8before \\<comment> \u27e8aside\u27e9 after\u27e9", KW)
        assert "\\cmt{aside}" in out

    def test_top_level_comment(self):
        out = present("(* remark *) eval", KW)
        assert "\\cmt{ remark }" in out


class TestMarkdown:
    def test_two_items_one_environment(self):
        body = "\\<^item> first\n\\<^item> second"
        out = present(f"text \u27e8{body}\u27e9", KW)
        assert out.count("\\begin{itemize}") == 1
        assert out.count("\\end{itemize}") == 1
        assert out.count("\\item ") == 2

    def test_nested_depth(self):
        body = "\\<^item> a\n\\<^item>\\<^item> b\n\\<^item> c"
        out = present(f"text \u27e8{body}\u27e9", KW)
        assert out.count("\\begin{itemize}") == 2
        assert out.count("\\end{itemize}") == 2

    def test_enumerate_and_description(self):
        body = "\\<^enum> one\n\\<^descr> named"
        out = present(f"text \u27e8{body}\u27e9", KW)
        assert "\\begin{enumerate}" in out and "\\end{enumerate}" in out
        assert "\\begin{description}" in out and "\\end{description}" in out

    def test_html_lists(self):
        body = "\\<^item> x\n\\<^item> y"
        out = present(f"text \u27e8{body}\u27e9", KW, fmt="html")
        assert out.count("<ul>") == 1 and out.count("</ul>") == 1
        assert out.count("<li>") == 2

    @pytest.mark.parametrize("seed", range(12))
    def test_environment_balance_random_sequences(self, seed):
        rng = random.Random(seed)
        depth = 0
        lines = []
        for _ in range(rng.randint(1, 15)):
            depth = max(1, depth + rng.choice([-1, 1]))
            kind = rng.choice(["item", "enum", "descr"])
            lines.append("\\<^%s>" % kind * depth + f" content {rng.randint(0, 9)}")
        out = present("text \u27e8" + "\n".join(lines) + "\u27e9", KW)
        for env in ("itemize", "enumerate", "description"):
            assert out.count("\\begin{" + env + "}") == out.count("\\end{" + env + "}")
        html = present("text \u27e8" + "\n".join(lines) + "\u27e9", KW, fmt="html")
        for tag in ("ul", "ol", "dl"):
            assert html.count(f"<{tag}>") == html.count(f"</{tag}>")


class TestAntiquotations:
    def test_url_handler(self):
        out = present("text \u27e8see @{url https://example.org}\u27e9", KW)
        assert "\\url{https://example.org}" in out

    def test_unknown_name_lists_registered(self):
        with pytest.raises(PresentationError) as err:
            present("text \u27e8@{nope}\u27e9", KW)
        assert "nope" in str(err.value) and "url" in str(err.value)

    def test_custom_handler(self):
        handlers = default_handlers()
        handlers.register("shout", lambda arg, fmt: arg.upper())
        out = present("text \u27e8@{shout quiet}\u27e9", KW, handlers=handlers)
        assert "QUIET" in out

    def test_duplicate_registration_rejected(self):
        handlers = default_handlers()
        with pytest.raises(PresentationError):
            handlers.register("url", lambda a, f: a)

    def test_handler_error_carries_range(self):
        handlers = default_handlers()

        def bad(arg, fmt):
            raise RuntimeError("broken")

        handlers.register("bad", bad)
        text = "text \u27e8pre @{bad x} post\u27e9"
        with pytest.raises(PresentationError) as err:
            present(text, KW, handlers=handlers)
        assert err.value.offset == text.index("@{")
        assert err.value.end == text.index("}") + 1


class TestErrors:
    def test_unterminated_cartouche_reports_offset(self):
        text = "text \u27e8oops"
        with pytest.raises(PresentationError) as err:
            present(text, KW)
        assert err.value.offset == text.index("\u27e8")


class TestTotalityAndEscaping:
    def test_plain_text_round_trip(self):
        plain = "ordinary prose with $pecial & ch_ars {100%}"
        out = present(plain, KW)
        assert unescape_latex(out) == plain

    def test_escape_unescape_identity(self):
        for probe in ["a\\b", "{x}", "50% & more", "_^~", ""]:
            assert unescape_latex(escape_latex(probe)) == probe

    @pytest.mark.parametrize("seed", range(8))
    def test_totality_no_characters_lost(self, seed):
        rng = random.Random(seed)
        words = ["alpha", "x=1", "sum", "(note)", "100"]
        plain = " ".join(rng.choice(words) for _ in range(rng.randint(1, 12)))
        out = present(plain, KW)
        assert unescape_latex(out) == plain

    def test_html_escaping(self):
        out = present("a < b & c > d", KW, fmt="html")
        assert "&lt;" in out and "&amp;" in out and "&gt;" in out
