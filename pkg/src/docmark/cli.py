"""Command-line interface: serve, check, tokens, format, present, export."""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

import yaml

from . import __version__
from .config import ConfigError, load_config
from .execution import THEORY_COMMANDS
from .pretty import format as pretty_format
from .presentation import PresentationError, present
from .protocol import ProtocolError, payload_to_pretty
from .sessions import SqliteExportStore
from .server import batch_check, serve
from .syntax import BASE_KEYWORDS, CommandSpec, KeywordTable, tokenize

DEFAULT_TOKEN_KEYWORDS = BASE_KEYWORDS.merge(THEORY_COMMANDS)


def _escape_source(source: str) -> str:
    return (source.replace("\\", "\\\\").replace("\t", "\\t")
            .replace("\n", "\\n").replace("\r", "\\r"))


def _load_keyword_file(path: str) -> KeywordTable:
    with open(path, "r", encoding="utf-8") as handle:
        raw = yaml.safe_load(handle.read()) or {}
    commands = {}
    for name, attrs in (raw.get("commands") or {}).items():
        attrs = attrs or {}
        commands[name] = CommandSpec(bool(attrs.get("load", False)),
                                     attrs.get("extension"))
    minor = frozenset(raw.get("minor") or [])
    return BASE_KEYWORDS.merge(KeywordTable(commands, minor))


def cmd_tokens(args) -> int:
    keywords = DEFAULT_TOKEN_KEYWORDS
    if args.keywords:
        keywords = _load_keyword_file(args.keywords)
    with open(args.file, "r", encoding="utf-8") as handle:
        text = handle.read()
    for tok in tokenize(text, keywords):
        print(f"{tok.kind.value}\t{tok.start}\t{tok.end}\t{_escape_source(tok.source)}")
    return 0


def cmd_format(args) -> int:
    if args.file:
        with open(args.file, "r", encoding="utf-8") as handle:
            payload = handle.read()
    else:
        payload = sys.stdin.read()
    try:
        tree = payload_to_pretty(payload)
    except ProtocolError as exc:
        print(f"format: {exc}", file=sys.stderr)
        return 2
    for line in pretty_format(tree, args.margin):
        print(line)
    return 0


def cmd_present(args) -> int:
    with open(args.file, "r", encoding="utf-8") as handle:
        text = handle.read()
    try:
        out = present(text, DEFAULT_TOKEN_KEYWORDS, fmt=args.format)
    except PresentationError as exc:
        print(f"present: {exc}", file=sys.stderr)
        return 1
    if args.output:
        with open(args.output, "w", encoding="utf-8") as handle:
            handle.write(out)
    else:
        sys.stdout.write(out)
    return 0


def cmd_export(args) -> int:
    store = SqliteExportStore(args.store)
    try:
        if args.list:
            for entry in store.retrieve(args.session):
                marker = " (xz)" if entry.compressed else ""
                print(f"{entry.theory}:{entry.name} ({len(entry.payload)} bytes){marker}")
            return 0
        if not args.name:
            print("export: give NAME or --list", file=sys.stderr)
            return 2
        entries = store.retrieve(args.session, args.theory, args.name)
        if not entries:
            print(f"export: no entry matches {args.name!r}", file=sys.stderr)
            return 1
        if len(entries) > 1 and args.output:
            names = ", ".join(e.name for e in entries)
            print(f"export: pattern matches several entries: {names}", file=sys.stderr)
            return 1
        if args.output:
            with open(args.output, "wb") as handle:
                handle.write(entries[0].payload)
        else:
            sys.stdout.buffer.write(entries[0].payload)
        return 0
    finally:
        store.close()


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="docmark",
        description="Live document checking: versioned edits in, "
                    "offset-anchored diagnostics and markup out.")
    parser.add_argument("--version", action="version", version=f"docmark {__version__}")
    parser.add_argument("--config", metavar="PATH", help="YAML configuration file")
    sub = parser.add_subparsers(dest="command", required=True)

    p_serve = sub.add_parser("serve", help="serve one interactive session")
    p_serve.add_argument("--socket", metavar="PATH", help="unix socket to listen on")
    p_serve.add_argument("--stdio", action="store_true", help="speak the protocol on stdio")

    p_check = sub.add_parser("check", help="batch-check files")
    p_check.add_argument("paths", nargs="+", metavar="FILE")
    p_check.add_argument("--store", metavar="DB", help="write exports to this database")
    p_check.add_argument("--verbose", action="store_true", help="also print status messages")

    p_tokens = sub.add_parser("tokens", help="dump the token stream of a file")
    p_tokens.add_argument("file", metavar="FILE")
    p_tokens.add_argument("--keywords", metavar="FILE", help="YAML keyword table")

    p_format = sub.add_parser("format", help="lay out a serialized message body")
    p_format.add_argument("file", nargs="?", metavar="FILE", help="default: stdin")
    p_format.add_argument("--margin", type=int, default=76)

    p_present = sub.add_parser("present", help="render document source for typesetting")
    p_present.add_argument("file", metavar="FILE")
    p_present.add_argument("--format", choices=("latex", "html"), default="latex")
    p_present.add_argument("-o", "--output", metavar="OUT")

    p_export = sub.add_parser("export", help="list or retrieve stored exports")
    p_export.add_argument("--store", metavar="DB", required=True)
    p_export.add_argument("--session", required=True)
    p_export.add_argument("--theory", help="restrict to one theory")
    p_export.add_argument("--list", action="store_true")
    p_export.add_argument("name", nargs="?", metavar="NAME", help="entry name or pattern")
    p_export.add_argument("-o", "--output", metavar="FILE")

    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"docmark: config error: {exc}", file=sys.stderr)
        return 2

    if args.command == "serve":
        return serve(cfg, socket_path=args.socket, stdio=args.stdio)
    if args.command == "check":
        result = batch_check(args.paths, cfg, store_path=args.store, verbose=args.verbose)
        for line in result.lines:
            print(line)
        return result.exit_code
    if args.command == "tokens":
        return cmd_tokens(args)
    if args.command == "format":
        return cmd_format(args)
    if args.command == "present":
        return cmd_present(args)
    if args.command == "export":
        return cmd_export(args)
    return 2


if __name__ == "__main__":
    sys.exit(main())
