"""Connector-level scanner for RUN payloads.

This is deliberately not a POSIX shell parser. It finds simple commands,
the operators joining them, and the words of each command, which is all
the rules need. Subshells ``( ... )``, command substitutions ``$( ... )``
and backticks stay inside a single word; their inner text can be scanned
on demand with :func:`walk_commands`.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from typing import Iterator


class Connector(str, enum.Enum):
    AND_IF = "&&"
    OR_IF = "||"
    SEMICOLON = ";"
    PIPE = "|"
    NEWLINE = "\n"


@dataclass(frozen=True)
class Word:
    raw: str
    value: str
    start: int
    end: int
    has_variable_expansion: bool = False
    # absolute (start, end) ranges of substitution / subshell bodies
    nested: tuple[tuple[int, int], ...] = ()


_ASSIGNMENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*=")
_RESERVED = frozenset({"!", "{", "}", "if", "then", "else", "elif", "do", "while", "until", "time"})


@dataclass(frozen=True)
class SimpleCommand:
    words: tuple[Word, ...]
    raw: str
    span_within_run: tuple[int, int]

    @property
    def argv(self) -> list[str]:
        return [w.value for w in self.words]

    @property
    def has_variable_expansion(self) -> list[bool]:
        return [w.has_variable_expansion for w in self.words]

    def name_index(self) -> int | None:
        """Index of the command word, skipping ``VAR=x`` prefixes and reserved words."""
        for idx, w in enumerate(self.words):
            if _ASSIGNMENT.match(w.raw) or w.raw in _RESERVED:
                continue
            return idx
        return None

    @property
    def name(self) -> str | None:
        idx = self.name_index()
        return None if idx is None else self.words[idx].value

    @property
    def arguments(self) -> tuple[Word, ...]:
        idx = self.name_index()
        return () if idx is None else self.words[idx + 1:]


@dataclass(frozen=True)
class CommandChain:
    commands: tuple[SimpleCommand, ...]
    connectors: tuple[Connector, ...]
    exec_form: bool = False
    unbalanced: bool = False
    source: str = field(default="", repr=False)

    def separators(self) -> list[str]:
        spans = [c.span_within_run for c in self.commands]
        return [self.source[a[1]:b[0]] for a, b in zip(spans, spans[1:])]

    def reassemble(self) -> str:
        if not self.commands:
            return self.source
        out = [self.source[: self.commands[0].span_within_run[0]]]
        seps = self.separators()
        for idx, cmd in enumerate(self.commands):
            out.append(cmd.raw)
            if idx < len(seps):
                out.append(seps[idx])
        out.append(self.source[self.commands[-1].span_within_run[1]:])
        return "".join(out)

    @property
    def has_pipe(self) -> bool:
        return Connector.PIPE in self.connectors


class _Scanner:
    def __init__(self, text: str, escape: str):
        self.text = text
        self.escape = escape
        self.unbalanced = False
        self._cont = re.compile(re.escape(escape) + r"[ \t]*(?:\r\n|\n|\r)")

    def continuation(self, i: int) -> int | None:
        """If a line continuation starts at ``i``, return the index after it
        and any comment or blank lines that follow it."""
        m = self._cont.match(self.text, i)
        if not m:
            return None
        j = m.end()
        text = self.text
        while j < len(text):
            k = j
            while k < len(text) and text[k] in " \t":
                k += 1
            if k < len(text) and text[k] == "#":
                nl = _next_newline(text, k)
                j = nl
                continue
            if k < len(text) and text[k] in "\r\n":
                j = k + (2 if text.startswith("\r\n", k) else 1)
                continue
            break
        return j

    def skip_single(self, i: int, end: int) -> tuple[int, str]:
        """``i`` points after an opening single quote."""
        out = []
        while i < end:
            j = self.continuation(i)
            if j is not None:
                i = j
                continue
            c = self.text[i]
            if c == "'":
                return i + 1, "".join(out)
            out.append(c)
            i += 1
        self.unbalanced = True
        return end, "".join(out)

    def skip_double(self, i: int, end: int, nested: list) -> tuple[int, str, bool]:
        """``i`` points after an opening double quote."""
        out = []
        has_var = False
        text = self.text
        while i < end:
            j = self.continuation(i)
            if j is not None:
                i = j
                continue
            c = text[i]
            if c == '"':
                return i + 1, "".join(out), has_var
            if c == "\\" and i + 1 < end:
                out.append(text[i + 1] if text[i + 1] in '$`"\\' else text[i:i + 2])
                i += 2
                continue
            if c == "$":
                has_var = True
                j = self.skip_dollar(i, end, nested)
                out.append(text[i:j])
                i = j
                continue
            if c == "`":
                has_var = True
                j = self.skip_backtick(i + 1, end, nested)
                out.append(text[i:j])
                i = j
                continue
            out.append(c)
            i += 1
        self.unbalanced = True
        return end, "".join(out), has_var

    def skip_dollar(self, i: int, end: int, nested: list) -> int:
        """``i`` points at ``$``; returns the index after the expansion."""
        text = self.text
        if text.startswith("$(", i):
            close = self.skip_parens(i + 2, end)
            nested.append((i + 2, max(i + 2, close - 1)))
            return close
        if text.startswith("${", i):
            depth = 0
            j = i + 1
            while j < end:
                if text[j] == "{":
                    depth += 1
                elif text[j] == "}":
                    depth -= 1
                    if depth == 0:
                        return j + 1
                j += 1
            self.unbalanced = True
            return end
        return i + 1

    def skip_backtick(self, i: int, end: int, nested: list) -> int:
        """``i`` points after an opening backtick."""
        text = self.text
        start = i
        while i < end:
            if text[i] == "\\" and i + 1 < end:
                i += 2
                continue
            if text[i] == "`":
                nested.append((start, i))
                return i + 1
            i += 1
        self.unbalanced = True
        return end

    def skip_parens(self, i: int, end: int) -> int:
        """``i`` points after an opening paren; returns index after the match."""
        depth = 1
        text = self.text
        scratch: list = []
        while i < end:
            j = self.continuation(i)
            if j is not None:
                i = j
                continue
            c = text[i]
            if c == "'":
                i, _ = self.skip_single(i + 1, end)
                continue
            if c == '"':
                i, _, _ = self.skip_double(i + 1, end, scratch)
                continue
            if c == "\\":
                i += 2
                continue
            if c == "(":
                depth += 1
            elif c == ")":
                depth -= 1
                if depth == 0:
                    return i + 1
            i += 1
        self.unbalanced = True
        return end

    def scan(self, start: int, end: int) -> tuple[list[SimpleCommand], list[Connector]]:
        text = self.text
        commands: list[SimpleCommand] = []
        connectors: list[Connector] = []
        words: list[Word] = []
        pending: Connector | None = None

        w_start: int | None = None
        w_value: list[str] = []
        w_var = False
        w_nested: list[tuple[int, int]] = []

        def end_word(at: int) -> None:
            nonlocal w_start, w_var, w_nested
            if w_start is not None:
                words.append(Word(text[w_start:at], "".join(w_value), w_start, at, w_var, tuple(w_nested)))
            w_start = None
            w_value.clear()
            w_var = False
            w_nested = []

        def end_command(conn: Connector | None) -> None:
            nonlocal pending
            if words:
                if commands and pending is not None:
                    connectors.append(pending)
                elif commands:
                    connectors.append(Connector.NEWLINE)
                a, b = words[0].start, words[-1].end
                commands.append(SimpleCommand(tuple(words), text[a:b], (a, b)))
                words.clear()
                pending = conn
            elif conn is not None and commands:
                # operator with an empty left side, e.g. "a;;b" or "a; && b"
                pending = pending or conn

        i = start
        while i < end:
            j = self.continuation(i)
            if j is not None:
                i = min(j, end)
                continue
            c = text[i]
            if c in " \t":
                end_word(i)
                i += 1
                continue
            if c in "\r\n":
                end_word(i)
                end_command(Connector.NEWLINE)
                i += 1
                continue
            if c == "#" and w_start is None:
                i = min(_next_newline(text, i), end)
                continue
            two = text[i:i + 2]
            if two in ("&&", "||", "|&") or c in "|;" or (c == "&" and two != "&>"):
                end_word(i)
                if two == "&&":
                    conn, step = Connector.AND_IF, 2
                elif two == "||":
                    conn, step = Connector.OR_IF, 2
                elif two == "|&":
                    conn, step = Connector.PIPE, 2
                elif c == "|":
                    conn, step = Connector.PIPE, 1
                else:
                    conn, step = Connector.SEMICOLON, 1
                end_command(conn)
                i += step
                continue

            if w_start is None:
                w_start = i
            if c == "'":
                i, val = self.skip_single(i + 1, end)
                w_value.append(val)
            elif c == '"':
                i, val, var = self.skip_double(i + 1, end, w_nested)
                w_value.append(val)
                w_var = w_var or var
            elif c == "\\":
                w_value.append(text[i + 1:i + 2])
                i += 2
            elif c == "$":
                w_var = True
                j = self.skip_dollar(i, end, w_nested)
                w_value.append(text[i:j])
                i = j
            elif c == "`":
                w_var = True
                j = self.skip_backtick(i + 1, end, w_nested)
                w_value.append(text[i:j])
                i = j
            elif c == "(" and i == w_start:
                j = self.skip_parens(i + 1, end)
                w_nested.append((i + 1, max(i + 1, j - 1)))
                w_value.append(text[i:j])
                i = j
            elif c in "<>":
                j = i + 1
                while j < end and text[j] in "<>&|":
                    j += 1
                w_value.append(text[i:j])
                i = j
            elif c == "&":
                # "&>" redirection
                w_value.append("&>")
                i += 2
            else:
                w_value.append(c)
                i += 1
        end_word(min(i, end))
        end_command(None)
        return commands, connectors


def _next_newline(text: str, i: int) -> int:
    """Index just past the newline that ends the line containing ``i``."""
    m = re.compile(r"\r\n|\n|\r").search(text, i)
    return len(text) if m is None else m.end()


_JSON_STRING = re.compile(r'"(?:[^"\\]|\\.)*"')


def parse_exec_form(raw_args: str) -> list[str] | None:
    """Return the array of an exec-form (JSON array) argument, or None."""
    from .dockerfile import fold_continuations

    folded = fold_continuations(raw_args).strip()
    if not folded.startswith("["):
        return None
    try:
        value = json.loads(folded)
    except ValueError:
        return None
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        return None
    return value


def parse_run_payload(raw_args: str, escape: str = "\\", start: int = 0) -> CommandChain:
    """Split a RUN payload into simple commands and connectors.

    >>> chain = parse_run_payload("apt-get update && apt-get install -y curl")
    >>> [c.argv[0] for c in chain.commands], [k.name for k in chain.connectors]
    (['apt-get', 'apt-get'], ['AND_IF'])
    """
    argv = parse_exec_form(raw_args[start:])
    if argv is not None:
        words = []
        matches = list(_JSON_STRING.finditer(raw_args, start))
        for m, value in zip(matches, argv):
            words.append(Word(m.group(0), value, m.start(), m.end(), "$" in value))
        if words:
            a, b = words[0].start, words[-1].end
            cmd = SimpleCommand(tuple(words), raw_args[a:b], (a, b))
            return CommandChain((cmd,), (), exec_form=True, source=raw_args)
        return CommandChain((), (), exec_form=True, source=raw_args)

    scanner = _Scanner(raw_args, escape)
    commands, connectors = scanner.scan(start, len(raw_args))
    return CommandChain(tuple(commands), tuple(connectors), False, scanner.unbalanced, raw_args)


def walk_commands(chain: CommandChain, escape: str = "\\") -> Iterator[SimpleCommand]:
    """Yield every simple command, descending into subshells and substitutions.

    Spans of nested commands stay relative to ``chain.source``.
    """
    stack = list(reversed(chain.commands))
    scanner = _Scanner(chain.source, escape)
    while stack:
        cmd = stack.pop()
        yield cmd
        if chain.exec_form:
            continue
        inner: list[SimpleCommand] = []
        for w in cmd.words:
            for a, b in w.nested:
                cmds, _ = scanner.scan(a, b)
                inner.extend(cmds)
        stack.extend(reversed(inner))


_RUN_FLAG = re.compile(r"--[A-Za-z][A-Za-z0-9-]*(?:=\S*)?")


def split_run_flags(raw_args: str, escape: str = "\\") -> int:
    """Offset in ``raw_args`` where the command payload starts, after any
    BuildKit ``--mount=...``-style flags."""
    cont = re.compile(re.escape(escape) + r"[ \t]*(?:\r\n|\n|\r)|[ \t]+")
    i = 0
    while True:
        m = cont.match(raw_args, i)
        while m and m.end() > i:
            i = m.end()
            m = cont.match(raw_args, i)
        f = _RUN_FLAG.match(raw_args, i)
        if not f:
            return i
        end = f.end()
        if end < len(raw_args) and raw_args[end] not in " \t\r\n" + escape:
            return i
        i = end
