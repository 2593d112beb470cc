"""Lossless instruction-level Dockerfile parser and printer.

The parser never normalizes: every byte of the input lands either in an
instruction's raw text or in an interstitial trivia chunk (comments, blank
lines, parser directives), so printing an unedited tree returns the input
unchanged.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field, replace


class Keyword(str, enum.Enum):
    FROM = "FROM"
    RUN = "RUN"
    COPY = "COPY"
    ADD = "ADD"
    WORKDIR = "WORKDIR"
    MAINTAINER = "MAINTAINER"
    LABEL = "LABEL"
    SHELL = "SHELL"
    ENV = "ENV"
    ARG = "ARG"
    CMD = "CMD"
    ENTRYPOINT = "ENTRYPOINT"
    EXPOSE = "EXPOSE"
    USER = "USER"
    VOLUME = "VOLUME"
    ONBUILD = "ONBUILD"
    HEALTHCHECK = "HEALTHCHECK"
    STOPSIGNAL = "STOPSIGNAL"
    OTHER = "other"

    @classmethod
    def lookup(cls, word: str) -> Keyword:
        try:
            kw = cls(word.upper())
        except ValueError:
            return cls.OTHER
        return kw


class DockerfileError(Exception):
    pass


class MalformedInstruction(DockerfileError):
    """A non-comment line that does not start with an instruction keyword."""

    def __init__(self, line: int, text: str):
        super().__init__(f"line {line}: no instruction keyword in {text.strip()!r}")
        self.line = line
        self.text = text


class EmptyImageName(DockerfileError):
    pass


class NotUtf8(DockerfileError):
    pass


@dataclass(frozen=True)
class SourceSpan:
    start_line: int
    end_line: int
    byte_offset: int
    byte_len: int


@dataclass(frozen=True)
class Instruction:
    """One Dockerfile instruction, possibly spanning several physical lines.

    ``indent + keyword_text + separator + raw_args + eol`` is exactly the
    source text of the instruction. ``raw_args`` keeps line continuations
    and any comment lines embedded in them.
    """

    keyword: Keyword
    raw_args: str
    span: SourceSpan | None
    stage_index: int
    keyword_text: str = ""
    indent: str = ""
    separator: str = " "
    eol: str = "\n"
    escape: str = "\\"

    @property
    def text(self) -> str:
        return self.indent + self.keyword_text + self.separator + self.raw_args + self.eol

    @property
    def args(self) -> str:
        """Arguments with continuations folded and embedded comment lines dropped."""
        return fold_continuations(self.raw_args, self.escape)

    @property
    def lines(self) -> range:
        if self.span is None:
            return range(0)
        return range(self.span.start_line, self.span.end_line + 1)

    def with_args(self, raw_args: str) -> Instruction:
        return replace(self, raw_args=raw_args)


@dataclass(frozen=True)
class Trivia:
    """Interstitial source text: blank lines, comments, parser directives."""

    text: str
    start_line: int


@dataclass(frozen=True)
class ImageRef:
    name: str
    tag: str | None = None
    digest: str | None = None
    alias: str | None = None
    platform: str | None = None

    @property
    def pinned(self) -> bool:
        return self.tag is not None or self.digest is not None

    def reference(self) -> str:
        out = self.name
        if self.tag is not None:
            out += ":" + self.tag
        if self.digest is not None:
            out += "@" + self.digest
        return out


@dataclass(frozen=True)
class DockerfileAst:
    nodes: tuple[Instruction | Trivia, ...]
    original_text: str
    escape: str = "\\"
    errors: tuple[MalformedInstruction, ...] = field(default=(), compare=False)

    @property
    def instructions(self) -> list[Instruction]:
        return [n for n in self.nodes if isinstance(n, Instruction)]

    @property
    def comments_and_blanks(self) -> dict[int, str]:
        """Trivia text keyed by node position."""
        return {i: n.text for i, n in enumerate(self.nodes) if isinstance(n, Trivia)}

    def instruction_at_line(self, line: int) -> Instruction | None:
        for ins in self.instructions:
            if ins.span is not None and ins.span.start_line <= line <= ins.span.end_line:
                return ins
        return None

    def stage_instructions(self, stage_index: int) -> list[Instruction]:
        return [i for i in self.instructions if i.stage_index == stage_index]

    def replace_instruction(self, old: Instruction, new: Instruction) -> DockerfileAst:
        nodes = tuple(new if n is old else n for n in self.nodes)
        if nodes == self.nodes and old is not new:
            raise ValueError("instruction not part of this tree")
        return replace(self, nodes=nodes)

    def insert_before(self, anchor: Instruction, new: Instruction) -> DockerfileAst:
        out: list[Instruction | Trivia] = []
        found = False
        for n in self.nodes:
            if n is anchor:
                out.append(new)
                found = True
            out.append(n)
        if not found:
            raise ValueError("instruction not part of this tree")
        return replace(self, nodes=tuple(out))


_DIRECTIVE = re.compile(r"^[ \t]*#[ \t]*([A-Za-z_]+)[ \t]*=[ \t]*(\S*)[ \t]*$")
_KEYWORD = re.compile(r"^(\ufeff?[ \t]*)([A-Za-z][A-Za-z0-9_]*)([ \t]+|$)")
_LINE_END = re.compile(r"\r\n|\n|\r")


def split_lines(text: str) -> list[str]:
    """Split keeping line terminators; a trailing partial line is kept too."""
    out: list[str] = []
    pos = 0
    for m in _LINE_END.finditer(text):
        out.append(text[pos:m.end()])
        pos = m.end()
    if pos < len(text):
        out.append(text[pos:])
    return out


def _strip_eol(line: str) -> tuple[str, str]:
    if line.endswith("\r\n"):
        return line[:-2], "\r\n"
    if line.endswith(("\n", "\r")):
        return line[:-1], line[-1]
    return line, ""


def _continues(body: str, escape: str) -> bool:
    stripped = body.rstrip(" \t")
    if not stripped.endswith(escape):
        return False
    # an escaped escape character does not continue the line
    run = len(stripped) - len(stripped.rstrip(escape))
    return run % 2 == 1


def _is_comment(body: str) -> bool:
    return body.lstrip(" \t").startswith("#")


def fold_continuations(raw: str, escape: str = "\\") -> str:
    """Join continuation lines the way the Docker builder does."""
    pieces: list[str] = []
    lines = split_lines(raw)
    for idx, line in enumerate(lines):
        body, _ = _strip_eol(line)
        if idx > 0 and (_is_comment(body) or not body.strip()):
            continue
        if _continues(body, escape):
            stripped = body.rstrip(" \t")
            pieces.append(stripped[: -len(escape)])
        else:
            pieces.append(body)
    return "".join(pieces)


def _read_directives(lines: list[str]) -> tuple[int, str]:
    """Return (number of directive lines, escape character)."""
    escape = "\\"
    seen: set[str] = set()
    count = 0
    for line in lines:
        body, _ = _strip_eol(line)
        m = _DIRECTIVE.match(body)
        if not m:
            break
        name = m.group(1).lower()
        if name not in ("syntax", "escape", "check") or name in seen:
            break
        seen.add(name)
        if name == "escape" and m.group(2) in ("\\", "`"):
            escape = m.group(2)
        count += 1
    return count, escape


def parse_dockerfile(text: str) -> DockerfileAst:
    """Parse Dockerfile source into a lossless instruction tree.

    Lines without a recognizable keyword are kept as ``Keyword.OTHER``
    instructions and reported in ``errors``; parsing never aborts.
    """
    if isinstance(text, bytes):
        text = decode_source(text)
    lines = split_lines(text)
    n_directives, escape = _read_directives(lines)

    nodes: list[Instruction | Trivia] = []
    errors: list[MalformedInstruction] = []
    stage = -1
    offset = 0
    i = 0
    trivia_buf: list[str] = []
    trivia_start = 1

    def flush_trivia() -> None:
        if trivia_buf:
            nodes.append(Trivia("".join(trivia_buf), trivia_start))
            trivia_buf.clear()

    while i < len(lines):
        line = lines[i]
        body, _ = _strip_eol(line)
        if i < n_directives or not body.strip() or _is_comment(body):
            if not trivia_buf:
                trivia_start = i + 1
            trivia_buf.append(line)
            offset += len(line)
            i += 1
            continue
        flush_trivia()

        start = i
        j = i
        while _continues(_strip_eol(lines[j])[0], escape) and j + 1 < len(lines):
            j += 1
            # blank and comment lines inside a continuation do not end it
            while j + 1 < len(lines) and (
                _is_comment(_strip_eol(lines[j])[0]) or not _strip_eol(lines[j])[0].strip()
            ):
                j += 1
        chunk = "".join(lines[start:j + 1])
        body_all, eol = _strip_eol(chunk)

        m = _KEYWORD.match(body_all)
        if m:
            indent, kw_text, sep = m.group(1), m.group(2), m.group(3)
            rest = body_all[m.end():]
            keyword = Keyword.lookup(kw_text)
        else:
            indent = body_all[: len(body_all) - len(body_all.lstrip(" \t"))]
            kw_text, sep, rest = "", "", body_all[len(indent):]
            keyword = Keyword.OTHER
            errors.append(MalformedInstruction(start + 1, body_all))

        if keyword is Keyword.FROM:
            stage += 1
        span = SourceSpan(start + 1, j + 1, offset, len(chunk))
        nodes.append(Instruction(
            keyword=keyword,
            raw_args=rest,
            span=span,
            stage_index=max(stage, 0),
            keyword_text=kw_text,
            indent=indent,
            separator=sep,
            eol=eol,
            escape=escape,
        ))
        offset += len(chunk)
        i = j + 1
    flush_trivia()
    return DockerfileAst(tuple(nodes), text, escape, tuple(errors))


def print_dockerfile(ast: DockerfileAst) -> str:
    return "".join(n.text for n in ast.nodes)


def decode_source(data: bytes) -> str:
    """Decode file bytes strictly; a leading BOM is preserved in the text."""
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise NotUtf8(str(exc)) from None


_PLATFORM_FLAG = re.compile(r"^--platform=(\S*)$")


def split_from_args(args: str) -> tuple[list[str], list[str]]:
    """Split FROM arguments into leading ``--flag`` words and the rest."""
    words = args.split()
    flags = []
    while words and words[0].startswith("--"):
        flags.append(words.pop(0))
    return flags, words


def parse_image_ref(raw: str) -> ImageRef:
    """Decompose the argument text of a FROM instruction.

    >>> parse_image_ref("ubuntu:20.04 AS builder")
    ImageRef(name='ubuntu', tag='20.04', digest=None, alias='builder', platform=None)
    """
    flags, words = split_from_args(fold_continuations(raw))
    platform = None
    for flag in flags:
        m = _PLATFORM_FLAG.match(flag)
        if m:
            platform = m.group(1)
    if not words:
        raise EmptyImageName(raw)
    image = words[0]
    alias = None
    if len(words) >= 3 and words[1].lower() == "as":
        alias = words[2]

    digest = None
    if "@" in image:
        image, digest = image.split("@", 1)
    tag = None
    # a colon after the last slash separates the tag; earlier ones belong to a registry port
    slash = image.rfind("/")
    colon = image.rfind(":")
    if colon > slash:
        image, tag = image[:colon], image[colon + 1:]
    if not image:
        raise EmptyImageName(raw)
    return ImageRef(name=image, tag=tag or None, digest=digest or None, alias=alias, platform=platform)


def image_token_span(raw_args: str) -> tuple[int, int] | None:
    """Character range of the image word inside FROM raw args."""
    for m in re.finditer(r"\S+", raw_args):
        word = m.group(0)
        if word.startswith("--") or word in ("\\", "`"):
            continue
        return m.start(), m.end()
    return None
