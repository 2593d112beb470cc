"""Detection of the eight target Dockerfile smells.

Each detector mirrors the observable behaviour of hadolint 2.15 for its
rule, so that presence/absence agrees with the reference linter on the
golden corpus. Known, deliberate divergences are listed in README.md.
"""

from __future__ import annotations

import enum
import posixpath
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

from .dockerfile import (
    DockerfileAst,
    DockerfileError,
    ImageRef,
    Instruction,
    Keyword,
    parse_image_ref,
)
from .shell import (
    CommandChain,
    SimpleCommand,
    parse_exec_form,
    parse_run_payload,
    split_run_flags,
    walk_commands,
)


class RuleId(str, enum.Enum):
    DL3003 = "DL3003"
    DL3006 = "DL3006"
    DL3008 = "DL3008"
    DL3009 = "DL3009"
    DL3015 = "DL3015"
    DL3020 = "DL3020"
    DL4000 = "DL4000"
    DL4006 = "DL4006"

    def __str__(self) -> str:
        return self.value


# hadolint's own wording, kept verbatim so reports diff cleanly against it
CATALOG: dict[RuleId, str] = {
    RuleId.DL3003: "Use WORKDIR to switch to a directory",
    RuleId.DL3006: "Always tag the version of an image explicitly",
    RuleId.DL3008: (
        "Pin versions in apt get install. Instead of `apt-get install <package>` "
        "use `apt-get install <package>=<version>`"
    ),
    RuleId.DL3009: "Delete the apt lists (/var/lib/apt/lists) after installing something",
    RuleId.DL3015: "Avoid additional packages by specifying `--no-install-recommends`",
    RuleId.DL3020: "Use COPY instead of ADD for files and folders",
    RuleId.DL4000: "MAINTAINER is deprecated",
    RuleId.DL4006: (
        "Set the SHELL option -o pipefail before RUN with a pipe in it. If you are "
        "using /bin/sh in an alpine image or if your shell is symlinked to busybox "
        "then consider explicitly setting your SHELL to /bin/ash, or disable this check"
    ),
}


@dataclass(frozen=True, order=True)
class SmellKey:
    """Identity of one smell, stable across snapshots of the same file.

    ``anchor`` is ``(stage,)`` for DL3006, ``(stage, package)`` for DL3008,
    ``("maintainer",)`` for DL4000 and ``(stage, normalized_text, ordinal)``
    for the instruction-level rules.
    """

    rule: RuleId
    anchor: tuple

    def as_json(self) -> list:
        return [self.rule.value, *self.anchor]

    @classmethod
    def from_json(cls, data: list) -> SmellKey:
        return cls(RuleId(data[0]), tuple(data[1:]))


@dataclass(frozen=True)
class Finding:
    rule: RuleId
    line: int
    message: str
    key: SmellKey
    snippet: str

    def sort_key(self) -> tuple:
        return (self.line, self.rule.value, self.key.anchor)

    def as_json(self) -> dict:
        return {"rule": self.rule.value, "line": self.line, "message": self.message, "snippet": self.snippet}


# --- stage model -------------------------------------------------------------


@dataclass(frozen=True)
class Stage:
    index: int
    from_instruction: Instruction | None
    image: ImageRef | None
    alias: str | None


def stages(ast: DockerfileAst) -> list[Stage]:
    out = []
    for ins in ast.instructions:
        if ins.keyword is not Keyword.FROM:
            continue
        try:
            ref = parse_image_ref(ins.raw_args)
        except DockerfileError:
            ref = None
        out.append(Stage(ins.stage_index, ins, ref, ref.alias if ref else None))
    return out


def base_image(ast: DockerfileAst, stage_index: int) -> ImageRef | None:
    """Image a stage ultimately builds on, following ``FROM <alias>`` links."""
    table = stages(ast)
    seen = set()
    idx = stage_index
    while 0 <= idx < len(table) and idx not in seen:
        seen.add(idx)
        ref = table[idx].image
        if ref is None:
            return None
        prior = [s for s in table[:idx] if s.alias is not None and s.alias == ref.name]
        if not prior or ref.pinned:
            return ref
        idx = prior[-1].index
    return None


# --- helpers -------------------------------------------------------------------


def normalized_text(ins: Instruction) -> str:
    return f"{ins.keyword.value} {' '.join(ins.args.split())}".strip()


def run_chain(ins: Instruction) -> CommandChain:
    """Scan a RUN instruction; command spans index into ``ins.raw_args``."""
    start = split_run_flags(ins.raw_args, ins.escape)
    return parse_run_payload(ins.raw_args, ins.escape, start)


def analysis_chain(ins: Instruction) -> CommandChain:
    """Chain used for detection. Exec-form arrays are joined with spaces
    and re-scanned as shell text, which is what hadolint does."""
    chain = run_chain(ins)
    if chain.exec_form and chain.commands:
        return parse_run_payload(" ".join(chain.commands[0].argv))
    return chain


def all_commands(ins: Instruction) -> list[SimpleCommand]:
    chain = analysis_chain(ins)
    return list(walk_commands(chain, "\\" if chain.exec_form else ins.escape))


APT_OPTIONS_WITH_VALUE = frozenset({"-o", "--option", "-c", "--config-file", "-t", "--target-release"})


@dataclass(frozen=True)
class AptInstall:
    command: SimpleCommand
    install_index: int  # index into command.words
    packages: tuple[int, ...]  # indices into command.words
    options: tuple[str, ...]


def apt_get_install(cmd: SimpleCommand) -> AptInstall | None:
    """Decompose ``apt-get [opts] install [opts] pkgs...`` or return None."""
    idx = cmd.name_index()
    if idx is None or cmd.words[idx].value != "apt-get":
        return None
    words = cmd.words
    install = None
    packages = []
    options = []
    skip = False
    for pos in range(idx + 1, len(words)):
        value = words[pos].value
        if skip:
            options.append(value)
            skip = False
            continue
        if value.startswith("-"):
            options.append(value)
            skip = value in APT_OPTIONS_WITH_VALUE
            continue
        if install is None:
            if value != "install":
                return None
            install = pos
            continue
        packages.append(pos)
    if install is None:
        return None
    return AptInstall(cmd, install, tuple(packages), tuple(options))


def package_is_pinned(word: str) -> bool:
    # "pkg=ver", "pkg/release" and "./local.deb" all select a specific version
    return "=" in word or "/" in word


def unpinned_packages(inst: AptInstall) -> list[int]:
    out = []
    for pos in inst.packages:
        word = inst.command.words[pos]
        if word.has_variable_expansion or package_is_pinned(word.value):
            continue
        out.append(pos)
    return out


def _finding(rule: RuleId, ins: Instruction, anchor: tuple) -> Finding:
    assert ins.span is not None
    return Finding(rule, ins.span.start_line, CATALOG[rule], SmellKey(rule, anchor), normalized_text(ins))


def _instruction_findings(rule: RuleId, ast: DockerfileAst, hits: Iterable[Instruction]) -> list[Finding]:
    hit_ids = {id(i) for i in hits}
    seen: dict[tuple[int, str], int] = {}
    out = []
    for ins in ast.instructions:
        if id(ins) not in hit_ids:
            continue
        text = normalized_text(ins)
        ordinal = seen.get((ins.stage_index, text), 0)
        seen[(ins.stage_index, text)] = ordinal + 1
        out.append(_finding(rule, ins, (ins.stage_index, text, ordinal)))
    return out


def _runs(ast: DockerfileAst) -> Iterator[Instruction]:
    return (i for i in ast.instructions if i.keyword is Keyword.RUN)


# --- detectors -------------------------------------------------------------------


def detect_dl3003(ast: DockerfileAst) -> list[Finding]:
    hits = [ins for ins in _runs(ast) if any(c.name == "cd" for c in all_commands(ins))]
    return _instruction_findings(RuleId.DL3003, ast, hits)


def detect_dl3006(ast: DockerfileAst) -> list[Finding]:
    out = []
    aliases: set[str] = set()
    for st in stages(ast):
        ref = st.image
        if ref is not None and not ref.pinned:
            name = ref.name
            if name.lower() != "scratch" and "$" not in name and name not in aliases:
                out.append(_finding(RuleId.DL3006, st.from_instruction, (st.index,)))
        if st.alias:
            aliases.add(st.alias)
    return out


def detect_dl3008(ast: DockerfileAst) -> list[Finding]:
    # one finding per RUN and package, all sharing the stage-level key
    out = []
    for ins in _runs(ast):
        seen: set[str] = set()
        for cmd in all_commands(ins):
            inst = apt_get_install(cmd)
            if inst is None:
                continue
            for pos in unpinned_packages(inst):
                package = cmd.words[pos].value
                if package not in seen:
                    seen.add(package)
                    out.append(_finding(RuleId.DL3008, ins, (ins.stage_index, package)))
    return out


APT_LISTS_CLEANUP_ARGS = frozenset({"-rf", "/var/lib/apt/lists/*"})


def _cleans_apt_lists(cmd: SimpleCommand) -> bool:
    # hadolint accepts any rm carrying either of these two words
    return cmd.name == "rm" and any(w.value in APT_LISTS_CLEANUP_ARGS for w in cmd.arguments)


def _runs_apt_update(cmd: SimpleCommand) -> bool:
    return cmd.name == "apt-get" and any(w.value == "update" for w in cmd.arguments)


def _dl3009_stages(ast: DockerfileAst) -> set[int]:
    """Stages whose missing apt cleanup hadolint reports.

    hadolint files each hit under the stage's FROM record (image, tag,
    digest, alias, platform). A hit is reported when that record equals the
    final FROM's, or when the stage's alias is the image of a later FROM.
    """
    table = stages(ast)
    if not table:
        return {0}
    final = table[-1].image
    checked = set()
    for pos, st in enumerate(table):
        later = {s.image.name for s in table[pos + 1:] if s.image is not None}
        if st.image == final or (st.alias is not None and st.alias in later):
            checked.add(st.index)
    return checked


def detect_dl3009(ast: DockerfileAst) -> list[Finding]:
    checked = _dl3009_stages(ast)
    hits = []
    for ins in _runs(ast):
        if ins.stage_index not in checked:
            continue
        cmds = all_commands(ins)
        if any(_runs_apt_update(c) for c in cmds) and not any(_cleans_apt_lists(c) for c in cmds):
            hits.append(ins)
    return _instruction_findings(RuleId.DL3009, ast, hits)


def _skips_recommends(inst: AptInstall) -> bool:
    return "--no-install-recommends" in inst.options or any(
        o.endswith("APT::Install-Recommends=false") for o in inst.options
    )


def detect_dl3015(ast: DockerfileAst) -> list[Finding]:
    hits = []
    for ins in _runs(ast):
        for cmd in all_commands(ins):
            inst = apt_get_install(cmd)
            if inst is not None and not _skips_recommends(inst):
                hits.append(ins)
                break
    return _instruction_findings(RuleId.DL3015, ast, hits)


ARCHIVE_SUFFIXES = (".tar", ".gz", ".tgz", ".bz2", ".tbz2", ".tbz", ".tb2", ".xz", ".txz", ".Z", ".lz", ".lzma", ".tlz")


def add_sources(ins: Instruction) -> list[str]:
    """Source operands of an ADD/COPY instruction (flags and destination removed)."""
    array = parse_exec_form(ins.raw_args)
    words = array if array is not None else ins.args.split()
    words = [w for w in words if not w.startswith("--")]
    return words[:-1]


def is_url(src: str) -> bool:
    return src.startswith(("http://", "https://"))


def is_archive(src: str) -> bool:
    return src.endswith(ARCHIVE_SUFFIXES)


def detect_dl3020(ast: DockerfileAst) -> list[Finding]:
    hits = []
    for ins in ast.instructions:
        if ins.keyword is not Keyword.ADD:
            continue
        if any(not (is_url(s) or is_archive(s)) for s in add_sources(ins)):
            hits.append(ins)
    return _instruction_findings(RuleId.DL3020, ast, hits)


def detect_dl4000(ast: DockerfileAst) -> list[Finding]:
    return [_finding(RuleId.DL4000, i, ("maintainer",)) for i in ast.instructions if i.keyword is Keyword.MAINTAINER]


PIPEFAIL_SHELLS = frozenset({"/bin/bash", "/bin/zsh", "/bin/ash", "bash", "zsh", "ash"})
NON_POSIX_SHELLS = frozenset({"pwsh", "powershell", "cmd"})


def shell_argv(ins: Instruction) -> list[str]:
    array = parse_exec_form(ins.raw_args)
    return array if array is not None else ins.args.split()


def shell_state(argv: list[str]) -> str:
    """Classify a SHELL instruction as "pipefail", "plain" or "non_posix"."""
    if not argv:
        return "plain"
    exe = posixpath.basename(argv[0].replace("\\", "/")).lower()
    if exe.endswith(".exe"):
        exe = exe[:-4]
    if exe in NON_POSIX_SHELLS:
        return "non_posix"
    has_o = any(re.fullmatch(r"-[A-Za-z]*o[A-Za-z]*", a) for a in argv[1:])
    if argv[0] in PIPEFAIL_SHELLS and has_o and "pipefail" in argv[1:]:
        return "pipefail"
    return "plain"


def pipe_chain(ins: Instruction) -> bool:
    """True if the RUN pipes at top level (substitutions are not looked into)."""
    return analysis_chain(ins).has_pipe


def detect_dl4006(ast: DockerfileAst) -> list[Finding]:
    hits = []
    state = "plain"
    for ins in ast.instructions:
        if ins.keyword is Keyword.FROM:
            state = "plain"
        elif ins.keyword is Keyword.SHELL:
            state = shell_state(shell_argv(ins))
        elif ins.keyword is Keyword.RUN and state == "plain" and pipe_chain(ins):
            hits.append(ins)
    return _instruction_findings(RuleId.DL4006, ast, hits)


DETECTORS: dict[RuleId, Callable[[DockerfileAst], list[Finding]]] = {
    RuleId.DL3003: detect_dl3003,
    RuleId.DL3006: detect_dl3006,
    RuleId.DL3008: detect_dl3008,
    RuleId.DL3009: detect_dl3009,
    RuleId.DL3015: detect_dl3015,
    RuleId.DL3020: detect_dl3020,
    RuleId.DL4000: detect_dl4000,
    RuleId.DL4006: detect_dl4006,
}


def detect_rule(rule: RuleId, ast: DockerfileAst) -> list[Finding]:
    return sorted(DETECTORS[RuleId(rule)](ast), key=Finding.sort_key)


def lint(ast: DockerfileAst, rules: Iterable[RuleId] | None = None) -> list[Finding]:
    """All findings for ``rules`` (default: every rule), ordered by (line, rule)."""
    selected = list(RuleId) if rules is None else [RuleId(r) for r in rules]
    findings: list[Finding] = []
    for rule in selected:
        findings.extend(DETECTORS[rule](ast))
    return sorted(findings, key=Finding.sort_key)


def smell_set(ast: DockerfileAst) -> frozenset[SmellKey]:
    return frozenset(f.key for f in lint(ast))


def report(path: str, findings: list[Finding]) -> dict:
    return {"path": path, "findings": [f.as_json() for f in findings]}
