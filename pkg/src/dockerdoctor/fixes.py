"""Rule-based fixes producing minimal, reviewable patches."""

from __future__ import annotations

import datetime as dt
import difflib
import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

from .dockerfile import (
    DockerfileAst,
    Instruction,
    Keyword,
    image_token_span,
    parse_dockerfile,
    print_dockerfile,
    split_lines,
)
from .resolvers import (
    ImageNotFound,
    Level,
    NoTagAvailable,
    PackageIndexSnapshot,
    PackageNotFound,
    RegistrySnapshot,
    TooFewSegments,
    degrade_version,
    is_installable,
    resolve_image_tag,
    select_apt_version,
)
from .rules import (
    Finding,
    RuleId,
    add_sources,
    apt_get_install,
    base_image,
    detect_rule,
    is_archive,
    is_url,
    lint,
    run_chain,
    stages,
    unpinned_packages,
    _skips_recommends,
)
from .shell import Connector, walk_commands

log = logging.getLogger(__name__)

SERIES_BY_VERSION = {
    "14.04": "trusty",
    "16.04": "xenial",
    "18.04": "bionic",
    "20.04": "focal",
}
KNOWN_SERIES = frozenset(SERIES_BY_VERSION.values())
UBUNTU_NAMES = frozenset({"ubuntu", "library/ubuntu", "docker.io/ubuntu", "docker.io/library/ubuntu"})

PIPEFAIL_SHELL = '["/bin/bash", "-o", "pipefail", "-c"]'
APT_LISTS_CLEANUP = "rm -rf /var/lib/apt/lists/*"
ADD_ONLY_FLAGS = ("--checksum", "--keep-git-dir", "--unpack")


class Status(str, enum.Enum):
    FIXED = "fixed"
    REFUSED = "refused"


class Refusal(str, enum.Enum):
    UNRESOLVABLE_VERSION = "unresolvable_version"
    NON_UBUNTU_BASE = "non_ubuntu_base"
    VARIABLE_BEARING = "variable_bearing"
    NO_TAG_AVAILABLE = "no_tag_available"
    TOO_FEW_SEGMENTS = "too_few_segments"
    UNSUPPORTED_SHAPE = "unsupported_shape"


class FindingNotPresent(Exception):
    pass


@dataclass(frozen=True)
class FixContext:
    last_modified: dt.date
    registry: RegistrySnapshot = field(default_factory=RegistrySnapshot)
    apt_index: PackageIndexSnapshot = field(default_factory=PackageIndexSnapshot)
    # what the archive serves today; defaults to apt_index
    apt_archive: PackageIndexSnapshot | None = None
    base_series: dict[int, str] | None = None


@dataclass(frozen=True)
class FixOutcome:
    finding: Finding
    status: Status
    patched: DockerfileAst | None = None
    touched_lines: frozenset[int] = frozenset()
    refusal_reason: Refusal | None = None
    detail: str = ""
    # instruction index (in the input tree) before which a line was inserted
    inserted_at: int | None = None

    def as_json(self) -> dict:
        return {
            "rule": self.finding.rule.value,
            "line": self.finding.line,
            "status": self.status.value,
            "refusal_reason": self.refusal_reason.value if self.refusal_reason else None,
            "touched_lines": sorted(self.touched_lines),
            "detail": self.detail,
        }


class _Refused(Exception):
    def __init__(self, reason: Refusal, detail: str = ""):
        super().__init__(detail or reason.value)
        self.reason = reason
        self.detail = detail


def _same_case(template: str, word: str) -> str:
    return word.lower() if template.islower() else word


def _new_instruction(keyword: Keyword, raw_args: str, like: Instruction, eol: str) -> Instruction:
    return Instruction(
        keyword=keyword,
        raw_args=raw_args,
        span=None,
        stage_index=like.stage_index,
        keyword_text=_same_case(like.keyword_text, keyword.value),
        indent=like.indent,
        separator=" ",
        eol=eol,
        escape=like.escape,
    )


def _newline(ast: DockerfileAst, near: Instruction) -> str:
    if near.eol:
        return near.eol
    for ins in ast.instructions:
        if ins.eol:
            return ins.eol
    return "\n"


def _splice(text: str, edits: Iterable[tuple[int, int, str]]) -> str:
    for start, end, repl in sorted(edits, reverse=True):
        text = text[:start] + repl + text[end:]
    return text


def _instruction_for(finding: Finding, ast: DockerfileAst) -> tuple[int, Instruction]:
    for idx, ins in enumerate(ast.instructions):
        if ins.span is not None and ins.span.start_line == finding.line:
            return idx, ins
    raise FindingNotPresent(f"no instruction starts at line {finding.line}")


# --- per-rule transforms ---------------------------------------------------------
# each returns the edited (unparsed) tree and, for insertions, the index of the
# instruction the new line precedes


def _fix_dl3003(finding, ast, ctx):
    idx, ins = _instruction_for(finding, ast)
    chain = run_chain(ins)
    if chain.exec_form or chain.unbalanced or len(chain.commands) < 2:
        raise _Refused(Refusal.UNSUPPORTED_SHAPE, "cd is not a leading command")
    first = chain.commands[0]
    if first.name_index() != 0 or first.name != "cd" or chain.connectors[0] is not Connector.AND_IF:
        raise _Refused(Refusal.UNSUPPORTED_SHAPE, "cd is not a leading `cd DIR &&`")
    if len(first.words) != 2:
        raise _Refused(Refusal.UNSUPPORTED_SHAPE, "cd takes options or several operands")
    target = first.words[1]
    if target.has_variable_expansion:
        raise _Refused(Refusal.VARIABLE_BEARING, "cd target contains a variable")
    directory = target.value
    if not directory or directory.startswith(("-", "~")) or any(ch in directory for ch in "*?["):
        raise _Refused(Refusal.UNSUPPORTED_SHAPE, f"cd target {directory!r} is not a literal directory")
    rest = list(walk_commands(chain, ins.escape))[1:]
    if any(c.name == "cd" for c in rest):
        raise _Refused(Refusal.UNSUPPORTED_SHAPE, "further cd commands later in the chain")

    second = chain.commands[1]
    new_args = ins.raw_args[: first.span_within_run[0]] + ins.raw_args[second.span_within_run[0]:]
    workdir = _new_instruction(Keyword.WORKDIR, directory, ins, _newline(ast, ins))
    edited = ast.replace_instruction(ins, ins.with_args(new_args))
    edited = edited.insert_before(edited.instructions[idx], workdir)
    return edited, idx, f"WORKDIR {directory}"


def _fix_dl3006(finding, ast, ctx):
    idx, ins = _instruction_for(finding, ast)
    st = stages(ast)[ins.stage_index]
    ref = st.image
    if ref is None or "$" in ref.name:
        raise _Refused(Refusal.VARIABLE_BEARING)
    try:
        tag = resolve_image_tag(ref, ctx.registry)
    except (ImageNotFound, NoTagAvailable) as exc:
        raise _Refused(Refusal.NO_TAG_AVAILABLE, str(exc)) from None
    span = image_token_span(ins.raw_args)
    assert span is not None
    word = ins.raw_args[span[0]:span[1]]
    new_args = ins.raw_args[: span[0]] + f"{word}:{tag}" + ins.raw_args[span[1]:]
    return ast.replace_instruction(ins, ins.with_args(new_args)), None, f"{word}:{tag}"


def series_for_stage(ast: DockerfileAst, stage_index: int, ctx: FixContext) -> str | None:
    if ctx.base_series and stage_index in ctx.base_series:
        return ctx.base_series[stage_index]
    ref = base_image(ast, stage_index)
    if ref is None or ref.name.lower() not in UBUNTU_NAMES or ref.tag is None:
        return None
    tag = ref.tag.lower()
    for candidate in (tag, tag.split("-")[0]):
        if candidate in KNOWN_SERIES:
            return candidate
        if candidate in SERIES_BY_VERSION:
            return SERIES_BY_VERSION[candidate]
    return None


def choose_pin(package: str, series: str, ctx: FixContext) -> str:
    """Pick a version pattern for one package or raise _Refused."""
    try:
        version = select_apt_version(package, series, ctx.last_modified, ctx.apt_index)
    except PackageNotFound as exc:
        raise _Refused(Refusal.UNRESOLVABLE_VERSION, str(exc)) from None
    archive = ctx.apt_archive if ctx.apt_archive is not None else ctx.apt_index
    for level in (Level.PATCH_WILD, Level.MINOR_WILD):
        try:
            pattern = degrade_version(version, level)
        except TooFewSegments:
            raise _Refused(Refusal.TOO_FEW_SEGMENTS, f"{package} {version} has too few segments") from None
        if is_installable(package, pattern, series, archive):
            return pattern.text
    raise _Refused(Refusal.UNRESOLVABLE_VERSION, f"{package} {version} no longer installable in {series}")


def _fix_dl3008(finding, ast, ctx):
    stage_index, package = finding.key.anchor
    series = series_for_stage(ast, stage_index, ctx)
    if series is None:
        raise _Refused(Refusal.NON_UBUNTU_BASE, "stage is not based on a known Ubuntu series")

    sites: dict[int, list[int]] = {}
    instructions = ast.instructions
    for pos, ins in enumerate(instructions):
        if ins.keyword is not Keyword.RUN or ins.stage_index != stage_index:
            continue
        chain = run_chain(ins)
        for cmd in walk_commands(chain, ins.escape):
            inst = apt_get_install(cmd)
            if inst is None:
                continue
            if chain.unbalanced:
                raise _Refused(Refusal.UNSUPPORTED_SHAPE, "unbalanced quotes in RUN")
            for word_pos in unpinned_packages(inst):
                word = cmd.words[word_pos]
                if word.value != package:
                    continue
                if chain.exec_form:
                    raise _Refused(Refusal.UNSUPPORTED_SHAPE, "exec-form RUN")
                sites.setdefault(pos, []).append(word.end)
    if not sites:
        raise _Refused(Refusal.UNSUPPORTED_SHAPE, f"{package} not found in a shell-form RUN")

    pattern = choose_pin(package, series, ctx)
    edited = ast
    for pos, ends in sites.items():
        ins = instructions[pos]
        new_args = _splice(ins.raw_args, ((e, e, f"={pattern}") for e in ends))
        edited = edited.replace_instruction(ins, ins.with_args(new_args))
    return edited, None, f"{package}={pattern}"


def _fix_dl3009(finding, ast, ctx):
    _, ins = _instruction_for(finding, ast)
    chain = run_chain(ins)
    if chain.exec_form or chain.unbalanced or not chain.commands:
        raise _Refused(Refusal.UNSUPPORTED_SHAPE, "exec-form or unparseable RUN")
    end = chain.commands[-1].span_within_run[1]
    new_args = _splice(ins.raw_args, [(end, end, f" && {APT_LISTS_CLEANUP}")])
    return ast.replace_instruction(ins, ins.with_args(new_args)), None, APT_LISTS_CLEANUP


def _fix_dl3015(finding, ast, ctx):
    _, ins = _instruction_for(finding, ast)
    chain = run_chain(ins)
    if chain.exec_form or chain.unbalanced:
        raise _Refused(Refusal.UNSUPPORTED_SHAPE, "exec-form or unparseable RUN")
    edits = []
    for cmd in walk_commands(chain, ins.escape):
        inst = apt_get_install(cmd)
        if inst is not None and not _skips_recommends(inst):
            at = cmd.words[inst.install_index].end
            edits.append((at, at, " --no-install-recommends"))
    new_args = _splice(ins.raw_args, edits)
    return ast.replace_instruction(ins, ins.with_args(new_args)), None, "--no-install-recommends"


def _fix_dl3020(finding, ast, ctx):
    _, ins = _instruction_for(finding, ast)
    flags = [w for w in ins.args.split() if w.startswith("--")]
    if any(f.startswith(ADD_ONLY_FLAGS) for f in flags):
        raise _Refused(Refusal.UNSUPPORTED_SHAPE, "ADD uses a flag COPY does not accept")
    if any(is_url(s) or is_archive(s) for s in add_sources(ins)):
        raise _Refused(Refusal.UNSUPPORTED_SHAPE, "ADD mixes local files with archives or URLs")
    new = replace(ins, keyword=Keyword.COPY, keyword_text=_same_case(ins.keyword_text, "COPY"))
    return ast.replace_instruction(ins, new), None, "ADD -> COPY"


def _label_value(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _fix_dl4000(finding, ast, ctx):
    edited = ast
    for ins in ast.instructions:
        if ins.keyword is not Keyword.MAINTAINER:
            continue
        label = replace(
            ins,
            keyword=Keyword.LABEL,
            keyword_text=_same_case(ins.keyword_text, "LABEL"),
            separator=ins.separator or " ",
            raw_args="maintainer=" + _label_value(ins.args.strip()),
        )
        edited = edited.replace_instruction(ins, label)
    return edited, None, "MAINTAINER -> LABEL maintainer"


def _fix_dl4006(finding, ast, ctx):
    _, ins = _instruction_for(finding, ast)
    stage_index = ins.stage_index
    ref = base_image(ast, stage_index)
    if ref is None or "$" in ref.name:
        raise _Refused(Refusal.VARIABLE_BEARING, "base image is not known statically")
    name = ref.name.lower()
    if "alpine" in name or "windows" in name:
        raise _Refused(Refusal.UNSUPPORTED_SHAPE, f"{ref.name} ships no bash")
    flagged = [f for f in detect_rule(RuleId.DL4006, ast) if f.key.anchor[0] == stage_index]
    first_idx, first = _instruction_for(flagged[0], ast)
    if run_chain(first).exec_form:
        raise _Refused(Refusal.UNSUPPORTED_SHAPE, "exec-form RUN is not run by SHELL")
    shell = _new_instruction(Keyword.SHELL, PIPEFAIL_SHELL, first, _newline(ast, first))
    return ast.insert_before(first, shell), first_idx, f"SHELL {PIPEFAIL_SHELL}"


TRANSFORMS: dict[RuleId, Callable] = {
    RuleId.DL3003: _fix_dl3003,
    RuleId.DL3006: _fix_dl3006,
    RuleId.DL3008: _fix_dl3008,
    RuleId.DL3009: _fix_dl3009,
    RuleId.DL3015: _fix_dl3015,
    RuleId.DL3020: _fix_dl3020,
    RuleId.DL4000: _fix_dl4000,
    RuleId.DL4006: _fix_dl4006,
}


def changed_lines(before: str, after: str) -> frozenset[int]:
    """Lines of ``before`` (1-based) that were replaced or deleted, plus the
    line directly below each pure insertion."""
    a, b = split_lines(before), split_lines(after)
    touched: set[int] = set()
    for tag, i1, i2, _, _ in difflib.SequenceMatcher(None, a, b, autojunk=False).get_opcodes():
        if tag in ("replace", "delete"):
            touched.update(range(i1 + 1, i2 + 1))
        elif tag == "insert":
            touched.add(min(i1 + 1, max(len(a), 1)))
    return frozenset(touched)


def _persists(finding: Finding, patched: DockerfileAst, target_line: int) -> bool:
    for f in detect_rule(finding.rule, patched):
        if f.key == finding.key:
            return True
        if f.line == target_line and finding.rule not in (RuleId.DL3008, RuleId.DL4000, RuleId.DL3006):
            return True
    return False


def fix(finding: Finding, ast: DockerfileAst, ctx: FixContext) -> FixOutcome:
    """Apply the fixing rule for one finding."""
    if finding not in lint(ast, [finding.rule]):
        raise FindingNotPresent(f"{finding.rule} at line {finding.line}")
    try:
        edited, inserted_at, detail = TRANSFORMS[finding.rule](finding, ast, ctx)
    except _Refused as exc:
        return FixOutcome(finding, Status.REFUSED, refusal_reason=exc.reason, detail=exc.detail)

    before = print_dockerfile(ast)
    after = print_dockerfile(edited)
    patched = parse_dockerfile(after)
    target_line = finding.line + (1 if inserted_at is not None and _line_of(ast, inserted_at) <= finding.line else 0)
    if _persists(finding, patched, target_line):
        return FixOutcome(finding, Status.REFUSED, refusal_reason=Refusal.UNSUPPORTED_SHAPE,
                          detail="transform did not remove the finding")
    return FixOutcome(finding, Status.FIXED, patched, changed_lines(before, after), None, detail, inserted_at)


def _line_of(ast: DockerfileAst, idx: int) -> int:
    span = ast.instructions[idx].span
    assert span is not None
    return span.start_line


def _relocate(original: Finding, current: DockerfileAst, ins_index: int) -> Finding | None:
    ins = current.instructions[ins_index]
    assert ins.span is not None
    for f in detect_rule(original.rule, current):
        if original.rule in (RuleId.DL3008, RuleId.DL4000, RuleId.DL3006):
            if f.key == original.key:
                return f
        elif f.line == ins.span.start_line:
            return f
    return None


def fix_all(
    ast: DockerfileAst, ctx: FixContext, rules: Iterable[RuleId] | None = None
) -> tuple[DockerfileAst, list[FixOutcome]]:
    """Fix every finding of ``rules`` in ascending line order, re-parsing after each."""
    selected = set(RuleId) if rules is None else {RuleId(r) for r in rules}
    findings = [f for f in lint(ast) if f.rule in selected]
    originals = ast.instructions
    position = {id(ins): idx for idx, ins in enumerate(originals)}
    mapping = list(range(len(originals)))

    current = ast
    outcomes: list[FixOutcome] = []
    for finding in findings:
        orig_idx = position[id(_instruction_for(finding, ast)[1])]
        now = _relocate(finding, current, mapping[orig_idx])
        if now is None:
            outcomes.append(FixOutcome(finding, Status.FIXED, current, detail="resolved by an earlier fix"))
            continue
        outcome = fix(now, current, ctx)
        outcomes.append(replace(outcome, finding=finding))
        if outcome.status is Status.FIXED:
            assert outcome.patched is not None
            current = outcome.patched
            if outcome.inserted_at is not None:
                mapping = [m + 1 if m >= outcome.inserted_at else m for m in mapping]
    return current, outcomes


def render_patch(before: DockerfileAst, after: DockerfileAst, path: str = "Dockerfile") -> str:
    """Unified diff with three lines of context; empty when nothing changed."""
    a, b = print_dockerfile(before), print_dockerfile(after)
    if a == b:
        return ""
    a_lines, b_lines = _diff_lines(a), _diff_lines(b)
    return "".join(difflib.unified_diff(a_lines, b_lines, f"a/{path}", f"b/{path}", n=3))


def _diff_lines(text: str) -> list[str]:
    lines = split_lines(text)
    if lines and not lines[-1].endswith(("\n", "\r")):
        lines[-1] += "\n\\ No newline at end of file\n"
    return lines
