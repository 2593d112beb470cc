"""Smell survival over the commit history of Dockerfiles.

A history is an ordered list of snapshots of one Dockerfile. For every
snapshot we compute its smell set; a smell *disappears* at snapshot ``i``
when it is in the set of ``i - 1`` and not in the set of ``i``. Snapshots
where something disappeared form the pool of candidate fixing commits, and
each disappearance is classified as an edit that kept the smelly line's
functionality (``modified``), a deletion (``removed``) or a wholesale
rewrite of the file (``file_rewritten``).
"""

from __future__ import annotations

import base64
import csv
import datetime as dt
import difflib
import enum
import io
import json
import logging
import re
import statistics
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .dockerfile import DockerfileAst, NotUtf8, decode_source, parse_dockerfile, parse_image_ref, split_lines
from .rules import Finding, RuleId, SmellKey, add_sources, lint, run_chain
from .shell import walk_commands

log = logging.getLogger(__name__)

REWRITE_THRESHOLD = 0.8
PAIR_SIMILARITY = 0.5


class UnparseableSnapshot(Exception):
    pass


class Classification(str, enum.Enum):
    MODIFIED = "modified"
    REMOVED = "removed"
    FILE_REWRITTEN = "file_rewritten"


@dataclass(frozen=True)
class Snapshot:
    commit_id: str
    commit_date: dt.datetime
    content: bytes
    message: str | None = None

    def text(self) -> str:
        try:
            return decode_source(self.content)
        except NotUtf8 as exc:
            raise UnparseableSnapshot(f"{self.commit_id}: {exc}") from None


@dataclass(frozen=True)
class SnapshotHistory:
    path: str
    snapshots: tuple[Snapshot, ...]

    def __post_init__(self) -> None:
        if not self.snapshots:
            raise ValueError("a history needs at least one snapshot")
        ids = [s.commit_id for s in self.snapshots]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate commit ids in history of {self.path}")


@dataclass(frozen=True)
class DisappearanceEvent:
    path: str
    at: int
    commit_id: str
    commit_date: dt.datetime
    key: SmellKey
    classification: Classification
    informed_hint: bool
    lifetime_commits: int | None = None
    lifetime_days: int | None = None

    def as_json(self) -> dict:
        return {
            "path": self.path,
            "at": self.at,
            "commit_id": self.commit_id,
            "commit_date": self.commit_date.isoformat(),
            "rule": self.key.rule.value,
            "key": self.key.as_json(),
            "classification": self.classification.value,
            "informed_hint": self.informed_hint,
            "lifetime_commits": self.lifetime_commits,
            "lifetime_days": self.lifetime_days,
        }


def _parse_timestamp(value: str) -> dt.datetime:
    stamp = dt.datetime.fromisoformat(value.replace("Z", "+00:00"))
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=dt.timezone.utc)
    return stamp.astimezone(dt.timezone.utc)


def load_manifest(path: str | Path) -> list[SnapshotHistory]:
    """Read a JSON-lines manifest, grouping rows by Dockerfile path in file order."""
    grouped: dict[str, list[Snapshot]] = defaultdict(list)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            row = json.loads(line)
            try:
                snap = Snapshot(
                    commit_id=row["commit_id"],
                    commit_date=_parse_timestamp(row["commit_date"]),
                    content=base64.b64decode(row["content_base64"]),
                    message=row.get("message"),
                )
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad manifest row ({exc})") from None
            grouped[row["path"]].append(snap)
    return [SnapshotHistory(p, tuple(snaps)) for p, snaps in grouped.items()]


def manifest_rows(history: SnapshotHistory) -> list[dict]:
    return [
        {
            "path": history.path,
            "commit_id": s.commit_id,
            "commit_date": s.commit_date.isoformat(),
            "message": s.message,
            "content_base64": base64.b64encode(s.content).decode("ascii"),
        }
        for s in history.snapshots
    ]


def _ast(snapshot: Snapshot) -> DockerfileAst:
    return parse_dockerfile(snapshot.text())


def smell_findings(snapshot: Snapshot) -> list[Finding]:
    return lint(_ast(snapshot))


def eta(snapshot: Snapshot) -> frozenset[SmellKey]:
    return frozenset(f.key for f in smell_findings(snapshot))


def disappeared(history: SnapshotHistory, i: int) -> frozenset[SmellKey]:
    """Smells of snapshot ``i - 1`` that are gone in snapshot ``i``."""
    if not 1 <= i < len(history.snapshots):
        raise IndexError(i)
    return eta(history.snapshots[i - 1]) - eta(history.snapshots[i])


def candidate_fix_set(history: SnapshotHistory) -> set[int]:
    return {e.at for e in analyze(history).events}


# --- classification -----------------------------------------------------------------


def lcs_pairs(a: list[str], b: list[str]) -> list[tuple[int, int]]:
    """Index pairs of one longest common subsequence of two line lists."""
    n, m = len(a), len(b)
    table = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        row, below = table[i], table[i + 1]
        ai = a[i]
        for j in range(m - 1, -1, -1):
            row[j] = below[j + 1] + 1 if ai == b[j] else max(below[j], row[j + 1])
    pairs = []
    i = j = 0
    while i < n and j < m:
        if a[i] == b[j]:
            pairs.append((i, j))
            i += 1
            j += 1
        elif table[i + 1][j] >= table[i][j + 1]:
            i += 1
        else:
            j += 1
    return pairs


def align_lines(
    old: list[str], new: list[str], pairs: list[tuple[int, int]] | None = None
) -> dict[int, int]:
    """Map old line index -> new line index.

    Unchanged lines come from the LCS. Inside each gap between LCS anchors,
    a changed old line is paired with the most similar unused new line of
    the same gap, if they are similar enough to count as an edit.
    """
    if pairs is None:
        pairs = lcs_pairs(old, new)
    mapping = dict(pairs)
    bounds = [(-1, -1), *pairs, (len(old), len(new))]
    for (a0, b0), (a1, b1) in zip(bounds, bounds[1:]):
        free = list(range(b0 + 1, b1))
        for i in range(a0 + 1, a1):
            best, best_ratio = None, PAIR_SIMILARITY
            for j in free:
                ratio = difflib.SequenceMatcher(None, old[i].strip(), new[j].strip()).ratio()
                if ratio >= best_ratio:
                    best, best_ratio = j, ratio
            if best is not None:
                mapping[i] = best
                free.remove(best)
    return mapping


def _word_pattern(token: str) -> re.Pattern:
    return re.compile(r"(?<![\w.+-])" + re.escape(token) + r"(?![\w.+-])", re.IGNORECASE)


def _functionality_tokens(key: SmellKey, finding: Finding, old_ast: DockerfileAst) -> list[str]:
    ins = old_ast.instruction_at_line(finding.line)
    assert ins is not None
    rule = key.rule
    if rule is RuleId.DL3008:
        return [key.anchor[1]]
    if rule is RuleId.DL4000:
        return ["maintainer"]
    if rule is RuleId.DL3006:
        return [parse_image_ref(ins.raw_args).name]
    if rule is RuleId.DL3020:
        return add_sources(ins)[:1] or ["ADD"]
    heads = [c.name for c in walk_commands(run_chain(ins), ins.escape) if c.name and c.name != "cd"]
    return list(dict.fromkeys(heads)) or [ins.keyword_text]


def _anchor_lines(key: SmellKey, finding: Finding, old_ast: DockerfileAst, old_lines: list[str]) -> list[int]:
    """0-based line indexes of the smelly site in the old snapshot."""
    ins = old_ast.instruction_at_line(finding.line)
    assert ins is not None and ins.span is not None
    lines = list(range(ins.span.start_line - 1, ins.span.end_line))
    if key.rule is RuleId.DL3008:
        pat = _word_pattern(key.anchor[1])
        hits = [i for i in lines if pat.search(old_lines[i])]
        return hits or lines
    return lines


def classify_change(old_text: str, new_text: str, key: SmellKey) -> Classification:
    old_ast = parse_dockerfile(old_text)
    new_ast = parse_dockerfile(new_text)
    matches = [f for f in lint(old_ast, [key.rule]) if f.key == key]
    if not matches:
        raise ValueError(f"{key} is not present in the old snapshot")

    old_lines = [line.rstrip("\r\n") for line in split_lines(old_text)]
    new_lines = [line.rstrip("\r\n") for line in split_lines(new_text)]
    # the rewrite test counts unchanged lines only; similarity pairing would
    # happily match "FROM ubuntu" with "FROM alpine"
    unchanged = lcs_pairs(old_lines, new_lines)
    if old_lines and 1 - len(unchanged) / len(old_lines) > REWRITE_THRESHOLD:
        return Classification.FILE_REWRITTEN
    mapping = align_lines(old_lines, new_lines, unchanged)

    # a DL3008 key can be reported at several RUNs; any surviving site counts
    for finding in matches:
        tokens = [_word_pattern(t) for t in _functionality_tokens(key, finding, old_ast)]
        for i in _anchor_lines(key, finding, old_ast, old_lines):
            j = mapping.get(i)
            if j is None:
                continue
            new_ins = new_ast.instruction_at_line(j + 1)
            text = new_ins.text if new_ins is not None else new_lines[j]
            if any(p.search(text) for p in tokens):
                return Classification.MODIFIED
    return Classification.REMOVED


def classify_disappearance(history: SnapshotHistory, i: int, key: SmellKey) -> Classification:
    return classify_change(history.snapshots[i - 1].text(), history.snapshots[i].text(), key)


INFORMED_KEYWORDS: dict[RuleId, tuple[str, ...]] = {
    RuleId.DL3003: ("workdir",),
    RuleId.DL3006: ("pin", "tag"),
    RuleId.DL3008: ("pin", "version"),
    RuleId.DL3009: ("apt lists", "apt cache", "/var/lib/apt/lists", "apt-get clean"),
    RuleId.DL3015: ("no-install-recommends", "recommends"),
    RuleId.DL3020: ("copy instead of add", "add to copy", "add with copy"),
    RuleId.DL4000: ("maintainer",),
    RuleId.DL4006: ("pipefail",),
}
GENERIC_KEYWORDS = ("hadolint", "smell", "best practice", "lint")


def informed_hint(message: str | None, rule: RuleId) -> bool:
    """Keyword pre-sort for manual review; not a judgement of intent."""
    if not message:
        return False
    text = message.lower()
    if rule.value.lower() in text or any(k in text for k in GENERIC_KEYWORDS):
        return True
    return any(k in text for k in INFORMED_KEYWORDS[rule])


# --- whole-history analysis -----------------------------------------------------------


@dataclass
class HistoryAnalysis:
    history: SnapshotHistory
    etas: list[frozenset[SmellKey] | None] = field(default_factory=list)
    introductions: list[tuple[int, SmellKey]] = field(default_factory=list)
    events: list[DisappearanceEvent] = field(default_factory=list)
    errors: list[UnparseableSnapshot] = field(default_factory=list)

    @property
    def alive(self) -> frozenset[SmellKey]:
        for smells in reversed(self.etas):
            if smells is not None:
                return smells
        return frozenset()

    @property
    def pf(self) -> set[int]:
        return {e.at for e in self.events}


def analyze(history: SnapshotHistory) -> HistoryAnalysis:
    """Walk a history once, recording introductions and classified disappearances.

    Unparseable snapshots are skipped; the next good snapshot is compared
    with the last good one.
    """
    result = HistoryAnalysis(history)
    prev_idx: int | None = None
    prev: frozenset[SmellKey] = frozenset()
    opened: dict[SmellKey, int] = {}
    for i, snap in enumerate(history.snapshots):
        try:
            current = eta(snap)
        except UnparseableSnapshot as exc:
            log.warning("skipping %s@%s: %s", history.path, snap.commit_id, exc)
            result.errors.append(exc)
            result.etas.append(None)
            continue
        result.etas.append(current)
        for key in sorted(current - prev):
            result.introductions.append((i, key))
            opened[key] = i
        if prev_idx is not None:
            old_text = history.snapshots[prev_idx].text()
            new_text = snap.text()
            for key in sorted(prev - current):
                start = opened.pop(key)
                result.events.append(DisappearanceEvent(
                    path=history.path,
                    at=i,
                    commit_id=snap.commit_id,
                    commit_date=snap.commit_date,
                    key=key,
                    classification=classify_change(old_text, new_text, key),
                    informed_hint=informed_hint(snap.message, key.rule),
                    lifetime_commits=i - start,
                    lifetime_days=(snap.commit_date - history.snapshots[start].commit_date).days,
                ))
        prev_idx, prev = i, current
    return result


def quarter(stamp: dt.datetime) -> str:
    return f"{stamp.year}Q{(stamp.month - 1) // 3 + 1}"


CSV_HEADER = ["rule", "quarter", "introduced", "modified", "removed", "rewritten"]
TOTALS_HEADER = [
    "rule", "introduced", "modified", "removed", "rewritten", "alive",
    "median_lifetime_commits", "median_lifetime_days",
]
_COLUMN = {
    Classification.MODIFIED: "modified",
    Classification.REMOVED: "removed",
    Classification.FILE_REWRITTEN: "rewritten",
}


@dataclass
class SurvivalReport:
    analyses: list[HistoryAnalysis]
    rows: list[dict]
    totals: list[dict]
    candidate_fixes: int

    @property
    def events(self) -> list[DisappearanceEvent]:
        return [e for a in self.analyses for e in a.events]

    def csv(self) -> str:
        return _to_csv(CSV_HEADER, self.rows)

    def totals_csv(self) -> str:
        return _to_csv(TOTALS_HEADER, self.totals)

    def events_jsonl(self) -> str:
        return "".join(json.dumps(e.as_json(), sort_keys=False) + "\n" for e in self.events)


def _to_csv(header: list[str], rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def _median(values: list[int]) -> float | None:
    return statistics.median(values) if values else None


def summarize(histories: Iterable[SnapshotHistory]) -> SurvivalReport:
    analyses = [analyze(h) for h in histories]
    buckets: dict[tuple[str, str], Counter] = defaultdict(Counter)
    per_rule: dict[str, Counter] = defaultdict(Counter)
    commits: dict[str, list[int]] = defaultdict(list)
    days: dict[str, list[int]] = defaultdict(list)
    for a in analyses:
        snaps = a.history.snapshots
        for i, key in a.introductions:
            rule = key.rule.value
            buckets[(rule, quarter(snaps[i].commit_date))]["introduced"] += 1
            per_rule[rule]["introduced"] += 1
        for e in a.events:
            rule = e.key.rule.value
            column = _COLUMN[e.classification]
            buckets[(rule, quarter(e.commit_date))][column] += 1
            per_rule[rule][column] += 1
            commits[rule].append(e.lifetime_commits)
            days[rule].append(e.lifetime_days)
        for key in a.alive:
            per_rule[key.rule.value]["alive"] += 1

    rows = [
        {"rule": rule, "quarter": q, **{c: counts[c] for c in CSV_HEADER[2:]}}
        for (rule, q), counts in sorted(buckets.items())
    ]
    totals = [
        {
            "rule": rule,
            **{c: per_rule[rule][c] for c in TOTALS_HEADER[1:6]},
            "median_lifetime_commits": _median(commits[rule]),
            "median_lifetime_days": _median(days[rule]),
        }
        for rule in sorted(per_rule)
    ]
    return SurvivalReport(analyses, rows, totals, sum(len(a.pf) for a in analyses))
