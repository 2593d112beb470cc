"""Tooling for the pull-request study.

Candidate filtering, sample-size arithmetic, stratified sampling by rule,
PR message rendering and a small append-only ledger of PR outcomes.
"""

from __future__ import annotations

import csv
import datetime as dt
import enum
import json
import math
import random
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from statistics import NormalDist
from typing import Iterable, Mapping

from .rules import CATALOG, RuleId

MIN_STARS = 10
MIN_MERGED_PRS = 1
ACTIVITY_WINDOW_DAYS = 92


class DomainError(ValueError):
    pass


class InsufficientPopulation(ValueError):
    pass


class EmptyField(ValueError):
    pass


def required_sample_size(confidence: float, margin: float, p: float = 0.5) -> int:
    """Cochran's sample size for an infinite population, rounded up."""
    for name, value in (("confidence", confidence), ("margin", margin), ("p", p)):
        if not 0 < value < 1:
            raise DomainError(f"{name} must lie strictly between 0 and 1, got {value}")
    z = NormalDist().inv_cdf(1 - (1 - confidence) / 2)
    return math.ceil(z * z * p * (1 - p) / (margin * margin))


# --- candidates ---------------------------------------------------------------------

CANDIDATE_HEADER = [
    "repo_id", "stars", "merged_pr_count", "last_commit_date",
    "dockerfile_path", "rule", "build_ok", "smell_in_latest",
]
_TRUE = {"true", "1", "yes", "y"}
_FALSE = {"false", "0", "no", "n", ""}


def _bool(value: str) -> bool:
    v = value.strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise ValueError(f"not a boolean: {value!r}")


@dataclass(frozen=True)
class CandidateRecord:
    repo_id: str
    stars: int
    merged_pr_count: int
    last_commit_date: dt.date
    dockerfile_path: str
    rule: RuleId
    build_ok: bool
    smell_in_latest: bool

    @classmethod
    def from_row(cls, row: Mapping[str, str]) -> CandidateRecord:
        return cls(
            repo_id=row["repo_id"],
            stars=int(row["stars"]),
            merged_pr_count=int(row["merged_pr_count"]),
            last_commit_date=dt.date.fromisoformat(row["last_commit_date"][:10]),
            dockerfile_path=row["dockerfile_path"],
            rule=RuleId(row["rule"]),
            build_ok=_bool(row["build_ok"]),
            smell_in_latest=_bool(row["smell_in_latest"]),
        )

    def as_row(self) -> dict[str, str]:
        row = asdict(self)
        row["last_commit_date"] = self.last_commit_date.isoformat()
        row["rule"] = self.rule.value
        row["build_ok"] = str(self.build_ok).lower()
        row["smell_in_latest"] = str(self.smell_in_latest).lower()
        return {k: str(v) for k, v in row.items()}


def load_candidates(path: str | Path) -> list[CandidateRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(CANDIDATE_HEADER) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {', '.join(sorted(missing))}")
        return [CandidateRecord.from_row(row) for row in reader]


def write_candidates(records: Iterable[CandidateRecord], fh) -> None:
    writer = csv.DictWriter(fh, fieldnames=CANDIDATE_HEADER, lineterminator="\n")
    writer.writeheader()
    for rec in records:
        writer.writerow(rec.as_row())


def is_eligible(rec: CandidateRecord, today: dt.date) -> bool:
    return (
        rec.stars >= MIN_STARS
        and rec.merged_pr_count >= MIN_MERGED_PRS
        and (today - rec.last_commit_date).days <= ACTIVITY_WINDOW_DAYS
        and rec.smell_in_latest
        and rec.build_ok
    )


def filter_candidates(records: Iterable[CandidateRecord], today: dt.date) -> list[CandidateRecord]:
    """Eligible records, at most one per repository (the first one seen)."""
    seen: set[str] = set()
    out = []
    for rec in records:
        if rec.repo_id in seen or not is_eligible(rec, today):
            continue
        seen.add(rec.repo_id)
        out.append(rec)
    return out


# --- stratified sampling ------------------------------------------------------------


def largest_remainder(weights: Mapping[str, float], total: int) -> dict[str, int]:
    """Integer quotas proportional to ``weights`` that sum to ``total``.

    Leftover units go to the largest fractional parts; ties go to the
    stratum that sorts first.
    """
    mass = sum(weights.values())
    if total == 0 or mass <= 0:
        return {k: 0 for k in weights}
    exact = {k: total * w / mass for k, w in weights.items()}
    quotas = {k: math.floor(v) for k, v in exact.items()}
    leftover = total - sum(quotas.values())
    for k in sorted(exact, key=lambda k: (-(exact[k] - quotas[k]), k))[:leftover]:
        quotas[k] += 1
    return quotas


def allocate(sizes: Mapping[str, int], total: int, weights: Mapping[str, float] | None = None) -> dict[str, int]:
    """Per-stratum quotas, capping at stratum size and spreading the excess."""
    if total < 0:
        raise ValueError("total must be non-negative")
    weights = dict(weights) if weights is not None else dict(sizes)
    quotas = {k: 0 for k in sizes}
    open_strata = {k for k in sizes if sizes[k] > 0 and weights.get(k, 0) > 0}
    remaining = total
    while remaining:
        if not open_strata:
            raise InsufficientPopulation(f"cannot draw {total} records from strata {dict(sizes)}")
        trial = largest_remainder({k: weights[k] for k in open_strata}, remaining)
        capped = {k for k in open_strata if trial[k] > sizes[k]}
        if not capped:
            quotas.update(trial)
            break
        for k in capped:
            quotas[k] = sizes[k]
            remaining -= sizes[k]
        open_strata -= capped
    return quotas


def stratified_sample(
    records: Iterable[CandidateRecord],
    total: int,
    seed: int,
    weights: Mapping[str, float] | None = None,
) -> list[CandidateRecord]:
    """Sample ``total`` records with rules as strata, proportionally.

    Quotas follow the stratum sizes unless ``weights`` (keyed by rule id) are
    given, e.g. per-rule fix counts.
    """
    strata: dict[str, list[CandidateRecord]] = defaultdict(list)
    for rec in records:
        strata[rec.rule.value].append(rec)
    quotas = allocate({k: len(v) for k, v in strata.items()}, total, weights)
    rng = random.Random(seed)
    out = []
    for rule in sorted(strata):
        out.extend(rng.sample(strata[rule], quotas[rule]))
    return out


# --- pull request drafts ------------------------------------------------------------

PR_TEMPLATE = (
    "Hi!\n"
    "\n"
    "The Dockerfile placed at ⟨dockerfile_path⟩ contained a best practice violation, "
    "detected by the linting tool *hadolint*, and identified as ⟨violation_id⟩.\n"
    "\n"
    "The ⟨violation_id⟩ occurs when ⟨violation_description⟩\n"
    "\n"
    "In this pull request, we propose a fix for the detected smell, automatically "
    "generated by a tool. To fix this smell, specifically, we ⟨fixing_rule_explanation⟩.\n"
    "This change is only aimed at fixing the specific smell. In case of rejection, please "
    "briefly indicate the reason (e.g., if you believe that the fix is not valid or useful "
    "and why, along with suggestions for possible improvement).\n"
    "\n"
    "Thanks in advance.\n"
)
PLACEHOLDERS = ("dockerfile_path", "violation_id", "violation_description", "fixing_rule_explanation")

VIOLATION_DESCRIPTIONS: dict[RuleId, str] = {
    RuleId.DL3003: "a RUN instruction changes directory with `cd` instead of using WORKDIR.",
    RuleId.DL3006: "the base image of a FROM instruction has no explicit tag.",
    RuleId.DL3008: "packages are installed with `apt-get install` without pinning their versions.",
    RuleId.DL3009: "the apt lists are not deleted after installing packages with apt-get.",
    RuleId.DL3015: "`apt-get install` runs without `--no-install-recommends`, pulling in extra packages.",
    RuleId.DL3020: "ADD is used to copy local files or folders, where COPY is enough.",
    RuleId.DL4000: "the deprecated MAINTAINER instruction is used.",
    RuleId.DL4006: "a RUN instruction contains a pipe but the shell is not set to fail on pipe errors.",
}

FIX_EXPLANATIONS: dict[RuleId, str] = {
    RuleId.DL3003: "moved the directory change into a WORKDIR instruction",
    RuleId.DL3006: "tagged the base image with the most recent tag of the image currently built",
    RuleId.DL3008: "pinned each package to the version available when the Dockerfile was last modified",
    RuleId.DL3009: "added the removal of /var/lib/apt/lists/* at the end of the RUN instruction",
    RuleId.DL3015: "added the `--no-install-recommends` option to `apt-get install`",
    RuleId.DL3020: "replaced ADD with COPY",
    RuleId.DL4000: "replaced MAINTAINER with a LABEL",
    RuleId.DL4006: "added a SHELL instruction enabling `-o pipefail` before the RUN instruction",
}


def render_pr_body(
    dockerfile_path: str,
    violation_id: RuleId | str,
    violation_description: str,
    fixing_rule_explanation: str,
) -> str:
    values = {
        "dockerfile_path": dockerfile_path,
        "violation_id": RuleId(violation_id).value if violation_id else "",
        "violation_description": violation_description,
        "fixing_rule_explanation": fixing_rule_explanation,
    }
    for name, value in values.items():
        if not value or not value.strip():
            raise EmptyField(name)
    body = PR_TEMPLATE
    for name in PLACEHOLDERS:
        body = body.replace(f"⟨{name}⟩", values[name])
    return body


@dataclass(frozen=True)
class PrDraft:
    title: str
    body: str
    rule: RuleId
    patch: str


def draft_pr(dockerfile_path: str, rule: RuleId, patch: str) -> PrDraft:
    body = render_pr_body(dockerfile_path, rule, VIOLATION_DESCRIPTIONS[rule], FIX_EXPLANATIONS[rule])
    title = f"Fix {rule.value} in {dockerfile_path}: {CATALOG[rule].split('.')[0]}"
    return PrDraft(title, body, rule, patch)


def draft_stem(repo_id: str, rule: RuleId) -> str:
    return f"{repo_id.replace('/', '__')}-{rule.value}"


def write_draft(directory: str | Path, repo_id: str, draft: PrDraft) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = draft_stem(repo_id, draft.rule)
    md = directory / f"{stem}.md"
    patch = directory / f"{stem}.patch"
    md.write_text(f"# {draft.title}\n\n{draft.body}", encoding="utf-8")
    patch.write_text(draft.patch, encoding="utf-8")
    return md, patch


# --- PR lifecycle -------------------------------------------------------------------


class PrStateValue(str, enum.Enum):
    IGNORED = "Ignored"
    REJECTED_CLOSED = "RejectedClosed"
    PENDING = "Pending"
    ACCEPTED = "Accepted"
    FIXED = "Fixed"


@dataclass(frozen=True)
class PrState:
    value: PrStateValue
    recorded_at: dt.date


@dataclass(frozen=True)
class LedgerEntry:
    repo_id: str
    rule: RuleId
    state: PrState

    def as_json(self) -> dict:
        return {
            "repo_id": self.repo_id,
            "rule": self.rule.value,
            "state": self.state.value.value,
            "recorded_at": self.state.recorded_at.isoformat(),
        }

    @classmethod
    def from_json(cls, row: dict) -> LedgerEntry:
        return cls(
            row["repo_id"], RuleId(row["rule"]),
            PrState(PrStateValue(row["state"]), dt.date.fromisoformat(row["recorded_at"])),
        )


class PrLedger:
    """Append-only JSON-lines record of PR state transitions."""

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def record(self, repo_id: str, rule: RuleId, value: PrStateValue | str, recorded_at: dt.date) -> LedgerEntry:
        entry = LedgerEntry(repo_id, RuleId(rule), PrState(PrStateValue(value), recorded_at))
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry.as_json()) + "\n")
        return entry

    def entries(self) -> list[LedgerEntry]:
        if not self.path.exists():
            return []
        with open(self.path, encoding="utf-8") as fh:
            return [LedgerEntry.from_json(json.loads(line)) for line in fh if line.strip()]

    def current(self) -> dict[tuple[str, RuleId], PrState]:
        latest: dict[tuple[str, RuleId], PrState] = {}
        for e in self.entries():
            latest[(e.repo_id, e.rule)] = e.state
        return latest
