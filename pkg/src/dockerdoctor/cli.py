"""Command-line interface: lint, fix, history, sample and pr-draft."""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .dockerfile import DockerfileError, decode_source, parse_dockerfile, print_dockerfile
from .fixes import FixContext, Status, fix_all, render_patch
from .history import load_manifest, summarize
from .resolvers import PackageIndexSnapshot, RegistrySnapshot, ResolverError
from .rules import RuleId, lint, report
from .study import (
    InsufficientPopulation,
    draft_pr,
    filter_candidates,
    load_candidates,
    stratified_sample,
    write_candidates,
    write_draft,
)

EXIT_OK = 0
EXIT_FINDINGS = 1
EXIT_ERROR = 2
EXIT_USAGE = 64
EXIT_IO = 74

FIXTURES_ENV = "DOCKERDOCTOR_FIXTURES"
REGISTRY_FILE = "registry.jsonl"
APT_FILE = "apt.jsonl"
APT_ARCHIVE_FILE = "apt_archive.jsonl"

NEEDS_REGISTRY = frozenset({RuleId.DL3006})
NEEDS_APT = frozenset({RuleId.DL3008})

log = logging.getLogger("dockerdoctor")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _date(value: str) -> dt.date:
    try:
        return dt.date.fromisoformat(value[:10])
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an ISO date: {value!r}") from None


def _rules(value: str) -> list[RuleId]:
    try:
        return [RuleId(r.strip().upper()) for r in value.split(",") if r.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _weights(value: str) -> dict[str, float]:
    out = {}
    for part in value.split(","):
        rule, _, weight = part.partition("=")
        try:
            out[RuleId(rule.strip().upper()).value] = float(weight)
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad weight {part!r}, expected RULE=NUMBER") from None
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dockerdoctor", description="Detect and fix Dockerfile smells.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--format", choices=("text", "json"), default="text")

    def fixtures(p: argparse.ArgumentParser) -> None:
        p.add_argument("--registry-fixture", type=Path, help="registry snapshot (JSON lines)")
        p.add_argument("--apt-fixture", type=Path, help="package publication history (JSON lines)")
        p.add_argument("--apt-archive-fixture", type=Path,
                       help="packages installable today; defaults to the apt fixture")
        p.add_argument("--last-modified-override", type=_date, metavar="DATE",
                       help="use this date instead of each file's mtime")
        p.add_argument("--rules", type=_rules, help="comma-separated rule ids")

    p = sub.add_parser("lint", help="report smells")
    p.add_argument("paths", nargs="+", type=Path)
    p.add_argument("--rules", type=_rules, help="comma-separated rule ids")
    common(p)

    p = sub.add_parser("fix", help="propose fixes as unified diffs")
    p.add_argument("paths", nargs="+", type=Path)
    p.add_argument("--write", action="store_true", help="rewrite files in place")
    fixtures(p)
    common(p)

    p = sub.add_parser("history", help="smell survival over snapshot manifests")
    p.add_argument("manifests", nargs="+", type=Path)
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common(p)

    p = sub.add_parser("sample", help="filter candidates and draw a stratified sample")
    p.add_argument("candidates", type=Path)
    p.add_argument("--total", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--today", type=_date, default=None, help="reference date for the activity filter")
    p.add_argument("--weights", type=_weights, help="stratum weights, e.g. DL3008=120,DL4000=30")
    p.add_argument("--output", type=Path, help="write the CSV here instead of stdout")
    common(p)

    p = sub.add_parser("pr-draft", help="write pull request drafts for one smell per repository")
    p.add_argument("dockerfile", nargs="?", type=Path)
    p.add_argument("--repo-id")
    p.add_argument("--rule", type=lambda v: _rules(v)[0])
    p.add_argument("--candidates", type=Path, help="sampled candidates CSV")
    p.add_argument("--root", type=Path, default=Path("."),
                   help="directory holding checkouts as ROOT/REPO_ID/DOCKERFILE_PATH")
    p.add_argument("--out", type=Path, default=Path("drafts"))
    fixtures(p)
    common(p)
    return parser


# --- helpers ------------------------------------------------------------------------


def _read_text(path: Path) -> str:
    return decode_source(path.read_bytes())


def _emit(args, payload, text: str) -> None:
    if args.format == "json":
        print(json.dumps(payload, indent=2))
    elif text:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


@dataclass
class Fixtures:
    registry: RegistrySnapshot | None
    apt: PackageIndexSnapshot | None
    apt_archive: PackageIndexSnapshot | None


def _fixture_path(explicit: Path | None, name: str) -> Path | None:
    if explicit is not None:
        return explicit
    root = os.environ.get(FIXTURES_ENV)
    if root and (Path(root) / name).exists():
        return Path(root) / name
    return None


def load_fixtures(args) -> Fixtures:
    reg = _fixture_path(args.registry_fixture, REGISTRY_FILE)
    apt = _fixture_path(args.apt_fixture, APT_FILE)
    archive = _fixture_path(args.apt_archive_fixture, APT_ARCHIVE_FILE)
    return Fixtures(
        RegistrySnapshot.load(reg) if reg else None,
        PackageIndexSnapshot.load(apt) if apt else None,
        PackageIndexSnapshot.load(archive) if archive else None,
    )


def select_fix_rules(requested: list[RuleId] | None, fx: Fixtures) -> list[RuleId]:
    missing = set()
    if fx.registry is None:
        missing |= NEEDS_REGISTRY
    if fx.apt is None:
        missing |= NEEDS_APT
    if requested is None:
        return [r for r in RuleId if r not in missing]
    lacking = sorted(r.value for r in set(requested) & missing)
    if lacking:
        raise UsageError(f"rules {', '.join(lacking)} need fixtures (--registry-fixture / --apt-fixture)")
    return list(dict.fromkeys(requested))


def _context(path: Path, args, fx: Fixtures) -> FixContext:
    if args.last_modified_override is not None:
        when = args.last_modified_override
    else:
        when = dt.datetime.fromtimestamp(path.stat().st_mtime, dt.timezone.utc).date()
    return FixContext(
        last_modified=when,
        registry=fx.registry or RegistrySnapshot(),
        apt_index=fx.apt or PackageIndexSnapshot(),
        apt_archive=fx.apt_archive,
    )


# --- commands -----------------------------------------------------------------------


def cmd_lint(args) -> int:
    def work(path: Path) -> dict:
        return report(str(path), lint(parse_dockerfile(_read_text(path)), args.rules))

    with ThreadPoolExecutor() as pool:
        reports = list(pool.map(work, args.paths))
    lines = [
        f"{r['path']}:{f['line']} {f['rule']} {f['message']}"
        for r in reports for f in r["findings"]
    ]
    _emit(args, reports, "\n".join(lines))
    return EXIT_FINDINGS if any(r["findings"] for r in reports) else EXIT_OK


def cmd_fix(args) -> int:
    fx = load_fixtures(args)
    rules = select_fix_rules(args.rules, fx)

    def work(path: Path) -> dict:
        before = parse_dockerfile(_read_text(path))
        after, outcomes = fix_all(before, _context(path, args, fx), rules)
        patch = render_patch(before, after, str(path))
        if args.write and patch:
            path.write_bytes(print_dockerfile(after).encode("utf-8"))
        return {"path": str(path), "outcomes": [o.as_json() for o in outcomes], "patch": patch}

    with ThreadPoolExecutor() as pool:
        results = list(pool.map(work, args.paths))
    refused = [
        f"{r['path']}:{o['line']} {o['rule']} refused: {o['refusal_reason']} {o['detail']}".rstrip()
        for r in results for o in r["outcomes"] if o["status"] == Status.REFUSED.value
    ]
    for line in refused:
        print(line, file=sys.stderr)
    text = "" if args.write else "".join(r["patch"] for r in results)
    _emit(args, results, text)
    return EXIT_FINDINGS if refused else EXIT_OK


def cmd_history(args) -> int:
    histories = [h for m in args.manifests for h in load_manifest(m)]
    rep = summarize(histories)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "survival.csv").write_text(rep.csv(), encoding="utf-8")
    (args.out / "survival_totals.csv").write_text(rep.totals_csv(), encoding="utf-8")
    (args.out / "events.jsonl").write_text(rep.events_jsonl(), encoding="utf-8")
    payload = {
        "histories": len(histories),
        "candidate_fixes": rep.candidate_fixes,
        "events": len(rep.events),
        "skipped_snapshots": sum(len(a.errors) for a in rep.analyses),
        "totals": rep.totals,
        "outputs": [str(args.out / n) for n in ("survival.csv", "survival_totals.csv", "events.jsonl")],
    }
    _emit(args, payload, rep.csv())
    return EXIT_OK


def cmd_sample(args) -> int:
    today = args.today or dt.datetime.now(dt.timezone.utc).date()
    eligible = filter_candidates(load_candidates(args.candidates), today)
    chosen = stratified_sample(eligible, args.total, args.seed, args.weights)
    if args.output:
        with open(args.output, "w", newline="", encoding="utf-8") as fh:
            write_candidates(chosen, fh)
    if args.format == "json":
        _emit(args, [r.as_row() for r in chosen], "")
    elif not args.output:
        write_candidates(chosen, sys.stdout)
    return EXIT_OK


def cmd_pr_draft(args) -> int:
    if args.candidates:
        jobs = [(c.repo_id, args.root / c.repo_id / c.dockerfile_path, c.dockerfile_path, c.rule)
                for c in load_candidates(args.candidates)]
    elif args.dockerfile and args.repo_id and args.rule:
        jobs = [(args.repo_id, args.dockerfile, str(args.dockerfile), args.rule)]
    else:
        raise UsageError("pr-draft needs --candidates, or DOCKERFILE with --repo-id and --rule")
    fx = load_fixtures(args)
    select_fix_rules([rule for *_, rule in jobs], fx)

    results = []
    for repo_id, path, shown, rule in jobs:
        before = parse_dockerfile(_read_text(path))
        after, outcomes = fix_all(before, _context(path, args, fx), [rule])
        entry = {"repo_id": repo_id, "rule": rule.value, "path": shown,
                 "outcomes": [o.as_json() for o in outcomes], "files": []}
        if outcomes and all(o["status"] == Status.FIXED.value for o in entry["outcomes"]):
            draft = draft_pr(shown, rule, render_patch(before, after, shown))
            entry["files"] = [str(p) for p in write_draft(args.out, repo_id, draft)]
        results.append(entry)
    text = "\n".join(
        f"{r['repo_id']} {r['rule']}: " + (", ".join(r["files"]) if r["files"] else "no draft (nothing fixed)")
        for r in results
    )
    _emit(args, results, text)
    return EXIT_OK if all(r["files"] for r in results) else EXIT_FINDINGS


COMMANDS = {
    "lint": cmd_lint,
    "fix": cmd_fix,
    "history": cmd_history,
    "sample": cmd_sample,
    "pr-draft": cmd_pr_draft,
}


def _wants_json(argv: Sequence[str]) -> bool:
    return "--format=json" in argv or any(
        a == "--format" and b == "json" for a, b in zip(argv, argv[1:])
    )


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    json_mode = _wants_json(argv)

    def fail(code: int, message: str) -> int:
        print(message, file=sys.stderr)
        if json_mode:
            print(json.dumps({"error": message, "exit_code": code}))
        return code

    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return fail(EXIT_USAGE, str(exc))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        return fail(EXIT_USAGE, f"dockerdoctor: {exc}")
    except OSError as exc:
        return fail(EXIT_IO, f"dockerdoctor: {exc}")
    except (DockerfileError, ResolverError, InsufficientPopulation, ValueError) as exc:
        return fail(EXIT_ERROR, f"dockerdoctor: {exc}")


if __name__ == "__main__":
    sys.exit(main())
