import base64
import datetime as dt
import json
import random
from collections import Counter

import pytest

from conftest import FIXTURES
from dockerdoctor.dockerfile import parse_dockerfile
from dockerdoctor.history import (
    CSV_HEADER,
    Classification,
    Snapshot,
    SnapshotHistory,
    UnparseableSnapshot,
    align_lines,
    candidate_fix_set,
    classify_disappearance,
    disappeared,
    informed_hint,
    lcs_pairs,
    load_manifest,
    manifest_rows,
    summarize,
)
from dockerdoctor.rules import RuleId, SmellKey, smell_set

T0 = dt.datetime(2021, 1, 1, tzinfo=dt.timezone.utc)


def history(*texts, days=None, messages=None):
    days = days or list(range(len(texts)))
    messages = messages or [None] * len(texts)
    snaps = tuple(
        Snapshot(f"c{i}", T0 + dt.timedelta(days=d), t if isinstance(t, bytes) else t.encode(), m)
        for i, (t, d, m) in enumerate(zip(texts, days, messages))
    )
    return SnapshotHistory("Dockerfile", snaps)


def eta(text):
    return smell_set(parse_dockerfile(text))


CURL_WGET = "FROM ubuntu:20.04\nRUN apt-get install -y --no-install-recommends curl wget\n"
CURL_PINNED = "FROM ubuntu:20.04\nRUN apt-get install -y --no-install-recommends curl=7.68.0-1ubuntu2.* wget\n"
NO_WGET = "FROM ubuntu:20.04\nRUN apt-get install -y --no-install-recommends curl=7.68.0-1ubuntu2.*\n"
CURL = SmellKey(RuleId.DL3008, (0, "curl"))
WGET = SmellKey(RuleId.DL3008, (0, "wget"))


def test_identical_snapshots():
    assert disappeared(history(CURL_WGET, CURL_WGET), 1) == frozenset()


def test_tag_pinning_disappears():
    h = history("FROM ubuntu\n", "FROM ubuntu:20.04\n")
    assert disappeared(h, 1) == eta("FROM ubuntu\n") - eta("FROM ubuntu:20.04\n")
    assert disappeared(h, 1) == {SmellKey(RuleId.DL3006, (0,))}


def test_wget_deleted():
    h = history(CURL_PINNED, NO_WGET)
    assert disappeared(h, 1) == {WGET}
    assert classify_disappearance(h, 1, WGET) is Classification.REMOVED


def test_curl_pinned_is_modified():
    h = history(CURL_WGET, CURL_PINNED)
    assert disappeared(h, 1) == {CURL}
    assert classify_disappearance(h, 1, CURL) is Classification.MODIFIED


def test_wholesale_rewrite():
    old = CURL_WGET + "COPY a /a\nCOPY b /b\nCMD [\"x\"]\n"
    new = "FROM alpine:3.14\nRUN apk add --no-cache python3\nENTRYPOINT [\"py\"]\n"
    h = history(old, new)
    assert classify_disappearance(h, 1, CURL) is Classification.FILE_REWRITTEN


def test_moved_package_line_keeps_token():
    old = "FROM ubuntu:20.04\nRUN apt-get install -y --no-install-recommends \\\n    curl \\\n    git\n"
    new = "FROM ubuntu:20.04\nRUN apt-get install -y --no-install-recommends \\\n    curl=7.68.* \\\n    git\n"
    h = history(old, new)
    assert classify_disappearance(h, 1, CURL) is Classification.MODIFIED


def test_candidate_fix_set():
    assert candidate_fix_set(history(CURL_WGET)) == set()
    assert candidate_fix_set(history(CURL_WGET, CURL_PINNED, CURL_PINNED)) == {1}
    assert candidate_fix_set(history(NO_WGET, CURL_PINNED, NO_WGET)) == {2}


def test_unparseable_snapshot_is_skipped():
    h = history(CURL_WGET, b"\xff\xfe", CURL_PINNED)
    with pytest.raises(UnparseableSnapshot):
        disappeared(h, 1)
    report = summarize([h])
    assert [e.at for e in report.events] == [2]
    assert len(report.analyses[0].errors) == 1


def test_lcs_and_alignment():
    a = ["x", "y", "z"]
    b = ["x", "q", "z"]
    assert lcs_pairs(a, b) == [(0, 0), (2, 2)]
    assert align_lines(["RUN apt-get install curl"], ["RUN apt-get install curl=1.*"]) == {0: 0}
    assert align_lines(["MAINTAINER x"], ["EXPOSE 80"]) == {}


def test_informed_hint():
    assert informed_hint("Fix DL3008 warning", RuleId.DL3008)
    assert informed_hint("pin package versions", RuleId.DL3008)
    assert informed_hint("hadolint cleanup", RuleId.DL4000)
    assert not informed_hint("bump deps", RuleId.DL3020)
    assert not informed_hint(None, RuleId.DL3020)


def test_empty_summary():
    assert summarize([]).csv() == ",".join(CSV_HEADER) + "\n"


def test_lifetime_row():
    text = "FROM ubuntu:20.04\nRUN apt-get install -y --no-install-recommends curl\n"
    pinned = text.replace("curl", "curl=7.68.*")
    h = history(text, text + "EXPOSE 80\n", text + "EXPOSE 81\n", pinned + "EXPOSE 81\n", days=[0, 2, 5, 10])
    [event] = summarize([h]).events
    assert (event.lifetime_commits, event.lifetime_days, event.classification) == (3, 10, Classification.MODIFIED)


def test_two_rules_same_commit():
    h = history("FROM ubuntu\nMAINTAINER x\n", "FROM ubuntu:20.04\nLABEL maintainer=x\n")
    report = summarize([h])
    assert sorted(r["rule"] for r in report.rows) == ["DL3006", "DL4000"]
    assert report.candidate_fixes == 1


def test_manifest_round_trip(tmp_path):
    h = history(CURL_WGET, CURL_PINNED, messages=["a", "b"])
    path = tmp_path / "m.jsonl"
    path.write_text("".join(json.dumps(r) + "\n" for r in manifest_rows(h)))
    [loaded] = load_manifest(path)
    assert loaded == h


def test_synthetic_manifest_golden():
    [h] = load_manifest(FIXTURES / "history_manifest.jsonl")
    report = summarize([h])
    assert report.csv() == (FIXTURES / "survival.csv").read_text()
    assert report.candidate_fixes == 3


# --- random histories ----------------------------------------------------------------

LINE_POOL = [
    "MAINTAINER someone",
    "RUN apt-get install -y --no-install-recommends curl",
    "RUN apt-get install -y --no-install-recommends curl wget",
    "RUN apt-get install -y --no-install-recommends curl=7.68.*",
    "RUN cd /app && make",
    "ADD notes.txt /notes.txt",
    "RUN a | b",
    "RUN apt-get update",
    "EXPOSE 80",
]


def random_history(rng):
    texts = []
    for _ in range(rng.randint(1, 8)):
        base = rng.choice(["FROM ubuntu:20.04", "FROM ubuntu", "FROM alpine:3.14"])
        body = rng.sample(LINE_POOL, rng.randint(0, len(LINE_POOL)))
        texts.append("\n".join([base, *body]) + "\n")
    days = sorted(rng.sample(range(400), len(texts)))
    return history(*texts, days=days)


def test_random_histories_conservation_and_set_algebra():
    rng = random.Random(11)
    for _ in range(100):
        h = random_history(rng)
        etas = [eta(s.content.decode()) for s in h.snapshots]
        introduced, gone = Counter(), Counter()
        prev = frozenset()
        for cur in etas:
            introduced.update(k.rule.value for k in cur - prev)
            gone.update(k.rule.value for k in prev - cur)
            prev = cur
        alive = Counter(k.rule.value for k in etas[-1])

        report = summarize([h])
        for row in report.totals:
            rule = row["rule"]
            assert row["introduced"] == introduced[rule]
            assert row["modified"] + row["removed"] + row["rewritten"] == gone[rule]
            assert row["introduced"] - (row["modified"] + row["removed"] + row["rewritten"]) == row["alive"]
            assert row["alive"] == alive[rule]

        pf = candidate_fix_set(h)
        for i in range(1, len(h.snapshots)):
            d = disappeared(h, i)
            assert not d & etas[i] and d <= etas[i - 1]
            assert (i in pf) == bool(d)
        for e in report.events:
            assert isinstance(e.classification, Classification)


def test_snapshot_history_rejects_duplicates():
    snap = Snapshot("same", T0, b"FROM x:1\n")
    with pytest.raises(ValueError):
        SnapshotHistory("D", (snap, snap))
    assert base64.b64encode(snap.content)
