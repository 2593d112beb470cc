"""Regenerate the reference-linter goldens for the test corpus.

Requires the ``hadolint`` binary on PATH (``pip install hadolint-bin``).
Each golden lists the (rule, line) pairs hadolint reports for the eight
rules we implement.
"""

from __future__ import annotations

import argparse
import json
import subprocess
from pathlib import Path

RULES = {"DL3003", "DL3006", "DL3008", "DL3009", "DL3015", "DL3020", "DL4000", "DL4006"}
ROOT = Path(__file__).resolve().parent.parent


def reference_findings(path: Path, binary: str = "hadolint") -> list[dict]:
    proc = subprocess.run([binary, "--no-fail", "-f", "json", str(path)],
                          capture_output=True, text=True, check=True)
    pairs = {(d["code"], d["line"]) for d in json.loads(proc.stdout) if d["code"] in RULES}
    return [{"code": code, "line": line} for code, line in sorted(pairs, key=lambda p: (p[1], p[0]))]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--corpus", type=Path, default=ROOT / "tests" / "corpus")
    parser.add_argument("--out", type=Path, default=ROOT / "tests" / "golden" / "hadolint")
    parser.add_argument("--hadolint", default="hadolint")
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    for path in sorted(args.corpus.glob("*.Dockerfile")):
        golden = args.out / f"{path.stem}.json"
        golden.write_text(json.dumps(reference_findings(path, args.hadolint), indent=1) + "\n")
        print(golden.relative_to(ROOT))


if __name__ == "__main__":
    main()
