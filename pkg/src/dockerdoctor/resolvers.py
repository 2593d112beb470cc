"""Version lookups behind fixture-backed snapshots.

Both snapshots are plain immutable value objects loaded from JSON-lines
fixtures. Live backends (registry HTTP API, ``apt-get install -s``) would
implement the same query functions; none ships enabled.
"""

from __future__ import annotations

import datetime as dt
import enum
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .dockerfile import ImageRef

LATEST = "latest"


class ResolverError(Exception):
    pass


class ImageNotFound(ResolverError):
    pass


class NoTagAvailable(ResolverError):
    pass


class PackageNotFound(ResolverError):
    pass


class TooFewSegments(ResolverError):
    pass


class FixtureError(ResolverError):
    def __init__(self, path: str, lineno: int, reason: str):
        super().__init__(f"{path}:{lineno}: {reason}")


def _parse_date(value: str) -> dt.date:
    return dt.date.fromisoformat(value[:10])


@dataclass(frozen=True)
class TagRecord:
    tag_name: str
    pushed_date: dt.date


@dataclass(frozen=True)
class RegistrySnapshot:
    # image name -> digest -> tags pointing at that digest
    entries: dict[str, dict[str, tuple[TagRecord, ...]]] = field(default_factory=dict)

    @classmethod
    def from_rows(cls, rows: Iterable[dict]) -> RegistrySnapshot:
        images: dict[str, dict[str, list[TagRecord]]] = defaultdict(lambda: defaultdict(list))
        seen: set[tuple[str, str]] = set()
        for row in rows:
            image, tag = row["image"], row["tag"]
            if (image, tag) in seen:
                raise ValueError(f"duplicate tag {image}:{tag}")
            seen.add((image, tag))
            images[image][row["digest"]].append(TagRecord(tag, _parse_date(row["pushed_date"])))
        return cls({img: {d: tuple(t) for d, t in digests.items()} for img, digests in images.items()})

    @classmethod
    def load(cls, path: str | Path) -> RegistrySnapshot:
        return cls.from_rows(_read_jsonl(path, ("image", "digest", "tag", "pushed_date")))

    def lookup(self, name: str) -> dict[str, tuple[TagRecord, ...]] | None:
        for candidate in _name_variants(name):
            if candidate in self.entries:
                return self.entries[candidate]
        return None

    def digest_of(self, name: str, tag: str = LATEST) -> str | None:
        digests = self.lookup(name) or {}
        for digest, tags in digests.items():
            if any(t.tag_name == tag for t in tags):
                return digest
        return None


def _name_variants(name: str) -> list[str]:
    out = [name]
    for prefix in ("docker.io/library/", "index.docker.io/library/", "docker.io/", "library/"):
        if name.startswith(prefix):
            out.append(name[len(prefix):])
    if "/" not in name:
        out.append("library/" + name)
    return out


@dataclass(frozen=True)
class PackageRow:
    distribution: str
    series: str
    package: str
    version: str
    published_date: dt.date


@dataclass(frozen=True)
class PackageIndexSnapshot:
    rows: tuple[PackageRow, ...] = ()

    @classmethod
    def from_rows(cls, rows: Iterable[dict]) -> PackageIndexSnapshot:
        out = []
        seen = set()
        for row in rows:
            rec = PackageRow(
                row["distribution"], row["series"], row["package"], row["version"],
                _parse_date(row["published_date"]),
            )
            key = (rec.distribution, rec.series, rec.package, rec.version)
            if key in seen:
                raise ValueError(f"duplicate package row {key}")
            seen.add(key)
            out.append(rec)
        return cls(tuple(out))

    @classmethod
    def load(cls, path: str | Path) -> PackageIndexSnapshot:
        return cls.from_rows(_read_jsonl(path, ("distribution", "series", "package", "version", "published_date")))

    def versions(self, package: str, series: str, distribution: str = "ubuntu") -> list[PackageRow]:
        return [
            r for r in self.rows
            if r.distribution == distribution and r.series == series and r.package == package
        ]

    def without(self, predicate) -> PackageIndexSnapshot:
        return PackageIndexSnapshot(tuple(r for r in self.rows if not predicate(r)))


def _read_jsonl(path: str | Path, required: tuple[str, ...]) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FixtureError(str(path), lineno, str(exc)) from None
            missing = [k for k in required if k not in row]
            if missing:
                raise FixtureError(str(path), lineno, f"missing {', '.join(missing)}")
            rows.append(row)
    return rows


def resolve_image_tag(ref: ImageRef, registry: RegistrySnapshot) -> str:
    """Most recently pushed non-``latest`` tag sharing the digest ``latest`` points at.

    Building the image to learn its digest is modelled by reading the digest
    that the snapshot's ``latest`` tag maps to. Ties on push date go to the
    lexicographically last tag name.
    """
    digests = registry.lookup(ref.name)
    if not digests:
        raise ImageNotFound(ref.name)
    digest = registry.digest_of(ref.name, LATEST)
    if digest is None:
        raise NoTagAvailable(f"{ref.name} has no {LATEST} tag")
    candidates = [t for t in digests[digest] if t.tag_name != LATEST]
    if not candidates:
        raise NoTagAvailable(f"{ref.name}@{digest} is only tagged {LATEST}")
    best = max(candidates, key=lambda t: (t.pushed_date, t.tag_name))
    return best.tag_name


def select_apt_version(
    package: str, series: str, cutoff: dt.date, index: PackageIndexSnapshot
) -> str:
    """Version published closest to, but not after, ``cutoff``.

    Rows sharing the winning date are resolved in favour of the later row.
    """
    rows = [(r.published_date, pos, r) for pos, r in enumerate(index.versions(package, series))
            if r.published_date <= cutoff]
    if not rows:
        raise PackageNotFound(f"no {package} release in {series} on or before {cutoff}")
    return max(rows, key=lambda t: (t[0], t[1]))[2].version


class Level(str, enum.Enum):
    EXACT = "exact"
    PATCH_WILD = "patch_wild"
    MINOR_WILD = "minor_wild"


@dataclass(frozen=True)
class VersionPattern:
    text: str
    level: Level

    def matches(self, version: str) -> bool:
        if self.level is Level.EXACT:
            return version == self.text
        return version.startswith(self.text[:-1])


def degrade_version(version: str, level: Level | str) -> VersionPattern:
    """Wildcard the last one (patch) or two (minor) dot-separated segments.

    The whole Debian version string is split on dots, so for
    ``7.68.0-1ubuntu2.5`` the patch segment is ``5`` and the minor wildcard
    gives ``7.68.*``.
    """
    level = Level(level)
    segments = version.split(".")
    drop = {Level.PATCH_WILD: 1, Level.MINOR_WILD: 2}.get(level)
    if drop is None:
        raise ValueError(f"cannot degrade to {level.value}")
    if not version or len(segments) <= drop:
        raise TooFewSegments(version)
    return VersionPattern(".".join(segments[:-drop]) + ".*", level)


def is_installable(
    package: str, pattern: VersionPattern, series: str, index: PackageIndexSnapshot
) -> bool:
    """Simulated ``apt-get install pkg=pattern`` against the snapshot."""
    return any(pattern.matches(r.version) for r in index.versions(package, series))
