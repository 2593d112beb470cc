"""Random generator of syntactically valid Dockerfiles for round-trip tests."""

from __future__ import annotations

import random

IMAGES = ["ubuntu", "ubuntu:20.04", "alpine:3.14", "debian@sha256:0123abcd", "node:16-slim", "${BASE}"]
COMMANDS = [
    "apt-get update", "apt-get install -y curl", "echo 'a && b'", "make -j4",
    'echo "x | y" | tee /tmp/z', "cd /src", "rm -rf /var/lib/apt/lists/*", "ls $(pwd)",
]
SIMPLE = [
    ("ENV", "A=1 B=\"two words\""), ("WORKDIR", "/app"), ("COPY", ". /app"), ("ADD", "x.tar.gz /opt/"),
    ("EXPOSE", "8080/tcp"), ("USER", "nobody"), ("LABEL", 'maintainer="a@b"'), ("ARG", "V=1"),
    ("CMD", '["run", "--flag"]'), ("ENTRYPOINT", "/bin/sh -c 'exec app'"), ("MAINTAINER", "x <y@z>"),
    ("SHELL", '["/bin/bash", "-o", "pipefail", "-c"]'), ("HEALTHCHECK", "CMD curl -f http://localhost/"),
]


def random_dockerfile(rng: random.Random) -> str:
    eol = rng.choice(["\n", "\n", "\r\n"])
    escape = rng.choice(["\\", "\\", "`"])
    out: list[str] = []
    if escape != "\\":
        out.append(f"# escape={escape}{eol}")
    elif rng.random() < 0.2:
        out.append(f"# syntax=docker/dockerfile:1{eol}")
    for _ in range(rng.randint(1, 3)):
        kw = rng.choice(["FROM", "from", "From"])
        alias = f" AS stage{rng.randint(0, 9)}" if rng.random() < 0.3 else ""
        out.append(f"{kw} {rng.choice(IMAGES)}{alias}{eol}")
        for _ in range(rng.randint(0, 6)):
            roll = rng.random()
            if roll < 0.15:
                out.append(rng.choice(["", "   ", "# a comment", "\t# indented"]) + eol)
            elif roll < 0.55:
                cmds = rng.sample(COMMANDS, rng.randint(1, 3))
                joiners = [rng.choice([" && ", " || ", "; ", " | "]) for _ in cmds[1:]]
                body = cmds[0]
                for j, c in zip(joiners, cmds[1:]):
                    if rng.random() < 0.5:
                        body += f"{j.rstrip()} {escape}{eol}"
                        if rng.random() < 0.2:
                            body += f"    # inline note{eol}"
                        body += f"    {c}"
                    else:
                        body += j + c
                indent = rng.choice(["", "", "  "])
                out.append(f"{indent}RUN {body}{eol}")
            else:
                kw, args = rng.choice(SIMPLE)
                out.append(f"{kw} {args}{eol}")
    text = "".join(out)
    if rng.random() < 0.1:
        text = text.rstrip("\r\n")
    return text
