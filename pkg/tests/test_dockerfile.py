import random

import pytest
from hypothesis import given, settings, strategies as st

from conftest import CORPUS_FILES, corpus_ids
from dockerfile_gen import random_dockerfile
from dockerdoctor.dockerfile import (
    EmptyImageName,
    Instruction,
    Keyword,
    NotUtf8,
    Trivia,
    decode_source,
    fold_continuations,
    image_token_span,
    parse_dockerfile,
    parse_image_ref,
    print_dockerfile,
)


def test_empty_input():
    ast = parse_dockerfile("")
    assert ast.instructions == []
    assert print_dockerfile(ast) == ""


def test_two_instructions_same_stage():
    ast = parse_dockerfile("FROM ubuntu\nRUN apt-get update")
    assert [i.keyword for i in ast.instructions] == [Keyword.FROM, Keyword.RUN]
    assert [i.stage_index for i in ast.instructions] == [0, 0]


def test_stage_counting_and_alias():
    ast = parse_dockerfile("FROM a AS base\nFROM b\n")
    first, second = ast.instructions
    assert first.stage_index == 0 and second.stage_index == 1
    assert parse_image_ref(first.args).alias == "base"


@pytest.mark.parametrize("path", CORPUS_FILES, ids=corpus_ids())
def test_corpus_round_trip(path):
    text = decode_source(path.read_bytes())
    assert print_dockerfile(parse_dockerfile(text)) == text


def test_edit_tagless_reference():
    ast = parse_dockerfile("FROM ubuntu\n")
    ins = ast.instructions[0]
    start, end = image_token_span(ins.raw_args)
    edited = ast.replace_instruction(ins, ins.with_args(ins.raw_args[:start] + "ubuntu:20.04" + ins.raw_args[end:]))
    assert print_dockerfile(edited) == "FROM ubuntu:20.04\n"


@pytest.mark.parametrize("raw, name, tag, digest, alias", [
    ("ubuntu", "ubuntu", None, None, None),
    ("ubuntu:20.04 AS builder", "ubuntu", "20.04", None, "builder"),
    ("img@sha256:abc", "img", None, "sha256:abc", None),
    ("--platform=linux/amd64 registry:5000/team/app:1.2 as x", "registry:5000/team/app", "1.2", None, "x"),
])
def test_image_ref(raw, name, tag, digest, alias):
    ref = parse_image_ref(raw)
    assert (ref.name, ref.tag, ref.digest, ref.alias) == (name, tag, digest, alias)


def test_empty_image_name():
    with pytest.raises(EmptyImageName):
        parse_image_ref("   ")


def test_escape_directive_switches_continuation():
    text = "# escape=`\nFROM windows\nRUN dir `\n    C:\\\n"
    ast = parse_dockerfile(text)
    assert ast.escape == "`"
    run = ast.instructions[1]
    assert run.lines == range(3, 5)
    assert print_dockerfile(ast) == text


def test_comment_inside_continuation_is_part_of_instruction():
    text = "RUN a && \\\n# note\n    b\n"
    ins = parse_dockerfile(text).instructions[0]
    assert ins.lines == range(1, 4)
    assert fold_continuations(ins.raw_args).split() == ["a", "&&", "b"]


def test_malformed_line_collected_not_raised():
    ast = parse_dockerfile("FROM ubuntu\n=== junk\nRUN true\n")
    assert len(ast.errors) == 1
    assert ast.errors[0].line == 2
    assert [i.keyword for i in ast.instructions] == [Keyword.FROM, Keyword.OTHER, Keyword.RUN]


def test_non_utf8_rejected():
    with pytest.raises(NotUtf8):
        decode_source(b"FROM \xff\n")


def test_span_coverage():
    text = "# c\nFROM a\n\nRUN x \\\n  y\n"
    ast = parse_dockerfile(text)
    pieces = [n.text for n in ast.nodes]
    assert "".join(pieces) == text
    assert all(isinstance(n, (Instruction, Trivia)) for n in ast.nodes)


@given(st.text())
@settings(max_examples=300)
def test_round_trip_arbitrary_text(text):
    assert print_dockerfile(parse_dockerfile(text)) == text


@given(st.randoms(use_true_random=False))
@settings(max_examples=200)
def test_round_trip_generated_files(rng):
    text = random_dockerfile(rng)
    assert print_dockerfile(parse_dockerfile(text)) == text


def test_stage_index_equals_from_count():
    rng = random.Random(7)
    for _ in range(200):
        ast = parse_dockerfile(random_dockerfile(rng))
        froms = 0
        for ins in ast.instructions:
            froms += ins.keyword is Keyword.FROM
            assert ins.stage_index == froms - 1
