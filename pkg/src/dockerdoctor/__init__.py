"""Detect, fix and study Dockerfile smells."""

from .dockerfile import parse_dockerfile, print_dockerfile
from .rules import RuleId, lint

__all__ = ["RuleId", "lint", "parse_dockerfile", "print_dockerfile"]
__version__ = "0.1.0"
