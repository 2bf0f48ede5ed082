"""Ensemble specification files (TOML).

A file holds a ``schema_version`` and one ``[ensemble]`` table whose ``kind``
selects a builder::

    schema_version = 1

    [ensemble]
    kind = "checkerboard"
    n = 100
    rate = 1.0

Kinds and their keys are those of :func:`combsum.ensemble.make_ensemble`.
Entry laws inside ``palette`` or ``rows`` are tables with a ``family`` of
``point`` (``c``), ``discrete`` (``values``, ``probs``), ``exp`` (``rate``,
``sign``) or ``gamma`` (``shape``, ``rate``, ``sign``). ``M`` may be given
in the ensemble table to override the canonical Bernstein scale.

Serialization always writes the canonical ``k_sequence`` form: the palette in
first-appearance order, the index grid, and ``M``.
"""

from __future__ import annotations

import sys
from pathlib import Path

import tomli_w

from .ensemble import MatrixEnsemble, make_ensemble

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1


class SpecError(ValueError):
    """A spec file that is unreadable, malformed or describes no valid ensemble."""


def parse_spec(text: str) -> dict:
    """Validated ``[ensemble]`` table of a spec document."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise SpecError(f"invalid TOML: {exc}") from None
    version = doc.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise SpecError(f"unsupported schema_version {version!r}; expected {SCHEMA_VERSION}")
    table = doc.pop("ensemble", None)
    if not isinstance(table, dict):
        raise SpecError("missing [ensemble] table")
    if doc:
        raise SpecError(f"unknown top-level keys: {sorted(doc)}")
    return table


def read_spec(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise SpecError(f"cannot read spec file {path}: {exc.strerror}") from None
    return parse_spec(text)


def ensemble_from_table(table: dict, n: int | None = None) -> MatrixEnsemble:
    """Build the ensemble; ``n`` overrides the size of size-indexed kinds."""
    table = dict(table)
    if n is not None:
        if "n" not in table:
            raise SpecError(f"ensemble kind {table.get('kind')!r} has no size parameter n")
        table["n"] = n
    try:
        return make_ensemble(table)
    except (ValueError, TypeError) as exc:
        raise SpecError(str(exc)) from None


def load_ensemble(path) -> MatrixEnsemble:
    return ensemble_from_table(read_spec(path))


def ensemble_to_table(e: MatrixEnsemble) -> dict:
    return {
        "kind": "k_sequence",
        "palette": [d.to_dict() for d in e.palette],
        "pattern": e.index.tolist(),
        "M": float(e.M),
    }


def dumps(e: MatrixEnsemble) -> str:
    return tomli_w.dumps({"schema_version": SCHEMA_VERSION, "ensemble": ensemble_to_table(e)})


def loads(text: str) -> MatrixEnsemble:
    return ensemble_from_table(parse_spec(text))
