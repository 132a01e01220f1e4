"""Shared fixtures: the hand-built medication tables, their lenses, and the
random (schema, source, edit-script) generator used by the round-trip suites."""

from __future__ import annotations

import random
from importlib import resources
from typing import Iterator

import pytest

from medsync.lenses import Lens, LensSpec, compile_lens, get as lens_get
from medsync.relational import Schema, Table

# --- the hand-built medication fixture ----------------------------------------

D3_SCHEMA = Schema(("a0", "a1", "a2", "a4", "a5"), ("a0", "a1"))

ROW1 = {"a0": "P1", "a1": "MedX", "a2": "clinNote1", "a4": "5mg", "a5": "MeA1"}
ROW2 = {"a0": "P2", "a1": "MedX", "a2": "clinNote2", "a4": "10mg", "a5": "MeA1"}
ROW3 = {"a0": "P1", "a1": "MedY", "a2": "clinNote3", "a4": "2mg", "a5": "MeA9"}

L31_SPEC = LensSpec("L31", "D3", ("a0", "a1", "a2", "a4"), ("a0", "a1"))
L32_SPEC = LensSpec("L32", "D3", ("a1", "a5"), ("a1",))


@pytest.fixture
def fixture_f() -> Table:
    """The three-row doctor table used throughout the unit suites."""
    return Table("D3", D3_SCHEMA, (ROW1, ROW2, ROW3))


@pytest.fixture
def fixture_f_two_rows() -> Table:
    return Table("D3", D3_SCHEMA, (ROW1, ROW2))


@pytest.fixture
def l31() -> Lens:
    return compile_lens(L31_SPEC, D3_SCHEMA)


@pytest.fixture
def l32() -> Lens:
    return compile_lens(L32_SPEC, D3_SCHEMA)


# --- bundled scenarios ---------------------------------------------------------

BUNDLED_SCENARIOS = (
    "update_flow",
    "cascade_delete",
    "permission_grant",
    "conflicting_updates",
    "stale_recovery",
)


def scenario_path(name: str) -> str:
    return str(resources.files("medsync") / "scenarios" / f"{name}.scenario.json")


# --- random lens cases -----------------------------------------------------------
#
# Sources are built so the view-key -> view-attrs dependency holds by
# construction: rows are grouped by a synthetic view-key tuple, the projected
# cells are fixed per group, and only attributes outside the view vary within
# a group. Fresh values come from a per-case counter, so inserts can never
# collide with existing keys.


def make_lens_case(rng: random.Random) -> tuple[Lens, Table]:
    n_attrs = rng.randint(3, 6)
    attrs = tuple(f"c{i}" for i in range(n_attrs))
    key = attrs[: rng.randint(1, 2)]
    schema = Schema(attrs, key)

    view_idx = sorted(rng.sample(range(n_attrs), rng.randint(1, n_attrs)))
    view_attrs = tuple(attrs[i] for i in view_idx)
    vk_idx = sorted(rng.sample(range(len(view_attrs)), rng.randint(1, len(view_attrs))))
    view_key = tuple(view_attrs[i] for i in vk_idx)
    lens = compile_lens(LensSpec("lens", "src", view_attrs, view_key), schema)

    fan_possible = bool(set(key) - set(view_attrs))
    rows = []
    for i in range(rng.randint(0, 4)):
        view_cells = {}
        for a in view_attrs:
            if a in view_key:
                view_cells[a] = f"k{i}.{a}"
            elif a not in key and rng.random() < 0.15:
                view_cells[a] = None
            else:
                view_cells[a] = f"v{i}.{a}"
        fan = rng.randint(1, 2) if fan_possible else 1
        for c in range(fan):
            row = {}
            for a in attrs:
                if a in view_attrs:
                    row[a] = view_cells[a]
                elif a in key:
                    row[a] = f"s{i}.{c}.{a}"
                elif rng.random() < 0.2:
                    row[a] = None
                else:
                    row[a] = f"x{i}.{c}.{a}"
            rows.append(row)
    return lens, Table("src", schema, tuple(rows))


def make_edited_view(
    rng: random.Random, lens: Lens, view: Table
) -> tuple[Table, set[str]]:
    """Apply a random edit script (cell updates, deletes, inserts when allowed)
    to a view; returns the edited view and the kinds of edits performed."""
    fresh = iter(range(10_000)).__next__
    new = view
    kinds: set[str] = set()
    non_key_attrs = [a for a in lens.spec.view_attrs if a not in lens.spec.view_key]
    for _ in range(rng.randint(0, 4)):
        roll = rng.random()
        if roll < 0.45 and new.rows and non_key_attrs:
            row = rng.choice(new.rows)
            attr = rng.choice(non_key_attrs)
            if attr not in lens.source_schema.key and rng.random() < 0.2:
                value = None
            else:
                value = f"e{fresh()}"
            new = new.update_row({k: row[k] for k in lens.spec.view_key}, {attr: value})
            kinds.add("update")
        elif roll < 0.7 and new.rows:
            row = rng.choice(new.rows)
            new = new.delete_row({k: row[k] for k in lens.spec.view_key})
            kinds.add("delete")
        elif lens.inserts_allowed:
            i = fresh()
            new = new.insert_row({a: f"n{i}.{a}" for a in lens.spec.view_attrs})
            kinds.add("insert")
    return new, kinds


def iter_law_cases(seed: int, count: int) -> Iterator[tuple[Lens, Table, Table, set[str]]]:
    """Yield `count` (lens, source, edited_view, edit_kinds) cases."""
    rng = random.Random(seed)
    for _ in range(count):
        lens, source = make_lens_case(rng)
        view = lens_get(lens, source)
        edited, kinds = make_edited_view(rng, lens, view)
        yield lens, source, edited, kinds
