"""Bundled example scenarios."""

from __future__ import annotations

from importlib import resources

from .scenario import Scenario, scenario_from_dict

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


def list_cases() -> list[str]:
    """Names of the bundled scenarios."""
    root = resources.files("gasgrid") / "data"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def case_path(name: str):
    """Traversable path of the bundled scenario ``name``."""
    p = resources.files("gasgrid") / "data" / f"{name}.toml"
    if not p.is_file():
        raise KeyError(f"no bundled case {name!r}; available: {list_cases()}")
    return p


def load_case(name: str) -> Scenario:
    """Parse and validate the bundled scenario ``name``."""
    return scenario_from_dict(tomllib.loads(case_path(name).read_text()))
