"""Bundled example workloads."""
from __future__ import annotations

import json
from importlib import resources

from ..plan import Plan, parse_plan
from ..profile import ProfileStats, profile_from_dict


def _doc(name: str) -> dict:
    return json.loads(resources.files(__name__).joinpath(name).read_text())


def reviews_plan() -> Plan:
    """Customer-reviews pipeline: 12 operators, 7 stages."""
    return parse_plan(_doc("reviews_plan.json"))


def reviews_profile() -> ProfileStats:
    return profile_from_dict(_doc("reviews_profile.json"))


def review_attrs_plan() -> Plan:
    """Keyed review values where one carried attribute is never used downstream."""
    return parse_plan(_doc("review_attrs_plan.json"))


def path(name: str):
    """Filesystem path of a bundled JSON file (for CLI examples)."""
    return resources.files(__name__).joinpath(name)
