"""Parametric geometries and shipped scenario presets."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .truss import Bar, Node, TrussModel

PRESETS = ("three-bar-gauss", "three-bar-weibull", "space-frame")


def data_dir() -> Path:
    return Path(str(resources.files("ddinfer") / "data"))


def preset_path(name: str) -> Path:
    """Config file of a named preset."""
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return data_dir() / f"{name}.yaml"


def space_frame(storeys: int = 3, side: float = 1.0, height: float = 1.0, apex_rise: float = 0.5,
                area: float = 0.1, load: float = 5.0, material: str = "gauss") -> TrussModel:
    """Triangular lattice tower with an apex joint.

    Each storey is a triangular prism with verticals, a top ring and crossed
    diagonals on its three faces (12 bars); three bars join the top ring to
    the apex.  The base ring is fixed.  Longitudinal forces ``-load`` act on
    the top ring joints and the apex.  The three-fold symmetry makes the
    elastic in-plane apex displacement vanish.
    """
    if storeys < 1:
        raise ValueError("need at least one storey")
    r = side / np.sqrt(3.0)
    ang = np.pi / 2 + 2 * np.pi * np.arange(3) / 3
    ring = np.column_stack([r * np.cos(ang), r * np.sin(ang)])
    nodes, bars = [], []

    def nid(level, k):
        return 3 * level + k + 1

    for level in range(storeys + 1):
        for k in range(3):
            top = level == storeys
            nodes.append(Node(nid(level, k), np.array([*ring[k], level * height]),
                              np.full(3, level == 0), np.array([0.0, 0.0, -load if top else 0.0]),
                              np.zeros(3)))
    apex = 3 * (storeys + 1) + 1
    nodes.append(Node(apex, np.array([0.0, 0.0, storeys * height + apex_rise]), np.zeros(3, bool),
                      np.array([0.0, 0.0, -load]), np.zeros(3)))

    def add(a, b):
        bars.append(Bar(len(bars) + 1, a, b, area, material))

    for level in range(1, storeys + 1):
        for k in range(3):
            j = (k + 1) % 3
            add(nid(level - 1, k), nid(level, k))       # vertical
            add(nid(level, k), nid(level, j))           # ring
            add(nid(level - 1, k), nid(level, j))       # face diagonals
            add(nid(level - 1, j), nid(level, k))
    for k in range(3):
        add(nid(storeys, k), apex)
    return TrussModel(3, nodes, bars)
