"""Run configuration: YAML schema, validation and object construction.

Schema (all sections optional except ``geometry``, ``materials`` and ``qoi``)::

    geometry: three_bar.yaml        # relative to the config file or the shipped data
    load_factor: 1.0                # scales nodal loads
    disp_factor: 1.0                # scales prescribed displacements
    materials:
      gauss:
        modulus: 1.0e4
        data: gauss.txt             # existing data file, or
        generator: {type: sliding_gaussian, s: 5.0e-4, strain_range: [0, 0.0176], M: 100000}
        beta: null                  # override of the estimated target inverse temperature
    annealing: {n_target: 10000, n_trials: 20, s0: 1.0, r_target: 0.25,
                n_init: null, init_mode: projection, n_init_solutions: null, basis: pca,
                refresh_energies: true}
    schedule: {n_quenches: 100}
    search: {tol: 1.0e-16, n_checks: -1, use_tree: true,
             branching: 16, leaf_size: 32, kmeans_iters: 10}
    qoi: {type: displacement, node: 4, component: 1, name: delta}
    oracle: {type: gaussian, s: 5.0e-4, likelihood_weights: unit, n_samples: 1000000}
    histogram: {bins: 60}           # or {width: 5.0}
    study: {parameter: M, values: [1000, 10000, 100000], repeats: 10}
    seed: 0
    out: results
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import material_data as md
from .ann_index import DEFAULT_TOL, UNLIMITED, TreeParams
from .annealing import PAParams
from .scenarios import data_dir, preset_path

GENERATORS = ("sliding_gaussian", "weibull")
STUDY_PARAMETERS = ("M", "n_target", "n_checks", "disp_factor", "load_factor", "n_quenches")

# named substreams derived from the run seed
STREAM_DATA = 100
STREAM_TREE = 101
STREAM_ORACLE = 102
STREAM_REPEAT = 200


class ConfigError(ValueError):
    pass


@dataclass
class MaterialSpec:
    modulus: float
    data: Path | None = None
    generator: dict | None = None
    beta: float | None = None


@dataclass
class RunConfig:
    geometry: Path
    materials: dict[str, MaterialSpec]
    qoi: dict
    load_factor: float = 1.0
    disp_factor: float = 1.0
    annealing: PAParams = field(default_factory=PAParams)
    n_quenches: int = 100
    beta_final: dict[str, float] | None = None
    tol: float = DEFAULT_TOL
    n_checks: int = UNLIMITED
    use_tree: bool = True
    tree: TreeParams = field(default_factory=TreeParams)
    oracle: dict | None = None
    histogram: dict = field(default_factory=lambda: {"bins": 60})
    study: dict | None = None
    seed: int = 0
    out: Path = Path("results")
    source: Path | None = None

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def with_seed(self, seed: int) -> "RunConfig":
        return self.replace(seed=int(seed), annealing=dataclasses.replace(self.annealing, seed=int(seed)))

    def with_data_size(self, M: int) -> "RunConfig":
        mats = {}
        for k, spec in self.materials.items():
            if spec.generator is None:
                raise ConfigError(f"material {k!r} reads a data file; its size cannot be swept")
            mats[k] = dataclasses.replace(spec, data=None, generator={**spec.generator, "M": int(M)})
        return self.replace(materials=mats)

    def with_parameter(self, name: str, value) -> "RunConfig":
        if name == "M":
            return self.with_data_size(int(value))
        if name == "n_target":
            return self.replace(annealing=dataclasses.replace(self.annealing, n_target=int(value)))
        if name == "n_checks":
            return self.replace(n_checks=int(value))
        if name == "n_quenches":
            return self.replace(n_quenches=int(value))
        if name in ("disp_factor", "load_factor"):
            return self.replace(**{name: float(value)})
        raise ConfigError(f"cannot sweep {name!r}; choose from {', '.join(STUDY_PARAMETERS)}")


def _resolve(path, base: Path | None) -> Path:
    p = Path(path)
    if p.is_absolute():
        return p
    for root in ([base] if base else []) + [Path.cwd(), data_dir()]:
        if (root / p).exists():
            return root / p
    return (base or Path.cwd()) / p


def _check_generator(name: str, gen: dict) -> dict:
    gen = dict(gen)
    kind = gen.get("type")
    if kind not in GENERATORS:
        raise ConfigError(f"material {name!r}: generator type must be one of {GENERATORS}")
    need = {"sliding_gaussian": ("s", "strain_range", "M"),
            "weibull": ("sigma0", "p", "noise_s", "strain_range", "M")}[kind]
    missing = [k for k in need if k not in gen]
    if missing:
        raise ConfigError(f"material {name!r}: generator misses {missing}")
    gen["M"] = int(float(gen["M"]))
    if gen["M"] < 1:
        raise ConfigError(f"material {name!r}: M must be at least 1")
    return gen


def config_from_dict(raw: dict, base: Path | None = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(raw) - {"geometry", "materials", "qoi", "load_factor", "disp_factor", "annealing",
                          "schedule", "search", "oracle", "histogram", "study", "seed", "out", "name"}
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    for key in ("geometry", "materials", "qoi"):
        if key not in raw:
            raise ConfigError(f"config misses {key!r}")
    geometry = _resolve(raw["geometry"], base)
    if not geometry.exists():
        raise ConfigError(f"geometry file {geometry} not found")
    mats = {}
    for name, spec in raw["materials"].items():
        if "modulus" not in spec:
            raise ConfigError(f"material {name!r} needs a modulus")
        data = spec.get("data")
        gen = spec.get("generator")
        if data is not None:
            data = _resolve(data, base)
            if not data.exists() and gen is None:
                raise ConfigError(f"material {name!r}: data file {data} not found")
        elif gen is None:
            raise ConfigError(f"material {name!r} needs a data file or a generator")
        mats[name] = MaterialSpec(float(spec["modulus"]), data,
                                  _check_generator(name, gen) if gen else None,
                                  None if spec.get("beta") is None else float(spec["beta"]))
    ann = dict(raw.get("annealing") or {})
    try:
        for k in ("n_target", "n_trials", "n_init", "n_init_solutions"):
            if ann.get(k) is not None:
                ann[k] = int(float(ann[k]))
        seed = int(raw.get("seed", 0))
        params = PAParams(**{**ann, "seed": seed})
    except TypeError as exc:
        raise ConfigError(f"annealing: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"annealing: {exc}") from None
    sched = raw.get("schedule") or {}
    search = dict(raw.get("search") or {})
    tree = TreeParams(**{k: int(search.pop(k)) for k in ("branching", "leaf_size", "kmeans_iters") if k in search})
    cfg = RunConfig(
        geometry=geometry,
        materials=mats,
        qoi=dict(raw["qoi"]),
        load_factor=float(raw.get("load_factor", 1.0)),
        disp_factor=float(raw.get("disp_factor", 1.0)),
        annealing=params,
        n_quenches=int(sched.get("n_quenches", 100)),
        beta_final=sched.get("beta_final"),
        tol=float(search.get("tol", DEFAULT_TOL)),
        n_checks=int(search.get("n_checks", UNLIMITED)),
        use_tree=bool(search.get("use_tree", True)),
        tree=tree,
        oracle=raw.get("oracle"),
        histogram=dict(raw.get("histogram") or {"bins": 60}),
        study=raw.get("study"),
        seed=seed,
        out=Path(raw.get("out", "results")),
        source=base,
    )
    if cfg.n_quenches < 0:
        raise ConfigError("schedule.n_quenches must be non-negative")
    if not 0 < cfg.tol < 1:
        raise ConfigError("search.tol must lie in (0, 1)")
    return cfg


def load_config(path_or_preset) -> RunConfig:
    """Read a YAML config file, or a shipped preset by name."""
    p = Path(path_or_preset)
    if not p.exists():
        try:
            p = preset_path(str(path_or_preset))
        except KeyError:
            raise ConfigError(f"config {path_or_preset} not found") from None
    raw = yaml.safe_load(p.read_text())
    return config_from_dict(raw, p.parent.resolve())


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def derived_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence(entropy=seed, spawn_key=key).generate_state(1, np.uint32)[0])


def generate_data(name: str, spec: MaterialSpec, rng) -> md.LocalDataSet:
    gen = spec.generator
    if gen["type"] == "sliding_gaussian":
        return md.sample_sliding_gaussian(spec.modulus, float(gen["s"]), gen["strain_range"],
                                          gen["M"], rng, material=name)
    return md.sample_weibull_bimodal(spec.modulus, float(gen["sigma0"]), float(gen["p"]),
                                     float(gen["noise_s"]), gen["strain_range"], gen["M"], rng,
                                     material=name)


def material_data(cfg: RunConfig) -> dict[str, md.LocalDataSet]:
    """Data per material: read from file when present, generated otherwise."""
    out = {}
    for k, name in enumerate(sorted(cfg.materials)):
        spec = cfg.materials[name]
        if spec.data is not None and spec.data.exists():
            out[name] = md.load(spec.data)
        else:
            out[name] = generate_data(name, spec, stream(cfg.seed, STREAM_DATA, k))
    return out


def to_plain(obj: Any):
    """JSON/YAML-friendly view of config values."""
    if dataclasses.is_dataclass(obj):
        return {f.name: to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {k: to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
