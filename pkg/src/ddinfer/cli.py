"""Command-line interface: ``ddinfer {generate,run,oracle,study,ks}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("ddinfer")


# -- file formats -----------------------------------------------------------

def write_samples(path, values) -> None:
    np.savetxt(path, np.asarray(values, dtype=float), fmt="%.17g", header="qoi")


def read_samples(path) -> np.ndarray:
    return np.atleast_1d(np.loadtxt(path, ndmin=1))


def write_histogram(path, centers, freqs) -> None:
    np.savetxt(path, np.column_stack([centers, freqs]), fmt="%.17g", header="center frequency")


def read_histogram(path):
    table = np.loadtxt(path, ndmin=2)
    return table[:, 0], table[:, 1]


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def read_jsonl(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


# -- commands ---------------------------------------------------------------

def _histogram(cfg, values):
    from . import inference

    h = cfg.histogram
    if "width" in h:
        return inference.histogram(values, width=float(h["width"]))[:2]
    return inference.histogram(values, bins=int(h.get("bins", 60)))[:2]


def cmd_generate(cfg, args) -> int:
    from . import material_data as md
    from .config import material_data

    cfg.out.mkdir(parents=True, exist_ok=True)
    for name, data in material_data(cfg).items():
        data = data.with_beta(md.material_metric(cfg.materials[name].modulus, data.d))
        path = cfg.out / f"data_{name}.txt"
        md.save(data, path)
        print(f"{name}: M={data.M} beta_final={data.beta:.6g} -> {path}")
    return 0


def cmd_run(cfg, args) -> int:
    from dataclasses import asdict

    from . import pipeline

    setup = pipeline.build(cfg)
    res = pipeline.run(cfg, setup)
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    write_samples(out / "samples.txt", res.values)
    np.save(out / "states.npy", res.states)
    write_samples(out / "initial_samples.txt", res.initial_values)
    write_histogram(out / "histogram.txt", *_histogram(cfg, res.values))
    with open(out / "quench_log.jsonl", "w") as fh:
        for rec in res.history:
            fh.write(json.dumps(asdict(rec)) + "\n")
    summary = res.summary()
    summary["qoi"] = setup.qoi.name
    if cfg.oracle:
        ref = pipeline.reference(cfg, setup)
        summary["ks"] = ref.ks(res.values)
        summary["reference_mean"], summary["reference_std"] = ref.mean, ref.std
    write_json(out / "summary.json", summary)
    print(f"{setup.qoi.name}: mean={summary['mean']:.6g} std={summary['std']:.6g} "
          f"N={summary['n_samples']} runtime={summary['runtime_s']:.1f}s"
          + (f" e_KS={summary['ks']:.4f}" if summary.get("ks") is not None else ""))
    return 0


def cmd_oracle(cfg, args) -> int:
    from . import pipeline

    ref = pipeline.reference(cfg)
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    info = {"type": ref.kind, "mean": ref.mean, "std": ref.std}
    if ref.mixture:
        table = [{"failed": list(c.failed), "value": c.value, "weight": c.weight} for c in ref.mixture]
        info["components"] = table
        for c in table:
            print(f"failed={c['failed']} value={c['value']:.6g} weight={c['weight']:.4f}")
    else:
        lo, hi = ref.mean - 6 * ref.std, ref.mean + 6 * ref.std
        grid = np.linspace(lo, hi, 401)
        if ref.cdf is not None:
            F = ref.cdf(grid)
        else:
            s = np.sort(ref.samples)
            F = np.searchsorted(s, grid, side="right") / s.size
            write_samples(out / "oracle_samples.txt", ref.samples)
        np.savetxt(out / "oracle_cdf.txt", np.column_stack([grid, F]), fmt="%.17g", header="x cdf")
    write_json(out / "oracle.json", info)
    print(f"{ref.kind}: mean={ref.mean:.6g} std={ref.std:.6g}")
    return 0


def cmd_study(cfg, args) -> int:
    from . import pipeline

    values = [float(v) if "." in v or "e" in v.lower() else int(v) for v in args.values.split(",")] \
        if args.values else None

    def show(parameter, value, row):
        ks = row["ks"]
        print(f"{parameter}={value} repeat={row['repeat']} "
              + (f"e_KS={ks:.4f} " if ks is not None else "")
              + f"mean={row['mean']:.6g} std={row['std']:.6g} time={row['runtime_s']:.1f}s", flush=True)

    report = pipeline.study(cfg, args.parameter, values, args.repeats, callback=show)
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_json(cfg.out / "study.json", report)
    for c in report["cells"]:
        ks = "" if c["ks_mean"] is None else f" e_KS={c['ks_mean']:.4f} (maxdev {c['ks_maxdev']:.4f})"
        print(f"{report['parameter']}={c['value']}:{ks} mean={c['qoi_mean']:.6g} "
              f"std={c['qoi_std']:.6g} energy={c['energy_s']:.2f}s")
    if "slope" in report:
        print(f"slope={report['slope']:.3f}")
    return 0


def cmd_ks(cfg, args) -> int:
    from . import inference, pipeline

    samples = Path(args.samples) if args.samples else cfg.out / "samples.txt"
    values = read_samples(samples)
    if args.reference:
        ks = inference.ks_statistic(values, read_samples(args.reference))
    else:
        ks = pipeline.reference(cfg).ks(values)
        if ks is None:
            raise ValueError("the configured oracle has no CDF; pass --reference")
    print(f"e_KS={ks:.6f}")
    write_json(samples.parent / "ks.json", {"ks": ks, "samples": str(samples)})
    return 0


COMMANDS = {"generate": cmd_generate, "run": cmd_run, "oracle": cmd_oracle,
            "study": cmd_study, "ks": cmd_ks}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True,
                        help="YAML config file or preset name (three-bar-gauss, three-bar-weibull, space-frame)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--threads", type=int, help="worker threads for energy evaluation")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ddinfer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write material data files")
    sub.add_parser("run", parents=[common], help="population annealing run")
    sub.add_parser("oracle", parents=[common], help="reference distribution")
    p = sub.add_parser("study", parents=[common], help="parameter sweep with repeats")
    p.add_argument("--parameter", help="M, n_target, n_checks, n_quenches, disp_factor or load_factor")
    p.add_argument("--values", help="comma-separated sweep values")
    p.add_argument("--repeats", type=int)
    p = sub.add_parser("ks", parents=[common], help="KS error of a sample file")
    p.add_argument("--samples", help="sample file (default: <out>/samples.txt)")
    p.add_argument("--reference", help="second sample file instead of the configured oracle")
    return parser


def _set_threads(n: int | None) -> None:
    # must run before numba is first imported
    if n is None:
        return
    if n < 1:
        raise ValueError("--threads must be positive")
    cap = int(os.environ.get("NUMBA_NUM_THREADS", "0") or 0)
    if cap < n:
        os.environ["NUMBA_NUM_THREADS"] = str(max(n, os.cpu_count() or 1))
    import numba

    numba.set_num_threads(n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _set_threads(args.threads)
        from .config import load_config

        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.out is not None:
            cfg = cfg.replace(out=args.out)
        return COMMANDS[args.command](cfg, args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"ddinfer {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
