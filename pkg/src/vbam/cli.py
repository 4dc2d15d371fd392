"""Batch experiment runner.

Subcommands:

``run``         execute one experiment preset (or a custom target) and write
                chain.csv, diagnostics.csv, density.csv (strip only) and
                manifest.json into the run directory.
``check-model`` evaluate the observability/controllability Gramians of the
                configured state-space model and print the verdict.
``compare``     join the diagnostics (and density tables) of two finished
                runs by step into side-by-side CSVs.

Configuration is a flat key=value file plus ``--set key=value`` overrides;
unknown keys are rejected.  The output root comes from ``--out`` or the
``VBAM_OUTPUT_ROOT`` environment variable (default ``./runs``).

Exit codes: 0 success, 2 configuration error, 3 runtime numerical error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import use_numba
from .diagnostics import Histogram1D, density_difference, suboptimality_factor
from .gaussian import NotPositiveDefinite, SpdMatrix
from .kalman import StateSpaceModel, check_uniform_conditions
from .mcmc import AdaptationConfig, CallbackSink, ChainInit, run_chain
from .targets import (
    CHEMICAL_NOISE_STD,
    CHEMICAL_REPORTED_RATES,
    MONOD_NOISE_STD,
    MONOD_REPORTED_PARAMS,
    NonFiniteTrajectory,
    chemical_posterior,
    default_chemical_dataset,
    default_monod_dataset,
    gaussian_mmt_target,
    gaussian_target,
    load_dataset_csv,
    monod_posterior,
    banana_target,
    strip_target,
    strip_x1_marginal,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

EXPERIMENTS = ("strip", "gauss", "banana", "chemical", "monod", "custom")
SCHEME_ALIASES = {
    "am": "am_haario",
    "rr": "am_rr",
    "vbam": "vbam",
    "none": "none",
    "am_haario": "am_haario",
    "am_rr": "am_rr",
}


class ConfigError(Exception):
    """Invalid configuration; maps to exit code 2."""


@dataclass
class ExperimentConfig:
    """Flat, fully explicit run configuration (one key per line in a file)."""

    experiment: str = "strip"
    scheme: str = "vbam"
    steps: int = 0  # 0 means: use the experiment preset
    seed: int = 0
    dim: int = 0  # 0 means: preset dimension
    out: str = ""
    chains: int = 1
    backend: str = "auto"
    chunk: int = 10_000
    diag_stride: int = 0  # 0 means: auto (~2000 rows per run)
    bins: int = 72
    # adaptation
    epsilon: float = 1e-4
    beta: float = 0.05
    mu1: float = 1e-12
    mu2: float = 1e12
    delta_lambda: float = 1e-6
    alpha_bar: float = 0.234
    gain_k0: float = 1000.0
    gain_tau: float = 0.99
    rm_enabled: int = -1  # -1 preset default, else 0/1
    proposal: str = "gaussian"
    student_dof: float = 4.0
    fp_iters: int = 5
    fp_tol: float = 1e-10
    # initialization (empty string means preset/default)
    lambda0: float = 0.0
    nu0: float = 0.0
    theta0: str = ""
    sigma0_diag: str = ""
    m0: str = ""
    p0_diag: str = ""
    # state-space model (random walk with scaled A/H available)
    process_noise: float = -1.0  # -1 means preset
    a_scale: float = 1.0
    h_scale: float = 1.0
    # target specifics
    bananicity: float = 0.1
    data_path: str = ""
    noise_std: float = 0.0  # 0 means model default
    window_length: int = 1  # check-model window


_PRESETS = {
    # (steps, dim, process_noise, rm_default, lambda0 or 0 for 2.38^2/d)
    "strip": dict(steps=1_000_000, dim=2, process_noise=0.001**2, rm=0, nu0=4.0),
    "gauss": dict(steps=200_000, dim=100, process_noise=1e-9, rm=1, lambda0=2.38**2 / 2),
    "banana": dict(steps=1_000_000, dim=20, process_noise=1e-9, rm=0),
    "chemical": dict(steps=100_000, dim=3, process_noise=1e-9, rm=0),
    "monod": dict(steps=100_000, dim=2, process_noise=1e-9, rm=0),
    "custom": dict(steps=10_000, dim=2, process_noise=1e-9, rm=0),
}

_CONFIG_FIELDS = {f.name: f.type for f in fields(ExperimentConfig)}


def parse_config_file(path) -> dict:
    """Flat key=value lines; '#' starts a comment; blank lines ignored."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def build_config(overrides: dict) -> ExperimentConfig:
    """Validate raw string overrides and coerce them onto the dataclass."""
    cfg = ExperimentConfig()
    for key, raw in overrides.items():
        if key not in _CONFIG_FIELDS:
            raise ConfigError(f"unknown configuration key {key!r}")
        current = getattr(cfg, key)
        try:
            if isinstance(current, bool):
                value = raw in ("1", "true", "yes")
            elif isinstance(current, int):
                value = int(raw)
            elif isinstance(current, float):
                value = float(raw)
            else:
                value = str(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
        setattr(cfg, key, value)
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}; expected {EXPERIMENTS}")
    if cfg.scheme not in SCHEME_ALIASES:
        raise ConfigError(f"unknown scheme {cfg.scheme!r}")
    cfg.scheme = SCHEME_ALIASES[cfg.scheme]
    if cfg.chains < 1:
        raise ConfigError("chains must be >= 1")
    if cfg.backend not in ("auto", "numba", "numpy"):
        raise ConfigError("backend must be auto, numba or numpy")
    preset = _PRESETS[cfg.experiment]
    if cfg.steps <= 0:
        cfg.steps = preset["steps"]
    if cfg.dim <= 0:
        cfg.dim = preset["dim"]
    if cfg.process_noise < 0:
        cfg.process_noise = preset["process_noise"]
    if cfg.rm_enabled < 0:
        cfg.rm_enabled = preset["rm"]
    if cfg.nu0 <= 0 and "nu0" in preset:
        cfg.nu0 = preset["nu0"]
    if cfg.lambda0 <= 0 and "lambda0" in preset:
        cfg.lambda0 = preset["lambda0"]
    return cfg


def _parse_vector(text: str, dim: int, name: str) -> np.ndarray | None:
    if not text:
        return None
    parts = [p for p in text.replace(",", " ").split() if p]
    try:
        values = np.array([float(p) for p in parts])
    except ValueError as exc:
        raise ConfigError(f"bad {name}: {text!r}") from exc
    if values.shape != (dim,):
        raise ConfigError(f"{name} needs {dim} entries, got {values.shape[0]}")
    return values


def config_hash(cfg: ExperimentConfig) -> str:
    canonical = json.dumps(asdict(cfg), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()


def _build_target(cfg: ExperimentConfig, target_seed: np.random.SeedSequence):
    """Target plus per-experiment initialization tweaks."""
    init = ChainInit()
    if cfg.experiment == "strip":
        target = strip_target()
    elif cfg.experiment == "gauss":
        target = gaussian_mmt_target(np.random.default_rng(target_seed), cfg.dim)
    elif cfg.experiment == "banana":
        target = banana_target(cfg.dim, cfg.bananicity)
        theta0 = np.zeros(cfg.dim)
        theta0[1] = 100.0 * cfg.bananicity  # on the ridge
        init.theta0 = theta0
    elif cfg.experiment == "chemical":
        if cfg.dim != 3:
            raise ConfigError("the chemical posterior is 3-dimensional")
        noise = cfg.noise_std if cfg.noise_std > 0 else CHEMICAL_NOISE_STD
        if cfg.data_path:
            dataset = load_dataset_csv(cfg.data_path, noise)
        else:
            dataset = default_chemical_dataset()
        target = chemical_posterior(dataset)
        init.theta0 = np.array(CHEMICAL_REPORTED_RATES)
        init.sigma0 = SpdMatrix.diagonal([0.25, 1e-2, 1e-3])
    elif cfg.experiment == "monod":
        if cfg.dim != 2:
            raise ConfigError("the growth-rate posterior is 2-dimensional")
        noise = cfg.noise_std if cfg.noise_std > 0 else MONOD_NOISE_STD
        if cfg.data_path:
            dataset = load_dataset_csv(cfg.data_path, noise)
        else:
            dataset = default_monod_dataset()
        target = monod_posterior(dataset)
        init.theta0 = np.array(MONOD_REPORTED_PARAMS)
        init.sigma0 = SpdMatrix.diagonal([1e-4, 25.0])
    elif cfg.experiment == "custom":
        # Custom runs sample a unit Gaussian unless the caller supplies a
        # target programmatically through run_experiment(target=...).
        target = gaussian_target(np.eye(cfg.dim))
    else:  # pragma: no cover
        raise ConfigError(f"unhandled experiment {cfg.experiment}")

    theta0 = _parse_vector(cfg.theta0, cfg.dim, "theta0")
    if theta0 is not None:
        init.theta0 = theta0
    sigma0 = _parse_vector(cfg.sigma0_diag, cfg.dim, "sigma0_diag")
    if sigma0 is not None:
        init.sigma0 = SpdMatrix.diagonal(sigma0)
    m0 = _parse_vector(cfg.m0, cfg.dim, "m0")
    if m0 is not None:
        init.m0 = m0
    p0 = _parse_vector(cfg.p0_diag, cfg.dim, "p0_diag")
    if p0 is not None:
        init.p0 = SpdMatrix.diagonal(p0)
    if cfg.lambda0 > 0:
        init.lambda0 = cfg.lambda0
    if cfg.nu0 > 0:
        init.nu0 = cfg.nu0
    return target, init


def _build_model(cfg: ExperimentConfig) -> StateSpaceModel:
    d = cfg.dim
    return StateSpaceModel(
        cfg.a_scale * np.eye(d), cfg.process_noise * np.eye(d), cfg.h_scale * np.eye(d)
    )


def _adaptation_config(cfg: ExperimentConfig) -> AdaptationConfig:
    return AdaptationConfig(
        scheme=cfg.scheme,
        epsilon=cfg.epsilon,
        beta=cfg.beta,
        mu1=cfg.mu1,
        mu2=cfg.mu2,
        delta_lambda=cfg.delta_lambda,
        alpha_bar=cfg.alpha_bar,
        gain_k0=cfg.gain_k0,
        gain_tau=cfg.gain_tau,
        rm_enabled=bool(cfg.rm_enabled),
        proposal_family=cfg.proposal,
        student_dof=cfg.student_dof,
        fp_iters=cfg.fp_iters,
        fp_tol=cfg.fp_tol,
    )


def _output_dir(cfg: ExperimentConfig) -> Path:
    if cfg.out:
        return Path(cfg.out)
    root = Path(os.environ.get("VBAM_OUTPUT_ROOT", "runs"))
    return root / f"{cfg.experiment}_{cfg.scheme}_s{cfg.seed}"


def _fmt(x: float) -> str:
    return repr(float(x))


class RunWriter:
    """Streams chain and diagnostics CSVs for one chain."""

    def __init__(self, run_dir: Path, dim: int, suffix: str, diag_stride: int,
                 target_cov: np.ndarray | None, window: int = 10_000):
        self.chain_path = run_dir / f"chain{suffix}.csv"
        self.diag_path = run_dir / f"diagnostics{suffix}.csv"
        self._chain_fh = open(self.chain_path, "w")
        self._chain_fh.write(
            "step," + ",".join(f"theta_{i + 1}" for i in range(dim)) + ",accepted\n"
        )
        self._diag_fh = open(self.diag_path, "w")
        self._diag_fh.write("step,acceptance,lambda,sigma_trace,subopt\n")
        self.diag_stride = diag_stride
        self.target_cov = target_cov
        self.window = window
        self._recent = np.zeros(window, dtype=np.bool_)  # ring buffer
        self._seen = 0
        self._accepted_in_window = 0

    def emit(self, block) -> None:
        thetas, accepted = block.thetas, block.accepted
        n, d = thetas.shape
        rows = []
        steps = block.step0 + 1 + np.arange(n)
        snap_lookup = {}
        if block.snap_steps is not None:
            snap_lookup = {
                int(s): block.snap_sigmas[j] for j, s in enumerate(block.snap_steps)
            }
        for i in range(n):
            rows.append(
                f"{steps[i]},"
                + ",".join(_fmt(v) for v in thetas[i])
                + f",{int(accepted[i])}"
            )
            # trailing-window acceptance via the ring buffer
            slot = self._seen % self.window
            if self._seen >= self.window and self._recent[slot]:
                self._accepted_in_window -= 1
            self._recent[slot] = accepted[i]
            if accepted[i]:
                self._accepted_in_window += 1
            self._seen += 1
            step = int(steps[i])
            if self.diag_stride > 0 and step % self.diag_stride == 0:
                denom = min(self._seen, self.window)
                subopt = ""
                snap = snap_lookup.get(step)
                if snap is not None and self.target_cov is not None:
                    try:
                        subopt = _fmt(suboptimality_factor(snap, self.target_cov))
                    except NotPositiveDefinite:
                        subopt = ""
                self._diag_fh.write(
                    f"{step},{_fmt(self._accepted_in_window / denom)},"
                    f"{_fmt(block.lam[i])},{_fmt(block.sigma_trace[i])},{subopt}\n"
                )
        self._chain_fh.write("\n".join(rows) + "\n")

    def close(self) -> None:
        self._chain_fh.close()
        self._diag_fh.close()


def _write_manifest(run_dir: Path, cfg: ExperimentConfig, summaries, wall: float) -> None:
    manifest = {
        "config": asdict(cfg),
        "seed": cfg.seed,
        "config_hash": config_hash(cfg),
        "version": __version__,
        "backend": "numba" if use_numba(cfg.backend if cfg.backend != "auto" else None) else "numpy",
        "wall_time_s": wall,
        "chains": [
            {
                "acceptance_rate": s.acceptance_rate,
                "final_lambda": s.final_lambda,
                "band_violations": s.band_violations,
                "fp_residual_max": s.fp_residual_max,
                "chain_mean": [float(v) for v in s.chain_mean],
                "n_steps": s.n_steps,
            }
            for s in summaries
        ],
    }
    tmp = run_dir / "manifest.json.tmp"
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, run_dir / "manifest.json")


def run_experiment(cfg: ExperimentConfig, target=None, init=None) -> int:
    """Execute a configured experiment; returns a process exit code."""
    # Child 0 seeds the target construction (the random Gaussian factor),
    # children 1..chains seed the chains.
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.chains + 1)
    built_target, built_init = _build_target(cfg, children[0])
    if target is None:
        target = built_target
        init = built_init if init is None else init
    if target.dim != cfg.dim:
        raise ConfigError(f"target dim {target.dim} != configured dim {cfg.dim}")
    model = _build_model(cfg)
    adaptation = _adaptation_config(cfg)

    report = check_uniform_conditions(model, cfg.mu1, cfg.mu2, cfg.window_length)
    if not report.passed:
        print(
            "warning: the state-space model fails the uniform observability/"
            "controllability check; the boundedness guarantees do not apply",
            file=sys.stderr,
        )

    run_dir = _output_dir(cfg)
    run_dir.mkdir(parents=True, exist_ok=True)
    diag_stride = cfg.diag_stride if cfg.diag_stride > 0 else max(1, cfg.steps // 2000)
    snap_stride = diag_stride if target.covariance is not None else 0

    chain_seeds = children[1:]
    histogram = Histogram1D(nbins=cfg.bins) if cfg.experiment == "strip" else None

    def one_chain(index: int):
        suffix = "" if cfg.chains == 1 else f"_{index:02d}"
        writer = RunWriter(run_dir, cfg.dim, suffix, diag_stride, target.covariance)
        sinks = [writer]
        if histogram is not None and index == 0:
            sinks.append(CallbackSink(lambda b: histogram.update(b.thetas[:, 0])))

        class _Fan:
            def emit(self, block):
                for s in sinks:
                    s.emit(block)

        try:
            summary = run_chain(
                np.random.default_rng(chain_seeds[index]),
                cfg.scheme,
                target,
                cfg.steps,
                adaptation,
                sink=_Fan(),
                model=model,
                init=init,
                backend=None if cfg.backend == "auto" else cfg.backend,
                chunk_size=cfg.chunk,
                snap_stride=snap_stride,
            )
        finally:
            writer.close()
        return summary

    started = time.perf_counter()
    if cfg.chains == 1:
        summaries = [one_chain(0)]
    else:
        with ThreadPoolExecutor(max_workers=min(cfg.chains, os.cpu_count() or 1)) as pool:
            summaries = list(pool.map(one_chain, range(cfg.chains)))
    wall = time.perf_counter() - started

    if histogram is not None:
        table = density_difference(None, strip_x1_marginal, histogram=histogram)
        with open(run_dir / "density.csv", "w") as fh:
            fh.write("bin_center,empirical,true,difference\n")
            for c, e, t, diff in zip(
                table.centers, table.empirical, table.true, table.difference
            ):
                fh.write(f"{_fmt(c)},{_fmt(e)},{_fmt(t)},{_fmt(diff)}\n")

    _write_manifest(run_dir, cfg, summaries, wall)
    for i, s in enumerate(summaries):
        print(
            f"chain {i}: {s.n_steps} steps, acceptance {s.acceptance_rate:.4f}, "
            f"lambda {s.final_lambda:.4g}, backend {s.backend}"
        )
    print(f"wrote {run_dir}")
    return EXIT_OK


def run_check_model(cfg: ExperimentConfig) -> int:
    model = _build_model(cfg)
    report = check_uniform_conditions(
        model, cfg.mu1, cfg.mu2, cfg.window_length, beta_probe_count=4
    )
    print(report.describe())
    return EXIT_OK


def _read_csv_rows(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    header = lines[0].split(",")
    return header, [ln.split(",") for ln in lines[1:]]


def run_compare(dir_a: str, dir_b: str, out: str | None) -> int:
    a, b = Path(dir_a), Path(dir_b)
    try:
        with open(a / "manifest.json") as fh:
            man_a = json.load(fh)
        with open(b / "manifest.json") as fh:
            man_b = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"missing manifest: {exc}") from exc
    ca, cb = man_a["config"], man_b["config"]
    if ca["experiment"] != cb["experiment"] or ca["dim"] != cb["dim"]:
        raise ConfigError(
            f"incompatible runs: {ca['experiment']}/d={ca['dim']} vs "
            f"{cb['experiment']}/d={cb['dim']}"
        )

    header_a, rows_a = _read_csv_rows(a / "diagnostics.csv")
    _header_b, rows_b = _read_csv_rows(b / "diagnostics.csv")
    by_step_b = {r[0]: r for r in rows_b}
    out_lines = [
        "step,"
        + ",".join(f"{c}_a" for c in header_a[1:])
        + ","
        + ",".join(f"{c}_b" for c in header_a[1:])
    ]
    for row in rows_a:
        other = by_step_b.get(row[0])
        if other is None:
            continue
        out_lines.append(",".join([row[0]] + row[1:] + other[1:]))
    comparison = "\n".join(out_lines) + "\n"

    density = None
    if (a / "density.csv").exists() and (b / "density.csv").exists():
        header_d, rows_da = _read_csv_rows(a / "density.csv")
        _hd, rows_db = _read_csv_rows(b / "density.csv")
        by_bin = {r[0]: r for r in rows_db}
        lines = [
            "bin_center,"
            + ",".join(f"{c}_a" for c in header_d[1:])
            + ","
            + ",".join(f"{c}_b" for c in header_d[1:])
        ]
        for row in rows_da:
            other = by_bin.get(row[0])
            if other is None:
                continue
            lines.append(",".join([row[0]] + row[1:] + other[1:]))
        density = "\n".join(lines) + "\n"

    if out:
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "comparison.csv").write_text(comparison)
        if density is not None:
            (out_dir / "density_comparison.csv").write_text(density)
        print(f"wrote {out_dir}")
    else:
        sys.stdout.write(comparison)
        if density is not None:
            sys.stdout.write(density)
    return EXIT_OK


def _collect_overrides(args) -> dict:
    overrides = {}
    if getattr(args, "config", None):
        overrides.update(parse_config_file(args.config))
    for name in ("experiment", "scheme", "steps", "seed", "out", "chains", "backend"):
        value = getattr(args, name.replace("-", "_"), None)
        if value is not None:
            overrides[name] = str(value)
    for pair in getattr(args, "set", None) or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vbam", description="adaptive Metropolis benchmark runner"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one experiment")
    run_p.add_argument("--experiment", choices=EXPERIMENTS)
    run_p.add_argument("--scheme", choices=sorted(SCHEME_ALIASES))
    run_p.add_argument("--steps", type=int)
    run_p.add_argument("--seed", type=int)
    run_p.add_argument("--out")
    run_p.add_argument("--chains", type=int)
    run_p.add_argument("--backend", choices=("auto", "numba", "numpy"))
    run_p.add_argument("--config", help="flat key=value configuration file")
    run_p.add_argument("--set", action="append", metavar="KEY=VALUE")

    chk = sub.add_parser("check-model", help="Gramian conditions of the model")
    chk.add_argument("--experiment", choices=EXPERIMENTS)
    chk.add_argument("--config")
    chk.add_argument("--set", action="append", metavar="KEY=VALUE")

    cmp_p = sub.add_parser("compare", help="join diagnostics of two runs")
    cmp_p.add_argument("dir_a")
    cmp_p.add_argument("dir_b")
    cmp_p.add_argument("--out", help="directory for comparison CSVs (default stdout)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            cfg = build_config(_collect_overrides(args))
            return run_experiment(cfg)
        if args.command == "check-model":
            cfg = build_config(_collect_overrides(args))
            return run_check_model(cfg)
        if args.command == "compare":
            return run_compare(args.dir_a, args.dir_b, args.out)
        parser.error(f"unknown command {args.command}")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NotPositiveDefinite, NonFiniteTrajectory, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
