"""Command-line interface: ``mghs <command> [options]``.

Commands
--------
simulate   write a simulated scenario (per-group CSV files and ``truth.json``)
fit        run one or more chains on per-group CSV data
select     turn a fit into an edge list (MPM or cut model)
metrics    score a fit and its selected graphs against ``truth.json``
g3p-check  run the G3p sampler checks (KS grid, KL tables)
diagnose   PSRF and log-posterior traces across the chains of a fit
replay     re-run a recorded manifest and compare output digests

Every output directory receives ``manifest.json`` with the command, the
effective configuration, library versions, and SHA-256 digests of inputs
and outputs. Options can come from ``--config file.json`` (keys are the
long option names with ``_`` for ``-``); explicit flags win over the file,
which wins over the defaults.

Exit status: 0 success, 1 runtime failure, 2 usage error, 3 unknown
configuration key, 4 configuration type mismatch, 5 missing input.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import platform
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, g3p, metrics, sampler, selection, simulate

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_CONFIG_KEY = 3
EXIT_CONFIG_TYPE = 4
EXIT_MISSING_INPUT = 5


class CliError(Exception):
    """Error carrying an exit status."""

    def __init__(self, message: str, status: int):
        super().__init__(message)
        self.status = status


DEFAULTS: dict = {
    "seed": 0,
    "out_dir": "out",
    "threads": 1,
    # simulate
    "scenario": "coupled",
    "groups": 4,
    "p": 50,
    "n": 50,
    "block_size": 10,
    "edge_prob": simulate.CALIBRATED_EDGE_PROB,
    "perturb_frac": 0.25,
    # fit
    "data": [],
    "chains": 1,
    "burnin": 5000,
    "iters": 10000,
    "thin": 1,
    "freeze_r": False,
    "standardize": True,
    "store_draws": False,
    # selection
    "select_mode": "cut",
    "a": 30.0,
    "b": 25.0,
    "hastings": False,
    # select / metrics / diagnose
    "fit_dir": None,
    "truth": None,
    "adjacency": None,
    "method": "mGHS",
    "label": "",
    "replicate": 1,
    # g3p-check
    "draws": 100000,
}

_TYPES = {
    k: (bool if isinstance(v, bool) else int if isinstance(v, int) else float if isinstance(v, float)
        else list if isinstance(v, list) else str)
    for k, v in DEFAULTS.items()
}
_TYPES.update(fit_dir=str, truth=str, adjacency=str)

COMMAND_KEYS = {
    "simulate": ["seed", "out_dir", "scenario", "groups", "p", "n", "block_size", "edge_prob", "perturb_frac"],
    "fit": ["seed", "out_dir", "threads", "data", "chains", "burnin", "iters", "thin", "freeze_r",
            "standardize", "store_draws", "select_mode", "a", "b", "hastings"],
    "select": ["out_dir", "fit_dir", "select_mode"],
    "metrics": ["out_dir", "fit_dir", "truth", "adjacency", "select_mode", "method", "label", "replicate"],
    "g3p-check": ["seed", "out_dir", "draws"],
    "diagnose": ["out_dir", "fit_dir"],
}


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def _check_type(key: str, value):
    want = _TYPES[key]
    if value is None and DEFAULTS[key] is None:
        return value
    if want is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if want is list:
        if isinstance(value, str):
            return [value]
        if isinstance(value, list) and all(isinstance(v, str) for v in value):
            return value
    elif isinstance(value, want) and not (want is int and isinstance(value, bool)):
        return value
    raise CliError(f"config key {key!r}: expected {want.__name__}, got {type(value).__name__}", EXIT_CONFIG_TYPE)


def load_config_file(path) -> dict:
    """Read and type-check a JSON configuration file."""
    path = Path(path)
    if not path.is_file():
        raise CliError(f"config file not found: {path}", EXIT_MISSING_INPUT)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}", EXIT_CONFIG_TYPE)
    if not isinstance(raw, dict):
        raise CliError(f"{path}: top level must be an object", EXIT_CONFIG_TYPE)
    out = {}
    for key, value in raw.items():
        k = key.replace("-", "_")
        if k not in DEFAULTS:
            raise CliError(f"{path}: unknown config key {key!r}", EXIT_CONFIG_KEY)
        out[k] = _check_type(k, value)
    return out


def resolve_config(command: str, flags: dict, config_path=None) -> dict:
    """Merge ``flags > file > defaults`` and keep the keys ``command`` uses."""
    merged = dict(DEFAULTS)
    if config_path is not None:
        merged.update(load_config_file(config_path))
    merged.update({k: v for k, v in flags.items() if v is not None})
    cfg = {k: merged[k] for k in COMMAND_KEYS[command]}
    for k, v in cfg.items():
        cfg[k] = _check_type(k, v)
    return cfg


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions() -> dict:
    import numba
    import scipy

    return {"mghs": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def _output_digests(out_dir: Path) -> dict:
    return {
        str(p.relative_to(out_dir)): sha256_file(p)
        for p in sorted(out_dir.rglob("*"))
        if p.is_file() and p.name != "manifest.json"
    }


def write_manifest(out_dir: Path, command: str, cfg: dict, inputs, seconds: float, extra=None) -> Path:
    manifest = {
        "command": command,
        "config": cfg,
        "seed": cfg.get("seed"),
        "versions": _versions(),
        "inputs": {str(Path(p).resolve()): sha256_file(p) for p in inputs},
        "outputs": _output_digests(out_dir),
        "timing": {"seconds": seconds, **(extra or {})},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1))
    return path


# ---------------------------------------------------------------------------
# Inputs
# ---------------------------------------------------------------------------

def _data_files(spec: list) -> list[Path]:
    if not spec:
        raise CliError("fit needs --data (CSV files or a directory)", EXIT_MISSING_INPUT)
    files: list[Path] = []
    for entry in spec:
        p = Path(entry)
        if p.is_dir():
            found = sorted(p.glob("group_*.csv"), key=lambda q: int(q.stem.split("_")[-1])) or sorted(p.glob("*.csv"))
            if not found:
                raise CliError(f"no CSV files in {p}", EXIT_MISSING_INPUT)
            files.extend(found)
        elif p.is_file():
            files.append(p)
        else:
            raise CliError(f"input not found: {p}", EXIT_MISSING_INPUT)
    return files


def standardize_columns(y: np.ndarray, source: str = "") -> np.ndarray:
    """Zero mean and unit (sample) variance per column."""
    sd = y.std(axis=0, ddof=1) if y.shape[0] > 1 else np.zeros(y.shape[1])
    bad = np.flatnonzero(~(sd > 0))
    if bad.size:
        raise ValueError(f"{source}: column {bad[0] + 1} has zero variance; cannot standardize")
    return (y - y.mean(axis=0)) / sd


def load_groups(files, standardize: bool) -> sampler.GroupData:
    Ys = []
    for f in files:
        y = simulate.read_group_csv(f)
        Ys.append(standardize_columns(y, str(f)) if standardize else y)
    p = {y.shape[1] for y in Ys}
    if len(p) != 1:
        raise ValueError(f"groups have different column counts: {sorted(p)}")
    return sampler.GroupData.from_observations(Ys)


def _require_dir(path, what: str) -> Path:
    if path is None:
        raise CliError(f"missing --{what.replace('_', '-')}", EXIT_MISSING_INPUT)
    p = Path(path)
    if not p.is_dir():
        raise CliError(f"{what} not found: {p}", EXIT_MISSING_INPUT)
    return p


def _require_file(path, what: str) -> Path:
    if path is None:
        raise CliError(f"missing --{what.replace('_', '-')}", EXIT_MISSING_INPUT)
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{what} not found: {p}", EXIT_MISSING_INPUT)
    return p


def load_fit(fit_dir: Path) -> list[sampler.ChainTrace]:
    chains = sorted(fit_dir.glob("chain_*"), key=lambda q: int(q.name.split("_")[-1]))
    if not chains:
        raise CliError(f"no chain_* directories in {fit_dir}", EXIT_MISSING_INPUT)
    traces = []
    for c in chains:
        tr = sampler.trace_from_files(c / "summary.json", c / "trace.csv")
        if (c / "omega_draws.npy").exists():
            tr.omega_draws = np.load(c / "omega_draws.npy")
            tr.kappa_draws = np.load(c / "kappa_draws.npy")
        traces.append(tr)
    return traces


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: dict, out: Path) -> tuple[list, dict]:
    spec = simulate.ScenarioSpec(
        scenario=cfg["scenario"], K=cfg["groups"], p=cfg["p"], n=cfg["n"], block_size=cfg["block_size"],
        edge_prob=cfg["edge_prob"], perturb_frac=cfg["perturb_frac"], seed=cfg["seed"],
    )
    sim = simulate.generate_scenario(spec)
    simulate.write_scenario(out, sim)
    edges = (sim.adjacency.sum(axis=(1, 2)) // 2).tolist()
    print(f"simulated {spec.scenario.value}: K={spec.K} p={spec.p} n={spec.n}, edges per group {edges}")
    return [], {}


def _run_one(args):
    data, ccfg, scfg = args
    return sampler.run_chain(data, ccfg, selection_config=scfg)


def cmd_fit(cfg: dict, out: Path) -> tuple[list, dict]:
    files = _data_files(cfg["data"])
    data = load_groups(files, cfg["standardize"])
    mode = selection.SelectionMode(cfg["select_mode"])
    scfg = selection.SelectionConfig(a=cfg["a"], b=cfg["b"], mode=mode, hastings_correction=cfg["hastings"])
    jobs = []
    for c in range(cfg["chains"]):
        ccfg = sampler.ChainConfig(burnin=cfg["burnin"], iterations=cfg["iters"], thin=cfg["thin"],
                                   seed=cfg["seed"], chain_id=c, freeze_R_identity=cfg["freeze_r"],
                                   store_draws=cfg["store_draws"])
        jobs.append((data, ccfg, scfg if mode is selection.SelectionMode.Cut else None))
    if data.K == 1:
        print("single group: ordinary graphical horseshoe (R fixed at 1)")
    if cfg["threads"] > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg["threads"]) as pool:
            traces = list(pool.map(_run_one, jobs))
    else:
        traces = [_run_one(j) for j in jobs]
    for c, tr in enumerate(traces):
        d = out / f"chain_{c + 1}"
        d.mkdir(parents=True, exist_ok=True)
        sampler.write_trace_csv(d / "trace.csv", tr)
        sampler.write_summary_json(d / "summary.json", tr, include_timing=False)
        if cfg["store_draws"]:
            np.save(d / "omega_draws.npy", tr.omega_draws)
            np.save(d / "kappa_draws.npy", tr.kappa_draws)
        print(f"chain {c + 1}: {tr.seconds:.1f}s, R acceptance {tr.R_accept_rate:.3f}")
    return files, {"chain_seconds": [tr.seconds for tr in traces]}


def cmd_select(cfg: dict, out: Path) -> tuple[list, dict]:
    fit_dir = _require_dir(cfg["fit_dir"], "fit_dir")
    traces = load_fit(fit_dir)
    res = selection.select(traces, cfg["select_mode"])
    out.mkdir(parents=True, exist_ok=True)
    selection.write_adjacency_csv(out / "adjacency.csv", res)
    counts = [int(a.sum() // 2) for a in res.adjacency]
    print(f"{res.mode.value}: selected edges per group {counts}")
    return sorted(fit_dir.rglob("summary.json")), {}


def cmd_metrics(cfg: dict, out: Path) -> tuple[list, dict]:
    fit_dir = _require_dir(cfg["fit_dir"], "fit_dir")
    truth_path = _require_file(cfg["truth"], "truth")
    omega_true, adj_true = simulate.read_truth(truth_path)
    traces = load_fit(fit_dir)
    inputs = [truth_path] + sorted(fit_dir.rglob("summary.json"))
    if cfg["adjacency"] is not None:
        adj_path = _require_file(cfg["adjacency"], "adjacency")
        adj, _ = selection.read_adjacency_csv(adj_path)
        inputs.append(adj_path)
    else:
        adj = selection.select(traces, cfg["select_mode"]).adjacency
    kappa = np.mean([tr.kappa_mean for tr in traces], axis=0)
    omega_hat = np.mean([tr.omega_mean for tr in traces], axis=0)
    if adj.shape != adj_true.shape:
        raise ValueError(f"estimate shape {adj.shape} does not match truth {adj_true.shape}")
    pooled, per_group = metrics.confusion_metrics(adj, adj_true, per_group=True)
    row = {"method": cfg["method"], "scenario": cfg["label"], "replicate": cfg["replicate"], **pooled,
           "AUC": metrics.auc(kappa, adj_true), "Frobenius": metrics.frobenius_loss(omega_hat, omega_true)}
    out.mkdir(parents=True, exist_ok=True)
    metrics.append_metrics_csv(out / "metrics.csv", row)
    (out / "metrics_per_group.json").write_text(json.dumps(per_group, indent=1))
    print(" ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
    return inputs, {}


def _ks_against_cdf(params: g3p.G3pParams, x: np.ndarray, grid: int = 2000) -> float:
    """KS distance of draws to the quadrature CDF, interpolated on a fine grid."""
    mom = g3p.moments(params)
    s = math.sqrt(mom.sigma2)
    xs = np.linspace(max(mom.mu - 12 * s, 0.0), mom.mu + 12 * s, grid)
    F = np.maximum.accumulate(np.asarray(g3p.cdf(params, xs)))
    xs_sorted = np.sort(x)
    Fx = np.interp(xs_sorted, xs, F)
    n = xs_sorted.size
    return float(max(np.max(np.arange(1, n + 1) / n - Fx), np.max(Fx - np.arange(n) / n)))


G3P_GRID = dict(gamma=(1, 3, 10, 50), ratio=(-5.0, -1.0, 0.5, 3.0, 8.0), alpha=(0.5, 2.0))


def g3p_check(draws: int, seed: int) -> tuple[list, dict]:
    """KS grid and KL spot values; returns ``(lines, results)``."""
    rng = np.random.default_rng(seed)
    lines, res = [], {"ks": [], "kl": {}}
    worst, total_outer, total_inner, n_draws = 0.0, 0, 0, 0
    t0 = time.perf_counter()
    for gam in G3P_GRID["gamma"]:
        for r in G3P_GRID["ratio"]:
            for a in G3P_GRID["alpha"]:
                par = g3p.G3pParams(gam, a, r * a)
                st = g3p.SamplerStats()
                x = g3p.sample(par, rng, size=draws, stats=st)
                d = _ks_against_cdf(par, x)
                worst = max(worst, d)
                total_outer += st.outer_proposals
                total_inner += st.inner_proposals
                n_draws += draws
                res["ks"].append({"gamma": gam, "ratio": r, "alpha": a, "D": d})
    secs = time.perf_counter() - t0
    lines.append(("KS grid max D < 0.01", worst < 0.01, f"max D = {worst:.4f}, {secs:.1f}s"))
    per = (total_outer + total_inner) / n_draws
    lines.append(("proposals per draw <= 10", total_outer / n_draws <= 10 and per <= 10,
                  f"outer {total_outer / n_draws:.3f}, outer+inner {per:.3f}"))
    nb = g3p.KLReference.NormalBeta
    kl1 = g3p.kl_divergence(g3p.G3pParams(1, 1.0, 0.002), nb)
    kl2 = g3p.kl_divergence(g3p.G3pParams(100, 1.0, 8.0), nb)
    res["kl"]["beta_table"] = {"1,0.002": kl1._asdict(), "100,8": kl2._asdict()}
    lines.append(("KL(q||p) gamma=1 ratio=0.002 = 0.284 +- 0.01", abs(kl1.q_p - 0.284) <= 0.01, f"{kl1.q_p:.4f}"))
    lines.append(("KL(p||q) gamma=100 ratio=8 = 49.973 +- 0.5", abs(kl2.p_q - 49.973) <= 0.5, f"{kl2.p_q:.3f}"))
    ng = g3p.KLReference.NormalGamma
    vals = [max(g3p.kl_divergence(g3p.G3pParams(50, 1.0, r), ng)) for r in (0.002, 0.5, 1.0, 2.0, 5.0, 8.0)]
    lines.append(("KL gamma=50 all < 0.001", max(vals) < 1e-3, f"max {max(vals):.5f}"))
    res["kl"]["gamma50_max"] = max(vals)
    return lines, res


def cmd_g3p_check(cfg: dict, out: Path) -> tuple[list, dict]:
    lines, res = g3p_check(cfg["draws"], cfg["seed"])
    ok = True
    for name, passed, detail in lines:
        ok &= bool(passed)
        print(f"{'PASS' if passed else 'FAIL'}  {name}  ({detail})")
    out.mkdir(parents=True, exist_ok=True)
    res["passed"] = ok
    (out / "g3p_check.json").write_text(json.dumps(res, indent=1))
    if not ok:
        raise CliError("g3p-check: at least one check failed", EXIT_RUNTIME)
    return [], {}


def cmd_diagnose(cfg: dict, out: Path) -> tuple[list, dict]:
    fit_dir = _require_dir(cfg["fit_dir"], "fit_dir")
    traces = load_fit(fit_dir)
    if len(traces) < 2:
        raise ValueError("diagnose needs at least 2 chains")
    T = min(tr.logpost.size for tr in traces)
    lp = np.stack([tr.logpost[:T] for tr in traces])
    report = {"chains": len(traces), "draws": T, "psrf_logpost": sampler.psrf(lp),
              "psrf_tau2": np.atleast_1d(sampler.psrf(np.stack([tr.tau2_draws[:T] for tr in traces]))).tolist()}
    K = traces[0].K
    if K > 1:
        ia, ib = np.triu_indices(K, 1)
        rr = np.stack([tr.R_draws[:T][:, ia, ib] for tr in traces])
        report["psrf_R"] = np.atleast_1d(sampler.psrf(rr)).tolist()
    if all(tr.omega_draws is not None for tr in traces):
        ps = sampler.psrf(np.stack([tr.omega_draws[:T] for tr in traces]))
        inside = (ps >= 1.0 - 1e-12) & (ps <= 1.2)
        report["edge_psrf_fraction_in_1_1.2"] = inside.mean(axis=1).tolist()
    out.mkdir(parents=True, exist_ok=True)
    (out / "diagnose.json").write_text(json.dumps(report, indent=1))
    with open(out / "logpost.csv", "w") as fh:
        fh.write(",".join(f"chain_{c + 1}" for c in range(len(traces))) + "\n")
        for t in range(T):
            fh.write(",".join(repr(float(v)) for v in lp[:, t]) + "\n")
    print(json.dumps({k: v for k, v in report.items() if not isinstance(v, list) or len(v) <= 8}))
    return sorted(fit_dir.rglob("summary.json")), {}


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "select": cmd_select,
    "metrics": cmd_metrics,
    "g3p-check": cmd_g3p_check,
    "diagnose": cmd_diagnose,
}


def execute(command: str, cfg: dict) -> int:
    """Run ``command`` with a resolved configuration; returns the exit status."""
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    inputs, extra = COMMANDS[command](cfg, out)
    write_manifest(out, command, cfg, inputs, time.perf_counter() - t0, extra)
    return EXIT_OK


def replay(manifest_path, out_dir=None) -> int:
    """Re-run a manifest and compare output digests; 0 if all match."""
    manifest_path = _require_file(manifest_path, "manifest")
    m = json.loads(manifest_path.read_text())
    for path, digest in m["inputs"].items():
        if not Path(path).is_file():
            raise CliError(f"recorded input missing: {path}", EXIT_MISSING_INPUT)
        if sha256_file(path) != digest:
            raise CliError(f"recorded input changed since the run: {path}", EXIT_RUNTIME)
    cfg = dict(m["config"])
    target = Path(out_dir) if out_dir else Path(tempfile.mkdtemp(prefix="mghs-replay-"))
    cfg["out_dir"] = str(target)
    execute(m["command"], cfg)
    got = _output_digests(target)
    bad = sorted(k for k in set(m["outputs"]) | set(got) if m["outputs"].get(k) != got.get(k))
    for k in bad:
        print(f"MISMATCH {k}")
    print(f"replay into {target}: {len(m['outputs']) - len(bad)}/{len(m['outputs'])} outputs identical")
    return EXIT_OK if not bad else EXIT_RUNTIME


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _bool_flag(p, name, help_):
    p.add_argument(f"--{name}", dest=name.replace("-", "_"), action=argparse.BooleanOptionalAction,
                   default=None, help=help_)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mghs", description="Multiple graphical horseshoe toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, seed=True, threads=False):
        p.add_argument("--config", help="JSON file with option values")
        p.add_argument("--out-dir", dest="out_dir", help="output directory")
        if seed:
            p.add_argument("--seed", type=int)
        if threads:
            p.add_argument("--threads", type=int, help="worker processes for chains")

    p = sub.add_parser("simulate", help="generate a simulated scenario")
    common(p)
    p.add_argument("--scenario", choices=[s.value for s in simulate.Scenario])
    p.add_argument("--groups", type=int, help="number of groups K")
    p.add_argument("--p", type=int, help="number of variables")
    p.add_argument("--n", type=int, help="observations per group")
    p.add_argument("--block-size", dest="block_size", type=int, choices=[5, 10])
    p.add_argument("--edge-prob", dest="edge_prob", type=float)
    p.add_argument("--perturb-frac", dest="perturb_frac", type=float)

    p = sub.add_parser("fit", help="run chains on per-group CSV data")
    common(p, threads=True)
    p.add_argument("--data", nargs="+", help="per-group CSV files or one directory")
    p.add_argument("--chains", type=int)
    p.add_argument("--burnin", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--freeze-r", dest="freeze_r", action="store_const", const=True, default=None,
                   help="fix R = I (independent horseshoe per group)")
    _bool_flag(p, "standardize", "standardize columns before fitting (default on)")
    _bool_flag(p, "store-draws", "save thinned edge draws (needed for edge-wise PSRF)")
    p.add_argument("--select-mode", dest="select_mode", choices=[m.value for m in selection.SelectionMode])
    p.add_argument("--a", type=float, help="Beta prior a for the threshold")
    p.add_argument("--b", type=float, help="Beta prior b for the threshold")
    _bool_flag(p, "hastings", "use the likelihood-ratio acceptance for the threshold")

    p = sub.add_parser("select", help="select edges from a fit")
    common(p, seed=False)
    p.add_argument("--fit-dir", dest="fit_dir")
    p.add_argument("--select-mode", dest="select_mode", choices=[m.value for m in selection.SelectionMode])

    p = sub.add_parser("metrics", help="score a fit against the truth")
    common(p, seed=False)
    p.add_argument("--fit-dir", dest="fit_dir")
    p.add_argument("--truth")
    p.add_argument("--adjacency", help="adjacency.csv from select (default: select on the fly)")
    p.add_argument("--select-mode", dest="select_mode", choices=[m.value for m in selection.SelectionMode])
    p.add_argument("--method")
    p.add_argument("--label", help="scenario label for the CSV row")
    p.add_argument("--replicate", type=int)

    p = sub.add_parser("g3p-check", help="run the G3p sampler checks")
    common(p)
    p.add_argument("--draws", type=int, help="draws per KS cell")

    p = sub.add_parser("diagnose", help="PSRF across chains")
    common(p, seed=False)
    p.add_argument("--fit-dir", dest="fit_dir")

    p = sub.add_parser("replay", help="re-run a manifest and verify outputs")
    p.add_argument("manifest")
    p.add_argument("--out-dir", dest="out_dir")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        if args.command == "replay":
            return replay(args.manifest, args.out_dir)
        cfg = resolve_config(args.command, flags, getattr(args, "config", None))
        return execute(args.command, cfg)
    except CliError as exc:
        print(f"mghs: error: {exc}", file=sys.stderr)
        return exc.status
    except (ValueError, OSError, RuntimeError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"mghs: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
