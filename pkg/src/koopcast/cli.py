"""Command-line entry point: ``koopcast <subcommand> [options]``.

Settings come from built-in defaults, then an optional ``--profile``, then a
JSON ``--config`` file, then explicit flags (later wins). Artifacts go to
``--out``, else ``$KOOPCAST_OUTPUT_DIR``, else ``./koopcast_out``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .data_io import (
    SYNTH_KINDS,
    dataset_stats,
    load_context_points,
    load_tsv,
    split_dataset,
    synth_generate,
    window_arrays,
    write_tsv,
)
from .edmd import KoopmanModel, build_snapshots, fit_ridge
from .errors import ConfigError, KoopcastError
from .forecaster import (
    ForecastConfig,
    HORIZON_PROFILES,
    context_candidates,
    fit_koopman,
    forecast,
    goal_training_set,
    prepare_history,
    to_model_frame,
)
from .geometry import AgentClass, Standardizer, fit_standardizer
from .mdn import TRAIN_PROFILES, MdnNetwork, TrainConfig, train
from .metrics import evaluate, time_inference
from .observables import AugmentedState, DictionarySpec, lift
from .spectral import classify_modes, decompose, mode_rollout, spectral_radius
from .svg import curves_svg, spectrum_svg

logger = logging.getLogger("koopcast")

OUTPUT_ENV = "KOOPCAST_OUTPUT_DIR"
DATA_FILE = "data/trajectories.tsv"
GOAL_FILE = "models/goal.json"
KOOPMAN_FILE = "models/koopman.json"

DEFAULTS = {
    "data": None,
    "context": None,
    "agent_class": None,
    "profile": None,
    "seed": 0,
    "split": [0.8, 0.1, 0.1],
    "stride": 1,
    "history_len": 8,
    "horizon": 12,
    "quadratic": True,
    "num_samples": 20,
    "rollout_mode": "linear",
    "goal_mode": "sampled",
    "mixtures": 5,
    "epochs": 100,
    "batch_size": 128,
    "lr": 1e-3,
    "context_size": 0,
    "context_radius": 2.0,
    "ridge": 1e-3,
    "solver": "auto",
    "anchor_lags": None,
    "matrix_encoding": "plain",
    "lambdas": [1e-4, 1e-3, 1e-2, 1e-1],
    "k_list": [1, 5],
    "standardized": False,
    "timing": False,
    "n_warmup": 100,
    "n_iter": 1000,
    "history": None,
    "synth": None,
    "synth_n": 200,
    "synth_noise": 0.0,
    "synth_length": 24,
}


# -- configuration ------------------------------------------------------------------

def _profile_values(name: str) -> dict:
    if name not in HORIZON_PROFILES:
        raise ConfigError(f"unknown profile {name!r}; choose from {sorted(HORIZON_PROFILES)}")
    fc, tc = HORIZON_PROFILES[name], TRAIN_PROFILES[name]
    return {"history_len": fc.history_len, "horizon": fc.horizon, "mixtures": tc.mixtures,
            "epochs": tc.epochs, "batch_size": tc.batch_size}


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults, profile, config file and explicit flags into one dict."""
    file_cfg = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            file_cfg = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(file_cfg, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        unknown = sorted(set(file_cfg) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"{path}: unknown config keys {unknown}")
    flags = {k: v for k, v in vars(args).items() if k in DEFAULTS and v is not None}
    cfg = dict(DEFAULTS)
    profile = flags.get("profile", file_cfg.get("profile"))
    if profile:
        cfg.update(_profile_values(profile))
    cfg.update(file_cfg)
    cfg.update(flags)
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    for key in ("history_len", "horizon", "num_samples", "mixtures", "batch_size", "stride",
                "n_iter", "synth_n", "synth_length"):
        if int(cfg[key]) < 1:
            raise ConfigError(f"{key} must be >= 1, got {cfg[key]}")
    for key in ("epochs", "n_warmup", "context_size"):
        if int(cfg[key]) < 0:
            raise ConfigError(f"{key} must be >= 0, got {cfg[key]}")
    if cfg["ridge"] < 0 or any(lam < 0 for lam in cfg["lambdas"]):
        raise ConfigError("ridge values must be nonnegative")
    if not cfg["k_list"] or min(cfg["k_list"]) < 1:
        raise ConfigError("k_list must hold positive integers")
    if cfg["agent_class"] is not None:
        try:
            AgentClass(cfg["agent_class"])
        except ValueError as exc:
            raise ConfigError(f"unknown agent class {cfg['agent_class']!r}") from exc
    if cfg["synth"] is not None and cfg["synth"] not in SYNTH_KINDS:
        raise ConfigError(f"unknown synthetic kind {cfg['synth']!r}; choose from {SYNTH_KINDS}")
    for key in ("data", "context", "history"):
        if cfg[key] is not None and not Path(cfg[key]).exists():
            raise ConfigError(f"{key} path {cfg[key]} does not exist")


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def output_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUTPUT_ENV) or "koopcast_out")


# -- run context ----------------------------------------------------------------------

class Run:
    """Output directory, resolved config and the list of written artifacts."""

    def __init__(self, command: str, cfg: dict, out: Path):
        self.command, self.cfg, self.out = command, cfg, out
        self.outputs: list[str] = []
        out.mkdir(parents=True, exist_ok=True)

    def path(self, rel: str) -> Path:
        p = self.out / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def record(self, rel: str) -> Path:
        if rel not in self.outputs:
            self.outputs.append(rel)
        return self.path(rel)

    def write_text(self, rel: str, text: str) -> None:
        self.record(rel).write_text(text)

    def write_json(self, rel: str, obj) -> None:
        self.write_text(rel, json.dumps(obj, sort_keys=True, indent=1) + "\n")

    def require(self, rel: str, producer: str) -> Path:
        p = self.out / rel
        if not p.exists():
            raise ConfigError(f"{p} not found; run `koopcast {producer}` first")
        return p

    def manifest(self) -> None:
        import scipy

        self.write_json(f"manifests/{self.command}.json", {
            "subcommand": self.command,
            "config": self.cfg,
            "config_sha256": config_hash(self.cfg),
            "seed": self.cfg["seed"],
            "versions": {"koopcast": __version__, "numpy": np.__version__,
                         "scipy": scipy.__version__, "python": platform.python_version(),
                         "kernel_backend": kernels.BACKEND},
            "outputs": sorted(self.outputs),
        })


def _trajectories(run: Run):
    cfg = run.cfg
    path = Path(cfg["data"]) if cfg["data"] else run.require(DATA_FILE, "import")
    trajs = load_tsv(path)
    if cfg["agent_class"] is not None:
        cls = AgentClass(cfg["agent_class"])
        trajs = [t for t in trajs if t.agent_class is cls]
        if not trajs:
            raise ConfigError(f"no trajectories of class {cls.value} in {path}")
    return trajs


def _split(run: Run):
    return split_dataset(_trajectories(run), run.cfg["split"], run.cfg["seed"])


def _context(cfg: dict):
    return load_context_points(cfg["context"]) if cfg["context"] else None


def _spec(cfg: dict) -> DictionarySpec:
    return DictionarySpec(int(cfg["history_len"]), include_quadratic=bool(cfg["quadratic"]))


def _forecast_cfg(cfg: dict) -> ForecastConfig:
    return ForecastConfig(int(cfg["history_len"]), int(cfg["horizon"]), int(cfg["num_samples"]),
                          cfg["rollout_mode"], cfg["goal_mode"])


def _agent_class(cfg: dict) -> AgentClass:
    return AgentClass(cfg["agent_class"] or AgentClass.PEDESTRIAN)


def _load_koopman(run: Run) -> KoopmanModel:
    return KoopmanModel.load(run.require(KOOPMAN_FILE, "fit-koopman"))


def _load_goal(run: Run) -> MdnNetwork:
    return MdnNetwork.load(run.require(GOAL_FILE, "train-goal"))


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


# -- subcommands ----------------------------------------------------------------------

def cmd_import(run: Run) -> None:
    cfg = run.cfg
    if cfg["synth"]:
        trajs = synth_generate(cfg["synth"], int(cfg["synth_n"]), float(cfg["synth_noise"]),
                               int(cfg["seed"]), int(cfg["synth_length"]))
    elif cfg["data"]:
        trajs = load_tsv(cfg["data"], cfg["agent_class"])
    else:
        raise ConfigError("import needs --data FILE or --synth KIND")
    if cfg["agent_class"] is not None:
        cls = AgentClass(cfg["agent_class"])
        trajs = [type(t)(t.agent_id, t.times, t.positions, cls) for t in trajs]
    write_tsv(trajs, run.record(DATA_FILE))
    run.record(DATA_FILE + ".json")
    st = dataset_stats(trajs, int(cfg["history_len"]), int(cfg["horizon"]), int(cfg["stride"]))
    run.write_json("data/stats.json", {
        "agents": st.agents, "trajectories": st.trajectories, "windows": st.windows,
        "mean_speed": st.mean_speed, "stride": st.stride})
    print(f"imported {st.trajectories} trajectories, {st.windows} windows -> {run.out / DATA_FILE}")


def _standardizer(split) -> Standardizer:
    return fit_standardizer(split.train)


def cmd_train_goal(run: Run) -> None:
    cfg = run.cfg
    split = _split(run)
    std = _standardizer(split)
    H, P = int(cfg["history_len"]), int(cfg["horizon"])
    X, G = goal_training_set(split.train, H, P, std, _context(cfg), int(cfg["context_size"]),
                             float(cfg["context_radius"]), int(cfg["stride"]))
    tc = TrainConfig(float(cfg["lr"]), int(cfg["batch_size"]), int(cfg["epochs"]),
                     int(cfg["mixtures"]), int(cfg["seed"]))
    net = MdnNetwork.create(X.shape[1], tc.mixtures, seed=tc.seed, goal_samples=G, history_len=H,
                            context_size=int(cfg["context_size"]),
                            context_radius=float(cfg["context_radius"]),
                            agent_class=_agent_class(cfg), standardizer=std)
    result = train(net, X, G, tc)
    result.network.save(run.record(GOAL_FILE))
    run.write_text("train_goal_loss.csv",
                   _csv([(i + 1, float(v)) for i, v in enumerate(result.losses)],
                        ["epoch", "mean_nll"]))
    status = "diverged, restored checkpoint" if result.diverged else "ok"
    final = result.losses[-1] if result.losses else float("nan")
    print(f"goal model trained on {len(X)} windows ({status}); final NLL {final:.4f}")


def cmd_fit_koopman(run: Run) -> None:
    cfg = run.cfg
    split = _split(run)
    std = _standardizer(split)
    lags = cfg["anchor_lags"]
    model = fit_koopman(split.train, _spec(cfg), int(cfg["horizon"]), std, float(cfg["ridge"]),
                        _agent_class(cfg), cfg["solver"], None if lags is None else int(lags))
    model.save(run.record(KOOPMAN_FILE), cfg["matrix_encoding"])
    print(f"Koopman model p={model.p} fitted (ridge {model.ridge:g}, "
          f"fit residual {model.fit_residual:.3g})")


def _predict_inputs(run: Run, H: int):
    cfg = run.cfg
    if cfg["history"]:
        trajs = load_tsv(cfg["history"])
        return [(t.agent_id, t.positions[-H:], int(t.times[-1])) for t in trajs if len(t) >= H]
    split = _split(run)
    return [(t.agent_id, t.positions[:H], int(t.times[H - 1])) for t in split.test if len(t) >= H]


def cmd_predict(run: Run) -> None:
    cfg = run.cfg
    km = _load_koopman(run)
    goal = _load_goal(run)
    fc = _forecast_cfg(cfg)
    ctx = _context(cfg)
    inputs = _predict_inputs(run, km.spec.history_len)
    if not inputs:
        raise ConfigError(f"no history with at least {km.spec.history_len} samples to predict from")
    out, curves, markers = {}, [], []
    for i, (agent, hist, frame) in enumerate(inputs):
        fcst = forecast(hist, goal, km, fc, context_candidates(ctx, frame),
                        seed=np.random.default_rng([int(cfg["seed"]), i]))
        out[agent] = {"frame": frame, "history": hist.tolist(),
                      "candidates": fcst.candidates.tolist(), "goals": fcst.goals.tolist()}
        if i < 10:
            curves.append(hist)
            curves.extend(np.concatenate([hist[-1:], c]) for c in fcst.candidates)
            markers.append(fcst.goals)
    run.write_json("predictions.json", out)
    run.write_text("predict.svg", curves_svg(curves, title="forecast candidates",
                                             markers=np.concatenate(markers)))
    print(f"predicted {len(out)} agents x {fc.num_samples} candidates")


def cmd_analyze_spectrum(run: Run) -> None:
    cfg = run.cfg
    km = _load_koopman(run)
    dec = decompose(km)
    classes = classify_modes(dec)
    rows = [(i, float(z.real), float(z.imag), float(abs(z)), c.value)
            for i, (z, c) in enumerate(zip(dec.eigenvalues, classes))]
    run.write_text("spectrum.csv", _csv(rows, ["index", "real", "imag", "magnitude", "class"]))
    run.write_text("spectrum.svg", spectrum_svg(dec.eigenvalues))
    summary = {"spectral_radius": float(dec.magnitudes.max()), "v_condition": dec.v_condition,
               "diagonalizable": dec.diagonalizable,
               "counts": {c.value: sum(1 for k in classes if k is c) for c in set(classes)}}
    if dec.diagonalizable:
        H, P = km.spec.history_len, int(cfg["horizon"])
        split = _split(run)
        hist, fut, _ = window_arrays(split.test or split.train, H, P)
        if len(hist):
            # first window, rolled out from its true goal
            pose, h_ego = prepare_history(hist[0], km.standardizer)
            g_ego = to_model_frame(fut[0][-1], pose, km.standardizer)[0]
            z = lift(AugmentedState(h_ego, g_ego), km.spec)
            modes = mode_rollout(km, z, P, dec)
            mrows = [(m.mode_index, float(m.eigenvalue.real), float(m.eigenvalue.imag),
                      m.mode_class.value, s + 1, float(x), float(y))
                     for m in modes for s, (x, y) in enumerate(m.curve)]
            run.write_text("modes.csv", _csv(mrows, ["mode_index", "real", "imag", "class",
                                                     "step", "x", "y"]))
            top = sorted(modes, key=lambda m: -float(np.abs(m.curve).max()))[:8]
            run.write_text("modes.svg", curves_svg(
                [m.curve for m in top], [f"mode {m.mode_index} |lam|={m.magnitude:.3f}"
                                         for m in top], title="mode contributions (model frame)"))
    else:
        logger.warning("eigenvector matrix condition %.3g: mode decomposition skipped",
                       dec.v_condition)
    run.write_json("spectrum.json", summary)
    print(f"spectral radius {summary['spectral_radius']:.6f}; "
          f"diagonalizable={dec.diagonalizable}")


def cmd_benchmark(run: Run) -> None:
    cfg = run.cfg
    km = _load_koopman(run)
    goal = _load_goal(run)
    split = _split(run)
    fc = _forecast_cfg(cfg)
    report = evaluate(split, goal, km, fc, cfg["k_list"], int(cfg["seed"]),
                      bool(cfg["standardized"]), stride=int(cfg["stride"]),
                      context=_context(cfg))
    run.write_json("benchmark.json", report.to_dict())
    run.write_text("benchmark.csv", report.csv_text())
    if cfg["timing"]:
        stats = time_inference((goal, km), fc, int(cfg["n_warmup"]), int(cfg["n_iter"]),
                               seed=int(cfg["seed"]))
        # wall-clock values differ between runs; kept out of benchmark.json
        run.write_json("latency.json", stats.to_dict())
        print(f"latency median {stats.median_ms:.4f} ms/sample, p95 {stats.p95_ms:.4f}")
    for name, s in report.scenes.items():
        parts = ", ".join(f"minADE_{k}={s.min_ade[k]:.4f} minFDE_{k}={s.min_fde[k]:.4f}"
                          for k in report.k_list)
        print(f"{name}: {s.windows} windows, {parts}")


def sweep_ridge(trajectories, spec: DictionarySpec, horizon: int, standardizer: Standardizer,
                lambdas, anchor_lags: int | None = None, agent_class=AgentClass.PEDESTRIAN):
    """``(lambda, spectral radius, Frobenius norm, fit residual)`` per ridge value, ascending."""
    snaps = build_snapshots(trajectories, spec, horizon, standardizer, ego_frame=True,
                            anchor_lags=horizon if anchor_lags is None else anchor_lags)
    rows = []
    for lam in sorted(float(v) for v in lambdas):
        model = fit_ridge(snaps, lam, agent_class=agent_class)
        rows.append((lam, spectral_radius(model), float(np.linalg.norm(model.K)),
                     model.fit_residual))
    return rows


def cmd_sweep_ridge(run: Run) -> None:
    cfg = run.cfg
    split = _split(run)
    std = _standardizer(split)
    lags = cfg["anchor_lags"]
    rows = sweep_ridge(split.train, _spec(cfg), int(cfg["horizon"]), std, cfg["lambdas"],
                       None if lags is None else int(lags), _agent_class(cfg))
    run.write_text("sweep_ridge.csv",
                   _csv(rows, ["lambda", "spectral_radius", "frobenius_norm", "fit_residual"]))
    norms = [r[2] for r in rows]
    if any(b > a * (1 + 1e-12) for a, b in zip(norms, norms[1:])):
        logger.warning("Frobenius norm increased with ridge; check solver conditioning")
    for lam, rho, fro, res in rows:
        print(f"lambda={lam:g} rho={rho:.6f} |K|_F={fro:.6f} residual={res:.4g}")


COMMANDS = {
    "import": cmd_import,
    "train-goal": cmd_train_goal,
    "fit-koopman": cmd_fit_koopman,
    "predict": cmd_predict,
    "analyze-spectrum": cmd_analyze_spectrum,
    "benchmark": cmd_benchmark,
    "sweep-ridge": cmd_sweep_ridge,
}


# -- argument parsing -----------------------------------------------------------------

def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("common")
    g.add_argument("--config", help="JSON file of settings (keys mirror the long flags)")
    g.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./koopcast_out)")
    g.add_argument("--data", help="trajectory TSV (default: the imported dataset)")
    g.add_argument("--context", help="context points file (frame x y)")
    g.add_argument("--agent-class", choices=[c.value for c in AgentClass])
    g.add_argument("--profile", choices=sorted(HORIZON_PROFILES))
    g.add_argument("--seed", type=int)
    g.add_argument("--split", type=_floats, help="train,val,test ratios")
    g.add_argument("--stride", type=int, help="window offset stride")
    g.add_argument("--history-len", type=int)
    g.add_argument("--horizon", type=int)
    g.add_argument("--no-quadratic", dest="quadratic", action="store_const", const=False)
    g.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="koopcast", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"koopcast {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("import", help="ingest a trajectory file or generate a synthetic set")
    _common(p)
    p.add_argument("--synth", choices=SYNTH_KINDS)
    p.add_argument("--synth-n", type=int)
    p.add_argument("--synth-noise", type=float)
    p.add_argument("--synth-length", type=int)

    p = sub.add_parser("train-goal", help="train the mixture-density goal estimator")
    _common(p)
    p.add_argument("--mixtures", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", "--batch", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--context-size", type=int)
    p.add_argument("--context-radius", type=float)

    p = sub.add_parser("fit-koopman", help="fit the Koopman matrix by ridge regression")
    _common(p)
    p.add_argument("--ridge", type=float)
    p.add_argument("--solver", choices=["auto", "cholesky", "svd"])
    p.add_argument("--anchor-lags", type=int)
    p.add_argument("--matrix-encoding", choices=["plain", "base64"])

    for name, hlp in (("predict", "forecast candidate futures"),
                      ("benchmark", "best-of-K metrics on the test split")):
        p = sub.add_parser(name, help=hlp)
        _common(p)
        p.add_argument("--num-samples", type=int)
        p.add_argument("--rollout-mode", choices=["linear", "relift"])
        p.add_argument("--goal-mode", choices=["sampled", "expected"])
        if name == "predict":
            p.add_argument("--history", help="TSV of histories; each agent's last H samples")
        else:
            p.add_argument("--k-list", type=_ints)
            p.add_argument("--standardized", action="store_const", const=True)
            p.add_argument("--timing", action="store_const", const=True)
            p.add_argument("--n-warmup", type=int)
            p.add_argument("--n-iter", type=int)

    p = sub.add_parser("analyze-spectrum", help="eigenvalues and per-mode contributions")
    _common(p)

    p = sub.add_parser("sweep-ridge", help="spectral radius and norm of K across ridge values")
    _common(p)
    p.add_argument("--lambdas", type=_floats)
    p.add_argument("--anchor-lags", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        run = Run(args.command, cfg, output_dir(args))
        COMMANDS[args.command](run)
        run.manifest()
    except KoopcastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
