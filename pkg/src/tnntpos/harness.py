"""Scenario configuration, Monte-Carlo sweeps, CSV output and the command line.

Configuration files are INI-style.  Scenario keys may sit at top level or in a
``[scenario]`` section; an optional ``[sweep]`` section holds ``axis``,
``values``, ``trials``, ``models``, ``estimands`` and ``seed``.  Values are
Python literals (numbers, tuples, lists, ``None``); bare words are strings.
"""

from __future__ import annotations

import argparse
import ast
import configparser
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from functools import lru_cache
from multiprocessing import get_context
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .scenario import Scenario, build_world

SWEEP_AXES = ("bs_power_dbm", "sat_power_dbm", "eta", "speed_mps", "sat_elevation_deg")
ESTIMANDS = ("pos", "clock", "speed", "eta")
DESK_PROFILE = {"num_subcarriers": 512, "num_symbols": 32}
DESK_TRIALS = 100


class ConfigError(ValueError):
    pass


def _parse_value(raw: str):
    raw = raw.strip()
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        pass
    if len(raw) >= 2 and raw[0] + raw[-1] in ("[]", "()"):
        return [_parse_value(x) for x in raw[1:-1].split(",") if x.strip()]
    return raw


def _coerce(name: str, value, default):
    if isinstance(default, tuple) and isinstance(value, (list, tuple)):
        return tuple(float(v) for v in value)
    if isinstance(default, bool):
        return bool(value)
    if isinstance(default, int) and not isinstance(default, bool) and isinstance(value, (int, float)):
        if float(value) != int(value):
            raise ConfigError(f"key {name!r} expects an integer, got {value!r}")
        return int(value)
    if isinstance(default, float) and isinstance(value, (int, float)):
        return float(value)
    return value


def _read_sections(text: str, source: str) -> dict[str, list[tuple[str, str, int]]]:
    lines = text.splitlines()
    sections: dict[str, list[tuple[str, str, int]]] = {"scenario": []}
    current = "scenario"
    for lineno, line in enumerate(lines, 1):
        s = line.strip()
        if not s or s.startswith(("#", ";")):
            continue
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip().lower()
            if current not in ("scenario", "sweep"):
                raise ConfigError(f"{source}:{lineno}: unknown section [{current}]")
            sections.setdefault(current, [])
            continue
        if "=" not in s:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {s!r}")
        k, v = s.split("=", 1)
        sections[current].append((k.strip(), v.strip(), lineno))
    return sections


def parse_scenario(text: str, source: str = "<config>", base: Optional[Scenario] = None) -> Scenario:
    """Scenario defaults overridden by the keys in ``text``."""
    base = base or Scenario()
    # configparser validates the overall syntax (duplicate keys, stray lines).
    cp = configparser.ConfigParser(interpolation=None, strict=True)
    cp.optionxform = str
    try:
        cp.read_string("[__top__]\n" + text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    defaults = {f.name: getattr(base, f.name) for f in fields(Scenario)}
    updates = {}
    for k, v, lineno in _read_sections(text, source)["scenario"]:
        if k not in defaults:
            raise ConfigError(f"{source}:{lineno}: unknown key {k!r}")
        updates[k] = _coerce(k, _parse_value(v), defaults[k])
    try:
        return base.with_(**updates)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_scenario(path) -> Scenario:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {str(p)!r} does not exist")
    return parse_scenario(p.read_text(encoding="utf-8"), str(p))


# --------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple
    trials: int = DESK_TRIALS
    models: tuple = ("Comm", "SlowD", "CCFODnoICI", "CCFOD")
    seed: int = 0
    estimands: tuple = ESTIMANDS
    bounds: bool = True

    def __post_init__(self):
        from .waveform import ModelKind, SIMPLIFIED_KINDS

        if self.axis not in SWEEP_AXES:
            raise ValueError(f"axis must be one of {SWEEP_AXES}, got {self.axis!r}")
        if not self.values:
            raise ValueError("sweep values must be nonempty")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        for m in self.models:
            if ModelKind.parse(m) not in SIMPLIFIED_KINDS:
                raise ValueError(f"{m!r} is not an estimation model")
        for e in self.estimands:
            if e not in ESTIMANDS:
                raise ValueError(f"unknown estimand {e!r}")


def parse_sweep(text: str, source: str = "<config>", **overrides) -> Optional[SweepSpec]:
    rows = _read_sections(text, source).get("sweep")
    if rows is None and not overrides.get("axis"):
        return None
    kw = {}
    allowed = {f.name for f in fields(SweepSpec)}
    for k, v, lineno in rows or []:
        if k not in allowed:
            raise ConfigError(f"{source}:{lineno}: unknown sweep key {k!r}")
        val = _parse_value(v)
        if k in ("values", "models", "estimands"):
            val = tuple(val) if isinstance(val, (list, tuple)) else (val,)
            if k != "values":
                val = tuple(str(x) for x in val)
        kw[k] = val
    kw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return SweepSpec(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


@dataclass
class CellStats:
    rmse: float
    bound: float
    bias: float
    trials_used: int
    failures: int
    valid: bool


@dataclass
class SweepResult:
    spec: SweepSpec
    snr: list = field(default_factory=list)  # (value, snr_bs, snr_sat)
    cells: dict = field(default_factory=dict)  # (value_index, model, estimand) -> CellStats

    def cell(self, value_index: int, model: str, estimand: str) -> CellStats:
        return self.cells[(value_index, model, estimand)]

    def series(self, model: str, estimand: str, what: str = "rmse") -> np.ndarray:
        return np.array([getattr(self.cells[(i, model, estimand)], what) for i in range(len(self.spec.values))])


def trial_seed(base_seed: int, axis_index: int, trial_index: int) -> int:
    """Collision-free per-trial seed from (base seed, axis index, trial index)."""
    ss = np.random.SeedSequence([int(base_seed) & (2**64 - 1), axis_index, trial_index])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def scenario_at(sc: Scenario, axis: str, value) -> Scenario:
    return sc.with_(**{axis: float(value)})


@lru_cache(maxsize=8)
def _world_and_clean(sc: Scenario):
    from .waveform import build_observation_generative

    w = build_world(sc)
    return w, build_observation_generative(w).samples


def _run_trial(args):
    """One Monte-Carlo realisation; returns per-model error records."""
    sc, axis_index, trial_index, seed, models = args
    from .estimation import estimate
    from .solver import SolverInputs, solve_positional
    from .waveform import ModelKind, ObservationGrid, add_noise

    w, clean = _world_and_clean(sc)
    Y = add_noise(ObservationGrid(clean), w.sigma2, seed)
    out = {}
    for m in models:
        kind = ModelKind.parse(m)
        try:
            rep = estimate(kind, Y, w.context)
            pp = solve_positional(SolverInputs.from_world(rep.params, w), kind.has_doppler)
            errs = {
                "pos": float(np.linalg.norm(pp.p0 - w.p0)),
                "clock": pp.delta_t0 - w.clock.delta_t0,
                "speed": pp.speed - sc.speed_mps,
                "eta": pp.eta - w.clock.eta,
            }
            if not np.isfinite(errs["pos"]) or not np.isfinite(errs["clock"]):
                raise FloatingPointError("non-finite solver output")
            out[m] = errs
        except (RuntimeError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            out[m] = {"failure": f"{type(exc).__name__}: {exc}"}
    return axis_index, trial_index, out


def _bounds_task(args):
    sc, axis_index, model = args
    from .bounds import crb, mcrb_bias

    w, clean = _world_and_clean(sc)
    if w.sigma2 > 0:
        rb = crb(model, w)
    else:
        from .bounds import BoundReport

        rb = BoundReport(0.0, 0.0, 0.0, 0.0)
    bb = mcrb_bias(model, w, clean)
    return axis_index, model, {
        "pos": (rb.peb, bb.bias_pos),
        "clock": (rb.ceb, bb.bias_clock),
        "speed": (rb.speed_eb, bb.bias_speed),
        "eta": (rb.eta_eb, bb.bias_eta),
    }


def _init_worker():
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = "1"


def _map(fn, tasks, threads: int):
    tasks = list(tasks)
    if threads <= 0:
        return [fn(t) for t in tasks]
    saved = {v: os.environ.get(v) for v in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")}
    _init_worker()  # inherited by spawned interpreters before they import numpy
    try:
        with ProcessPoolExecutor(max_workers=threads, mp_context=get_context("spawn"),
                                 initializer=_init_worker) as ex:
            return list(ex.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * threads))))
    finally:
        for k, v in saved.items():
            if v is None:
                os.environ.pop(k, None)
            else:
                os.environ[k] = v


def run_sweep(spec: SweepSpec, scenario: Scenario, threads: int = 1) -> SweepResult:
    """Monte-Carlo sweep of ``spec.axis``.

    ``threads`` worker processes evaluate trials (``0`` runs in-process).
    Workers always use single-threaded BLAS, so results do not depend on the
    worker count; per-trial records are reduced in (axis, trial) order.
    """
    from .waveform import received_snr

    scs = [scenario_at(scenario, spec.axis, v) for v in spec.values]
    tasks = [(sc, i, t, trial_seed(spec.seed, i, t), spec.models)
             for i, sc in enumerate(scs) for t in range(spec.trials)]
    records = sorted(_map(_run_trial, tasks, threads), key=lambda r: (r[0], r[1]))
    btasks = [(sc, i, m) for i, sc in enumerate(scs) for m in spec.models] if spec.bounds else []
    bres = {(i, m): d for i, m, d in _map(_bounds_task, btasks, threads)}

    result = SweepResult(spec)
    for i, (v, sc) in enumerate(zip(spec.values, scs)):
        w = build_world(sc)
        if w.sigma2 > 0:
            result.snr.append((v, received_snr("b", w, w.sigma2), received_snr("s", w, w.sigma2)))
        else:
            result.snr.append((v, math.inf, math.inf))
        for m in spec.models:
            recs = [r[2][m] for r in records if r[0] == i]
            ok = [r for r in recs if "failure" not in r]
            fails = len(recs) - len(ok)
            for e in spec.estimands:
                errs = np.array([r[e] for r in ok], dtype=float)
                errs = errs[np.isfinite(errs)]
                rmse = float(np.sqrt(np.mean(errs**2))) if errs.size else float("nan")
                bound, bias = bres.get((i, m), {}).get(e, (float("nan"), float("nan")))
                result.cells[(i, m, e)] = CellStats(rmse, float(bound), float(bias), len(ok), fails,
                                                    fails <= 0.1 * len(recs))
    return result


def _fmt(x: float) -> str:
    return "nan" if x is None or not np.isfinite(x) else f"{x:.9g}"


def emit_csv(result: SweepResult, path) -> list[Path]:
    """One ``<estimand>_<model>.csv`` per pair; invalid cells report RMSE ``nan``."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    spec = result.spec
    for m in spec.models:
        for e in spec.estimands:
            if e in ("speed", "eta") and m.lower() == "comm":
                continue
            f = out / f"{e}_{m}.csv"
            rows = ["axis,RMSE,PEB,Bias"]
            for i, v in enumerate(spec.values):
                c = result.cells.get((i, m, e))
                if c is None:
                    continue
                rmse = c.rmse if c.valid else float("nan")
                rows.append(",".join([_fmt(float(v)), _fmt(rmse), _fmt(c.bound), _fmt(c.bias)]))
            f.write_bytes(("\n".join(rows) + "\n").encode("utf-8"))
            written.append(f)
    if result.snr:
        f = out / "axis_snr.csv"
        rows = ["axis,SNR_BS,SNR_SAT"] + [",".join(_fmt(float(x)) for x in r) for r in result.snr]
        f.write_bytes(("\n".join(rows) + "\n").encode("utf-8"))
        written.append(f)
    return written


# --------------------------------------------------------------------------
# verification suite


def verify_suite(sc: Scenario) -> dict:
    """Oracle equivalence and degeneracy chain on one scenario."""
    from .waveform import (
        SIMPLIFIED_KINDS,
        ModelKind,
        build_observation_generative,
        build_observation_simplified,
        simplified_elementwise,
        time_domain_oracle,
    )

    w = build_world(sc)
    ctx = w.context
    g = build_observation_generative(w).samples
    o = time_domain_oracle(w).samples
    res = {"oracle_rel_error": float(np.linalg.norm(g - o) / np.linalg.norm(o))}
    t = w.truth

    def rel(a, b):
        return float(np.linalg.norm(a - b) / np.linalg.norm(b))

    g0 = build_observation_generative(w, quadratic=False, time_varying=False, bs_fourier_doppler=False).samples
    res["generative_eps0_vs_CCFOD"] = rel(g0, build_observation_simplified(ModelKind.CCFOD, t, ctx).samples)
    # Each factored builder against the direct per-entry sum of the next
    # simpler model; the entries are built without the factor helpers.
    for kind in SIMPLIFIED_KINDS:
        params = t if kind.has_doppler else t.with_(gamma_b=None, gamma_s=None)
        a = build_observation_simplified(kind, params, ctx).samples
        b = simplified_elementwise(kind, params, ctx).samples
        res[f"factored_vs_elementwise_{kind.value}"] = rel(a, b)
    return res


# --------------------------------------------------------------------------
# command line


CONFIG_HELP = "Scenario keys (defaults):\n" + "\n".join(
    f"  {f.name} = {f.default!r}" for f in fields(Scenario)
) + (
    "\n\nSweep section keys: axis (one of " + ", ".join(SWEEP_AXES) + "), values, trials, models, "
    "estimands, seed.\nSNR (reported in axis_snr.csv and by 'estimate') is 10 log10(P |alpha(0)|^2 / sigma2)"
    " per post-FFT sample; sigma2 defaults to thermal noise over one subcarrier."
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="scenario / sweep configuration file")
    common.add_argument("--seed", type=int, default=0, help="base seed (u64)")
    common.add_argument("--trials", type=int, help="Monte-Carlo trials per axis value")
    common.add_argument("--model", help="comma-separated model list (Comm,SlowD,CCFODnoICI,CCFOD)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker processes")
    common.add_argument("--full", action="store_true", help="use the full-size numerology instead of the desk profile")
    p = _Parser(prog="tnntpos", description="Joint BS/LEO OFDM positioning simulator.",
                epilog=CONFIG_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for name, text in [
        ("synth", "synthesize a noisy generative observation and dump it"),
        ("estimate", "estimate channel and positional parameters once"),
        ("bounds", "CRB and mismatch bias for the scenario"),
        ("sweep", "Monte-Carlo sweep with CSV output"),
        ("verify", "oracle-equivalence and degeneracy checks"),
    ]:
        sub.add_parser(name, parents=[common], help=text, epilog=CONFIG_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    return p


def _scenario_from_args(args, desk: bool = True) -> tuple[Scenario, str]:
    text = ""
    if args.config:
        p = Path(args.config)
        if not p.is_file():
            raise ConfigError(f"config file {args.config!r} does not exist")
        text = p.read_text(encoding="utf-8")
    base = Scenario() if args.full or not desk else Scenario(**DESK_PROFILE)
    return parse_scenario(text, args.config or "<defaults>", base), text


def _models(args, default=("Comm", "SlowD", "CCFODnoICI", "CCFOD")) -> tuple:
    from .waveform import ModelKind

    if not args.model:
        return default
    return tuple(ModelKind.parse(m).value for m in args.model.split(",") if m.strip())


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not args.command:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return _dispatch(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1 if isinstance(exc, ConfigError) else 2
    except Exception as exc:  # noqa: BLE001 - surfaced as a runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    from .waveform import ObservationGrid, add_noise, build_observation_generative, dump_observation, received_snr

    if args.command == "verify":
        sc, _ = _scenario_from_args(args)
        sc = sc.with_(num_subcarriers=64, num_symbols=8) if not args.config else sc
        res = verify_suite(sc)
        for k, v in res.items():
            print(f"{k} = {v:.3e}")
        ok = res["oracle_rel_error"] < 1e-6 and all(v < 1e-12 for k, v in res.items() if k != "oracle_rel_error")
        print("verify =", "PASS" if ok else "FAIL")
        return 0 if ok else 2

    if args.command == "synth":
        sc, _ = _scenario_from_args(args)
        w = build_world(sc)
        Y = add_noise(build_observation_generative(w), w.sigma2, args.seed)
        out = Path(args.out or ".")
        out.mkdir(parents=True, exist_ok=True)
        dump_observation(Y, out / "observation.bin")
        print(f"wrote {out / 'observation.bin'} ({sc.num_subcarriers} x {sc.num_symbols})")
        return 0

    if args.command == "estimate":
        from .estimation import estimate
        from .solver import SolverInputs, solve_positional
        from .waveform import ModelKind

        sc, _ = _scenario_from_args(args)
        w = build_world(sc)
        Y = add_noise(build_observation_generative(w), w.sigma2, args.seed)
        print(f"snr_bs_db = {received_snr('b', w, w.sigma2):.3f}")
        print(f"snr_sat_db = {received_snr('s', w, w.sigma2):.3f}")
        for m in _models(args):
            kind = ModelKind.parse(m)
            rep = estimate(kind, Y, w.context)
            pp = solve_positional(SolverInputs.from_world(rep.params, w), kind.has_doppler)
            p = rep.params
            print(f"[{kind.value}]")
            print(f"tau_b = {p.tau_b:.12e}")
            print(f"tau_s_res = {p.tau_s_res:.12e}")
            print(f"aod = ({p.aod.elevation:.9f}, {p.aod.azimuth:.9f})")
            if kind.has_doppler:
                print(f"gamma_b = {p.gamma_b:.9e}")
                print(f"gamma_s = {p.gamma_s:.9e}")
            print(f"objective = {rep.objective:.6e}")
            print(f"p0 = ({pp.p0[0]:.6f}, {pp.p0[1]:.6f}, {pp.p0[2]:.6f})")
            print(f"position_error_m = {np.linalg.norm(pp.p0 - w.p0):.6e}")
            print(f"delta_t0 = {pp.delta_t0:.9e}")
            if kind.has_doppler:
                print(f"speed = {pp.speed:.6f}")
                print(f"eta = {pp.eta:.6e}")
        return 0

    if args.command == "bounds":
        from .bounds import crb, mcrb_bias

        sc, _ = _scenario_from_args(args)
        w = build_world(sc)
        for m in _models(args):
            rb, bb = crb(m, w), mcrb_bias(m, w)
            print(f"[{m}]")
            for k in ("peb", "ceb", "speed_eb", "eta_eb"):
                print(f"{k} = {getattr(rb, k):.6e}")
            for k in ("bias_pos", "bias_clock", "bias_speed", "bias_eta"):
                print(f"{k} = {getattr(bb, k):.6e}")
        return 0

    if args.command == "sweep":
        sc, text = _scenario_from_args(args)
        spec = parse_sweep(text, args.config or "<defaults>", trials=args.trials, seed=args.seed,
                           models=_models(args, None) if args.model else None)
        if spec is None:
            raise ConfigError("sweep needs a [sweep] section with axis and values")
        res = run_sweep(spec, sc, threads=args.threads)
        files = emit_csv(res, args.out or ".")
        for f in files:
            print(f"wrote {f}")
        return 0
    raise ConfigError(f"unknown command {args.command!r}")


def main() -> None:
    raise SystemExit(cli_main())
