"""
Batch command-line interface.

Usage::

    mskam check-conditions --config run.toml --out results/ --seed 0 --workers 2

Settings come from the config file (TOML or JSON), then from environment
variables ``MSKAM_<KEY>`` (``MSKAM_<SECTION>__<KEY>`` for nested keys, values
parsed as JSON when possible), then from the command-line flags.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 a
nonresonance floor failed or the surviving parameter set is empty.
"""
import argparse
import copy
import csv
import hashlib
import io
import json
import math
import os
import sys
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (ConfigError, FloorError, MskamError, SmallDivisorError)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

__all__ = ["RunConfig", "load_config", "parse_config", "emit_config", "run_config",
           "run_preset", "main", "PipelineError", "MODES", "PRESET_NAMES", "ENV_PREFIX"]

MODES = ("normalize", "kam-run", "measure", "reduce-resonance", "check-conditions")
PRESET_NAMES = ("example-6.1", "example-6.1-collision", "example-6.2", "example-6.3",
                "model-1-1", "resonance-d2", "diophantine-2d")
ENV_PREFIX = "MSKAM_"

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_FLOOR = 0, 2, 3, 4


class PipelineError(MskamError):
    """A pipeline stage failed; ``code`` is the process exit code."""

    def __init__(self, stage, cause, code=EXIT_NUMERIC):
        self.stage = stage
        self.code = code
        super().__init__(f"stage '{stage}' failed: {cause}")


# ---------------------------------------------------------------- config

@dataclass
class GridSpec:
    kind: str = None
    box: list = None
    counts: list = None
    count: int = None


@dataclass
class MeasureSpec:
    gammas: list = field(default_factory=lambda: [0.1, 0.05, 0.025, 0.0125])
    tau: float = 3.2
    K: int = 20
    N: int = 0


@dataclass
class ConditionSpec:
    which: list = None
    N: int = 1
    K: int = 3


@dataclass
class KamSpec:
    lam: list = None


@dataclass
class ResonanceSpec:
    ys: list = None
    H1: str = None
    potential: list = None
    eps: float = 1e-2
    y0: list = None
    theta0: list = None
    degree_cap: int = 4
    fourier_cap: int = 8


@dataclass
class HamiltonianSpec:
    n: int = None
    m: int = None
    omega: list = None
    M: list = None
    eps: float = None
    terms: list = None
    r: float = 1.0
    s: float = 1e-8
    degree_cap: int = 4
    fourier_cap: int = 8


_SECTIONS = {"grid": GridSpec, "measure": MeasureSpec, "conditions": ConditionSpec,
             "kam": KamSpec, "resonance": ResonanceSpec, "hamiltonian": HamiltonianSpec}


@dataclass
class RunConfig:
    """
    Fully resolved run configuration.

    ``preset`` and ``hamiltonian`` are alternatives: a preset name picks one
    of the bundled systems, ``hamiltonian`` gives inline coefficients.
    """

    mode: str
    preset: str = None
    seed: int = 0
    workers: int = 1
    out: str = "mskam-out"
    preset_options: dict = field(default_factory=dict)
    schedule: dict = field(default_factory=dict)
    grid: GridSpec = field(default_factory=GridSpec)
    measure: MeasureSpec = field(default_factory=MeasureSpec)
    conditions: ConditionSpec = field(default_factory=ConditionSpec)
    kam: KamSpec = field(default_factory=KamSpec)
    resonance: ResonanceSpec = field(default_factory=ResonanceSpec)
    hamiltonian: HamiltonianSpec = field(default_factory=HamiltonianSpec)

    def to_dict(self):
        return _drop_none(asdict(self))


_TYPES = {"mode": str, "preset": str, "seed": int, "workers": int, "out": str,
          "preset_options": dict, "schedule": dict}


def _drop_none(x):
    if isinstance(x, dict):
        return {k: _drop_none(v) for k, v in x.items() if v is not None}
    if isinstance(x, list):
        return [_drop_none(v) for v in x]
    return x


def _check_type(where, value, kind):
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if kind is int and isinstance(value, bool):
        raise ConfigError(f"{where}: expected int, got bool")
    if not isinstance(value, kind):
        raise ConfigError(f"{where}: expected {kind.__name__}, got {type(value).__name__}")
    return value


def _section(name, cls, data):
    if not isinstance(data, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name: f for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown key '{name}.{key}'")
    out = cls()
    for key, value in data.items():
        default = getattr(out, key)
        if value is None:
            continue
        if isinstance(default, (int, float, str)) and not isinstance(default, bool):
            value = _check_type(f"{name}.{key}", value, type(default))
        setattr(out, key, value)
    return out


def _check_schedule(sched):
    from .scheduler import KAMSchedule

    names = KAMSchedule.field_names()
    for key, value in sched.items():
        if key not in names:
            raise ConfigError(f"unknown schedule field '{key}'")
        kind = type(getattr(KAMSchedule, key, None))
        if key == "target_norm":
            kind = float
        if kind in (int, float):
            sched[key] = _check_type(f"schedule.{key}", value, kind)
    return sched


def parse_config(data):
    """
    Validate a config mapping and fill defaults.

    Raises
    ------
    ConfigError
        Unknown key, wrong type, unknown mode or preset.
    """
    if not isinstance(data, dict):
        raise ConfigError("config must be a table")
    data = copy.deepcopy(data)
    allowed = set(_TYPES) | set(_SECTIONS)
    for key in data:
        if key not in allowed:
            raise ConfigError(f"unknown key '{key}'")
    if "mode" not in data:
        raise ConfigError("missing required key 'mode'")
    kw = {}
    for key, kind in _TYPES.items():
        if key in data and data[key] is not None:
            kw[key] = _check_type(key, data[key], kind)
    for key, cls in _SECTIONS.items():
        if key in data:
            kw[key] = _section(key, cls, data[key])
    cfg = RunConfig(**kw)
    if cfg.mode not in MODES:
        raise ConfigError(f"unknown mode '{cfg.mode}'; expected one of {list(MODES)}")
    if cfg.preset is not None and cfg.preset not in PRESET_NAMES:
        raise ConfigError(f"unknown preset '{cfg.preset}'; expected one of {list(PRESET_NAMES)}")
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    if cfg.grid.kind not in (None, "lattice", "quasi_random", "monte_carlo"):
        raise ConfigError(f"unknown grid kind '{cfg.grid.kind}'")
    _check_schedule(cfg.schedule)
    return cfg


def _position(text, exc):
    line = getattr(exc, "lineno", None)
    col = getattr(exc, "colno", None)
    if line is None:
        return str(exc)
    return f"line {line}, column {col}: {exc.msg if hasattr(exc, 'msg') else exc}"


def load_config(path, env=None):
    """
    Read a TOML or JSON config, apply ``MSKAM_*`` overrides from ``env``
    and validate it.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix.lower() == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {_position(text, exc)}") from None
    else:
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return parse_config(apply_env(data, os.environ if env is None else env))


def apply_env(data, env):
    """Overlay ``MSKAM_KEY`` / ``MSKAM_SECTION__KEY`` variables onto ``data``."""
    data = copy.deepcopy(data)
    for name in sorted(env):
        if not name.startswith(ENV_PREFIX):
            continue
        path = name[len(ENV_PREFIX):].lower().split("__")
        raw = env[name]
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{name}: '{part}' is not a table")
        node[path[-1]] = value
    return data


def emit_config(cfg, fmt="toml"):
    """Serialise ``cfg`` so that ``parse_config`` of the result gives ``cfg`` back."""
    data = cfg.to_dict()
    if fmt == "json":
        return json.dumps(data, indent=2, sort_keys=True) + "\n"
    return tomli_w.dumps(data)


# ---------------------------------------------------------------- outputs

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    Path(path).write_text(buf.getvalue())


def _write_json(path, obj):
    from .nonres import _jsonable

    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True,
                                     allow_nan=True) + "\n")


def _manifest(out, cfg, written, extra=None):
    digests = {}
    for name in sorted(written):
        digests[name] = hashlib.sha256((out / name).read_bytes()).hexdigest()
    man = {"version": __version__, "seed": cfg.seed, "config": cfg.to_dict(),
           "outputs": digests}
    if extra:
        man.update(extra)
    _write_json(out / "manifest.json", man)


@contextmanager
def _stage(name):
    try:
        yield
    except PipelineError:
        raise
    except ConfigError as exc:
        raise PipelineError(name, exc, EXIT_CONFIG) from exc
    except (SmallDivisorError, FloorError) as exc:
        raise PipelineError(name, exc, EXIT_FLOOR) from exc
    except (MskamError, ArithmeticError, np.linalg.LinAlgError, ValueError, KeyError) as exc:
        raise PipelineError(name, exc, EXIT_NUMERIC) from exc


# ---------------------------------------------------------------- presets

def _resolve_preset(name, opts):
    from . import presets

    opts = dict(opts)
    try:
        if name == "example-6.1":
            return presets.example_6_1(**opts)
        if name == "example-6.1-collision":
            return presets.example_6_1_collision(**opts)
        if name == "example-6.3":
            return presets.example_6_3(**opts)
        if name == "diophantine-2d":
            return _diophantine(**opts)
    except TypeError as exc:
        raise ConfigError(f"preset_options for {name}: {exc}") from None
    raise ConfigError(f"preset '{name}' has no frequency data")


def _diophantine(n=2, box=None):
    from .mslinalg import FrequencyData, ScaleSet
    from .presets import Preset
    from .tfseries import ParamCoefficient

    omega = ParamCoefficient(lambda lam: np.asarray(lam, dtype=float), nparam=n)
    M = ParamCoefficient.constant(np.zeros((n, n)), nparam=n)
    freq = FrequencyData(n, 0, omega, M, nparam=n)
    return Preset("diophantine-2d", freq, ScaleSet(1.0, (1.0,), (), ceiling=None), [],
                  box or [(1.0, 2.0)] * n)


def _grid(cfg, box, kind="lattice", count=64):
    """Grid from ``cfg.grid``; ``kind`` and ``count`` are the mode defaults."""
    from .nonres import LambdaGrid

    g = cfg.grid
    box = g.box or box
    kind = g.kind or kind
    count = g.count or count
    if kind == "lattice":
        counts = g.counts or [3] * len(box)
        if len(counts) != len(box):
            raise ConfigError("grid.counts must match the parameter dimension")
        return LambdaGrid.lattice(box, counts)
    if kind == "quasi_random":
        return LambdaGrid.quasi_random(box, count)
    return LambdaGrid.monte_carlo(box, count, seed=cfg.seed)


def _schedule(cfg, **defaults):
    from .scheduler import KAMSchedule, min_s0_for_H4

    data = dict(defaults)
    data.update(cfg.schedule)
    try:
        sched = KAMSchedule(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    if "s0" not in cfg.schedule:
        sched = sched.replace(s0=min_s0_for_H4(sched, sched.max_steps))
    return sched


def _inline_normal_form(sec):
    from .kamstep import NormalForm
    from .mslinalg import ScaleSet
    from .tfseries import AnalyticDomain, TFSeries

    if sec.n is None or sec.omega is None or sec.M is None or sec.eps is None:
        raise ConfigError("hamiltonian needs n, m, omega, M and eps")
    m = sec.m or 0
    terms = []
    for t in sec.terms or []:
        try:
            c = t["c"]
            c = complex(*c) if isinstance(c, list) else complex(c)
            terms.append((tuple(t["k"]), tuple(t["i"]), tuple(t.get("j", [0] * (2 * m))), c))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"hamiltonian.terms entry {t!r}: {exc}") from None
    P = TFSeries.from_terms((sec.n, m), terms, sec.degree_cap, sec.fourier_cap)
    M = np.asarray(sec.M, dtype=float)
    mu = float(np.abs(M).max()) or sec.eps
    scales = ScaleSet(sec.eps, (max(sec.eps, 1.0),), (max(mu, sec.eps),), ceiling=None)
    return NormalForm(0.0, np.asarray(sec.omega, dtype=float), M, None, P, scales,
                      AnalyticDomain(sec.r, sec.s))


def _resonant_system(cfg):
    import sympy as sp

    from .resonance import ResonantHamiltonian
    from .tfseries import TFSeries

    sec = cfg.resonance
    if cfg.preset in (None, "resonance-d2") and sec.H1 is None:
        ys = sp.symbols("y1 y2")
        H1 = (ys[0] ** 2 + ys[1] ** 2) / 2
        pot = [[1, -1, 0.5], [-1, 1, 0.5]]
        y0 = sec.y0 or [1.0, 1.0]
    else:
        if sec.H1 is None or sec.ys is None or sec.potential is None:
            raise ConfigError("resonance needs ys, H1 and potential")
        ys = sp.symbols(" ".join(sec.ys))
        ys = ys if isinstance(ys, tuple) else (ys,)
        try:
            H1 = sp.sympify(sec.H1, locals={str(s): s for s in ys})
        except sp.SympifyError as exc:
            raise ConfigError(f"resonance.H1: {exc}") from None
        pot = sec.potential
        if sec.y0 is None:
            raise ConfigError("resonance.y0 is required with an inline H1")
        y0 = sec.y0
    d = len(ys)
    terms = [(tuple(int(v) for v in row[:d]), (0,) * d, (), complex(row[d])) for row in pot]
    P = TFSeries.from_terms((d, 0), terms, sec.degree_cap, sec.fourier_cap)
    return ResonantHamiltonian(list(ys), H1, P, sec.eps), np.asarray(y0, dtype=float)


# ---------------------------------------------------------------- pipelines

def _conditions_pipeline(cfg, out, written, preset_name):
    from .nonres import check_conditions

    with _stage("build"):
        pre = _resolve_preset(preset_name, cfg.preset_options)
        grid = _grid(cfg, pre.box)
    report = {"preset": pre.name, "nodes": grid.nodes.tolist()}
    if preset_name.startswith("example-6.1"):
        from .presets import example_6_1_transform, mj_eigenvalues

        with _stage("transform"):
            n1 = pre.freq.m
            ws = sorted({float(w) for w in grid.nodes[:, :n1].ravel()})
            report["transform"] = [{"omega": w, "det_symplectic": d1, "area_factor": d2}
                                   for w in ws for d1, d2 in [example_6_1_transform(w)]]
        with _stage("eigenvalues"):
            eig = []
            for lam in grid.nodes:
                M = pre.freq.M_at(lam).real
                n = pre.freq.n
                ev = mj_eigenvalues(M[n:, n:])
                eig.append({"lambda": lam.tolist(), "eigenvalues": ev})
            report["eigenvalues"] = eig
    with _stage("conditions"):
        which = cfg.conditions.which or "all"
        rep = check_conditions(pre.freq, pre.scales, grid, which=which, N=cfg.conditions.N,
                               K=cfg.conditions.K, seed=cfg.seed)
    report["conditions"] = rep.to_dict()
    _write_json(out / "conditions.json", report)
    written.append("conditions.json")
    return report


def _measure_pipeline(cfg, out, written):
    from .nonres import estimate_excluded_measure

    with _stage("build"):
        pre = _resolve_preset(cfg.preset or "diophantine-2d", cfg.preset_options)
        grid = _grid(cfg, pre.box, "quasi_random", 10000)
    ms = cfg.measure
    with _stage("measure"):
        table = estimate_excluded_measure(pre.freq, pre.scales, grid, ms.gammas, ms.tau,
                                          N=ms.N, K=ms.K, workers=cfg.workers)
    _write_csv(out / "measure.csv", table.header, table.rows())
    written.append("measure.csv")
    return table


def _steps_csv(out, history, written):
    from .kamstep import CSV_COLUMNS

    _write_csv(out / "steps.csv", CSV_COLUMNS, [c.csv_row() for c in history])
    written.append("steps.csv")


def _kam_pipeline(cfg, out, written):
    from .presets import example_6_3, example_6_3_normal_form, model_1_1
    from .scheduler import run, sequence_at

    name = cfg.preset or ("inline" if cfg.hamiltonian.n is not None else "model-1-1")
    with _stage("schedule"):
        if name == "model-1-1":
            sched = _schedule(cfg, n=1, mu0=1e-5, c0=1.0 / 64.0, max_steps=3)
            H0 = model_1_1(sched, **cfg.preset_options)
        elif name == "example-6.3":
            sched = _schedule(cfg, n=2, tau=3.5, mu0=1e-6, c0=1.0 / 64.0, max_steps=2)
            pre = example_6_3(**cfg.preset_options)
            v = sequence_at(sched, 0)
            amp = v.gamma ** (3 * sched.b) * v.s ** 2 * v.mu / pre.info["eps"] ** 4
            # default node sits off the resonant diagonal w1 = w2
            lam = cfg.kam.lam or [lo + f * (hi - lo) for (lo, hi), f in zip(pre.box, (0.3, 0.6))]
            H0 = example_6_3_normal_form(pre, lam, amplitude=amp, s=v.s, r=v.r)
        elif name == "inline":
            H0 = _inline_normal_form(cfg.hamiltonian)
            sched = _schedule(cfg, n=H0.dims[0], s0=H0.dom.s, r0=H0.dom.r)
        else:
            raise ConfigError(f"preset '{name}' has no KAM run")
    with _stage("kam-run"):
        res = run(H0, sched, workers=cfg.workers)
    _steps_csv(out, res.history, written)
    excluded = any(c.excluded_shells for c in res.history)
    with _stage("reality"):
        defect = res.H_star.reality_defect()
    summary = {"converged": res.converged, "failure": res.failure, "reality_defect": defect,
               "schedule": sched.to_dict(), "steps": len(res.history)}
    if excluded:
        raise PipelineError("kam-run", res.failure, EXIT_FLOOR)
    if not res.converged and res.failure and "assumptions" in res.failure:
        raise PipelineError("kam-run", res.failure, EXIT_NUMERIC)
    return summary


def _reduction_pipeline(cfg, out, written):
    from .resonance import complete_unimodular, detect_resonance, reduce_to_normal_form

    if cfg.preset == "example-6.2":
        from .presets import example_6_2

        with _stage("reduction"):
            res = example_6_2(**cfg.preset_options)
        report = {"preset": "example-6.2", "frame": res["frame"].to_dict(),
                  "det_K0": res["frame"].det(),
                  "critical_points": [c.to_dict() for c in res["critical_points"]],
                  "torus_types": res["torus_types"],
                  "normal_forms": [{"e": nf.e, "omega": nf.omega, "M": nf.M.real,
                                    "P": json.loads(nf.P.to_json()), "eps": nf.eps}
                                   for nf in res["normal_forms"]]}
    else:
        with _stage("build"):
            H, y0 = _resonant_system(cfg)
        with _stage("detect"):
            grad = np.asarray(H.gradient(y0), dtype=float)
            m0, gens = detect_resonance(grad)
            if m0 == 0:
                raise ConfigError(f"frequency {grad.tolist()} at y0 is not resonant")
            frame = complete_unimodular(gens)
        with _stage("reduction"):
            th = cfg.resonance.theta0
            red = reduce_to_normal_form(H, frame, y0, theta0=th,
                                        degree_cap=cfg.resonance.degree_cap,
                                        fourier_cap=cfg.resonance.fourier_cap)
        report = red.to_dict()
        report["det_K0"] = frame.det()
    _write_json(out / "reduction.json", report)
    written.append("reduction.json")
    return report


def _normalize_pipeline(cfg, out, written):
    if cfg.preset in ("example-6.2", "resonance-d2") or cfg.resonance.H1 is not None:
        return _reduction_pipeline(cfg, out, written)
    with _stage("build"):
        H = _inline_normal_form(cfg.hamiltonian)
    with _stage("reality"):
        defect = H.reality_defect()
        if defect > 1e-12:
            raise PipelineError("reality", f"imaginary residue {defect:.3e} exceeds 1e-12",
                                EXIT_NUMERIC)
    report = {"e": H.e, "omega": H.omega, "M": H.M.real, "P": json.loads(H.P.to_json()),
              "eps": H.eps, "reality_defect": defect,
              "symmetric_M": bool(np.allclose(H.M, H.M.T, atol=1e-14))}
    _write_json(out / "normal_form.json", report)
    written.append("normal_form.json")
    return report


def run_config(cfg):
    """
    Execute ``cfg`` and write its outputs plus ``manifest.json``.

    Returns
    -------
    dict
        Pipeline summary.
    """
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    np.random.seed(cfg.seed)
    written = []
    if cfg.mode == "check-conditions":
        summary = _conditions_pipeline(cfg, out, written, cfg.preset or "example-6.3")
    elif cfg.mode == "measure":
        summary = _measure_pipeline(cfg, out, written)
    elif cfg.mode == "kam-run":
        summary = _kam_pipeline(cfg, out, written)
    elif cfg.mode == "reduce-resonance":
        summary = _reduction_pipeline(cfg, out, written)
    else:
        summary = _normalize_pipeline(cfg, out, written)
    _manifest(out, cfg, written)
    return summary


def run_preset(name, out, seed=0, workers=1, options=None):
    """
    Run the documented pipeline of a bundled example.

    ``example-6.1``: coordinate-change check, spectrum of ``MJ`` and the
    condition checks.  ``example-6.2``: reduction to the end normal form.
    ``example-6.3``: condition checks and a short KAM run.
    """
    if name not in ("example-6.1", "example-6.2", "example-6.3"):
        raise ConfigError(f"unknown preset '{name}'")
    base = {"preset": name, "seed": seed, "workers": workers, "out": str(out),
            "preset_options": dict(options or {})}
    if name == "example-6.1":
        base["conditions"] = {"which": ["D", "M1''", "M2''"]}
        cfg = parse_config(dict(base, mode="check-conditions"))
        return run_config(cfg)
    if name == "example-6.2":
        return run_config(parse_config(dict(base, mode="reduce-resonance")))
    cfg = parse_config(dict(base, mode="check-conditions",
                            conditions={"which": ["D", "C1", "M1'", "M2'"], "N": 2}))
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    report = _conditions_pipeline(cfg, out, written, name)
    kam_cfg = parse_config(dict(base, mode="kam-run"))
    summary = _kam_pipeline(kam_cfg, out, written)
    _manifest(out, cfg, written, {"kam": summary})
    return {"conditions": report, "kam": summary}


# ---------------------------------------------------------------- entry point

def _parser():
    p = argparse.ArgumentParser(prog="mskam", description="Multi-scale KAM engine")
    sub = p.add_subparsers(dest="command", required=True)
    for mode in MODES:
        s = sub.add_parser(mode)
        s.add_argument("--config", help="TOML or JSON config file")
        s.add_argument("--preset", choices=PRESET_NAMES)
        s.add_argument("--out")
        s.add_argument("--seed", type=int)
        s.add_argument("--workers", type=int)
    s = sub.add_parser("preset", help="run a bundled example pipeline")
    s.add_argument("name", choices=("example-6.1", "example-6.2", "example-6.3"))
    s.add_argument("--out", default="mskam-out")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=int, default=1)
    s = sub.add_parser("emit-config", help="print the resolved config")
    s.add_argument("--config", required=True)
    s.add_argument("--format", choices=("toml", "json"), default="toml")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        if args.command == "preset":
            run_preset(args.name, args.out, args.seed, args.workers)
            return EXIT_OK
        if args.command == "emit-config":
            sys.stdout.write(emit_config(load_config(args.config), args.format))
            return EXIT_OK
        if args.config:
            cfg = load_config(args.config)
            data = cfg.to_dict()
        else:
            data = apply_env({}, os.environ)
        data["mode"] = args.command
        for key in ("preset", "out", "seed", "workers"):
            v = getattr(args, key)
            if v is not None:
                data[key] = v
        cfg = parse_config(data)
        run_config(cfg)
    except PipelineError as exc:
        print(f"mskam: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"mskam: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
