"""``djet`` command-line front end."""
import argparse
import dataclasses
import platform
import sys
import warnings
from dataclasses import dataclass, fields
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from ._kernels import BACKEND
from .corpus import BUILTIN_INPUTS, DEFAULT_J, builtin_field, fat_cantor_cells, fat_cantor_measure
from .difference_quotients import OffGridStepError, jet_of_quotients, step_schedule
from .diffuse_jets import estimate_diffuse_jet
from .dsolution import UnconvergedEstimateError, convergence_diagnostics, residual, run_approximation
from .io import read_field_csv, write_estimate, write_field_csv, write_json, write_trend_csv
from .mollifier import GridResolutionError, assemble
from .sampled_fields import GridDomain, SampledField, measure_of
from .systems import builtin_systems, get_system
from .tensor_frames import Frame
from .young_measures import BinScheme

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3
EXIT_RESIDUAL = 4


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    input: str = "sin"
    system: str = "derivative-zero"
    p: int = 1
    eps: float = 0.1
    lr: float = None
    out: str = "djet-out"
    seed: int = 0
    frame: str = "standard"
    cells: int = 3**9
    lo: float = 0.0
    hi: float = 1.0
    J: int = DEFAULT_J
    h0_cells: int = 3**6
    decay: str = "1/3"
    steps: int = 7
    nu_max: int = 6
    eps_rule: str = "harmonic"
    rho_tol: float = 1e-3
    tau: float = 0.05
    tau_inf: float = 0.05
    mass_budget: float = None
    residual_tol: float = None
    bins: int = None
    window: int = 0
    resample: bool = False
    cutoff: str = "exp"
    allow_unconverged: bool = False

    def validate(self):
        for name in ("eps", "rho_tol", "tau", "tau_inf"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("mass_budget", "residual_tol"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigError(f"{name} must be positive")
        if self.p < 1:
            raise ConfigError("p must be at least 1")
        if self.lr is not None and self.lr < 1:
            raise ConfigError("lr must be at least 1")
        if self.cells < 1 or self.hi <= self.lo:
            raise ConfigError("grid needs cells >= 1 and hi > lo")
        if self.steps < 3:
            raise ConfigError("steps must be at least 3")
        if not 1 <= self.nu_max <= self.steps:
            raise ConfigError(f"nu_max must lie in [1, steps={self.steps}]")
        if self.frame not in ("standard", "random"):
            raise ConfigError("frame must be 'standard' or 'random'")
        if self.cutoff not in ("exp", "poly"):
            raise ConfigError("cutoff must be 'exp' or 'poly'")
        d = self.decay_value()
        if not 0 < d < 1:
            raise ConfigError("decay must lie in (0, 1)")
        self.eps_rule_fn()
        return self

    def decay_value(self):
        try:
            return float(Fraction(self.decay))
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"decay {self.decay!r} is not a number") from exc

    def eps_rule_fn(self):
        """``harmonic`` gives 1/nu; ``geometric:E0:RATIO`` gives E0 * RATIO**(nu - 1)."""
        if self.eps_rule == "harmonic":
            return lambda nu: 1.0 / nu
        if self.eps_rule.startswith("geometric:"):
            try:
                e0, ratio = (float(v) for v in self.eps_rule.split(":")[1:])
            except ValueError as exc:
                raise ConfigError(f"eps_rule {self.eps_rule!r}: expected geometric:E0:RATIO") from exc
            if not (e0 > 0 and 0 < ratio < 1):
                raise ConfigError("geometric eps rule needs E0 > 0 and 0 < RATIO < 1")
            return lambda nu: e0 * ratio ** (nu - 1)
        raise ConfigError(f"unknown eps_rule {self.eps_rule!r}")

    def to_dict(self):
        return dataclasses.asdict(self)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_OPTIONAL_FLOATS = {"lr", "mass_budget", "residual_tol"}
_OPTIONAL_INTS = {"bins"}


def _coerce(key, raw):
    kind = _FIELD_TYPES[key]
    text = str(raw).strip()
    if key in _OPTIONAL_FLOATS | _OPTIONAL_INTS and text.lower() in ("", "none"):
        return None
    try:
        if key in _OPTIONAL_INTS or kind is int:
            return int(text)
        if key in _OPTIONAL_FLOATS or kind is float:
            return float(text)
        if kind is bool:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
    except ValueError as exc:
        raise ConfigError(f"config key {key}: cannot parse {text!r}") from exc
    return text


def parse_config_text(text):
    """``key = value`` lines; ``#`` starts a comment; keys accept dashes for underscores."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def build_config(args):
    values = {}
    if args.config:
        try:
            values.update(parse_config_text(Path(args.config).read_text()))
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
    for key in ("input", "system", "p", "eps", "lr", "out", "seed"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    for item in args.set or ():
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected key=value")
        key, value = item.split("=", 1)
        key = key.strip().replace("-", "_")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"--set: unknown key {key!r}")
        values[key] = _coerce(key, value)
    return RunConfig(**values).validate()


def provenance(cfg, command):
    import scipy

    try:
        import numba

        numba_version = numba.__version__
    except ImportError:
        numba_version = None
    return {
        "command": command,
        "config": cfg.to_dict(),
        "versions": {
            "djet": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "numba": numba_version,
        },
        "kernel_backend": BACKEND,
    }


# --- building blocks ------------------------------------------------------------


def load_input(cfg):
    if cfg.input in BUILTIN_INPUTS:
        dom = GridDomain.box([cfg.lo], [cfg.hi], cfg.cells)
        return builtin_field(cfg.input, dom, cfg.J)
    path = Path(cfg.input)
    if not path.exists():
        raise ConfigError(f"input {cfg.input!r} is neither a built-in ({', '.join(BUILTIN_INPUTS)}) nor a file")
    try:
        return read_field_csv(path)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def make_frame(cfg, u):
    vs = u.value_shape
    N = 1 if vs == () else vs[0]
    if cfg.frame == "random":
        return Frame.random(N, u.domain.n, np.random.default_rng(cfg.seed))
    return Frame.standard(N, u.domain.n)


def make_schedule(cfg, u):
    g = u.domain.g
    try:
        return step_schedule(cfg.p, cfg.h0_cells * g, cfg.decay_value(), cfg.steps, g)
    except (ValueError, OffGridStepError) as exc:
        raise ConfigError(f"schedule precondition violated: {exc}") from exc


def make_system(cfg, u):
    vs = u.value_shape
    N = 1 if vs == () else vs[0]
    try:
        F = get_system(cfg.system, n=u.domain.n, N=N)
    except KeyError as exc:
        raise ConfigError(exc.args[0]) from exc
    if F.p > cfg.p:
        raise ConfigError(f"system {F.name} has order {F.p} but p={cfg.p}")
    return F


def make_estimate(cfg, u, frame, schedule, scheme=None):
    if scheme is None and cfg.bins is not None:
        scheme = BinScheme.fit(jet_of_quotients(u, frame, schedule[0], resample=cfg.resample), bins=cfg.bins)
    return estimate_diffuse_jet(u, frame, schedule, rho_tol=cfg.rho_tol, scheme=scheme,
                                window=cfg.window or None, resample=cfg.resample)


def _estimate_summary(est):
    d = est.trace_dict()
    d["inf_mass_mean"] = [float(est.measure.inf_mass(f).mean()) for f in range(est.measure.nfactors)]
    return d


# --- commands ---------------------------------------------------------------------


def cmd_diffuse_jet(cfg, out):
    u = load_input(cfg)
    frame = make_frame(cfg, u)
    est = make_estimate(cfg, u, frame, make_schedule(cfg, u))
    write_estimate(out, est)
    report = {"provenance": provenance(cfg, "diffuse-jet"), "estimate": _estimate_summary(est)}
    if cfg.input == "fat-cantor-indicator":
        report["fat_cantor"] = _fat_cantor_summary(cfg, u, est)
    write_json(out / "report.json", report)
    _say(f"rho trace: {', '.join(f'{r:.3g}' for r in est.rho_trace)}")
    if not est.converged:
        _say(f"not converged: {est.diagnostic}")
        return EXIT_CONVERGENCE
    _say("converged")
    return EXIT_OK


def _fat_cantor_summary(cfg, u, est):
    K = fat_cantor_cells(u.domain, cfg.J).mask[u.domain.mask]
    inf = est.measure.inf_mass(0)
    return {
        "measure_K_exact": float(fat_cantor_measure(cfg.J)),
        "measure_K_cells": float(K.sum() * u.domain.cell_volume),
        "frac_K_cells_inf_mass_ge_0.9": float((inf[K] >= 0.9).mean()) if K.any() else None,
    }


def mollify_step(cfg, u):
    """The finest schedule entry doubles as the jet step of a single mollification."""
    return make_schedule(cfg, u)[-1]


def cmd_mollify(cfg, out):
    u = load_input(cfg)
    frame = make_frame(cfg, u)
    H = mollify_step(cfg, u)
    report = {"provenance": provenance(cfg, "mollify")}
    try:
        res = assemble(u, frame, H, cfg.eps, r=cfg.lr, cutoff=cfg.cutoff)
    except GridResolutionError as exc:
        report["error"] = {"inequality": exc.inequality, "detail": exc.detail}
        write_json(out / "report.json", report)
        _say(f"grid too coarse for eps={cfg.eps}: {exc}")
        return EXIT_CONVERGENCE
    (out / "mollifier.json").write_text(res.to_json() + "\n")
    report.update(bounds=res.bounds, passed=res.passed, trace=res.trace, eps_internal=res.eps_internal)
    write_json(out / "report.json", report)
    write_field_csv(out / "u_nu.csv", _sampled(res, 0))
    _say(f"bounds: {_fmt_bounds(res.bounds)}")
    return EXIT_OK if res.passed else EXIT_CONVERGENCE


def _sampled(res, k):
    dom = res.domain
    vals = res.sample(k)
    full = np.zeros(dom.shape + vals.shape[1:])
    full[dom.mask] = vals
    return SampledField(dom, full.reshape(dom.shape + (-1,)))


def _fmt_bounds(b):
    return ", ".join(f"{k}={v:.3g}" for k, v in sorted(b.items()) if isinstance(v, (int, float)))


def _residual_stage(cfg, u, est, F, out, report):
    if not est.converged and not cfg.allow_unconverged:
        report["error"] = {"stage": "estimate", "detail": est.diagnostic}
        write_json(out / "report.json", report)
        _say(f"diffuse-jet estimate not converged: {est.diagnostic}")
        return None, EXIT_CONVERGENCE
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = residual(u, est, F, tau=cfg.tau, tol=cfg.residual_tol, mass_budget=cfg.mass_budget,
                       allow_unconverged=cfg.allow_unconverged)
    write_field_csv(out / "residual.csv", res.values)
    report["residual"] = {
        "tol": res.tol,
        "offending_measure": res.offending_measure,
        "mass_budget": res.mass_budget,
        "passed": res.passed,
        "estimate_converged": est.converged,
    }
    _say(f"residual offending measure {res.offending_measure:.4g} (budget {res.mass_budget:.4g})")
    return res, EXIT_OK


def cmd_check_dsolution(cfg, out):
    u = load_input(cfg)
    F = make_system(cfg, u)
    frame = make_frame(cfg, u)
    est = make_estimate(cfg, u, frame, make_schedule(cfg, u))
    write_estimate(out, est)
    report = {"provenance": provenance(cfg, "check-dsolution"), "estimate": _estimate_summary(est)}
    res, code = _residual_stage(cfg, u, est, F, out, report)
    if res is None:
        return code
    write_json(out / "report.json", report)
    if not res.passed:
        _say("not a D-solution at this resolution")
        return EXIT_RESIDUAL
    _say("D-solution check passed")
    return EXIT_OK


def cmd_approximate(cfg, out):
    u = load_input(cfg)
    F = make_system(cfg, u)
    frame = make_frame(cfg, u)
    schedule = make_schedule(cfg, u)
    est = make_estimate(cfg, u, frame, schedule)
    write_estimate(out, est)
    report = {"provenance": provenance(cfg, "approximate"), "estimate": _estimate_summary(est)}
    res, code = _residual_stage(cfg, u, est, F, out, report)
    if res is None:
        return code
    run = run_approximation(u, F, frame, schedule[-cfg.nu_max:], est, eps_rule=cfg.eps_rule_fn(),
                            cutoff=cfg.cutoff)
    if not run.completed():
        report["runs"] = run.report()
        write_json(out / "report.json", report)
        _say("no approximation step completed")
        return EXIT_CONVERGENCE
    diag = convergence_diagnostics(run, est, tau_inf=cfg.tau_inf, mass_budget=cfg.mass_budget)
    report["runs"] = run.report(diag)
    summary = {k: v for k, v in diag.items() if k != "exceptional_set"}
    if cfg.input == "fat-cantor-indicator":
        K = fat_cantor_cells(u.domain, cfg.J)
        summary["measure_K_cells"] = measure_of(K)
        summary["measure_E_symdiff_K"] = measure_of(diag["exceptional_set"] ^ K)
    report["diagnostics"] = summary
    write_json(out / "report.json", report)
    write_trend_csv(out / "trends.csv", {
        "off_E": diag["off_E_trend"],
        "max_f_on_E": diag["max_f_on_E"],
        "l1_f": diag["l1_f"],
        "u_offending": diag["u_ae_trend"],
        **{f"mode_triple_eps{e}": v["trend"] for e, v in diag["mode_triple"].items()},
    })
    for s in run.completed():
        write_field_csv(out / f"f_nu{s.nu}.csv", s.f_nu)
    _say(f"f_nu off E trend: {', '.join(f'{t:.3g}' for t in diag['off_E_trend'])}")
    _say(f"max |f_nu| on E: {', '.join(f'{t:.3g}' for t in diag['max_f_on_E'])}")
    if not diag["off_E_passed"]:
        return EXIT_RESIDUAL
    return EXIT_OK


EXAMPLES = {
    "cantor": ("approximate", {"input": "cantor-function", "system": "derivative-zero"}),
    "fat-cantor": ("approximate", {"input": "fat-cantor-indicator", "system": "derivative-zero"}),
    "sin": ("diffuse-jet", {"input": "sin"}),
    "linear": ("check-dsolution", {"input": "linear", "system": "unit-slope"}),
}


def cmd_example(cfg, out, name):
    if name is None:
        for key, (cmd, over) in EXAMPLES.items():
            print(f"{key:12s} {cmd} " + " ".join(f"--{k} {v}" for k, v in over.items()))
        return EXIT_OK
    if name not in EXAMPLES:
        raise ConfigError(f"unknown example {name!r}; choose from {', '.join(EXAMPLES)}")
    cmd, over = EXAMPLES[name]
    cfg = dataclasses.replace(cfg, **over).validate()
    return COMMANDS[cmd](cfg, out)


COMMANDS = {
    "diffuse-jet": cmd_diffuse_jet,
    "mollify": cmd_mollify,
    "check-dsolution": cmd_check_dsolution,
    "approximate": cmd_approximate,
}

_QUIET = [False]


def _say(msg):
    if not _QUIET[0]:
        print(msg)


def build_parser():
    parser = argparse.ArgumentParser(prog="djet", description="Diffuse jets of sampled maps.")
    parser.add_argument("--version", action="version", version=f"djet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*COMMANDS, "example"):
        sp_ = sub.add_parser(name)
        if name == "example":
            sp_.add_argument("name", nargs="?")
        sp_.add_argument("--config", help="key=value file mirroring the flags")
        sp_.add_argument("--input", help=f"built-in ({', '.join(BUILTIN_INPUTS)}) or field CSV path")
        sp_.add_argument("--system", help=f"one of {', '.join(builtin_systems())}")
        sp_.add_argument("--p", type=int)
        sp_.add_argument("--eps", type=float)
        sp_.add_argument("--lr", type=float)
        sp_.add_argument("--out")
        sp_.add_argument("--seed", type=int)
        sp_.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
        sp_.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    _QUIET[0] = args.quiet
    try:
        cfg = build_config(args)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "example":
            return cmd_example(cfg, out, args.name)
        return COMMANDS[args.command](cfg, out)
    except (ConfigError, UnconvergedEstimateError) as exc:
        print(f"djet: {exc}", file=sys.stderr)
        return EXIT_CONFIG if isinstance(exc, ConfigError) else EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
