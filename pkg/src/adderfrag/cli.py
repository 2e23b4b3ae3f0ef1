"""Command-line driver: ``adderfrag COMMAND --config FILE [--out DIR]``.

Configs are INI files (see the README table). Every key is typed and
unknown sections or keys are rejected, so typos fail loudly.

Exit codes: 0 success, 1 invalid configuration, 2 model hypothesis
violated, 3 solver did not converge, 4 missing prerequisite artifact.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, ConvergenceError, DomainError, HypothesisError
from .grid import Grid1D, GridFunction

log = logging.getLogger("adderfrag")

EXIT_OK, EXIT_CONFIG, EXIT_HYPOTHESIS, EXIT_CONVERGENCE, EXIT_PREREQ = 0, 1, 2, 3, 4


class MissingArtifact(RuntimeError):
    """A command needs the output of an earlier one."""


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

_OPT = object()  # marker: optional key without default


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "yes", "true", "on"):
        return True
    if low in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


SCHEMA: dict[str, dict[str, tuple]] = {
    "kernel": {
        "type": (str, "equal_mitosis", "equal_mitosis | atoms | uniform"),
        "atoms": (str, _OPT, "z:w pairs, comma separated (type = atoms)"),
        "theta": (float, _OPT, "lower end of the uniform density"),
        "eta": (float, _OPT, "upper end of the uniform density"),
        "n_gauss": (int, 32, "Gauss nodes on a fragmentation density"),
    },
    "rate": {
        "form": (str, "hyperbolic", "hyperbolic | constant | power | tabulated"),
        "b": (float, 1.0, "support edge of B"),
        "c": (float, 2.0, "rate constant"),
        "p": (float, 1.0, "exponent (form = power)"),
        "table_a": (_floats, _OPT, "increments of the tabulated rate"),
        "table_b": (_floats, _OPT, "rate values at table_a"),
    },
    "solver": {
        "sigma": (float, 50.0, "truncation size"),
        "n": (int, 4096, "grid nodes"),
        "tol": (float, 1e-10, "L1 stopping tolerance"),
        "max_iter": (int, 10000, "iteration cap"),
        "initial": (str, "indicator", "indicator | triangle"),
        "sweep": (_floats, (), "extra truncation sizes for a sweep"),
        "laplace": (_bool, True, "write the Laplace-domain check"),
    },
    "transport": {
        "dt": (float, 1e-3, "time step"),
        "t_end": (float, 1.0, "final time"),
        "a_max": (float, 8.0, "largest increment"),
        "na": (int, 512, "increment nodes"),
        "s_min": (float, _OPT, "smallest birth size (default b_theta)"),
        "s_max": (float, 5.0, "largest birth size"),
        "ns": (int, 512, "birth-size nodes"),
        "initial": (str, "stationary", "stationary | perturbed | bump | zero"),
        "amplitude": (float, 0.5, "perturbation amplitude"),
        "center": (float, _OPT, "bump center in s"),
        "width": (float, _OPT, "bump width in s"),
        "every": (int, 10, "steps between trajectory rows"),
        "window": (_floats, (), "x_lo x_hi for the oscillation window"),
        "period_t_min": (float, 1.0, "start of the period fit"),
        "births": (str, "explicit", "explicit | implicit"),
    },
    "entropy": {
        "h": (str, "quadratic", "identity | abs | quadratic | tabulated"),
        "table_x": (_floats, _OPT, "abscissae of a tabulated H"),
        "table_h": (_floats, _OPT, "values of a tabulated H"),
        "dissipation": (_bool, True, "also compute D"),
    },
    "output": {
        "dir": (str, "out", "output directory"),
    },
    "sampling": {
        "seed": (int, 0, "generator seed"),
        "burn_in": (int, 1000, "discarded chain steps"),
        "n_samples": (int, 100000, "recorded chain steps"),
        "s0": (float, _OPT, "initial birth size (default 1 + b_theta)"),
        "one_step": (_bool, True, "run the one-step chi-square test"),
    },
}


@dataclass(frozen=True)
class RunConfig:
    """Typed view of a config file; ``section[key]`` returns None for unset optional keys."""

    values: dict
    source: str = "<defaults>"

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def model_digest(self) -> str:
        """Hash of the model sections, used to pair artifacts with the config that made them."""
        blob = json.dumps({k: self.values[k] for k in ("kernel", "rate", "solver")}, sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _line_of(text: str, section: str, key: str | None) -> int | None:
    current = None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if key is None and current == section:
                return no
        elif key is not None and current == section and line.split("=", 1)[0].strip().lower() == key:
            return no
    return None


def _where(src: str, text: str, section: str, key: str | None = None) -> str:
    no = _line_of(text, section, key)
    field = section if key is None else f"{section}.{key}"
    return f"{src}:{no}: [{field}]" if no else f"{src}: [{field}]"


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    values = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{_where(source, text, section)} unknown section; expected one of "
                              f"{', '.join(SCHEMA)}")
    for section, keys in SCHEMA.items():
        got = parser[section] if parser.has_section(section) else {}
        for key in got:
            if key not in keys:
                raise ConfigError(f"{_where(source, text, section, key)} unknown key; allowed: "
                                  f"{', '.join(keys)}")
        sec = {}
        for key, (kind, default, _doc) in keys.items():
            if key in got:
                raw = got[key]
                try:
                    sec[key] = kind(raw)
                except ValueError as exc:
                    raise ConfigError(f"{_where(source, text, section, key)} cannot read {raw!r}: {exc}") from None
            else:
                sec[key] = None if default is _OPT else default
        values[section] = sec
    return RunConfig(values, source)


def load_config(path: str | os.PathLike) -> RunConfig:
    """Read a config file; a bare name such as ``hyperbolic`` resolves to a shipped config."""
    p = Path(path)
    if not p.exists() and p.parent == Path(".") and p.suffix in ("", ".cfg"):
        shipped = resources.files("adderfrag") / "configs" / f"{p.stem}.cfg"
        if shipped.is_file():
            return parse_config(shipped.read_text(), f"adderfrag/configs/{p.stem}.cfg")
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


# --------------------------------------------------------------------------
# building model objects from a config
# --------------------------------------------------------------------------


def build_kernel(cfg: RunConfig):
    from .model import FragmentationKernel

    k = cfg["kernel"]
    kind = k["type"]
    if kind == "equal_mitosis":
        return FragmentationKernel.equal_mitosis()
    if kind == "atoms":
        if not k["atoms"]:
            raise ConfigError("[kernel.atoms] is required when type = atoms")
        try:
            pairs = [tuple(float(v) for v in item.split(":")) for item in k["atoms"].split(",") if item.strip()]
        except ValueError:
            raise ConfigError(f"[kernel.atoms] expects z:w pairs, got {k['atoms']!r}") from None
        if any(len(p) != 2 for p in pairs):
            raise ConfigError(f"[kernel.atoms] expects z:w pairs, got {k['atoms']!r}")
        return FragmentationKernel.from_atoms(pairs)
    if kind == "uniform":
        if k["theta"] is None or k["eta"] is None:
            raise ConfigError("[kernel] type = uniform needs theta and eta")
        return FragmentationKernel.uniform(k["theta"], k["eta"])
    raise ConfigError(f"[kernel.type] unknown kernel {kind!r}")


def build_rate(cfg: RunConfig):
    from .model import DivisionRate

    r = cfg["rate"]
    form = r["form"]
    if form == "hyperbolic":
        return DivisionRate.hyperbolic(r["c"], r["b"])
    if form == "constant":
        return DivisionRate.constant(r["c"], r["b"])
    if form == "power":
        return DivisionRate.power(r["c"], r["p"], r["b"])
    if form == "tabulated":
        if r["table_a"] is None or r["table_b"] is None:
            raise ConfigError("[rate] form = tabulated needs table_a and table_b")
        return DivisionRate.tabulated(r["table_a"], r["table_b"], r["b"])
    raise ConfigError(f"[rate.form] unknown form {form!r}")


def build_operator(cfg: RunConfig):
    from .operator import TransitionOperator

    try:
        kernel, rate = build_kernel(cfg), build_rate(cfg)
    except (ValueError, DomainError) as exc:
        if isinstance(exc, (ConfigError, HypothesisError)):
            raise
        raise ConfigError(f"invalid model parameters: {exc}") from None
    return TransitionOperator.build(kernel, rate, n_gauss=cfg["kernel"]["n_gauss"])


def build_h(cfg: RunConfig):
    from .entropy import get_h, h_tabulated

    e = cfg["entropy"]
    if e["h"] == "tabulated":
        if e["table_x"] is None or e["table_h"] is None:
            raise ConfigError("[entropy] h = tabulated needs table_x and table_h")
        return h_tabulated(e["table_x"], e["table_h"])
    try:
        return get_h(e["h"])
    except ValueError as exc:
        raise ConfigError(f"[entropy.h] {exc}") from None


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def _write_json(path: Path, data: dict) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_solve(cfg: RunConfig, out: Path) -> dict:
    """f.csv and eigen.json, plus sweep.csv and laplace.csv when enabled."""
    from .eigensolver import power_iterate, rho_identity_residual, sigma_sweep, sweep_to_csv
    from .laplace import laplace_profile

    op = build_operator(cfg)
    s = cfg["solver"]
    extra = {"config_digest": cfg.model_digest(), "b_theta": op.b_theta}
    try:
        res = power_iterate(op, s["sigma"], n=s["n"], tol=s["tol"], max_iter=s["max_iter"], initial=s["initial"])
    except ConvergenceError as exc:
        if exc.result is not None:
            exc.result.f.to_csv(out / "f_last.csv")
            exc.result.to_json(out / "eigen.json", op, extra)
        raise
    except DomainError as exc:
        raise ConfigError(f"[solver] {exc}") from None
    res.f.to_csv(out / "f.csv")
    extra["rho_identity_residual"] = rho_identity_residual(op, res)
    if s["laplace"]:
        prof = laplace_profile(res.f, op)
        prof.to_csv(out / "laplace.csv")
        extra["laplace_residual"] = prof.max_residual
    if s["sweep"]:
        rows = sigma_sweep(op, sorted(s["sweep"]), tol=s["tol"], max_iter=s["max_iter"])
        sweep_to_csv(rows, out / "sweep.csv")
    res.to_json(out / "eigen.json", op, extra)
    lo, hi = res.bounds(op)
    log.info("rho = %.10f (bounds %.6f .. %.6f), %d iterations", res.rho, lo, hi, res.iterations)
    return res.summary(op) | extra


def _load_f(cfg: RunConfig, out: Path, inline: bool):
    path = out / "f.csv"
    meta_path = out / "eigen.json"
    if not path.exists():
        if inline:
            log.info("no f.csv in %s; solving inline", out)
            cmd_solve(cfg, out)
        else:
            raise MissingArtifact(f"{path} not found; run `adderfrag solve` first or pass --inline-solve")
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        if meta.get("config_digest") not in (None, cfg.model_digest()):
            if inline:
                log.info("f.csv was produced by a different model; solving inline")
                cmd_solve(cfg, out)
            else:
                raise MissingArtifact(f"{path} was produced by a different model config; rerun `adderfrag solve`")
    return GridFunction.from_csv(path)


def cmd_reconstruct(cfg: RunConfig, out: Path, inline: bool = False) -> dict:
    """N.csv (long form, with a JSON header) from the stored fixed point."""
    from .reconstruct import boundary_residual, build_M, build_N

    op = build_operator(cfg)
    f = _load_f(cfg, out, inline)
    M = build_M(f, op.survivor)
    N = build_N(M)
    header = N.to_csv(out / "N.csv")
    summary = {
        "normalization": M.normalization,
        "integral_N": N.integrate(),
        "boundary_residual": boundary_residual(M, op),
        "header": os.path.basename(header),
    }
    _write_json(out / "reconstruct.json", summary)
    return summary


def _transport_setup(cfg: RunConfig, out: Path, inline: bool):
    from .eigensolver import power_iterate
    from .reconstruct import build_M
    from .transport import TransportScheme, initial_state

    op = build_operator(cfg)
    f = _load_f(cfg, out, inline)
    t = cfg["transport"]
    s_min = op.b_theta if t["s_min"] is None else t["s_min"]
    a_grid = Grid1D(0.0, t["a_max"], t["na"])
    s_grid = Grid1D(s_min, t["s_max"], t["ns"])
    guess = np.maximum(f.interpolate(s_grid.nodes), 0.0)
    if not np.any(guess > 0):
        guess = None
    try:
        res = power_iterate(op, s_grid.s_max, grid=s_grid, tol=1e-12,
                            initial="indicator" if guess is None else guess)
    except DomainError as exc:
        raise ConfigError(f"[transport] {exc}") from None
    M = build_M(res.f, op.survivor, a_grid)
    scheme = TransportScheme(op, a_grid, s_grid, t["dt"], births=t["births"])
    state = initial_state(t["initial"], M, amplitude=t["amplitude"], center=t["center"], width=t["width"])
    return op, M, scheme, state


def _evolve(cfg: RunConfig, out: Path, inline: bool, snapshots: int, with_entropy: bool):
    from .entropy import EntropyConfig
    from .transport import distance_observer, entropy_observer, run, window_observer

    op, M, scheme, state = _transport_setup(cfg, out, inline)
    t = cfg["transport"]
    observers = [distance_observer(M)]
    if with_entropy:
        # C is read off the initial data; 5% slack absorbs the scheme's edge error
        c0 = state.domination_ratio(M)
        ecfg = EntropyConfig(build_h(cfg), M, op, domination=1.05 * c0 if c0 > 0 else None)
        observers.append(entropy_observer(ecfg, cfg["entropy"]["dissipation"]))
    if t["window"]:
        if len(t["window"]) != 2:
            raise ConfigError("[transport.window] expects two numbers: x_lo x_hi")
        observers.append(window_observer(*t["window"]))
    snap = None
    if snapshots:
        snap_dir = out / "snapshots"
        snap_dir.mkdir(exist_ok=True)

        def snap(st):
            st.m.to_csv(snap_dir / f"m_{st.steps:07d}.csv")

    traj = run(state, t["t_end"], scheme, observers, every=t["every"], snapshot=snap, snapshot_every=snapshots)
    return traj


def cmd_evolve(cfg: RunConfig, out: Path, inline: bool = False, snapshots: int = 0) -> dict:
    """trajectory.csv, plus spectral.json when a window is configured."""
    from .transport import estimate_period

    traj = _evolve(cfg, out, inline, snapshots, with_entropy=True)
    traj.to_csv(out / "trajectory.csv")
    summary = {"rows": len(traj.rows), "t_end": traj.rows[-1]["t"],
               "final_dist_to_N": traj.rows[-1].get("dist_to_N")}
    if cfg["transport"]["window"]:
        d = estimate_period(traj.column("t"), traj.column("window"), t_min=cfg["transport"]["period_t_min"])
        period = {"oscillation_period": d.oscillation_period, "expected_period": d.expected_period,
                  "relative_error": d.relative_error, "damping": d.damping, "amplitude": d.amplitude,
                  "detected": d.detected}
        _write_json(out / "spectral.json", period)
        summary["period"] = d.oscillation_period
    return summary


def cmd_entropy(cfg: RunConfig, out: Path, inline: bool = False, snapshots: int = 0) -> dict:
    """entropy.csv with t, H, D and the renormalised weighted mass."""
    traj = _evolve(cfg, out, inline, snapshots, with_entropy=True)
    cols = ("t", "weighted_mass", "H", "D")
    with open(out / "entropy.csv", "w", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for r in traj.rows:
            row = dict(r, weighted_mass=math.exp(-r["t"]) * r["weighted_mass"])
            fh.write(",".join("%.17g" % row.get(c, math.nan) for c in cols) + "\n")
    H = traj.column("H")
    D = traj.column("D")
    return {"H_first": H[0], "H_last": H[-1], "max_H_increase": float(np.max(np.diff(H), initial=0.0)),
            "min_D": float(np.nanmin(D)) if np.isfinite(D).any() else math.nan}


def cmd_sample(cfg: RunConfig, out: Path, inline: bool = False, seed: int | None = None) -> dict:
    """samples.csv and ks.json from the birth-size chain."""
    from .montecarlo import ChainSampler, ks_report, one_step_test, sample_chain, samples_to_csv

    op = build_operator(cfg)
    f = _load_f(cfg, out, inline)
    sp = cfg["sampling"]
    seed = sp["seed"] if seed is None else seed
    sampler = ChainSampler.from_operator(op, seed=seed, burn_in=sp["burn_in"], n_samples=sp["n_samples"])
    s0 = sp["s0"] if sp["s0"] is not None else 1.0 + op.b_theta
    x = sample_chain(sampler, s0)
    samples_to_csv(x, out / "samples.csv")
    extra = {"s0": s0, "b_theta": op.b_theta}
    if sp["one_step"] and sp["n_samples"] > 0:
        t = one_step_test(sampler, op, f, n=sp["n_samples"])
        extra["one_step_chi2"] = t.statistic
        extra["one_step_pvalue"] = t.pvalue
        extra["one_step_bins"] = t.bins
    return ks_report(x, f, sampler, out / "ks.json", extra)


def cmd_validate(cfg: RunConfig, out: Path | None = None) -> dict:
    """Config and hypothesis check only; prints the report."""
    from .model import check_hypotheses

    try:
        kernel, rate = build_kernel(cfg), build_rate(cfg)
    except (ValueError, DomainError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid model parameters: {exc}") from None
    report = check_hypotheses(kernel, rate)
    report.raise_if_failed()
    print(report.summary())
    return {"ok": True, "b_theta": report.b * report.theta / (1.0 - report.theta)}


COMMANDS = ("solve", "reconstruct", "evolve", "entropy", "sample", "validate")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adderfrag", description="Adder-model eigenproblem and transport runs.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="INI config file or the name of a shipped config (hyperbolic)")
    p.add_argument("--out", help="output directory (overrides [output] dir)")
    p.add_argument("--seed", type=int, help="overrides [sampling] seed")
    p.add_argument("--snapshots", type=int, default=0, metavar="K", help="dump the state every K steps")
    p.add_argument("--inline-solve", action="store_true", help="solve first when f.csv is missing")
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s",
                        stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        out = Path(args.out or cfg["output"]["dir"])
        out.mkdir(parents=True, exist_ok=True)
        if args.snapshots < 0:
            raise ConfigError("--snapshots must be >= 0")
        cmd = args.command
        if cmd == "solve":
            summary = cmd_solve(cfg, out)
        elif cmd == "reconstruct":
            summary = cmd_reconstruct(cfg, out, args.inline_solve)
        elif cmd == "evolve":
            summary = cmd_evolve(cfg, out, args.inline_solve, args.snapshots)
        elif cmd == "entropy":
            summary = cmd_entropy(cfg, out, args.inline_solve, args.snapshots)
        elif cmd == "sample":
            summary = cmd_sample(cfg, out, args.inline_solve, args.seed)
        else:
            summary = cmd_validate(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DomainError as exc:
        print(f"domain error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HypothesisError as exc:
        print(f"hypothesis error: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except ConvergenceError as exc:
        print(f"convergence error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except MissingArtifact as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_PREREQ
    if not args.quiet:
        print(json.dumps(summary, indent=2, sort_keys=True, default=float))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
