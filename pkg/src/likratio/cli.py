"""Command-line entry point.

Every subcommand takes its settings from an optional flat config file
(``key = value`` per line, ``#`` starts a comment) and from ``--key value``
flags, which win over the file. Exit status is 0 on success, 2 for a bad
configuration and 1 when the computation itself fails.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from . import experiments, moments, particles, reference
from .core import PeriodicGrid, ScalarCovariance
from .mh import REFRESH_MODES, MHConfig, exact_loglik, particle_loglik, run_chain, write_chain_csv

__all__ = ["main", "build_parser", "ConfigError", "COMMANDS"]


class ConfigError(Exception):
    """Bad or incomplete configuration; maps to exit status 2."""


REQUIRED = object()


@dataclass(frozen=True)
class Key:
    name: str
    parse: Callable[[str], Any]
    default: Any
    help: str

    @property
    def required(self) -> bool:
        return self.default is REQUIRED


# ---------------------------------------------------------------------------
# value parsers


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int(text: str) -> int:
    # accept 1e5 style counts as long as they are integral
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        value = float(text)
        if not value.is_integer():
            raise ValueError(f"not an integer: {text!r}") from None
        return int(value)


def _seed(text: str) -> int:
    value = _int(text)
    if value < 0:
        raise ValueError("seed must be nonnegative")
    return value


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(" ", "").split(",") if v)


def _ints(text: str) -> tuple[int, ...]:
    return tuple(_int(v) for v in text.replace(" ", "").split(",") if v)


def _choice(*options: str):
    def parse(text: str) -> str:
        text = text.strip()
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text
    parse.__name__ = "choice"
    return parse


def _optional(parse):
    def inner(text: str):
        return None if text.strip().lower() in ("", "none") else parse(text)
    return inner


# ---------------------------------------------------------------------------
# key tables

GRID = [
    Key("length", float, 10.0, "domain length L"),
    Key("cells", _int, 100, "number of grid cells N"),
]
IC = [Key("ic", str, "cosine", "initial condition: 'cosine' or path to a field CSV")]
RUNTIME = [
    Key("chunk_size", _int, particles.DEFAULT_CHUNK_SIZE, "particles per RNG chunk"),
    Key("threads", _int, 1, "worker threads"),
]
MOMENT = [
    Key("p", _int, REQUIRED, "moment order"),
    Key("sigma_eta", float, REQUIRED, "observation noise standard deviation"),
    Key("sigma_delta1", float, REQUIRED, "solver noise standard deviation, numerator"),
    Key("sigma_delta2", float, REQUIRED, "solver noise standard deviation, denominator"),
    Key("n", _int, 1, "dimension"),
    Key("drho1", float, 0.0, "residual offset, numerator"),
    Key("drho2", float, 0.0, "residual offset, denominator"),
    Key("mu1", float, 0.0, "solver error mean, numerator"),
    Key("mu2", float, 0.0, "solver error mean, denominator"),
]


def _sweep_keys(d_den: float) -> list[Key]:
    return [
        Key("seed", _seed, REQUIRED, "master seed"),
        *GRID,
        Key("t", float, 10.0, "final time"),
        Key("d_true", float, 0.1, "diffusion coefficient of the reference solution"),
        Key("d_num", float, 0.1, "diffusion coefficient, numerator"),
        Key("d_den", float, d_den, "diffusion coefficient, denominator"),
        Key("particle_counts", _ints, experiments.DEFAULT_PARTICLE_COUNTS,
            "comma-separated ensemble sizes"),
        Key("sigma_eta_list", _floats, experiments.DEFAULT_SIGMA_ETA,
            "comma-separated observation noise levels"),
        Key("replications", _int, 1000, "replications per (sigma_eta, P) pair"),
        Key("reference_dt", float, 0.1, "time step of the reference solver"),
        Key("particle_dt", _optional(float), None, "particle time step (default: one step)"),
        Key("fixed_observation", _bool, False, "reuse one observation per sigma_eta"),
        Key("shared_forward", _bool, False, "use one forward run for both parameters"),
        *RUNTIME,
        *IC,
    ]


COMMANDS: dict[str, tuple[str, list[Key]]] = {
    "solve-ref": ("deterministic reference solution", [
        *GRID,
        Key("d", float, 0.1, "diffusion coefficient"),
        Key("t", float, 10.0, "final time"),
        Key("dt", float, 0.1, "time step"),
        Key("method", _choice("fd", "exact"), "fd", "'fd' (Crank-Nicolson) or 'exact'"),
        *IC,
    ]),
    "solve-mc": ("particle solution with per-cell variances", [
        Key("seed", _seed, REQUIRED, "master seed"),
        *GRID,
        Key("particles", _int, REQUIRED, "ensemble size P"),
        Key("d", float, 0.1, "diffusion coefficient"),
        Key("t", float, 10.0, "final time"),
        Key("dt", _optional(float), None, "time step (default: one step)"),
        Key("variance", _choice("plugin", "replicates"), "plugin", "cell variance estimator"),
        Key("replicates", _int, 16, "extra runs for variance=replicates"),
        *RUNTIME,
        *IC,
    ]),
    "observe": ("reference solution plus Gaussian noise", [
        Key("seed", _seed, REQUIRED, "master seed"),
        *GRID,
        Key("sigma_eta", float, REQUIRED, "observation noise standard deviation"),
        Key("d", float, 0.1, "diffusion coefficient"),
        Key("t", float, 10.0, "final time"),
        Key("dt", float, 0.1, "time step of the reference solver"),
        *IC,
    ]),
    "moment": ("closed-form raw moment of the likelihood ratio", MOMENT),
    "moment-mc": ("sampled raw moment of the likelihood ratio", [
        Key("seed", _seed, REQUIRED, "master seed"),
        *MOMENT,
        Key("samples", _int, 10**6, "number of draws"),
        Key("chunk_size", _int, 1 << 16, "draws per RNG chunk"),
        Key("threads", _int, 1, "worker threads"),
    ]),
    "sweep-likelihood": ("ratio of mean likelihoods over a sweep", _sweep_keys(0.08)),
    "sweep-ratio": ("mean likelihood ratio over a sweep", _sweep_keys(0.1)),
    "sweep-acceptance": ("mean truncated ratio over a sweep", _sweep_keys(0.1)),
    "mh": ("Metropolis-Hastings chain over D", [
        Key("seed", _seed, REQUIRED, "chain seed"),
        Key("observation_seed", _optional(_seed), None, "observation seed (default: seed)"),
        *GRID,
        Key("sigma_eta", float, REQUIRED, "observation noise standard deviation"),
        Key("t", float, 10.0, "final time"),
        Key("d_true", float, 0.1, "diffusion coefficient of the observed data"),
        Key("reference_dt", float, 0.1, "time step of the reference solver"),
        Key("forward", _choice("particle", "exact"), "particle", "likelihood forward model"),
        Key("particles", _int, 100, "ensemble size P for forward=particle"),
        Key("particle_dt", _optional(float), None, "particle time step (default: one step)"),
        Key("proposal_std", float, 0.06, "random-walk step size"),
        Key("chain_length", _int, 10000, "number of states"),
        Key("d_min", float, 0.01, "lower end of the uniform prior"),
        Key("d_max", float, 1.0, "upper end of the uniform prior"),
        Key("refresh_mode", _choice(*REFRESH_MODES), "refresh-both",
            "re-simulate the current state or keep its estimate"),
        *RUNTIME,
        *IC,
    ]),
}


# ---------------------------------------------------------------------------
# parsing


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="likratio",
        description="Particle-solver likelihood ratios for periodic diffusion.",
        allow_abbrev=False,
    )
    sub = parser.add_subparsers(dest="command", metavar="command")
    for name, (summary, keys) in COMMANDS.items():
        p = sub.add_parser(name, help=summary, description=summary, allow_abbrev=False)
        p.add_argument("--config", metavar="PATH", help="key = value config file")
        p.add_argument("--out", metavar="PATH", help="output file (default: stdout)")
        group = p.add_argument_group("config keys (file key = flag without dashes)")
        for key in keys:
            default = "required" if key.required else key.default
            group.add_argument(_flag(key.name), dest=key.name, default=None, metavar="VALUE",
                               help=f"{key.help} [{key.name}; default: {default}]")
    return parser


def read_config(path) -> dict[str, str]:
    """``key = value`` pairs of a config file; dashes in keys become underscores."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read config file {path}: {err}") from None
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve(command: str, file_values: dict[str, str], flags: dict[str, str | None]) -> dict:
    """Merge config file and flags, parse values and check required keys."""
    keys = {k.name: k for k in COMMANDS[command][1]}
    unknown = sorted(set(file_values) - set(keys))
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(unknown)} for {command}; "
                          f"valid keys: {', '.join(keys)}")
    raw = dict(file_values)
    raw.update({k: v for k, v in flags.items() if v is not None})
    values = {}
    for name, key in keys.items():
        if name in raw:
            try:
                values[name] = key.parse(raw[name])
            except ValueError as err:
                raise ConfigError(f"bad value for {name}: {err}") from None
        elif key.required:
            raise ConfigError(f"missing required key: {name}")
        else:
            values[name] = key.default
    return values


# ---------------------------------------------------------------------------
# commands
#
# Each builder validates and returns a zero-argument job; a ValueError raised
# while building is a configuration error, one raised by the job is not.


def _grid(v) -> PeriodicGrid:
    return PeriodicGrid(v["length"], v["cells"])


def _ic(v) -> reference.InitialCondition:
    if v["ic"] == "cosine":
        return reference.CosineBump()
    return reference.TabulatedDensity(reference.read_field_csv(v["ic"], v["length"]))


def _build_solve_ref(v):
    ic, grid = _ic(v), _grid(v)
    if v["method"] == "exact":
        return lambda: reference.write_field_csv(reference.exact_solution(ic, v["d"], v["t"], grid))
    cfg = reference.ReferenceConfig(v["d"], v["t"], v["dt"], grid)
    return lambda: reference.write_field_csv(reference.fd_solve(ic, cfg))


def _build_solve_mc(v):
    ic = _ic(v)
    cfg = particles.ParticleConfig(v["particles"], v["d"], v["t"], _grid(v), v["seed"], v["dt"],
                                   v["chunk_size"], v["threads"])
    return lambda: particles.write_forward_csv(
        particles.forward(v["d"], cfg, ic, variance=v["variance"], replicates=v["replicates"]))


def _build_observe(v):
    ic = _ic(v)
    cfg = reference.ReferenceConfig(v["d"], v["t"], v["dt"], _grid(v))
    noise = ScalarCovariance(v["sigma_eta"] ** 2, v["cells"])

    def job():
        obs = reference.synthesize_observation(reference.fd_solve(ic, cfg), noise, v["seed"])
        return reference.write_field_csv(obs.field)
    return job


def _moment_query(v) -> moments.MomentQuery:
    return moments.scalar_query(v["p"], v["sigma_eta"], v["sigma_delta1"], v["sigma_delta2"],
                                v["n"], v["drho1"], v["drho2"], v["mu1"], v["mu2"])


def _build_moment(v):
    q = _moment_query(v)

    def job():
        result = moments.ratio_moment(q)
        text = moments.write_moment_csv([result])
        value = format(result.moment, ".17g") if result.exists else "inf"
        return text + f"# moment={value}\n"
    return job


def _build_moment_mc(v):
    q = _moment_query(v)
    if v["samples"] < 2:
        raise ValueError("samples must be at least 2")
    if v["chunk_size"] < 1 or v["threads"] < 1:
        raise ValueError("chunk_size and threads must be positive")

    def job():
        est = moments.empirical_ratio_moment(q, v["samples"], v["seed"], v["chunk_size"],
                                             v["threads"])
        return (f"estimate,standard_error,samples\n"
                f"{est.estimate:.17g},{est.standard_error:.17g},{v['samples']}\n")
    return job


def _build_sweep(kind):
    def build(v):
        fields = {k: val for k, val in v.items() if k != "ic"}
        cfg = experiments.SweepConfig(**fields, ic=_ic(v))

        def job():
            return experiments.write_csv(experiments.run_sweep(cfg, kind))
        return job
    return build


def _build_mh(v):
    ic, grid = _ic(v), _grid(v)
    obs_seed = v["seed"] if v["observation_seed"] is None else v["observation_seed"]
    ref_cfg = reference.ReferenceConfig(v["d_true"], v["t"], v["reference_dt"], grid)
    noise = ScalarCovariance(v["sigma_eta"] ** 2, v["cells"])
    if v["forward"] == "particle":
        pcfg = particles.ParticleConfig(v["particles"], v["d_true"], v["t"], grid, 0,
                                        v["particle_dt"], v["chunk_size"], v["threads"])
    # validate the chain settings before running anything
    MHConfig(lambda D, s: None, v["proposal_std"], v["chain_length"], v["seed"],
             v["d_min"], v["d_max"], v["refresh_mode"])

    def job():
        obs = reference.synthesize_observation(reference.fd_solve(ic, ref_cfg), noise, obs_seed)
        if v["forward"] == "particle":
            loglik = particle_loglik(obs, pcfg, ic)
        else:
            loglik = exact_loglik(obs, ic, v["t"])
        cfg = MHConfig(loglik, v["proposal_std"], v["chain_length"], v["seed"],
                       v["d_min"], v["d_max"], v["refresh_mode"])
        return write_chain_csv(run_chain(cfg))
    return job


BUILDERS = {
    "solve-ref": _build_solve_ref,
    "solve-mc": _build_solve_mc,
    "observe": _build_observe,
    "moment": _build_moment,
    "moment-mc": _build_moment_mc,
    "sweep-likelihood": _build_sweep("likelihoods"),
    "sweep-ratio": _build_sweep("ratio"),
    "sweep-acceptance": _build_sweep("acceptance"),
    "mh": _build_mh,
}


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    keys = [k.name for k in COMMANDS[args.command][1]]
    if extra:
        print(f"likratio {args.command}: error: unknown argument(s) {' '.join(extra)}; "
              f"valid keys: {', '.join(keys)}", file=sys.stderr)
        return 2
    try:
        file_values = read_config(args.config) if args.config else {}
        values = resolve(args.command, file_values, {k: getattr(args, k) for k in keys})
        job = BUILDERS[args.command](values)
    except (ConfigError, ValueError, OSError) as err:
        print(f"likratio {args.command}: config error: {err}", file=sys.stderr)
        return 2
    try:
        text = job()
        if args.out:
            Path(args.out).write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)
    except Exception as err:  # noqa: BLE001 - any failure of the run itself
        print(f"likratio {args.command}: error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
