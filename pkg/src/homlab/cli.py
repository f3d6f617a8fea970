"""Command-line front end.

Every subcommand reads an INI-style run configuration with the sections
``[environment]``, ``[ladder]``, ``[solver]`` and ``[output]``.

Exit codes: 0 success, 2 configuration error, 3 model/runtime error,
4 solver non-convergence.
"""

from __future__ import annotations

import argparse
import ast
import configparser
import json
import logging
import os
import re
import sys
import tempfile
import time
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .convergence import SCHEMA_VERSION, EnvironmentSpec, ExperimentPlan, _jsonable, run_ladder
from .effective_field import TestFunctionSpec
from .effective_matrix import estimate_D
from .env import ConductanceLaw, GenerationError, MarkLaw
from .generator import assemble
from .palm import estimate_intensity, estimate_lambda_k
from .solver import SolveOptions, SolverError, semigroup_action, solve_massive_poisson

log = logging.getLogger("homlab")

EXIT_OK, EXIT_CONFIG, EXIT_MODEL, EXIT_SOLVER = 0, 2, 3, 4

ALLOWED = {
    "environment": {
        "model", "d", "L", "seed", "replicas", "law", "c", "c1", "c2", "q", "a", "b",
        "weight_mode", "p", "intensity", "mark_law", "mark_a", "mark_b", "r_max", "decay",
    },
    "ladder": {
        "side", "eps", "lam", "source", "tests", "times", "replicas", "gamma_tol", "grid",
        "quenched", "certify_tol", "laplace_crosscheck",
    },
    "solver": {"tol", "max_iter", "tail_tol", "preconditioner"},
    "output": {"dir", "report", "csv", "env"},
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    env: EnvironmentSpec
    L: float | None
    seed: int
    replicas: int
    solver: SolveOptions
    out_dir: Path
    report_name: str
    csv_name: str
    env_name: str
    ladder: dict[str, str] | None
    raw: configparser.ConfigParser

    def plan(self) -> ExperimentPlan:
        if self.ladder is None:
            raise ConfigError("missing [ladder] section")
        lad = self.ladder
        d = self.env.d
        side = _float(lad, "side", None, "ladder")
        if side is None:
            raise ConfigError("[ladder] needs 'side'")
        source = _test_function(lad.get("source", "gaussian(width=%r)" % (side / 8)), side, d, "source")
        tests = [
            _test_function(t, side, d, "tests") for t in _split(lad.get("tests", ""), ";") if t.strip()
        ]
        gamma_tol = lad.get("gamma_tol")
        try:
            return ExperimentPlan(
                env=self.env,
                side=side,
                eps=[_number(e, "eps") for e in _split(lad.get("eps", ""), ",")],
                source=source,
                lam=_float(lad, "lam", 1.0, "ladder"),
                tests=tests,
                times=[_number(t, "times") for t in _split(lad.get("times", ""), ",")],
                replicas=int(lad.get("replicas", self.replicas)),
                gamma_tol=float(gamma_tol) if gamma_tol else None,
                solver=self.solver,
                seed=self.seed,
                grid=int(lad["grid"]) if "grid" in lad else None,
                quenched=_bool(lad.get("quenched", "true"), "quenched"),
                certify_tol=_float(lad, "certify_tol", 5e-2, "ladder"),
                laplace_crosscheck=_bool(lad.get("laplace_crosscheck", "false"), "laplace_crosscheck"),
            )
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"[ladder]: {exc}") from exc


def _split(text: str, sep: str) -> list[str]:
    return [t.strip() for t in text.split(sep) if t.strip()]


def _number(text: str, key: str) -> float:
    try:
        return float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"cannot parse {key} value {text!r}") from exc


def _float(section, key, default, name) -> float | None:
    if key not in section:
        return default
    try:
        return float(Fraction(section[key].strip()))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"[{name}] {key}: cannot parse {section[key]!r}") from exc


def _bool(text: str, key: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {text!r}")


_KINDS = {"gaussian": "gaussian", "cosine": "cosine", "bump": "bump", "constant": "constant"}


def _test_function(text: str, side: float, d: int, key: str) -> TestFunctionSpec:
    """Parse ``kind(name=value, ...)``, e.g. ``gaussian(center=(4, 4), width=0.5)``."""
    try:
        node = ast.parse(text.strip(), mode="eval").body
        if isinstance(node, ast.Name):
            kind, kwargs = node.id, {}
        elif isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and not node.args:
            kind = node.func.id
            kwargs = {kw.arg: ast.literal_eval(kw.value) for kw in node.keywords}
        else:
            raise ValueError("expected kind(name=value, ...)")
        if kind not in _KINDS:
            raise ValueError(f"unknown kind {kind!r}")
        return TestFunctionSpec(_KINDS[kind], side, d, kwargs)
    except (SyntaxError, ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"{key}: cannot parse test function {text!r}: {exc}") from exc


def _key_line(text: str, section: str, key: str) -> int | None:
    current = None
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"^\[(.+)\]$", s)
        if m:
            current = m.group(1).strip()
            continue
        if current == section and re.match(rf"^{re.escape(key)}\s*[=:]", s, flags=re.IGNORECASE):
            return lineno
    return None


def load_config(path: str | os.PathLike, seed: int | None = None, out: str | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    for section in cp.sections():
        if section not in ALLOWED:
            raise ConfigError(f"unknown section [{section}] at line {_key_line_section(text, section)}")
        for key in cp[section]:
            if key not in ALLOWED[section]:
                raise ConfigError(f"unknown key '{key}' in [{section}] at line {_key_line(text, section, key)}")
    if not cp.has_section("environment"):
        raise ConfigError("missing [environment] section")
    e = cp["environment"]
    model = e.get("model")
    if model is None:
        raise ConfigError("[environment] needs 'model'")
    try:
        d = int(e.get("d", "1"))
        law = ConductanceLaw(
            kind=e.get("law", "constant"),
            c=_float(e, "c", 1.0, "environment"),
            c1=_float(e, "c1", 1.0, "environment"),
            c2=_float(e, "c2", 1.0, "environment"),
            q=_float(e, "q", 0.5, "environment"),
            a=_float(e, "a", 1.0, "environment"),
            b=_float(e, "b", 1.0, "environment"),
        )
        marks = MarkLaw(
            kind=e.get("mark_law", "zero"),
            a=_float(e, "mark_a", -1.0, "environment"),
            b=_float(e, "mark_b", 1.0, "environment"),
        )
        spec = EnvironmentSpec(
            model=model,
            d=d,
            law=law,
            weight_mode=e.get("weight_mode", "UNIT"),
            p=_float(e, "p", 0.7, "environment"),
            intensity=_float(e, "intensity", 1.0, "environment"),
            mark_law=marks,
            r_max=_float(e, "r_max", 1.0, "environment"),
            decay=_float(e, "decay", 5.0, "environment"),
        )
        s = cp["solver"] if cp.has_section("solver") else {}
        solver = SolveOptions(
            tol=_float(s, "tol", 1e-10, "solver"),
            max_iter=int(s["max_iter"]) if "max_iter" in s else None,
            tail_tol=_float(s, "tail_tol", 1e-12, "solver"),
            preconditioner=s.get("preconditioner", "none"),
        )
        cfg_seed = int(e.get("seed", "0"))
        replicas = int(e.get("replicas", "1"))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    o = cp["output"] if cp.has_section("output") else {}
    out_dir = Path(out) if out else Path(o.get("dir", "."))
    if not out_dir.is_absolute() and not out:
        out_dir = path.parent / out_dir
    return RunConfig(
        env=spec,
        L=_float(e, "L", None, "environment"),
        seed=seed if seed is not None else cfg_seed,
        replicas=replicas,
        solver=solver,
        out_dir=out_dir,
        report_name=o.get("report", "report.json"),
        csv_name=o.get("csv", "ladder.csv"),
        env_name=o.get("env", "env.txt"),
        ladder=dict(cp["ladder"]) if cp.has_section("ladder") else None,
        raw=cp,
    )


def _key_line_section(text: str, section: str) -> int | None:
    for lineno, line in enumerate(text.splitlines(), 1):
        if line.strip() == f"[{section}]":
            return lineno
    return None


def atomic_write(path: Path, content: str) -> None:
    """Write to a temporary sibling and rename over the target."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump(obj: dict) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def _box_side(cfg: RunConfig) -> float:
    if cfg.L is None:
        raise ConfigError("[environment] needs 'L' for this subcommand")
    return cfg.L


def _replica_envs(cfg: RunConfig, L: float):
    from .convergence import derive_seed

    if cfg.replicas < 1:
        raise ConfigError("[environment] replicas must be at least 1")
    if cfg.replicas == 1:
        return [cfg.env.generate(L, cfg.seed)]
    return [cfg.env.generate(L, derive_seed(cfg.seed, r)) for r in range(cfg.replicas)]


def cmd_gen_env(cfg: RunConfig, args) -> int:
    env = cfg.env.generate(_box_side(cfg), cfg.seed)
    target = cfg.out_dir / cfg.env_name
    atomic_write(target, env.to_text())
    print(f"wrote {env.n_atoms} atoms and {env.n_edges} edges to {target} (seed {cfg.seed})")
    return EXIT_OK


def cmd_effective_matrix(cfg: RunConfig, args) -> int:
    t0 = time.perf_counter()
    envs = _replica_envs(cfg, _box_side(cfg))
    gamma_tol = float(cfg.ladder["gamma_tol"]) if cfg.ladder and cfg.ladder.get("gamma_tol") else None
    em = estimate_D(envs, cfg.solver, gamma_tol)
    report = {
        "schema": SCHEMA_VERSION,
        "command": "effective-matrix",
        "seed": cfg.seed,
        "environment": cfg.env.to_dict(),
        "L": cfg.L,
        "replicas": len(envs),
        "effective_matrix": em.to_dict(),
        "samples": [s.reshape(-1).tolist() for s in em.samples],
        "palm": _palm(envs),
        "runtime_seconds": time.perf_counter() - t0,
    }
    atomic_write(cfg.out_dir / cfg.report_name, _dump(report))
    print("D diagonal: " + " ".join(format(v, ".10g") for v in np.diag(em.D)) + f" (d_star={em.d_star})")
    return EXIT_OK


def _palm(envs) -> dict:
    out = {"m": estimate_intensity(envs).to_dict()}
    for k in (0, 1, 2):
        out[f"lambda{k}"] = estimate_lambda_k(envs, k).to_dict()
    return out


def cmd_palm(cfg: RunConfig, args) -> int:
    envs = _replica_envs(cfg, _box_side(cfg))
    palm = _palm(envs)
    report = {"schema": SCHEMA_VERSION, "command": "palm", "seed": cfg.seed,
              "environment": cfg.env.to_dict(), "L": cfg.L, "palm": palm}
    atomic_write(cfg.out_dir / cfg.report_name, _dump(report))
    print("m = {value:.10g} +- {std_error:.3g}".format(**palm["m"]))
    return EXIT_OK


def _single_problems(cfg: RunConfig):
    plan = cfg.plan()
    for k, eps in enumerate(plan.eps):
        env = plan.env.generate(plan.box_side(eps), cfg.seed)
        gen = assemble(env, eps)
        yield plan, eps, gen, gen.restrict(plan.source)


def cmd_poisson(cfg: RunConfig, args) -> int:
    rows = []
    for plan, eps, gen, f in _single_problems(cfg):
        u, stats = solve_massive_poisson(gen, plan.lam, f, cfg.solver)
        lhs = gen.mu_inner(u, f)
        rhs = plan.lam * gen.mu_inner(u, u) + gen.dirichlet_energy(u)
        rows.append({
            "eps": eps,
            "n_atoms": gen.n_atoms,
            "solver": stats.to_dict(),
            "mu_mass_u": gen.mu_mass(u),
            "mu_norm_u": gen.mu_norm(u),
            "dirichlet_energy": gen.dirichlet_energy(u),
            "energy_identity_error": abs(lhs - rhs) / max(abs(lhs), 1e-300),
            "mass_identity_error": abs(gen.mu_mass(u) - gen.mu_mass(f) / plan.lam)
            / max(abs(gen.mu_mass(f) / plan.lam), 1e-300),
        })
    report = {"schema": SCHEMA_VERSION, "command": "poisson", "seed": cfg.seed, "plan": plan.to_dict(), "rows": rows}
    atomic_write(cfg.out_dir / cfg.report_name, _dump(report))
    print(f"solved {len(rows)} massive Poisson problems; max energy identity error "
          f"{max(r['energy_identity_error'] for r in rows):.3e}")
    return EXIT_OK


def cmd_semigroup(cfg: RunConfig, args) -> int:
    rows = []
    for plan, eps, gen, f in _single_problems(cfg):
        for t in plan.times or (0.0,):
            t0 = time.perf_counter()
            p = semigroup_action(gen, t, f, cfg.solver)
            rows.append({
                "eps": eps,
                "t": t,
                "mu_mass": gen.mu_mass(p),
                "mu_norm": gen.mu_norm(p),
                "min_value": float(p.min()),
                "seconds": time.perf_counter() - t0,
            })
    report = {"schema": SCHEMA_VERSION, "command": "semigroup", "seed": cfg.seed, "plan": plan.to_dict(), "rows": rows}
    atomic_write(cfg.out_dir / cfg.report_name, _dump(report))
    print(f"computed {len(rows)} semigroup actions")
    return EXIT_OK


def cmd_converge(cfg: RunConfig, args) -> int:
    plan = cfg.plan()
    report = run_ladder(plan, jobs=args.jobs)
    atomic_write(cfg.out_dir / cfg.report_name, report.to_json())
    atomic_write(cfg.out_dir / cfg.csv_name, report.to_csv())
    eps_min = plan.eps[-1]
    gaps = {c: report.column(c, eps_min) for c in report.columns()
            if "gap" in c or c.endswith(("_l2", "_l1")) or "_l2_" in c or "_l1_" in c}
    worst = max(gaps, key=lambda c: gaps[c]) if gaps else None
    diag = " ".join(format(v, ".6g") for v in np.diag(report.effective.D))
    msg = f"D diagonal: {diag}"
    if worst is not None:
        msg += f"; max gap at eps={eps_min:g}: {worst}={gaps[worst]:.3e}"
    print(msg)
    if any(r.get("error") for r in report.rows):
        return EXIT_MODEL
    return EXIT_OK


COMMANDS: dict[str, Callable[[RunConfig, Any], int]] = {
    "gen-env": cmd_gen_env,
    "effective-matrix": cmd_effective_matrix,
    "poisson": cmd_poisson,
    "semigroup": cmd_semigroup,
    "converge": cmd_converge,
    "palm": cmd_palm,
}


def _fail(code: int, stage: str, exc: BaseException) -> int:
    print(json.dumps({"error": str(exc), "type": type(exc).__name__, "stage": stage, "exit_code": code}))
    return code


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="homlab", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="path to the run configuration")
    parser.add_argument("--seed", type=int, default=None, help="override the configured seed (u64)")
    parser.add_argument("--jobs", type=int, default=1, help="parallel ladder rows")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        return _fail(EXIT_CONFIG, "config", ConfigError("--seed must be an unsigned 64-bit integer"))
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    try:
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except SolverError as exc:
        return _fail(EXIT_SOLVER, "solver", exc)
    except (GenerationError, ValueError, RuntimeError) as exc:
        return _fail(EXIT_MODEL, args.command, exc)


if __name__ == "__main__":
    sys.exit(main())
