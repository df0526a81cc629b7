"""Command-line front-end.

Exit codes: 0 pass, 1 failure, 2 usage or configuration error.
"""

from __future__ import annotations

import csv
import io
import json
import math
import sys
from pathlib import Path

import click
import numpy as np

from . import extnum as en
from . import extqm as qm
from . import nvmvf as nv
from . import suites as su
from . import varcalc as vc

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class ConfigError(Exception):
    pass


def _complex(v, name):
    if isinstance(v, dict):
        return complex(float(v["re"]), float(v.get("im", 0.0)))
    if isinstance(v, (list, tuple)) and len(v) == 2:
        return complex(float(v[0]), float(v[1]))
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return complex(v)
    if isinstance(v, str):
        try:
            return complex(v.replace(" ", ""))
        except ValueError:
            pass
    raise ConfigError(f"{name}: cannot read {v!r} as a complex number")


def context_from_config(alg):
    if not isinstance(alg, dict):
        raise ConfigError("'algebra' must be an object")
    if "z0" not in alg or "w0" not in alg:
        raise ConfigError("'algebra' needs z0 and w0")
    kw = {"z0": _complex(alg["z0"], "z0"), "w0": _complex(alg["w0"], "w0")}
    for key, typ in (("R", float), ("solver_tol", float), ("solver_max_iter", int),
                     ("multistart_seeds", int), ("seed", int), ("unit_pair", str)):
        if key in alg:
            kw[key] = typ(alg[key])
    unknown = set(alg) - set(kw) - {"z0", "w0"}
    if unknown:
        raise ConfigError(f"unknown algebra fields: {sorted(unknown)}")
    try:
        return en.AlgebraContext(**kw)
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e)) from e


def load_config(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config: {e}") from e
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    suites = cfg.get("suites")
    if not isinstance(suites, list) or not suites:
        raise ConfigError("'suites' must be a non-empty list")
    unknown = [s for s in suites if s not in su.SUITES]
    if unknown:
        raise ConfigError(f"unknown suites: {unknown}; known: {sorted(su.SUITES)}")
    ctx = context_from_config(cfg.get("algebra", {}))
    seed = cfg.get("seeds", cfg.get("seed", 0))
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("'seeds' must be an integer")
    fmt = cfg.get("format", "json")
    if fmt not in ("json", "csv"):
        raise ConfigError("'format' must be json or csv")
    options = cfg.get("options", {})
    if not isinstance(options, dict) or set(options) - set(suites):
        raise ConfigError("'options' keys must name selected suites")
    return {"ctx": ctx, "suites": suites, "seed": seed, "output": cfg.get("output"),
            "format": fmt, "options": options, "timing": bool(cfg.get("timing", False))}


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, (float, np.floating)):
        f = float(o)
        return f if math.isfinite(f) else str(f)
    if isinstance(o, complex):
        return {"re": o.real, "im": o.imag}
    if isinstance(o, en.ExtNumber):
        return o.to_json()
    return o


def dumps(obj):
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def report_to_csv(rep):
    """Flatten a report into key,value rows."""
    rows = []

    def walk(prefix, v):
        if isinstance(v, dict):
            for k in sorted(v):
                walk(f"{prefix}.{k}" if prefix else str(k), v[k])
        elif isinstance(v, list):
            for i, x in enumerate(v):
                walk(f"{prefix}[{i}]", x)
        else:
            rows.append((prefix, v))

    walk("", _jsonable(rep))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["key", "value"])
    for k, v in rows:
        w.writerow([k, repr(v) if isinstance(v, float) else v])
    return buf.getvalue()


@click.group()
def main():
    """Extended-number algebra, higher-order mechanics and extended QM checks."""


@main.command()
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--output", "-o", type=click.Path(file_okay=False), default=None,
              help="Directory for per-suite reports (overrides the config).")
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default=None)
def run(config, output, fmt):
    """Run the property suites named in CONFIG."""
    try:
        cfg = load_config(config)
    except ConfigError as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(EXIT_USAGE)
    fmt = fmt or cfg["format"]
    out_dir = output or cfg["output"]
    results = {}
    for name in cfg["suites"]:
        try:
            rep = su.run_suite(name, cfg["ctx"], cfg["seed"], **cfg["options"].get(name, {}))
        except TypeError as e:
            click.echo(f"config error: bad options for {name}: {e}", err=True)
            sys.exit(EXIT_USAGE)
        timing = rep.pop("_timing", None)
        if cfg["timing"] and timing is not None:
            rep["timing"] = timing
        results[name] = rep
    if out_dir:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        for name, rep in results.items():
            text = dumps(rep) if fmt == "json" else report_to_csv(rep)
            (d / f"{name}.{fmt}").write_text(text)
    else:
        if fmt == "json":
            click.echo(dumps(results), nl=False)
        else:
            for name, rep in results.items():
                click.echo(f"# {name}")
                click.echo(report_to_csv(rep), nl=False)
    for name, rep in results.items():
        click.echo(f"{name}: {'PASS' if rep['pass'] else 'FAIL'}", err=True)
    sys.exit(EXIT_OK if all(r["pass"] for r in results.values()) else EXIT_FAIL)


class ComplexParam(click.ParamType):
    name = "complex"

    def convert(self, value, param, ctx):
        if isinstance(value, complex):
            return value
        try:
            return _complex(value, param.name if param else "value")
        except ConfigError as e:
            self.fail(str(e), param, ctx)


COMPLEX = ComplexParam()


@main.command("solve-maps")
@click.option("--x", "x", type=COMPLEX, required=True, help="Extended part, e.g. 0.4+0.2j.")
@click.option("--y", "y", type=COMPLEX, required=True, help="Complex part.")
@click.option("--z0", type=COMPLEX, required=True)
@click.option("--w0", type=COMPLEX, required=True)
@click.option("--R", "R", type=float, default=2.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--starts", type=int, default=None, help="Number of multistart seeds.")
def solve_maps_cmd(x, y, z0, w0, R, seed, starts):
    """Solve the map system for x k + y and print every root found."""
    try:
        ctx = en.AlgebraContext(z0, w0, R=R, seed=seed)
    except ValueError as e:
        click.echo(f"usage error: {e}", err=True)
        sys.exit(EXIT_USAGE)
    a = en.ExtNumber(x, y)
    inputs = {"x": x, "y": y, "z0": z0, "w0": w0, "R": R, "seed": seed}
    try:
        sols = en.solve_maps_all(ctx, a, n_starts=starts)
    except en.Degenerate as e:
        click.echo(dumps({"op": "solve_maps", "inputs": inputs, "outputs": {}, "residuals": {},
                          "pass": False, "error": f"Degenerate: {e}"}), nl=False)
        click.echo(f"degenerate input: {e}; use complex arithmetic directly", err=True)
        sys.exit(EXIT_FAIL)
    except en.NoConvergence as e:
        click.echo(dumps({"op": "solve_maps", "inputs": inputs, "outputs": {},
                          "residuals": {"best": e.best_residual}, "pass": False,
                          "error": "NoConvergence"}), nl=False)
        sys.exit(EXIT_FAIL)
    res = [m.residual for m in sols]
    passed = max(res) <= ctx.solver_tol
    click.echo(dumps({"op": "solve_maps", "inputs": inputs,
                      "outputs": {"maps": [m.to_json() for m in sols]},
                      "residuals": {"per_root": res, "max": max(res)}, "pass": passed}), nl=False)
    sys.exit(EXIT_OK if passed else EXIT_FAIL)


def _load_json_arg(text):
    p = Path(text)
    if p.is_file():
        return json.loads(p.read_text())
    return json.loads(text)


@main.command()
@click.argument("lagrangian", type=click.Path(dir_okay=False))
@click.option("--initial", required=True,
              help="JSON (or file) with t, q, qd, qdd, q3.")
@click.option("--t-span", nargs=2, type=float, required=True)
@click.option("--dt", type=float, required=True)
@click.option("--output", "-o", type=click.Path(dir_okay=False), default=None)
def integrate(lagrangian, initial, t_span, dt, output):
    """Integrate the Euler-Lagrange equations and write a CSV trajectory."""
    if not dt > 0:
        click.echo("usage error: dt must be positive", err=True)
        sys.exit(EXIT_USAGE)
    if not t_span[1] > t_span[0]:
        click.echo("usage error: t-span must be increasing", err=True)
        sys.exit(EXIT_USAGE)
    try:
        L = vc.load_lagrangian(lagrangian)
        ini = _load_json_arg(initial)
        n = L.dim
        z = [0.0] * n
        st = vc.PathState.of(ini.get("t", t_span[0]), ini["q"], ini.get("qd", z),
                             ini.get("qdd", z), ini.get("q3", z))
        if any(len(v) != n for v in (st.q, st.qd, st.qdd, st.q3)):
            raise ValueError(f"initial state must have dimension {n}")
    except (OSError, ValueError, KeyError, TypeError, json.JSONDecodeError) as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(EXIT_USAGE)
    try:
        tr = vc.integrate_el(L, st, tuple(t_span), dt)
    except vc.SingularHessian as e:
        click.echo(f"singular Hessian W2 (det={e.det:.3e}): the Lagrangian is degenerate; "
                   "run constraint_scan_lagrangian to find its zero modes", err=True)
        sys.exit(EXIT_FAIL)
    except ValueError as e:
        click.echo(f"usage error: {e}", err=True)
        sys.exit(EXIT_USAGE)
    text = tr.to_csv()
    if output:
        Path(output).write_text(text)
    else:
        click.echo(text, nl=False)
    drift = float(np.ptp(tr.h))
    click.echo(f"steps={len(tr.t) - 1} energy_drift={drift:.3e}", err=True)
    sys.exit(EXIT_OK)


@main.command("nvmvf-audit")
@click.option("--scheme", type=click.Choice(list(nv.SCHEMES)), default=None)
@click.option("--n", "n_particles", type=int, default=None)
@click.option("--scene", type=click.Path(dir_okay=False), default=None,
              help="Scene JSON; prints the constraint report instead.")
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="json")
def nvmvf_audit(scheme, n_particles, scene, fmt):
    """Degree-of-freedom audit, or the constraint report of a scene."""
    if scene:
        try:
            kin, mf, mult = nv.load_scene(scene)
        except (OSError, ValueError, KeyError, json.JSONDecodeError, nv.NvmvfError) as e:
            click.echo(f"config error: {e}", err=True)
            sys.exit(EXIT_USAGE)
        rep = nv.scene_report(kin, mf, mult)
        click.echo(dumps(rep) if fmt == "json" else nv.report_csv(rep), nl=False)
        sys.exit(EXIT_OK)
    if scheme is None or n_particles is None:
        click.echo("usage error: give --scheme and --n, or --scene", err=True)
        sys.exit(EXIT_USAGE)
    try:
        rep = nv.dof_audit(scheme, n_particles)
    except nv.TooFewParticles as e:
        click.echo(f"usage error: {e}", err=True)
        sys.exit(EXIT_USAGE)
    click.echo(dumps(rep) if fmt == "json" else report_to_csv(rep), nl=False)
    sys.exit(EXIT_OK if rep["solvable"] else EXIT_FAIL)


@main.command("qm-check")
@click.argument("ket", type=click.Path(dir_okay=False))
@click.option("--operator", type=click.Path(dir_okay=False), default=None,
              help="Operator JSON; its eigenbasis is checked as well.")
@click.option("--tol", type=float, default=1e-10, show_default=True)
def qm_check(ket, operator, tol):
    """Normalization conditions of a ket (and an operator's eigenbasis)."""
    try:
        k = qm.ExtKet.from_json(Path(ket).read_text())
        op = qm.ExtOperator.from_json(Path(operator).read_text()) if operator else None
    except (OSError, ValueError, KeyError, TypeError, json.JSONDecodeError) as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(EXIT_USAGE)
    norm = qm.normalize_check(k, tol=tol)
    out = {"normalization": norm, "self_inner_pure": qm.is_pure(qm.self_inner(k))}
    passed = norm["cond1"] and norm["cond2"]
    if op is not None:
        try:
            eb = qm.eigenbasis(op)
        except ValueError as e:
            click.echo(f"config error: {e}", err=True)
            sys.exit(EXIT_USAGE)
        checks = [qm.eigen_check(eb.diagonal, kk, s, tol=tol) for kk, s in zip(eb.kets, eb.scalars)]
        out["eigenbasis"] = {"labels": [list(l[:2]) for l in eb.labels],
                             "all_ok": all(c["ok"] for c in checks)}
        passed = passed and out["eigenbasis"]["all_ok"]
    click.echo(dumps({"op": "qm_check", "inputs": {"ket": ket, "operator": operator},
                      "outputs": out, "residuals": {"abs2_minus_1": norm["abs2"] - 1,
                                                    "re_minus_1": norm["re"] - 1},
                      "pass": passed}), nl=False)
    sys.exit(EXIT_OK if passed else EXIT_FAIL)


if __name__ == "__main__":
    main()
