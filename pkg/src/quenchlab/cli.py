"""Command-line front end.

    quenchlab run CONFIG|preset:NAME [--seed-override N] [--out-dir DIR] [--threads N]
    quenchlab list-presets
    quenchlab show-preset NAME

Exit codes: 0 when every enabled assertion passes, 1 when one fails, 2 on a
configuration error (in which case nothing is written).
"""

from __future__ import annotations

import argparse
import hashlib
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import blocks as blk
from . import cones, limits, rpf
from .config import PRESETS, ExperimentConfig, load_config, parse_config, preset_text
from .environment import EnvironmentModel, product_decay, sample_path
from .errors import ConfigError, QuenchlabError
from .systems import (circle_function, constant_function, jacobian_potential, make_circle_family,
                      make_sft_family, path_geometry, sft_function)
from .transfer import Discretization, test_family

__all__ = ["main", "run", "list_presets", "RunReport"]

THREADS_ENV = "QUENCHLAB_THREADS"


# ----------------------------------------------------------------------------
# deterministic JSON

def _dump(obj, indent: int = 0) -> str:
    """JSON with floats at 17 significant digits and non-finite floats as strings."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_dump(str(k))}: {_dump(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(_dump(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _dump(v, indent + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return format(x, ".17g")
        return '"' + ("nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")) + '"'
    if isinstance(obj, (complex, np.complexfloating)):
        return _dump([float(obj.real), float(obj.imag)])
    if isinstance(obj, np.ndarray):
        return _dump(obj.tolist(), indent)
    s = str(obj).replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")
    return f'"{s}"'


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


# ----------------------------------------------------------------------------
# model assembly

@dataclass
class Model:
    env: EnvironmentModel
    system: object
    potential: object
    observable: object
    disc: Discretization
    path: object = None
    triplet: object = None
    window: object = None


def _observable(cfg: ExperimentConfig, system):
    kind = cfg["observable"]["kind"]
    states = system.states
    if kind == "zero":
        return constant_function(system, 0.0)
    if system.family == "sft":
        if kind != "table":
            raise ConfigError("[observable] kind: sft systems take table observables", None)
        vals = cfg["observable"]["values"]
        if len(vals) != len(states):
            raise ConfigError("[observable] values: one table per state is required", None)
        return sft_function({s: v for s, v in zip(states, vals)}, system.holder_exponent)
    two_pi = 2 * math.pi
    if kind == "cos":
        return circle_function({s: (lambda x: np.cos(two_pi * x)) for s in states}, {s: two_pi for s in states})
    if kind == "two-mode":
        return circle_function({s: (lambda x: np.cos(two_pi * x) + np.cos(2 * two_pi * x)) for s in states},
                               {s: 3 * two_pi for s in states})
    if kind == "tent":
        return circle_function({s: (lambda x: np.minimum(x % 1.0, 1.0 - x % 1.0)) for s in states},
                               {s: 1.0 for s in states})
    if kind == "coboundary":
        funcs, lips = {}, {}
        for s in states:
            fib = system.fiber(s)
            funcs[s] = (lambda x, fib=fib: np.cos(two_pi * x) - np.cos(two_pi * fib(x)))
            lips[s] = two_pi * (1.0 + system.geometry[s].holder_bound)
        return circle_function(funcs, lips)
    raise ConfigError(f"[observable] kind {kind!r} does not fit a {system.family} system", None)


def build_model(cfg: ExperimentConfig) -> Model:
    e, s, d = cfg["environment"], cfg["system"], cfg["discretization"]
    if e["kind"] == "iid":
        env = EnvironmentModel.iid(e["probabilities"], e["seed"])
    else:
        env = EnvironmentModel.markov(e["transition"], e["seed"])
    if s["family"] == "circle":
        system = make_circle_family(s["degree"], s["fibers"], s["holder_exponent"])
        potential = jacobian_potential(system) if s["potential"] == "geometric" else constant_function(system, 0.0)
    else:
        mats = {i: m for i, m in enumerate(s["matrices"])}
        system = make_sft_family({i: s["alphabet"] or m.shape[0] for i, m in mats.items()}, mats,
                                 s["holder_exponent"])
        if s["weights"]:
            potential = sft_function({i: w for i, w in enumerate(s["weights"])}, s["holder_exponent"])
        else:
            potential = constant_function(system, 0.0)
    if set(system.states) != set(range(env.state_count)):
        raise ConfigError("[system] fibers must be given for every environment state", None)
    disc = Discretization(d["scheme"], d["resolution"])
    return Model(env, system, potential, _observable(cfg, system), disc)


def _path_length(cfg: ExperimentConfig) -> int:
    a = cfg["analysis"]
    need = 8
    run = cfg.analyses
    if "decay" in run:
        need = max(need, a["decay_n_max"] + 1)
    if "var" in run or "blocks" in run:
        need = max(need, a["var_n_max"] + 1)
    if "clt" in run:
        need = max(need, max(a["clt_n_grid"]) + 1)
    if "mdp" in run:
        need = max(need, max(a["mdp_n_grid"]) + 1)
    if "cones" in run:
        need = max(need, 4 * a["cones_steps"] + 1)
    return max(cfg["environment"]["length"], need + 2 * a["burn_in"] + 2)


# ----------------------------------------------------------------------------
# analyses

@dataclass
class AnalysisResult:
    name: str
    summary: dict
    assertions: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)

    def check(self, name: str, measured: float, bound: float, passed: bool) -> None:
        self.assertions.append({"name": name, "measured": measured, "bound": bound, "passed": bool(passed)})


def _rpf(m: Model, cfg) -> AnalysisResult:
    t = m.triplet
    tol = cfg["analysis"]["rpf_tol"]
    res = AnalysisResult("rpf", {
        "start": t.start,
        "fibers": len(t) + 1,
        "log_lambda_mean": float(np.mean(np.log(t.lambdas))),
        "eigen_residual": float(np.max(t.eigen_residual)),
        "dual_residual": float(np.max(t.dual_residual)),
        "normalization_residual": float(np.max(t.normalization_residual)),
        "h_trace": [list(x) for x in t.trace],
        "nu_trace": [list(x) for x in t.dual_trace],
    })
    scale = float(np.max(t.lambdas))
    res.check("eigen_residual", float(np.max(t.eigen_residual)) / scale, tol, np.max(t.eigen_residual) <= tol * scale)
    res.check("normalization_residual", float(np.max(t.normalization_residual)), tol,
              np.max(t.normalization_residual) <= tol)
    res.tables["lambdas"] = (["fiber", "lambda"], [(t.start + k, float(v)) for k, v in enumerate(t.lambdas)])
    return res


def _decay(m: Model, cfg) -> AnalysisResult:
    a = cfg["analysis"]
    tests = test_family(m.disc, 16, a["seed"])
    xi = 1.0
    rep = rpf.decay_rate(m.window, tests, a["decay_n_max"], alpha=m.system.holder_exponent,
                         disc=m.disc if m.disc.scheme == "ulam" else None, xi=xi)
    res = AnalysisResult("decay", {"regime": rep.regime, "exp_rate": rep.exp_rate,
                                   "poly_exponent": rep.poly_exponent, "envelope_constant": rep.envelope_constant})
    if a["decay_expect"]:
        allowed = a["decay_expect"].split("|")
        res.check(f"regime in {allowed}", float("nan"), float("nan"), rep.regime in allowed)
    res.tables["table"] = (["n", "decay"], rep.table)
    return res


def _cones(m: Model, cfg) -> AnalysisResult:
    a = cfg["analysis"]
    steps, npairs = a["cones_steps"], a["cones_pairs"]
    rng = np.random.default_rng(a["seed"])
    rows = []
    res = AnalysisResult("cones", {})
    for k in range(3):
        start = m.window.start_offset + k * steps
        from .transfer import compose
        A = compose(m.window, start, steps).dense()
        d = A.shape[1]
        pairs = [(rng.uniform(0.1, 1.0, d), rng.uniform(0.1, 1.0, d)) for _ in range(npairs)]
        chk = cones.birkhoff_check(np.real(A), pairs)
        rows.append((start, steps, chk["diameter"], chk["factor"], chk["tanh_quarter"], chk["holds_classical"]))
        res.check(f"birkhoff contraction at {start}", chk["factor"], chk["tanh_quarter"], chk["holds_classical"])
    res.summary["blocks"] = [{"start": r[0], "steps": r[1], "diameter": r[2], "factor": r[3]} for r in rows]
    res.tables["birkhoff"] = (["start", "steps", "diameter", "factor", "tanh_quarter", "holds"], rows)
    return res


def _var(m: Model, cfg) -> AnalysisResult:
    a = cfg["analysis"]
    rep = limits.variance(m.window, a["var_n_max"], a["var_k_max"])
    res = AnalysisResult("var", {"sigma2_series": rep.sigma2_series, "convergence_slope": rep.convergence_slope,
                                 "tail_bound": rep.tail_bound, "envelope": list(rep.envelope),
                                 "b_k": rep.b_k.tolist()})
    if not math.isnan(a["var_sigma2_expected"]):
        tol = a["var_sigma2_tol"]
        err = abs(rep.sigma2_series - a["var_sigma2_expected"])
        res.check("sigma2 matches expectation", err, tol, err <= tol)
    if not math.isnan(a["var_slope_max"]):
        res.check("convergence slope", rep.convergence_slope, a["var_slope_max"],
                  rep.convergence_slope <= a["var_slope_max"])
    res.tables["per_n"] = (["n", "sigma2_n", "sigma2_n_over_n"], rep.per_n)
    res.tables["b_k"] = (["k", "b_k"], list(enumerate(rep.b_k.tolist())))
    return res


def _clt(m: Model, cfg) -> AnalysisResult:
    a = cfg["analysis"]
    rep = limits.clt_report(m.window, m.system, m.path, m.observable, a["clt_n_grid"], a["clt_samples"],
                            seed=a["seed"], T_scale=a["clt_t_scale"], esseen_constant=a["clt_esseen_constant"],
                            k_max=a["var_k_max"])
    res = AnalysisResult("clt", {"be_slope": rep.be_slope, "be_r2": rep.be_r2})
    for (n, ks), (_, T, integ, bound) in zip(rep.ks_table, rep.esseen_table):
        res.check(f"esseen bound at n={n}", ks, bound, ks <= bound)
    if not math.isnan(a["clt_slope_max"]):
        res.check("berry-esseen slope", rep.be_slope, a["clt_slope_max"], rep.be_slope <= a["clt_slope_max"])
    res.tables["ks_table"] = (["n", "ks"], rep.ks_table)
    res.tables["esseen_table"] = (["n", "T", "integral", "bound"], rep.esseen_table)
    return res


def _mdp(m: Model, cfg) -> AnalysisResult:
    a = cfg["analysis"]
    power = a["mdp_power"]
    zmax = None if math.isnan(a["mdp_z_max"]) else a["mdp_z_max"]
    rep = limits.mdp_report(m.window, m.system, m.path, m.observable, lambda n: n**power, a["mdp_n_grid"],
                            a["mdp_t_grid"], a["mdp_sets"], a["mdp_samples"], a["seed"], z_max=zmax)
    n_top = max(a["mdp_n_grid"])
    worst = max((e for _, e in rep.limit_error[n_top]), default=0.0)
    res = AnalysisResult("mdp", {"a_n": rep.a_n, "set_rates": rep.set_rates, "convex": rep.convex})
    res.check(f"scaled cumulant error at n={n_top}", worst, a["mdp_tol"], worst <= a["mdp_tol"])
    for n, ok in rep.convex.items():
        res.check(f"convexity at n={n}", float("nan"), float("nan"), ok)
    rows = [(n, t, v) for n, tab in rep.scaled_cumulant.items() for t, v in tab]
    res.tables["scaled_cumulant"] = (["n", "t", "scaled_cumulant"], rows)
    res.tables["set_rates"] = (["lo", "hi", "empirical", "closure_rate", "interior_rate", "hits"], rep.set_rates)
    return res


def _mixing(m: Model, cfg) -> AnalysisResult:
    a = cfg["analysis"]
    g = a["mixing_g"]
    if len(g) != m.env.state_count:
        raise ConfigError("[analysis] mixing_g needs one value per environment state", None)
    rows = product_decay(m.env, g, a["mixing_n_max"], a["mixing_samples"], a["seed"])
    res = AnalysisResult("mixing", {"kind": m.env.kind})
    for r in rows:
        if r.closed_form is not None:
            dev = abs(r.mc_estimate - r.closed_form)
            res.check(f"closed form at n={r.n}", dev, 3 * r.mc_stderr + 1e-300, dev <= 3 * r.mc_stderr + 1e-300)
        else:
            res.check(f"lemma envelope at n={r.n}", r.mc_estimate, r.lemma_bound + 3 * r.mc_stderr,
                      r.mc_estimate <= r.lemma_bound + 3 * r.mc_stderr)
    res.tables["products"] = (["n", "mc_estimate", "mc_stderr", "lemma_bound", "closed_form"],
                              [(r.n, r.mc_estimate, r.mc_stderr, r.lemma_bound,
                                float("nan") if r.closed_form is None else r.closed_form) for r in rows])
    return res


def _blocks(m: Model, cfg) -> AnalysisResult:
    a = cfg["analysis"]
    sch = blk.build_schedule(a["blocks_c1"], a["blocks_beta"], a["blocks_eps"], a["blocks_eps0"], 64)
    w = m.window
    vis = blk.visits_for_window(m.path, w, list(a["blocks_level_set"]))
    states = m.path.window(w.start_offset, len(w) + 1)
    geo = path_geometry(m.system, m.path)
    lo = w.start_offset - m.path.offset
    fit = blk.fit_constants(vis, [m.observable.holder_norm(int(s)) for s in states],
                            geo.gamma[lo:lo + len(w) + 1], geo.xi[lo:lo + len(w) + 1],
                            alpha=m.system.holder_exponent)
    disc = m.disc if m.disc.scheme == "ulam" else None
    tests = test_family(m.disc, 16, a["seed"])
    cc = blk.induce(w, vis, sch, fit, disc=disc, check_blocks=a["blocks_check"], tests=tests,
                    alpha=m.system.holder_exponent)
    J = min(a["blocks_J"], cc.induced.blocks - 1)
    radius, consts = blk.twist_radius(cc, fit, J)
    z = [0.0, radius / 8, -radius / 8, 1j * radius / 8, -1j * radius / 8]
    bt = blk.block_triplet(cc, J, z, fit=fit, radius=radius, tests=tests)
    res = AnalysisResult("blocks", {"blocks": cc.induced.blocks, "ell": cc.induced.ell.tolist(),
                                    "radius": radius, "constants": consts, "fit": fit.to_dict(),
                                    "gap_constants": cc.induced.constants,
                                    "ratio": {str(k): v for k, v in bt.ratio.items()}})
    res.check("schedule sandwich", float("nan"), float("nan"), sch.sandwich_holds)
    res.check("L gap <= 2", float("nan"), 2.0, cc.induced.gap_ok)
    res.check("eps0^n contraction", max((v / b for _, _, v, b in cc.decay), default=0.0), 1.0,
              cc.contraction_holds)
    worst = max(max(r["nu_one"], r["nu_h"]) for r in bt.residuals.values())
    res.check("normalization residual", worst, 1e-8, worst <= 1e-8)
    res.check("rank-one decay ratio at z=0", bt.ratio[0j], 2 * sch.eps0, bt.ratio[0j] <= 2 * sch.eps0)
    res.tables["schedule"] = (["j", "N_j", "block_size"],
                              [(j, int(sch.cum[j]), int(sch.n_sizes[j])) for j in range(sch.n_sizes.size)])
    res.tables["lambda"] = (["z_real", "z_imag", "block", "lambda_real", "lambda_imag"],
                            [(z.real, z.imag, j, v.real, v.imag) for z in bt.z_grid
                             for j, v in enumerate(bt.lambdas[z])])
    return res


ANALYSIS_FUNCS = {"rpf": _rpf, "decay": _decay, "cones": _cones, "blocks": _blocks, "clt": _clt,
                  "mdp": _mdp, "var": _var, "mixing": _mixing}


# ----------------------------------------------------------------------------
# orchestration

@dataclass
class RunReport:
    config_text: str
    config_digest: str
    results: list
    wall_time: float
    errors: dict

    @property
    def failures(self) -> list:
        out = [(r.name, a) for r in self.results for a in r.assertions if not a["passed"]]
        out += [(name, {"name": "completed", "measured": msg, "bound": None, "passed": False})
                for name, msg in self.errors.items()]
        return out

    @property
    def passed(self) -> bool:
        return not self.failures

    def body(self) -> dict:
        return {
            "config": {"sha256": self.config_digest, "text": self.config_text},
            "analyses": {r.name: {"summary": r.summary, "assertions": r.assertions} for r in self.results},
            "errors": self.errors,
            "passed": self.passed,
        }

    def to_json(self) -> str:
        body = self.body()
        digest = hashlib.sha256(_dump(body).encode()).hexdigest()
        body["report_sha256"] = digest
        body["wall_time"] = self.wall_time
        return _dump(body) + "\n"


def run(cfg: ExperimentConfig, out_dir: Path | None = None, threads: int = 1) -> RunReport:
    """Execute every requested analysis and write the report and tables."""
    t0 = time.perf_counter()
    try:
        model = build_model(cfg)
    except QuenchlabError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"model construction failed: {exc}", None) from None
    a = cfg["analysis"]
    needs_window = any(x in cfg.analyses for x in ("rpf", "decay", "cones", "blocks", "clt", "mdp", "var"))
    errors = {}
    if needs_window:
        model.path = sample_path(model.env, 0, _path_length(cfg), cfg["environment"]["seed"])
        try:
            model.triplet, model.window = rpf.normalized_cocycle(
                model.system, model.path, model.potential, model.disc, a["burn_in"], model.observable,
                a["rpf_tol"])
        except QuenchlabError as exc:
            errors["rpf"] = f"{type(exc).__name__}: {exc}"

    def one(name):
        if needs_window and model.window is None and name != "mixing":
            return None, "triplet unavailable"
        try:
            return ANALYSIS_FUNCS[name](model, cfg), None
        except ConfigError:
            raise
        except QuenchlabError as exc:
            return None, f"{type(exc).__name__}: {exc}"

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        outcomes = list(pool.map(one, cfg.analyses))
    results = []
    for name, (res, err) in zip(cfg.analyses, outcomes):
        if err is not None:
            errors.setdefault(name, err)
        else:
            results.append(res)
    report = RunReport(cfg.text, cfg.digest, results, time.perf_counter() - t0, errors)

    out_dir = Path(out_dir if out_dir is not None else cfg["output"]["dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out_dir / "config.ini").write_text(cfg.text, encoding="utf-8")
    series = {}
    for r in results:
        for tname, (header, rows) in r.tables.items():
            _write_csv(out_dir / f"{r.name}_{tname}.csv", header, rows)
            series.update(_long_series(f"{r.name}_{tname}", header, rows))
    limits.write_long_csv(out_dir / "series_long.csv", series)
    return report


def _long_series(prefix: str, header, rows) -> dict:
    """Numeric columns of a table against its first column."""
    out = {}
    for c in range(1, len(header)):
        pts = []
        for row in rows:
            x, y = row[0], row[c]
            if isinstance(x, (bool, np.bool_)) or isinstance(y, (bool, np.bool_)):
                break
            if not isinstance(x, (int, float, np.integer, np.floating)):
                break
            if not isinstance(y, (int, float, np.integer, np.floating)):
                break
            pts.append((x, y))
        else:
            if pts:
                out[f"{prefix}:{header[c]}"] = pts
    return out


def list_presets() -> list[tuple[str, str]]:
    return [(name, desc) for name, (desc, _) in PRESETS.items()]


def _load(target: str, seed_override):
    if target.startswith("preset:"):
        return parse_config(preset_text(target.split(":", 1)[1]), seed_override)
    if not os.path.exists(target) and target in PRESETS:
        return parse_config(preset_text(target), seed_override)
    return load_config(target, seed_override)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="quenchlab", description="Quenched limit theorem experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment config (a path or preset:NAME)")
    p_run.add_argument("config")
    p_run.add_argument("--seed-override", type=int, default=None)
    p_run.add_argument("--out-dir", default=None)
    p_run.add_argument("--threads", type=int, default=int(os.environ.get(THREADS_ENV, "1")))
    sub.add_parser("list-presets", help="list built-in presets")
    p_show = sub.add_parser("show-preset", help="print a preset config")
    p_show.add_argument("name")
    args = parser.parse_args(argv)

    if args.command == "list-presets":
        for name, desc in list_presets():
            print(f"{name}\t{desc}")
        return 0
    if args.command == "show-preset":
        try:
            sys.stdout.write(preset_text(args.name))
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        return 0
    try:
        cfg = _load(args.config, args.seed_override)
        report = run(cfg, args.out_dir, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    for name, a in report.failures:
        print(f"FAIL {name}: {a['name']}: measured {a['measured']} vs bound {a['bound']}", file=sys.stderr)
    print(f"{'PASS' if report.passed else 'FAIL'} ({len(report.results)} analyses, "
          f"{report.wall_time:.2f} s)")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
