"""Command-line pipeline: generate -> simulate -> reduce -> verify -> report.

Every stage reads its inputs from the output directory written by the
previous stages, so stages can be rerun independently.  Exit codes:
0 success, 2 configuration, invalid-parameter or missing-artifact error,
3 numerical failure,
4 a verification check failed.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__, matcore
from . import passivity as P
from . import rom as R
from .config import PipelineConfig, load_config
from .errors import (ConfigError, ConstructionError, GeometryError, IngestionError,
                     MqsRomError, ParameterError, StageDependencyError)
from .integrator import Trajectory, integrate, snapshots
from .mqs_system import MqsDae
from .problem import (build_synthetic_3d, build_transformer_2d, read_problem_bundle,
                      write_problem_bundle)
from .problem.io import read_meta, write_meta
from .regularization import (check_index_one, condensed_form, output_matrix, regularize,
                             sample_states, to_ode)

log = logging.getLogger("mqs_rom")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VERIFY = 0, 2, 3, 4
STAGES = ("generate", "simulate", "reduce", "verify", "report")


class VerificationFailed(MqsRomError):
    """At least one verification check failed."""


# -- small I/O helpers -------------------------------------------------------

def _write_csv(path: Path, header, columns):
    data = np.column_stack(columns)
    np.savetxt(path, data, delimiter=",", header=",".join(header), comments="", fmt="%.17g")
    return path


def _read_csv(path: Path):
    if not path.is_file():
        raise StageDependencyError(f"{path} is missing; run the earlier stages first")
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise StageDependencyError(f"{path} not found; run 'mqs-rom {stage}' first")
    return path


def update_manifest(cfg: PipelineConfig, stage: str, status: dict | None = None) -> Path:
    """Rewrite ``manifest.txt`` with digests of every file in the output directory."""
    out = cfg.out_dir
    path = out / "manifest.txt"
    meta = read_meta(path) if path.is_file() else {}
    meta = {k: v for k, v in meta.items() if not k.startswith("file.")}
    if meta.get("config_sha256") not in (None, cfg.digest()):
        meta = {k: v for k, v in meta.items() if not k.startswith(("stage.", "status."))}
    meta.update({
        "config_sha256": cfg.digest(),
        "config_source": cfg.source,
        "version.mqs_rom": __version__,
        "version.numpy": np.__version__,
        "version.scipy": __import__("scipy").__version__,
        "version.python": platform.python_version(),
        f"stage.{stage}": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    })
    for k, v in (status or {}).items():
        meta[f"status.{k}"] = v
    for f in sorted(out.rglob("*")):
        if f.is_file() and f != path:
            meta[f"file.{f.relative_to(out).as_posix()}"] = _sha256(f)
    write_meta(path, meta)
    return path


# -- shared construction -------------------------------------------------------

def build_problem(cfg: PipelineConfig):
    kind = cfg.get("problem", "kind")
    kw = cfg.problem_kwargs()
    if kind == "transformer2d":
        return build_transformer_2d(cfg.getint("problem", "nx"), cfg.getint("problem", "ny"), **kw)
    if kind == "synthetic3d":
        return build_synthetic_3d(cfg.getint("problem", "nx"), cfg.getint("problem", "ny"),
                                  cfg.getint("problem", "nz"), **kw)
    b = Path(cfg.get("problem", "bundle"))
    return read_problem_bundle(b if b.is_absolute() else cfg.base_dir / b)


def load_problem(cfg: PipelineConfig):
    d = cfg.out_dir / "problem"
    _require(d / "meta", "generate")
    try:
        return read_problem_bundle(d)
    except IngestionError as exc:
        raise StageDependencyError(f"problem bundle is unusable: {exc}") from exc


def _integrate(cfg, system, u):
    return integrate(system, u, cfg.grid(), scheme=cfg.get("time", "scheme"),
                     newton_tol=cfg.getfloat("time", "newton_tol"),
                     max_iter=cfg.getint("time", "max_iter"))


def _systems(problem):
    dae = MqsDae(problem)
    reg = regularize(dae)
    ode = to_ode(reg)
    full = dae.coupled_form() if reg.k2 == 0 else None
    return dae, reg, ode, full


def _load_traj(path: Path, kind: str) -> Trajectory:
    header, data = _read_csv(path)
    n = sum(h.startswith("x_") for h in header)
    m = sum(h.startswith("u_") for h in header)
    return Trajectory(t=data[:, 0], x=data[:, 1:1 + n].T, u=data[:, 1 + n:1 + n + m].T,
                      y=data[:, 1 + n + m:].T, kind=kind)


def _load_rom(cfg, ode):
    d = _require(cfg.out_dir / "rom" / "meta", "reduce").parent
    pod, deim = R.load_rom(d, ode)
    _, sv = _read_csv(d / "singular_values_f1.csv")
    deim.f1_singular_values = sv[:, 1]
    return pod, deim


# -- stages ---------------------------------------------------------------------

def cmd_generate(cfg: PipelineConfig, dump_transforms: bool = False):
    problem = build_problem(cfg)
    d = cfg.out_dir / "problem"
    files = write_problem_bundle(problem, d)
    if dump_transforms:
        files += regularize(MqsDae(problem)).dump(d / "transforms")
    log.info("generate: n1=%d n2=%d m=%d, %d files", problem.n1, problem.n2, problem.m, len(files))
    update_manifest(cfg, "generate")


def cmd_simulate(cfg: PipelineConfig, which=("full", "regularized", "ode"), dump_transforms=False):
    problem = load_problem(cfg)
    dae, reg, ode, full = _systems(problem)
    d = cfg.out_dir / "sim"
    d.mkdir(parents=True, exist_ok=True)
    u = cfg.training_input()
    if u.m != problem.m:
        raise ConfigError(f"training input has {u.m} channels, the problem has {problem.m} ports")
    systems = {"full": full, "regularized": reg, "ode": ode}
    trajs = {}
    for name in which:
        sysm = systems[name]
        if sysm is None:
            log.warning("simulate: the coupled FE system is singular for this problem (k2 > 0); skipped")
            continue
        tr = _integrate(cfg, sysm, u)
        tr.to_csv(d / f"traj_{name}.csv")
        trajs[name] = tr
        log.info("simulate %s: %d steps, mean Newton iterations %.2f", name, tr.iterations.size,
                 tr.iterations.mean())
    if not trajs:
        raise ConfigError("simulate: nothing to integrate")
    src = trajs.get("ode") or next(iter(trajs.values()))
    Xa = snapshots(src, "a1", dae)
    Xf = snapshots(src, "f1", dae)
    np.savetxt(d / "snapshots_a1.csv", Xa, delimiter=",", fmt="%.17g")
    np.savetxt(d / "snapshots_f1.csv", Xf, delimiter=",", fmt="%.17g")
    if dump_transforms:
        reg.dump(d / "transforms")
    update_manifest(cfg, "simulate")


def _resolve_ell(spec, rank_f):
    if "tol" in spec:
        return None, spec["tol"]
    ell = spec["ell"]
    if ell == "rank":
        return rank_f, None
    if ell == "quarter":
        return max(3, rank_f // 4), None
    return ell, None


def cmd_reduce(cfg: PipelineConfig):
    problem = load_problem(cfg)
    d_sim = cfg.out_dir / "sim"
    Xa = np.loadtxt(_require(d_sim / "snapshots_a1.csv", "simulate"), delimiter=",", ndmin=2)
    Xf = np.loadtxt(_require(d_sim / "snapshots_f1.csv", "simulate"), delimiter=",", ndmin=2)
    _, reg, ode, _ = _systems(problem)
    basis = R.pod_basis(Xa, **cfg.pod_spec())
    pod = R.build_pod(ode, basis.matrix)
    sf = matcore.thin_svd(Xf)[1]
    ell, tol = _resolve_ell(cfg.deim_spec(), R.numerical_rank(sf))
    deim = R.build_deim(pod, Xf, ell=ell, tol=tol)
    d = cfg.out_dir / "rom"
    R.save_rom(d, pod, deim)
    k = np.arange(1, basis.singular_values.size + 1)
    _write_csv(d / "singular_values_a1.csv", ["k", "sigma"], [k, basis.singular_values])
    k = np.arange(1, sf.size + 1)
    _write_csv(d / "singular_values_f1.csv", ["k", "sigma"], [k, sf])
    log.info("reduce: r=%d, ell=%d, cond(S^T Uf)=%.3e", pod.r, deim.ell, deim.cond)
    update_manifest(cfg, "reduce")


def _rel_max(a, b):
    scale = max(float(np.abs(a).max()), np.finfo(float).tiny)
    return float(np.abs(a - b).max() / scale)


def cmd_verify(cfg: PipelineConfig):
    """Run every structural, passivity and error-bound check; persist the evidence."""
    problem = load_problem(cfg)
    dae, reg, ode, full = _systems(problem)
    pod, deim = _load_rom(cfg, ode)
    d_sim = cfg.out_dir / "sim"
    out = cfg.out_dir / "verify"
    out.mkdir(parents=True, exist_ok=True)
    tol_s = cfg.getfloat("tolerances", "structure")
    eq_tol = cfg.getfloat("tolerances", "equivalence_factor") * cfg.getfloat("time", "newton_tol")
    diss_rtol = cfg.getfloat("tolerances", "dissipation_rtol")
    io_rtol = cfg.getfloat("tolerances", "io_rtol")
    results = {}

    def record(name, ok, value):
        results[name] = (bool(ok), value)
        log.info("verify %-24s %s (%s)", name, "PASS" if ok else "FAIL", value)

    states = sample_states(reg, 3, cfg.seed)
    cert = check_index_one(reg, states, tol=tol_s, raise_on_fail=False)
    record("index_one", cert.passed, f"sigma_min={cert.sigma_min:.6e} norm_E={cert.norm_E:.6e} "
                                     f"dependence={cert.independence_residual:.3e}")
    try:
        cf = condensed_form(reg, states, tol=tol_s)
        worst = max(max(cf.pattern_residuals(x)) for x in states)
        record("condensed_form", True, f"blocks={cf.blocks} off_pattern={worst:.3e}")
    except ConstructionError as exc:
        record("condensed_form", False, str(exc))
    try:
        output_matrix(reg, states, check=True, tol=tol_s)
        record("output_matrix", True, "B^T E^- B = R^-1 and state independence")
    except ConstructionError as exc:
        record("output_matrix", False, str(exc))

    tr_reg = _load_traj(d_sim / "traj_regularized.csv", "regularized")
    a = reg.lift(tr_reg.x.T).T
    if cfg.get("time", "scheme").lower() == "bdf1":
        y_der = -(dae.B_cal.T @ np.diff(a, axis=1)) / np.diff(tr_reg.t) + dae.R_inv @ tr_reg.u[:, 1:]
        e = _rel_max(tr_reg.y[:, 1:], y_der)
        record("output_trajectory", e <= eq_tol, f"rel={e:.3e} tol={eq_tol:.1e}")

    tr_ode = _load_traj(d_sim / "traj_ode.csv", "ode")
    chain = [("regularized", tr_reg)]
    if full is not None:
        tr_fe = _load_traj(d_sim / "traj_full.csv", "fe")
        chain.insert(0, ("full", tr_fe))
        rep = P.check_dissipation(tr_fe, P.StorageEvaluator(full), rtol=diss_rtol)
        _write_dissipation(out / "dissipation_full.csv", rep)
        record("passivity_full", rep.passed, f"max_violation={rep.max_violation:.3e}")
    else:
        rep = P.check_dissipation(tr_reg, P.StorageEvaluator(reg), rtol=diss_rtol)
        _write_dissipation(out / "dissipation_regularized.csv", rep)
        record("passivity_regularized", rep.passed, f"max_violation={rep.max_violation:.3e}")
    errs = [_rel_max(tr_ode.y, tr.y) for _, tr in chain]
    record("equivalence_chain", max(errs) <= eq_tol,
           " ".join(f"{n}-ode={e:.3e}" for (n, _), e in zip(chain, errs)) + f" tol={eq_tol:.1e}")

    u_train, u_test = cfg.training_input(), cfg.test_input()
    tr_pod = _integrate(cfg, pod, u_train)
    rep = P.check_dissipation(tr_pod, P.StorageEvaluator(pod), rtol=diss_rtol)
    _write_dissipation(out / "dissipation_pod.csv", rep)
    record("passivity_pod", rep.passed, f"r={pod.r} max_violation={rep.max_violation:.3e}")

    Xa = np.loadtxt(d_sim / "snapshots_a1.csv", delimiter=",", ndmin=2)
    Xf = np.loadtxt(d_sim / "snapshots_f1.csv", delimiter=",", ndmin=2)
    sa = matcore.thin_svd(Xa)[1]
    pod_full = R.build_pod(ode, R.pod_basis(Xa, r=R.numerical_rank(sa)).matrix)
    e = _rel_max(tr_ode.y, _integrate(cfg, pod_full, u_train).y)
    record("pod_full_rank", e <= eq_tol, f"r={pod_full.r} rel={e:.3e}")
    rank_f = R.numerical_rank(deim.f1_singular_values)
    deim_full = R.build_deim(pod, Xf, ell=rank_f)
    e = _rel_max(tr_pod.y, _integrate(cfg, deim_full, u_train).y)
    record("deim_full_rank", e <= eq_tol, f"ell={rank_f} rel={e:.3e}")

    try:
        b1, b2, (mu1, mu2) = P.error_bounds(deim)
    except MqsRomError as exc:
        record("error_bound", False, str(exc))
        b1 = None
    tr_ode_t = _integrate(cfg, ode, u_test)
    tr_pod_t = _integrate(cfg, pod, u_test)
    tr_deim_t = _integrate(cfg, deim, u_test)
    tr_ode_t.to_csv(out / "traj_ode_test.csv")
    tr_pod_t.to_csv(out / "traj_pod_test.csv")
    tr_deim_t.to_csv(out / "traj_deim_test.csv")
    if b1 is not None:
        t = tr_deim_t.t
        th1, th2 = b1.theta(t), b2.theta(t)
        eps = np.linalg.norm(tr_pod_t.x - tr_deim_t.x, axis=0)
        ok = bool(np.all(th1 >= eps) and np.all(th2 >= eps) and np.all(th2 <= th1))
        record("error_bound", ok, f"min(theta2-eps)={np.min(th2 - eps):.3e} max eps={eps.max():.3e}")
        y_d, delta = P.passify(tr_deim_t, deim.C, th2)
        _, mn = P.io_passivity_integral(tr_deim_t.u, y_d, t)
        power = np.einsum("ij,ij->j", tr_deim_t.u, y_d)
        budget = io_rtol * (1.0 + np.abs(power).max()) * (t[-1] - t[0])
        record("passivity_enforced", mn >= -budget, f"min_io={mn:.3e} budget={budget:.3e}")
        write_meta(out / "bounds", {"delta_deim": b1.delta_deim, "mu1": mu1, "mu2": mu2,
                                    "lambda_min_E": b1.lambda_min_E, "norm_C": b1.norm_C,
                                    "m_nu": problem.curve.m_nu, "m_nu_C": problem.curve.m_nu_C,
                                    "r": pod.r, "ell": deim.ell, "cond_deim": deim.cond})

    status = {k: "PASS" if ok else "FAIL" for k, (ok, _) in results.items()}
    with open(out / "summary.txt", "w", encoding="utf-8") as fh:
        for k, (ok, v) in results.items():
            fh.write(f"{k} = {'PASS' if ok else 'FAIL'} ; {v}\n")
    update_manifest(cfg, "verify", status)
    failed = [k for k, (ok, _) in results.items() if not ok]
    if failed:
        raise VerificationFailed("failed checks: " + ", ".join(failed))


def _write_dissipation(path, rep: P.PassivityReport):
    slack = np.concatenate([[np.nan], rep.slack])
    tol = np.concatenate([[np.nan], rep.tol])
    _write_csv(path, ["t", "S", "step_slack", "step_tol", "io_integral"],
               [rep.t, rep.storage, slack, tol, rep.io_integral])


def cmd_report(cfg: PipelineConfig):
    """Consolidated series for plotting, built from persisted verify artifacts."""
    problem = load_problem(cfg)
    dae, reg, ode, _ = _systems(problem)
    pod, deim = _load_rom(cfg, ode)
    d_ver = cfg.out_dir / "verify"
    bounds = read_meta(_require(d_ver / "bounds", "verify"))
    tr_ode = _load_traj(d_ver / "traj_ode_test.csv", "ode")
    tr_pod = _load_traj(d_ver / "traj_pod_test.csv", "pod")
    tr_deim = _load_traj(d_ver / "traj_deim_test.csv", "deim")
    lam, nC = float(bounds["lambda_min_E"]), float(bounds["norm_C"])
    b1 = P.ErrorBound(float(bounds["delta_deim"]), float(bounds["mu1"]), lam, nC)
    b2 = P.ErrorBound(float(bounds["delta_deim"]), min(float(bounds["mu1"]), float(bounds["mu2"])), lam, nC)
    t = tr_deim.t
    th1, th2 = b1.theta(t), b2.theta(t)
    y_d, delta = P.passify(tr_deim, deim.C, th2)
    S = P.StorageEvaluator(deim).series(tr_deim.x)
    power = np.einsum("ij,ij->j", tr_deim.u, tr_deim.y)
    supply = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(t) * (power[1:] + power[:-1]))])
    io, _ = P.io_passivity_integral(tr_deim.u, y_d, t)
    eps = np.linalg.norm(tr_pod.x - tr_deim.x, axis=0)
    m = tr_deim.u.shape[0]
    d = cfg.out_dir / "report"
    d.mkdir(parents=True, exist_ok=True)
    _write_csv(d / "report.csv",
               ["t", "S", "diss_slack", "io_integral", "theta1", "theta2", "eps_norm", "delta"]
               + [f"y_delta_{j + 1}" for j in range(m)],
               [t, S, S - S[0] - supply, io, th1, th2, eps, delta, y_d.T])
    _write_csv(d / "state_error.csv", ["t", "eps_norm", "theta1", "theta2"], [t, eps, th1, th2])
    _write_csv(d / "output_error.csv", ["t", "err_deim", "err_delta", "normC_theta", "two_normC_theta"],
               [t, np.linalg.norm(tr_pod.y - tr_deim.y, axis=0), np.linalg.norm(tr_pod.y - y_d, axis=0),
                nC * th2, 2 * nC * th2])
    _write_csv(d / "perturbation.csv", ["t"] + [f"delta_u_{j + 1}" for j in range(m)],
               [t, (delta[None, :] * tr_deim.u).T])
    _write_csv(d / "outputs.csv", ["t"] + [f"y_{j + 1}" for j in range(m)] + [f"y_delta_{j + 1}" for j in range(m)],
               [t, tr_ode.y.T, y_d.T])
    rel_deim = P.relative_output_error(tr_ode.y, tr_deim.y)
    rel_delta = P.relative_output_error(tr_ode.y, y_d)
    _write_csv(d / "relative_errors.csv", ["t", "rel_deim", "rel_delta"], [t, rel_deim, rel_delta])
    summary = dict(bounds)
    summary.update({"max_eps": float(eps.max()), "max_theta1": float(th1.max()),
                    "max_theta2": float(th2.max()), "max_rel_deim": float(rel_deim.max()),
                    "max_rel_delta": float(rel_delta.max()), "min_io_integral": float(io.min())})
    write_meta(d / "summary", summary)
    update_manifest(cfg, "report")


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mqs-rom", description=__doc__.splitlines()[0])
    ap.add_argument("stage", choices=STAGES)
    ap.add_argument("--config", help="INI configuration file")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                    help="override a configuration key (repeatable)")
    ap.add_argument("--dump-transforms", action="store_true",
                    help="also write the regularization transforms (Yhat, C_r, W) as Matrix Market files")
    ap.add_argument("--which", default="full,regularized,ode",
                    help="simulate only: comma-separated subset of full,regularized,ode")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, args.overrides)
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        if args.stage == "generate":
            cmd_generate(cfg, args.dump_transforms)
        elif args.stage == "simulate":
            which = tuple(w.strip() for w in args.which.split(",") if w.strip())
            bad = set(which) - {"full", "regularized", "ode"}
            if bad or not which:
                raise ConfigError(f"--which: unknown systems {sorted(bad)}")
            cmd_simulate(cfg, which, args.dump_transforms)
        elif args.stage == "reduce":
            cmd_reduce(cfg)
        elif args.stage == "verify":
            cmd_verify(cfg)
        else:
            cmd_report(cfg)
    except (ConfigError, StageDependencyError, IngestionError, ParameterError, GeometryError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except VerificationFailed as exc:
        log.error("%s", exc)
        return EXIT_VERIFY
    except MqsRomError as exc:
        log.error("numerical failure: %s: %s", type(exc).__name__, exc)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
