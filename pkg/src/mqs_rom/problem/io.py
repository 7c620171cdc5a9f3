"""Matrix Market files and on-disk problem bundles.

A bundle is a directory with a ``meta`` key-value file, one coordinate-format
Matrix Market file per matrix (``M11.mtx``, ``Cd.mtx``, ``Upsilon.mtx``,
``R.mtx``, ``Mf.mtx``, ``Mf1.mtx``) and ``elements.txt`` with the flux
element table (row group, scale, volume, conducting flag).
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

from ..errors import IngestionError, MqsRomError
from .fem import FemProblem
from .reluctivity import ReluctivityCurve

BUNDLE_FILES = ("M11.mtx", "Cd.mtx", "Upsilon.mtx", "R.mtx", "Mf.mtx", "Mf1.mtx")
_HEADER = "%%matrixmarket"


def write_matrix_market(path, M, symmetric: bool = False) -> Path:
    """Write a matrix in coordinate format with 17 significant digits."""
    path = Path(path)
    S = sp.coo_matrix(M, dtype=float)
    scipy.io.mmwrite(str(path), S, precision=17, symmetry="symmetric" if symmetric else "general")
    # scipy appends .mtx when missing; keep the caller's exact name
    if not path.exists() and Path(str(path) + ".mtx").exists():
        os.replace(str(path) + ".mtx", path)
    return path


def _check_header(path: Path):
    try:
        with open(path, "r", encoding="ascii", errors="strict") as fh:
            first = fh.readline().strip()
    except (OSError, UnicodeDecodeError) as exc:
        raise IngestionError(f"{path}: cannot read Matrix Market file ({exc})") from exc
    tokens = first.lower().split()
    if len(tokens) != 5 or tokens[0] != _HEADER:
        raise IngestionError(f"{path}: malformed header {first!r}")
    _, obj, fmt, field, sym = tokens
    if obj != "matrix" or fmt != "coordinate":
        raise IngestionError(f"{path}: only 'matrix coordinate' files are supported, got {obj} {fmt}")
    if field not in ("real", "integer", "double"):
        raise IngestionError(f"{path}: unsupported field {field!r}")
    if sym not in ("general", "symmetric"):
        raise IngestionError(f"{path}: unsupported symmetry {sym!r}")


def read_matrix_market(path) -> sp.csr_matrix:
    """Read a coordinate Matrix Market file (1-based indices) into CSR.

    Raises
    ------
    IngestionError
        Malformed header, truncated data or indices out of bounds.
    """
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"{path}: no such file")
    _check_header(path)
    try:
        M = scipy.io.mmread(str(path))
    except (ValueError, IndexError, OSError) as exc:
        raise IngestionError(f"{path}: {exc}") from exc
    M = sp.coo_matrix(M, dtype=float)
    if M.nnz and (M.row.min() < 0 or M.col.min() < 0):
        raise IngestionError(f"{path}: index out of bounds")
    # duplicates are summed, as is conventional for assembled matrices
    return M.tocsr()


def write_meta(path, meta: dict):
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(meta):
            val = meta[key]
            if isinstance(val, float):
                val = f"{val:.17g}"
            fh.write(f"{key} = {val}\n")


def read_meta(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"{path}: no such file")
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise IngestionError(f"{path}:{lineno}: expected 'key = value'")
            key, val = line.split("=", 1)
            out[key.strip()] = val.strip()
    return out


def write_problem_bundle(problem: FemProblem, directory) -> list[Path]:
    """Persist a problem; returns the written files."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = [
        write_matrix_market(d / "M11.mtx", problem.M11),
        write_matrix_market(d / "Cd.mtx", problem.Cd),
        write_matrix_market(d / "Upsilon.mtx", problem.Upsilon),
        write_matrix_market(d / "R.mtx", problem.R),
        write_matrix_market(d / "Mf.mtx", problem.Mf),
        write_matrix_market(d / "Mf1.mtx", problem.Mf1),
    ]
    table = np.column_stack([problem.elem_cond.astype(float), problem.elem_scale,
                             problem.elem_vol, problem.elem_rows.astype(float)])
    np.savetxt(d / "elements.txt", table, fmt="%.17g",
               header="conducting scale volume rows...")
    files.append(d / "elements.txt")
    meta = dict(problem.meta)
    meta.update({"n1": problem.n1, "n2": problem.n2, "m": problem.m,
                 "dimension": problem.dimension, "k2": problem.kernel_C2().dim})
    meta.update({f"curve.{k}": float(v) for k, v in problem.curve.params().items()})
    write_meta(d / "meta", meta)
    files.append(d / "meta")
    return files


def _int(meta, key, path):
    try:
        return int(meta[key])
    except (KeyError, ValueError) as exc:
        raise IngestionError(f"{path}: missing or invalid integer '{key}'") from exc


def read_problem_bundle(directory) -> FemProblem:
    """Load and re-validate a bundle written by :func:`write_problem_bundle`."""
    d = Path(directory)
    if not d.is_dir():
        raise IngestionError(f"{d}: bundle directory not found")
    meta = read_meta(d / "meta")
    n1, n2, m = _int(meta, "n1", d), _int(meta, "n2", d), _int(meta, "m", d)
    for name in BUNDLE_FILES:
        if not (d / name).is_file():
            raise IngestionError(f"{d}: missing {name}")
    M11 = read_matrix_market(d / "M11.mtx")
    Cd = read_matrix_market(d / "Cd.mtx")
    Ups = read_matrix_market(d / "Upsilon.mtx").toarray()
    R = read_matrix_market(d / "R.mtx").toarray()
    try:
        table = np.atleast_2d(np.loadtxt(d / "elements.txt"))
    except (OSError, ValueError) as exc:
        raise IngestionError(f"{d}: cannot read elements.txt ({exc})") from exc
    if table.shape[1] < 4:
        raise IngestionError(f"{d}: elements.txt needs at least 4 columns")
    try:
        curve = ReluctivityCurve(**{k: float(meta[f"curve.{k}"])
                                    for k in ("k1", "k2", "k3", "nu_I", "zeta_max")})
    except KeyError as exc:
        raise IngestionError(f"{d}: missing reluctivity parameter {exc}") from exc
    reserved = {"n1", "n2", "m", "dimension", "k2"}
    extra = {k: v for k, v in meta.items() if k not in reserved and not k.startswith("curve.")}
    try:
        problem = FemProblem(n1=n1, n2=n2, m=m, M11=M11, Cd=Cd, Upsilon=Ups, R=R, curve=curve,
                             elem_rows=table[:, 3:].astype(np.int64), elem_scale=table[:, 1],
                             elem_vol=table[:, 2], elem_cond=table[:, 0] != 0,
                             dimension=meta.get("dimension", "2d"), meta=extra)
    except MqsRomError as exc:
        raise IngestionError(f"{d}: {exc}") from exc
    problem.validate(error=IngestionError)
    for name, diag in (("Mf.mtx", problem.Mf_diag), ("Mf1.mtx", problem.Mf1_diag)):
        stored = read_matrix_market(d / name)
        if stored.shape != (problem.n_faces,) * 2 or np.abs(stored.diagonal() - diag).max() > 1e-12 * max(1.0, np.abs(diag).max()):
            raise IngestionError(f"{d}: {name} is inconsistent with the element table")
    if "k2" in meta:
        k2 = problem.kernel_C2().dim
        if k2 != _int(meta, "k2", d):
            raise IngestionError(f"{d}: meta k2 = {meta['k2']} but ker(C2) has dimension {k2}")
    return problem
