"""Pipeline configuration.

The configuration is an INI file read with :mod:`configparser`::

    [problem]
    kind = transformer2d        ; transformer2d | synthetic3d | bundle
    nx = 8
    ny = 8
    nz = 3                      ; synthetic3d only
    sigma = 2e4
    turns = 300, 500
    resistance = 2, 3
    bundle =                    ; path of an existing bundle when kind = bundle

    [time]
    t0 = 0
    t_end = 0.01
    steps = 2000
    scheme = bdf1
    newton_tol = 1e-10
    max_iter = 25

    [training]
    u1 = 45.5e3 : 900           ; amp : omega pairs, amp * sin(omega * pi * t)
    u2 = 77e3 : 1700            ; several terms are joined with '+'

    [test]
    u1 = 46.5e3 : 1010
    u2 = 78e3 : 1900

    [pod]
    tol = 1e-7                  ; a non-empty r = <int> takes precedence

    [deim]
    ell = quarter               ; <int> | rank | quarter (= max(3, rank // 4))
    tol =                       ; a non-empty tol takes precedence over ell

    [tolerances]
    dissipation_rtol = 1e-6
    io_rtol = 1e-8
    structure = 1e-10
    equivalence_factor = 10

    [run]
    out = out
    seed = 42

Keys given on the command line as ``section.key=value`` override the file.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, StageDependencyError
from .integrator import SineInput, TimeGrid

DEFAULTS = {
    "problem": {"kind": "transformer2d", "nx": "8", "ny": "8", "nz": "3", "sigma": "",
                "turns": "", "resistance": "", "bundle": ""},
    "time": {"t0": "0", "t_end": "0.01", "steps": "2000", "scheme": "bdf1",
             "newton_tol": "1e-10", "max_iter": "25"},
    "training": {"u1": "45.5e3 : 900", "u2": "77e3 : 1700"},
    "test": {"u1": "46.5e3 : 1010", "u2": "78e3 : 1900"},
    "pod": {"tol": "1e-7", "r": ""},
    "deim": {"ell": "quarter", "tol": ""},
    "tolerances": {"dissipation_rtol": "1e-6", "io_rtol": "1e-8", "structure": "1e-10",
                   "equivalence_factor": "10"},
    "run": {"out": "out", "seed": "42"},
}

PROBLEM_KINDS = ("transformer2d", "synthetic3d", "bundle")


def parse_input_spec(section: dict, where: str) -> SineInput:
    """Channels ``u1, u2, ...`` of ``amp : omega [+ amp : omega ...]`` terms."""
    chans = []
    j = 1
    while f"u{j}" in section and section[f"u{j}"].strip():
        terms = []
        for term in section[f"u{j}"].split("+"):
            parts = term.split(":")
            if len(parts) != 2:
                raise ConfigError(f"[{where}] u{j}: expected 'amp : omega', got {term.strip()!r}")
            try:
                terms.append((float(parts[0]), float(parts[1])))
            except ValueError as exc:
                raise ConfigError(f"[{where}] u{j}: {exc}") from exc
        chans.append(terms)
        j += 1
    extra = [k for k in section if k.startswith("u") and k[1:].isdigit() and int(k[1:]) >= j]
    if extra:
        raise ConfigError(f"[{where}] channels must be numbered u1, u2, ... without gaps")
    if not chans:
        raise ConfigError(f"[{where}] no input channels given")
    return SineInput(chans)


def _floats(text, key):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"{key}: expected comma-separated numbers, got {text!r}") from exc


@dataclass
class PipelineConfig:
    sections: dict
    source: str
    base_dir: Path

    # -- typed accessors --------------------------------------------------
    def get(self, section, key) -> str:
        return self.sections[section][key]

    def getfloat(self, section, key) -> float:
        try:
            return float(self.get(section, key))
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: expected a number, got {self.get(section, key)!r}") from exc

    def getint(self, section, key) -> int:
        try:
            return int(self.get(section, key))
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: expected an integer, got {self.get(section, key)!r}") from exc

    @property
    def out_dir(self) -> Path:
        p = Path(self.get("run", "out"))
        return p if p.is_absolute() else self.base_dir / p

    @property
    def seed(self) -> int:
        return self.getint("run", "seed")

    def grid(self) -> TimeGrid:
        steps = self.getint("time", "steps")
        if steps < 1:
            raise ConfigError("[time] steps must be at least 1")
        t0, t1 = self.getfloat("time", "t0"), self.getfloat("time", "t_end")
        if not t1 > t0:
            raise ConfigError("[time] t_end must exceed t0")
        return TimeGrid.uniform(t0, t1, steps)

    def training_input(self) -> SineInput:
        return parse_input_spec(self.sections["training"], "training")

    def test_input(self) -> SineInput:
        return parse_input_spec(self.sections["test"], "test")

    def problem_kwargs(self) -> dict:
        s = self.sections["problem"]
        kw = {}
        if s["sigma"].strip():
            kw["sigma"] = self.getfloat("problem", "sigma")
        if s["turns"].strip():
            kw["turns"] = _floats(s["turns"], "[problem] turns")
        if s["resistance"].strip():
            kw["resistance"] = _floats(s["resistance"], "[problem] resistance")
        return kw

    def pod_spec(self) -> dict:
        """``{"r": int}`` or ``{"tol": float}``."""
        if self.get("pod", "r").strip():
            r = self.getint("pod", "r")
            if r < 1:
                raise ConfigError("[pod] r must be positive")
            return {"r": r}
        if not self.get("pod", "tol").strip():
            raise ConfigError("[pod] needs r or tol")
        tol = self.getfloat("pod", "tol")
        if not 0 < tol < 1:
            raise ConfigError("[pod] tol must lie in (0, 1)")
        return {"tol": tol}

    def deim_spec(self) -> dict:
        """``{"tol": float}``, ``{"ell": int}`` or ``{"ell": "rank" | "quarter"}``."""
        if self.get("deim", "tol").strip():
            tol = self.getfloat("deim", "tol")
            if not 0 < tol < 1:
                raise ConfigError("[deim] tol must lie in (0, 1)")
            return {"tol": tol}
        ell = self.get("deim", "ell").strip()
        if ell in ("rank", "quarter"):
            return {"ell": ell}
        if not ell:
            raise ConfigError("[deim] needs ell or tol")
        n = self.getint("deim", "ell")
        if n < 1:
            raise ConfigError("[deim] ell must be positive")
        return {"ell": n}

    def digest(self) -> str:
        text = "\n".join(f"{sec}.{k}={v}" for sec in sorted(self.sections)
                         for k, v in sorted(self.sections[sec].items()))
        return hashlib.sha256(text.encode()).hexdigest()

    def validate(self):
        kind = self.get("problem", "kind")
        if kind not in PROBLEM_KINDS:
            raise ConfigError(f"[problem] kind must be one of {PROBLEM_KINDS}, got {kind!r}")
        if kind == "bundle":
            b = self.get("problem", "bundle").strip()
            if not b:
                raise ConfigError("[problem] kind = bundle needs a bundle path")
            path = Path(b) if Path(b).is_absolute() else self.base_dir / b
            if not path.is_dir():
                raise StageDependencyError(f"[problem] bundle {path} does not exist")
        for key in ("nx", "ny", "nz", "seed") if kind != "bundle" else ("seed",):
            sec = "run" if key == "seed" else "problem"
            self.getint(sec, key)
        self.grid()
        if self.get("time", "scheme").lower() not in ("bdf1", "bdf2"):
            raise ConfigError("[time] scheme must be bdf1 or bdf2")
        self.getfloat("time", "newton_tol")
        self.getint("time", "max_iter")
        tr, te = self.training_input(), self.test_input()
        if tr.m != te.m:
            raise ConfigError("training and test inputs have different channel counts")
        self.pod_spec()
        self.deim_spec()
        for key in DEFAULTS["tolerances"]:
            self.getfloat("tolerances", key)
        self.problem_kwargs()
        return self


def load_config(path=None, overrides=()) -> PipelineConfig:
    """Read ``path`` (optional), apply ``section.key=value`` overrides and validate."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    cp.optionxform = str
    cp.read_dict(DEFAULTS)
    base = Path.cwd()
    source = "<defaults>"
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"configuration file {path} not found")
        try:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        base = path.resolve().parent
        source = str(path)
    for sec in cp.sections():
        if sec not in DEFAULTS:
            raise ConfigError(f"unknown section [{sec}]")
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        lhs, val = item.split("=", 1)
        sec, key = lhs.strip().split(".", 1)
        if sec not in DEFAULTS:
            raise ConfigError(f"override {item!r}: unknown section {sec!r}")
        cp.set(sec, key.strip(), val.strip())
    sections = {sec: dict(cp.items(sec)) for sec in cp.sections()}
    for sec, keys in sections.items():
        allowed = set(DEFAULTS[sec])
        if sec in ("training", "test"):
            continue
        unknown = set(keys) - allowed
        if unknown:
            raise ConfigError(f"[{sec}] unknown keys: {', '.join(sorted(unknown))}")
    return PipelineConfig(sections, source, base).validate()
