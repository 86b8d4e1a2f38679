"""INI model configuration.

A configuration has a ``[model]`` section, an optional ``[tolerances]``
section and one ``[block N]`` section per block (N counted from 1)::

    [model]
    design = 0 1; 1 0          # rows separated by ';' (default: fully connected)
    components = 1
    center = true
    scale = false

    [block 1]
    data = X1.csv              # relative to the config file
    tau = 0.33
    s = 7.7                    # optional l1 radius
    tv = 0.61                  # omega of the 1-D total-variation penalty
    mu = 5e-4                  # default smoothing for every penalty

    [block 2]
    data = X2.csv
    tau = 0.32
    group_l12 = 0.13
    groups = groups.txt
    group_l12.mu = 5e-4        # per-penalty smoothing override

Optional ``[cv]`` (``target``, ``folds`` and grid axes such as
``block1.tau = 0.1, 0.5``) and ``[bootstrap]`` (``rounds``, ``threshold``)
sections drive the corresponding commands.
"""
from __future__ import annotations

import configparser
import os
import re
from dataclasses import dataclass, field, fields

import numpy as np

from . import core, penalty as pen

__all__ = ["Config", "load_config", "parse_config", "parse_design",
           "parse_grid", "ConfigError",
           "PENALTY_KINDS"]

PENALTY_KINDS = ("tv", "group_l12")
DEFAULT_MU = 5e-4
_BLOCK = re.compile(r"^block\s*(\d+)$", re.I)
_TRUE = ("1", "true", "yes", "on")
_FALSE = ("0", "false", "no", "off")


class ConfigError(ValueError):
    pass


@dataclass
class BlockEntry:
    data: str | None
    tau: float
    s: float | None
    c: float
    penalties: dict            # kind -> (omega, mu)
    groups: str | None


@dataclass
class Config:
    design: np.ndarray | None
    components: int
    center: bool
    scale: bool
    init: str
    scheme: str
    tolerances: core.Tolerances
    blocks: list
    cv: dict = field(default_factory=dict)
    bootstrap: dict = field(default_factory=dict)
    source: str | None = None

    @property
    def K(self):
        return len(self.blocks)

    def data_paths(self):
        return [b.data for b in self.blocks]

    def group_paths(self):
        return [b.groups for b in self.blocks if b.groups]

    def build_spec(self, blocks, n_components=None, seed=None):
        """Turn the configuration into a ModelSpec for the given blocks."""
        if len(blocks) != self.K:
            raise ConfigError("config describes %d blocks, got %d data files"
                              % (self.K, len(blocks)))
        C = self.design if self.design is not None \
            else np.ones((self.K, self.K)) - np.eye(self.K)
        if C.shape != (self.K, self.K):
            raise ConfigError("design is %dx%d but there are %d blocks"
                              % (C.shape + (self.K,)))
        design = core.Design(C)
        cons, pens = [], []
        for k, (entry, blk) in enumerate(zip(self.blocks, blocks)):
            cons.append(core.BlockConstraint(entry.tau, entry.s, entry.c))
            atts = []
            for kind, (omega, mu) in entry.penalties.items():
                if kind == "tv":
                    op = pen.build_tv1d(blk.p)
                else:
                    if not entry.groups:
                        raise ConfigError("block %d: group_l12 needs a "
                                          "'groups' file" % (k + 1))
                    groups, gw = pen.read_groups(entry.groups, blk.p)
                    op = pen.build_group_l12(groups, blk.p, gw)
                atts.append(core.PenaltyAttachment(op, omega, mu, kind))
            pens.append(atts)
        return core.ModelSpec(
            design, cons, pens,
            n_components=self.components if n_components is None
            else n_components,
            tolerances=self.tolerances, scheme=self.scheme, init=self.init,
            seed=seed)

    def resolved(self):
        """Plain-data view for manifests."""
        return {
            "design": None if self.design is None else self.design.tolist(),
            "components": self.components,
            "center": self.center,
            "scale": self.scale,
            "init": self.init,
            "scheme": self.scheme,
            "tolerances": {f.name: getattr(self.tolerances, f.name)
                           for f in fields(self.tolerances)},
            "blocks": [{"data": b.data, "tau": b.tau, "s": b.s, "c": b.c,
                        "penalties": {k: {"omega": o, "mu": m}
                                      for k, (o, m) in b.penalties.items()},
                        "groups": b.groups} for b in self.blocks],
            "cv": self.cv,
            "bootstrap": self.bootstrap,
        }


def parse_design(text):
    """``"0 1; 1 0"`` (rows split on ';' or newlines) -> square array."""
    rows = [r for r in re.split(r"[;\n]", text) if r.strip()]
    try:
        C = np.array([[float(v) for v in re.split(r"[,\s]+", r.strip())]
                      for r in rows])
    except ValueError:
        raise ConfigError("design: non-numeric entry in %r" % text)
    if C.ndim != 2:
        raise ConfigError("design rows have different lengths")
    return C


def _float(sec, key, default=None, cast=float):
    if key not in sec:
        return default
    raw = sec[key].strip()
    if raw.lower() in ("none", ""):
        return None
    try:
        return cast(raw)
    except ValueError:
        raise ConfigError("[%s] %s: cannot parse %r" % (sec.name, key, raw))


def _bool(sec, key, default):
    if key not in sec:
        return default
    v = sec[key].strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise ConfigError("[%s] %s: expected a boolean, got %r"
                      % (sec.name, key, sec[key]))


def _resolve(path, base):
    if path is None or os.path.isabs(path) or base is None:
        return path
    return os.path.normpath(os.path.join(base, path))


def _parse_block(sec, base):
    known = {"data", "tau", "s", "c", "mu", "groups"}
    mu = _float(sec, "mu", DEFAULT_MU)
    pens = {}
    for kind in PENALTY_KINDS:
        omega = _float(sec, kind)
        if omega is not None:
            pens[kind] = (omega, _float(sec, kind + ".mu", mu))
        known |= {kind, kind + ".mu"}
    extra = set(sec) - known
    if extra:
        raise ConfigError("[%s] unknown keys: %s"
                          % (sec.name, ", ".join(sorted(extra))))
    try:
        entry = BlockEntry(
            data=_resolve(sec.get("data"), base),
            tau=_float(sec, "tau", 1.0),
            s=_float(sec, "s"),
            c=_float(sec, "c", 1.0),
            penalties=pens,
            groups=_resolve(sec.get("groups"), base))
        core.BlockConstraint(entry.tau, entry.s, entry.c)
        for omega, mu in pens.values():
            core.PenaltyAttachment(pen.build_tv1d(2), omega, mu)
    except ValueError as e:
        raise ConfigError("[%s] %s" % (sec.name, e))
    return entry


def _parse_list(text):
    return [None if t.strip().lower() == "none" else float(t)
            for t in re.split(r"[,\s]+", text.strip()) if t]


def parse_config(text, base=None, source=None) -> Config:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read_string(text, source=source or "<config>")
    except configparser.Error as e:
        raise ConfigError(str(e))
    m = cp["model"] if cp.has_section("model") else {}
    if cp.has_section("model"):
        extra = set(m) - {"design", "components", "center", "scale", "init",
                          "scheme"}
        if extra:
            raise ConfigError("[model] unknown keys: %s"
                              % ", ".join(sorted(extra)))
    design = parse_design(m["design"]) if "design" in m else None
    comps = _float(m, "components", 1, int) if m else 1
    tol_kw = {}
    if cp.has_section("tolerances"):
        names = {f.name: f.type for f in fields(core.Tolerances)}
        for key, raw in cp["tolerances"].items():
            if key not in names:
                raise ConfigError("[tolerances] unknown key %r" % key)
            if key == "restart":
                tol_kw[key] = _bool(cp["tolerances"], key, True)
            elif key.startswith("max_iter"):
                tol_kw[key] = _float(cp["tolerances"], key, cast=int)
            else:
                tol_kw[key] = _float(cp["tolerances"], key)
    numbered = []
    for name in cp.sections():
        mt = _BLOCK.match(name)
        if mt:
            numbered.append((int(mt.group(1)), cp[name]))
        elif name not in ("model", "tolerances", "cv", "bootstrap"):
            raise ConfigError("unknown section [%s]" % name)
    numbered.sort(key=lambda t: t[0])
    if not numbered:
        raise ConfigError("no [block N] sections")
    if [i for i, _ in numbered] != list(range(1, len(numbered) + 1)):
        raise ConfigError("block sections must be numbered 1..K without gaps")
    blocks = [_parse_block(sec, base) for _, sec in numbered]
    cv = {}
    if cp.has_section("cv"):
        sec = cp["cv"]
        cv = {"target": _float(sec, "target", len(blocks), int),
              "folds": _float(sec, "folds", 7, int), "grid": {}}
        for key, raw in sec.items():
            if key in ("target", "folds"):
                continue
            try:
                cv["grid"][key] = _parse_list(raw)
            except ValueError:
                raise ConfigError("[cv] %s: bad value list %r" % (key, raw))
        if not 1 <= cv["target"] <= len(blocks):
            raise ConfigError("[cv] target must be a block number 1..%d"
                              % len(blocks))
    boot = {}
    if cp.has_section("bootstrap"):
        sec = cp["bootstrap"]
        boot = {"rounds": _float(sec, "rounds", 100, int),
                "threshold": _float(sec, "threshold", 1e-10)}
    try:
        return Config(
            design=design, components=comps,
            center=_bool(m, "center", True) if m else True,
            scale=_bool(m, "scale", False) if m else False,
            init=m.get("init", "svd").strip() if m else "svd",
            scheme=m.get("scheme", "horst").strip() if m else "horst",
            tolerances=core.Tolerances(**tol_kw), blocks=blocks, cv=cv,
            bootstrap=boot, source=source)
    except TypeError as e:
        raise ConfigError(str(e))


def parse_grid(text):
    """Axes of a CV grid from ``name = v1, v2, ...`` lines.

    A ``[cv]`` header is optional; ``folds`` and ``target`` keys are
    returned separately as ints (None when absent).
    """
    if not text.lstrip().startswith("["):
        text = "[cv]\n" + text
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read_string(text, source="<grid>")
    except configparser.Error as e:
        raise ConfigError(str(e))
    if not cp.has_section("cv"):
        raise ConfigError("grid file needs a [cv] section")
    sec = cp["cv"]
    axes = {}
    for key, raw in sec.items():
        if key in ("target", "folds"):
            continue
        try:
            axes[key] = _parse_list(raw)
        except ValueError:
            raise ConfigError("grid %s: bad value list %r" % (key, raw))
    return axes, _float(sec, "folds", cast=int), _float(sec, "target",
                                                         cast=int)


def load_config(path) -> Config:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_config(text, base=os.path.dirname(os.path.abspath(path)),
                        source=str(path))
