"""Stage-by-stage pipeline with checksummed, deterministic CSV/JSON artifacts.

Stages run in the fixed order fit -> loadflow -> lyap -> roa -> slice ->
project -> cct inside one output directory. ``manifest.json`` records the
config hash, tool version, seed, and the SHA-256 of every artifact; a stage
that needs an earlier artifact verifies it against the manifest first.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from tlroa.config import RunConfig, config_hash
from tlroa.fault import estimate_cct
from tlroa.loadflow import Equilibrium, solve_equilibrium
from tlroa.lyapunov import Ellipsoid, build_initial_roa, linearize, sample_boundary, solve_lyapunov
from tlroa.roa import AXIS_NAMES, Hyperplane, TlRoa, build_tlroa, expand_states

STAGES = ("fit", "loadflow", "lyap", "roa", "slice", "project", "cct")
MANIFEST = "manifest.json"

# artifact file -> producing stage
ARTIFACTS = {
    "network.json": "fit",
    "equilibrium.json": "loadflow",
    "lyapunov.json": "lyap",
    "boundary_samples.csv": "lyap",
    "cloud.csv": "roa",
    "roa.json": "roa",
    "slice.csv": "slice",
    "projection.csv": "project",
    "cct_report.json": "cct",
    "fault_trajectory.csv": "cct",
}
REQUIRES = {
    "fit": (),
    "loadflow": (),
    "lyap": ("equilibrium.json",),
    "roa": ("equilibrium.json", "lyapunov.json"),
    "slice": ("cloud.csv",),
    "project": ("cloud.csv",),
    "cct": ("equilibrium.json", "lyapunov.json"),
}


PLANT_SECTIONS = ("base", "wt", "statcom", "grid", "network")
# configuration fields each stage reads on top of the plant sections
STAGE_FIELDS = {
    "fit": (),
    "loadflow": (),
    "lyap": ("analysis.level", "analysis.coupling", "analysis.n_samples", "analysis.strategy",
             "analysis.seed"),
    "roa": ("analysis.horizon", "analysis.dt", "analysis.escape"),
    "slice": ("analysis.slice_columns", "analysis.slice_normal", "analysis.slice_intercept",
              "analysis.slice_thickness"),
    "project": ("analysis.project_axes",),
    "cct": ("schedule", "analysis.cadence", "analysis.horizon", "analysis.dt",
            "analysis.escape"),
}
UPSTREAM = {"fit": (), "loadflow": (), "lyap": ("loadflow",), "roa": ("lyap",),
            "slice": ("roa",), "project": ("roa",), "cct": ("lyap",)}


def stage_hash(cfg: RunConfig, stage: str) -> str:
    """Hash of exactly the configuration an artifact of ``stage`` depends on."""
    todo, keys = [stage], set()
    while todo:
        s = todo.pop()
        keys.update(STAGE_FIELDS[s])
        todo.extend(UPSTREAM[s])
    r = cfg.resolved
    sel = {sec: r[sec] for sec in PLANT_SECTIONS}
    for k in sorted(keys):
        sec, _, name = k.partition(".")
        sel[k] = r[sec][name] if name else r[sec]
    return config_hash(sel)


class MissingArtifactError(FileNotFoundError):
    """A stage's input artifact has not been produced by its prior stage."""


class ChecksumError(ValueError):
    """An artifact on disk does not match the checksum recorded in the manifest."""


def _version() -> str:
    from tlroa import __version__

    return __version__


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def read_csv(path) -> tuple[list, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    return rows[0], np.asarray(rows[1:], dtype=float).reshape(-1, len(rows[0]))


@dataclass
class RunManifest:
    config_hash: str
    version: str
    seed: int
    subcommand: str
    inputs: list = field(default_factory=list)
    outputs: dict = field(default_factory=dict)   # file -> {"stage", "sha256", "config"}
    stages: list = field(default_factory=list)
    wall_time_s: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        m = cls(**d)
        for name, entry in m.outputs.items():
            if set(entry) != {"stage", "sha256", "config"} or len(entry["sha256"]) != 64:
                raise ValueError(f"manifest entry for {name} is malformed")
        return m

    @classmethod
    def load(cls, out_dir) -> "RunManifest | None":
        p = Path(out_dir) / MANIFEST
        return cls.from_dict(json.loads(p.read_text())) if p.exists() else None


class Run:
    """One output directory plus its manifest."""

    def __init__(self, cfg: RunConfig, out_dir, subcommand: str = "run"):
        self.cfg = cfg
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        old = RunManifest.load(self.out)
        self.manifest = RunManifest(cfg.hash, _version(), cfg.analysis.seed, subcommand,
                                    inputs=[cfg.source] if cfg.source else [])
        if old is not None:
            # keep artifacts of earlier invocations; require() checks they still apply
            self.manifest.outputs = dict(old.outputs)

    def write(self, name: str, text: str) -> Path:
        path = self.out / name
        path.write_text(text)
        stage = ARTIFACTS[name]
        self.manifest.outputs[name] = {"stage": stage, "sha256": sha256(path),
                                       "config": stage_hash(self.cfg, stage)}
        return path

    def require(self, name: str) -> Path:
        stage = ARTIFACTS[name]
        entry = self.manifest.outputs.get(name)
        path = self.out / name
        if entry is None or not path.exists():
            raise MissingArtifactError(f"{name} is missing: run stage '{stage}' first")
        if entry["config"] != stage_hash(self.cfg, stage):
            raise MissingArtifactError(f"{name} was produced with a different configuration: "
                                       f"rerun stage '{stage}' first")
        if sha256(path) != entry["sha256"]:
            raise ChecksumError(f"checksum mismatch for {path}: the file changed after stage "
                                f"'{stage}' wrote it; rerun '{stage}'")
        return path

    def save_manifest(self, wall: float) -> RunManifest:
        self.manifest.wall_time_s = round(wall, 3)
        (self.out / MANIFEST).write_text(dumps(self.manifest.to_dict()))
        return self.manifest

    # -- artifact loaders -------------------------------------------------

    def equilibrium(self) -> Equilibrium:
        return Equilibrium.from_dict(json.loads(self.require("equilibrium.json").read_text()))

    def ellipsoid(self) -> Ellipsoid:
        return Ellipsoid.from_dict(json.loads(self.require("lyapunov.json").read_text()))

    def cloud(self) -> np.ndarray:
        header, a = read_csv(self.require("cloud.csv"))
        return a[:, [header.index(c) for c in AXIS_NAMES]]

    # -- stages -------------------------------------------------------------

    def stage_fit(self):
        self.write("network.json", dumps(self.cfg.resolved["network"]))

    def stage_loadflow(self):
        eq = solve_equilibrium(self.cfg.plant)
        self.write("equilibrium.json", dumps(eq.to_dict()))

    def stage_lyap(self):
        an = self.cfg.analysis
        eq = self.equilibrium()
        lin = linearize(self.cfg.plant, eq, an.coupling)
        p = solve_lyapunov(lin.a_full)
        e = build_initial_roa(p, an.level)
        doc = e.to_dict()
        ev = lin.eigenvalues
        doc.update(a=lin.a_full.tolist(), coupling=an.coupling,
                   eigenvalues=[[float(v.real), float(v.imag)] for v in ev])
        self.write("lyapunov.json", dumps(doc))
        pts = sample_boundary(e, an.n_samples, an.strategy, an.seed) + eq.state
        full = expand_states(pts, self.cfg.plant)
        self.write("boundary_samples.csv",
                   csv_text(AXIS_NAMES + ("sample_index",),
                            (list(r) + [k] for k, r in enumerate(full))))

    def stage_roa(self):
        an = self.cfg.analysis
        eq, e = self.equilibrium(), self.ellipsoid()
        roa = build_tlroa(self.cfg.plant, eq, e, an.horizon, an.n_samples, an.dt, an.strategy,
                          an.seed, escape=an.escape)
        full = expand_states(roa.absolute_cloud(), self.cfg.plant)
        self.write("cloud.csv", csv_text(AXIS_NAMES + ("seed_index",),
                                         (list(r) + [int(k)] for k, r in
                                          zip(roa.seed_index, full))))
        c = roa.consistency
        self.write("roa.json", dumps({
            "horizon": roa.horizon, "dt": roa.dt, "n_samples": an.n_samples,
            "n_points": roa.n_points, "escaped_index": roa.escaped_index.tolist(),
            "coordinates": "absolute",
            "forward_check": {"checked": len(c.get("checked", [])),
                              "max_ratio": c.get("max_ratio"), "passed": c.get("passed")}}))

    def stage_slice(self):
        an = self.cfg.analysis
        cloud = self.cloud()
        cols = [AXIS_NAMES.index(c) for c in an.slice_columns]
        intercept = an.slice_intercept
        if intercept is None:
            # plane through the cloud centroid
            intercept = float(np.dot(an.slice_normal, cloud[:, cols].mean(axis=0)))
        h = Hyperplane(an.slice_normal, intercept, an.slice_thickness)
        sub = cloud[:, cols]
        keep = np.abs(h.distance(sub)) <= h.thickness
        self.write("slice.csv", csv_text(AXIS_NAMES, cloud[keep]))

    def stage_project(self):
        axes = self.cfg.analysis.project_axes
        cloud = self.cloud()
        cols = [AXIS_NAMES.index(a) for a in axes]
        self.write("projection.csv", csv_text(tuple(axes), cloud[:, cols]))

    def stage_cct(self):
        an = self.cfg.analysis
        eq, e = self.equilibrium(), self.ellipsoid()
        roa = TlRoa(an.horizon, np.zeros((0, 4)), np.zeros((0, 4)), np.zeros(0, dtype=int), e,
                    eq, self.cfg.plant, an.dt)
        rep = estimate_cct(self.cfg.plant, eq, self.cfg.scenario, roa, an.cadence)
        self.write("cct_report.json", dumps(rep.to_dict()))
        tr = rep.fault_trajectory
        full = expand_states(tr.states, self.cfg.plant)
        self.write("fault_trajectory.csv", csv_text(("t",) + AXIS_NAMES,
                                                    (np.r_[t, r] for t, r in zip(tr.times, full))))


def run_pipeline(cfg: RunConfig, out_dir, stages=STAGES, subcommand: str = "run") -> RunManifest:
    """Execute ``stages`` (any subset, run in canonical order) into ``out_dir``.

    The manifest keeps entries written by earlier invocations into the same
    directory; each entry carries the hash of the configuration its stage
    read, so a stale or edited dependency is rejected.
    """
    unknown = set(stages) - set(STAGES)
    if unknown:
        raise ValueError(f"unknown stage(s) {sorted(unknown)}; choose from {STAGES}")
    t0 = time.perf_counter()
    run = Run(cfg, out_dir, subcommand)
    for stage in (s for s in STAGES if s in stages):
        for name in REQUIRES[stage]:
            run.require(name)
        getattr(run, f"stage_{stage}")()
        run.manifest.stages.append(stage)
    return run.save_manifest(time.perf_counter() - t0)
