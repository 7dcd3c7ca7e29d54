"""Batch refinement experiments: config loading, execution and reports.

Experiment config (JSON; relative paths resolve against the config file)::

    {
      "scene": {"synthetic": {"count": 500, "extent": 1.0, "scale_range": [0.01, 0.05],
                              "opacity_range": [0.5, 1.0], "seed": 0, "background": [0, 0, 0]}},
               # or {"ply": "scene.ply"} or {"json": "scene.json"}
      "camera": {"width": 128, "height": 128, "fov_deg": 60},
               # or {"fx": .., "fy": .., "cx": .., "cy": .., "width": .., "height": .., "near": 0.01}
      "queries": {"poses": [{"name": "q0", "eye": [0.6, -0.4, -3.0], "target": [0, 0, 0]},
                            {"name": "q1", "q": [1, 0, 0, 0], "t": [0, 0, 3]}]},
               # or {"pose_file": "gt.txt", "images": {"q0": "q0.png"}, "srgb": false}
               # or {"pose_file": "gt.txt", "image_dir": "imgs"}  (file named <name>)
               # without images every query is rendered from its GT pose
      "initial": {"noise": [{"q_scale": 0.01, "t_scale": 0.1, "seeds": [0, 1, 2]}]},
               # or {"pose_file": "init.txt"}
      "schedule": [[8e-3, 8e-2, 200], [2e-3, 2e-2, 100], [5e-4, 5e-3, 100]],
      "heuristic": "sad",            # or a list, e.g. ["sad", "psnr", "ssim"]
      "opts": {"stagnation_limit": 40, "max_expansions": 400, ...},
      "output_dir": "out",
      "metric_scale": false,
      "ratio_limits": [0.01, 1.0],
      "save_images": false
    }

Every ``(heuristic, noise level, query, seed)`` combination yields one
report row. Rows are sorted by ``(heuristic, q_scale, t_scale, name, seed)``
and aggregated per ``(heuristic, q_scale, t_scale)`` group.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from statistics import median_low
from typing import Any, Iterable, Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import ConfigError, ContractError
from .images import load_png, save_png
from .pose import DEFAULT_SCHEDULE, Pose, StepSchedule, inject_noise, look_at, pose_error, read_pose_file
from .renderer import Camera, render
from .scene import Scene, SyntheticSpec, generate_synthetic, load_scene
from .search import SearchOptions, refine

log = logging.getLogger(__name__)

__all__ = [
    "NoiseSpec",
    "QuerySpec",
    "ExperimentConfig",
    "ReportRow",
    "Aggregate",
    "Report",
    "run_experiment",
    "aggregate",
    "ratio_within",
    "render_comparison",
    "camera_from_dict",
    "CSV_COLUMNS",
]

HEURISTIC_NAMES = ("sad", "psnr", "ssim")


@dataclass(frozen=True)
class NoiseSpec:
    q_scale: float
    t_scale: float
    seeds: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.q_scale < 0 or self.t_scale < 0:
            raise ConfigError("noise scales must be nonnegative")
        if not self.seeds:
            raise ConfigError("noise spec needs at least one seed")


@dataclass(frozen=True)
class QuerySpec:
    name: str
    gt: Pose
    image: Path | None = None


def camera_from_dict(d: dict) -> Camera:
    try:
        if "fov_deg" in d:
            return Camera.from_fov(int(d["width"]), int(d["height"]), float(d["fov_deg"]), float(d.get("near", 0.01)))
        return Camera(
            float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
            int(d["width"]), int(d["height"]), float(d.get("near", 0.01)),
        )
    except KeyError as e:
        raise ConfigError(f"camera config is missing {e.args[0]!r}") from None


def _one_of(section: dict, keys: Sequence[str], what: str) -> str:
    present = [k for k in keys if k in section]
    if len(present) != 1:
        raise ConfigError(f"{what} needs exactly one of {list(keys)}, got {present}")
    return present[0]


def _resolve(base: Path, p: str | Path) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def _read_poses(path: Path) -> dict[str, Pose]:
    if not path.is_file():
        raise FileNotFoundError(f"pose file not found: {path}")
    return read_pose_file(path)


@dataclass
class ExperimentConfig:
    scene_source: tuple[str, Any]
    camera: Camera
    queries: list[QuerySpec]
    noise: list[NoiseSpec] | None = None
    initial_poses: dict[str, Pose] | None = None
    schedule: StepSchedule = DEFAULT_SCHEDULE
    heuristics: list[str] = field(default_factory=lambda: ["sad"])
    opts: SearchOptions = field(default_factory=SearchOptions)
    output_dir: Path | None = None
    metric_scale: bool = False
    ratio_limits: tuple[float, float] = (0.01, 1.0)
    save_images: bool = False
    srgb_queries: bool = False

    def __post_init__(self) -> None:
        if (self.noise is None) == (self.initial_poses is None):
            raise ConfigError("exactly one initial-pose source (noise or pose file) is required")
        if not self.queries:
            raise ConfigError("at least one query is required")
        names = [q.name for q in self.queries]
        if len(set(names)) != len(names):
            raise ConfigError("query names must be unique")
        if self.initial_poses is not None:
            missing = [n for n in names if n not in self.initial_poses]
            if missing:
                raise ConfigError(f"initial pose file lacks queries {missing}")
        for h in self.heuristics:
            if h not in HEURISTIC_NAMES:
                raise ConfigError(f"unknown heuristic {h!r}")
        self.opts.validate()

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | Path = ".") -> ExperimentConfig:
        base = Path(base_dir)
        for key in ("scene", "camera", "queries", "initial"):
            if key not in data:
                raise ConfigError(f"config is missing {key!r}")

        kind = _one_of(data["scene"], ("synthetic", "ply", "json"), "scene")
        if kind == "synthetic":
            raw = dict(data["scene"]["synthetic"])
            for k in ("scale_range", "opacity_range", "background"):
                if k in raw:
                    raw[k] = tuple(raw[k])
            try:
                spec = SyntheticSpec(**raw)
            except TypeError as e:
                raise ConfigError(f"bad synthetic scene spec: {e}") from None
            spec.validate()
            source: tuple[str, Any] = ("synthetic", spec)
        else:
            source = (kind, _resolve(base, data["scene"][kind]))

        camera = camera_from_dict(data["camera"])
        qd = data["queries"]
        queries = _parse_queries(qd, base)

        init = data["initial"]
        ikind = _one_of(init, ("noise", "pose_file"), "initial")
        noise = initial_poses = None
        if ikind == "noise":
            levels = init["noise"] if isinstance(init["noise"], list) else [init["noise"]]
            noise = [
                NoiseSpec(float(n["q_scale"]), float(n["t_scale"]), tuple(int(s) for s in n.get("seeds", ())))
                for n in levels
            ]
        else:
            initial_poses = _read_poses(_resolve(base, init["pose_file"]))

        heur = data.get("heuristic", "sad")
        heuristics = [heur] if isinstance(heur, str) else list(heur)
        try:
            opts = SearchOptions(**data.get("opts", {}))
        except TypeError as e:
            raise ConfigError(f"bad search opts: {e}") from None
        schedule = StepSchedule.from_list(data["schedule"]) if "schedule" in data else DEFAULT_SCHEDULE
        out = data.get("output_dir")
        limits = data.get("ratio_limits", (0.01, 1.0))
        return cls(
            source, camera, queries, noise, initial_poses, schedule, heuristics, opts,
            _resolve(base, out) if out is not None else None,
            bool(data.get("metric_scale", False)),
            (float(limits[0]), float(limits[1])),
            bool(data.get("save_images", False)),
            bool(qd.get("srgb", False)),
        )

    @classmethod
    def from_json(cls, path: str | Path) -> ExperimentConfig:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        return cls.from_dict(data, path.parent)

    def load_scene(self) -> Scene:
        kind, value = self.scene_source
        if kind == "synthetic":
            return generate_synthetic(value)
        if not Path(value).is_file():
            raise FileNotFoundError(f"scene file not found: {value}")
        return load_scene(value)


def _parse_queries(qd: dict, base: Path) -> list[QuerySpec]:
    if "poses" in qd and "pose_file" in qd:
        raise ConfigError("queries take inline poses or a pose file, not both")
    if "poses" in qd:
        gts = {}
        for entry in qd["poses"]:
            name = str(entry["name"])
            if name in gts:
                raise ConfigError(f"duplicate query name {name!r}")
            if "eye" in entry:
                gts[name] = look_at(entry["eye"], entry.get("target", (0.0, 0.0, 0.0)))
            else:
                gts[name] = Pose(entry["q"], entry["t"])
    elif "pose_file" in qd:
        gts = _read_poses(_resolve(base, qd["pose_file"]))
    else:
        raise ConfigError("queries need 'poses' or 'pose_file'")

    images: dict[str, Path] = {}
    if "images" in qd:
        images = {k: _resolve(base, v) for k, v in qd["images"].items()}
    elif "image_dir" in qd:
        d = _resolve(base, qd["image_dir"])
        images = {name: d / name for name in gts}
    unknown = sorted(set(images) - set(gts))
    if unknown:
        raise ConfigError(f"images given for queries without GT poses: {unknown}")
    return [QuerySpec(name, pose, images.get(name)) for name, pose in gts.items()]


@dataclass(frozen=True)
class ReportRow:
    heuristic: str
    q_scale: float | None
    t_scale: float | None
    name: str
    seed: int
    init_t: float
    init_r: float
    refined_t: float
    refined_r: float
    expansions: int
    evaluations: int
    initial_h: float
    best_h: float
    terminated_by: str

    def sort_key(self) -> tuple:
        return (self.heuristic, self.q_scale or 0.0, self.t_scale or 0.0, self.name, self.seed)


CSV_COLUMNS = tuple(f.name for f in fields(ReportRow))


@dataclass(frozen=True)
class Aggregate:
    heuristic: str
    q_scale: float | None
    t_scale: float | None
    count: int
    median_init_t: float
    median_init_r: float
    median_refined_t: float
    median_refined_r: float
    improvement_t: float
    improvement_r: float
    ratio_within: float
    median_expansions: int
    max_expansions: int


def ratio_within(rows: Iterable[ReportRow], t_limit: float, r_limit: float) -> float:
    """Percentage of rows whose refined errors are within both limits."""
    rows = list(rows)
    if not rows:
        return float("nan")
    hits = sum(1 for r in rows if r.refined_t <= t_limit and r.refined_r <= r_limit)
    return 100.0 * hits / len(rows)


def _improvement(init: float, refined: float) -> float:
    return 0.0 if init == 0 else 100.0 * (1.0 - refined / init)


def aggregate(rows: Sequence[ReportRow], ratio_limits: tuple[float, float] = (0.01, 1.0)) -> list[Aggregate]:
    """Median errors and improvement per (heuristic, noise level) group, lower median for even counts."""
    groups: dict[tuple, list[ReportRow]] = {}
    for r in sorted(rows, key=ReportRow.sort_key):
        groups.setdefault((r.heuristic, r.q_scale, r.t_scale), []).append(r)
    out = []
    for (h, qs, ts), rs in groups.items():
        it = median_low([r.init_t for r in rs])
        ir = median_low([r.init_r for r in rs])
        rt = median_low([r.refined_t for r in rs])
        rr = median_low([r.refined_r for r in rs])
        exp = [r.expansions for r in rs]
        out.append(Aggregate(
            h, qs, ts, len(rs), it, ir, rt, rr,
            _improvement(it, rt), _improvement(ir, rr),
            ratio_within(rs, *ratio_limits), median_low(exp), max(exp),
        ))
    return out


@dataclass
class Report:
    rows: list[ReportRow]
    aggregates: list[Aggregate]
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "rows": [asdict(r) for r in self.rows],
            "aggregates": [asdict(a) for a in self.aggregates],
            "meta": self.meta,
        }

    def write(self, out_dir: str | Path) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        jpath = out_dir / "report.json"
        cpath = out_dir / "report.csv"
        jpath.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        with open(cpath, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for r in self.rows:
                w.writerow(["" if v is None else v for v in (getattr(r, c) for c in CSV_COLUMNS)])
        return jpath, cpath


def render_comparison(query: NDArray[np.float64], rendered: NDArray[np.float64]) -> NDArray[np.float64]:
    """Split view: query above the main diagonal, render below, white 1-pixel diagonal.

    For non-square images the diagonal runs from the top-left to the
    bottom-right corner.
    """
    query = np.asarray(query, dtype=np.float64)
    rendered = np.asarray(rendered, dtype=np.float64)
    if query.shape != rendered.shape:
        raise ContractError(f"image shapes differ: {query.shape} vs {rendered.shape}")
    h, w = query.shape[:2]
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    # column of the diagonal on each row, scaled so it reaches both corners
    diag = np.rint(rows * (w - 1) / max(h - 1, 1)).astype(int)
    out = np.where((cols > diag)[..., None], query, rendered)
    out[cols == diag] = 1.0
    return out


def _load_query(q: QuerySpec, cam: Camera, scene: Scene, mode: str, srgb: bool) -> NDArray[np.float64]:
    if q.image is None:
        return render(scene, cam, q.gt, mode)
    img = load_png(q.image, srgb=srgb)
    if img.shape != cam.shape:
        raise ContractError(f"query {q.image} is {img.shape[1]}x{img.shape[0]}, camera is {cam.width}x{cam.height}")
    return img


def run_experiment(config: ExperimentConfig, write: bool = True) -> Report:
    """Refine every query from every initial pose with every heuristic."""
    t0 = time.perf_counter()
    scene = config.load_scene()
    cam = config.camera
    mode = config.opts.opacity_mode
    queries = {q.name: _load_query(q, cam, scene, mode, config.srgb_queries) for q in config.queries}
    img_dir = None
    if config.save_images and config.output_dir is not None and write:
        img_dir = Path(config.output_dir) / "images"
        img_dir.mkdir(parents=True, exist_ok=True)

    jobs: list[tuple[str, float | None, float | None, QuerySpec, int, Pose]] = []
    for h in config.heuristics:
        for q in config.queries:
            if config.noise is not None:
                for n in config.noise:
                    for s in n.seeds:
                        jobs.append((h, n.q_scale, n.t_scale, q, s, inject_noise(q.gt, n.q_scale, n.t_scale, s)))
            else:
                jobs.append((h, None, None, q, 0, config.initial_poses[q.name]))

    rows = []
    for h, qs, ts, q, seed, init in jobs:
        res = refine(scene, cam, queries[q.name], init, config.schedule, h, config.opts)
        e0 = pose_error(init, q.gt)
        e1 = pose_error(res.best_pose, q.gt)
        rows.append(ReportRow(
            h, qs, ts, q.name, seed,
            e0.translation_error, e0.rotation_error, e1.translation_error, e1.rotation_error,
            res.expansions, res.evaluations, res.initial_h, res.best_h, res.terminated_by,
        ))
        log.info("%s %s seed %d: %.4g/%.4g -> %.4g/%.4g (%d expansions)", h, q.name, seed,
                 e0.translation_error, e0.rotation_error, e1.translation_error, e1.rotation_error, res.expansions)
        if img_dir is not None:
            rendered = render(scene, cam, res.best_pose, mode)
            tag = f"{h}_{q.name}_s{seed}" if qs is None else f"{h}_q{qs:g}_t{ts:g}_{q.name}_s{seed}"
            save_png(render_comparison(queries[q.name], rendered), img_dir / (tag.replace("/", "_") + ".png"))

    rows.sort(key=ReportRow.sort_key)
    report = Report(rows, aggregate(rows, config.ratio_limits), {
        "elapsed_s": time.perf_counter() - t0,
        "units": "m" if config.metric_scale else "scene units",
        "ratio_limits": list(config.ratio_limits),
        "schedule": config.schedule.to_list(),
    })
    if write and config.output_dir is not None:
        report.write(config.output_dir)
    return report
