"""Synthetic cranial and facial defects, and the pair-building manifest step."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .formats import atomic_write, load_volume, save_volume
from .volume import Volume, binarize, require_binary

log = logging.getLogger(__name__)

KINDS = ("cranial", "facial")
SPLITS = ("train", "val", "test")
MAX_RETRIES = 16


class EmptyImplant(ValueError):
    pass


@dataclass(frozen=True)
class DefectSpec:
    """Defect geometry as fractions of the grid extent.

    A fraction f along an axis of n voxels refers to the voxel-centre
    coordinate ``f * n - 0.5``, so voxel i sits at fraction ``(i + 0.5) / n``.
    The cranial radius is a fraction of the smallest grid dimension.
    """

    kind: str
    seed: int = 0
    center: tuple[float, float, float] = (0.5, 0.5, 0.85)
    radius: float = 0.15
    plane: float = 0.7
    band: tuple[float, float] = (0.0, 0.5)
    anterior_axis: int = 1
    superior_axis: int = 2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"defect kind must be one of {KINDS}, got {self.kind!r}")
        if not all(0.0 <= c <= 1.0 for c in self.center):
            raise ValueError(f"center fractions must lie in [0, 1], got {self.center}")
        if not 0.0 < self.radius <= 1.0:
            raise ValueError(f"radius fraction must lie in (0, 1], got {self.radius}")
        if not 0.0 <= self.plane <= 1.0:
            raise ValueError(f"plane fraction must lie in [0, 1], got {self.plane}")
        lo, hi = self.band
        if not (0.0 <= lo < hi <= 1.0):
            raise ValueError(f"band must satisfy 0 <= zlo < zhi <= 1, got {self.band}")
        if self.anterior_axis == self.superior_axis or {self.anterior_axis, self.superior_axis} - {0, 1, 2}:
            raise ValueError("anterior and superior axes must be distinct axes in {0, 1, 2}")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "DefectSpec":
        d = dict(d)
        for key in ("center", "band"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def sphere_mask(dims, center_vox, radius_vox) -> np.ndarray:
    grids = np.meshgrid(*(np.arange(n, dtype=np.float64) for n in dims), indexing="ij")
    d2 = sum((g - c) ** 2 for g, c in zip(grids, center_vox))
    return d2 <= radius_vox ** 2


def cranial_region(dims, spec: DefectSpec) -> np.ndarray:
    center = [f * n - 0.5 for f, n in zip(spec.center, dims)]
    return sphere_mask(dims, center, spec.radius * min(dims))


def facial_region(dims, spec: DefectSpec) -> np.ndarray:
    ant = (np.arange(dims[spec.anterior_axis]) + 0.5) / dims[spec.anterior_axis]
    sup = (np.arange(dims[spec.superior_axis]) + 0.5) / dims[spec.superior_axis]
    shape_a = [1, 1, 1]
    shape_a[spec.anterior_axis] = -1
    shape_s = [1, 1, 1]
    shape_s[spec.superior_axis] = -1
    in_front = (ant > spec.plane).reshape(shape_a)
    in_band = ((sup >= spec.band[0]) & (sup < spec.band[1])).reshape(shape_s)
    return np.broadcast_to(in_front & in_band, tuple(dims))


def _split(complete: Volume, region: np.ndarray) -> tuple[Volume, Volume]:
    skull = complete.data.astype(bool)
    implant = skull & region
    if not implant.any():
        raise EmptyImplant("removal region does not intersect the skull")
    defective = skull & ~region
    return complete.with_data(defective.astype(np.uint8)), complete.with_data(implant.astype(np.uint8))


def inject_cranial(complete: Volume, spec: DefectSpec) -> tuple[Volume, Volume]:
    """Remove a discrete sphere; returns (defective, implant)."""
    require_binary(complete, "complete")
    if spec.kind != "cranial":
        raise ValueError("inject_cranial needs a cranial DefectSpec")
    return _split(complete, cranial_region(complete.dims, spec))


def inject_facial(complete: Volume, spec: DefectSpec) -> tuple[Volume, Volume]:
    """Remove everything anterior of the cut plane inside the axial band."""
    require_binary(complete, "complete")
    if spec.kind != "facial":
        raise ValueError("inject_facial needs a facial DefectSpec")
    return _split(complete, facial_region(complete.dims, spec))


def inject(complete: Volume, spec: DefectSpec) -> tuple[Volume, Volume]:
    if spec.kind == "cranial":
        return inject_cranial(complete, spec)
    return inject_facial(complete, spec)


GEOMETRY_FIELDS = {"cranial": ("center", "radius"), "facial": ("plane", "band")}


def random_spec(complete: Volume, kind: str, seed: int, base: DefectSpec | None = None,
                pinned=()) -> DefectSpec:
    """Sample defect geometry from ``seed``.

    Cranial centres are drawn from foreground voxels in the superior third
    of the foreground bounding box. Facial cuts are placed relative to the
    bounding box as well. ``base`` supplies the axis conventions, and any
    field named in ``pinned`` is taken from ``base`` instead of sampled.
    """
    base = base or DefectSpec(kind=kind)
    spec = _sample_spec(complete, kind, seed, base)
    return replace(spec, **{f: getattr(base, f) for f in pinned})


def _sample_spec(complete: Volume, kind: str, seed: int, base: DefectSpec) -> DefectSpec:
    dims = complete.dims
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), KINDS.index(kind)]))
    fg = np.argwhere(complete.data)
    if len(fg) == 0:
        raise EmptyImplant("complete skull has no foreground")
    lo, hi = fg.min(axis=0), fg.max(axis=0) + 1
    sup = base.superior_axis
    if kind == "cranial":
        cut = hi[sup] - (hi[sup] - lo[sup]) / 3.0
        candidates = fg[fg[:, sup] >= cut]
        pick = candidates[rng.integers(len(candidates))]
        center = tuple(float((p + 0.5) / n) for p, n in zip(pick, dims))
        radius = float(rng.uniform(0.10, 0.18))
        return replace(base, kind=kind, seed=int(seed), center=center, radius=radius)
    ant = base.anterior_axis
    plane_vox = lo[ant] + rng.uniform(0.70, 0.85) * (hi[ant] - lo[ant])
    z_lo = lo[sup] + rng.uniform(0.0, 0.10) * (hi[sup] - lo[sup])
    z_hi = lo[sup] + rng.uniform(0.40, 0.55) * (hi[sup] - lo[sup])
    return replace(
        base, kind=kind, seed=int(seed),
        plane=float(plane_vox / dims[ant]),
        band=(float(z_lo / dims[sup]), float(z_hi / dims[sup])),
    )


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, dtype=np.uint32)[0])


def inject_with_retries(complete: Volume, kind: str, seed: int, base: DefectSpec | None = None,
                        max_retries: int = MAX_RETRIES, pinned=()):
    """Try successive derived seeds until the implant is nonempty.

    Returns (defective, implant, spec) or raises EmptyImplant after
    ``max_retries`` failed attempts.
    """
    for attempt in range(max_retries):
        spec = random_spec(complete, kind, derive_seed(seed, attempt), base, pinned)
        try:
            defective, implant = inject(complete, spec)
        except EmptyImplant:
            log.info("empty implant (kind=%s seed=%d attempt=%d); retrying", kind, spec.seed, attempt)
            continue
        return defective, implant, spec
    raise EmptyImplant(f"no nonempty {kind} defect after {max_retries} attempts")


# -- manifest ---------------------------------------------------------------

@dataclass
class DatasetManifest:
    """Rows of {id, split, complete, defective, implant, defect_kind, seed}.

    Paths in the JSON file are relative to the manifest's directory;
    in memory they are kept as written and resolved via :meth:`path`.
    """

    entries: list[dict] = field(default_factory=list)
    base_dir: Path = Path(".")

    def path(self, rel) -> Path:
        return Path(self.base_dir) / rel

    def split(self, name: str) -> list[dict]:
        return [e for e in self.entries if e.get("split") == name and not e.get("skipped")]

    def validate(self, check_files: bool = False) -> None:
        ids = [e["id"] for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("manifest ids are not unique")
        for e in self.entries:
            if "split" in e and e["split"] not in SPLITS:
                raise ValueError(f"entry {e['id']!r} has invalid split {e.get('split')!r}")
            if check_files and not e.get("skipped"):
                for key in ("complete", "defective", "implant"):
                    if e.get(key) is not None and not self.path(e[key]).exists():
                        raise FileNotFoundError(f"entry {e['id']!r}: missing {key} file {self.path(e[key])}")

    def to_bytes(self) -> bytes:
        return (json.dumps(self.entries, indent=2, sort_keys=True) + "\n").encode()

    def save(self, path) -> None:
        atomic_write(path, self.to_bytes())

    @classmethod
    def load(cls, path, check_files: bool = False) -> "DatasetManifest":
        path = Path(path)
        entries = json.loads(path.read_text())
        if not isinstance(entries, list):
            raise ValueError(f"{path}: manifest must be a JSON array")
        m = cls(entries, path.parent)
        m.validate(check_files)
        return m


def build_pairs(manifest_in: DatasetManifest, out_dir, seed: int, kind: str = "cranial",
                base_specs: dict | None = None, fmt: str = "nii.gz",
                manifest_dir=None, pinned: dict | None = None) -> DatasetManifest:
    """Generate defective/implant files for every complete skull.

    ``kind`` is ``cranial``, ``facial`` or ``both``. Entries flagged
    ``both_kinds`` (test entries from :func:`split_dataset`) always get both
    kinds. Entries without a split default to ``train``. Cases that stay
    empty after all retries are kept as ``skipped`` rows. ``pinned`` maps a
    kind to spec fields copied from ``base_specs`` rather than sampled.
    """
    if kind not in KINDS + ("both",):
        raise ValueError(f"kind must be cranial, facial or both, got {kind!r}")
    base_specs = base_specs or {}
    pinned = pinned or {}
    out_dir = Path(out_dir)
    manifest_dir = Path(manifest_dir) if manifest_dir is not None else out_dir
    rows = []
    for index, entry in enumerate(manifest_in.entries):
        src = manifest_in.path(entry["complete"])
        case_id = entry.get("id") or Path(entry["complete"]).name.split(".")[0]
        split = entry.get("split", "train")
        kinds = KINDS if kind == "both" or entry.get("both_kinds") else (kind,)
        complete = None
        for k in kinds:
            row = {
                "id": f"{case_id}_{k}",
                "split": split,
                "complete": _relpath(src, manifest_dir),
                "defect_kind": k,
            }
            if complete is None:
                complete = binarize(load_volume(src))
            case_seed = derive_seed(seed, index, KINDS.index(k))
            try:
                defective, implant, spec = inject_with_retries(complete, k, case_seed, base_specs.get(k),
                                                               pinned=pinned.get(k, ()))
            except EmptyImplant as exc:
                log.warning("skipping %s: %s", row["id"], exc)
                rows.append({**row, "defective": None, "implant": None, "seed": case_seed,
                             "skipped": True, "reason": str(exc)})
                continue
            d_path = out_dir / f"{row['id']}_defective.{fmt}"
            i_path = out_dir / f"{row['id']}_implant.{fmt}"
            save_volume(d_path, defective)
            save_volume(i_path, implant)
            rows.append({**row, "defective": _relpath(d_path, manifest_dir),
                         "implant": _relpath(i_path, manifest_dir), "seed": spec.seed,
                         "spec": spec.to_json()})
    return DatasetManifest(rows, manifest_dir)


def _relpath(path, start) -> str:
    return Path(os.path.relpath(Path(path).resolve(), Path(start).resolve())).as_posix()
