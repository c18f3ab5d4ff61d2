"""Synthetic nested-ellipsoid phantoms and cohorts with a known survival law."""
from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .exceptions import ConfigurationError, GeometryError
from .nifti import write_volume
from .volume import IntensityVolume, LabelVolume

COHORT_COLUMNS = ("id", "age", "survival_days", "resection_status", "true_ric")


def _rotation_matrix(rotation, rng):
    if rotation is None:
        return np.eye(3)
    if isinstance(rotation, str):
        if rotation != "random":
            raise ConfigurationError(f"rotation must be None, 'random', Euler angles or a matrix; got {rotation!r}")
        return Rotation.random(random_state=rng).as_matrix()
    rotation = np.asarray(rotation, dtype=float)
    if rotation.shape == (3,):
        return Rotation.from_euler("xyz", rotation, degrees=True).as_matrix()
    if rotation.shape == (3, 3):
        if not np.allclose(rotation @ rotation.T, np.eye(3), atol=1e-9):
            raise ConfigurationError("rotation matrix is not orthonormal")
        return rotation
    raise ConfigurationError(f"unsupported rotation of shape {rotation.shape}")


def make_phantom(
    wt_semiaxes=(20.0, 10.0, 5.0),
    ric_target=0.5,
    dims=(64, 64, 48),
    spacing=(1.0, 1.0, 1.0),
    rotation=None,
    seed=None,
    center=None,
    return_intensity=False,
):
    """Voxelise three concentric ellipsoids into a tumour structure map.

    Whole tumour has ``wt_semiaxes`` (mm); the tumour core is the same
    ellipsoid scaled by ``ric_target`` (labels 1 and 4, with the inner half
    scaled ellipsoid enhancing); the shell between core and whole tumour is
    oedema (2).  ``rotation`` may be Euler angles in degrees, a 3x3 matrix or
    ``"random"`` (drawn from ``seed``).  With ``return_intensity`` a two-level
    T1Gd proxy is returned as well.
    """
    rng = np.random.default_rng(seed)
    axes = np.asarray(wt_semiaxes, dtype=float)
    if axes.shape != (3,) or np.any(axes <= 0):
        raise ConfigurationError(f"wt_semiaxes must be 3 positive lengths, got {wt_semiaxes}")
    if not 0 < ric_target <= 1:
        raise ConfigurationError(f"ric_target must lie in (0, 1], got {ric_target}")
    dims = tuple(int(d) for d in dims)
    spacing = np.asarray(spacing, dtype=float)
    R = _rotation_matrix(rotation, rng)

    extent = np.asarray(dims) * spacing
    if center is None:
        center = (np.asarray(dims) - 1) / 2.0 * spacing
    center = np.asarray(center, dtype=float)
    half_box = np.sqrt(((R * axes[None, :]) ** 2).sum(axis=1))
    if np.any(center - half_box < 0) or np.any(center + half_box > extent - spacing):
        raise GeometryError(
            f"phantom with semi-axes {axes.tolist()} does not fit in a {dims} grid with spacing {spacing.tolist()}"
        )

    grids = np.meshgrid(*[np.arange(n) * s for n, s in zip(dims, spacing)], indexing="ij")
    pts = np.stack([g - c for g, c in zip(grids, center)], axis=-1)
    local = pts @ R  # coordinates in the ellipsoid frame
    r2 = ((local / axes) ** 2).sum(axis=-1)
    labels = np.zeros(dims, dtype=np.uint8)
    labels[r2 <= 1.0] = 2
    labels[r2 <= ric_target**2] = 1
    labels[r2 <= (0.5 * ric_target) ** 2] = 4
    vol = LabelVolume(labels, tuple(spacing))
    if not return_intensity:
        return vol
    t1gd = np.where(labels == 4, 2.0, 0.0) + rng.normal(0.0, 0.25, size=dims)
    return vol, IntensityVolume(t1gd.astype(np.float32), tuple(spacing))


@dataclass
class CohortSpec:
    """Parameters of a synthetic cohort; survival = b0 + b_age*age + b_ric*ric + N(0, sigma^2)."""

    n_subjects: int = 100
    dims: tuple = (64, 64, 48)
    spacing: tuple = (1.0, 1.0, 1.0)
    wt_semiaxes: tuple = ((18.0, 24.0), (12.0, 16.0), (8.0, 11.0))
    ric_range: tuple = (0.35, 1.0)
    age_range: tuple = (30.0, 80.0)
    beta0: float = 900.0
    beta_age: float = -4.0
    beta_ric: float = -300.0
    sigma: float = 50.0
    gtr_fraction: float = 1.0
    rotate: bool = True
    seed: int = 0
    write_t1gd: bool = False

    def __post_init__(self):
        if self.n_subjects < 1:
            raise ConfigurationError("n_subjects must be >= 1")
        for name in ("ric_range", "age_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ConfigurationError(f"{name} must satisfy low <= high")
        lo, hi = self.ric_range
        if not (0 < lo and hi <= 1):
            raise ConfigurationError("ric_range must lie in (0, 1]")
        if self.sigma < 0:
            raise ConfigurationError("sigma must be >= 0")
        if len(self.wt_semiaxes) != 3 or any(not 0 < a <= b for a, b in self.wt_semiaxes):
            raise ConfigurationError("wt_semiaxes must be three (low, high) ranges with 0 < low <= high")
        if not 0 <= self.gtr_fraction <= 1:
            raise ConfigurationError("gtr_fraction must lie in [0, 1]")

    @classmethod
    def from_json(cls, path) -> "CohortSpec":
        with open(path) as fh:
            raw = json.load(fh)
        known = {k: v for k, v in raw.items() if k in cls.__dataclass_fields__}
        unknown = sorted(set(raw) - set(known))
        if unknown:
            raise ConfigurationError(f"unknown cohort spec keys: {unknown}")
        for key in ("dims", "spacing", "ric_range", "age_range"):
            if key in known:
                known[key] = tuple(known[key])
        if "wt_semiaxes" in known:
            known["wt_semiaxes"] = tuple(tuple(r) for r in known["wt_semiaxes"])
        return cls(**known)

    def survival(self, age, ric, noise=0.0):
        return self.beta0 + self.beta_age * age + self.beta_ric * ric + noise


@dataclass
class SubjectDraw:
    id: str
    age: float
    ric: float
    survival_days: float
    resection_status: str
    wt_semiaxes: tuple
    rotation: object
    seed: int


def draw_subjects(spec: CohortSpec) -> list:
    """Per-subject parameters; subject ``i`` depends only on ``(spec.seed, i)``."""
    children = np.random.SeedSequence(spec.seed).spawn(spec.n_subjects)
    width = max(3, len(str(spec.n_subjects)))
    out = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        age = float(rng.uniform(*spec.age_range))
        ric = float(rng.uniform(*spec.ric_range))
        axes = tuple(float(rng.uniform(lo, hi)) for lo, hi in spec.wt_semiaxes)
        noise = float(rng.normal(0.0, spec.sigma)) if spec.sigma > 0 else 0.0
        status = "GTR" if rng.uniform() < spec.gtr_fraction else str(rng.choice(["STR", "NA"]))
        rotation = Rotation.random(random_state=rng).as_matrix() if spec.rotate else None
        out.append(
            SubjectDraw(
                id=f"S{i:0{width}d}",
                age=age,
                ric=ric,
                survival_days=float(spec.survival(age, ric, noise)),
                resection_status=status,
                wt_semiaxes=axes,
                rotation=rotation,
                seed=int(rng.integers(2**31)),
            )
        )
    return out


def make_cohort(spec: CohortSpec, out_dir, n_jobs: int = 1):
    """Write ``<out>/<id>/seg.nii.gz`` for every subject plus ``<out>/cohort.csv``.

    Returns the list of :class:`SubjectDraw` records.  Output bytes depend only
    on ``spec``.
    """
    from .parallel import map_ordered

    out_dir = Path(out_dir)
    subjects = draw_subjects(spec)

    def _write(s: SubjectDraw):
        sub = out_dir / s.id
        try:
            sub.mkdir(parents=True, exist_ok=True)
            res = make_phantom(
                s.wt_semiaxes, s.ric, spec.dims, spec.spacing, rotation=s.rotation, seed=s.seed,
                return_intensity=spec.write_t1gd,
            )
            if spec.write_t1gd:
                seg, t1gd = res
                write_volume(t1gd, sub / "t1gd.nii.gz")
            else:
                seg = res
            write_volume(seg, sub / "seg.nii.gz")
        except OSError as exc:
            raise OSError(f"failed writing subject {s.id} under {sub}: {exc}") from exc
        return s.id

    out_dir.mkdir(parents=True, exist_ok=True)
    map_ordered(_write, subjects, n_jobs=n_jobs)
    write_cohort_csv(out_dir / "cohort.csv", subjects)
    return subjects


def write_cohort_csv(path, subjects) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COHORT_COLUMNS)
            for s in subjects:
                w.writerow([s.id, repr(s.age), repr(s.survival_days), s.resection_status, repr(s.ric)])
    except OSError as exc:
        raise OSError(f"failed writing {os.fspath(path)}: {exc}") from exc


def spec_to_json(spec: CohortSpec) -> str:
    return json.dumps(asdict(spec), indent=2, sort_keys=True)
