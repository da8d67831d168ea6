"""Synthetic data: Gaussian process surfaces over piecewise-constant clusters.

The reference scenario puts n sites uniformly on the unit square.  Two
covariates are correlated exponential-kernel GPs; each has a
piecewise-constant coefficient surface (quadrants for the first, quadrants
with a central disk carved out for the second).  The intercept surface is a
smooth GP whose correlation range controls how strongly it varies, and
observation noise is iid normal.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .pipeline import Dataset


@dataclass(frozen=True)
class GpSpec:
    """Zero-mean GP with covariance variance * exp(-distance/corr_range)."""

    corr_range: float
    variance: float = 1.0
    jitter: float = 1e-10

    def __post_init__(self):
        if self.corr_range <= 0 or self.variance <= 0 or self.jitter <= 0:
            raise ValueError("GP parameters must be positive")


def sample_gp(locations, spec: GpSpec, seed) -> np.ndarray:
    """Draw one GP path at the given sites via a jittered Cholesky root.

    The jitter escalates tenfold on factorisation failure, up to 1e-6;
    beyond that the error propagates.
    """
    locations = np.asarray(locations, dtype=np.float64)
    n = locations.shape[0]
    d = np.linalg.norm(locations[:, None, :] - locations[None, :, :], axis=2)
    cov = spec.variance * np.exp(-d / spec.corr_range)
    jitter = spec.jitter
    while True:
        try:
            root = np.linalg.cholesky(cov + jitter * np.eye(n))
            break
        except np.linalg.LinAlgError:
            if jitter >= 1e-6:
                raise
            jitter *= 10.0
    z = np.random.default_rng(seed).standard_normal(n)
    return root @ z


def gen_covariates(locations, collinearity, corr_range, seed) -> np.ndarray:
    """Correlated GP covariates: x1 = z1, xk = c*z1 + sqrt(1-c^2)*zk."""
    if not 0.0 <= collinearity <= 1.0:
        raise ValueError("collinearity must be in [0, 1]")
    if isinstance(seed, np.random.SeedSequence):
        ss = seed
    else:
        ss = np.random.SeedSequence(seed)
    streams = ss.spawn(2)
    spec = GpSpec(corr_range)
    z1 = sample_gp(locations, spec, streams[0])
    z2 = sample_gp(locations, spec, streams[1])
    c = collinearity
    x2 = c * z1 + math.sqrt(1.0 - c * c) * z2
    return np.column_stack((z1, x2))


def _labels_quadrants(locations, params):
    cx, cy = params.get("center", (0.5, 0.5))
    loc = np.asarray(locations, dtype=np.float64)
    return (loc[:, 0] >= cx).astype(np.int64) + 2 * (loc[:, 1] >= cy).astype(np.int64)


def _labels_quadrants_disk(locations, params):
    labels = _labels_quadrants(locations, params)
    cx, cy = params.get("center", (0.5, 0.5))
    radius = params.get("radius", 0.25)
    loc = np.asarray(locations, dtype=np.float64)
    inside = (loc[:, 0] - cx) ** 2 + (loc[:, 1] - cy) ** 2 <= radius**2
    labels[inside] = 4
    return labels


_LABEL_BUILDERS = {
    "quadrants": (_labels_quadrants, 4),
    "quadrants_disk": (_labels_quadrants_disk, 5),
}


def _default_surfaces():
    return [
        {"kind": "quadrants", "values": [-2.0, -1.0, 1.0, 2.0]},
        {"kind": "quadrants_disk", "values": [-2.0, -1.0, 1.0, 2.0, 0.0]},
    ]


@dataclass
class ScenarioSpec:
    """Everything needed to draw one synthetic dataset."""

    n: int = 1000
    domain: tuple = (0.0, 1.0, 0.0, 1.0)
    sigma2: float = 0.1
    collinearity: float = 0.75
    covariate_range: float = 0.1
    intercept_range: float = 10.0
    intercept_variance: float = 1.0
    beta_surfaces: list = field(default_factory=_default_surfaces)

    def __post_init__(self):
        if self.n < 4:
            raise ValueError("n must be at least 4")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")
        if not 0.0 <= self.collinearity <= 1.0:
            raise ValueError("collinearity must be in [0, 1]")
        if self.intercept_variance < 0:
            raise ValueError("intercept_variance must be nonnegative")
        if len(self.domain) != 4 or self.domain[0] >= self.domain[1] or self.domain[2] >= self.domain[3]:
            raise ValueError("domain must be (xmin, xmax, ymin, ymax)")
        if not self.beta_surfaces:
            raise ValueError("need at least one coefficient surface")
        for surf in self.beta_surfaces:
            kind = surf.get("kind")
            if kind not in _LABEL_BUILDERS:
                raise ValueError(f"unknown surface kind {kind!r}")
            _, n_labels = _LABEL_BUILDERS[kind]
            if len(surf.get("values", ())) != n_labels:
                raise ValueError(f"surface {kind!r} needs {n_labels} values")

    @property
    def p(self) -> int:
        return len(self.beta_surfaces)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "domain": list(self.domain),
            "sigma2": self.sigma2,
            "collinearity": self.collinearity,
            "covariate_range": self.covariate_range,
            "intercept_range": self.intercept_range,
            "intercept_variance": self.intercept_variance,
            "beta_surfaces": [dict(s) for s in self.beta_surfaces],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        known = {
            "n", "domain", "sigma2", "collinearity", "covariate_range",
            "intercept_range", "intercept_variance", "beta_surfaces",
        }
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown scenario keys: {sorted(extra)}")
        kwargs = dict(d)
        if "domain" in kwargs:
            kwargs["domain"] = tuple(kwargs["domain"])
        if "n" in kwargs:
            kwargs["n"] = int(kwargs["n"])
        return cls(**kwargs)


@dataclass
class SyntheticDataset:
    """One draw: observed data plus the generating truth."""

    locations: np.ndarray
    X: np.ndarray
    y: np.ndarray
    true_beta: np.ndarray
    true_g: np.ndarray
    true_labels: np.ndarray
    scenario: ScenarioSpec

    def dataset(self) -> Dataset:
        return Dataset(self.locations, self.X, self.y)


def surface_labels(spec: ScenarioSpec, locations) -> np.ndarray:
    """(n, p) integer cluster labels of each coefficient surface."""
    cols = []
    for surf in spec.beta_surfaces:
        builder, _ = _LABEL_BUILDERS[surf["kind"]]
        cols.append(builder(locations, surf))
    return np.column_stack(cols)


def surface_values(spec: ScenarioSpec, labels) -> np.ndarray:
    """(n, p) coefficient values implied by the labels."""
    cols = []
    for k, surf in enumerate(spec.beta_surfaces):
        values = np.asarray(surf["values"], dtype=np.float64)
        cols.append(values[labels[:, k]])
    return np.column_stack(cols)


def gen_scenario(spec: ScenarioSpec, seed) -> SyntheticDataset:
    """Draw a full dataset; independent streams per ingredient."""
    ss = np.random.SeedSequence(seed)
    s_loc, s_g, s_cov, s_eps = ss.spawn(4)
    rng = np.random.default_rng(s_loc)
    xmin, xmax, ymin, ymax = spec.domain
    locations = np.column_stack((
        rng.uniform(xmin, xmax, spec.n),
        rng.uniform(ymin, ymax, spec.n),
    ))
    labels = surface_labels(spec, locations)
    beta = surface_values(spec, labels)
    X = gen_covariates(locations, spec.collinearity, spec.covariate_range, s_cov)
    if spec.intercept_variance > 0:
        g = sample_gp(
            locations, GpSpec(spec.intercept_range, spec.intercept_variance), s_g
        )
    else:
        g = np.zeros(spec.n)
    eps = np.random.default_rng(s_eps).standard_normal(spec.n) * math.sqrt(spec.sigma2)
    y = g + (X * beta).sum(axis=1) + eps
    return SyntheticDataset(locations, X, y, beta, g, labels, spec)


def write_data_csv(ds: SyntheticDataset, path) -> None:
    """Fit input: x, y, resp, x1..xp."""
    p = ds.X.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "resp"] + [f"x{k + 1}" for k in range(p)])
        for i in range(ds.y.shape[0]):
            w.writerow(
                [
                    repr(float(ds.locations[i, 0])),
                    repr(float(ds.locations[i, 1])),
                    repr(float(ds.y[i])),
                ]
                + [repr(float(v)) for v in ds.X[i]]
            )


def write_truth_csv(ds: SyntheticDataset, path) -> None:
    """Full export: inputs plus true coefficients, smooth surface, labels."""
    p = ds.X.shape[1]
    header = (
        ["x", "y", "resp"]
        + [f"x{k + 1}" for k in range(p)]
        + [f"beta{k + 1}" for k in range(p)]
        + ["g"]
        + [f"label{k + 1}" for k in range(p)]
    )
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(ds.y.shape[0]):
            row = (
                [
                    repr(float(ds.locations[i, 0])),
                    repr(float(ds.locations[i, 1])),
                    repr(float(ds.y[i])),
                ]
                + [repr(float(v)) for v in ds.X[i]]
                + [repr(float(v)) for v in ds.true_beta[i]]
                + [repr(float(ds.true_g[i]))]
                + [str(int(v)) for v in ds.true_labels[i]]
            )
            w.writerow(row)
