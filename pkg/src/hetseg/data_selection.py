"""GMM visual-similarity ranking, diversity scoring, and rank merging.

Images are represented by precomputed feature vectors (possibly several
rows per image). A full-covariance Gaussian mixture is fit with EM to a
reference table; an image's similarity to the modeled domain is the max
log-density over its rows. A second, heuristic ranking scores object
diversity (weighted object counts). The two rankings combine by
round-robin interleaving. BIC guides the component count.

EM details: k-means++-style seeded means on a deterministic RNG,
covariances ridge-regularized (+1e-6 on the diagonal each M-step),
stop when the log-likelihood improves by less than 0.001 nat or after
500 iterations.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, NumericError, ValidationError

RIDGE = 1e-6
CONVERGENCE_NAT = 1e-3
MAX_ITER = 500

__all__ = [
    "FeatureTable",
    "GmmModel",
    "Ranking",
    "read_features_csv",
    "average_rows",
    "fit_gmm",
    "log_pdf",
    "similarity",
    "rank_by_similarity",
    "diversity_score",
    "interleave_merge",
    "bic",
]


@dataclass(frozen=True)
class FeatureTable:
    """Rows of (image id, feature vector); one image may own many rows."""

    ids: tuple[str, ...]
    vectors: np.ndarray

    def __post_init__(self):
        vectors = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(self.ids):
            raise ValidationError("feature table needs one vector per id")
        if vectors.size and not np.all(np.isfinite(vectors)):
            raise ValidationError("feature vectors must be finite")
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "ids", tuple(self.ids))

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def rows_of(self) -> dict[str, np.ndarray]:
        """Group row indices by image id, first-appearance order."""
        groups: dict[str, list[int]] = {}
        for i, image_id in enumerate(self.ids):
            groups.setdefault(image_id, []).append(i)
        return {k: np.array(v) for k, v in groups.items()}


def read_features_csv(path) -> FeatureTable:
    """CSV rows ``image_id,v1,...,vd`` with decimal floats, no header."""
    ids: list[str] = []
    rows: list[list[float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 2:
                raise FormatError(f"{path}:{lineno}: expected image_id and features")
            try:
                rows.append([float(v) for v in parts[1:]])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            ids.append(parts[0])
    if rows and len({len(r) for r in rows}) != 1:
        raise FormatError(f"{path}: inconsistent feature dimensionality")
    vectors = np.array(rows, dtype=np.float64) if rows else np.empty((0, 0))
    return FeatureTable(tuple(ids), vectors)


def average_rows(table: FeatureTable) -> FeatureTable:
    """Element-wise mean of each image's rows; one row per image."""
    groups = table.rows_of()
    ids = tuple(groups.keys())
    vectors = np.array([table.vectors[idx].mean(axis=0) for idx in groups.values()])
    return FeatureTable(ids, vectors.reshape(len(ids), table.dim))


@dataclass(frozen=True)
class GmmModel:
    """K-component full-covariance Gaussian mixture."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        means = np.asarray(self.means, dtype=np.float64)
        covariances = np.asarray(self.covariances, dtype=np.float64)
        k = weights.shape[0]
        if means.shape[0] != k or covariances.shape[0] != k:
            raise ValidationError("component count mismatch between weights/means/covariances")
        if covariances.shape[1:] != (means.shape[1], means.shape[1]):
            raise ValidationError("covariances must be K x d x d")
        if weights.min(initial=1.0) <= 0 or abs(weights.sum() - 1.0) > 1e-9:
            raise ValidationError("weights must be positive and sum to 1")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covariances)

    @property
    def num_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def to_dict(self) -> dict:
        return {
            "k": self.num_components,
            "d": self.dim,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.reshape(self.num_components, -1).tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "GmmModel":
        try:
            k, d = int(obj["k"]), int(obj["d"])
            weights = np.array(obj["weights"], dtype=np.float64)
            means = np.array(obj["means"], dtype=np.float64).reshape(k, d)
            covariances = np.array(obj["covariances"], dtype=np.float64).reshape(k, d, d)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad GMM model object: {exc}") from exc
        return cls(weights, means, covariances)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "GmmModel":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"model file {path}: {exc}") from exc
        return cls.from_dict(obj)


def _cholesky_factors(covariances: np.ndarray) -> list[np.ndarray]:
    factors = []
    for k, cov in enumerate(covariances):
        try:
            factors.append(np.linalg.cholesky(cov))
        except np.linalg.LinAlgError:
            raise NumericError(
                f"component {k}: covariance singular despite ridge regularization"
            ) from None
    return factors


def _log_gaussians(x: np.ndarray, means: np.ndarray, covariances: np.ndarray) -> np.ndarray:
    """(n, K) matrix of per-component log-densities via Cholesky solves."""
    n, d = x.shape
    out = np.empty((n, means.shape[0]))
    for k, chol in enumerate(_cholesky_factors(covariances)):
        centered = (x - means[k]).T
        solved = np.linalg.solve(chol, centered)
        quad = (solved**2).sum(axis=0)
        logdet = 2.0 * np.log(np.diag(chol)).sum()
        out[:, k] = -0.5 * (quad + logdet + d * np.log(2.0 * np.pi))
    return out


def _log_prob_rows(model_like, x: np.ndarray) -> np.ndarray:
    weights, means, covariances = model_like
    comp = _log_gaussians(x, means, covariances) + np.log(weights)[None, :]
    peak = comp.max(axis=1, keepdims=True)
    return (peak + np.log(np.exp(comp - peak).sum(axis=1, keepdims=True))).ravel()


def log_pdf(model: GmmModel, x: np.ndarray) -> float:
    """log sum_k pi_k N(x; mu_k, Sigma_k), log-sum-exp stabilized."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.dim,):
        raise ValidationError(f"expected a {model.dim}-vector, got shape {x.shape}")
    return float(_log_prob_rows((model.weights, model.means, model.covariances), x[None, :])[0])


def _kmeanspp_means(rows: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = rows.shape[0]
    means = np.empty((k, rows.shape[1]))
    means[0] = rows[rng.integers(n)]
    d2 = ((rows - means[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        means[j] = rows[idx]
        d2 = np.minimum(d2, ((rows - means[j]) ** 2).sum(axis=1))
    return means


def fit_gmm(
    table: FeatureTable,
    num_components: int,
    seed: int,
    sample: int | None = None,
) -> tuple[GmmModel, list[float]]:
    """EM fit; returns the model and the per-iteration log-likelihood trace.

    When the table holds more rows than ``sample``, a seeded subsample
    is drawn first. The trace is non-decreasing (up to ridge-level
    noise) and fitting stops once it improves by less than 0.001 nat.
    """
    rows = table.vectors
    rng = np.random.default_rng(seed)
    if sample is not None and rows.shape[0] > sample:
        chosen = rng.choice(rows.shape[0], size=sample, replace=False)
        rows = rows[np.sort(chosen)]
    n, d = rows.shape
    if n < num_components:
        raise ValidationError(f"{n} rows cannot support {num_components} components")
    if num_components < 1 or d < 1:
        raise ValidationError("need at least one component and one dimension")
    if n == num_components:
        warnings.warn(
            "as many components as rows: fit is degenerate", UserWarning, stacklevel=2
        )

    means = _kmeanspp_means(rows, num_components, rng)
    base_cov = np.cov(rows, rowvar=False, bias=True).reshape(d, d) + RIDGE * np.eye(d)
    covariances = np.repeat(base_cov[None, :, :], num_components, axis=0)
    weights = np.full(num_components, 1.0 / num_components)

    trace: list[float] = []
    for _ in range(MAX_ITER):
        # E-step
        comp = _log_gaussians(rows, means, covariances) + np.log(weights)[None, :]
        peak = comp.max(axis=1, keepdims=True)
        log_norm = peak + np.log(np.exp(comp - peak).sum(axis=1, keepdims=True))
        resp = np.exp(comp - log_norm)
        loglik = float(log_norm.sum())
        trace.append(loglik)
        if len(trace) >= 2 and trace[-1] - trace[-2] < CONVERGENCE_NAT:
            break
        # M-step
        nk = resp.sum(axis=0)
        weights = nk / n
        means = (resp.T @ rows) / nk[:, None]
        for k in range(num_components):
            centered = rows - means[k]
            covariances[k] = (resp[:, k][:, None] * centered).T @ centered / nk[k]
            covariances[k] += RIDGE * np.eye(d)
        _cholesky_factors(covariances)  # fail fast on singularity
    return GmmModel(weights, means, covariances), trace


def similarity(model: GmmModel, rows: np.ndarray) -> float:
    """Similarity of one image to the modeled domain: max log-density
    over the image's rows (order- and duplication-invariant)."""
    rows = np.asarray(rows, dtype=np.float64).reshape(-1, model.dim)
    if rows.shape[0] < 1:
        raise ValidationError("similarity needs at least one row")
    return float(
        _log_prob_rows((model.weights, model.means, model.covariances), rows).max()
    )


@dataclass(frozen=True)
class Ranking:
    """(image id, score) pairs, descending score, ties by id ascending."""

    entries: tuple[tuple[str, float], ...]

    @classmethod
    def from_scores(cls, scores: dict[str, float]) -> "Ranking":
        ordered = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls(tuple(ordered))

    def ids(self) -> list[str]:
        return [image_id for image_id, _ in self.entries]

    def save_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for image_id, score in self.entries:
                fh.write(f"{image_id},{score!r}\n")

    @classmethod
    def load_csv(cls, path) -> "Ranking":
        entries = []
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                image_id, _, score = line.rpartition(",")
                try:
                    entries.append((image_id, float(score)))
                except ValueError as exc:
                    raise FormatError(f"{path}:{lineno}: {exc}") from None
        return cls(tuple(entries))


def rank_by_similarity(model: GmmModel, table: FeatureTable) -> Ranking:
    scores = {
        image_id: similarity(model, table.vectors[idx])
        for image_id, idx in table.rows_of().items()
    }
    return Ranking.from_scores(scores)


def diversity_score(counts: list[int] | np.ndarray, weights: list[int] | np.ndarray) -> int:
    """Weighted object count, e.g. (100, 10, 1) points per traffic
    object / vehicle / human."""
    counts = np.asarray(counts, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.int64)
    if counts.shape != weights.shape:
        raise ValidationError("counts and weights must align")
    if counts.size and counts.min() < 0:
        raise ValidationError("counts must be non-negative")
    return int((counts * weights).sum())


def interleave_merge(a: Ranking, b: Ranking, n: int) -> list[str]:
    """Round-robin merge starting with ``a``; duplicates are skipped by
    advancing within the same source. Stops at ``n`` ids or exhaustion."""
    if n < 0:
        raise ValidationError("target size must be >= 0")
    out: list[str] = []
    seen: set[str] = set()
    sources = [a.ids(), b.ids()]
    cursors = [0, 0]
    turn = 0
    while len(out) < n:
        progressed = False
        for offset in range(2):
            src = (turn + offset) % 2
            ids = sources[src]
            cursor = cursors[src]
            while cursor < len(ids) and ids[cursor] in seen:
                cursor += 1
            cursors[src] = cursor
            if cursor < len(ids):
                out.append(ids[cursor])
                seen.add(ids[cursor])
                cursors[src] = cursor + 1
                turn = (src + 1) % 2
                progressed = True
                break
        if not progressed:
            break
    return out[:n]


def bic(model: GmmModel, n_samples: int, log_likelihood: float) -> float:
    """log(N) * K * (d + d^2) - 2 * logL (natural log)."""
    if n_samples < 1:
        raise ValidationError("n_samples must be >= 1")
    k, d = model.num_components, model.dim
    return float(np.log(n_samples) * k * (d + d * d) - 2.0 * log_likelihood)
