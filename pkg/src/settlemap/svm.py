"""RBF-kernel SVM, cross-validated grid search, and the voting ensemble.

The optical and radar feature stacks are classified by separate
instances of the same machinery: per ensemble member a fresh training
subset is drawn, hyperparameters are grid-searched with stratified
5-fold cross validation, and the member SVMs vote per pixel.  A pixel is
settlement when at least ``vote_threshold`` members say so.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _smo
from .errors import ContractError, DomainError, TrainingError
from .features import FeatureStack
from .grid import Grid
from .training import (
    NON_SETTLEMENT,
    SETTLEMENT,
    CandidateMasks,
    TrainingSet,
    sample_training,
)

__all__ = [
    "HyperGrid",
    "default_hyper_grid",
    "SvmModel",
    "EnsembleModel",
    "rbf_kernel",
    "train_svm",
    "GridSearchResult",
    "grid_search_cv",
    "train_ensemble",
    "classify_map",
    "save_ensemble",
    "load_ensemble",
]

log = logging.getLogger(__name__)

DEFAULT_KKT_TOL = 1e-3
DEFAULT_MAX_ITER = 200_000
_PREDICT_CHUNK = 16384


@dataclass(frozen=True)
class HyperGrid:
    """The (C, gamma) search grid; the default spans 14 x 20 = 280 pairs."""

    c_values: tuple[float, ...]
    gamma_values: tuple[float, ...]

    def __post_init__(self):
        if not self.c_values or not self.gamma_values:
            raise ContractError("hyperparameter grid must not be empty")
        if any(c <= 0 for c in self.c_values) or any(g <= 0 for g in self.gamma_values):
            raise ContractError("C and gamma values must be positive")

    @property
    def size(self) -> int:
        return len(self.c_values) * len(self.gamma_values)


def default_hyper_grid() -> HyperGrid:
    """C = 2**i for i in 0..13 and gamma = 0.1*j for j in 1..20."""
    grid = HyperGrid(
        c_values=tuple(float(2 ** i) for i in range(14)),
        gamma_values=tuple(0.1 * j for j in range(1, 21)),
    )
    assert grid.size == 280
    return grid


def rbf_kernel(u: np.ndarray, v: np.ndarray, gamma: float) -> float:
    """Gaussian kernel exp(-gamma * ||u - v||^2); always in (0, 1]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ContractError(f"feature dimensions differ: {u.shape} vs {v.shape}")
    if gamma <= 0:
        raise ContractError("gamma must be positive")
    diff = u - v
    return float(np.exp(-gamma * np.dot(diff, diff)))


def _pairwise_sq_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between rows of a and rows of b."""
    aa = np.einsum("ij,ij->i", a, a)
    bb = np.einsum("ij,ij->i", b, b)
    d2 = aa[:, None] + bb[None, :] - 2.0 * (a @ b.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def _scaling_from(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    shift = features.mean(axis=0)
    scale = features.std(axis=0)
    scale = np.where(scale < 1e-12, 1.0, scale)
    return shift, scale


@dataclass
class SvmModel:
    """A trained soft-margin RBF SVM, stored in scaled feature space.

    ``dual_coef`` holds alpha_i * y_i for the support vectors; the same
    per-dimension shift/scale applied at training is applied to every
    prediction input.
    """

    support_vectors: np.ndarray
    dual_coef: np.ndarray
    bias: float
    gamma: float
    C: float
    shift: np.ndarray
    scale: np.ndarray
    training_accuracy: float = np.nan

    def __post_init__(self):
        self.support_vectors = np.asarray(self.support_vectors, dtype=np.float64)
        self.dual_coef = np.asarray(self.dual_coef, dtype=np.float64)
        alphas = np.abs(self.dual_coef)
        if np.any(alphas > self.C * (1 + 1e-9) + 1e-12):
            raise ContractError("dual coefficients exceed the box constraint")
        if abs(float(self.dual_coef.sum())) > 1e-6:
            raise ContractError("dual coefficients do not satisfy the equality constraint")

    @property
    def dimension(self) -> int:
        return self.support_vectors.shape[1]

    def decision_function(self, features: np.ndarray) -> np.ndarray:
        """Signed decision values for raw (unscaled) feature rows."""
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if features.shape[1] != self.dimension:
            raise ContractError(
                f"feature dimension {features.shape[1]} does not match model "
                f"dimension {self.dimension}"
            )
        scaled = (features - self.shift) / self.scale
        d2 = _pairwise_sq_distances(scaled, self.support_vectors)
        return np.exp(-self.gamma * d2) @ self.dual_coef + self.bias

    def predict(self, features: np.ndarray) -> np.ndarray:
        """Labels in {+1, -1}; the zero decision boundary maps to -1."""
        return np.where(self.decision_function(features) > 0.0, SETTLEMENT, NON_SETTLEMENT)


def _check_two_classes(labels: np.ndarray):
    pos = int((labels == SETTLEMENT).sum())
    neg = int((labels == NON_SETTLEMENT).sum())
    if pos == 0 or neg == 0:
        raise DomainError("training data must contain both classes")
    return pos, neg


def _solve_scaled(kernel, labels_f, C, tol, max_iter):
    alpha, bias, iterations, gap = _smo.solve(
        np.ascontiguousarray(kernel), labels_f, float(C), float(tol), int(max_iter)
    )
    return alpha, bias, iterations, gap


def _sweep_c_values(kernel, labels, c_values, tol, max_iter):
    """Solve the dual for every C in ascending order, warm-starting each step.

    Yields (index into c_values, alpha, bias, gap); alpha is only valid
    until the next step, so consumers must not keep a reference.
    """
    order = np.argsort(c_values)
    alpha = np.zeros(len(labels))
    grad = np.full(len(labels), -1.0)
    for pos in order:
        bias, _, gap = _smo.solve_inplace(
            kernel, labels, float(c_values[pos]), float(tol), int(max_iter), alpha, grad
        )
        yield int(pos), alpha, bias, gap


def train_svm(
    data: TrainingSet,
    C: float,
    gamma: float,
    tol: float = DEFAULT_KKT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> SvmModel:
    """Train one SVM by SMO on standardized features.

    Raises TrainingError with the residual KKT gap if the iteration budget
    is exhausted before the gap drops under ``tol``.
    """
    if C <= 0 or gamma <= 0:
        raise ContractError("C and gamma must be positive")
    _check_two_classes(data.labels)
    shift, scale = _scaling_from(data.features)
    scaled = (data.features - shift) / scale
    kernel = np.exp(-gamma * _pairwise_sq_distances(scaled, scaled))
    labels_f = data.labels.astype(np.float64)
    alpha, bias, iterations, gap = _solve_scaled(kernel, labels_f, C, tol, max_iter)
    if gap >= tol:
        raise TrainingError(
            f"SMO did not converge: gap {gap:.3e} >= tol {tol:.1e} after "
            f"{iterations} iterations (C={C}, gamma={gamma}, n={len(data)})"
        )
    keep = alpha > 1e-12
    model = SvmModel(
        support_vectors=scaled[keep],
        dual_coef=(alpha * labels_f)[keep],
        bias=float(bias),
        gamma=float(gamma),
        C=float(C),
        shift=shift,
        scale=scale,
    )
    model.training_accuracy = float(np.mean(model.predict(data.features) == data.labels))
    return model


@dataclass(frozen=True)
class GridSearchResult:
    C: float
    gamma: float
    cv_accuracy: float
    n_evaluations: int


def _stratified_folds(labels: np.ndarray, folds: int, rng: np.random.Generator) -> np.ndarray:
    """Fold id per sample; each class is dealt round-robin after a shuffle."""
    fold_ids = np.empty(len(labels), dtype=np.int64)
    for label in (SETTLEMENT, NON_SETTLEMENT):
        idx = np.flatnonzero(labels == label)
        rng.shuffle(idx)
        fold_ids[idx] = np.arange(len(idx)) % folds
    return fold_ids


def grid_search_cv(
    data: TrainingSet,
    grid: HyperGrid | None = None,
    folds: int = 5,
    seed=0,
    tol: float = DEFAULT_KKT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    fold_ids: np.ndarray | None = None,
) -> GridSearchResult:
    """Pick the (C, gamma) pair with the best mean stratified-CV accuracy.

    Every grid pair is evaluated on every fold.  Exact accuracy ties are
    broken toward the smaller C, then the smaller gamma, and the search is
    deterministic for a fixed seed.  ``fold_ids`` may inject a precomputed
    fold assignment (mainly for tests); by default folds are drawn from
    the seed.
    """
    grid = grid or default_hyper_grid()
    pos, neg = _check_two_classes(data.labels)
    if min(pos, neg) < folds:
        raise DomainError(
            f"stratified {folds}-fold CV needs at least {folds} samples per class, "
            f"got {pos} and {neg}"
        )
    if fold_ids is None:
        fold_ids = _stratified_folds(data.labels, folds, np.random.default_rng(seed))
    else:
        fold_ids = np.asarray(fold_ids)
        if fold_ids.shape != (len(data),):
            raise ContractError("fold_ids must assign one fold per sample")

    shift, scale = _scaling_from(data.features)
    scaled = (data.features - shift) / scale
    d2 = _pairwise_sq_distances(scaled, scaled)
    labels_f = data.labels.astype(np.float64)

    unique_folds = np.unique(fold_ids)
    correct = np.zeros((len(grid.c_values), len(grid.gamma_values)), dtype=np.int64)
    total = 0
    failed = np.zeros_like(correct, dtype=bool)
    for gi, gamma in enumerate(grid.gamma_values):
        kernel = np.exp(-gamma * d2)
        for fold in unique_folds:
            va = fold_ids == fold
            tr = ~va
            k_tr = np.ascontiguousarray(kernel[np.ix_(tr, tr)])
            k_va = kernel[np.ix_(va, tr)]
            y_tr = labels_f[tr]
            y_va = labels_f[va]
            if gi == 0:
                total += int(va.sum())
            for ci, alpha, bias, gap in _sweep_c_values(
                k_tr, y_tr, grid.c_values, tol, max_iter
            ):
                if gap >= tol:
                    failed[ci, gi] = True
                    log.warning("grid point C=%g gamma=%g fold %d did not converge",
                                grid.c_values[ci], gamma, fold)
                    continue
                pred = np.where(k_va @ (alpha * y_tr) + bias > 0.0, 1.0, -1.0)
                correct[ci, gi] += int((pred == y_va).sum())

    accuracy = correct / float(total)
    accuracy[failed] = -np.inf
    if np.all(np.isneginf(accuracy)):
        raise TrainingError("no grid point converged during cross validation")
    best = accuracy.max()
    ties = np.argwhere(accuracy == best)
    ci, gi = min(ties, key=lambda t: (grid.c_values[t[0]], grid.gamma_values[t[1]]))
    return GridSearchResult(
        C=grid.c_values[ci],
        gamma=grid.gamma_values[gi],
        cv_accuracy=float(best),
        n_evaluations=grid.size,
    )


@dataclass
class EnsembleModel:
    """A fixed set of member SVMs with a majority-vote threshold."""

    members: list[SvmModel]
    vote_threshold: int
    band_names: tuple[str, ...] = ()
    provenance: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if not self.members:
            raise ContractError("an ensemble needs at least one member")
        if not (1 <= self.vote_threshold <= len(self.members)):
            raise ContractError(
                f"vote threshold {self.vote_threshold} outside 1..{len(self.members)}"
            )
        dims = {m.dimension for m in self.members}
        if len(dims) != 1:
            raise ContractError("ensemble members disagree on feature dimension")

    @property
    def dimension(self) -> int:
        return self.members[0].dimension

    def votes(self, features: np.ndarray) -> np.ndarray:
        """Settlement votes per row, 0..len(members)."""
        features = np.atleast_2d(features)
        counts = np.zeros(features.shape[0], dtype=np.int32)
        for member in self.members:
            counts += member.predict(features) == SETTLEMENT
        return counts

    def predict(self, features: np.ndarray) -> np.ndarray:
        return np.where(self.votes(features) >= self.vote_threshold,
                        SETTLEMENT, NON_SETTLEMENT)


def train_ensemble(
    masks: CandidateMasks,
    features: FeatureStack,
    n_per_class: int = 500,
    members: int = 20,
    vote_threshold: int = 11,
    seed=0,
    grid: HyperGrid | None = None,
    folds: int = 5,
    tol: float = DEFAULT_KKT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> EnsembleModel:
    """Train ``members`` SVMs on independent random training subsets.

    Each member draws its own training set from the candidate masks and
    runs its own hyperparameter search, so members differ both in data
    and in (C, gamma).  Member seeds derive deterministically from
    ``seed``.
    """
    if members < 1:
        raise ContractError("members must be >= 1")
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    fitted = []
    provenance = []
    for k, member_seq in enumerate(root.spawn(members)):
        sample_seq, fold_seq = member_seq.spawn(2)
        subset = sample_training(masks, features, n_per_class, sample_seq)
        search = grid_search_cv(subset, grid=grid, folds=folds, seed=fold_seq,
                                tol=tol, max_iter=max_iter)
        model = train_svm(subset, search.C, search.gamma, tol=tol, max_iter=max_iter)
        fitted.append(model)
        provenance.append({
            "member": k,
            "C": search.C,
            "gamma": search.gamma,
            "cv_accuracy": search.cv_accuracy,
            "training_accuracy": model.training_accuracy,
            "support_vectors": int(len(model.dual_coef)),
            "samples": subset.class_counts(),
        })
        log.info("member %d: C=%g gamma=%.1f cv=%.3f train=%.3f sv=%d",
                 k, search.C, search.gamma, search.cv_accuracy,
                 model.training_accuracy, len(model.dual_coef))
    return EnsembleModel(
        members=fitted,
        vote_threshold=vote_threshold,
        band_names=tuple(features.names),
        provenance=provenance,
    )


def classify_map(ensemble: EnsembleModel, features: FeatureStack) -> Grid:
    """Vote the ensemble over every pixel of a feature stack.

    A pixel is settlement when at least ``vote_threshold`` members
    predict settlement.  Pixels with an incomplete feature vector are
    labeled non-settlement so that downstream set operations stay binary;
    the count bands keep missingness recoverable.
    """
    if ensemble.band_names and tuple(features.names) != tuple(ensemble.band_names):
        raise ContractError(
            f"feature bands {features.names} do not match the bands the ensemble "
            f"was trained on {ensemble.band_names}"
        )
    matrix, complete = features.to_matrix()
    if matrix.shape[1] != ensemble.dimension:
        raise ContractError(
            f"feature dimension {matrix.shape[1]} does not match ensemble "
            f"dimension {ensemble.dimension}"
        )
    rows = np.flatnonzero(complete)
    votes = np.zeros(len(rows), dtype=np.int32)
    for start in range(0, len(rows), _PREDICT_CHUNK):
        sel = rows[start:start + _PREDICT_CHUNK]
        chunk = matrix[sel]
        for member in ensemble.members:
            votes[start:start + len(sel)] += member.predict(chunk) == SETTLEMENT
    settled = np.zeros(matrix.shape[0], dtype=np.uint8)
    settled[rows] = votes >= ensemble.vote_threshold
    h, w = features.shape
    return Grid(settled.reshape(h, w), features.transform, None)


# ---------------------------------------------------------------------------
# Persistence


def save_ensemble(ensemble: EnsembleModel, path) -> None:
    """Write a self-describing model file sufficient for bit-identical reload."""
    payload = {
        "n_members": np.int64(len(ensemble.members)),
        "vote_threshold": np.int64(ensemble.vote_threshold),
        "band_names": np.array(list(ensemble.band_names), dtype=np.str_),
    }
    for k, m in enumerate(ensemble.members):
        payload[f"m{k:02d}_sv"] = m.support_vectors
        payload[f"m{k:02d}_coef"] = m.dual_coef
        payload[f"m{k:02d}_scalars"] = np.array(
            [m.bias, m.gamma, m.C, m.training_accuracy], dtype=np.float64
        )
        payload[f"m{k:02d}_shift"] = m.shift
        payload[f"m{k:02d}_scale"] = m.scale
    np.savez_compressed(path, **payload)


def load_ensemble(path) -> EnsembleModel:
    with np.load(path) as data:
        members = []
        for k in range(int(data["n_members"])):
            bias, gamma, c_value, train_acc = data[f"m{k:02d}_scalars"]
            members.append(SvmModel(
                support_vectors=data[f"m{k:02d}_sv"],
                dual_coef=data[f"m{k:02d}_coef"],
                bias=float(bias),
                gamma=float(gamma),
                C=float(c_value),
                shift=data[f"m{k:02d}_shift"],
                scale=data[f"m{k:02d}_scale"],
                training_accuracy=float(train_acc),
            ))
        return EnsembleModel(
            members=members,
            vote_threshold=int(data["vote_threshold"]),
            band_names=tuple(str(n) for n in data["band_names"]),
        )
