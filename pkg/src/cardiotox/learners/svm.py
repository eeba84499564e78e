"""Soft-margin kernelized SVM trained by sequential minimal optimization.

Pair selection: the maximal KKT violator is paired with the point of largest
|E1 - E2|; the pairwise dual step uses the standard clipped update with the
two-sided bias rule. Optimization stops when every violation is below tol.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInputError

KERNEL_KINDS = ("linear", "poly", "rbf", "sigmoid")


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family with optional parameters (gamma defaults to 1/D at use)."""

    kind: str
    degree: int = 3
    gamma: float | None = None
    coef0: float | None = None

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise InvalidInputError(f"unknown kernel kind {self.kind!r}")
        if self.gamma is not None and self.gamma <= 0:
            raise InvalidInputError(f"gamma must be positive, got {self.gamma}")
        if self.kind == "poly" and self.degree < 1:
            raise InvalidInputError("poly degree must be at least 1")

    def resolve(self, n_features: int) -> "KernelSpec":
        """Fill defaults: gamma = 1/D; coef0 = 1 for poly, 0 otherwise."""
        gamma = self.gamma if self.gamma is not None else 1.0 / max(n_features, 1)
        if self.coef0 is not None:
            coef0 = self.coef0
        else:
            coef0 = 1.0 if self.kind == "poly" else 0.0
        return KernelSpec(self.kind, self.degree, gamma, coef0)


def kernel_eval(spec: KernelSpec, x: np.ndarray, z: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if x.shape != z.shape or x.ndim != 1:
        raise InvalidInputError("kernel arguments must be 1-D vectors of equal length")
    spec = spec.resolve(x.shape[0])
    return float(_kernel_matrix(spec, x[None, :], z[None, :])[0, 0])


def _kernel_matrix(spec: KernelSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if spec.gamma is None or spec.gamma <= 0:
        raise InvalidInputError("kernel gamma must be resolved and positive")
    if spec.kind == "linear":
        return a @ b.T
    if spec.kind == "poly":
        return (spec.gamma * (a @ b.T) + spec.coef0) ** spec.degree
    if spec.kind == "rbf":
        aa = (a * a).sum(axis=1)[:, None]
        bb = (b * b).sum(axis=1)[None, :]
        sq = np.maximum(aa + bb - 2.0 * (a @ b.T), 0.0)
        return np.exp(-spec.gamma * sq)
    return np.tanh(spec.gamma * (a @ b.T) + spec.coef0)


@dataclass
class SvmModel:
    """Support vectors with dual coefficients alpha_i * y_i and a bias."""

    kernel: KernelSpec
    C: float
    support_vectors: np.ndarray
    dual_coefs: np.ndarray
    bias: float
    converged: bool = True
    # Full training alphas, kept as a diagnostic; not serialized.
    alphas: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.support_vectors = np.asarray(self.support_vectors, dtype=float)
        self.dual_coefs = np.asarray(self.dual_coefs, dtype=float)
        if self.support_vectors.ndim != 2:
            raise InvalidInputError("support_vectors must be 2-D")
        if self.dual_coefs.shape != (self.support_vectors.shape[0],):
            raise InvalidInputError("one dual coefficient per support vector required")

    @property
    def n_features(self) -> int:
        return self.support_vectors.shape[1]


def svm_fit(
    x: np.ndarray,
    y: np.ndarray,
    kernel: KernelSpec,
    C: float,
    tol: float = 1e-3,
    max_passes: int = 10_000,
) -> SvmModel:
    """SMO dual ascent until all KKT violations fall below tol.

    ``y`` must contain both classes, coded -1/+1. Hitting max_passes before
    the KKT check clears returns a model with converged=False.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if C <= 0:
        raise InvalidInputError(f"C must be positive, got {C}")
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise InvalidInputError("x must be 2-D with one label per row")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise InvalidInputError("labels must be coded -1/+1")
    if np.unique(y).size < 2:
        raise InvalidInputError("both classes must be present")

    n = x.shape[0]
    spec = kernel.resolve(x.shape[1])
    k = _kernel_matrix(spec, x, x)
    alpha = np.zeros(n)
    b = 0.0
    # E_i = f(x_i) - y_i, maintained incrementally.
    errors = -y.copy()
    eps = 1e-12

    def take_step(i1: int, i2: int) -> bool:
        nonlocal b
        if i1 == i2:
            return False
        a1, a2 = alpha[i1], alpha[i2]
        y1, y2 = y[i1], y[i2]
        e1, e2 = errors[i1], errors[i2]
        s = y1 * y2
        if s > 0:
            low, high = max(0.0, a1 + a2 - C), min(C, a1 + a2)
        else:
            low, high = max(0.0, a2 - a1), min(C, C + a2 - a1)
        if high - low < eps:
            return False
        eta = k[i1, i1] + k[i2, i2] - 2.0 * k[i1, i2]
        if eta > eps:
            a2_new = a2 + y2 * (e1 - e2) / eta
            a2_new = min(max(a2_new, low), high)
        else:
            # Flat or indefinite direction (possible for sigmoid kernels):
            # the restricted dual objective Psi(a2 + t) - Psi(a2) equals
            # g*t + eta*t^2/2 with g = -y2*(E1 - E2); take the lower endpoint.
            g = -y2 * (e1 - e2)
            dl = low - a2
            dh = high - a2
            obj_low = g * dl + 0.5 * eta * dl * dl
            obj_high = g * dh + 0.5 * eta * dh * dh
            if obj_low < obj_high - eps:
                a2_new = low
            elif obj_high < obj_low - eps:
                a2_new = high
            else:
                return False
        if abs(a2_new - a2) < eps * (a2_new + a2 + eps):
            return False
        a1_new = a1 + s * (a2 - a2_new)
        d1 = y1 * (a1_new - a1)
        d2 = y2 * (a2_new - a2)
        b1 = b - e1 - d1 * k[i1, i1] - d2 * k[i1, i2]
        b2 = b - e2 - d1 * k[i1, i2] - d2 * k[i2, i2]
        if eps < a1_new < C - eps:
            b_new = b1
        elif eps < a2_new < C - eps:
            b_new = b2
        else:
            b_new = 0.5 * (b1 + b2)
        alpha[i1], alpha[i2] = a1_new, a2_new
        errors[:] = errors + d1 * k[i1] + d2 * k[i2] + (b_new - b)
        b = b_new
        return True

    converged = False
    for _ in range(max_passes):
        # r_i = y_i f(x_i) - 1; a point violates KKT when it could still move
        # its alpha in the descent direction by more than tol.
        r = y * errors
        up_viol = np.where(alpha < C - eps, -r - tol, -np.inf)
        down_viol = np.where(alpha > eps, r - tol, -np.inf)
        violations = np.maximum(up_viol, down_viol)
        violator_order = np.argsort(-violations, kind="stable")
        if violations[violator_order[0]] <= 0.0:
            converged = True
            break
        stepped = False
        for i1 in violator_order:
            i1 = int(i1)
            if violations[i1] <= 0.0:
                break
            partner_order = np.argsort(-np.abs(errors[i1] - errors), kind="stable")
            for i2 in partner_order:
                if take_step(i1, int(i2)):
                    stepped = True
                    break
            if stepped:
                break
        if not stepped:
            # No violator can make progress with any partner; stop here.
            break

    sv = alpha > 1e-8
    return SvmModel(
        kernel=spec,
        C=float(C),
        support_vectors=x[sv],
        dual_coefs=(alpha * y)[sv],
        bias=float(b),
        converged=converged,
        alphas=alpha,
    )


def svm_decision(model: SvmModel, row: np.ndarray) -> float:
    """f(x) = sum_i alpha_i y_i K(x_i, x) + b."""
    row = np.asarray(row, dtype=float)
    if row.shape != (model.n_features,):
        raise InvalidInputError(
            f"row has shape {row.shape}, model expects ({model.n_features},)"
        )
    if model.support_vectors.shape[0] == 0:
        return model.bias
    k = _kernel_matrix(model.kernel, model.support_vectors, row[None, :])[:, 0]
    return float(model.dual_coefs @ k + model.bias)


def svm_decision_many(model: SvmModel, matrix: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape[1] != model.n_features:
        raise InvalidInputError(
            f"matrix has {matrix.shape[1]} columns, model expects {model.n_features}"
        )
    if model.support_vectors.shape[0] == 0:
        return np.full(matrix.shape[0], model.bias)
    k = _kernel_matrix(model.kernel, matrix, model.support_vectors)
    return k @ model.dual_coefs + model.bias


def svm_predict(model: SvmModel, row: np.ndarray) -> int:
    """Sign of the decision value; f = 0 resolves to +1."""
    return 1 if svm_decision(model, row) >= 0.0 else -1
