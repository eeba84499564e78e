"""Hierarchical ToxTree classifiers and grid-search tuning.

A pipeline runs its preprocessing chain (feature whitelist, scaler, optional
PCA projection) and then its per-threshold stages in strong -> moderate ->
weak order; the first stage to call "blocker" decides the class. The weak
stage may be a consensus pair whose disagreement resolves to the more
confident member, or to Inconclusive when the confidences tie.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

import numpy as np

from .dataset import (
    BINARY_CLASS_NAMES,
    MULTICLASS_NAMES,
    FoldPlan,
    LabeledDataset,
    stratified_kfold,
    stratified_split,
)
from .errors import InvalidInputError
from .learners import (
    ForestModel,
    KernelSpec,
    MlpModel,
    SvmModel,
    TrainConfig,
    forest_fit,
    forest_predict_proba,
    forest_vote_counts,
    mlp_init,
    mlp_predict_proba,
    mlp_train,
    svm_decision,
    svm_decision_many,
    svm_fit,
)
from .metrics import binary_metrics, confusion_from_labels, cv_estimate
from .preprocess import PcaModel, ScalerParams, project, transform_scaler
from .resample import ResamplePlan, Strategy, balance


class Outcome(enum.Enum):
    STRONG_BLOCKER = "strong-blocker"
    MODERATE_BLOCKER = "moderate-blocker"
    WEAK_BLOCKER = "weak-blocker"
    NON_BLOCKER = "non-blocker"
    INCONCLUSIVE = "inconclusive"


_THRESHOLD_OUTCOME = {
    6.0: Outcome.STRONG_BLOCKER,
    5.0: Outcome.MODERATE_BLOCKER,
    4.5: Outcome.WEAK_BLOCKER,
}


@dataclass(frozen=True)
class StagePrediction:
    blocker: bool
    probability: float


@dataclass(frozen=True)
class PredictionOutcome:
    outcome: Outcome
    stage_name: str
    probability: float | None


def _stage_predict(model: Any, row: np.ndarray, positive_class: int) -> StagePrediction:
    """Binary verdict + confidence from any supported stage model.

    Forests and MLPs report the vote/softmax share of the predicted class;
    SVMs squash the decision value through a logistic only for reporting
    (routing uses the sign). Objects exposing stage_predict(row) are accepted
    as-is, which is how test stubs plug in.
    """
    if hasattr(model, "stage_predict"):
        blocker, prob = model.stage_predict(row)
        return StagePrediction(bool(blocker), float(prob))
    if isinstance(model, ForestModel):
        proba = forest_predict_proba(model, row)
        cls = int(np.argmax(proba))
        return StagePrediction(cls == positive_class, float(proba[cls]))
    if isinstance(model, SvmModel):
        f = svm_decision(model, row)
        p_blocker = 1.0 / (1.0 + math.exp(-f)) if f > -700 else 0.0
        blocker = f >= 0.0
        return StagePrediction(blocker, p_blocker if blocker else 1.0 - p_blocker)
    if isinstance(model, MlpModel):
        proba = mlp_predict_proba(model, row)
        cls = int(np.argmax(proba))
        return StagePrediction(cls == positive_class, float(proba[cls]))
    raise InvalidInputError(f"unsupported stage model type {type(model).__name__}")


def _model_n_features(model: Any) -> int | None:
    return getattr(model, "n_features", None)


@dataclass
class SubModel:
    """One trained binary stage: blocker-at-threshold vs the rest."""

    name: str
    threshold: float
    model: Any
    positive_class: int = 0

    def __post_init__(self):
        if float(self.threshold) not in _THRESHOLD_OUTCOME:
            raise InvalidInputError(
                f"stage threshold must be one of {sorted(_THRESHOLD_OUTCOME)}, got {self.threshold}"
            )
        self.threshold = float(self.threshold)

    def predict(self, row: np.ndarray) -> StagePrediction:
        return _stage_predict(self.model, row, self.positive_class)


@dataclass
class ConsensusPair:
    """Two same-threshold stages voted together with an inconclusive escape."""

    model_a: SubModel
    model_b: SubModel
    prob_tolerance: float = 1e-9

    def __post_init__(self):
        if self.model_a.threshold != self.model_b.threshold:
            raise InvalidInputError("consensus members must share a threshold")
        if self.prob_tolerance < 0:
            raise InvalidInputError("prob_tolerance must be nonnegative")

    @property
    def threshold(self) -> float:
        return self.model_a.threshold

    @property
    def name(self) -> str:
        return f"consensus({self.model_a.name},{self.model_b.name})"


def consensus_predict(pair: ConsensusPair, row: np.ndarray) -> StagePrediction | None:
    """Joint verdict of a consensus pair; None means inconclusive.

    Agreement keeps the shared label with the larger probability. On
    disagreement the more confident member wins, unless the probabilities are
    within prob_tolerance of each other.
    """
    dim_a = _model_n_features(pair.model_a.model)
    dim_b = _model_n_features(pair.model_b.model)
    if dim_a is not None and dim_b is not None and dim_a != dim_b:
        raise InvalidInputError(
            f"consensus members expect different feature counts ({dim_a} vs {dim_b})"
        )
    a = pair.model_a.predict(row)
    b = pair.model_b.predict(row)
    if a.blocker == b.blocker:
        return StagePrediction(a.blocker, max(a.probability, b.probability))
    if abs(a.probability - b.probability) <= pair.prob_tolerance:
        return None
    winner = a if a.probability > b.probability else b
    return StagePrediction(winner.blocker, winner.probability)


@dataclass
class PreprocessChain:
    """Whitelist selection, then scaling, then an optional PCA projection."""

    whitelist: list[str] | None = None
    scaler: ScalerParams | None = None
    pca: PcaModel | None = None

    def apply_row(self, row) -> np.ndarray:
        if isinstance(row, Mapping):
            if self.whitelist is None:
                raise InvalidInputError("mapping rows need a feature whitelist")
            values = []
            for name in self.whitelist:
                if name not in row:
                    raise InvalidInputError(f"missing feature {name!r}")
                v = float(row[name])
                if math.isnan(v):
                    raise InvalidInputError(f"missing feature {name!r}")
                values.append(v)
            vec = np.array(values, dtype=float)
        else:
            vec = np.asarray(row, dtype=float)
            if self.whitelist is not None and vec.shape != (len(self.whitelist),):
                raise InvalidInputError(
                    f"row has {vec.shape[0]} values, whitelist expects {len(self.whitelist)}"
                )
        if self.scaler is not None:
            vec = transform_scaler(self.scaler, vec)[0]
        if self.pca is not None:
            vec = project(self.pca, vec)
        return vec

    @property
    def output_dim(self) -> int | None:
        if self.pca is not None:
            return self.pca.n_components
        if self.scaler is not None:
            return self.scaler.n_features
        if self.whitelist is not None:
            return len(self.whitelist)
        return None


@dataclass
class ToxTreePipeline:
    preprocessing: PreprocessChain
    stages: list[SubModel | ConsensusPair]

    def __post_init__(self):
        if not self.stages:
            raise InvalidInputError("pipeline needs at least one stage")
        thresholds = [s.threshold for s in self.stages]
        if any(t2 >= t1 for t1, t2 in zip(thresholds, thresholds[1:])):
            raise InvalidInputError(
                f"stage thresholds must be strictly descending, got {thresholds}"
            )
        out_dim = self.preprocessing.output_dim
        if out_dim is not None:
            for stage in self.stages:
                models = (
                    (stage.model_a.model, stage.model_b.model)
                    if isinstance(stage, ConsensusPair)
                    else (stage.model,)
                )
                for m in models:
                    dim = _model_n_features(m)
                    if dim is not None and dim != out_dim:
                        raise InvalidInputError(
                            f"stage {stage.name!r} expects {dim} features, "
                            f"preprocessing outputs {out_dim}"
                        )

    @property
    def stage_names(self) -> list[str]:
        return [s.name for s in self.stages]


def pipeline_predict(pipeline: ToxTreePipeline, row) -> PredictionOutcome:
    """Route one descriptor row through the stages.

    The first blocker verdict maps its stage threshold to the class
    (6 -> strong, 5 -> moderate, 4.5 -> weak); all-non-blocker rows come out
    NonBlocker; a consensus stage may end Inconclusive.
    """
    vec = pipeline.preprocessing.apply_row(row)
    last: tuple[str, StagePrediction] | None = None
    for stage in pipeline.stages:
        if isinstance(stage, ConsensusPair):
            decision = consensus_predict(stage, vec)
            if decision is None:
                return PredictionOutcome(Outcome.INCONCLUSIVE, stage.name, None)
        else:
            decision = stage.predict(vec)
        if decision.blocker:
            return PredictionOutcome(
                _THRESHOLD_OUTCOME[stage.threshold], stage.name, decision.probability
            )
        last = (stage.name, decision)
    return PredictionOutcome(Outcome.NON_BLOCKER, last[0], last[1].probability)


def build_herg_pipeline(
    stage_models: Mapping[str, Any],
    whitelist: Sequence[str] | None,
    scaler: ScalerParams | None,
    prob_tolerance: float = 1e-9,
) -> ToxTreePipeline:
    """Strong/moderate single forests plus the weak-stage consensus pair.

    ``stage_models`` must provide '6rf-ovrs', '5rf-ovrs', '4o5rf', and
    '4o5rf-ovrs'. Preprocessing is whitelist + scaler (no PCA).
    """
    required = ("6rf-ovrs", "5rf-ovrs", "4o5rf", "4o5rf-ovrs")
    missing = [k for k in required if k not in stage_models]
    if missing:
        raise InvalidInputError(f"missing stage models: {', '.join(missing)}")
    stages = [
        SubModel("6rf-ovrs", 6.0, stage_models["6rf-ovrs"]),
        SubModel("5rf-ovrs", 5.0, stage_models["5rf-ovrs"]),
        ConsensusPair(
            SubModel("4o5rf", 4.5, stage_models["4o5rf"]),
            SubModel("4o5rf-ovrs", 4.5, stage_models["4o5rf-ovrs"]),
            prob_tolerance,
        ),
    ]
    chain = PreprocessChain(list(whitelist) if whitelist is not None else None, scaler, None)
    return ToxTreePipeline(chain, stages)


def build_nav_pipeline(
    scaler: ScalerParams,
    pca: PcaModel,
    svm_models: Mapping[str, SvmModel],
    whitelist: Sequence[str] | None = None,
) -> ToxTreePipeline:
    """SVM stages behind whitelist -> scaler -> PCA preprocessing."""
    required = ("6svm", "5svm-ovrs", "4o5svm")
    missing = [k for k in required if k not in svm_models]
    if missing:
        raise InvalidInputError(f"missing stage models: {', '.join(missing)}")
    for name in required:
        model = svm_models[name]
        dim = _model_n_features(model)
        if dim is not None and dim != pca.n_components:
            raise InvalidInputError(
                f"stage {name!r} expects {dim} features but PCA projects to {pca.n_components}"
            )
    stages = [
        SubModel("6svm", 6.0, svm_models["6svm"]),
        SubModel("5svm-ovrs", 5.0, svm_models["5svm-ovrs"]),
        SubModel("4o5svm", 4.5, svm_models["4o5svm"]),
    ]
    chain = PreprocessChain(list(whitelist) if whitelist is not None else None, scaler, pca)
    return ToxTreePipeline(chain, stages)


# ---------------------------------------------------------------------------
# Grid tuning


@dataclass(frozen=True)
class ForestConfig:
    n_estimators: int
    max_depth: int | None = None

    def size_key(self):
        return (self.n_estimators, self.max_depth if self.max_depth is not None else math.inf)

    def describe(self) -> str:
        depth = self.max_depth if self.max_depth is not None else "none"
        return f"rf(n={self.n_estimators},depth={depth})"


@dataclass(frozen=True)
class SvmConfig:
    kernel: str
    c: float
    degree: int = 3

    def size_key(self):
        return (self.c,)

    def describe(self) -> str:
        if self.kernel == "poly":
            return f"svm({self.kernel}{self.degree},C={self.c:g})"
        return f"svm({self.kernel},C={self.c:g})"


@dataclass(frozen=True)
class MlpGridConfig:
    activation: str
    dropout_rate: float
    batchnorm: bool
    batch_size: int

    def size_key(self):
        return (self.batch_size,)

    def describe(self) -> str:
        return (
            f"mlp({self.activation},drop={self.dropout_rate:g},"
            f"bn={'on' if self.batchnorm else 'off'},batch={self.batch_size})"
        )


# Paper-derived hyperparameter spaces.
SVM_C_VALUES = (0.1, 0.2, 0.5, 0.8, 1, 3, 5, 10, 50, 100)


def herg_rf_space() -> list[ForestConfig]:
    """11 estimator counts, 10 through 110."""
    return [ForestConfig(n) for n in range(10, 111, 10)]


def nav_rf_space() -> list[ForestConfig]:
    """10 estimator counts, 10 through 100."""
    return [ForestConfig(n) for n in range(10, 101, 10)]


def svm_space() -> list[SvmConfig]:
    """{linear, poly d 2..10, sigmoid, rbf} x 10 penalty values = 120 configs."""
    configs = []
    for c in SVM_C_VALUES:
        configs.append(SvmConfig("linear", float(c)))
    for d in range(2, 11):
        for c in SVM_C_VALUES:
            configs.append(SvmConfig("poly", float(c), degree=d))
    for c in SVM_C_VALUES:
        configs.append(SvmConfig("sigmoid", float(c)))
    for c in SVM_C_VALUES:
        configs.append(SvmConfig("rbf", float(c)))
    return configs


def mlp_space() -> list[MlpGridConfig]:
    """2^4 combinations of activation, dropout, batch norm, and batch size."""
    configs = []
    for activation in ("relu", "sigmoid"):
        for dropout in (0.5, 0.0):
            for batchnorm in (True, False):
                for batch_size in (256, 512):
                    configs.append(MlpGridConfig(activation, dropout, batchnorm, batch_size))
    return configs


@dataclass
class ConfigResult:
    config: Any
    ac_cv: float
    f1_cv: float
    binary_ac_cv: float | None = None
    observed_max_depth: int | None = None
    fold_ac: list[float] = field(default_factory=list)
    fold_f1: list[float] = field(default_factory=list)

    def describe(self) -> str:
        return self.config.describe()


@dataclass
class TuningResult:
    results: list[ConfigResult]
    ranked: list[ConfigResult]
    fold_warnings: list[str] = field(default_factory=list)
    class_distribution: tuple[int, ...] = ()

    @property
    def best(self) -> ConfigResult:
        return self.ranked[0]


def _binary_view(dataset: LabeledDataset) -> tuple[np.ndarray, np.ndarray] | None:
    """(truth_is_blocker, derived-from) masks for F1/binary accuracy."""
    if dataset.class_names == BINARY_CLASS_NAMES:
        return dataset.labels == 0, np.array([0])
    if dataset.class_names == MULTICLASS_NAMES:
        return dataset.labels <= 2, np.array([0, 1, 2])
    return None


def _fit_and_predict(config, train_ds: LabeledDataset, val_x: np.ndarray, seed: int, extras: dict):
    if isinstance(config, ForestConfig):
        model = forest_fit(train_ds, config.n_estimators, config.max_depth, seed=seed)
        extras["depth"] = max(extras.get("depth", 0), model.observed_max_depth())
        return np.array([int(np.argmax(forest_vote_counts(model, r))) for r in val_x])
    if isinstance(config, SvmConfig):
        if len(train_ds.class_names) != 2:
            raise InvalidInputError("SVM tuning requires binary labels")
        y = np.where(train_ds.labels == 0, 1.0, -1.0)
        spec = KernelSpec(config.kernel, degree=config.degree)
        model = svm_fit(train_ds.matrix, y, spec, config.c)
        f = svm_decision_many(model, val_x)
        return np.where(f >= 0.0, 0, 1)
    if isinstance(config, MlpGridConfig):
        hidden = extras["mlp_hidden"]
        base_cfg: TrainConfig = extras["mlp_train_config"]
        cfg = replace(base_cfg, batch_size=config.batch_size, seed=seed)
        sizes = [train_ds.n_features, *hidden, len(train_ds.class_names)]
        model = mlp_init(sizes, config.activation, seed, config.dropout_rate, config.batchnorm)
        inner_train, inner_val = stratified_split(train_ds, cfg.validation_fraction, seed)
        if inner_val.n_rows == 0:
            inner_train, inner_val = train_ds, train_ds
        result = mlp_train(model, inner_train, inner_val, cfg)
        probs = mlp_predict_proba(result.model, val_x)
        return np.argmax(probs, axis=1)
    raise InvalidInputError(f"unsupported config type {type(config).__name__}")


def tune_grid(
    space: Sequence[Any],
    dataset: LabeledDataset,
    k: int = 10,
    seed: int = 0,
    plan: ResamplePlan | None = None,
    mlp_hidden: Sequence[int] = (40,),
    mlp_train_config: TrainConfig | None = None,
) -> TuningResult:
    """Stratified k-fold CV over every configuration, resampling only the
    training side of each fold.

    Rankings order by AC_cv, then F1_cv, then the smaller model (fewer
    estimators / smaller C / smaller batch). AC_cv is the dataset's native
    accuracy (multiclass when labels are multiclass); F1 and binary accuracy
    are derived at the blocker boundary where the class layout defines one.
    """
    if not space:
        raise InvalidInputError("hyperparameter space must be non-empty")
    plan = plan or ResamplePlan()
    if plan.strategy is not Strategy.ORIGINAL and len(dataset.class_names) != 2:
        raise InvalidInputError("resampling plans apply to binary datasets only")
    folds: FoldPlan = stratified_kfold(dataset, k, seed)
    binary = _binary_view(dataset)

    extras_base = {
        "mlp_hidden": tuple(mlp_hidden),
        "mlp_train_config": mlp_train_config or TrainConfig(epochs=50),
    }

    results: list[ConfigResult] = []
    for config in space:
        fold_ac: list[float] = []
        fold_f1: list[float] = []
        fold_bin_ac: list[float] = []
        extras = dict(extras_base)
        for fold_idx, (train_idx, val_idx) in enumerate(folds.iter_train_val()):
            if len(val_idx) == 0:  # possible when k exceeds the row count
                continue
            train_ds = dataset.subset(train_idx)
            if plan.strategy is not Strategy.ORIGINAL:
                fold_plan = replace(plan, seed=plan.seed + 7919 * (fold_idx + 1))
                train_ds = balance(train_ds, fold_plan)
            val_ds = dataset.subset(val_idx)
            preds = _fit_and_predict(config, train_ds, val_ds.matrix, seed, extras)
            fold_ac.append(float(np.mean(preds == val_ds.labels)))
            if binary is not None:
                blocker_truth = binary[0][val_idx]
                blocker_pred = np.isin(preds, binary[1])
                counts = confusion_from_labels(blocker_truth, blocker_pred, True)
                if counts.total:
                    m = binary_metrics(counts)
                    fold_f1.append(m.f1)
                    fold_bin_ac.append(m.ac)
        multiclass = len(dataset.class_names) != 2
        result = ConfigResult(
            config=config,
            ac_cv=cv_estimate(fold_ac),
            f1_cv=cv_estimate(fold_f1) if fold_f1 else float("nan"),
            binary_ac_cv=cv_estimate(fold_bin_ac) if fold_bin_ac and multiclass else None,
            observed_max_depth=extras.get("depth"),
            fold_ac=fold_ac,
            fold_f1=fold_f1,
        )
        results.append(result)

    def rank_key(item: tuple[int, ConfigResult]):
        idx, r = item
        f1 = r.f1_cv if not math.isnan(r.f1_cv) else -1.0
        return (-r.ac_cv, -f1, r.config.size_key(), idx)

    ranked = [r for _, r in sorted(enumerate(results), key=rank_key)]
    counts = dataset.class_counts()
    if plan.strategy is Strategy.OVER_SAMPLE and len(counts) == 2:
        distribution = (max(counts), max(counts))
    elif plan.strategy is Strategy.UNDER_SAMPLE and len(counts) == 2:
        distribution = (min(counts), min(counts))
    else:
        distribution = counts
    return TuningResult(results, ranked, folds.warnings, distribution)
