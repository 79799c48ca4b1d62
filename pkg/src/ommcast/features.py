"""Feature pipeline: thematic-group PCA plus a fatality-history decay column.

Covariates are median-imputed and standardized with training-window
statistics, then each thematic group is projected onto its leading
principal components. The final matrix appends one exponentially decayed
cumulative-fatality column (half-life in months), which is the only
feature the simulator can update dynamically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DataError, ModelError, ValidationError
from .panel import PanelDataset

DEFAULT_HALF_LIFE = 12.0
DECAY_COLUMN = "fatality_decay"

_ORTHO_TOL = 1e-8


@dataclass(frozen=True)
class FeatureGroupSpec:
    name: str
    columns: tuple[str, ...]
    components: int

    def __post_init__(self):
        if self.components < 1:
            raise ValidationError(f"group {self.name}: components must be >= 1")
        if self.components > len(self.columns):
            raise ValidationError(
                f"group {self.name}: {self.components} components requested "
                f"but only {len(self.columns)} member columns"
            )


def default_group_specs(covariate_groups: dict[str, str]) -> list[FeatureGroupSpec]:
    """Build group specs from a covariate->group schema.

    Default component counts follow the 11-PC layout: two components for
    groups with at least three members, one otherwise.
    """
    by_group: dict[str, list[str]] = {}
    for col, group in covariate_groups.items():
        by_group.setdefault(group, []).append(col)
    specs = []
    for group, cols in by_group.items():
        k = 2 if len(cols) >= 3 else 1
        specs.append(FeatureGroupSpec(group, tuple(sorted(cols)), k))
    return specs


@dataclass
class StandardizerParams:
    columns: list[str]
    mean: np.ndarray
    sd: np.ndarray
    median: np.ndarray
    constant_columns: list[str] = field(default_factory=list)


@dataclass
class PcaModel:
    groups: list[FeatureGroupSpec]
    loadings: dict[str, np.ndarray]  # group -> (members, components)
    explained_variance: dict[str, np.ndarray]  # group -> shares, non-increasing

    @property
    def pc_columns(self) -> list[str]:
        return [f"{g.name}_pc{i + 1}" for g in self.groups for i in range(g.components)]


@dataclass
class FeatureMatrix:
    unit_ids: np.ndarray
    month_ids: np.ndarray
    columns: list[str]
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.values)

    def to_frame(self) -> pd.DataFrame:
        out = pd.DataFrame(self.values, columns=self.columns)
        out.insert(0, "month_id", self.month_ids)
        out.insert(0, "unit_id", self.unit_ids)
        return out


def fit_standardizer(train: PanelDataset, columns: list[str] | None = None) -> StandardizerParams:
    """Training-window means, SDs (n-1 denominator), and imputation medians.

    Constant columns get a sentinel SD of 1 and are flagged so they
    contribute zeros after standardization instead of blowing up.
    """
    if len(train) == 0:
        raise DataError("cannot fit standardizer on an empty panel")
    columns = list(columns) if columns is not None else list(train.covariate_columns)
    frame = train.frame
    means, sds, medians, constants = [], [], [], []
    for col in columns:
        observed = frame[col].dropna().to_numpy()
        if observed.size == 0:
            raise DataError(f"covariate {col}: all values missing in training window")
        med = float(np.median(observed))
        mean = float(np.mean(observed))
        sd = float(np.std(observed, ddof=1)) if observed.size > 1 else 0.0
        if sd == 0.0:
            constants.append(col)
            sd = 1.0
        means.append(mean)
        sds.append(sd)
        medians.append(med)
    return StandardizerParams(
        columns=columns,
        mean=np.array(means),
        sd=np.array(sds),
        median=np.array(medians),
        constant_columns=constants,
    )


def standardize(params: StandardizerParams, panel: PanelDataset) -> pd.DataFrame:
    """Impute with training medians, then z-score with training moments."""
    frame = panel.frame
    missing = set(params.columns) - set(panel.covariate_columns)
    if missing:
        raise DataError(f"panel lacks fitted covariates: {sorted(missing)}")
    raw = frame[params.columns].to_numpy(dtype=np.float64, copy=True)
    nan_mask = np.isnan(raw)
    if nan_mask.any():
        raw[nan_mask] = np.broadcast_to(params.median, raw.shape)[nan_mask]
    z = (raw - params.mean) / params.sd
    return pd.DataFrame(z, columns=params.columns)


def pca_fit(standardized: pd.DataFrame, groups: list[FeatureGroupSpec]) -> PcaModel:
    """Per-group PCA via eigendecomposition of the sample covariance.

    Sign convention: within each loading vector, the largest-magnitude
    entry is made positive, so fits are reproducible across platforms.
    """
    loadings: dict[str, np.ndarray] = {}
    shares: dict[str, np.ndarray] = {}
    for group in groups:
        missing = set(group.columns) - set(standardized.columns)
        if missing:
            raise DataError(f"group {group.name}: unknown columns {sorted(missing)}")
        X = standardized[list(group.columns)].to_numpy()
        cov = np.cov(X, rowvar=False, ddof=1)
        cov = np.atleast_2d(cov)
        eigvals, eigvecs = np.linalg.eigh(cov)
        order = np.argsort(eigvals)[::-1]
        eigvals = np.clip(eigvals[order], 0.0, None)
        eigvecs = eigvecs[:, order]
        rank = int(np.sum(eigvals > 1e-10 * max(eigvals[0], 1.0)))
        if group.components > rank:
            raise ModelError(
                f"group {group.name}: {group.components} components requested "
                f"but covariance rank is {rank}"
            )
        L = eigvecs[:, : group.components].copy()
        for j in range(L.shape[1]):
            pivot = int(np.argmax(np.abs(L[:, j])))
            if L[pivot, j] < 0:
                L[:, j] = -L[:, j]
        loadings[group.name] = L
        total = float(eigvals.sum())
        shares[group.name] = eigvals[: group.components] / total if total > 0 else np.zeros(group.components)
    return PcaModel(groups=list(groups), loadings=loadings, explained_variance=shares)


def pca_transform(params: StandardizerParams, model: PcaModel, panel: PanelDataset) -> pd.DataFrame:
    """Project a panel's covariates onto the fitted group components."""
    standardized = standardize(params, panel)
    out = {}
    for group in model.groups:
        X = standardized[list(group.columns)].to_numpy()
        scores = X @ model.loadings[group.name]
        for i in range(group.components):
            out[f"{group.name}_pc{i + 1}"] = scores[:, i]
    return pd.DataFrame(out, columns=model.pc_columns)


def decay_rate(half_life: float) -> float:
    if half_life <= 0:
        raise ValidationError(f"half_life must be positive, got {half_life}")
    return 2.0 ** (-1.0 / half_life)


def decay_feature(fatalities: np.ndarray, half_life: float = DEFAULT_HALF_LIFE) -> np.ndarray:
    """Exponentially discounted cumulative fatalities, including the current month.

    d(t) = d(t-1) * 2^(-1/half_life) + fatalities(t), with d(-1) = 0.
    """
    rho = decay_rate(half_life)
    fatalities = np.asarray(fatalities, dtype=np.float64)
    out = np.empty_like(fatalities)
    acc = 0.0
    for t, f in enumerate(fatalities):
        acc = acc * rho + f
        out[t] = acc
    return out


def build_feature_matrix(
    panel: PanelDataset,
    params: StandardizerParams,
    model: PcaModel,
    half_life: float = DEFAULT_HALF_LIFE,
) -> FeatureMatrix:
    """Assemble the model input: group PC scores then the decay column.

    The decay column is computed per unit from that unit's own fatality
    series within this panel, so it reflects exactly the history the rows
    cover (the caller controls the window).
    """
    pcs = pca_transform(params, model, panel)
    frame = panel.frame
    decay = np.empty(len(frame))
    for unit in panel.units:
        mask = (frame["unit_id"] == unit).to_numpy()
        decay[mask] = decay_feature(frame.loc[mask, "fatalities"].to_numpy(), half_life)
    values = np.column_stack([pcs.to_numpy(), decay])
    columns = model.pc_columns + [DECAY_COLUMN]
    return FeatureMatrix(
        unit_ids=frame["unit_id"].to_numpy(),
        month_ids=frame["month_id"].to_numpy(),
        columns=columns,
        values=values,
    )


@dataclass
class FeaturePipeline:
    """Fitted standardizer + PCA + decay settings, bundled for reuse."""

    groups: list[FeatureGroupSpec]
    half_life: float = DEFAULT_HALF_LIFE
    standardizer: StandardizerParams | None = None
    pca: PcaModel | None = None

    def fit(self, train: PanelDataset) -> "FeaturePipeline":
        needed = sorted({c for g in self.groups for c in g.columns})
        self.standardizer = fit_standardizer(train, columns=needed)
        standardized = standardize(self.standardizer, train)
        self.pca = pca_fit(standardized, self.groups)
        return self

    def transform(self, panel: PanelDataset) -> FeatureMatrix:
        if self.standardizer is None or self.pca is None:
            raise ModelError("feature pipeline is not fitted")
        return build_feature_matrix(panel, self.standardizer, self.pca, self.half_life)

    @property
    def columns(self) -> list[str]:
        if self.pca is None:
            raise ModelError("feature pipeline is not fitted")
        return self.pca.pc_columns + [DECAY_COLUMN]

    # -- serialization -------------------------------------------------

    def to_state(self) -> dict:
        if self.standardizer is None or self.pca is None:
            raise ModelError("feature pipeline is not fitted")
        return {
            "half_life": self.half_life,
            "groups": [
                {"name": g.name, "columns": list(g.columns), "components": g.components}
                for g in self.groups
            ],
            "standardizer": {
                "columns": self.standardizer.columns,
                "mean": self.standardizer.mean.tolist(),
                "sd": self.standardizer.sd.tolist(),
                "median": self.standardizer.median.tolist(),
                "constant_columns": self.standardizer.constant_columns,
            },
            "loadings": {g.name: self.pca.loadings[g.name].tolist() for g in self.groups},
            "explained_variance": {
                g.name: self.pca.explained_variance[g.name].tolist() for g in self.groups
            },
        }

    @classmethod
    def from_state(cls, state: dict) -> "FeaturePipeline":
        groups = [
            FeatureGroupSpec(g["name"], tuple(g["columns"]), int(g["components"]))
            for g in state["groups"]
        ]
        std = state["standardizer"]
        pipeline = cls(groups=groups, half_life=float(state["half_life"]))
        pipeline.standardizer = StandardizerParams(
            columns=list(std["columns"]),
            mean=np.array(std["mean"]),
            sd=np.array(std["sd"]),
            median=np.array(std["median"]),
            constant_columns=list(std["constant_columns"]),
        )
        pipeline.pca = PcaModel(
            groups=groups,
            loadings={name: np.array(L) for name, L in state["loadings"].items()},
            explained_variance={
                name: np.array(v) for name, v in state["explained_variance"].items()
            },
        )
        return pipeline
