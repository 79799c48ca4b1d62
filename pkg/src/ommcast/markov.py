"""Observed-Markov layer over the fatality panel.

Four states are read directly off consecutive fatality pairs: a country is
Peaceful (zero, zero), Escalating (zero then nonzero), at War (nonzero,
nonzero) or De-escalating (nonzero then zero). Escalation and De-escalation
are transient, so from any state exactly two successors are legal and each
transition is a binary classification problem. Fatalities are identically
zero in the zero states, so only Escalation and War carry outcome forests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DataError, ModelError
from .features import FeatureMatrix, FeaturePipeline
from .forest import ForestHyperparams, ProbClassifier, QuantileForest, fit_classifier, fit_qrf
from .panel import PanelDataset

ARCHIVE_FORMAT_VERSION = 1


class MarkovState(Enum):
    PEACEFUL = "Peaceful"
    ESCALATION = "Escalation"
    WAR = "War"
    DEESCALATION = "DeEscalation"


ZERO_STATES = frozenset({MarkovState.PEACEFUL, MarkovState.DEESCALATION})
NONZERO_STATES = frozenset({MarkovState.ESCALATION, MarkovState.WAR})

# origin -> (zero-fatality successor, nonzero-fatality successor)
_SUCCESSORS = {
    MarkovState.PEACEFUL: (MarkovState.PEACEFUL, MarkovState.ESCALATION),
    MarkovState.ESCALATION: (MarkovState.DEESCALATION, MarkovState.WAR),
    MarkovState.WAR: (MarkovState.DEESCALATION, MarkovState.WAR),
    MarkovState.DEESCALATION: (MarkovState.PEACEFUL, MarkovState.ESCALATION),
}


def state_of_pair(prev_fatalities: int, cur_fatalities: int) -> MarkovState:
    if prev_fatalities == 0:
        return MarkovState.PEACEFUL if cur_fatalities == 0 else MarkovState.ESCALATION
    return MarkovState.DEESCALATION if cur_fatalities == 0 else MarkovState.WAR


def encode_states(fatalities) -> list[MarkovState]:
    """States for months 1..n-1 of a fatality series (month 0 has no state)."""
    fatalities = np.asarray(fatalities)
    if len(fatalities) < 2:
        raise DataError("need at least 2 months of fatalities to encode a state")
    return [state_of_pair(int(p), int(c)) for p, c in zip(fatalities[:-1], fatalities[1:])]


def allowed_successors(state: MarkovState) -> tuple[MarkovState, MarkovState]:
    """Legal next states; the first entry is the zero-fatality successor."""
    return _SUCCESSORS[state]


@dataclass
class TransitionModel:
    """Binary transition model for one origin state.

    Either a fitted classifier or a Laplace-smoothed constant rate for
    origins whose training labels were single-class (or too few to split).
    """

    origin: MarkovState
    classifier: ProbClassifier | None
    fallback_rate: float | None
    n_rows: int
    flag: str | None = None

    def nonzero_prob(self, X: np.ndarray) -> np.ndarray:
        """P(next state is the nonzero successor), per row of X."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.classifier is not None:
            return self.classifier.predict_proba(X)[:, 1]
        return np.full(len(X), self.fallback_rate)


@dataclass
class TransitionModelSet:
    models: dict[MarkovState, TransitionModel]


@dataclass
class OutcomeModelSet:
    """Fatality forests for the nonzero states; zero states need no model."""

    escalation: QuantileForest
    war: QuantileForest
    flags: list[str] = field(default_factory=list)

    def for_state(self, state: MarkovState) -> QuantileForest:
        if state is MarkovState.ESCALATION:
            return self.escalation
        if state is MarkovState.WAR:
            return self.war
        raise ModelError(f"state {state.value} has no outcome model (fatalities are 0)")


def _transition_rows(train: PanelDataset, features: FeatureMatrix):
    """(X, origin_state, label, next_state, target) tuples from the panel.

    A usable row needs three contiguous months (t-1, t, t+1): the state at
    t takes a lag, and the label/target live at t+1. Features are taken at
    the origin month t so simulation stays causally out-of-sample.
    """
    frame = train.frame
    months = frame["month_id"].to_numpy()
    fats = frame["fatalities"].to_numpy()
    units = frame["unit_id"].to_numpy()
    rows = []
    for unit in train.units:
        idx = np.nonzero(units == unit)[0]
        m, f = months[idx], fats[idx]
        for k in range(1, len(idx) - 1):
            if m[k] - m[k - 1] != 1 or m[k + 1] - m[k] != 1:
                continue
            origin = state_of_pair(int(f[k - 1]), int(f[k]))
            nxt = state_of_pair(int(f[k]), int(f[k + 1]))
            rows.append((idx[k], origin, nxt, int(f[k + 1])))
    return rows


def fit_transition_models(
    train: PanelDataset,
    features: FeatureMatrix,
    hyper: ForestHyperparams,
) -> TransitionModelSet:
    """One binary classifier per origin state.

    Label = next state is the nonzero successor. Degenerate origins
    (single-class labels, or too few rows to grow a tree) get the
    Laplace-smoothed rate (k+1)/(n+2); an origin never observed at all
    falls back to the global nonzero-transition prior and is flagged.
    """
    rows = _transition_rows(train, features)
    if not rows:
        raise DataError("no usable transition rows (need 3 contiguous months per unit)")
    X_all = features.values
    by_origin: dict[MarkovState, list[tuple[int, int]]] = {s: [] for s in MarkovState}
    for feat_idx, origin, nxt, _target in rows:
        label = int(nxt in NONZERO_STATES)
        by_origin[origin].append((feat_idx, label))

    global_k = sum(lbl for pairs in by_origin.values() for _, lbl in pairs)
    global_n = len(rows)
    global_prior = (global_k + 1) / (global_n + 2)

    _, min_leaf = hyper.resolve(X_all.shape[1], "classify")
    models: dict[MarkovState, TransitionModel] = {}
    for origin, pairs in by_origin.items():
        n = len(pairs)
        if n == 0:
            models[origin] = TransitionModel(
                origin, None, global_prior, 0, flag="origin never observed; global prior"
            )
            continue
        labels = np.array([lbl for _, lbl in pairs])
        k = int(labels.sum())
        if k == 0 or k == n or n < 2 * min_leaf:
            rate = (k + 1) / (n + 2)
            flag = "single-class labels" if k in (0, n) else "too few rows to split"
            models[origin] = TransitionModel(origin, None, rate, n, flag=flag)
            continue
        X = X_all[[i for i, _ in pairs]]
        clf = fit_classifier(X, labels, hyper)
        models[origin] = TransitionModel(origin, clf, None, n)
    return TransitionModelSet(models)


def fit_outcome_models(
    train: PanelDataset,
    features: FeatureMatrix,
    hyper: ForestHyperparams,
    target_transform: str = "log1p",
) -> OutcomeModelSet:
    """State-conditional quantile forests for fatalities in nonzero states.

    Targets are the next month's fatalities, conditioned on the next
    month's state; features come from the origin month. A state with fewer
    than min_leaf_size rows borrows the pooled nonzero-state fit (flagged).
    """
    rows = _transition_rows(train, features)
    esc = [(i, t) for i, _o, nxt, t in rows if nxt is MarkovState.ESCALATION]
    war = [(i, t) for i, _o, nxt, t in rows if nxt is MarkovState.WAR]
    if not esc and not war:
        raise ModelError("no nonzero-state rows in the training window; outcome models unfittable")
    X_all = features.values
    _, min_leaf = hyper.resolve(X_all.shape[1], "regress")
    flags: list[str] = []

    def fit_rows(pairs):
        X = X_all[[i for i, _ in pairs]]
        y = np.array([t for _, t in pairs], dtype=np.float64)
        return fit_qrf(X, y, hyper, target_transform=target_transform)

    pooled = None
    if len(esc) < min_leaf or len(war) < min_leaf:
        pooled = fit_rows(esc + war)
    if len(esc) >= min_leaf:
        esc_model = fit_rows(esc)
    else:
        esc_model = pooled
        flags.append(f"escalation outcome pooled ({len(esc)} rows < {min_leaf})")
    if len(war) >= min_leaf:
        war_model = fit_rows(war)
    else:
        war_model = pooled
        flags.append(f"war outcome pooled ({len(war)} rows < {min_leaf})")
    return OutcomeModelSet(escalation=esc_model, war=war_model, flags=flags)


def transition_prob(models: TransitionModelSet, state: MarkovState, x: np.ndarray) -> np.ndarray:
    """(p_zero_successor, p_nonzero_successor), aligned with allowed_successors."""
    p1 = float(models.models[state].nonzero_prob(np.atleast_2d(x))[0])
    return np.array([1.0 - p1, p1])


@dataclass
class FittedModelSet:
    """Everything needed to simulate: features + transitions + outcomes."""

    pipeline: FeaturePipeline
    transitions: TransitionModelSet
    outcomes: OutcomeModelSet
    metadata: dict = field(default_factory=dict)


def fit_model_set(
    train: PanelDataset,
    pipeline: FeaturePipeline,
    transition_hyper: ForestHyperparams,
    outcome_hyper: ForestHyperparams,
    target_transform: str = "log1p",
    metadata: dict | None = None,
) -> FittedModelSet:
    """Fit the full two-stage model on one training window."""
    pipeline.fit(train)
    features = pipeline.transform(train)
    transitions = fit_transition_models(train, features, transition_hyper)
    outcomes = fit_outcome_models(train, features, outcome_hyper, target_transform)
    meta = dict(metadata or {})
    meta["train_window"] = list(train.month_range)
    meta["transition_flags"] = {
        s.value: m.flag for s, m in transitions.models.items() if m.flag
    }
    meta["outcome_flags"] = list(outcomes.flags)
    return FittedModelSet(pipeline=pipeline, transitions=transitions, outcomes=outcomes, metadata=meta)


# -- model archive -----------------------------------------------------------


def save_model_set(models: FittedModelSet, path) -> None:
    """Write a single versioned .npz archive; load reproduces predictions."""
    arrays: dict[str, np.ndarray] = {}
    meta = {
        "format_version": ARCHIVE_FORMAT_VERSION,
        "pipeline": models.pipeline.to_state(),
        "metadata": models.metadata,
        "transitions": {},
        "outcome_transform": models.outcomes.escalation.target_transform,
        "outcome_flags": models.outcomes.flags,
    }
    for state, tm in models.transitions.models.items():
        entry = {
            "n_rows": tm.n_rows,
            "fallback_rate": tm.fallback_rate,
            "flag": tm.flag,
            "has_classifier": tm.classifier is not None,
        }
        if tm.classifier is not None:
            entry["hyper"] = tm.classifier.hyper.to_state()
            for key, arr in tm.classifier.to_state().items():
                arrays[f"trans_{state.name}_{key}"] = arr
        meta["transitions"][state.name] = entry
    for name, qrf in (("ESC", models.outcomes.escalation), ("WAR", models.outcomes.war)):
        meta[f"outcome_{name}_hyper"] = qrf.hyper.to_state()
        for key, arr in qrf.to_state().items():
            arrays[f"out_{name}_{key}"] = arr
    arrays["meta_json"] = np.array(json.dumps(meta, sort_keys=True))
    np.savez_compressed(path, **arrays)


def load_model_set(path) -> FittedModelSet:
    with np.load(path, allow_pickle=False) as data:
        arrays = {k: data[k] for k in data.files}
    try:
        meta = json.loads(str(arrays.pop("meta_json")))
    except (KeyError, json.JSONDecodeError) as e:
        raise ModelError(f"not a model archive: {path}") from e
    if meta.get("format_version") != ARCHIVE_FORMAT_VERSION:
        raise ModelError(f"unsupported archive version {meta.get('format_version')}")

    pipeline = FeaturePipeline.from_state(meta["pipeline"])
    models: dict[MarkovState, TransitionModel] = {}
    for state in MarkovState:
        entry = meta["transitions"][state.name]
        clf = None
        if entry["has_classifier"]:
            prefix = f"trans_{state.name}_"
            state_arrays = {k[len(prefix) :]: v for k, v in arrays.items() if k.startswith(prefix)}
            clf = ProbClassifier.from_state(state_arrays, ForestHyperparams.from_state(entry["hyper"]))
        models[state] = TransitionModel(
            origin=state,
            classifier=clf,
            fallback_rate=entry["fallback_rate"],
            n_rows=entry["n_rows"],
            flag=entry["flag"],
        )

    def load_qrf(name):
        prefix = f"out_{name}_"
        state_arrays = {k[len(prefix) :]: v for k, v in arrays.items() if k.startswith(prefix)}
        hyper = ForestHyperparams.from_state(meta[f"outcome_{name}_hyper"])
        return QuantileForest.from_state(state_arrays, hyper)

    outcomes = OutcomeModelSet(
        escalation=load_qrf("ESC"), war=load_qrf("WAR"), flags=list(meta["outcome_flags"])
    )
    return FittedModelSet(
        pipeline=pipeline,
        transitions=TransitionModelSet(models),
        outcomes=outcomes,
        metadata=meta["metadata"],
    )
