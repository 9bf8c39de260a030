"""Edge-propensity classifier: bagged decision trees over pair features.

Second line of defense after the heuristics. The reference model is a
bagging ensemble of Gini-split decision trees (depth-capped, per-split
feature subsampling of sqrt(q)); the propensity for a pair is the mean
of per-tree votes. Training is fully seeded: a fixed seed yields an
identical model with byte-identical serialization.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .attributes import AttributeRecord, AttributeSchema, UserId
from .edges import MODEL, CandidateSet, Edge
from .features import EdgeFeatureVector, build_features

MODEL_FORMAT = "ringwatch-edge-classifier"


class SingleClassError(ValueError):
    """Training data contains only one label."""


class InsufficientFeedbackError(RuntimeError):
    """Not enough reviewed clusters to sample; bootstrap from synthetic data."""


@dataclass(frozen=True)
class LabeledEdgeSample:
    fv: EdgeFeatureVector
    label: int
    provenance: str  # manual-validation | negative-sample | synthetic

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")


@dataclass
class TrainParams:
    trees: int = 50
    max_depth: int = 8
    min_samples_split: int = 2
    seed: int = 0


@dataclass
class _Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    vote: np.ndarray  # leaf class, 0 or 1

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int32)
        while True:
            feat = self.feature[node]
            live = np.nonzero(feat >= 0)[0]
            if live.size == 0:
                return self.vote[node]
            cur = node[live]
            go_left = X[live, feat[live]] <= self.threshold[cur]
            node[live] = np.where(go_left, self.left[cur], self.right[cur])


class _TreeBuilder:
    def __init__(self, X: np.ndarray, y: np.ndarray, params: TrainParams, rng: np.random.Generator):
        self.X = X
        self.y = y
        self.params = params
        self.rng = rng
        self.k = max(1, math.ceil(math.sqrt(X.shape[1])))
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.vote: list[int] = []

    def build(self, idx: np.ndarray) -> _Tree:
        self._grow(idx, depth=0)
        return _Tree(
            feature=np.asarray(self.feature, dtype=np.int32),
            threshold=np.asarray(self.threshold, dtype=np.float64),
            left=np.asarray(self.left, dtype=np.int32),
            right=np.asarray(self.right, dtype=np.int32),
            vote=np.asarray(self.vote, dtype=np.int8),
        )

    def _emit(self, feature: int, threshold: float, vote: int) -> int:
        node = len(self.feature)
        self.feature.append(feature)
        self.threshold.append(threshold)
        self.left.append(-1)
        self.right.append(-1)
        self.vote.append(vote)
        return node

    def _leaf(self, y: np.ndarray) -> int:
        pos = int(y.sum())
        return self._emit(-1, 0.0, 1 if pos * 2 > len(y) else 0)

    def _grow(self, idx: np.ndarray, depth: int) -> int:
        y = self.y[idx]
        pos = int(y.sum())
        if (
            depth >= self.params.max_depth
            or len(idx) < self.params.min_samples_split
            or pos == 0
            or pos == len(idx)
        ):
            return self._leaf(y)
        split = self._best_split(idx, y)
        if split is None:
            return self._leaf(y)
        feat, thr = split
        node = self._emit(feat, thr, 1 if pos * 2 > len(idx) else 0)
        go_left = self.X[idx, feat] <= thr
        self.left[node] = self._grow(idx[go_left], depth + 1)
        self.right[node] = self._grow(idx[~go_left], depth + 1)
        return node

    def _best_split(self, idx: np.ndarray, y: np.ndarray) -> tuple[int, float] | None:
        q = self.X.shape[1]
        feats = self.rng.choice(q, size=min(self.k, q), replace=False)
        n = len(idx)
        total_pos = int(y.sum())
        best: tuple[float, int, float] | None = None
        for f in feats:
            x = self.X[idx, f]
            order = np.argsort(x, kind="stable")
            xs = x[order]
            cuts = np.nonzero(xs[1:] != xs[:-1])[0]
            if cuts.size == 0:
                continue
            pos_cum = np.cumsum(y[order])
            nl = cuts + 1.0
            nr = n - nl
            pl = pos_cum[cuts]
            pr = total_pos - pl
            gini_l = 1.0 - (pl / nl) ** 2 - ((nl - pl) / nl) ** 2
            gini_r = 1.0 - (pr / nr) ** 2 - ((nr - pr) / nr) ** 2
            weighted = (nl * gini_l + nr * gini_r) / n
            j = int(np.argmin(weighted))
            score = float(weighted[j])
            if best is None or score < best[0] - 1e-12:
                thr = float((xs[cuts[j]] + xs[cuts[j] + 1]) / 2.0)
                best = (score, int(f), thr)
        if best is None:
            return None
        return best[1], best[2]


@dataclass
class EdgeClassifier:
    """Immutable once trained; scoring is read-only and thread-safe."""

    trees: list[_Tree]
    schema_version: str
    n_features: int
    params: TrainParams
    metadata: dict = field(default_factory=dict)

    @property
    def version(self) -> str:
        return hashlib.blake2b(self.to_json().encode(), digest_size=6).hexdigest()

    def predict(self, fv: EdgeFeatureVector) -> float:
        return float(self.predict_batch([fv])[0])

    def predict_batch(self, fvs: list[EdgeFeatureVector]) -> np.ndarray:
        for fv in fvs:
            if fv.schema_version != self.schema_version:
                raise ValueError(
                    f"feature schema {fv.schema_version} does not match model {self.schema_version}"
                )
            if len(fv.features) != self.n_features:
                raise ValueError(
                    f"feature dimension {len(fv.features)} != model dimension {self.n_features}"
                )
        X = np.asarray([fv.features for fv in fvs], dtype=np.float64)
        return self.predict_matrix(X)

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        votes = np.zeros(len(X), dtype=np.float64)
        for tree in self.trees:
            votes += tree.predict(X)
        return votes / len(self.trees)

    def to_json(self) -> str:
        return json.dumps(
            {
                "format": MODEL_FORMAT,
                "format_version": 1,
                "schema_version": self.schema_version,
                "n_features": self.n_features,
                "params": {
                    "trees": self.params.trees,
                    "max_depth": self.params.max_depth,
                    "min_samples_split": self.params.min_samples_split,
                    "seed": self.params.seed,
                },
                "metadata": self.metadata,
                "trees": [
                    {
                        "feature": t.feature.tolist(),
                        "threshold": t.threshold.tolist(),
                        "left": t.left.tolist(),
                        "right": t.right.tolist(),
                        "vote": t.vote.tolist(),
                    }
                    for t in self.trees
                ],
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, text: str) -> "EdgeClassifier":
        obj = json.loads(text)
        if obj.get("format") != MODEL_FORMAT:
            raise ValueError(f"not a {MODEL_FORMAT} artifact")
        trees = [
            _Tree(
                feature=np.asarray(t["feature"], dtype=np.int32),
                threshold=np.asarray(t["threshold"], dtype=np.float64),
                left=np.asarray(t["left"], dtype=np.int32),
                right=np.asarray(t["right"], dtype=np.int32),
                vote=np.asarray(t["vote"], dtype=np.int8),
            )
            for t in obj["trees"]
        ]
        p = obj["params"]
        return cls(
            trees=trees,
            schema_version=obj["schema_version"],
            n_features=obj["n_features"],
            params=TrainParams(
                trees=p["trees"],
                max_depth=p["max_depth"],
                min_samples_split=p["min_samples_split"],
                seed=p["seed"],
            ),
            metadata=obj["metadata"],
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "EdgeClassifier":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def train(
    samples: list[LabeledEdgeSample],
    params: TrainParams | None = None,
    trained_at: int | None = None,
    threshold: float | None = None,
) -> EdgeClassifier:
    """Fit the bagged ensemble; reproducible for a fixed seed.

    ``trained_at`` is caller-supplied (epoch ms) so that fixed-seed runs
    stay byte-identical; the CLI stamps wall-clock time. ``threshold``
    records the intended operating point in the artifact's metadata.
    """
    params = params or TrainParams()
    if not samples:
        raise SingleClassError("no samples")
    X = np.asarray([s.fv.features for s in samples], dtype=np.float64)
    y = np.asarray([s.label for s in samples], dtype=np.int8)
    if not np.isfinite(X).all():
        raise ValueError("non-finite feature values in training data")
    pos = int(y.sum())
    if pos == 0 or pos == len(y):
        raise SingleClassError(f"single class: {pos} positives out of {len(y)} samples")
    versions = {s.fv.schema_version for s in samples}
    if len(versions) != 1:
        raise ValueError(f"mixed feature schema versions: {sorted(versions)}")

    n = len(y)
    seeds = np.random.SeedSequence(params.seed).spawn(params.trees)
    trees: list[_Tree] = []
    oob_votes = np.zeros(n, dtype=np.float64)
    oob_count = np.zeros(n, dtype=np.int32)
    for seq in seeds:
        rng = np.random.default_rng(seq)
        boot = rng.integers(0, n, size=n)
        tree = _TreeBuilder(X, y, params, rng).build(boot)
        trees.append(tree)
        oob = np.ones(n, dtype=bool)
        oob[boot] = False
        if oob.any():
            oob_votes[oob] += tree.predict(X[oob])
            oob_count[oob] += 1
    covered = oob_count > 0
    if covered.any():
        pred = (oob_votes[covered] / oob_count[covered]) > 0.5
        oob_accuracy = float(np.mean(pred == (y[covered] == 1)))
    else:
        oob_accuracy = float("nan")

    return EdgeClassifier(
        trees=trees,
        schema_version=samples[0].fv.schema_version,
        n_features=X.shape[1],
        params=params,
        metadata={
            "trained_at": trained_at,
            "positive_samples": pos,
            "negative_samples": n - pos,
            "oob_accuracy": oob_accuracy,
            "threshold": threshold,
        },
    )


def predict(model: EdgeClassifier, fv: EdgeFeatureVector) -> float:
    return model.predict(fv)


def emit_model_edges(
    record: AttributeRecord,
    candidates: CandidateSet,
    records: dict[UserId, AttributeRecord],
    schema: AttributeSchema,
    model: EdgeClassifier,
    threshold: float,
    skip: set[UserId] | frozenset[UserId] = frozenset(),
) -> list[Edge]:
    """Model edges for candidates whose propensity strictly exceeds the
    threshold. Pairs already covered by a heuristic edge are skipped:
    edges are unweighted downstream, so the duplicate adds nothing.
    """
    if not (0.0 < threshold < 1.0):
        raise ValueError(f"edge threshold {threshold} outside (0, 1)")
    targets = [c for c in sorted(candidates.candidates) if c not in skip and c in records]
    if not targets:
        return []
    fvs = [build_features(record, records[c], schema) for c in targets]
    propensities = model.predict_batch(fvs)
    out = []
    for cand, p in zip(targets, propensities):
        if p > threshold:
            out.append(
                Edge.between(record.user_id, cand, MODEL, float(p), record.registered_at, "model")
            )
    return out


def sample_training_data(
    feedback,
    records: dict[UserId, AttributeRecord],
    schema: AttributeSchema,
    negative_ratio: float = 3.0,
    seed: int = 0,
) -> list[LabeledEdgeSample]:
    """Labeled pairs from reviewer ground truth.

    Positives: every pair inside a confirmed cluster. Negatives: pairs of
    validated-unique users drawn from distinct unique sets, sampled
    without replacement at ``negative_ratio`` negatives per positive.
    """
    confirmed: list[set[UserId]] = list(feedback.confirmed_clusters())
    unique_sets: list[set[UserId]] = list(feedback.unique_sets())
    if not confirmed or not unique_sets:
        raise InsufficientFeedbackError(
            "need at least one confirmed and one rejected cluster; "
            "bootstrap the model from synthetic labeled edges instead"
        )

    samples: list[LabeledEdgeSample] = []
    positive_pairs: set[tuple[UserId, UserId]] = set()
    for members in confirmed:
        ordered = sorted(m for m in members if m in records)
        for i, a in enumerate(ordered):
            for b in ordered[i + 1 :]:
                if (a, b) in positive_pairs:
                    continue
                positive_pairs.add((a, b))
                samples.append(
                    LabeledEdgeSample(
                        fv=build_features(records[a], records[b], schema),
                        label=1,
                        provenance="manual-validation",
                    )
                )

    wanted = int(round(len(positive_pairs) * negative_ratio))
    rng = np.random.default_rng(seed)
    pools = [sorted(u for u in s if u in records) for s in unique_sets]
    pools = [p for p in pools if p]
    seen: set[tuple[UserId, UserId]] = set()
    attempts = 0
    while len(seen) < wanted and attempts < wanted * 20 and len(pools) >= 2:
        attempts += 1
        i, j = rng.choice(len(pools), size=2, replace=False)
        a = pools[i][rng.integers(len(pools[i]))]
        b = pools[j][rng.integers(len(pools[j]))]
        pair = (a, b) if a < b else (b, a)
        if pair in seen or pair in positive_pairs:
            continue
        seen.add(pair)
        samples.append(
            LabeledEdgeSample(
                fv=build_features(records[pair[0]], records[pair[1]], schema),
                label=0,
                provenance="negative-sample",
            )
        )
    return samples
