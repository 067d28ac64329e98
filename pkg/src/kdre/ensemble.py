"""Importance-weighted ensembling of candidate predictors.

Coefficients solve the weighted least-squares problem

    c = pinv_rcond(W^(1/2) F) W^(1/2) y

where F stacks candidate predictions on a validation set, y the labels,
and W the diagonal of importance weights correcting the validation
distribution toward the test one.  The pseudo-inverse cut rcond is swept
over a grid and the resulting accuracies averaged, which sidesteps
picking a single truncation level.  Multiclass problems are reduced to
the same solve by expanding every sample into one row per class with a
one-hot target.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .validation import InvalidInputError

DEFAULT_RCOND_GRID = (1e-4, 1e-3, 1e-2, 1e-1)


@dataclass
class EnsembleProblem:
    """Validation-set predictions, labels, and importance weights.

    predictions is (n, k) for binary problems (scores for the +1 class)
    or (n, k, c) for c-class problems.  labels holds +-1 in the binary
    case and class indices 0..c-1 otherwise.
    """

    predictions: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    candidate_names: list = field(default_factory=list)
    class_names: list = field(default_factory=list)

    def __post_init__(self):
        self.predictions = np.asarray(self.predictions, dtype=float)
        self.labels = np.asarray(self.labels)
        self.weights = np.asarray(self.weights, dtype=float)
        n = len(self.labels)
        if self.predictions.ndim not in (2, 3) or self.predictions.shape[0] != n:
            raise InvalidInputError("predictions must be (n, k) or (n, k, classes)")
        if self.weights.shape != (n,):
            raise InvalidInputError("weights must be one value per sample")
        if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
            raise InvalidInputError("importance weights must be finite and nonnegative")
        if self.is_multiclass:
            c = self.predictions.shape[2]
            lab = self.labels.astype(int)
            if np.any(lab < 0) or np.any(lab >= c):
                raise InvalidInputError("class labels must index the prediction classes")
            self.labels = lab
        else:
            lab = self.labels.astype(float)
            if not set(np.unique(lab)) <= {-1.0, 1.0}:
                raise InvalidInputError("binary labels must be -1 or +1")
            self.labels = lab

    @property
    def is_multiclass(self) -> bool:
        return self.predictions.ndim == 3

    @property
    def n_candidates(self) -> int:
        return self.predictions.shape[1]

    def design(self):
        """Row-expanded (A, b, w): identity for binary, one-hot for multiclass."""
        if not self.is_multiclass:
            return self.predictions, self.labels, self.weights
        n, k, c = self.predictions.shape
        a = self.predictions.transpose(0, 2, 1).reshape(n * c, k)
        b = np.zeros(n * c)
        b[np.arange(n) * c + self.labels] = 1.0
        w = np.repeat(self.weights, c)
        return a, b, w


def solve_ensemble(problem: EnsembleProblem, rcond: float, truncate_unweighted: bool = False):
    """Coefficients at one rcond.

    With truncate_unweighted, the rcond cut is applied to the singular
    spectrum of the unweighted design first; the weighted least-squares
    solve then runs inside the retained right-singular subspace.
    """
    if not 0.0 < rcond < 1.0:
        raise InvalidInputError(f"rcond must lie in (0, 1), got {rcond}")
    a, b, w = problem.design()
    sw = np.sqrt(w)
    aw = sw[:, None] * a
    bw = sw * b
    if truncate_unweighted:
        _, svals, vt = np.linalg.svd(a, full_matrices=False)
        keep = svals > rcond * (svals[0] if len(svals) else 0.0)
        basis = vt[keep].T
        if basis.shape[1] == 0:
            return np.zeros(problem.n_candidates)
        reduced = np.linalg.pinv(aw @ basis) @ bw
        return basis @ reduced
    return np.linalg.pinv(aw, rcond=rcond) @ bw


def combine_predictions(predictions, coeffs):
    """Ensemble outputs: score vector (binary) or class-score matrix."""
    pred = np.asarray(predictions, dtype=float)
    coeffs = np.asarray(coeffs, dtype=float)
    if pred.ndim == 2:
        return pred @ coeffs
    return np.einsum("nkc,k->nc", pred, coeffs)


def evaluate_ensemble(predictions, labels, coeffs) -> float:
    """0-1 accuracy of the combined predictor; binary ties go to +1."""
    combined = combine_predictions(predictions, coeffs)
    labels = np.asarray(labels)
    if combined.ndim == 1:
        guess = np.where(combined >= 0.0, 1.0, -1.0)
        return float(np.mean(guess == labels.astype(float)))
    guess = np.argmax(combined, axis=1)
    return float(np.mean(guess == labels.astype(int)))


def accuracy_over_rconds(
    problem: EnsembleProblem,
    test_predictions,
    test_labels,
    rcond_grid=DEFAULT_RCOND_GRID,
    truncate_unweighted: bool = False,
):
    """Fit at each rcond, score on the test block, average the accuracies."""
    rows = []
    for rcond in rcond_grid:
        coeffs = solve_ensemble(problem, rcond, truncate_unweighted)
        acc = evaluate_ensemble(test_predictions, test_labels, coeffs)
        rows.append(
            {"rcond": float(rcond), "accuracy": acc, "coeffs": [float(c) for c in coeffs]}
        )
    mean_acc = float(np.mean([r["accuracy"] for r in rows]))
    return mean_acc, rows


def model_weights(model, x) -> np.ndarray:
    """Importance weights from a fitted ratio model, floored at zero.

    Families whose prediction surface can dip negative (the quadratic
    ones) would otherwise produce invalid weights.
    """
    return np.maximum(np.asarray(model.ratios(x), dtype=float), 0.0)


# --------------------------------------------------------------------------
# CSV ingestion with strict sample-id joins
# --------------------------------------------------------------------------


def _read_keyed_csv(path, expected_fields=None):
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "sample_id":
            raise InvalidInputError(f"{path}: first column must be sample_id")
        if expected_fields is not None and header[1:] != list(expected_fields):
            raise InvalidInputError(
                f"{path}: expected columns {list(expected_fields)}, got {header[1:]}"
            )
        rows = {}
        for i, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise InvalidInputError(f"{path}: row {i} has {len(row)} fields")
            key = row[0]
            if key in rows:
                raise InvalidInputError(f"{path}: duplicate sample_id {key!r} at row {i}")
            rows[key] = (i, row[1:])
    return header[1:], rows


def _parse_float(path, line, value):
    try:
        return float(value)
    except ValueError:
        raise InvalidInputError(f"{path}: row {line} has non-numeric value {value!r}")


def ingest_candidates(label_path, candidate_paths, weight_path=None):
    """Join label, candidate, and optional weight CSVs on sample_id.

    The label file fixes the sample order.  Every candidate file must
    cover exactly the same sample ids; mismatches are reported with the
    offending file and sample id.  Candidate files carry one `score`
    column (binary, labels +-1) or `score_<class>` columns (multiclass).
    Weights from file must be nonnegative.
    """
    _, label_rows = _read_keyed_csv(label_path, expected_fields=["label"])
    order = list(label_rows)
    if not order:
        raise InvalidInputError(f"{label_path}: no samples")
    raw_labels = [label_rows[k][1][0] for k in order]

    candidate_names = []
    blocks = []
    class_names = None
    for path in candidate_paths:
        fields, rows = _read_keyed_csv(path)
        missing = [k for k in order if k not in rows]
        if missing:
            raise InvalidInputError(f"{path}: missing sample_id {missing[0]!r}")
        extra = [k for k in rows if k not in label_rows]
        if extra:
            line = rows[extra[0]][0]
            raise InvalidInputError(
                f"{path}: row {line} has sample_id {extra[0]!r} absent from {label_path}"
            )
        if fields == ["score"]:
            these = None
        elif fields and all(f.startswith("score_") for f in fields):
            these = [f[len("score_") :] for f in fields]
        else:
            raise InvalidInputError(
                f"{path}: columns must be `score` or `score_<class>`, got {fields}"
            )
        if blocks and (these is None) != (class_names is None):
            raise InvalidInputError(f"{path}: mixes binary and multiclass candidates")
        if these is not None:
            if class_names is not None and these != class_names:
                raise InvalidInputError(
                    f"{path}: class columns {these} disagree with {class_names}"
                )
            class_names = these
        block = np.array(
            [[_parse_float(path, rows[k][0], v) for v in rows[k][1]] for k in order]
        )
        blocks.append(block)
        candidate_names.append(str(path))

    if not blocks:
        raise InvalidInputError("no candidate files given")

    if class_names is None:
        predictions = np.stack([b[:, 0] for b in blocks], axis=1)
        labels = np.array([_parse_float(label_path, label_rows[k][0], raw_labels[i])
                           for i, k in enumerate(order)])
    else:
        predictions = np.stack(blocks, axis=1)  # (n, k, classes)
        index = {name: j for j, name in enumerate(class_names)}
        labels = np.empty(len(order), dtype=int)
        for i, k in enumerate(order):
            lab = raw_labels[i]
            if lab not in index:
                line = label_rows[k][0]
                raise InvalidInputError(
                    f"{label_path}: row {line} label {lab!r} is not a candidate class"
                )
            labels[i] = index[lab]

    if weight_path is None:
        weights = np.ones(len(order))
    else:
        _, weight_rows = _read_keyed_csv(weight_path, expected_fields=["weight"])
        missing = [k for k in order if k not in weight_rows]
        if missing:
            raise InvalidInputError(f"{weight_path}: missing sample_id {missing[0]!r}")
        extra = [k for k in weight_rows if k not in label_rows]
        if extra:
            line = weight_rows[extra[0]][0]
            raise InvalidInputError(
                f"{weight_path}: row {line} has sample_id {extra[0]!r} absent from {label_path}"
            )
        weights = np.empty(len(order))
        for i, k in enumerate(order):
            line, vals = weight_rows[k]
            weights[i] = _parse_float(weight_path, line, vals[0])
            if weights[i] < 0:
                raise InvalidInputError(
                    f"{weight_path}: row {line} has negative weight {weights[i]}"
                )

    return EnsembleProblem(
        predictions=predictions,
        labels=labels,
        weights=weights,
        candidate_names=candidate_names,
        class_names=class_names or [],
    )
