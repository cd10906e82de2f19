"""Nested cross-validation harness, baselines, early-detection curves, the
alphabet/word-length sweep, feature attribution and similarity reports."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dataset import LabeledDataset, TimeSeries, truncate_cycles
from .dtw import DtwConfig, dtw_distance, window_for
from .features import build_vocabulary, cosine_similarity_matrix, split_term, tfidf_ltc, to_csr
from .pipeline import (
    TtcConfig,
    TtcModel,
    choose_token_lengths,
    fit,
    fit_front_end,
    is_ttc_acronym,
    make_documents,
    sub_seed,
)
from .svm import train_svm
from .tokenize import tokenize_fixed

log = logging.getLogger(__name__)

C_GRID = (1e-2, 1e-1, 1.0, 1e1, 1e2)
PHI_GRID = (4, 10, 15)
L_GRID = (2, 4, 6)
K_GRID = (5, 10, 20, 40)
DTW_WINDOWS = (0.0, 0.05, 0.10, 0.20, 1.0)
EARLY_GRID = (10, 25, 50, 100, 150, 200, 300)


class FoldError(ValueError):
    pass


def stratified_folds(labels, n_folds: int, seed: int = 0) -> np.ndarray:
    """Fold id per unit; each class is shuffled and dealt round-robin."""
    labels = np.asarray(labels)
    counts = {c: int(np.sum(labels == c)) for c in np.unique(labels)}
    if len(labels) < n_folds:
        raise FoldError(f"{len(labels)} units cannot fill {n_folds} folds")
    short = {int(c): n for c, n in counts.items() if n < n_folds}
    if short:
        raise FoldError(f"class counts {short} are below {n_folds} folds; use fewer folds")
    rng = np.random.default_rng(seed)
    fold = np.empty(len(labels), dtype=np.int64)
    offset = 0
    for c in sorted(counts):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        fold[idx] = (np.arange(len(idx)) + offset) % n_folds
        offset += len(idx)
    return fold


def accuracy(pred, truth) -> float:
    return float(np.mean(np.asarray(pred) == np.asarray(truth)))


# --------------------------------------------------------------------------
# methods


class Method:
    """A model family with a hyperparameter grid.

    ``scores(train, valid)`` returns validation accuracy per candidate;
    subclasses override it when candidates can share work.
    """

    name = "method"

    def candidates(self) -> list[dict]:
        return [{}]

    def fit(self, train: LabeledDataset, params: dict):
        raise NotImplementedError

    def scores(self, train: LabeledDataset, valid: LabeledDataset) -> np.ndarray:
        out = []
        for p in self.candidates():
            pred, _ = self.fit(train, p).predict_dataset(valid)
            out.append(accuracy(pred, valid.labels))
        return np.array(out)

    def select(self, train: LabeledDataset, inner_folds: int, seed: int) -> tuple[dict, np.ndarray]:
        cands = self.candidates()
        if len(cands) == 1:
            return cands[0], np.ones(1)
        folds = stratified_folds(train.labels, inner_folds, seed)
        total = np.zeros(len(cands))
        for f in range(inner_folds):
            tr = train.subset(np.flatnonzero(folds != f))
            va = train.subset(np.flatnonzero(folds == f))
            total += self.scores(tr, va)
        mean = total / inner_folds
        return cands[int(np.argmax(mean))], mean


def select_candidate(train, method: Method, inner_folds: int, seed: int):
    return method.select(train, inner_folds, seed)


@dataclass
class ConstantPredictor:
    label: int

    def predict_dataset(self, dataset):
        n = len(dataset)
        return np.full(n, self.label, dtype=np.int64), np.full(n, 1.0 if self.label else -1.0)


class MajorityMethod(Method):
    """Always predicts the majority training label; ties go to 0."""

    name = "MF"

    def fit(self, train, params):
        return baseline_mf(train.labels)


def baseline_mf(train_labels) -> ConstantPredictor:
    y = np.asarray(train_labels)
    if len(y) == 0:
        raise ValueError("no labels")
    return ConstantPredictor(int(np.sum(y == 1) > np.sum(y == 0)))


@dataclass
class InstancePredictor:
    svm: object
    mean: np.ndarray
    std: np.ndarray
    k: int
    window: str  # "last" or "all"

    def margin(self, series: TimeSeries) -> float:
        rows = series.values if self.window == "all" else series.values[-self.k :]
        z = (rows - self.mean) / self.std
        return float(np.mean(z @ self.svm.weights + self.svm.bias))

    def predict_dataset(self, dataset):
        m = np.array([self.margin(s) for s in dataset.series])
        return (m > 0).astype(np.int64), m


class SvmInstanceMethod(Method):
    """SVM-F / SVM-IF: linear SVM on individual rows labeled with the unit outcome.

    SVM-F uses the last ``k`` rows of every unit; SVM-IF also adds the first
    ``k`` rows of every unit labeled healthy. A unit is scored by the mean
    row margin over its last ``k`` rows (F) or all rows (IF).
    """

    def __init__(
        self, variant: str = "F", k_grid=K_GRID, C_grid=C_GRID, seed: int = 0, all_rows: bool = False,
        step_budget: int = 40_000,
    ):
        if variant not in ("F", "IF"):
            raise ValueError("variant must be 'F' or 'IF'")
        self.variant = variant
        self.k_grid = tuple(k_grid)
        self.C_grid = tuple(C_grid)
        self.seed = seed
        self.all_rows = all_rows
        self.step_budget = step_budget
        self.name = f"SVM-{variant}"

    def candidates(self):
        return [{"k": k, "C": C} for k in self.k_grid for C in self.C_grid]

    def _instances(self, train, k):
        pooled = np.vstack([s.values for s in train.series])
        mean = pooled.mean(axis=0)
        std = pooled.std(axis=0)
        std[std == 0] = 1.0
        X, y = [], []
        for s, lab in zip(train.series, train.labels):
            last = s.values if self.all_rows else s.values[-k:]
            X.append(last)
            y.append(np.full(len(last), lab))
            if self.variant == "IF":
                first = s.values[:k]
                X.append(first)
                y.append(np.zeros(len(first), dtype=int))
        return (np.vstack(X) - mean) / std, np.concatenate(y), mean, std

    def _predictor(self, X, y, mean, std, k, C):
        if len(np.unique(y)) < 2:
            return ConstantPredictor(int(y[0]))
        # row-level training sets are large; a fixed number of SGD steps keeps cost flat in k
        epochs = max(20, math.ceil(self.step_budget / len(y)))
        svm = train_svm(X, y, C, epochs=epochs, seed=sub_seed(self.seed, "svm-shuffle"))
        return InstancePredictor(svm, mean, std, k, "all" if self.variant == "IF" else "last")

    def fit(self, train, params):
        X, y, mean, std = self._instances(train, params["k"])
        return self._predictor(X, y, mean, std, params["k"], params["C"])

    def scores(self, train, valid):
        out = []
        for k in self.k_grid:
            X, y, mean, std = self._instances(train, k)
            for C in self.C_grid:
                pred, _ = self._predictor(X, y, mean, std, k, C).predict_dataset(valid)
                out.append(accuracy(pred, valid.labels))
        return np.array(out)


def baseline_svm_f(train, k: int, C: float = 1.0, seed: int = 0):
    return SvmInstanceMethod("F", seed=seed).fit(train, {"k": k, "C": C})


def baseline_svm_if(train, k: int, C: float = 1.0, seed: int = 0):
    return SvmInstanceMethod("IF", seed=seed).fit(train, {"k": k, "C": C})


def _znorm_unit(values: np.ndarray) -> np.ndarray:
    sd = values.std(axis=0)
    sd[sd == 0] = 1.0
    return np.ascontiguousarray((values - values.mean(axis=0)) / sd)


class _DtwCache:
    def __init__(self):
        self._norm: dict = {}
        self._dist: dict = {}

    def key(self, s: TimeSeries):
        k = (s.unit_id, hash(s.values.tobytes()))
        if k not in self._norm:
            self._norm[k] = _znorm_unit(s.values)
        return k

    def distance(self, a: TimeSeries, b: TimeSeries, frac: float) -> float:
        ka, kb = self.key(a), self.key(b)
        key = (frac, ka, kb) if ka <= kb else (frac, kb, ka)
        d = self._dist.get(key)
        if d is None:
            na, nb_ = self._norm[ka], self._norm[kb]
            d = dtw_distance(na, nb_, DtwConfig(window_for(frac, len(na), len(nb_))))
            self._dist[key] = d
        return d


@dataclass
class NnPredictor:
    train: LabeledDataset
    frac: float
    cache: _DtwCache

    def predict_dataset(self, dataset):
        labels, margins = [], []
        for s in dataset.series:
            d = np.array([self.cache.distance(s, t, self.frac) for t in self.train.series])
            j = int(np.argmin(d))
            labels.append(int(self.train.labels[j]))
            margins.append(-float(d[j]) if labels[-1] == 0 else float(d[j]))
        return np.array(labels, dtype=np.int64), np.array(margins)


class NnDtwMethod(Method):
    """1-NN under DTW on per-unit z-normalized series; band chosen by leave-one-out."""

    name = "NNDTW"

    def __init__(self, window_grid=DTW_WINDOWS):
        self.window_grid = tuple(window_grid)
        self.cache = _DtwCache()

    def candidates(self):
        return [{"window": w} for w in self.window_grid]

    def fit(self, train, params):
        if len(train) == 0:
            raise ValueError("empty training set")
        return NnPredictor(train, params["window"], self.cache)

    def select(self, train, inner_folds, seed):
        n = len(train)
        scores = []
        for frac in self.window_grid:
            if n < 2:
                scores.append(0.0)
                continue
            D = np.full((n, n), np.inf)
            for i in range(n):
                for j in range(i + 1, n):
                    D[i, j] = D[j, i] = self.cache.distance(train.series[i], train.series[j], frac)
            nn = np.argmin(D, axis=1)
            scores.append(accuracy(train.labels[nn], train.labels))
        scores = np.array(scores)
        return self.candidates()[int(np.argmax(scores))], scores


def nn_dtw_classify(train: LabeledDataset, test_series: Sequence[TimeSeries], window_grid=DTW_WINDOWS) -> np.ndarray:
    method = NnDtwMethod(window_grid)
    params, _ = method.select(train, 0, 0)
    test = LabeledDataset(tuple(test_series), np.zeros(len(test_series), dtype=int))
    return method.fit(train, params).predict_dataset(test)[0]


@dataclass
class TtcPredictor:
    model: TtcModel

    def predict_dataset(self, dataset):
        return self.model.predict_dataset(dataset)


class TtcMethod(Method):
    """One or more TTC variants with their hyperparameter grids.

    With several variants this is the TTC-overall selector: the inner CV
    ranks every (variant, |Phi|, L, C) candidate on the training units.
    """

    def __init__(
        self,
        variants: Sequence[TtcConfig | str] = ("TTC-SME",),
        phi_grid=PHI_GRID,
        L_grid=L_GRID,
        C_grid=C_GRID,
        seed: int = 0,
        name: str | None = None,
        **config_kw,
    ):
        configs = []
        for v in variants:
            cfg = TtcConfig.from_acronym(v, seed=seed, **config_kw) if isinstance(v, str) else v
            configs.append(cfg)
        self.configs = sorted(configs, key=lambda c: c.acronym)
        self.phi_grid = tuple(phi_grid)
        self.L_grid = tuple(L_grid)
        self.C_grid = tuple(C_grid)
        self.seed = seed
        if name:
            self.name = name
        elif len(self.configs) == 1:
            self.name = self.configs[0].acronym
        else:
            self.name = "TTC-overall"

    def _front_grid(self, cfg: TtcConfig):
        return self.phi_grid if cfg.discretization == "M" else (None,)

    def _length_grid(self, cfg: TtcConfig):
        return self.L_grid if cfg.tokenization == "E" else (None,)

    def candidates(self):
        out = []
        for i, cfg in enumerate(self.configs):
            for phi in self._front_grid(cfg):
                for L in self._length_grid(cfg):
                    for C in self.C_grid:
                        out.append({"variant": cfg.acronym, "config": i, "phi": phi, "L": L, "C": C})
        return out

    def config_for(self, params: dict) -> TtcConfig:
        cfg = self.configs[params["config"]]
        kw = {"C": params["C"]}
        if params["phi"] is not None:
            kw["alphabet_size"] = params["phi"]
        if params["L"] is not None:
            kw["token_length"] = params["L"]
        return cfg.replace(**kw)

    def fit(self, train, params):
        return TtcPredictor(fit(train, self.config_for(params)))

    def scores(self, train, valid):
        out = []
        for cfg in self.configs:
            for phi in self._front_grid(cfg):
                c = cfg if phi is None else cfg.replace(alphabet_size=phi)
                n_after = len(self._length_grid(cfg)) * len(self.C_grid)
                try:
                    front, sym_train = fit_front_end(train, c)
                    sym_valid = [front.symbolize(s) for s in valid.series]
                except Exception as exc:  # a failed stage scores zero for its candidates
                    log.info("%s phi=%s failed on an inner fold: %s", c.acronym, phi, exc)
                    out.extend([0.0] * n_after)
                    continue
                for L in self._length_grid(cfg):
                    cl = c if L is None else c.replace(token_length=L)
                    lengths, _ = choose_token_lengths(sym_train, cl)
                    docs_tr = make_documents(sym_train, lengths)
                    docs_va = make_documents(sym_valid, lengths)
                    vocab = build_vocabulary(docs_tr, cl.min_df)
                    Xtr = to_csr([tfidf_ltc(d, vocab) for d in docs_tr], len(vocab))
                    Xva = to_csr([tfidf_ltc(d, vocab) for d in docs_va], len(vocab))
                    for C in self.C_grid:
                        svm = train_svm(
                            Xtr, train.labels, C, epochs=cl.svm_epochs,
                            seed=sub_seed(cl.seed, "svm-shuffle"), solver=cl.svm_solver,
                        )
                        out.append(accuracy(svm.predict(Xva), valid.labels))
        return np.array(out)


def make_method(name: str, seed: int = 0, **grids) -> Method:
    """Method from a table name: MF, SVM-F, SVM-IF, NNDTW, TTC-xyz or TTC-overall."""
    upper = name.upper()
    ttc_keys = ("phi_grid", "L_grid", "C_grid")
    if upper == "MF":
        return MajorityMethod()
    if upper in ("SVM-F", "SVM-IF"):
        return SvmInstanceMethod(
            upper[4:], k_grid=grids.get("k_grid", K_GRID), C_grid=grids.get("C_grid", C_GRID), seed=seed
        )
    if upper == "NNDTW":
        return NnDtwMethod(grids.get("window_grid", DTW_WINDOWS))
    if upper == "TTC-OVERALL":
        variants = grids.get("variants", ALL_TTC)
        return TtcMethod(variants, seed=seed, **{k: grids[k] for k in ttc_keys if k in grids})
    if is_ttc_acronym(upper):
        return TtcMethod([upper], seed=seed, **{k: grids[k] for k in ttc_keys if k in grids})
    raise ValueError(f"unknown method {name!r}; valid: {', '.join(VALID_METHODS)}")


ALL_TTC = tuple(f"TTC-{e}{d}{t}" for e in "SAUM" for d in "MR" for t in "EM")
VALID_METHODS = ("MF", "SVM-F", "SVM-IF", "NNDTW", "TTC-overall") + ALL_TTC


# --------------------------------------------------------------------------
# nested CV


@dataclass
class CvReport:
    method: str
    fold_accuracies: list
    mean_accuracy: float
    selected: list
    seed: int
    fingerprint: str
    precision: float = float("nan")
    recall: float = float("nan")
    predictions: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, default=float)

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "fold", "accuracy", "selected"])
            for i, (a, s) in enumerate(zip(self.fold_accuracies, self.selected)):
                w.writerow([self.method, i, repr(a), json.dumps(s, default=str)])


def _outer_fold(args):
    dataset, method, train_idx, test_idx, inner_folds, seed, fold = args
    train = dataset.subset(train_idx)
    test = dataset.subset(test_idx)
    params, _ = method.select(train, inner_folds, sub_seed(seed, f"inner-folds/{fold}"))
    pred, margins = method.fit(train, params).predict_dataset(test)
    return fold, params, pred, margins


def nested_cv(
    dataset: LabeledDataset,
    method: Method,
    outer_folds: int = 10,
    inner_folds: int = 10,
    seed: int = 0,
    workers: int = 1,
) -> CvReport:
    """Outer folds estimate accuracy; inner folds on each training part pick hyperparameters."""
    folds = stratified_folds(dataset.labels, outer_folds, sub_seed(seed, "folds"))
    jobs = [
        (dataset, method, np.flatnonzero(folds != f), np.flatnonzero(folds == f), inner_folds, seed, f)
        for f in range(outer_folds)
    ]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_outer_fold, jobs))
    else:
        results = [_outer_fold(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    accs, selected = [], []
    pred_all = np.empty(len(dataset), dtype=np.int64)
    preds = {}
    for (fold, params, pred, margins), job in zip(results, jobs):
        test_idx = job[3]
        accs.append(accuracy(pred, dataset.labels[test_idx]))
        selected.append({k: v for k, v in params.items() if k != "config"})
        pred_all[test_idx] = pred
        for i, p, m in zip(test_idx, pred, margins):
            preds[dataset.series[i].unit_id] = (int(p), float(m), fold)
    y = dataset.labels
    tp = int(np.sum((pred_all == 1) & (y == 1)))
    precision = tp / max(1, int(np.sum(pred_all == 1)))
    recall = tp / max(1, int(np.sum(y == 1)))
    return CvReport(
        method.name, accs, float(np.mean(accs)), selected, seed, dataset.fingerprint(), precision, recall, preds
    )


# --------------------------------------------------------------------------
# early detection


@dataclass
class EarlyDetectionCurve:
    method: str
    cycles_observed: list
    accuracy: list
    train_cycles: int = 150


def early_detection_curve(
    dataset: LabeledDataset,
    method: Method,
    train_cycles: int = 150,
    eval_cycle_grid: Iterable[int] = EARLY_GRID,
    folds: int = 10,
    inner_folds: int = 10,
    seed: int = 0,
) -> EarlyDetectionCurve:
    """Train on the first ``train_cycles`` rows; test on units cut to each grid length."""
    longest = max(s.length for s in dataset.series)
    grid = sorted({min(int(c), longest) for c in eval_cycle_grid})
    fold_ids = stratified_folds(dataset.labels, folds, sub_seed(seed, "folds"))
    acc = np.zeros(len(grid))
    for f in range(folds):
        train = truncate_cycles(dataset.subset(np.flatnonzero(fold_ids != f)), train_cycles)
        test = dataset.subset(np.flatnonzero(fold_ids == f))
        params, _ = method.select(train, inner_folds, sub_seed(seed, f"inner-folds/{f}"))
        model = method.fit(train, params)
        for g, c in enumerate(grid):
            pred, _ = model.predict_dataset(truncate_cycles(test, c))
            acc[g] += accuracy(pred, test.labels)
    return EarlyDetectionCurve(method.name, grid, (acc / folds).tolist(), train_cycles)


# --------------------------------------------------------------------------
# alphabet / word-length sweep


@dataclass
class SweepResult:
    phi_grid: list
    L_grid: list
    accuracy: np.ndarray  # NaN marks a failed cell

    def cell(self, phi: int, L: int) -> float:
        return float(self.accuracy[self.phi_grid.index(phi), self.L_grid.index(L)])

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alphabet_size", "token_length", "accuracy"])
            for i, phi in enumerate(self.phi_grid):
                for j, L in enumerate(self.L_grid):
                    a = self.accuracy[i, j]
                    w.writerow([phi, L, "" if np.isnan(a) else repr(float(a))])


def sweep_alphabet_wordlength(
    dataset: LabeledDataset,
    base_config: TtcConfig | str = "TTC-SME",
    phi_grid: Sequence[int] = PHI_GRID,
    L_grid: Sequence[int] = L_GRID,
    folds: int = 5,
    inner_folds: int = 5,
    seed: int = 0,
    C_grid=C_GRID,
) -> SweepResult:
    """Nested-CV accuracy for every (|Phi|, L) cell; C is tuned inside each cell."""
    cfg = TtcConfig.from_acronym(base_config, seed=seed) if isinstance(base_config, str) else base_config
    if cfg.discretization != "M" or cfg.tokenization != "E":
        raise ValueError("the sweep applies to MEP + equal-length configurations only")
    acc = np.full((len(phi_grid), len(L_grid)), np.nan)
    for i, phi in enumerate(phi_grid):
        for j, L in enumerate(L_grid):
            method = TtcMethod([cfg], phi_grid=(phi,), L_grid=(L,), C_grid=C_grid, seed=seed)
            try:
                acc[i, j] = nested_cv(dataset, method, folds, inner_folds, seed).mean_accuracy
            except Exception as exc:
                log.warning("sweep cell (%s, %s) failed: %s", phi, L, exc)
    return SweepResult(list(phi_grid), list(L_grid), acc)


# --------------------------------------------------------------------------
# interpretability and similarity


@dataclass
class FeatureAttribution:
    term: str
    channel: str
    weight: float
    occurrences: list  # (unit_id, t_start, t_end)


def explain(model: TtcModel, dataset: LabeledDataset, top_k: int = 10) -> list[FeatureAttribution]:
    """Most positive and most negative SVM terms, located in every unit's series.

    Token ``j`` of a channel with token length ``L`` covers rows ``[j L, (j+1) L)``.
    """
    w = model.svm.weights
    order = np.argsort(w, kind="stable")
    neg = [j for j in order[:top_k] if w[j] < 0]
    pos = [j for j in order[::-1][:top_k] if w[j] > 0]
    chosen = pos + neg
    tokens_by_unit = {}
    for s in dataset.series:
        tokens_by_unit[s.unit_id] = {
            seq.channel_id: tokenize_fixed(seq, model.token_lengths[seq.channel_id])
            for seq in model.front.symbolize(s)
        }
    out = []
    for j in chosen:
        term = model.vocabulary.terms[j]
        channel, token = split_term(term)
        L = model.token_lengths[channel]
        occ = []
        for uid, streams in tokens_by_unit.items():
            for pos_, tok in enumerate(streams[channel].tokens):
                if tok == token:
                    occ.append((uid, pos_ * L, (pos_ + 1) * L))
        out.append(FeatureAttribution(term, channel, float(w[j]), occ))
    return out


def occurrence_density(attributions: Sequence[FeatureAttribution], length: int, sign: int = -1) -> np.ndarray:
    """Per-time-step count of intervals from terms with the given weight sign."""
    dens = np.zeros(length)
    for a in attributions:
        if np.sign(a.weight) != sign:
            continue
        for _, t0, t1 in a.occurrences:
            dens[t0 : min(t1, length)] += 1
    return dens


@dataclass
class SimilarityReport:
    unit_ids: list
    labels: np.ndarray
    similarity: np.ndarray
    mask: np.ndarray
    threshold: float

    def densities(self) -> tuple[float, float]:
        """Mask density over same-label pairs and over cross-label pairs (off-diagonal)."""
        same = self.labels[:, None] == self.labels[None, :]
        off = ~np.eye(len(self.labels), dtype=bool)
        within = self.mask[same & off].mean() if np.any(same & off) else float("nan")
        cross = self.mask[~same].mean() if np.any(~same) else float("nan")
        return float(within), float(cross)

    def write_csv(self, path: str | Path) -> None:
        from .features import write_matrix_csv

        write_matrix_csv(self.similarity, self.unit_ids, path)


def similarity_report(model: TtcModel, dataset: LabeledDataset, percentile: float = 75.0) -> SimilarityReport:
    """Cosine similarity of the units' TF-IDF vectors, binarized at an off-diagonal percentile.

    Units are ordered by lifespan when available, else by label.
    """
    vectors = [model.vector(s) for s in dataset.series]
    S = cosine_similarity_matrix(vectors)
    spans = dataset.lifespans
    key = spans if spans is not None else dataset.labels
    order = np.argsort(key, kind="stable")
    S = S[np.ix_(order, order)]
    off = ~np.eye(len(S), dtype=bool)
    thr = float(np.percentile(S[off], percentile)) if np.any(off) else math.inf
    mask = (S > thr) & off
    return SimilarityReport([dataset.series[i].unit_id for i in order], dataset.labels[order], S, mask, thr)
