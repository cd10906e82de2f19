"""Textual time-series encoding (TTC): encode -> discretize -> tokenize ->
TF-IDF -> linear SVM, fitted on training units only.

Variants are named by three letters: encoding (S znorm-self, A znorm-all,
U univariate DPGMM, M multivariate DPGMM), discretization (M MEP, R RMEP)
and tokenization (E equal length, M Markov-order length), e.g. ``TTC-SME``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import DataError, LabeledDataset, TimeSeries, constant_channels
from .discretize import MEP, RMEP, Partition, SymbolSequence, fit_mep, fit_rmep, symbolize
from .encode import KIND_BY_LETTER, DpgmmConfig, EncodedSeries, EncoderModel, encode, fit_encoder
from .features import BowVector, Document, Vocabulary, build_documents, build_vocabulary, tfidf_ltc, to_csr
from .svm import SvmModel, train_svm
from .tokenize import ALPHABET, OrderEstimate, combine_orders, estimate_markov_order, tokenize_fixed

log = logging.getLogger(__name__)

MODEL_FORMAT = "ttc-model/1"
ENCODING_LETTERS = "SAUM"
DISCRETIZATION_LETTERS = {"M": MEP, "R": RMEP}
TOKENIZATION_LETTERS = {"E": "equilength", "M": "markov"}


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def sub_seed(seed: int, name: str) -> int:
    """Independent, named child seed of the run seed."""
    digest = hashlib.sha256(f"{int(seed)}/{name}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


@dataclass(frozen=True)
class TtcConfig:
    encoding: str = "S"
    discretization: str = "M"
    tokenization: str = "E"
    alphabet_size: int = 10
    token_length: int = 4
    C: float = 1.0
    healthy_only_fit: bool = False
    seed: int = 0
    dpgmm: DpgmmConfig = field(default_factory=DpgmmConfig)
    max_order: int = 10
    cmi_shuffles: int = 100
    per_channel_length: bool = False
    rmep_max_depth: int = 5
    drop_constant: bool = True
    svm_solver: str = "pegasos"
    svm_epochs: int = 200
    min_df: int = 1

    def __post_init__(self):
        if self.encoding not in ENCODING_LETTERS:
            raise ValueError(f"encoding must be one of {list(ENCODING_LETTERS)}, got {self.encoding!r}")
        if self.discretization not in DISCRETIZATION_LETTERS:
            raise ValueError(f"discretization must be M or R, got {self.discretization!r}")
        if self.tokenization not in TOKENIZATION_LETTERS:
            raise ValueError(f"tokenization must be E or M, got {self.tokenization!r}")
        if not 2 <= self.alphabet_size <= len(ALPHABET):
            raise ValueError(f"alphabet_size must be in [2, {len(ALPHABET)}]")
        if self.token_length < 1:
            raise ValueError("token_length must be >= 1")
        if not self.C > 0:
            raise ValueError("C must be positive")
        if 2 ** self.rmep_max_depth > len(ALPHABET):
            raise ValueError(f"rmep_max_depth {self.rmep_max_depth} allows more than {len(ALPHABET)} symbols")
        if isinstance(self.dpgmm, dict):
            object.__setattr__(self, "dpgmm", DpgmmConfig(**self.dpgmm))

    @property
    def acronym(self) -> str:
        return f"TTC-{self.encoding}{self.discretization}{self.tokenization}"

    @classmethod
    def from_acronym(cls, name: str, **kw) -> "TtcConfig":
        code = name.upper().removeprefix("TTC-")
        if len(code) != 3:
            raise ValueError(f"TTC variant must have three letters, got {name!r}")
        return cls(encoding=code[0], discretization=code[1], tokenization=code[2], **kw)

    def replace(self, **kw) -> "TtcConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TtcConfig":
        d = dict(d)
        if "dpgmm" in d and isinstance(d["dpgmm"], dict):
            d["dpgmm"] = DpgmmConfig(**d["dpgmm"])
        return cls(**d)


def is_ttc_acronym(name: str) -> bool:
    code = name.upper().removeprefix("TTC-")
    return (
        name.upper().startswith("TTC-") and len(code) == 3 and code[0] in ENCODING_LETTERS
        and code[1] in DISCRETIZATION_LETTERS and code[2] in TOKENIZATION_LETTERS
    )


ALL_VARIANTS = tuple(f"TTC-{e}{d}{t}" for e in ENCODING_LETTERS for d in "MR" for t in "EM")


# --------------------------------------------------------------------------
# stages


@dataclass(frozen=True, eq=False)
class FrontEnd:
    """Fitted encode + discretize stages (everything before tokenization)."""

    sensors: tuple[str, ...]
    encoder: EncoderModel
    partitions: dict

    def symbolize(self, series: TimeSeries) -> list[SymbolSequence]:
        if series.sensor_names != self.sensors:
            missing = [s for s in self.sensors if s not in series.sensor_names]
            if missing:
                raise DataError(f"unit {series.unit_id}: missing channels {missing}")
            series = series.select([series.sensor_names.index(s) for s in self.sensors])
        enc = encode(self.encoder, series)
        out = []
        for j, name in enumerate(enc.channel_names):
            part = self.partitions.get(name)
            if part is None:
                continue
            out.append(SymbolSequence(series.unit_id, name, symbolize(enc.channels[:, j], part), part.alphabet_size))
        return out


def fit_front_end(train: LabeledDataset, cfg: TtcConfig) -> tuple[FrontEnd, list[list[SymbolSequence]]]:
    """Fit encoder and per-channel partitions; return them with the training symbols."""
    if len(np.unique(train.labels)) < 2:
        raise StageError("fit", "training set must contain both classes")
    data = train
    if cfg.drop_constant:
        flat = set(constant_channels(train))
        if flat:
            keep = [j for j in range(train.n_channels) if j not in flat]
            if not keep:
                raise StageError("encode", "every channel is constant on the training units")
            data = train.select_channels(keep)
    dp = dataclasses.replace(cfg.dpgmm, healthy_only=cfg.healthy_only_fit, seed=sub_seed(cfg.seed, "dpgmm"))
    try:
        encoder = fit_encoder(data, KIND_BY_LETTER[cfg.encoding], dp)
        encoded: list[EncodedSeries] = [encode(encoder, s) for s in data.series]
    except (ValueError, DataError) as exc:
        raise StageError("encode", str(exc)) from exc

    method = DISCRETIZATION_LETTERS[cfg.discretization]
    partitions: dict[str, Partition] = {}
    for j, name in enumerate(encoder.channel_names):
        values = np.concatenate([e.channels[:, j] for e in encoded])
        try:
            if method == MEP:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    part = fit_mep(values, cfg.alphabet_size, channel_id=name)
            else:
                labels = np.concatenate([np.full(e.length, y) for e, y in zip(encoded, train.labels)])
                part = fit_rmep(values, labels, max_depth=cfg.rmep_max_depth, channel_id=name)
                if part.alphabet_size < 2:
                    log.info("channel %s: RMEP found no informative split, dropped", name)
                    continue
        except ValueError as exc:
            log.warning("channel %s dropped: %s", name, exc)
            continue
        partitions[name] = part
    if not partitions:
        raise StageError("discretize", "no informative channel")
    front = FrontEnd(data.sensor_names, encoder, partitions)
    symbols = []
    for e in encoded:
        row = []
        for j, name in enumerate(e.channel_names):
            if name in partitions:
                p = partitions[name]
                row.append(SymbolSequence(e.unit_id, name, symbolize(e.channels[:, j], p), p.alphabet_size))
        symbols.append(row)
    return front, symbols


def choose_token_lengths(
    symbols: list[list[SymbolSequence]], cfg: TtcConfig
) -> tuple[dict[str, int], dict[str, OrderEstimate]]:
    channels = [s.channel_id for s in symbols[0]]
    if cfg.tokenization == "E":
        return {c: cfg.token_length for c in channels}, {}
    estimates = {}
    for j, c in enumerate(channels):
        seqs = [row[j] for row in symbols]
        estimates[c] = estimate_markov_order(
            seqs, max_order=cfg.max_order, n_shuffles=cfg.cmi_shuffles,
            seed=sub_seed(cfg.seed, f"cmi-permutation/{c}"),
        )
    if cfg.per_channel_length:
        return {c: max(1, e.estimated_order) for c, e in estimates.items()}, estimates
    L = combine_orders(e.estimated_order for e in estimates.values())
    return {c: L for c in channels}, estimates


def make_documents(symbols: list[list[SymbolSequence]], lengths: dict[str, int]) -> list[Document]:
    streams = {}
    for row in symbols:
        if not row:
            continue
        streams[row[0].unit_id] = [tokenize_fixed(s, lengths[s.channel_id]) for s in row]
    return build_documents(streams)


# --------------------------------------------------------------------------
# model


@dataclass(frozen=True, eq=False)
class TtcModel:
    config: TtcConfig
    front: FrontEnd
    token_lengths: dict
    vocabulary: Vocabulary
    svm: SvmModel
    fingerprint: str = ""
    train_margins: dict = field(default_factory=dict)
    order_estimates: dict = field(default_factory=dict)

    @property
    def acronym(self) -> str:
        return self.config.acronym

    def document(self, series: TimeSeries) -> Document:
        symbols = self.front.symbolize(series)
        L = min(self.token_lengths.values())
        if series.length < L:
            log.warning("unit %s: %d rows shorter than token length %d", series.unit_id, series.length, L)
        return make_documents([symbols], self.token_lengths)[0]

    def vector(self, series: TimeSeries) -> BowVector:
        return tfidf_ltc(self.document(series), self.vocabulary)

    def decision(self, series: TimeSeries) -> float:
        v = self.vector(series)
        return float(v.weights @ self.svm.weights[v.indices] + self.svm.bias)

    def predict_dataset(self, dataset: LabeledDataset) -> tuple[np.ndarray, np.ndarray]:
        margins = np.array([self.decision(s) for s in dataset.series])
        return (margins > 0).astype(np.int64), margins

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "config": self.config.to_dict(),
            "sensors": list(self.front.sensors),
            "encoder": self.front.encoder.to_dict(),
            "partitions": {k: p.to_dict() for k, p in self.front.partitions.items()},
            "token_lengths": dict(self.token_lengths),
            "vocabulary": self.vocabulary.to_dict(),
            "svm": {
                "weights": {
                    self.vocabulary.terms[j]: float(self.svm.weights[j])
                    for j in np.flatnonzero(self.svm.weights)
                },
                "bias": self.svm.bias,
                "C": self.svm.C,
                "objective": self.svm.objective,
                "epochs": self.svm.epochs,
                "solver": self.svm.solver,
            },
            "fingerprint": self.fingerprint,
            "train_margins": self.train_margins,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TtcModel":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError(f"unsupported model format {d.get('format')!r}")
        vocab = Vocabulary.from_dict(d["vocabulary"])
        w = np.zeros(len(vocab))
        for term, x in d["svm"]["weights"].items():
            w[vocab.id(term)] = x
        s = d["svm"]
        svm = SvmModel(w, s["bias"], s["C"], s.get("objective", float("nan")), s.get("epochs", 0), (), s.get("solver", "pegasos"))
        front = FrontEnd(
            tuple(d["sensors"]),
            EncoderModel.from_dict(d["encoder"]),
            {k: Partition.from_dict(p) for k, p in d["partitions"].items()},
        )
        return cls(
            TtcConfig.from_dict(d["config"]), front, dict(d["token_lengths"]), vocab, svm,
            d.get("fingerprint", ""), dict(d.get("train_margins", {})),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "TtcModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit(train: LabeledDataset, config: TtcConfig) -> TtcModel:
    """Run all five stages on the training units."""
    front, symbols = fit_front_end(train, config)
    try:
        lengths, estimates = choose_token_lengths(symbols, config)
    except ValueError as exc:
        raise StageError("tokenize", str(exc)) from exc
    docs = make_documents(symbols, lengths)
    vocab = build_vocabulary(docs, config.min_df)
    vectors = [tfidf_ltc(d, vocab) for d in docs]
    try:
        svm = train_svm(
            to_csr(vectors, len(vocab)), train.labels, config.C, epochs=config.svm_epochs,
            seed=sub_seed(config.seed, "svm-shuffle"), solver=config.svm_solver,
        )
    except ValueError as exc:
        raise StageError("classify", str(exc)) from exc
    margins = {
        v.unit_id: float(v.weights @ svm.weights[v.indices] + svm.bias) for v in vectors
    }
    return TtcModel(config, front, lengths, vocab, svm, train.fingerprint(), margins, estimates)


def predict(model: TtcModel, series: TimeSeries) -> tuple[int, float]:
    margin = model.decision(series)
    return int(margin > 0), margin


def ttc_overall_select(
    train: LabeledDataset, variant_grid: Sequence[TtcConfig | str], folds: int = 10, seed: int = 0, **grids
) -> TtcModel:
    """Pick the variant (and hyperparameters) with the best inner-CV accuracy, refit on ``train``.

    Ties go to the lexicographically smallest acronym, then to grid order.
    """
    from .evaluate import TtcMethod, select_candidate

    method = TtcMethod(variant_grid, seed=seed, **grids)
    best, _ = select_candidate(train, method, folds, seed)
    return method.fit(train, best).model
