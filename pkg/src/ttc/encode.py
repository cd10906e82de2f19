"""Deviance encoding: map raw observations to z-scores or mixture log-likelihoods."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from .dataset import DataError, LabeledDataset, TimeSeries
from .dpgmm import DpgmmModel, fit_dpgmm

log = logging.getLogger(__name__)

ZNORM_SELF = "znorm-self"
ZNORM_ALL = "znorm-all"
DPGMM_UNI = "dpgmm-univariate"
DPGMM_MULTI = "dpgmm-multivariate"
KINDS = (ZNORM_SELF, ZNORM_ALL, DPGMM_UNI, DPGMM_MULTI)
KIND_BY_LETTER = {"S": ZNORM_SELF, "A": ZNORM_ALL, "U": DPGMM_UNI, "M": DPGMM_MULTI}


@dataclass(frozen=True)
class DpgmmConfig:
    n_components: int = 20
    concentration: float = 1.0
    covariance_type: str = "diag"
    max_iter: int = 500
    tol: float = 1e-6
    seed: int = 0
    healthy_only: bool = False


@dataclass(frozen=True, eq=False)
class EncoderModel:
    kind: str
    sensor_names: tuple[str, ...]
    means: np.ndarray | None = None
    stds: np.ndarray | None = None
    mixtures: tuple[DpgmmModel, ...] = ()
    fitted_on: str = ""
    config: DpgmmConfig = field(default_factory=DpgmmConfig)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        populated = {
            ZNORM_SELF: (False, False),
            ZNORM_ALL: (True, False),
            DPGMM_UNI: (False, True),
            DPGMM_MULTI: (False, True),
        }[self.kind]
        if (self.means is not None, bool(self.mixtures)) != populated:
            raise ValueError(f"fields inconsistent with encoder kind {self.kind}")

    @property
    def channel_names(self) -> tuple[str, ...]:
        if self.kind == DPGMM_MULTI:
            return ("joint",)
        return self.sensor_names

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "sensor_names": list(self.sensor_names), "fitted_on": self.fitted_on}
        if self.means is not None:
            d["means"] = self.means.tolist()
            d["stds"] = self.stds.tolist()
        if self.mixtures:
            d["mixtures"] = [m.to_dict() for m in self.mixtures]
        d["config"] = dataclasses.asdict(self.config)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderModel":
        return cls(
            kind=d["kind"],
            sensor_names=tuple(d["sensor_names"]),
            means=None if "means" not in d else np.array(d["means"]),
            stds=None if "stds" not in d else np.array(d["stds"]),
            mixtures=tuple(DpgmmModel.from_dict(m) for m in d.get("mixtures", ())),
            fitted_on=d.get("fitted_on", ""),
            config=DpgmmConfig(**d.get("config", {})),
        )


@dataclass(frozen=True, eq=False)
class EncodedSeries:
    unit_id: str
    channels: np.ndarray
    channel_names: tuple[str, ...]

    @property
    def length(self) -> int:
        return self.channels.shape[0]


def fit_encoder(train: LabeledDataset, kind: str, dpgmm_config: DpgmmConfig | None = None) -> EncoderModel:
    """Fit the per-fleet statistics needed by ``kind`` on the training units.

    ``kind`` may be the full name or the one-letter acronym (S, A, U, M).
    """
    kind = KIND_BY_LETTER.get(kind, kind)
    if kind not in KINDS:
        raise ValueError(f"unknown encoder kind {kind!r}")
    if len(train) == 0:
        raise DataError("cannot fit an encoder on an empty dataset")
    cfg = dpgmm_config or DpgmmConfig()
    names = train.sensor_names
    fp = train.fingerprint()
    if kind == ZNORM_SELF:
        return EncoderModel(kind, names, fitted_on=fp, config=cfg)

    units = train.series
    if kind in (DPGMM_UNI, DPGMM_MULTI) and cfg.healthy_only:
        units = [s for s, y in zip(train.series, train.labels) if y == 0]
        if not units:
            raise DataError("healthy_only fit requested but the training set has no healthy units")
    pooled = np.vstack([s.values for s in units])

    if kind == ZNORM_ALL:
        means = pooled.mean(axis=0)
        stds = pooled.std(axis=0)
        flat = np.flatnonzero(stds == 0)
        if len(flat):
            raise DataError(f"zero-variance sensor(s) for znorm-all: {[names[j] for j in flat]}")
        return EncoderModel(kind, names, means=means, stds=stds, fitted_on=fp, config=cfg)

    kw = dict(
        n_components=cfg.n_components, concentration=cfg.concentration,
        covariance_type=cfg.covariance_type, max_iter=cfg.max_iter, tol=cfg.tol, seed=cfg.seed,
    )
    if kind == DPGMM_UNI:
        mixtures = []
        for j, name in enumerate(names):
            try:
                mixtures.append(fit_dpgmm(pooled[:, j], **kw))
            except ValueError as exc:
                raise DataError(f"sensor {name}: {exc}") from None
        return EncoderModel(kind, names, mixtures=tuple(mixtures), fitted_on=fp, config=cfg)
    return EncoderModel(kind, names, mixtures=(fit_dpgmm(pooled, **kw),), fitted_on=fp, config=cfg)


def encode(model: EncoderModel, series: TimeSeries) -> EncodedSeries:
    """Apply a fitted encoder to one unit, row by row."""
    if series.sensor_names != model.sensor_names:
        raise DataError(
            f"unit {series.unit_id}: sensors {series.sensor_names} do not match encoder {model.sensor_names}"
        )
    X = series.values
    if model.kind == ZNORM_SELF:
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        flat = sd == 0
        if np.any(flat):
            log.warning(
                "unit %s: constant channel(s) %s encoded as zeros",
                series.unit_id, [model.sensor_names[j] for j in np.flatnonzero(flat)],
            )
        out = np.where(flat, 0.0, (X - mu) / np.where(flat, 1.0, sd))
    elif model.kind == ZNORM_ALL:
        out = (X - model.means) / model.stds
    elif model.kind == DPGMM_UNI:
        out = np.column_stack([m.loglik(X[:, j]) for j, m in enumerate(model.mixtures)])
    else:
        out = model.mixtures[0].loglik(X)[:, None]
    out.setflags(write=False)
    return EncodedSeries(series.unit_id, out, model.channel_names)


def encode_dataset(model: EncoderModel, dataset: LabeledDataset) -> list[EncodedSeries]:
    return [encode(model, s) for s in dataset.series]
