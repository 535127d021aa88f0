"""
Attention optimal-transport detectors.

Scores the head- and target-averaged cross-attention distribution over source
positions: distance to uniform (wass_to_unif), distance to reference
distributions from the same direction (wass_to_data), and two calibrated
combinations of the two (wass_combo, wass_mean).
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pydantic
import structlog
from pydantic import BaseModel, ConfigDict, Field
from scipy.stats import wasserstein_distance

from ..core.errors import (
    DegenerateCalibration,
    DegenerateMass,
    EmptyReferenceSet,
    InsufficientCalibrationData,
    IoError,
    MissingInput,
    ZeroVector,
)
from ..core.types import AttentionDistribution, Corpus, TranslationRecord
from ..utils.config import OtConfig
from .sentence import DetectorScore, embedding_similarity, seq_logprob

logger = structlog.get_logger(__name__)

PathLike = Union[str, Path]
MassLike = Union[AttentionDistribution, np.ndarray, Sequence[float]]

WASS_TO_UNIF = "wass_to_unif"
WASS_TO_DATA = "wass_to_data"
WASS_COMBO = "wass_combo"
WASS_MEAN = "wass_mean"
NOEOS_SUFFIX = "_noeos"

EOS_DEGENERATE_TOL = 1e-9

CRITERIA = ("length_ratio", "seq_logprob", "similarity")


def _mass(d: MassLike) -> np.ndarray:
    if isinstance(d, AttentionDistribution):
        return d.mass
    return np.asarray(d, dtype=np.float64)


def attention_distribution(record: TranslationRecord, drop_eos: bool) -> AttentionDistribution:
    """The record's attention, renormalized to sum to one, optionally without the EOS entry."""
    attn = record.attn
    detector = WASS_TO_UNIF + (NOEOS_SUFFIX if drop_eos else "")
    if attn is None:
        raise MissingInput(detector, "attn", record.id)
    mass = attn.mass
    has_eos = attn.has_eos
    if drop_eos:
        if not attn.has_eos:
            raise MissingInput(detector, "attn.has_eos", record.id)
        if mass[-1] >= 1.0 - EOS_DEGENERATE_TOL:
            raise DegenerateMass(f"record {record.id}: all attention on EOS")
        mass = mass[:-1]
        has_eos = False
    total = float(mass.sum())
    if total <= 0:
        raise DegenerateMass(f"record {record.id}: zero attention mass")
    return AttentionDistribution(mass / total, has_eos)


def wass_to_unif(d: MassLike) -> float:
    """Transport cost to the uniform distribution under 0/1 cost (total variation)."""
    mass = _mass(d)
    n = mass.shape[0]
    return float(0.5 * np.abs(mass - 1.0 / n).sum())


def _positions(n: int) -> np.ndarray:
    return (np.arange(n, dtype=np.float64) + 0.5) / n


def wass1_positions(a: MassLike, b: MassLike) -> float:
    """1-Wasserstein distance with mass j of a length-n vector placed at (j+0.5)/n."""
    mass_a, mass_b = _mass(a), _mass(b)
    pos_a, pos_b = _positions(mass_a.shape[0]), _positions(mass_b.shape[0])
    return float(wasserstein_distance(pos_a, pos_b, mass_a, mass_b))


@dataclass(frozen=True)
class ReferenceSet:
    direction: str
    distributions: Tuple[np.ndarray, ...]
    source_lengths: Tuple[int, ...]
    ids: Tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.distributions)


def _drop_count(n: int, fraction: float) -> int:
    return math.ceil(round(fraction * n, 9))


def _worst(badness: Dict[str, float], count: int) -> List[str]:
    ranked = sorted(badness, key=lambda rid: (-badness[rid], rid))
    return ranked[:count]


def _common_encoder(records: Sequence[TranslationRecord], preferred: Optional[str]) -> Optional[str]:
    common = None
    for record in records:
        names = set(record.embeddings or {})
        common = names if common is None else common & names
    if not common:
        return None
    if preferred is not None and preferred in common:
        return preferred
    return sorted(common)[0]


def _criterion_badness(
    criterion: str, records: Sequence[TranslationRecord], config: OtConfig
) -> Optional[Dict[str, float]]:
    if criterion == "length_ratio":
        badness = {}
        for r in records:
            n_src, n_tgt = len(r.src_tokens), len(r.tgt_tokens)
            ratio = min(n_src, n_tgt) / max(n_src, n_tgt) if max(n_src, n_tgt) else 0.0
            badness[r.id] = -ratio
        return badness
    if criterion == "seq_logprob":
        if not all(r.tgt_logprob for r in records):
            return None
        return {r.id: seq_logprob(r).value for r in records}
    if criterion == "similarity":
        encoder = _common_encoder(records, config.similarity_encoder)
        if encoder is None:
            return None
        badness = {}
        for r in records:
            try:
                badness[r.id] = embedding_similarity(r, encoder).value
            except ZeroVector:
                badness[r.id] = math.inf
        return badness
    raise ValueError(f"unknown reference criterion {criterion!r}")


def build_reference_set(
    corpus: Corpus,
    drop_eos: bool,
    config: Optional[OtConfig] = None,
    criteria: Optional[Sequence[str]] = None,
) -> Dict[str, ReferenceSet]:
    """Per-direction reference distributions from records outside the worst tail of every criterion."""
    config = config or OtConfig()
    criteria = tuple(criteria) if criteria is not None else CRITERIA
    by_direction: Dict[str, List[TranslationRecord]] = {}
    skipped = 0
    for record in corpus:
        if record.attn is None or (drop_eos and not record.attn.has_eos):
            skipped += 1
            continue
        by_direction.setdefault(str(record.direction), []).append(record)
    if skipped:
        logger.warning("reference_records_skipped", reason="attention unavailable", count=skipped)

    references = {}
    for direction in sorted(by_direction):
        records = by_direction[direction]
        dropped = set()
        used = []
        for criterion in criteria:
            badness = _criterion_badness(criterion, records, config)
            if badness is None:
                continue
            used.append(criterion)
            dropped.update(_worst(badness, _drop_count(len(records), config.reference_drop_fraction)))
        distributions, lengths, ids = [], [], []
        for record in sorted(records, key=lambda r: r.id):
            if record.id in dropped:
                continue
            try:
                dist = attention_distribution(record, drop_eos)
            except DegenerateMass:
                continue
            distributions.append(dist.mass)
            lengths.append(len(record.src_tokens))
            ids.append(record.id)
        if not distributions:
            raise EmptyReferenceSet(direction)
        references[direction] = ReferenceSet(direction, tuple(distributions), tuple(lengths), tuple(ids))
        logger.info(
            "reference_set_built",
            direction=direction,
            drop_eos=drop_eos,
            candidates=len(records),
            kept=len(distributions),
            criteria=used,
        )
    return references


def wass_to_data(
    d: MassLike,
    ref: ReferenceSet,
    k: int = 4,
    window: float = 1.25,
    n_tokens: Optional[int] = None,
) -> float:
    """Mean of the k smallest distances to reference distributions of comparable source length."""
    if len(ref) == 0:
        raise EmptyReferenceSet(ref.direction)
    if n_tokens is None:
        n_tokens = d.n_tokens if isinstance(d, AttentionDistribution) else len(_mass(d))
    n = max(n_tokens, 1)
    candidates = [
        i for i, length in enumerate(ref.source_lengths) if max(length, n) / max(min(length, n), 1) <= window
    ]
    if len(candidates) < k:
        candidates = list(range(len(ref)))
    distances = np.sort([wass1_positions(d, ref.distributions[i]) for i in candidates])
    return float(distances[:k].mean())


class Calibration(BaseModel):
    """Quantile and spread statistics of raw wtu/wtd scores on held-out records."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    direction: str
    drop_eos: bool = False
    q1_wtu: float
    q99_wtu: float
    q1_wtd: float
    q99_wtd: float
    sd_wtu: float
    sd_wtd: float
    tau: float
    tau_quantile: float = 0.99
    bottom_k: int = 4
    length_window: float = 1.25
    n_records: int = 0


class CalibrationBundle(BaseModel):
    model_config = ConfigDict(extra="forbid")

    calibrations: List[Calibration] = Field(default_factory=list)

    def lookup(self, direction: str, drop_eos: bool) -> Optional[Calibration]:
        for cal in self.calibrations:
            if cal.direction == direction and cal.drop_eos == drop_eos:
                return cal
        return None


def calibration_from_scores(
    wtu: Sequence[float],
    wtd: Sequence[float],
    direction: str,
    drop_eos: bool = False,
    config: Optional[OtConfig] = None,
) -> Calibration:
    config = config or OtConfig()
    wtu, wtd = np.asarray(wtu, dtype=np.float64), np.asarray(wtd, dtype=np.float64)
    if len(wtu) < config.min_calibration_records:
        raise InsufficientCalibrationData(
            f"{direction}: {len(wtu)} calibration records, need {config.min_calibration_records}"
        )
    q_wtu = np.quantile(wtu, [0.01, 0.99], method="linear")
    q_wtd = np.quantile(wtd, [0.01, 0.99], method="linear")
    # np.std of a constant vector can be a few ulps above zero
    if np.ptp(wtu) == 0 or np.ptp(wtd) == 0:
        raise DegenerateCalibration(f"{direction}: zero spread in calibration scores")
    sd_wtu, sd_wtd = float(np.std(wtu)), float(np.std(wtd))
    return Calibration(
        direction=direction,
        drop_eos=drop_eos,
        q1_wtu=float(q_wtu[0]),
        q99_wtu=float(q_wtu[1]),
        q1_wtd=float(q_wtd[0]),
        q99_wtd=float(q_wtd[1]),
        sd_wtu=sd_wtu,
        sd_wtd=sd_wtd,
        tau=float(np.quantile(wtu, config.tau_quantile, method="linear")),
        tau_quantile=config.tau_quantile,
        bottom_k=config.bottom_k,
        length_window=config.length_window,
        n_records=int(len(wtu)),
    )


def calibrate(
    corpus: Corpus,
    ref: ReferenceSet,
    config: Optional[OtConfig] = None,
    drop_eos: bool = False,
) -> Calibration:
    """Calibrate on held-out records of the reference set's direction."""
    config = config or OtConfig()
    wtu, wtd = [], []
    for record in corpus:
        if str(record.direction) != ref.direction:
            continue
        try:
            dist = attention_distribution(record, drop_eos)
        except (MissingInput, DegenerateMass):
            continue
        wtu.append(wass_to_unif(dist))
        wtd.append(wass_to_data(dist, ref, config.bottom_k, config.length_window, len(record.src_tokens)))
    cal = calibration_from_scores(wtu, wtd, ref.direction, drop_eos, config)
    logger.info("calibration_built", direction=ref.direction, drop_eos=drop_eos, records=cal.n_records)
    return cal


def combine_wass_scores(wtu: float, wtd: float, cal: Calibration) -> float:
    """Above tau, wtu mapped affinely onto the wtd scale by its 1%/99% quantiles; otherwise wtd."""
    span = cal.q99_wtu - cal.q1_wtu
    if span == 0:
        raise DegenerateCalibration(f"{cal.direction}: q1_wtu == q99_wtu")
    if wtu > cal.tau:
        return cal.q1_wtd + (wtu - cal.q1_wtu) * (cal.q99_wtd - cal.q1_wtd) / span
    return wtd


def mean_wass_scores(wtu: float, wtd: float, cal: Calibration) -> float:
    """Average weighted by inverse standard deviations."""
    if cal.sd_wtu <= 0 or cal.sd_wtd <= 0:
        raise DegenerateCalibration(f"{cal.direction}: non-positive calibration spread")
    inv_u, inv_d = 1.0 / cal.sd_wtu, 1.0 / cal.sd_wtd
    w_u = inv_u / (inv_u + inv_d)
    return w_u * wtu + (1.0 - w_u) * wtd


def wass_combo(d: MassLike, ref: ReferenceSet, cal: Calibration, n_tokens: Optional[int] = None) -> DetectorScore:
    wtu = wass_to_unif(d)
    wtd = wass_to_data(d, ref, cal.bottom_k, cal.length_window, n_tokens)
    return DetectorScore(WASS_COMBO, combine_wass_scores(wtu, wtd, cal))


def wass_mean(d: MassLike, ref: ReferenceSet, cal: Calibration, n_tokens: Optional[int] = None) -> DetectorScore:
    wtu = wass_to_unif(d)
    wtd = wass_to_data(d, ref, cal.bottom_k, cal.length_window, n_tokens)
    return DetectorScore(WASS_MEAN, mean_wass_scores(wtu, wtd, cal))


def save_calibrations(bundle: CalibrationBundle, path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(bundle.model_dump_json(indent=2) + "\n", encoding="utf-8")


def load_calibrations(path: PathLike) -> CalibrationBundle:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(str(path), exc.strerror or str(exc)) from exc
    try:
        return CalibrationBundle.model_validate_json(text)
    except pydantic.ValidationError as exc:
        raise IoError(str(path), f"invalid calibration document: {exc.errors()[0]['msg']}") from exc


@dataclass
class OtContext:
    """Reference sets and calibrations shared by the OT detectors during one scoring run."""

    config: OtConfig = field(default_factory=OtConfig)
    references: Dict[Tuple[str, bool], ReferenceSet] = field(default_factory=dict)
    calibrations: Dict[Tuple[str, bool], Calibration] = field(default_factory=dict)

    @classmethod
    def build(
        cls,
        reference_corpus: Optional[Corpus],
        variants: Iterable[bool],
        config: Optional[OtConfig] = None,
        calibration_corpus: Optional[Corpus] = None,
        bundle: Optional[CalibrationBundle] = None,
    ) -> "OtContext":
        """Build references for each EOS variant, then load or fit calibrations."""
        ctx = cls(config=config or OtConfig())
        for drop_eos in sorted(set(variants)):
            if reference_corpus is not None:
                for direction, ref in build_reference_set(reference_corpus, drop_eos, ctx.config).items():
                    ctx.references[(direction, drop_eos)] = ref
            if bundle is not None:
                for cal in bundle.calibrations:
                    if cal.drop_eos == drop_eos:
                        ctx.calibrations[(cal.direction, drop_eos)] = cal
                        if (cal.bottom_k, cal.length_window) != (ctx.config.bottom_k, ctx.config.length_window):
                            logger.info(
                                "calibration_overrides_ot_config",
                                direction=cal.direction,
                                bottom_k=cal.bottom_k,
                                length_window=cal.length_window,
                            )
            elif calibration_corpus is not None:
                for (direction, variant), ref in list(ctx.references.items()):
                    if variant == drop_eos:
                        ctx.calibrations[(direction, drop_eos)] = calibrate(
                            calibration_corpus, ref, ctx.config, drop_eos
                        )
        return ctx

    def bundle(self) -> CalibrationBundle:
        return CalibrationBundle(calibrations=[self.calibrations[key] for key in sorted(self.calibrations)])

    def reference(self, record: TranslationRecord, drop_eos: bool, detector: str) -> ReferenceSet:
        ref = self.references.get((str(record.direction), drop_eos))
        if ref is None:
            raise MissingInput(detector, f"reference set for {record.direction}", record.id)
        return ref

    def calibration(self, record: TranslationRecord, drop_eos: bool, detector: str) -> Calibration:
        cal = self.calibrations.get((str(record.direction), drop_eos))
        if cal is None:
            raise MissingInput(detector, f"calibration for {record.direction}", record.id)
        return cal

    def wtd_params(self, direction: str, drop_eos: bool) -> Tuple[int, float]:
        """Bottom-k and window a calibration was fitted with; config values when uncalibrated."""
        cal = self.calibrations.get((direction, drop_eos))
        if cal is None:
            return self.config.bottom_k, self.config.length_window
        return cal.bottom_k, cal.length_window

    def raw_scores(self, record: TranslationRecord, drop_eos: bool, detector: str) -> Tuple[float, float]:
        dist = attention_distribution(record, drop_eos)
        ref = self.reference(record, drop_eos, detector)
        k, window = self.wtd_params(str(record.direction), drop_eos)
        wtd = wass_to_data(dist, ref, k, window, len(record.src_tokens))
        return wass_to_unif(dist), wtd
