"""Synthetic regression scenarios with known noise, and JSONL dataset files.

All generators share one labelling function, ``f(x) = sum_j sin(2 x_j)``,
and draw features uniformly from ``[-1, 1]^d``. The per-record noise standard
deviation is kept in ``true_sigma`` for scoring only; estimators train on
stripped copies (see :meth:`Dataset.strip_oracle`).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SCENARIO_KINDS = ("heteroscedastic", "multi_annotator", "domain_shift", "reference_pairs")


class DatasetError(ValueError):
    pass


def label_function(X: np.ndarray) -> np.ndarray:
    return np.sin(2.0 * np.asarray(X)).sum(axis=1)


@dataclass(frozen=True)
class SegmentRecord:
    id: str
    features: tuple[float, ...]
    gold_score: float
    annotator_scores: tuple[float, ...] | None = None
    domain_tag: str = "in"
    noise_tag: str | None = None
    true_sigma: float | None = None

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "features": list(self.features),
            "gold_score": self.gold_score,
            "annotator_scores": None if self.annotator_scores is None else list(self.annotator_scores),
            "domain_tag": self.domain_tag,
            "noise_tag": self.noise_tag,
            "true_sigma": self.true_sigma,
        }


RECORD_FIELDS = tuple(f.name for f in fields(SegmentRecord))


class Dataset:
    """An immutable list of records with cached numpy views.

    Reads of the oracle fields (``true_sigma`` and ``noise_tag``) through
    :meth:`true_sigma` / :meth:`noise_tags` are counted in ``oracle_reads`` so
    experiment code can assert that training never touched them.
    """

    def __init__(self, records: Iterable[SegmentRecord], name: str = ""):
        self.records: tuple[SegmentRecord, ...] = tuple(records)
        self.name = name
        self.oracle_reads = 0
        if not self.records:
            self.X = np.zeros((0, 0))
            self.y = np.zeros(0)
            return
        dims = {len(r.features) for r in self.records}
        if len(dims) != 1:
            raise DatasetError(f"inconsistent feature dimensions {sorted(dims)}")
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            seen, dupes = set(), []
            for i in ids:
                if i in seen:
                    dupes.append(i)
                seen.add(i)
            raise DatasetError(f"duplicate ids: {dupes[:5]}")
        for r in self.records:
            if r.annotator_scores is not None:
                if len(r.annotator_scores) < 2:
                    raise DatasetError(f"record {r.id}: annotator_scores needs >= 2 entries")
                mean = float(np.mean(r.annotator_scores))
                if not math.isclose(mean, r.gold_score, rel_tol=1e-12, abs_tol=1e-12):
                    raise DatasetError(f"record {r.id}: gold_score must equal the annotator mean")
        self.X = np.array([r.features for r in self.records], dtype=np.float64)
        self.y = np.array([r.gold_score for r in self.records], dtype=np.float64)
        self.X.flags.writeable = False
        self.y.flags.writeable = False

    def __len__(self) -> int:
        return len(self.records)

    def __repr__(self) -> str:
        return f"Dataset(name={self.name!r}, n={len(self)}, d={self.dim})"

    @property
    def dim(self) -> int:
        return self.X.shape[1] if len(self) else 0

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(r.id for r in self.records)

    @property
    def domain_tags(self) -> tuple[str, ...]:
        return tuple(r.domain_tag for r in self.records)

    def true_sigma(self) -> np.ndarray:
        self.oracle_reads += 1
        return np.array([np.nan if r.true_sigma is None else r.true_sigma for r in self.records])

    def noise_tags(self) -> tuple[str | None, ...]:
        self.oracle_reads += 1
        return tuple(r.noise_tag for r in self.records)

    def has_annotators(self) -> bool:
        return len(self) > 0 and all(r.annotator_scores is not None for r in self.records)

    def annotator_scores(self) -> list[tuple[float, ...]]:
        missing = [r.id for r in self.records if r.annotator_scores is None or len(r.annotator_scores) < 2]
        if missing:
            raise DatasetError(f"{len(missing)} records lack >= 2 annotator scores (first: {missing[0]})")
        return [r.annotator_scores for r in self.records]

    def has_oracle_fields(self) -> bool:
        return any(r.true_sigma is not None or r.noise_tag is not None for r in self.records)

    def strip_oracle(self) -> "Dataset":
        """Copy without ``true_sigma`` and ``noise_tag``."""
        return Dataset((replace(r, true_sigma=None, noise_tag=None) for r in self.records), self.name)

    def subset(self, index: Sequence[int], name: str | None = None) -> "Dataset":
        return Dataset((self.records[i] for i in index), self.name if name is None else name)

    def filter_domain(self, tag: str) -> "Dataset":
        return Dataset((r for r in self.records if r.domain_tag == tag), f"{self.name}[{tag}]")

    def concat(self, other: "Dataset", name: str | None = None) -> "Dataset":
        return Dataset(self.records + other.records, name or self.name)

    def split(self, fractions: Sequence[float], seed: int = 0, group_key=None,
              names: Sequence[str] | None = None) -> list["Dataset"]:
        """Random disjoint split by ``fractions`` (which must sum to 1).

        ``group_key(record)`` keeps records with the same key together. Strata
        given by ``domain_tag`` are split separately so each part keeps the
        same domain balance.
        """
        fractions = np.asarray(fractions, dtype=np.float64)
        if np.any(fractions < 0) or not math.isclose(fractions.sum(), 1.0, abs_tol=1e-9):
            raise DatasetError(f"split fractions must be nonnegative and sum to 1, got {fractions.tolist()}")
        key = group_key or (lambda r: r.id)
        rng = np.random.default_rng(seed)
        parts: list[list[int]] = [[] for _ in fractions]
        for tag in sorted({r.domain_tag for r in self.records}):
            groups: dict[str, list[int]] = {}
            for i, r in enumerate(self.records):
                if r.domain_tag == tag:
                    groups.setdefault(key(r), []).append(i)
            keys = sorted(groups)
            order = rng.permutation(len(keys))
            cuts = np.round(np.cumsum(fractions) * len(keys)).astype(int)
            start = 0
            for p, stop in enumerate(cuts):
                for j in order[start:stop]:
                    parts[p].extend(groups[keys[j]])
                start = stop
        names = names or [f"{self.name}/part{p}" for p in range(len(fractions))]
        return [self.subset(sorted(idx), n) for idx, n in zip(parts, names)]

    @classmethod
    def from_arrays(cls, X, y, ids=None, name: str = "", **columns) -> "Dataset":
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        y = np.asarray(y, dtype=np.float64).ravel()
        ids = ids if ids is not None else [f"s{i}" for i in range(len(y))]
        records = []
        for i in range(len(y)):
            extra = {k: v[i] for k, v in columns.items()}
            if extra.get("annotator_scores") is not None:
                extra["annotator_scores"] = tuple(float(s) for s in extra["annotator_scores"])
            records.append(SegmentRecord(str(ids[i]), tuple(float(v) for v in X[i]), float(y[i]), **extra))
        return cls(records, name)


# ---------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True)
class SyntheticScenario:
    """Parameters of a synthetic generator.

    ``noise_a + noise_b * |x_0|`` is the noise standard deviation for the
    heteroscedastic, domain-shift and (per annotator) multi-annotator kinds.
    Setting ``strata_sigmas`` switches the multi-annotator kind to two strata
    flagged by the sign of the last feature.
    """

    kind: str = "heteroscedastic"
    n: int = 5000
    d: int = 4
    seed: int = 0
    noise_a: float = 0.1
    noise_b: float = 0.5
    annotators: int = 5
    strata_sigmas: tuple[float, float] | None = None
    shift: float = 2.0
    n_ood: int | None = None
    clean_sigma: float = 0.1
    noise_ratio: float = 5.0
    ref_block: int = 2

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.n < 1 or self.d < 1:
            raise ValueError("n and d must be >= 1")
        scales = [self.noise_a, self.noise_b, self.shift, self.clean_sigma, *(self.strata_sigmas or ())]
        if any(s < 0 for s in scales):
            raise ValueError("noise scales and shift must be >= 0")
        if self.noise_ratio < 1:
            raise ValueError("noise_ratio must be >= 1")
        if self.kind == "multi_annotator" and self.annotators < 2:
            raise ValueError("multi_annotator scenarios need at least 2 annotators")
        if self.strata_sigmas is not None:
            object.__setattr__(self, "strata_sigmas", tuple(float(s) for s in self.strata_sigmas))

    def noise_sigma(self, X: np.ndarray) -> np.ndarray:
        return self.noise_a + self.noise_b * np.abs(X[:, 0])


def _records(prefix: str, X, y, sigma, domain_tag="in", noise_tags=None, annotators=None):
    out = []
    for i in range(len(y)):
        out.append(SegmentRecord(
            id=f"{prefix}{i}",
            features=tuple(float(v) for v in X[i]),
            gold_score=float(y[i]),
            annotator_scores=None if annotators is None else tuple(float(v) for v in annotators[i]),
            domain_tag=domain_tag,
            noise_tag=None if noise_tags is None else noise_tags[i],
            true_sigma=float(sigma[i]),
        ))
    return out


def gen_heteroscedastic(scenario: SyntheticScenario) -> Dataset:
    rng = np.random.default_rng(scenario.seed)
    X = rng.uniform(-1.0, 1.0, (scenario.n, scenario.d))
    sigma = scenario.noise_sigma(X)
    y = label_function(X) + sigma * rng.standard_normal(scenario.n)
    return Dataset(_records("h", X, y, sigma), "heteroscedastic")


def gen_multi_annotator(scenario: SyntheticScenario) -> Dataset:
    if scenario.annotators < 2:
        raise ValueError("need at least 2 annotators")
    rng = np.random.default_rng(scenario.seed)
    X = rng.uniform(-1.0, 1.0, (scenario.n, scenario.d))
    tags = None
    if scenario.strata_sigmas is not None:
        high = rng.random(scenario.n) < 0.5
        X[:, -1] = np.where(high, 1.0, -1.0)
        sigma = np.where(high, scenario.strata_sigmas[1], scenario.strata_sigmas[0])
        tags = ["high" if h else "low" for h in high]
    else:
        sigma = scenario.noise_sigma(X)
    scores = label_function(X)[:, None] + sigma[:, None] * rng.standard_normal((scenario.n, scenario.annotators))
    y = scores.mean(axis=1)
    return Dataset(_records("m", X, y, sigma, noise_tags=tags, annotators=scores), "multi_annotator")


def gen_domain_shift(scenario: SyntheticScenario) -> tuple[Dataset, Dataset]:
    """In-domain data plus an out-of-domain copy translated by ``shift``.

    The shift direction is a random unit vector orthogonal to ``x_0`` and the
    OOD noise scale is taken from the untranslated point, so the noise
    distribution is the same in both domains while the labels follow ``f``
    at the translated location.
    """
    rng = np.random.default_rng(scenario.seed)
    n_ood = scenario.n_ood or scenario.n
    X_in = rng.uniform(-1.0, 1.0, (scenario.n, scenario.d))
    sigma_in = scenario.noise_sigma(X_in)
    y_in = label_function(X_in) + sigma_in * rng.standard_normal(scenario.n)

    direction = rng.standard_normal(scenario.d)
    if scenario.d > 1:
        direction[0] = 0.0
    direction /= np.linalg.norm(direction)
    base = rng.uniform(-1.0, 1.0, (n_ood, scenario.d))
    sigma_ood = scenario.noise_sigma(base)
    X_ood = base + scenario.shift * direction
    y_ood = label_function(X_ood) + sigma_ood * rng.standard_normal(n_ood)
    return (Dataset(_records("in", X_in, y_in, sigma_in, "in"), "in_domain"),
            Dataset(_records("ood", X_ood, y_ood, sigma_ood, "ood"), "ood"))


def pair_key(record: SegmentRecord) -> str:
    return record.id.rsplit("/", 1)[0]


def gen_reference_pairs(scenario: SyntheticScenario) -> Dataset:
    """Items emitted twice, once with a clean and once with a noisy reference.

    The ``ref_block`` trailing features describe the reference; their mean is
    offset by ``+/- log(noise_ratio) / 2`` between the two variants, so a ratio
    of 1 makes the variants identically distributed. Ids are ``p<i>/clean`` and
    ``p<i>/noisy``.
    """
    rng = np.random.default_rng(scenario.seed)
    n, d, r = scenario.n, scenario.d, scenario.ref_block
    content = rng.uniform(-1.0, 1.0, (n, d))
    fx = label_function(content)
    offset = 0.5 * math.log(scenario.noise_ratio)
    sig_clean = scenario.clean_sigma
    sig_noisy = scenario.noise_ratio * scenario.clean_sigma
    records = []
    for i in range(n):
        for tag, sign, sig in (("clean", -1.0, sig_clean), ("noisy", 1.0, sig_noisy)):
            block = rng.uniform(-1.0, 1.0, r) + sign * offset
            records.append(SegmentRecord(
                id=f"p{i}/{tag}",
                features=tuple(float(v) for v in np.concatenate([content[i], block])),
                gold_score=float(fx[i] + sig * rng.standard_normal()),
                noise_tag=f"ref_{'good' if tag == 'clean' else 'bad'}",
                true_sigma=float(sig),
            ))
    return Dataset(records, "reference_pairs")


def generate(scenario: SyntheticScenario) -> Dataset:
    """Single-dataset view of any scenario (domain-shift halves are concatenated)."""
    if scenario.kind == "heteroscedastic":
        return gen_heteroscedastic(scenario)
    if scenario.kind == "multi_annotator":
        return gen_multi_annotator(scenario)
    if scenario.kind == "domain_shift":
        ind, ood = gen_domain_shift(scenario)
        return ind.concat(ood, "domain_shift")
    return gen_reference_pairs(scenario)


# ---------------------------------------------------------------------------
# files


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in dataset.records:
            fh.write(json.dumps(r.to_json(), allow_nan=False) + "\n")


def _parse_record(obj, lineno: int, path) -> SegmentRecord:
    where = f"{path}:{lineno}"
    if not isinstance(obj, dict):
        raise DatasetError(f"{where}: expected a JSON object")
    unknown = sorted(set(obj) - set(RECORD_FIELDS))
    if unknown:
        raise DatasetError(f"{where}: unknown fields {unknown}")
    for req in ("id", "features", "gold_score"):
        if req not in obj:
            raise DatasetError(f"{where}: missing field {req!r}")

    def _num(v, what):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise DatasetError(f"{where}: {what} must be a finite number")
        return float(v)

    if not isinstance(obj["id"], str):
        raise DatasetError(f"{where}: id must be a string")
    feats = obj["features"]
    if not isinstance(feats, list) or not feats:
        raise DatasetError(f"{where}: features must be a non-empty number array")
    ann = obj.get("annotator_scores")
    if ann is not None:
        if not isinstance(ann, list) or len(ann) < 2:
            raise DatasetError(f"{where}: annotator_scores must hold >= 2 numbers")
        ann = tuple(_num(v, "annotator score") for v in ann)
    sigma = obj.get("true_sigma")
    if sigma is not None:
        sigma = _num(sigma, "true_sigma")
        if sigma < 0:
            raise DatasetError(f"{where}: true_sigma must be >= 0")
    for key in ("domain_tag", "noise_tag"):
        if obj.get(key) is not None and not isinstance(obj[key], str):
            raise DatasetError(f"{where}: {key} must be a string")
    return SegmentRecord(
        id=obj["id"],
        features=tuple(_num(v, "feature") for v in feats),
        gold_score=_num(obj["gold_score"], "gold_score"),
        annotator_scores=ann,
        domain_tag=obj.get("domain_tag") or "in",
        noise_tag=obj.get("noise_tag"),
        true_sigma=sigma,
    )


def load_dataset(path: str | Path) -> Dataset:
    records = []
    dim = None
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            rec = _parse_record(obj, lineno, path)
            if dim is None:
                dim = len(rec.features)
            elif len(rec.features) != dim:
                raise DatasetError(f"{path}:{lineno}: feature dimension {len(rec.features)} != {dim}")
            if rec.id in seen:
                raise DatasetError(f"{path}:{lineno}: duplicate id {rec.id!r} (first on line {seen[rec.id]})")
            seen[rec.id] = lineno
            records.append(rec)
    try:
        return Dataset(records, Path(path).stem)
    except DatasetError as exc:
        raise DatasetError(f"{path}: {exc}") from None
