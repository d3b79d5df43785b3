"""Retrieval metrics over ranked code lists, plus experiment drivers.

Relevance is shared-label: a retrieved item counts when its label set
intersects the query's.  Average precision is the mean, over relevant
ranks, of precision at that rank; queries with no relevant database
item are excluded from every aggregate (with a logged warning) since
their recall is undefined.  Rankings come from the Hamming index, so
tie order is ascending id and all metrics are deterministic.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .datatypes import CodeSet, LabelSet, ValidationError
from .networks import encode_images
from .neighborhood import build_neighborhood
from .retrieval import HammingIndex
from .synthetic import make_synthetic_dataset
from .training import TrainResult, train

logger = logging.getLogger(__name__)


def relevance(query_id: int, item_id: int, labels: LabelSet) -> bool:
    return labels.share_label(query_id, item_id)


def average_precision(flags, k=None) -> float:
    """Mean precision over the relevant ranks within the top k.

    flags is the relevance of each ranked item, best first.  k = None
    scores the whole list.  No relevant item in the window scores 0.
    """
    rel = np.asarray(flags, dtype=bool)
    if rel.ndim != 1 or rel.size == 0:
        raise ValidationError("relevance flags must be a non-empty 1-d sequence")
    if k is not None:
        if not 1 <= k <= rel.size:
            raise ValidationError(f"cap k={k} outside [1, {rel.size}]")
        rel = rel[:k]
    pos = np.flatnonzero(rel)
    if pos.size == 0:
        return 0.0
    hits = np.cumsum(rel)
    return float(np.mean(hits[pos] / (pos + 1)))


def precision_at_k(flags, k: int) -> float:
    rel = np.asarray(flags, dtype=bool)
    if not 1 <= k <= rel.size:
        raise ValidationError(f"K={k} outside [1, {rel.size}]")
    return float(rel[:k].sum() / k)


def pr_points(flags):
    """(recall, precision) at every rank; needs at least one relevant item."""
    rel = np.asarray(flags, dtype=bool)
    hits = np.cumsum(rel)
    total = hits[-1]
    if total == 0:
        raise ValidationError("pr curve undefined with no relevant items")
    ranks = np.arange(1, rel.size + 1)
    return hits / total, hits / ranks


@dataclass(frozen=True)
class EvalReport:
    map: float
    map_at: object
    precision_at: dict
    pr_curve: tuple
    per_query_ap: dict
    excluded_queries: tuple
    relevance_rule: str = "shared-label"
    tie_rule: str = "distance-then-id"

    def __post_init__(self):
        if not 0.0 <= self.map <= 1.0:
            raise ValidationError(f"map {self.map} outside [0, 1]")
        for k, v in self.precision_at.items():
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"precision@{k} = {v} outside [0, 1]")
        recalls = [r for r, _ in self.pr_curve]
        if any(b < a for a, b in zip(recalls, recalls[1:])):
            raise ValidationError("pr curve recall must be non-decreasing")

    def to_json(self) -> str:
        doc = {
            "format": "ganhash-eval",
            "version": 1,
            "map": self.map,
            "map_at": self.map_at,
            "precision_at": {str(k): v for k, v in self.precision_at.items()},
            "per_query_ap": {str(q): v for q, v in self.per_query_ap.items()},
            "excluded_queries": [int(q) for q in self.excluded_queries],
            "pr_curve": [[r, p] for r, p in self.pr_curve],
            "relevance_rule": self.relevance_rule,
            "tie_rule": self.tie_rule,
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    def pr_csv(self) -> str:
        lines = ["rank,recall,precision"]
        lines += [f"{i + 1},{r!r},{p!r}" for i, (r, p) in enumerate(self.pr_curve)]
        return "\n".join(lines) + "\n"


def evaluate(
    db_codes: CodeSet,
    query_codes: CodeSet,
    labels: LabelSet,
    precision_ks=(1, 5, 10),
    map_at=None,
) -> EvalReport:
    """Rank every query against the database and aggregate the metrics."""
    if db_codes.n_bits != query_codes.n_bits:
        raise ValidationError(
            f"code lengths differ: database {db_codes.n_bits}, queries {query_codes.n_bits}"
        )
    index = HammingIndex(db_codes)
    db_ids = set(int(i) for i in db_codes.ids)

    per_query_ap = {}
    excluded = []
    flag_rows = []
    for i in range(len(query_codes.ids)):
        qid = int(query_codes.ids[i])
        ranked = index.rank_all(query_codes.words[i])
        ids = ranked.item_ids
        if qid in db_ids:
            ids = ids[ids != qid]  # a query never retrieves itself
        q_labels = labels.labels_for(qid)
        flags = np.fromiter(
            (bool(q_labels & labels.labels_for(int(j))) for j in ids),
            dtype=bool,
            count=len(ids),
        )
        if not flags.any():
            excluded.append(qid)
            logger.warning("query %d has no relevant database item; excluded", qid)
            continue
        per_query_ap[qid] = average_precision(flags, map_at)
        flag_rows.append(flags)

    if not per_query_ap:
        raise ValidationError("every query lacks relevant items; nothing to evaluate")

    depth = min(len(f) for f in flag_rows)
    for k in precision_ks:
        if not 1 <= k <= depth:
            raise ValidationError(f"precision cutoff {k} exceeds ranking depth {depth}")
    prec = {
        int(k): float(np.mean([precision_at_k(f, k) for f in flag_rows])) for k in precision_ks
    }
    curves = [pr_points(f) for f in flag_rows]
    mean_recall = np.mean([c[0][:depth] for c in curves], axis=0)
    mean_precision = np.mean([c[1][:depth] for c in curves], axis=0)
    pr_curve = tuple((float(r), float(p)) for r, p in zip(mean_recall, mean_precision))

    return EvalReport(
        map=float(np.mean(list(per_query_ap.values()))),
        map_at=map_at,
        precision_at=prec,
        pr_curve=pr_curve,
        per_query_ap=per_query_ap,
        excluded_queries=tuple(excluded),
    )


def mean_ap(db_codes, query_codes, labels, map_at=None) -> float:
    return evaluate(db_codes, query_codes, labels, precision_ks=(1,), map_at=map_at).map


def random_code_baseline(
    db_codes: CodeSet, query_codes: CodeSet, labels: LabelSet, seed=0, **kw
) -> EvalReport:
    """Same protocol with codes drawn uniformly; the no-information floor."""
    from .continuation import pack_codes

    rng = np.random.default_rng(seed)
    bits = db_codes.n_bits

    def scramble(cs):
        raw = rng.choice((-1, 1), size=(len(cs.ids), bits)).astype(np.int8)
        return pack_codes(cs.ids, raw, bits)

    return evaluate(scramble(db_codes), scramble(query_codes), labels, **kw)


@dataclass
class DeskRun:
    """One end-to-end experiment: train, encode, rank, score."""

    report: EvalReport
    baseline: EvalReport
    train_result: TrainResult
    train_seconds: float
    db_codes: CodeSet = field(repr=False, default=None)
    query_codes: CodeSet = field(repr=False, default=None)


def desk_experiment(
    cfg: RunConfig,
    n_train=600,
    n_query=60,
    n_classes=3,
    image_shape=(1, 16, 16),
    data_seed=0,
    precision_ks=(1, 5, 10),
    out_dir=None,
) -> DeskRun:
    """Synthetic retrieval benchmark small enough for a laptop CPU.

    The train split doubles as the search database; queries are held
    out.  The pair matrix comes from feature-space neighbors, so labels
    are used only for scoring.
    """
    ds = make_synthetic_dataset(
        seed=data_seed, n_items=n_train + n_query, n_classes=n_classes, image_shape=image_shape
    )
    train_ds, query_ds = ds.split(n_train)
    s = build_neighborhood(train_ds.features, cfg.k1, cfg.k2)
    t0 = time.perf_counter()
    result = train(cfg, train_ds.images, s, out_dir=out_dir)
    train_seconds = time.perf_counter() - t0
    db_codes = encode_images(result.model, train_ds.images)
    query_codes = encode_images(result.model, query_ds.images)
    report = evaluate(db_codes, query_codes, ds.labels, precision_ks=precision_ks)
    baseline = random_code_baseline(
        db_codes, query_codes, ds.labels, seed=cfg.seed, precision_ks=precision_ks
    )
    return DeskRun(
        report=report,
        baseline=baseline,
        train_result=result,
        train_seconds=train_seconds,
        db_codes=db_codes,
        query_codes=query_codes,
    )


ABLATION_MODES = {
    "pair_only": (False, False),
    "pair_content": (True, False),
    "pair_adversarial": (False, True),
    "full": (True, True),
}


def ablation_run(
    base_cfg: RunConfig,
    modes=("pair_only", "full"),
    activations=("app",),
    seeds=(0,),
    **desk_kw,
) -> list:
    """Train one cell per (mode, activation, seed); zero weights turn parts off."""
    rows = []
    for mode in modes:
        if mode not in ABLATION_MODES:
            raise ValidationError(f"unknown ablation mode {mode!r}")
        use_content, use_adversarial = ABLATION_MODES[mode]
        for act in activations:
            for seed in seeds:
                cfg = base_cfg.replace(
                    lambda1=base_cfg.lambda1 if use_content else 0.0,
                    lambda2=base_cfg.lambda2 if use_adversarial else 0.0,
                    activation=act,
                    seed=seed,
                )
                run = desk_experiment(cfg, **desk_kw)
                rows.append(
                    {
                        "mode": mode,
                        "activation": act,
                        "code_bits": cfg.code_bits,
                        "seed": seed,
                        "map": run.report.map,
                    }
                )
    return rows


def median_map(rows, mode, activation) -> float:
    vals = [r["map"] for r in rows if r["mode"] == mode and r["activation"] == activation]
    if not vals:
        raise ValidationError(f"no ablation rows for ({mode}, {activation})")
    return float(np.median(vals))


def ablation_table(rows) -> str:
    header = "mode,activation,code_bits,seed,map"
    lines = [header]
    for r in rows:
        lines.append(
            f"{r['mode']},{r['activation']},{r['code_bits']},{r['seed']},{r['map']!r}"
        )
    return "\n".join(lines) + "\n"
