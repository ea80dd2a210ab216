"""Evaluation protocol: F-Score over binary summaries, rank correlations,
and the per-annotator overlap matrix.

The dataset F-Score follows the two-level averaging protocol: per video, the
machine summary for each (script, reference summary) pair is scored against
that pair's labels and the per-pair scores are averaged; the dataset score is
the mean over videos. Machine summaries are the top-15% scoring frames.

Rank correlations (generic mode) compare one score vector per video with the
averaged reference labels: Kendall tau-b and Spearman rho, both tie-aware.
Videos where either input is entirely tied have no defined correlation; they
return None and are excluded from the averages, with the exclusion count
reported on the result.

Evaluation is decoupled from the network through a ``score_fn(X, Y) ->
scores`` callable, so oracle scorers and trained models run the identical
protocol path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .datasets import DatasetManifest, LoadedVideo, load_split, load_video
from .errors import ManifestError
from .selection import select_top_fraction

__all__ = [
    "TOP_FRACTION",
    "fscore_binary",
    "kendall_tau_b",
    "spearman_rho",
    "EvalRecord",
    "EvalResult",
    "evaluate_script_driven",
    "evaluate_generic",
    "OverlapMatrix",
    "overlap_matrix",
]

TOP_FRACTION = 0.15


def fscore_binary(pred: np.ndarray, gt: np.ndarray) -> float:
    """F-Score (%) between two binary frame selections; 0 when disjoint."""
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    g = np.asarray(gt, dtype=np.float64).reshape(-1)
    if p.shape != g.shape:
        raise ValueError(f"length mismatch: {p.shape[0]} vs {g.shape[0]}")
    inter = float((p * g).sum())
    if inter == 0.0:
        return 0.0
    # 200*P*R/(P+R) reduced to counts: exactly symmetric, one rounding.
    return 200.0 * inter / (float(p.sum()) + float(g.sum()))


def _pair_signs(x: np.ndarray) -> np.ndarray:
    i, j = np.triu_indices(x.shape[0], 1)
    return np.sign(x[j] - x[i])


def kendall_tau_b(a, b) -> float | None:
    """Tie-corrected Kendall rank correlation; None when either input is all ties.

    tau_b = (C - D) / sqrt((T0 - T_a) (T0 - T_b)), with C/D the concordant and
    discordant pair counts, T0 = n(n-1)/2, and T_a/T_b the per-input tied-pair
    counts. Quadratic pair enumeration; fine at per-video scale.
    """
    x = np.asarray(a, dtype=np.float64).reshape(-1)
    y = np.asarray(b, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")
    n = x.shape[0]
    if n < 2:
        raise ValueError("rank correlation needs at least 2 values")
    sx = _pair_signs(x)
    sy = _pair_signs(y)
    t0 = n * (n - 1) // 2
    ties_x = int((sx == 0).sum())
    ties_y = int((sy == 0).sum())
    if ties_x == t0 or ties_y == t0:
        return None
    c_minus_d = float((sx * sy).sum())
    return c_minus_d / float(np.sqrt((t0 - ties_x) * (t0 - ties_y)))


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with tied values assigned the mean of their rank range."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.shape[0], dtype=np.float64)
    i = 0
    while i < x.shape[0]:
        j = i
        while j + 1 < x.shape[0] and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman_rho(a, b) -> float | None:
    """Pearson correlation of average ranks; None when either rank set is constant."""
    x = np.asarray(a, dtype=np.float64).reshape(-1)
    y = np.asarray(b, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < 2:
        raise ValueError("rank correlation needs at least 2 values")
    rx = _average_ranks(x) - (x.shape[0] + 1) / 2.0
    ry = _average_ranks(y) - (y.shape[0] + 1) / 2.0
    denom = float(np.sqrt((rx * rx).sum() * (ry * ry).sum()))
    if denom == 0.0:
        return None
    return float((rx * ry).sum()) / denom


# ---------------------------------------------------------------------------
# protocol


@dataclass
class EvalRecord:
    video_id: str
    per_summary: list[float]
    fscore: float
    tau: float | None = None
    rho: float | None = None


@dataclass
class EvalResult:
    split: str
    mode: str
    fscore: float
    tau: float | None
    rho: float | None
    records: list[EvalRecord] = field(default_factory=list)
    degenerate_tau: int = 0
    degenerate_rho: int = 0

    def to_json(self) -> str:
        return json.dumps({
            "split": self.split,
            "mode": self.mode,
            "fscore": self.fscore,
            "tau": self.tau,
            "rho": self.rho,
            "videos": [
                {"id": r.video_id, "fscore": r.fscore, "per_summary": r.per_summary,
                 "tau": r.tau, "rho": r.rho}
                for r in self.records
            ],
        }, indent=1)


def _loaded(manifest: DatasetManifest, split: str, cache) -> list[LoadedVideo]:
    videos = load_split(manifest, split, cache)
    if not videos:
        raise ManifestError(f"split {split!r} is empty")
    return videos


def evaluate_script_driven(score_fn, manifest: DatasetManifest, split: str,
                           fraction: float = TOP_FRACTION,
                           cache=None) -> EvalResult:
    """Per (script, reference) pair: score, select top fraction, F-Score."""
    records = []
    for v in _loaded(manifest, split, cache):
        per = []
        for s in v.summaries:
            sel = select_top_fraction(score_fn(v.frames, s.script), fraction)
            per.append(fscore_binary(sel, s.labels))
        records.append(EvalRecord(video_id=v.id, per_summary=per,
                                  fscore=float(np.mean(per))))
    return EvalResult(split=split, mode="script_driven",
                      fscore=float(np.mean([r.fscore for r in records])),
                      tau=None, rho=None, records=records)


def evaluate_generic(score_fn, manifest: DatasetManifest, split: str,
                     fraction: float = TOP_FRACTION, cache=None) -> EvalResult:
    """One description-conditioned prediction per video, scored against every
    reference summary; rank correlations against the averaged references."""
    from .training import average_ground_truth

    records = []
    n_deg_tau = n_deg_rho = 0
    for v in _loaded(manifest, split, cache):
        if v.description is None:
            raise ManifestError(f"video {v.id!r}: generic evaluation needs a description embedding")
        scores = score_fn(v.frames, v.description)
        sel = select_top_fraction(scores, fraction)
        per = [fscore_binary(sel, s.labels) for s in v.summaries]
        avg = average_ground_truth([s.labels for s in v.summaries])
        tau = kendall_tau_b(scores, avg)
        rho = spearman_rho(scores, avg)
        n_deg_tau += tau is None
        n_deg_rho += rho is None
        records.append(EvalRecord(video_id=v.id, per_summary=per,
                                  fscore=float(np.mean(per)), tau=tau, rho=rho))
    taus = [r.tau for r in records if r.tau is not None]
    rhos = [r.rho for r in records if r.rho is not None]
    return EvalResult(
        split=split, mode="generic",
        fscore=float(np.mean([r.fscore for r in records])),
        tau=float(np.mean(taus)) if taus else None,
        rho=float(np.mean(rhos)) if rhos else None,
        records=records, degenerate_tau=n_deg_tau, degenerate_rho=n_deg_rho,
    )


# ---------------------------------------------------------------------------
# overlap analysis


@dataclass
class OverlapMatrix:
    video_ids: list[str]
    values: np.ndarray   # (videos, annotators), F-Score percentages

    def to_csv(self) -> str:
        cols = self.values.shape[1]
        lines = ["video_id," + ",".join(str(j + 1) for j in range(cols))]
        for vid, row in zip(self.video_ids, self.values):
            lines.append(vid + "," + ",".join(f"{x:.2f}" for x in row))
        return "\n".join(lines) + "\n"


def overlap_matrix(score_fn, manifest: DatasetManifest, video_ids: list[str],
                   mode: str, fraction: float = TOP_FRACTION,
                   cache=None) -> OverlapMatrix:
    """Per-video, per-annotator F-Scores.

    script_driven: entry (v, j) compares the summary generated from script j
    with reference j (per-annotator conditioning). generic: one description-
    conditioned summary per video compared with every reference.
    """
    if mode not in ("script_driven", "generic"):
        raise ValueError(f"mode must be script_driven or generic, got {mode!r}")
    by_id = {e.id: e for e in manifest.videos}
    rows = []
    n_annotators = None
    for vid in video_ids:
        if vid not in by_id:
            raise ManifestError(f"video {vid!r} is not in the manifest")
        if cache is not None and vid in cache:
            v = cache[vid]
        else:
            v = load_video(manifest, by_id[vid])
            if cache is not None:
                cache[vid] = v
        if n_annotators is None:
            n_annotators = len(v.summaries)
        elif len(v.summaries) != n_annotators:
            raise ManifestError(
                f"video {vid!r} has {len(v.summaries)} summaries, expected {n_annotators}"
            )
        if mode == "generic":
            if v.description is None:
                raise ManifestError(f"video {vid!r}: generic mode needs a description embedding")
            sel = select_top_fraction(score_fn(v.frames, v.description), fraction)
            row = [fscore_binary(sel, s.labels) for s in v.summaries]
        else:
            row = []
            for s in v.summaries:
                sel = select_top_fraction(score_fn(v.frames, s.script), fraction)
                row.append(fscore_binary(sel, s.labels))
        rows.append(row)
    return OverlapMatrix(video_ids=list(video_ids), values=np.array(rows, dtype=np.float64))
