"""Human-normalized benchmark statistics: aggregate scores, profiles, bootstrap CIs."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats


@dataclass
class GameScores:
    random: float
    human: float
    runs: list[float] = field(default_factory=list)


@dataclass
class ScoreTable:
    """Per-game random/human reference scores plus one agent score per run."""

    games: dict[str, GameScores] = field(default_factory=dict)

    def add(self, game: str, random: float, human: float, score: float) -> None:
        entry = self.games.setdefault(game, GameScores(random=random, human=human))
        if entry.random != random or entry.human != human:
            raise ValueError(f"conflicting reference scores for {game!r}")
        if human == random:
            raise ValueError(f"human score equals random score for {game!r}")
        entry.runs.append(score)

    def normalized_runs(self) -> dict[str, np.ndarray]:
        out = {}
        for game, entry in sorted(self.games.items()):
            if not entry.runs:
                raise ValueError(f"no runs recorded for {game!r}")
            out[game] = np.array(
                [hns(s, entry.random, entry.human) for s in entry.runs], dtype=np.float64
            )
        return out

    @classmethod
    def from_csv(cls, path: str | Path) -> "ScoreTable":
        """Load rows with columns game, random, human, run_id, score."""
        table = cls()
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            required = {"game", "random", "human", "run_id", "score"}
            if reader.fieldnames is None or not required.issubset(reader.fieldnames):
                raise ValueError(f"CSV must have columns {sorted(required)}")
            for row in reader:
                table.add(row["game"], float(row["random"]), float(row["human"]), float(row["score"]))
        if not table.games:
            raise ValueError("empty score table")
        return table


@dataclass
class ConfidenceInterval:
    lower: float
    upper: float
    level: float


@dataclass
class AggregateReport:
    mean: float
    median: float
    iqm: float
    optimality_gap: float
    superhuman: int
    intervals: dict[str, ConfidenceInterval] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "mean": self.mean,
            "median": self.median,
            "iqm": self.iqm,
            "optimality_gap": self.optimality_gap,
            "superhuman": self.superhuman,
        }
        for name, ci in self.intervals.items():
            out[f"{name}_ci"] = {"lower": ci.lower, "upper": ci.upper, "level": ci.level}
        return out


def hns(agent: float, random: float, human: float) -> float:
    """Human-normalized score: 0 at random play, 1 at human play."""
    if human == random:
        raise ValueError("human and random scores must differ")
    return (agent - random) / (human - random)


def _flatten(per_game: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate(list(per_game.values()))


def aggregates(table: ScoreTable) -> AggregateReport:
    """Point estimates over a score table.

    Mean and median are taken over per-game mean normalized scores; IQM and
    optimality gap pool the full run x game list since both are nonlinear.
    """
    per_game = table.normalized_runs()
    game_means = np.array([runs.mean() for runs in per_game.values()])
    pooled = _flatten(per_game)
    return AggregateReport(
        mean=float(game_means.mean()),
        median=float(np.median(game_means)),
        iqm=float(stats.trim_mean(pooled, 0.25)),
        optimality_gap=float(np.maximum(0.0, 1.0 - pooled).mean()),
        superhuman=int((game_means >= 1.0).sum()),
    )


def performance_profile(table: ScoreTable, thresholds: Sequence[float]) -> np.ndarray:
    """Fraction of pooled runs strictly above each threshold (non-increasing)."""
    pooled = _flatten(table.normalized_runs())
    taus = np.asarray(thresholds, dtype=np.float64)
    return (pooled[None, :] > taus[:, None]).mean(axis=1)


def probability_of_improvement(table_a: ScoreTable, table_b: ScoreTable) -> float:
    """Mean over games of P(run of A beats run of B), ties counting one half."""
    runs_a = table_a.normalized_runs()
    runs_b = table_b.normalized_runs()
    if set(runs_a) != set(runs_b):
        raise ValueError("tables cover different game sets")
    per_game = []
    for game in runs_a:
        a = runs_a[game][:, None]
        b = runs_b[game][None, :]
        per_game.append(((a > b) + 0.5 * (a == b)).mean())
    return float(np.mean(per_game))


def stratified_bootstrap_ci(
    table: ScoreTable,
    statistic: Callable[[dict[str, np.ndarray]], float],
    resamples: int = 2000,
    level: float = 0.95,
    seed: int = 0,
) -> ConfidenceInterval:
    """Percentile interval from resampling runs independently within each game."""
    if resamples < 1:
        raise ValueError("resamples must be >= 1")
    per_game = table.normalized_runs()
    rng = np.random.default_rng(seed)
    draws = np.empty(resamples)
    for i in range(resamples):
        resampled = {
            game: runs[rng.integers(0, len(runs), size=len(runs))]
            for game, runs in per_game.items()
        }
        draws[i] = statistic(resampled)
    alpha = (1.0 - level) / 2.0
    return ConfidenceInterval(
        lower=float(np.quantile(draws, alpha)),
        upper=float(np.quantile(draws, 1.0 - alpha)),
        level=level,
    )


def mean_statistic(per_game: dict[str, np.ndarray]) -> float:
    return float(np.mean([runs.mean() for runs in per_game.values()]))


def median_statistic(per_game: dict[str, np.ndarray]) -> float:
    return float(np.median([runs.mean() for runs in per_game.values()]))


def iqm_statistic(per_game: dict[str, np.ndarray]) -> float:
    return float(stats.trim_mean(_flatten(per_game), 0.25))


def optimality_gap_statistic(per_game: dict[str, np.ndarray]) -> float:
    return float(np.maximum(0.0, 1.0 - _flatten(per_game)).mean())


_STATISTICS: dict[str, Callable[[dict[str, np.ndarray]], float]] = {
    "mean": mean_statistic,
    "median": median_statistic,
    "iqm": iqm_statistic,
    "optimality_gap": optimality_gap_statistic,
}


def report_with_intervals(
    table: ScoreTable, resamples: int = 2000, level: float = 0.95, seed: int = 0
) -> AggregateReport:
    report = aggregates(table)
    for name, fn in _STATISTICS.items():
        report.intervals[name] = stratified_bootstrap_ci(
            table, fn, resamples=resamples, level=level, seed=seed
        )
    return report
