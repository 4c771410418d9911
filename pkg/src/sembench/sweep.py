"""Grid search over learning rate, temperature, batch size, and pooling.

Every grid cell trains a freshly initialized model for a fixed step budget,
evaluating at a fixed cadence; trials are independent and deterministic given
the shared seed, so they can run in any order or in parallel. Failed trials
(numeric blowups, e.g. at extreme temperatures) are recorded and skipped, not
fatal. Results land in sweep.csv plus a best-per-dimension summary.md.
"""

from __future__ import annotations

import itertools
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

from .contrastive import TrainConfig, train, write_loss_trace
from .corpus import TokenizedCorpus
from .encoder import EncoderConfig, init_model
from .errors import GridError, NumericError, SembenchError
from .pooling import parse_method
from .sts import EvalReport, StsDataset, evaluate

_GRID_KEYS = {"learning_rate", "temperature", "batch_size", "pooling",
              "steps", "eval_every", "seed"}


@dataclass
class Grid:
    learning_rates: list[float]
    temperatures: list[float]
    batch_sizes: list[int]
    poolings: list[str]
    steps: int
    eval_every: int
    seed: int = 0

    def validate(self) -> None:
        for name, values in (("learning_rate", self.learning_rates),
                             ("temperature", self.temperatures),
                             ("batch_size", self.batch_sizes),
                             ("pooling", self.poolings)):
            if not values:
                raise GridError(f"grid dimension {name!r} is empty")
        if self.steps < 1:
            raise GridError(f"steps must be >= 1, got {self.steps}")
        if self.eval_every < 1 or self.steps < self.eval_every:
            raise GridError(f"need steps >= eval_every >= 1, got "
                            f"steps={self.steps} eval_every={self.eval_every}")


def load_grid(path) -> Grid:
    """Parse a JSON grid file; unknown keys are rejected."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    unknown = set(raw) - _GRID_KEYS
    if unknown:
        raise GridError(f"unknown grid keys: {sorted(unknown)}")
    try:
        grid = Grid(learning_rates=list(raw["learning_rate"]),
                    temperatures=list(raw["temperature"]),
                    batch_sizes=list(raw["batch_size"]),
                    poolings=list(raw["pooling"]),
                    steps=int(raw["steps"]),
                    eval_every=int(raw["eval_every"]),
                    seed=int(raw.get("seed", 0)))
    except KeyError as exc:
        raise GridError(f"grid file missing key {exc.args[0]!r}") from None
    grid.validate()
    return grid


def expand_grid(grid: Grid) -> list[TrainConfig]:
    """Full Cartesian product in lexicographic (lr, tau, batch, pooling) order."""
    grid.validate()
    configs = []
    for lr, tau, batch, pooling in itertools.product(
            grid.learning_rates, grid.temperatures, grid.batch_sizes, grid.poolings):
        configs.append(TrainConfig(temperature=tau, learning_rate=lr,
                                   batch_size=batch, max_steps=grid.steps,
                                   pooling=parse_method(pooling), seed=grid.seed))
    return configs


@dataclass
class TrialResult:
    config: TrainConfig
    reports: list[tuple[int, EvalReport]] = field(default_factory=list)
    best_step: int = 0
    best_average: float = float("-inf")
    failed: bool = False
    error: str = ""
    trace: list[dict] = field(default_factory=list)


def detect_best_step(result: TrialResult) -> int:
    """Checkpoint step with maximal average rho; earliest wins ties."""
    best_step, best = None, float("-inf")
    for step, report in result.reports:
        if report.average > best:
            best_step, best = step, report.average
    return best_step


def run_trial(config: TrainConfig, corpus: TokenizedCorpus,
              datasets: StsDataset | list[StsDataset],
              encoder_config: EncoderConfig, budget: int,
              eval_every: int) -> TrialResult:
    """Train one grid cell, evaluating every eval_every steps.

    A numeric blowup marks the trial failed instead of raising.
    """
    if budget < 1:
        raise GridError(f"budget must be >= 1, got {budget}")
    config = replace(config, max_steps=budget)
    result = TrialResult(config=config)

    def hook(step, model):
        report = evaluate(model, corpus.vocab, datasets, config.pooling,
                          mode="concat", model_id=f"trial-step{step}")
        result.reports.append((step, report))

    try:
        model = init_model(encoder_config, config.seed)
        _, trace = train(model, corpus, config, eval_hook=hook,
                         eval_every=eval_every)
        result.trace = trace
    except (NumericError, FloatingPointError, SembenchError) as exc:
        result.failed = True
        result.error = str(exc)
        return result
    result.best_step = detect_best_step(result)
    result.best_average = max(r.average for _, r in result.reports)
    return result


def _trial_job(args):
    return run_trial(*args)


def run_sweep(grid: Grid, corpus: TokenizedCorpus,
              datasets: StsDataset | list[StsDataset],
              encoder_config: EncoderConfig, jobs: int = 1) -> list[TrialResult]:
    """Run every grid cell; results keep expand_grid order regardless of jobs."""
    configs = expand_grid(grid)
    args = [(cfg, corpus, datasets, encoder_config, grid.steps, grid.eval_every)
            for cfg in configs]
    if jobs <= 1:
        return [run_trial(*a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_trial_job, args))


def _dataset_names(results: list[TrialResult]) -> list[str]:
    for result in results:
        if result.reports:
            return list(result.reports[0][1].per_dataset)
    return []


def emit_sweep_report(results: list[TrialResult], out_dir) -> tuple[str, str]:
    """Write sweep.csv (one row per config x checkpoint) and summary.md."""
    if not results:
        raise GridError("no trial results to report")
    os.makedirs(out_dir, exist_ok=True)
    names = _dataset_names(results)
    csv_path = os.path.join(out_dir, "sweep.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        cols = ["learning_rate", "temperature", "batch_size", "pooling", "seed",
                "step"] + [f"{n}_rho100" for n in names] + ["average_rho100"]
        fh.write(",".join(cols) + "\n")
        for result in results:
            if result.failed:
                continue
            cfg = result.config
            for step, report in result.reports:
                cells = [repr(cfg.learning_rate), repr(cfg.temperature),
                         str(cfg.batch_size), cfg.pooling.name, str(cfg.seed),
                         str(step)]
                cells += [f"{report.rho100(n):.2f}" for n in names]
                cells.append(f"{100.0 * report.average:.2f}")
                fh.write(",".join(cells) + "\n")

    md_path = os.path.join(out_dir, "summary.md")
    ok = [r for r in results if not r.failed and r.reports]
    with open(md_path, "w", encoding="utf-8") as fh:
        fh.write("# Sweep summary\n\n")
        fh.write(f"Trials: {len(results)} ({len(results) - len(ok)} failed)\n\n")
        if ok:
            best = max(ok, key=lambda r: r.best_average)
            fh.write(f"Best overall: average rho*100 = "
                     f"{100.0 * best.best_average:.2f} at step {best.best_step} "
                     f"with lr={best.config.learning_rate}, "
                     f"tau={best.config.temperature}, "
                     f"batch={best.config.batch_size}, "
                     f"pooling={best.config.pooling.name}\n\n")
            fh.write("Best value per swept dimension (by best trial average):\n\n")
            for title, key in (("learning rate", lambda c: c.learning_rate),
                               ("temperature", lambda c: c.temperature),
                               ("batch size", lambda c: c.batch_size),
                               ("pooling", lambda c: c.pooling.name)):
                by_value: dict = {}
                for r in ok:
                    value = key(r.config)
                    if value not in by_value or r.best_average > by_value[value]:
                        by_value[value] = r.best_average
                winner = max(by_value, key=by_value.get)
                fh.write(f"- {title}: {winner} "
                         f"(avg rho*100 = {100.0 * by_value[winner]:.2f})\n")
        for r in results:
            if r.failed:
                fh.write(f"\nFailed: lr={r.config.learning_rate}, "
                         f"tau={r.config.temperature}, "
                         f"batch={r.config.batch_size}, "
                         f"pooling={r.config.pooling.name}: {r.error}\n")
    return csv_path, md_path


def write_trial_trace(result: TrialResult, path) -> None:
    write_loss_trace(result.trace, path, amp=result.config.amp)
