"""Genetic-algorithm hyperparameter search.

Tournament selection (size 3), uniform crossover, per-gene mutation with
Gaussian jitter for continuous parameters and resampling for integer or
categorical ones, elitism of one. Fitness is minimized; values may be
floats or tuples (compared lexicographically, ties broken by evaluation
order).
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .predictor import LstmHyperparams, init_model, loss_and_gradients, train

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# search space


@dataclass
class ContinuousParam:
    name: str
    lo: float
    hi: float

    def sample(self, rng):
        return float(rng.uniform(self.lo, self.hi))

    def mutate(self, value, rng):
        jitter = rng.normal(0.0, 0.1 * (self.hi - self.lo))
        return float(min(max(value + jitter, self.lo), self.hi))

    def contains(self, value):
        return self.lo <= value <= self.hi


@dataclass
class IntegerParam:
    name: str
    lo: int
    hi: int

    def sample(self, rng):
        return int(rng.integers(self.lo, self.hi + 1))

    def mutate(self, value, rng):
        return self.sample(rng)

    def contains(self, value):
        return self.lo <= value <= self.hi and float(value).is_integer()


@dataclass
class CategoricalParam:
    name: str
    choices: tuple

    def sample(self, rng):
        return self.choices[int(rng.integers(len(self.choices)))]

    def mutate(self, value, rng):
        return self.sample(rng)

    def contains(self, value):
        return value in self.choices


@dataclass
class SearchSpace:
    params: list

    def __post_init__(self):
        if not self.params:
            raise ConfigError("search space is empty")
        for p in self.params:
            if isinstance(p, (ContinuousParam, IntegerParam)) and not p.lo < p.hi:
                raise ConfigError(f"empty domain for {p.name}")
            if isinstance(p, CategoricalParam) and not p.choices:
                raise ConfigError(f"empty choices for {p.name}")

    def sample(self, rng):
        return {p.name: p.sample(rng) for p in self.params}

    def contains(self, genome):
        return all(p.contains(genome[p.name]) for p in self.params)

    def names(self):
        return [p.name for p in self.params]


def drift_search_space():
    """Default search ranges for the drift-control parameters."""
    return SearchSpace([
        ContinuousParam("a_th", 1e-6, 0.1),
        ContinuousParam("d_th", 1e-6, 0.08),
        IntegerParam("sliding_window", 100, 600),
        IntegerParam("adaptive_window_max", 400, 4000),
    ])


def lstm_search_space():
    """Default search ranges for the predictor hyperparameters."""
    return SearchSpace([
        IntegerParam("epochs", 20, 100),
        ContinuousParam("learning_rate", 0.0001, 0.01),
        CategoricalParam("optimizer", ("adam", "sgd")),
        CategoricalParam("activation", ("relu", "tanh")),
        CategoricalParam("loss", ("mse", "mae")),
        IntegerParam("batch_size", 10, 50),
    ])


# ---------------------------------------------------------------------------
# the optimizer


@dataclass
class GaSettings:
    population: int = 70
    crossover_rate: float = 0.7
    mutation_rate: float = 0.15
    max_time: int = 50  # generation budget
    seed: int = 0

    def validate(self):
        if self.population < 2:
            raise ConfigError("population must be >= 2")
        for name in ("crossover_rate", "mutation_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.max_time < 0:
            raise ConfigError("max_time must be >= 0")
        return self


@dataclass
class Candidate:
    genome: dict
    fitness: object = None

    @property
    def evaluated(self):
        return self.fitness is not None


@dataclass
class GaResult:
    best_genome: dict
    best_fitness: object
    history: list = field(default_factory=list)  # (gen, best, mean, genome)
    evaluations: int = 0


def _fitness_key(fitness):
    """Lift scalars/tuples into a NaN-free tuple for comparison."""
    values = fitness if isinstance(fitness, tuple) else (fitness,)
    return tuple(math.inf if (isinstance(v, float) and math.isnan(v)) else v
                 for v in values)


def ga_optimize(space, fitness_fn, settings):
    """Minimize fitness_fn over the space; deterministic under the seed."""
    settings.validate()
    rng = np.random.default_rng(settings.seed)
    evaluations = 0

    def evaluate(cand):
        nonlocal evaluations
        fitness = fitness_fn(cand.genome)
        evaluations += 1
        key = _fitness_key(fitness)
        if any(isinstance(v, float) and math.isinf(v) for v in key):
            logger.warning("non-finite fitness for genome %s", cand.genome)
        cand.fitness = key
        return cand

    population = [evaluate(Candidate(space.sample(rng)))
                  for _ in range(settings.population)]
    best = min(population, key=lambda c: c.fitness)
    history = [(0, best.fitness, _mean_fitness(population), dict(best.genome))]

    def tournament():
        picks = rng.integers(len(population), size=3)
        return min((population[int(p)] for p in picks), key=lambda c: c.fitness)

    for gen in range(1, settings.max_time + 1):
        nxt = [Candidate(dict(best.genome), best.fitness)]  # elitism of 1
        while len(nxt) < settings.population:
            a = tournament()
            b = tournament()
            ga, gb = dict(a.genome), dict(b.genome)
            if rng.random() < settings.crossover_rate:
                for p in space.params:
                    if rng.random() < 0.5:
                        ga[p.name], gb[p.name] = gb[p.name], ga[p.name]
            for child in (ga, gb):
                for p in space.params:
                    if rng.random() < settings.mutation_rate:
                        child[p.name] = p.mutate(child[p.name], rng)
                if len(nxt) < settings.population:
                    nxt.append(evaluate(Candidate(child)))
        population = nxt
        gen_best = min(population, key=lambda c: c.fitness)
        if gen_best.fitness < best.fitness:
            best = gen_best
        history.append((gen, best.fitness, _mean_fitness(population),
                        dict(best.genome)))
    raw = best.fitness[0] if len(best.fitness) == 1 else best.fitness
    return GaResult(best_genome=dict(best.genome), best_fitness=raw,
                    history=history, evaluations=evaluations)


def _mean_fitness(population):
    primary = [c.fitness[0] for c in population]
    finite = [v for v in primary if math.isfinite(v)]
    return float(np.mean(finite)) if finite else math.inf


# ---------------------------------------------------------------------------
# fitness functions


def decode_drift_genome(genome):
    """Genome -> DriftConfig, verbatim values (lossless for table optima)."""
    from .drift import DriftConfig

    return DriftConfig(
        a_th=float(genome["a_th"]),
        d_th=float(genome["d_th"]),
        sliding_window=int(genome["sliding_window"]),
        adaptive_window_max=int(genome["adaptive_window_max"]),
    ).validate()


def decode_lstm_genome(genome, base=None):
    """Genome -> LstmHyperparams; rejects values outside the search ranges."""
    base = base or LstmHyperparams()
    hp = LstmHyperparams(
        epochs=int(genome["epochs"]),
        learning_rate=float(genome["learning_rate"]),
        optimizer=genome["optimizer"],
        activation=genome["activation"],
        loss=genome["loss"],
        batch_size=int(genome["batch_size"]),
        hidden_units=base.hidden_units,
        num_layers=int(genome.get("num_layers", base.num_layers)),
        time_step=base.time_step,
        weight_decay=base.weight_decay,
        seed=base.seed,
    )
    return hp.validate_ranges()


def evaluate_realtimeoaw_config(genome, engine, stream, start_index, labels=None):
    """Overall anomaly rate of a full detection+adaptation pass.

    Returns (anomaly rate, retrain count); pipeline failures map to +inf.
    """
    try:
        drift_config = decode_drift_genome(genome)
        result = engine.run_stream(stream, start_index=start_index,
                                   drift_config=drift_config, labels=labels)
    except Exception as exc:  # noqa: BLE001 - fitness must stay total
        logger.warning("pipeline failed for genome %s: %s", genome, exc)
        return (math.inf, math.inf)
    flagged = sum(1 for v in result.verdicts if v.is_anomalous)
    scored = sum(1 for v in result.verdicts if v.sources_used > 0)
    ar = flagged / scored if scored else math.inf
    return (ar, float(len(result.retrain_indices)))


def evaluate_lstm_config(genome, train_pairs, val_pairs, input_dim, horizon,
                         target_dim):
    """Validation prediction loss of a freshly trained model."""
    train_ctx, train_tgt = train_pairs
    val_ctx, val_tgt = val_pairs
    if len(train_ctx) == 0 or len(val_ctx) == 0:
        raise ConfigError("train and validation splits must be non-empty")
    hp = decode_lstm_genome(genome)
    model = init_model(hp, input_dim, horizon, target_dim)
    try:
        result = train(model, train_ctx, train_tgt, hp)
        val_loss, _ = loss_and_gradients(
            result.model, np.asarray(val_ctx), np.asarray(val_tgt),
            LstmHyperparams(loss=hp.loss, weight_decay=0.0),
        )
    except Exception as exc:  # noqa: BLE001
        logger.warning("training failed for genome %s: %s", genome, exc)
        return math.inf
    return float(val_loss) if math.isfinite(val_loss) else math.inf
