"""GAN training with transformed branches: Baseline, DA, IDA, MD, DAG and DAG without G augmentation.

Branch 0 always carries the identity transform and doubles as the plain
discriminator ``D``.  With K branches the DAG objectives are

    D:  L_0 + (lambda_u / K) * sum_k L_k
    G:  G_0 + (lambda_v / K) * sum_k G_k

where ``L_k`` is the cross-entropy loss of branch k on T_k(real) and
T_k(fake), and ``G_k`` the generator loss through branch k.  The sums run
over all K branches, identity included, so branch 0 enters with weight
``1 + lambda / K``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import data as ds
from . import transforms as tf
from .autodiff import AdamState, NonFiniteError, Tape, Tensor
from .config import DagConfig
from .models import (
    Generator,
    MlpSpec,
    SharedTrunkDiscriminator,
    SharingMode,
    build_discriminator,
    build_generator,
    discriminate,
)


@dataclass
class Models:
    generator: Generator
    discriminator: SharedTrunkDiscriminator
    transforms: list  # one per branch for DAG/MD; the augmentation set for DA/IDA
    dataset: ds.MixtureDataset
    d_state: AdamState
    g_state: AdamState
    actions: list = field(default_factory=list)  # (matrix, offset) per transform

    def __post_init__(self):
        if not self.actions:
            self.actions = [
                tf.linear_action(t, self.dataset.dim, self.dataset.grid_shape) for t in self.transforms
            ]


@dataclass
class StepLosses:
    total: float
    branches: tuple[float, ...]


def training_transforms(config: DagConfig) -> list:
    if config.mode == "baseline":
        return tf.build_augmentation_set(config.family, 1)
    if config.mode == "md":
        identity = tf.build_augmentation_set(config.family, 1)[0]
        return [identity] * config.k
    return tf.build_augmentation_set(config.family, config.k, n_t=config.n_t, n_c=config.n_c)


def n_heads(config: DagConfig) -> int:
    return config.k if config.mode in ("dag", "dag_no_g", "md") else 1


def make_dataset(config: DagConfig) -> ds.MixtureDataset:
    spec = ds.DatasetSpec(
        kind=config.dataset,
        sigma=config.resolved_sigma,
        n_samples=config.n_samples,
        fraction=config.fraction,
        seed=config.resolved_data_seed,
    )
    return ds.make_dataset(spec)


def build_models(config: DagConfig, rng: np.random.Generator, dataset: ds.MixtureDataset | None = None) -> Models:
    dataset = dataset or make_dataset(config)
    dim = dataset.dim
    g_spec = MlpSpec(
        config.d_z,
        tuple(config.g_hidden),
        dim,
        activation="relu",
        output="linear" if config.dataset == "points" else "sigmoid",
    )
    d_spec = MlpSpec(dim, tuple(config.d_hidden), 1, activation="leaky_relu", output="linear")
    gen = build_generator(g_spec, rng, prior=config.latent)
    disc = build_discriminator(d_spec, n_heads(config), SharingMode(config.sharing), rng)

    def adam():
        return AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2, epsilon=config.epsilon)

    return Models(gen, disc, training_transforms(config), dataset, adam(), adam())


# ----------------------------------------------------------------------------
# objective weights


def branch_weights(config: DagConfig, lam: float, K: int) -> list[float]:
    """Weight of each branch loss in the D (lam=lambda_u) or G (lam=lambda_v) objective."""
    if config.mode in ("dag", "md", "dag_no_g"):
        w = [lam / K] * K
        w[0] += 1.0
        return w
    if config.mode == "ida":
        return [1.0 / K] * K
    return [1.0]


def _g_weights(config: DagConfig, K: int) -> list[float]:
    if config.mode == "dag_no_g":
        return [1.0] + [0.0] * (K - 1)
    return branch_weights(config, config.lambda_v, K)


def _head(config: DagConfig, k: int) -> int:
    return 0 if config.mode in ("ida", "da", "baseline") else k


def _weighted_sum(terms: list[tuple[float, Tensor]]) -> Tensor:
    total = None
    for w, t in terms:
        term = t if w == 1.0 else ad.mul(t, Tensor(w))
        total = term if total is None else ad.add(total, term)
    return total


def _transform_tensor(x: Tensor, action) -> Tensor:
    matrix, offset = action
    y = ad.matmul(x, Tensor(matrix))
    if np.any(offset):
        y = ad.add(y, Tensor(offset))
    return y


# ----------------------------------------------------------------------------
# real batches


def sample_real_batch(config: DagConfig, models: Models, data_rng: np.random.Generator, aug_rng: np.random.Generator) -> np.ndarray:
    """Minibatch from the retained samples; DA draws one transform per example uniformly."""
    pool = models.dataset.samples
    idx = data_rng.integers(0, pool.shape[0], size=config.batch)
    batch = pool[idx]
    if config.mode == "da" and len(models.transforms) > 1:
        which = aug_rng.integers(0, len(models.transforms), size=config.batch)
        out = np.empty_like(batch)
        for j, t in enumerate(models.transforms):
            sel = which == j
            if np.any(sel):
                out[sel] = tf.apply_batch(t, batch[sel], models.dataset.grid_shape)
        batch = out
    return batch


# ----------------------------------------------------------------------------
# discriminator


def discriminator_loss(config: DagConfig, models: Models, real: np.ndarray, fake: np.ndarray):
    """Build the weighted D loss on the active tape; returns (loss, per-branch losses)."""
    d = models.discriminator
    grid = models.dataset.grid_shape
    if config.mode in ("baseline", "da"):
        transforms = models.transforms[:1]
    else:
        transforms = models.transforms
    K = len(transforms)
    lam_weights = branch_weights(config, config.lambda_u, K)
    if real.shape[0] != fake.shape[0]:
        raise ValueError("real and fake batches must have equal size")
    labels = np.concatenate([np.ones((real.shape[0], 1)), np.zeros((fake.shape[0], 1))])
    terms, branch_losses = [], []
    for k, (t, w) in enumerate(zip(transforms, lam_weights)):
        if w == 0.0:
            branch_losses.append(math.nan)
            continue
        head = _head(config, k)
        both = np.concatenate([tf.apply_batch(t, real, grid), tf.apply_batch(t, fake, grid)])
        # mean over the stacked batch is the average of the real and fake terms
        loss_k = ad.mul(ad.bce_from_logits(discriminate(d, head, Tensor(both)), labels), Tensor(2.0))
        branch_losses.append(float(loss_k.values))
        terms.append((w, loss_k))
    return _weighted_sum(terms), branch_losses


def discriminator_gradients(config: DagConfig, models: Models, real: np.ndarray, fake: np.ndarray):
    params = models.discriminator.params
    with Tape() as tape:
        tape.watch(*params)
        loss, branches = discriminator_loss(config, models, real, fake)
    grads = tape.gradient(loss, params)
    return grads, StepLosses(float(loss.values), tuple(branches))


def discriminator_step(config: DagConfig, models: Models, real_batch: np.ndarray, rng: np.random.Generator) -> StepLosses:
    """One Adam step on the discriminator; one fake batch is shared by all branches."""
    z = models.generator.sample_latent(config.batch, rng)
    fake = models.generator.forward(Tensor(z)).values
    grads, losses = discriminator_gradients(config, models, real_batch, fake)
    ad.adam_step(models.discriminator.params, grads, models.d_state)
    _check_params(models.discriminator.params, "discriminator")
    return losses


# ----------------------------------------------------------------------------
# generator


def _branch_g_loss(config: DagConfig, logits: Tensor) -> Tensor:
    if config.g_loss == "non_saturating":
        return ad.bce_from_logits(logits, 1)  # -log D(.)
    return ad.neg(ad.bce_from_logits(logits, 0))  # log(1 - D(.))


def generator_loss(config: DagConfig, models: Models, z: np.ndarray):
    """Weighted G loss on the active tape; returns (loss, fake tensor, per-branch losses)."""
    d = models.discriminator
    if config.mode in ("baseline", "da"):
        n_branches = 1
    else:
        n_branches = len(models.transforms)
    weights = _g_weights(config, n_branches)
    fake = models.generator.forward(Tensor(z))
    terms, branch_losses = [], []
    for k, w in enumerate(weights):
        if w == 0.0:
            branch_losses.append(math.nan)
            continue
        # branch 0 scores the generator output directly, never a transformed copy
        x = fake if k == 0 else _transform_tensor(fake, models.actions[k])
        loss_k = _branch_g_loss(config, discriminate(d, _head(config, k), x))
        branch_losses.append(float(loss_k.values))
        terms.append((w, loss_k))
    return _weighted_sum(terms), fake, branch_losses


def generator_gradients(config: DagConfig, models: Models, z: np.ndarray):
    params = models.generator.params
    with Tape() as tape:
        tape.watch(*params)
        loss, _, branches = generator_loss(config, models, z)
    grads = tape.gradient(loss, params)
    return grads, StepLosses(float(loss.values), tuple(branches))


def generator_step(config: DagConfig, models: Models, rng: np.random.Generator) -> StepLosses:
    z = models.generator.sample_latent(config.batch, rng)
    grads, losses = generator_gradients(config, models, z)
    ad.adam_step(models.generator.params, grads, models.g_state)
    _check_params(models.generator.params, "generator")
    return losses


def _check_params(params, who: str) -> None:
    if not ad.parameters_finite(params):
        raise NonFiniteError(f"{who} parameters became non-finite")


# ----------------------------------------------------------------------------
# training loop


@dataclass
class EvalRow:
    iteration: int
    d_loss: float
    g_loss: float
    d_branch_losses: tuple[float, ...]
    frechet: float
    modes_covered: int
    mode_kl: float
    leakage: float
    samples: np.ndarray = field(repr=False, default=None)


@dataclass
class TrainReport:
    config: DagConfig
    seed: int
    rows: list[EvalRow] = field(default_factory=list)
    models: Models | None = field(default=None, repr=False)
    aborted: str | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def final(self) -> EvalRow:
        return self.rows[-1]


def _streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("init", "data", "latent", "augment", "eval")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(s) for n, s in zip(names, children)}


def leakage_family(config: DagConfig) -> list:
    return tf.build_augmentation_set(config.family, config.k, n_t=config.n_t, n_c=config.n_c)


class _Evaluator:
    def __init__(self, config: DagConfig, models: Models, rng: np.random.Generator):
        self.config = config
        self.models = models
        self.reference = models.dataset.reference(config.reference_samples)
        self.family = leakage_family(config)
        self.z_eval = models.generator.sample_latent(config.eval_samples, rng)
        pool = models.dataset.samples
        self.probe_real = pool[rng.integers(0, pool.shape[0], size=config.batch)]
        self.probe_z = models.generator.sample_latent(config.batch, rng)

    def __call__(self, iteration: int) -> EvalRow:
        cfg, m = self.config, self.models
        probe_fake = m.generator.forward(Tensor(self.probe_z)).values
        d_loss, d_branches = discriminator_loss(cfg, m, self.probe_real, probe_fake)
        g_loss, _, _ = generator_loss(cfg, m, self.probe_z)
        gen = m.generator.forward(Tensor(self.z_eval)).values
        report = ds.mode_report(gen, m.dataset, cfg.radius_multiplier)
        return EvalRow(
            iteration=iteration,
            d_loss=float(d_loss.values),
            g_loss=float(g_loss.values),
            d_branch_losses=tuple(d_branches),
            frechet=ds.frechet_gaussian(gen, self.reference),
            modes_covered=report.modes_covered,
            mode_kl=report.mode_kl,
            leakage=ds.leakage(gen, m.dataset, self.family, cfg.radius_multiplier),
            samples=gen,
        )


def train(config: DagConfig, seed: int | None = None, keep_samples: bool = True) -> TrainReport:
    """Alternate one D step and one G step per iteration, evaluating on the cadence."""
    seed = config.seed if seed is None else seed
    rngs = _streams(seed)
    models = build_models(config, rngs["init"])
    report = TrainReport(config, seed, models=models)
    if len(leakage_family(config)) == 1:
        report.notes.append("leakage: empty transform list, column reports 0")
    evaluate = _Evaluator(config, models, rngs["eval"])

    def record(it: int) -> None:
        row = evaluate(it)
        if not keep_samples:
            row.samples = None
        report.rows.append(row)

    try:
        record(0)
        for it in range(1, config.iterations + 1):
            real = sample_real_batch(config, models, rngs["data"], rngs["augment"])
            discriminator_step(config, models, real, rngs["latent"])
            generator_step(config, models, rngs["latent"])
            if it % config.eval_every == 0 or it == config.iterations:
                record(it)
    except (NonFiniteError, FloatingPointError) as exc:
        report.aborted = f"non-finite value: {exc}"
    return report
