"""Selective pseudo-label training over an autoencoder ensemble.

The driver pretrains K independent autoencoders on l1 reconstruction, then
iterates: encode every point without noise, cluster each member's latents,
align the labellings and form a consensus with unanimity flags, and train
each member selectively (cross-entropy against the consensus label on agreed
points, reconstruction on the rest, decoder frozen).  The loop stops once
the number of agreed points has gone plateau_patience consecutive iterations
without a strict improvement, and the last consensus becomes the final
labelling.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .clustering import Labelling, gmm_fit, gmm_predict, kmeans_fit
from .consensus import ConsensusResult, consensus, hungarian
from .data import Dataset
from .errors import ConfigError, DataError, NumericError
from .network import AutoencoderMember, combined_loss

logger = logging.getLogger("spc")

CLUSTERERS = ("gmm", "kmeans")
NORMALIZED_SLACK = 1e-9


@dataclass(frozen=True)
class SpcConfig:
    """Hyperparameters of the full training loop.

    n_members is the ensemble size; one member degenerates to plain
    pseudo-label training because a single labelling always agrees with
    itself everywhere.
    """

    n_members: int = 5
    latent_dim: int = 10
    pretrain_epochs: int = 60
    loop_epochs: int = 10
    learning_rate: float = 0.3
    loop_learning_rate: float | None = 0.01
    noise_stddev: float = 0.08
    plateau_patience: int = 2
    max_iterations: int = 12
    master_seed: int = 0
    clusterer: str = "kmeans"
    batch_size: int = 128
    recon_weight: float = 1.0
    concat_member: bool = False
    hidden_widths: tuple = (256, 128)

    def __post_init__(self):
        if self.n_members < 1:
            raise ConfigError("n_members must be >= 1")
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be >= 1")
        if self.pretrain_epochs < 0:
            raise ConfigError("pretrain_epochs must be >= 0")
        if self.loop_epochs < 1:
            raise ConfigError("loop_epochs must be >= 1")
        if not (np.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ConfigError("learning_rate must be positive and finite")
        if self.loop_learning_rate is not None and not (
            np.isfinite(self.loop_learning_rate) and self.loop_learning_rate > 0
        ):
            raise ConfigError("loop_learning_rate must be positive and finite when set")
        if not (np.isfinite(self.noise_stddev) and self.noise_stddev >= 0):
            raise ConfigError("noise_stddev must be non-negative and finite")
        if self.plateau_patience < 1:
            raise ConfigError("plateau_patience must be >= 1")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if self.clusterer not in CLUSTERERS:
            raise ConfigError(f"clusterer must be one of {CLUSTERERS}, got {self.clusterer!r}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not (np.isfinite(self.recon_weight) and self.recon_weight >= 0):
            raise ConfigError("recon_weight must be non-negative and finite")
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if any(w < 1 for w in self.hidden_widths):
            raise ConfigError("hidden widths must be positive")

    @property
    def effective_loop_rate(self) -> float:
        """Step size of the selective phase; None means share the pretrain rate.

        Reconstruction needs a large step to escape the small-gradient regime
        around the init scale, but once the latent geometry is established the
        selective phase must move gently or consecutive clusterings decohere.
        """
        return self.learning_rate if self.loop_learning_rate is None else self.loop_learning_rate


@dataclass(frozen=True)
class IterationRecord:
    """One row of the training dynamics: agreement counts and accuracies.

    The accuracy fields are None when the dataset carries no ground truth;
    agreed_accuracy is also None when no point is agreed.
    """

    iteration: int
    n_agreed: int
    agreed_accuracy: float | None
    overall_accuracy: float | None
    mean_loss: float

    def __post_init__(self):
        if self.iteration < 0 or self.n_agreed < 0:
            raise DataError("iteration and n_agreed must be non-negative")


# ---- seeding --------------------------------------------------------------
# Every member owns three independent streams derived from the master seed:
# parameter init, training-time shuffling and noise, and clusterer seeding.
# Streams are keyed by member index only, so results do not depend on how
# work is scheduled across threads.


def _member_streams(config: SpcConfig, j: int):
    ss = np.random.SeedSequence(config.master_seed, spawn_key=(j,))
    init_ss, train_ss, cluster_ss = ss.spawn(3)
    init_seed = int(init_ss.generate_state(1, dtype=np.uint64)[0])
    return init_seed, np.random.default_rng(train_ss), np.random.default_rng(cluster_ss)


def build_members(dataset: Dataset, config: SpcConfig) -> list:
    """Construct the ensemble with per-member derived init seeds."""
    members = []
    for j in range(config.n_members):
        init_seed, _, _ = _member_streams(config, j)
        members.append(
            AutoencoderMember(
                input_dim=dataset.dim,
                latent_dim=config.latent_dim,
                n_clusters=dataset.n_clusters,
                seed=init_seed,
                noise_stddev=config.noise_stddev,
                hidden_widths=config.hidden_widths,
            )
        )
    return members


def _fan_out(tasks: list, workers: int | None) -> list:
    """Run the closures, possibly in a thread pool; results in task order."""
    if workers is None:
        workers = min(len(tasks), os.cpu_count() or 1)
    workers = max(1, min(workers, len(tasks)))
    if workers == 1:
        return [task() for task in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(task) for task in tasks]
        return [f.result() for f in futures]


def _check_normalized(points: np.ndarray) -> None:
    lo, hi = float(points.min()), float(points.max())
    if lo < -1.0 - NORMALIZED_SLACK or hi > 1.0 + NORMALIZED_SLACK:
        raise DataError(
            f"points must be normalized to [-1, 1], found range [{lo:.6g}, {hi:.6g}]"
        )


# ---- training steps -------------------------------------------------------


def train_epoch(
    member: AutoencoderMember,
    points: np.ndarray,
    labels: np.ndarray,
    flags: np.ndarray,
    rng: np.random.Generator,
    config: SpcConfig,
    learning_rate: float,
    freeze_decoder: bool,
) -> float:
    """One shuffled pass of mini-batch SGD; returns the mean per-point loss."""
    n = points.shape[0]
    order = rng.permutation(n)
    total = 0.0
    for start in range(0, n, config.batch_size):
        idx = order[start : start + config.batch_size]
        noise_seed = int(rng.integers(2**63))
        loss = member.forward_loss(
            points[idx],
            labels[idx],
            flags[idx],
            train_mode=True,
            noise_seed=noise_seed,
            recon_weight=config.recon_weight,
        )
        update = member.backward(learning_rate)
        if freeze_decoder:
            update = update.without_decoder()
        member.sgd_step(update)
        total += loss * idx.shape[0]
    return total / n


def pretrain(
    members: list,
    dataset: Dataset,
    config: SpcConfig,
    rngs: list | None = None,
    workers: int | None = None,
) -> list:
    """Reconstruction-only training of every member, in place.

    With all agreement flags at zero the objective reduces to l1
    reconstruction, and the classifier receives exactly zero gradient, so the
    selective loss machinery doubles as the pretraining objective.
    """
    _check_normalized(dataset.points)
    if rngs is None:
        rngs = [_member_streams(config, j)[1] for j in range(len(members))]
    if len(rngs) != len(members):
        raise ConfigError("need one rng per member")
    zeros = np.zeros(dataset.n_points, dtype=np.int64)

    def job(member, rng):
        for _ in range(config.pretrain_epochs):
            train_epoch(
                member,
                dataset.points,
                zeros,
                zeros,
                rng,
                config,
                config.learning_rate,
                freeze_decoder=False,
            )

    _fan_out([lambda m=m, r=r: job(m, r) for m, r in zip(members, rngs)], workers)
    return members


# ---- clustering and consensus ---------------------------------------------


def _cluster(latents: np.ndarray, n_clusters: int, seed: int, kind: str) -> Labelling:
    if kind == "kmeans":
        _, labelling = kmeans_fit(latents, n_clusters, seed=seed)
        return labelling
    model = gmm_fit(latents, n_clusters, seed=seed)
    return gmm_predict(model, latents)


def _aligned_correct(predicted: np.ndarray, truth: np.ndarray, n_clusters: int) -> np.ndarray:
    """Pointwise correctness under the accuracy-maximizing label permutation."""
    co = np.zeros((n_clusters, n_clusters), dtype=np.float64)
    np.add.at(co, (predicted, truth), 1.0)
    perm = hungarian(-co)
    return perm[predicted] == truth


def final_assignment(result: ConsensusResult, n_clusters: int | None = None) -> Labelling:
    """The consensus labels as a Labelling (mode over the aligned ensemble)."""
    if n_clusters is None:
        n_clusters = int(result.consensus_labels.max()) + 1
    return Labelling(labels=result.consensus_labels.copy(), n_clusters=n_clusters)


def _rename_to_previous(result: ConsensusResult, previous: np.ndarray, n_clusters: int) -> ConsensusResult:
    """Permute cluster ids to best match the previous iteration's consensus.

    Ids are arbitrary within an iteration (clusterers are reseeded), so
    without renaming the classifier targets would permute between iterations
    and every head would have to relearn a shuffled output map.  Renaming
    changes neither the partition nor the agreement flags.
    """
    co = np.zeros((n_clusters, n_clusters), dtype=np.float64)
    np.add.at(co, (result.consensus_labels, previous), 1.0)
    perm = hungarian(-co)
    return ConsensusResult(
        consensus_labels=perm[result.consensus_labels],
        agreement=result.agreement,
        aligned_labellings=perm[result.aligned_labellings],
        n_agreed=result.n_agreed,
    )


# ---- the full loop --------------------------------------------------------


def spc_train(
    dataset: Dataset,
    config: SpcConfig,
    workers: int | None = None,
):
    """Run the complete selective pseudo-label loop.

    Returns (final labelling, per-iteration history, trained members).  Each
    iteration encodes without noise, clusters each member's latents, records
    the consensus before any training, and then trains every member for
    loop_epochs on the selective objective with the decoder frozen.  A member
    whose clusterer fails is dropped from that iteration's vote; the run only
    fails when every member does.
    """
    _check_normalized(dataset.points)
    C = dataset.n_clusters
    points = dataset.points
    members = build_members(dataset, config)
    streams = [_member_streams(config, j) for j in range(config.n_members)]
    train_rngs = [s[1] for s in streams]
    cluster_rngs = [s[2] for s in streams]
    # the optional concatenated virtual member gets the next spawn key so its
    # stream never collides with a real member's
    concat_rng = np.random.default_rng(
        np.random.SeedSequence(config.master_seed, spawn_key=(config.n_members,)).spawn(3)[2]
    )

    pretrain(members, dataset, config, rngs=train_rngs, workers=workers)

    history: list = []
    result = None
    best_agreed = -1
    stall = 0
    for iteration in range(config.max_iterations):
        # seeds are drawn in member order before the fan-out so that results
        # cannot depend on thread scheduling
        seeds = [int(rng.integers(2**63)) for rng in cluster_rngs]

        def member_task(j):
            latents = members[j].encode(points, train_mode=False)
            try:
                return latents, _cluster(latents, C, seeds[j], config.clusterer)
            except NumericError as exc:
                logger.warning(
                    "member %d clustering failed at iteration %d: %s", j, iteration, exc
                )
                return latents, None

        outcomes = _fan_out(
            [lambda j=j: member_task(j) for j in range(config.n_members)], workers
        )
        labellings = [lab for _, lab in outcomes if lab is not None]
        if config.concat_member:
            concat_seed = int(concat_rng.integers(2**63))
            stacked = np.concatenate([lat for lat, _ in outcomes], axis=1)
            try:
                labellings.append(_cluster(stacked, C, concat_seed, config.clusterer))
            except NumericError as exc:
                logger.warning(
                    "concatenated member clustering failed at iteration %d: %s",
                    iteration,
                    exc,
                )
        if not labellings:
            raise NumericError(
                f"clustering failed for every ensemble member at iteration {iteration}"
            )

        previous = result
        result = consensus(labellings, C)
        if previous is not None:
            result = _rename_to_previous(result, previous.consensus_labels, C)
        flags = result.agreement.astype(np.int64)
        mean_loss = combined_loss(
            members, points, result.consensus_labels, flags, config.recon_weight
        ) / len(members)
        agreed_acc = overall_acc = None
        if dataset.labels is not None:
            correct = _aligned_correct(result.consensus_labels, dataset.labels, C)
            overall_acc = float(correct.mean())
            if result.n_agreed > 0:
                agreed_acc = float(correct[result.agreement].mean())
        history.append(
            IterationRecord(
                iteration=iteration,
                n_agreed=result.n_agreed,
                agreed_accuracy=agreed_acc,
                overall_accuracy=overall_acc,
                mean_loss=mean_loss,
            )
        )

        if result.n_agreed > best_agreed:
            best_agreed = result.n_agreed
            stall = 0
        else:
            stall += 1
        if stall >= config.plateau_patience or iteration == config.max_iterations - 1:
            break

        consensus_labels = result.consensus_labels

        def train_task(j):
            for _ in range(config.loop_epochs):
                train_epoch(
                    members[j],
                    points,
                    consensus_labels,
                    flags,
                    train_rngs[j],
                    config,
                    config.effective_loop_rate,
                    freeze_decoder=True,
                )

        _fan_out([lambda j=j: train_task(j) for j in range(config.n_members)], workers)

    return final_assignment(result, C), history, members
