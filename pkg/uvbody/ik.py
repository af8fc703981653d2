#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Sparse joints from dense UV maps, and body parameters from sparse joints.

Dense joint maps are averaged per part into 14 coarse joints. A residual MLP
inpaints occluded joints and refines visible ones; a second one (GIK) maps the
refined joints to pose and shape. Levenberg-Marquardt on the body model is
available as the iterative alternative.
"""
import typing as t
from dataclasses import dataclass, field

import numpy as np
from pydantic import validator

from uvbody.body_model import (
    ArrayModel,
    BodyModel,
    JointSet,
    PoseParams,
    SeedLike,
    ShapeParams,
    canonicalize_axis_angle,
    joint_positions_batch,
    sample_pose_batch,
    sample_shape_batch,
    skin_batch,
    skin_vjp,
)
from uvbody.dense_maps import UVMaps
from uvbody.logging import get as get_logger
from uvbody.logging import stage
from uvbody.losses import LossBreakdown, ik_loss_terms
from uvbody.nn_core import (
    AdamState,
    MlpSpec,
    MlpState,
    adam_init,
    apply_gradients,
    init_mlp,
    mlp_backward,
    mlp_forward,
    mlp_predict,
)
from uvbody.uv_atlas import PartSegmentation
from uvbody.vars import (
    BACKGROUND,
    BETA_LIMIT,
    NUM_BETAS,
    NUM_KIN_JOINTS,
    NUM_LSP_JOINTS,
)

INPAINT_INPUT_DIM = NUM_LSP_JOINTS * 4
JOINT_DIM = NUM_LSP_JOINTS * 3
POSE_DIM = NUM_KIN_JOINTS * 3
GIK_OUTPUT_DIM = POSE_DIM + NUM_BETAS
MIN_VISIBLE_JOINTS = 4


class UntrainedNetworkError(ValueError):
    """Raised when inference is requested from a network never updated."""


class UnderdeterminedTargetError(ValueError):
    """Raised when too few target joints are visible for iterative IK."""


class TrainingDivergedError(ValueError):
    """Raised when a training loss becomes NaN or infinite."""


class AugmentConfig(ArrayModel):
    """Gaussian joint noise and random joint dropout for training inputs."""

    noise_sigma: float = 0.01
    occlusion_prob: float = 0.3

    @validator("noise_sigma")
    def validate_sigma(cls, value):  # pylint: disable=no-self-argument
        """Noise must be non-negative."""

        if value < 0.0:
            raise ValueError(f"noise_sigma must be >= 0, got {value}")
        return value

    @validator("occlusion_prob")
    def validate_prob(cls, value):  # pylint: disable=no-self-argument
        """Probability lies in [0, 1)."""

        if not 0.0 <= value < 1.0:
            raise ValueError(f"occlusion_prob must be in [0, 1), got {value}")
        return value


class TrainConfig(ArrayModel):
    """Optimization settings for the inpaint and GIK networks."""

    epochs: int = 20
    batch_size: int = 256
    learning_rate: float = 1e-3
    weight_theta: float = 1.0
    weight_beta: float = 1.0
    weight_ji: float = 1.0
    weight_vi: float = 1.0
    min_dataset_size: int = 1000

    @validator("epochs", "min_dataset_size")
    def validate_positive(cls, value):  # pylint: disable=no-self-argument
        """Counts are positive."""

        if value < 1:
            raise ValueError(f"Expected a positive count, got {value}")
        return value

    @validator("batch_size")
    def validate_batch(cls, value):  # pylint: disable=no-self-argument
        """Batch normalization needs at least two examples."""

        if value < 2:
            raise ValueError(f"batch_size must be >= 2, got {value}")
        return value


class LmConfig(ArrayModel):
    """Levenberg-Marquardt budget and damping schedule."""

    max_iterations: int = 200
    initial_damping: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 10.0
    max_damping: float = 1e10
    fd_step: float = 1e-6
    tolerance: float = 1e-12
    objective_floor: float = 1e-18


@dataclass(frozen=True)
class AggregationResult:
    """Coarse joints averaged from a dense UV joint map."""

    j_initial: JointSet
    texel_counts: np.ndarray


@dataclass(frozen=True)
class IkOutput:
    """Body parameters and the refined joints they were regressed from."""

    theta: PoseParams
    beta: ShapeParams
    j_refine: JointSet


@dataclass(frozen=True)
class NumericalIkResult:
    """
    Outcome of `numerical_ik`.

    ``residual`` is the final sum of squared joint distances (m^2) over the
    visible joints; ``history`` holds it after every accepted step.
    ``stalled`` runs ended because damping passed ``max_damping`` before a
    step lowered the residual; they are not converged.
    """

    theta: PoseParams
    beta: ShapeParams
    residual: float
    iterations: int
    converged: bool
    stalled: bool = False
    history: t.Tuple[float, ...] = ()


@dataclass(frozen=True)
class EpochLosses:
    """Mean training losses of one epoch."""

    epoch: int
    l_ji: float
    l_theta: float
    l_beta: float
    l_vi: float

    @property
    def total(self) -> float:
        """Unweighted sum of the terms."""

        return self.l_ji + self.l_theta + self.l_beta + self.l_vi


@dataclass
class IkTrainingResult:
    """Trained networks and their loss curve."""

    inpaint: MlpState
    gik: MlpState
    curve: t.List[EpochLosses] = field(default_factory=list)


def inpaint_spec(**kwargs) -> MlpSpec:
    """Network spec mapping joints plus visibility flags (56) to joints (42)."""

    return MlpSpec(input_dim=INPAINT_INPUT_DIM, output_dim=JOINT_DIM, **kwargs)


def gik_spec(**kwargs) -> MlpSpec:
    """Network spec mapping joints (42) to pose and shape (82)."""

    kwargs.setdefault("num_blocks", 4)
    return MlpSpec(input_dim=JOINT_DIM, output_dim=GIK_OUTPUT_DIM, **kwargs)


def aggregate_joints(
    uv: UVMaps, part_seg: PartSegmentation, min_texels: int = 1
) -> AggregationResult:
    """
    Average the joint channel over the valid texels of every part.

    Parts with fewer than ``min_texels`` valid texels are invisible and zero.

    Raises
    ------
    ValueError
        if the maps and segmentation differ in resolution.
    """

    if uv.resolution != part_seg.resolution:
        raise ValueError(
            f"UV maps {uv.resolution} do not match segmentation "
            f"{part_seg.resolution}"
        )
    use = uv.valid & (part_seg.assign != BACKGROUND)
    labels = part_seg.assign[use]
    counts = np.bincount(labels, minlength=NUM_LSP_JOINTS)
    sums = np.stack(
        [
            np.bincount(labels, weights=uv.joint[use][:, c], minlength=NUM_LSP_JOINTS)
            for c in range(3)
        ],
        axis=-1,
    )
    visible = counts >= max(min_texels, 1)
    joints = np.zeros((NUM_LSP_JOINTS, 3))
    joints[visible] = sums[visible] / counts[visible, None]
    return AggregationResult(
        j_initial=JointSet(joints=joints, visible=visible), texel_counts=counts
    )


def encode_inpaint_input(joints: np.ndarray, visible: np.ndarray) -> np.ndarray:
    """Zero invisible joints and append the visibility flags, (B, 56)."""

    joints = np.asarray(joints, dtype=np.float64).reshape(-1, NUM_LSP_JOINTS, 3)
    visible = np.asarray(visible, dtype=bool).reshape(-1, NUM_LSP_JOINTS)
    zeroed = np.where(visible[..., None], joints, 0.0)
    return np.concatenate(
        [zeroed.reshape(len(zeroed), -1), visible.astype(np.float64)], axis=-1
    )


def _require_trained(net: MlpState, what: str):
    if net.step == 0:
        raise UntrainedNetworkError(f"The {what} network has not been trained")


def inpaint_refine_joints(
    net: MlpState, agg: t.Union[AggregationResult, JointSet]
) -> JointSet:
    """
    Complete and refine coarse joints with the inpaint network.

    Raises
    ------
    UntrainedNetworkError
        if the network was never updated.
    """

    _require_trained(net, "inpaint")
    coarse = agg.j_initial if isinstance(agg, AggregationResult) else agg
    out = mlp_predict(net, encode_inpaint_input(coarse.joints, coarse.visible))
    return JointSet.all_visible(out[0].reshape(NUM_LSP_JOINTS, 3))


def split_gik_output(out: np.ndarray) -> t.Tuple[np.ndarray, np.ndarray]:
    """Raw (B, 24, 3) pose and (B, 10) shape from GIK outputs."""

    return out[:, :POSE_DIM].reshape(-1, NUM_KIN_JOINTS, 3), out[:, POSE_DIM:]


def gik_forward(
    net: MlpState, j_refine: JointSet
) -> t.Tuple[PoseParams, ShapeParams]:
    """
    Regress pose and shape from refined joints.

    The pose is canonicalized and the shape clamped to the valid range.

    Raises
    ------
    UntrainedNetworkError
        if the network was never updated.
    """

    _require_trained(net, "GIK")
    out = mlp_predict(net, j_refine.joints.reshape(1, JOINT_DIM))
    theta, beta = split_gik_output(out)
    return (
        PoseParams(theta=canonicalize_axis_angle(theta[0])),
        ShapeParams.clamped(beta[0]),
    )


def run_learned_ik(
    inpaint: MlpState, gik: MlpState, agg: AggregationResult
) -> IkOutput:
    """Inpaint then regress parameters."""

    j_refine = inpaint_refine_joints(inpaint, agg)
    theta, beta = gik_forward(gik, j_refine)
    return IkOutput(theta=theta, beta=beta, j_refine=j_refine)


def _lm_joints(model: BodyModel, params: np.ndarray) -> np.ndarray:
    params = np.atleast_2d(params)
    beta = np.clip(params[:, POSE_DIM:], -BETA_LIMIT, BETA_LIMIT)
    return joint_positions_batch(model, params[:, :POSE_DIM], beta)


def numerical_ik(
    model: BodyModel,
    target: JointSet,
    init: t.Optional[t.Tuple[PoseParams, ShapeParams]] = None,
    config: t.Optional[LmConfig] = None,
) -> NumericalIkResult:
    """
    Fit pose and shape to target joints by damped least squares.

    The objective is the sum of squared distances between regressed and
    target joints over visible targets. The Jacobian uses central
    differences, all evaluated in one skinning batch. Damping starts at
    ``initial_damping``, grows on rejected steps and shrinks on accepted ones.

    Raises
    ------
    UnderdeterminedTargetError
        if fewer than 4 target joints are visible.
    """

    config = config or LmConfig()
    logger = get_logger("NumericalIK")
    visible = target.visible
    if visible.sum() < MIN_VISIBLE_JOINTS:
        raise UnderdeterminedTargetError(
            f"Need {MIN_VISIBLE_JOINTS} visible joints, got {int(visible.sum())}"
        )
    theta0, beta0 = init or (PoseParams.zero(), ShapeParams.zero())
    x = np.concatenate([theta0.theta.reshape(-1), beta0.beta])
    goal = target.joints[visible].reshape(-1)
    num_params = len(x)

    def residual(params: np.ndarray) -> np.ndarray:
        joints = _lm_joints(model, params)[:, visible]
        return joints.reshape(len(params), -1) - goal

    r = residual(x[None])[0]
    objective = float(r @ r)
    damping = config.initial_damping
    history = [objective]
    converged = objective <= config.objective_floor
    stalled = False
    iterations = 0
    eye = np.eye(num_params)
    h = config.fd_step

    while not converged and iterations < config.max_iterations:
        iterations += 1
        stencil = np.concatenate([x + h * eye, x - h * eye])
        res = residual(stencil)
        jac = ((res[:num_params] - res[num_params:]) / (2.0 * h)).T
        normal = jac.T @ jac
        grad = jac.T @ r
        accepted = False
        while damping <= config.max_damping:
            step = np.linalg.solve(normal + damping * eye, grad)
            candidate = x - step
            candidate[POSE_DIM:] = np.clip(
                candidate[POSE_DIM:], -BETA_LIMIT, BETA_LIMIT
            )
            r_new = residual(candidate[None])[0]
            new_objective = float(r_new @ r_new)
            if new_objective < objective:
                accepted = True
                break
            damping *= config.damping_up
        if not accepted:
            stalled = True
            break
        improvement = objective - new_objective
        x, r, objective = candidate, r_new, new_objective
        damping = max(damping / config.damping_down, 1e-12)
        history.append(objective)
        if (
            objective <= config.objective_floor
            or improvement <= config.tolerance * (1.0 + objective)
        ):
            converged = True

    if stalled:
        logger.warning(
            "Numerical IK stalled after %d iterations: damping exceeded %g, "
            "residual %.3g",
            iterations,
            config.max_damping,
            objective,
        )
    elif not converged:
        logger.warning(
            "Numerical IK did not converge in %d iterations, residual %.3g",
            iterations,
            objective,
        )
    else:
        logger.debug(
            "Numerical IK converged in %d iterations, residual %.3g",
            iterations,
            objective,
        )
    return NumericalIkResult(
        theta=PoseParams(theta=x[:POSE_DIM]),
        beta=ShapeParams.clamped(x[POSE_DIM:]),
        residual=objective,
        iterations=iterations,
        converged=converged,
        stalled=stalled,
        history=tuple(history),
    )


def augment_joint_batch(
    joints: np.ndarray,
    visible: np.ndarray,
    cfg: AugmentConfig,
    seed: SeedLike,
) -> t.Tuple[np.ndarray, np.ndarray]:
    """
    Noise and drop joints of a batch, (B, 14, 3) and (B, 14).

    Dropped joints are zeroed and marked invisible.
    """

    rng = np.random.default_rng(seed)
    joints = np.asarray(joints, dtype=np.float64).reshape(-1, NUM_LSP_JOINTS, 3)
    visible = np.asarray(visible, dtype=bool).reshape(-1, NUM_LSP_JOINTS)
    noisy = joints + rng.normal(0.0, 1.0, joints.shape) * cfg.noise_sigma
    dropped = rng.random(visible.shape) < cfg.occlusion_prob
    keep = visible & ~dropped
    return np.where(keep[..., None], noisy, 0.0), keep


def augment_joints(j: JointSet, cfg: AugmentConfig, seed: SeedLike) -> JointSet:
    """Noise and drop the joints of one set; deterministic per seed."""

    joints, visible = augment_joint_batch(j.joints, j.visible, cfg, seed)
    return JointSet(joints=joints[0], visible=visible[0])


def sample_mocap(
    seed: SeedLike,
    count: int,
    pose_limits: t.Optional[np.ndarray] = None,
    beta_sigma: float = 1.0,
) -> t.Tuple[np.ndarray, np.ndarray]:
    """Synthetic pose (count, 24, 3) and shape (count, 10) dataset."""

    pose_seed, shape_seed = np.random.SeedSequence(seed).spawn(2)
    return (
        sample_pose_batch(pose_seed, count, pose_limits),
        sample_shape_batch(shape_seed, count, beta_sigma),
    )


def batch_bounds(count: int, batch_size: int) -> t.List[t.Tuple[int, int]]:
    """
    ``(start, stop)`` of each batch over ``count`` examples.

    A trailing batch of one example is folded into the previous batch, so
    every batch can be normalized.
    """

    bounds = [
        (start, min(start + batch_size, count))
        for start in range(0, count, batch_size)
    ]
    if len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] < 2:
        bounds[-2] = (bounds[-2][0], count)
        bounds.pop()
    return bounds


def _l1_grad(diff: np.ndarray) -> np.ndarray:
    return np.sign(diff) / diff.size


def _check_finite(losses: LossBreakdown, epoch: int, batch: int):
    values = losses.dict()
    if not all(np.isfinite(v) for v in values.values()):
        raise TrainingDivergedError(
            f"Non-finite loss at epoch {epoch}, batch {batch}: {values}"
        )


def ik_train_step(
    model: BodyModel,
    inpaint: MlpState,
    gik: MlpState,
    inpaint_adam: AdamState,
    gik_adam: AdamState,
    batch: t.Dict[str, np.ndarray],
    cfg: TrainConfig,
    seed: int,
) -> t.Tuple[LossBreakdown, AdamState, AdamState]:
    """
    One joint update of both networks on a batch.

    ``batch`` holds ``theta``, ``beta``, ``joints`` (targets), ``inputs``
    (augmented joints) and ``visible``. The GIK network sees the refined
    joints as constants. Returns the unweighted losses and both optimizers.
    """

    theta, beta, joints_gt = batch["theta"], batch["beta"], batch["joints"]
    size = len(theta)
    inputs = encode_inpaint_input(batch["inputs"], batch["visible"])
    refined, inpaint_cache = mlp_forward(inpaint, inputs, seed)
    out, gik_cache = mlp_forward(gik, refined, seed)
    theta_hat, beta_hat = split_gik_output(out)

    vertices_hat = vertices_gt = None
    if cfg.weight_vi > 0.0:
        vertices_hat = skin_batch(model, theta_hat, beta_hat)
        vertices_gt = skin_batch(model, theta, beta)
    losses = ik_loss_terms(
        theta_hat,
        theta,
        beta_hat,
        beta,
        refined,
        joints_gt.reshape(size, -1),
        vertices_hat,
        vertices_gt,
    )

    grad_refined = cfg.weight_ji * _l1_grad(refined - joints_gt.reshape(size, -1))
    grad_theta = cfg.weight_theta * _l1_grad(theta_hat - theta)
    grad_beta = cfg.weight_beta * _l1_grad(beta_hat - beta)
    if vertices_hat is not None:
        vi_theta, vi_beta = skin_vjp(
            model,
            theta_hat,
            beta_hat,
            cfg.weight_vi * _l1_grad(vertices_hat - vertices_gt),
        )
        grad_theta = grad_theta + vi_theta
        grad_beta = grad_beta + vi_beta
    grad_out = np.concatenate([grad_theta.reshape(size, -1), grad_beta], axis=-1)

    inpaint_grads = mlp_backward(inpaint, inpaint_cache, grad_refined)
    gik_grads = mlp_backward(gik, gik_cache, grad_out)
    inpaint_adam = apply_gradients(inpaint, inpaint_adam, inpaint_grads, inpaint_cache)
    gik_adam = apply_gradients(gik, gik_adam, gik_grads, gik_cache)
    return losses, inpaint_adam, gik_adam


def train_ik_stage(
    model: BodyModel,
    mocap_theta: np.ndarray,
    mocap_beta: np.ndarray,
    train_cfg: TrainConfig,
    augment_cfg: AugmentConfig,
    inpaint: t.Union[MlpSpec, MlpState],
    gik: t.Union[MlpSpec, MlpState],
    seed: SeedLike,
) -> IkTrainingResult:
    """
    Jointly train the inpaint and GIK networks on a mocap set.

    Parameters
    ----------
    model : BodyModel
    mocap_theta, mocap_beta : np.ndarray
        (M, 24, 3) poses and (M, 10) shapes.
    train_cfg : TrainConfig
    augment_cfg : AugmentConfig
    inpaint, gik : MlpSpec or MlpState
        Specs are initialized from ``seed``; states continue training.
    seed : int or SeedSequence

    Returns
    -------
    IkTrainingResult

    Raises
    ------
    ValueError
        if the dataset is smaller than ``train_cfg.min_dataset_size``.
    TrainingDivergedError
        if a loss becomes non-finite.
    """

    logger = get_logger("IkTraining")
    mocap_theta = np.asarray(mocap_theta, dtype=np.float64).reshape(
        -1, NUM_KIN_JOINTS, 3
    )
    mocap_beta = np.asarray(mocap_beta, dtype=np.float64).reshape(-1, NUM_BETAS)
    count = len(mocap_theta)
    if count < max(train_cfg.min_dataset_size, 2):
        raise ValueError(
            f"Mocap set has {count} samples, need at least "
            f"{max(train_cfg.min_dataset_size, 2)}"
        )
    if len(mocap_beta) != count:
        raise ValueError(
            f"Mocap poses ({count}) and shapes ({len(mocap_beta)}) differ"
        )

    root = np.random.SeedSequence(seed)
    inpaint_seed, gik_seed, order_seed, augment_seed, dropout_seed = root.spawn(5)
    inpaint_net = (
        init_mlp(inpaint, inpaint_seed) if isinstance(inpaint, MlpSpec) else inpaint
    )
    gik_net = init_mlp(gik, gik_seed) if isinstance(gik, MlpSpec) else gik
    inpaint_net.train()
    gik_net.train()
    inpaint_adam = adam_init(inpaint_net.params, train_cfg.learning_rate)
    gik_adam = adam_init(gik_net.params, train_cfg.learning_rate)
    dropout_key = int(dropout_seed.generate_state(1)[0])

    with stage(logger, "ground truth joints"):
        joints_gt = joint_positions_batch(model, mocap_theta, mocap_beta)

    order_rng = np.random.default_rng(order_seed)
    augment_keys = augment_seed.spawn(train_cfg.epochs)
    result = IkTrainingResult(inpaint=inpaint_net, gik=gik_net)
    batch_size = min(train_cfg.batch_size, count)
    for epoch in range(train_cfg.epochs):
        order = order_rng.permutation(count)
        aug_joints, aug_visible = augment_joint_batch(
            joints_gt,
            np.ones((count, NUM_LSP_JOINTS), dtype=bool),
            augment_cfg,
            augment_keys[epoch],
        )
        totals = LossBreakdown()
        num_batches = 0
        for start, stop in batch_bounds(count, batch_size):
            index = order[start:stop]
            batch = {
                "theta": mocap_theta[index],
                "beta": mocap_beta[index],
                "joints": joints_gt[index],
                "inputs": aug_joints[index],
                "visible": aug_visible[index],
            }
            losses, inpaint_adam, gik_adam = ik_train_step(
                model,
                inpaint_net,
                gik_net,
                inpaint_adam,
                gik_adam,
                batch,
                train_cfg,
                dropout_key,
            )
            _check_finite(losses, epoch, num_batches)
            totals = totals.merge(losses)
            num_batches += 1
        scale = 1.0 / max(num_batches, 1)
        row = EpochLosses(
            epoch=epoch,
            l_ji=totals.l_ji * scale,
            l_theta=totals.l_theta * scale,
            l_beta=totals.l_beta * scale,
            l_vi=totals.l_vi * scale,
        )
        result.curve.append(row)
        logger.info(
            "Epoch %d: l_ji %.5f l_theta %.5f l_beta %.5f l_vi %.5f",
            epoch,
            row.l_ji,
            row.l_theta,
            row.l_beta,
            row.l_vi,
        )
    _warn_on_upward_trend(result.curve, logger)
    inpaint_net.eval()
    gik_net.eval()
    return result


def _warn_on_upward_trend(curve: t.Sequence[EpochLosses], logger):
    """Compare the mean of the last three epochs with the first three."""

    if len(curve) < 6:
        return
    first = np.mean([row.total for row in curve[:3]])
    last = np.mean([row.total for row in curve[-3:]])
    if last > first:
        logger.warning(
            "Training loss trended upward: %.5f -> %.5f", first, last
        )
