#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Fully connected residual networks with batch normalization and dropout.

The topology is fixed::

    stem:   linear -> batchnorm -> relu -> dropout
    block:  x + hidden(hidden(x)), hidden = linear -> batchnorm -> relu -> dropout
    head:   linear

Forward and backward passes are written out by hand and operate on plain
numpy dicts of parameters, so training state is easy to persist and check.
"""
import typing as t
from dataclasses import dataclass, field

import numpy as np
from pydantic import validator

from uvbody.body_model import ArrayModel, SeedLike
from uvbody.logging import get as get_logger

TRAIN = "train"
EVAL = "eval"
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
_HEAD_INIT_SCALE = 0.01

Params = t.Dict[str, np.ndarray]


class BatchNormBatchError(ValueError):
    """Raised for a train-mode batch too small for batch statistics."""


class ModeMismatchError(ValueError):
    """Raised when a backward pass gets a cache from the wrong mode."""


class NonFiniteGradientError(ValueError):
    """Raised when an optimizer step receives NaN or infinite gradients."""


class MlpSpec(ArrayModel):
    """Shape and regularization of a residual MLP."""

    input_dim: int
    output_dim: int
    hidden_dim: int = 256
    num_blocks: int = 3
    dropout_rate: float = 0.1
    use_batchnorm: bool = True

    @validator("input_dim", "output_dim", "hidden_dim")
    def validate_dims(cls, value):  # pylint: disable=no-self-argument
        """Dimensions are positive."""

        if value <= 0:
            raise ValueError(f"Layer dimensions must be positive, got {value}")
        return value

    @validator("num_blocks")
    def validate_blocks(cls, value):  # pylint: disable=no-self-argument
        """Block count is non-negative."""

        if value < 0:
            raise ValueError(f"num_blocks must be >= 0, got {value}")
        return value

    @validator("dropout_rate")
    def validate_dropout(cls, value):  # pylint: disable=no-self-argument
        """Dropout rate lies in [0, 1)."""

        if not 0.0 <= value < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {value}")
        return value

    def hidden_layers(self) -> t.List[str]:
        """Names of the hidden layers in evaluation order."""

        names = ["stem"]
        for block in range(self.num_blocks):
            names += [f"block{block}.0", f"block{block}.1"]
        return names


@dataclass
class MlpState:
    """
    Parameters, batchnorm running statistics and mode of one network.

    ``step`` counts optimizer updates and keys the dropout masks.
    """

    spec: MlpSpec
    params: Params
    buffers: Params
    mode: str = TRAIN
    step: int = 0

    def train(self) -> "MlpState":
        """Switch to train mode in place."""

        self.mode = TRAIN
        return self

    def eval(self) -> "MlpState":
        """Switch to eval mode in place."""

        self.mode = EVAL
        return self

    def copy(self) -> "MlpState":
        """Deep copy of arrays."""

        return MlpState(
            spec=self.spec.copy(),
            params={k: v.copy() for k, v in self.params.items()},
            buffers={k: v.copy() for k, v in self.buffers.items()},
            mode=self.mode,
            step=self.step,
        )


@dataclass
class AdamState:
    """Moment accumulators and hyperparameters of Adam."""

    m: Params
    v: Params
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0


@dataclass
class _LayerCache:
    x: np.ndarray
    pre_relu: np.ndarray
    zhat: t.Optional[np.ndarray] = None
    inv_std: t.Optional[np.ndarray] = None
    batch_mean: t.Optional[np.ndarray] = None
    batch_var: t.Optional[np.ndarray] = None
    keep: t.Optional[np.ndarray] = None


@dataclass
class ForwardCache:
    """Activations recorded by `mlp_forward` for `mlp_backward`."""

    mode: str
    seed: int
    step: int
    layers: t.Dict[str, _LayerCache] = field(default_factory=dict)
    head_input: t.Optional[np.ndarray] = None


def parameter_count(spec: MlpSpec) -> int:
    """Number of trainable scalars."""

    count = spec.input_dim * spec.hidden_dim + spec.hidden_dim
    count += 2 * spec.num_blocks * (spec.hidden_dim**2 + spec.hidden_dim)
    if spec.use_batchnorm:
        count += 2 * spec.hidden_dim * len(spec.hidden_layers())
    count += spec.hidden_dim * spec.output_dim + spec.output_dim
    return count


def init_mlp(spec: MlpSpec, seed: SeedLike) -> MlpState:
    """
    He-initialized network in train mode.

    The head starts small so untrained outputs stay near zero.
    """

    rng = np.random.default_rng(seed)
    params: Params = {}
    buffers: Params = {}
    fan_in = spec.input_dim
    for name in spec.hidden_layers():
        params[f"{name}.w"] = rng.normal(
            0.0, np.sqrt(2.0 / fan_in), (fan_in, spec.hidden_dim)
        )
        params[f"{name}.b"] = np.zeros(spec.hidden_dim)
        if spec.use_batchnorm:
            params[f"{name}.gamma"] = np.ones(spec.hidden_dim)
            params[f"{name}.beta"] = np.zeros(spec.hidden_dim)
            buffers[f"{name}.mean"] = np.zeros(spec.hidden_dim)
            buffers[f"{name}.var"] = np.ones(spec.hidden_dim)
        fan_in = spec.hidden_dim
    params["head.w"] = rng.normal(
        0.0, _HEAD_INIT_SCALE * np.sqrt(2.0 / fan_in), (fan_in, spec.output_dim)
    )
    params["head.b"] = np.zeros(spec.output_dim)
    get_logger("Mlp").debug(
        "Initialized %d -> %d network with %d parameters",
        spec.input_dim,
        spec.output_dim,
        parameter_count(spec),
    )
    return MlpState(spec=spec, params=params, buffers=buffers)


def _dropout_keep(
    seed: int, step: int, layer: int, shape: t.Tuple[int, ...], rate: float
) -> np.ndarray:
    """Counter-based dropout mask keyed by (seed, step, layer)."""

    gen = np.random.Generator(
        np.random.Philox(np.random.SeedSequence([seed, step, layer]))
    )
    return gen.random(shape) >= rate


def _hidden_forward(
    state: MlpState,
    name: str,
    index: int,
    x: np.ndarray,
    mode: str,
    seed: int,
) -> t.Tuple[np.ndarray, _LayerCache]:
    spec, params = state.spec, state.params
    z = x @ params[f"{name}.w"] + params[f"{name}.b"]
    cache = _LayerCache(x=x, pre_relu=z)
    if spec.use_batchnorm:
        if mode == TRAIN:
            mean, var = z.mean(axis=0), z.var(axis=0)
            cache.batch_mean, cache.batch_var = mean, var
        else:
            mean = state.buffers[f"{name}.mean"]
            var = state.buffers[f"{name}.var"]
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        zhat = (z - mean) * inv_std
        cache.zhat, cache.inv_std = zhat, inv_std
        z = params[f"{name}.gamma"] * zhat + params[f"{name}.beta"]
        cache.pre_relu = z
    out = np.maximum(z, 0.0)
    if mode == TRAIN and spec.dropout_rate > 0.0:
        cache.keep = _dropout_keep(
            seed, state.step, index, out.shape, spec.dropout_rate
        )
        out = out * cache.keep / (1.0 - spec.dropout_rate)
    return out, cache


def _run(
    state: MlpState, batch: np.ndarray, mode: str, seed: int
) -> t.Tuple[np.ndarray, ForwardCache]:
    spec = state.spec
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != spec.input_dim:
        raise ValueError(
            f"Expected batch of shape (B, {spec.input_dim}), got {batch.shape}"
        )
    if batch.shape[0] == 0:
        raise ValueError("Batch is empty")
    if mode == TRAIN and spec.use_batchnorm and batch.shape[0] < 2:
        raise BatchNormBatchError(
            "Batch normalization needs at least 2 examples in train mode"
        )

    cache = ForwardCache(mode=mode, seed=seed, step=state.step)
    names = spec.hidden_layers()
    h, cache.layers["stem"] = _hidden_forward(state, "stem", 0, batch, mode, seed)
    for block in range(spec.num_blocks):
        first, second = names[1 + 2 * block], names[2 + 2 * block]
        inner, cache.layers[first] = _hidden_forward(
            state, first, 1 + 2 * block, h, mode, seed
        )
        inner, cache.layers[second] = _hidden_forward(
            state, second, 2 + 2 * block, inner, mode, seed
        )
        h = h + inner
    cache.head_input = h
    out = h @ state.params["head.w"] + state.params["head.b"]
    return out, cache


def mlp_forward(
    state: MlpState, batch: np.ndarray, seed: int = 0
) -> t.Tuple[np.ndarray, ForwardCache]:
    """
    Evaluate the network in its current mode.

    Parameters
    ----------
    state : MlpState
    batch : np.ndarray
        B x input_dim inputs.
    seed : int
        Dropout key, combined with ``state.step`` and the layer index.

    Returns
    -------
    tuple
        B x output_dim outputs and the activation cache.

    Raises
    ------
    BatchNormBatchError
        for B < 2 in train mode with batch normalization.
    """

    return _run(state, batch, state.mode, seed)


def mlp_predict(state: MlpState, batch: np.ndarray) -> np.ndarray:
    """Eval-mode outputs regardless of the state's mode."""

    out, _ = _run(state, batch, EVAL, 0)
    return out


def _hidden_backward(
    state: MlpState,
    name: str,
    cache: _LayerCache,
    grad: np.ndarray,
    grads: Params,
) -> np.ndarray:
    spec, params = state.spec, state.params
    if cache.keep is not None:
        grad = grad * cache.keep / (1.0 - spec.dropout_rate)
    grad = grad * (cache.pre_relu > 0.0)
    if spec.use_batchnorm:
        zhat = cache.zhat
        grads[f"{name}.gamma"] = (grad * zhat).sum(axis=0)
        grads[f"{name}.beta"] = grad.sum(axis=0)
        g_hat = grad * params[f"{name}.gamma"]
        count = grad.shape[0]
        grad = (cache.inv_std / count) * (
            count * g_hat
            - g_hat.sum(axis=0)
            - zhat * (g_hat * zhat).sum(axis=0)
        )
    grads[f"{name}.w"] = cache.x.T @ grad
    grads[f"{name}.b"] = grad.sum(axis=0)
    return grad @ params[f"{name}.w"].T


def mlp_backward(
    state: MlpState, cache: ForwardCache, upstream: np.ndarray
) -> Params:
    """
    Exact parameter gradients of a train-mode forward pass.

    Parameters
    ----------
    state : MlpState
        The state the cache was recorded with.
    cache : ForwardCache
    upstream : np.ndarray
        B x output_dim gradient of the loss with respect to the outputs.

    Returns
    -------
    dict
        One gradient array per parameter.

    Raises
    ------
    ModeMismatchError
        if the cache was recorded in eval mode, or the state changed mode or
        step since the forward pass.
    """

    if cache.mode != TRAIN or state.mode != TRAIN:
        raise ModeMismatchError(
            f"Backward needs a train-mode cache and state, got cache "
            f"{cache.mode!r} and state {state.mode!r}"
        )
    if cache.step != state.step:
        raise ModeMismatchError(
            f"Cache from step {cache.step} used at step {state.step}"
        )
    upstream = np.asarray(upstream, dtype=np.float64)
    grads: Params = {}
    grads["head.w"] = cache.head_input.T @ upstream
    grads["head.b"] = upstream.sum(axis=0)
    grad = upstream @ state.params["head.w"].T

    names = state.spec.hidden_layers()
    for block in reversed(range(state.spec.num_blocks)):
        first, second = names[1 + 2 * block], names[2 + 2 * block]
        inner = _hidden_backward(
            state, second, cache.layers[second], grad, grads
        )
        inner = _hidden_backward(state, first, cache.layers[first], inner, grads)
        grad = grad + inner
    _hidden_backward(state, "stem", cache.layers["stem"], grad, grads)
    return grads


def update_batchnorm_stats(
    state: MlpState, cache: ForwardCache, momentum: float = BN_MOMENTUM
):
    """Blend batch statistics of a train-mode cache into the running ones."""

    if not state.spec.use_batchnorm or cache.mode != TRAIN:
        return
    for name, layer in cache.layers.items():
        count = layer.x.shape[0]
        unbiased = layer.batch_var * count / max(count - 1, 1)
        state.buffers[f"{name}.mean"] = (1.0 - momentum) * state.buffers[
            f"{name}.mean"
        ] + momentum * layer.batch_mean
        state.buffers[f"{name}.var"] = (1.0 - momentum) * state.buffers[
            f"{name}.var"
        ] + momentum * unbiased


def adam_init(params: Params, lr: float = 1e-3) -> AdamState:
    """Zero moments shaped like ``params``."""

    return AdamState(
        m={k: np.zeros_like(v) for k, v in params.items()},
        v={k: np.zeros_like(v) for k, v in params.items()},
        lr=lr,
    )


def adam_step(
    params: Params,
    grads: Params,
    adam: AdamState,
    lr: t.Optional[float] = None,
) -> t.Tuple[Params, AdamState]:
    """
    One bias-corrected Adam update.

    Returns new parameter and optimizer dicts; the inputs are not modified.

    Raises
    ------
    ValueError
        if gradient names or shapes differ from the parameters.
    NonFiniteGradientError
        if any gradient is NaN or infinite.
    """

    if set(grads) != set(params):
        raise ValueError(
            f"Gradient keys {sorted(set(grads) ^ set(params))} do not match"
        )
    for key, grad in grads.items():
        if grad.shape != params[key].shape:
            raise ValueError(
                f"Gradient {key} has shape {grad.shape}, parameter has "
                f"{params[key].shape}"
            )
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradientError(f"Non-finite gradient for {key}")

    lr = adam.lr if lr is None else lr
    step = adam.step + 1
    correct1 = 1.0 - adam.beta1**step
    correct2 = 1.0 - adam.beta2**step
    new_params: Params = {}
    new_m: Params = {}
    new_v: Params = {}
    for key, grad in grads.items():
        new_m[key] = adam.beta1 * adam.m[key] + (1.0 - adam.beta1) * grad
        new_v[key] = adam.beta2 * adam.v[key] + (1.0 - adam.beta2) * grad**2
        update = (new_m[key] / correct1) / (
            np.sqrt(new_v[key] / correct2) + adam.eps
        )
        new_params[key] = params[key] - lr * update
    return new_params, AdamState(
        m=new_m,
        v=new_v,
        lr=adam.lr,
        beta1=adam.beta1,
        beta2=adam.beta2,
        eps=adam.eps,
        step=step,
    )


def apply_gradients(
    state: MlpState, adam: AdamState, grads: Params, cache: ForwardCache
) -> AdamState:
    """Update the network in place: Adam step, batchnorm statistics, step count."""

    state.params, adam = adam_step(state.params, grads, adam)
    update_batchnorm_stats(state, cache)
    state.step += 1
    return adam
