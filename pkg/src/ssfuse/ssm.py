"""Selective state-space scan with a diagonal per-channel state.

Shapes follow the convention ``x: (..., L, d)``; any leading axes are batch
axes and are carried through every function unchanged. Each channel ``j`` owns
a ``d_state``-vector hidden state, so ``A``, ``B`` and ``C`` are ``d x d_state``
per timestep.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import DimensionError, contract, softplus

# Below this |delta * A| the ZOH input gain switches to its limit delta * B.
ZOH_SINGULAR_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class SsmWeights:
    """Static parameters of one SSM branch.

    ``W_B`` and ``W_C`` map a ``d``-vector to a flattened ``d x d_state`` block
    (channel-major); ``W_delta`` maps it to the ``d`` step sizes.
    """

    A: np.ndarray
    D: np.ndarray
    W_B: np.ndarray
    W_C: np.ndarray
    W_delta: np.ndarray
    b_B: np.ndarray
    b_C: np.ndarray
    b_delta: np.ndarray

    def __post_init__(self):
        for name in self.param_names():
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.A.ndim != 2:
            raise DimensionError(f"A must be d x d_state, got {self.A.shape}")
        d, n = self.A.shape
        expected = {
            "D": (d,),
            "W_B": (d, d * n),
            "W_C": (d, d * n),
            "W_delta": (d, d),
            "b_B": (d * n,),
            "b_C": (d * n,),
            "b_delta": (d,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionError(
                    f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if not np.all(self.A < 0):
            raise ValueError("all entries of A must be strictly negative")

    @staticmethod
    def param_names() -> tuple[str, ...]:
        return ("A", "D", "W_B", "W_C", "W_delta", "b_B", "b_C", "b_delta")

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def d_state(self) -> int:
        return self.A.shape[1]

    def n_params(self) -> int:
        return sum(getattr(self, k).size for k in self.param_names())

    def __eq__(self, other) -> bool:
        if not isinstance(other, SsmWeights):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k))
                   for k in self.param_names())

    @classmethod
    def init(cls, d: int, d_state: int, rng: np.random.Generator) -> "SsmWeights":
        """Projections uniform in [-1/sqrt(d), 1/sqrt(d)], A = -(1 + U[0, 1)), D = 1, zero biases."""
        if d < 1 or d_state < 1:
            raise ValueError("d and d_state must be >= 1")
        bound = 1.0 / np.sqrt(d)
        A = -(1.0 + rng.random((d, d_state)))
        W_B = rng.uniform(-bound, bound, (d, d * d_state))
        W_C = rng.uniform(-bound, bound, (d, d * d_state))
        W_delta = rng.uniform(-bound, bound, (d, d))
        return cls(
            A=A,
            D=np.ones(d),
            W_B=W_B,
            W_C=W_C,
            W_delta=W_delta,
            b_B=np.zeros(d * d_state),
            b_C=np.zeros(d * d_state),
            b_delta=np.zeros(d),
        )


@dataclass(frozen=True, eq=False)
class SelectiveParams:
    """Per-timestep ``B`` and ``C`` (..., L, d, d_state) and step sizes ``delta`` (..., L, d)."""

    B: np.ndarray
    C: np.ndarray
    delta: np.ndarray

    @property
    def length(self) -> int:
        return self.delta.shape[-2]

    def replace(self, **changes) -> "SelectiveParams":
        fields = {"B": self.B, "C": self.C, "delta": self.delta}
        fields.update(changes)
        return SelectiveParams(**fields)


def _check_seq(x: np.ndarray, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2 or x.shape[-1] != d:
        raise DimensionError(f"sequence of shape {x.shape} does not have {d} channels")
    if x.shape[-2] < 1:
        raise DimensionError("sequence length must be >= 1")
    return x


def project_selective(x: np.ndarray, w: SsmWeights) -> SelectiveParams:
    """Project B, C and delta from every timestep of ``x`` (..., L, d)."""
    x = _check_seq(x, w.d)
    lead = x.shape[:-1]
    B = (contract(x, w.W_B) + w.b_B).reshape(lead + (w.d, w.d_state))
    C = (contract(x, w.W_C) + w.b_C).reshape(lead + (w.d, w.d_state))
    delta = softplus(contract(x, w.W_delta) + w.b_delta)
    return SelectiveParams(B=B, C=C, delta=delta)


def discretize(A: np.ndarray, delta: np.ndarray, B: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Zero-order hold: ``A_bar = exp(delta*A)``, ``B_bar = (exp(delta*A) - 1) / (delta*A) * delta*B``.

    ``delta`` has shape (..., d) and is broadcast over the state axis. Where
    ``|delta*A| < 1e-8`` the removable singularity takes its limit ``delta * B``.
    """
    A = np.asarray(A, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    dA = delta[..., None] * A
    A_bar = np.exp(dA)
    tiny = np.abs(dA) < ZOH_SINGULAR_TOL
    safe = np.where(tiny, 1.0, dA)
    gain = np.expm1(safe) / safe
    dB = delta[..., None] * B
    B_bar = np.where(tiny, dB, gain * dB)
    return A_bar, B_bar


def _dot_state(C: np.ndarray, h: np.ndarray) -> np.ndarray:
    # left-to-right over the state axis, matching a scalar reference loop
    acc = C[..., 0] * h[..., 0]
    for k in range(1, C.shape[-1]):
        acc = acc + C[..., k] * h[..., k]
    return acc


def scan_recurrent(
    x: np.ndarray,
    sp: SelectiveParams,
    w: SsmWeights,
    h0: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Run ``h <- A_bar*h + B_bar*x``, ``y = <C, h> + D*x`` over every timestep.

    Returns the output sequence (..., L, d) and the final state (..., d, d_state).
    Unbatched parameters broadcast over batch axes of ``x``.
    """
    x = _check_seq(x, w.d)
    L = x.shape[-2]
    step = x.shape[-2:]
    try:
        if sp.delta.shape[-2:] != step or sp.B.shape[-3:] != step + (w.d_state,) \
                or sp.C.shape != sp.B.shape or sp.B.shape[:-1] != sp.delta.shape:
            raise ValueError
        batch = np.broadcast_shapes(x.shape[:-2], sp.delta.shape[:-2])
    except ValueError:
        raise DimensionError(
            f"selective params B{sp.B.shape} C{sp.C.shape} delta{sp.delta.shape} "
            f"do not match sequence {x.shape} with d_state={w.d_state}") from None
    A_bar, B_bar = discretize(w.A, sp.delta, sp.B)
    state_shape = batch + (w.d, w.d_state)
    if h0 is None:
        h = np.zeros(state_shape)
    else:
        h = np.broadcast_to(np.asarray(h0, dtype=np.float64), state_shape).copy()
    y = np.empty(batch + step)
    for i in range(L):
        xi = x[..., i, :]
        h = A_bar[..., i, :, :] * h + B_bar[..., i, :, :] * xi[..., None]
        y[..., i, :] = _dot_state(sp.C[..., i, :, :], h) + w.D * xi
    return y, h


def lti_params(B: np.ndarray, C: np.ndarray, delta: np.ndarray, L: int) -> SelectiveParams:
    """Repeat one (B, C, delta) set over ``L`` timesteps."""
    B = np.asarray(B, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    return SelectiveParams(
        B=np.broadcast_to(B, (L,) + B.shape).copy(),
        C=np.broadcast_to(C, (L,) + C.shape).copy(),
        delta=np.broadcast_to(delta, (L,) + delta.shape).copy(),
    )


def kernel_lti(w: SsmWeights, B: np.ndarray, C: np.ndarray, delta: np.ndarray, L: int) -> np.ndarray:
    """Convolution kernel ``K[j, t] = <C_j, A_bar_j^t * B_bar_j>`` of a time-invariant SSM, shape (d, L)."""
    A_bar, B_bar = discretize(w.A, delta, B)
    C = np.asarray(C, dtype=np.float64)
    K = np.empty((w.d, L))
    power = B_bar
    for t in range(L):
        K[:, t] = _dot_state(C, power)
        power = A_bar * power
    return K


def apply_kernel(x: np.ndarray, K: np.ndarray, D: np.ndarray) -> np.ndarray:
    """Causal per-channel convolution ``y_i = sum_{t<=i} K_t x_{i-t} + D x_i``."""
    x = np.asarray(x, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    L = x.shape[-2]
    if K.ndim != 2 or K.shape[0] != x.shape[-1]:
        raise DimensionError(f"kernel {K.shape} does not match sequence {x.shape}")
    if K.shape[1] < L:
        raise DimensionError(f"kernel length {K.shape[1]} is shorter than sequence length {L}")
    y = np.zeros_like(x)
    for t in range(L):
        y[..., t:, :] += K[:, t] * x[..., : L - t, :]
    return y + np.asarray(D, dtype=np.float64) * x


def ssm_forward(x: np.ndarray, w: SsmWeights) -> np.ndarray:
    """Project selective parameters from ``x`` and scan it from a zero state."""
    return scan_recurrent(x, project_selective(x, w), w)[0]
