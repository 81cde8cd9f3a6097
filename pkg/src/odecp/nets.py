"""Per-mode networks: Fourier feature map, encoder, latent dynamics, decoder.

Each tensor mode k owns one :class:`ModeNetwork`. A continuous index i is
expanded into ``[cos(2*pi*b*i); sin(2*pi*b*i)]`` with learnable frequencies
``b`` (length M), encoded into a J-dimensional initial latent state, advanced
in time by the dynamics net (which sees the timestamp as an extra input
coordinate), and decoded into the R-dimensional factor value.

Parameters are plain float64 numpy arrays owned by the network objects.
Forward passes run on an autodiff tape: ``lift_params`` turns the arrays of
a model into leaf ``Var``s once per tape, and the ``encode_initial_state`` /
``dynamics_step`` / ``decode`` functions consume that leaf map.

Hidden activations are tanh; output layers are linear everywhere.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .specialmath import DomainError

TWO_PI = 2.0 * np.pi


class Mlp:
    """Dense MLP with tanh hidden layers and a linear output layer."""

    def __init__(self, sizes: list[int], rng: np.random.Generator, name: str):
        if len(sizes) < 2:
            raise ValueError("Mlp needs at least input and output sizes")
        self.sizes = list(sizes)
        self.name = name
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, size=(1, fan_out)))

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{self.name}.w{i}"] = w
            out[f"{self.name}.b{i}"] = b
        return out

    def apply(self, x: Var, leaves: dict[str, Var]) -> Var:
        h = x
        last = len(self.weights) - 1
        for i in range(len(self.weights)):
            w = leaves[f"{self.name}.w{i}"]
            b = leaves[f"{self.name}.b{i}"]
            h = ad.add(ad.matmul(h, w), ad.broadcast_row(b, h.value.shape[0]))
            if i != last:
                h = ad.tanh(h)
        return h


class FourierFeatureMap:
    """Learnable frequency vector b; maps an index to a 2M feature row."""

    def __init__(self, m: int, rng: np.random.Generator, name: str):
        self.name = name
        self.freqs = rng.standard_normal((1, m))

    @property
    def m(self) -> int:
        return self.freqs.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.b": self.freqs}

    def apply(self, indexes: Var, leaves: dict[str, Var]) -> Var:
        # indexes: (U, 1) column; output: (U, 2M) = [cos | sin]
        angles = ad.scale(ad.matmul(indexes, leaves[f"{self.name}.b"]), TWO_PI)
        return ad.concat_cols([ad.cos(angles), ad.sin(angles)])


class ModeNetwork:
    """All learnable parameters of one tensor mode."""

    def __init__(self, mode: int, rank: int, state_dim: int, fourier_dim: int,
                 rng: np.random.Generator,
                 encoder_hidden=(100,), dynamics_hidden=(100, 100),
                 decoder_hidden=(100, 100)):
        self.mode = mode
        self.rank = rank
        self.state_dim = state_dim
        prefix = f"mode{mode}"
        self.fourier = FourierFeatureMap(fourier_dim, rng, f"{prefix}.fourier")
        self.encoder = Mlp([2 * fourier_dim, *encoder_hidden, state_dim], rng,
                           f"{prefix}.encoder")
        self.dynamics = Mlp([state_dim + 1, *dynamics_hidden, state_dim], rng,
                            f"{prefix}.dynamics")
        self.decoder = Mlp([state_dim, *decoder_hidden, rank], rng,
                           f"{prefix}.decoder")

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        out.update(self.fourier.params())
        out.update(self.encoder.params())
        out.update(self.dynamics.params())
        out.update(self.decoder.params())
        return out


def lift_params(params: dict[str, np.ndarray], tape: Tape) -> dict[str, Var]:
    """Create one leaf Var per named parameter array."""
    return {name: tape.leaf(arr) for name, arr in params.items()}


def _check_finite(arr: np.ndarray, what: str):
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{what} must be finite")


def encode_initial_state(mode: ModeNetwork, indexes, leaves: dict[str, Var],
                         tape: Tape) -> Var:
    """Initial latent states z(i, 0) for a column of indexes: (U, J)."""
    col = np.atleast_1d(np.asarray(indexes, dtype=np.float64)).reshape(-1, 1)
    _check_finite(col, "index")
    feats = mode.fourier.apply(tape.const(col), leaves)
    return mode.encoder.apply(feats, leaves)


def dynamics_step(mode: ModeNetwork, state: Var, time: float,
                  leaves: dict[str, Var], tape: Tape) -> Var:
    """State derivative h(z, t); the timestamp is appended as an input."""
    if not np.isfinite(time):
        raise DomainError("time must be finite")
    _check_finite(state.value, "state")
    u = state.value.shape[0]
    tcol = tape.const(np.full((u, 1), float(time)))
    return mode.dynamics.apply(ad.concat_cols([state, tcol]), leaves)


def decode(mode: ModeNetwork, state: Var, leaves: dict[str, Var]) -> Var:
    """Factor values g(i, t) for a table of latent states: (U, R)."""
    _check_finite(state.value, "state")
    return mode.decoder.apply(state, leaves)
