"""Trainable score networks: residual MLP base plus conditional augmentation.

The network predicts the noise vector and converts it to a score by the
kernel scale, s(y, t) = -eps_hat(y, t) / sigma(t); the two are equivalent
parameterizations of the same optimum, but the noise head keeps outputs
O(1) across the whole time range, which is what makes training tractable.
Training minimizes the sigma^2-weighted form of the score-matching loss,
||eps_hat - z||^2 (per-time optimum unchanged by the weighting).

The conditional variant keeps the base frozen and adds a parallel
trainable branch whose output head is zero-initialized, so at
initialization the augmented model equals the base exactly.

Parameters, gradients, and the Adam loop are plain numpy, which keeps
training bit-deterministic under a fixed seed and makes every parameter
gradient checkable against finite differences.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .diffusion import DEFAULT_T_MIN, VPSchedule, kernel_coeffs

CHECKPOINT_SCHEMA = 1
_SCALE_T_FLOOR = 1e-6   # sigma(t) -> 0 at t = 0; clamp the score scaling there


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 128
    epochs: int = 50
    seed: int = 0
    t_min: float = DEFAULT_T_MIN
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if min(self.learning_rate, self.batch_size, self.epochs, self.t_min) <= 0:
            raise ValueError("hyperparameters must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("moment coefficients must lie in (0, 1)")


def time_features(t, n_frequencies: int) -> np.ndarray:
    """Sinusoidal features [sin(w_k t), cos(w_k t)], w_k geometric in [1, 1000]."""
    freqs = np.geomspace(1.0, 1000.0, n_frequencies)
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    phase = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(phase), np.cos(phase)], axis=1)


def _glorot(rng, out_dim, in_dim):
    return rng.standard_normal((out_dim, in_dim)) / np.sqrt(in_dim)


def _sigma_of(t, sched):
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    out = np.empty(t.shape)
    for k, tk in enumerate(t):
        _, s2 = kernel_coeffs(float(max(tk, _SCALE_T_FLOOR)), sched)
        out[k] = np.sqrt(s2)
    return out


class ScoreNetwork:
    """Residual MLP score model s(y, t) with zero-initialized output paths.

    The noise head is the sum of the MLP output and a time-gated diagonal
    term gain(t) * y. The diagonal path carries the near-identity component
    the optimal predictor has at large noise levels, which a width < d
    hidden stream cannot represent on its own; both output paths start at
    zero so a fresh network predicts exactly nothing.
    """

    GAIN_WIDTH = 32

    def __init__(self, d: int, width: int = 256, hidden_layers: int = 4,
                 n_frequencies: int = 16, seed: int = 0,
                 sched: VPSchedule | None = None):
        if d < 1 or width < 1 or hidden_layers < 1:
            raise ValueError("d, width, hidden_layers must be >= 1")
        self.d = d
        self.width = width
        self.hidden_layers = hidden_layers
        self.n_frequencies = n_frequencies
        self.sched = sched or VPSchedule()
        self.blocks = hidden_layers - 1
        rng = np.random.default_rng(seed)
        in_dim = d + 2 * n_frequencies
        self.params = {"W_in": _glorot(rng, width, in_dim), "b_in": np.zeros(width)}
        for l in range(self.blocks):
            self.params[f"W_{l}"] = _glorot(rng, width, width)
            self.params[f"b_{l}"] = np.zeros(width)
        self.params["W_out"] = np.zeros((d, width))
        self.params["b_out"] = np.zeros(d)
        self.params["G_in"] = _glorot(rng, self.GAIN_WIDTH, 2 * n_frequencies)
        self.params["g_in"] = np.zeros(self.GAIN_WIDTH)
        self.params["G_out"] = np.zeros((d, self.GAIN_WIDTH))
        self.params["g_out"] = np.zeros(d)
        self.loss_history: list[float] = []

    def architecture(self) -> dict:
        return {
            "kind": "score_network",
            "d": self.d,
            "width": self.width,
            "hidden_layers": self.hidden_layers,
            "n_frequencies": self.n_frequencies,
        }

    def _raw(self, Y, T, cache: dict | None = None):
        """Noise-prediction head before score scaling."""
        E = time_features(T, self.n_frequencies)
        Z0 = np.concatenate([Y, E], axis=1)
        H = np.tanh(Z0 @ self.params["W_in"].T + self.params["b_in"])
        H0 = H
        inputs, acts = [], []
        for l in range(self.blocks):
            A = np.tanh(H @ self.params[f"W_{l}"].T + self.params[f"b_{l}"])
            inputs.append(H)
            acts.append(A)
            H = H + A
        U = np.tanh(E @ self.params["G_in"].T + self.params["g_in"])
        gain = U @ self.params["G_out"].T + self.params["g_out"]
        out = H @ self.params["W_out"].T + self.params["b_out"] + gain * Y
        if cache is not None:
            cache.update(Z0=Z0, E=E, H0=H0, inputs=inputs, acts=acts,
                         H_final=H, U=U, Y=Y)
        return out

    def _backprop(self, d_raw, cache):
        """Gradients of sum(d_raw * raw) for every parameter."""
        grads = {}
        grads["W_out"] = d_raw.T @ cache["H_final"]
        grads["b_out"] = d_raw.sum(axis=0)
        d_gain = d_raw * cache["Y"]
        grads["G_out"] = d_gain.T @ cache["U"]
        grads["g_out"] = d_gain.sum(axis=0)
        dU = (d_gain @ self.params["G_out"]) * (1.0 - cache["U"] ** 2)
        grads["G_in"] = dU.T @ cache["E"]
        grads["g_in"] = dU.sum(axis=0)
        dH = d_raw @ self.params["W_out"]
        for l in reversed(range(self.blocks)):
            A = cache["acts"][l]
            dA = dH * (1.0 - A * A)
            grads[f"W_{l}"] = dA.T @ cache["inputs"][l]
            grads[f"b_{l}"] = dA.sum(axis=0)
            dH = dH + dA @ self.params[f"W_{l}"]
        H0 = cache["H0"]
        dA0 = dH * (1.0 - H0 * H0)
        grads["W_in"] = dA0.T @ cache["Z0"]
        grads["b_in"] = dA0.sum(axis=0)
        return grads

    def forward(self, y: np.ndarray, t, cache: dict | None = None) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        squeeze = y.ndim == 1
        Y = np.atleast_2d(y)
        if Y.shape[1] != self.d:
            raise ValueError(f"input dimension {Y.shape[1]} != network d {self.d}")
        T = np.broadcast_to(np.atleast_1d(np.asarray(t, dtype=np.float64)),
                            (Y.shape[0],))
        out = -self._raw(Y, T, cache=cache) / _sigma_of(T, self.sched)[:, None]
        return out[0] if squeeze else out

    def __call__(self, y, t):
        return self.forward(y, t)

    def _perturbed(self, y0, t, z):
        B = y0.shape[0]
        alpha = np.empty(B)
        sigma = np.empty(B)
        for k in range(B):
            a, s2 = kernel_coeffs(float(t[k]), self.sched)
            alpha[k], sigma[k] = a, np.sqrt(s2)
        return alpha[:, None] * y0 + sigma[:, None] * z, sigma

    def loss_and_grads(self, y0: np.ndarray, t: np.ndarray, z: np.ndarray,
                       sched: VPSchedule | None = None):
        """Unit-weighted DSM loss ||s + z/sigma||^2 and its parameter grads."""
        sched = sched or self.sched
        yt, sigma = self._perturbed(y0, t, z)
        B = y0.shape[0]
        T = np.asarray(t, dtype=np.float64)
        cache: dict = {}
        raw = self._raw(np.atleast_2d(yt), T, cache=cache)
        scale = _sigma_of(T, sched)[:, None]
        err = -raw / scale + z / sigma[:, None]
        loss = float(np.sum(err * err)) / B
        grads = self._backprop(-2.0 * err / (B * scale), cache)
        return loss, grads

    def train_loss_and_grads(self, y0, t, z):
        """Noise-prediction loss ||eps_hat - z||^2 (sigma^2-weighted DSM)."""
        yt, _ = self._perturbed(y0, t, z)
        B = y0.shape[0]
        T = np.asarray(t, dtype=np.float64)
        cache: dict = {}
        raw = self._raw(np.atleast_2d(yt), T, cache=cache)
        err = raw - z
        loss = float(np.sum(err * err)) / B
        grads = self._backprop(2.0 * err / B, cache)
        return loss, grads


def score_forward(net, y: np.ndarray, t, cond: np.ndarray | None = None) -> np.ndarray:
    """Evaluate a score model; conditional models require their condition."""
    if cond is not None:
        return net.forward(y, t, cond)
    return net.forward(y, t)


def cfg_score(cond: np.ndarray, uncond: np.ndarray, gamma: float) -> np.ndarray:
    """Classifier-free guidance mix gamma*cond + (1-gamma)*uncond."""
    cond = np.asarray(cond, dtype=np.float64)
    uncond = np.asarray(uncond, dtype=np.float64)
    if cond.shape != uncond.shape:
        raise ValueError(f"shape mismatch {cond.shape} vs {uncond.shape}")
    return gamma * cond + (1.0 - gamma) * uncond


class ConditionalAugmentation:
    """Frozen base network plus a trainable condition branch with zero gates.

    A two-layer condition encoder lifts the condition to the state
    dimension and shifts the branch input; a smaller residual MLP processes
    it; a zero-initialized affine head adds onto the base noise prediction.
    Zero head => the model reproduces the base exactly at initialization.
    """

    def __init__(self, base: ScoreNetwork, cond_dim: int, width: int | None = None,
                 hidden_layers: int = 3, enc_width: int = 128, seed: int = 0):
        if cond_dim < 1:
            raise ValueError("cond_dim must be >= 1")
        self.base = base
        self.cond_dim = cond_dim
        self.width = width or base.width
        self.hidden_layers = hidden_layers
        self.enc_width = enc_width
        self.blocks = hidden_layers - 1
        d = base.d
        rng = np.random.default_rng(seed)
        in_dim = d + 2 * base.n_frequencies
        self.params = {
            "E1": _glorot(rng, enc_width, cond_dim), "e1": np.zeros(enc_width),
            "E2": _glorot(rng, d, enc_width), "e2": np.zeros(d),
            "V_in": _glorot(rng, self.width, in_dim), "c_in": np.zeros(self.width),
        }
        for l in range(self.blocks):
            self.params[f"V_{l}"] = _glorot(rng, self.width, self.width)
            self.params[f"c_{l}"] = np.zeros(self.width)
        self.params["Z"] = np.zeros((d, self.width))
        self.params["z_b"] = np.zeros(d)
        self.loss_history: list[float] = []

    @property
    def d(self):
        return self.base.d

    @property
    def sched(self):
        return self.base.sched

    def architecture(self) -> dict:
        return {
            "kind": "conditional_augmentation",
            "base": self.base.architecture(),
            "cond_dim": self.cond_dim,
            "width": self.width,
            "hidden_layers": self.hidden_layers,
            "enc_width": self.enc_width,
        }

    def _branch_raw(self, Y, T, C, cache: dict | None = None):
        p = self.params
        Ec = np.tanh(C @ p["E1"].T + p["e1"])
        shift = Ec @ p["E2"].T + p["e2"]
        Z0 = np.concatenate(
            [Y + shift, time_features(T, self.base.n_frequencies)], axis=1
        )
        G = np.tanh(Z0 @ p["V_in"].T + p["c_in"])
        G0 = G
        inputs, acts = [], []
        for l in range(self.blocks):
            A = np.tanh(G @ p[f"V_{l}"].T + p[f"c_{l}"])
            inputs.append(G)
            acts.append(A)
            G = G + A
        if cache is not None:
            cache.update(Ec=Ec, Z0=Z0, G0=G0, inputs=inputs, acts=acts,
                         G_final=G, C=C)
        return G @ p["Z"].T + p["z_b"]

    def _branch_backprop(self, d_raw, cache):
        p = self.params
        grads = {}
        grads["Z"] = d_raw.T @ cache["G_final"]
        grads["z_b"] = d_raw.sum(axis=0)
        dG = d_raw @ p["Z"]
        for l in reversed(range(self.blocks)):
            A = cache["acts"][l]
            dA = dG * (1.0 - A * A)
            grads[f"V_{l}"] = dA.T @ cache["inputs"][l]
            grads[f"c_{l}"] = dA.sum(axis=0)
            dG = dG + dA @ p[f"V_{l}"]
        G0 = cache["G0"]
        dA0 = dG * (1.0 - G0 * G0)
        grads["V_in"] = dA0.T @ cache["Z0"]
        grads["c_in"] = dA0.sum(axis=0)
        dShift = (dA0 @ p["V_in"])[:, : self.d]
        grads["E2"] = dShift.T @ cache["Ec"]
        grads["e2"] = dShift.sum(axis=0)
        dEc = (dShift @ p["E2"]) * (1.0 - cache["Ec"] ** 2)
        grads["E1"] = dEc.T @ cache["C"]
        grads["e1"] = dEc.sum(axis=0)
        return grads

    def _conds(self, C, rows):
        C = np.atleast_2d(np.asarray(C, dtype=np.float64))
        if C.shape[0] == 1 and rows > 1:
            C = np.broadcast_to(C, (rows, C.shape[1]))
        if C.shape[1] != self.cond_dim:
            raise ValueError(f"condition dimension {C.shape[1]} != {self.cond_dim}")
        return C

    def forward(self, y: np.ndarray, t, cond: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        squeeze = y.ndim == 1
        Y = np.atleast_2d(y)
        C = self._conds(cond, Y.shape[0])
        T = np.broadcast_to(np.atleast_1d(np.asarray(t, dtype=np.float64)),
                            (Y.shape[0],))
        out = self.base.forward(Y, T) + (
            -self._branch_raw(Y, T, C) / _sigma_of(T, self.sched)[:, None]
        )
        return out[0] if squeeze else out

    def __call__(self, y, t, cond):
        return self.forward(y, t, cond)

    def train_loss_and_grads(self, y0, t, z, cond):
        """Conditional noise-prediction loss; gradients for branch params only."""
        yt, _ = self.base._perturbed(y0, t, z)
        B = y0.shape[0]
        T = np.asarray(t, dtype=np.float64)
        cache: dict = {}
        raw = self.base._raw(np.atleast_2d(yt), T) + self._branch_raw(
            np.atleast_2d(yt), T, self._conds(cond, B), cache=cache)
        err = raw - z
        loss = float(np.sum(err * err)) / B
        grads = self._branch_backprop(2.0 * err / B, cache)
        return loss, grads


class _Adam:
    def __init__(self, params: dict, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step = 0

    def update(self, params: dict, grads: dict):
        c = self.cfg
        self.step += 1
        bc1 = 1.0 - c.beta1**self.step
        bc2 = 1.0 - c.beta2**self.step
        for k, g in grads.items():
            self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * g * g
            params[k] -= c.learning_rate * (self.m[k] / bc1) / (
                np.sqrt(self.v[k] / bc2) + c.adam_eps
            )


def parameter_hash(net) -> str:
    """SHA-256 over the raw little-endian parameter block, order-stable."""
    h = hashlib.sha256()
    for name in sorted(net.params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(net.params[name], dtype="<f8").tobytes())
    return h.hexdigest()


def _run_training(model, states, conds, sched, cfg):
    rng = np.random.default_rng(cfg.seed)
    adam = _Adam(model.params, cfg)
    count = states.shape[0]
    losses = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(count)
        for lo in range(0, count, cfg.batch_size):
            sel = order[lo : lo + cfg.batch_size]
            y0 = states[sel]
            t = rng.uniform(cfg.t_min, sched.T, sel.size)
            z = rng.standard_normal(y0.shape)
            if conds is None:
                loss, grads = model.train_loss_and_grads(y0, t, z)
            else:
                loss, grads = model.train_loss_and_grads(y0, t, z, conds[sel])
            if not np.isfinite(loss):
                raise RuntimeError(f"training diverged (loss={loss}) at epoch {epoch}")
            adam.update(model.params, grads)
            losses.append(loss)
    model.loss_history = losses
    return model


def train_unconditional(states: np.ndarray, sched: VPSchedule, cfg: TrainConfig,
                        width: int = 256, hidden_layers: int = 4) -> ScoreNetwork:
    """Train a fresh score network on standardized state vectors."""
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[0] == 0:
        raise ValueError("states must be a nonempty (count, d) array")
    net = ScoreNetwork(states.shape[1], width=width, hidden_layers=hidden_layers,
                       seed=cfg.seed, sched=sched)
    return _run_training(net, states, None, sched, cfg)


def train_conditional(states: np.ndarray, conds: np.ndarray, base: ScoreNetwork,
                      sched: VPSchedule, cfg: TrainConfig,
                      hidden_layers: int = 3) -> ConditionalAugmentation:
    """Train a conditional branch over a frozen base network."""
    states = np.asarray(states, dtype=np.float64)
    conds = np.asarray(conds, dtype=np.float64)
    if states.shape[0] != conds.shape[0] or states.shape[0] == 0:
        raise ValueError("states and conditions must pair up nonempty")
    base_hash = parameter_hash(base)
    aug = ConditionalAugmentation(base, conds.shape[1],
                                  hidden_layers=hidden_layers, seed=cfg.seed)
    _run_training(aug, states, conds, sched, cfg)
    if parameter_hash(base) != base_hash:
        raise RuntimeError("frozen base parameters changed during conditional training")
    return aug


def measurement_condition(d: int, indices: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Mask-and-values encoding of sparse measurements, length 2d."""
    indices = np.asarray(indices, dtype=np.intp)
    mask = np.zeros(d)
    vals = np.zeros(d)
    mask[indices] = 1.0
    vals[indices] = values
    return np.concatenate([mask, vals])


def save_checkpoint(net, path, schedule: VPSchedule | None = None,
                    dataset_hash: str = "", seed: int | None = None):
    """JSON header line + raw little-endian float64 parameter block."""
    schedule = schedule or net.sched
    names = sorted(net.params)
    header = {
        "schema": CHECKPOINT_SCHEMA,
        "architecture": net.architecture(),
        "schedule": {"beta_min": schedule.beta_min, "beta_max": schedule.beta_max,
                     "T": schedule.T},
        "dataset_hash": dataset_hash,
        "seed": seed,
        "params": [{"name": n, "shape": list(net.params[n].shape)} for n in names],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for n in names:
            fh.write(np.ascontiguousarray(net.params[n], dtype="<f8").tobytes())


def load_checkpoint(path, base: ScoreNetwork | None = None):
    """Rebuild a network from a checkpoint, rejecting mismatched headers."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        blob = fh.read()
    header = json.loads(header_line.decode("utf-8"))
    if header.get("schema") != CHECKPOINT_SCHEMA:
        raise ValueError(
            f"unsupported checkpoint schema {header.get('schema')} "
            f"(expected {CHECKPOINT_SCHEMA})"
        )
    s = header["schedule"]
    sched = VPSchedule(s["beta_min"], s["beta_max"], s["T"])
    arch = header["architecture"]
    if arch["kind"] == "score_network":
        net = ScoreNetwork(arch["d"], width=arch["width"],
                           hidden_layers=arch["hidden_layers"],
                           n_frequencies=arch["n_frequencies"], seed=0, sched=sched)
    elif arch["kind"] == "conditional_augmentation":
        if base is None:
            b = arch["base"]
            base = ScoreNetwork(b["d"], width=b["width"],
                                hidden_layers=b["hidden_layers"],
                                n_frequencies=b["n_frequencies"], seed=0, sched=sched)
        elif base.architecture() != arch["base"]:
            raise ValueError("checkpoint base architecture does not match given base")
        net = ConditionalAugmentation(base, arch["cond_dim"], width=arch["width"],
                                      hidden_layers=arch["hidden_layers"],
                                      enc_width=arch["enc_width"], seed=0)
    else:
        raise ValueError(f"unknown checkpoint kind {arch['kind']!r}")

    names = sorted(net.params)
    declared = [p["name"] for p in header["params"]]
    if declared != names:
        raise ValueError("checkpoint parameter names do not match architecture")
    expected = sum(int(np.prod(p["shape"])) for p in header["params"]) * 8
    if len(blob) != expected:
        raise ValueError(
            f"checkpoint payload truncated: {len(blob)} bytes, expected {expected}"
        )
    offset = 0
    for meta in header["params"]:
        shape = tuple(meta["shape"])
        size = int(np.prod(shape)) * 8
        if tuple(net.params[meta["name"]].shape) != shape:
            raise ValueError(
                f"parameter {meta['name']} shape {shape} mismatches architecture"
            )
        arr = np.frombuffer(blob[offset : offset + size], dtype="<f8").reshape(shape)
        net.params[meta["name"]] = arr.astype(np.float64)
        offset += size
    return net, header
