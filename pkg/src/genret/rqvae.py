"""Residual-quantized autoencoder over ad embeddings and S-ID assignment.

All gradients are analytic numpy; the quantizer's argmin is bridged with a
straight-through estimator (decoder-input gradient copied onto the encoder
output). Codebooks receive gradients only from the codebook-pull term of the
quantization loss; the encoder additionally receives the commitment term.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .embed import EmbeddingTable
from .sid import SemanticId


class RqVaeError(RuntimeError):
    pass


class TrainingDivergedError(RqVaeError):
    def __init__(self, epoch: int):
        super().__init__(f"training diverged: non-finite loss at epoch {epoch}")
        self.epoch = epoch


@dataclass
class RqVaeConfig:
    num_levels: int = 4
    codebook_size: int = 1024
    latent_dim: int = 8
    commitment_weight: float = 0.25
    learning_rate: float = 5e-3
    epochs: int = 200
    seed: int = 0
    hidden_dim: int | None = None
    activation: str = "tanh"  # "tanh" or "identity"

    def __post_init__(self):
        if self.num_levels < 1:
            raise RqVaeError("num_levels must be >= 1")
        if self.codebook_size < 2:
            raise RqVaeError("codebook_size must be >= 2")
        if self.latent_dim < 2:
            raise RqVaeError("latent_dim must be >= 2")


def _act(name: str, x: np.ndarray) -> np.ndarray:
    return np.tanh(x) if name == "tanh" else x


def _act_grad(name: str, x: np.ndarray) -> np.ndarray:
    return 1.0 - np.tanh(x) ** 2 if name == "tanh" else np.ones_like(x)


@dataclass
class RqVaeModel:
    config: RqVaeConfig
    input_dim: int
    params: dict[str, np.ndarray] = field(default_factory=dict)
    codebooks: list[np.ndarray] = field(default_factory=list)

    def param_items(self):
        for name in sorted(self.params):
            yield name, self.params[name]
        for l, cb in enumerate(self.codebooks):
            yield f"codebook_{l}", cb

    def copy(self) -> "RqVaeModel":
        return RqVaeModel(
            config=self.config,
            input_dim=self.input_dim,
            params={k: v.copy() for k, v in self.params.items()},
            codebooks=[cb.copy() for cb in self.codebooks],
        )


def init_model(config: RqVaeConfig, input_dim: int, rng: np.random.Generator | None = None) -> RqVaeModel:
    if rng is None:
        rng = np.random.default_rng(config.seed)
    hidden = config.hidden_dim or max(16, 2 * config.latent_dim)
    d_in, d_rq = input_dim, config.latent_dim

    def layer(n_out, n_in):
        return rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_out, n_in))

    params = {
        "enc_w1": layer(hidden, d_in),
        "enc_b1": np.zeros(hidden),
        "enc_w2": layer(d_rq, hidden),
        "enc_b2": np.zeros(d_rq),
        "dec_w1": layer(hidden, d_rq),
        "dec_b1": np.zeros(hidden),
        "dec_w2": layer(d_in, hidden),
        "dec_b2": np.zeros(d_in),
    }
    codebooks = [
        rng.normal(0.0, 0.1, size=(config.codebook_size, d_rq))
        for _ in range(config.num_levels)
    ]
    return RqVaeModel(config=config, input_dim=input_dim, params=params, codebooks=codebooks)


def encode(model: RqVaeModel, x: np.ndarray) -> np.ndarray:
    """Two-layer encoder forward pass: d_PLM -> hidden -> d_RQ."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.input_dim:
        raise RqVaeError(
            f"input dimension {x.shape[-1]} != encoder input {model.input_dim}"
        )
    p, a = model.params, model.config.activation
    h = _act(a, x @ p["enc_w1"].T + p["enc_b1"])
    return h @ p["enc_w2"].T + p["enc_b2"]


def decode_latent(model: RqVaeModel, z: np.ndarray) -> np.ndarray:
    p, a = model.params, model.config.activation
    h = _act(a, z @ p["dec_w1"].T + p["dec_b1"])
    return h @ p["dec_w2"].T + p["dec_b2"]


def quantize(codebooks: list[np.ndarray], z_hat: np.ndarray):
    """Residual quantization: per level pick the nearest code, subtract it.

    Returns (codes, z, residuals); residuals has length M+1 and includes the
    final residual, so r[l+1] + e[codes[l]] == r[l] exactly and
    z_hat == z + r[-1].
    """
    r = np.asarray(z_hat, dtype=np.float64)
    codes: list[int] = []
    residuals = [r]
    z = np.zeros_like(r)
    for cb in codebooks:
        d = np.sum((cb - r) ** 2, axis=1)
        k = int(np.argmin(d))
        codes.append(k)
        z = z + cb[k]
        r = r - cb[k]
        residuals.append(r)
    return codes, z, residuals


def losses(model: RqVaeModel, x: np.ndarray, codes, residuals) -> tuple[float, float]:
    """Reconstruction and quantization loss for one sample."""
    beta = model.config.commitment_weight
    z = sum(model.codebooks[l][c] for l, c in enumerate(codes))
    x_hat = decode_latent(model, z)
    recons = float(np.sum((np.asarray(x) - x_hat) ** 2))
    quant = 0.0
    for l, c in enumerate(codes):
        gap = residuals[l] - model.codebooks[l][c]
        quant += (1.0 + beta) * float(np.sum(gap**2))
    return recons, quant


def _forward_backward(model: RqVaeModel, X: np.ndarray):
    """Mean total loss over the batch and analytic gradients."""
    p = model.params
    act = model.config.activation
    beta = model.config.commitment_weight
    n = X.shape[0]

    pre1 = X @ p["enc_w1"].T + p["enc_b1"]
    h1 = _act(act, pre1)
    z_hat = h1 @ p["enc_w2"].T + p["enc_b2"]

    all_codes = []
    commit_grad = np.zeros_like(z_hat)
    Z = np.zeros_like(z_hat)
    cb_grads = [np.zeros_like(cb) for cb in model.codebooks]
    quant_total = 0.0
    for i in range(n):
        codes, z, residuals = quantize(model.codebooks, z_hat[i])
        all_codes.append(codes)
        Z[i] = z
        for l, c in enumerate(codes):
            gap = residuals[l] - model.codebooks[l][c]
            quant_total += (1.0 + beta) * float(np.sum(gap**2))
            cb_grads[l][c] += -2.0 * gap / n
            commit_grad[i] += 2.0 * beta * gap

    pre2 = Z @ p["dec_w1"].T + p["dec_b1"]
    h2 = _act(act, pre2)
    x_hat = h2 @ p["dec_w2"].T + p["dec_b2"]
    diff = x_hat - X
    recons_total = float(np.sum(diff**2))
    loss = (recons_total + quant_total) / n

    d_xhat = 2.0 * diff / n
    grads = {}
    grads["dec_w2"] = d_xhat.T @ h2
    grads["dec_b2"] = d_xhat.sum(axis=0)
    d_h2 = d_xhat @ p["dec_w2"]
    d_pre2 = d_h2 * _act_grad(act, pre2)
    grads["dec_w1"] = d_pre2.T @ Z
    grads["dec_b1"] = d_pre2.sum(axis=0)
    d_z = d_pre2 @ p["dec_w1"]

    # straight-through: decoder-input gradient copied to the encoder output,
    # plus the commitment pull
    d_zhat = d_z + commit_grad / n
    grads["enc_w2"] = d_zhat.T @ h1
    grads["enc_b2"] = d_zhat.sum(axis=0)
    d_h1 = d_zhat @ p["enc_w2"]
    d_pre1 = d_h1 * _act_grad(act, pre1)
    grads["enc_w1"] = d_pre1.T @ X
    grads["enc_b1"] = d_pre1.sum(axis=0)

    for l, g in enumerate(cb_grads):
        grads[f"codebook_{l}"] = g
    return loss, grads, all_codes


def surrogate_loss(model: RqVaeModel, X: np.ndarray, frozen) -> float:
    """Differentiable surrogate whose gradient the analytic backward computes.

    Stop-gradients and the argmin code selection are frozen at the values of
    a base forward pass; intended for finite-difference validation only.
    """
    p = model.params
    act = model.config.activation
    beta = model.config.commitment_weight
    n = X.shape[0]

    pre1 = X @ p["enc_w1"].T + p["enc_b1"]
    h1 = _act(act, pre1)
    z_hat = h1 @ p["enc_w2"].T + p["enc_b2"]

    total = 0.0
    Z_in = np.zeros_like(z_hat)
    for i in range(n):
        codes = frozen["codes"][i]
        for l, c in enumerate(codes):
            r_bar = frozen["residuals"][i][l]
            e_bar = frozen["code_vectors"][i][l]
            total += float(np.sum((r_bar - model.codebooks[l][c]) ** 2))
            r_eff = z_hat[i] - frozen["z_hat"][i] + r_bar
            total += beta * float(np.sum((r_eff - e_bar) ** 2))
        Z_in[i] = z_hat[i] - frozen["z_hat"][i] + frozen["z"][i]

    pre2 = Z_in @ p["dec_w1"].T + p["dec_b1"]
    h2 = _act(act, pre2)
    x_hat = h2 @ p["dec_w2"].T + p["dec_b2"]
    total += float(np.sum((x_hat - X) ** 2))
    return total / n


def freeze_forward(model: RqVaeModel, X: np.ndarray) -> dict:
    """Record the quantities the surrogate loss holds constant."""
    z_hat = encode(model, X)
    frozen = {"codes": [], "residuals": [], "code_vectors": [], "z": [], "z_hat": z_hat}
    for i in range(X.shape[0]):
        codes, z, residuals = quantize(model.codebooks, z_hat[i])
        frozen["codes"].append(codes)
        frozen["residuals"].append(residuals)
        frozen["code_vectors"].append([model.codebooks[l][c].copy() for l, c in enumerate(codes)])
        frozen["z"].append(z)
    return frozen


def _kmeanspp_seed(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++-style seeding from empirical points; pads with jittered
    resamples when fewer than k distinct points exist."""
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    while len(chosen) < min(k, n):
        total = float(d2.sum())
        if total <= 1e-12:
            break
        probs = d2 / total
        idx = int(rng.choice(n, p=probs))
        chosen.append(idx)
        d2 = np.minimum(d2, np.sum((points - points[idx]) ** 2, axis=1))
    centers = points[chosen]
    if centers.shape[0] < k:
        extra_idx = rng.integers(0, n, size=k - centers.shape[0])
        scale = max(1e-3, float(points.std()) * 1e-2)
        extra = points[extra_idx] + rng.normal(0.0, scale, size=(k - centers.shape[0], points.shape[1]))
        centers = np.vstack([centers, extra])
    return centers.copy()


def seed_codebooks(model: RqVaeModel, X: np.ndarray, rng: np.random.Generator) -> None:
    """Initialize each level's codebook from the empirical residuals of a
    forward pass with all previous levels frozen."""
    residual = encode(model, X)
    for l in range(model.config.num_levels):
        model.codebooks[l] = _kmeanspp_seed(residual, model.config.codebook_size, rng)
        cb = model.codebooks[l]
        idx = np.argmin(
            ((residual[:, None, :] - cb[None, :, :]) ** 2).sum(axis=2), axis=1
        )
        residual = residual - cb[idx]


def train(config: RqVaeConfig, table: EmbeddingTable) -> RqVaeModel:
    """Adam optimization of reconstruction + quantization loss.

    Deterministic given config.seed; raises TrainingDivergedError if the
    loss goes non-finite.
    """
    if len(table) == 0:
        raise RqVaeError("cannot train on an empty embedding table")
    rng = np.random.default_rng(config.seed)
    ad_ids = sorted(table.entries)
    X = table.matrix(ad_ids)

    model = init_model(config, X.shape[1], rng)
    seed_codebooks(model, X, rng)

    m = {name: np.zeros_like(v) for name, v in model.param_items()}
    v = {name: np.zeros_like(val) for name, val in model.param_items()}
    b1, b2, eps = 0.9, 0.999, 1e-8
    lr = config.learning_rate

    for epoch in range(config.epochs):
        loss, grads, _ = _forward_backward(model, X)
        if not np.isfinite(loss):
            raise TrainingDivergedError(epoch)
        t = epoch + 1
        for name, _ in model.param_items():
            g = grads[name]
            m[name] = b1 * m[name] + (1 - b1) * g
            v[name] = b2 * v[name] + (1 - b2) * g**2
            m_hat = m[name] / (1 - b1**t)
            v_hat = v[name] / (1 - b2**t)
            step = lr * m_hat / (np.sqrt(v_hat) + eps)
            if name.startswith("codebook_"):
                model.codebooks[int(name.split("_")[1])] -= step
            else:
                model.params[name] -= step
    return model


def total_loss(model: RqVaeModel, table: EmbeddingTable) -> float:
    X = table.matrix(sorted(table.entries))
    loss, _, _ = _forward_backward(model, X)
    return loss


def assign_sids(model: RqVaeModel, table: EmbeddingTable) -> dict[str, SemanticId]:
    """Base codes from quantize(encode(x)); ads sharing identical base codes
    get disambiguation indices 0, 1, 2, ... in ascending ad_id order."""
    base: dict[str, tuple[int, ...]] = {}
    for ad_id in sorted(table.entries):
        z_hat = encode(model, table[ad_id])
        codes, _, _ = quantize(model.codebooks, z_hat)
        base[ad_id] = tuple(codes)
    seen: dict[tuple[int, ...], int] = {}
    out: dict[str, SemanticId] = {}
    for ad_id in sorted(base):
        b = base[ad_id]
        suffix = seen.get(b, 0)
        seen[b] = suffix + 1
        out[ad_id] = SemanticId(b + (suffix,))
    return out


def codebook_metrics(assignments: dict[str, SemanticId], config: RqVaeConfig):
    """Collision rate, max collision group size, and per-level usage rates."""
    if not assignments:
        raise RqVaeError("codebook_metrics needs a non-empty assignment")
    bases = [sid.base for sid in assignments.values()]
    n = len(bases)
    distinct = len(set(bases))
    collision_rate = 1.0 - distinct / n
    counts: dict[tuple[int, ...], int] = {}
    for b in bases:
        counts[b] = counts.get(b, 0) + 1
    max_collision = max(counts.values())
    usage = []
    for l in range(config.num_levels):
        used = len({b[l] for b in bases})
        usage.append(used / config.codebook_size)
    return collision_rate, max_collision, usage


def save_model(model: RqVaeModel, path) -> None:
    payload = {
        "config": asdict(model.config),
        "input_dim": model.input_dim,
        "params": {k: v.tolist() for k, v in model.params.items()},
        "codebooks": [cb.tolist() for cb in model.codebooks],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_model(path) -> RqVaeModel:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return RqVaeModel(
        config=RqVaeConfig(**payload["config"]),
        input_dim=payload["input_dim"],
        params={k: np.array(v) for k, v in payload["params"].items()},
        codebooks=[np.array(cb) for cb in payload["codebooks"]],
    )


def save_sids(sids: dict[str, SemanticId], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ad_id in sorted(sids):
            fh.write(json.dumps({"ad_id": ad_id, "tokens": list(sids[ad_id].tokens())}) + "\n")


def load_sids(path) -> dict[str, SemanticId]:
    from .sid import parse_token

    out: dict[str, SemanticId] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            codes = tuple(parse_token(t)[1] for t in obj["tokens"])
            out[obj["ad_id"]] = SemanticId(codes)
    return out
