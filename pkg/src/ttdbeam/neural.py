"""Toy-scale neural blocks for channel-to-beamformer learning.

Gradient-checked implementations of the building blocks (convolutional
encoder with residual blocks, cross attention, multi-user attention with
positional coding, FFN, multi-feature cross attention, softplus heads)
plus a miniature end-to-end unsupervised training loop. Sizes are kept
tiny; the blocks follow the same scaling laws as the full-size design
(channels double per encoder block while both trailing axes halve).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import objective as obj
from .assignment import optimal_permutation
from .autodiff import CVar, Tape, Var
from .beamformer import ConfigMode
from .channel import ChannelInstance
from .params import SystemParams


# ---- channel feature packing ----

def tensorize_channel(H: ChannelInstance) -> np.ndarray:
    """(K, M, 2N) real tensor with interleaved real/imag antenna entries."""
    h = H.responses
    K, M, N = h.shape
    out = np.empty((K, M, 2 * N))
    out[:, :, 0::2] = h.real
    out[:, :, 1::2] = h.imag
    return out


def detensorize_channel(values: np.ndarray) -> np.ndarray:
    """Inverse packing, bit-exact."""
    return values[:, :, 0::2] + 1j * values[:, :, 1::2]


def positional_code(P: int, D: int, base: float = 1000.0) -> np.ndarray:
    """Sinusoidal code for positions p = 1..P across D dimensions."""
    if D % 2 != 0:
        raise ValueError("positional code dimension must be even")
    p = np.arange(1, P + 1)[:, None]
    i = np.arange(D // 2)[None, :]
    angle = p / base ** (2.0 * i / D)
    out = np.empty((P, D))
    out[:, 0::2] = np.sin(angle)
    out[:, 1::2] = np.cos(angle)
    return out


def softplus(x):
    """ln(1 + e^x) on plain arrays, overflow-safe (x + ln(1+e^-x) for large x)."""
    return np.logaddexp(0.0, np.asarray(x, dtype=float))


# ---- weight store and functional layers ----

class _Ctx:
    """Per-forward view of the weight store lifted onto one tape."""

    def __init__(self, tape: Tape, weights: dict[str, np.ndarray]):
        self.tape = tape
        self.weights = weights
        self._lifted: dict[str, Var] = {}
        self.attention_row_dev = 0.0

    def var(self, name: str) -> Var:
        if name not in self._lifted:
            self._lifted[name] = self.tape.var(self.weights[name], name)
        return self._lifted[name]

    def lifted(self) -> dict[str, Var]:
        return self._lifted


def _glorot(rng: np.random.Generator, fan_out: int, fan_in: int, *extra) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in, *extra))


def dense(ctx: _Ctx, name: str, x: Var) -> Var:
    """x @ W^T + b for token-major inputs (tokens, features)."""
    W = ctx.var(f"{name}.w")
    b = ctx.var(f"{name}.b")
    return x @ W.T + b


def conv1d(ctx: _Ctx, name: str, x: Var) -> Var:
    """Cross-correlation over the last axis with zero same-padding.

    Accepts (C_in, T) or (C_in, Mv, T); channel mixing per window position.
    """
    W = ctx.var(f"{name}.w")     # (C_out, C_in, k)
    b = ctx.var(f"{name}.b")     # (C_out,)
    c_out, c_in, k = W.shape
    squeeze = x.value.ndim == 2
    if squeeze:
        x = x.reshape(x.shape[0], 1, x.shape[1])
    C, Mv, T = x.shape
    if C != c_in:
        raise ad.GraphError(f"conv {name}: {C} input channels, kernel wants {c_in}")
    pad = k // 2
    xp = ad.pad_last(x, pad, k - 1 - pad)
    idx = np.arange(T)[:, None] + np.arange(k)[None, :]
    windows = xp[:, :, idx]                       # (C, Mv, T, k)
    col = windows.transpose((0, 3, 1, 2)).reshape(C * k, Mv * T)
    W2 = W.reshape(c_out, c_in * k)
    out = (W2 @ col + b.reshape(c_out, 1)).reshape(c_out, Mv, T)
    return out.reshape(c_out, T) if squeeze else out


def batch_norm(ctx: _Ctx, name: str, x: Var, eps: float = 1e-5) -> Var:
    """Per-channel normalization over the trailing spatial axes."""
    gamma = ctx.var(f"{name}.gamma")
    beta = ctx.var(f"{name}.beta")
    C = x.shape[0]
    mean = x.mean(axis=(1, 2), keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=(1, 2), keepdims=True)
    normed = centered / ad.sqrt(var + eps)
    return normed * gamma.reshape(C, 1, 1) + beta.reshape(C, 1, 1)


def layer_norm(ctx: _Ctx, name: str, x: Var, eps: float = 1e-5) -> Var:
    gamma = ctx.var(f"{name}.gamma")
    beta = ctx.var(f"{name}.beta")
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / ad.sqrt(var + eps) * gamma + beta


def max_pool_2x(x: Var) -> Var:
    """Halve both trailing spatial axes of a (C, Mv, T) tensor."""
    C, Mv, T = x.shape
    if Mv >= 2:
        x = x[:, : 2 * (Mv // 2), :]
        x = ad.maximum(x[:, 0::2, :], x[:, 1::2, :])
    if T >= 2:
        x = x[:, :, : 2 * (T // 2)]
        x = ad.maximum(x[:, :, 0::2], x[:, :, 1::2])
    return x


def _attention(ctx: _Ctx, Q: Var, K: Var, V: Var) -> Var:
    d_k = K.shape[-1]
    scores = (Q @ K.T) * (1.0 / np.sqrt(d_k))
    A = ad.softmax(scores, axis=-1)
    dev = float(np.max(np.abs(A.value.sum(axis=-1) - 1.0)))
    ctx.attention_row_dev = max(ctx.attention_row_dev, dev)
    return A @ V


def cross_attention(ctx: _Ctx, name: str, latent_x: Var) -> Var:
    """Map a source latent onto a target latent and attend to it.

    Query comes from the source; key and value from the mapped latent.
    """
    latent_y = dense(ctx, f"{name}.map", latent_x)
    Q = dense(ctx, f"{name}.q", latent_x)
    K = dense(ctx, f"{name}.k", latent_y)
    V = dense(ctx, f"{name}.v", latent_y)
    return _attention(ctx, Q, K, V)


def multi_user_attention(ctx: _Ctx, name: str, x: Var, num_users: int) -> Var:
    """Per-user expansions, one self-attention head per user, fused output.

    The user axis introduced by the expansions is mean-pooled at the end so
    the result matches the input token count.
    """
    T = x.shape[0]
    expanded = ad.concat([dense(ctx, f"{name}.expand{k}", x)
                          for k in range(num_users)], axis=0)   # (K*T, D)
    heads = []
    for j in range(num_users):
        Q = dense(ctx, f"{name}.h{j}.q", expanded)
        K = dense(ctx, f"{name}.h{j}.k", expanded)
        V = dense(ctx, f"{name}.h{j}.v", expanded)
        heads.append(_attention(ctx, Q, K, V))
    fused = dense(ctx, f"{name}.out", ad.concat(heads, axis=1))  # (K*T, D)
    D = fused.shape[1]
    return fused.reshape(num_users, T, D).mean(axis=0)


def ffn(ctx: _Ctx, name: str, x: Var) -> Var:
    """Two linear layers with a GELU in between."""
    return dense(ctx, f"{name}.lin2", ad.gelu(dense(ctx, f"{name}.lin1", x)))


def transformer_layer(ctx: _Ctx, name: str, x: Var, num_users: int) -> Var:
    x = multi_user_attention(ctx, f"{name}.msa", layer_norm(ctx, f"{name}.ln1", x),
                             num_users) + x
    return ffn(ctx, f"{name}.ffn", layer_norm(ctx, f"{name}.ln2", x)) + x


def mca(ctx: _Ctx, name: str, latents: dict[str, Var]) -> dict[str, Var]:
    """Multi-feature cross attention: shared query over all latents.

    The query is built from the feature-axis concatenation of every latent;
    each latent supplies its own key/value pair and is replaced by the
    attended result (shape preserved).
    """
    joint = ad.concat(list(latents.values()), axis=1)
    Q = dense(ctx, f"{name}.q", joint)
    out = {}
    for key, latent in latents.items():
        K = dense(ctx, f"{name}.k_{key}", latent)
        V = dense(ctx, f"{name}.v_{key}", latent)
        out[key] = _attention(ctx, Q, K, V)
    return out


def encoder_block(ctx: _Ctx, name: str, x: Var) -> Var:
    """Conv -> BN -> ReLU -> residual block -> Conv -> 2x2 max pool."""
    C, Mv, T = x.shape
    if Mv < 2 or T < 2:
        raise ad.GraphError(f"encoder block {name}: spatial length underflow ({Mv}, {T})")
    y = ad.relu(batch_norm(ctx, f"{name}.bn", conv1d(ctx, f"{name}.conv1", x)))
    y = conv1d(ctx, f"{name}.conv3", ad.relu(conv1d(ctx, f"{name}.conv2", y))) + y
    y = conv1d(ctx, f"{name}.conv4", y)
    return max_pool_2x(y)


# ---- the toy end-to-end model ----

@dataclass
class ForwardResult:
    decoded: obj.DecodedGraph
    logits_per_chain: np.ndarray       # (N_RF, L, L) forward values
    attention_row_dev: float
    phi_value: np.ndarray              # (N, N_RF) complex forward value


class ToyBeamformerNet:
    """Channel tensor in, raw beamformer parameters out.

    Pipeline: tensorize -> encoder stack -> cross attention per target ->
    switch transformer (positional code, multi-user attention, FFN) ->
    multi-feature cross attention -> linear decoders -> Hungarian with a
    straight-through gradient -> analog/digital assembly.
    """

    def __init__(self, params: SystemParams, num_encoder_blocks: int = 2,
                 d_model: int = 16, num_transformer_layers: int = 1,
                 pc_base: float = 1000.0, seed: int = 0):
        self.params = params
        self.num_encoder_blocks = num_encoder_blocks
        self.d_model = d_model
        self.num_transformer_layers = num_transformer_layers
        self.pc_base = pc_base
        K, M, N = params.num_users, params.num_subcarriers, params.num_antennas
        L, n_rf = params.num_ttds_per_chain, params.num_rf_chains
        B = num_encoder_blocks
        if M // 2 ** (B - 1) < 2 or 2 * N // 2 ** (B - 1) < 2:
            raise ValueError("input too small for the encoder depth (length underflow)")

        rng = np.random.default_rng(seed)
        w: dict[str, np.ndarray] = {}

        def add_dense(name, out_dim, in_dim, scale=1.0):
            w[f"{name}.w"] = scale * _glorot(rng, out_dim, in_dim)
            w[f"{name}.b"] = np.zeros(out_dim)

        def add_conv(name, c_out, c_in, k=3):
            w[f"{name}.w"] = _glorot(rng, c_out, c_in, k) / np.sqrt(k)
            w[f"{name}.b"] = np.zeros(c_out)

        c_in = K
        for i in range(1, B + 1):
            c_out = K * 2 ** (2 + i)
            blk = f"enc{i}"
            add_conv(f"{blk}.conv1", c_out, c_in)
            w[f"{blk}.bn.gamma"] = np.ones(c_out)
            w[f"{blk}.bn.beta"] = np.zeros(c_out)
            add_conv(f"{blk}.conv2", c_out, c_out)
            add_conv(f"{blk}.conv3", c_out, c_out)
            add_conv(f"{blk}.conv4", c_out, c_out)
            c_in = c_out
        self.tokens = c_in
        self.feat_len = (M // 2 ** B if M >= 2 ** B else 1) * max(2 * N // 2 ** B, 1)

        d = d_model
        # latent junctions carry layer norms; without them the latent scale
        # compounds across blocks once training moves the chain weights
        for target in ("phi", "t", "d", "s"):
            ca = f"ca_{target}"
            add_dense(f"{ca}.map", d, self.feat_len)
            add_dense(f"{ca}.q", d, self.feat_len)
            add_dense(f"{ca}.k", d, d)
            add_dense(f"{ca}.v", d, d)
            w[f"{ca}.ln.gamma"] = np.ones(d)
            w[f"{ca}.ln.beta"] = np.zeros(d)

        for i in range(num_transformer_layers):
            tl = f"smt{i}"
            w[f"{tl}.ln1.gamma"] = np.ones(d)
            w[f"{tl}.ln1.beta"] = np.zeros(d)
            w[f"{tl}.ln2.gamma"] = np.ones(d)
            w[f"{tl}.ln2.beta"] = np.zeros(d)
            for k in range(K):
                add_dense(f"{tl}.msa.expand{k}", d, d)
            for j in range(K):
                add_dense(f"{tl}.msa.h{j}.q", d, d)
                add_dense(f"{tl}.msa.h{j}.k", d, d)
                add_dense(f"{tl}.msa.h{j}.v", d, d)
            add_dense(f"{tl}.msa.out", d, K * d)
            add_dense(f"{tl}.ffn.lin1", 4 * d, d)
            add_dense(f"{tl}.ffn.lin2", d, 4 * d)

        add_dense("switch_head.cols", n_rf * L, d)
        add_dense("switch_head.rows", n_rf * L, self.tokens)

        add_dense("mca.q", d, 4 * d)
        for key in ("phi", "t", "d", "s"):
            add_dense(f"mca.k_{key}", d, d)
            add_dense(f"mca.v_{key}", d, d)
            w[f"mca.ln_{key}.gamma"] = np.ones(d)
            w[f"mca.ln_{key}.beta"] = np.zeros(d)

        # output heads start small so the modulus/power penalties begin mild;
        # the PS head bias starts at 0.7x unit modulus so the modulus pull
        # settles well inside the training budget
        for target, out_dim in (("phi", 2 * N * n_rf), ("t", L * n_rf),
                                ("d", 2 * M * n_rf * K)):
            add_dense(f"dec_{target}.lin1", d, d)
            add_dense(f"dec_{target}.lin2", d, d)
            add_dense(f"dec_{target}.head", out_dim, self.tokens * d, scale=0.05)
        start_angles = rng.uniform(-np.pi, np.pi, size=N * n_rf)
        w["dec_phi.head.b"] = 0.7 * np.concatenate(
            [np.cos(start_angles), np.sin(start_angles)])
        self.weights = w

    def encoder_shapes(self, K: int, M: int, N2: int) -> list[tuple[int, int, int]]:
        """Latent shape after each block for an input (K, M, 2N) tensor."""
        shapes = []
        c, mv, t = K, M, N2
        for i in range(1, self.num_encoder_blocks + 1):
            c = K * 2 ** (2 + i)
            mv, t = mv // 2, t // 2
            shapes.append((c, mv, t))
        return shapes

    def forward(self, tape: Tape, ctx: _Ctx, H: ChannelInstance) -> ForwardResult:
        params = self.params
        K, M, N = params.num_users, params.num_subcarriers, params.num_antennas
        L, n_rf = params.num_ttds_per_chain, params.num_rf_chains

        x = tape.const(tensorize_channel(H))
        for i in range(1, self.num_encoder_blocks + 1):
            x = encoder_block(ctx, f"enc{i}", x)
        latent = x.reshape(x.shape[0], x.shape[1] * x.shape[2])

        latents = {key: layer_norm(ctx, f"ca_{key}.ln",
                                   cross_attention(ctx, f"ca_{key}", latent))
                   for key in ("phi", "t", "d", "s")}
        latents["s"] = latents["s"] + tape.const(
            positional_code(self.tokens, self.d_model, self.pc_base))
        for i in range(self.num_transformer_layers):
            latents["s"] = transformer_layer(ctx, f"smt{i}", latents["s"], K)
        latents = mca(ctx, "mca", latents)
        latents = {key: layer_norm(ctx, f"mca.ln_{key}", latents[key])
                   for key in latents}

        cols = dense(ctx, "switch_head.cols", latents["s"])       # (tokens, NRL)
        square = dense(ctx, "switch_head.rows", cols.T)           # (NRL, NRL)
        logits_value = np.zeros((n_rf, L, L))
        switch_vars = []
        perms = np.zeros((n_rf, L), dtype=int)
        for i in range(n_rf):
            block = square[i * L:(i + 1) * L, i * L:(i + 1) * L]
            logits_value[i] = block.value
            perms[i] = optimal_permutation(block.value)
            hard = np.zeros((L, L))
            hard[np.arange(L), perms[i]] = 1.0
            switch_vars.append(ad.straight_through(block, hard, "switch_ste"))

        def decode_head(target: str) -> Var:
            y = dense(ctx, f"dec_{target}.lin1", latents[target])
            y = dense(ctx, f"dec_{target}.lin2", y)
            return dense(ctx, f"dec_{target}.head", y.reshape(self.tokens * self.d_model))

        phi_flat = decode_head("phi")
        phi = CVar(phi_flat[0:N * n_rf].reshape(N, n_rf),
                   phi_flat[N * n_rf:].reshape(N, n_rf))
        t_raws = decode_head("t").reshape(L, n_rf)
        t_inc = ad.softplus(t_raws) * obj.delay_scale(params)
        tri = tape.const(np.tril(np.ones((L, L))))
        t_eff = tri @ t_inc
        d_flat = decode_head("d") * obj.digital_scale(params)
        d_re = d_flat[0:M * n_rf * K].reshape(M, n_rf, K)
        d_im = d_flat[M * n_rf * K:].reshape(M, n_rf, K)

        analog = obj.assemble_analog(tape, phi, t_eff, switch_vars,
                                     H.frequencies_hz, N)
        digital = [CVar(d_re[m], d_im[m]) for m in range(M)]
        decoded = obj.DecodedGraph(phi=phi, delay_increments=t_inc, analog=analog,
                                   digital=digital, switch_perms=perms,
                                   switch_vars=switch_vars)
        return ForwardResult(decoded, logits_value, ctx.attention_row_dev,
                             phi.value)


class Adam:
    """Adaptive moment estimation on a named weight store."""

    def __init__(self, weights: dict[str, np.ndarray], lr: float = 1e-2,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.weights = weights
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in weights.items()}
        self.v = {k: np.zeros_like(v) for k, v in weights.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            m_hat = self.m[k] / (1 - self.b1 ** self.t)
            v_hat = self.v[k] / (1 - self.b2 ** self.t)
            self.weights[k] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainingDiagnostics:
    loss_curve: list[float]
    permutations_valid: bool
    max_attention_row_dev: float
    phi_modulus_residual: float


def _clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm:
        return grads
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}


def mini_train(tiny_params: SystemParams, dataset: list[ChannelInstance],
               epochs: int = 50, batch_size: int = 8, lr: float = 1e-2,
               seed: int = 0, model: ToyBeamformerNet | None = None,
               grad_clip: float = 25.0,
               ) -> tuple[ToyBeamformerNet, TrainingDiagnostics]:
    """Unsupervised end-to-end training at tiny scale.

    Descends the mean composite loss over mini-batches with Adam steps and
    global-norm gradient clipping; every step checks that switch outputs
    are valid permutations and attention rows are stochastic. Aborts with
    diagnostics if the loss goes non-finite.
    """
    p = tiny_params
    if p.num_antennas > 32 or p.num_subcarriers > 4 or p.num_users > 2 \
            or p.num_ttds_per_chain > 4:
        raise ValueError("mini_train is restricted to tiny systems "
                         "(N <= 32, M <= 4, K <= 2, L <= 4)")
    if model is None:
        model = ToyBeamformerNet(p, seed=seed)
    rng = np.random.default_rng(seed)
    opt = Adam(model.weights, lr=lr)
    curve: list[float] = []
    perms_ok = True
    worst_row_dev = 0.0

    for _ in range(epochs):
        order = rng.permutation(len(dataset))
        epoch_losses = []
        for start in range(0, len(dataset), batch_size):
            batch = [dataset[j] for j in order[start:start + batch_size]]
            tape = Tape()
            ctx = _Ctx(tape, model.weights)
            total = None
            for H in batch:
                result = model.forward(tape, ctx, H)
                loss, _ = obj.composite_loss(H, result.decoded, tape)
                total = loss if total is None else total + loss
                for row in result.decoded.switch_perms:
                    if sorted(row.tolist()) != list(range(len(row))):
                        perms_ok = False
            total = total * (1.0 / len(batch))
            if not np.isfinite(total.value):
                raise ad.GraphError(
                    f"non-finite training loss; first bad value at {tape.first_nonfinite()}")
            worst_row_dev = max(worst_row_dev, ctx.attention_row_dev)
            names = list(ctx.lifted())
            grads = tape.gradients(total, [ctx.lifted()[n] for n in names])
            opt.step(_clip_gradients(dict(zip(names, grads)), grad_clip))
            epoch_losses.append(float(total.value))
        curve.append(float(np.mean(epoch_losses)))

    # modulus residual of the trained PS outputs across the dataset
    residuals = []
    for H in dataset:
        tape = Tape()
        ctx = _Ctx(tape, model.weights)
        result = model.forward(tape, ctx, H)
        residuals.append(np.mean(np.abs(np.abs(result.phi_value) - 1.0)))
    diag = TrainingDiagnostics(curve, perms_ok, worst_row_dev,
                               float(np.mean(residuals)))
    return model, diag
