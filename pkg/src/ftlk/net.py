"""Miniature bidirectional denoiser with exact manual backprop.

Per-frame tokens attend to every other frame in the chunk (full bidirectional
self-attention, no causal mask), and cross-attend to a conditioning sequence
of per-frame driving-signal tokens plus one reference token. Timestep enters
as a sinusoidal embedding per frame, so clean motion rows announce t=0 while
noised target rows announce the ladder time.

All math is float64 and routed through `ftlk.backends`, which dispatches to
the compiled kernels when available. `backward` computes exact vector-Jacobian
products; gradients accumulate additively until `zero_grads`.
"""

from dataclasses import dataclass
import hashlib

import numpy as np

from . import backends as K
from .diffusion import CompositeInput
from .errors import ConfigError
from .seeding import INIT, rng_for

TIME_FREQ_SCALE = 1000.0


@dataclass(frozen=True)
class NetConfig:
    model_dim: int = 32
    layers: int = 2
    heads: int = 2
    ff_dim: int = 64
    latent_dim: int = 8

    def validate(self) -> list:
        problems = []
        for name in ("model_dim", "layers", "heads", "ff_dim", "latent_dim"):
            if getattr(self, name) < 1:
                problems.append(f"net.{name} must be >= 1")
        if self.model_dim % max(self.heads, 1) != 0:
            problems.append("net.model_dim must be divisible by net.heads")
        if self.model_dim % 2 != 0:
            problems.append("net.model_dim must be even (sinusoidal embeddings)")
        return problems

    def __post_init__(self):
        problems = self.validate()
        if problems:
            raise ConfigError(problems)

    @property
    def input_channels(self) -> int:
        return 2 * self.latent_dim + 1


def _param_shapes(cfg: NetConfig):
    m, ff, d = cfg.model_dim, cfg.ff_dim, cfg.latent_dim
    shapes = [
        ("in.w", (cfg.input_channels, m)),
        ("in.b", (m,)),
        ("time.w", (m, m)),
        ("time.b", (m,)),
        ("sig.w", (1, m)),
        ("sig.b", (m,)),
        ("ref.w", (d, m)),
        ("ref.b", (m,)),
    ]
    for i in range(cfg.layers):
        p = f"layers.{i}."
        shapes += [
            (p + "ln1.g", (m,)), (p + "ln1.b", (m,)),
            (p + "self.wq", (m, m)), (p + "self.wk", (m, m)),
            (p + "self.wv", (m, m)), (p + "self.wo", (m, m)),
            (p + "ln2.g", (m,)), (p + "ln2.b", (m,)),
            (p + "cross.wq", (m, m)), (p + "cross.wk", (m, m)),
            (p + "cross.wv", (m, m)), (p + "cross.wo", (m, m)),
            (p + "ln3.g", (m,)), (p + "ln3.b", (m,)),
            (p + "ffn.w1", (m, ff)), (p + "ffn.b1", (ff,)),
            (p + "ffn.w2", (ff, m)), (p + "ffn.b2", (m,)),
        ]
    shapes += [
        ("final.g", (m,)), ("final.b", (m,)),
        ("out.w", (m, d)), ("out.b", (d,)),
    ]
    return shapes


class ParamStore:
    """Named float64 parameter arrays plus parallel gradient buffers."""

    def __init__(self, params: dict):
        self.params = {k: np.ascontiguousarray(v, dtype=np.float64) for k, v in params.items()}
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    @classmethod
    def zeros(cls, cfg: NetConfig) -> "ParamStore":
        return cls({name: np.zeros(shape) for name, shape in _param_shapes(cfg)})

    @classmethod
    def init(cls, cfg: NetConfig, seed: int) -> "ParamStore":
        """Scaled-Gaussian init (variance 1/fan_in); norm gains 1, biases 0."""
        rng = rng_for(seed, INIT)
        params = {}
        for name, shape in _param_shapes(cfg):
            if name.endswith(".g"):
                params[name] = np.ones(shape)
            elif name.endswith(".b") or len(shape) == 1:
                params[name] = np.zeros(shape)
            else:
                fan_in = shape[0]
                params[name] = rng.standard_normal(shape) / np.sqrt(fan_in)
        return cls(params)

    def names(self):
        return list(self.params.keys())

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def scale_grads(self, s: float) -> None:
        for g in self.grads.values():
            g *= s

    def clone(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self.params.items()})

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, v in self.params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(v).tobytes())
        return h.hexdigest()

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(g * g)) for g in self.grads.values())))

    def to_flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.params.values()])

    def from_flat(self, flat: np.ndarray) -> None:
        i = 0
        for v in self.params.values():
            v[...] = flat[i:i + v.size].reshape(v.shape)
            i += v.size

    def grads_flat(self) -> np.ndarray:
        return np.concatenate([self.grads[k].ravel() for k in self.params.keys()])


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, store: ParamStore) -> None:
        for k, v in store.params.items():
            v -= self.lr * store.grads[k]


class Adam:
    """Adaptive-moment rule for plumbing-phase training (teacher/SFT).

    The distillation gradient checks run plain SGD; this exists because the
    regression phases converge an order of magnitude faster with it.
    """

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, store: ParamStore) -> None:
        if self.m is None:
            self.m = {k: np.zeros_like(p) for k, p in store.params.items()}
            self.v = {k: np.zeros_like(p) for k, p in store.params.items()}
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, p in store.params.items():
            g = store.grads[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mh = self.m[k] / (1 - b1 ** self.t)
            vh = self.v[k] / (1 - b2 ** self.t)
            p -= self.lr * mh / (np.sqrt(vh) + self.eps)


def make_optimizer(kind: str, lr: float):
    if kind == "sgd":
        return SGD(lr)
    if kind == "adam":
        return Adam(lr)
    raise ConfigError(f"unknown optimizer {kind!r}")


def sinusoid_features(positions: np.ndarray, dim: int) -> np.ndarray:
    """(N, dim) fixed sin/cos features; low frequencies first."""
    positions = np.asarray(positions, dtype=np.float64)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = positions[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class Denoiser:
    """Stateless forward/backward evaluator over a ParamStore."""

    def __init__(self, cfg: NetConfig):
        self.cfg = cfg

    def init_params(self, seed: int) -> ParamStore:
        return ParamStore.init(self.cfg, seed)

    def _check(self, comp: CompositeInput) -> None:
        if comp.latent_dim != self.cfg.latent_dim:
            raise ConfigError(
                f"composite latent dim {comp.latent_dim} != net latent dim {self.cfg.latent_dim}")

    def _embed(self, params, comp):
        cfg = self.cfg
        m = cfg.model_dim
        lc = comp.chunk_len
        stacked = np.ascontiguousarray(comp.stacked())
        pos = sinusoid_features(np.arange(lc, dtype=np.float64), m)
        tfeat = np.ascontiguousarray(sinusoid_features(comp.frame_t * TIME_FREQ_SCALE, m))
        tok = K.dense_forward(stacked, params["in.w"], params["in.b"])
        temb = K.dense_forward(tfeat, params["time.w"], params["time.b"])
        h = np.ascontiguousarray(tok + temb + pos)
        sig_in = np.ascontiguousarray(comp.signal[:, None])
        sig_tok = K.dense_forward(sig_in, params["sig.w"], params["sig.b"]) + pos
        ref_in = np.ascontiguousarray(comp.reference[None, :])
        ref_tok = K.dense_forward(ref_in, params["ref.w"], params["ref.b"])
        cond = np.ascontiguousarray(np.concatenate([sig_tok, ref_tok], axis=0))
        return stacked, tfeat, sig_in, ref_in, h, cond

    def forward(self, params_store: ParamStore, comp: CompositeInput) -> np.ndarray:
        out, _ = self.forward_with_cache(params_store, comp)
        return out

    def forward_with_cache(self, params_store: ParamStore, comp: CompositeInput):
        self._check(comp)
        params = params_store.params
        heads = self.cfg.heads
        stacked, tfeat, sig_in, ref_in, h, cond = self._embed(params, comp)
        layer_caches = []
        for i in range(self.cfg.layers):
            p = f"layers.{i}."
            u1, mu1, rstd1 = K.layernorm_forward(h, params[p + "ln1.g"], params[p + "ln1.b"])
            u1 = np.ascontiguousarray(u1)
            sa, sa_cache = K.mha_forward(u1, u1, params[p + "self.wq"], params[p + "self.wk"],
                                         params[p + "self.wv"], params[p + "self.wo"], heads)
            h1 = np.ascontiguousarray(h + sa)
            u2, mu2, rstd2 = K.layernorm_forward(h1, params[p + "ln2.g"], params[p + "ln2.b"])
            u2 = np.ascontiguousarray(u2)
            ca, ca_cache = K.mha_forward(u2, cond, params[p + "cross.wq"], params[p + "cross.wk"],
                                         params[p + "cross.wv"], params[p + "cross.wo"], heads)
            h2 = np.ascontiguousarray(h1 + ca)
            u3, mu3, rstd3 = K.layernorm_forward(h2, params[p + "ln3.g"], params[p + "ln3.b"])
            u3 = np.ascontiguousarray(u3)
            f1 = K.dense_forward(u3, params[p + "ffn.w1"], params[p + "ffn.b1"])
            f1 = np.ascontiguousarray(f1)
            fa = np.ascontiguousarray(K.gelu_forward(f1))
            f2 = K.dense_forward(fa, params[p + "ffn.w2"], params[p + "ffn.b2"])
            h3 = np.ascontiguousarray(h2 + f2)
            layer_caches.append((h, u1, mu1, rstd1, sa_cache, h1, u2, mu2, rstd2, ca_cache,
                                 h2, u3, mu3, rstd3, f1, fa))
            h = h3
        uf, muf, rstdf = K.layernorm_forward(h, params["final.g"], params["final.b"])
        uf = np.ascontiguousarray(uf)
        out = K.dense_forward(uf, params["out.w"], params["out.b"])
        cache = (stacked, tfeat, sig_in, ref_in, cond, layer_caches, h, uf, muf, rstdf)
        return np.asarray(out), cache

    def backward(self, params_store: ParamStore, comp: CompositeInput,
                 cotangent: np.ndarray, cache=None) -> np.ndarray:
        """Accumulate exact VJP into the store's gradient buffers.

        Returns the gradient with respect to the channel-stacked input
        (L_c, 2D+1), which the attention-structure probes inspect.
        """
        self._check(comp)
        cotangent = np.ascontiguousarray(cotangent, dtype=np.float64)
        if cotangent.shape != (comp.chunk_len, self.cfg.latent_dim):
            raise ConfigError("cotangent shape must match the denoiser output")
        if cache is None:
            _, cache = self.forward_with_cache(params_store, comp)
        params = params_store.params
        grads = params_store.grads
        heads = self.cfg.heads
        stacked, tfeat, sig_in, ref_in, cond, layer_caches, h_last, uf, muf, rstdf = cache

        duf, dw, db = K.dense_backward(uf, params["out.w"], cotangent)
        grads["out.w"] += dw
        grads["out.b"] += db
        dh, dg, dbta = K.layernorm_backward(h_last, params["final.g"], muf, rstdf,
                                            np.ascontiguousarray(duf))
        grads["final.g"] += dg
        grads["final.b"] += dbta
        dcond = np.zeros_like(cond)

        for i in reversed(range(self.cfg.layers)):
            p = f"layers.{i}."
            (h0, u1, mu1, rstd1, sa_cache, h1, u2, mu2, rstd2, ca_cache,
             h2, u3, mu3, rstd3, f1, fa) = layer_caches[i]
            # ffn
            dfa, dw2, db2 = K.dense_backward(fa, params[p + "ffn.w2"], dh)
            grads[p + "ffn.w2"] += dw2
            grads[p + "ffn.b2"] += db2
            df1 = K.gelu_backward(f1, np.ascontiguousarray(dfa))
            du3, dw1, db1 = K.dense_backward(u3, params[p + "ffn.w1"],
                                             np.ascontiguousarray(df1))
            grads[p + "ffn.w1"] += dw1
            grads[p + "ffn.b1"] += db1
            dh2, dg3, db3 = K.layernorm_backward(h2, params[p + "ln3.g"], mu3, rstd3,
                                                 np.ascontiguousarray(du3))
            dh2 = dh2 + dh  # residual
            # cross attention
            du2, dck, dwq, dwk, dwv, dwo = K.mha_backward(
                u2, cond, params[p + "cross.wq"], params[p + "cross.wk"],
                params[p + "cross.wv"], params[p + "cross.wo"], heads, ca_cache,
                np.ascontiguousarray(dh2))
            grads[p + "cross.wq"] += dwq
            grads[p + "cross.wk"] += dwk
            grads[p + "cross.wv"] += dwv
            grads[p + "cross.wo"] += dwo
            grads[p + "ln3.g"] += dg3
            grads[p + "ln3.b"] += db3
            dcond += dck
            dh1, dg2, db2_ = K.layernorm_backward(h1, params[p + "ln2.g"], mu2, rstd2,
                                                  np.ascontiguousarray(du2))
            dh1 = dh1 + dh2
            # self attention
            du1q, du1k, dwq, dwk, dwv, dwo = K.mha_backward(
                u1, u1, params[p + "self.wq"], params[p + "self.wk"],
                params[p + "self.wv"], params[p + "self.wo"], heads, sa_cache,
                np.ascontiguousarray(dh1))
            grads[p + "self.wq"] += dwq
            grads[p + "self.wk"] += dwk
            grads[p + "self.wv"] += dwv
            grads[p + "self.wo"] += dwo
            grads[p + "ln2.g"] += dg2
            grads[p + "ln2.b"] += db2_
            du1 = np.ascontiguousarray(du1q + du1k)
            dh0, dg1, db1_ = K.layernorm_backward(h0, params[p + "ln1.g"], mu1, rstd1, du1)
            grads[p + "ln1.g"] += dg1
            grads[p + "ln1.b"] += db1_
            dh = dh0 + dh1

        # embeddings
        dh = np.ascontiguousarray(dh)
        _, dw, db = K.dense_backward(tfeat, params["time.w"], dh)
        grads["time.w"] += dw
        grads["time.b"] += db
        dstacked, dw, db = K.dense_backward(stacked, params["in.w"], dh)
        grads["in.w"] += dw
        grads["in.b"] += db
        dsig_tok = np.ascontiguousarray(dcond[:-1])
        _, dw, db = K.dense_backward(sig_in, params["sig.w"], dsig_tok)
        grads["sig.w"] += dw
        grads["sig.b"] += db
        dref_tok = np.ascontiguousarray(dcond[-1:])
        _, dw, db = K.dense_backward(ref_in, params["ref.w"], dref_tok)
        grads["ref.w"] += dw
        grads["ref.b"] += db
        return np.asarray(dstacked)

    def as_denoise_fn(self, params_store: ParamStore):
        """Closure suitable for `few_step_sample`."""
        def fn(comp: CompositeInput) -> np.ndarray:
            return self.forward(params_store, comp)
        return fn
