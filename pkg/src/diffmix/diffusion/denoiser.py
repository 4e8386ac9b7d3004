"""Toy class-conditional noise predictor.

A residual MLP over flattened inputs. Each block cross-attends from the
hidden state to the prompt tokens, then applies a two-layer SiLU MLP. Step
information enters through a sinusoidal embedding at the input layer.
Gradients are derived by hand; ``backward`` mirrors ``forward`` exactly.
"""

from __future__ import annotations

import hashlib
from contextlib import contextmanager
from typing import Protocol

import numpy as np

from .. import kernels
from .text import Condition


class DenoiserInterface(Protocol):
    def predict(self, x_t: np.ndarray, cond: Condition, t: np.ndarray) -> np.ndarray: ...


def timestep_embedding(t: np.ndarray, dim: int, dtype=np.float32) -> np.ndarray:
    half = dim // 2
    freq = np.exp(-np.log(10000.0) * np.arange(half) / half)
    arg = np.asarray(t, dtype=np.float64)[:, None] * freq[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1).astype(dtype)


class ToyDenoiser:
    def __init__(
        self,
        data_dim: int,
        hidden: int = 64,
        attn_dim: int = 32,
        token_dim: int = 16,
        n_blocks: int = 2,
        time_dim: int = 32,
        mlp_mult: int = 2,
        seed: int = 0,
        dtype=np.float32,
    ):
        self.arch = dict(
            data_dim=data_dim, hidden=hidden, attn_dim=attn_dim, token_dim=token_dim,
            n_blocks=n_blocks, time_dim=time_dim, mlp_mult=mlp_mult,
        )
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        H, A, E, M = hidden, attn_dim, token_dim, hidden * mlp_mult

        def w(fan_in, fan_out, gain=1.0):
            return (rng.standard_normal((fan_in, fan_out)) * gain / np.sqrt(fan_in)).astype(self.dtype)

        p = {
            "in.x": w(data_dim, H),
            "in.t": w(time_dim, H),
            "in.b": np.zeros(H, self.dtype),
        }
        for k in range(n_blocks):
            pre = f"blocks.{k}"
            p[f"{pre}.attn.q"] = w(H, A)
            p[f"{pre}.attn.k"] = w(E, A)
            p[f"{pre}.attn.v"] = w(E, A)
            p[f"{pre}.attn.out"] = w(A, H, 0.5)
            p[f"{pre}.mlp.w1"] = w(H, M)
            p[f"{pre}.mlp.b1"] = np.zeros(M, self.dtype)
            p[f"{pre}.mlp.w2"] = w(M, H, 0.5)
            p[f"{pre}.mlp.b2"] = np.zeros(H, self.dtype)
        p["out.w"] = w(H, data_dim, 0.5)
        p["out.b"] = np.zeros(data_dim, self.dtype)
        self.params: dict[str, np.ndarray] = p
        self.adapters: dict = {}
        self.base_trainable = True
        self.adapters_trainable = True
        self.adapters_enabled = True

    # -- parameter bookkeeping -------------------------------------------------

    @property
    def n_blocks(self) -> int:
        return self.arch["n_blocks"]

    def attention_weights(self) -> list[str]:
        return [n for n in self.params if ".attn." in n]

    def parameters(self) -> dict[str, np.ndarray]:
        out = dict(self.params)
        for target, ad in self.adapters.items():
            out[f"{target}.lora_A"] = ad.A
            out[f"{target}.lora_B"] = ad.B
        return out

    def trainable_parameters(self) -> dict[str, np.ndarray]:
        out = {}
        if self.base_trainable:
            out.update(self.params)
        if self.adapters_trainable and self.adapters_enabled:
            for target, ad in self.adapters.items():
                out[f"{target}.lora_A"] = ad.A
                out[f"{target}.lora_B"] = ad.B
        return out

    def base_checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name]).tobytes())
        return h.hexdigest()

    @contextmanager
    def adapters_disabled(self):
        prev = self.adapters_enabled
        self.adapters_enabled = False
        try:
            yield self
        finally:
            self.adapters_enabled = prev

    def _weight(self, name: str) -> np.ndarray:
        W = self.params[name]
        ad = self.adapters.get(name) if self.adapters_enabled else None
        if ad is None:
            return W
        return W + ad.delta()

    # -- forward / backward ----------------------------------------------------

    def predict(self, x_t, cond: Condition, t) -> np.ndarray:
        return self.forward(x_t, cond, t)[0]

    def forward(self, x_t, cond: Condition, t):
        x = np.asarray(x_t, dtype=self.dtype)
        shape = x.shape
        x = x.reshape(shape[0], -1)
        t = np.broadcast_to(np.asarray(t), (shape[0],))
        tok = cond.tokens.astype(self.dtype, copy=False)
        temb = timestep_embedding(t, self.arch["time_dim"], self.dtype)
        h = x @ self._weight("in.x") + temb @ self._weight("in.t") + self.params["in.b"]
        blocks = []
        for k in range(self.n_blocks):
            pre = f"blocks.{k}"
            Wq, Wk, Wv, Wo = (self._weight(f"{pre}.attn.{n}") for n in ("q", "k", "v", "out"))
            q = h @ Wq
            keys = tok @ Wk
            vals = tok @ Wv
            o, attn = kernels.attention_forward(q, keys, vals, cond.mask)
            h_attn = h + o @ Wo
            z1 = h_attn @ self._weight(f"{pre}.mlp.w1") + self.params[f"{pre}.mlp.b1"]
            u = kernels.silu_forward(z1)
            h_next = h_attn + u @ self._weight(f"{pre}.mlp.w2") + self.params[f"{pre}.mlp.b2"]
            blocks.append((h, q, keys, vals, attn, o, h_attn, z1, u))
            h = h_next
        s = kernels.silu_forward(h)
        out = s @ self._weight("out.w") + self.params["out.b"]
        cache = dict(x=x, temb=temb, tok=tok, blocks=blocks, h=h, s=s, shape=shape)
        return out.reshape(shape), cache

    def backward(self, cache, d_out):
        """Gradients of a scalar loss given ``d_out = dL/d(output)``.

        Returns ``(grads, d_tokens)``; ``grads`` holds an entry for every base
        parameter and every adapter factor.
        """
        d_out = np.asarray(d_out, dtype=self.dtype).reshape(cache["x"].shape[0], -1)
        dW: dict[str, np.ndarray] = {}
        g: dict[str, np.ndarray] = {}
        tok = cache["tok"]
        d_tok = np.zeros_like(tok)

        dW["out.w"] = cache["s"].T @ d_out
        g["out.b"] = d_out.sum(0)
        d_h = kernels.silu_backward(cache["h"], d_out @ self._weight("out.w").T)
        for k in reversed(range(self.n_blocks)):
            pre = f"blocks.{k}"
            h, q, keys, vals, attn, o, h_attn, z1, u = cache["blocks"][k]
            W2 = self._weight(f"{pre}.mlp.w2")
            dW[f"{pre}.mlp.w2"] = u.T @ d_h
            g[f"{pre}.mlp.b2"] = d_h.sum(0)
            d_z1 = kernels.silu_backward(z1, d_h @ W2.T)
            dW[f"{pre}.mlp.w1"] = h_attn.T @ d_z1
            g[f"{pre}.mlp.b1"] = d_z1.sum(0)
            d_hattn = d_h + d_z1 @ self._weight(f"{pre}.mlp.w1").T
            Wq, Wk, Wv, Wo = (self._weight(f"{pre}.attn.{n}") for n in ("q", "k", "v", "out"))
            dW[f"{pre}.attn.out"] = o.T @ d_hattn
            d_o = d_hattn @ Wo.T
            d_q, d_keys, d_vals = kernels.attention_backward(d_o, q, keys, vals, attn)
            E = tok.shape[2]
            flat_tok = tok.reshape(-1, E)
            dW[f"{pre}.attn.k"] = flat_tok.T @ d_keys.reshape(-1, d_keys.shape[2])
            dW[f"{pre}.attn.v"] = flat_tok.T @ d_vals.reshape(-1, d_vals.shape[2])
            d_tok += d_keys @ Wk.T + d_vals @ Wv.T
            dW[f"{pre}.attn.q"] = h.T @ d_q
            d_h = d_hattn + d_q @ Wq.T
        dW["in.x"] = cache["x"].T @ d_h
        dW["in.t"] = cache["temb"].T @ d_h
        g["in.b"] = d_h.sum(0)

        for name, grad in dW.items():
            g[name] = grad
            ad = self.adapters.get(name) if self.adapters_enabled else None
            if ad is not None:
                dA, dB = ad.grads(grad)
                g[f"{name}.lora_A"] = dA
                g[f"{name}.lora_B"] = dB
        return g, d_tok

    # -- persistence -------------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        if missing:
            raise ValueError(f"state missing parameters: {sorted(missing)}")
        for k in self.params:
            if state[k].shape != self.params[k].shape:
                raise ValueError(f"shape mismatch for {k}")
            self.params[k] = np.array(state[k], dtype=self.dtype)

    def save(self, path) -> None:
        import json

        meta = json.dumps({"arch": self.arch, "dtype": self.dtype.name})
        np.savez(path, __meta__=np.array(meta), **self.params)

    @classmethod
    def load(cls, path) -> "ToyDenoiser":
        import json

        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["__meta__"]))
            model = cls(**meta["arch"], dtype=meta["dtype"])
            model.load_state_dict({k: z[k] for k in z.files if k != "__meta__"})
        return model
