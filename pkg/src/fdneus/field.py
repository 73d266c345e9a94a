"""Learnable SDF + color field with hand-written derivatives.

The geometry MLP carries forward-mode tangents for the three spatial
directions alongside its activations, so the spatial gradient of the SDF is
exact. The reverse pass runs through both the activations and the tangents,
which gives parameter gradients of losses on the spatial gradient (eikonal,
rendered normals) without any autodiff library.

Hidden geometry layers use softplus with beta=100; the color MLP uses ReLU
and a sigmoid output.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core import SeededRng, seeded_rng

SOFTPLUS_BETA = 100.0
S_SCALE = 10.0  # s = exp(S_SCALE * raw) speeds up learning of the sharpness


@dataclass(frozen=True)
class FieldConfig:
    geo_layers: int = 8
    geo_width: int = 64
    color_layers: int = 4
    color_width: int = 64
    n_feat: int = 16
    l_pos: int = 6
    l_dir: int = 4
    init_radius: float = 0.5
    inside_out: bool = False
    init_inv_s: float = 0.3
    dtype: str = "float64"


def positional_encoding(x: np.ndarray, levels: int, with_jacobian: bool = False):
    """``[x, sin(2^k x), cos(2^k x)]`` for k < levels; Jacobian shape (3, N, D)."""
    x = np.asarray(x)
    freqs = 2.0 ** np.arange(levels)
    ang = (x[:, None, :] * freqs[None, :, None]).astype(x.dtype)  # (N, L, 3)
    sin, cos = np.sin(ang), np.cos(ang)
    N = len(x)
    enc = np.concatenate([x, np.concatenate([sin, cos], axis=-1).reshape(N, -1)], axis=-1)
    if not with_jacobian:
        return enc
    # derivative of every column w.r.t. its own coordinate, then split by axis
    f = freqs[None, :, None]
    own = np.concatenate([np.ones_like(x), np.concatenate([f * cos, -f * sin], axis=-1).reshape(N, -1)],
                         axis=-1).astype(x.dtype)
    axis_of = np.arange(enc.shape[1]) % 3
    J = own[None] * (axis_of[None, :] == np.arange(3)[:, None])[:, None, :]
    return enc, J


def softplus(z: np.ndarray, beta: float = SOFTPLUS_BETA) -> np.ndarray:
    h = np.log1p(np.exp(-np.abs(beta * z)))
    h *= 1.0 / beta
    h += np.maximum(z, 0.0)
    return h


def softplus_parts(z: np.ndarray, beta: float = SOFTPLUS_BETA):
    """softplus, its first and second derivative, each elementwise."""
    bz = beta * z
    e = np.exp(-np.abs(bz))
    h = np.log1p(e)
    h += np.maximum(bz, 0.0)
    h *= 1.0 / beta
    sig = np.tanh(0.5 * bz)
    sig *= 0.5
    sig += 0.5
    s2 = 1.0 - sig
    s2 *= sig
    s2 *= beta
    return h, sig, s2


class _Cache:
    """Forward record for one batch; consumed by :meth:`NeuralSdfField.backward`."""

    def __init__(self, n):
        self.n = n
        self.geo = []
        self.color = []


@dataclass
class FieldOutput:
    sdf: np.ndarray
    grad: np.ndarray | None
    feat: np.ndarray
    color: np.ndarray | None
    cache: _Cache | None


class NeuralSdfField:
    def __init__(self, config: FieldConfig = FieldConfig(), rng: SeededRng | None = None):
        self.config = config
        self.dtype = np.dtype(config.dtype)
        rng = rng if rng is not None else seeded_rng(0)
        c = config
        d_pos = 3 + 6 * c.l_pos
        d_dir = 3 + 6 * c.l_dir
        geo_dims = [d_pos] + [c.geo_width] * c.geo_layers + [1 + c.n_feat]
        col_dims = [3 + d_dir + 3 + c.n_feat] + [c.color_width] * c.color_layers + [3]
        shapes = [(o, i) for i, o in zip(geo_dims[:-1], geo_dims[1:])]
        shapes += [(o, i) for i, o in zip(col_dims[:-1], col_dims[1:])]
        size = sum(o * i + o for o, i in shapes) + 1
        self.params = np.zeros(size, dtype=self.dtype)
        self.geo, self.col = [], []
        off = 0
        for k, (o, i) in enumerate(shapes):
            W = self.params[off:off + o * i].reshape(o, i)
            off += o * i
            b = self.params[off:off + o]
            off += o
            (self.geo if k < len(geo_dims) - 1 else self.col).append((W, b))
        self._s_index = off
        self._slices = self._layer_slices(shapes)
        self._init(rng)

    # -- setup ----------------------------------------------------------------

    @staticmethod
    def _layer_slices(shapes):
        out, off = [], 0
        for o, i in shapes:
            out.append((slice(off, off + o * i), slice(off + o * i, off + o * i + o), (o, i)))
            off += o * i + o
        return out

    def _init(self, rng: SeededRng):
        c = self.config
        n_geo = len(self.geo)
        for k, (W, b) in enumerate(self.geo):
            o, i = W.shape
            if k == n_geo - 1:
                mean = np.sqrt(np.pi) / np.sqrt(i)
                W[0] = rng.normal(-mean if c.inside_out else mean, 1e-4, size=i)
                W[1:] = rng.normal(0.0, 1.0 / np.sqrt(i), size=(o - 1, i))
                b[0] = c.init_radius if c.inside_out else -c.init_radius
            elif k == 0:
                W[:, :3] = rng.normal(0.0, np.sqrt(2.0) / np.sqrt(o), size=(o, 3))
            else:
                W[:] = rng.normal(0.0, np.sqrt(2.0) / np.sqrt(o), size=(o, i))
        for k, (W, b) in enumerate(self.col):
            o, i = W.shape
            scale = np.sqrt(1.0 / i) if k == len(self.col) - 1 else np.sqrt(2.0 / i)
            W[:] = rng.normal(0.0, scale, size=(o, i))
        self.params[self._s_index] = np.log(1.0 / c.init_inv_s) / S_SCALE

    @property
    def n_params(self) -> int:
        return self.params.size

    @property
    def s_index(self) -> int:
        return self._s_index

    @property
    def s(self) -> float:
        return float(np.exp(S_SCALE * self.params[self._s_index]))

    def ds_draw(self) -> float:
        """d s / d raw parameter."""
        return S_SCALE * self.s

    def zero_grad(self) -> np.ndarray:
        return np.zeros_like(self.params)

    # -- geometry -------------------------------------------------------------

    def sdf(self, x: np.ndarray, chunk: int = 65536) -> np.ndarray:
        """SDF values only (no tangents, no record)."""
        x = np.asarray(x, dtype=self.dtype).reshape(-1, 3)
        out = np.empty(len(x), dtype=np.float64)
        for s in range(0, len(x), chunk):
            h = positional_encoding(x[s:s + chunk], self.config.l_pos)
            for W, b in self.geo[:-1]:
                h = softplus(h @ W.T + b)
            W, b = self.geo[-1]
            out[s:s + chunk] = h @ W[0] + b[0]
        return out

    def eval_sdf(self, x: np.ndarray):
        out = self.geometry(np.asarray(x).reshape(-1, 3), record=False)
        return out.sdf, out.grad

    def geometry(self, x: np.ndarray, record: bool = True, cache: _Cache | None = None) -> FieldOutput:
        x = np.asarray(x, dtype=self.dtype)
        N = len(x)
        cache = cache if cache is not None else (_Cache(N) if record else None)
        h, dh = positional_encoding(x, self.config.l_pos, with_jacobian=True)
        for W, b in self.geo[:-1]:
            z = h @ W.T + b
            dz = (dh.reshape(-1, dh.shape[-1]) @ W.T).reshape(3, N, -1)
            h_new, s1, s2 = softplus_parts(z)
            dh_new = dz * s1
            if record:
                cache.geo.append((h, dh, s1, s2, dz))
            h, dh = h_new, dh_new
        W, b = self.geo[-1]
        out = h @ W.T + b
        grad = (dh @ W[0]).T  # (N, 3)
        if record:
            cache.geo.append((h, dh))
        return FieldOutput(sdf=out[:, 0].astype(np.float64), grad=grad.astype(np.float64),
                           feat=out[:, 1:], color=None, cache=cache)

    def _geometry_backward(self, cache: _Cache, g_sdf, g_grad, g_feat, grad_out):
        h, dh = cache.geo[-1]
        W, _ = self.geo[-1]
        nl = len(self.geo)
        g_out = np.concatenate([g_sdf[:, None], g_feat], axis=1).astype(self.dtype)
        wsl, bsl, shape = self._slices[nl - 1]
        gW = g_out.T @ h
        # tangent path only feeds the sdf row
        gW[0] += np.einsum("na,and->d", g_grad, dh)
        grad_out[wsl] += gW.ravel()
        grad_out[bsl] += g_out.sum(axis=0)
        g_h = g_out @ W
        g_dh = g_grad.T.astype(self.dtype)[:, :, None] * W[0][None, None, :]
        for k in range(nl - 2, -1, -1):
            h_prev, dh_prev, s1, s2, dz = cache.geo[k]
            W, _ = self.geo[k]
            gz = g_h * s1 + s2 * np.einsum("and,and->nd", g_dh, dz)
            g_dz = g_dh * s1
            wsl, bsl, shape = self._slices[k]
            gW = gz.T @ h_prev + g_dz.reshape(-1, shape[0]).T @ dh_prev.reshape(-1, shape[1])
            grad_out[wsl] += gW.ravel()
            grad_out[bsl] += gz.sum(axis=0)
            if k > 0:
                g_h = gz @ W
                g_dh = (g_dz.reshape(-1, shape[0]) @ W).reshape(3, cache.n, -1)

    # -- color ----------------------------------------------------------------

    def color_forward(self, x, v, normal, feat, record: bool = True, cache: _Cache | None = None):
        dt = self.dtype
        inp = np.concatenate([np.asarray(x, dtype=dt),
                              positional_encoding(np.asarray(v, dtype=dt), self.config.l_dir),
                              np.asarray(normal, dtype=dt), np.asarray(feat, dtype=dt)], axis=1)
        h = inp
        for W, b in self.col[:-1]:
            z = h @ W.T + b
            if record:
                cache.color.append((h, z > 0))
            h = np.maximum(z, 0.0)
        W, b = self.col[-1]
        z = h @ W.T + b
        rgb = 0.5 * (1.0 + np.tanh(0.5 * z))
        if record:
            cache.color.append((h, rgb))
        return rgb.astype(np.float64)

    def eval_color(self, x, v, normal, feat):
        return self.color_forward(x, v, normal, feat, record=False)

    def _color_backward(self, cache: _Cache, g_rgb, grad_out):
        rgb = cache.color[-1][1]
        gz = (g_rgb * rgb * (1.0 - rgb)).astype(self.dtype)
        base = len(self.geo)
        for k in range(len(self.col) - 1, -1, -1):
            W, _ = self.col[k]
            wsl, bsl, _ = self._slices[base + k]
            h_in = cache.color[k][0]
            grad_out[wsl] += (gz.T @ h_in).ravel()
            grad_out[bsl] += gz.sum(axis=0)
            g_in = gz @ W
            if k > 0:
                # cache.color[k - 1][1] is the ReLU mask producing h_in
                gz = g_in * cache.color[k - 1][1]
        d_dir = 3 + 6 * self.config.l_dir
        g_normal = g_in[:, 3 + d_dir:6 + d_dir]
        g_feat = g_in[:, 6 + d_dir:]
        return g_normal, g_feat

    # -- combined -------------------------------------------------------------

    def forward(self, x, dirs=None, record: bool = True) -> FieldOutput:
        """Geometry (value, spatial gradient, feature) and, given ``dirs``, color."""
        x = np.asarray(x).reshape(-1, 3)
        out = self.geometry(x, record=record)
        if dirs is not None:
            out.color = self.color_forward(x, np.asarray(dirs).reshape(-1, 3), out.grad, out.feat,
                                           record=record, cache=out.cache)
        return out

    def backward(self, cache: _Cache, g_sdf=None, g_grad=None, g_color=None,
                 grad_out: np.ndarray | None = None) -> np.ndarray:
        """Accumulate parameter gradients for upstream gradients on forward outputs.

        ``g_sdf`` (N,), ``g_grad`` (N, 3) and ``g_color`` (N, 3) may each be None.
        Returns the accumulator (a fresh zero vector if none was passed).
        """
        if cache is None or not cache.geo:
            raise ValueError("no recorded forward pass")
        N = cache.n
        grad_out = self.zero_grad() if grad_out is None else grad_out
        for name, g, shape in (("g_sdf", g_sdf, (N,)), ("g_grad", g_grad, (N, 3)),
                               ("g_color", g_color, (N, 3))):
            if g is not None and np.shape(g) != shape:
                raise ValueError(f"{name} shape {np.shape(g)} does not match recorded batch {shape}")
        g_sdf = np.zeros(N) if g_sdf is None else np.asarray(g_sdf, dtype=np.float64)
        g_grad = np.zeros((N, 3)) if g_grad is None else np.asarray(g_grad, dtype=np.float64)
        g_feat = np.zeros((N, self.config.n_feat), dtype=self.dtype)
        if g_color is not None:
            if not cache.color:
                raise ValueError("color gradient given but color was not recorded")
            g_n, g_f = self._color_backward(cache, np.asarray(g_color), grad_out)
            g_grad = g_grad + g_n
            g_feat = g_feat + g_f
        self._geometry_backward(cache, g_sdf, g_grad, g_feat, grad_out)
        return grad_out

    # -- checkpoints ----------------------------------------------------------

    def save(self, path, iteration: int = 0, extra: dict | None = None) -> None:
        path = Path(path)
        path.write_bytes(self.params.astype("<f8").tobytes())
        meta = {"architecture": asdict(self.config), "iteration": int(iteration), "n_params": self.n_params}
        if extra:
            meta.update(extra)
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, path) -> tuple["NeuralSdfField", dict]:
        path = Path(path)
        meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        field = cls(FieldConfig(**meta["architecture"]))
        data = np.frombuffer(path.read_bytes(), dtype="<f8")
        if data.size != field.n_params:
            raise ValueError(f"checkpoint has {data.size} params, architecture needs {field.n_params}")
        field.params[:] = data
        return field, meta


def fit_sphere(field: NeuralSdfField, steps: int = 300, batch: int = 1024, extent: float = 1.6,
               lr: float = 1e-3, rng: SeededRng | None = None) -> float:
    """Warm start: regress the geometry net onto the signed sphere of ``init_radius``.

    The random geometric initialisation only approximates a sphere for wide
    nets; a short fit makes the approximation tight at desk-scale widths.
    Returns the final mean squared error.
    """
    from .optim import Adam

    rng = rng if rng is not None else seeded_rng(1)
    c = field.config
    sign = -1.0 if c.inside_out else 1.0
    opt = Adam(field.n_params)
    mse = np.nan
    for it in range(steps):
        d = rng.normal(size=(batch, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = rng.uniform(0.0, extent, size=batch)
        x = d * r[:, None]
        out = field.geometry(x)
        err = out.sdf - sign * (r - c.init_radius)
        nrm = np.linalg.norm(out.grad, axis=1)
        g_sdf = 2.0 * err / batch
        g_grad = 0.2 * (nrm - 1.0)[:, None] * out.grad / np.maximum(nrm, 1e-12)[:, None] / batch
        grad = field.backward(out.cache, g_sdf=g_sdf, g_grad=g_grad)
        grad[field.s_index] = 0.0
        opt.step(field.params, grad, lr * (0.1 ** (it / max(steps, 1))))
        mse = float(np.mean(err ** 2))
    return mse
