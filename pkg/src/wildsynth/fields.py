"""The three radiance fields: static background (sigma, c), deformation (dx),
and dynamic scene-flow field (sf_b, sf_f, sigma, c).

Each model owns a ParamStore holding its hash table and MLP sections. Queries
take normalized positions in [0, 1]^3, unit world-space directions, and
normalized time in [0, 1]; they return batch arrays plus a tape for the
hand-chained backward pass. Density heads are softplus (sigma >= 0), color
heads sigmoid (c in [0, 1]), flow heads linear squashed by tanh * max_flow.
Direction conditions only the color branch, so sigma (and flow) are
view-independent by construction.
"""

import numpy as np

from .diffnet import Mlp, MlpSpec, ParamStore
from .encoding import FreqConfig, HashGridConfig, HashGridTable, freq_encode, freq_encode_backward
from .errors import ConfigError, InputError


class FieldConfig:
    """Shared shape parameters for one field's encoders and MLPs."""

    def __init__(self, hash_cfg=None, pos_bands=6, dir_bands=4, time_bands=6,
                 hidden=64, geo_features=15, max_flow=0.15, sigma_bias=-5.0):
        self.hash_cfg = hash_cfg if hash_cfg is not None else HashGridConfig()
        self.pos_freq = FreqConfig(pos_bands, include_input=True)
        self.dir_freq = FreqConfig(dir_bands, include_input=True)
        self.time_freq = FreqConfig(time_bands, include_input=True)
        self.hidden = int(hidden)
        self.geo_features = int(geo_features)
        self.max_flow = float(max_flow)
        # fresh fields start almost transparent (softplus(sigma_bias) below the
        # occupancy threshold) so unseen space prunes away after warm-up
        self.sigma_bias = float(sigma_bias)

    def to_dict(self):
        h = self.hash_cfg
        return {
            "hash": {"levels": h.levels, "table_size": h.table_size, "features": h.features,
                     "base_resolution": h.base_resolution, "growth": h.growth},
            "pos_bands": self.pos_freq.num_bands,
            "dir_bands": self.dir_freq.num_bands,
            "time_bands": self.time_freq.num_bands,
            "hidden": self.hidden,
            "geo_features": self.geo_features,
            "max_flow": self.max_flow,
            "sigma_bias": self.sigma_bias,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(hash_cfg=HashGridConfig(**d["hash"]), pos_bands=d["pos_bands"],
                   dir_bands=d["dir_bands"], time_bands=d["time_bands"], hidden=d["hidden"],
                   geo_features=d["geo_features"], max_flow=d["max_flow"],
                   sigma_bias=d.get("sigma_bias", -5.0))


class FieldSample:
    """Batch of field outputs. sf_* are zero for the static field."""

    __slots__ = ("sigma", "rgb", "sf_backward", "sf_forward")

    def __init__(self, sigma, rgb, sf_backward=None, sf_forward=None):
        n = sigma.shape[0]
        if sf_backward is None:
            sf_backward = np.zeros((n, 3), dtype=sigma.dtype)
        if sf_forward is None:
            sf_forward = np.zeros((n, 3), dtype=sigma.dtype)
        self.sigma = sigma
        self.rgb = rgb
        self.sf_backward = sf_backward
        self.sf_forward = sf_forward


def _check_directions(d):
    norms = np.linalg.norm(d, axis=-1)
    if not np.all(np.abs(norms - 1.0) <= 1e-5):
        raise InputError("directions must be unit length within 1e-5")


def _time_features(t, n, cfg, dtype):
    """freq features of a scalar (broadcast) or per-sample time column."""
    t = np.asarray(t, dtype=dtype)
    if t.ndim == 0:
        row = freq_encode(t.reshape(1, 1), cfg)
        return np.broadcast_to(row, (n, row.shape[1]))
    return freq_encode(t.reshape(n, 1), cfg)


def _dir_features(d, cfg, dtype, d_feat=None):
    if d_feat is not None:
        return d_feat
    _check_directions(d)
    return freq_encode(d, cfg).astype(dtype, copy=False)


class _Tape:
    """Loose bag of intermediates; fields differ in what they stash."""

    def __init__(self, **kw):
        self.__dict__.update(kw)


class StaticFieldModel:
    """sigma(x) and c(x, d): hash+freq trunk, direction-conditioned color branch."""

    def __init__(self, cfg, dtype=np.float32, seed=0):
        self.cfg = cfg
        self.store = ParamStore(dtype)
        rng = np.random.default_rng(seed)
        self.grid = HashGridTable(cfg.hash_cfg, "grid")
        self.grid.register(self.store, rng)
        # density reads the hash features only: the local representation stays
        # near zero in unvisited space, which is what lets occupancy pruning
        # converge; freq(x) keeps feeding high-frequency detail to the colors
        self.trunk = Mlp(
            MlpSpec(cfg.hash_cfg.output_width, [cfg.hidden, cfg.hidden],
                    [("sigma", 1, "softplus"), ("feat", cfg.geo_features, "none")]),
            "trunk",
        )
        self.trunk.register(self.store, rng)
        self.store.get(self.trunk.bias_names[-1]).values[0] = cfg.sigma_bias
        color_in = (cfg.geo_features + cfg.pos_freq.output_width(3)
                    + cfg.dir_freq.output_width(3))
        self.color = Mlp(MlpSpec(color_in, [cfg.hidden], [("rgb", 3, "sigmoid")]), "color")
        self.color.register(self.store, rng)

    def query(self, x, d, d_feat=None):
        """x: (B, 3) in [0,1]^3, d: (B, 3) unit -> (sigma (B,), rgb (B, 3), tape).

        d_feat may carry precomputed freq_encode(d) (rays share a direction
        across samples, so callers can encode once per ray)."""
        x = np.asarray(x, dtype=self.store.dtype)
        d = np.asarray(d, dtype=self.store.dtype)
        fd = _dir_features(d, self.cfg.dir_freq, self.store.dtype, d_feat)
        hx, htape = self.grid.encode(self.store, x)
        fx = freq_encode(x, self.cfg.pos_freq).astype(self.store.dtype, copy=False)
        tout, ttape = self.trunk.forward(self.store, hx)
        sigma = tout[:, 0]
        feat = tout[:, 1:]
        rgb, ctape = self.color.forward(self.store, np.concatenate([feat, fx, fd], axis=1))
        tape = _Tape(x=x, htape=htape, ttape=ttape, ctape=ctape)
        return sigma, rgb, tape

    def backward(self, tape, dsigma, drgb):
        """Accumulate grads; returns d/dx (B, 3) for completeness."""
        g = self.cfg.geo_features
        pw = self.cfg.pos_freq.output_width(3)
        dcolor_in = self.color.backward(self.store, tape.ctape, drgb)
        dtrunk_out = np.empty_like(tape.ttape.out)
        dtrunk_out[:, 0] = dsigma
        dtrunk_out[:, 1:] = dcolor_in[:, :g]
        dtrunk_in = self.trunk.backward(self.store, tape.ttape, dtrunk_out)
        dx = self.grid.backward(self.store, tape.htape, dtrunk_in)
        dx += freq_encode_backward(tape.x, self.cfg.pos_freq, dcolor_in[:, g : g + pw])
        return dx


class DeformationModel:
    """dx = f(x, d, t), a free 3-vector offset in normalized coordinates."""

    def __init__(self, cfg, dtype=np.float32, seed=1):
        self.cfg = cfg
        self.store = ParamStore(dtype)
        rng = np.random.default_rng(seed)
        self.grid = HashGridTable(cfg.hash_cfg, "grid")
        self.grid.register(self.store, rng)
        in_width = (cfg.hash_cfg.output_width + cfg.pos_freq.output_width(3)
                    + cfg.dir_freq.output_width(3) + cfg.time_freq.output_width(1))
        self.mlp = Mlp(MlpSpec(in_width, [cfg.hidden, cfg.hidden], [("delta", 3, "none")]), "mlp")
        self.mlp.register(self.store, rng)

    def query(self, x, d, t, d_feat=None):
        x = np.asarray(x, dtype=self.store.dtype)
        d = np.asarray(d, dtype=self.store.dtype)
        fd = _dir_features(d, self.cfg.dir_freq, self.store.dtype, d_feat)
        hx, htape = self.grid.encode(self.store, x)
        fx = freq_encode(x, self.cfg.pos_freq).astype(self.store.dtype, copy=False)
        ft = _time_features(t, x.shape[0], self.cfg.time_freq, self.store.dtype)
        delta, mtape = self.mlp.forward(self.store, np.concatenate([hx, fx, fd, ft], axis=1))
        return delta, _Tape(x=x, htape=htape, mtape=mtape)

    def backward(self, tape, ddelta):
        din = self.mlp.backward(self.store, tape.mtape, ddelta)
        hw = self.cfg.hash_cfg.output_width
        pw = self.cfg.pos_freq.output_width(3)
        dx = self.grid.backward(self.store, tape.htape, din[:, :hw])
        dx += freq_encode_backward(tape.x, self.cfg.pos_freq, din[:, hw : hw + pw])
        return dx


class DynamicFieldModel:
    """(sf_b, sf_f, sigma, c) at (x*, d, t); flow bounded by tanh * max_flow."""

    def __init__(self, cfg, dtype=np.float32, seed=2):
        self.cfg = cfg
        self.store = ParamStore(dtype)
        rng = np.random.default_rng(seed)
        self.grid = HashGridTable(cfg.hash_cfg, "grid")
        self.grid.register(self.store, rng)
        # as in the static field, density (and flow) read hash + time only so
        # unvisited space stays transparent and prunable
        trunk_in = cfg.hash_cfg.output_width + cfg.time_freq.output_width(1)
        self.trunk = Mlp(
            MlpSpec(trunk_in, [cfg.hidden, cfg.hidden],
                    [("sigma", 1, "softplus"), ("feat", cfg.geo_features, "none"),
                     ("flow", 6, "none")]),
            "trunk",
        )
        self.trunk.register(self.store, rng)
        self.store.get(self.trunk.bias_names[-1]).values[0] = cfg.sigma_bias
        color_in = (cfg.geo_features + cfg.pos_freq.output_width(3)
                    + cfg.dir_freq.output_width(3))
        self.color = Mlp(MlpSpec(color_in, [cfg.hidden], [("rgb", 3, "sigmoid")]), "color")
        self.color.register(self.store, rng)

    def query(self, x, d, t, d_feat=None):
        """Returns (FieldSample, tape); t in [0, 1] scalar or (B,)."""
        x = np.asarray(x, dtype=self.store.dtype)
        d = np.asarray(d, dtype=self.store.dtype)
        tval = np.asarray(t)
        if np.any(tval < 0.0) or np.any(tval > 1.0):
            raise InputError(f"time outside [0, 1]: {t}")
        fd = _dir_features(d, self.cfg.dir_freq, self.store.dtype, d_feat)
        hx, htape = self.grid.encode(self.store, x)
        fx = freq_encode(x, self.cfg.pos_freq).astype(self.store.dtype, copy=False)
        ft = _time_features(t, x.shape[0], self.cfg.time_freq, self.store.dtype)
        tout, ttape = self.trunk.forward(self.store, np.concatenate([hx, ft], axis=1))
        g = self.cfg.geo_features
        sigma = tout[:, 0]
        feat = tout[:, 1 : 1 + g]
        flow_raw = tout[:, 1 + g :]
        flow_t = np.tanh(flow_raw)
        sf = flow_t * self.cfg.max_flow
        rgb, ctape = self.color.forward(self.store, np.concatenate([feat, fx, fd], axis=1))
        sample = FieldSample(sigma, rgb, sf_backward=sf[:, :3], sf_forward=sf[:, 3:])
        tape = _Tape(x=x, htape=htape, ttape=ttape, ctape=ctape, flow_t=flow_t)
        return sample, tape

    def backward(self, tape, dsigma, drgb, dsf_backward=None, dsf_forward=None):
        """Accumulate grads; returns d/dx* (B, 3) feeding the deformation chain."""
        g = self.cfg.geo_features
        pw = self.cfg.pos_freq.output_width(3)
        dcolor_in = self.color.backward(self.store, tape.ctape, drgb)
        dtrunk_out = np.zeros_like(tape.ttape.out)
        dtrunk_out[:, 0] = dsigma
        dtrunk_out[:, 1 : 1 + g] = dcolor_in[:, :g]
        if dsf_backward is not None or dsf_forward is not None:
            dsf = np.zeros((tape.x.shape[0], 6), dtype=self.store.dtype)
            if dsf_backward is not None:
                dsf[:, :3] = dsf_backward
            if dsf_forward is not None:
                dsf[:, 3:] = dsf_forward
            # through sf = tanh(raw) * max_flow
            dtrunk_out[:, 1 + g :] = dsf * self.cfg.max_flow * (1.0 - tape.flow_t ** 2)
        dtrunk_in = self.trunk.backward(self.store, tape.ttape, dtrunk_out)
        hw = self.cfg.hash_cfg.output_width
        dx = self.grid.backward(self.store, tape.htape, dtrunk_in[:, :hw])
        dx += freq_encode_backward(tape.x, self.cfg.pos_freq, dcolor_in[:, g : g + pw])
        return dx


class FieldBundle:
    """The three fields plus the shared normalization box and time discretization.

    Frame index i maps to t = i / (time_count - 1); time_count == 1 pins t = 0
    and disables neighbor-time terms. ablation is None or one of
    {"background", "flow", "deformation"}.
    """

    def __init__(self, static=None, deform=None, dynamic=None,
                 scene_box=None, time_count=1, ablation=None):
        if scene_box is None:
            scene_box = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
        scene_box = np.asarray(scene_box, dtype=np.float64)
        if scene_box.shape != (2, 3) or np.any(scene_box[1] <= scene_box[0]):
            raise ConfigError("scene_box must be [[min_xyz], [max_xyz]] with max > min")
        if time_count < 1:
            raise ConfigError("time_count must be >= 1")
        self.static = static
        self.deform = deform
        self.dynamic = dynamic
        self.scene_box = scene_box
        self.time_count = int(time_count)
        self.ablation = ablation

    @classmethod
    def create(cls, static_cfg, deform_cfg, dynamic_cfg, scene_box, time_count,
               dtype=np.float32, seed=0, ablation=None):
        return cls(
            static=StaticFieldModel(static_cfg, dtype=dtype, seed=seed),
            deform=DeformationModel(deform_cfg, dtype=dtype, seed=seed + 1),
            dynamic=DynamicFieldModel(dynamic_cfg, dtype=dtype, seed=seed + 2),
            scene_box=scene_box,
            time_count=time_count,
            ablation=ablation,
        )

    def normalize(self, positions):
        """Scene-unit points -> unit-cube coordinates, saturating at the boundary."""
        lo, hi = self.scene_box
        p = (positions - lo) / (hi - lo)
        return np.clip(p, 0.0, 1.0)

    def frame_time(self, frame_index):
        if self.time_count == 1:
            return 0.0
        return frame_index / (self.time_count - 1)

    def time_delta(self):
        if self.time_count == 1:
            return 0.0
        return 1.0 / (self.time_count - 1)

    def param_stores(self):
        out = {}
        for label in ("static", "deform", "dynamic"):
            model = getattr(self, label)
            if model is not None and hasattr(model, "store"):
                out[label] = model.store
        return out


# ---------------------------------------------------------------------------
# spec-level operation surface

def static_query(bundle, x, d):
    """FieldSample of the static field (scene-flow components zero)."""
    sigma, rgb, _ = bundle.static.query(np.atleast_2d(x), np.atleast_2d(d))
    return FieldSample(sigma, rgb)


def deform(bundle, x, d, t):
    """x* = clamp(x + dx, [0,1]^3). Returns (x_star, clamped mask (B,)).

    Under the "deformation" ablation (or with no deformation net) dx = 0.
    """
    x = np.atleast_2d(np.asarray(x))
    if bundle.deform is None or bundle.ablation == "deformation":
        return x.copy(), np.zeros(x.shape[0], dtype=bool)
    delta, _ = bundle.deform.query(x, np.atleast_2d(d), t)
    raw = x + delta
    x_star = np.clip(raw, 0.0, 1.0)
    clamped = np.any(raw != x_star, axis=-1)
    return x_star, clamped


def dynamic_query(bundle, x_star, d, t):
    """FieldSample of the dynamic field at a (possibly deformed) position."""
    sample, _ = bundle.dynamic.query(np.atleast_2d(x_star), np.atleast_2d(d), t)
    return sample


def advect(x_star, sample, direction):
    """Displace x* by the sample's scene flow toward a neighbor frame."""
    if direction == "forward":
        sf = sample.sf_forward
    elif direction == "backward":
        sf = sample.sf_backward
    else:
        raise ConfigError(f"direction must be forward|backward, got {direction}")
    return np.clip(np.atleast_2d(x_star) + sf, 0.0, 1.0)
