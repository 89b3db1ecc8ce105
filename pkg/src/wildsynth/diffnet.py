"""Reverse-mode differentiation for small dense networks, plus Adam and the lr schedule.

Parameters live in a ParamStore: named float sections with matching gradient
buffers. Forward passes record a tape of intermediates; backward consumes the
tape, accumulates into the gradient buffers, and returns the gradient w.r.t.
the input batch. Everything is vectorized over the leading batch dimension.
"""

import math

import numpy as np

from .errors import ConfigError, OracleError, TrainingError, UsageError


class Section:
    """One named parameter array and its gradient buffer (same shape/dtype)."""

    __slots__ = ("name", "values", "grads")

    def __init__(self, name, values):
        self.name = name
        self.values = values
        self.grads = np.zeros_like(values)

    @property
    def shape(self):
        return self.values.shape


class ParamStore:
    """Ordered collection of uniquely named parameter sections.

    dtype is store-wide: float32 for training, float64 for gradient checks.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._sections = []
        self._by_name = {}

    def add(self, name, values):
        if name in self._by_name:
            raise ConfigError(f"duplicate section name: {name}")
        values = np.ascontiguousarray(values, dtype=self.dtype)
        if not np.isfinite(values).all():
            raise ConfigError(f"non-finite initial values in section {name}")
        sec = Section(name, values)
        self._sections.append(sec)
        self._by_name[name] = sec
        return sec

    def get(self, name):
        try:
            return self._by_name[name]
        except KeyError:
            raise ConfigError(f"unknown section: {name}") from None

    def __contains__(self, name):
        return name in self._by_name

    @property
    def sections(self):
        return list(self._sections)

    def section_names(self):
        return [s.name for s in self._sections]

    def zero_grads(self):
        for s in self._sections:
            s.grads[...] = 0

    def num_params(self):
        return sum(s.values.size for s in self._sections)

    def copy_values(self):
        return {s.name: s.values.copy() for s in self._sections}

    def load_values(self, values_by_name):
        for s in self._sections:
            src = values_by_name[s.name]
            if src.shape != s.values.shape:
                raise ConfigError(f"shape mismatch loading section {s.name}")
            s.values[...] = src

    def astype(self, dtype):
        """Copy of this store in another precision (used by float64 grad checks)."""
        out = ParamStore(dtype)
        for s in self._sections:
            out.add(s.name, s.values.astype(dtype))
        return out


# ---------------------------------------------------------------------------
# activations (forward plus derivative recoverable from the forward output)

def _relu(x):
    return np.maximum(x, 0)


def _softplus(x):
    # log(1 + e^x), stable for large |x|
    return np.logaddexp(0, x)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _head_forward(z, activation):
    if activation == "none":
        return z
    if activation == "softplus":
        return _softplus(z)
    if activation == "sigmoid":
        return _sigmoid(z)
    raise ConfigError(f"unknown head activation: {activation}")


def _head_backward(y, dy, activation):
    """d(pre-activation) from the activated output y and upstream dy."""
    if activation == "none":
        return dy
    if activation == "softplus":
        # d softplus/dz = sigmoid(z) = 1 - e^{-softplus(z)}
        return dy * (1.0 - np.exp(-y))
    if activation == "sigmoid":
        return dy * y * (1.0 - y)
    raise ConfigError(f"unknown head activation: {activation}")


class MlpSpec:
    """Dense network shape: input width, hidden widths (ReLU), named output heads.

    heads: sequence of (name, width, activation) with activation in
    {"none", "softplus", "sigmoid"}. Head outputs are slices of one final
    linear layer, concatenated in order.
    """

    def __init__(self, in_width, hidden, heads):
        hidden = tuple(int(h) for h in hidden)
        if len(hidden) < 1:
            raise ConfigError("MlpSpec needs at least one hidden layer")
        if in_width < 1 or any(h < 1 for h in hidden):
            raise ConfigError("MlpSpec widths must be >= 1")
        self.in_width = int(in_width)
        self.hidden = hidden
        self.heads = tuple((str(n), int(w), str(a)) for n, w, a in heads)
        for n, w, a in self.heads:
            if w < 1:
                raise ConfigError(f"head {n} width must be >= 1")
            if a not in ("none", "softplus", "sigmoid"):
                raise ConfigError(f"head {n} has unknown activation {a}")
        self.out_width = sum(w for _, w, _ in self.heads)
        self.widths = (self.in_width,) + self.hidden + (self.out_width,)

    def head_slices(self):
        out, start = [], 0
        for name, width, act in self.heads:
            out.append((name, slice(start, start + width), act))
            start += width
        return out


class MlpTape:
    """Intermediates of one forward pass: layer inputs and activated outputs."""

    __slots__ = ("acts", "out")

    def __init__(self, acts, out):
        self.acts = acts  # acts[i] is the input to linear layer i; acts[0] = x
        self.out = out


class Mlp:
    """A dense network bound to section names ``{prefix}.w{i}`` / ``{prefix}.b{i}``."""

    def __init__(self, spec, prefix):
        self.spec = spec
        self.prefix = prefix
        n_layers = len(spec.widths) - 1
        self.weight_names = [f"{prefix}.w{i}" for i in range(n_layers)]
        self.bias_names = [f"{prefix}.b{i}" for i in range(n_layers)]

    def register(self, store, rng):
        """Create this net's sections (Glorot-uniform weights, zero biases)."""
        for i, (fan_in, fan_out) in enumerate(zip(self.spec.widths[:-1], self.spec.widths[1:])):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            store.add(self.weight_names[i], w)
            store.add(self.bias_names[i], np.zeros(fan_out))

    def forward(self, store, x):
        """x: (B, in_width) -> (y: (B, out_width), tape)."""
        x = np.asarray(x, dtype=store.dtype)
        if x.ndim != 2 or x.shape[1] != self.spec.in_width:
            raise ConfigError(
                f"{self.prefix}: expected input (B, {self.spec.in_width}), got {x.shape}"
            )
        acts = [x]
        h = x
        n_layers = len(self.spec.widths) - 1
        for i in range(n_layers - 1):
            w = store.get(self.weight_names[i]).values
            b = store.get(self.bias_names[i]).values
            z = h @ w
            z += b
            h = np.maximum(z, 0.0, out=z)
            acts.append(h)
        w = store.get(self.weight_names[-1]).values
        b = store.get(self.bias_names[-1]).values
        z = h @ w + b
        y = np.empty_like(z)
        for _, sl, act in self.spec.head_slices():
            y[:, sl] = _head_forward(z[:, sl], act)
        return y, MlpTape(acts, y)

    def backward(self, store, tape, dy):
        """Accumulate parameter grads for one recorded forward; return dL/dx."""
        if tape is None:
            raise UsageError(f"{self.prefix}: backward called without a recorded forward")
        dy = np.asarray(dy, dtype=store.dtype)
        if dy.shape != tape.out.shape:
            raise ConfigError(
                f"{self.prefix}: upstream grad shape {dy.shape} != output {tape.out.shape}"
            )
        dz = np.empty_like(dy)
        for _, sl, act in self.spec.head_slices():
            dz[:, sl] = _head_backward(tape.out[:, sl], dy[:, sl], act)
        g = dz
        n_layers = len(self.spec.widths) - 1
        for i in range(n_layers - 1, -1, -1):
            wsec = store.get(self.weight_names[i])
            bsec = store.get(self.bias_names[i])
            a = tape.acts[i]
            wsec.grads += a.T @ g
            bsec.grads += g.sum(axis=0)
            g = g @ wsec.values.T
            if i > 0:
                g = g * (a > 0)  # ReLU mask of the layer that produced a
        return g


def mlp_forward(mlp, store, x):
    """Functional alias for Mlp.forward (pure: no store mutation)."""
    return mlp.forward(store, x)


def mlp_backward(mlp, store, tape, dy):
    """Functional alias for Mlp.backward."""
    return mlp.backward(store, tape, dy)


# ---------------------------------------------------------------------------
# Adam

class AdamState:
    """Bias-corrected Adam moments for every section of a ParamStore."""

    def __init__(self, store, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {s.name: np.zeros_like(s.values) for s in store.sections}
        self.v = {s.name: np.zeros_like(s.values) for s in store.sections}


def adam_step(state, store, lr):
    """One Adam update over every section; zeroes gradients afterwards.

    lr may be a float or a callable mapping section name -> float (used to give
    encoding tables a different rate than the MLP heads).
    """
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for sec in store.sections:
        g = sec.grads
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient in section {sec.name}")
        rate = lr(sec.name) if callable(lr) else lr
        m = state.m[sec.name]
        v = state.v[sec.name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        sec.values -= rate * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        g[...] = 0
    return state


def lr_schedule(base_lr, iteration, decay=5e-5):
    """Exponentially decayed rate: base * exp(-decay * iteration)."""
    if iteration < 0:
        raise ConfigError("iteration must be >= 0")
    return base_lr * math.exp(-decay * iteration)


# ---------------------------------------------------------------------------
# finite-difference oracle

def grad_check(loss_fn, store, h=1e-5, sections=None, atol=1e-7):
    """Central finite differences against recorded gradients; worst relative error.

    loss_fn() must deterministically return a scalar loss and leave d(loss)/d(params)
    accumulated in store grads. Intended for float64 stores; h is the probe step.
    Entries where analytic and FD gradients are both below atol count as exact
    (the FD quotient is roundoff-dominated there).
    """
    store.zero_grads()
    loss0 = float(loss_fn())
    analytic = {s.name: s.grads.copy() for s in store.sections}
    store.zero_grads()
    if float(loss_fn()) != loss0:
        raise OracleError("loss closure is not deterministic")
    store.zero_grads()

    names = sections if sections is not None else store.section_names()
    worst = 0.0
    for name in names:
        sec = store.get(name)
        flat = sec.values.reshape(-1)
        ga = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = float(loss_fn())
            store.zero_grads()
            flat[i] = orig - h
            lm = float(loss_fn())
            store.zero_grads()
            flat[i] = orig
            gfd = (lp - lm) / (2.0 * h)
            denom = max(abs(ga[i]), abs(gfd))
            if denom < atol:
                continue  # both effectively zero: relative error defined as 0
            worst = max(worst, abs(ga[i] - gfd) / denom)
    return worst
