"""From-scratch MLP actor-critic with a diagonal Gaussian head.

Plain numpy forward/backward passes (no autodiff framework); the gradient
tests check every path against central finite differences.  Hidden layers
use elu; the actor and critic are fully separate networks; the action
log-std is a learned state-independent vector clamped to [-4, 1].
"""

import numpy as np

LOG_STD_MIN = -4.0
LOG_STD_MAX = 1.0
LOG_2PI = np.log(2.0 * np.pi)


def elu(x):
    return np.where(x > 0.0, x, np.expm1(x))


def elu_grad(x):
    return np.where(x > 0.0, 1.0, np.exp(x))


def orthogonal(rng, shape, gain=1.0):
    a = rng.standard_normal(shape)
    if shape[0] < shape[1]:
        a = a.T
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if shape[0] < shape[1]:
        q = q.T
    return gain * q[: shape[0], : shape[1]]


class Mlp:
    """Fully connected net with elu hidden layers and a linear output."""

    def __init__(self, dims, rng, out_gain=0.01):
        self.dims = list(dims)
        self.weights = []
        self.biases = []
        for i in range(len(dims) - 1):
            last = i == len(dims) - 2
            gain = out_gain if last else np.sqrt(2.0)
            self.weights.append(orthogonal(rng, (dims[i], dims[i + 1]), gain))
            self.biases.append(np.zeros(dims[i + 1]))

    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def forward(self, x):
        """Returns (output, cache) for a (batch, d_in) input."""
        pre = []
        acts = [x]
        h = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            pre.append(z)
            h = z if i == len(self.weights) - 1 else elu(z)
            acts.append(h)
        return h, (pre, acts)

    def backward(self, cache, grad_out):
        """Gradients of sum(grad_out * output) w.r.t. params, same order as params()."""
        pre, acts = cache
        grads = [None] * (2 * len(self.weights))
        g = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            if i != len(self.weights) - 1:
                g = g * elu_grad(pre[i])
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = g @ self.weights[i].T
        return grads


class ActorCritic:
    """Gaussian policy over the 12-D command space plus a value head."""

    def __init__(self, obs_dim, act_dim, hidden=(128, 64), seed=0, log_std_init=0.0):
        rng = np.random.default_rng(seed)
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.hidden = tuple(hidden)
        self.actor = Mlp([obs_dim, *hidden, act_dim], rng, out_gain=0.01)
        self.critic = Mlp([obs_dim, *hidden, 1], rng, out_gain=1.0)
        self.log_std = np.full(act_dim, float(log_std_init))

    def params(self):
        return self.actor.params() + self.critic.params() + [self.log_std]

    def set_params(self, values):
        for p, v in zip(self.params(), values):
            p[...] = v

    def copy_params(self):
        return [p.copy() for p in self.params()]

    def forward(self, obs):
        """Deterministic pass: (mean (B, act), std (act,), value (B,))."""
        mean, _ = self.actor.forward(obs)
        value, _ = self.critic.forward(obs)
        return mean, np.exp(self.log_std), value[:, 0]

    def log_prob(self, mean, std, action):
        z = (action - mean) / std
        return -0.5 * (z * z).sum(axis=-1) - np.log(std).sum() \
            - 0.5 * self.act_dim * LOG_2PI

    def entropy(self):
        return self.log_std.sum() + 0.5 * self.act_dim * (1.0 + LOG_2PI)

    def value(self, obs):
        v, _ = self.critic.forward(obs)
        return v[:, 0]

    def clamp_log_std(self):
        np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std)

    def is_finite(self):
        return all(np.all(np.isfinite(p)) for p in self.params())


class Adam:
    """Standard Adam over a list of parameter arrays."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def global_grad_norm(grads):
    return np.sqrt(sum(float((g * g).sum()) for g in grads))


def clip_grads(grads, max_norm):
    norm = global_grad_norm(grads)
    if max_norm is not None and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        grads = [g * scale for g in grads]
    return grads, norm
