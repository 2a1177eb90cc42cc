import numpy as np


class Adam:
    """Adaptive moment estimation over named :class:`~kanmcp.autodiff.Param` objects.

    ``lr`` is either a float or a callable ``name -> float`` so parameter
    groups can carry different rates.
    """

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = {p.name: p for p in params}
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def rate(self, name):
        return self.lr(name) if callable(self.lr) else self.lr

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name in sorted(grads):
            g = grads[name]
            p = self.params[name]
            m = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            p.data = p.data - self.rate(name) * (m / c1) / (np.sqrt(v / c2) + self.eps)
