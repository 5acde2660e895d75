"""Plain momentum-SGD trainer for a two-layer MLP, written directly
against numpy as an independent check on the library's training loop.

It shares nothing with the library except the initial parameter values
handed to it: forward pass, gradients, and the update rule are all spelled
out here by hand. Kept free of test_ prefix so pytest does not collect it.
"""

import numpy as np


class PlainMlpTrainer:
    """input -> dense -> leaky relu -> dense -> softmax, cross-entropy."""

    def __init__(self, w1, b1, w2, b2, slope=0.01,
                 lr=0.1, momentum=0.9, weight_decay=1e-4):
        self.w1 = np.array(w1, dtype=np.float64)
        self.b1 = np.array(b1, dtype=np.float64)
        self.w2 = np.array(w2, dtype=np.float64)
        self.b2 = np.array(b2, dtype=np.float64)
        self.vw1 = np.zeros_like(self.w1)
        self.vb1 = np.zeros_like(self.b1)
        self.vw2 = np.zeros_like(self.w2)
        self.vb2 = np.zeros_like(self.b2)
        self.slope = slope
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay

    def forward(self, x):
        z1 = x @ self.w1 + self.b1
        a1 = np.where(z1 >= 0, z1, self.slope * z1)
        z2 = a1 @ self.w2 + self.b2
        shifted = z2 - z2.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        o = e / e.sum(axis=1, keepdims=True)
        return z1, a1, o

    def step(self, x, labels):
        """One training step; returns the pre-update batch loss."""
        b = x.shape[0]
        z1, a1, o = self.forward(x)
        t = np.zeros_like(o)
        t[np.arange(b), labels] = 1.0
        loss = float(-np.sum(t * np.log(np.maximum(o, 1e-12))) / b)

        g2 = (o - t) / np.float64(b)
        gw2 = a1.T @ g2
        gb2 = g2.sum(axis=0)
        ga1 = g2 @ self.w2.T
        gz1 = ga1 * np.where(z1 >= 0, 1.0, self.slope)
        gw1 = x.T @ gz1
        gb1 = gz1.sum(axis=0)

        updates = (
            (self.w1, gw1, self.vw1),
            (self.b1, gb1, self.vb1),
            (self.w2, gw2, self.vw2),
            (self.b2, gb2, self.vb2),
        )
        for p, g, v in updates:
            v *= self.momentum
            v -= self.lr * (g + self.weight_decay * p)
            p += v
        return loss
