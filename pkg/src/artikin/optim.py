import numpy as np


class Adam:
    """Adaptive-moment step generator; ``step`` returns the update to subtract."""

    def __init__(self, size: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.k = 0

    def step(self, grad: np.ndarray, lr: float | None = None) -> np.ndarray:
        self.k += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.k)
        v_hat = self.v / (1.0 - self.beta2**self.k)
        return (self.lr if lr is None else lr) * m_hat / (np.sqrt(v_hat) + self.eps)
