"""Discrete-time LTI plant, bounded noise, offline data generation and the
trajectory CSV format."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

NOISE_KINDS = ("uniform", "boundary", "zero")


def _as_matrix(value, name: str) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a matrix, got shape {arr.shape}")
    return arr


def _as_vector(value, size: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.size != size:
        raise ValueError(f"{name} has length {arr.size}, expected {size}")
    return arr


@dataclass(frozen=True)
class LtiSystem:
    """Plant ``x+ = A x + B u + w``. Used to generate data and to close the
    loop; synthesis never sees it."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got shape {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ValueError(f"B has {B.shape[0]} rows but A is {A.shape[0]}x{A.shape[0]}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class DataSet:
    """Offline input-state data.

    ``X`` holds the T+1 measured states column-wise, ``U`` the T applied
    inputs, and ``eps`` the bound on the squared 2-norm of every noise sample.
    The noise sequence itself is never stored.
    """

    X: np.ndarray
    U: np.ndarray
    eps: float

    def __post_init__(self):
        X = _as_matrix(self.X, "X")
        U = _as_matrix(self.U, "U")
        if X.shape[1] != U.shape[1] + 1:
            raise ValueError(
                f"X must have one more column than U (got {X.shape[1]} and {U.shape[1]})"
            )
        if U.shape[1] < 1:
            raise ValueError("data must contain at least one transition (T >= 1)")
        if not self.eps >= 0:
            raise ValueError(f"noise bound eps must be nonnegative, got {self.eps}")
        X.setflags(write=False)
        U.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "eps", float(self.eps))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.U.shape[0]

    @property
    def T(self) -> int:
        return self.U.shape[1]

    @property
    def X_minus(self) -> np.ndarray:
        return self.X[:, :-1]

    @property
    def X_plus(self) -> np.ndarray:
        return self.X[:, 1:]

    def residuals(self, A, B) -> np.ndarray:
        """Columns ``x_{i+1} - A x_i - B u_i``; the noise each (A, B) implies."""
        A, B = np.atleast_2d(A), np.atleast_2d(B)
        # same per-column arithmetic as step(), so exact data gives exact zeros
        return np.column_stack([self.X[:, i + 1] - _drift(A, B, self.X[:, i], self.U[:, i])
                                for i in range(self.T)])


@dataclass(frozen=True)
class NoiseModel:
    eps: float
    kind: str = "uniform"

    def __post_init__(self):
        if not self.eps >= 0:
            raise ValueError(f"noise bound eps must be nonnegative, got {self.eps}")
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; choose from {NOISE_KINDS}")


def cstr_system() -> LtiSystem:
    """Linearized CSTR (sampling time 0.5 s) used as the benchmark plant."""
    A = np.array([[0.9749, -0.0135], [0.0004, 0.9888]])
    B = 1e-4 * np.array([[0.041], [5.934]])
    return LtiSystem(A, B)


def _drift(A, B, x, u) -> np.ndarray:
    return A @ x + B @ u


def step(sys: LtiSystem, x, u, w=None) -> np.ndarray:
    x = _as_vector(x, sys.n, "state x")
    u = _as_vector(u, sys.m, "input u")
    w = np.zeros(sys.n) if w is None else _as_vector(w, sys.n, "noise w")
    return _drift(sys.A, sys.B, x, u) + w


def sample_noise(model: NoiseModel, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw one noise vector with ``||w||_2^2 <= model.eps``.

    ``uniform`` samples uniformly in the ball of radius sqrt(eps),
    ``boundary`` uniformly on its sphere.
    """
    if model.kind == "zero" or model.eps == 0.0:
        return np.zeros(n)
    direction = rng.standard_normal(n)
    direction /= np.linalg.norm(direction)
    radius = np.sqrt(model.eps)
    if model.kind == "uniform":
        radius *= rng.uniform() ** (1.0 / n)
    w = radius * direction
    # rounding can push a boundary draw a few ulps outside the ball
    while w @ w > model.eps:
        w *= 1.0 - 1e-15
    return w


def random_inputs(rng: np.random.Generator, T: int, m: int, low=-10.0, high=10.0) -> np.ndarray:
    """i.i.d. uniform excitation, shape (m, T)."""
    return rng.uniform(low, high, size=(m, T))


def generate_dataset(sys: LtiSystem, x0, inputs, noise: NoiseModel,
                     rng: np.random.Generator) -> DataSet:
    U = _as_matrix(inputs, "inputs")
    if U.shape[0] != sys.m:
        raise ValueError(f"inputs have {U.shape[0]} rows, plant has m={sys.m}")
    T = U.shape[1]
    if T < 1:
        raise ValueError("need at least one input (T >= 1)")
    X = np.empty((sys.n, T + 1))
    X[:, 0] = _as_vector(x0, sys.n, "x0")
    for i in range(T):
        drift = _drift(sys.A, sys.B, X[:, i], U[:, i])
        w = sample_noise(noise, sys.n, rng)
        x_next = drift + w
        # adding and re-subtracting the drift rounds; keep the recorded
        # residual itself inside the bound so the plant is consistent exactly
        while np.sum((x_next - drift) ** 2) > noise.eps:
            w *= 1.0 - 1e-12
            x_next = drift + w
        X[:, i + 1] = x_next
    return DataSet(X, U, noise.eps)


# --------------------------------------------------------------------------
# trajectory CSV: header t,x1..xn,u1..um; the last row has no input
# --------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def trajectory_to_csv(X, U) -> str:
    X = _as_matrix(X, "X")
    U = np.zeros((0, X.shape[1] - 1)) if U is None else _as_matrix(U, "U")
    n, m = X.shape[0], U.shape[0]
    if U.shape[1] != X.shape[1] - 1:
        raise ValueError("trajectory needs exactly one input fewer than states")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t"] + [f"x{j + 1}" for j in range(n)] + [f"u{j + 1}" for j in range(m)])
    for t in range(X.shape[1]):
        inputs = [_fmt(v) for v in U[:, t]] if t < U.shape[1] else [""] * m
        writer.writerow([str(t)] + [_fmt(v) for v in X[:, t]] + inputs)
    return buf.getvalue()


def trajectory_from_csv(text: str) -> tuple[np.ndarray, np.ndarray]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ValueError("empty trajectory CSV")
    header = rows[0]
    if not header or header[0] != "t":
        raise ValueError("trajectory CSV must start with a 't' column")
    n = sum(1 for h in header if h.startswith("x"))
    m = sum(1 for h in header if h.startswith("u"))
    if header != ["t"] + [f"x{j + 1}" for j in range(n)] + [f"u{j + 1}" for j in range(m)]:
        raise ValueError(f"malformed trajectory header: {','.join(header)}")
    body = [r for r in rows[1:] if r]
    if not body:
        raise ValueError("trajectory CSV has no rows")
    X = np.empty((n, len(body)))
    U = np.empty((m, len(body) - 1))
    for t, row in enumerate(body):
        if len(row) != 1 + n + m:
            raise ValueError(f"line {t + 2}: expected {1 + n + m} fields, got {len(row)}")
        if int(row[0]) != t:
            raise ValueError(f"line {t + 2}: expected t={t}, got {row[0]}")
        X[:, t] = [float(v) for v in row[1:1 + n]]
        if t < len(body) - 1:
            U[:, t] = [float(v) for v in row[1 + n:]]
        elif any(v.strip() for v in row[1 + n:]):
            raise ValueError(f"line {t + 2}: final row must leave the inputs empty")
    return X, U


def save_dataset(data: DataSet, path) -> None:
    Path(path).write_text(trajectory_to_csv(data.X, data.U))


def load_dataset(path, eps: float) -> DataSet:
    X, U = trajectory_from_csv(Path(path).read_text())
    return DataSet(X, U, eps)
