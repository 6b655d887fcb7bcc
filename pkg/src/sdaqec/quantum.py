"""Exact statevector simulation of the RY/CNOT feature circuit and its classification head.

Qubit 0 is the most significant bit of the basis index, so ``|10>`` is index 2.
Gate helpers act on arrays of shape (..., 2**n) so a whole batch is simulated at once.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .neural import Parameter, Tensor, as_tensor, linear


@dataclass
class Statevector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        if self.amplitudes.shape != (2**self.n_qubits,):
            raise ValueError(f"expected {2 ** self.n_qubits} amplitudes, got {self.amplitudes.shape}")

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amplitudes) ** 2)))


@dataclass
class CircuitParams:
    n_qubits: int = 4
    n_layers: int = 2
    thetas: np.ndarray | None = None

    def __post_init__(self):
        if self.thetas is None:
            self.thetas = np.zeros((self.n_layers, self.n_qubits))
        self.thetas = np.asarray(self.thetas, dtype=np.float64)
        if self.thetas.shape != (self.n_layers, self.n_qubits):
            raise ValueError(f"thetas must be ({self.n_layers}, {self.n_qubits}), got {self.thetas.shape}")
        if not np.isfinite(self.thetas).all():
            raise ValueError("circuit angles must be finite")

    @property
    def n_params(self) -> int:
        return self.thetas.size


@dataclass
class HeadParams:
    W_out: np.ndarray
    b_out: np.ndarray

    def __post_init__(self):
        self.W_out = np.asarray(self.W_out, dtype=np.float64)
        self.b_out = np.asarray(self.b_out, dtype=np.float64)


def n_qubits_for(dim: int) -> int:
    n = int(round(math.log2(dim))) if dim > 0 else -1
    if n < 1 or 2**n != dim:
        raise ValueError(f"feature length {dim} is not a power of two")
    return n


def _split(psi, qubit, n):
    """View ``psi`` as (batch, left, 2, right) around ``qubit``."""
    return psi.reshape(-1, 2**qubit, 2, 2 ** (n - qubit - 1))


def _check_qubit(qubit, n):
    if not (0 <= qubit < n):
        raise IndexError(f"qubit {qubit} out of range for {n} qubits")


def ry_array(psi, qubit, theta, n):
    """RY(theta) on ``qubit`` of a (..., 2**n) array; returns a new array."""
    _check_qubit(qubit, n)
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    v = _split(psi, qubit, n)
    out = np.empty_like(v)
    out[:, :, 0] = c * v[:, :, 0] - s * v[:, :, 1]
    out[:, :, 1] = s * v[:, :, 0] + c * v[:, :, 1]
    return out.reshape(psi.shape)


def cnot_array(psi, control, target, n):
    _check_qubit(control, n)
    _check_qubit(target, n)
    if control == target:
        raise ValueError("control and target must differ")
    out = psi.reshape((-1,) + (2,) * n).copy()
    idx1 = [slice(None)] * (n + 1)
    idx1[control + 1] = 1
    sub = out[tuple(idx1)]  # view with the control axis removed
    t = target if target < control else target - 1
    sub[:] = np.flip(sub, axis=t + 1).copy()
    return out.reshape(psi.shape)


def z_expectations(psi, n, qubits=None):
    """<Z_q> for each requested qubit: shape (..., len(qubits))."""
    qubits = range(n) if qubits is None else qubits
    p = np.abs(psi) ** 2
    cols = []
    for q in qubits:
        _check_qubit(q, n)
        v = _split(p, q, n)
        cols.append((v[:, :, 0].sum(axis=(1, 2)) - v[:, :, 1].sum(axis=(1, 2))))
    return np.stack(cols, axis=-1).reshape(psi.shape[:-1] + (len(cols),))


def normalize_features(f):
    """L2-normalize; an all-zero vector maps to the first basis vector."""
    f = np.asarray(f, dtype=np.float64)
    n_qubits_for(f.shape[-1])
    if not np.isfinite(f).all():
        raise ValueError("features must be finite")
    r = np.linalg.norm(f, axis=-1, keepdims=True)
    e0 = np.zeros_like(f)
    e0[..., 0] = 1.0
    return np.where(r > 0, f / np.where(r > 0, r, 1.0), e0)


def amplitude_encode(f_norm) -> Statevector:
    f_norm = np.asarray(f_norm, dtype=np.float64)
    n = n_qubits_for(len(f_norm))
    if abs(np.linalg.norm(f_norm) - 1.0) > 1e-9:
        raise ValueError("amplitude encoding needs a unit-norm vector")
    return Statevector(n, f_norm.astype(np.complex128))


def apply_ry(state: Statevector, qubit: int, theta: float) -> Statevector:
    return Statevector(state.n_qubits, ry_array(state.amplitudes, qubit, theta, state.n_qubits))


def apply_cnot(state: Statevector, control: int, target: int) -> Statevector:
    return Statevector(state.n_qubits, cnot_array(state.amplitudes, control, target, state.n_qubits))


def measure_z(state: Statevector, qubit: int) -> float:
    return float(z_expectations(state.amplitudes, state.n_qubits, [qubit])[0])


def gate_sequence(n_qubits: int, n_layers: int):
    """Yield ``("ry", layer, qubit)`` and ``("cnot", control, target)`` in circuit order."""
    for layer in range(n_layers):
        for q in range(n_qubits):
            yield ("ry", layer, q)
        for q in range(n_qubits - 1):
            yield ("cnot", q, q + 1)


def _run(psi, thetas, n_total):
    n_layers, n_circ = thetas.shape
    for g in gate_sequence(n_circ, n_layers):
        if g[0] == "ry":
            psi = ry_array(psi, g[2], thetas[g[1], g[2]], n_total)
        else:
            psi = cnot_array(psi, g[1], g[2], n_total)
    return psi


def run_circuit(psi_in: Statevector, params: CircuitParams) -> Statevector:
    """Apply the layered circuit to the first ``params.n_qubits`` qubits of ``psi_in``."""
    if params.n_qubits > psi_in.n_qubits:
        raise ValueError("circuit is wider than the state")
    return Statevector(psi_in.n_qubits, _run(psi_in.amplitudes, params.thetas, psi_in.n_qubits))


def describe_circuit(n_qubits: int, n_layers: int, thetas=None) -> list[str]:
    lines = []
    for g in gate_sequence(n_qubits, n_layers):
        if g[0] == "ry":
            angle = f"theta[{g[1]},{g[2]}]"
            if thetas is not None:
                angle += f"={float(np.asarray(thetas)[g[1], g[2]]):+.6f}"
            lines.append(f"layer {g[1]}: RY q{g[2]} {angle}")
        else:
            lines.append(f"CNOT q{g[1]} -> q{g[2]}")
    lines.append(f"measure Z on q0..q{n_qubits - 1}")
    return lines


def measure_batch(f, thetas):
    """Features (N, 2**n) -> Z expectations (N, n_circuit) of the first ``n_circuit`` qubits."""
    n_total = n_qubits_for(f.shape[-1])
    psi = _run(normalize_features(f), thetas, n_total)
    return z_expectations(psi, n_total, range(thetas.shape[1]))


def measure_backward(f, thetas, g_m):
    """Gradients of sum(g_m * m) w.r.t. the features and the angles.

    Walks the gate list backwards carrying the output state and the adjoint vector,
    so memory stays at two states per sample regardless of depth.
    """
    f = np.asarray(f, dtype=np.float64)
    n_total = n_qubits_for(f.shape[-1])
    n_layers, n_circ = thetas.shape
    f_norm = normalize_features(f)
    psi = _run(f_norm, thetas, n_total)
    # d<Z_q>/dpsi = 2 Z_q psi for real amplitudes
    zsign = np.zeros((n_circ, f.shape[-1]))
    for q in range(n_circ):
        zsign[q] = np.repeat(np.tile([1.0, -1.0], 2**q), 2 ** (n_total - q - 1))
    lam = 2.0 * (g_m @ zsign) * psi
    dtheta = np.zeros_like(thetas)
    for g in reversed(list(gate_sequence(n_circ, n_layers))):
        if g[0] == "cnot":
            psi = cnot_array(psi, g[1], g[2], n_total)
            lam = cnot_array(lam, g[1], g[2], n_total)
            continue
        _, layer, q = g
        th = thetas[layer, q]
        psi = ry_array(psi, q, -th, n_total)
        # dRY(th)/dth = RY(th + pi) / 2
        dpsi = 0.5 * ry_array(psi, q, th + math.pi, n_total)
        dtheta[layer, q] = np.sum(lam * dpsi)
        lam = ry_array(lam, q, -th, n_total)
    r = np.linalg.norm(f, axis=-1, keepdims=True)
    proj = lam - f_norm * np.sum(f_norm * lam, axis=-1, keepdims=True)
    df = np.where(r > 0, proj / np.where(r > 0, r, 1.0), 0.0)
    return df, dtheta


def quantum_measure(f, thetas) -> Tensor:
    """Tape op: features (N, 2**n) and angle parameter (L, n_circuit) -> Z expectations."""
    f, thetas = as_tensor(f), as_tensor(thetas)
    out = measure_batch(f.data, thetas.data)

    def back(g):
        return measure_backward(f.data, thetas.data, g)

    return Tensor(out, (f, thetas), back)


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def quantum_forward(f_reduced, circuit: CircuitParams, head: HeadParams):
    """Normalize, encode, run, measure, and map to (logits, probs)."""
    f = np.asarray(f_reduced, dtype=np.float64)
    m = measure_batch(f.reshape(-1, f.shape[-1]), circuit.thetas)
    logits = m @ head.W_out.T + head.b_out
    logits = logits.reshape(f.shape[:-1] + (head.b_out.shape[0],))
    return logits, _softmax(logits)


def circuit_gradients(f_reduced, circuit: CircuitParams, head: HeadParams, upstream) -> dict:
    """Gradients of ``sum(upstream * logits)`` for angles, head weights and input features."""
    f = np.asarray(f_reduced, dtype=np.float64)
    single = f.ndim == 1
    f2 = f.reshape(-1, f.shape[-1])
    g = np.asarray(upstream, dtype=np.float64).reshape(f2.shape[0], -1)
    m = measure_batch(f2, circuit.thetas)
    g_m = g @ head.W_out
    df, dtheta = measure_backward(f2, circuit.thetas, g_m)
    return {
        "thetas": dtheta,
        "W_out": g.T @ m,
        "b_out": g.sum(axis=0),
        "f_reduced": df[0] if single else df,
    }


class QuantumHead:
    """Trainable angles plus the 2 x n_circuit output layer."""

    def __init__(self, n_qubits=4, n_layers=2, n_classes=2, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.n_qubits = n_qubits
        self.n_layers = n_layers
        self.params = {
            "q.thetas": Parameter(rng.uniform(-np.pi, np.pi, (n_layers, n_qubits)), decay=False),
            "q.w_out": Parameter(rng.standard_normal((n_classes, n_qubits)) * 0.5),
            "q.b_out": Parameter(np.zeros(n_classes), decay=False),
        }

    def forward(self, f) -> Tensor:
        p = self.params
        return linear(quantum_measure(f, p["q.thetas"]), p["q.w_out"], p["q.b_out"])

    @property
    def circuit(self) -> CircuitParams:
        return CircuitParams(self.n_qubits, self.n_layers, self.params["q.thetas"].data.copy())

    @property
    def head(self) -> HeadParams:
        return HeadParams(self.params["q.w_out"].data.copy(), self.params["q.b_out"].data.copy())
