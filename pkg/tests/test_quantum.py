import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qoracle import dense_cnot, dense_logits, dense_ry, dense_z
from sdaqec.neural import Parameter, backward
from sdaqec.quantum import (
    CircuitParams,
    HeadParams,
    QuantumHead,
    Statevector,
    amplitude_encode,
    apply_cnot,
    apply_ry,
    circuit_gradients,
    cnot_array,
    describe_circuit,
    measure_z,
    normalize_features,
    quantum_forward,
    quantum_measure,
    run_circuit,
    ry_array,
    z_expectations,
)


def basis(n, index):
    a = np.zeros(2**n)
    a[index] = 1
    return Statevector(n, a)


def random_state(rng, n):
    a = rng.standard_normal(2**n) + 1j * rng.standard_normal(2**n)
    return a / np.linalg.norm(a)


def test_normalize_examples():
    assert np.allclose(normalize_features(np.array([3.0, 4.0])), [0.6, 0.8])
    u = np.full(4, 0.5)
    assert np.array_equal(normalize_features(u), u)
    assert normalize_features(np.zeros(8)).tolist() == [1, 0, 0, 0, 0, 0, 0, 0]
    with pytest.raises(ValueError):
        normalize_features(np.ones(3))


def test_encode_examples():
    psi = amplitude_encode(np.eye(16)[0])
    assert psi.n_qubits == 4 and psi.amplitudes[0] == 1
    psi = amplitude_encode(np.full(16, 0.25))
    assert np.allclose(np.abs(psi.amplitudes) ** 2, 1 / 16)
    with pytest.raises(ValueError):
        amplitude_encode(np.ones(4))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10**6))
def test_encode_norm(n, seed):
    f = np.random.default_rng(seed).standard_normal(2**n)
    assert abs(amplitude_encode(normalize_features(f)).norm() - 1) <= 1e-12


def test_ry_examples():
    s = Statevector(1, [0.6, 0.8j])
    assert np.allclose(apply_ry(s, 0, 0.0).amplitudes, s.amplitudes)
    assert np.allclose(apply_ry(basis(1, 0), 0, math.pi).amplitudes, [0, 1], atol=1e-15)
    assert np.allclose(apply_ry(basis(1, 0), 0, math.pi / 2).amplitudes, [1 / math.sqrt(2)] * 2)
    with pytest.raises(IndexError):
        apply_ry(basis(2, 0), 2, 0.1)


def test_cnot_examples():
    assert apply_cnot(basis(2, 0b10), 0, 1).amplitudes.tolist() == basis(2, 0b11).amplitudes.tolist()
    assert apply_cnot(basis(2, 0b01), 0, 1).amplitudes.tolist() == basis(2, 0b01).amplitudes.tolist()
    psi = Statevector(3, random_state(np.random.default_rng(0), 3))
    twice = apply_cnot(apply_cnot(psi, 2, 0), 2, 0)
    assert np.allclose(twice.amplitudes, psi.amplitudes, atol=0)
    with pytest.raises(ValueError):
        apply_cnot(psi, 1, 1)


def test_measure_examples():
    assert measure_z(basis(1, 0), 0) == 1.0
    assert measure_z(basis(1, 1), 0) == -1.0
    assert abs(measure_z(Statevector(1, [2**-0.5, 2**-0.5]), 0)) < 1e-15


def test_circuit_examples():
    zero = basis(4, 0)
    assert np.allclose(run_circuit(zero, CircuitParams()).amplitudes, zero.amplitudes)
    out = run_circuit(basis(2, 0), CircuitParams(2, 1, [[math.pi, 0.0]]))
    assert np.allclose(out.amplitudes, basis(2, 0b11).amplitudes, atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(n=st.integers(1, 4), seed=st.integers(0, 10**6))
def test_gates_match_dense_oracle(n, seed):
    rng = np.random.default_rng(seed)
    psi = random_state(rng, n)
    q = int(rng.integers(n))
    th = rng.uniform(-2 * np.pi, 2 * np.pi)
    assert np.allclose(ry_array(psi, q, th, n), dense_ry(n, q, th) @ psi, atol=1e-10, rtol=0)
    if n > 1:
        c, t = rng.choice(n, 2, replace=False)
        assert np.allclose(cnot_array(psi, c, t, n), dense_cnot(n, c, t) @ psi, atol=1e-10, rtol=0)
    for k in range(n):
        expect = np.real(np.conj(psi) @ dense_z(n, k) @ psi)
        assert abs(z_expectations(psi, n, [k])[0] - expect) < 1e-10


@settings(max_examples=100, deadline=None)
@given(n=st.integers(1, 4), layers=st.integers(1, 3), seed=st.integers(0, 10**6))
def test_circuit_unitary_and_bounded(n, layers, seed):
    rng = np.random.default_rng(seed)
    psi = Statevector(n, random_state(rng, n))
    out = run_circuit(psi, CircuitParams(n, layers, rng.uniform(-10, 10, (layers, n))))
    assert abs(out.norm() - 1) <= 1e-10
    z = z_expectations(out.amplitudes, n)
    assert np.all(np.abs(z) <= 1)


def test_zero_head_gives_uniform():
    f = np.random.default_rng(0).standard_normal((5, 16))
    _, probs = quantum_forward(f, CircuitParams(thetas=np.ones((2, 4))), HeadParams(np.zeros((2, 4)), np.zeros(2)))
    assert np.allclose(probs, 0.5)


@pytest.mark.parametrize("n_total,n_circ", [(4, 4), (3, 2), (8, 4)])
def test_logits_match_dense_oracle(n_total, n_circ):
    rng = np.random.default_rng(n_total)
    f = rng.standard_normal(2**n_total)
    thetas = rng.uniform(-np.pi, np.pi, (2, n_circ))
    head = HeadParams(rng.standard_normal((2, n_circ)), rng.standard_normal(2))
    logits, probs = quantum_forward(f, CircuitParams(n_circ, 2, thetas), head)
    assert np.allclose(logits, dense_logits(f, thetas, head.W_out, head.b_out), atol=1e-10, rtol=0)
    assert abs(probs.sum() - 1) < 1e-12 and np.all((probs > 0) & (probs < 1))


def test_single_qubit_shift_rule():
    th = math.pi / 3
    grads = circuit_gradients(np.array([1.0, 0.0]), CircuitParams(1, 1, [[th]]), HeadParams([[1.0]], [0.0]), [1.0])
    assert grads["thetas"][0, 0] == pytest.approx(-math.sin(th), abs=1e-12)
    assert grads["thetas"][0, 0] == pytest.approx(-0.8660, abs=5e-5)


def test_zero_head_zero_angle_gradient():
    rng = np.random.default_rng(1)
    grads = circuit_gradients(rng.standard_normal(16), CircuitParams(thetas=rng.standard_normal((2, 4))), HeadParams(np.zeros((2, 4)), np.zeros(2)), [0.3, -1.2])
    assert np.all(grads["thetas"] == 0) and np.all(grads["f_reduced"] == 0)


def _objective(f, thetas, head, up):
    logits, _ = quantum_forward(f, CircuitParams(thetas.shape[1], thetas.shape[0], thetas), head)
    return float(np.sum(up * logits))


@pytest.mark.parametrize("seed", range(4))
def test_angle_gradients_shift_rule_and_fd(seed):
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((3, 16))
    thetas = rng.uniform(-np.pi, np.pi, (2, 4))
    head = HeadParams(rng.standard_normal((2, 4)), rng.standard_normal(2))
    up = rng.standard_normal((3, 2))
    g = circuit_gradients(f, CircuitParams(thetas=thetas), head, up)
    shift = np.zeros_like(thetas)
    fd = np.zeros_like(thetas)
    for idx in np.ndindex(thetas.shape):
        for delta, store, scale in ((math.pi / 2, shift, 0.5), (1e-6, fd, 0.5e6)):
            tp, tm = thetas.copy(), thetas.copy()
            tp[idx] += delta
            tm[idx] -= delta
            store[idx] = scale * (_objective(f, tp, head, up) - _objective(f, tm, head, up))
    assert np.max(np.abs(g["thetas"] - shift)) <= 1e-9
    assert np.max(np.abs(g["thetas"] - fd)) <= 1e-6


def test_head_and_feature_gradients_fd():
    rng = np.random.default_rng(9)
    f = rng.standard_normal((2, 16))
    thetas = rng.uniform(-np.pi, np.pi, (2, 4))
    head = HeadParams(rng.standard_normal((2, 4)), rng.standard_normal(2))
    up = rng.standard_normal((2, 2))
    g = circuit_gradients(f, CircuitParams(thetas=thetas), head, up)
    h = 1e-6
    for name, arr in (("W_out", head.W_out), ("b_out", head.b_out), ("f_reduced", f)):
        fd = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            fp = _objective(f, thetas, head, up)
            arr[idx] = old - h
            fm = _objective(f, thetas, head, up)
            arr[idx] = old
            fd[idx] = (fp - fm) / (2 * h)
        assert np.max(np.abs(g[name] - fd)) <= 1e-6, name


def test_eight_qubit_mode_gradients():
    rng = np.random.default_rng(3)
    f = Parameter(rng.standard_normal((2, 256)))
    th = Parameter(rng.uniform(-np.pi, np.pi, (2, 4)))
    up = rng.standard_normal((2, 4))
    backward(quantum_measure(f, th), up)
    h = 1e-6
    for idx in [(0, 0), (1, 3)]:
        old = th.data[idx]
        th.data[idx] = old + h
        fp = np.sum(up * quantum_measure(f.data, th.data).data)
        th.data[idx] = old - h
        fm = np.sum(up * quantum_measure(f.data, th.data).data)
        th.data[idx] = old
        assert th.grad[idx] == pytest.approx((fp - fm) / (2 * h), abs=1e-6)


def test_zero_feature_fallback_has_zero_gradient():
    f = Parameter(np.zeros((1, 16)))
    th = Parameter(np.ones((2, 4)))
    out = quantum_measure(f, th)
    backward(out, np.ones((1, 4)))
    assert np.all(f.grad == 0)


def test_default_head_has_eighteen_parameters():
    head = QuantumHead()
    sizes = {k: p.data.size for k, p in head.params.items()}
    assert sizes == {"q.thetas": 8, "q.w_out": 8, "q.b_out": 2}
    assert sum(sizes.values()) == 18
    assert CircuitParams().n_params == 8


def test_describe_circuit_lists_every_gate():
    lines = describe_circuit(4, 2)
    assert sum("RY" in line for line in lines) == 8
    assert sum("CNOT" in line for line in lines) == 6
    assert lines[0] == "layer 0: RY q0 theta[0,0]"
    assert lines[4] == "CNOT q0 -> q1"
