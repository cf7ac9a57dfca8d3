import math

import numpy as np
import pytest

from oracles import circuit_state, gate_operator, z_expectations
from quanvision.errors import ConfigError, StructuralError
from quanvision.qsim import (
    CNOT,
    CZ,
    RY,
    CircuitSpec,
    Gate,
    StateVector,
    apply_gate,
    expectation_z,
    generate_random_layers,
    init_ground,
    run_circuit,
    run_circuit_batch,
)


def _basis(n, index):
    amps = np.zeros(1 << n, dtype=complex)
    amps[index] = 1
    return StateVector(n, amps)


def _gate_tuples(spec):
    return [(g.kind, g.targets, g.angle) for g in spec.gates()]


def _gate_by_gate(spec, angles):
    state = init_ground(spec.n_qubits)
    for q, theta in enumerate(angles):
        state = apply_gate(state, RY(q, theta))
    for g in spec.gates():
        state = apply_gate(state, g)
    return state


def test_ground_state():
    s = init_ground(3)
    assert s.amplitudes[0] == 1
    assert s.norm() == pytest.approx(1.0)
    assert [expectation_z(s, q) for q in range(3)] == [1.0, 1.0, 1.0]


def test_ry_pi_flips_to_one():
    s = apply_gate(init_ground(1), RY(0, math.pi))
    assert abs(s.amplitudes[1]) == pytest.approx(1.0)
    assert expectation_z(s, 0) == pytest.approx(-1.0)


def test_ry_half_pi_zero_expectation():
    s = apply_gate(init_ground(1), RY(0, math.pi / 2))
    assert abs(expectation_z(s, 0)) < 1e-12


def test_ry_matrix_convention():
    theta = 0.7
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    np.testing.assert_allclose(RY(0, theta).matrix(), [[c, -s], [s, c]])


def test_cnot_truth_table():
    # |q1 q0> with q0 the control; little-endian index = q0 + 2*q1
    for q0 in (0, 1):
        for q1 in (0, 1):
            out = apply_gate(_basis(2, q0 + 2 * q1), CNOT(0, 1))
            expected = q0 + 2 * (q1 ^ q0)
            assert abs(out.amplitudes[expected]) == pytest.approx(1.0)


def test_cz_phase():
    out = apply_gate(_basis(2, 3), CZ(0, 1))
    assert out.amplitudes[3] == pytest.approx(-1.0)
    out = apply_gate(_basis(2, 1), CZ(0, 1))
    assert out.amplitudes[1] == pytest.approx(1.0)


@pytest.mark.parametrize("kind", ["RX", "RY", "RZ", "CNOT", "CZ"])
def test_apply_gate_matches_kron_operator(kind):
    rng = np.random.default_rng(3)
    n = 4
    amps = rng.standard_normal(16) + 1j * rng.standard_normal(16)
    amps /= np.linalg.norm(amps)
    targets = (2,) if kind.startswith("R") else (3, 1)
    angle = 1.234 if kind.startswith("R") else 0.0
    out = apply_gate(StateVector(n, amps), Gate(kind, targets, angle))
    np.testing.assert_allclose(out.amplitudes, gate_operator(kind, targets, angle, n) @ amps, atol=1e-13)


def test_random_layer_counts():
    layers = generate_random_layers(2, 1, seed=5)
    assert len(layers) == 1
    kinds = [g.kind for g in layers[0]]
    assert sum(k in ("RX", "RY", "RZ") for k in kinds) == 2
    assert kinds.count("CNOT") == 2


def test_random_layers_single_qubit_has_no_entanglers():
    layers = generate_random_layers(1, 3, seed=0)
    assert all(len(layer) == 1 for layer in layers)


def test_random_layers_deterministic():
    a = generate_random_layers(4, 4, seed=11)
    b = generate_random_layers(4, 4, seed=11)
    c = generate_random_layers(4, 4, seed=12)
    assert a == b
    assert a != c


def test_random_layer_structure():
    for layer in generate_random_layers(5, 4, seed=2):
        rotations, ring = layer[:5], layer[5:]
        assert [g.targets for g in rotations] == [(q,) for q in range(5)]
        assert all(0 <= g.angle < 2 * math.pi for g in rotations)
        assert [g.targets for g in ring] == [(i, (i + 1) % 5) for i in range(5)]


def test_zero_layers_gives_cosines():
    spec = CircuitSpec.random(4, 0)
    pixels = np.array([0.0, 0.25, 0.5, 1.0])
    np.testing.assert_allclose(run_circuit(spec, np.pi * pixels), np.cos(np.pi * pixels), atol=1e-12)


def test_zero_angles_zero_layers_ground():
    assert run_circuit(CircuitSpec.random(4, 0), [0, 0, 0, 0]) == pytest.approx([1, 1, 1, 1])


def test_gate_by_gate_matches_dense_oracle():
    rng = np.random.default_rng(0)
    for trial in range(60):
        n = int(rng.integers(1, 7))
        spec = CircuitSpec.random(n, int(rng.integers(0, 5)), seed=trial)
        angles = rng.uniform(0, np.pi, n)
        state = _gate_by_gate(spec, angles)
        reference = circuit_state(_gate_tuples(spec), angles)
        assert np.max(np.abs(state.amplitudes - reference)) < 1e-10
        np.testing.assert_allclose(run_circuit(spec, angles), z_expectations(reference, n), atol=1e-10)


def test_dense_unitary_is_unitary():
    u = CircuitSpec.random(5, 4, seed=9)._dense_unitary
    np.testing.assert_allclose(u @ u.conj().T, np.eye(32), atol=1e-12)


@pytest.mark.parametrize("n", [1, 3, 4, 10, 11, 13, 16])
def test_batch_matches_reference(n):
    rng = np.random.default_rng(n)
    spec = CircuitSpec.random(n, 4, seed=n)
    angles = rng.uniform(0, np.pi, (3, n))
    batch = run_circuit_batch(spec, angles)
    for row, a in zip(batch, angles):
        np.testing.assert_allclose(row, run_circuit(spec, a), atol=1e-12)


def test_batch_measured_subset():
    spec = CircuitSpec.random(12, 2, seed=1, measured_qubits=(0, 5))
    angles = np.full((2, 12), 0.3)
    out = run_circuit_batch(spec, angles)
    assert out.shape == (2, 2)
    np.testing.assert_allclose(out[0], run_circuit(spec, angles[0]), atol=1e-12)


def test_norm_preserved_up_to_16_qubits():
    rng = np.random.default_rng(1)
    for n in range(1, 17):
        spec = CircuitSpec.random(n, 4, seed=n)
        state = _gate_by_gate(spec, rng.uniform(0, np.pi, n))
        assert abs(state.norm() - 1) < 1e-12
        z = [expectation_z(state, q) for q in range(n)]
        assert all(-1 - 1e-12 <= v <= 1 + 1e-12 for v in z)


def test_run_circuit_pure():
    spec = CircuitSpec.random(3, 4, seed=4)
    angles = [0.1, 0.2, 0.3]
    assert run_circuit(spec, angles) == run_circuit(spec, angles)


def test_qubit_count_limits():
    with pytest.raises(ConfigError):
        init_ground(0)
    with pytest.raises(ConfigError):
        init_ground(17)
    with pytest.raises(ConfigError):
        CircuitSpec.random(17)


def test_gate_validation():
    with pytest.raises(StructuralError):
        Gate("H", (0,))
    with pytest.raises(StructuralError):
        Gate("CNOT", (1, 1))
    with pytest.raises(StructuralError):
        Gate("RY", (0, 1), 0.1)
    with pytest.raises(StructuralError):
        apply_gate(init_ground(2), CNOT(0, 2))


def test_angle_count_mismatch():
    spec = CircuitSpec.random(3, 1)
    with pytest.raises(StructuralError):
        run_circuit(spec, [0.1, 0.2])
    with pytest.raises(StructuralError):
        run_circuit_batch(spec, np.zeros((2, 4)))
