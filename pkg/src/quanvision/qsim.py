"""Exact statevector simulation for small circuits (up to 16 qubits).

Amplitudes live in a flat complex128 array indexed by the basis-state
integer, little-endian: qubit 0 is the least significant bit.  Gates are
Ry/Rx/Rz rotations and CNOT/CZ entanglers; readout is the exact Pauli-Z
expectation of each measured qubit (no shot noise).

Two execution paths exist.  ``apply_gate``/``run_circuit`` apply one gate
at a time and are the reference.  ``run_circuit_batch`` evaluates many
encodings of the same circuit at once and is what quanvolution uses; for
up to ``DENSE_QUBIT_LIMIT`` qubits it multiplies by the precomputed
random-layer unitary, above that it runs a compiled in-place kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numba
import numpy as np

from .errors import ConfigError, StructuralError

MAX_QUBITS = 16
DENSE_QUBIT_LIMIT = 10
ROTATIONS = ("RX", "RY", "RZ")
ENTANGLERS = ("CNOT", "CZ")


@dataclass(frozen=True)
class Gate:
    kind: str
    targets: tuple[int, ...]
    angle: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        if self.kind in ROTATIONS:
            arity = 1
        elif self.kind in ENTANGLERS:
            arity = 2
        else:
            raise StructuralError(f"unknown gate kind {self.kind!r}")
        if len(self.targets) != arity:
            raise StructuralError(f"{self.kind} acts on {arity} qubit(s), got {self.targets}")
        if len(set(self.targets)) != arity:
            raise StructuralError(f"{self.kind} targets must be distinct, got {self.targets}")
        if min(self.targets) < 0:
            raise StructuralError(f"negative qubit index in {self.targets}")

    def matrix(self) -> np.ndarray:
        """Unitary of the gate on its own targets.

        For entanglers the local basis index is ``2*bit(targets[0]) + bit(targets[1])``,
        so ``targets[0]`` is the control of a CNOT.
        """
        if self.kind in ROTATIONS:
            return rotation_matrix(self.kind, self.angle)
        if self.kind == "CNOT":
            return np.array(
                [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=np.complex128
            )
        return np.diag([1, 1, 1, -1]).astype(np.complex128)


def RY(qubit: int, angle: float) -> Gate:
    return Gate("RY", (qubit,), float(angle))


def RX(qubit: int, angle: float) -> Gate:
    return Gate("RX", (qubit,), float(angle))


def RZ(qubit: int, angle: float) -> Gate:
    return Gate("RZ", (qubit,), float(angle))


def CNOT(control: int, target: int) -> Gate:
    return Gate("CNOT", (control, target))


def CZ(a: int, b: int) -> Gate:
    return Gate("CZ", (a, b))


def rotation_matrix(kind: str, angle: float) -> np.ndarray:
    c, s = math.cos(angle / 2), math.sin(angle / 2)
    if kind == "RY":
        return np.array([[c, -s], [s, c]], dtype=np.complex128)
    if kind == "RX":
        return np.array([[c, -1j * s], [-1j * s, c]], dtype=np.complex128)
    if kind == "RZ":
        return np.array([[c - 1j * s, 0], [0, c + 1j * s]], dtype=np.complex128)
    raise StructuralError(f"not a rotation: {kind!r}")


@dataclass
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        if self.amplitudes.shape != (1 << self.n_qubits,):
            raise StructuralError(
                f"{self.n_qubits} qubits need {1 << self.n_qubits} amplitudes, "
                f"got shape {self.amplitudes.shape}"
            )

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def probabilities(self) -> np.ndarray:
        return self.amplitudes.real**2 + self.amplitudes.imag**2


def _check_qubit_count(n_qubits: int) -> None:
    if not 1 <= n_qubits <= MAX_QUBITS:
        raise ConfigError(f"n_qubits must be in 1..{MAX_QUBITS}, got {n_qubits}")


def init_ground(n_qubits: int) -> StateVector:
    """|00...0> on ``n_qubits`` qubits."""
    _check_qubit_count(n_qubits)
    amps = np.zeros(1 << n_qubits, dtype=np.complex128)
    amps[0] = 1.0
    return StateVector(n_qubits, amps)


def _apply_to_rows(amps: np.ndarray, n: int, gate: Gate) -> np.ndarray:
    """Apply ``gate`` to every row of a (batch, 2**n) amplitude array."""
    batch = amps.shape[0]
    if gate.kind in ROTATIONS:
        (q,) = gate.targets
        view = amps.reshape(batch, 1 << (n - 1 - q), 2, 1 << q)
        out = np.einsum("ij,bajc->baic", gate.matrix(), view)
        return out.reshape(batch, -1)
    # axis of qubit q in the (batch, 2, ..., 2) view is n - q
    view = amps.reshape((batch,) + (2,) * n)
    out = view.copy()

    def at(a_bit, b_bit):
        idx = [slice(None)] * (n + 1)
        idx[n - gate.targets[0]] = a_bit
        idx[n - gate.targets[1]] = b_bit
        return tuple(idx)

    if gate.kind == "CNOT":
        out[at(1, 0)] = view[at(1, 1)]
        out[at(1, 1)] = view[at(1, 0)]
    else:
        out[at(1, 1)] = -view[at(1, 1)]
    return out.reshape(batch, -1)


def apply_gate(state: StateVector, gate: Gate) -> StateVector:
    """Return a new state with ``gate`` applied."""
    if max(gate.targets) >= state.n_qubits:
        raise StructuralError(
            f"gate {gate.kind} targets {gate.targets} on a {state.n_qubits}-qubit state"
        )
    amps = _apply_to_rows(state.amplitudes[None, :], state.n_qubits, gate)[0]
    return StateVector(state.n_qubits, amps)


def expectation_z(state: StateVector, qubit: int) -> float:
    """<Z> on one qubit: P(bit = 0) - P(bit = 1)."""
    if not 0 <= qubit < state.n_qubits:
        raise StructuralError(f"qubit {qubit} out of range for {state.n_qubits} qubits")
    probs = state.probabilities().reshape(1 << (state.n_qubits - 1 - qubit), 2, 1 << qubit)
    return float(probs[:, 0, :].sum() - probs[:, 1, :].sum())


def generate_random_layers(n_qubits: int, n_layers: int, seed: int) -> list[list[Gate]]:
    """Deterministic random layers.

    Each layer holds one rotation per qubit (kind uniform over RX/RY/RZ,
    angle uniform in [0, 2*pi)) followed by the CNOT ring i -> (i+1) mod n.
    Draws come from PCG64 seeded with ``seed``, so the gate list is
    bit-identical across platforms.
    """
    _check_qubit_count(n_qubits)
    if n_layers < 0:
        raise ConfigError(f"n_layers must be >= 0, got {n_layers}")
    if not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed}")
    rng = np.random.Generator(np.random.PCG64(seed))
    layers = []
    for _ in range(n_layers):
        layer = []
        for q in range(n_qubits):
            kind = ROTATIONS[int(rng.integers(len(ROTATIONS)))]
            layer.append(Gate(kind, (q,), float(rng.uniform(0.0, 2 * math.pi))))
        if n_qubits > 1:
            layer.extend(CNOT(i, (i + 1) % n_qubits) for i in range(n_qubits))
        layers.append(layer)
    return layers


@dataclass(frozen=True)
class CircuitSpec:
    """Ry encoding on every qubit, fixed random layers, Z readout."""

    n_qubits: int
    random_layers: tuple[tuple[Gate, ...], ...]
    seed: int
    measured_qubits: tuple[int, ...] = field(default=())

    def __post_init__(self):
        _check_qubit_count(self.n_qubits)
        layers = tuple(tuple(layer) for layer in self.random_layers)
        object.__setattr__(self, "random_layers", layers)
        measured = tuple(self.measured_qubits) or tuple(range(self.n_qubits))
        object.__setattr__(self, "measured_qubits", measured)
        for layer in layers:
            for gate in layer:
                if max(gate.targets) >= self.n_qubits:
                    raise StructuralError(f"gate {gate} outside {self.n_qubits} qubits")
        if any(not 0 <= q < self.n_qubits for q in measured):
            raise StructuralError(f"measured qubits {measured} outside {self.n_qubits} qubits")

    @classmethod
    def random(cls, n_qubits: int, n_layers: int = 4, seed: int = 0, measured_qubits=()):
        layers = generate_random_layers(n_qubits, n_layers, seed)
        return cls(n_qubits, tuple(tuple(layer) for layer in layers), seed, tuple(measured_qubits))

    @property
    def n_layers(self) -> int:
        return len(self.random_layers)

    @property
    def n_encoding_gates(self) -> int:
        return self.n_qubits

    def gates(self) -> list[Gate]:
        return [g for layer in self.random_layers for g in layer]

    # The compiled forms below are derived data; frozen dataclasses allow
    # cached_property because it writes to the instance __dict__.
    @cached_property
    def _dense_unitary(self) -> np.ndarray:
        n = self.n_qubits
        basis = np.eye(1 << n, dtype=np.complex128)
        for gate in self.gates():
            basis = _apply_to_rows(basis, n, gate)
        # row k of ``basis`` is U|k>, so U = basis.T
        return basis.T.copy()

    @cached_property
    def _compiled(self) -> "_CompiledCircuit":
        return _compile(self)


def _check_angles(spec: CircuitSpec, angles: np.ndarray) -> None:
    if angles.shape[-1] != spec.n_qubits:
        raise StructuralError(
            f"expected {spec.n_qubits} encoding angles, got {angles.shape[-1]}"
        )


def run_circuit(spec: CircuitSpec, encoding_angles) -> list[float]:
    """Reference evaluation, one gate at a time.

    Ry(angle_i) on qubit i of |0...0>, then every random layer, then <Z>
    of each measured qubit.
    """
    angles = np.asarray(encoding_angles, dtype=np.float64)
    if angles.ndim != 1:
        raise StructuralError("encoding_angles must be one-dimensional")
    _check_angles(spec, angles)
    state = init_ground(spec.n_qubits)
    for q, theta in enumerate(angles):
        state = apply_gate(state, RY(q, theta))
    for gate in spec.gates():
        state = apply_gate(state, gate)
    return [expectation_z(state, q) for q in spec.measured_qubits]


def _encoding_columns(angles: np.ndarray) -> np.ndarray:
    """Per-qubit single-qubit states Ry(theta)|0>, shape (batch, n, 2)."""
    half = angles / 2
    return np.stack([np.cos(half), np.sin(half)], axis=-1).astype(np.complex128)


def _product_state(columns: np.ndarray) -> np.ndarray:
    """Tensor product of per-qubit states, little-endian, shape (batch, 2**n)."""
    batch, n, _ = columns.shape
    state = np.ones((batch, 1), dtype=np.complex128)
    for q in reversed(range(n)):
        state = (state[:, :, None] * columns[:, q, None, :]).reshape(batch, -1)
    return state


def _z_signs(n: int, measured: tuple[int, ...]) -> np.ndarray:
    idx = np.arange(1 << n)[:, None]
    bits = (idx >> np.asarray(measured)[None, :]) & 1
    return 1.0 - 2.0 * bits


_ROTATION_OP = {"RX": 0, "RY": 2, "RZ": 3}


@dataclass
class _CompiledCircuit:
    # product-state prefix: per-qubit 2x2 matrices folded into the encoding
    prefix: np.ndarray  # (n, 2, 2)
    # remaining ops: kind 1 = signed permutation, 0/2/3 = general/real/diagonal
    # single-qubit matrix on op_qubit
    op_kind: np.ndarray
    op_arg: np.ndarray
    mats: np.ndarray  # (m, 2, 2)
    sources: np.ndarray  # (p, 2**n) gather indices
    phases: np.ndarray  # (p, 2**n), entries +-1
    signed: np.ndarray  # (p,) whether any phase is -1
    op_qubit: np.ndarray


def _compile(spec: CircuitSpec) -> _CompiledCircuit:
    n = spec.n_qubits
    gates = spec.gates()
    prefix = np.tile(np.eye(2, dtype=np.complex128), (n, 1, 1))
    start = 0
    # fold leading single-qubit gates into the product state
    for start, gate in enumerate(gates):
        if gate.kind not in ROTATIONS:
            break
        prefix[gate.targets[0]] = gate.matrix() @ prefix[gate.targets[0]]
    else:
        start = len(gates)

    kinds, args, qubits, mats, sources, phases = [], [], [], [], [], []
    index = np.arange(1 << n)
    i = start
    while i < len(gates):
        gate = gates[i]
        if gate.kind in ROTATIONS:
            kinds.append(_ROTATION_OP[gate.kind])
            args.append(len(mats))
            qubits.append(gate.targets[0])
            mats.append(gate.matrix())
            i += 1
            continue
        # merge a run of entanglers into one signed permutation:
        # new[j] = phase[j] * old[src[j]]
        src = index.copy()
        phase = np.ones(1 << n, dtype=np.float64)
        while i < len(gates) and gates[i].kind in ENTANGLERS:
            a, b = gates[i].targets
            if gates[i].kind == "CNOT":
                flip = np.where((index >> a) & 1, index ^ (1 << b), index)
                src, phase = src[flip], phase[flip]
            else:
                both = ((index >> a) & 1) & ((index >> b) & 1)
                phase = phase * np.where(both, -1.0, 1.0)
            i += 1
        kinds.append(1)
        args.append(len(sources))
        qubits.append(-1)
        sources.append(src)
        phases.append(phase)

    size = 1 << n
    return _CompiledCircuit(
        prefix=prefix,
        op_kind=np.asarray(kinds, dtype=np.int64),
        op_arg=np.asarray(args, dtype=np.int64),
        mats=np.asarray(mats, dtype=np.complex128).reshape(-1, 2, 2),
        sources=np.asarray(sources, dtype=np.int64).reshape(-1, size),
        phases=np.asarray(phases, dtype=np.float64).reshape(-1, size),
        signed=np.asarray([bool((p < 0).any()) for p in phases], dtype=np.bool_),
        op_qubit=np.asarray(qubits, dtype=np.int64),
    )


@numba.njit(cache=True)
def _rotate(st, m, qubit):
    size = st.shape[0]
    stride = 1 << qubit
    m00, m01, m10, m11 = m[0, 0], m[0, 1], m[1, 0], m[1, 1]
    for base in range(0, size, 2 * stride):
        for j in range(base, base + stride):
            x = st[j]
            y = st[j + stride]
            st[j] = m00 * x + m01 * y
            st[j + stride] = m10 * x + m11 * y


@numba.njit(cache=True)
def _rotate_real(st, m, qubit):
    size = st.shape[0]
    stride = 1 << qubit
    m00, m01, m10, m11 = m[0, 0].real, m[0, 1].real, m[1, 0].real, m[1, 1].real
    for base in range(0, size, 2 * stride):
        for j in range(base, base + stride):
            x = st[j]
            y = st[j + stride]
            st[j] = m00 * x + m01 * y
            st[j + stride] = m10 * x + m11 * y


@numba.njit(cache=True)
def _rotate_diagonal(st, m, qubit):
    size = st.shape[0]
    stride = 1 << qubit
    d0, d1 = m[0, 0], m[1, 1]
    for base in range(0, size, 2 * stride):
        for j in range(base, base + stride):
            st[j] *= d0
            st[j + stride] *= d1


@numba.njit(cache=True)
def _kernel(columns, op_kind, op_arg, op_qubit, mats, sources, phases, signed, measured, out):
    batch, n, _ = columns.shape
    size = 1 << n
    buf = np.empty(size, dtype=np.complex128)
    probs = np.empty(size, dtype=np.float64)
    for b in range(batch):
        st = np.empty(size, dtype=np.complex128)
        st[0] = 1.0
        for q in range(n):
            half = 1 << q
            for j in range(half):
                st[half + j] = st[j] * columns[b, q, 1]
                st[j] = st[j] * columns[b, q, 0]
        for k in range(op_kind.shape[0]):
            a = op_arg[k]
            if op_kind[k] == 1:
                if signed[a]:
                    for j in range(size):
                        buf[j] = phases[a, j] * st[sources[a, j]]
                else:
                    for j in range(size):
                        buf[j] = st[sources[a, j]]
                st, buf = buf, st
            elif op_kind[k] == 0:
                _rotate(st, mats[a], op_qubit[k])
            elif op_kind[k] == 2:
                _rotate_real(st, mats[a], op_qubit[k])
            elif op_kind[k] == 3:
                _rotate_diagonal(st, mats[a], op_qubit[k])
        total = 0.0
        for j in range(size):
            probs[j] = st[j].real * st[j].real + st[j].imag * st[j].imag
            total += probs[j]
        for m in range(measured.shape[0]):
            stride = 1 << measured[m]
            ones = 0.0
            for base in range(stride, size, 2 * stride):
                for j in range(base, base + stride):
                    ones += probs[j]
            out[b, m] = total - 2.0 * ones


def run_circuit_batch(spec: CircuitSpec, encoding_angles) -> np.ndarray:
    """Evaluate the circuit for each row of ``encoding_angles``.

    Returns an array of shape (batch, len(measured_qubits)).  Agrees with
    ``run_circuit`` row by row to floating-point rounding.
    """
    angles = np.asarray(encoding_angles, dtype=np.float64)
    if angles.ndim != 2:
        raise StructuralError("encoding_angles must have shape (batch, n_qubits)")
    _check_angles(spec, angles)
    if angles.shape[0] == 0:
        return np.zeros((0, len(spec.measured_qubits)))
    columns = _encoding_columns(angles)
    if spec.n_qubits <= DENSE_QUBIT_LIMIT:
        amps = _product_state(columns) @ spec._dense_unitary.T
        probs = amps.real**2 + amps.imag**2
        return probs @ _z_signs(spec.n_qubits, spec.measured_qubits)
    compiled = spec._compiled
    columns = np.ascontiguousarray(np.einsum("qij,bqj->bqi", compiled.prefix, columns))
    out = np.empty((angles.shape[0], len(spec.measured_qubits)), dtype=np.float64)
    _kernel(
        columns,
        compiled.op_kind,
        compiled.op_arg,
        compiled.op_qubit,
        compiled.mats,
        compiled.sources,
        compiled.phases,
        compiled.signed,
        np.asarray(spec.measured_qubits, dtype=np.int64),
        out,
    )
    return out
