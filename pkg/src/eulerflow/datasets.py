"""
Rotation datasets: the gimbal-lock set, reconstructed synthetic targets
(peak, cone, cube, line), a toy conditional set, and file IO.

Binary file layout (little endian)::

    magic   b"EFDS"
    version uint32
    hlen    uint32           length of the JSON header in bytes
    header  JSON             name, n_train, n_test, context_width, generator_spec
    records float64[n, 9 + context_width]   train rows, then test rows

Each record is a rotation matrix in row-major order followed by its context.
"""

import csv
import itertools
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import CorruptRecord, FormatVersionMismatch, UnknownKind
from .rotations import (TWO_PI, axis_angle_to_rotmat, euler_to_rotmat, is_rotation, so3_exp,
                        wrap_angle)

MAGIC = b"EFDS"
FORMAT_VERSION = 1
SYNTHETIC_KINDS = ("peak", "cone", "cube", "line")


@dataclass
class Dataset:
    name: str
    train: np.ndarray
    test: np.ndarray
    train_context: np.ndarray = None
    test_context: np.ndarray = None
    generator_spec: dict = field(default_factory=dict)

    @property
    def context_width(self):
        return 0 if self.train_context is None else self.train_context.shape[1]

    def __len__(self):
        return len(self.train) + len(self.test)

    def validate(self, tol=1e-9):
        for part in (self.train, self.test):
            if len(part) and not np.all(is_rotation(part, tol)):
                return False
        return True


@dataclass
class GimbalSpec:
    sigma_sq: float = 0.1
    sigma_phi_sq: float = 0.1
    train_n: int = 60000
    test_n: int = 12000
    seed: int = 0

    def __post_init__(self):
        if self.sigma_sq <= 0 or self.sigma_phi_sq <= 0:
            raise ValueError("variances must be positive")


@dataclass
class SyntheticSpec:
    train_n: int = 60000
    test_n: int = 12000
    seed: int = 0


# -- gimbal -------------------------------------------------------------


def sample_gimbal_euler(spec, n, rng):
    """Raw (omega, phi, kappa) draws of the gimbal mixture, wrapped to [0, 2*pi)."""
    sigma = np.sqrt(spec.sigma_sq)
    sigma_phi = np.sqrt(spec.sigma_phi_sq * spec.sigma_sq)
    omega = rng.normal(0.0, sigma, n)
    centre = np.where(rng.random(n) < 0.5, np.pi / 2, -np.pi / 2)
    phi = rng.normal(centre, sigma_phi)
    kappa = rng.normal(0.0, sigma, n)
    return wrap_angle(np.stack([omega, phi, kappa], axis=1))


def generate_gimbal(spec=None, rng=None, rotate=None):
    """
    Gimbal-lock dataset: omega, kappa ~ N(0, s^2), phi from an equal mixture
    of normals at +-pi/2 with variance s_phi^2 * s^2.

    ``rotate`` optionally left-multiplies every sample by a fixed rotation
    (used to build a non-singular twin with identical concentration).
    """
    spec = GimbalSpec() if spec is None else spec
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    train = euler_to_rotmat(sample_gimbal_euler(spec, spec.train_n, rng))
    test = euler_to_rotmat(sample_gimbal_euler(spec, spec.test_n, rng))
    gen = {"kind": "gimbal", **asdict(spec)}
    if rotate is not None:
        rotate = np.asarray(rotate, dtype=float)
        train, test = rotate @ train, rotate @ test
        gen["rotate"] = rotate.tolist()
    return Dataset(f"gimbal-{spec.sigma_sq:g}", train, test, generator_spec=gen)


# -- synthetic ------------------------------------------------------------

PEAK_MODE = (1.0, 0.4, 2.0)
PEAK_SIGMA = 0.05
CONE_AXIS = (1.0, 1.0, 1.0)
CONE_SIGMA = 0.02
CUBE_SIGMA = 0.1
# keeps every cube mode at |sin phi| < 0.6, away from gimbal lock
CUBE_ORIENTATION = (1.86, -1.16, 0.25)
LINE_AXIS = (0.0, 1.0, 1.0)
# broad band: with tight noise a half-turn line is easier than the cube
LINE_SIGMA = 0.4
LINE_SWEEP = np.pi


def tangent_noise(centres, sigma, rng):
    """Right-multiply each centre by exp of an isotropic Gaussian rotation vector."""
    xi = rng.normal(0.0, sigma, size=centres.shape[:-2] + (3,))
    return centres @ so3_exp(xi)


def cube_group():
    """The 24 proper rotations mapping the cube to itself (signed permutation matrices)."""
    mats = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1.0, -1.0), repeat=3):
            M = np.zeros((3, 3))
            M[range(3), perm] = signs
            if np.linalg.det(M) > 0:
                mats.append(M)
    return np.array(mats)


def synthetic_centre(kind):
    """Fixed reference rotation / axis of each synthetic target."""
    if kind == "peak":
        return euler_to_rotmat(np.array(PEAK_MODE))
    if kind == "cone":
        return np.asarray(CONE_AXIS) / np.linalg.norm(CONE_AXIS)
    if kind == "line":
        return np.asarray(LINE_AXIS) / np.linalg.norm(LINE_AXIS)
    if kind == "cube":
        return so3_exp(np.asarray(CUBE_ORIENTATION)) @ cube_group()
    raise UnknownKind(f"unknown synthetic kind {kind!r}; expected one of {SYNTHETIC_KINDS}")


def _sample_synthetic(kind, n, rng):
    if kind == "peak":
        centres = np.broadcast_to(synthetic_centre("peak"), (n, 3, 3))
        return tangent_noise(centres, PEAK_SIGMA, rng)
    if kind == "cone":
        spin = rng.uniform(0.0, TWO_PI, n)
        return tangent_noise(axis_angle_to_rotmat(synthetic_centre("cone"), spin), CONE_SIGMA, rng)
    if kind == "cube":
        group = synthetic_centre("cube")
        return tangent_noise(group[rng.integers(0, len(group), n)], CUBE_SIGMA, rng)
    if kind == "line":
        sweep = rng.uniform(0.0, LINE_SWEEP, n)
        return tangent_noise(axis_angle_to_rotmat(synthetic_centre("line"), sweep), LINE_SIGMA, rng)
    raise UnknownKind(f"unknown synthetic kind {kind!r}; expected one of {SYNTHETIC_KINDS}")


def generate_synthetic(kind, spec=None, rng=None):
    """
    Reconstructed versions of the peak / cone / cube / line targets.

    peak  single tangent-Gaussian mode
    cone  full spin about a fixed axis, with small tangent noise
    cube  uniform mixture over the 24 cube symmetries, each blurred
    line  half-turn sweep about a fixed axis, with tangent noise
    """
    if kind not in SYNTHETIC_KINDS:
        raise UnknownKind(f"unknown synthetic kind {kind!r}; expected one of {SYNTHETIC_KINDS}")
    spec = SyntheticSpec() if spec is None else spec
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    train = _sample_synthetic(kind, spec.train_n, rng)
    test = _sample_synthetic(kind, spec.test_n, rng)
    params = {
        "peak": {"mode_euler": list(PEAK_MODE), "sigma": PEAK_SIGMA},
        "cone": {"axis": list(CONE_AXIS), "sigma": CONE_SIGMA},
        "cube": {"orientation_rotvec": list(CUBE_ORIENTATION), "sigma": CUBE_SIGMA},
        "line": {"axis": list(LINE_AXIS), "sweep": LINE_SWEEP, "sigma": LINE_SIGMA},
    }[kind]
    gen = {"kind": kind, **asdict(spec), **params}
    return Dataset(kind, train, test, generator_spec=gen)


# -- conditional toy --------------------------------------------------------

TOY_SIGMA = 0.05


def toy_modes(symmetry):
    """The ``symmetry`` mode rotations of a class: kappa at equispaced angles about Z."""
    kappa = TWO_PI * np.arange(symmetry) / symmetry
    return euler_to_rotmat(np.stack([np.zeros(symmetry), np.zeros(symmetry), kappa], axis=1))


def _sample_toy(symmetries, n, sigma, rng):
    cls = rng.integers(0, len(symmetries), n)
    R = np.empty((n, 3, 3))
    for c, sym in enumerate(symmetries):
        idx = np.flatnonzero(cls == c)
        modes = toy_modes(sym)
        R[idx] = tangent_noise(modes[rng.integers(0, sym, idx.size)], sigma, rng)
    return R, np.eye(len(symmetries))[cls]


def generate_conditional_toy(n_classes=4, spec=None, rng=None, classes=None, sigma=TOY_SIGMA):
    """
    Toy conditional set with one-hot class contexts.

    Class with symmetry c has c equispaced blurred modes about the Z axis
    (kappa in {0, 2pi/c, ...}). By default the symmetries are 1..n_classes;
    ``classes`` picks an explicit list such as (1, 4).
    """
    symmetries = tuple(range(1, n_classes + 1)) if classes is None else tuple(classes)
    if len(symmetries) < 2 or min(symmetries) < 1:
        raise ValueError("need at least two classes with symmetry >= 1")
    spec = SyntheticSpec() if spec is None else spec
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    train, train_ctx = _sample_toy(symmetries, spec.train_n, sigma, rng)
    test, test_ctx = _sample_toy(symmetries, spec.test_n, sigma, rng)
    gen = {"kind": "conditional-toy", "classes": list(symmetries), "sigma": sigma, **asdict(spec)}
    return Dataset("conditional-toy", train, test, train_ctx, test_ctx, generator_spec=gen)


# -- IO -------------------------------------------------------------------


def _records(R, ctx):
    rows = np.asarray(R, dtype="<f8").reshape(len(R), 9)
    if ctx is not None:
        rows = np.concatenate([rows, np.asarray(ctx, dtype="<f8")], axis=1)
    return rows


def save(dataset, path):
    header = json.dumps({
        "name": dataset.name,
        "n_train": int(len(dataset.train)),
        "n_test": int(len(dataset.test)),
        "context_width": int(dataset.context_width),
        "generator_spec": dataset.generator_spec,
    }).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header)))
        fh.write(header)
        fh.write(_records(dataset.train, dataset.train_context).astype("<f8").tobytes())
        fh.write(_records(dataset.test, dataset.test_context).astype("<f8").tobytes())


def load(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CorruptRecord(f"{path}: not a dataset file")
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    if len(blob) < 12 + hlen:
        raise CorruptRecord(f"{path}: truncated header")
    try:
        header = json.loads(blob[12:12 + hlen].decode("utf-8"))
        n_train, n_test = int(header["n_train"]), int(header["n_test"])
        width = 9 + int(header["context_width"])
    except (ValueError, KeyError) as exc:
        raise CorruptRecord(f"{path}: bad header ({exc})") from exc
    body = blob[12 + hlen:]
    expected = (n_train + n_test) * width * 8
    if len(body) != expected:
        raise CorruptRecord(f"{path}: expected {expected} record bytes, found {len(body)}")
    rows = np.frombuffer(body, dtype="<f8").reshape(n_train + n_test, width).astype(float)
    R = rows[:, :9].reshape(-1, 3, 3)
    ctx = rows[:, 9:] if width > 9 else None
    return Dataset(
        header["name"], R[:n_train], R[n_train:],
        None if ctx is None else ctx[:n_train],
        None if ctx is None else ctx[n_train:],
        generator_spec=header["generator_spec"],
    )


def export_csv(path, rotations, context=None, log_density=None):
    """
    One rotation per row: r00..r22 (row major), then ctx0.. and an optional
    log_density column.
    """
    rotations = np.asarray(rotations, dtype=float).reshape(-1, 9)
    cols = [f"r{i}{j}" for i in range(3) for j in range(3)]
    parts = [rotations]
    if context is not None:
        context = np.asarray(context, dtype=float)
        cols += [f"ctx{k}" for k in range(context.shape[1])]
        parts.append(context)
    if log_density is not None:
        cols.append("log_density")
        parts.append(np.asarray(log_density, dtype=float)[:, None])
    table = np.concatenate(parts, axis=1)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        writer.writerows((repr(float(x)) for x in row) for row in table)
    return len(table)


def read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        cols = next(reader)
        rows = np.array([[float(x) for x in r] for r in reader])
    return cols, rows.reshape(-1, len(cols))
