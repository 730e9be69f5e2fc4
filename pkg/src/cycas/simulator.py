"""Synthetic identity world: prototypes seen through noisy linear cameras.

Each identity is a unit prototype living in a low-dimensional identity
subspace of the observation space. A camera applies an invertible linear map
plus bias, and each observation adds isotropic Gaussian noise. Because the
identity signal only spans part of the observation space, some linear
read-out is invariant across cameras, but a random read-out is not.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.linalg import expm

WORLD_FORMAT_VERSION = 1
MAX_ATTEMPTS = 10_000
MAX_PROTOTYPE_COSINE = 0.8
MAX_CONDITION = 10.0
TAU_VARIANCE = 0.01
_TAU_FLOOR = 1e-6

INTRA = "intra"
INTER = "inter"


class InfeasibleWorldError(RuntimeError):
    pass


@dataclass
class IdentityWorld:
    prototypes: np.ndarray  # (N, D_obs)
    transforms: np.ndarray  # (n_cameras, D_obs, D_obs)
    biases: np.ndarray  # (n_cameras, D_obs)
    noise_scales: np.ndarray  # (n_cameras,)
    nuisance: np.ndarray  # (n_cameras, D_obs, nuisance_dim)
    sigma_intra: float
    seed: int

    @property
    def N(self) -> int:
        return self.prototypes.shape[0]

    @property
    def D_obs(self) -> int:
        return self.prototypes.shape[1]

    @property
    def n_cameras(self) -> int:
        return self.transforms.shape[0]

    def clean_view(self, identity, camera) -> np.ndarray:
        """Noise-free observation(s); broadcasts over index arrays."""
        identity = np.asarray(identity)
        camera = np.asarray(camera)
        M = self.transforms[camera]
        p = self.prototypes[identity]
        return np.einsum("...ij,...j->...i", M, p) + self.biases[camera]


class Instance(NamedTuple):
    observation: np.ndarray
    identity: int
    camera: int
    frame: int = 0


@dataclass
class FramePair:
    set1: list[Instance]
    set2: list[Instance]
    kind: str
    tau: float

    def observations(self) -> tuple[np.ndarray, np.ndarray]:
        """Observation matrices (D_obs x K1, D_obs x K2)."""
        return (
            np.stack([x.observation for x in self.set1], axis=1),
            np.stack([x.observation for x in self.set2], axis=1),
        )


@dataclass
class _SampledPair(FramePair):
    # Sampler output: keeps the stacked observation matrices it was built from.
    obs1: np.ndarray | None = None
    obs2: np.ndarray | None = None

    def observations(self) -> tuple[np.ndarray, np.ndarray]:
        return self.obs1, self.obs2


@dataclass(frozen=True)
class SymmetrySchedule:
    tau_alpha_mean: float = 0.9
    tau_beta_mean: float = 0.6
    variance: float = field(default=TAU_VARIANCE)

    def __post_init__(self):
        for name in ("tau_alpha_mean", "tau_beta_mean"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")

    def draw_alpha(self, rng: np.random.Generator) -> float:
        return truncated_tau(rng, self.tau_alpha_mean, self.variance)

    def draw_beta(self, rng: np.random.Generator) -> float:
        return truncated_tau(rng, self.tau_beta_mean, self.variance)


def truncated_tau(rng: np.random.Generator, mean: float, variance: float = TAU_VARIANCE) -> float:
    """Gaussian draw clipped into the open interval (0, 1)."""
    tau = rng.normal(mean, np.sqrt(variance))
    return float(np.clip(tau, _TAU_FLOOR, 1.0 - _TAU_FLOOR))


def _random_orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    return Q * np.sign(np.diag(R))


def make_world(
    N: int = 32,
    D_obs: int = 16,
    n_cameras: int = 2,
    sigma_intra: float = 0.05,
    seed: int = 0,
    identity_dim: int | None = None,
    camera_angle: float = 0.5,
    bias_scale: float = 1.5,
    nuisance_dim: int = 2,
    nuisance_gain: float = 30.0,
    max_cosine: float = MAX_PROTOTYPE_COSINE,
) -> IdentityWorld:
    """Generate a world deterministically from ``seed``.

    ``identity_dim`` is the rank of the subspace holding the prototypes and
    defaults to 5 * D_obs // 8 (10 for D_obs = 16). No linear map is exactly
    camera-invariant on that subspace, so retrieval is learnable but not free. Each camera rotates the
    shared frame by a random generator scaled by ``camera_angle`` (radians,
    roughly) and adds a bias with per-coordinate scale ``bias_scale``.

    Observation noise of a camera has covariance sigma^2 s_c^2 (I + V_c V_c^T):
    isotropic jitter plus strong variation along ``nuisance_dim`` camera-specific
    directions whose length is ``nuisance_gain`` (pose/illumination stand-ins).
    An embedder must learn to ignore those directions before identities can be
    matched, and untrained embedders are swamped by them.
    """
    if N < 2 or D_obs < 2 or n_cameras < 2:
        raise ValueError("need N >= 2, D_obs >= 2 and n_cameras >= 2")
    if identity_dim is None:
        identity_dim = max(1, 5 * D_obs // 8)
    if not 1 <= identity_dim <= D_obs:
        raise ValueError(f"identity_dim must lie in [1, {D_obs}]")
    rng = np.random.default_rng(seed)

    basis = _random_orthogonal(rng, D_obs)[:, :identity_dim]
    codes: list[np.ndarray] = []
    attempts = 0
    while len(codes) < N:
        attempts += 1
        if attempts > MAX_ATTEMPTS:
            raise InfeasibleWorldError(
                f"could not place {N} prototypes in {identity_dim} dims with "
                f"pairwise cosine <= {max_cosine}"
            )
        z = rng.standard_normal(identity_dim)
        z /= np.linalg.norm(z)
        if codes and np.max(np.stack(codes) @ z) > max_cosine:
            continue
        codes.append(z)
    prototypes = np.stack(codes) @ basis.T

    transforms = []
    for _ in range(n_cameras):
        for _ in range(MAX_ATTEMPTS):
            G = rng.standard_normal((D_obs, D_obs))
            rotation = expm(camera_angle * (G - G.T) / np.sqrt(2 * D_obs))
            M = rotation * rng.uniform(0.9, 1.1, size=D_obs)
            if np.linalg.cond(M) <= MAX_CONDITION:
                break
        else:  # pragma: no cover - the scaling range keeps cond <= 11/9
            raise InfeasibleWorldError("could not draw a well-conditioned camera")
        transforms.append(M)
    biases = bias_scale * rng.standard_normal((n_cameras, D_obs))
    noise_scales = rng.uniform(0.8, 1.2, size=n_cameras)
    nuisance = np.stack([
        nuisance_gain * _random_orthogonal(rng, D_obs)[:, :nuisance_dim]
        for _ in range(n_cameras)
    ])
    return IdentityWorld(
        prototypes=prototypes,
        transforms=np.stack(transforms),
        biases=biases,
        noise_scales=noise_scales,
        nuisance=nuisance,
        sigma_intra=float(sigma_intra),
        seed=int(seed),
    )


def observe(
    world: IdentityWorld,
    identity: int,
    camera: int,
    rng: np.random.Generator,
    frame: int = 0,
    sigma: float | None = None,
) -> Instance:
    if not 0 <= identity < world.N:
        raise IndexError(f"identity {identity} out of range")
    if not 0 <= camera < world.n_cameras:
        raise IndexError(f"camera {camera} out of range")
    sigma = world.sigma_intra if sigma is None else sigma
    obs = world.clean_view(identity, camera)
    scale = sigma * world.noise_scales[camera]
    if scale > 0:
        V = world.nuisance[camera]
        obs = obs + scale * (rng.standard_normal(world.D_obs) + V @ rng.standard_normal(V.shape[1]))
    return Instance(observation=obs, identity=int(identity), camera=int(camera), frame=int(frame))


def measure_symmetry(set1: Sequence, set2: Sequence) -> float:
    """Distinct shared identities over the larger set size.

    Accepts Instances or bare identity labels.
    """
    if len(set1) == 0 or len(set2) == 0:
        raise ValueError("symmetry is undefined for an empty set")
    ids1 = {getattr(x, "identity", x) for x in set1}
    ids2 = {getattr(x, "identity", x) for x in set2}
    return len(ids1 & ids2) / max(len(set1), len(set2))


def _shared_count(world: IdentityWorld, K: int, tau: float) -> int:
    if not 1 <= K <= world.N:
        raise ValueError(f"K={K} must lie in [1, {world.N}]")
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    n_shared = int(round(tau * K))  # round-half-to-even
    if 2 * K - n_shared > world.N:
        raise ValueError(
            f"need {K - n_shared} replacement identities disjoint from {K}, world has {world.N}"
        )
    return n_shared


def _pick_identities(world: IdentityWorld, n: int, K: int, n_shared: int, rng):
    # Row b of ids1/ids2 holds the identities of pair b. Set 2 keeps n_shared
    # identities of set 1 and fills the rest with identities absent from set 1.
    perm = np.argsort(rng.random((n, world.N)), axis=1)
    ids1 = perm[:, :K]
    keep_order = np.argsort(rng.random((n, K)), axis=1)[:, :n_shared]
    keep = np.take_along_axis(ids1, keep_order, axis=1)
    ids2 = np.concatenate([keep, perm[:, K:2 * K - n_shared]], axis=1)
    shuffle = np.argsort(rng.random((n, K)), axis=1)
    return ids1, np.take_along_axis(ids2, shuffle, axis=1)


def _observe_sets(world: IdentityWorld, ids: np.ndarray, cams: np.ndarray, sigma: float, rng):
    # ids (n, K), cams (n,) -> observations (n, K, D_obs)
    obs = world.prototypes[ids] @ np.swapaxes(world.transforms[cams], -1, -2)
    obs += world.biases[cams][:, None, :]
    scale = sigma * world.noise_scales[cams]
    if sigma > 0:
        V = world.nuisance[cams]  # (n, D_obs, nuisance_dim)
        z = rng.standard_normal(ids.shape + (V.shape[-1],))
        noise = rng.standard_normal(obs.shape) + z @ np.swapaxes(V, -1, -2)
        obs += scale[:, None, None] * noise
    return obs


def _assemble(kind, ids1, ids2, cams1, cams2, obs1, obs2, frame2):
    pairs = []
    for b in range(len(ids1)):
        c1, c2 = int(cams1[b]), int(cams2[b])
        i1, i2 = ids1[b].tolist(), ids2[b].tolist()
        set1 = [Instance(o, i, c1, 0) for o, i in zip(list(obs1[b]), i1)]
        set2 = [Instance(o, i, c2, frame2) for o, i in zip(list(obs2[b]), i2)]
        pairs.append(_SampledPair(set1, set2, kind, measure_symmetry(i1, i2),
                                  obs1[b].T, obs2[b].T))
    return pairs


def intra_sample_batch(world: IdentityWorld, n: int, K: int, tau_alpha: float,
                       rng: np.random.Generator, frame_gap: int = 1) -> list[FramePair]:
    """``n`` independent intra-camera pairs sharing one requested tau."""
    if not 0.0 < tau_alpha <= 1.0:
        raise ValueError(f"tau_alpha must lie in (0, 1], got {tau_alpha}")
    if frame_gap < 1:
        raise ValueError("frame_gap must be >= 1")
    n_shared = _shared_count(world, K, tau_alpha)
    cams = rng.integers(world.n_cameras, size=n)
    ids1, ids2 = _pick_identities(world, n, K, n_shared, rng)
    sigma = world.sigma_intra * frame_gap
    obs1 = _observe_sets(world, ids1, cams, sigma, rng)
    obs2 = _observe_sets(world, ids2, cams, sigma, rng)
    return _assemble(INTRA, ids1, ids2, cams, cams, obs1, obs2, frame_gap)


def inter_sample_batch(world: IdentityWorld, n: int, K: int, tau_beta: float,
                       rng: np.random.Generator) -> list[FramePair]:
    """``n`` independent time-aligned pairs, each from two distinct cameras."""
    n_shared = _shared_count(world, K, tau_beta)
    cams1 = rng.integers(world.n_cameras, size=n)
    cams2 = (cams1 + 1 + rng.integers(world.n_cameras - 1, size=n)) % world.n_cameras
    ids1, ids2 = _pick_identities(world, n, K, n_shared, rng)
    obs1 = _observe_sets(world, ids1, cams1, world.sigma_intra, rng)
    obs2 = _observe_sets(world, ids2, cams2, world.sigma_intra, rng)
    return _assemble(INTER, ids1, ids2, cams1, cams2, obs1, obs2, 0)


def intra_sample(
    world: IdentityWorld,
    K: int,
    tau_alpha: float,
    rng: np.random.Generator,
    frame_gap: int = 1,
) -> FramePair:
    """Two frames of a single camera; ``frame_gap`` scales the noise linearly."""
    return intra_sample_batch(world, 1, K, tau_alpha, rng, frame_gap)[0]


def inter_sample(
    world: IdentityWorld,
    K: int,
    tau_beta: float,
    rng: np.random.Generator,
) -> FramePair:
    """Time-aligned frames from two distinct cameras."""
    return inter_sample_batch(world, 1, K, tau_beta, rng)[0]


def stream_rng(master_seed: int, stream: int) -> np.random.Generator:
    """Independent generator for a parallel sampling stream."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(stream,)))


def save_world(world: IdentityWorld, path) -> None:
    """Write a snapshot as a .npz archive with a JSON header.

    Arrays are stored in binary form, so reloading is bit-exact.
    """
    header = {
        "format": "cycas-world",
        "version": WORLD_FORMAT_VERSION,
        "sigma_intra": world.sigma_intra,
        "seed": world.seed,
    }
    with open(path, "wb") as fh:
        np.savez(
            fh,
            header=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8),
            prototypes=world.prototypes,
            transforms=world.transforms,
            biases=world.biases,
            noise_scales=world.noise_scales,
            nuisance=world.nuisance,
        )


def load_world(path) -> IdentityWorld:
    with open(path, "rb") as fh:
        data = np.load(io.BytesIO(fh.read()), allow_pickle=False)
        header = json.loads(bytes(data["header"]).decode())
        if header.get("format") != "cycas-world" or header.get("version") != WORLD_FORMAT_VERSION:
            raise ValueError(f"unsupported world snapshot header: {header}")
        return IdentityWorld(
            prototypes=data["prototypes"],
            transforms=data["transforms"],
            biases=data["biases"],
            noise_scales=data["noise_scales"],
            nuisance=data["nuisance"],
            sigma_intra=float(header["sigma_intra"]),
            seed=int(header["seed"]),
        )
