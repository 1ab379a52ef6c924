"""Environment models on Z^d: site kernels, shifts, drift, finite-range checks.

An environment assigns a jump kernel to every lattice site. Environments are
never stored: the kernel at a site is a pure function of (seed, site), derived
from a counter-based Philox stream keyed by the site, so the shift T_z is an
index translation and every quenched law is exactly reproducible.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Any, ClassVar, Iterable, Sequence

import numpy as np

from rwrelab.errors import ConfigError, FiniteRangeError, UsageError
from rwrelab.utils import as_int_vector, canonical_json, sha256_text, zigzag

logger = logging.getLogger("rwrelab")

PROB_TOL = 1e-12
SITE_STREAM_KEY = 0x517E
MAX_SEED = 2**64


# -- Kernels --


@dataclass(frozen=True)
class KernelTable:
    """Sampling table over the positive-probability offsets of a kernel."""

    steps: tuple[tuple[int, ...], ...]
    cdf: tuple[float, ...]

    @cached_property
    def step_array(self) -> np.ndarray:
        return np.array(self.steps, dtype=np.int64)

    @cached_property
    def cdf_array(self) -> np.ndarray:
        return np.array(self.cdf, dtype=float)


@dataclass(frozen=True)
class JumpKernel:
    offsets: tuple[tuple[int, ...], ...]
    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.offsets or len(self.offsets) != len(self.probs):
            raise UsageError("Kernel needs one probability per offset and at least one offset")
        dims = {len(z) for z in self.offsets}
        if len(dims) != 1:
            raise UsageError(f"Kernel offsets have mixed dimensions: {sorted(dims)}")
        if len(set(self.offsets)) != len(self.offsets):
            raise UsageError(f"Kernel offsets are not distinct: {self.offsets}")
        if any(not math.isfinite(p) or p < 0 for p in self.probs):
            raise UsageError(f"Kernel probabilities must be finite and >= 0: {self.probs}")
        total = math.fsum(self.probs)
        if abs(total - 1.0) > PROB_TOL:
            raise UsageError(f"Kernel probabilities sum to {total!r}, not 1")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[Sequence[int] | int, float]]) -> JumpKernel:
        offsets, probs = [], []
        for z, p in pairs:
            offsets.append((int(z),) if isinstance(z, (int, np.integer)) else tuple(int(c) for c in z))
            probs.append(float(p))
        return cls(tuple(offsets), tuple(probs))

    @property
    def dim(self) -> int:
        return len(self.offsets[0])

    def norms(self) -> list[float]:
        return [math.sqrt(sum(c * c for c in z)) for z in self.offsets]

    def max_norm(self) -> float:
        return max(self.norms())

    def prob_of(self, z: Sequence[int]) -> float:
        z = tuple(z)
        for off, p in zip(self.offsets, self.probs):
            if off == z:
                return p
        return 0.0

    @cached_property
    def drift(self) -> np.ndarray:
        """Sum of z * p(z), exactly rounded per coordinate."""
        return np.array(
            [math.fsum(z[i] * p for z, p in zip(self.offsets, self.probs)) for i in range(self.dim)]
        )

    @cached_property
    def covariance(self) -> np.ndarray:
        """Step covariance: sum of p(z) (z - D)(z - D)^t."""
        centred = np.array(self.offsets, dtype=float) - self.drift
        probs = np.array(self.probs)
        cov = (centred * probs[:, None]).T @ centred
        return (cov + cov.T) / 2

    @cached_property
    def table(self) -> KernelTable:
        steps = tuple(z for z, p in zip(self.offsets, self.probs) if p > 0)
        cdf = list(itertools.accumulate(p for p in self.probs if p > 0))
        cdf[-1] = 1.0
        return KernelTable(steps=steps, cdf=tuple(cdf))

    def to_dict(self) -> dict[str, Any]:
        return {"offsets": [list(z) for z in self.offsets], "probs": list(self.probs)}

    @classmethod
    def from_dict(cls, data: dict[str, Any], where: str = "kernel") -> JumpKernel:
        _require_keys(data, {"offsets", "probs"}, where)
        offsets = [(z,) if isinstance(z, int) else tuple(z) for z in data["offsets"]]
        try:
            return cls(tuple(tuple(int(c) for c in z) for z in offsets), tuple(float(p) for p in data["probs"]))
        except UsageError as e:
            raise ConfigError(str(e), field=where) from e


def ball_offsets(dim: int, radius: int, include_zero: bool = False) -> tuple[tuple[int, ...], ...]:
    """All z in Z^dim with Euclidean norm <= radius, in lexicographic order."""
    out = []
    for z in itertools.product(range(-radius, radius + 1), repeat=dim):
        if sum(c * c for c in z) <= radius * radius and (include_zero or any(z)):
            out.append(z)
    return tuple(out)


def simple_random_walk_kernel(dim: int) -> JumpKernel:
    pairs = []
    for i in range(dim):
        for sign in (1, -1):
            e = [0] * dim
            e[i] = sign
            pairs.append((tuple(e), 1.0 / (2 * dim)))
    return JumpKernel.from_pairs(pairs)


def site_rng(seed: int, site: tuple[int, ...]) -> np.random.Generator:
    """Philox stream owned by one lattice site of one environment."""
    key = (SITE_STREAM_KEY, *(zigzag(c) for c in site))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=key)))


def _dirichlet(rng: np.random.Generator, alpha: Sequence[float]) -> np.ndarray:
    # Normalised independent standard gammas, drawn in offset order from the site stream.
    g = rng.standard_gamma(np.asarray(alpha, dtype=float))
    total = g.sum()
    if total <= 0:
        return np.full(len(alpha), 1.0 / len(alpha))
    return g / total


# -- Models --


@dataclass(frozen=True)
class EnvironmentModel:
    name: ClassVar[str] = ""
    homogeneous: ClassVar[bool] = False

    def kernel_for(self, site: tuple[int, ...], seed: int) -> JumpKernel:
        raise NotImplementedError

    def kernels(self) -> tuple[JumpKernel, ...]:
        """Kernels named explicitly by the model (empty for randomly drawn ones)."""
        return ()

    def validate(self, dim: int, radius: int) -> None:
        for i, k in enumerate(self.kernels()):
            if k.dim != dim:
                raise ConfigError(f"kernel dimension {k.dim} != dim {dim}", field=f"model_params.kernels[{i}]")
            if k.max_norm() > radius:
                raise ConfigError(
                    f"kernel offset with |z|={k.max_norm():g} exceeds range {radius}",
                    field=f"model_params.kernels[{i}]",
                )

    def params(self) -> dict[str, Any]:
        raise NotImplementedError

    def mean_drift(self, dim: int) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class DeterministicModel(EnvironmentModel):
    name: ClassVar[str] = "deterministic"
    homogeneous: ClassVar[bool] = True
    kernel: JumpKernel

    def kernel_for(self, site: tuple[int, ...], seed: int) -> JumpKernel:
        return self.kernel

    def kernels(self) -> tuple[JumpKernel, ...]:
        return (self.kernel,)

    def params(self) -> dict[str, Any]:
        return {"kernel": self.kernel.to_dict()}

    def mean_drift(self, dim: int) -> np.ndarray:
        return self.kernel.drift.copy()


@dataclass(frozen=True)
class PeriodicModel(EnvironmentModel):
    """Kernel depends on x mod period; kernels listed in row-major phase order."""

    name: ClassVar[str] = "periodic"
    period: tuple[int, ...]
    phase_kernels: tuple[JumpKernel, ...]

    def phase_of(self, site: Sequence[int]) -> int:
        idx = 0
        for c, p in zip(site, self.period):
            idx = idx * p + (c % p)
        return idx

    def phase_coords(self, phase: int) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unravel_index(phase, self.period))

    def kernel_for(self, site: tuple[int, ...], seed: int) -> JumpKernel:
        return self.phase_kernels[self.phase_of(site)]

    def kernels(self) -> tuple[JumpKernel, ...]:
        return self.phase_kernels

    def validate(self, dim: int, radius: int) -> None:
        if len(self.period) != dim or any(p < 1 for p in self.period):
            raise ConfigError(f"period {self.period} must have {dim} components >= 1", field="model_params.period")
        expected = int(np.prod(self.period))
        if len(self.phase_kernels) != expected:
            raise ConfigError(
                f"periodic model needs {expected} kernels, got {len(self.phase_kernels)}",
                field="model_params.kernels",
            )
        super().validate(dim, radius)

    def params(self) -> dict[str, Any]:
        return {"period": list(self.period), "kernels": [k.to_dict() for k in self.phase_kernels]}

    def mean_drift(self, dim: int) -> np.ndarray:
        # The periodic environment is a single omega (the seed is unused), so E[D] is D at the origin.
        return self.phase_kernels[self.phase_of((0,) * dim)].drift.copy()


@dataclass(frozen=True)
class DirichletModel(EnvironmentModel):
    """I.i.d. site kernels drawn from Dirichlet(concentration) over a fixed offset set."""

    name: ClassVar[str] = "iid-dirichlet"
    offsets: tuple[tuple[int, ...], ...]
    concentration: tuple[float, ...]

    def kernel_for(self, site: tuple[int, ...], seed: int) -> JumpKernel:
        probs = _dirichlet(site_rng(seed, site), self.concentration)
        return JumpKernel(self.offsets, tuple(float(p) for p in probs))

    def validate(self, dim: int, radius: int) -> None:
        _validate_offset_family(self.offsets, self.concentration, dim, radius)

    def params(self) -> dict[str, Any]:
        return {"offsets": [list(z) for z in self.offsets], "concentration": list(self.concentration)}

    def mean_drift(self, dim: int) -> np.ndarray:
        alpha = np.array(self.concentration)
        return (np.array(self.offsets, dtype=float) * (alpha / alpha.sum())[:, None]).sum(axis=0)


@dataclass(frozen=True)
class BalancedModel(EnvironmentModel):
    """Random kernels symmetrised as (k(z) + k(-z)) / 2, so every site has zero drift."""

    name: ClassVar[str] = "balanced"
    offsets: tuple[tuple[int, ...], ...]
    concentration: tuple[float, ...]

    def kernel_for(self, site: tuple[int, ...], seed: int) -> JumpKernel:
        raw = _dirichlet(site_rng(seed, site), self.concentration)
        index = {z: i for i, z in enumerate(self.offsets)}
        mirror = [index[tuple(-c for c in z)] for z in self.offsets]
        sym = [(raw[i] + raw[mirror[i]]) / 2 for i in range(len(self.offsets))]
        return JumpKernel(self.offsets, tuple(float(p) for p in sym))

    def validate(self, dim: int, radius: int) -> None:
        _validate_offset_family(self.offsets, self.concentration, dim, radius)
        members = set(self.offsets)
        for z in self.offsets:
            if tuple(-c for c in z) not in members:
                raise ConfigError(f"offset set is not symmetric: -{z} missing", field="model_params.offsets")

    def params(self) -> dict[str, Any]:
        return {"offsets": [list(z) for z in self.offsets], "concentration": list(self.concentration)}

    def mean_drift(self, dim: int) -> np.ndarray:
        return np.zeros(dim)


@dataclass(frozen=True)
class FiniteModel(EnvironmentModel):
    """I.i.d. site kernels chosen from a finite list with the given weights."""

    name: ClassVar[str] = "iid-finite"
    choices: tuple[JumpKernel, ...]
    weights: tuple[float, ...]

    @cached_property
    def _cdf(self) -> list[float]:
        cdf = list(itertools.accumulate(w / math.fsum(self.weights) for w in self.weights))
        cdf[-1] = 1.0
        return cdf

    def kernel_for(self, site: tuple[int, ...], seed: int) -> JumpKernel:
        u = site_rng(seed, site).random()
        for k, c in zip(self.choices, self._cdf):
            if u < c:
                return k
        return self.choices[-1]

    def kernels(self) -> tuple[JumpKernel, ...]:
        return self.choices

    def distinct_support(self) -> tuple[JumpKernel, ...]:
        """Kernels that can actually occur (positive weight), without repeats."""
        out: list[JumpKernel] = []
        for k, w in zip(self.choices, self.weights):
            if w > 0 and k not in out:
                out.append(k)
        return tuple(out)

    def validate(self, dim: int, radius: int) -> None:
        if len(self.weights) != len(self.choices) or any(w < 0 for w in self.weights) or sum(self.weights) <= 0:
            raise ConfigError("weights must be non-negative, one per kernel, not all zero", field="model_params.weights")
        super().validate(dim, radius)

    def params(self) -> dict[str, Any]:
        return {"kernels": [k.to_dict() for k in self.choices], "weights": list(self.weights)}

    def mean_drift(self, dim: int) -> np.ndarray:
        w = np.array(self.weights) / math.fsum(self.weights)
        return np.sum([wi * k.drift for wi, k in zip(w, self.choices)], axis=0)


def _validate_offset_family(offsets, concentration, dim: int, radius: int) -> None:
    if len(offsets) != len(concentration) or not offsets:
        raise ConfigError("need one concentration per offset", field="model_params.concentration")
    if any(not (a > 0) for a in concentration):
        raise ConfigError("dirichlet concentrations must be > 0", field="model_params.concentration")
    if len(set(offsets)) != len(offsets):
        raise ConfigError("offsets are not distinct", field="model_params.offsets")
    for z in offsets:
        if len(z) != dim:
            raise ConfigError(f"offset {z} has wrong dimension", field="model_params.offsets")
        if math.sqrt(sum(c * c for c in z)) > radius:
            raise ConfigError(f"offset {z} exceeds range {radius}", field="model_params.offsets")


MODELS: dict[str, type[EnvironmentModel]] = {
    m.name: m for m in (DeterministicModel, PeriodicModel, DirichletModel, BalancedModel, FiniteModel)
}


# -- Spec and view --


@dataclass(frozen=True)
class EnvironmentSpec:
    dim: int
    range: int
    model: EnvironmentModel
    seed: int = 0

    def validate(self) -> EnvironmentSpec:
        if self.dim < 1:
            raise ConfigError("dim must be >= 1", field="environment.dim")
        if self.range < 1:
            raise ConfigError("range must be >= 1", field="environment.range")
        if not 0 <= self.seed < MAX_SEED:
            raise ConfigError("seed must be a 64-bit unsigned integer", field="environment.seed")
        self.model.validate(self.dim, self.range)
        return self

    def with_seed(self, seed: int) -> EnvironmentSpec:
        return EnvironmentSpec(self.dim, self.range, self.model, int(seed))


SPEC_KEYS = ("dim", "range", "model", "model_params", "seed")


def spec_to_dict(spec: EnvironmentSpec) -> dict[str, Any]:
    """Canonical field order: dim, range, model, model_params, seed."""
    return {
        "dim": spec.dim,
        "range": spec.range,
        "model": spec.model.name,
        "model_params": spec.model.params(),
        "seed": spec.seed,
    }


def spec_from_dict(data: dict[str, Any]) -> EnvironmentSpec:
    _require_keys(data, {"dim", "range", "model"}, "environment", optional={"model_params", "seed"})
    name = data["model"]
    params = dict(data.get("model_params") or {})
    dim, radius = int(data["dim"]), int(data["range"])

    def offsets_param() -> tuple[tuple[int, ...], ...]:
        raw = params.get("offsets")
        if raw is None:
            return ball_offsets(dim, radius)
        return tuple((int(z),) if isinstance(z, int) else tuple(int(c) for c in z) for z in raw)

    def concentration_param(n: int) -> tuple[float, ...]:
        raw = params.get("concentration", 1.0)
        if isinstance(raw, (int, float)):
            return (float(raw),) * n
        return tuple(float(a) for a in raw)

    if name == "deterministic":
        _require_keys(params, {"kernel"}, "environment.model_params")
        model: EnvironmentModel = DeterministicModel(JumpKernel.from_dict(params["kernel"], "model_params.kernel"))
    elif name == "periodic":
        _require_keys(params, {"period", "kernels"}, "environment.model_params")
        period = params["period"]
        period = (int(period),) if isinstance(period, int) else tuple(int(p) for p in period)
        kernels = tuple(
            JumpKernel.from_dict(k, f"model_params.kernels[{i}]") for i, k in enumerate(params["kernels"])
        )
        model = PeriodicModel(period, kernels)
    elif name in ("iid-dirichlet", "balanced"):
        _require_keys(params, set(), "environment.model_params", optional={"offsets", "concentration"})
        offsets = offsets_param()
        cls = DirichletModel if name == "iid-dirichlet" else BalancedModel
        model = cls(offsets, concentration_param(len(offsets)))
    elif name == "iid-finite":
        _require_keys(params, {"kernels", "weights"}, "environment.model_params")
        kernels = tuple(
            JumpKernel.from_dict(k, f"model_params.kernels[{i}]") for i, k in enumerate(params["kernels"])
        )
        model = FiniteModel(kernels, tuple(float(w) for w in params["weights"]))
    else:
        raise ConfigError(f"unknown model {name!r}; expected one of {sorted(MODELS)}", field="environment.model")
    return EnvironmentSpec(dim, radius, model, int(data.get("seed", 0))).validate()


def spec_hash(spec: EnvironmentSpec) -> str:
    return sha256_text(canonical_json(spec_to_dict(spec)))


def _require_keys(data: dict[str, Any], required: set[str], where: str, optional: set[str] | None = None) -> None:
    if not isinstance(data, dict):
        raise ConfigError("expected a mapping", field=where)
    allowed = required | (optional or set())
    for key in data:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r}", field=f"{where}.{key}")
    for key in required:
        if key not in data:
            raise ConfigError(f"missing key {key!r}", field=f"{where}.{key}")


@lru_cache(maxsize=1 << 18)
def _random_site_kernel(model: EnvironmentModel, seed: int, site: tuple[int, ...]) -> JumpKernel:
    return model.kernel_for(site, seed)


@dataclass(frozen=True)
class EnvironmentView:
    """Environment seen from ``origin``: kernel_at(view, x) is the kernel at origin + x."""

    spec: EnvironmentSpec
    origin: tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        if not self.origin:
            object.__setattr__(self, "origin", (0,) * self.spec.dim)
        elif len(self.origin) != self.spec.dim:
            raise UsageError(f"origin {self.origin} does not match dim {self.spec.dim}")

    def absolute(self, x: Sequence[int] | int) -> tuple[int, ...]:
        x = as_int_vector(x, self.spec.dim)
        return tuple(o + c for o, c in zip(self.origin, x))

    def kernel_at(self, x: Sequence[int] | int) -> JumpKernel:
        return kernel_at_absolute(self.spec, self.absolute(x))


def kernel_at_absolute(spec: EnvironmentSpec, site: tuple[int, ...]) -> JumpKernel:
    model = spec.model
    if isinstance(model, (DeterministicModel, PeriodicModel)):
        return model.kernel_for(site, spec.seed)
    return _random_site_kernel(model, spec.seed, site)


def kernel_at(env: EnvironmentView, x: Sequence[int] | int) -> JumpKernel:
    """The site kernel pi_{x, x + .}(omega)."""
    return env.kernel_at(x)


def shift(env: EnvironmentView, z: Sequence[int] | int) -> EnvironmentView:
    """T_z: kernel_at(shift(env, z), x) == kernel_at(env, x + z)."""
    z = as_int_vector(z, env.spec.dim, "shift")
    return EnvironmentView(env.spec, tuple(o + c for o, c in zip(env.origin, z)))


def local_drift(env: EnvironmentView, x: Sequence[int] | int) -> np.ndarray:
    """D(T_x omega) = sum_z z pi_{x, x+z}(omega)."""
    return kernel_at(env, x).drift.copy()


@dataclass
class RangeReport:
    passed: bool
    max_norm: float
    range: int
    sites_checked: int
    violations: list[tuple[tuple[int, ...], tuple[int, ...], float]] = field(default_factory=list)

    def raise_if_failed(self) -> None:
        if not self.passed:
            site, z, norm = self.violations[0]
            raise FiniteRangeError(
                f"finite-range violation at site {site}: offset {z} has |z|={norm:g} > M={self.range} "
                "(environment model construction bug)"
            )


def assert_finite_range(
    env: EnvironmentView, sites: Iterable[Sequence[int] | int], strict: bool = True
) -> RangeReport:
    """Check that every sampled kernel has support in {|z| <= M}.

    Raises FiniteRangeError naming the first offending site unless ``strict`` is False,
    in which case the violations are only listed in the report.
    """
    radius = env.spec.range
    max_norm = 0.0
    checked = 0
    violations = []
    for x in sites:
        kernel = kernel_at(env, x)
        checked += 1
        for z, norm in zip(kernel.offsets, kernel.norms()):
            max_norm = max(max_norm, norm)
            if norm > radius:
                violations.append((env.absolute(x), z, norm))
    if violations:
        logger.warning("Finite-range check failed at %d offset(s), first at site %s", len(violations), violations[0][0])
    report = RangeReport(not violations, max_norm, radius, checked, violations)
    if strict:
        report.raise_if_failed()
    return report


def annealed_mean_drift(spec: EnvironmentSpec) -> np.ndarray:
    """E[D] under the sampling law of the environment."""
    return spec.model.mean_drift(spec.dim)


# -- Phase tables (deterministic and periodic models) --


@dataclass(frozen=True)
class PhaseTable:
    """Kernels indexed by phase = x mod period, padded into dense arrays for vectorised stepping."""

    period: tuple[int, ...]
    kernels: tuple[JumpKernel, ...]

    @cached_property
    def strides(self) -> np.ndarray:
        strides = np.ones(len(self.period), dtype=np.int64)
        for i in range(len(self.period) - 2, -1, -1):
            strides[i] = strides[i + 1] * self.period[i + 1]
        return strides

    def phases(self, sites: np.ndarray) -> np.ndarray:
        return (np.mod(sites, np.array(self.period, dtype=np.int64)) * self.strides).sum(axis=-1)

    @cached_property
    def padded(self) -> tuple[np.ndarray, np.ndarray]:
        """(cdf[P, K], steps[P, K, d]); unused cdf slots hold 2.0 so they never count as <= u."""
        width = max(len(k.table.steps) for k in self.kernels)
        dim = len(self.period)
        cdf = np.full((len(self.kernels), width), 2.0)
        steps = np.zeros((len(self.kernels), width, dim), dtype=np.int64)
        for p, k in enumerate(self.kernels):
            t = k.table
            cdf[p, : len(t.cdf)] = t.cdf_array
            steps[p, : len(t.steps)] = t.step_array
        return cdf, steps


def phase_table(spec: EnvironmentSpec) -> PhaseTable | None:
    model = spec.model
    if isinstance(model, DeterministicModel):
        return PhaseTable((1,) * spec.dim, (model.kernel,))
    if isinstance(model, PeriodicModel):
        return PhaseTable(model.period, model.phase_kernels)
    if isinstance(model, FiniteModel) and len(model.distinct_support()) == 1:
        return PhaseTable((1,) * spec.dim, model.distinct_support())
    return None
