"""Synthetic two-polarization GPR scenes with buried point scatterers.

The background is a stack of gently undulating horizontal reflectors plus
band-limited speckle (white noise filtered by the source wavelet), shared by
both polarizations, with V scaled by ``pol_ratio`` and delayed by
``pol_lag`` samples. Each polarization then receives its own white noise.

A target at inline ``x0``, crossline ``y0`` and depth ``d`` adds a wavelet
arriving at ``t(x) = 2 sqrt(d^2 + (x - x0)^2) / velocity`` with amplitude
``A d / r`` (1/r spreading, 1 at the apex) and a Gaussian crossline taper
across the ``extent`` scans it touches.

Scene files are INI-style key/value text read with :mod:`configparser`::

    [scene]
    T = 512
    velocity = 14.0
    ...
    [target 1]
    x0 = 30.0
    y0 = 12.0
    depth = 8.0
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .volume import Polarization, Volume


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class TargetSpec:
    """Point scatterer; positions in cm, ``extent`` in B-scans.

    ``lag`` is the V delay in samples (``None`` uses the scene's ``pol_lag``).
    """

    x0: float
    y0: float
    depth: float
    amplitude: float = 1.0
    extent: int = 3
    asymmetry: float = 0.8
    lag: int | None = None

    def __post_init__(self):
        if self.depth <= 0:
            raise SceneError("target depth must be positive")
        if self.extent < 1:
            raise SceneError("target extent must be >= 1 scan")
        if self.amplitude < 0 or self.asymmetry < 0:
            raise SceneError("target amplitudes must be >= 0")


@dataclass(frozen=True)
class SceneSpec:
    T: int = 512
    X: int = 256
    Y: int = 60
    dt: float = 0.0117
    dx: float = 0.4
    dy: float = 0.8
    velocity: float = 14.0
    frequency: float = 2.0
    n_layers: int = 4
    layer_amplitude: float = 0.4
    speckle: float = 0.02
    noise: float = 0.01
    pol_lag: int = 3
    pol_ratio: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if min(self.T, self.X, self.Y) < 1:
            raise SceneError("scene dims must be >= 1")
        for name in ("dt", "dx", "dy", "velocity", "frequency"):
            if not getattr(self, name) > 0:
                raise SceneError(f"{name} must be positive")
        for name in ("layer_amplitude", "speckle", "noise", "pol_ratio"):
            if getattr(self, name) < 0:
                raise SceneError(f"{name} must be >= 0")
        if self.n_layers < 0 or abs(self.pol_lag) >= self.T:
            raise SceneError("bad n_layers or pol_lag")

    def volume(self, data, pol) -> Volume:
        return Volume(data, self.dt, self.dx, self.dy, self.velocity, pol)


def _ricker_at(t, frequency):
    a = (np.pi * frequency * t) ** 2
    return (1.0 - 2.0 * a) * np.exp(-a)


def ricker(frequency: float, dt: float, length: int) -> np.ndarray:
    """Zero-phase Ricker wavelet, 1 at the centre sample ``length // 2``."""
    if frequency <= 0 or dt <= 0:
        raise SceneError("frequency and dt must be positive")
    t = (np.arange(int(length)) - int(length) // 2) * dt
    return _ricker_at(t, frequency)


def _wavelet_support(spec):
    # the Ricker envelope is below 1e-12 beyond ~1.7 periods
    return int(np.ceil(1.7 / (spec.frequency * spec.dt)))


def _scan_seeds(spec: SceneSpec):
    root = np.random.SeedSequence(spec.seed)
    layers, *scans = root.spawn(1 + spec.Y)
    return layers, scans


def _layer_times(spec, rng):
    """Travel time (ns) per layer and inline position, shape ``(n_layers, X)``."""
    record = spec.T * spec.dt
    x = np.arange(spec.X) * spec.dx
    span = spec.X * spec.dx
    times = []
    for k in range(spec.n_layers):
        t0 = record * (0.1 + 0.8 * (k + rng.random()) / max(spec.n_layers, 1))
        wobble = rng.uniform(0.5, 3.0) * spec.dt
        period = span * rng.uniform(0.8, 2.5)
        phase = rng.uniform(0, 2 * np.pi)
        times.append(t0 + wobble * np.sin(2 * np.pi * x / period + phase))
    amps = spec.layer_amplitude * rng.uniform(0.5, 1.0, size=spec.n_layers) * rng.choice(
        [-1.0, 1.0], size=spec.n_layers)
    return np.array(times).reshape(spec.n_layers, spec.X), amps


def _render_events(spec, times, amps, delay=0.0):
    """Sum of wavelets at arrival ``times`` (ns, ``(K, X)``) into ``(T, X)``."""
    t = np.arange(spec.T)[:, None] * spec.dt
    out = np.zeros((spec.T, spec.X))
    for tk, ak in zip(times, amps):
        out += ak * _ricker_at(t - tk[None, :] - delay * spec.dt, spec.frequency)
    return out


def _shift(trace_block, lag):
    """Delay along axis 0 by ``lag`` samples with zero fill."""
    out = np.zeros_like(trace_block)
    n = trace_block.shape[0]
    if lag >= 0:
        out[lag:] = trace_block[: n - lag]
    else:
        out[: n + lag] = trace_block[-lag:]
    return out


def _speckle(spec, rng):
    w = ricker(spec.frequency, spec.dt, 2 * _wavelet_support(spec) + 1)
    w /= np.sqrt(np.sum(w ** 2))
    white = rng.standard_normal((spec.T + len(w) - 1, spec.X))
    out = np.empty((spec.T, spec.X))
    for j in range(spec.X):
        out[:, j] = np.convolve(white[:, j], w, mode="valid")
    return spec.speckle * out


def generate_background(spec: SceneSpec) -> tuple[Volume, Volume]:
    """Object-free H and V volumes, deterministic in ``spec.seed``."""
    layer_seq, scan_seqs = _scan_seeds(spec)
    times, amps = _layer_times(spec, np.random.default_rng(layer_seq))
    layers = _render_events(spec, times, amps) if spec.n_layers else np.zeros((spec.T, spec.X))
    h = np.empty((spec.T, spec.X, spec.Y))
    v = np.empty_like(h)
    for y, seq in enumerate(scan_seqs):
        rng = np.random.default_rng(seq)
        base = layers + _speckle(spec, rng)
        h[:, :, y] = base + spec.noise * rng.standard_normal((spec.T, spec.X))
        v[:, :, y] = spec.pol_ratio * _shift(base, spec.pol_lag) + spec.noise * rng.standard_normal(
            (spec.T, spec.X))
    return spec.volume(h, Polarization.H), spec.volume(v, Polarization.V)


def affected_scans(target: TargetSpec, spec: SceneSpec) -> np.ndarray:
    """0-based crossline indices touched by ``target``."""
    centre = int(round(target.y0 / spec.dy))
    first = centre - (target.extent - 1) // 2
    return np.arange(first, first + target.extent)


def apex_time(depth: float, velocity: float) -> float:
    return 2.0 * depth / velocity


def travel_time(x, x0: float, depth: float, velocity: float):
    return 2.0 * np.sqrt(depth ** 2 + (np.asarray(x) - x0) ** 2) / velocity


def inject_target(v_h: Volume, v_v: Volume, target: TargetSpec, spec: SceneSpec,
                  labels=None) -> tuple[Volume, Volume, np.ndarray]:
    """Add one scatterer's hyperbola to both polarizations and mark its scans."""
    T, X, Y = v_h.shape
    t_apex = apex_time(target.depth, spec.velocity)
    if t_apex > T * spec.dt:
        raise SceneError(f"apex at {t_apex:.3f} ns falls outside the {T * spec.dt:.3f} ns record")
    scans = affected_scans(target, spec)
    if scans[0] < 0 or scans[-1] >= Y:
        raise SceneError(f"target scans {scans[0] + 1}..{scans[-1] + 1} fall outside 1..{Y}")
    labels = np.zeros(Y, np.int8) if labels is None else np.array(labels, dtype=np.int8)
    x = np.arange(X) * spec.dx
    arrival = travel_time(x, target.x0, target.depth, spec.velocity)
    r = 0.5 * spec.velocity * arrival
    trace = target.amplitude * target.depth / r
    lag = spec.pol_lag if target.lag is None else target.lag
    hyper_h = _render_events(spec, arrival[None, :], [1.0]) * trace[None, :]
    hyper_v = _render_events(spec, arrival[None, :], [1.0], delay=lag) * trace[None, :]
    sigma = max(target.extent / 2.0, 0.5)
    centre = target.y0 / spec.dy
    h, v = v_h.data.copy(), v_v.data.copy()
    for y in scans:
        taper = np.exp(-0.5 * ((y - centre) / sigma) ** 2)
        h[:, :, y] += taper * hyper_h
        v[:, :, y] += taper * target.asymmetry * hyper_v
        labels[y] = 1
    return v_h.with_data(h), v_v.with_data(v), labels


def default_targets(spec: SceneSpec, n: int = 6, train_bscans: int = 5) -> list[TargetSpec]:
    """``n`` targets spread over the test scans, 5-15 cm deep, two clean scans apart."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 7]))
    free = spec.Y - train_bscans
    span = spec.X * spec.dx
    targets = []
    for k in range(n):
        extent = int(rng.integers(3, 6))
        centre = train_bscans + (k + 0.5) * free / n
        targets.append(TargetSpec(
            x0=float(rng.uniform(0.25, 0.75) * span),
            y0=float(round(centre) * spec.dy),
            depth=float(rng.uniform(5.0, 15.0)),
            amplitude=float(rng.uniform(0.6, 1.0)),
            extent=extent,
            asymmetry=float(rng.uniform(0.5, 1.2)),
        ))
    return targets


@dataclass(frozen=True, eq=False)
class Dataset:
    v_h: Volume
    v_v: Volume
    labels: np.ndarray
    train_bscans: int
    spec: SceneSpec
    targets: tuple = field(default=())

    @property
    def train_scans(self) -> np.ndarray:
        return np.arange(self.train_bscans)

    @property
    def test_scans(self) -> np.ndarray:
        return np.arange(self.train_bscans, len(self.labels))

    def manifest(self) -> str:
        lines = [f"train,{y + 1}" for y in self.train_scans]
        lines += [f"test,{y + 1}" for y in self.test_scans]
        return "\n".join(lines) + "\n"


def generate_dataset(spec: SceneSpec, targets=None, train_bscans: int = 5) -> Dataset:
    """Background plus targets; scans ``1..train_bscans`` stay object-free."""
    targets = default_targets(spec, train_bscans=train_bscans) if targets is None else list(targets)
    if not 0 <= train_bscans <= spec.Y:
        raise SceneError("train_bscans must lie in [0, Y]")
    v_h, v_v = generate_background(spec)
    labels = np.zeros(spec.Y, np.int8)
    for target in targets:
        if affected_scans(target, spec)[0] < train_bscans:
            raise SceneError(f"target at y0={target.y0} cm reaches the training scans")
        v_h, v_v, labels = inject_target(v_h, v_v, target, spec, labels)
    return Dataset(v_h, v_v, labels, train_bscans, spec, tuple(targets))


# ---------------------------------------------------------------------------
# scene files

_INT_KEYS = {"T", "X", "Y", "n_layers", "pol_lag", "seed", "extent", "lag"}


def _coerce(cls, raw: dict, where: str) -> dict:
    known = {f.name for f in fields(cls)}
    out = {}
    for key, text in raw.items():
        if key not in known:
            raise SceneError(f"{where}: unknown key {key!r}")
        try:
            if text.strip().lower() in ("", "none"):
                out[key] = None
            else:
                out[key] = int(text) if key in _INT_KEYS else float(text)
        except ValueError as exc:
            raise SceneError(f"{where}: bad value for {key}: {text!r}") from exc
    return out


def parse_scene(text: str) -> tuple[SceneSpec, list[TargetSpec] | None, int]:
    """Parse a scene file; returns the spec, its targets (``None`` when the
    file lists none and ``n_targets`` is absent) and the training scan count."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise SceneError(f"malformed scene file: {exc}") from exc
    scene = dict(cp["scene"]) if cp.has_section("scene") else {}
    n_targets = scene.pop("n_targets", None)
    train_bscans = int(scene.pop("train_bscans", 5))
    spec = SceneSpec(**_coerce(SceneSpec, scene, "[scene]"))
    targets = [
        TargetSpec(**_coerce(TargetSpec, dict(cp[s]), f"[{s}]"))
        for s in cp.sections() if s.lower().startswith("target")
    ]
    if not targets:
        targets = None if n_targets is None else default_targets(spec, int(n_targets), train_bscans)
    return spec, targets, train_bscans


def load_scene(path):
    with open(path) as fh:
        return parse_scene(fh.read())


def format_scene(spec: SceneSpec, targets=None, train_bscans: int = 5) -> str:
    lines = ["[scene]"]
    lines += [f"{k} = {v!r}" for k, v in asdict(spec).items()]
    lines.append(f"train_bscans = {train_bscans}")
    for i, t in enumerate(targets or [], start=1):
        lines += ["", f"[target {i}]"]
        lines += [f"{k} = {'none' if v is None else repr(v)}" for k, v in asdict(t).items()]
    return "\n".join(lines) + "\n"


def with_overrides(spec: SceneSpec, **changes) -> SceneSpec:
    return replace(spec, **changes)
