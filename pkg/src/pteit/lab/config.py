"""Run configuration shared by the CLI and the studies."""

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from ..errors import ConfigError
from ..fem import DEFAULT_CONTACT_IMPEDANCE, ForwardModel
from ..mesh import make_disc_mesh
from ..optim import VARIANTS, SolverConfig

# JSON key -> dataclass field (``lambda`` is a Python keyword)
_KEY_ALIASES = {"lambda": "lam"}


@dataclass
class LabConfig:
    radius: float = 1.0
    n_rings: int | None = None          # None: each study picks its own default
    n_electrodes: int = 16
    electrode_coverage: float = 0.5
    contact_impedance: float = DEFAULT_CONTACT_IMPEDANCE
    lam: float = 5e-5
    snr: float = 50.0
    seed: int = 0
    variant: str = "LBFGS_H"
    lbfgs_memory: int = 20
    stagnation_tol: float = 1e-4
    dedupe_reciprocal: bool = False
    skip_driven: bool = False
    freeze_h0: bool = False
    neumann_const_alt: bool = False

    def __post_init__(self):
        if not self.radius > 0:
            raise ConfigError("radius must be positive")
        if self.n_rings is not None and int(self.n_rings) < 1:
            raise ConfigError("n_rings must be >= 1")
        if int(self.n_electrodes) < 3:
            raise ConfigError("need at least 3 electrodes")
        if not 0 < self.electrode_coverage < 1:
            raise ConfigError("electrode_coverage must be in (0, 1)")
        if not self.contact_impedance > 0:
            raise ConfigError("contact_impedance must be positive")
        if self.lam < 0:
            raise ConfigError("lambda must be non-negative")
        if not self.snr > 0:
            raise ConfigError("snr must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if int(self.lbfgs_memory) < 1:
            raise ConfigError("lbfgs_memory must be >= 1")
        if self.stagnation_tol < 0:
            raise ConfigError("stagnation_tol must be non-negative")

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in data.items():
            name = _KEY_ALIASES.get(key, key)
            if name not in known or name == "lam" and key != "lambda":
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[name] = value
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path):
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self):
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return dict(sorted(d.items()))

    def rings(self, default):
        return default if self.n_rings is None else int(self.n_rings)

    def mesh(self, n_rings):
        return make_disc_mesh(self.radius, n_rings, int(self.n_electrodes), self.electrode_coverage)

    def meshes(self, default_rings):
        """Reconstruction mesh and a simulation mesh with four times as many elements."""
        k = self.rings(default_rings)
        recon, sim = self.mesh(k), self.mesh(2 * k)
        if recon.hash == sim.hash:
            raise ConfigError("simulation and reconstruction meshes coincide (inverse crime)")
        return recon, sim

    def model(self, mesh):
        return ForwardModel(mesh, self.contact_impedance,
                            dedupe_reciprocal=self.dedupe_reciprocal, skip_driven=self.skip_driven)

    def solver(self, variant=None, **overrides):
        kw = dict(variant=variant or self.variant, lam=self.lam, lbfgs_memory=int(self.lbfgs_memory),
                  stagnation_tol=self.stagnation_tol, freeze_h0=self.freeze_h0,
                  neumann_const_alt=self.neumann_const_alt)
        kw.update(overrides)
        return SolverConfig(**kw)
