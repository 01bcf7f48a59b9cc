"""Experiment configuration and its JSON representation.

The on-disk format is a flat JSON object whose keys mirror the
``ExperimentConfig`` field names, versioned through ``schema_version``.
Detector efficiency and dark rate defaults are engineering placeholders,
exposed here precisely so that no run depends on undocumented hardware
assumptions.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

from . import effects, qstate, source

__all__ = ["ConfigError", "ExperimentConfig", "ROUTING_POLICIES", "SCHEMA_VERSION"]

SCHEMA_VERSION = 1

ROUTING_POLICIES = ("probabilistic", "energy_basis", "time_basis")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass
class ExperimentConfig:
    """Full parameter set of one simulated acquisition."""

    rep_rate_hz: float = 80e6
    tau_ps: float = 220.0
    # exactly one of pair_prob / squeezing_s defines the source strength
    pair_prob: float | None = 0.0279
    squeezing_s: float | None = None
    phi_p_rad: float = 0.0
    heater_powers_mw: tuple[float, float] = (0.0, 0.0)
    thermo_kappa_rad_per_mw: tuple[float, float] = (1.0, 1.0)
    thermo_phi0_rad: tuple[float, float] = (0.0, 0.0)
    excess_long_arm_loss_db: float = 1.0
    balance_arms: bool = True
    arm_t_short: tuple[float, float] = (1.0, 1.0)
    arm_t_long: tuple[float, float] = (1.0, 1.0)
    channel_loss_db: tuple[float, float] = (12.5, 12.5)
    detector_efficiency: float = 0.5
    jitter_sigma_ps: float = 50.0 / math.sqrt(2.0)
    dark_rate_hz: float = 100.0
    acquisition_s: float = 0.001
    routing_policy: str = "probabilistic"
    rng_seed: int = 1
    # dispersion limit: a fixed visibility wins over the bandwidth model
    dispersion_visibility: float | None = None
    dispersion_bandwidth_nm: float = 8.8
    visibility_anchors: tuple = effects.DEFAULT_VISIBILITY_ANCHORS
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(
                f"unsupported schema_version {self.schema_version}"
            )
        if self.rep_rate_hz <= 0:
            raise ConfigError("rep_rate_hz must be positive")
        if self.tau_ps <= 0:
            raise ConfigError("tau_ps must be positive")
        if (self.pair_prob is None) == (self.squeezing_s is None):
            raise ConfigError("set exactly one of pair_prob and squeezing_s")
        if self.pair_prob is not None and not 0.0 <= self.pair_prob < 1.0:
            raise ConfigError("pair_prob must lie in [0, 1)")
        if self.squeezing_s is not None and self.squeezing_s < 0:
            raise ConfigError("squeezing_s must be non-negative")
        if not 0.0 <= self.detector_efficiency <= 1.0:
            raise ConfigError("detector_efficiency must lie in [0, 1]")
        if self.jitter_sigma_ps < 0:
            raise ConfigError("jitter_sigma_ps must be non-negative")
        if self.dark_rate_hz < 0:
            raise ConfigError("dark_rate_hz must be non-negative")
        if self.acquisition_s < 0:
            raise ConfigError("acquisition_s must be non-negative")
        if self.routing_policy not in ROUTING_POLICIES:
            raise ConfigError(
                f"routing_policy must be one of {ROUTING_POLICIES}"
            )
        if self.excess_long_arm_loss_db < 0:
            raise ConfigError("excess_long_arm_loss_db must be non-negative")
        for pair_name in ("heater_powers_mw", "channel_loss_db"):
            value = getattr(self, pair_name)
            if len(value) != 2:
                raise ConfigError(f"{pair_name} needs (signal, idler) values")
        for p in self.heater_powers_mw:
            if p < 0:
                raise ConfigError("heater powers must be non-negative")
        if self.dispersion_visibility is not None and not (
            0.0 < self.dispersion_visibility <= 1.0
        ):
            raise ConfigError("dispersion_visibility must lie in (0, 1]")
        if self.dispersion_bandwidth_nm <= 0:
            raise ConfigError("dispersion_bandwidth_nm must be positive")

    # -- derived quantities -------------------------------------------------

    def period_ps(self) -> float:
        return 1e12 / self.rep_rate_hz

    def n_pulses(self) -> int:
        return int(round(self.rep_rate_hz * self.acquisition_s))

    def squeezing(self) -> float:
        if self.squeezing_s is not None:
            return self.squeezing_s
        if self.pair_prob == 0.0:
            return 0.0
        return source.s_from_pair_probability(self.pair_prob)

    def pulse_probs(self) -> source.PairProbabilities:
        return source.pulse_pair_probs(self.squeezing())

    def phases(self) -> qstate.PhaseSettings:
        phi_s = effects.phase_from_power(
            self.heater_powers_mw[0],
            effects.ThermoOpticMap(
                self.thermo_kappa_rad_per_mw[0], self.thermo_phi0_rad[0]
            ),
        )
        phi_i = effects.phase_from_power(
            self.heater_powers_mw[1],
            effects.ThermoOpticMap(
                self.thermo_kappa_rad_per_mw[1], self.thermo_phi0_rad[1]
            ),
        )
        return qstate.PhaseSettings(phi_s, phi_i, self.phi_p_rad)

    def arms(self) -> qstate.ArmModel:
        if self.balance_arms:
            return effects.balanced_arm_model(self.excess_long_arm_loss_db)
        return qstate.ArmModel(
            t_short=tuple(self.arm_t_short), t_long=tuple(self.arm_t_long)
        )

    def dispersion_visibility_value(self) -> float:
        if self.dispersion_visibility is not None:
            return self.dispersion_visibility
        model = effects.VisibilityModel.from_anchors(self.visibility_anchors)
        return effects.visibility_vs_bandwidth(self.dispersion_bandwidth_nm, model)

    def channel_transmissions(self) -> tuple[float, float]:
        """Per-channel survival probability: path loss times detector."""
        return tuple(
            10.0 ** (-db / 10.0) * self.detector_efficiency
            for db in self.channel_loss_db
        )

    # -- serialisation ------------------------------------------------------

    def to_dict(self) -> dict:
        data = asdict(self)
        for key in (
            "heater_powers_mw",
            "thermo_kappa_rad_per_mw",
            "thermo_phi0_rad",
            "arm_t_short",
            "arm_t_long",
            "channel_loss_db",
        ):
            data[key] = list(data[key])
        data["visibility_anchors"] = [list(a) for a in self.visibility_anchors]
        return data

    def to_json_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(data)
        for key in (
            "heater_powers_mw",
            "thermo_kappa_rad_per_mw",
            "thermo_phi0_rad",
            "arm_t_short",
            "arm_t_long",
            "channel_loss_db",
        ):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        if "visibility_anchors" in kwargs:
            kwargs["visibility_anchors"] = tuple(
                tuple(a) for a in kwargs["visibility_anchors"]
            )
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json_file(cls, path) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")
        return cls.from_dict(data)

    def replace(self, **changes) -> "ExperimentConfig":
        data = self.to_dict()
        data.update(changes)
        # setting one source-strength field clears the other
        if "pair_prob" in changes and "squeezing_s" not in changes:
            data["squeezing_s"] = None
        if "squeezing_s" in changes and "pair_prob" not in changes:
            data["pair_prob"] = None
        return ExperimentConfig.from_dict(data)
