"""Energy, area and latency estimation from a per-module component database.

Units: area µm², energy pJ, time ns.  Power follows as pJ/ns = mW and
throughput as ops/ns·1e-3 = TOPS.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

from . import datadir
from .errors import MissingComponent

G_OFF = 5.0  # µS
G_ON_AVG = 27.0  # µS, fitted so the 72x128 KWS array reproduces its published MAC energy


@dataclass(frozen=True)
class Component:
    architecture: str
    layer: str
    module: str
    count: int
    on_time_ns: float | None
    area_um2: float
    energy_pJ: float
    delay_ns: float | None


class ComponentDb:
    """Component records keyed by (architecture, layer, module)."""

    def __init__(self, components=()):
        self.entries: dict[tuple[str, str, str], Component] = {}
        for c in components:
            if c.count < 0 or c.area_um2 < 0 or c.energy_pJ < 0:
                raise ValueError(f"negative count or total in {c.module!r}")
            self.entries[(c.architecture, c.layer, c.module)] = c

    def __len__(self):
        return len(self.entries)

    def architectures(self) -> list[str]:
        return sorted({k[0] for k in self.entries})

    def for_architecture(self, arch: str) -> list[Component]:
        return [c for k, c in self.entries.items() if k[0] == arch]

    @classmethod
    def from_csv(cls, path=None) -> "ComponentDb":
        path = Path(path) if path is not None else datadir.path("components.csv")
        opt = lambda s: float(s) if s.strip() else None
        with open(path, newline="") as fh:
            rows = [r for r in csv.DictReader(fh) if r["architecture"] and not r["architecture"].startswith("#")]
        return cls(Component(r["architecture"], r["layer"], r["module"], int(r["count"] or 0),
                             opt(r["on_time_ns"]), float(r["area_um2"]), float(r["energy_pJ"] or 0),
                             opt(r["delay_ns"])) for r in rows)


@dataclass(frozen=True)
class CostReport:
    architecture: str
    total_area_um2: float
    total_energy_pJ: float
    latency_ns: float
    ops_count: float
    power_mW: float
    throughput_TOPS: float
    energy_eff_TOPS_per_W: float
    area_eff_TOPS_per_mm2: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def to_csv_text(self) -> str:
        d = self.to_dict()
        keys = list(d)
        vals = [d[k] if isinstance(d[k], str) else f"{d[k]:.10g}" for k in keys]
        return ",".join(keys) + "\n" + ",".join(vals) + "\n"


# ---------------------------------------------------------------------------
# formulas


def mac_energy(n_row: int, n_col: int, g_on_avg: float = G_ON_AVG, g_off: float = G_OFF,
               v_read: float = 0.2, t_on_avg: float = 16.0) -> float:
    """E = N_row N_col (G_on + G_off) V_read^2 T_on, in pJ (µS·V²·ns = 1e-3 pJ)."""
    return n_row * n_col * (g_on_avg + g_off) * v_read ** 2 * t_on_avg * 1e-3


def latency_mac(b_in: int, b_out: int, t_clk_ns: float = 1.0) -> float:
    """Input PWM window plus output ramp: (2^b_in + 2^b_out - 1) T_clk."""
    return (2 ** b_in + 2 ** b_out - 1) * t_clk_ns


def latency_nl(n_h: int, n_cyc: int, k: int, t_clk_ns: float = 1.0) -> float:
    """Digital activation latency for four gates per neuron shared by k processors."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return 4 * n_h * n_cyc / k * t_clk_ns


def pipeline_latency_elementwise(n_tanh: float, t_clk_ns: float = 1.0) -> float:
    """Four-stage elementwise pipeline: (2 N_tanh + 3) T_clk."""
    if n_tanh < 0:
        raise ValueError("n_tanh must be >= 0")
    return (2 * n_tanh + 3) * t_clk_ns


def stage_latency(stage: dict, bits: int, t_clk_ns: float = 1.0) -> float:
    kind = stage["kind"]
    t = stage.get("t_clk_ns", t_clk_ns)
    if kind == "mac_adc":
        # phases of input PWM, one ramp conversion, fixed circuit delay
        b_in = stage.get("b_in", bits)
        b_out = stage.get("b_out", bits)
        return stage.get("phases", 1) * 2 ** b_in * t + 2 ** b_out * t + stage.get("delay_ns", 0.0)
    if kind == "nl_processor":
        return latency_nl(stage["n_h"], stage["n_cyc"], stage["k"], t)
    if kind == "pipeline":
        return pipeline_latency_elementwise(stage["n_tanh"], t)
    if kind == "fixed":
        return float(stage["ns"])
    raise ValueError(f"unknown latency stage kind {kind!r}")


def ops_count(scenario: dict) -> float:
    """Explicit ops_count, or two ops (multiply and add) per mapped weight."""
    if "ops_count" in scenario:
        return float(scenario["ops_count"])
    return float(sum(2 * r * c for r, c in scenario["weights"]))


def estimate(db: ComponentDb, scenario: dict) -> CostReport:
    """Sum the architecture's modules and derive efficiency metrics."""
    arch = scenario["architecture"]
    comps = db.for_architecture(arch)
    if not comps:
        raise MissingComponent(f"no components for architecture {arch!r}")
    names = {c.module for c in comps}
    for m in scenario.get("required_modules", []):
        if m not in names:
            raise MissingComponent(f"architecture {arch!r} lacks module {m!r}")
    area = math.fsum(c.area_um2 for c in comps)
    energy = math.fsum(c.energy_pJ for c in comps)
    bits = int(scenario.get("bits", 5))
    latency = math.fsum(stage_latency(s, bits) for s in scenario["latency_schedule"])
    if latency <= 0:
        raise ValueError("latency schedule sums to zero")
    ops = ops_count(scenario)
    power = energy / latency
    tops = ops / latency * 1e-3
    return CostReport(arch, area, energy, latency, ops, power, tops,
                      tops / (power * 1e-3), tops / (area * 1e-6))


def load_scenario(name_or_path) -> dict:
    """A bundled scenario by name, or a JSON file path."""
    p = Path(name_or_path)
    if not p.suffix:
        p = datadir.path("scenarios") / f"{name_or_path}.json"
    if not p.exists():
        raise MissingComponent(f"scenario {name_or_path!r} not found")
    return json.loads(p.read_text())


def bundled_scenarios() -> list[str]:
    return sorted(p.stem for p in (datadir.path("scenarios")).glob("*.json"))
