"""SEIR epidemic with dosage-dependent vaccination, integrated with fixed-step RK4.

    dS/dt = -beta S I / N - alpha V
    dE/dt =  beta S I / N - sigma_e E
    dI/dt =  sigma_e E - gamma I
    dR/dt =  gamma I + alpha V

For a fractional dosage ``x`` in (0, 1] the daily vaccinations scale as
``V_full / x`` and the effectiveness as ``alpha_full * max(0, 2x - 1)**2``.
Vaccination stops once nobody is susceptible.  Two auxiliary states are
carried along: cumulative vaccinations and cumulative infections.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .objectives import NoiseModel, Objective, ObjectiveEnsemble

METRICS = ("ever_infected", "final_infectious")
CURVES = ("convex", "concave")


class SeirError(RuntimeError):
    pass


@dataclass(frozen=True)
class SeirParams:
    beta: float = 0.35
    gamma: float = 0.1
    sigma_e: float = 1 / 5.2
    population: float = 1e6
    v_full: float = 4000.0
    alpha_full: float = 0.9
    S0: float | None = None
    E0: float = 100.0
    I0: float = 100.0
    R0: float = 0.0
    horizon_days: float = 180.0
    step_days: float = 0.25
    metric: str = "ever_infected"
    # "convex": alpha_full * max(0, 2x-1)**2 ; "concave": alpha_full * max(0, 1 - 4(1-x)**2)
    effectiveness_curve: str = "convex"

    def __post_init__(self):
        if self.S0 is None:
            object.__setattr__(self, "S0", self.population - self.E0 - self.I0 - self.R0)
        for name in ("beta", "gamma", "sigma_e", "v_full", "E0", "I0", "R0", "S0"):
            if getattr(self, name) < 0:
                raise SeirError(f"{name} must be >= 0")
        if not 0.0 <= self.alpha_full <= 1.0:
            raise SeirError("alpha_full must lie in [0, 1]")
        if self.population <= 0:
            raise SeirError("population must be > 0")
        total = self.S0 + self.E0 + self.I0 + self.R0
        if abs(total - self.population) > 1e-9 * self.population:
            raise SeirError(f"S0+E0+I0+R0 = {total} differs from population {self.population}")
        if self.step_days <= 0 or self.horizon_days <= 0:
            raise SeirError("step_days and horizon_days must be > 0")
        if self.metric not in METRICS:
            raise SeirError(f"metric must be one of {METRICS}")
        if self.effectiveness_curve not in CURVES:
            raise SeirError(f"effectiveness_curve must be one of {CURVES}")


def effectiveness(dosage, params: SeirParams):
    x = np.asarray(dosage, dtype=float)
    if params.effectiveness_curve == "convex":
        shape = np.maximum(0.0, 2.0 * x - 1.0) ** 2
    else:
        shape = np.maximum(0.0, 1.0 - 4.0 * (1.0 - x) ** 2)
    return params.alpha_full * shape


def vaccination_rate(dosage, params: SeirParams):
    """Effective immunizations per day, ``alpha(x) * V_full / x`` (0 where alpha is 0)."""
    x = np.asarray(dosage, dtype=float)
    alpha = effectiveness(x, params)
    safe = np.where(alpha > 0.0, x, 1.0)
    return np.where(alpha > 0.0, alpha * params.v_full / safe, 0.0)


def _deriv(state, p: SeirParams, vac_rate):
    S, E, I, R, V, C = state
    inf = p.beta * S * I / p.population
    vac = np.where(S > 0.0, vac_rate, 0.0)
    return np.array([
        -inf - vac,
        inf - p.sigma_e * E,
        p.sigma_e * E - p.gamma * I,
        p.gamma * I + vac,
        vac,
        inf,
    ])


def _clamp(state):
    # negative compartments are set to zero; the deficit comes out of R so
    # S+E+I+R is unchanged.  A negative S means over-vaccination.
    for idx in (0, 1, 2):
        neg = np.minimum(state[idx], 0.0)
        state[idx] -= neg
        state[3] += neg
        if idx == 0:
            state[4] += neg
    return state


def _integrate(params: SeirParams, dosage, keep: bool):
    x = np.atleast_1d(np.asarray(dosage, dtype=float))
    if np.any((x <= 0.0) | (x > 1.0)) or np.any(np.isnan(x)):
        raise SeirError("dosage must lie in (0, 1]")
    n = x.shape[0]
    vac_rate = vaccination_rate(x, params)
    steps = int(np.ceil(params.horizon_days / params.step_days - 1e-9))
    dt = params.horizon_days / steps
    state = np.zeros((6, n))
    state[0], state[1], state[2], state[3] = params.S0, params.E0, params.I0, params.R0
    out = np.empty((steps + 1, 6, n)) if keep else None
    if keep:
        out[0] = state
    for s in range(steps):
        k1 = _deriv(state, params, vac_rate)
        k2 = _deriv(state + 0.5 * dt * k1, params, vac_rate)
        k3 = _deriv(state + 0.5 * dt * k2, params, vac_rate)
        k4 = _deriv(state + dt * k3, params, vac_rate)
        state = _clamp(state + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))
        if not np.all(np.isfinite(state)):
            raise SeirError(f"non-finite state at step {s + 1}")
        if keep:
            out[s + 1] = state
    return out if keep else state


def seir_trajectory(params: SeirParams, dosage) -> np.ndarray:
    """States at every step, shape ``(steps + 1, 6, n)`` for ``n`` dosages.

    Rows of the middle axis are S, E, I, R, cumulative vaccinated,
    cumulative infected.
    """
    return _integrate(params, dosage, keep=True)


def seir_final_state(params: SeirParams, dosage) -> np.ndarray:
    """State at the horizon, shape ``(6, n)``, without storing the path."""
    return _integrate(params, dosage, keep=False)


def simulate_seir_batch(params: SeirParams, dosage) -> np.ndarray:
    """Infection metric in [0, 1] for each dosage (see ``params.metric``)."""
    final = seir_final_state(params, dosage)
    N = params.population
    if params.metric == "final_infectious":
        frac = final[2] / N
    else:
        frac = 1.0 - final[0] / N - final[4] / N
    return np.clip(frac, 0.0, 1.0)


def simulate_seir(params: SeirParams, dosage: float) -> float:
    return float(simulate_seir_batch(params, [dosage])[0])


def seir_objective(params: SeirParams, name: str = "seir") -> Objective:
    """Reward ``1 - infection metric`` on dosages (0, 1]; the grid lower end is 0.01."""
    return Objective(
        name,
        lambda p: 1.0 - simulate_seir_batch(params, p[:, 0]),
        domain=((0.01, 1.0),),
        params={k: v for k, v in asdict(params).items()},
    )


def region_params(M: int, seed: int, base: SeirParams | None = None) -> list[SeirParams]:
    """Heterogeneous regions: log-normal spread in population and transmission."""
    base = base or SeirParams()
    rng = np.random.default_rng([seed, 11])
    out = []
    for _ in range(M):
        scale = float(np.exp(rng.normal(0.0, 0.5)))
        N = base.population * scale
        out.append(replace(
            base,
            population=N,
            beta=base.beta * float(np.exp(rng.normal(0.0, 0.15))),
            v_full=base.v_full * scale,
            E0=base.E0 * scale,
            I0=base.I0 * scale,
            R0=base.R0 * scale,
            S0=None,
        ))
    return out


def make_seir_ensemble(M: int, seed: int = 0, base: SeirParams | None = None,
                       noise: NoiseModel | None = None) -> ObjectiveEnsemble:
    """Client m optimizes region m; the global objective is the regional average."""
    regions = region_params(M, seed, base)
    locals_ = [seir_objective(p, name=f"seir[{m + 1}]") for m, p in enumerate(regions)]

    def global_func(p):
        return np.mean([loc.evaluate(p) for loc in locals_], axis=0)

    glob = Objective("seir", global_func, domain=locals_[0].domain,
                     params={"M": M, "seed": seed})
    return ObjectiveEnsemble(locals_, glob, noise or NoiseModel(),
                             info={"base": glob.descriptor})
