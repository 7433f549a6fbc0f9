"""Iteration driver: scenarios, schedules, and the outer loop.

A Scenario supplies the starting triple: a density plateau switched on by a
smooth ramp chi(t), zero velocity, and the defect field that the continuity
equation then demands, R0 = -chi'(t) grad invlap rho_bar (closed form, so
the starting triple solves the defect equation to stencil accuracy and the
defect vanishes identically outside supp chi').

An IterationSchedule fixes the per-stage targets: delta_q (geometric by
default), the integrability exponents p_q climbing towards d - 1, and the
amplitude split eta_q = sigma / sqrt(delta_{q-1}) with sigma calibrated so
that the accumulated density (rho-close mode) or velocity (u-close mode)
change stays below the requested epsilon.

run_iterations chains perturb_step over the stages, records per-term norm
rows, and checks that snapshots outside the defect support pass through
bit-for-bit.  sweep() runs the single-step defect assembly across a ladder
axis and fits log-log slopes of the term norms.
"""

from dataclasses import dataclass, field

import numpy as np

from .grid import Grid, ScalarField, VectorField, TimeField
from . import spectral
from .fitting import loglog_fit
from .mikado import build_mikado, measure_constants
from .scheme import (
    SchemeParams, time_partition, defect_cutoff, perturb_step,
    build_perturbation, build_defect, _solve_flows, _velocity_of,
    DefectTriple, ParameterError, TERM_ORDER,
)

__all__ = [
    "Scenario",
    "IterationSchedule",
    "make_scenario",
    "run_iterations",
    "sweep",
]


def _ramp_pair(s):
    """(chi, chi') for a C^7 polynomial 0 -> 1 ramp on [0, 1], scalars.

    The regularized incomplete beta function I(8, 8; s): vanishing to 7th
    order at both ends, with enough interior smoothness that time-stencil
    errors sit in the asymptotic Delta-t^2 regime at moderate n_t (the
    classic exp(-1/s) ramp has effectively unbounded high derivatives near
    the endpoints and stalls second-order refinement studies).
    """
    if s <= 0.0:
        return 0.0, 0.0
    if s >= 1.0:
        return 1.0, 0.0
    # I(8, 8; s) and its derivative s^7 (1-s)^7 / B(8, 8), B(8, 8) = 1/51480
    chip = 51480.0 * (s * (1.0 - s)) ** 7
    coeffs = [51480.0 / (8 + j) * ((-1) ** j) * _BINOM7[j] for j in range(8)]
    chi = s ** 8 * sum(c * s ** j for j, c in enumerate(coeffs))
    return float(chi), float(chip)


_BINOM7 = [1.0, 7.0, 21.0, 35.0, 35.0, 21.0, 7.0, 1.0]


def chi(t, t0=0.25, t1=0.75):
    """Smooth switch: 0 for t <= t0, 1 for t >= t1 (exactly)."""
    return _ramp_pair((t - t0) / (t1 - t0))[0]


def chi_prime(t, t0=0.25, t1=0.75):
    """Analytic derivative of chi (no finite differences)."""
    return _ramp_pair((t - t0) / (t1 - t0))[1] / (t1 - t0)


@dataclass
class Scenario:
    """Starting triple plus bookkeeping for exactness checks.

    e_mask[k] is True at snapshots where the defect vanishes identically;
    the iteration must leave those snapshots bit-for-bit unchanged.
    """

    grid: Grid
    rho0: TimeField
    u0: TimeField
    R0: TimeField
    e_mask: np.ndarray
    rho_bar: ScalarField
    # optional analytic velocity provider matching u0 (skips the sampled
    # interpolation when the flow maps are integrated)
    velocity: object = None

    @property
    def n_t(self):
        return self.rho0.n_t


def _default_rho_bar(grid, amplitude, modes=None):
    """Smooth zero-mean profile from a few low modes."""
    if modes is None:
        modes = [
            {"k": [1, 0, 0] + [0] * (grid.d - 3), "amp": 1.0, "phase": 0.0},
            {"k": [0, 1, 1] + [0] * (grid.d - 3), "amp": 0.5, "phase": 0.7},
            {"k": [1, 1, 0] + [0] * (grid.d - 3), "amp": 0.25, "phase": 1.9},
        ]
    data = np.zeros(grid.shape)
    mesh = grid.meshgrid()
    for m in modes:
        phase = 2.0 * np.pi * sum(int(ki) * xi for ki, xi in zip(m["k"], mesh))
        data = data + m["amp"] * np.cos(phase + m.get("phase", 0.0))
    return ScalarField(grid, amplitude * data)


def make_scenario(grid, n_t, amplitude=1.0, modes=None, rho_bar=None,
                  t0=0.25, t1=0.75):
    """Ramp-on scenario: rho0 = chi(t) rho_bar, u0 = 0,
    R0 = -chi'(t) grad invlap rho_bar.

    The potential is computed once; R0(t) is a scalar multiple of it, so
    outside [t0, t1] the defect is exactly the zero array.
    """
    if rho_bar is None:
        rho_bar = _default_rho_bar(grid, amplitude, modes)
    if abs(rho_bar.mean()) > 1e-12 * max(1.0, float(np.abs(rho_bar.data).max())):
        raise ParameterError("rho_bar must have zero mean")
    pot = spectral.grad_inv_laplacian(rho_bar)

    rho0 = TimeField.zeros(grid, "scalar", n_t)
    u0 = TimeField.zeros(grid, "vector", n_t)
    R0 = TimeField.zeros(grid, "vector", n_t)
    e_mask = np.zeros(n_t + 1, dtype=bool)
    for k in range(n_t + 1):
        t_k = k / n_t
        c = chi(t_k, t0, t1)
        cp = chi_prime(t_k, t0, t1)
        if c != 0.0:
            rho0.data[k] = c * rho_bar.data
        if cp != 0.0:
            R0.data[k] = -cp * pot.data
        else:
            e_mask[k] = True
    return Scenario(grid, rho0, u0, R0, e_mask, rho_bar)


@dataclass
class IterationSchedule:
    """Per-stage targets of the outer iteration.

    delta_q = delta_scale * ratio^q for q = 0..Q-1, with delta_{-1} set from
    the scenario (max_t ||R0||_L1).  p_q = (d-1)(1 - 2^{-q-1}).  eta_q =
    sigma * delta_{q-1}^{-1/2} in rho-close mode (accumulated density change
    <= epsilon) or sigma * delta_{q-1}^{+1/2}-style split in u-close mode
    (accumulated velocity change <= epsilon).
    """

    Q: int = 2
    mode: str = "rho-close"
    epsilon: float = 0.1
    ratio: float = 0.25
    delta_scale: float = 1.0
    deltas: list = None  # explicit override, length Q

    def __post_init__(self):
        if self.mode not in ("rho-close", "u-close"):
            raise ParameterError(f"unknown mode {self.mode!r}")
        if self.Q < 1:
            raise ParameterError("need Q >= 1")

    def delta(self, q):
        if self.deltas is not None:
            return float(self.deltas[q])
        return self.delta_scale * self.ratio ** q

    def p(self, q, d):
        return (d - 1) * (1.0 - 2.0 ** (-q - 1))

    def resolve(self, M, delta_m1):
        """Stage list [{q, delta, p?, eta}] after calibrating sigma."""
        ladder = [delta_m1] + [self.delta(q) for q in range(self.Q)]
        roots = [np.sqrt(ladder[q]) for q in range(self.Q)]  # sqrt(delta_{q-1})
        if self.mode == "rho-close":
            # sum_q M eta_q delta_{q-1} <= epsilon with eta_q = sigma/sqrt(delta_{q-1})
            sigma = self.epsilon / (M * sum(roots))
        else:
            # sum_q M / eta_q <= epsilon with the same eta_q form
            sigma = M * sum(roots) / self.epsilon
        etas = [sigma / r for r in roots]
        return [
            {"q": q, "delta": ladder[q + 1], "eta": etas[q]}
            for q in range(self.Q)
        ]


def _measure_M(grid, enforce_mu=True):
    """Mikado constant from a standard two-value concentration sweep."""
    d = grid.d
    mus = [mu for mu in (8, 16) if grid.n >= 4 * mu]
    if len(mus) < 2 and not enforce_mu:
        mus = [mu for mu in (4, 8) if grid.n >= 4 * mu]
    if len(mus) < 2:
        raise ParameterError(f"grid n={grid.n} too coarse to measure the constants")
    pairs = [build_mikado(j, mu, grid, enforce_mu=enforce_mu)
             for mu in mus for j in range(1, d + 1)]
    return measure_constants(pairs)


def run_iterations(scenario, schedule, margin=1.0, substeps=4, outdir=None,
                   enforce_mu=True):
    """Chain perturb_step over the schedule stages.

    Returns {"stages": [per-stage reports], "rows": CSV-ready rows
    (q, t, term, norm, value), "status": COMPLETE/PARTIAL, "triples":
    [DefectTriple per stage, index 0 = starting triple], "M": float,
    "exact_outside": bool}.  Stage reports inherit the PARTIAL semantics of
    perturb_step; the run status is PARTIAL when any stage is.
    """
    grid = scenario.grid
    d = grid.d
    n_t = scenario.n_t
    consts = _measure_M(grid, enforce_mu)
    M = consts["M"]
    delta_m1 = max(
        spectral.lp_norm(scenario.R0.snapshot(k), 1) for k in range(n_t + 1)
    )
    if delta_m1 == 0.0:
        raise ParameterError("scenario defect vanishes identically")
    stages = schedule.resolve(M, delta_m1)

    triple = DefectTriple(scenario.rho0, scenario.u0, scenario.R0)
    triple.measure_residual()
    triples = [triple]
    reports = []
    rows = []
    status = "COMPLETE"
    exact_outside = True

    for st in stages:
        q = st["q"]
        p_q = schedule.p(q, d)
        nxt, rep = perturb_step(
            triple.rho, triple.u, triple.R,
            p=p_q, eta=st["eta"], delta=st["delta"],
            margin=margin, substeps=substeps, enforce_mu=enforce_mu,
        )
        rep["q"] = q
        rep["p"] = p_q
        reports.append(rep)
        if rep["status"] != "COMPLETE":
            status = "PARTIAL"
        for term, per_t in rep["term_norms"].items():
            for k, val in enumerate(per_t):
                rows.append((q, k / n_t, term, "L1", float(val)))
        for k in range(n_t + 1):
            rows.append((
                q, k / n_t, "R1", "L1",
                spectral.lp_norm(nxt.R.snapshot(k), 1),
            ))
        # snapshots outside the defect support must be untouched bit-for-bit
        for k in np.nonzero(scenario.e_mask)[0]:
            same = (
                np.array_equal(nxt.rho.data[k], triple.rho.data[k])
                and np.array_equal(nxt.u.data[k], triple.u.data[k])
            )
            exact_outside = exact_outside and same
        triple = nxt
        triples.append(triple)

    if outdir is not None:
        from . import snapshot_io
        snapshot_io.save_run(outdir, triples, reports, rows)

    return {
        "stages": reports,
        "rows": rows,
        "status": status,
        "triples": triples,
        "M": M,
        "delta_m1": delta_m1,
        "exact_outside": exact_outside,
    }


_SWEEP_AXES = ("lambda", "lambda2", "mu", "tau")


def sweep(scenario, axis, values, eta=1.0, delta=None, tau=0.25,
          base_mu=8.0, enforce_mu=True):
    """Single-step defect assembly across a ladder axis, with slope fits.

    axis "lambda": (lam1, lam2) = (v, 2v) at fixed mu = base_mu;
    axis "lambda2": lam2 = v at lam1 = 2, mu = base_mu;
    axis "mu": mu1 = mu2 = v at (lam1, lam2) = (2, 4);
    axis "tau": partition length tau = v at the base ladder.

    Returns {"axis", "values", "terms": {name: [max-t L1 norm per value]},
    "terms_t": {name: (nvals, n_t + 1) array of per-snapshot L1 norms},
    "slopes": {name: {slope, intercept, halfwidth}}}.  Slope fits on the
    max-t norms mix the two interval parities; for parity-resolved rates,
    fit terms_t at a snapshot interior to one interval.
    """
    if axis not in _SWEEP_AXES:
        raise ParameterError(f"axis must be one of {_SWEEP_AXES}")
    grid = scenario.grid
    d = grid.d
    n_t = scenario.n_t
    R0 = scenario.R0
    if delta is None:
        # keep psi = 1 wherever the defect is nonzero
        nz = [spectral.lp_norm(R0.snapshot(k), 1) for k in range(n_t + 1)]
        delta = 1e-3 * min(v for v in nz if v > 0)

    terms = {name: [] for name in TERM_ORDER}
    terms_t = {name: [] for name in TERM_ORDER}
    for v in values:
        tau_v = float(v) if axis == "tau" else tau
        if axis == "lambda":
            lam1, lam2, mu1, mu2 = int(v), 2 * int(v), base_mu, base_mu
        elif axis == "lambda2":
            lam1, lam2, mu1, mu2 = 2, int(v), base_mu, base_mu
        elif axis == "mu":
            lam1, lam2, mu1, mu2 = 2, 4, float(v), float(v)
        else:
            lam1, lam2, mu1, mu2 = 2, 4, base_mu, base_mu
        params = SchemeParams(
            p=1.0, eta=eta, delta=delta, tau=tau_v,
            lam1=lam1, mu1=mu1, lam2=lam2, mu2=mu2,
        )
        cutoffs = time_partition(tau_v)
        defect_cutoff(R0, delta, cutoffs)
        vel = (scenario.velocity if scenario.velocity is not None
               else _velocity_of(scenario.u0, grid))
        flows = _solve_flows(vel, grid, n_t, cutoffs)
        pairs = {
            par: [
                build_mikado(j, params.pair_params(par)[1], grid,
                             enforce_mu=enforce_mu)
                for j in range(1, d + 1)
            ]
            for par in (0, 1)
        }
        bundle = build_perturbation(R0, cutoffs, flows, pairs, params)
        out = build_defect(
            scenario.rho0, scenario.u0, R0, bundle, cutoffs, flows, pairs, params
        )
        for name in TERM_ORDER:
            terms[name].append(float(out["terms"][name].max()))
            terms_t[name].append(np.asarray(out["terms"][name], dtype=float))
        # release this rung's fields before assembling the next one; at large
        # n two rungs' worth of snapshots do not fit in memory together
        del flows, pairs, bundle, out

    slopes = {}
    xs = np.asarray(values, dtype=float)
    for name, ys in terms.items():
        ys = np.asarray(ys)
        if np.all(ys > 0):
            s, b, hw = loglog_fit(xs, ys)
            slopes[name] = {"slope": s, "intercept": b, "halfwidth": hw}
    return {"axis": axis, "values": list(map(float, values)),
            "terms": terms, "terms_t": {k: np.stack(v) for k, v in terms_t.items()},
            "slopes": slopes}
