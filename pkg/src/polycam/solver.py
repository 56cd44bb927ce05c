"""Order-escalating solver for the collision-probability polynomial program.

The program minimizes the control energy subject to the truncated
polynomial constraint "collision probability equals its target". Order one
has a closed-form greedy solution along the probability gradient. Each
higher order linearizes its constraint about the previous order's solution
through a pseudo-gradient (the gradient plus single-free-index contractions
of the higher-degree terms) and iterates that greedy step to a fixed point.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .conjunction import ConjunctionEvent
from .dapoly import contract_no_first_mode
from .dynamics import PropagationConfig
from .errors import (ConfigurationError, DegenerateGradientError,
                     InfeasibleWithBoundError, NonConvergenceError)
from .mapbuilder import (ControlSchedule, IMPULSIVE, PocMap, build_poc_map,
                         gradient_norm_per_node)

__all__ = [
    "SolverConfig", "ManeuverSolution", "ProbabilityGap",
    "solve_order1", "pseudo_gradient", "solve_order_j", "solve_recursive",
    "filter_nodes", "solve_thrust_limited", "solve_fixed_direction",
]

_GRADIENT_FLOOR = 1e-30


@dataclass(frozen=True)
class SolverConfig:
    """Targets and iteration limits for the recursive solve."""

    max_order: int = 5
    e_tol: float = 1e-10
    max_iterations: int = 200
    target_poc: float = 1e-6

    def __post_init__(self):
        if self.max_order < 1:
            raise ConfigurationError("max_order must be >= 1")
        if self.e_tol <= 0:
            raise ConfigurationError("e_tol must be positive")
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be >= 1")
        if not 0.0 < self.target_poc < 1.0:
            raise ConfigurationError("target PoC must lie in (0, 1)")


@dataclass(frozen=True)
class ProbabilityGap:
    """Signed gap between the target probability and the ballistic one."""

    rho: float

    @classmethod
    def of(cls, pmap: PocMap, target_poc: float) -> "ProbabilityGap":
        return cls(rho=float(target_poc) - pmap.ballistic_poc)


@dataclass(frozen=True)
class ManeuverSolution:
    """Solved control history in physical units plus solve diagnostics.

    ``phi`` stacks the per-control physical values (m/s for impulses,
    m/s^2 for held accelerations); ``per_node_dv_ms`` reports the
    equivalent velocity increment vector of each control in the local
    frame. ``residual`` is the map-constraint mismatch at the solution.
    ``per_order_converged`` marks the escalation orders whose iteration
    reached a fixed point (intermediate orders whose truncated constraint
    has no solution hand their best iterate to the next order instead).
    """

    phi: np.ndarray
    per_order_iterations: tuple[int, ...]
    residual: float
    dv_total_ms: float
    per_node_dv_ms: tuple
    node_epochs: tuple[float, ...]
    mode: str
    wall_time_s: float
    validated_poc: float | None = None
    per_order_converged: tuple[bool, ...] = ()

    def with_validated(self, poc: float) -> "ManeuverSolution":
        return replace(self, validated_poc=poc)


def solve_order1(pmap: PocMap, rho: float) -> np.ndarray:
    """Greedy first-order control: the shortest vector meeting the
    linearized constraint, aligned with the probability gradient."""
    grad = pmap.gradient()
    if rho == 0.0:
        return np.zeros(pmap.n_vars)
    norm = float(np.linalg.norm(grad))
    if norm < _GRADIENT_FLOOR:
        raise DegenerateGradientError(
            "probability gradient vanishes; control has no first-order authority")
    return (rho / norm) * (grad / norm)


def pseudo_gradient(pmap: PocMap, j: int, phi_tilde: np.ndarray) -> np.ndarray:
    """Gradient of the order-j constraint linearized at ``phi_tilde``.

    Row vector: the degree-1 coefficients plus, for every degree k in
    [2, j], the degree-k homogeneous part contracted with k-1 copies of
    the linearization point.
    """
    if not 1 <= j <= pmap.order:
        raise ConfigurationError(f"order {j} outside [1, {pmap.order}]")
    phi_tilde = np.asarray(phi_tilde, dtype=np.float64)
    g = pmap.gradient()
    for k in range(2, j + 1):
        g = g + contract_no_first_mode(pmap.poly, k, phi_tilde)
    return g


def _quadratic_matrix(pmap: PocMap) -> np.ndarray:
    """Symmetric matrix S with x^T S x equal to the degree-2 part."""
    m = pmap.n_vars
    s = np.zeros((m, m))
    for exps, c in pmap.poly.homogeneous(2).coeffs.items():
        idx = [k for k, e in enumerate(exps) for _ in range(e)]
        a, b = idx[0], idx[1]
        if a == b:
            s[a, a] = c
        else:
            s[a, b] = s[b, a] = c / 2.0
    return s


class _PseudoGradientModel:
    """Order-j pseudo-gradient with a continuation weight on the top term.

    weight 1 yields the true order-j model; weights in (0, 1) shrink only
    the degree-j contribution, which lets a fixed point of the order-(j-1)
    model be tracked continuously into the order-j one.
    """

    def __init__(self, pmap: PocMap, j: int, rho: float, weight: float = 1.0):
        self.pmap = pmap
        self.j = j
        self.rho = rho
        self.weight = weight
        self.evals = 0

    def gradient(self, point: np.ndarray) -> np.ndarray:
        self.evals += 1
        g = self.pmap.gradient()
        for k in range(2, self.j + 1):
            term = contract_no_first_mode(self.pmap.poly, k, point)
            g = g + (self.weight * term if k == self.j else term)
        return g

    def greedy(self, point: np.ndarray) -> np.ndarray:
        g = self.gradient(point)
        norm = float(np.linalg.norm(g))
        if norm < _GRADIENT_FLOOR:
            raise DegenerateGradientError(
                f"pseudo-gradient vanished at order {self.j}")
        return (self.rho / norm) * (g / norm)

    def fixed_point_residual(self, point: np.ndarray) -> np.ndarray:
        g = self.gradient(point)
        norm = float(np.linalg.norm(g))
        if norm < _GRADIENT_FLOOR:
            return np.full_like(point, 1e6)
        return (self.rho / norm) * (g / norm) - point


def _damped_picard(model: _PseudoGradientModel, start: np.ndarray,
                   budget: int, e_tol: float):
    """Substitution with step halving when the displacement grows.

    Returns (converged, point). A stall counter aborts runs orbiting a
    displacement plateau.
    """
    phi_tilde = np.asarray(start, dtype=np.float64)
    raw = model.greedy(phi_tilde)
    stalls = 0
    for _ in range(budget):
        step = raw - phi_tilde
        displacement = float(np.linalg.norm(step))
        if displacement <= e_tol:
            return True, raw
        factor = 1.0
        best = None
        while factor >= 1.0 / 64.0:
            candidate = phi_tilde + factor * step
            cand_raw = model.greedy(candidate)
            cand_disp = float(np.linalg.norm(cand_raw - candidate))
            if best is None or cand_disp < best[0]:
                best = (cand_disp, candidate, cand_raw)
            if cand_disp < displacement:
                break
            factor /= 2.0
        stalls = stalls + 1 if best[0] >= displacement else 0
        _, phi_tilde, raw = best
        if stalls >= 10:
            break
    return False, phi_tilde


def _polished_root(model: _PseudoGradientModel, start: np.ndarray,
                   e_tol: float) -> np.ndarray | None:
    """Dogleg root find on the fixed-point residual; verified result."""
    from scipy import optimize

    result = optimize.root(model.fixed_point_residual, start, method="hybr",
                           options={"xtol": e_tol * 1e-3})
    x = np.asarray(result.x, dtype=np.float64)
    if float(np.linalg.norm(model.fixed_point_residual(x))) <= e_tol:
        return model.greedy(x)
    return None


def _secular_order2_roots(pmap: PocMap, rho: float) -> list[np.ndarray]:
    """All order-2 fixed points via the linear-parallelism family.

    An order-2 fixed point satisfies phi parallel to grad + S*phi, giving
    phi(a) = a (I - a S)^-1 grad with the scalar equation T2(phi(a)) = rho;
    roots are swept per branch between the poles 1/eig(S). Returned sorted
    by control magnitude.
    """
    grad = pmap.gradient()
    if float(np.linalg.norm(grad)) < _GRADIENT_FLOOR:
        return []
    s = _quadratic_matrix(pmap)
    m = pmap.n_vars
    h1 = pmap.poly.homogeneous(1)
    h2 = pmap.poly.homogeneous(2)

    def phi_of(alpha: float) -> np.ndarray:
        return alpha * np.linalg.solve(np.eye(m) - alpha * s, grad)

    def value(alpha: float) -> float:
        x = phi_of(alpha)
        return h1.eval(x) + h2.eval(x) - rho

    eigvals = np.linalg.eigvalsh(s)
    poles = sorted(1.0 / v for v in eigvals if v != 0.0)
    span = 10.0 / max(abs(v) for v in np.append(eigvals, 1e-12))
    breakpoints = sorted(set(
        [-span * 1e4, span * 1e4] + [p for p in poles if abs(p) < span * 1e4]
        + [0.0]))
    roots: list[np.ndarray] = []
    from scipy.optimize import brentq
    for lo, hi in zip(breakpoints, breakpoints[1:]):
        pad = 1e-9 * max(abs(lo), abs(hi), 1.0)
        grid = np.linspace(lo + pad, hi - pad, 48)
        vals = []
        for a in grid:
            try:
                vals.append(value(a))
            except np.linalg.LinAlgError:
                vals.append(np.nan)
        for a0, a1, v0, v1 in zip(grid, grid[1:], vals, vals[1:]):
            if np.isfinite(v0) and np.isfinite(v1) and v0 * v1 < 0.0:
                try:
                    alpha = brentq(value, a0, a1, xtol=1e-14, maxiter=200)
                except (ValueError, np.linalg.LinAlgError):
                    continue
                roots.append(phi_of(alpha))
    roots.sort(key=lambda x: float(np.linalg.norm(x)))
    return roots


def _ray_seeds(pmap: PocMap, j: int, rho: float) -> list[np.ndarray]:
    """Iteration restarts: smallest-magnitude roots of the truncated
    constraint along the gradient and the quadratic eigendirections."""
    m = pmap.n_vars
    directions: list[np.ndarray] = []
    grad = pmap.gradient()
    gn = float(np.linalg.norm(grad))
    if gn > _GRADIENT_FLOOR:
        directions.append(grad / gn * (1.0 if rho > 0 else -1.0))
    if j >= 2:
        try:
            _, vecs = np.linalg.eigh(_quadratic_matrix(pmap))
        except np.linalg.LinAlgError:
            vecs = np.zeros((m, 0))
        for col in range(vecs.shape[1]):
            directions.append(vecs[:, col])
            directions.append(-vecs[:, col])
    homo = [pmap.poly.homogeneous(k) for k in range(1, j + 1)]
    seeds: list[tuple[float, np.ndarray]] = []
    for u in directions:
        coeffs = [h.eval(u) for h in homo][::-1] + [-rho]
        roots = np.roots(coeffs)
        real = [float(r.real) for r in roots
                if abs(r.imag) <= 1e-10 * max(1.0, abs(r.real)) and r.real > 0.0]
        if real:
            s = min(real)
            seeds.append((s, s * u))
    seeds.sort(key=lambda item: item[0])
    return [point for _, point in seeds]


def _solve_order_impl(pmap: PocMap, j: int, phi_init: np.ndarray,
                      config: SolverConfig):
    """(point, pseudo-gradient evaluations, converged).

    When no fixed point is reachable the returned point is the candidate
    with the smallest fixed-point residual encountered.
    """
    rho = ProbabilityGap.of(pmap, config.target_poc).rho
    model = _PseudoGradientModel(pmap, j, rho)
    phi_init = np.asarray(phi_init, dtype=np.float64)

    def residual_norm(x: np.ndarray) -> float:
        return float(np.linalg.norm(model.fixed_point_residual(x)))

    converged, point = _damped_picard(model, phi_init, config.max_iterations,
                                      config.e_tol)
    if converged:
        return point, model.evals, True
    best = (residual_norm(point), point)

    solution = _polished_root(model, point, config.e_tol)
    if solution is not None:
        return solution, model.evals, True

    candidates: list[np.ndarray] = []
    if j == 2:
        candidates.extend(_secular_order2_roots(pmap, rho))
    else:
        # track the seed's fixed point while the degree-j term fades in
        current = phi_init
        tracked = True
        for weight in (0.25, 0.5, 0.75, 1.0):
            partial = _PseudoGradientModel(pmap, j, rho, weight=weight)
            ok, current = _damped_picard(partial, current, 40, config.e_tol)
            model.evals += partial.evals
            if not ok:
                refined = _polished_root(partial, current, config.e_tol)
                if refined is None:
                    tracked = False
                    break
                current = refined
        if tracked:
            candidates.append(current)
    candidates.extend(_ray_seeds(pmap, j, rho))

    for start in candidates:
        ok, point = _damped_picard(model, start,
                                   max(config.max_iterations // 4, 20),
                                   config.e_tol)
        if ok:
            return point, model.evals, True
        best = min(best, (residual_norm(point), point), key=lambda t: t[0])
        solution = _polished_root(model, point, config.e_tol)
        if solution is not None:
            return solution, model.evals, True
    return best[1], model.evals, False


def solve_order_j(pmap: PocMap, j: int, phi_init: np.ndarray,
                  config: SolverConfig) -> tuple[np.ndarray, int]:
    """Fixed point of the order-j greedy linearization map.

    The primary path is the iteration itself: linearize the constraint at
    the current point through the pseudo-gradient, take the greedy
    minimum-norm step, declare convergence when successive points differ
    by at most ``e_tol``, damping the step whenever the displacement
    grows. When substitution orbits without converging, the same fixed
    point is hunted directly: a dogleg root find on the fixed-point
    residual, the exact secular family at order 2, continuation from the
    seed's model order, and restarts from constraint roots along principal
    rays. Whatever path succeeds, the returned point satisfies the
    iteration's own convergence test; otherwise raises with the best
    iterate attached.
    """
    point, evals, converged = _solve_order_impl(pmap, j, phi_init, config)
    if not converged:
        raise NonConvergenceError(
            f"order-{j} iteration found no fixed point after {evals} "
            f"pseudo-gradient evaluations",
            last_iterate=point, order=j, iterations=evals)
    return point, evals


def _package_solution(pmap: PocMap, phi_scaled: np.ndarray,
                      iterations: tuple[int, ...], target_poc: float,
                      started: float,
                      converged: tuple[bool, ...] = ()) -> ManeuverSolution:
    schedule = pmap.schedule
    phi_physical = phi_scaled * pmap.scaling
    residual = abs(pmap.poly.eval(phi_scaled) - target_poc)

    if schedule.is_fixed_direction:
        vectors = [phi_physical[i] * schedule.fixed_directions[i]
                   for i in range(schedule.n_controls)]
    else:
        vectors = list(phi_physical.reshape(schedule.n_controls, 3))

    control_nodes = schedule.control_node_indices()
    if schedule.mode == IMPULSIVE:
        dv_vectors = vectors
    else:
        # held acceleration (m/s^2) times segment duration gives the
        # equivalent velocity increment
        epochs = schedule.node_epochs
        dv_vectors = [v * (epochs[i + 1] - epochs[i])
                      for v, i in zip(vectors, control_nodes)]
    dv_total = float(sum(np.linalg.norm(v) for v in dv_vectors))
    return ManeuverSolution(
        phi=phi_physical,
        per_order_iterations=tuple(iterations),
        residual=residual,
        dv_total_ms=dv_total,
        per_node_dv_ms=tuple(np.asarray(v) for v in dv_vectors),
        node_epochs=tuple(schedule.node_epochs[i] for i in control_nodes),
        mode=schedule.mode,
        wall_time_s=time.perf_counter() - started,
        per_order_converged=converged or (True,) * len(iterations),
    )


def solve_recursive(pmap: PocMap, config: SolverConfig) -> ManeuverSolution:
    """Escalate the constraint order from 1 to n, reseeding each order with
    the previous order's fixed point.

    A ballistic probability already at or below the target yields the zero
    maneuver (probability is never raised toward the target). An
    intermediate order whose truncated constraint admits no fixed point
    (possible when the truncation cannot reach the gap, notably even
    truncations of a decaying tail) passes its best iterate to the next
    order; only the final order is required to converge.
    """
    started = time.perf_counter()
    n = min(config.max_order, pmap.order)
    if config.max_order > pmap.order:
        raise ConfigurationError(
            f"solver order {config.max_order} exceeds map order {pmap.order}")
    rho = ProbabilityGap.of(pmap, config.target_poc).rho
    if rho >= 0.0:
        phi = np.zeros(pmap.n_vars)
        iterations = (1,) + (0,) * (n - 1)
        return _package_solution(pmap, phi, iterations, config.target_poc,
                                 started)
    phi = solve_order1(pmap, rho)
    iterations = [1]
    converged = [True]
    for j in range(2, n + 1):
        phi, used, ok = _solve_order_impl(pmap, j, phi, config)
        iterations.append(used)
        converged.append(ok)
        if j == n and not ok:
            raise NonConvergenceError(
                f"final order {n} found no fixed point after {used} "
                f"pseudo-gradient evaluations",
                last_iterate=phi, order=n, iterations=used)
    return _package_solution(pmap, phi, tuple(iterations), config.target_poc,
                             started, tuple(converged))


def filter_nodes(event: ConjunctionEvent, dense_times, keep: int,
                 template: ControlSchedule,
                 config: PropagationConfig | None = None) -> ControlSchedule:
    """Keep the ``keep`` candidate epochs with the largest first-order
    probability-gradient norm (ties broken by earlier time, then grid
    position), ordered chronologically."""
    dense_times = [float(t) for t in dense_times]
    if not dense_times:
        raise ConfigurationError("candidate grid is empty")
    if not 1 <= keep <= len(dense_times):
        raise ConfigurationError(
            f"keep must lie in [1, {len(dense_times)}], got {keep}")
    norms = gradient_norm_per_node(event, dense_times, template, config)
    ranked = sorted(range(len(norms)),
                    key=lambda i: (-norms[i][1], norms[i][0], i))
    chosen = sorted(norms[i][0] for i in ranked[:keep])
    fixed = None
    if template.fixed_directions is not None:
        fixed = tuple(template.fixed_directions[0] for _ in chosen)
    if template.mode == IMPULSIVE:
        return ControlSchedule(mode=IMPULSIVE, node_epochs=tuple(chosen),
                               frame=template.frame, fixed_directions=fixed)
    duration = template.node_epochs[1] - template.node_epochs[0]
    nodes = []
    for t in chosen:
        nodes.extend((t, t + duration))
    return ControlSchedule(mode=template.mode, node_epochs=tuple(nodes),
                           frame=template.frame, fixed_directions=fixed,
                           arc_lengths=tuple(2 for _ in chosen))


def solve_thrust_limited(event: ConjunctionEvent, dense_times, u_max_ms: float,
                         config: SolverConfig,
                         template: ControlSchedule | None = None,
                         prop_config: PropagationConfig | None = None
                         ) -> ManeuverSolution:
    """Sequential bounded-impulse design over a ranked grid of epochs.

    The highest-authority node is solved alone; whenever the required
    impulse exceeds ``u_max_ms`` that node is saturated at the bound along
    the solved direction, folded into the reference trajectory (shrinking
    the remaining probability gap), and the next-ranked node is brought in.
    Stops at the first unsaturated solve within the bound; exhausting the
    grid with gap remaining raises, reporting the residual probability.
    """
    if u_max_ms <= 0.0:
        raise ConfigurationError("u_max must be positive")
    started = time.perf_counter()
    template = template or ControlSchedule(
        mode=IMPULSIVE, node_epochs=(min(float(t) for t in dense_times),))
    if template.mode != IMPULSIVE:
        raise ConfigurationError("thrust-limited sequencing applies to impulses")

    norms = gradient_norm_per_node(event, dense_times, template, prop_config)
    ranked = sorted(range(len(norms)),
                    key=lambda i: (-norms[i][1], norms[i][0], i))
    ranked_times = [norms[i][0] for i in ranked]

    saturated: list[tuple[float, np.ndarray]] = []
    iterations: tuple[int, ...] = ()
    last_map = None
    for t in ranked_times:
        single = ControlSchedule(mode=IMPULSIVE, node_epochs=(t,),
                                 frame=template.frame)
        pmap = build_poc_map(event, single, order=config.max_order,
                             config=prop_config, fixed_impulses=saturated)
        last_map = pmap
        sol = solve_recursive(pmap, config)
        iterations = sol.per_order_iterations
        dv = np.asarray(sol.per_node_dv_ms[0])
        magnitude = float(np.linalg.norm(dv))
        if magnitude <= u_max_ms * (1.0 + 1e-12):
            engaged = sorted(saturated + [(t, dv)], key=lambda item: item[0])
            return ManeuverSolution(
                phi=np.concatenate([v for _, v in engaged]),
                per_order_iterations=iterations,
                residual=sol.residual,
                dv_total_ms=float(sum(np.linalg.norm(v) for _, v in engaged)),
                per_node_dv_ms=tuple(v for _, v in engaged),
                node_epochs=tuple(t for t, _ in engaged),
                mode=IMPULSIVE,
                wall_time_s=time.perf_counter() - started,
            )
        saturated.append((t, u_max_ms * dv / magnitude))

    residual_poc = None
    if last_map is not None:
        final = build_poc_map(event, ControlSchedule(
            mode=IMPULSIVE, node_epochs=(ranked_times[-1],),
            frame=template.frame), order=1, config=prop_config,
            fixed_impulses=saturated)
        residual_poc = final.ballistic_poc
    raise InfeasibleWithBoundError(
        f"all {len(ranked_times)} nodes saturated at {u_max_ms} m/s with "
        f"probability gap remaining (residual PoC {residual_poc})",
        residual_poc=residual_poc)


def solve_fixed_direction(event: ConjunctionEvent, schedule: ControlSchedule,
                          config: SolverConfig,
                          prop_config: PropagationConfig | None = None
                          ) -> ManeuverSolution:
    """Recursive solve with one magnitude variable per control, the
    directions being pinned by the schedule. Magnitudes may come out
    negative (retrograde firing along the pinned axis)."""
    if schedule.fixed_directions is None:
        raise ConfigurationError("schedule carries no fixed directions")
    pmap = build_poc_map(event, schedule, order=config.max_order,
                         config=prop_config)
    return solve_recursive(pmap, config)
