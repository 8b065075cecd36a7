"""Time steppers for the coupled bulk/surface Cahn-Hilliard system.

All three advance the same spatial discretization

    (1)  m_bulk (phi - phi_n)/tau + k_bulk mu            = 0
    (2)  m_surf (tr phi - tr phi_n)/tau + k_surf mu_g    = 0
    (3)  grad E(phi) - m_bulk mu - T' m_surf mu_g        = 0

where grad E is the consistent nodal gradient of the discrete energy.
step_fully_implicit solves (1)-(3) directly by Newton; when the direct
solve stalls (the squared-residual merit of the nonconvex system can
have spurious local minima on under-resolved meshes) it falls back to
the variational path below and polishes the result on (1)-(3).
step_minimizing_movement minimizes the movement functional
J(phi) = ||phi - phi_n||^2 / (2 tau) + E(phi) over the affine set of
fields with the initial bulk and surface averages, then reconstructs
(mu, mu_gamma) from the Poisson problems; at the optimum the two
formulations coincide.  step_convex_concave replaces F' in (3) by
F1'(phi^{n+1}) + F2'(phi^n), which is unconditionally energy stable.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem_ops import _dot, _solve_bulk, _solve_surf, mean_pair
from .energy_diag import State, total_energy, energy_gradient

_KINDS = ("minimizing_movement", "fully_implicit", "convex_concave")


@dataclass(frozen=True)
class StepperConfig:
    """Newton controls shared by all steppers.

    The line search backtracks by `backtrack` until the merit drops by
    the Armijo fraction `sufficient_decrease`; the merit is the squared
    residual for the coupled solves and the movement functional for the
    minimizing-movement solve.  `newton_max_iter` counts accepted Newton
    steps.
    """

    kind: str = "fully_implicit"
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    backtrack: float = 0.5
    sufficient_decrease: float = 1e-4

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown stepper kind {self.kind!r}")
        if self.newton_tol <= 0:
            raise ValueError("newton_tol must be positive")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be at least 1")
        if not 0.0 < self.backtrack < 1.0:
            raise ValueError("backtrack factor must lie in (0, 1)")


class StepperError(RuntimeError):
    """Nonlinear solve failed; carries the residual norms seen so far."""

    def __init__(self, message, residual_history=()):
        super().__init__(message)
        self.residual_history = list(residual_history)


@dataclass(frozen=True)
class MuRing:
    """Mean-free chemical potentials and the constants completing them."""

    mu_ring: np.ndarray
    mu_gamma_ring: Optional[np.ndarray]
    c: float
    c_gamma: float


def _newton(x0, residual, jacobian, cfg, step_cap=1.0):
    # damped Newton on the stacked residual; returns the iterate and the
    # history of residual inf-norms
    x = np.array(x0, dtype=float)
    r = residual(x)
    hist = [float(np.max(np.abs(r)))]
    merit = 0.5 * _dot(r, r)
    it = 0
    while hist[-1] > cfg.newton_tol:
        if it >= cfg.newton_max_iter:
            raise StepperError(
                f"Newton did not converge in {cfg.newton_max_iter} iterations "
                f"(last residual {hist[-1]:.3e})",
                hist,
            )
        try:
            lu = spla.splu(jacobian(x).tocsc())
        except RuntimeError as exc:
            raise StepperError(f"linear solver breakdown: {exc}", hist) from exc
        dx = step_cap * lu.solve(-r)
        t = 1.0
        while t >= 2.0**-30:
            xt = x + t * dx
            rt = residual(xt)
            mt = 0.5 * _dot(rt, rt)
            if mt <= (1.0 - 2.0 * cfg.sufficient_decrease * t) * merit:
                break
            t *= cfg.backtrack
        else:
            raise StepperError("line search failed to decrease the residual", hist)
        x, r, merit = xt, rt, mt
        hist.append(float(np.max(np.abs(r))))
        it += 1
    # one full polishing step; the rows linear in the unknowns come out
    # exact, which is what keeps the mass means pinned over long runs
    if hist[-1] > 0.0:
        lu = spla.splu(jacobian(x).tocsc())
        xt = x + lu.solve(-r)
        rt = residual(xt)
        if float(np.max(np.abs(rt))) <= max(cfg.newton_tol, hist[-1]):
            x, r = xt, rt
            hist.append(float(np.max(np.abs(r))))
    return x, hist


def _check_state(prev):
    if not np.all(np.isfinite(prev.phi)):
        raise ValueError("previous state contains non-finite phi")


def _hessian(ops, params, d2_bulk, d2_surf):
    # Hessian of the energy for given nodal second-derivative samples
    h = params.epsilon * ops.k_bulk + (1.0 / params.epsilon) * sp.diags(
        ops.w_bulk * d2_bulk
    )
    if params.model == "liu_wu":
        t = ops.trace_matrix
        hs = params.kappa * params.epsilon * ops.k_surf + (
            1.0 / params.epsilon
        ) * sp.diags(ops.w_surf * d2_surf)
        h = h + t.T @ hs @ t
    return h


# ---------------------------------------------------------------------------
# fully implicit and convex-concave steps share the coupled Newton solve


def _coupled_system(ops, params, phi_n, grad, second_bulk, second_surf):
    n = len(phi_n)
    surf = params.model == "liu_wu"
    tau = params.tau
    t_mat = ops.trace_matrix
    m_s_t = t_mat.T @ ops.m_surf if surf else None

    def unpack(y):
        phi = y[:n]
        mu = y[n : 2 * n]
        mug = y[2 * n :] if surf else None
        return phi, mu, mug

    def residual(y):
        phi, mu, mug = unpack(y)
        delta = phi - phi_n
        r1 = ops.m_bulk @ (delta / tau) + ops.k_bulk @ mu
        r3 = grad(phi) - ops.m_bulk @ mu
        if surf:
            r2 = ops.m_surf @ (delta[ops.trace] / tau) + ops.k_surf @ mug
            r3 -= m_s_t @ mug
            return np.concatenate([r1, r2, r3])
        return np.concatenate([r1, r3])

    def jacobian(y):
        phi, _, _ = unpack(y)
        d2s = second_surf(phi[ops.trace]) if surf else None
        h = _hessian(ops, params, second_bulk(phi), d2s)
        if surf:
            return sp.bmat(
                [
                    [ops.m_bulk / tau, ops.k_bulk, None],
                    [ops.m_surf @ t_mat / tau, None, ops.k_surf],
                    [h, -ops.m_bulk, -m_s_t],
                ]
            )
        return sp.bmat([[ops.m_bulk / tau, ops.k_bulk], [h, -ops.m_bulk]])

    return unpack, residual, jacobian


def _step_coupled(ops, params, prev, cfg, grad, second_bulk, second_surf, y0=None):
    _check_state(prev)
    n = len(prev.phi)
    surf = params.model == "liu_wu"
    nb = len(ops.trace) if surf else 0
    unpack, residual, jacobian = _coupled_system(
        ops, params, prev.phi, grad, second_bulk, second_surf
    )
    if y0 is None:
        mu0 = prev.mu if prev.mu is not None else np.zeros(n)
        y0 = np.concatenate(
            [prev.phi, mu0]
            + (
                [prev.mu_gamma if prev.mu_gamma is not None else np.zeros(nb)]
                if surf
                else []
            )
        )
    y, _ = _newton(y0, residual, jacobian, cfg)
    phi, mu, mug = unpack(y)
    return State(t=prev.t + params.tau, phi=phi, mu=mu, mu_gamma=mug)


def step_fully_implicit(ops, params, prev, cfg=None):
    """One implicit Euler step of the coupled system, solved by Newton.

    The direct Newton solve is tried first.  If it fails to converge
    (possible on coarse meshes, where the residual merit of the
    nonconvex system develops spurious local minima), the step is
    recomputed through the minimizing-movement solve, whose line search
    descends the movement functional instead and cannot get trapped;
    the chemical potentials then come from the constraint multipliers,
    mu = l1 - u/tau, and the result is polished on the coupled system.
    Both paths land on the same root, so the fallback changes the
    answer only below the Newton tolerance.
    """
    cfg = cfg or StepperConfig(kind="fully_implicit")
    pot_b, pot_s = params.pot_bulk, params.pot_surf
    grad = lambda phi: energy_gradient(ops, params, phi)
    try:
        return _step_coupled(
            ops,
            params,
            prev,
            cfg,
            grad=grad,
            second_bulk=pot_b.second_derivative,
            second_surf=pot_s.second_derivative,
        )
    except StepperError as direct_err:
        surf = params.model == "liu_wu"
        tau = params.tau
        try:
            core = _minimize_movement(ops, params, prev.phi, cfg)
        except StepperError as exc:
            raise StepperError(
                f"coupled Newton failed ({direct_err}) and the variational "
                f"fallback failed too ({exc})",
                direct_err.residual_history,
            ) from exc
        mu = core.l1 - core.u / tau
        y0 = [core.phi, mu]
        if surf:
            y0.append(core.l2 - core.v / tau)
        return _step_coupled(
            ops,
            params,
            prev,
            cfg,
            grad=grad,
            second_bulk=pot_b.second_derivative,
            second_surf=pot_s.second_derivative,
            y0=np.concatenate(y0),
        )


def step_convex_concave(ops, params, prev, cfg=None):
    """One step with the convex part implicit and the concave part explicit.

    Unconditionally energy stable: testing the scheme with the increment
    and using convexity of F1, concavity of F2 gives
    E(phi^{n+1}) <= E(phi^n) for every tau, which is asserted.
    """
    cfg = cfg or StepperConfig(kind="convex_concave")
    _check_state(prev)
    pot_b, pot_s = params.pot_bulk, params.pot_surf
    if pot_b.f1_dd is None or (params.model == "liu_wu" and pot_s.f1_dd is None):
        raise ValueError("convex_concave needs second derivatives of the convex parts")
    eps = params.epsilon
    phi_n = prev.phi
    _, df2_n = pot_b.f2(phi_n)
    pg_n = phi_n[ops.trace]
    _, dg2_n = pot_s.f2(pg_n)

    def grad(phi):
        _, df1 = pot_b.f1(phi)
        g = eps * (ops.k_bulk @ phi) + (1.0 / eps) * ops.w_bulk * (df1 + df2_n)
        if params.model == "liu_wu":
            pg = phi[ops.trace]
            _, dg1 = pot_s.f1(pg)
            gs = params.kappa * eps * (ops.k_surf @ pg) + (1.0 / eps) * ops.w_surf * (
                dg1 + dg2_n
            )
            g[ops.trace] += gs
        return g

    nxt = _step_coupled(
        ops,
        params,
        prev,
        cfg,
        grad=grad,
        second_bulk=pot_b.f1_dd,
        second_surf=pot_s.f1_dd if pot_s.f1_dd is not None else (lambda x: x * 0.0),
    )
    e_prev = total_energy(ops, params, phi_n).e_total
    e_next = total_energy(ops, params, nxt.phi).e_total
    if e_next > e_prev + 1e-12 * (1.0 + abs(e_prev)):
        raise StepperError(
            f"energy increased in a convex-concave step: {e_prev!r} -> {e_next!r}"
        )
    return nxt


# ---------------------------------------------------------------------------
# minimizing movements


@dataclass(frozen=True)
class _MovementRoot:
    """Converged first-order point of the movement functional.

    u and v are the metric potentials of phi - phi_n (mean-free Poisson
    preimages), l1 and l2 the multipliers of the two average constraints;
    they equal the means of the chemical potentials.
    """

    phi: np.ndarray
    u: np.ndarray
    v: Optional[np.ndarray]
    l1: float
    l2: float
    j_value: float
    residual_history: list


def _minimize_movement(ops, params, phi_n, cfg):
    # Newton on the KKT system of  J(phi) = ||phi - phi_n||^2/(2 tau) + E(phi)
    # subject to fixed bulk and surface averages.  The search direction is
    # regularized (hessian + lam * gram) whenever the plain direction fails
    # to descend J, and the line search is on J itself, so the iteration is
    # a descent method for the movement functional rather than for a
    # residual merit; near a stationary point it hands over to plain Newton
    # steps on the KKT residual for the final digits.
    n = len(phi_n)
    surf = params.model == "liu_wu"
    nb = len(ops.trace) if surf else 0
    tau = params.tau
    t_mat = ops.trace_matrix
    w = ops.w_bulk
    wg = ops.w_surf
    pot_b, pot_s = params.pot_bulk, params.pot_surf
    m_s_t = t_mat.T @ ops.m_surf if surf else None
    twg = t_mat.T @ wg if surf else None
    # gram matrix of the constraint normals, used to project the gradient
    if surf:
        gram = np.array([[_dot(w, w), _dot(w, twg)], [_dot(twg, w), _dot(twg, twg)]])
        reg = (ops.m_bulk + t_mat.T @ ops.m_surf @ t_mat).tocsr()
    else:
        gram = np.array([[_dot(w, w)]])
        reg = ops.m_bulk.tocsr()

    def aux(phi):
        # metric potentials, J, its phi-gradient, multipliers, projected grad
        delta = phi - phi_n
        u = _solve_bulk(ops, delta)
        cost = _dot(u, ops.k_bulk @ u)
        gr = energy_gradient(ops, params, phi) + (ops.m_bulk @ u) / tau
        if surf:
            v = _solve_surf(ops, delta[ops.trace])
            cost += _dot(v, ops.k_surf @ v)
            gr += (m_s_t @ v) / tau
            rhs = np.array([_dot(w, gr), _dot(twg, gr)])
        else:
            v = None
            rhs = np.array([_dot(w, gr)])
        jval = total_energy(ops, params, phi).e_total + cost / (2.0 * tau)
        lmul = np.linalg.solve(gram, rhs)
        gp = gr - lmul[0] * w - (lmul[1] * twg if surf else 0.0)
        return u, v, jval, gr, lmul, gp

    def pack(phi, u, v, al, be, lmul):
        if surf:
            return np.concatenate([phi, u, v, [al, be, lmul[0], lmul[1]]])
        return np.concatenate([phi, u, [al, lmul[0]]])

    def residual(x):
        phi = x[:n]
        u = x[n : 2 * n]
        delta = phi - phi_n
        if surf:
            v = x[2 * n : 2 * n + nb]
            al, be, l1, l2 = x[2 * n + nb :]
        else:
            v = None
            al, l1 = x[2 * n :]
        r_phi = (ops.m_bulk @ u) / tau + energy_gradient(ops, params, phi) - l1 * w
        r_u = ops.k_bulk @ u + al * w - ops.m_bulk @ delta
        if surf:
            r_phi += (m_s_t @ v) / tau - l2 * twg
            r_v = ops.k_surf @ v + be * wg - ops.m_surf @ delta[ops.trace]
            tail = [_dot(w, u), _dot(wg, v), _dot(w, delta), _dot(wg, delta[ops.trace])]
            return np.concatenate([r_phi, r_u, r_v, np.array(tail)])
        tail = [_dot(w, u), _dot(w, delta)]
        return np.concatenate([r_phi, r_u, np.array(tail)])

    def jacobian(x, lam):
        phi = x[:n]
        h = _hessian(
            ops,
            params,
            pot_b.second_derivative(phi),
            pot_s.second_derivative(phi[ops.trace]) if surf else None,
        )
        if lam:
            h = h + lam * reg
        wc = sp.csr_matrix(w.reshape(n, 1))
        wr = sp.csr_matrix(w.reshape(1, n))
        if surf:
            wgc = sp.csr_matrix(wg.reshape(nb, 1))
            wgr = sp.csr_matrix(wg.reshape(1, nb))
            twgc = sp.csr_matrix(twg.reshape(n, 1))
            return sp.bmat(
                [
                    [h, ops.m_bulk / tau, m_s_t / tau, None, None, -wc, -twgc],
                    [-ops.m_bulk, ops.k_bulk, None, wc, None, None, None],
                    [-ops.m_surf @ t_mat, None, ops.k_surf, None, wgc, None, None],
                    [None, wr, None, None, None, None, None],
                    [None, None, wgr, None, None, None, None],
                    [wr, None, None, None, None, None, None],
                    [wgr @ t_mat, None, None, None, None, None, None],
                ]
            ).tocsc()
        return sp.bmat(
            [
                [h, ops.m_bulk / tau, None, -wc],
                [-ops.m_bulk, ops.k_bulk, wc, None],
                [None, wr, None, None],
                [wr, None, None, None],
            ]
        ).tocsc()

    def refresh(phi):
        # rebuild the auxiliary unknowns consistently from phi; after damped
        # steps they lag behind and misreport the KKT residual
        u, v, jval, gr, lmul, gp = aux(phi)
        delta = phi - phi_n
        al = _dot(w, ops.m_bulk @ delta - ops.k_bulk @ u) / _dot(w, w)
        if surf:
            be = _dot(wg, ops.m_surf @ delta[ops.trace] - ops.k_surf @ v) / _dot(wg, wg)
        else:
            be = 0.0
        return pack(phi, u, v, al, be, lmul), (u, v, jval, gr, lmul, gp)

    accepted = 0

    def finish(x, r, rn, hist):
        # plain Newton on the KKT residual, accepted on residual decrease;
        # quadratically convergent once the J descent has done its job, and
        # its full steps leave the linear rows exact
        nonlocal accepted
        x, _ = refresh(x[:n])
        r = residual(x)
        rn = float(np.max(np.abs(r)))
        hist.append(rn)
        for _ in range(8):
            if rn <= cfg.newton_tol or accepted >= cfg.newton_max_iter:
                break
            lu = spla.splu(jacobian(x, 0.0))
            cand = x + lu.solve(-r)
            rc = residual(cand)
            rcn = float(np.max(np.abs(rc)))
            if rcn < rn:
                x, r, rn = cand, rc, rcn
                hist.append(rn)
                accepted += 1
            else:
                break
        return x, r, rn

    x, (u, v, jval, gr, lmul, gp) = refresh(phi_n)
    r = residual(x)
    rn = float(np.max(np.abs(r)))
    hist = [rn]
    lam = 0.0
    while rn > cfg.newton_tol:
        if accepted >= cfg.newton_max_iter:
            raise StepperError(
                f"movement minimization did not converge in "
                f"{cfg.newton_max_iter} accepted steps (last residual {rn:.3e})",
                hist,
            )
        try:
            lu = spla.splu(jacobian(x, lam))
        except RuntimeError as exc:
            raise StepperError(f"linear solver breakdown: {exc}", hist) from exc
        dx = lu.solve(-r)
        slope = _dot(dx[:n], gr)
        if slope >= -1e-13 * (1.0 + abs(jval)):
            # direction does not descend J measurably: either we are at a
            # stationary point (finish with plain Newton) or the plain
            # direction points uphill and needs regularizing
            if rn <= 1e-4 or float(np.max(np.abs(gp))) <= 1e-4:
                x, r, rn = finish(x, r, rn, hist)
                if rn <= cfg.newton_tol:
                    break
            lam = 10.0 * max(lam, 0.1)
            if lam > 1e10:
                raise StepperError(
                    f"movement minimization stalled (residual {rn:.3e})", hist
                )
            continue
        # cap the first trial so giant directions do not waste backtracks
        t = min(1.0, 1.0 / max(float(np.max(np.abs(dx[:n]))), 1e-300))
        armijo = False
        while t >= 2.0**-24:
            cand = x + t * dx
            trial = aux(cand[:n])
            if trial[2] <= jval + cfg.sufficient_decrease * t * slope:
                armijo = True
                break
            t *= cfg.backtrack
        if not armijo:
            lam = 10.0 * max(lam, 0.1)
            if lam > 1e10:
                raise StepperError(
                    f"movement line search failed (residual {rn:.3e})", hist
                )
            continue
        x = cand
        u, v, jval, gr, lmul, gp = trial
        r = residual(x)
        rn = float(np.max(np.abs(r)))
        hist.append(rn)
        accepted += 1
        if t == 1.0:
            lam = 0.0 if lam < 1e-3 else 0.25 * lam
    phi = x[:n]
    u, v, jval, gr, lmul, gp = aux(phi)
    return _MovementRoot(
        phi=phi,
        u=u,
        v=v,
        l1=float(lmul[0]),
        l2=float(lmul[1]) if surf else 0.0,
        j_value=jval,
        residual_history=hist,
    )


def step_minimizing_movement(ops, params, prev, cfg=None):
    """One minimizing-movement step.

    Minimizes ||phi - phi_n||^2/(2 tau) + E(phi) over fields sharing the
    previous bulk and surface averages (regularized Newton on the KKT
    system with two scalar multipliers, line search on the functional),
    checks that the movement functional did not increase, and
    reconstructs (mu, mu_gamma) from the Poisson problems.
    """
    cfg = cfg or StepperConfig(kind="minimizing_movement")
    _check_state(prev)
    phi_n = prev.phi
    core = _minimize_movement(ops, params, phi_n, cfg)
    e_prev = total_energy(ops, params, phi_n).e_total
    if core.j_value > e_prev + 1e-12 * (1.0 + abs(e_prev)):
        raise StepperError(
            "minimizing movement step failed to decrease the movement functional",
            core.residual_history,
        )
    ring, mu, mug = reconstruct_potentials(ops, params, core.phi, phi_n)
    return State(t=prev.t + params.tau, phi=core.phi, mu=mu, mu_gamma=mug)


def reconstruct_potentials(ops, params, phi_next, phi_prev, eta2=None):
    """Rebuild (mu, mu_gamma) from a phase-field increment.

    The mean-free parts solve the Poisson problems driven by the backward
    difference quotient; the additive constants are identified by testing
    the stationarity equation with eta2, a nonnegative P1 function
    vanishing on the boundary (default: the sum of all interior hats),
    and with the constant function.  Any admissible eta2 gives the same
    constants up to the stationarity residual.
    """
    tau = params.tau
    delta = np.asarray(phi_next, dtype=float) - np.asarray(phi_prev, dtype=float)
    means = mean_pair(ops, delta)
    if abs(means.m1) > 1e-10 or (params.model == "liu_wu" and abs(means.m2) > 1e-10):
        raise ValueError(f"increment violates mass conservation: {means}")

    interior = np.ones(len(delta))
    interior[ops.trace] = 0.0
    if eta2 is None:
        eta2 = interior
    else:
        eta2 = np.asarray(eta2, dtype=float)
        if np.any(eta2 < 0) or np.any(eta2[ops.trace] != 0.0):
            raise ValueError("eta2 must be nonnegative and vanish on the boundary")
    wint = _dot(ops.w_bulk, eta2)
    if wint <= 0.0:
        raise ValueError(
            "eta2 integrates to zero; the mesh needs nx, ny >= 2 for interior nodes"
        )

    mu_ring = _solve_bulk(ops, -delta / tau)
    r = energy_gradient(ops, params, phi_next) - ops.m_bulk @ mu_ring
    if params.model == "liu_wu":
        mug_ring = _solve_surf(ops, -delta[ops.trace] / tau)
        r -= ops.trace_matrix.T @ (ops.m_surf @ mug_ring)
    else:
        mug_ring = None
    c = _dot(eta2, r) / wint
    if params.model == "liu_wu":
        c_gamma = (float(r.sum()) - c * ops.bulk_volume) / ops.surf_measure
        mu_gamma = mug_ring + c_gamma
    else:
        c_gamma = 0.0
        mu_gamma = None
    return MuRing(mu_ring=mu_ring, mu_gamma_ring=mug_ring, c=c, c_gamma=c_gamma), (
        mu_ring + c
    ), mu_gamma


STEPPERS = {
    "minimizing_movement": step_minimizing_movement,
    "fully_implicit": step_fully_implicit,
    "convex_concave": step_convex_concave,
}
