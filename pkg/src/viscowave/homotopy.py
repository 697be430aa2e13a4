"""Stage 2: predictor-corrector continuation in the material loss
parameter s, transporting each key solution from the elastic anchor
(s=0) to the viscoelastic target (s=1) at fixed real frequency.

The extended unknown y = [q; k] satisfies

    G(y, s) = [ (K1(s) + i k K2(s) + k^2 K3(s) - w^2 M) q ;
                q_ref^H q - 1 ]  =  0,

which is analytic in (q, k), so both the tangent and the Newton
corrector run in plain complex arithmetic.  Steps adapt to the local
curvature; paths that approach an exceptional point terminate with a
diagnosis instead of returning a possibly wrong endpoint.
"""

from __future__ import annotations

import multiprocessing
from dataclasses import dataclass

import numpy as np

from .assembly import SystemMatrices
from .keypoints import KeySet
from .linsys import BorderedSystem, SingularOperatorError
from .sweep import SweepResult

CONVERGED = "Converged"
EP_PROXIMITY = "EPProximity"
STEP_UNDERFLOW = "StepUnderflow"
MAX_STEPS = "MaxSteps"

_COND_LIMIT = 1.0 / np.sqrt(np.finfo(float).eps)
# corrector displacement must stay below this fraction of the predicted arc
_CORRECTOR_RATIO = 0.5
_CORRECTOR_ABS = 1e-9
_DS_INIT_FLOOR = 1e-3
_GAP_MULT_CAP = 10.0


class CalibrationError(RuntimeError):
    pass


class NewtonError(RuntimeError):
    def __init__(self, message, ep_signal=False):
        super().__init__(message)
        self.ep_signal = ep_signal


@dataclass
class StepPolicy:
    """Continuation step control constants (dimensionless)."""

    ds_init_max: float = 0.01
    tau_bar: float = 0.99
    growth: float = 1.1
    shrink: float = 0.5
    ds_floor: float = 1e-7
    newton_tol: float = 1e-10
    max_newton: int = 8
    max_steps: int = 50000

    def __post_init__(self):
        if not (0.0 < self.shrink < 1.0 < self.growth):
            raise ValueError("need 0 < shrink < 1 < growth")
        if not (0.0 < self.tau_bar < 1.0):
            raise ValueError("tau_bar must lie in (0, 1)")


@dataclass
class ExtendedState:
    """Point on one homotopy path: eigenvector, wavenumber, parameter."""

    q: np.ndarray
    k: complex
    s: float
    q_ref: np.ndarray

    def copy(self) -> "ExtendedState":
        return ExtendedState(q=self.q.copy(), k=self.k, s=self.s,
                             q_ref=self.q_ref.copy())


@dataclass
class HomotopyPath:
    """Trace of one transported key solution."""

    omega_hat: float
    samples: list                  # (s, k, residual norm)
    endpoint: ExtendedState | None
    status: str
    ds_init: float
    min_ds_used: float
    n_steps: int
    newton_total: int
    branch_label: int = -1
    k_anchor: float = np.nan
    family: str = "none"
    last_state: ExtendedState | None = None  # last good state on failure

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


def residual(state: ExtendedState, matrices: SystemMatrices,
             omega_hat: float) -> np.ndarray:
    """G(y, s): n rows of F plus the normalization row q_ref^H q - 1."""
    d = matrices.as_csc(matrices.dynamic_data(state.k, omega_hat, state.s))
    top = d @ state.q
    bot = np.vdot(state.q_ref, state.q) - 1.0
    return np.concatenate([top, [bot]])


def jacobian_y(state: ExtendedState, matrices: SystemMatrices,
               omega_hat: float) -> np.ndarray:
    """Dense dG/dy = [[D, (iK2 + 2k K3) q], [q_ref^H, 0]] (test/oracle use)."""
    n = matrices.n
    d = matrices.as_csc(matrices.dynamic_data(state.k, omega_hat, state.s))
    b = matrices.as_csc(matrices.dk_data(state.k, state.s)) @ state.q
    out = np.zeros((n + 1, n + 1), dtype=complex)
    out[:n, :n] = d.toarray()
    out[:n, n] = b
    out[n, :n] = state.q_ref.conj()
    return out


def jacobian_s(state: ExtendedState, matrices: SystemMatrices,
               omega_hat: float) -> np.ndarray:
    """dG/ds = [i (K1'' + i k K2'' + k^2 K3'') q; 0]; independent of s."""
    top = matrices.as_csc(matrices.ds_data(state.k)) @ state.q
    return np.concatenate([top, [0.0]])


def _border_vector(matrices, state):
    return matrices.as_csc(matrices.dk_data(state.k, state.s)) @ state.q


def _bordered_at(matrices, state, omega_hat, mode="fast") -> BorderedSystem:
    return BorderedSystem(matrices, state.k, omega_hat, state.s,
                          _border_vector(matrices, state), state.q_ref,
                          mode=mode)


def _tangent_from_system(bordered: BorderedSystem, matrices, state):
    """Raw dy/ds from the bordered system; zero drift returns zeros."""
    g_s = matrices.as_csc(matrices.ds_data(state.k)) @ state.q
    if not np.any(g_s):
        return np.zeros(matrices.n + 1, dtype=complex)
    dq, dk = bordered.solve(-g_s, 0.0)
    return np.concatenate([dq, [dk]])


def tangent(state: ExtendedState, matrices: SystemMatrices,
            omega_hat: float) -> np.ndarray:
    """Unit-norm path tangent at the state; zero vector for zero drift.

    Raises NewtonError with the exceptional-point signal set when the
    bordered Jacobian is singular or its condition estimate exceeds
    1/sqrt(machine eps).
    """
    try:
        bordered = _bordered_at(matrices, state, omega_hat, mode="full")
        raw = _tangent_from_system(bordered, matrices, state)
    except SingularOperatorError as exc:
        raise NewtonError(str(exc), ep_signal=True) from exc
    nrm = np.linalg.norm(raw)
    if nrm == 0.0:
        return raw
    if bordered.condition_estimate() > _COND_LIMIT:
        raise NewtonError("ill-conditioned Jacobian near the path",
                          ep_signal=True)
    return raw / nrm


def newton_correct(state: ExtendedState, matrices: SystemMatrices,
                   omega_hat: float, policy: StepPolicy):
    """Full-step complex Newton on G(y, s) = 0 at fixed s.

    Returns (corrected state, iteration count, final residual norm).
    Raises NewtonError when max_newton is exceeded (caller shrinks the
    step) or, with the EP signal, when the Jacobian solve fails.
    """
    q = state.q.copy()
    k = state.k
    for it in range(policy.max_newton + 1):
        st = ExtendedState(q=q, k=k, s=state.s, q_ref=state.q_ref)
        g = residual(st, matrices, omega_hat)
        g_norm = float(np.linalg.norm(g))
        if g_norm <= policy.newton_tol:
            return st, it, g_norm
        if not np.isfinite(g_norm):
            raise NewtonError("diverged (non-finite residual)")
        if it == policy.max_newton:
            break
        try:
            bordered = _bordered_at(matrices, st, omega_hat)
            dq, dk = bordered.solve(-g[:-1], -g[-1])
        except SingularOperatorError as exc:
            raise NewtonError(str(exc), ep_signal=True) from exc
        q = q + dq
        k = k + dk
    raise NewtonError(f"no convergence in {policy.max_newton} iterations "
                      f"(residual {g_norm:.2e})")


def calibrate(anchor, matrices: SystemMatrices, policy: StepPolicy = None,
              omega_hat: float = None) -> ExtendedState:
    """Consistent s=0 start state from a Stage-1 anchor solution.

    Only the real part of the anchor frequency is retained; Newton
    corrections at fixed omega move any residual into (k, q).  The
    reference vector is the (Euclidean-normalized) anchor eigenvector.
    """
    policy = policy or StepPolicy()
    omega = float(np.real(omega_hat if omega_hat is not None
                          else anchor.omega_hat))
    q0 = np.asarray(anchor.eigenvector, dtype=complex)
    q0 = q0 / np.linalg.norm(q0)
    state = ExtendedState(q=q0, k=complex(anchor.k_hat), s=0.0, q_ref=q0.copy())
    try:
        corrected, _, _ = newton_correct(state, matrices, omega, policy)
    except NewtonError as exc:
        raise CalibrationError(f"calibration failed: {exc}") from exc
    return corrected


def initial_step(gap: float | None, gap_ref: float | None,
                 gap_veering: float | None, policy: StepPolicy) -> float:
    """Adaptive initial step from the local eigengap.

    ds_min = max(1e-3, 0.1 * gap_veering); the step grows with the gap
    ratio beta = gap / gap_ref as ds_min * min(max(1, 2^(beta-1)), 10),
    capped at the policy maximum.  Solutions without a same-family
    counterpart (gap is None) start at ds_min.
    """
    ds_min = max(_DS_INIT_FLOOR, 0.1 * gap_veering) if gap_veering else _DS_INIT_FLOOR
    if gap is None or gap_ref is None or gap_ref <= 0.0:
        return min(ds_min, policy.ds_init_max)
    beta = gap / gap_ref
    mult = min(max(1.0, 2.0 ** min(beta - 1.0, 30.0)), _GAP_MULT_CAP)
    return min(ds_min * mult, policy.ds_init_max)


@dataclass
class ReferenceGaps:
    """Eigengap statistics of a sweep, grouped by wave family.

    The eigengap of a solution is its wavenumber separation from the
    nearest same-family branch at the same frequency, which is the
    quantity that controls mode-jump risk during fixed-frequency
    continuation.
    """

    gap_ref: float | None       # larger of 5% quantile and 2*veering minimum
    gap_veering: float | None   # minimum eigengap over veering regions
    per_solution: np.ndarray    # (P, n_modes), NaN where no counterpart


_VEERING_PROMINENCE = 1.2


def _prominent_minima(vals: np.ndarray):
    """Interior local minima where the curve rises by the prominence
    factor on both sides; excludes shared-cutoff boundary artifacts."""
    out = []
    n = len(vals)
    for i in range(1, n - 1):
        if not (vals[i] <= vals[i - 1] and vals[i] <= vals[i + 1]):
            continue
        target = _VEERING_PROMINENCE * max(vals[i], 1e-15)
        left = i
        while left > 0 and vals[left - 1] >= vals[left]:
            left -= 1
        right = i
        while right < n - 1 and vals[right + 1] >= vals[right]:
            right += 1
        if vals[left] >= target and vals[right] >= target:
            out.append(i)
    return out


def reference_gap(sweep: SweepResult, keys: KeySet = None) -> ReferenceGaps:
    """Same-family eigengap statistics of the anchor dataset.

    Veering regions are prominent interior minima of the branch-pair gap
    curves; the reference gap is the larger of the 5% quantile of the
    eigengaps (over the key solutions when a key set is given) and twice
    the veering minimum.  Branches alone in their family at a given
    frequency contribute no gap ("near cutoff" solutions).
    """
    n_p, n_m = sweep.omega.shape
    per_solution = np.full((n_p, n_m), np.nan)
    branch_data = {}
    for label in range(n_m):
        pts = sweep.branch_points(label)
        if len(pts) >= 2:
            branch_data[label] = (pts, sweep.omega[pts, label], sweep.grid[pts])
    fam_labels = {}
    for label in branch_data:
        fam_labels.setdefault(sweep.families[label], []).append(label)

    pair_curves = {}
    for fam, labels in fam_labels.items():
        for j in labels:
            pts_j, om_j, k_j = branch_data[j]
            for idx in range(len(pts_j)):
                w = om_j[idx]
                best = None
                for l in labels:
                    if l == j:
                        continue
                    _, om_l, k_l = branch_data[l]
                    if om_l[0] <= w <= om_l[-1]:
                        d = abs(k_j[idx] - np.interp(w, om_l, k_l))
                        if best is None or d < best[0]:
                            best = (d, l)
                if best is not None:
                    per_solution[pts_j[idx], j] = best[0]
                    key = (fam, min(j, best[1]), max(j, best[1]))
                    pair_curves.setdefault(key, []).append((w, best[0]))

    veering_candidates = []
    for curve in pair_curves.values():
        curve.sort()
        vals = np.array([g for _, g in curve])
        for i in _prominent_minima(vals):
            veering_candidates.append(float(vals[i]))
    finite = per_solution[np.isfinite(per_solution)]
    if veering_candidates:
        gap_veering = min(veering_candidates)
    elif len(finite):
        gap_veering = float(finite.min())
    else:
        gap_veering = None

    if keys is not None:
        quant_set = [per_solution[p, label]
                     for label, plist in keys.branch_indices.items()
                     for p in plist if np.isfinite(per_solution[p, label])]
    else:
        quant_set = finite
    if len(quant_set):
        quant = float(np.quantile(np.asarray(quant_set), 0.05))
        gap_ref = max(quant, 2.0 * gap_veering) if gap_veering else quant
    else:
        gap_ref = None
    return ReferenceGaps(gap_ref=gap_ref, gap_veering=gap_veering,
                         per_solution=per_solution)


def _accept_state(q, k, s):
    """Normalize the eigenvector and reset the reference to it."""
    qn = q / np.linalg.norm(q)
    return ExtendedState(q=qn, k=k, s=s, q_ref=qn.copy())


def _settle(accepted: ExtendedState, matrices, omega_hat, policy):
    """Residual of the renormalized state; polish once if the rescaling
    nudged it above tolerance."""
    res = float(np.linalg.norm(residual(accepted, matrices, omega_hat)))
    if res <= policy.newton_tol:
        return accepted, res, 0
    polished, iters, _ = newton_correct(accepted, matrices, omega_hat, policy)
    out = _accept_state(polished.q, polished.k, accepted.s)
    res = float(np.linalg.norm(residual(out, matrices, omega_hat)))
    return out, res, iters


def _tangent_at(matrices, state, omega_hat, check_cond=True):
    """(raw tangent, unit tangent) with EP signalling, fresh factorization."""
    try:
        bordered = _bordered_at(matrices, state, omega_hat, mode="full")
        raw = _tangent_from_system(bordered, matrices, state)
    except SingularOperatorError as exc:
        raise NewtonError(str(exc), ep_signal=True) from exc
    nrm = np.linalg.norm(raw)
    if nrm == 0.0:
        return raw, raw
    if check_cond and bordered.condition_estimate() > _COND_LIMIT:
        raise NewtonError("ill-conditioned Jacobian near the path",
                          ep_signal=True)
    return raw, raw / nrm


def track(start: ExtendedState, matrices: SystemMatrices, omega_hat: float,
          policy: StepPolicy, ds_init: float = None) -> HomotopyPath:
    """Trace one homotopy path from the calibrated start at s=0 to s=1.

    Loop: tangent prediction, Newton correction, curvature-based step
    control (tau = |t_p^H t_{p+1}| below tau_bar halves the step, above
    it grows by 1.1 up to the cap).  A step is also rejected when the
    corrector displacement is large relative to the predicted arc, which
    is the signature of a branch point on the path.  Once s exceeds 1,
    one backward step lands exactly at s=1.
    """
    ds_init = float(ds_init if ds_init is not None else policy.ds_init_max)
    g0 = residual(start, matrices, omega_hat)
    samples = [(0.0, complex(start.k), float(np.linalg.norm(g0)))]
    state = start.copy()

    def finish(status, endpoint, stats):
        return HomotopyPath(omega_hat=omega_hat, samples=samples,
                            endpoint=endpoint, status=status,
                            ds_init=ds_init, last_state=state.copy(), **stats)

    stats = dict(min_ds_used=ds_init, n_steps=0, newton_total=0)

    # lossless limit: the path is constant, jump straight to the target
    try:
        raw, unit = _tangent_at(matrices, state, omega_hat)
    except NewtonError:
        return finish(EP_PROXIMITY, None, stats)
    if np.linalg.norm(raw) == 0.0:
        endpoint = state.copy()
        endpoint.s = 1.0
        samples.append((1.0, complex(endpoint.k), samples[0][2]))
        return finish(CONVERGED, endpoint, stats)

    ds = ds_init
    while True:
        if stats["n_steps"] >= policy.max_steps:
            return finish(MAX_STEPS, None, stats)
        if ds < policy.ds_floor:
            return finish(STEP_UNDERFLOW, None, stats)
        stats["min_ds_used"] = min(stats["min_ds_used"], ds)
        s_new = state.s + ds
        q_pred = state.q + ds * raw[:-1]
        k_pred = state.k + ds * raw[-1]
        predicted_arc = ds * float(np.linalg.norm(raw))
        trial = ExtendedState(q=q_pred, k=k_pred, s=s_new, q_ref=state.q_ref)
        try:
            corrected, iters, res = newton_correct(trial, matrices, omega_hat,
                                                   policy)
        except NewtonError as exc:
            if exc.ep_signal:
                return finish(EP_PROXIMITY, None, stats)
            ds *= policy.shrink
            continue
        stats["newton_total"] += iters
        move = float(np.sqrt(np.linalg.norm(corrected.q - q_pred) ** 2
                             + abs(corrected.k - k_pred) ** 2))
        if move > max(_CORRECTOR_RATIO * predicted_arc, _CORRECTOR_ABS):
            # corrector left the tangent cone: branch-point signature
            ds *= policy.shrink
            continue
        accepted = _accept_state(corrected.q, corrected.k, s_new)
        try:
            raw_new, unit_new = _tangent_at(matrices, accepted, omega_hat)
        except NewtonError as exc:
            if exc.ep_signal:
                return finish(EP_PROXIMITY, None, stats)
            ds *= policy.shrink
            continue
        tau = abs(np.vdot(unit, unit_new)) if np.any(unit_new) else 1.0
        if tau < policy.tau_bar:
            ds *= policy.shrink
            continue
        # accept
        accepted, res_acc, extra = _settle(accepted, matrices, omega_hat, policy)
        stats["newton_total"] += extra
        state = accepted
        raw, unit = raw_new, unit_new
        samples.append((s_new, complex(state.k), res_acc))
        stats["n_steps"] += 1
        if s_new == 1.0:
            return finish(CONVERGED, state.copy(), stats)
        if s_new > 1.0:
            break
        ds = min(ds * policy.growth, policy.ds_init_max)

    # backward refinement: land exactly at s = 1
    ds_back = 1.0 - state.s
    q_pred = state.q + ds_back * raw[:-1]
    k_pred = state.k + ds_back * raw[-1]
    trial = ExtendedState(q=q_pred, k=k_pred, s=1.0, q_ref=state.q_ref)
    try:
        corrected, iters, res = newton_correct(trial, matrices, omega_hat,
                                               policy)
    except NewtonError as exc:
        return finish(EP_PROXIMITY if exc.ep_signal else STEP_UNDERFLOW,
                      None, stats)
    stats["newton_total"] += iters
    endpoint = _accept_state(corrected.q, corrected.k, 1.0)
    endpoint, res_end, extra = _settle(endpoint, matrices, omega_hat, policy)
    stats["newton_total"] += extra
    samples.append((1.0, complex(endpoint.k), res_end))
    stats["n_steps"] += 1
    state = endpoint
    return finish(CONVERGED, endpoint, stats)


# --- batch transport ------------------------------------------------------

_POOL_CTX = {}


def _transport_one(task):
    label, p = task
    ctx = _POOL_CTX
    sweep: SweepResult = ctx["sweep"]
    anchor = sweep.solution(p, label)
    gaps: ReferenceGaps = ctx["gaps"]
    gap = gaps.per_solution[p, label]
    ds0 = initial_step(None if np.isnan(gap) else float(gap),
                       gaps.gap_ref, gaps.gap_veering, ctx["policy"])
    try:
        start = calibrate(anchor, ctx["matrices"], ctx["policy"])
    except CalibrationError:
        path = HomotopyPath(omega_hat=anchor.omega_hat, samples=[],
                            endpoint=None, status=EP_PROXIMITY, ds_init=ds0,
                            min_ds_used=ds0, n_steps=0, newton_total=0)
    else:
        path = track(start, ctx["matrices"], anchor.omega_hat, ctx["policy"],
                     ds_init=ds0)
    path.branch_label = label
    path.k_anchor = anchor.k_hat
    path.family = anchor.wave_family
    return path


def transport_all(keys: KeySet, sweep: SweepResult, matrices: SystemMatrices,
                  policy: StepPolicy, jobs: int = 1) -> list[HomotopyPath]:
    """Calibrate and track every key solution; deterministic ordering by
    (branch label, anchor wavenumber).  Per-path failures are recorded in
    the path status, never abort the batch."""
    tasks = [(label, p) for label in sorted(keys.branch_indices)
             for p in keys.branch_indices[label]]
    global _POOL_CTX
    _POOL_CTX = dict(sweep=sweep, matrices=matrices, policy=policy,
                     gaps=reference_gap(sweep, keys))
    try:
        if jobs <= 1 or len(tasks) < 2:
            results = [_transport_one(t) for t in tasks]
        else:
            ctx = multiprocessing.get_context("fork")
            with ctx.Pool(processes=jobs) as pool:
                results = pool.map(_transport_one, tasks, chunksize=8)
    finally:
        _POOL_CTX = {}
    return results
