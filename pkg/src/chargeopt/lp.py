"""Dense linear-programming backend with a bundled reference solver.

Solves problems of the form

    minimize    c . x
    subject to  a_i . x  (<= | = | >=)  b_i      for each row i
                lo <= x <= hi                    (infinite bounds allowed)

The solver is a two-phase revised simplex over bounded variables: every row
gets a slack column (nonpositive for >= rows, fixed at zero for equalities),
infeasible rows get a phase-1 artificial, and the basis inverse is maintained
by product-form updates with periodic refactorization. Pricing is Dantzig
(most negative reduced cost) with a permanent switch to Bland's rule after a
long degenerate streak, so the method terminates; all ties break toward the
lowest variable index, which makes results bit-stable.

Controller LPs share one constraint matrix across a whole price grid, so
``SimplexSolver`` is reusable: build it once, then call ``solve`` per
objective, passing the previous solution's basis as a warm start.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
FAILED = "failed"

LE, EQ, GE = "<=", "=", ">="

_LOWER, _UPPER, _FREE = -1, 1, 0
_REFACTOR_EVERY = 100


class LpError(ValueError):
    pass


@dataclass
class LinearProgram:
    """Problem container. ``rows`` holds (coefficients, relation, rhs)."""

    objective: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    rows: list[tuple[np.ndarray, str, float]] = field(default_factory=list)

    def __init__(self, objective, lower=None, upper=None):
        self.objective = np.asarray(objective, dtype=float)
        n = self.objective.size
        self.lower = np.full(n, -np.inf) if lower is None else np.asarray(lower, dtype=float)
        self.upper = np.full(n, np.inf) if upper is None else np.asarray(upper, dtype=float)
        self.rows = []
        if not np.all(np.isfinite(self.objective)):
            raise LpError("objective coefficients must be finite")
        if np.any(self.lower > self.upper):
            raise LpError("lower bound exceeds upper bound")

    @property
    def n_vars(self) -> int:
        return self.objective.size

    def add_row(self, coeffs, rel: str, rhs: float) -> None:
        if rel not in (LE, EQ, GE):
            raise LpError(f"unknown relation {rel!r}")
        vec = np.zeros(self.n_vars)
        if isinstance(coeffs, dict):
            for j, v in coeffs.items():
                vec[j] = v
        else:
            arr = np.asarray(coeffs, dtype=float)
            vec[: arr.size] = arr
        if not (np.all(np.isfinite(vec)) and np.isfinite(rhs)):
            raise LpError("constraint coefficients must be finite")
        self.rows.append((vec, rel, float(rhs)))


@dataclass
class LpSolution:
    status: str
    values: np.ndarray | None = None
    objective_value: float | None = None
    basis: tuple | None = None
    n_iterations: int = 0


class SimplexSolver:
    """Reusable solver bound to one constraint set.

    The standardized matrix is built once; ``solve`` may be called repeatedly
    with different objective vectors (same length as the original problem)
    and an optional warm-start basis from a previous solution.
    """

    def __init__(self, lp: LinearProgram, tol_feas: float = 1e-7, tol_opt: float = 1e-7):
        self.tol_feas = tol_feas
        self.tol_opt = tol_opt
        self.n_struct = lp.n_vars
        m = len(lp.rows)
        self.m = m
        n_total = self.n_struct + m
        self.A = np.zeros((m, n_total))
        self.b = np.zeros(m)
        lo = np.empty(n_total)
        hi = np.empty(n_total)
        lo[: self.n_struct] = lp.lower
        hi[: self.n_struct] = lp.upper
        for i, (vec, rel, rhs) in enumerate(lp.rows):
            self.A[i, : self.n_struct] = vec
            self.A[i, self.n_struct + i] = 1.0
            self.b[i] = rhs
            if rel == LE:
                lo[self.n_struct + i], hi[self.n_struct + i] = 0.0, np.inf
            elif rel == GE:
                lo[self.n_struct + i], hi[self.n_struct + i] = -np.inf, 0.0
            else:
                lo[self.n_struct + i], hi[self.n_struct + i] = 0.0, 0.0
        self.lo = lo
        self.hi = hi
        self.default_c = np.concatenate([lp.objective, np.zeros(m)])

    # -- public API ---------------------------------------------------------

    def solve(self, objective=None, warm: tuple | None = None) -> LpSolution:
        if objective is None:
            c_struct = self.default_c[: self.n_struct]
        else:
            c_struct = np.asarray(objective, dtype=float)
            if c_struct.size != self.n_struct:
                raise LpError("objective length mismatch")
        c = np.concatenate([c_struct, np.zeros(self.m)])

        if warm is not None:
            state = self._restore(warm)
            if state is not None:
                status, iters = self._iterate(state, c, phase1=False)
                return self._finish(state, c, status, iters)

        state = self._cold_start()
        n_art = state["n_art"]
        if n_art:
            c1 = np.zeros(self.A.shape[1] + n_art)
            c1[self.A.shape[1]:] = 1.0
            status, it1 = self._iterate(state, c1, phase1=True)
            if status != OPTIMAL:
                return LpSolution(status=FAILED, n_iterations=it1)
            infeas = float(state["x"][self.A.shape[1]:].sum())
            if infeas > max(self.tol_feas, 1e-9 * (1.0 + np.abs(self.b).sum())):
                return LpSolution(status=INFEASIBLE, n_iterations=it1)
            self._purge_artificials(state)
        else:
            it1 = 0
        c_ext = np.concatenate([c, np.zeros(n_art)])
        status, it2 = self._iterate(state, c_ext, phase1=False)
        return self._finish(state, c_ext, status, it1 + it2)

    # -- state construction -------------------------------------------------

    def _nonbasic_rest(self, lo, hi):
        """Rest every column at the finite bound nearest zero; free at 0."""
        n = lo.size
        state = np.full(n, _FREE, dtype=np.int8)
        x = np.zeros(n)
        lo_fin = np.isfinite(lo)
        hi_fin = np.isfinite(hi)
        use_lo = lo_fin & (~hi_fin | (np.abs(lo) <= np.abs(hi)))
        use_hi = hi_fin & ~use_lo
        state[use_lo] = _LOWER
        x[use_lo] = lo[use_lo]
        state[use_hi] = _UPPER
        x[use_hi] = hi[use_hi]
        return state, x

    def _cold_start(self) -> dict:
        m = self.m
        n_real = self.A.shape[1]
        nb_state, x = self._nonbasic_rest(self.lo, self.hi)
        resid = self.b - self.A @ x if m else np.zeros(0)

        # Rows whose slack can absorb the residual start with the slack basic;
        # the rest get a signed artificial column.
        art_rows = []
        basis = np.empty(m, dtype=np.intp)
        for i in range(m):
            s = self.n_struct + i
            val = x[s] + resid[i]
            if self.lo[s] - 1e-12 <= val <= self.hi[s] + 1e-12:
                basis[i] = s
                x[s] = val
            else:
                art_rows.append(i)
        n_art = len(art_rows)
        if n_art:
            A = np.hstack([self.A, np.zeros((m, n_art))])
            lo = np.concatenate([self.lo, np.zeros(n_art)])
            hi = np.concatenate([self.hi, np.full(n_art, np.inf)])
            nb_state = np.concatenate([nb_state, np.full(n_art, _LOWER, dtype=np.int8)])
            x = np.concatenate([x, np.zeros(n_art)])
            for k, i in enumerate(art_rows):
                s = self.n_struct + i
                resid_i = self.b[i] - self.A[i] @ x[:n_real]
                A[i, n_real + k] = 1.0 if resid_i >= 0 else -1.0
                basis[i] = n_real + k
                x[n_real + k] = abs(resid_i)
        else:
            A, lo, hi = self.A, self.lo, self.hi

        in_basis = np.zeros(A.shape[1], dtype=bool)
        in_basis[basis] = True
        B_inv = self._factorize(A, basis)
        return {
            "A": A, "lo": lo, "hi": hi, "basis": basis, "in_basis": in_basis,
            "nb_state": nb_state, "x": x, "B_inv": B_inv, "n_art": n_art,
        }

    def _restore(self, warm: tuple) -> dict | None:
        basis, nb_state = warm
        basis = np.asarray(basis, dtype=np.intp)
        nb_state = np.asarray(nb_state, dtype=np.int8)
        if basis.size != self.m or nb_state.size != self.A.shape[1]:
            return None
        try:
            B_inv = self._factorize(self.A, basis)
        except np.linalg.LinAlgError:
            return None
        x = np.zeros(self.A.shape[1])
        nb = np.ones(self.A.shape[1], dtype=bool)
        nb[basis] = False
        at_lo = nb & (nb_state == _LOWER)
        at_hi = nb & (nb_state == _UPPER)
        x[at_lo] = self.lo[at_lo]
        x[at_hi] = self.hi[at_hi]
        if self.m:
            x[basis] = B_inv @ (self.b - self.A @ x)
        viol = np.maximum(self.lo[basis] - x[basis], x[basis] - self.hi[basis])
        if viol.size and viol.max() > 1e-6:
            return None
        in_basis = np.zeros(self.A.shape[1], dtype=bool)
        in_basis[basis] = True
        return {
            "A": self.A, "lo": self.lo, "hi": self.hi, "basis": basis,
            "in_basis": in_basis, "nb_state": nb_state.copy(), "x": x,
            "B_inv": B_inv, "n_art": 0,
        }

    @staticmethod
    def _factorize(A, basis):
        m = basis.size
        if m == 0:
            return np.zeros((0, 0))
        return np.linalg.inv(A[:, basis])

    def _refactor(self, st, resync: bool = True):
        st["B_inv"] = self._factorize(st["A"], st["basis"])
        if resync and self.m:
            xn = st["x"].copy()
            xn[st["basis"]] = 0.0
            st["x"][st["basis"]] = st["B_inv"] @ (self.b - st["A"] @ xn)

    # -- core simplex loop ---------------------------------------------------

    def _iterate(self, st, c, phase1: bool) -> tuple[str, int]:
        A, lo, hi = st["A"], st["lo"], st["hi"]
        m, n = A.shape
        tol = self.tol_opt
        tol_piv = 1e-10
        bland = False
        degen_run = 0
        max_iter = 200 + 60 * (m + 1) + 2 * n

        for it in range(max_iter):
            if it and it % _REFACTOR_EVERY == 0:
                self._refactor(st)
            basis, x, B_inv = st["basis"], st["x"], st["B_inv"]
            y = c[basis] @ B_inv if m else np.zeros(0)
            d = c - (y @ A if m else 0.0)
            d[basis] = 0.0

            nb = ~st["in_basis"]
            movable = nb & (lo < hi)
            cand = movable & (
                ((st["nb_state"] == _LOWER) & (d < -tol))
                | ((st["nb_state"] == _UPPER) & (d > tol))
                | ((st["nb_state"] == _FREE) & (np.abs(d) > tol))
            )
            if not cand.any():
                return OPTIMAL, it
            if bland:
                j = int(np.flatnonzero(cand)[0])
            else:
                score = np.where(cand, np.abs(d), -1.0)
                j = int(np.argmax(score))
            if st["nb_state"][j] == _UPPER or (st["nb_state"][j] == _FREE and d[j] > 0):
                sigma = -1.0
            else:
                sigma = 1.0

            w = B_inv @ A[:, j] if m else np.zeros(0)
            delta = sigma * w
            flip_len = hi[j] - lo[j]  # inf unless both bounds finite

            if m:
                xB = x[basis]
                t_rows = np.full(m, np.inf)
                dec = delta > tol_piv
                inc = delta < -tol_piv
                with np.errstate(invalid="ignore"):
                    t_rows[dec] = (xB[dec] - lo[basis[dec]]) / delta[dec]
                    t_rows[inc] = (hi[basis[inc]] - xB[inc]) / (-delta[inc])
                t_rows = np.maximum(t_rows, 0.0)
                t_min_rows = t_rows.min() if m else np.inf
            else:
                t_rows = np.zeros(0)
                t_min_rows = np.inf

            t_star = min(flip_len, t_min_rows)
            if not np.isfinite(t_star):
                return (FAILED if phase1 else UNBOUNDED), it

            if flip_len <= t_min_rows:  # bound flip, no basis change
                if m:
                    x[basis] = x[basis] - flip_len * delta
                x[j] = hi[j] if sigma > 0 else lo[j]
                st["nb_state"][j] = _UPPER if sigma > 0 else _LOWER
                degen_run = 0
                continue

            ties = np.flatnonzero(t_rows <= t_star + 1e-12)
            r = int(ties[np.argmin(basis[ties])])  # lowest leaving index
            leave = basis[r]
            x[basis] = x[basis] - t_star * delta
            x[j] = x[j] + sigma * t_star
            x[leave] = lo[leave] if delta[r] > 0 else hi[leave]
            st["nb_state"][leave] = _LOWER if delta[r] > 0 else _UPPER
            st["in_basis"][leave] = False
            st["in_basis"][j] = True
            basis[r] = j
            piv = w[r]
            if abs(piv) < 1e-12:
                self._refactor(st)
                continue
            Br = B_inv[r] / piv
            B_inv -= np.outer(w, Br)
            B_inv[r] = Br

            if t_star <= 1e-11:
                degen_run += 1
                if degen_run > 2 * m + 50:
                    bland = True
            else:
                degen_run = 0
        return FAILED, max_iter

    def _purge_artificials(self, st) -> None:
        """Pivot zero-valued artificials out of the basis where possible and
        pin every artificial to zero so phase 2 cannot revive them."""
        n_real = self.A.shape[1]
        for r in range(self.m):
            if st["basis"][r] < n_real:
                continue
            row = st["B_inv"][r] @ self.A
            row[st["in_basis"][:n_real]] = 0.0
            j_cands = np.flatnonzero(np.abs(row) > 1e-9)
            if j_cands.size == 0:
                continue  # redundant row, artificial stays basic at zero
            j = int(j_cands[0])
            leave = st["basis"][r]
            st["in_basis"][leave] = False
            st["in_basis"][j] = True
            st["basis"][r] = j
            w = st["B_inv"] @ st["A"][:, j]
            Br = st["B_inv"][r] / w[r]
            st["B_inv"] -= np.outer(w, Br)
            st["B_inv"][r] = Br
            st["nb_state"][leave] = _LOWER
        st["lo"][n_real:] = 0.0
        st["hi"][n_real:] = 0.0
        st["x"][n_real:] = np.where(st["in_basis"][n_real:], st["x"][n_real:], 0.0)

    # -- wrap-up --------------------------------------------------------------

    def _finish(self, st, c, status: str, iters: int) -> LpSolution:
        if status != OPTIMAL:
            return LpSolution(status=status, n_iterations=iters)
        self._refactor(st)
        x = st["x"]
        viol = 0.0
        if x.size:
            viol = float(np.maximum(st["lo"] - x, x - st["hi"]).max())
        if viol > max(self.tol_feas, 1e-7 * (1.0 + np.abs(self.b).sum())):
            return LpSolution(status=FAILED, n_iterations=iters)
        n_real = self.A.shape[1]
        values = x[: self.n_struct].copy()
        obj = float(c[: self.n_struct] @ values)
        basis_token = None
        if np.all(st["basis"] < n_real):
            basis_token = (st["basis"].copy(), st["nb_state"][:n_real].copy())
        return LpSolution(
            status=OPTIMAL, values=values, objective_value=obj,
            basis=basis_token, n_iterations=iters,
        )


def solve(lp: LinearProgram, tol_feas: float = 1e-7, tol_opt: float = 1e-7,
          warm: tuple | None = None) -> LpSolution:
    """One-shot convenience wrapper around ``SimplexSolver``."""
    return SimplexSolver(lp, tol_feas=tol_feas, tol_opt=tol_opt).solve(warm=warm)


def solve_with(lp: LinearProgram, backend: str = "bundled", **kwargs) -> LpSolution:
    """Adapter seam: ``bundled`` uses the reference simplex, ``scipy`` routes
    to scipy.optimize.linprog (HiGHS) when that package is installed."""
    if backend == "bundled":
        return solve(lp, **kwargs)
    if backend != "scipy":
        raise LpError(f"unknown backend {backend!r}")
    from scipy.optimize import linprog  # optional dependency

    A_ub, b_ub, A_eq, b_eq = [], [], [], []
    for vec, rel, rhs in lp.rows:
        if rel == LE:
            A_ub.append(vec)
            b_ub.append(rhs)
        elif rel == GE:
            A_ub.append(-vec)
            b_ub.append(-rhs)
        else:
            A_eq.append(vec)
            b_eq.append(rhs)
    res = linprog(
        lp.objective,
        A_ub=np.array(A_ub) if A_ub else None, b_ub=np.array(b_ub) if b_ub else None,
        A_eq=np.array(A_eq) if A_eq else None, b_eq=np.array(b_eq) if b_eq else None,
        bounds=list(zip(lp.lower, lp.upper)), method="highs",
    )
    if res.status == 0:
        return LpSolution(OPTIMAL, values=res.x, objective_value=float(res.fun))
    if res.status == 2:
        return LpSolution(INFEASIBLE)
    if res.status == 3:
        return LpSolution(UNBOUNDED)
    return LpSolution(FAILED)
