"""Assembly and numerical checking of the block matrix inequalities.

Nothing here synthesizes certificates: candidate matrices are supplied by
the caller (or drawn by :func:`random_search`) and every block is tested for
definiteness through its extremal eigenvalue.

Stacked ("tilde") quantities have dimension n = N * n_x.  Per-agent matrices
(P_hat, Q, R, M, N) are lifted with I_N kron (.).
"""
import json
from dataclasses import dataclass, field, fields
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import yaml

from .errors import AsymmetricInput, DimensionMismatch
from .plant import ModeMatrices

DEFAULT_TOL = 1e-8
SENSES = ("neg", "pos", "nsd", "psd")


def _sym(x):
    # (a + b) == (b + a) in IEEE arithmetic, so the result is exactly symmetric
    return 0.5 * (x + x.T)


def check_definite(m, sense="neg", tol=DEFAULT_TOL):
    """Return ``(passed, margin)`` where margin is the relevant extremal eigenvalue.

    ``neg``: max eig < -tol; ``pos``: min eig > tol; ``nsd``: max eig <= tol;
    ``psd``: min eig >= -tol.
    """
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if sense not in SENSES:
        raise ValueError(f"sense must be one of {SENSES}")
    scale = max(1.0, float(np.abs(m).max(initial=0.0)))
    if m.shape[0] != m.shape[1] or np.abs(m - m.T).max(initial=0.0) > 1e-10 * scale:
        raise AsymmetricInput("definiteness test needs a symmetric matrix")
    eig = np.linalg.eigvalsh(_sym(m))
    if sense in ("neg", "nsd"):
        margin = float(eig.max())
        ok = margin < -tol if sense == "neg" else margin <= tol
    else:
        margin = float(eig.min())
        ok = margin > tol if sense == "pos" else margin >= -tol
    return bool(ok), margin


@dataclass
class Certificate:
    """Candidate matrices for the stability tests, one entry per mode where listed.

    ``p_tilde``, ``slack_h``, ``slack_n`` and ``q_tilde_e`` are stacked
    (n x n); ``p_hat``, ``q_mat``, ``r_mat`` are per agent (n_x x n_x).
    Event-triggered fields (``p_nonsingular`` ... ``m3``) are optional.
    """

    p_tilde: List[np.ndarray]
    p_hat: List[np.ndarray]
    q_mat: np.ndarray
    r_mat: np.ndarray
    eps1: List[float]
    eps2: List[float]
    k_mats: List[np.ndarray]
    phi: Optional[np.ndarray] = None
    f_probe: Optional[np.ndarray] = None
    slack_h: Optional[np.ndarray] = None
    slack_n: Optional[np.ndarray] = None
    q_tilde_e: Optional[List[np.ndarray]] = None
    delay: float = 0.01
    hazard_probes: Sequence[float] = (0.1, 1.0, 10.0)
    phi_r_sign_fix: bool = False
    # event-triggered certificate
    p_nonsingular: Optional[np.ndarray] = None
    q1: Optional[np.ndarray] = None
    q2: Optional[np.ndarray] = None
    q_delay: Optional[np.ndarray] = None
    r_delay: Optional[np.ndarray] = None
    sigma1: float = 0.1
    sigma2: float = 0.0
    m1: Optional[np.ndarray] = None
    m2: Optional[np.ndarray] = None
    m3: Optional[np.ndarray] = None
    d_m: float = 0.0
    d_bar: float = 0.015
    tau_bar: float = 0.015

    def __post_init__(self):
        as_arr = lambda v: None if v is None else np.atleast_2d(np.asarray(v, dtype=float))
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("p_tilde", "p_hat", "k_mats", "q_tilde_e") and v is not None:
                setattr(self, f.name, [as_arr(x) for x in v])
            elif isinstance(v, (list, np.ndarray)) and f.name not in ("eps1", "eps2", "hazard_probes"):
                setattr(self, f.name, as_arr(v))
        for name in ("p_tilde", "p_hat", "q_mat", "r_mat", "phi", "slack_h", "slack_n",
                     "q1", "q2", "q_delay", "r_delay"):
            v = getattr(self, name)
            for mat in (v if isinstance(v, list) else [v]):
                if mat is not None:
                    s = max(1.0, float(np.abs(mat).max()))
                    if name in ("slack_h", "slack_n"):
                        continue
                    if np.abs(mat - mat.T).max() > 1e-10 * s:
                        raise AsymmetricInput(f"{name} must be symmetric")

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, np.ndarray):
                v = v.tolist()
            elif isinstance(v, (list, tuple)):
                v = [x.tolist() if isinstance(x, np.ndarray) else x for x in v]
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise DimensionMismatch(f"unknown certificate keys: {sorted(extra)}")
        return cls(**d)


def load_certificate(path) -> Certificate:
    with open(path) as fh:
        return Certificate.from_dict(yaml.safe_load(fh))


def save_certificate(cert: Certificate, path):
    with open(path, "w") as fh:
        yaml.safe_dump(cert.to_dict(), fh, sort_keys=False)


@dataclass
class BlockResult:
    name: str
    sense: str
    margin: float
    passed: bool


@dataclass
class FeasibilityReport:
    blocks: List[BlockResult] = field(default_factory=list)
    side: Dict[str, object] = field(default_factory=dict)
    unchecked: List[str] = field(default_factory=list)

    @property
    def passed(self):
        return all(b.passed for b in self.blocks) and self.side.get("ok", True)

    def add(self, name, mat, sense, tol=DEFAULT_TOL):
        ok, margin = check_definite(mat, sense, tol)
        self.blocks.append(BlockResult(name, sense, margin, ok))

    def merge(self, other: "FeasibilityReport"):
        self.blocks.extend(other.blocks)
        for k, v in other.side.items():
            if k == "ok":
                self.side["ok"] = self.side.get("ok", True) and v
            else:
                self.side[k] = v
        self.unchecked.extend(other.unchecked)
        return self

    def to_dict(self):
        return {"passed": self.passed,
                "blocks": [b.__dict__ for b in self.blocks],
                "side_conditions": self.side,
                "unchecked": self.unchecked}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, default=float)

    def to_text(self):
        lines = []
        for b in self.blocks:
            lines.append(f"{'PASS' if b.passed else 'FAIL'}  {b.name:<36} "
                         f"{b.sense}  margin={b.margin:+.3e}")
        for k, v in self.side.items():
            lines.append(f"side  {k:<36} {v}")
        for u in self.unchecked:
            lines.append(f"skip  {u}")
        lines.append(f"overall: {'feasible' if self.passed else 'not certified'}")
        return "\n".join(lines)


def _lift(mat, n):
    return np.kron(np.eye(n), mat)


def _null_spaces(e, tol=1e-10):
    """U with U E = 0 and V with E V = 0 (full-rank bases)."""
    u_, s, vt = np.linalg.svd(e)
    r = int((s > tol * max(1.0, s.max(initial=0.0))).sum())
    return u_[:, r:].T, vt[r:].T


def _closed_loop(mm: ModeMatrices, k, h_matrix):
    n = h_matrix.shape[0]
    return _lift(mm.a_mat, n), _lift(mm.b_mat, n) @ np.kron(h_matrix, k)


def assemble_theorem1(cert: Certificate, mms: Sequence[ModeMatrices], h_mats, hazard_rows,
                      mode: int):
    """Blocks for one mode and one hazard probe.

    ``hazard_rows[j]`` is pi_{mode, j}(b) at the probe.  Returns a dict with
    ``phi_r11``, ``lmi_m`` and ``phi_r`` (all exactly symmetric).
    """
    mm = mms[mode]
    h = np.asarray(h_mats[mode], dtype=float)
    n_ag = h.shape[0]
    n = n_ag * mm.n_x
    p_t = cert.p_tilde[mode]
    if p_t.shape != (n, n):
        raise DimensionMismatch(f"P_tilde must be {n}x{n}, got {p_t.shape}")
    e_t = _lift(mm.e_mat, n_ag)
    u_null, v_null = _null_spaces(e_t)
    a_t, bkh = _closed_loop(mm, cert.k_mats[mode], h)
    b_t = _lift(mm.b_mat, n_ag)
    d_t = _lift(mm.d_mat, n_ag)
    m_t = _lift(mm.m_mat, n_ag)
    n_t = _lift(mm.n_mat, n_ag)
    q_t = _lift(cert.q_mat, n_ag)

    def p_bar(j):
        pb = cert.p_tilde[j] @ e_t
        if cert.q_tilde_e is not None and u_null.shape[0]:
            pb = pb + u_null.T @ cert.q_tilde_e[j] @ v_null.T
        return pb

    pb_i = p_bar(mode)
    jump = sum(hazard_rows[j] * (e_t.T @ p_bar(j)) for j in range(len(mms)))
    a_cl = a_t + bkh
    sigma1 = _sym(jump) + pb_i @ a_cl + a_cl.T @ pb_i.T + d_t.T @ p_t @ d_t + q_t
    sigma1 = _sym(sigma1)
    if cert.f_probe is None:
        f_t = np.eye(m_t.shape[1])
    else:
        f_t = _lift(cert.f_probe, n_ag)
    eps1, eps2 = cert.eps1[mode], cert.eps2[mode]
    sigma2 = np.hstack([b_t, pb_i.T @ m_t, eps1 * n_t.T, n_t.T @ f_t.T @ m_t.T])
    w_t = _lift(mm.b_mat.T @ cert.p_hat[mode] @ mm.b_mat, n_ag)
    sigma3 = -_block_diag(w_t, eps1 * np.eye(m_t.shape[1]), eps1 * np.eye(n_t.shape[0]),
                          eps2 ** 2 * np.eye(n))
    phi11 = _sym(np.block([[sigma1, sigma2], [sigma2.T, sigma3]]))

    p_hat_inv = np.linalg.inv(cert.p_hat[mode])
    p_cols = mm.m_mat.shape[1]
    lmi_m = _sym(np.block([[-p_hat_inv, mm.m_mat],
                           [mm.m_mat.T, -eps2 * np.eye(p_cols)]]))

    sh = np.zeros((n, n)) if cert.slack_h is None else cert.slack_h
    sn = np.zeros((n, n)) if cert.slack_n is None else cert.slack_n
    r_t = _lift(cert.r_mat, n_ag)
    a = phi11.shape[0]
    top = np.zeros((a, n))
    top[:n] = sh @ e_t
    d = cert.delay
    sgn = -1.0 if cert.phi_r_sign_fix else 1.0
    z = np.zeros((n, n))
    za = np.zeros((a, n))
    phi_r = np.block([
        [phi11, top, za, za, za],
        [top.T, _sym((sn - sh) @ e_t), z, z, z],
        [za.T, z, q_t - _sym(sn @ e_t), z, z],
        [za.T, z, z, sgn * r_t / d, z],
        [za.T, z, z, z, sgn * d * e_t.T @ r_t @ e_t],
    ])
    return {"phi_r11": phi11, "lmi_m": lmi_m, "phi_r": _sym(phi_r)}


def _block_diag(*blocks):
    from scipy.linalg import block_diag
    return block_diag(*blocks)


def hazard_matrix_at(process, h):
    from .modes import hazard_row
    return np.array([hazard_row(process, i, h) for i in range(process.n_modes)])


def check_theorem1(cert: Certificate, mms, h_mats, process, tol=DEFAULT_TOL) -> FeasibilityReport:
    """Every block, for every mode and every hazard probe (scaled by mode mean sojourn)."""
    rep = FeasibilityReport()
    for i in range(len(mms)):
        mean = process.sojourn_laws[i].mean()
        for b in cert.hazard_probes:
            rows = hazard_matrix_at(process, b * mean)[i]
            blocks = assemble_theorem1(cert, mms, h_mats, rows, i)
            rep.add(f"thm1/mode{i}/h={b:g}/Phi_r11", blocks["phi_r11"], "neg", tol)
            rep.add(f"thm1/mode{i}/h={b:g}/Phi_r", blocks["phi_r"], "neg", tol)
        rep.add(f"thm1/mode{i}/[-P^-1 M; * -eps2 I]", blocks["lmi_m"], "neg", tol)
        rep.add(f"thm1/mode{i}/P_tilde", cert.p_tilde[i], "pos", tol)
        rep.add(f"thm1/mode{i}/P_hat", cert.p_hat[i], "pos", tol)
    rep.add("thm1/Q", cert.q_mat, "pos", tol)
    rep.add("thm1/R", cert.r_mat, "pos", tol)
    return rep


def assemble_theorem3(cert: Certificate, mm: ModeMatrices, h_matrix, mode: int):
    """Checkable part of the event-triggered inequality (C := 0, gamma row dropped).

    Returns ``{"varphi_1": ..., "varphi_2": ..., "lmi_m": ...}``.
    """
    h = np.asarray(h_matrix, dtype=float)
    n_ag = h.shape[0]
    n = n_ag * mm.n_x
    p = cert.p_nonsingular
    if p is None or p.shape != (n, n):
        raise DimensionMismatch(f"event-triggered certificate needs P of size {n}x{n}")
    a_t, bk = _closed_loop(mm, cert.k_mats[mode], h)
    e_t = _lift(mm.e_mat, n_ag)
    q1, q2, q, r, phi = cert.q1, cert.q2, cert.q_delay, cert.r_delay, cert.phi
    for name, mat in (("q1", q1), ("q2", q2), ("q_delay", q), ("r_delay", r), ("phi", phi)):
        if mat is None or mat.shape != (n, n):
            raise DimensionMismatch(f"{name} must be {n}x{n}")
    z = np.zeros((n, n))
    eye = np.eye(n)
    pbk = p.T @ bk
    xi = np.block([
        [p.T @ a_t + a_t.T @ p + q1 + q, pbk, z, z, pbk],
        [pbk.T, cert.sigma1 * phi - q, z, z, z],
        [z, z, q2 - q1, z, z],
        [z, z, z, -q2, z],
        [pbk.T, z, z, z, -phi + cert.sigma2 ** 2 * eye],
    ])
    for name in ("m1", "m2", "m3"):
        mat = getattr(cert, name)
        if mat is None or mat.shape != (5 * n, n):
            raise DimensionMismatch(f"{name} must be {5 * n}x{n}")
    m1, m2, m3 = cert.m1, cert.m2, cert.m3
    gamma = np.hstack([m1 @ e_t, (m3 - m2) @ e_t, (m2 - m1) @ e_t, -m3 @ e_t, np.zeros((5 * n, n))])
    ell = np.vstack([a_t.T, bk.T, z, z, bk.T])
    span = np.sqrt(max(cert.d_bar - cert.d_m, 0.0))
    out = {}
    for k, mk in ((1, m2), (2, m3)):
        theta = np.sqrt(cert.d_m) * m1 + span * mk
        top = _sym(xi + gamma + gamma.T)
        out[f"varphi_{k}"] = _sym(np.block([
            [top, theta, cert.tau_bar * ell @ r],
            [theta.T, -r, z],
            [(cert.tau_bar * ell @ r).T, z, -cert.tau_bar * r],
        ]))
    p_hat = cert.p_hat[mode]
    pm = p_hat @ mm.m_mat
    out["lmi_m"] = _sym(np.block([[-p_hat, pm],
                                  [pm.T, -cert.eps2[mode] * np.eye(mm.m_mat.shape[1])]]))
    return out


THEOREM3_UNCHECKED = [
    "thm3/L1 column (C and D K undefined for this system)",
    "thm3/L2 and gamma row (G_bar, H_bar, gamma undefined)",
]


def check_theorem3(cert: Certificate, mms, h_mats, tol=DEFAULT_TOL) -> FeasibilityReport:
    rep = FeasibilityReport(unchecked=list(THEOREM3_UNCHECKED))
    for i, mm in enumerate(mms):
        blocks = assemble_theorem3(cert, mm, h_mats[i], i)
        for name, mat in blocks.items():
            rep.add(f"thm3/mode{i}/{name}", mat, "neg", tol)
    for name in ("q1", "q2", "q_delay", "r_delay", "phi"):
        rep.add(f"thm3/{name}", getattr(cert, name), "pos", tol)
    return rep


def regularity(e, a, rng=None, n_probes=8):
    """det(sE - A) not identically zero, tested at random complex probe points."""
    rng = np.random.default_rng(0) if rng is None else rng
    s = rng.uniform(-2, 2, n_probes) + 1j * rng.uniform(-2, 2, n_probes)
    vals = np.array([np.linalg.det(si * e - a) for si in s])
    scale = max(1.0, np.abs(a).max(initial=0.0), np.abs(e).max(initial=0.0)) ** e.shape[0]
    return bool(np.abs(vals).max() > 1e-10 * scale)


def _radius(e, a):
    ne = float(np.linalg.norm(e, 2))
    return max(float(np.linalg.norm(a, 2)) / ne, 1e-3) if ne > 0 else 1.0


def det_polynomial(e, a, radius=None, scaled=False):
    """Coefficients c_k of det(sE - A) = sum c_k s^k, by an FFT on a circle.

    The default radius ||A|| / ||E|| keeps the samples well scaled.  With
    ``scaled=True`` the balanced values c_k r^k are returned instead.
    """
    n = e.shape[0]
    m = n + 1
    r = _radius(e, a) if radius is None else radius
    s = r * np.exp(2j * np.pi * np.arange(m) / m)
    vals = np.array([np.linalg.det(si * e - a) for si in s])
    coeff = (np.fft.fft(vals) / m).real
    return coeff if scaled else coeff * r ** -np.arange(m)


def impulse_free(e, a, tol=1e-9):
    """Verdict from rank [[E, 0], [A, E]] == n + rank E; also returns deg det(sE - A)."""
    n = e.shape[0]
    rank = int(np.linalg.matrix_rank(e))
    big = np.block([[e, np.zeros_like(e)], [a, e]])
    ok = int(np.linalg.matrix_rank(big)) == n + rank
    g = np.abs(det_polynomial(e, a, scaled=True))
    nz = np.flatnonzero(g > tol * max(g.max(initial=0.0), 1e-300))
    deg = int(nz.max()) if nz.size else -1
    return bool(ok), deg, rank


def check_side_conditions(cert: Certificate, mms, h_mats=None, tol=1e-9) -> FeasibilityReport:
    rep = FeasibilityReport()
    ok = True
    rng = np.random.default_rng(12345)
    for i, mm in enumerate(mms):
        bpd = float(np.linalg.norm(mm.b_mat.T @ cert.p_hat[i] @ mm.d_mat))
        rep.side[f"mode{i}/bpd_zero_residual"] = bpd
        ok &= bpd <= tol
        if h_mats is not None:
            a_t, bkh = _closed_loop(mm, cert.k_mats[i], np.asarray(h_mats[i]))
            e_t = _lift(mm.e_mat, np.asarray(h_mats[i]).shape[0])
            a_cl = a_t + bkh
        else:
            e_t, a_cl = mm.e_mat, mm.a_mat
        reg = regularity(e_t, a_cl, rng)
        imp, deg, rank = impulse_free(e_t, a_cl)
        rep.side[f"mode{i}/regular"] = reg
        rep.side[f"mode{i}/impulse_free"] = imp
        rep.side[f"mode{i}/det_degree"] = deg
        rep.side[f"mode{i}/rank_E"] = rank
        ok &= reg and imp
        if cert.p_nonsingular is not None:
            ep = e_t.T @ cert.p_nonsingular
            res = float(np.abs(ep - cert.p_nonsingular.T @ e_t).max())
            rep.side[f"mode{i}/ep_symmetry_residual"] = res
            ok &= res <= tol
            if res <= tol:
                psd, _ = check_definite(_sym(ep), "psd", tol)
                rep.side[f"mode{i}/EtP_psd"] = psd
                ok &= psd
    rep.side["ok"] = bool(ok)
    return rep


def verify(cert: Certificate, mms, h_mats, process, tol=DEFAULT_TOL) -> FeasibilityReport:
    rep = check_theorem1(cert, mms, h_mats, process, tol)
    rep.merge(check_side_conditions(cert, mms, h_mats))
    if cert.p_nonsingular is not None:
        rep.merge(check_theorem3(cert, mms, h_mats, tol))
    else:
        rep.unchecked.append("thm3 (no event-triggered certificate supplied)")
    return rep


@dataclass
class SearchResult:
    candidate: object
    params: np.ndarray
    score: float
    found: bool
    evaluated: int
    blocks: List[BlockResult]

    @property
    def status(self):
        return "feasible candidate found" if self.found else "none found in budget"


def _score(blocks):
    """Worst signed margin; negative means every block holds."""
    worst = -np.inf
    for name, mat, sense in blocks:
        _, m = check_definite(mat, sense, 0.0)
        worst = max(worst, m if sense in ("neg", "nsd") else -m)
    return worst


def random_search(assembler: Callable, bounds, budget: int, rng: np.random.Generator,
                  tol=DEFAULT_TOL) -> SearchResult:
    """Uniform sampling inside box ``bounds``; keeps the best-margin candidate.

    ``assembler(params)`` returns ``(candidate, [(name, matrix, sense), ...])``.
    Failing to find a candidate is never evidence of infeasibility.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    lo, hi = np.asarray(bounds, dtype=float).T
    best = None
    for _ in range(budget):
        params = rng.uniform(lo, hi)
        cand, blocks = assembler(params)
        sc = _score(blocks)
        if best is None or sc < best[2]:
            best = (cand, params, sc, blocks)
    cand, params, sc, blocks = best
    results = [BlockResult(name, sense, *reversed(check_definite(mat, sense, tol)))
               for name, mat, sense in blocks]
    found = all(r.passed for r in results)
    return SearchResult(cand, params, float(sc), found, budget, results)
