"""Write a Lyapunov-based candidate certificate for a scenario and check it.

P_tilde solves A_cl^T P + P A_cl = -I for the closed loop of each mode.  The
remaining matrices are simple scaled identities.  The candidate is only a
starting point: nothing here searches for a feasible certificate.

    python3 scripts/make_certificate.py --config paper-sec4 --out cert.yaml
"""
import argparse

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from etsmc import lmi
from etsmc.harness import config as C


def candidate(built, q_scale=0.1, r_scale=0.1, sign_fix=False):
    p_t, p_hat = [], []
    for mm, k, cp in zip(built.mode_mats, built.gains.k_mats, built.couplings):
        n_ag = cp.h_matrix.shape[0]
        a_cl = np.kron(np.eye(n_ag), mm.a_mat) + np.kron(cp.h_matrix, mm.b_mat @ k)
        p = solve_continuous_lyapunov(a_cl.T, -np.eye(a_cl.shape[0]))
        p_t.append(0.5 * (p + p.T))
        p_hat.append(np.eye(mm.n_x))
    n_x = built.mode_mats[0].n_x
    n_modes = len(p_t)
    return lmi.Certificate(p_tilde=p_t, p_hat=p_hat, q_mat=q_scale * np.eye(n_x),
                           r_mat=r_scale * np.eye(n_x), eps1=[1.0] * n_modes,
                           eps2=[1.0] * n_modes, k_mats=list(built.gains.k_mats),
                           delay=built.cfg.trigger.sample_period, phi_r_sign_fix=sign_fix)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="paper-sec4")
    ap.add_argument("--out", default="certificate.yaml")
    ap.add_argument("--sign-fix", action="store_true",
                    help="use negative delay blocks in Phi_r")
    a = ap.parse_args(argv)
    built = C.build(C.resolve(a.config))
    cert = candidate(built, sign_fix=a.sign_fix)
    lmi.save_certificate(cert, a.out)
    rep = lmi.verify(cert, built.mode_mats, [c.h_matrix for c in built.couplings], built.process)
    print(rep.to_text())
    print(f"wrote {a.out}; check again with: etsmc verify --certificate {a.out} --config {a.config}")


if __name__ == "__main__":
    main()
