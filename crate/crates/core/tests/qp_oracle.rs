mod common;

use common::rng;
use dswmpc::qp::{kkt_residuals, solve_qp, QpProblem};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Projected gradient with momentum restarts on the dual:
/// minimize ½ (f + A'λ)' H⁻¹ (f + A'λ) + b'λ over λ_in ≥ 0, λ_eq free.
fn dual_gradient_oracle(p: &QpProblem) -> DVector<f64> {
    let ginv = p.h.clone().try_inverse().unwrap();
    let meq = p.a_eq.nrows();
    let m = meq + p.a_in.nrows();
    let n = p.dim();
    let mut a = DMatrix::zeros(m, n);
    let mut b = DVector::zeros(m);
    for k in 0..meq {
        a.row_mut(k).copy_from(&p.a_eq.row(k));
        b[k] = p.b_eq[k];
    }
    for k in 0..p.a_in.nrows() {
        a.row_mut(meq + k).copy_from(&p.a_in.row(k));
        b[meq + k] = p.b_in[k];
    }
    let agat = &a * &ginv * a.transpose();
    let lip = agat.symmetric_eigenvalues().max().max(1e-12);
    let primal = |lam: &DVector<f64>| -(&ginv * (&p.f + a.tr_mul(lam)));
    let project = |lam: &mut DVector<f64>| {
        for k in meq..m {
            lam[k] = lam[k].max(0.0);
        }
    };
    let dual_obj = |lam: &DVector<f64>| {
        let v = &p.f + a.tr_mul(lam);
        0.5 * v.dot(&(&ginv * &v)) + b.dot(lam)
    };
    let mut lam = DVector::zeros(m);
    let mut y = lam.clone();
    let mut t = 1.0f64;
    let mut x = primal(&lam);
    for _ in 0..60_000 {
        let grad = -(&a * primal(&y)) + &b;
        let mut next = &y - grad / lip;
        project(&mut next);
        if dual_obj(&next) > dual_obj(&lam) {
            // restart momentum
            t = 1.0;
            y = lam.clone();
            continue;
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        y = &next + (&next - &lam) * ((t - 1.0) / t_next);
        t = t_next;
        let x_next = primal(&next);
        let moved = (&x_next - &x).amax();
        lam = next;
        x = x_next;
        if moved < 1e-14 {
            break;
        }
    }
    x
}

fn random_qp(r: &mut impl Rng, n: usize, m: usize, with_eq: bool) -> QpProblem {
    let mh = DMatrix::from_fn(n, n, |_, _| r.random_range(-1.0..1.0));
    let h = mh.transpose() * &mh + DMatrix::identity(n, n) * 0.5;
    let f = DVector::from_fn(n, |_, _| r.random_range(-3.0..3.0));
    let feasible = DVector::from_fn(n, |_, _| r.random_range(-0.5..0.5));
    let a_in = DMatrix::from_fn(m, n, |_, _| r.random_range(-1.0..1.0));
    let b_in = &a_in * &feasible + DVector::from_fn(m, |_, _| r.random_range(0.0..0.5));
    let mut p = QpProblem::new(h, f).with_inequalities(a_in, b_in);
    if with_eq {
        let a_eq = DMatrix::from_fn(1, n, |_, _| r.random_range(-1.0..1.0));
        let b_eq = &a_eq * &feasible;
        p = p.with_equalities(a_eq, b_eq);
    }
    p
}

#[test]
fn random_qps_match_first_order_oracle() {
    let mut r = rng(21);
    let mut worst_gap: f64 = 0.0;
    let mut worst_kkt: f64 = 0.0;
    for k in 0..200 {
        let n = 2 + k % 5;
        let m = 2 * n + k % 4;
        let p = random_qp(&mut r, n, m, k % 3 == 0);
        let s = solve_qp(&p).unwrap();
        worst_kkt = worst_kkt.max(kkt_residuals(&p, &s).max());
        let oracle = dual_gradient_oracle(&p);
        worst_gap = worst_gap.max((&s.x - &oracle).amax());
    }
    eprintln!("worst kkt {worst_kkt:e}, worst oracle gap {worst_gap:e}");
    assert!(worst_kkt <= 1e-8, "kkt {worst_kkt}");
    assert!(worst_gap <= 1e-6, "gap {worst_gap}");
}

#[test]
fn solver_is_deterministic() {
    let mut r = rng(22);
    let p = random_qp(&mut r, 6, 14, true);
    let a = solve_qp(&p).unwrap();
    let b = solve_qp(&p).unwrap();
    assert_eq!(a.x.as_slice(), b.x.as_slice());
    assert_eq!(a.active, b.active);
}
