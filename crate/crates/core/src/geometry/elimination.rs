//! Fourier–Motzkin projection with redundancy pruning after every eliminated
//! coordinate.

use nalgebra::{DMatrix, DVector};

use super::{canonical, Polytope, Result};

const COEFF_TOL: f64 = 1e-12;

pub(super) fn project_out(p: &Polytope, coords: &[usize]) -> Result<Polytope> {
    let mut current = p.clone();
    // track which original coordinates are still present
    let mut alive: Vec<usize> = (0..p.dim()).collect();
    let mut pending: Vec<usize> = coords.to_vec();
    while !pending.is_empty() {
        if current.is_empty() {
            return Ok(Polytope::empty(p.dim() - coords.len()));
        }
        // eliminate the pending coordinate producing the fewest new rows
        let (slot, _) = pending
            .iter()
            .enumerate()
            .map(|(slot, &orig)| {
                let col = alive.iter().position(|&c| c == orig).expect("pending coordinate alive");
                (slot, fm_cost(current.normals(), col))
            })
            .min_by_key(|&(_, cost)| cost)
            .expect("pending nonempty");
        let orig = pending.swap_remove(slot);
        let col = alive.iter().position(|&c| c == orig).expect("pending coordinate alive");
        let (a, b) = eliminate(current.normals(), current.offsets(), col);
        alive.remove(col);
        current = canonical(a, b, alive.len())?;
    }
    Ok(current)
}

fn fm_cost(a: &DMatrix<f64>, col: usize) -> usize {
    let pos = a.column(col).iter().filter(|&&v| v > COEFF_TOL).count();
    let neg = a.column(col).iter().filter(|&&v| v < -COEFF_TOL).count();
    let zero = a.nrows() - pos - neg;
    zero + pos * neg
}

/// One Fourier–Motzkin step: remove column `col`, combining every row with a
/// positive coefficient with every row with a negative one.
fn eliminate(a: &DMatrix<f64>, b: &DVector<f64>, col: usize) -> (DMatrix<f64>, DVector<f64>) {
    let dim = a.ncols();
    let mut pos = vec![];
    let mut neg = vec![];
    let mut zero = vec![];
    for k in 0..a.nrows() {
        let c = a[(k, col)];
        if c > COEFF_TOL {
            pos.push(k);
        } else if c < -COEFF_TOL {
            neg.push(k);
        } else {
            zero.push(k);
        }
    }
    let count = zero.len() + pos.len() * neg.len();
    let mut out_a = DMatrix::zeros(count, dim - 1);
    let mut out_b = DVector::zeros(count);
    let copy_without = |dst: &mut DMatrix<f64>, r: usize, src: &DVector<f64>| {
        let mut j_out = 0;
        for j in 0..dim {
            if j != col {
                dst[(r, j_out)] = src[j];
                j_out += 1;
            }
        }
    };
    let mut r = 0;
    for &k in &zero {
        copy_without(&mut out_a, r, &a.row(k).transpose());
        out_b[r] = b[k];
        r += 1;
    }
    for &p in &pos {
        let cp = a[(p, col)];
        for &n in &neg {
            let cn = -a[(n, col)];
            let row = a.row(p).transpose() / cp + a.row(n).transpose() / cn;
            copy_without(&mut out_a, r, &row);
            out_b[r] = b[p] / cp + b[n] / cn;
            r += 1;
        }
    }
    (out_a, out_b)
}
