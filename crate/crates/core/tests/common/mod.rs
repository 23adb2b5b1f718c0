//! Test-only oracles. Nothing in here calls the set-algebra routines it is
//! used to check: vertices come from brute-force enumeration of row subsets,
//! hulls from a monotone chain, distances from explicit geometry.

#![allow(dead_code)]

use dswmpc::geometry::Polytope;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// All vertices of a bounded polytope by solving every `dim`-subset of rows.
pub fn brute_force_vertices(p: &Polytope) -> Vec<DVector<f64>> {
    let dim = p.dim();
    let m = p.num_rows();
    let a = p.normals();
    let b = p.offsets();
    let mut out: Vec<DVector<f64>> = vec![];
    let mut idx: Vec<usize> = (0..dim).collect();
    if m < dim {
        return out;
    }
    loop {
        let mut sub = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        for (r, &k) in idx.iter().enumerate() {
            sub.row_mut(r).copy_from(&a.row(k));
            rhs[r] = b[k];
        }
        if let Some(v) = sub.clone().lu().solve(&rhs) {
            let resid = (&sub * &v - &rhs).amax();
            let inside = (a * &v - b).iter().all(|&s| s <= 1e-8);
            if resid < 1e-9 && inside && !out.iter().any(|w| (w - &v).amax() < 1e-9) {
                out.push(v);
            }
        }
        // next combination
        let mut i = dim;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] < m - dim + i {
                idx[i] += 1;
                for j in i + 1..dim {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Andrew's monotone chain, counter-clockwise, collinear points dropped.
pub fn hull_2d(points: &[DVector<f64>]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.iter().map(|p| [p[0], p[1]]).collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup_by(|a, b| (a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
    if pts.len() <= 2 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut lower: Vec<[f64; 2]> = vec![];
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 1e-14 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<[f64; 2]> = vec![];
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 1e-14 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    };
    let d = [p[0] - a[0] - t * ab[0], p[1] - a[1] - t * ab[1]];
    (d[0] * d[0] + d[1] * d[1]).sqrt()
}

/// Distance from a point to a convex polygon given as a CCW loop.
pub fn point_polygon_distance(p: [f64; 2], poly: &[[f64; 2]]) -> f64 {
    match poly.len() {
        0 => f64::INFINITY,
        1 => ((p[0] - poly[0][0]).powi(2) + (p[1] - poly[0][1]).powi(2)).sqrt(),
        2 => point_segment_distance(p, poly[0], poly[1]),
        n => {
            let inside = (0..n).all(|i| {
                let a = poly[i];
                let b = poly[(i + 1) % n];
                (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= -1e-12
            });
            if inside {
                return 0.0;
            }
            (0..n)
                .map(|i| point_segment_distance(p, poly[i], poly[(i + 1) % n]))
                .fold(f64::INFINITY, f64::min)
        }
    }
}

/// Exact Hausdorff distance between two convex polygons given as vertex loops.
pub fn hausdorff_2d(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let ab = a.iter().map(|&p| point_polygon_distance(p, b)).fold(0.0, f64::max);
    let ba = b.iter().map(|&p| point_polygon_distance(p, a)).fold(0.0, f64::max);
    ab.max(ba)
}

/// Hausdorff distance between a polytope (via brute-force vertices) and a hull.
pub fn hausdorff_to_hull(p: &Polytope, hull: &[[f64; 2]]) -> f64 {
    let verts = hull_2d(&brute_force_vertices(p));
    hausdorff_2d(&verts, hull)
}

/// Random bounded polytope: `m` halfspaces around a random center with a
/// bounding box so the result is always bounded and full-dimensional.
pub fn random_polytope(rng: &mut impl Rng, dim: usize, m: usize) -> Polytope {
    let center: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.5..0.5)).collect();
    let mut rows: Vec<Vec<f64>> = vec![];
    let mut offsets = vec![];
    for _ in 0..m {
        let mut n: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = n.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
        n.iter_mut().for_each(|v| *v /= norm);
        let dot: f64 = n.iter().zip(&center).map(|(a, c)| a * c).sum();
        offsets.push(dot + rng.random_range(0.3..1.5));
        rows.push(n);
    }
    for i in 0..dim {
        let mut e = vec![0.0; dim];
        e[i] = 1.0;
        rows.push(e.clone());
        offsets.push(center[i] + rng.random_range(1.0..2.0));
        e[i] = -1.0;
        rows.push(e);
        offsets.push(-center[i] + rng.random_range(1.0..2.0));
    }
    Polytope::from_rows(dim, &rows, &offsets).expect("random polytope")
}

/// Random symmetric polytope containing the origin in its interior.
pub fn random_origin_polytope(rng: &mut impl Rng, dim: usize, m: usize, scale: f64) -> Polytope {
    let mut rows: Vec<Vec<f64>> = vec![];
    let mut offsets = vec![];
    for _ in 0..m {
        let n: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let off = scale * rng.random_range(0.5..1.0);
        rows.push(n.clone());
        offsets.push(off);
        rows.push(n.iter().map(|v| -v).collect());
        offsets.push(off);
    }
    for i in 0..dim {
        let mut e = vec![0.0; dim];
        e[i] = 1.0;
        rows.push(e.clone());
        offsets.push(scale);
        e[i] = -1.0;
        rows.push(e);
        offsets.push(scale);
    }
    Polytope::from_rows(dim, &rows, &offsets).expect("random origin polytope")
}

/// Random matrix with spectral radius below `rho` (rescaled if needed).
pub fn random_stable_matrix(rng: &mut impl Rng, dim: usize, rho: f64) -> DMatrix<f64> {
    let m = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
    let radius = m
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max);
    if radius < 1e-9 {
        return m;
    }
    m * (rho * rng.random_range(0.3..1.0) / radius)
}

/// Uniform samples from a bounded polytope by rejection in its bounding box.
pub fn sample_points(rng: &mut impl Rng, p: &Polytope, n: usize) -> Vec<DVector<f64>> {
    let (lo, hi) = p.bounding_box().expect("bounded");
    let mut out = vec![];
    let mut tries = 0;
    while out.len() < n && tries < 200 * n {
        tries += 1;
        let x = DVector::from_fn(p.dim(), |i, _| {
            if hi[i] > lo[i] {
                rng.random_range(lo[i]..hi[i])
            } else {
                lo[i]
            }
        });
        if p.contains(&x, 0.0) {
            out.push(x);
        }
    }
    out
}

pub fn boxed(lo: f64, hi: f64) -> Polytope {
    Polytope::bounds(&[lo], &[hi]).unwrap()
}

pub fn interval(p: &Polytope) -> (f64, f64) {
    let (lo, hi) = p.bounding_box().unwrap();
    (lo[0], hi[0])
}
