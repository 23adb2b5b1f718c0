//! Planar special cases.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use super::{canonical, GeometryError, Polytope, Result, DUPLICATE_TOL};

/// In the plane every edge normal of `P ⊕ Q` is an edge normal of `P` or of
/// `Q`, so evaluating the summed support function on the union of normals is
/// exact.
pub(super) fn minkowski_sum(p: &Polytope, q: &Polytope) -> Result<Polytope> {
    let mut normals: Vec<DVector<f64>> = vec![];
    for set in [p, q] {
        for k in 0..set.num_rows() {
            let n = set.normals().row(k).transpose();
            if !normals.iter().any(|m| (m - &n).amax() <= DUPLICATE_TOL) {
                normals.push(n);
            }
        }
    }
    let mut a = DMatrix::zeros(normals.len(), 2);
    let mut b = DVector::zeros(normals.len());
    for (k, n) in normals.iter().enumerate() {
        a.row_mut(k).copy_from(&n.transpose());
        b[k] = p.support(n)? + q.support(n)?;
    }
    canonical(a, b, 2)
}

/// Counter-clockwise vertex loop. Full-dimensional polygons are walked facet
/// by facet in angular order; flat sets fall back to their extreme points.
pub(super) fn vertices(p: &Polytope) -> Result<Vec<DVector<f64>>> {
    if p.is_empty() {
        return Ok(vec![]);
    }
    let (center, radius) = p.chebyshev_center()?;
    if radius <= 1e-9 {
        return flat_vertices(p, &center);
    }
    let mut order: Vec<(f64, usize)> = (0..p.num_rows())
        .map(|k| {
            let n = p.normals().row(k);
            (n[1].atan2(n[0]), k)
        })
        .collect();
    order.sort_by(|x, y| x.0.total_cmp(&y.0));
    let m = order.len();
    let mut out: Vec<DVector<f64>> = vec![];
    for i in 0..m {
        let (k1, k2) = (order[i].1, order[(i + 1) % m].1);
        let mat = Matrix2::new(
            p.normals()[(k1, 0)],
            p.normals()[(k1, 1)],
            p.normals()[(k2, 0)],
            p.normals()[(k2, 1)],
        );
        let rhs = Vector2::new(p.offsets()[k1], p.offsets()[k2]);
        let Some(inv) = mat.try_inverse() else {
            return Err(GeometryError::Unbounded { op: "vertices_2d" });
        };
        let v = inv * rhs;
        let v = DVector::from_vec(vec![v[0], v[1]]);
        if out.last().is_none_or(|last: &DVector<f64>| (last - &v).amax() > 1e-10) {
            out.push(v);
        }
    }
    if out.len() > 1 && (&out[0] - out.last().unwrap()).amax() <= 1e-10 {
        out.pop();
    }
    Ok(out)
}

fn flat_vertices(p: &Polytope, center: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
    let (lo, hi) = p.bounding_box()?;
    let span = &hi - &lo;
    if span.amax() <= 1e-12 {
        return Ok(vec![center.clone()]);
    }
    // the segment direction is along the larger box extent; its sign is
    // recovered from the extreme points
    let dir = if span[0] >= span[1] {
        DVector::from_vec(vec![1.0, 0.0])
    } else {
        DVector::from_vec(vec![0.0, 1.0])
    };
    let (_, a) = p.support_point(&dir)?;
    let (_, b) = p.support_point(&(-&dir))?;
    Ok(vec![b, a])
}

/// `{M x : x in p}` for a bounded planar set, via the hull of mapped vertices.
pub(super) fn affine_image(p: &Polytope, m: &DMatrix<f64>) -> Result<Polytope> {
    let pts: Vec<Vector2<f64>> = vertices(p)?
        .iter()
        .map(|v| {
            let y = m * v;
            Vector2::new(y[0], y[1])
        })
        .collect();
    hull_polytope(&pts)
}

/// Halfspace form of the convex hull of finitely many planar points. Flat
/// hulls become a segment (or a point) bounded by a pair of opposite rows
/// and two end caps.
pub(super) fn hull_polytope(points: &[Vector2<f64>]) -> Result<Polytope> {
    if points.is_empty() {
        return Ok(Polytope::empty(2));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    let scale = pts.iter().map(|p| p.amax()).fold(1.0, f64::max);
    let cross = |o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>| (a - o).perp(&(b - o));
    let area_tol = 1e-12 * scale * scale;
    let mut hull: Vec<Vector2<f64>> = vec![];
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Vector2<f64>>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for p in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= area_tol {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }

    let width = if hull.len() >= 3 {
        // smallest distance from an edge line to the farthest hull point
        (0..hull.len())
            .map(|i| {
                let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
                let len = (b - a).norm();
                hull.iter().map(|p| cross(&a, &b, p) / len).fold(0.0, f64::max)
            })
            .fold(f64::INFINITY, f64::min)
    } else {
        0.0
    };
    if hull.len() >= 3 && width > 1e-9 * scale {
        let k = hull.len();
        let mut a = DMatrix::zeros(k, 2);
        let mut b = DVector::zeros(k);
        for i in 0..k {
            let (p, q) = (hull[i], hull[(i + 1) % k]);
            let edge = (q - p).normalize();
            // counter-clockwise loop: outward normal is the edge turned clockwise
            let n = Vector2::new(edge.y, -edge.x);
            a[(i, 0)] = n.x;
            a[(i, 1)] = n.y;
            b[i] = n.dot(&p).max(n.dot(&q));
        }
        return Ok(Polytope::from_canonical_rows(a, b));
    }

    // flat: principal direction from the two farthest points
    let (lo, hi) = pts
        .iter()
        .flat_map(|p| pts.iter().map(move |q| (p, q)))
        .max_by(|x, y| (x.0 - x.1).norm().total_cmp(&(y.0 - y.1).norm()))
        .unwrap();
    let span = hi - lo;
    if span.norm() <= 1e-14 * scale {
        return Ok(Polytope::point(&DVector::from_vec(vec![lo.x, lo.y])));
    }
    let d = span.normalize();
    let n = Vector2::new(-d.y, d.x);
    let (nmin, nmax) = pts.iter().map(|p| n.dot(p)).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (dmin, dmax) = pts.iter().map(|p| d.dot(p)).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let a = DMatrix::from_row_slice(4, 2, &[n.x, n.y, -n.x, -n.y, d.x, d.y, -d.x, -d.y]);
    let b = DVector::from_vec(vec![nmax, -nmin, dmax, -dmin]);
    Ok(Polytope::from_canonical_rows(a, b))
}
