mod common;

use common::*;
use dswmpc::geometry::Polytope;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

fn duplicated(p: &Polytope, extra: usize) -> Polytope {
    let mut rows: Vec<Vec<f64>> = (0..p.num_rows()).map(|k| p.normals().row(k).iter().copied().collect()).collect();
    let mut offsets: Vec<f64> = p.offsets().iter().copied().collect();
    for k in 0..extra {
        let r = k % p.num_rows();
        // same halfspace, scaled differently
        rows.push(rows[r].iter().map(|v| v * 3.0).collect());
        offsets.push(offsets[r] * 3.0);
    }
    Polytope::from_rows(p.dim(), &rows, &offsets).unwrap()
}

#[test]
fn canonicalize_removes_duplicates() {
    let mut r = rng(1);
    for _ in 0..20 {
        let p = random_polytope(&mut r, 2, 6);
        let d = duplicated(&p, 3);
        assert_eq!(d.num_rows(), p.num_rows());
        assert!(d.is_subset(&p, 1e-9).unwrap() && p.is_subset(&d, 1e-9).unwrap());
        let again = d.canonicalize().unwrap();
        assert_eq!(again.num_rows(), d.num_rows());
    }
}

#[test]
fn minkowski_matches_vertex_sum_hull() {
    let mut r = rng(2);
    for _ in 0..100 {
        let p = random_polytope(&mut r, 2, 5);
        let q = random_polytope(&mut r, 2, 4).scale(0.5);
        let sum = p.minkowski_sum(&q).unwrap();
        let mut pts = vec![];
        for a in brute_force_vertices(&p) {
            for b in brute_force_vertices(&q) {
                pts.push(&a + &b);
            }
        }
        let hull = hull_2d(&pts);
        assert!(hausdorff_to_hull(&sum, &hull) <= 1e-6);
    }
}

#[test]
fn minkowski_by_elimination_in_three_dims() {
    let mut r = rng(3);
    for _ in 0..10 {
        let p = random_polytope(&mut r, 3, 4);
        let q = random_polytope(&mut r, 3, 3).scale(0.3);
        let sum = p.minkowski_sum(&q).unwrap();
        // every vertex sum lies in the result and supports agree
        let pv = brute_force_vertices(&p);
        let qv = brute_force_vertices(&q);
        for a in &pv {
            for b in &qv {
                assert!(sum.contains(&(a + b), 1e-7));
            }
        }
        for _ in 0..20 {
            let d = DVector::from_fn(3, |_, _| r.random_range(-1.0..1.0));
            let hp = pv.iter().map(|v| v.dot(&d)).fold(f64::MIN, f64::max);
            let hq = qv.iter().map(|v| v.dot(&d)).fold(f64::MIN, f64::max);
            assert!((sum.support(&d).unwrap() - hp - hq).abs() <= 1e-7);
        }
    }
}

#[test]
fn pontryagin_difference_is_tight_and_sound() {
    let mut r = rng(4);
    let mut checked = 0;
    for _ in 0..100 {
        let p = random_polytope(&mut r, 2, 5);
        let q = random_origin_polytope(&mut r, 2, 2, 0.2);
        let diff = p.pontryagin_diff(&q).unwrap();
        if diff.is_empty() {
            continue;
        }
        checked += 1;
        let back = diff.minkowski_sum(&q).unwrap();
        assert!(back.is_subset(&p, 1e-7).unwrap());
        // sampling: x in P ⊖ Q and every vertex q of Q gives x + q in P
        let qv = brute_force_vertices(&q);
        for x in sample_points(&mut r, &diff, 20) {
            for v in &qv {
                assert!(p.contains(&(&x + v), 1e-9));
            }
        }
    }
    assert!(checked > 50);
}

#[test]
fn rotation_matches_rotated_vertices() {
    let mut r = rng(5);
    let rot = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
    for _ in 0..100 {
        let p = random_polytope(&mut r, 2, 5);
        let img = p.affine_image(&rot).unwrap();
        let pts: Vec<DVector<f64>> = brute_force_vertices(&p).iter().map(|v| &rot * v).collect();
        assert!(hausdorff_to_hull(&img, &hull_2d(&pts)) <= 1e-6);
    }
}

#[test]
fn general_linear_image_matches_vertices() {
    let mut r = rng(6);
    for _ in 0..30 {
        let p = random_polytope(&mut r, 2, 5);
        let m = DMatrix::from_fn(2, 2, |_, _| r.random_range(-1.5..1.5));
        let img = p.affine_image(&m).unwrap();
        let pts: Vec<DVector<f64>> = brute_force_vertices(&p).iter().map(|v| &m * v).collect();
        assert!(hausdorff_to_hull(&img, &hull_2d(&pts)) <= 1e-6);
    }
}

#[test]
fn projection_matches_projected_vertices() {
    let mut r = rng(7);
    for _ in 0..30 {
        let p = random_polytope(&mut r, 3, 5);
        let proj = p.project_out(&[2]).unwrap();
        let pts: Vec<DVector<f64>> = brute_force_vertices(&p)
            .iter()
            .map(|v| DVector::from_vec(vec![v[0], v[1]]))
            .collect();
        assert!(hausdorff_to_hull(&proj, &hull_2d(&pts)) <= 1e-6);
    }
}

#[test]
fn support_matches_vertex_maximum() {
    let mut r = rng(8);
    for _ in 0..50 {
        let p = random_polytope(&mut r, 2, 6);
        let verts = brute_force_vertices(&p);
        for _ in 0..10 {
            let d = DVector::from_fn(2, |_, _| r.random_range(-1.0..1.0));
            let best = verts.iter().map(|v| v.dot(&d)).fold(f64::MIN, f64::max);
            assert!((p.support(&d).unwrap() - best).abs() <= 1e-9);
        }
    }
}

#[test]
fn library_vertex_loop_agrees_with_brute_force() {
    let mut r = rng(9);
    for _ in 0..50 {
        let p = random_polytope(&mut r, 2, 6);
        let lib: Vec<[f64; 2]> = p.vertices_2d().unwrap().iter().map(|v| [v[0], v[1]]).collect();
        let oracle = hull_2d(&brute_force_vertices(&p));
        assert_eq!(lib.len(), oracle.len());
        assert!(hausdorff_2d(&lib, &oracle) <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn canonicalize_is_idempotent(seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = random_polytope(&mut r, 2, 7);
        let c = p.canonicalize().unwrap();
        prop_assert_eq!(c.num_rows(), p.num_rows());
        prop_assert!(c.set_eq(&p, 1e-9).unwrap());
    }

    #[test]
    fn minkowski_is_monotone(seed in any::<u64>()) {
        let mut r = rng(seed);
        let big = random_polytope(&mut r, 2, 5);
        let small = big.intersect(&random_polytope(&mut r, 2, 5)).unwrap();
        prop_assume!(!small.is_empty());
        let q = random_origin_polytope(&mut r, 2, 2, 0.3);
        let lhs = small.minkowski_sum(&q).unwrap();
        let rhs = big.minkowski_sum(&q).unwrap();
        prop_assert!(lhs.is_subset(&rhs, 1e-7).unwrap());
    }

    #[test]
    fn difference_and_sum_bracket(seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = random_polytope(&mut r, 2, 5);
        let q = random_origin_polytope(&mut r, 2, 2, 0.2);
        let d = p.pontryagin_diff(&q).unwrap();
        if !d.is_empty() {
            prop_assert!(d.minkowski_sum(&q).unwrap().is_subset(&p, 1e-7).unwrap());
        }
        let s = p.minkowski_sum(&q).unwrap();
        prop_assert!(p.is_subset(&s.pontryagin_diff(&q).unwrap(), 1e-7).unwrap());
    }

    #[test]
    fn projection_is_sound(seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = random_polytope(&mut r, 3, 5);
        let proj = p.project_out(&[1]).unwrap();
        for x in sample_points(&mut r, &p, 30) {
            let y = DVector::from_vec(vec![x[0], x[2]]);
            prop_assert!(proj.contains(&y, 1e-9));
        }
        // every projected vertex lifts: the fibre {z : (v0, z, v1) in P} is nonempty
        for v in proj.vertices_2d().unwrap() {
            let mut fibre = p.clone();
            for (coord, value) in [(0usize, v[0]), (2usize, v[1])] {
                let mut lo = vec![f64::MIN / 4.0; 3];
                let mut hi = vec![f64::MAX / 4.0; 3];
                lo[coord] = value - 1e-9;
                hi[coord] = value + 1e-9;
                let slab = Polytope::bounds(&lo, &hi).unwrap();
                fibre = fibre.intersect(&slab).unwrap();
            }
            prop_assert!(!fibre.is_empty());
        }
    }

    #[test]
    fn support_is_additive(seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = random_polytope(&mut r, 2, 5);
        let q = random_polytope(&mut r, 2, 4);
        let s = p.minkowski_sum(&q).unwrap();
        for _ in 0..16 {
            let d = DVector::from_fn(2, |_, _| r.random_range(-1.0..1.0));
            let lhs = s.support(&d).unwrap();
            let rhs = p.support(&d).unwrap() + q.support(&d).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-8);
        }
    }
}
