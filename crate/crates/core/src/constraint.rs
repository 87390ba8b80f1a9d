//! Convex portfolio constraint sets `K ∋ 0`.
//!
//! The support function used throughout is that of `-K`,
//! `δ(x | K) = sup_{y ∈ K} (-y'x)`, and the barrier cone is its effective
//! domain `{x : δ(x | K) < ∞}`.

use serde::Serialize;

use crate::error::{check_dim, invalid, Error, Result};
use crate::extended::ExtendedReal;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintKind {
    /// `K = ℝ^d`: unconstrained.
    FullSpace,
    /// `K = ℝ^d_+`: no short selling.
    NonNegOrthantCone,
    /// `K = Π [lower_i, upper_i]` with `lower_i ≤ 0 ≤ upper_i`; bounds may be
    /// infinite.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// Convex hull of finitely many vertices, one of which may be the origin.
    PolytopeHull { vertices: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintSet {
    pub dim: usize,
    #[serde(flatten)]
    pub kind: ConstraintKind,
}

impl ConstraintSet {
    pub fn full_space(dim: usize) -> Result<Self> {
        Self::new(dim, ConstraintKind::FullSpace)
    }

    pub fn cone(dim: usize) -> Result<Self> {
        Self::new(dim, ConstraintKind::NonNegOrthantCone)
    }

    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let dim = lower.len();
        Self::new(dim, ConstraintKind::Box { lower, upper })
    }

    pub fn polytope(vertices: Vec<Vec<f64>>) -> Result<Self> {
        let dim = vertices.first().map(Vec::len).unwrap_or(0);
        Self::new(dim, ConstraintKind::PolytopeHull { vertices })
    }

    pub fn new(dim: usize, kind: ConstraintKind) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("constraint.dim", "dimension must be positive"));
        }
        match &kind {
            ConstraintKind::FullSpace | ConstraintKind::NonNegOrthantCone => {}
            ConstraintKind::Box { lower, upper } => {
                check_dim(dim, upper.len())?;
                for (l, u) in lower.iter().zip(upper) {
                    if l.is_nan() || u.is_nan() || *l > 0.0 || *u < 0.0 {
                        return Err(invalid(
                            "constraint.lower/upper",
                            format!("box bounds must satisfy lower <= 0 <= upper, got [{l}, {u}]"),
                        ));
                    }
                }
            }
            ConstraintKind::PolytopeHull { vertices } => {
                for v in vertices {
                    check_dim(dim, v.len())?;
                    if v.iter().any(|c| !c.is_finite()) {
                        return Err(invalid("constraint.vertices", "vertices must be finite"));
                    }
                }
                if !vertices.iter().any(|v| v.iter().all(|c| *c == 0.0)) {
                    return Err(invalid("constraint.vertices", "the vertex list must contain the origin"));
                }
            }
        }
        Ok(Self { dim, kind })
    }

    pub fn is_bounded(&self) -> bool {
        match &self.kind {
            ConstraintKind::FullSpace | ConstraintKind::NonNegOrthantCone => false,
            ConstraintKind::Box { lower, upper } => {
                lower.iter().chain(upper).all(|b| b.is_finite())
            }
            ConstraintKind::PolytopeHull { .. } => true,
        }
    }

    /// `δ(x | K) = sup_{y ∈ K} (-y'x)`.
    pub fn support_value(&self, x: &[f64]) -> Result<ExtendedReal> {
        check_dim(self.dim, x.len())?;
        Ok(self.support_unchecked(x))
    }

    pub(crate) fn support_unchecked(&self, x: &[f64]) -> ExtendedReal {
        match &self.kind {
            ConstraintKind::FullSpace => {
                if x.iter().all(|v| *v == 0.0) {
                    ExtendedReal::ZERO
                } else {
                    ExtendedReal::PosInfinity
                }
            }
            ConstraintKind::NonNegOrthantCone => {
                if x.iter().all(|v| *v >= 0.0) {
                    ExtendedReal::ZERO
                } else {
                    ExtendedReal::PosInfinity
                }
            }
            ConstraintKind::Box { lower, upper } => {
                let mut acc = 0.0;
                for ((xi, lo), hi) in x.iter().zip(lower).zip(upper) {
                    // upper_i · x_i^- − lower_i · x_i^+
                    let term = if *xi < 0.0 {
                        *hi * (-*xi)
                    } else if *xi > 0.0 {
                        -*lo * *xi
                    } else {
                        0.0
                    };
                    if term == f64::INFINITY {
                        return ExtendedReal::PosInfinity;
                    }
                    acc += term;
                }
                ExtendedReal::Finite(acc)
            }
            ConstraintKind::PolytopeHull { vertices } => {
                let best = vertices
                    .iter()
                    .map(|v| -dot(v, x))
                    .fold(f64::NEG_INFINITY, f64::max);
                ExtendedReal::Finite(best)
            }
        }
    }

    pub fn in_barrier_cone(&self, x: &[f64]) -> Result<bool> {
        Ok(self.support_value(x)?.is_finite())
    }

    /// Euclidean projection onto `K`.
    pub fn project(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, y.len())?;
        Ok(match &self.kind {
            ConstraintKind::FullSpace => y.to_vec(),
            ConstraintKind::NonNegOrthantCone => y.iter().map(|v| v.max(0.0)).collect(),
            ConstraintKind::Box { lower, upper } => y
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
                .collect(),
            ConstraintKind::PolytopeHull { vertices } => project_onto_hull(vertices, y),
        })
    }

    pub fn contains(&self, y: &[f64], tol: f64) -> Result<bool> {
        let p = self.project(y)?;
        Ok(dist(&p, y) <= tol)
    }

    /// Grid lower bound for the support function: the maximum of `-y'x` over
    /// a regular grid of points `y ∈ K` (`resolution` points per axis for
    /// boxes, barycentric lattice of step `1/(resolution-1)` for polytopes).
    /// Unbounded sets are truncated to `[-radius, radius]^d`.
    pub fn support_value_bruteforce(
        &self,
        x: &[f64],
        resolution: usize,
        radius: Option<f64>,
    ) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        if resolution < 2 {
            return Err(invalid("resolution", "need at least two grid points per axis"));
        }
        let clip = |b: f64| -> Result<f64> {
            if b.is_finite() {
                Ok(b)
            } else {
                let r = radius.ok_or(Error::UnboundedSet)?;
                Ok(b.signum() * r)
            }
        };
        let axes: Vec<(f64, f64)> = match &self.kind {
            ConstraintKind::FullSpace => {
                let r = radius.ok_or(Error::UnboundedSet)?;
                vec![(-r, r); self.dim]
            }
            ConstraintKind::NonNegOrthantCone => {
                let r = radius.ok_or(Error::UnboundedSet)?;
                vec![(0.0, r); self.dim]
            }
            ConstraintKind::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(l, u)| Ok((clip(*l)?, clip(*u)?)))
                .collect::<Result<_>>()?,
            ConstraintKind::PolytopeHull { vertices } => {
                return Ok(polytope_grid_max(vertices, x, resolution - 1));
            }
        };
        // Separable objective: the grid maximum over a product grid is the
        // sum of per-axis grid maxima.
        let mut total = 0.0;
        for ((lo, hi), xi) in axes.iter().zip(x) {
            let step = (hi - lo) / (resolution - 1) as f64;
            let best = (0..resolution)
                .map(|k| -(lo + step * k as f64) * xi)
                .fold(f64::NEG_INFINITY, f64::max);
            total += best;
        }
        Ok(total)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Maximum of `-y'x` over `y = Σ w_k v_k` with `w` on the lattice
/// `{w ≥ 0, Σ w = 1, w_k ∈ ℤ/steps}`.
fn polytope_grid_max(vertices: &[Vec<f64>], x: &[f64], steps: usize) -> f64 {
    let scores: Vec<f64> = vertices.iter().map(|v| -dot(v, x)).collect();
    let mut best = f64::NEG_INFINITY;
    let mut counts = vec![0usize; scores.len()];
    fn rec(
        k: usize,
        remaining: usize,
        steps: usize,
        scores: &[f64],
        counts: &mut [usize],
        best: &mut f64,
    ) {
        if k + 1 == scores.len() {
            counts[k] = remaining;
            let val: f64 = counts
                .iter()
                .zip(scores)
                .map(|(c, s)| *c as f64 / steps as f64 * s)
                .sum();
            *best = best.max(val);
            return;
        }
        for c in 0..=remaining {
            counts[k] = c;
            rec(k + 1, remaining - c, steps, scores, counts, best);
        }
    }
    rec(0, steps, steps, &scores, &mut counts, &mut best);
    best
}

/// Projection onto a convex hull by accelerated projected gradient on the
/// barycentric weights.
fn project_onto_hull(vertices: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    // Wolfe's minimum-norm-point algorithm on the shifted vertices v - y.
    let pts: Vec<Vec<f64>> = vertices
        .iter()
        .map(|v| v.iter().zip(y).map(|(a, b)| a - b).collect())
        .collect();
    let scale = pts.iter().map(|p| dot(p, p)).fold(0.0, f64::max).max(1e-300);
    let eps = 1e-13 * scale;
    let combo = |set: &[usize], w: &[f64]| -> Vec<f64> {
        let mut x = vec![0.0; y.len()];
        for (&i, wi) in set.iter().zip(w) {
            for (xj, pj) in x.iter_mut().zip(&pts[i]) {
                *xj += wi * pj;
            }
        }
        x
    };
    let start = (0..pts.len())
        .min_by(|&a, &b| dot(&pts[a], &pts[a]).total_cmp(&dot(&pts[b], &pts[b])))
        .unwrap_or(0);
    let mut set = vec![start];
    let mut w = vec![1.0];
    let mut x = pts[start].clone();
    for _ in 0..1000 {
        let xx = dot(&x, &x);
        if xx <= eps {
            break;
        }
        let (j, xp) = (0..pts.len())
            .map(|j| (j, dot(&x, &pts[j])))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if xx - xp <= eps || set.contains(&j) {
            break;
        }
        set.push(j);
        w.push(0.0);
        loop {
            let alpha = affine_min_norm(&pts, &set);
            if alpha.iter().all(|a| *a > 1e-14) {
                w = alpha;
                break;
            }
            let mut theta = 1.0f64;
            for (wi, ai) in w.iter().zip(&alpha) {
                if *ai <= 1e-14 && wi - ai > 0.0 {
                    theta = theta.min(wi / (wi - ai));
                }
            }
            for (wi, ai) in w.iter_mut().zip(&alpha) {
                *wi = theta * ai + (1.0 - theta) * *wi;
            }
            let keep: Vec<bool> = w.iter().map(|wi| *wi > 1e-14).collect();
            let mut k = 0;
            set.retain(|_| {
                k += 1;
                keep[k - 1]
            });
            w.retain(|wi| *wi > 1e-14);
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|wi| *wi /= total);
            if set.len() <= 1 {
                break;
            }
        }
        x = combo(&set, &w);
    }
    let p: Vec<f64> = x.iter().zip(y).map(|(a, b)| a + b).collect();
    if dist(&p, y) < 1e-9 {
        y.to_vec()
    } else {
        p
    }
}

/// Weights (summing to one) of the minimum-norm point of the affine hull of
/// `pts[set]`.
fn affine_min_norm(pts: &[Vec<f64>], set: &[usize]) -> Vec<f64> {
    let k = set.len();
    let mut m = nalgebra::DMatrix::<f64>::zeros(k + 1, k + 1);
    let mut rhs = nalgebra::DVector::<f64>::zeros(k + 1);
    for a in 0..k {
        for b in 0..k {
            m[(a, b)] = dot(&pts[set[a]], &pts[set[b]]);
        }
        m[(a, k)] = 1.0;
        m[(k, a)] = 1.0;
    }
    rhs[k] = 1.0;
    let sol = m.clone().lu().solve(&rhs).unwrap_or_else(|| {
        m.svd(true, true)
            .solve(&rhs, 1e-12)
            .unwrap_or_else(|_| nalgebra::DVector::from_element(k + 1, 1.0 / k as f64))
    });
    sol.iter().take(k).copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_box() -> ConstraintSet {
        ConstraintSet::boxed(vec![-1.0], vec![2.0]).unwrap()
    }

    fn triangle() -> ConstraintSet {
        ConstraintSet::polytope(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()
    }

    #[test]
    fn support_examples() {
        let full = ConstraintSet::full_space(2).unwrap();
        assert_eq!(full.support_value(&[0.0, 0.0]).unwrap(), ExtendedReal::ZERO);
        let cone = ConstraintSet::cone(2).unwrap();
        assert_eq!(cone.support_value(&[1.0, 2.0]).unwrap(), ExtendedReal::ZERO);
        assert_eq!(unit_box().support_value(&[3.0]).unwrap(), ExtendedReal::Finite(3.0));
        assert_eq!(unit_box().support_value(&[-1.5]).unwrap(), ExtendedReal::Finite(3.0));
    }

    #[test]
    fn barrier_cone_examples() {
        let full = ConstraintSet::full_space(2).unwrap();
        assert!(!full.in_barrier_cone(&[1.0, 0.0]).unwrap());
        let cone = ConstraintSet::cone(2).unwrap();
        assert!(cone.in_barrier_cone(&[1.0, 2.0]).unwrap());
        assert!(!cone.in_barrier_cone(&[-1.0, 2.0]).unwrap());
        assert!(unit_box().in_barrier_cone(&[-7.0]).unwrap());
    }

    #[test]
    fn infinite_box_bound_short_circuits() {
        // K = ℝ × {0}: barrier cone is {x_1 = 0}.
        let k = ConstraintSet::boxed(vec![f64::NEG_INFINITY, 0.0], vec![f64::INFINITY, 0.0]).unwrap();
        assert_eq!(k.support_value(&[0.0, -3.0]).unwrap(), ExtendedReal::ZERO);
        assert_eq!(k.support_value(&[0.1, 0.0]).unwrap(), ExtendedReal::PosInfinity);
        assert_eq!(k.support_value(&[-0.1, 0.0]).unwrap(), ExtendedReal::PosInfinity);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let err = unit_box().support_value(&[1.0, 2.0]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 1, got: 2 }));
        assert!(unit_box().project(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn invalid_sets_are_rejected() {
        assert!(ConstraintSet::boxed(vec![0.5], vec![1.0]).is_err());
        assert!(ConstraintSet::polytope(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).is_err());
        assert!(ConstraintSet::full_space(0).is_err());
    }

    #[test]
    fn projection_examples() {
        assert_eq!(unit_box().project(&[5.0]).unwrap(), vec![2.0]);
        let cone = ConstraintSet::cone(2).unwrap();
        assert_eq!(cone.project(&[-1.0, 3.0]).unwrap(), vec![0.0, 3.0]);
        let p = triangle().project(&[1.0, 1.0]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-9 && (p[1] - 0.5).abs() < 1e-9);
        assert_eq!(triangle().project(&[0.2, 0.3]).unwrap(), vec![0.2, 0.3]);
    }

    #[test]
    fn bruteforce_examples() {
        let v = unit_box().support_value_bruteforce(&[3.0], 1001, None).unwrap();
        assert!((v - 3.0).abs() <= 0.01);
        let point = ConstraintSet::boxed(vec![0.0], vec![0.0]).unwrap();
        assert_eq!(point.support_value_bruteforce(&[-4.2], 11, None).unwrap(), 0.0);
        let v = triangle().support_value_bruteforce(&[-1.0, -1.0], 51, None).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        let cone = ConstraintSet::cone(1).unwrap();
        assert!(matches!(
            cone.support_value_bruteforce(&[1.0], 11, None),
            Err(Error::UnboundedSet)
        ));
    }

    fn any_set() -> impl Strategy<Value = ConstraintSet> {
        prop_oneof![
            Just(ConstraintSet::full_space(2).unwrap()),
            Just(ConstraintSet::cone(2).unwrap()),
            (-3.0..=0.0f64, 0.0..3.0f64, -3.0..=0.0f64, 0.0..3.0f64)
                .prop_map(|(a, b, c, d)| ConstraintSet::boxed(vec![a, c], vec![b, d]).unwrap()),
            (0.1..2.0f64, 0.1..2.0f64, -2.0..0.0f64)
                .prop_map(|(a, b, c)| ConstraintSet::polytope(vec![
                    vec![0.0, 0.0],
                    vec![a, c],
                    vec![c, b]
                ])
                .unwrap()),
        ]
    }

    proptest! {
        #[test]
        fn support_contains_origin(k in any_set(), x in prop::array::uniform2(-5.0..5.0f64)) {
            prop_assert!(k.support_value(&[0.0, 0.0]).unwrap() == ExtendedReal::ZERO);
            prop_assert!(k.support_value(&x).unwrap() >= ExtendedReal::ZERO);
        }

        #[test]
        fn support_is_positively_homogeneous(
            k in any_set(),
            x in prop::array::uniform2(-5.0..5.0f64),
            t in 0.01..10.0f64,
        ) {
            let a = k.support_value(&x).unwrap();
            let scaled: Vec<f64> = x.iter().map(|v| v * t).collect();
            let b = k.support_value(&scaled).unwrap();
            match (a, b) {
                (ExtendedReal::Finite(a), ExtendedReal::Finite(b)) => {
                    prop_assert!((b - t * a).abs() <= 1e-9 * (1.0 + b.abs()));
                }
                (a, b) => prop_assert_eq!(a, b),
            }
        }

        #[test]
        fn support_is_subadditive(
            k in any_set(),
            x in prop::array::uniform2(-5.0..5.0f64),
            y in prop::array::uniform2(-5.0..5.0f64),
        ) {
            let sum = [x[0] + y[0], x[1] + y[1]];
            if let (Some(a), Some(b)) = (
                k.support_value(&x).unwrap().finite(),
                k.support_value(&y).unwrap().finite(),
            ) {
                let s = k.support_value(&sum).unwrap().finite().unwrap();
                prop_assert!(s <= a + b + 1e-9);
            }
        }

        #[test]
        fn bruteforce_is_a_lower_bound(k in any_set(), x in prop::array::uniform2(-5.0..5.0f64)) {
            let exact = k.support_value(&x).unwrap();
            let grid = k.support_value_bruteforce(&x, 41, Some(10.0)).unwrap();
            prop_assert!(exact >= ExtendedReal::Finite(grid - 1e-9));
        }

        #[test]
        fn projection_is_idempotent(k in any_set(), y in prop::array::uniform2(-5.0..5.0f64)) {
            let p = k.project(&y).unwrap();
            let q = k.project(&p).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-7);
            }
        }
    }
}
