//! Uniform spatial and time grids, sampled profiles, trapezoid quadrature
//! and second-order finite differences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Uniform grid of `n >= 3` nodes on `[x_min, x_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid<S> {
    x_min: S,
    x_max: S,
    n: usize,
}

impl<S: Scalar> Grid<S> {
    pub fn uniform(x_min: S, x_max: S, n: usize) -> Result<Self> {
        if !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::InvalidGrid(format!("non-finite bounds [{x_min}, {x_max}]")));
        }
        if x_min >= x_max {
            return Err(Error::InvalidGrid(format!("x_min {x_min} must be below x_max {x_max}")));
        }
        if n < 3 {
            return Err(Error::InvalidGrid(format!("need at least 3 nodes, got {n}")));
        }
        Ok(Self { x_min, x_max, n })
    }

    #[inline]
    pub fn x_min(&self) -> S {
        self.x_min
    }

    #[inline]
    pub fn x_max(&self) -> S {
        self.x_max
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    /// Always false; a grid has at least three nodes.
    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn spacing(&self) -> S {
        (self.x_max - self.x_min) / S::lit((self.n - 1) as f64)
    }

    /// Node `i`; the last node is `x_max` exactly.
    #[inline]
    pub fn node(&self, i: usize) -> S {
        if i + 1 == self.n {
            self.x_max
        } else {
            self.x_min + S::lit(i as f64) * self.spacing()
        }
    }

    pub fn nodes(&self) -> Vec<S> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    /// Trapezoid weights: `h/2` at both ends, `h` inside.
    pub fn weights(&self) -> Vec<S> {
        let h = self.spacing();
        let mut w = vec![h; self.n];
        w[0] = h / S::lit(2.0);
        w[self.n - 1] = h / S::lit(2.0);
        w
    }

    #[inline]
    pub fn weight(&self, i: usize) -> S {
        if i == 0 || i + 1 == self.n {
            self.spacing() / S::lit(2.0)
        } else {
            self.spacing()
        }
    }

    pub fn contains(&self, x: S) -> bool {
        x >= self.x_min && x <= self.x_max
    }

    /// Index of the node closest to `x`, if it lies within `tol * h` of it.
    pub fn node_index(&self, x: S, tol: S) -> Option<usize> {
        let h = self.spacing();
        let r = ((x - self.x_min) / h).round();
        if r < S::zero() || r > S::lit((self.n - 1) as f64) {
            return None;
        }
        let i = r.to_usize()?;
        if (self.node(i) - x).abs() <= tol * h {
            Some(i)
        } else {
            None
        }
    }

    /// Cell index `i` and fractional position `s` in `[0, 1]` with
    /// `x = node(i) + s*h`. Points outside the grid are clamped.
    pub fn locate(&self, x: S) -> (usize, S) {
        let h = self.spacing();
        let u = (x - self.x_min) / h;
        let last = S::lit((self.n - 2) as f64);
        if !(u > S::zero()) {
            return (0, S::zero());
        }
        let cell = u.floor().min(last);
        let i = cell.to_usize().unwrap_or(0);
        let s = (u - cell).min(S::one());
        (i, s)
    }

    /// The grid with spacing halved: `2(n-1)+1` nodes on the same interval.
    pub fn refined(&self) -> Self {
        Self { x_min: self.x_min, x_max: self.x_max, n: 2 * (self.n - 1) + 1 }
    }
}

/// Uniform time slices `t0 = tau_0 < ... < tau_{m-1} = t1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid<S> {
    t0: S,
    t1: S,
    m: usize,
}

impl<S: Scalar> TimeGrid<S> {
    pub fn uniform(t0: S, t1: S, m: usize) -> Result<Self> {
        if !t0.is_finite() || !t1.is_finite() || t1 <= t0 {
            return Err(Error::InvalidGrid(format!("time window [{t0}, {t1}] must satisfy t1 > t0")));
        }
        if m < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 time slices, got {m}")));
        }
        Ok(Self { t0, t1, m })
    }

    pub fn t0(&self) -> S {
        self.t0
    }

    pub fn t1(&self) -> S {
        self.t1
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> S {
        (self.t1 - self.t0) / S::lit((self.m - 1) as f64)
    }

    pub fn time(&self, k: usize) -> S {
        if k + 1 == self.m {
            self.t1
        } else {
            self.t0 + S::lit(k as f64) * self.step()
        }
    }

    pub fn times(&self) -> Vec<S> {
        (0..self.m).map(|k| self.time(k)).collect()
    }

    /// Slice index whose time is within `1e-9` slice steps of `t`.
    pub fn slice_index(&self, t: S) -> Option<usize> {
        let r = ((t - self.t0) / self.step()).round();
        let k = r.to_usize()?;
        if k < self.m && (self.time(k) - t).abs() <= S::lit(1e-9) * self.step() {
            Some(k)
        } else {
            None
        }
    }
}

/// A real field sampled on a grid at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile<S> {
    grid: Grid<S>,
    values: Vec<S>,
    time: S,
}

impl<S: Scalar> Profile<S> {
    pub fn new(grid: Grid<S>, values: Vec<S>, time: S) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch { len: values.len(), n: grid.len() });
        }
        if let Some((index, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value: v.as_f64() });
        }
        Ok(Self { grid, values, time })
    }

    /// Samples `f` at every node. Fails if `f` returns a non-finite value.
    pub fn from_fn(grid: Grid<S>, time: S, f: impl Fn(S) -> S) -> Result<Self> {
        let values = grid.nodes().into_iter().map(f).collect();
        Self::new(grid, values, time)
    }

    pub fn constant(grid: Grid<S>, time: S, value: S) -> Result<Self> {
        Self::new(grid, vec![value; grid.len()], time)
    }

    #[inline]
    pub fn grid(&self) -> &Grid<S> {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn into_values(self) -> Vec<S> {
        self.values
    }

    #[inline]
    pub fn time(&self) -> S {
        self.time
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn with_time(mut self, time: S) -> Self {
        self.time = time;
        self
    }

    /// Trapezoid-rule integral; exact for affine integrands.
    pub fn integral(&self) -> S {
        let n = self.values.len();
        let h = self.grid.spacing();
        let inner: S = self.values[1..n - 1].iter().copied().sum();
        h * (inner + (self.values[0] + self.values[n - 1]) / S::lit(2.0))
    }

    pub fn normalized(&self) -> Result<Self> {
        if let Some((index, v)) = self.values.iter().enumerate().find(|(_, v)| **v < S::zero()) {
            return Err(Error::NegativeValue { index, value: v.as_f64() });
        }
        let mass = self.integral();
        if !(mass > S::zero()) {
            return Err(Error::NonPositiveMass(mass.as_f64()));
        }
        Ok(self.map(|v| v / mass))
    }

    pub fn l1_distance(&self, other: &Self) -> Result<S> {
        self.check_same_grid(other)?;
        let diff = self.zip_map(other, |a, b| (a - b).abs())?;
        Ok(diff.integral())
    }

    /// `sqrt(∫ (p-q)^2 dx)`.
    pub fn l2_distance(&self, other: &Self) -> Result<S> {
        self.check_same_grid(other)?;
        Ok(self.zip_map(other, |a, b| (a - b) * (a - b))?.integral().sqrt())
    }

    pub fn l2_norm(&self) -> S {
        self.map(|v| v * v).integral().sqrt()
    }

    pub fn sup_norm(&self) -> S {
        self.values.iter().fold(S::zero(), |m, v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> S {
        self.values.iter().copied().fold(S::infinity(), S::min)
    }

    pub fn max_value(&self) -> S {
        self.values.iter().copied().fold(S::neg_infinity(), S::max)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect(), time: self.time }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        self.check_same_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Self::new(self.grid, values, self.time)
    }

    pub fn scaled(&self, factor: S) -> Self {
        self.map(|v| v * factor)
    }

    /// Linear interpolation; constant extrapolation beyond the grid ends.
    pub fn interpolate(&self, x: S) -> S {
        let (i, s) = self.grid.locate(x);
        self.values[i] * (S::one() - s) + self.values[i + 1] * s
    }

    /// First derivative: central differences inside, second-order one-sided
    /// stencils at both ends.
    pub fn gradient(&self) -> Self {
        let v = &self.values;
        let n = v.len();
        let h = self.grid.spacing();
        let two = S::lit(2.0);
        let mut d = vec![S::zero(); n];
        for i in 1..n - 1 {
            d[i] = (v[i + 1] - v[i - 1]) / (two * h);
        }
        d[0] = (-S::lit(3.0) * v[0] + S::lit(4.0) * v[1] - v[2]) / (two * h);
        d[n - 1] = (S::lit(3.0) * v[n - 1] - S::lit(4.0) * v[n - 2] + v[n - 3]) / (two * h);
        Self { grid: self.grid, values: d, time: self.time }
    }

    /// Second derivative with the same stencil policy as [`Profile::gradient`].
    /// Grids with fewer than four nodes fall back to the first-order end stencil.
    pub fn laplacian(&self) -> Self {
        let v = &self.values;
        let n = v.len();
        let h2 = self.grid.spacing() * self.grid.spacing();
        let two = S::lit(2.0);
        let mut d = vec![S::zero(); n];
        for i in 1..n - 1 {
            d[i] = (v[i + 1] - two * v[i] + v[i - 1]) / h2;
        }
        if n >= 4 {
            let (a, b, c, e) = (S::lit(2.0), S::lit(5.0), S::lit(4.0), S::one());
            d[0] = (a * v[0] - b * v[1] + c * v[2] - e * v[3]) / h2;
            d[n - 1] = (a * v[n - 1] - b * v[n - 2] + c * v[n - 3] - e * v[n - 4]) / h2;
        } else {
            d[0] = d[1];
            d[n - 1] = d[n - 2];
        }
        Self { grid: self.grid, values: d, time: self.time }
    }

    fn check_same_grid(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }
}

pub fn make_uniform_grid<S: Scalar>(x_min: S, x_max: S, n: usize) -> Result<Grid<S>> {
    Grid::uniform(x_min, x_max, n)
}

pub fn integrate<S: Scalar>(p: &Profile<S>) -> S {
    p.integral()
}

pub fn normalize<S: Scalar>(p: &Profile<S>) -> Result<Profile<S>> {
    p.normalized()
}

pub fn l1_distance<S: Scalar>(p: &Profile<S>, q: &Profile<S>) -> Result<S> {
    p.l1_distance(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn gaussian(x: f64, var: f64) -> f64 {
        (-x * x / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
    }

    #[test]
    fn grid_examples() {
        let g = Grid::<f64>::uniform(-1.0, 1.0, 3).unwrap();
        assert_eq!(g.nodes(), vec![-1.0, 0.0, 1.0]);
        assert_eq!(g.spacing(), 1.0);
        let g = Grid::<f64>::uniform(0.0, 10.0, 11).unwrap();
        assert_eq!(g.spacing(), 1.0);
        assert_eq!(g.node(5), 5.0);
        let g = Grid::<f64>::uniform(-8.0, 8.0, 401).unwrap();
        assert_relative_eq!(g.spacing(), 0.04, max_relative = 1e-15);
        assert_eq!(g.node(400), 8.0);
        assert_eq!(g.node(0), -8.0);
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(Grid::<f64>::uniform(0.0, 1.0, 2).is_err());
        assert!(Grid::<f64>::uniform(1.0, 0.0, 5).is_err());
        assert!(Grid::<f64>::uniform(f64::NAN, 1.0, 5).is_err());
        assert!(Grid::<f64>::uniform(0.0, f64::INFINITY, 5).is_err());
    }

    #[test]
    fn nodes_strictly_increasing_and_exact() {
        let g = Grid::<f64>::uniform(-3.3, 7.1, 1001).unwrap();
        let nodes = g.nodes();
        for w in nodes.windows(2) {
            assert!(w[1] > w[0]);
        }
        for (i, x) in nodes.iter().enumerate() {
            let exact = -3.3 + i as f64 * (10.4 / 1000.0);
            assert!((x - exact).abs() <= 4.0 * f64::EPSILON * exact.abs().max(1.0));
        }
    }

    #[test]
    fn time_grid_endpoints() {
        let tg = TimeGrid::<f64>::uniform(0.0, 1.0, 11).unwrap();
        assert_eq!(tg.time(0), 0.0);
        assert_eq!(tg.time(10), 1.0);
        assert_eq!(tg.slice_index(0.5), Some(5));
        assert_eq!(tg.slice_index(0.55), None);
        assert!(TimeGrid::<f64>::uniform(1.0, 1.0, 3).is_err());
        assert!(TimeGrid::<f64>::uniform(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn integrate_examples() {
        let g = Grid::<f64>::uniform(0.0, 1.0, 11).unwrap();
        assert_relative_eq!(Profile::constant(g, 0.0, 1.0).unwrap().integral(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(Profile::from_fn(g, 0.0, |x| x).unwrap().integral(), 0.5, epsilon = 1e-15);
        let g = Grid::<f64>::uniform(-8.0, 8.0, 401).unwrap();
        let p = Profile::from_fn(g, 0.0, |x| gaussian(x, 1.0)).unwrap();
        // erf(8/sqrt 2) differs from 1 by ~1e-15
        assert!((p.integral() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn normalize_examples() {
        let g = Grid::<f64>::uniform(0.0, 1.0, 11).unwrap();
        let p = Profile::constant(g, 0.0, 2.0).unwrap().normalized().unwrap();
        assert!(p.values().iter().all(|&v| (v - 1.0).abs() < 1e-14));
        let g = Grid::<f64>::uniform(-8.0, 8.0, 401).unwrap();
        let p = Profile::from_fn(g, 0.0, |x| (-x * x / 2.0).exp()).unwrap().normalized().unwrap();
        assert!((p.values()[200] - 0.398_942_280_401_432_7).abs() < 1e-9);
        let again = p.normalized().unwrap();
        for (a, b) in p.values().iter().zip(again.values()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
        }
    }

    #[test]
    fn normalize_rejects_bad_mass() {
        let g = Grid::<f64>::uniform(0.0, 1.0, 5).unwrap();
        assert!(matches!(
            Profile::constant(g, 0.0, 0.0).unwrap().normalized(),
            Err(Error::NonPositiveMass(_))
        ));
        let p = Profile::new(g, vec![1.0, -1.0, 1.0, 1.0, 1.0], 0.0).unwrap();
        assert!(matches!(p.normalized(), Err(Error::NegativeValue { index: 1, .. })));
    }

    #[test]
    fn profile_rejects_non_finite_and_wrong_length() {
        let g = Grid::<f64>::uniform(0.0, 1.0, 3).unwrap();
        assert!(Profile::new(g, vec![0.0, f64::NAN, 1.0], 0.0).is_err());
        assert!(Profile::new(g, vec![0.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn l1_examples() {
        let g = Grid::<f64>::uniform(0.0, 1.0, 11).unwrap();
        let one = Profile::constant(g, 0.0, 1.0).unwrap();
        let zero = Profile::constant(g, 0.0, 0.0).unwrap();
        assert_eq!(one.l1_distance(&one).unwrap(), 0.0);
        assert_relative_eq!(one.l1_distance(&zero).unwrap(), 1.0, epsilon = 1e-15);
        let other = Profile::constant(Grid::<f64>::uniform(0.0, 2.0, 11).unwrap(), 0.0, 1.0).unwrap();
        assert!(matches!(one.l1_distance(&other), Err(Error::GridMismatch)));
    }

    /// Composite Simpson on 10^5 intervals, independent of the trapezoid path.
    fn simpson_oracle(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    #[test]
    fn l1_between_gaussians_matches_dense_quadrature() {
        let oracle = simpson_oracle(|x| (gaussian(x, 1.0) - gaussian(x, 2.0)).abs(), -8.0, 8.0, 100_000);
        // frozen from the same oracle (and from the erf closed form 0.3321281345...)
        assert!((oracle - 0.332_128_134_549_77).abs() < 1e-9);
        let g = Grid::<f64>::uniform(-8.0, 8.0, 401).unwrap();
        let p = Profile::from_fn(g, 0.0, |x| gaussian(x, 1.0)).unwrap();
        let q = Profile::from_fn(g, 0.0, |x| gaussian(x, 2.0)).unwrap();
        assert!((p.l1_distance(&q).unwrap() - oracle).abs() < 2e-4);
    }

    #[test]
    fn trapezoid_converges_at_second_order() {
        // a non-periodic smooth integrand on an interval where the ends matter
        let exact = (1.0f64).exp() - 1.0;
        let err = |n: usize| {
            let g = Grid::<f64>::uniform(0.0, 1.0, n).unwrap();
            (Profile::from_fn(g, 0.0, f64::exp).unwrap().integral() - exact).abs()
        };
        let ratio = err(101) / err(201);
        assert!((ratio - 4.0).abs() < 0.05, "ratio {ratio}");
        // the truncated Gaussian: error halves the spacing -> roughly quartered
        let gerr = |n: usize| {
            let g = Grid::<f64>::uniform(-2.0, 2.0, n).unwrap();
            let exact = 0.954_499_736_103_641_6; // erf(sqrt 2)
            (Profile::from_fn(g, 0.0, |x| gaussian(x, 1.0)).unwrap().integral() - exact).abs()
        };
        let r = gerr(41) / gerr(81);
        assert!((r - 4.0).abs() < 0.1, "ratio {r}");
    }

    #[test]
    fn finite_differences_are_second_order() {
        let err = |n: usize| {
            let g = Grid::<f64>::uniform(0.0, 2.0, n).unwrap();
            let p = Profile::from_fn(g, 0.0, |x| (x * 1.3).sin()).unwrap();
            let d1 = p.gradient();
            let d2 = p.laplacian();
            let mut e1 = 0.0f64;
            let mut e2 = 0.0f64;
            for (i, x) in g.nodes().into_iter().enumerate() {
                e1 = e1.max((d1.values()[i] - 1.3 * (1.3 * x).cos()).abs());
                e2 = e2.max((d2.values()[i] + 1.69 * (1.3 * x).sin()).abs());
            }
            (e1, e2)
        };
        let (a1, a2) = err(51);
        let (b1, b2) = err(101);
        assert!(a1 / b1 > 3.5 && a2 / b2 > 3.5, "{} {}", a1 / b1, a2 / b2);
    }

    #[test]
    fn f32_grid_and_quadrature() {
        let g = Grid::<f32>::uniform(-8.0, 8.0, 401).unwrap();
        let p = Profile::from_fn(g, 0.0, |x| (-x * x / 2.0).exp()).unwrap();
        let n = p.normalized().unwrap();
        assert!((n.integral() - 1.0).abs() < 1e-5);
        assert!((n.values()[200] - 0.398_942_3).abs() < 1e-5);
    }

    fn arb_profile(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, n)
    }

    proptest! {
        #[test]
        fn integral_is_linear(p in arb_profile(17), q in arb_profile(17), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let g = Grid::<f64>::uniform(-1.0, 2.0, 17).unwrap();
            let p = Profile::new(g, p, 0.0).unwrap();
            let q = Profile::new(g, q, 0.0).unwrap();
            let comb = p.zip_map(&q, |u, v| a * u + b * v).unwrap();
            let lhs = comb.integral();
            let rhs = a * p.integral() + b * q.integral();
            let scale = p.map(f64::abs).integral() * a.abs() + q.map(f64::abs).integral() * b.abs() + 1.0;
            prop_assert!((lhs - rhs).abs() <= 1e-13 * scale);
        }

        #[test]
        fn normalize_idempotent_and_scale_invariant(v in proptest::collection::vec(0.01f64..10.0, 9), c in 0.01f64..100.0) {
            let g = Grid::<f64>::uniform(0.0, 1.0, 9).unwrap();
            let p = Profile::new(g, v, 0.0).unwrap();
            let n1 = p.normalized().unwrap();
            let n2 = n1.normalized().unwrap();
            let n3 = p.scaled(c).normalized().unwrap();
            for i in 0..9 {
                prop_assert!((n1.values()[i] - n2.values()[i]).abs() <= 1e-12 * n1.values()[i]);
                prop_assert!((n1.values()[i] - n3.values()[i]).abs() <= 1e-12 * n1.values()[i]);
            }
        }

        #[test]
        fn l1_triangle_and_symmetry(p in arb_profile(11), q in arb_profile(11), r in arb_profile(11)) {
            let g = Grid::<f64>::uniform(0.0, 1.0, 11).unwrap();
            let p = Profile::new(g, p, 0.0).unwrap();
            let q = Profile::new(g, q, 0.0).unwrap();
            let r = Profile::new(g, r, 0.0).unwrap();
            let pq = p.l1_distance(&q).unwrap();
            prop_assert!((pq - q.l1_distance(&p).unwrap()).abs() < 1e-12);
            prop_assert!(pq <= p.l1_distance(&r).unwrap() + r.l1_distance(&q).unwrap() + 1e-12);
        }
    }
}
