//! Feynman-Kac potentials `c(x, t)` and the conversions density -> potential
//! and drift -> potential.
//!
//! Every catalog potential already carries its energy renormalization, so the
//! kernels built from them stay of order one over the time window.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Profile, TimeGrid};
use crate::scalar::Scalar;

/// Time-sliced tabulated potential, bilinear in `(x, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tabulated<S> {
    times: TimeGrid<S>,
    slices: Vec<Profile<S>>,
}

impl<S: Scalar> Tabulated<S> {
    pub fn new(times: TimeGrid<S>, slices: Vec<Profile<S>>) -> Result<Self> {
        if slices.len() != times.len() {
            return Err(Error::InvalidArgument(format!(
                "{} slices for {} time points",
                slices.len(),
                times.len()
            )));
        }
        let grid = *slices[0].grid();
        if slices.iter().any(|p| *p.grid() != grid) {
            return Err(Error::GridMismatch);
        }
        Ok(Self { times, slices })
    }

    pub fn times(&self) -> &TimeGrid<S> {
        &self.times
    }

    fn eval(&self, x: S, t: S) -> Result<S> {
        let (t0, t1) = (self.times.t0(), self.times.t1());
        if t < t0 || t > t1 {
            return Err(Error::TimeOutOfWindow { t: t.as_f64(), t0: t0.as_f64(), t1: t1.as_f64() });
        }
        let u = (t - t0) / self.times.step();
        let k = u.floor().to_usize().unwrap_or(0).min(self.times.len() - 2);
        let s = (u - S::lit(k as f64)).min(S::one()).max(S::zero());
        let a = self.slices[k].interpolate(x);
        let b = self.slices[k + 1].interpolate(x);
        Ok(a * (S::one() - s) + b * s)
    }
}

/// Which closed-form (or tabulated) potential.
#[derive(Debug, Clone, PartialEq)]
pub enum PotentialKind<S> {
    /// `c = 0`.
    Free,
    /// `c = x^2 - 1`.
    Harmonic,
    /// `c = x^2 / (2(1+t^2)^2) - 1/(1+t^2)`; spreading Gaussian.
    GaussianCase,
    /// `c = x^2 / (2(1+t^2)^2) - 3/(1+t^2)`; density with a stable node at 0.
    NodalCase,
    /// `c = x^2 + 2 gamma / x^2 - energy`.
    Centrifugal { gamma: S, energy: S },
    /// `c = Δρ^{1/2}/ρ^{1/2}` for the density whose node forms at `t = alpha`.
    MovingNode { alpha: S },
    Tabulated(Tabulated<S>),
}

/// A potential together with its singular set and a lower bound.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSpec<S> {
    pub kind: PotentialKind<S>,
    /// Points where `c = +∞` (for `MovingNode` only at `t = alpha`).
    pub singular_set: Vec<S>,
    /// Greatest known lower bound of `c` over the computation window.
    pub lower_bound: S,
}

/// Config-file form of a potential: `{ kind = "centrifugal", gamma = 1.0 }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialConfig {
    Free,
    Harmonic,
    #[serde(alias = "gaussian")]
    GaussianCase,
    #[serde(alias = "nodal", alias = "stable_node")]
    NodalCase,
    Centrifugal {
        gamma: f64,
        /// Subtracted constant; defaults to the ground-state energy.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        energy: Option<f64>,
    },
    MovingNode {
        #[serde(default)]
        alpha: f64,
    },
}

impl PotentialConfig {
    pub fn build<S: Scalar>(&self) -> Result<PotentialSpec<S>> {
        match *self {
            Self::Free => Ok(PotentialSpec::free()),
            Self::Harmonic => Ok(PotentialSpec::harmonic()),
            Self::GaussianCase => Ok(PotentialSpec::gaussian_case()),
            Self::NodalCase => Ok(PotentialSpec::nodal_case()),
            Self::Centrifugal { gamma, energy: None } => PotentialSpec::centrifugal(S::lit(gamma)),
            Self::Centrifugal { gamma, energy: Some(e) } => {
                PotentialSpec::centrifugal_with_energy(S::lit(gamma), S::lit(e))
            }
            Self::MovingNode { alpha } => Ok(PotentialSpec::moving_node(S::lit(alpha))),
        }
    }
}

/// Ground-state energy of `-Δ + x^2 + 2γ/x^2` on a half-line: `2 + (1+8γ)^{1/2}`.
pub fn centrifugal_ground_energy<S: Scalar>(gamma: S) -> S {
    S::lit(2.0) + (S::one() + S::lit(8.0) * gamma).sqrt()
}

impl<S: Scalar> PotentialSpec<S> {
    pub fn free() -> Self {
        Self { kind: PotentialKind::Free, singular_set: vec![], lower_bound: S::zero() }
    }

    pub fn harmonic() -> Self {
        Self { kind: PotentialKind::Harmonic, singular_set: vec![], lower_bound: -S::one() }
    }

    pub fn gaussian_case() -> Self {
        Self { kind: PotentialKind::GaussianCase, singular_set: vec![], lower_bound: -S::one() }
    }

    pub fn nodal_case() -> Self {
        Self { kind: PotentialKind::NodalCase, singular_set: vec![], lower_bound: -S::lit(3.0) }
    }

    /// Centrifugal potential renormalized by its ground-state energy.
    pub fn centrifugal(gamma: S) -> Result<Self> {
        Self::centrifugal_with_energy(gamma, centrifugal_ground_energy(gamma))
    }

    /// `gamma < 0` makes the potential unbounded below and is rejected.
    pub fn centrifugal_with_energy(gamma: S, energy: S) -> Result<Self> {
        if !(gamma >= S::zero()) || !gamma.is_finite() || !energy.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "centrifugal potential needs finite gamma >= 0 (got {gamma})"
            )));
        }
        let (singular_set, min) = if gamma > S::zero() {
            (vec![S::zero()], S::lit(2.0) * (S::lit(2.0) * gamma).sqrt())
        } else {
            (vec![], S::zero())
        };
        Ok(Self { kind: PotentialKind::Centrifugal { gamma, energy }, singular_set, lower_bound: min - energy })
    }

    pub fn moving_node(alpha: S) -> Self {
        // minimum found by sampling |x| <= 10, |t - alpha| <= 4; the slack covers
        // the sampling resolution
        let mut min = S::infinity();
        for i in 0..=500 {
            let x = S::lit(i as f64 * 0.02);
            for k in 0..=400 {
                let tau = S::lit(-4.0 + k as f64 * 0.02);
                let v = moving_node_value(x, tau);
                if v < min {
                    min = v;
                }
            }
        }
        Self {
            kind: PotentialKind::MovingNode { alpha },
            singular_set: vec![S::zero()],
            lower_bound: min - S::lit(0.05),
        }
    }

    pub fn tabulated(table: Tabulated<S>) -> Self {
        let lower_bound = table.slices.iter().map(|p| p.min_value()).fold(S::infinity(), S::min);
        Self { kind: PotentialKind::Tabulated(table), singular_set: vec![], lower_bound }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            PotentialKind::Free => "free",
            PotentialKind::Harmonic => "harmonic",
            PotentialKind::GaussianCase => "gaussian_case",
            PotentialKind::NodalCase => "nodal_case",
            PotentialKind::Centrifugal { .. } => "centrifugal",
            PotentialKind::MovingNode { .. } => "moving_node",
            PotentialKind::Tabulated(_) => "tabulated",
        }
    }

    pub fn is_time_dependent(&self) -> bool {
        matches!(
            self.kind,
            PotentialKind::GaussianCase
                | PotentialKind::NodalCase
                | PotentialKind::MovingNode { .. }
                | PotentialKind::Tabulated(_)
        )
    }

    /// Singular points active at time `t`.
    pub fn singular_points_at(&self, t: S) -> &[S] {
        match self.kind {
            PotentialKind::MovingNode { alpha } if t != alpha => &[],
            _ => &self.singular_set,
        }
    }

    /// A singular point inside `[x_lo, x_hi]` reachable during `[t_lo, t_hi]`.
    pub fn singular_point_within(&self, x_lo: S, x_hi: S, t_lo: S, t_hi: S) -> Option<S> {
        if let PotentialKind::MovingNode { alpha } = self.kind {
            if alpha < t_lo || alpha > t_hi {
                return None;
            }
        }
        self.singular_set.iter().copied().find(|&z| z >= x_lo && z <= x_hi)
    }

    /// `c(x, t)`; `+∞` exactly on the singular set.
    pub fn evaluate(&self, x: S, t: S) -> Result<S> {
        if self.singular_points_at(t).contains(&x) {
            return Ok(S::infinity());
        }
        let one = S::one();
        let two = S::lit(2.0);
        Ok(match &self.kind {
            PotentialKind::Free => S::zero(),
            PotentialKind::Harmonic => x * x - one,
            PotentialKind::GaussianCase => {
                let s = one + t * t;
                x * x / (two * s * s) - one / s
            }
            PotentialKind::NodalCase => {
                let s = one + t * t;
                x * x / (two * s * s) - S::lit(3.0) / s
            }
            PotentialKind::Centrifugal { gamma, energy } => {
                let barrier = if *gamma == S::zero() { S::zero() } else { two * *gamma / (x * x) };
                x * x + barrier - *energy
            }
            PotentialKind::MovingNode { alpha } => moving_node_value(x, t - *alpha),
            PotentialKind::Tabulated(table) => table.eval(x, t)?,
        })
    }

    /// Samples `c(·, t)` on every node of `grid`.
    pub fn sample(&self, grid: &crate::grid::Grid<S>, t: S) -> Result<Vec<S>> {
        grid.nodes().into_iter().map(|x| self.evaluate(x, t)).collect()
    }
}

/// `Δρ^{1/2}/ρ^{1/2}` for `ρ ∝ (1+τ²)^{-5/2} e^{-x²/(2(1+τ²))} P(x, τ)` with
/// `P = x⁴/4 - x²τ² + τ²(1+τ²)`, written through `ln ρ^{1/2}`.
fn moving_node_value<S: Scalar>(x: S, tau: S) -> S {
    let one = S::one();
    let two = S::lit(2.0);
    let s = one + tau * tau;
    let t2 = tau * tau;
    let x2 = x * x;
    let p = x2 * x2 / S::lit(4.0) - x2 * t2 + t2 * s;
    if p <= S::zero() {
        return S::infinity();
    }
    let dp = x * x2 - two * t2 * x;
    let d2p = S::lit(3.0) * x2 - two * t2;
    let grad = -x / (two * s) + dp / (two * p);
    grad * grad - one / (two * s) + d2p / (two * p) - dp * dp / (two * p * p)
}

/// Central-difference `Δρ^{1/2}/ρ^{1/2}` with one-sided second-order stencils
/// at the grid ends. All nodes must carry positive density.
pub fn quantum_potential_from_density<S: Scalar>(rho: &Profile<S>) -> Result<Profile<S>> {
    if let Some((index, v)) = rho.values().iter().enumerate().find(|(_, v)| !(**v > S::zero())) {
        return Err(Error::NonPositiveInterior { index, value: v.as_f64() });
    }
    let amp = rho.map(S::sqrt);
    let lap = amp.laplacian();
    lap.zip_map(&amp, |l, a| l / a)
}

/// `c = ∂_t ln g + (b²/2 + ∇b)/2`; `dt_log_g = None` means a stationary case.
pub fn potential_from_drift<S: Scalar>(b: &Profile<S>, dt_log_g: Option<&Profile<S>>) -> Result<Profile<S>> {
    let half = S::lit(0.5);
    let grad = b.gradient();
    let c = b.zip_map(&grad, |bv, db| half * (bv * bv * half + db))?;
    match dt_log_g {
        Some(d) => c.zip_map(d, |a, e| a + e),
        None => Ok(c),
    }
}
