//! The activation zoo: the modulus nonlinearity, its two smooth
//! approximations, and the seven benchmark activations, each with a
//! hand-derived analytic derivative.
//!
//! Every kind is evaluated through [`apply`], which returns the value and the
//! derivative together so the forward pass can cache the derivative for
//! backpropagation. Conventions at the non-differentiable points:
//!
//! * modulus: derivative at 0 is defined as 1, so the derivative is exactly
//!   +1 or -1 everywhere and the gradient norm never vanishes;
//! * relu: derivative at 0 is 0;
//! * leaky relu: the identity branch wins ties, so the derivative at 0 is 1.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Tagged activation selector. Kinds that take a shape hyperparameter carry
/// it inline; see [`ActivationKind::default_beta`] for the defaults used
/// across the benchmark suite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActivationKind {
    Modulus,
    SoftModulusQ,
    /// `x * tanh(x / beta)`; beta in (0, 1].
    SoftModulusT { beta: f64 },
    ReLU,
    /// `max(x / beta, x)`; the original definition takes beta > 1.
    LeakyReLU { beta: f64 },
    Tanh,
    /// `x * sigmoid(beta * x)`.
    Swish { beta: f64 },
    /// `x` for positive inputs, `beta * (e^x - 1)` otherwise.
    Elu { beta: f64 },
    Mish,
    Pflu,
}

impl ActivationKind {
    /// All ten kinds with their benchmark-default hyperparameters, in the
    /// order result tables list them.
    pub const fn all_default() -> [ActivationKind; 10] {
        [
            ActivationKind::ReLU,
            ActivationKind::LeakyReLU { beta: 10.0 },
            ActivationKind::Tanh,
            ActivationKind::Swish { beta: 1.0 },
            ActivationKind::Elu { beta: 1.0 },
            ActivationKind::Pflu,
            ActivationKind::Mish,
            ActivationKind::Modulus,
            ActivationKind::SoftModulusQ,
            ActivationKind::SoftModulusT { beta: 0.01 },
        ]
    }

    /// Default beta for kinds that use one.
    pub fn default_beta(name: &str) -> Option<f64> {
        match name {
            "leakyrelu" => Some(10.0),
            "elu" | "swish" => Some(1.0),
            "softmodulust" => Some(0.01),
            _ => None,
        }
    }

    /// The modulus and its two smooth approximations are the proposed kinds;
    /// the rest form the benchmark pool significance tests compare against.
    pub fn is_proposed(&self) -> bool {
        matches!(
            self,
            ActivationKind::Modulus
                | ActivationKind::SoftModulusQ
                | ActivationKind::SoftModulusT { .. }
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            ActivationKind::Modulus => "modulus",
            ActivationKind::SoftModulusQ => "softmodulusq",
            ActivationKind::SoftModulusT { .. } => "softmodulust",
            ActivationKind::ReLU => "relu",
            ActivationKind::LeakyReLU { .. } => "leakyrelu",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Swish { .. } => "swish",
            ActivationKind::Elu { .. } => "elu",
            ActivationKind::Mish => "mish",
            ActivationKind::Pflu => "pflu",
        }
    }

    pub fn beta(&self) -> Option<f64> {
        match *self {
            ActivationKind::SoftModulusT { beta }
            | ActivationKind::LeakyReLU { beta }
            | ActivationKind::Swish { beta }
            | ActivationKind::Elu { beta } => Some(beta),
            _ => None,
        }
    }

    /// Build a kind from its name and an optional beta override.
    pub fn parse(name: &str, beta: Option<f64>) -> Result<Self> {
        let lower = name.to_ascii_lowercase();
        let kind = match lower.as_str() {
            "modulus" => ActivationKind::Modulus,
            "softmodulusq" => ActivationKind::SoftModulusQ,
            "softmodulust" => ActivationKind::SoftModulusT {
                beta: beta.unwrap_or(0.01),
            },
            "relu" => ActivationKind::ReLU,
            "leakyrelu" => ActivationKind::LeakyReLU {
                beta: beta.unwrap_or(10.0),
            },
            "tanh" => ActivationKind::Tanh,
            "swish" => ActivationKind::Swish {
                beta: beta.unwrap_or(1.0),
            },
            "elu" => ActivationKind::Elu {
                beta: beta.unwrap_or(1.0),
            },
            "mish" => ActivationKind::Mish,
            "pflu" => ActivationKind::Pflu,
            other => {
                return Err(Error::Parameter {
                    name: "activation",
                    detail: format!("unknown kind '{other}'"),
                })
            }
        };
        kind.validate()?;
        Ok(kind)
    }

    /// Reject hyperparameters outside the documented ranges. Evaluation
    /// itself stays total so constructions like leaky relu with beta = -1
    /// (which reproduces the modulus exactly) remain expressible in tests.
    pub fn validate(&self) -> Result<()> {
        match *self {
            ActivationKind::SoftModulusT { beta } => {
                if !(beta > 0.0 && beta <= 1.0) {
                    return Err(Error::Parameter {
                        name: "beta",
                        detail: format!("softmodulust needs beta in (0, 1], got {beta}"),
                    });
                }
            }
            ActivationKind::LeakyReLU { beta } => {
                if beta <= 1.0 {
                    return Err(Error::Parameter {
                        name: "beta",
                        detail: format!("leakyrelu needs beta > 1, got {beta}"),
                    });
                }
            }
            ActivationKind::Elu { beta } | ActivationKind::Swish { beta } => {
                if !beta.is_finite() {
                    return Err(Error::Parameter {
                        name: "beta",
                        detail: format!("beta must be finite, got {beta}"),
                    });
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Inputs where the analytic derivative is a convention rather than a
    /// limit; finite-difference checks skip a small neighborhood of these.
    pub fn kinks(&self) -> &'static [f64] {
        match self {
            ActivationKind::Modulus | ActivationKind::ReLU | ActivationKind::LeakyReLU { .. } => {
                &[0.0]
            }
            ActivationKind::SoftModulusQ => &[-1.0, 0.0, 1.0],
            _ => &[],
        }
    }
}

impl std::fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Forward value plus the derivative cached for the backward pass.
#[derive(Debug, Clone)]
pub struct ActivationOut<T> {
    pub value: Tensor<T>,
    pub derivative: Tensor<T>,
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    // overflow-safe in both tails
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn softplus<T: Scalar>(x: T) -> T {
    // max(x, 0) + log1p(e^{-|x|}) never overflows
    x.max(T::zero()) + x.abs().neg().exp().ln_1p()
}

/// Value and derivative of one activation at one point.
pub fn eval<T: Scalar>(kind: ActivationKind, x: T) -> (T, T) {
    let one = T::one();
    match kind {
        ActivationKind::Modulus => {
            // f(x) = |x| = sgn(x) * x, f'(x) = sgn(x), with f'(0) := 1 so the
            // derivative is +-1 everywhere and f(x) = f'(x) * x holds exactly.
            let d = if x < T::zero() { -one } else { one };
            (d * x, d)
        }
        ActivationKind::SoftModulusQ => {
            let ax = x.abs();
            if ax <= one {
                let two = T::from_f64c(2.0);
                let three = T::from_f64c(3.0);
                let four = T::from_f64c(4.0);
                (x * x * (two - ax), four * x - three * x * ax)
            } else {
                let d = if x < T::zero() { -one } else { one };
                (ax, d)
            }
        }
        ActivationKind::SoftModulusT { beta } => {
            let b = T::from_f64c(beta);
            let z = x / b;
            let t = z.tanh();
            // second term underflows to 0 once tanh saturates
            (x * t, t + z * (one - t * t))
        }
        ActivationKind::ReLU => {
            if x > T::zero() {
                (x, one)
            } else {
                (T::zero(), T::zero())
            }
        }
        ActivationKind::LeakyReLU { beta } => {
            // f(x) = max(x / beta, x); ties (x = 0, beta = 1) take the
            // identity branch so the derivative at 0 is 1.
            let b = T::from_f64c(beta);
            let scaled = x / b;
            if scaled > x {
                (scaled, one / b)
            } else {
                (x, one)
            }
        }
        ActivationKind::Tanh => {
            let t = x.tanh();
            (t, one - t * t)
        }
        ActivationKind::Swish { beta } => {
            let b = T::from_f64c(beta);
            let s = sigmoid(b * x);
            (x * s, s + b * x * s * (one - s))
        }
        ActivationKind::Elu { beta } => {
            let b = T::from_f64c(beta);
            if x > T::zero() {
                (x, one)
            } else {
                let e = x.exp();
                (b * (e - one), b * e)
            }
        }
        ActivationKind::Mish => {
            let sp = softplus(x);
            let t = sp.tanh();
            (x * t, t + x * (one - t * t) * sigmoid(x))
        }
        ActivationKind::Pflu => {
            // f(x) = x * (1 + x / sqrt(1 + x^2)) / 2
            let half = T::from_f64c(0.5);
            let r = (one + x * x).sqrt();
            let g = x / r;
            let gate = half * (one + g);
            // g'(x) = (1 + x^2)^{-3/2}
            (x * gate, gate + half * x / (r * r * r))
        }
    }
}

/// Apply one activation elementwise, returning value and derivative tensors.
/// Non-finite inputs or outputs are surfaced as numeric errors.
pub fn apply<T: Scalar>(kind: ActivationKind, x: &Tensor<T>) -> Result<ActivationOut<T>> {
    let mut value = Tensor::zeros(x.shape());
    let mut derivative = Tensor::zeros(x.shape());
    for (i, &xi) in x.data().iter().enumerate() {
        if !xi.is_finite() {
            return Err(Error::numeric(
                format!("activation {}", kind.name()),
                format!("non-finite input {xi} at flat index {i}"),
            ));
        }
        let (v, d) = eval(kind, xi);
        value.data_mut()[i] = v;
        derivative.data_mut()[i] = d;
    }
    value.validate_finite(kind.name())?;
    derivative.validate_finite(kind.name())?;
    Ok(ActivationOut { value, derivative })
}

/// Membership-weighted blend of `-x`, `x^2` and `x` that re-derives the
/// quadratic soft modulus from its fuzzy-set construction. Independent of the
/// closed form in [`eval`]; the equivalence of the two is a library property.
pub fn soft_modulus_q_fuzzy_oracle(x: f64) -> f64 {
    fn mu_low(x: f64) -> f64 {
        if x < -1.0 {
            1.0
        } else if x < 0.0 {
            -x
        } else {
            0.0
        }
    }
    fn mu_med(x: f64) -> f64 {
        if x < -1.0 {
            0.0
        } else if x < 0.0 {
            x + 1.0
        } else if x < 1.0 {
            1.0 - x
        } else {
            0.0
        }
    }
    fn mu_high(x: f64) -> f64 {
        if x < 0.0 {
            0.0
        } else if x < 1.0 {
            x
        } else {
            1.0
        }
    }

    let (low, med, high) = (mu_low(x), mu_med(x), mu_high(x));
    let numer = -x * low + x * x * med + x * high;
    let denom = low + med + high;
    numer / denom
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ALL: [ActivationKind; 10] = ActivationKind::all_default();

    fn eval1(kind: ActivationKind, x: f64) -> (f64, f64) {
        eval(kind, x)
    }

    #[test]
    fn modulus_examples() {
        assert_eq!(eval1(ActivationKind::Modulus, -2.0), (2.0, -1.0));
        assert_eq!(eval1(ActivationKind::Modulus, 0.0), (0.0, 1.0));
        assert_eq!(eval1(ActivationKind::Modulus, 3.5), (3.5, 1.0));
    }

    #[test]
    fn soft_modulus_q_examples() {
        assert_eq!(eval1(ActivationKind::SoftModulusQ, 0.0), (0.0, 0.0));
        assert_eq!(eval1(ActivationKind::SoftModulusQ, 1.0), (1.0, 1.0));
        // 0.25 * 1.5, evaluated exactly in binary floating point
        assert_eq!(eval1(ActivationKind::SoftModulusQ, 0.5).0, 0.375);
        assert_eq!(eval1(ActivationKind::SoftModulusQ, -2.0), (2.0, -1.0));
    }

    #[test]
    fn soft_modulus_t_examples() {
        let t = ActivationKind::SoftModulusT { beta: 0.01 };
        assert_eq!(eval1(t, 0.0), (0.0, 0.0));
        // tanh(100) is 1 to far below 1e-12
        assert!((eval1(t, 1.0).0 - 1.0).abs() < 1e-12);
        let (v, _) = eval1(t, -0.005);
        assert!((v - 0.005 * 0.5_f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn benchmark_examples() {
        assert_eq!(eval1(ActivationKind::ReLU, -1.0), (0.0, 0.0));
        assert_eq!(eval1(ActivationKind::Swish { beta: 1.0 }, 0.0), (0.0, 0.5));
        let (v, d) = eval1(ActivationKind::Mish, 0.0);
        assert_eq!(v, 0.0);
        assert!((d - 2.0_f64.ln().tanh()).abs() < 1e-15);
        assert_eq!(eval1(ActivationKind::Pflu, 0.0), (0.0, 0.5));
        let (v, d) = eval1(ActivationKind::LeakyReLU { beta: 10.0 }, -3.0);
        assert!((v - -0.3).abs() < 1e-15);
        assert!((d - 0.1).abs() < 1e-15);
    }

    #[test]
    fn fuzzy_oracle_branch_values() {
        assert!((soft_modulus_q_fuzzy_oracle(-0.5) - 0.375).abs() < 1e-15);
        assert!((soft_modulus_q_fuzzy_oracle(0.5) - 0.375).abs() < 1e-15);
        assert_eq!(soft_modulus_q_fuzzy_oracle(2.0), 2.0);
        assert_eq!(soft_modulus_q_fuzzy_oracle(-3.0), 3.0);
    }

    #[test]
    fn fuzzy_oracle_matches_closed_form_on_dense_grid() {
        for i in 0..=6000 {
            let x = -3.0 + i as f64 * 0.001;
            let (v, _) = eval1(ActivationKind::SoftModulusQ, x);
            let o = soft_modulus_q_fuzzy_oracle(x);
            assert!((v - o).abs() <= 1e-12, "x={x}: closed {v} vs fuzzy {o}");
        }
    }

    #[test]
    fn soft_modulus_t_converges_with_shrinking_beta() {
        // max |x tanh(x/b) - |x|| over the grid away from the origin, for
        // decreasing beta, must shrink monotonically and dip under 1e-3 at
        // the default beta = 0.01.
        let grid: Vec<f64> = (0..=6000)
            .map(|i| -3.0 + i as f64 * 0.001)
            .filter(|x| x.abs() >= 0.05)
            .collect();
        let max_err = |beta: f64| -> f64 {
            grid.iter()
                .map(|&x| (eval1(ActivationKind::SoftModulusT { beta }, x).0 - x.abs()).abs())
                .fold(0.0, f64::max)
        };
        assert!(max_err(0.01) <= 1e-3);
        let betas = [0.005, 0.01, 0.05, 0.1, 0.5, 1.0];
        let errs: Vec<f64> = betas.iter().map(|&b| max_err(b)).collect();
        for pair in errs.windows(2) {
            assert!(pair[0] <= pair[1], "bound must tighten as beta decreases: {errs:?}");
        }
    }

    #[test]
    fn derivative_at_zero_contrast() {
        // the documented mechanism behind the deep-net training failures of
        // the quadratic approximation: zero derivative at the origin
        assert_eq!(eval1(ActivationKind::SoftModulusQ, 0.0).1, 0.0);
        assert_eq!(eval1(ActivationKind::SoftModulusT { beta: 0.01 }, 0.0).1, 0.0);
        assert_eq!(eval1(ActivationKind::Modulus, 0.0).1, 1.0);
    }

    #[test]
    fn finite_difference_grid_all_kinds() {
        // coarse version of the acceptance sweep; step 0.01 keeps it fast
        let h = 1e-6;
        for kind in ALL {
            let mut worst = 0.0_f64;
            for i in 0..=1000 {
                let x = -5.0 + i as f64 * 0.01;
                if kind.kinks().iter().any(|&k| (x - k).abs() < 1e-3) {
                    continue;
                }
                let (_, d) = eval1(kind, x);
                let fd = (eval1(kind, x + h).0 - eval1(kind, x - h).0) / (2.0 * h);
                worst = worst.max((d - fd).abs());
            }
            assert!(worst <= 1e-6, "{kind}: max |analytic - fd| = {worst}");
        }
    }

    #[test]
    fn apply_rejects_non_finite_input() {
        let x = Tensor::new(&[2], vec![1.0_f64, f64::NAN]).unwrap();
        assert!(apply(ActivationKind::Modulus, &x).is_err());
    }

    #[test]
    fn parse_and_validate() {
        assert!(ActivationKind::parse("modulus", None).is_ok());
        assert!(ActivationKind::parse("softmodulust", Some(0.0)).is_err());
        assert!(ActivationKind::parse("softmodulust", Some(1.5)).is_err());
        assert!(ActivationKind::parse("leakyrelu", Some(0.5)).is_err());
        assert!(ActivationKind::parse("nosuch", None).is_err());
    }

    proptest! {
        #[test]
        fn gradient_norm_invariant(x in -1e6_f64..1e6) {
            let (_, d) = eval1(ActivationKind::Modulus, x);
            prop_assert!(d == 1.0 || d == -1.0);
        }

        #[test]
        fn caching_identity(x in -1e6_f64..1e6) {
            let (v, d) = eval1(ActivationKind::Modulus, x);
            prop_assert_eq!(v, d * x);
        }

        #[test]
        fn modulus_equals_leaky_relu_with_negative_unit_beta(x in -1e6_f64..1e6) {
            let (v, d) = eval1(ActivationKind::LeakyReLU { beta: -1.0 }, x);
            let (mv, md) = eval1(ActivationKind::Modulus, x);
            prop_assert_eq!(v, mv);
            prop_assert_eq!(d, md);
        }

        #[test]
        fn even_value_symmetry(x in -100.0_f64..100.0) {
            prop_assert_eq!(
                eval1(ActivationKind::Modulus, x).0,
                eval1(ActivationKind::Modulus, -x).0
            );
            prop_assert_eq!(
                eval1(ActivationKind::SoftModulusQ, x).0,
                eval1(ActivationKind::SoftModulusQ, -x).0
            );
            let t = ActivationKind::SoftModulusT { beta: 0.01 };
            let diff = (eval1(t, x).0 - eval1(t, -x).0).abs();
            prop_assert!(diff <= 1e-15);
        }

        #[test]
        fn fuzzy_oracle_equivalence(x in -3.0_f64..3.0) {
            let closed = eval1(ActivationKind::SoftModulusQ, x).0;
            let fuzzy = soft_modulus_q_fuzzy_oracle(x);
            prop_assert!((closed - fuzzy).abs() <= 1e-12);
            if x.abs() <= 1.0 {
                let reference = x * x * (2.0 - x.abs());
                prop_assert!((closed - reference).abs() <= 1e-15);
                prop_assert!((fuzzy - reference).abs() <= 1e-12);
            }
        }
    }
}
