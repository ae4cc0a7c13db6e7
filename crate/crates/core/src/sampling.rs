//! Haar directions, elliptical samples, finite-precision rounding and the
//! Monte Carlo oracles used to check the probabilistic ingredients.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, LogNormal, Pareto, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cpmap::VectorTuple;
use crate::error::{Error, Result};
use crate::linalg::{normalize, sym_op_norm, Normalization, PdMatrix};

/// Stream ids for the generators derived from one seed.
pub mod streams {
    pub const DIRECTIONS: u64 = 0;
    pub const RADII: u64 = 1;
}

/// Seeded generator on a given stream.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Law of the radial factor `u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum UDist {
    Constant,
    /// `exp(s·N(0,1))`.
    LogNormal(f64),
    /// Pareto with scale 1 and shape `a`.
    Pareto(f64),
    /// Absolute value of a standard Cauchy variable.
    Cauchy,
}

impl UDist {
    fn sampler(&self) -> Result<RadialSampler> {
        Ok(match *self {
            UDist::Constant => RadialSampler::Constant,
            UDist::LogNormal(s) => RadialSampler::LogNormal(
                LogNormal::new(0.0, s)
                    .map_err(|e| Error::InvalidArgument(format!("lognormal: {e}")))?,
            ),
            UDist::Pareto(a) => RadialSampler::Pareto(
                Pareto::new(1.0, a).map_err(|e| Error::InvalidArgument(format!("pareto: {e}")))?,
            ),
            UDist::Cauchy => RadialSampler::Cauchy(Cauchy::new(0.0, 1.0).expect("standard Cauchy")),
        })
    }
}

enum RadialSampler {
    Constant,
    LogNormal(LogNormal<f64>),
    Pareto(Pareto<f64>),
    Cauchy(Cauchy<f64>),
}

impl RadialSampler {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            RadialSampler::Constant => 1.0,
            RadialSampler::LogNormal(d) => d.sample(rng),
            RadialSampler::Pareto(d) => d.sample(rng),
            RadialSampler::Cauchy(d) => loop {
                let t: f64 = d.sample(rng).abs();
                if t > 0.0 && t.is_finite() {
                    break t;
                }
            },
        }
    }
}

impl std::fmt::Display for UDist {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            UDist::Constant => write!(f, "const"),
            UDist::LogNormal(s) => write!(f, "lognormal:{s}"),
            UDist::Pareto(a) => write!(f, "pareto:{a}"),
            UDist::Cauchy => write!(f, "cauchy"),
        }
    }
}

impl std::str::FromStr for UDist {
    type Err = Error;

    /// Parses `const`, `lognormal:s`, `pareto:a` or `cauchy`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let param = |a: Option<&str>| -> Result<f64> {
            let a = a.ok_or_else(|| {
                Error::InvalidArgument(format!("{name} needs a parameter, as in {name}:1.5"))
            })?;
            let v: f64 = a
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad parameter {a:?} for {name}")))?;
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} parameter must be positive"
                )));
            }
            Ok(v)
        };
        match (name, arg) {
            ("const", None) => Ok(UDist::Constant),
            ("cauchy", None) => Ok(UDist::Cauchy),
            ("lognormal", a) => Ok(UDist::LogNormal(param(a)?)),
            ("pareto", a) => Ok(UDist::Pareto(param(a)?)),
            _ => Err(Error::InvalidArgument(format!(
                "unknown radial law {s:?}; expected const, lognormal:s, pareto:a or cauchy"
            ))),
        }
    }
}

/// `x = u Σ^{1/2} v` with `v` Haar on the sphere and `u` independent.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipticalSpec {
    shape: PdMatrix,
    pub u_dist: UDist,
    pub seed: u64,
}

impl EllipticalSpec {
    /// The shape is rescaled to trace `p`.
    pub fn new(shape: &PdMatrix, u_dist: UDist, seed: u64) -> Self {
        EllipticalSpec {
            shape: normalize(shape, Normalization::TraceP),
            u_dist,
            seed,
        }
    }

    pub fn isotropic(p: usize, u_dist: UDist, seed: u64) -> Self {
        Self::new(&PdMatrix::identity(p), u_dist, seed)
    }

    pub fn p(&self) -> usize {
        self.shape.dim()
    }

    pub fn shape(&self) -> &PdMatrix {
        &self.shape
    }
}

/// `diag(t, (p−t)/(p−1), …, (p−t)/(p−1))`, a trace-`p` shape stretched along
/// the first axis.
pub fn spiked_shape(p: usize, t: f64) -> Result<PdMatrix> {
    if p < 2 || !(t > 0.0 && t < p as f64) {
        return Err(Error::InvalidArgument(format!(
            "spiked shape needs p >= 2 and 0 < t < p, got p = {p}, t = {t}"
        )));
    }
    let rest = (p as f64 - t) / (p as f64 - 1.0);
    let mut d = vec![rest; p];
    d[0] = t;
    PdMatrix::from_diagonal(&d)
}

/// Uniform point on `S^{p−1}` as a normalized standard Gaussian.
pub fn haar_unit<R: Rng + ?Sized>(p: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let g: DVector<f64> = DVector::from_fn(p, |_, _| StandardNormal.sample(rng));
        let norm = g.norm();
        if norm > 0.0 {
            return g / norm;
        }
    }
}

/// `n` Haar unit vectors in `R^p` from the given seed.
pub fn haar_tuple(p: usize, n: usize, seed: u64) -> VectorTuple {
    let mut rng = stream_rng(seed, streams::DIRECTIONS);
    let mut data = DMatrix::zeros(p, n);
    for mut col in data.column_iter_mut() {
        col.copy_from(&haar_unit(p, &mut rng));
    }
    VectorTuple::from_columns(data).expect("unit vectors are nonzero")
}

/// `n` i.i.d. draws; directions and radii use separate streams of `spec.seed`.
pub fn sample_elliptical(spec: &EllipticalSpec, n: usize) -> Result<VectorTuple> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let p = spec.p();
    let root = spec.shape.sqrt();
    let radial = spec.u_dist.sampler()?;
    let mut dir_rng = stream_rng(spec.seed, streams::DIRECTIONS);
    let mut rad_rng = stream_rng(spec.seed, streams::RADII);
    let mut data = DMatrix::zeros(p, n);
    for mut col in data.column_iter_mut() {
        let v = haar_unit(p, &mut dir_rng);
        let u = radial.draw(&mut rad_rng);
        col.copy_from(&(root.as_matrix() * v * u));
    }
    VectorTuple::from_columns(data)
}

/// Rounds every entry of sample `i` to the nearest multiple of `2^{−bits[i]}`
/// (ties to even).
pub fn round_bits(x: &VectorTuple, bits: &[u32]) -> Result<VectorTuple> {
    if bits.len() != x.len() {
        return Err(Error::DimMismatch {
            expected: x.len(),
            actual: bits.len(),
        });
    }
    if let Some(&b) = bits.iter().find(|&&b| b == 0 || b > 1000) {
        return Err(Error::InvalidArgument(format!(
            "bit counts must lie in 1..=1000, got {b}"
        )));
    }
    let mut data = x.columns().clone();
    for (index, (mut col, &b)) in data.column_iter_mut().zip(bits).enumerate() {
        let scale = 2f64.powi(b as i32);
        col.apply(|v| *v = (*v * scale).round_ties_even() / scale);
        if col.iter().all(|&v| v == 0.0) {
            return Err(Error::RoundedToZero { index });
        }
    }
    VectorTuple::from_columns(data)
}

/// `E[X_k^j]` for `X_k = Σ_{i≤k} v_i²`, `v` Haar on `S^{p−1}`; `X_k` is
/// `Beta(k/2, (p−k)/2)` (a point mass at 1 when `k = p`).
pub fn coordinate_mass_moment(p: usize, k: usize, j: u32) -> Result<f64> {
    if k == 0 || k > p || j == 0 {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= k <= p and j >= 1, got p = {p}, k = {k}, j = {j}"
        )));
    }
    let (alpha, beta) = (k as f64 / 2.0, (p - k) as f64 / 2.0);
    Ok((0..j)
        .map(|r| (alpha + r as f64) / (alpha + beta + r as f64))
        .product())
}

/// `Var[X_k]` from the first two moments.
pub fn coordinate_mass_variance(p: usize, k: usize) -> Result<f64> {
    let m1 = coordinate_mass_moment(p, k, 1)?;
    Ok(coordinate_mass_moment(p, k, 2)? - m1 * m1)
}

/// `‖(p/n) Σ v_i v_iᵀ − I_p‖_op`.
pub fn covariance_concentration(v: &VectorTuple) -> f64 {
    let (p, n) = (v.dim(), v.len());
    let m = v.gram() * (p as f64 / n as f64) - DMatrix::identity(p, p);
    sym_op_norm(&m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn haar_unit_examples() {
        let mut rng = stream_rng(1, 0);
        for _ in 0..20 {
            let v = haar_unit(1, &mut rng);
            assert_eq!(v[0].abs(), 1.0);
        }
        for p in [2, 5, 17] {
            assert!((haar_unit(p, &mut rng).norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn haar_first_coordinate_mass_has_beta_mean() {
        let mut rng = stream_rng(2, 0);
        let draws = 100_000;
        let xs: Vec<f64> = (0..draws)
            .map(|_| haar_unit(10, &mut rng)[0].powi(2))
            .collect();
        let mean = xs.iter().sum::<f64>() / draws as f64;
        let se = (coordinate_mass_variance(10, 1).unwrap() / draws as f64).sqrt();
        assert!((mean - 0.1).abs() <= 3.0 * se);
    }

    #[test]
    fn elliptical_examples() {
        let spec = EllipticalSpec::isotropic(3, UDist::Constant, 9);
        let x = sample_elliptical(&spec, 50).unwrap();
        assert!(x.norms().iter().all(|n| (n - 1.0).abs() < 1e-12));
        assert_eq!(x, sample_elliptical(&spec, 50).unwrap());

        let spec = EllipticalSpec::new(&spiked_shape(3, 2.5).unwrap(), UDist::Constant, 9);
        let x = sample_elliptical(&spec, 2000).unwrap();
        let gram = x.gram() / 2000.0;
        assert!(gram[(0, 0)] > 2.0 * gram[(1, 1)]);
        assert!((spec.shape().trace() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn radial_laws_are_positive() {
        for u in [UDist::LogNormal(1.0), UDist::Pareto(1.5), UDist::Cauchy] {
            let spec = EllipticalSpec::isotropic(2, u, 4);
            let x = sample_elliptical(&spec, 500).unwrap();
            assert!(x.norms().iter().all(|n| *n > 0.0 && n.is_finite()));
        }
    }

    #[test]
    fn udist_parsing_round_trips() {
        for s in ["const", "lognormal:0.5", "pareto:2", "cauchy"] {
            let u: UDist = s.parse().unwrap();
            assert_eq!(u.to_string().parse::<UDist>().unwrap(), u);
        }
        assert!("pareto".parse::<UDist>().is_err());
        assert!("lognormal:-1".parse::<UDist>().is_err());
        assert!("gamma:2".parse::<UDist>().is_err());
    }

    #[test]
    fn round_bits_examples() {
        let x = VectorTuple::from_rows(&[vec![0.75, std::f64::consts::FRAC_1_SQRT_2]]).unwrap();
        let r = round_bits(&x, &[2]).unwrap();
        assert_eq!(r.rows(), vec![vec![0.75, 0.75]]);
        // ties go to even multiples
        let x = VectorTuple::from_rows(&[vec![0.125, 0.375]]).unwrap();
        assert_eq!(round_bits(&x, &[2]).unwrap().rows(), vec![vec![0.0, 0.5]]);

        let tiny = VectorTuple::from_rows(&[vec![1.0, 0.0], vec![0.01, -0.02]]).unwrap();
        assert!(matches!(
            round_bits(&tiny, &[3, 3]),
            Err(Error::RoundedToZero { index: 1 })
        ));
        assert!(round_bits(&tiny, &[3, 0]).is_err());
    }

    #[test]
    fn round_bits_error_is_half_a_unit() {
        let x = haar_tuple(5, 40, 3);
        let bits: Vec<u32> = (0..40).map(|i| 4 + (i % 7) as u32).collect();
        let r = round_bits(&x, &bits).unwrap();
        for (i, &b) in bits.iter().enumerate() {
            let err = (x.vector(i) - r.vector(i)).amax();
            assert!(err <= 2f64.powi(-(b as i32) - 1));
        }
    }

    #[test]
    fn moment_examples() {
        assert_eq!(coordinate_mass_moment(7, 7, 3).unwrap(), 1.0);
        assert!((coordinate_mass_moment(10, 3, 1).unwrap() - 0.3).abs() < 1e-15);
        // Beta(3/2, 7/2): E X² = (3/2)(5/2) / (5 · 6)
        assert!((coordinate_mass_moment(10, 3, 2).unwrap() - 0.125).abs() < 1e-15);
        assert!(coordinate_mass_moment(3, 4, 1).is_err());
    }

    #[test]
    fn covariance_concentration_examples() {
        let v = VectorTuple::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(covariance_concentration(&v) < 1e-15);
        let v = VectorTuple::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert!((covariance_concentration(&v) - 1.0).abs() < 1e-15);
    }
}
