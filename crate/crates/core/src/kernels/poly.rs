//! Least-squares polynomial approximation of `log10` and Gaussian moments.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Required maximum absolute error of an automatically chosen fit.
pub const POLY_TOLERANCE: f64 = 1e-3;
/// Largest degree tried by [`PolyLogApprox::auto`].
pub const MAX_AUTO_DEGREE: usize = 12;

const FIT_SAMPLES: usize = 10_000;
const CHECK_SAMPLES: usize = 20_001;
const MAX_CONDITION: f64 = 1e12;

/// `log10(d) ~ sum_j a_j t^j` on `[d_lo, d_hi]`, where
/// `t = (2d - d_lo - d_hi) / (d_hi - d_lo)` maps the range onto `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyLogApprox {
    coeffs: Vec<f64>,
    d_lo: f64,
    d_hi: f64,
    max_err: f64,
}

fn legendre_row(t: f64, degree: usize, row: &mut [f64]) {
    row[0] = 1.0;
    if degree >= 1 {
        row[1] = t;
    }
    for k in 2..=degree {
        let kf = k as f64;
        row[k] = ((2.0 * kf - 1.0) * t * row[k - 1] - (kf - 1.0) * row[k - 2]) / kf;
    }
}

/// Monomial coefficients of the Legendre polynomials `P_0..P_J`.
fn legendre_monomials(degree: usize) -> Vec<Vec<f64>> {
    let mut p: Vec<Vec<f64>> = vec![vec![1.0]];
    if degree >= 1 {
        p.push(vec![0.0, 1.0]);
    }
    for k in 2..=degree {
        let kf = k as f64;
        let mut next = vec![0.0; k + 1];
        for (i, c) in p[k - 1].iter().enumerate() {
            next[i + 1] += (2.0 * kf - 1.0) / kf * c;
        }
        for (i, c) in p[k - 2].iter().enumerate() {
            next[i] -= (kf - 1.0) / kf * c;
        }
        p.push(next);
    }
    p
}

impl PolyLogApprox {
    /// Least-squares fit of degree `degree` on `[d_lo, d_hi]`, solved in a
    /// Legendre basis on uniform samples and stored in monomial form.
    pub fn fit(d_lo: f64, d_hi: f64, degree: usize) -> Result<Self> {
        if !(d_lo > 0.0 && d_hi > d_lo && d_hi.is_finite()) {
            return Err(Error::Config(format!("invalid fit range [{d_lo}, {d_hi}]")));
        }
        if degree < 1 {
            return Err(Error::Config("polynomial degree must be >= 1".into()));
        }
        let cols = degree + 1;
        let ts: Vec<f64> = (0..FIT_SAMPLES)
            .map(|k| -1.0 + 2.0 * k as f64 / (FIT_SAMPLES - 1) as f64)
            .collect();

        // The monomial representation is what gets integrated; refuse
        // degrees where it stops being numerically meaningful.
        let vander = DMatrix::from_fn(ts.len(), cols, |i, j| ts[i].powi(j as i32));
        let sv = vander.singular_values();
        let condition = sv.max() / sv.min();
        if !(condition < MAX_CONDITION) {
            return Err(Error::DegreeTooHigh { degree, condition });
        }

        let mut design = DMatrix::zeros(ts.len(), cols);
        let mut row = vec![0.0; cols];
        for (i, &t) in ts.iter().enumerate() {
            legendre_row(t, degree, &mut row);
            for j in 0..cols {
                design[(i, j)] = row[j];
            }
        }
        let target = DVector::from_iterator(ts.len(), ts.iter().map(|&t| Self::to_d(t, d_lo, d_hi).log10()));
        let svd = design.svd(true, true);
        let legendre = svd.solve(&target, 1e-14).map_err(|e| Error::Domain(e.to_string()))?;

        let basis = legendre_monomials(degree);
        let mut coeffs = vec![0.0; cols];
        for (k, poly) in basis.iter().enumerate() {
            for (i, c) in poly.iter().enumerate() {
                coeffs[i] += legendre[k] * c;
            }
        }
        let mut approx = Self {
            coeffs,
            d_lo,
            d_hi,
            max_err: 0.0,
        };
        approx.max_err = (0..CHECK_SAMPLES)
            .map(|k| {
                let d = d_lo + (d_hi - d_lo) * k as f64 / (CHECK_SAMPLES - 1) as f64;
                (approx.eval(d) - d.log10()).abs()
            })
            .fold(0.0, f64::max);
        Ok(approx)
    }

    /// Smallest degree up to [`MAX_AUTO_DEGREE`] whose fit error is within
    /// `tolerance`.
    pub fn auto(d_lo: f64, d_hi: f64, tolerance: f64) -> Result<Self> {
        for degree in 1..=MAX_AUTO_DEGREE {
            let approx = Self::fit(d_lo, d_hi, degree)?;
            if approx.max_err <= tolerance {
                return Ok(approx);
            }
        }
        Err(Error::Config(format!(
            "no polynomial of degree <= {MAX_AUTO_DEGREE} reaches error {tolerance} on [{d_lo}, {d_hi}]"
        )))
    }

    fn to_d(t: f64, d_lo: f64, d_hi: f64) -> f64 {
        0.5 * (t * (d_hi - d_lo) + d_lo + d_hi)
    }

    pub fn to_t(&self, d: f64) -> f64 {
        (2.0 * d - self.d_lo - self.d_hi) / (self.d_hi - self.d_lo)
    }

    /// `dt/dd`.
    pub fn t_scale(&self) -> f64 {
        2.0 / (self.d_hi - self.d_lo)
    }

    pub fn eval(&self, d: f64) -> f64 {
        let t = self.to_t(d);
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Monomial coefficients in the normalized variable `t`.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn fit_range(&self) -> (f64, f64) {
        (self.d_lo, self.d_hi)
    }

    pub fn max_err(&self) -> f64 {
        self.max_err
    }

    /// Coefficients of the same polynomial in `c = t - shift`.
    pub fn shifted_coeffs(&self, shift: f64) -> Vec<f64> {
        let mut b = self.coeffs.clone();
        let n = b.len();
        // repeated synthetic division by (t - shift)
        for k in 0..n {
            for j in (k..n - 1).rev() {
                b[j] += shift * b[j + 1];
            }
        }
        b
    }

    /// `J,d_lo,d_hi,max_err,a_0,...,a_J`.
    pub fn csv_row(&self) -> String {
        let mut s = format!("{},{},{},{}", self.degree(), self.d_lo, self.d_hi, self.max_err);
        for c in &self.coeffs {
            let _ = write!(s, ",{c}");
        }
        s
    }

    pub fn from_csv_row(row: &str) -> Result<Self> {
        let bad = || Error::Config(format!("malformed polynomial row: {row}"));
        let fields: Vec<&str> = row.trim().split(',').collect();
        if fields.len() < 6 {
            return Err(bad());
        }
        let degree: usize = fields[0].parse().map_err(|_| bad())?;
        let nums: std::result::Result<Vec<f64>, _> = fields[1..].iter().map(|f| f.parse::<f64>()).collect();
        let nums = nums.map_err(|_| bad())?;
        if nums.len() != degree + 4 {
            return Err(bad());
        }
        Ok(Self {
            d_lo: nums[0],
            d_hi: nums[1],
            max_err: nums[2],
            coeffs: nums[3..].to_vec(),
        })
    }
}

/// Raw moments `E[d^j]`, `j = 0..=degree`, of `N(m, s^2)`.
pub fn gaussian_raw_moments(m: f64, s: f64, degree: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(degree + 1);
    out.push(1.0);
    if degree >= 1 {
        out.push(m);
    }
    let s2 = s * s;
    for j in 2..=degree {
        let v = m * out[j - 1] + (j - 1) as f64 * s2 * out[j - 2];
        out.push(v);
    }
    out
}
