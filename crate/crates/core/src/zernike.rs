//! Zernike field models: basis construction, least-squares fits on shifted
//! and scaled disks, and analytic evaluation of fields and gradients.
//!
//! Each basis term is expanded once into a bivariate monomial polynomial in
//! the disk coordinates `(u, v)`. A fitted coil then collapses into two
//! polynomials (one per field component) whose derivatives are exact.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Domain, FieldModel, UnitResponse};
use crate::field_oracle::{sample_grid, CoilSpec, Face, FieldSampleGrid, GridGeometry, SizeClass};
use crate::math::{rotation, Mat2, Vec2};
use crate::WORKSPACE_HALF;

pub const MODEL_FORMAT: &str = "magctl-zernike/1";

/// Highest supported radial degree.
pub const MAX_ORDER: u32 = 10;

const CONDITION_LIMIT: f64 = 1e8;

/// Slack on `u² + v² ≤ 1`. The tabulated small-coil radius reaches the far
/// workspace corners only to within its rounding (about 4e-4 mm).
const DISK_SLACK: f64 = 1e-5;

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

fn check_term(n: u32, m: u32) -> Result<()> {
    if m > n || (n - m) % 2 != 0 {
        return Err(Error::InvalidTerm { n, m });
    }
    Ok(())
}

/// Radial function `R_n^m(ρ)`.
pub fn radial_poly(n: u32, m: u32, rho: f64) -> Result<f64> {
    check_term(n, m)?;
    Ok(radial_coefficients(n, m)
        .into_iter()
        .map(|(power, c)| c * rho.powi(power as i32))
        .sum())
}

/// `(power, coefficient)` pairs of `R_n^m`, highest power first.
fn radial_coefficients(n: u32, m: u32) -> Vec<(u32, f64)> {
    (0..=(n - m) / 2)
        .map(|k| {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let c = sign * factorial(n - k) / (factorial(k) * factorial((n + m) / 2 - k) * factorial((n - m) / 2 - k));
            (n - 2 * k, c)
        })
        .collect()
}

/// Dense bivariate polynomial `Σ c_ij u^i v^j` with `i + j ≤ degree`.
///
/// Coefficients are stored degree by degree; within degree `d` the entry for
/// `u^{d−j} v^j` sits at `d(d+1)/2 + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct BivariatePoly {
    degree: usize,
    coeffs: Vec<f64>,
}

fn tri_index(i: usize, j: usize) -> usize {
    let d = i + j;
    d * (d + 1) / 2 + j
}

fn tri_len(degree: usize) -> usize {
    (degree + 1) * (degree + 2) / 2
}

impl BivariatePoly {
    pub fn zero(degree: usize) -> Self {
        Self {
            degree,
            coeffs: vec![0.0; tri_len(degree)],
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Coefficient of `u^i v^j`, zero beyond the stored degree.
    pub fn coeff(&self, i: usize, j: usize) -> f64 {
        if i + j > self.degree {
            0.0
        } else {
            self.coeffs[tri_index(i, j)]
        }
    }

    fn add_term(&mut self, i: usize, j: usize, c: f64) {
        self.coeffs[tri_index(i, j)] += c;
    }

    fn to_degree(&self, degree: usize) -> Self {
        let mut out = Self::zero(degree);
        for d in 0..=self.degree.min(degree) {
            for j in 0..=d {
                out.add_term(d - j, j, self.coeff(d - j, j));
            }
        }
        out
    }

    fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero(self.degree + other.degree);
        for d1 in 0..=self.degree {
            for j1 in 0..=d1 {
                let a = self.coeff(d1 - j1, j1);
                if a == 0.0 {
                    continue;
                }
                for d2 in 0..=other.degree {
                    for j2 in 0..=d2 {
                        out.add_term(d1 - j1 + d2 - j2, j1 + j2, a * other.coeff(d2 - j2, j2));
                    }
                }
            }
        }
        out
    }

    fn axpy(&mut self, alpha: f64, other: &Self) {
        debug_assert!(other.degree <= self.degree);
        for d in 0..=other.degree {
            for j in 0..=d {
                self.add_term(d - j, j, alpha * other.coeff(d - j, j));
            }
        }
    }

    /// Partial derivative in `u` (kept at the same storage degree).
    pub fn d_du(&self) -> Self {
        let mut out = Self::zero(self.degree);
        for d in 1..=self.degree {
            for j in 0..d {
                let i = d - j;
                out.add_term(i - 1, j, i as f64 * self.coeff(i, j));
            }
        }
        out
    }

    /// Partial derivative in `v` (kept at the same storage degree).
    pub fn d_dv(&self) -> Self {
        let mut out = Self::zero(self.degree);
        for d in 1..=self.degree {
            for j in 1..=d {
                out.add_term(d - j, j - 1, j as f64 * self.coeff(d - j, j));
            }
        }
        out
    }

    pub fn eval(&self, u: f64, v: f64) -> f64 {
        let mono = monomials(self.degree, u, v);
        dot(&self.coeffs, &mono)
    }
}

fn monomials(degree: usize, u: f64, v: f64) -> Vec<f64> {
    let mut buf = [0.0; MONOMIALS_MAX];
    monomials_into(degree, u, v, &mut buf).to_vec()
}

/// Number of monomials up to `MAX_ORDER`.
const MONOMIALS_MAX: usize = (MAX_ORDER as usize + 1) * (MAX_ORDER as usize + 2) / 2;

/// Allocation-free variant for the evaluation hot path.
fn monomials_into(degree: usize, u: f64, v: f64, out: &mut [f64; MONOMIALS_MAX]) -> &[f64] {
    let mut pu = [1.0; MAX_ORDER as usize + 1];
    let mut pv = [1.0; MAX_ORDER as usize + 1];
    for k in 1..=degree {
        pu[k] = pu[k - 1] * u;
        pv[k] = pv[k - 1] * v;
    }
    let mut i = 0;
    for d in 0..=degree {
        for j in 0..=d {
            out[i] = pu[d - j] * pv[j];
            i += 1;
        }
    }
    &out[..i]
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    Cos,
    Sin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ZernikeTerm {
    pub n: u32,
    pub m: u32,
    pub parity: Parity,
}

impl ZernikeTerm {
    /// Cartesian expansion of `R_n^m(ρ)·{cos, sin}(mφ)`.
    ///
    /// Uses `ρ^{m+2s}{cos, sin}(mφ) = (u²+v²)^s · {Re, Im}((u + iv)^m)`.
    pub fn expand(&self) -> BivariatePoly {
        let (n, m) = (self.n as usize, self.m as usize);
        // Re/Im of (u + iv)^m: term u^{m−j} v^j carries C(m, j)·i^j.
        let mut angular = BivariatePoly::zero(m);
        for j in 0..=m {
            let binom = factorial(m as u32) / (factorial(j as u32) * factorial((m - j) as u32));
            let c = match (self.parity, j % 4) {
                (Parity::Cos, 0) => binom,
                (Parity::Cos, 2) => -binom,
                (Parity::Sin, 1) => binom,
                (Parity::Sin, 3) => -binom,
                _ => 0.0,
            };
            if c != 0.0 {
                angular.add_term(m - j, j, c);
            }
        }
        let mut r2 = BivariatePoly::zero(2);
        r2.add_term(2, 0, 1.0);
        r2.add_term(0, 2, 1.0);
        let mut out = BivariatePoly::zero(n);
        for (power, c) in radial_coefficients(self.n, self.m) {
            let s = (power as usize - m) / 2;
            let mut p = angular.clone();
            for _ in 0..s {
                p = p.mul(&r2);
            }
            out.axpy(c, &p);
        }
        out
    }

    /// Closed-form value from the polar definition.
    pub fn eval_polar(&self, u: f64, v: f64) -> f64 {
        let rho = u.hypot(v);
        let phi = v.atan2(u);
        let radial = radial_poly(self.n, self.m, rho).expect("valid term");
        let m = self.m as f64;
        match self.parity {
            Parity::Cos => radial * (m * phi).cos(),
            Parity::Sin => radial * (m * phi).sin(),
        }
    }
}

/// Zernike terms up to radial degree `order`, in single-index order: degree
/// ascending, then `m` ascending, cosine before sine.
#[derive(Debug, Clone, PartialEq)]
pub struct ZernikeBasis {
    pub order: u32,
    pub terms: Vec<ZernikeTerm>,
    polys: Vec<BivariatePoly>,
}

impl ZernikeBasis {
    pub fn new(order: u32) -> Result<Self> {
        if order > MAX_ORDER {
            return Err(Error::Config(format!("Zernike order {order} exceeds {MAX_ORDER}")));
        }
        let mut terms = Vec::new();
        for n in 0..=order {
            for m in (n % 2..=n).step_by(2) {
                terms.push(ZernikeTerm {
                    n,
                    m,
                    parity: Parity::Cos,
                });
                if m > 0 {
                    terms.push(ZernikeTerm {
                        n,
                        m,
                        parity: Parity::Sin,
                    });
                }
            }
        }
        let polys = terms.iter().map(|t| t.expand().to_degree(order as usize)).collect();
        Ok(Self { order, terms, polys })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn poly(&self, index: usize) -> Result<&BivariatePoly> {
        self.polys.get(index).ok_or(Error::TermIndex {
            index,
            len: self.polys.len(),
        })
    }

    /// Value of term `index` at disk coordinates `(u, v)`.
    pub fn basis_eval(&self, index: usize, u: f64, v: f64) -> Result<f64> {
        Ok(self.poly(index)?.eval(u, v))
    }

    /// All term values at `(u, v)`.
    pub fn eval_all(&self, u: f64, v: f64) -> Vec<f64> {
        let mono = monomials(self.order as usize, u, v);
        self.polys.iter().map(|p| dot(&p.coeffs, &mono)).collect()
    }

    /// Collapses a coefficient vector into one polynomial.
    pub fn combine(&self, coeffs: &[f64]) -> Result<BivariatePoly> {
        if coeffs.len() != self.len() {
            return Err(Error::Format(format!(
                "{} coefficients for a basis of {} terms",
                coeffs.len(),
                self.len()
            )));
        }
        let mut out = BivariatePoly::zero(self.order as usize);
        for (p, &c) in self.polys.iter().zip(coeffs) {
            out.axpy(c, p);
        }
        Ok(out)
    }
}

/// Shifted and scaled unit disk in the canonical coil frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiskFrame {
    pub center: [f64; 2],
    pub rho_max: f64,
}

impl DiskFrame {
    pub fn for_class(class: SizeClass) -> Self {
        Self {
            center: [0.0, class.center_offset()],
            rho_max: class.disk_radius(),
        }
    }

    pub fn to_local(&self, p: Vec2) -> (f64, f64) {
        (
            (p.x - self.center[0]) / self.rho_max,
            (p.y - self.center[1]) / self.rho_max,
        )
    }

    /// True when every corner of the workspace maps into the closed unit disk.
    pub fn covers_workspace(&self) -> bool {
        let h = WORKSPACE_HALF;
        [(-h, -h), (-h, h), (h, -h), (h, h)].iter().all(|&(x, y)| {
            let (u, v) = self.to_local(Vec2::new(x, y));
            u * u + v * v <= 1.0 + DISK_SLACK
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Weight of the optional divergence penalty rows (disk units); 0 gives plain least squares.
    pub lambda_div: f64,
    /// Only samples inside the workspace square are used.
    pub workspace_only: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            lambda_div: 0.0,
            workspace_only: true,
        }
    }
}

/// Fit quality measured on the fitting samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub order: u32,
    pub samples: usize,
    /// Mean norm of the vector fit error (T/A).
    pub mae: f64,
    /// Per component `[Bx, By]`; NaN when a component has zero variance.
    pub r_squared: [f64; 2],
    pub max_abs_error: f64,
    pub peak_field: f64,
    pub divergence_rms_ratio: f64,
    pub condition: f64,
}

impl FitReport {
    /// The weaker of the two component R² values.
    pub fn r_squared_min(&self) -> f64 {
        self.r_squared[0].min(self.r_squared[1])
    }
}

/// Fitted coefficients for the two field components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentFit {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// Least-squares fit of a canonical-frame grid in the given disk frame.
pub fn fit(
    samples: &FieldSampleGrid,
    frame: DiskFrame,
    order: u32,
    options: &FitOptions,
) -> Result<(ComponentFit, FitReport)> {
    let basis = ZernikeBasis::new(order)?;
    fit_with_basis(samples, frame, &basis, options)
}

fn fit_with_basis(
    samples: &FieldSampleGrid,
    frame: DiskFrame,
    basis: &ZernikeBasis,
    options: &FitOptions,
) -> Result<(ComponentFit, FitReport)> {
    let eps = 1e-9;
    let points: Vec<(Vec2, Vec2)> = samples
        .samples()
        .filter(|(p, _)| {
            !options.workspace_only || (p.x.abs() <= WORKSPACE_HALF + eps && p.y.abs() <= WORKSPACE_HALF + eps)
        })
        .collect();
    let t = basis.len();
    if points.len() < 3 * t {
        return Err(Error::InsufficientSamples {
            samples: points.len(),
            terms: t,
        });
    }
    let local: Vec<(f64, f64)> = points.iter().map(|(p, _)| frame.to_local(*p)).collect();
    if let Some((i, _)) = local
        .iter()
        .enumerate()
        .find(|(_, (u, v))| u * u + v * v > 1.0 + DISK_SLACK)
    {
        return Err(Error::Coverage {
            coil: 0,
            x: points[i].0.x,
            y: points[i].0.y,
        });
    }
    let s = points.len();
    let design = DMatrix::from_fn(s, t, |i, j| basis.polys[j].eval(local[i].0, local[i].1));

    let (a, b, condition) = if options.lambda_div > 0.0 {
        // Joint system in [a; b] with rows √λ·(∂P_x/∂u + ∂P_y/∂v) at every sample.
        let w = options.lambda_div.sqrt();
        let du: Vec<BivariatePoly> = basis.polys.iter().map(BivariatePoly::d_du).collect();
        let dv: Vec<BivariatePoly> = basis.polys.iter().map(BivariatePoly::d_dv).collect();
        let mut m = DMatrix::zeros(3 * s, 2 * t);
        let mut rhs = DVector::zeros(3 * s);
        for i in 0..s {
            let (u, v) = local[i];
            for j in 0..t {
                m[(i, j)] = design[(i, j)];
                m[(s + i, t + j)] = design[(i, j)];
                m[(2 * s + i, j)] = w * du[j].eval(u, v);
                m[(2 * s + i, t + j)] = w * dv[j].eval(u, v);
            }
            rhs[i] = points[i].1.x;
            rhs[s + i] = points[i].1.y;
        }
        let (x, cond) = least_squares(m, DMatrix::from_column_slice(3 * s, 1, rhs.as_slice()))?;
        (
            x.rows(0, t).iter().copied().collect(),
            x.rows(t, t).iter().copied().collect(),
            cond,
        )
    } else {
        let rhs = DMatrix::from_fn(s, 2, |i, c| if c == 0 { points[i].1.x } else { points[i].1.y });
        let (x, cond) = least_squares(design, rhs)?;
        (
            x.column(0).iter().copied().collect(),
            x.column(1).iter().copied().collect(),
            cond,
        )
    };

    let coeffs = ComponentFit { a, b };
    let report = fit_report(&points, frame, basis, &coeffs, condition)?;
    Ok((coeffs, report))
}

/// Householder QR least squares; rejects ill-conditioned designs.
fn least_squares(m: DMatrix<f64>, rhs: DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let qr = m.qr();
    let r = qr.r();
    let sv = r.singular_values();
    let (max, min) = sv
        .iter()
        .fold((0.0f64, f64::INFINITY), |(hi, lo), &x| (hi.max(x), lo.min(x)));
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= CONDITION_LIMIT) {
        return Err(Error::DegenerateFit { condition });
    }
    let qtb = qr.q().transpose() * rhs;
    let x = r
        .solve_upper_triangular(&qtb)
        .ok_or(Error::DegenerateFit { condition })?;
    Ok((x, condition))
}

fn fit_report(
    points: &[(Vec2, Vec2)],
    frame: DiskFrame,
    basis: &ZernikeBasis,
    coeffs: &ComponentFit,
    condition: f64,
) -> Result<FitReport> {
    let kernel = Kernel::new(basis, coeffs, frame.rho_max)?;
    let n = points.len() as f64;
    let mean = points.iter().fold(Vec2::zeros(), |acc, (_, b)| acc + b) / n;
    let (mut err_sum, mut err_max, mut peak) = (0.0f64, 0.0f64, 0.0f64);
    let (mut ss_res, mut ss_tot) = ([0.0f64; 2], [0.0f64; 2]);
    let (mut div2, mut grad2) = (0.0, 0.0);
    for (p, b) in points {
        let (u, v) = frame.to_local(*p);
        let r = kernel.eval(u, v, false);
        let e = r.field - b;
        err_sum += e.norm();
        err_max = err_max.max(e.norm());
        peak = peak.max(b.norm());
        for c in 0..2 {
            ss_res[c] += e[c] * e[c];
            ss_tot[c] += (b[c] - mean[c]).powi(2);
        }
        div2 += r.gradient.trace().powi(2);
        grad2 += r.gradient.norm_squared();
    }
    let r2 = |c: usize| {
        if ss_tot[c] > 0.0 {
            1.0 - ss_res[c] / ss_tot[c]
        } else {
            f64::NAN
        }
    };
    Ok(FitReport {
        order: basis.order,
        samples: points.len(),
        mae: err_sum / n,
        r_squared: [r2(0), r2(1)],
        max_abs_error: err_max,
        peak_field: peak,
        divergence_rms_ratio: if grad2 > 0.0 { (div2 / grad2).sqrt() } else { f64::NAN },
        condition,
    })
}

/// One fit per order on the same samples.
pub fn order_selection_report(
    samples: &FieldSampleGrid,
    frame: DiskFrame,
    orders: impl IntoIterator<Item = u32>,
    options: &FitOptions,
) -> Result<Vec<FitReport>> {
    orders
        .into_iter()
        .map(|n| fit(samples, frame, n, options).map(|(_, r)| r))
        .collect()
}

/// Smallest order after which raising the order gains less than `threshold`
/// in the weaker component R². Reports must be consecutive and ascending.
pub fn select_order(reports: &[FitReport], threshold: f64) -> Option<u32> {
    reports
        .windows(2)
        .find(|w| w[1].r_squared_min() - w[0].r_squared_min() < threshold)
        .map(|w| w[0].order)
}

/// Collapsed per-coil polynomials evaluated together from one monomial table.
#[derive(Debug, Clone)]
struct Kernel {
    degree: usize,
    /// Chain-rule factor from disk units to per-metre derivatives.
    scale: f64,
    px: Vec<f64>,
    py: Vec<f64>,
    /// `[∂Px/∂u, ∂Px/∂v, ∂Py/∂u, ∂Py/∂v]`
    d1: [Vec<f64>; 4],
    /// `[Px_uu, Px_uv, Px_vv, Py_uu, Py_uv, Py_vv]`
    d2: [Vec<f64>; 6],
}

impl Kernel {
    fn new(basis: &ZernikeBasis, coeffs: &ComponentFit, rho_max_mm: f64) -> Result<Self> {
        let px = basis.combine(&coeffs.a)?;
        let py = basis.combine(&coeffs.b)?;
        let (pxu, pxv, pyu, pyv) = (px.d_du(), px.d_dv(), py.d_du(), py.d_dv());
        let d2 = [pxu.d_du(), pxu.d_dv(), pxv.d_dv(), pyu.d_du(), pyu.d_dv(), pyv.d_dv()];
        Ok(Self {
            degree: basis.order as usize,
            scale: 1e3 / rho_max_mm,
            d2: d2.map(|p| p.coeffs),
            d1: [pxu.coeffs, pxv.coeffs, pyu.coeffs, pyv.coeffs],
            px: px.coeffs,
            py: py.coeffs,
        })
    }

    /// Response in the canonical frame at disk coordinates `(u, v)`.
    fn eval(&self, u: f64, v: f64, hessian: bool) -> UnitResponse {
        let mut buf = [0.0; MONOMIALS_MAX];
        let mono = monomials_into(self.degree, u, v, &mut buf);
        let s = self.scale;
        let d1 = self.d1.each_ref().map(|c| dot(c, mono) * s);
        let mut r = UnitResponse {
            field: Vec2::new(dot(&self.px, mono), dot(&self.py, mono)),
            gradient: Mat2::new(d1[0], d1[1], d1[2], d1[3]),
            ..UnitResponse::default()
        };
        if hessian {
            let h = self.d2.each_ref().map(|c| dot(c, mono) * s * s);
            // hessian[k][(i, j)] = ∂²B_i/∂x_j∂x_k
            r.hessian = [Mat2::new(h[0], h[1], h[3], h[4]), Mat2::new(h[1], h[2], h[4], h[5])];
        }
        r
    }
}

/// One coil of a fitted model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZernikeCoil {
    pub label: String,
    pub face: Face,
    pub size_class: SizeClass,
    pub frame: DiskFrame,
    /// Rotation (rad) from the canonical frame to the world frame.
    pub rotation: f64,
    pub order: u32,
    pub terms: Vec<ZernikeTerm>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    #[serde(skip)]
    kernel: Option<Kernel>,
}

impl ZernikeCoil {
    pub fn new(coil: &CoilSpec, frame: DiskFrame, order: u32, coeffs: ComponentFit) -> Result<Self> {
        let mut out = Self {
            label: coil.label(),
            face: coil.face,
            size_class: coil.size_class,
            frame,
            rotation: coil.face.rotation(),
            order,
            terms: ZernikeBasis::new(order)?.terms,
            a: coeffs.a,
            b: coeffs.b,
            kernel: None,
        };
        out.compile()?;
        Ok(out)
    }

    fn compile(&mut self) -> Result<()> {
        let basis = ZernikeBasis::new(self.order)?;
        if basis.terms != self.terms {
            return Err(Error::Format(format!(
                "coil {} term list does not match the order-{} basis",
                self.label, self.order
            )));
        }
        if self.a.len() != basis.len() || self.b.len() != basis.len() {
            return Err(Error::Format(format!(
                "coil {} has {}/{} coefficients for {} terms",
                self.label,
                self.a.len(),
                self.b.len(),
                basis.len()
            )));
        }
        if !(self.frame.rho_max > 0.0) {
            return Err(Error::Format(format!(
                "coil {} has a non-positive disk radius",
                self.label
            )));
        }
        let coeffs = ComponentFit {
            a: self.a.clone(),
            b: self.b.clone(),
        };
        self.kernel = Some(Kernel::new(&basis, &coeffs, self.frame.rho_max)?);
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    coils: Vec<ZernikeCoil>,
}

/// Analytic field model built from per-coil Zernike fits.
#[derive(Debug, Clone)]
pub struct ZernikeFieldModel {
    coils: Vec<ZernikeCoil>,
    rotations: Vec<Mat2>,
}

impl ZernikeFieldModel {
    pub fn new(mut coils: Vec<ZernikeCoil>) -> Result<Self> {
        for c in &mut coils {
            c.compile()?;
        }
        let rotations = coils.iter().map(|c| rotation(c.rotation)).collect();
        Ok(Self { coils, rotations })
    }

    /// Fits one canonical (north-face) grid per size class and reuses it for
    /// every face of that class. Returns the model and one report per class
    /// in first-appearance order.
    pub fn fit_coils(
        coils: &[CoilSpec],
        geometry: GridGeometry,
        order_for: impl Fn(SizeClass) -> u32,
        options: &FitOptions,
    ) -> Result<(Self, Vec<(SizeClass, FitReport)>)> {
        let mut fits: Vec<(SizeClass, CoilSpec, ComponentFit, FitReport)> = Vec::new();
        let mut out = Vec::with_capacity(coils.len());
        for coil in coils {
            let canonical = CoilSpec {
                face: Face::North,
                ..*coil
            };
            let pos = match fits.iter().position(|(_, c, _, _)| *c == canonical) {
                Some(p) => p,
                None => {
                    let grid = sample_grid(&canonical, geometry)?;
                    let frame = DiskFrame::for_class(coil.size_class);
                    let (coeffs, report) = fit(&grid, frame, order_for(coil.size_class), options)?;
                    fits.push((coil.size_class, canonical, coeffs, report));
                    fits.len() - 1
                }
            };
            let (_, _, coeffs, report) = &fits[pos];
            let frame = DiskFrame {
                center: [0.0, coil.center_offset],
                rho_max: coil.size_class.disk_radius(),
            };
            out.push(ZernikeCoil::new(coil, frame, report.order, coeffs.clone())?);
        }
        let reports = fits.into_iter().map(|(c, _, _, r)| (c, r)).collect();
        Ok((Self::new(out)?, reports))
    }

    /// Fits each grid separately after rotating it into the canonical frame.
    /// Grids without coil metadata are treated as north-face small coils.
    pub fn fit_grids(
        grids: &[FieldSampleGrid],
        order_for: impl Fn(SizeClass) -> u32,
        options: &FitOptions,
    ) -> Result<(Self, Vec<FitReport>)> {
        let mut coils = Vec::new();
        let mut reports = Vec::new();
        for grid in grids {
            let spec = grid
                .coil
                .unwrap_or_else(|| CoilSpec::preset(Face::North, SizeClass::Small));
            let canonical = canonicalize(grid, spec.face.rotation())?;
            let frame = DiskFrame {
                center: [0.0, spec.center_offset],
                rho_max: spec.size_class.disk_radius(),
            };
            let (coeffs, report) = fit(&canonical, frame, order_for(spec.size_class), options)?;
            coils.push(ZernikeCoil::new(&spec, frame, report.order, coeffs)?);
            reports.push(report);
        }
        Ok((Self::new(coils)?, reports))
    }

    pub fn coils(&self) -> &[ZernikeCoil] {
        &self.coils
    }

    pub fn eval_field(&self, point: Vec2, currents: &[f64]) -> Result<Vec2> {
        self.field(point, currents)
    }

    pub fn eval_gradient(&self, point: Vec2, currents: &[f64]) -> Result<Mat2> {
        self.gradient(point, currents)
    }

    pub fn divergence(&self, point: Vec2, currents: &[f64]) -> Result<f64> {
        Ok(self.gradient(point, currents)?.trace())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            coils: self.coils.clone(),
        };
        fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Format(format!("unknown model format tag {:?}", file.format)));
        }
        Self::new(file.coils)
    }
}

/// Maps a face grid into the canonical frame: the canonical value at node `q`
/// is `Rᵀ·B(R q)`. Quarter-turn faces of an origin-centered square lattice map
/// nodes onto nodes, anything else is rejected.
fn canonicalize(grid: &FieldSampleGrid, angle: f64) -> Result<FieldSampleGrid> {
    if angle == 0.0 {
        return Ok(grid.clone());
    }
    let r = rotation(angle);
    let g = grid.geometry;
    let mut out = grid.clone();
    for iy in 0..g.ny {
        for ix in 0..g.nx {
            let p = r * g.node(ix, iy);
            let fx = (p.x - g.origin[0]) / g.spacing;
            let fy = (p.y - g.origin[1]) / g.spacing;
            let (jx, jy) = (fx.round(), fy.round());
            if (fx - jx).abs() > 1e-6 || (fy - jy).abs() > 1e-6 || jx < 0.0 || jy < 0.0 {
                return Err(Error::Config(
                    "face grid does not map onto the canonical lattice".into(),
                ));
            }
            let (jx, jy) = (jx as usize, jy as usize);
            if jx >= g.nx || jy >= g.ny {
                return Err(Error::Config(
                    "face grid does not map onto the canonical lattice".into(),
                ));
            }
            let b = r.transpose() * grid.value(jx, jy);
            let i = out.index(ix, iy);
            out.bx[i] = b.x;
            out.by[i] = b.y;
        }
    }
    Ok(out)
}

impl FieldModel for ZernikeFieldModel {
    fn coil_count(&self) -> usize {
        self.coils.len()
    }

    fn domain(&self) -> Domain {
        Domain::square(WORKSPACE_HALF)
    }

    fn unit_responses(&self, point: Vec2, out: &mut [UnitResponse], hessian: bool) -> Result<()> {
        for (idx, ((coil, rot), r)) in self.coils.iter().zip(&self.rotations).zip(out.iter_mut()).enumerate() {
            let local = rot.transpose() * point;
            let (u, v) = coil.frame.to_local(local);
            if u * u + v * v > 1.0 + DISK_SLACK {
                return Err(Error::Coverage {
                    coil: idx,
                    x: point.x,
                    y: point.y,
                });
            }
            let kernel = coil.kernel.as_ref().expect("compiled at construction");
            let l = kernel.eval(u, v, hessian);
            r.field = rot * l.field;
            r.gradient = rot * l.gradient * rot.transpose();
            if hessian {
                // p_local = Rᵀ p, so ∂/∂p_k = Σ_l R[(k, l)] ∂/∂p_local_l.
                for k in 0..2 {
                    let h = l.hessian[0] * rot[(k, 0)] + l.hessian[1] * rot[(k, 1)];
                    r.hessian[k] = rot * h * rot.transpose();
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic_grid(f: impl Fn(f64, f64) -> (f64, f64), frame: DiskFrame) -> FieldSampleGrid {
        let geometry = GridGeometry::workspace(5.0).unwrap();
        let mut bx = Vec::new();
        let mut by = Vec::new();
        for iy in 0..geometry.ny {
            for ix in 0..geometry.nx {
                let (u, v) = frame.to_local(geometry.node(ix, iy));
                let (x, y) = f(u, v);
                bx.push(x);
                by.push(y);
            }
        }
        FieldSampleGrid {
            format: crate::field_oracle::GRID_FORMAT.into(),
            coil: None,
            geometry,
            bx,
            by,
        }
    }

    #[test]
    fn radial_values() {
        assert_eq!(radial_poly(0, 0, 0.37).unwrap(), 1.0);
        assert_eq!(radial_poly(2, 0, 0.0).unwrap(), -1.0);
        assert!((radial_poly(2, 2, 0.5).unwrap() - 0.25).abs() < 1e-15);
        assert!(matches!(radial_poly(3, 0, 0.5), Err(Error::InvalidTerm { n: 3, m: 0 })));
    }

    #[test]
    fn table_values() {
        let b = ZernikeBasis::new(4).unwrap();
        assert_eq!(b.len(), 15);
        assert!((b.basis_eval(5, 0.5, 0.5).unwrap() - 0.5).abs() < 1e-15);
        assert!(b.basis_eval(4, 0.3, 0.3).unwrap().abs() < 1e-15);
        assert_eq!(b.basis_eval(1, 0.42, 0.0).unwrap(), 0.42);
        assert!((b.basis_eval(3, 0.0, 0.0).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(b.basis_eval(15, 0.0, 0.0), Err(Error::TermIndex { .. })));
    }

    #[test]
    fn term_counts() {
        for n in 0..=MAX_ORDER {
            let b = ZernikeBasis::new(n).unwrap();
            assert_eq!(b.len() as u32, (n + 1) * (n + 2) / 2);
        }
    }

    #[test]
    fn expansion_matches_polar_form() {
        let basis = ZernikeBasis::new(8).unwrap();
        for k in 0..400 {
            let rho = ((k * 37) % 101) as f64 / 100.0;
            let phi = k as f64 * 0.7311;
            let (u, v) = (rho * phi.cos(), rho * phi.sin());
            for (i, t) in basis.terms.iter().enumerate() {
                let diff = basis.basis_eval(i, u, v).unwrap() - t.eval_polar(u, v);
                assert!(diff.abs() <= 1e-12, "term {i} {t:?}: {diff}");
            }
        }
    }

    #[test]
    fn exact_polynomial_recovery() {
        let frame = DiskFrame::for_class(SizeClass::Small);
        let grid = synthetic_grid(|u, v| (u * u - v * v, 0.0), frame);
        let (c, report) = fit(&grid, frame, 2, &FitOptions::default()).unwrap();
        for (i, a) in c.a.iter().enumerate() {
            let expected = if i == 4 { 1.0 } else { 0.0 };
            assert!((a - expected).abs() <= 1e-10, "a[{i}] = {a}");
        }
        assert!(c.b.iter().all(|b| b.abs() <= 1e-10));
        assert!(report.r_squared[1].is_nan());
        assert!(report.max_abs_error <= 1e-10);
    }

    #[test]
    fn exact_gradient_of_test_model() {
        let frame = DiskFrame::for_class(SizeClass::Small);
        let grid = synthetic_grid(|u, v| (u * u - v * v, 0.0), frame);
        let (c, _) = fit(&grid, frame, 2, &FitOptions::default()).unwrap();
        let coil = CoilSpec::preset(Face::North, SizeClass::Small);
        let model = ZernikeFieldModel::new(vec![ZernikeCoil::new(&coil, frame, 2, c).unwrap()]).unwrap();
        let p = Vec2::new(12.0, -20.0);
        let (u, v) = frame.to_local(p);
        let g = model.eval_gradient(p, &[1.0]).unwrap();
        let rho_m = frame.rho_max * 1e-3;
        assert!((g[(0, 0)] - 2.0 * u / rho_m).abs() < 1e-9);
        assert!((g[(0, 1)] + 2.0 * v / rho_m).abs() < 1e-9);
    }

    #[test]
    fn solenoidal_test_model_has_zero_divergence() {
        let frame = DiskFrame::for_class(SizeClass::Large);
        let grid = synthetic_grid(|u, v| (u, -v), frame);
        let (c, _) = fit(&grid, frame, 1, &FitOptions::default()).unwrap();
        let coil = CoilSpec::preset(Face::North, SizeClass::Large);
        let model = ZernikeFieldModel::new(vec![ZernikeCoil::new(&coil, frame, 1, c).unwrap()]).unwrap();
        let d = model.divergence(Vec2::new(3.0, 7.0), &[1.0]).unwrap();
        assert!(d.abs() < 1e-9);
        assert_eq!(model.divergence(Vec2::new(3.0, 7.0), &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn frames_cover_workspace() {
        for c in [SizeClass::Small, SizeClass::Medium, SizeClass::Large] {
            assert!(DiskFrame::for_class(c).covers_workspace());
        }
    }

    #[test]
    fn too_few_samples_rejected() {
        let frame = DiskFrame::for_class(SizeClass::Small);
        let mut grid = synthetic_grid(|u, _| (u, 0.0), frame);
        grid.geometry = GridGeometry::workspace(50.0).unwrap();
        grid.bx.truncate(9);
        grid.by.truncate(9);
        assert!(matches!(
            fit(&grid, frame, 2, &FitOptions::default()),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn saturation_rule() {
        let mk = |order, r2| FitReport {
            order,
            samples: 0,
            mae: 0.0,
            r_squared: [r2, r2],
            max_abs_error: 0.0,
            peak_field: 0.0,
            divergence_rms_ratio: 0.0,
            condition: 1.0,
        };
        let reports = [mk(1, 0.9), mk(2, 0.97), mk(3, 0.995), mk(4, 0.997)];
        assert_eq!(select_order(&reports, 0.005), Some(3));
        assert_eq!(select_order(&reports[..2], 0.005), None);
    }
}
