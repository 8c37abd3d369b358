//! Concentrated maximum-likelihood cost.
//!
//! For every frequency bin f the model stacks the sensor spectra as
//! `X(f) = K̃(f) S(f) + ξ(f)` where the steering matrix
//! `K̃(f) = K(f) + H(f)` combines attenuation magnitudes with delay phase
//! factors (K) and the per-cluster multipath responses (H). Eliminating the
//! unknown source spectra by least squares leaves the projection residual
//! `Q(f) = X(f) − K̃(f) K̃†(f) X(f)`; the scalar objective is `Σ_f ‖Q(f)‖²`
//! over bins 0..=n_f/2.
//!
//! Per-bin terms are independent; they are evaluated in parallel and reduced
//! with a fixed pairwise summation so results do not depend on the worker
//! count.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attenuation::AttenuationModel;
use crate::error::{Error, Result};
use crate::scalar::{pairwise_sum, Scalar};
use crate::scene::{range_matrix, Scenario};
use crate::synth::SpectrumData;

/// Which steering model the cost uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    /// Attenuation series plus multipath unknowns.
    Full,
    /// Unit-magnitude steering entries: pure delay information, no β or
    /// multipath unknowns.
    DelayOnly,
}

/// Shape of the unknown vector θ:
/// `[x_1..x_N, y_1..y_N, β_1..β_L, γ (per cluster, source, path), τ̂ (same order)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub n_sources: usize,
    pub attenuation_order: usize,
    pub n_clusters: usize,
    pub paths_per_pair: usize,
}

impl Layout {
    pub fn for_scenario<T: Scalar>(scenario: &Scenario<T>, mode: ModelKind) -> Self {
        match mode {
            ModelKind::Full => Self {
                n_sources: scenario.n_sources(),
                attenuation_order: scenario.attenuation_order,
                n_clusters: scenario.array.n_clusters(),
                paths_per_pair: scenario.model_paths,
            },
            ModelKind::DelayOnly => Self {
                n_sources: scenario.n_sources(),
                attenuation_order: 0,
                n_clusters: scenario.array.n_clusters(),
                paths_per_pair: 0,
            },
        }
    }

    pub fn total_paths(&self) -> usize {
        self.n_clusters * self.n_sources * self.paths_per_pair
    }

    pub fn dim(&self) -> usize {
        2 * self.n_sources + self.attenuation_order + 2 * self.total_paths()
    }

    pub fn x_index(&self, source: usize) -> usize {
        source
    }

    pub fn y_index(&self, source: usize) -> usize {
        self.n_sources + source
    }

    /// Index of β_ℓ, 1-based ℓ.
    pub fn beta_index(&self, ell: usize) -> usize {
        debug_assert!(ell >= 1 && ell <= self.attenuation_order);
        2 * self.n_sources + ell - 1
    }

    fn path_slot(&self, cluster: usize, source: usize, path: usize) -> usize {
        (cluster * self.n_sources + source) * self.paths_per_pair + path
    }

    pub fn gamma_index(&self, cluster: usize, source: usize, path: usize) -> usize {
        2 * self.n_sources + self.attenuation_order + self.path_slot(cluster, source, path)
    }

    pub fn tau_index(&self, cluster: usize, source: usize, path: usize) -> usize {
        self.gamma_index(cluster, source, path) + self.total_paths()
    }

    /// Human-readable name per component, aligned with the vector layout.
    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dim());
        for n in 0..self.n_sources {
            names.push(format!("x_s{n}"));
        }
        for n in 0..self.n_sources {
            names.push(format!("y_s{n}"));
        }
        for ell in 1..=self.attenuation_order {
            names.push(format!("beta_{ell}"));
        }
        for kind in ["gamma", "tau"] {
            for c in 0..self.n_clusters {
                for n in 0..self.n_sources {
                    for p in 0..self.paths_per_pair {
                        names.push(format!("{kind}_c{c}_s{n}_p{p}"));
                    }
                }
            }
        }
        names
    }
}

/// Decoded view of a parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedParams<T: Scalar> {
    pub positions: Vec<[T; 2]>,
    pub attenuation: AttenuationModel<T>,
    /// Path gains in (cluster, source, path) lexicographic order.
    pub gammas: Vec<T>,
    /// Path delays (samples), same order.
    pub taus: Vec<T>,
}

/// Flattened unknown vector with its self-describing layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<T: Scalar> {
    pub values: DVector<T>,
    pub layout: Layout,
}

impl<T: Scalar> ParamVector<T> {
    pub fn new(values: DVector<T>, layout: Layout) -> Result<Self> {
        if values.len() != layout.dim() {
            return Err(Error::InvalidArgument(format!(
                "parameter vector length {} does not match layout dimension {}",
                values.len(),
                layout.dim()
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn from_parts(layout: Layout, parts: &DecodedParams<T>) -> Result<Self> {
        if parts.positions.len() != layout.n_sources
            || parts.attenuation.order() != layout.attenuation_order
            || parts.gammas.len() != layout.total_paths()
            || parts.taus.len() != layout.total_paths()
        {
            return Err(Error::InvalidArgument(
                "decoded parts do not match layout".into(),
            ));
        }
        let mut values = DVector::zeros(layout.dim());
        for (n, p) in parts.positions.iter().enumerate() {
            values[layout.x_index(n)] = p[0];
            values[layout.y_index(n)] = p[1];
        }
        for (i, &b) in parts.attenuation.coeffs().iter().enumerate() {
            values[layout.beta_index(i + 1)] = b;
        }
        let base = 2 * layout.n_sources + layout.attenuation_order;
        for (i, &g) in parts.gammas.iter().enumerate() {
            values[base + i] = g;
        }
        for (i, &t) in parts.taus.iter().enumerate() {
            values[base + layout.total_paths() + i] = t;
        }
        Self::new(values, layout)
    }

    pub fn decode(&self) -> DecodedParams<T> {
        let l = &self.layout;
        let positions = (0..l.n_sources)
            .map(|n| [self.values[l.x_index(n)], self.values[l.y_index(n)]])
            .collect();
        let beta = (1..=l.attenuation_order)
            .map(|ell| self.values[l.beta_index(ell)])
            .collect();
        let base = 2 * l.n_sources + l.attenuation_order;
        let gammas = (0..l.total_paths()).map(|i| self.values[base + i]).collect();
        let taus = (0..l.total_paths())
            .map(|i| self.values[base + l.total_paths() + i])
            .collect();
        DecodedParams {
            positions,
            attenuation: AttenuationModel::new(beta),
            gammas,
            taus,
        }
    }

    pub fn position(&self, source: usize) -> [T; 2] {
        [
            self.values[self.layout.x_index(source)],
            self.values[self.layout.y_index(source)],
        ]
    }

    pub fn positions(&self) -> Vec<[T; 2]> {
        (0..self.layout.n_sources).map(|n| self.position(n)).collect()
    }
}

/// Phase coefficient so that the steering phase is `−coeff · f · ρ`;
/// equals `2π N_s / (n_f v)`.
fn phase_coeff<T: Scalar>(scenario: &Scenario<T>) -> T {
    T::two_pi() * scenario.signal.sample_rate
        / (T::cast(scenario.signal.n_f as f64) * scenario.signal.propagation_speed)
}

fn r_matrix<T: Scalar>(ranges: &DMatrix<T>, coeff: T, f: usize, power: i32) -> DMatrix<Complex<T>> {
    let f_t = T::cast(f as f64);
    DMatrix::from_fn(ranges.nrows(), ranges.ncols(), |m, n| {
        let rho = ranges[(m, n)];
        Complex::from_polar(num_traits::Float::powi(rho, -power), -coeff * f_t * rho)
    })
}

/// Steering blocks `R_ℓ(f)` for powers ℓ = 1..=L+1 of the normalized
/// attenuation series: entry (m,n) is `ρ^{-ℓ} exp(-j2π N_s f ρ/(n_f v))`.
pub fn build_r<T: Scalar>(
    theta: &ParamVector<T>,
    scenario: &Scenario<T>,
    f: usize,
) -> Result<Vec<DMatrix<Complex<T>>>> {
    let ranges = range_matrix(&scenario.array, &theta.positions())?;
    let coeff = phase_coeff(scenario);
    Ok((1..=theta.layout.attenuation_order as i32 + 1)
        .map(|power| r_matrix(&ranges, coeff, f, power))
        .collect())
}

/// Attenuation steering matrix `K(f) = R_1 + Σ_ℓ β_ℓ R_{ℓ+1}`; entries factor
/// as `α(ρ) exp(-j2π N_s f ρ/(n_f v))` with the normalized series α.
pub fn build_k<T: Scalar>(
    theta: &ParamVector<T>,
    scenario: &Scenario<T>,
    f: usize,
) -> Result<DMatrix<Complex<T>>> {
    let decoded = theta.decode();
    let ranges = range_matrix(&scenario.array, &decoded.positions)?;
    let coeff = phase_coeff(scenario);
    let f_t = T::cast(f as f64);
    let mut out = DMatrix::zeros(ranges.nrows(), ranges.ncols());
    for n in 0..ranges.ncols() {
        for m in 0..ranges.nrows() {
            let rho = ranges[(m, n)];
            let amp = decoded.attenuation.evaluate(rho)?;
            out[(m, n)] = Complex::from_polar(amp, -coeff * f_t * rho);
        }
    }
    Ok(out)
}

/// Multipath steering matrix: entry (m,n) is
/// `Σ_p γ_{c(m),n,p} exp(-j2πf τ̂_{c(m),n,p}/n_f)` with c(m) the cluster of
/// sensor m. Zero when the layout carries no path unknowns.
pub fn build_h<T: Scalar>(
    theta: &ParamVector<T>,
    scenario: &Scenario<T>,
    f: usize,
) -> Result<DMatrix<Complex<T>>> {
    let l = &theta.layout;
    let m_count = scenario.n_sensors();
    let mut out = DMatrix::zeros(m_count, l.n_sources);
    if l.paths_per_pair == 0 {
        return Ok(out);
    }
    let decoded = theta.decode();
    let f_t = T::cast(f as f64);
    let n_f = T::cast(scenario.signal.n_f as f64);
    for m in 0..m_count {
        let c = scenario.array.cluster_of(m);
        for n in 0..l.n_sources {
            let mut acc = Complex::new(T::zero(), T::zero());
            for p in 0..l.paths_per_pair {
                let slot = (c * l.n_sources + n) * l.paths_per_pair + p;
                let phase = -T::two_pi() * f_t * decoded.taus[slot] / n_f;
                acc += Complex::from_polar(decoded.gammas[slot], phase);
            }
            out[(m, n)] = acc;
        }
    }
    Ok(out)
}

/// Combined steering matrix for the requested model kind.
pub fn build_k_tilde<T: Scalar>(
    theta: &ParamVector<T>,
    scenario: &Scenario<T>,
    f: usize,
    mode: ModelKind,
) -> Result<DMatrix<Complex<T>>> {
    match mode {
        ModelKind::Full => Ok(build_k(theta, scenario, f)? + build_h(theta, scenario, f)?),
        ModelKind::DelayOnly => {
            let ranges = range_matrix(&scenario.array, &theta.positions())?;
            let coeff = phase_coeff(scenario);
            Ok(r_matrix(&ranges, coeff, f, 0))
        }
    }
}

/// All steering blocks at one bin.
#[derive(Debug, Clone)]
pub struct SteeringSet<T: Scalar> {
    pub r: Vec<DMatrix<Complex<T>>>,
    pub k: DMatrix<Complex<T>>,
    pub h: DMatrix<Complex<T>>,
    pub k_tilde: DMatrix<Complex<T>>,
}

impl<T: Scalar> SteeringSet<T> {
    pub fn build(theta: &ParamVector<T>, scenario: &Scenario<T>, f: usize) -> Result<Self> {
        let r = build_r(theta, scenario, f)?;
        let k = build_k(theta, scenario, f)?;
        let h = build_h(theta, scenario, f)?;
        let k_tilde = &k + &h;
        Ok(Self { r, k, h, k_tilde })
    }
}

/// Per-bin least-squares pieces: recovered spectra, residual, pseudo-inverse.
#[derive(Debug, Clone)]
pub struct BinProjection<T: Scalar> {
    pub s_hat: DVector<Complex<T>>,
    pub q: DVector<Complex<T>>,
    pub pinv: DMatrix<Complex<T>>,
}

/// Project `x` out of the column space of `k_tilde` via a rank-revealing
/// pseudo-inverse (tolerance `max(M,N)·ε·σ_max`). Errors when the matrix
/// loses column rank, naming `bin`.
pub fn projection_residual<T: Scalar>(
    k_tilde: &DMatrix<Complex<T>>,
    x: &DVector<Complex<T>>,
    bin: usize,
) -> Result<BinProjection<T>> {
    let (m_count, n_count) = k_tilde.shape();
    if n_count == 1 {
        // single column: the pseudo-inverse is kᴴ/‖k‖²
        let nn = k_tilde.norm_squared();
        if nn <= T::zero() || !num_traits::Float::is_finite(nn) {
            return Err(Error::SingularModel { bin });
        }
        let mut pinv = k_tilde.adjoint();
        pinv /= Complex::new(nn, T::zero());
        let s_hat = &pinv * x;
        let q = x - k_tilde * &s_hat;
        return Ok(BinProjection { s_hat, q, pinv });
    }

    let svd = k_tilde.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    if !num_traits::Float::is_finite(sigma_max) {
        return Err(Error::SingularModel { bin });
    }
    let tol = T::cast(m_count.max(n_count) as f64) * T::default_epsilon() * sigma_max;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < n_count {
        return Err(Error::SingularModel { bin });
    }
    let pinv = svd
        .pseudo_inverse(tol)
        .map_err(|e| Error::LinearSolve(e.to_string()))?;
    let s_hat = &pinv * x;
    let q = x - k_tilde * &s_hat;
    Ok(BinProjection { s_hat, q, pinv })
}

/// Half-spectrum bins the cost runs over: all of 0..=n_f/2, or the subset
/// inside the configured band mask.
pub fn active_bins<T: Scalar>(scenario: &Scenario<T>) -> Vec<usize> {
    let half = scenario.signal.n_f / 2;
    match scenario.band_mask {
        None => (0..=half).collect(),
        Some([lo, hi]) => (0..=half)
            .filter(|&f| {
                let freq = scenario.signal.bin_freq_hz(f);
                freq >= lo && freq <= hi
            })
            .collect(),
    }
}

/// Bin-independent quantities of one model evaluation: ranges, steering
/// magnitudes, delays, and the decoded multipath parameters.
pub(crate) struct PreparedModel<T: Scalar> {
    pub decoded: DecodedParams<T>,
    pub ranges: DMatrix<T>,
    pub amps: DMatrix<T>,
    /// Direct-path delays in samples.
    pub tau: DMatrix<T>,
    pub n_f: usize,
    cluster_ids: Vec<usize>,
    paths_per_pair: usize,
    n_sources: usize,
}

impl<T: Scalar> PreparedModel<T> {
    pub fn new(theta: &ParamVector<T>, scenario: &Scenario<T>, mode: ModelKind) -> Result<Self> {
        let decoded = theta.decode();
        let ranges = range_matrix(&scenario.array, &decoded.positions)?;
        let (m_count, n_count) = ranges.shape();
        let mut amps = DMatrix::zeros(m_count, n_count);
        for n in 0..n_count {
            for m in 0..m_count {
                amps[(m, n)] = match mode {
                    ModelKind::Full => decoded.attenuation.evaluate(ranges[(m, n)])?,
                    ModelKind::DelayOnly => T::one(),
                };
            }
        }
        let scale = scenario.signal.sample_rate / scenario.signal.propagation_speed;
        let tau = ranges.map(|rho| rho * scale);
        Ok(Self {
            decoded,
            ranges,
            amps,
            tau,
            n_f: scenario.signal.n_f,
            cluster_ids: scenario.array.cluster_ids.clone(),
            paths_per_pair: theta.layout.paths_per_pair,
            n_sources: theta.layout.n_sources,
        })
    }

    /// Channel responses per (cluster, source) at bin `f`, flattened as
    /// `cluster * N + source`; empty when there are no path unknowns.
    pub fn channel_responses(&self, f: usize) -> Vec<Complex<T>> {
        if self.paths_per_pair == 0 {
            return Vec::new();
        }
        let n_clusters = self.cluster_ids.iter().copied().max().unwrap_or(0) + 1;
        let f_t = T::cast(f as f64);
        let n_f = T::cast(self.n_f as f64);
        let mut responses = Vec::with_capacity(n_clusters * self.n_sources);
        for c in 0..n_clusters {
            for n in 0..self.n_sources {
                let mut acc = Complex::new(T::zero(), T::zero());
                for p in 0..self.paths_per_pair {
                    let slot = (c * self.n_sources + n) * self.paths_per_pair + p;
                    let phase = -T::two_pi() * f_t * self.decoded.taus[slot] / n_f;
                    acc += Complex::from_polar(self.decoded.gammas[slot], phase);
                }
                responses.push(acc);
            }
        }
        responses
    }

    /// Steering matrix at bin `f`.
    pub fn k_tilde(&self, f: usize) -> DMatrix<Complex<T>> {
        let (m_count, n_count) = self.ranges.shape();
        let f_t = T::cast(f as f64);
        let scale = -T::two_pi() * f_t / T::cast(self.n_f as f64);
        let h = self.channel_responses(f);
        DMatrix::from_fn(m_count, n_count, |m, n| {
            let mut v = Complex::from_polar(self.amps[(m, n)], scale * self.tau[(m, n)]);
            if !h.is_empty() {
                v += h[self.cluster_ids[m] * self.n_sources + n];
            }
            v
        })
    }
}

/// Residual evaluation across all active bins.
#[derive(Debug, Clone)]
pub struct ResidualReport<T: Scalar> {
    /// Active bin indices, ascending.
    pub bins: Vec<usize>,
    /// Per-bin projection residuals Q(f).
    pub q: Vec<DVector<Complex<T>>>,
    /// Per-bin recovered source spectra Ŝ(f).
    pub s_hat: Vec<DVector<Complex<T>>>,
    /// `Σ_f ‖Q(f)‖²`.
    pub cost: T,
}

impl<T: Scalar> ResidualReport<T> {
    /// Real embedding `[Re Q; Im Q]` of the stacked residual (bins ascending,
    /// sensors fastest).
    pub fn real_vector(&self) -> DVector<T> {
        let m = self.q.first().map_or(0, |q| q.len());
        let rows = self.bins.len() * m;
        let mut out = DVector::zeros(2 * rows);
        for (b, q) in self.q.iter().enumerate() {
            for (i, v) in q.iter().enumerate() {
                out[b * m + i] = v.re;
                out[rows + b * m + i] = v.im;
            }
        }
        out
    }
}

/// Cost evaluator binding a scenario, observed data, and model kind.
pub struct CostModel<'a, T: Scalar> {
    pub scenario: &'a Scenario<T>,
    pub data: &'a SpectrumData<T>,
    pub mode: ModelKind,
    bins: Vec<usize>,
}

impl<'a, T: Scalar> CostModel<'a, T> {
    pub fn new(
        scenario: &'a Scenario<T>,
        data: &'a SpectrumData<T>,
        mode: ModelKind,
    ) -> Result<Self> {
        scenario.validate()?;
        if data.n_sensors() != scenario.n_sensors() {
            return Err(Error::InvalidArgument(format!(
                "data has {} sensor rows, scenario has {}",
                data.n_sensors(),
                scenario.n_sensors()
            )));
        }
        if data.n_bins() != scenario.signal.n_bins() {
            return Err(Error::InvalidArgument(format!(
                "data has {} bins, scenario wants {}",
                data.n_bins(),
                scenario.signal.n_bins()
            )));
        }
        let bins = active_bins(scenario);
        if bins.is_empty() {
            return Err(Error::Config("band mask excludes every bin".into()));
        }
        Ok(Self {
            scenario,
            data,
            mode,
            bins,
        })
    }

    pub fn layout(&self) -> Layout {
        Layout::for_scenario(self.scenario, self.mode)
    }

    pub fn bins(&self) -> &[usize] {
        &self.bins
    }

    pub(crate) fn prepare(&self, theta: &ParamVector<T>) -> Result<PreparedModel<T>> {
        if theta.layout != self.layout() {
            return Err(Error::InvalidArgument(
                "parameter layout does not match cost model".into(),
            ));
        }
        PreparedModel::new(theta, self.scenario, self.mode)
    }

    /// `Σ_f ‖Q(f)‖²`.
    pub fn cost(&self, theta: &ParamVector<T>) -> Result<T> {
        let prepared = self.prepare(theta)?;
        let terms: Vec<T> = self
            .bins
            .par_iter()
            .with_min_len(32)
            .map(|&f| {
                let k_tilde = prepared.k_tilde(f);
                let x = self.data.x.column(f).into_owned();
                Ok(projection_residual(&k_tilde, &x, f)?.q.norm_squared())
            })
            .collect::<Result<_>>()?;
        Ok(pairwise_sum(&terms))
    }

    /// Residuals, recovered spectra and the scalar cost in one pass.
    pub fn residual(&self, theta: &ParamVector<T>) -> Result<ResidualReport<T>> {
        let prepared = self.prepare(theta)?;
        let per_bin: Vec<(DVector<Complex<T>>, DVector<Complex<T>>)> = self
            .bins
            .par_iter()
            .with_min_len(32)
            .map(|&f| {
                let k_tilde = prepared.k_tilde(f);
                let x = self.data.x.column(f).into_owned();
                let proj = projection_residual(&k_tilde, &x, f)?;
                Ok((proj.q, proj.s_hat))
            })
            .collect::<Result<_>>()?;
        let costs: Vec<T> = per_bin.iter().map(|(q, _)| q.norm_squared()).collect();
        let (q, s_hat) = per_bin.into_iter().unzip();
        Ok(ResidualReport {
            bins: self.bins.clone(),
            q,
            s_hat,
            cost: pairwise_sum(&costs),
        })
    }

    /// Least-squares source spectra `Ŝ(f) = K̃†(f) X(f)` per active bin.
    pub fn recover_spectrum(&self, theta: &ParamVector<T>) -> Result<Vec<DVector<Complex<T>>>> {
        Ok(self.residual(theta)?.s_hat)
    }

    /// Total data energy over the active bins, the natural scale for the cost.
    pub fn data_energy(&self) -> T {
        let terms: Vec<T> = self
            .bins
            .iter()
            .map(|&f| self.data.x.column(f).norm_squared())
            .collect();
        pairwise_sum(&terms)
    }
}
