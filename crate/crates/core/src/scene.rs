//! World description: sensor arrays, sources, signal configuration, true
//! multipath channels, and the `Scenario` document the CLI consumes.
//!
//! Everything here is immutable after construction and safe to share
//! read-only across parallel workers. Coordinates are 2D Cartesian meters.

use nalgebra::DMatrix;
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A 2D point or vector, `[x, y]` in meters.
pub type Point2<T> = [T; 2];

/// Sensor positions plus a cluster index per sensor. Clusters matter for
/// multipath: all sensors of a cluster share one indirect-path channel per
/// source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorArray<T: Scalar> {
    pub positions: Vec<Point2<T>>,
    pub cluster_ids: Vec<usize>,
}

impl<T: Scalar> SensorArray<T> {
    pub fn new(positions: Vec<Point2<T>>, cluster_ids: Vec<usize>) -> Result<Self> {
        let array = Self {
            positions,
            cluster_ids,
        };
        array.validate()?;
        Ok(array)
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.is_empty() {
            return Err(Error::InvalidArgument("array needs at least one sensor".into()));
        }
        if self.positions.len() != self.cluster_ids.len() {
            return Err(Error::InvalidArgument(format!(
                "{} positions vs {} cluster ids",
                self.positions.len(),
                self.cluster_ids.len()
            )));
        }
        if self
            .positions
            .iter()
            .any(|p| !Float::is_finite(p[0]) || !Float::is_finite(p[1]))
        {
            return Err(Error::InvalidArgument("non-finite sensor position".into()));
        }
        // cluster ids must cover 0..C-1 without gaps
        let c = self.n_clusters();
        let mut seen = vec![false; c];
        for &id in &self.cluster_ids {
            seen[id] = true;
        }
        if seen.iter().any(|&s| !s) {
            return Err(Error::InvalidArgument(
                "cluster ids must form a contiguous range 0..C-1".into(),
            ));
        }
        Ok(())
    }

    pub fn n_sensors(&self) -> usize {
        self.positions.len()
    }

    /// Number of clusters, `max(cluster_id) + 1`.
    pub fn n_clusters(&self) -> usize {
        self.cluster_ids.iter().copied().max().map_or(0, |m| m + 1)
    }

    pub fn cluster_of(&self, sensor: usize) -> usize {
        self.cluster_ids[sensor]
    }
}

/// One emitting source: ground-truth position and the seed that determines
/// its waveform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec<T: Scalar> {
    pub position: Point2<T>,
    pub seed: u64,
}

/// Signal and sampling parameters shared by all sources and sensors.
///
/// `n_f` is the zero-padded DFT length and must exceed the sample count
/// `n_t`. `snr_db: None` disables noise entirely; `sync_error_std` is the
/// per-sensor clock-offset standard deviation in seconds (0 disables it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalConfig<T: Scalar> {
    pub center_freq: T,
    pub bandwidth: T,
    pub sample_rate: T,
    pub n_t: usize,
    pub n_f: usize,
    pub propagation_speed: T,
    #[serde(default)]
    pub snr_db: Option<T>,
    #[serde(default = "zero")]
    pub sync_error_std: T,
}

fn zero<T: Scalar>() -> T {
    T::zero()
}

impl<T: Scalar> SignalConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.n_t < 2 {
            return Err(Error::Config("n_t must be at least 2".into()));
        }
        if self.n_f <= self.n_t {
            return Err(Error::Config(format!(
                "n_f ({}) must exceed n_t ({})",
                self.n_f, self.n_t
            )));
        }
        if self.bandwidth <= T::zero() {
            return Err(Error::Config("bandwidth must be positive".into()));
        }
        let half_bw = self.bandwidth / T::cast(2.0);
        let nyquist = self.sample_rate / T::cast(2.0);
        if self.center_freq - half_bw <= T::zero() || self.center_freq + half_bw >= nyquist {
            return Err(Error::Config(format!(
                "band [{}, {}] must lie strictly inside (0, {})",
                (self.center_freq - half_bw).as_f64(),
                (self.center_freq + half_bw).as_f64(),
                nyquist.as_f64()
            )));
        }
        if self.propagation_speed <= T::zero() {
            return Err(Error::Config("propagation speed must be positive".into()));
        }
        if self.sync_error_std < T::zero() {
            return Err(Error::Config("sync_error_std must be >= 0".into()));
        }
        Ok(())
    }

    /// Half-spectrum bin count, `n_f/2 + 1`.
    pub fn n_bins(&self) -> usize {
        self.n_f / 2 + 1
    }

    /// Frequency in Hz of DFT bin `f`.
    pub fn bin_freq_hz(&self, f: usize) -> T {
        T::cast(f as f64) * self.sample_rate / T::cast(self.n_f as f64)
    }
}

/// One indirect-path tap: gain and delay (in samples), shared by every
/// sensor of `cluster` for signals from `source`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelTap<T: Scalar> {
    pub cluster: usize,
    pub source: usize,
    pub gain: T,
    pub delay: T,
}

/// True multipath channels used by the simulator, keyed by
/// (cluster, source). May be empty (no reverberation).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MultipathChannel<T: Scalar> {
    pub taps: Vec<ChannelTap<T>>,
}

impl<T: Scalar> MultipathChannel<T> {
    pub fn empty() -> Self {
        Self { taps: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn taps_for(&self, cluster: usize, source: usize) -> impl Iterator<Item = &ChannelTap<T>> {
        self.taps
            .iter()
            .filter(move |t| t.cluster == cluster && t.source == source)
    }

    pub fn validate(&self, n_clusters: usize, n_sources: usize) -> Result<()> {
        for tap in &self.taps {
            if tap.delay < T::zero() {
                return Err(Error::Config(format!(
                    "negative multipath delay {} for cluster {} source {}",
                    tap.delay.as_f64(),
                    tap.cluster,
                    tap.source
                )));
            }
            if !Float::is_finite(tap.gain) || !Float::is_finite(tap.delay) {
                return Err(Error::Config("non-finite multipath tap".into()));
            }
            if tap.cluster >= n_clusters || tap.source >= n_sources {
                return Err(Error::Config(format!(
                    "multipath tap references cluster {} / source {} out of range",
                    tap.cluster, tap.source
                )));
            }
        }
        Ok(())
    }
}

/// Differential-evolution settings as stored in the scenario document.
/// Box bounds are per parameter class; they are expanded to per-component
/// bounds once the unknown-vector layout is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeSettings<T: Scalar> {
    pub population: usize,
    pub amplification: T,
    pub crossover: T,
    pub max_generations: usize,
    pub seed: u64,
    pub stagnation_window: usize,
    pub stagnation_rel_tol: T,
    pub position_bounds: [[T; 2]; 2],
    pub beta_bounds: [T; 2],
    pub gain_bounds: [T; 2],
    pub delay_bounds: [T; 2],
}

impl<T: Scalar> Default for DeSettings<T> {
    fn default() -> Self {
        Self {
            population: 40,
            amplification: T::cast(0.8),
            crossover: T::one(),
            max_generations: 5,
            seed: 1,
            stagnation_window: 5,
            stagnation_rel_tol: T::cast(1e-12),
            position_bounds: [
                [T::zero(), T::cast(40.0)],
                [T::zero(), T::cast(40.0)],
            ],
            beta_bounds: [T::cast(-100.0), T::cast(100.0)],
            gain_bounds: [T::zero(), T::one()],
            delay_bounds: [T::zero(), T::cast(400.0)],
        }
    }
}

/// Levenberg-Marquardt settings as stored in the scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmaSettings<T: Scalar> {
    pub damping_scale: T,
    pub gradient_tol: T,
    pub step_tol: T,
    pub max_iterations: usize,
    /// Damp with `λ·diag(JᵀJ)` instead of `λI`.
    pub scaled_damping: bool,
}

impl<T: Scalar> Default for LmaSettings<T> {
    fn default() -> Self {
        Self {
            damping_scale: T::cast(1e-3),
            gradient_tol: T::cast(1e-8),
            step_tol: T::cast(1e-12),
            max_iterations: 100,
            scaled_damping: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerSettings<T: Scalar> {
    pub de: DeSettings<T>,
    pub lma: LmaSettings<T>,
}

/// Immutable world description: geometry, signals, channels, seeds, and the
/// estimation-model knobs (`attenuation_order`, `model_paths`).
///
/// Serializes to the scenario JSON document described in
/// `docs/scenario-schema.md`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario<T: Scalar> {
    pub array: SensorArray<T>,
    pub sources: Vec<SourceSpec<T>>,
    pub signal: SignalConfig<T>,
    #[serde(default)]
    pub channels: MultipathChannel<T>,
    pub noise_seed: u64,
    /// Order L of the fitted attenuation series (number of unknown β).
    #[serde(default)]
    pub attenuation_order: usize,
    /// Indirect paths per (cluster, source) estimated by the model
    /// (0 disables multipath unknowns).
    #[serde(default)]
    pub model_paths: usize,
    #[serde(default)]
    pub optimizer: OptimizerSettings<T>,
    /// Optional `[low_hz, high_hz]` restriction of the cost to in-band bins.
    #[serde(default)]
    pub band_mask: Option<[T; 2]>,
}

impl<T: Scalar> Scenario<T> {
    pub fn validate(&self) -> Result<()> {
        self.array.validate()?;
        self.signal.validate()?;
        if self.sources.is_empty() {
            return Err(Error::Config("at least one source required".into()));
        }
        if self.array.n_sensors() < self.sources.len() {
            return Err(Error::Config(format!(
                "need at least as many sensors ({}) as sources ({})",
                self.array.n_sensors(),
                self.sources.len()
            )));
        }
        for src in &self.sources {
            if !Float::is_finite(src.position[0]) || !Float::is_finite(src.position[1]) {
                return Err(Error::Config("non-finite source position".into()));
            }
        }
        self.channels
            .validate(self.array.n_clusters(), self.sources.len())?;
        if let Some([lo, hi]) = self.band_mask {
            if lo < T::zero() || hi <= lo {
                return Err(Error::Config("band mask must satisfy 0 <= low < high".into()));
            }
        }
        Ok(())
    }

    pub fn n_sensors(&self) -> usize {
        self.array.n_sensors()
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let scenario: Self = serde_json::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }
}

/// Euclidean distance between two points.
pub fn distance<T: Scalar>(a: Point2<T>, b: Point2<T>) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    Float::sqrt(dx * dx + dy * dy)
}

/// Propagation delay in samples for range `rho`: `rho * sample_rate / v`.
/// Fractional values are permitted; `rho` must be strictly positive because
/// the attenuation model diverges at 0.
pub fn delay_samples<T: Scalar>(rho: T, cfg: &SignalConfig<T>) -> Result<T> {
    if rho <= T::zero() {
        return Err(Error::Domain(format!(
            "range must be positive, got {}",
            rho.as_f64()
        )));
    }
    Ok(rho * cfg.sample_rate / cfg.propagation_speed)
}

/// Sensor-to-source range matrix (M×N). Errors on coincident pairs.
pub fn range_matrix<T: Scalar>(
    array: &SensorArray<T>,
    sources: &[Point2<T>],
) -> Result<DMatrix<T>> {
    let m = array.n_sensors();
    let n = sources.len();
    let mut ranges = DMatrix::zeros(m, n);
    for (j, src) in sources.iter().enumerate() {
        for (i, sensor) in array.positions.iter().enumerate() {
            let rho = distance(*sensor, *src);
            if rho <= T::zero() {
                return Err(Error::DegenerateGeometry {
                    sensor: i,
                    source: j,
                });
            }
            ranges[(i, j)] = rho;
        }
    }
    Ok(ranges)
}

/// Spiral array: position k is `center + (s_k/π)(cos s_k, sin s_k)` with the
/// angles `s_k` equally spaced over `angle_range`; all sensors in cluster 0.
pub fn spiral_array<T: Scalar>(
    m_count: usize,
    center: Point2<T>,
    angle_range: (T, T),
) -> Result<SensorArray<T>> {
    if m_count == 0 {
        return Err(Error::InvalidArgument("m_count must be at least 1".into()));
    }
    let (start, end) = angle_range;
    let step = if m_count == 1 {
        T::zero()
    } else {
        (end - start) / T::cast((m_count - 1) as f64)
    };
    let positions = (0..m_count)
        .map(|k| {
            let s = start + step * T::cast(k as f64);
            let radius = s / T::pi();
            [
                center[0] + radius * Float::cos(s),
                center[1] + radius * Float::sin(s),
            ]
        })
        .collect();
    SensorArray::new(positions, vec![0; m_count])
}

/// One circular array per center, `per_array` sensors equally spaced on each
/// circle starting at angle 0; cluster id equals the circle index.
pub fn circular_arrays<T: Scalar>(
    centers: &[Point2<T>],
    per_array: usize,
    radius: T,
) -> Result<SensorArray<T>> {
    if centers.is_empty() {
        return Err(Error::InvalidArgument("at least one circle center required".into()));
    }
    if per_array == 0 {
        return Err(Error::InvalidArgument("per_array must be at least 1".into()));
    }
    if radius <= T::zero() {
        return Err(Error::InvalidArgument("radius must be positive".into()));
    }
    let mut positions = Vec::with_capacity(centers.len() * per_array);
    let mut cluster_ids = Vec::with_capacity(centers.len() * per_array);
    for (c, center) in centers.iter().enumerate() {
        for k in 0..per_array {
            let angle = T::two_pi() * T::cast(k as f64) / T::cast(per_array as f64);
            positions.push([
                center[0] + radius * Float::cos(angle),
                center[1] + radius * Float::sin(angle),
            ]);
            cluster_ids.push(c);
        }
    }
    SensorArray::new(positions, cluster_ids)
}
