//! Signal model: array geometry, channels, pilots, noise and despreading.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;

use crate::linalg::{CMatrix, CVector, C64};
use crate::{math, rank1, rng, Error, Result};

/// Attempts allowed when redrawing AoAs to meet the minimum-gap condition.
pub const GAP_RETRY_LIMIT: usize = 10_000;

/// Scenario parameters shared by every stage.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct SystemConfig {
    /// Antenna count `M`.
    #[cfg_attr(feature = "serde", serde(rename = "M"))]
    pub antennas: usize,
    /// User count `K`.
    #[cfg_attr(feature = "serde", serde(rename = "K"))]
    pub users: usize,
    /// Pilot length `B` in symbols.
    #[cfg_attr(feature = "serde", serde(rename = "B"))]
    pub pilot_len: usize,
    /// Hankel stack length `L`.
    #[cfg_attr(feature = "serde", serde(rename = "L"))]
    pub stack_len: usize,
    /// Paths per user `P`.
    #[cfg_attr(feature = "serde", serde(rename = "P"))]
    pub paths: usize,
    /// Angle grid size `N`.
    #[cfg_attr(feature = "serde", serde(rename = "N"))]
    pub grid_size: usize,
    pub d_over_lambda: f64,
    pub sigma_x2: f64,
    pub sigma_n2: f64,
    pub seed: u64,
    /// Override for the channel energy factor used by the MMSE bound (default `P + 1`).
    #[cfg_attr(
        feature = "serde",
        serde(default, skip_serializing_if = "Option::is_none")
    )]
    pub rho_h2: Option<f64>,
}

impl SystemConfig {
    /// Defaults: `B = 2K`, `L = M/2`, `N = 4096`, half-wavelength spacing, unit powers.
    pub fn new(antennas: usize, users: usize, paths: usize) -> Self {
        SystemConfig {
            antennas,
            users,
            pilot_len: 2 * users.max(1),
            stack_len: antennas / 2,
            paths,
            grid_size: 4096,
            d_over_lambda: 0.5,
            sigma_x2: 1.0,
            sigma_n2: 0.01,
            seed: 0,
            rho_h2: None,
        }
    }

    /// Set `σn²` so that `σx²/σn²` equals `snr_db`.
    pub fn with_snr_db(mut self, snr_db: f64) -> Self {
        self.sigma_n2 = self.sigma_x2 / math::from_db(snr_db);
        self
    }

    pub fn snr_db(&self) -> f64 {
        math::db(self.sigma_x2 / self.sigma_n2)
    }

    /// Spacing of the angle grid over `[−π/2, π/2)`.
    pub fn grid_step(&self) -> f64 {
        PI / self.grid_size as f64
    }

    /// Noise variance per entry of a despread vector (see [`despread`]).
    pub fn effective_noise(&self) -> f64 {
        self.sigma_n2 / (self.pilot_len as f64 * self.sigma_x2)
    }

    pub fn rho_h2(&self) -> f64 {
        self.rho_h2.unwrap_or(self.paths as f64 + 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidConfig(msg));
        let (m, l, p) = (self.antennas, self.stack_len, self.paths);
        if m == 0 {
            return bad("M must be positive".to_string());
        }
        if self.users == 0 {
            return bad("K must be positive".to_string());
        }
        if p == 0 || p > m {
            return bad(format!("P = {p} must lie in [1, M]"));
        }
        if l < p || l + p > m {
            return Err(Error::StackLength {
                stack_len: l,
                min: p,
                max: m.saturating_sub(p),
            });
        }
        if self.pilot_len < self.users {
            return Err(Error::TooFewPilots {
                pilot_len: self.pilot_len,
                users: self.users,
            });
        }
        if self.grid_size < m {
            return bad(format!("N = {} must be at least M = {m}", self.grid_size));
        }
        if !(self.d_over_lambda > 0.0 && self.d_over_lambda.is_finite()) {
            return bad("d_over_lambda must be positive".to_string());
        }
        if !(self.sigma_x2 > 0.0 && self.sigma_x2.is_finite()) {
            return bad("sigma_x2 must be positive".to_string());
        }
        if !(self.sigma_n2 >= 0.0 && self.sigma_n2.is_finite()) {
            return bad("sigma_n2 must be non-negative".to_string());
        }
        if let Some(r) = self.rho_h2 {
            if !(r > 0.0 && r.is_finite()) {
                return bad("rho_h2 must be positive".to_string());
            }
        }
        Ok(())
    }
}

/// Array response `a(θ)` of a uniform linear array, `a_m = exp(j 2π m d/λ sin θ)`.
pub fn steering_vector(theta: f64, len: usize, d_over_lambda: f64) -> CVector {
    let phi = 2.0 * PI * d_over_lambda * math::sin(theta);
    CVector::from_fn(len, |m, _| math::cis(phi * m as f64))
}

/// Columns are steering vectors for `thetas`.
pub fn steering_matrix(thetas: &[f64], len: usize, d_over_lambda: f64) -> CMatrix {
    let mut a = CMatrix::zeros(len, thetas.len());
    for (j, &t) in thetas.iter().enumerate() {
        a.set_column(j, &steering_vector(t, len, d_over_lambda));
    }
    a
}

/// How path parameters are shared across users.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CorrelationMode {
    /// Every user has independent paths.
    #[default]
    FullRank,
    /// `r` parameter sets; user `k` belongs to cluster `k mod r`.
    LowRank(usize),
}

impl CorrelationMode {
    /// Cluster index of user `k`.
    pub fn cluster_of(&self, k: usize) -> usize {
        match *self {
            CorrelationMode::FullRank => k,
            CorrelationMode::LowRank(r) => k % r,
        }
    }

    pub fn clusters(&self, users: usize) -> usize {
        match *self {
            CorrelationMode::FullRank => users,
            CorrelationMode::LowRank(r) => r.min(users),
        }
    }
}

/// AoAs and gains of one user's paths.
#[derive(Debug, Clone, PartialEq)]
pub struct UserPaths {
    pub thetas: Vec<f64>,
    pub gains: Vec<C64>,
}

impl UserPaths {
    /// `h = Σ α_p a_M(θ_p)`.
    pub fn channel(&self, antennas: usize, d_over_lambda: f64) -> CVector {
        let mut h = CVector::zeros(antennas);
        for (&t, &g) in self.thetas.iter().zip(&self.gains) {
            h.axpy(
                g,
                &steering_vector(t, antennas, d_over_lambda),
                C64::new(1.0, 0.0),
            );
        }
        h
    }

    /// Smallest pairwise AoA separation, infinite for a single path.
    pub fn min_gap(&self) -> f64 {
        min_pairwise_gap(&self.thetas)
    }
}

/// Smallest pairwise distance between spatial frequencies `d/λ · sin θ` on the unit
/// circle (frequencies one apart give identical steering vectors).
pub fn min_frequency_gap(thetas: &[f64], d_over_lambda: f64) -> f64 {
    let mut best = f64::INFINITY;
    for (i, &a) in thetas.iter().enumerate() {
        for &b in &thetas[i + 1..] {
            let diff = d_over_lambda * (math::sin(a) - math::sin(b));
            let frac = diff - math::ceil(diff - 0.5);
            best = best.min(frac.abs());
        }
    }
    best
}

pub(crate) fn min_pairwise_gap(thetas: &[f64]) -> f64 {
    let mut s: Vec<f64> = thetas.to_vec();
    s.sort_by(f64::total_cmp);
    s.windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min)
}

/// One draw of the multipath channel for all users.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub users: Vec<UserPaths>,
    /// `M × K`, column `k` is user `k`'s channel.
    pub h: CMatrix,
    pub min_aoa_gap: f64,
    pub correlation_mode: CorrelationMode,
}

/// Minimum AoA separation demanded of generated channels: `max{f(L), f(M−L)}`.
///
/// Single-path users impose no gap, so the threshold is zero for `P = 1`.
pub fn required_gap(config: &SystemConfig) -> Result<f64> {
    if config.paths < 2 {
        return Ok(0.0);
    }
    let a = rank1::minimal_gap_threshold(config.stack_len)?;
    let b = rank1::minimal_gap_threshold(config.antennas - config.stack_len)?;
    Ok(a.max(b))
}

fn draw_paths<R: Rng + ?Sized>(config: &SystemConfig, gap: f64, rng: &mut R) -> Result<UserPaths> {
    let p = config.paths;
    for _ in 0..GAP_RETRY_LIMIT {
        let thetas: Vec<f64> = (0..p)
            .map(|_| rng.random_range(-FRAC_PI_2..FRAC_PI_2))
            .collect();
        let separated = min_pairwise_gap(&thetas) >= gap
            && min_frequency_gap(&thetas, config.d_over_lambda) >= gap;
        if p < 2 || separated {
            let gains = (0..p).map(|_| rng::complex_gaussian(rng, 1.0)).collect();
            return Ok(UserPaths { thetas, gains });
        }
    }
    Err(Error::InfeasibleGap {
        threshold: gap,
        attempts: GAP_RETRY_LIMIT,
    })
}

/// Draw AoAs uniformly on `[−π/2, π/2)` with unit-variance circular Gaussian gains.
///
/// AoA sets are redrawn until both the angle gap and the spatial-frequency gap
/// ([`min_frequency_gap`]) reach [`required_gap`]. The angle gap alone admits pairs
/// near endfire whose steering vectors are nearly parallel.
pub fn draw_channel<R: Rng + ?Sized>(
    config: &SystemConfig,
    rng: &mut R,
    mode: CorrelationMode,
) -> Result<ChannelRealization> {
    config.validate()?;
    if let CorrelationMode::LowRank(r) = mode {
        if r == 0 || r > config.users {
            return Err(Error::InvalidConfig(format!(
                "low_rank({r}) needs 1 <= r <= K = {}",
                config.users
            )));
        }
    }
    let gap = required_gap(config)?;
    let sets = (0..mode.clusters(config.users))
        .map(|_| draw_paths(config, gap, rng))
        .collect::<Result<Vec<_>>>()?;
    let users: Vec<UserPaths> = (0..config.users)
        .map(|k| sets[mode.cluster_of(k)].clone())
        .collect();
    Ok(realize(config, users, mode))
}

/// Build the realization (channel matrix and gap) from explicit path parameters.
pub fn realize(
    config: &SystemConfig,
    users: Vec<UserPaths>,
    mode: CorrelationMode,
) -> ChannelRealization {
    let mut h = CMatrix::zeros(config.antennas, users.len());
    for (k, u) in users.iter().enumerate() {
        h.set_column(k, &u.channel(config.antennas, config.d_over_lambda));
    }
    let min_aoa_gap = users
        .iter()
        .map(UserPaths::min_gap)
        .fold(f64::INFINITY, f64::min);
    ChannelRealization {
        users,
        h,
        min_aoa_gap,
        correlation_mode: mode,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PilotKind {
    #[default]
    Orthonormal,
    RandomGaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotMatrix {
    /// `B × K`, column `k` is user `k`'s pilot sequence.
    pub x: CMatrix,
    pub kind: PilotKind,
}

impl PilotMatrix {
    pub fn column(&self, k: usize) -> CVector {
        self.x.column(k).into_owned()
    }
}

/// Orthonormal pilots are the first `K` columns of the unitary `B`-point DFT, scaled by
/// `sqrt(B σx²)` so each column carries `B` symbols of power `σx²`. Random pilots are
/// i.i.d. circular Gaussian with variance `σx²`.
pub fn draw_pilots<R: Rng + ?Sized>(
    config: &SystemConfig,
    rng: &mut R,
    kind: PilotKind,
) -> Result<PilotMatrix> {
    let (b, k) = (config.pilot_len, config.users);
    let x = match kind {
        PilotKind::Orthonormal => {
            if b < k {
                return Err(Error::TooFewPilots {
                    pilot_len: b,
                    users: k,
                });
            }
            let scale = math::sqrt(config.sigma_x2);
            CMatrix::from_fn(b, k, |i, j| {
                let phase = -2.0 * PI * ((i * j) % b) as f64 / b as f64;
                math::cis(phase) * scale
            })
        }
        PilotKind::RandomGaussian => rng::complex_gaussian_matrix(rng, b, k, config.sigma_x2),
    };
    Ok(PilotMatrix { x, kind })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedSignal {
    /// `M × B`.
    pub y: CMatrix,
}

/// `Y = H X^H + N`, with `N` i.i.d. circular Gaussian of variance `σn²`.
pub fn transmit<R: Rng + ?Sized>(
    h: &CMatrix,
    pilots: &PilotMatrix,
    sigma_n2: f64,
    rng: &mut R,
) -> Result<ReceivedSignal> {
    if h.ncols() != pilots.x.ncols() {
        return Err(Error::Dimension {
            expected: pilots.x.ncols(),
            got: h.ncols(),
        });
    }
    let mut y = h * pilots.x.adjoint();
    if sigma_n2 > 0.0 {
        y += rng::complex_gaussian_matrix(rng, y.nrows(), y.ncols(), sigma_n2);
    }
    Ok(ReceivedSignal { y })
}

/// Matched-filter despreading normalized by pilot energy: `y_k = Y x_k / (x_k^H x_k)`.
///
/// With orthonormal pilots this returns `h_k` plus noise of variance `σn² / (B σx²)`.
pub fn despread(received: &ReceivedSignal, x_k: &CVector) -> Result<CVector> {
    if received.y.ncols() != x_k.len() {
        return Err(Error::Dimension {
            expected: received.y.ncols(),
            got: x_k.len(),
        });
    }
    let energy = x_k.norm_squared();
    if energy == 0.0 {
        return Err(Error::RankDeficientPilots);
    }
    Ok(&received.y * x_k / C64::new(energy, 0.0))
}

/// Channel, pilots and received block for one trial.
#[derive(Debug, Clone)]
pub struct Trial {
    pub channel: ChannelRealization,
    pub pilots: PilotMatrix,
    pub received: ReceivedSignal,
}

/// Draw channel, pilots and noise from independent sub-streams of `seed`.
pub fn draw_trial(
    config: &SystemConfig,
    mode: CorrelationMode,
    kind: PilotKind,
    seed: u64,
) -> Result<Trial> {
    let channel = draw_channel(config, &mut rng::stream(seed, &[0]), mode)?;
    let pilots = draw_pilots(config, &mut rng::stream(seed, &[1]), kind)?;
    let received = transmit(
        &channel.h,
        &pilots,
        config.sigma_n2,
        &mut rng::stream(seed, &[2]),
    )?;
    Ok(Trial {
        channel,
        pilots,
        received,
    })
}
