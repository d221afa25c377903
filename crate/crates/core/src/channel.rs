//! Air-to-ground channel model: geometry, line-of-sight probability, path
//! loss, small-scale fading, channel gain, Shannon rate and MEC association.
//!
//! All functions here are pure. Positions are in meters; the environment owns
//! the mutable state (current positions, fading samples).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position3D {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn distance(&self, other: &Position3D) -> f64 {
        distance(self, other)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Euclidean distance between two points.
pub fn distance(a: &Position3D, b: &Position3D) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Propagation constants of the air-to-ground link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    /// Carrier frequency in Hz.
    pub carrier_hz: f64,
    /// Propagation speed in m/s.
    pub speed: f64,
    /// Excess loss of a line-of-sight link, dB.
    pub eta_los_db: f64,
    /// Excess loss of a non-line-of-sight link, dB.
    pub eta_nlos_db: f64,
    /// Environment constant `alpha` of the aerial LoS curve.
    pub alpha: f64,
    /// Environment constant `beta` of the aerial LoS curve.
    pub beta: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            carrier_hz: 2.0e9,
            speed: 3.0e8,
            eta_los_db: 1.0,
            eta_nlos_db: 20.0,
            alpha: 9.61,
            beta: 0.16,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("channel.{field}"), msg))
            }
        };
        check(self.carrier_hz > 0.0, "carrier_hz", "must be > 0")?;
        check(self.speed > 0.0, "speed", "must be > 0")?;
        check(
            self.eta_los_db <= self.eta_nlos_db,
            "eta_los_db",
            "LoS excess loss must not exceed the NLoS excess loss",
        )?;
        check(self.alpha > 0.0, "alpha", "must be > 0")?;
        check(self.beta > 0.0, "beta", "must be > 0")?;
        Ok(())
    }
}

/// Complementary CDF of obstruction heights, `G(h)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum HeightCcdf {
    /// `G(h) = exp(-h / mean_height)`, equal to 1 for `h <= 0`.
    Exponential { mean_height: f64 },
    /// Piecewise-linear table; clamped at both ends.
    Table { heights: Vec<f64>, values: Vec<f64> },
    /// `G(h) = 1` everywhere: every obstruction blocks.
    Unit,
}

impl HeightCcdf {
    pub fn eval(&self, h: f64) -> f64 {
        match self {
            HeightCcdf::Exponential { mean_height } => {
                if h <= 0.0 {
                    1.0
                } else {
                    (-h / mean_height).exp()
                }
            }
            HeightCcdf::Unit => 1.0,
            HeightCcdf::Table { heights, values } => {
                if h <= heights[0] {
                    return values[0];
                }
                let last = heights.len() - 1;
                if h >= heights[last] {
                    return values[last];
                }
                let i = heights.partition_point(|&x| x <= h) - 1;
                let t = (h - heights[i]) / (heights[i + 1] - heights[i]);
                values[i] + t * (values[i + 1] - values[i])
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            HeightCcdf::Exponential { mean_height } if *mean_height <= 0.0 => Err(Error::config(
                "obstruction.ccdf.mean_height",
                "must be > 0",
            )),
            HeightCcdf::Table { heights, values } => {
                if heights.is_empty() || heights.len() != values.len() {
                    return Err(Error::config(
                        "obstruction.ccdf.values",
                        "table needs matching, non-empty heights and values",
                    ));
                }
                if heights.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::config(
                        "obstruction.ccdf.heights",
                        "heights must be strictly increasing",
                    ));
                }
                if values.windows(2).any(|w| w[1] > w[0])
                    || values.iter().any(|v| !(0.0..=1.0).contains(v))
                {
                    return Err(Error::config(
                        "obstruction.ccdf.values",
                        "values must be non-increasing within [0, 1]",
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Upper limit of the obstruction integral. The printed limit can be read
/// either as `D / (2 r_o)` or as `(D / 2) * r_o`; both are available.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpperLimit {
    #[default]
    HalfDistanceOverRadius,
    HalfDistanceTimesRadius,
}

impl UpperLimit {
    pub fn eval(self, distance: f64, radius: f64) -> f64 {
        match self {
            UpperLimit::HalfDistanceOverRadius => distance / (2.0 * radius),
            UpperLimit::HalfDistanceTimesRadius => distance / 2.0 * radius,
        }
    }
}

/// Obstruction field used by the ground-link LoS probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObstructionModel {
    /// Mean obstruction radius `r_o` (m).
    pub mean_radius: f64,
    /// Obstruction density `lambda_o`.
    pub density: f64,
    pub ccdf: HeightCcdf,
    pub upper_limit: UpperLimit,
    /// Number of Simpson panels (rounded up to even).
    pub panels: usize,
}

impl Default for ObstructionModel {
    fn default() -> Self {
        Self {
            mean_radius: 10.0,
            density: 2.0e-3,
            ccdf: HeightCcdf::Exponential { mean_height: 15.0 },
            upper_limit: UpperLimit::HalfDistanceOverRadius,
            panels: 512,
        }
    }
}

impl ObstructionModel {
    pub fn validate(&self) -> Result<()> {
        if self.mean_radius < 0.0 {
            return Err(Error::config("obstruction.mean_radius", "must be >= 0"));
        }
        if self.density < 0.0 {
            return Err(Error::config("obstruction.density", "must be >= 0"));
        }
        if self.panels < 2 {
            return Err(Error::config("obstruction.panels", "must be >= 2"));
        }
        self.ccdf.validate()
    }

    /// `G` evaluated at the height of the link midpoint.
    pub fn midpoint_ccdf(&self, m: &Position3D, n: &Position3D) -> f64 {
        self.ccdf.eval(0.5 * (m.z + n.z))
    }
}

/// Probability of line of sight for an aerial MEC, from the elevation angle
/// in degrees: `1 / (1 + alpha * exp(-beta * (theta - alpha)))`.
pub fn p_los_aerial(m: &Position3D, n: &Position3D, p: &ChannelParams) -> Result<f64> {
    let d = distance(m, n);
    if d <= 0.0 {
        return Err(Error::DegenerateGeometry(
            "aerial LoS probability needs distinct endpoints".into(),
        ));
    }
    let ratio = ((m.z - n.z) / d).clamp(-1.0, 1.0);
    let theta = ratio.asin().to_degrees();
    Ok(1.0 / (1.0 + p.alpha * (-p.beta * (theta - p.alpha)).exp()))
}

/// Probability of line of sight for a ground MEC:
/// `exp(-2 r_o lambda_o * integral_0^U G(h(x)) dx)` where `h(x)` is the height
/// of the straight ray at position `x` of `[0, U]`. Composite Simpson rule.
pub fn p_los_ground(m: &Position3D, n: &Position3D, o: &ObstructionModel) -> f64 {
    if o.density == 0.0 || o.mean_radius == 0.0 {
        return 1.0;
    }
    let d = distance(m, n);
    let upper = o.upper_limit.eval(d, o.mean_radius);
    if upper <= 0.0 {
        return 1.0;
    }
    let panels = o.panels + o.panels % 2;
    let step = upper / panels as f64;
    let height = |x: f64| n.z + (m.z - n.z) * (x / upper);
    let mut acc = o.ccdf.eval(height(0.0)) + o.ccdf.eval(height(upper));
    for i in 1..panels {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * o.ccdf.eval(height(i as f64 * step));
    }
    let integral = acc * step / 3.0;
    (-2.0 * o.mean_radius * o.density * integral).exp().clamp(0.0, 1.0)
}

/// Mean excess loss `L = p_los * eta_los + (1 - p_los) * eta_nlos` (dB).
pub fn mean_excess_loss(p_los: f64, p: &ChannelParams) -> f64 {
    p_los * p.eta_los_db + (1.0 - p_los) * p.eta_nlos_db
}

/// Free-space path loss plus the mean excess loss, in dB.
pub fn path_loss(m: &Position3D, n: &Position3D, p: &ChannelParams, excess_db: f64) -> Result<f64> {
    let d = distance(m, n);
    if d <= 0.0 {
        return Err(Error::DegenerateGeometry(
            "path loss is singular at zero distance".into(),
        ));
    }
    let fspl = 20.0 * (4.0 * std::f64::consts::PI * p.carrier_hz / p.speed).log10();
    Ok(fspl + 20.0 * d.log10() + excess_db)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Small-scale fading samples for one link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FadingState {
    /// Magnitude of a standard Gaussian sample.
    pub g: f64,
    /// Rician amplitude with unit mean power.
    pub rd: f64,
}

impl Default for FadingState {
    fn default() -> Self {
        Self { g: 1.0, rd: 1.0 }
    }
}

impl FadingState {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, k_factor: f64) -> Self {
        let g: f64 = rng.sample::<f64, _>(StandardNormal).abs();
        let los = (k_factor / (k_factor + 1.0)).sqrt();
        let sigma = (0.5 / (k_factor + 1.0)).sqrt();
        let re = los + sigma * rng.sample::<f64, _>(StandardNormal);
        let im: f64 = sigma * rng.sample::<f64, _>(StandardNormal);
        Self {
            g,
            rd: re.hypot(im),
        }
    }
}

/// Instantaneous channel gain `h = sqrt(g * rd / (D * PL))` with the path
/// loss given in the linear domain.
pub fn channel_gain(
    m: &Position3D,
    n: &Position3D,
    fading: &FadingState,
    path_loss_linear: f64,
) -> Result<f64> {
    let denom = distance(m, n) * path_loss_linear;
    if denom <= 0.0 || !denom.is_finite() {
        return Err(Error::DegenerateChannel(format!(
            "non-positive gain denominator {denom}"
        )));
    }
    let num = fading.g * fading.rd;
    if num < 0.0 {
        return Err(Error::DegenerateChannel(format!(
            "negative fading product {num}"
        )));
    }
    Ok((num / denom).sqrt())
}

/// Shannon rate `B * log2(1 + P * h^2 / N)`.
pub fn data_rate(gain: f64, tx_power: f64, noise: f64, bandwidth: f64) -> f64 {
    bandwidth * (1.0 + tx_power * gain * gain / noise).log2()
}

/// Replace a rate below `floor` by `floor`; the flag reports a substitution.
pub fn floored_rate(rate: f64, floor: f64) -> (f64, bool) {
    if rate < floor || !rate.is_finite() {
        (floor, true)
    } else {
        (rate, false)
    }
}

/// Per (MEC, node) link summary.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ChannelState {
    pub gain: f64,
    /// Path loss in dB.
    pub path_loss: f64,
    pub p_los: f64,
    pub rate: f64,
    /// Link distance in normalized length units.
    pub distance: f64,
    /// Obstruction CCDF `G(h)` at the link midpoint.
    pub obstruction_ccdf: f64,
}

/// Index of the MEC with the largest gain; ties go to the lowest index.
pub fn associate(gains: &[f64]) -> Result<usize> {
    if gains.is_empty() {
        return Err(Error::NoAssociation);
    }
    let mut best = 0;
    for (i, &g) in gains.iter().enumerate().skip(1) {
        if g > gains[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Horizontal bounding box; altitude is left untouched by mobility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arena {
    pub width: f64,
    pub depth: f64,
}

impl Arena {
    pub fn contains(&self, p: &Position3D) -> bool {
        (0.0..=self.width).contains(&p.x) && (0.0..=self.depth).contains(&p.y)
    }
}

/// Constant-velocity mover with reflecting arena walls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mover {
    pub position: Position3D,
    pub vx: f64,
    pub vy: f64,
}

impl Mover {
    pub fn new(position: Position3D) -> Self {
        Self {
            position,
            vx: 0.0,
            vy: 0.0,
        }
    }

    /// Uniform speed in `[0, max_speed]` with a uniform heading.
    pub fn with_random_velocity<R: Rng + ?Sized>(position: Position3D, max_speed: f64, rng: &mut R) -> Self {
        let speed = rng.random::<f64>() * max_speed;
        let heading = rng.random::<f64>() * std::f64::consts::TAU;
        Self {
            position,
            vx: speed * heading.cos(),
            vy: speed * heading.sin(),
        }
    }

    pub fn advance(&mut self, dt: f64, arena: &Arena) {
        let (x, vx) = reflect(self.position.x + self.vx * dt, self.vx, arena.width);
        let (y, vy) = reflect(self.position.y + self.vy * dt, self.vy, arena.depth);
        self.position.x = x;
        self.position.y = y;
        self.vx = vx;
        self.vy = vy;
    }
}

fn reflect(mut coord: f64, mut vel: f64, size: f64) -> (f64, f64) {
    if size <= 0.0 {
        return (0.0, vel);
    }
    // fold back until inside; a single step may cross the arena more than once
    while coord < 0.0 || coord > size {
        if coord < 0.0 {
            coord = -coord;
        } else {
            coord = 2.0 * size - coord;
        }
        vel = -vel;
    }
    (coord, vel)
}
