//! Deterministic synthetic world: object tracks, agent trajectories, the
//! analytic BEV backbone that stands in for a learned feature extractor, and
//! the fault injectors (latency, pose noise, token drop) used by the
//! robustness experiments.
//!
//! The whole simulation is a pure function of (scenario config, noise spec,
//! seed). Every randomized quantity draws from its own stream keyed by
//! (seed, domain, agent, frame), so per-agent work can run in any order
//! without changing results.

pub mod raster;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::AgentKind;
use crate::grid::{normalize_angle, Pose};
use crate::scalar::Real;
use crate::wire::SparseTokenSet;

pub use raster::{
    analytic_classify_head, analytic_regression_head, rasterize_features, reframe_box_channels,
    GtBox, CH_CONF, LOGIT_AMPLITUDE, NOISE_AMPLITUDE, SEMANTIC_CHANNELS,
};

/// Shared grid geometry of every agent's BEV feature map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Meters per cell.
    pub resolution: f64,
}

/// Object motion model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotionKind {
    Static,
    Linear { vx_mps: f64, vy_mps: f64 },
    Turning { speed_mps: f64, yaw_rate_rps: f64 },
}

impl MotionKind {
    pub fn is_static(&self) -> bool {
        matches!(self, MotionKind::Static)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct AgentTrack<T> {
    pub id: u16,
    pub kind: AgentKind,
    pub sensing_range_m: T,
    /// Declared link latency, shared as metadata.
    pub latency_ms: T,
    pub poses: Vec<Pose<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct ObjectTrack<T> {
    pub id: u32,
    pub motion: MotionKind,
    pub length_m: T,
    pub width_m: T,
    pub poses: Vec<Pose<T>>,
}

/// The synthetic world: every trajectory carries exactly `frames` poses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct Scenario<T> {
    pub version: u32,
    pub grid: GridSpec,
    pub frame_period_s: T,
    pub frames: u32,
    pub seed: u64,
    pub agents: Vec<AgentTrack<T>>,
    pub objects: Vec<ObjectTrack<T>>,
}

pub const SCENARIO_VERSION: u32 = 1;

impl<T: Real + Serialize + for<'de> Deserialize<'de>> Scenario<T> {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let s: Scenario<T> = serde_json::from_str(json)?;
        s.validate()?;
        Ok(s)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

impl<T: Real> Scenario<T> {
    pub fn validate(&self) -> Result<()> {
        if self.version != SCENARIO_VERSION {
            return Err(Error::config(format!(
                "scenario version {} (supported: {SCENARIO_VERSION})",
                self.version
            )));
        }
        if self.agents.is_empty() {
            return Err(Error::config("scenario needs at least one agent"));
        }
        if self.grid.channels < SEMANTIC_CHANNELS {
            return Err(Error::config(format!(
                "grid needs at least {SEMANTIC_CHANNELS} channels, got {}",
                self.grid.channels
            )));
        }
        for a in &self.agents {
            if a.poses.len() != self.frames as usize {
                return Err(Error::config(format!(
                    "agent {} has {} poses for {} frames",
                    a.id,
                    a.poses.len(),
                    self.frames
                )));
            }
        }
        for o in &self.objects {
            if o.poses.len() != self.frames as usize {
                return Err(Error::config(format!(
                    "object {} has {} poses for {} frames",
                    o.id,
                    o.poses.len(),
                    self.frames
                )));
            }
            if o.motion.is_static() {
                let first = &o.poses[0];
                if o.poses.iter().any(|p| {
                    p.x != first.x || p.y != first.y || p.yaw != first.yaw
                }) {
                    return Err(Error::config(format!(
                        "static object {} moves between frames",
                        o.id
                    )));
                }
            }
        }
        Ok(())
    }

    /// The ego agent: first in the list.
    pub fn ego(&self) -> &AgentTrack<T> {
        &self.agents[0]
    }

    /// Fraction of object-covered cells that belong to moving objects
    /// (a rough scenario statistic used when building presets).
    pub fn dynamic_area_fraction(&self) -> f64 {
        let mut stat = 0.0;
        let mut dynam = 0.0;
        for o in &self.objects {
            let area = (o.length_m * o.width_m).as_f64();
            if o.motion.is_static() {
                stat += area;
            } else {
                dynam += area;
            }
        }
        if stat + dynam == 0.0 {
            0.0
        } else {
            dynam / (stat + dynam)
        }
    }
}

/// Scenario-generation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenConfig {
    pub grid: GridSpec,
    pub frames: u32,
    pub frame_period_s: f64,
    pub num_agents: usize,
    pub static_objects: usize,
    pub dynamic_objects: usize,
    pub sensing_range_m: f64,
    /// Objects are placed (and must remain) within this radius of the origin.
    pub world_radius_m: f64,
}

impl GenConfig {
    /// Sparse preset: a handful of objects.
    pub fn sparse() -> Self {
        GenConfig {
            grid: GridSpec { height: 48, width: 48, channels: 16, resolution: 0.5 },
            frames: 10,
            frame_period_s: 0.1,
            num_agents: 2,
            static_objects: 2,
            dynamic_objects: 1,
            sensing_range_m: 14.0,
            world_radius_m: 9.0,
        }
    }

    /// Dense preset: at least twenty objects.
    pub fn dense() -> Self {
        GenConfig {
            grid: GridSpec { height: 80, width: 80, channels: 16, resolution: 0.5 },
            frames: 10,
            frame_period_s: 0.1,
            num_agents: 3,
            static_objects: 15,
            dynamic_objects: 5,
            sensing_range_m: 24.0,
            world_radius_m: 17.0,
        }
    }

    /// Mixed preset: about one fifth of the covered area is dynamic.
    pub fn mixed() -> Self {
        GenConfig {
            grid: GridSpec { height: 64, width: 64, channels: 16, resolution: 0.5 },
            frames: 12,
            frame_period_s: 0.1,
            num_agents: 3,
            static_objects: 8,
            dynamic_objects: 2,
            sensing_range_m: 20.0,
            world_radius_m: 13.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_agents == 0 {
            return Err(Error::Generation("need at least one agent".into()));
        }
        if self.frames == 0 {
            return Err(Error::Generation("need at least one frame".into()));
        }
        if self.sensing_range_m <= 0.0 || self.world_radius_m <= 0.0 {
            return Err(Error::Generation("ranges must be positive".into()));
        }
        let half_span =
            0.5 * self.grid.resolution * (self.grid.height.min(self.grid.width) as f64);
        if self.world_radius_m > half_span {
            return Err(Error::Generation(format!(
                "world radius {} exceeds the grid half-span {half_span}",
                self.world_radius_m
            )));
        }
        Ok(())
    }
}

/// Deterministic seeded placement of agents and objects. Reproducible
/// bit-for-bit from (config, seed).
pub fn generate_scenario<T: Real>(config: &GenConfig, seed: u64) -> Result<Scenario<T>> {
    config.validate()?;
    let mut rng = stream(seed, Domain::Generate, 0, 0);
    let frames = config.frames as usize;
    let dt = config.frame_period_s;

    let mut agents = Vec::with_capacity(config.num_agents);
    for i in 0..config.num_agents {
        // ego at the origin, collaborators on a ring around it
        let (x, y, yaw) = if i == 0 {
            (0.0, 0.0, 0.0)
        } else {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let radius = rng.random_range(0.35..0.65) * config.world_radius_m;
            (radius * angle.cos(), radius * angle.sin(), rng.random_range(-1.0..1.0))
        };
        let poses = (0..frames)
            .map(|f| Pose::planar(T::c(x), T::c(y), T::c(yaw), f as u32))
            .collect();
        agents.push(AgentTrack {
            id: i as u16,
            kind: if i % 2 == 0 { AgentKind::Vehicle } else { AgentKind::Infrastructure },
            sensing_range_m: T::c(config.sensing_range_m),
            latency_ms: T::zero(),
            poses,
        });
    }

    // Objects never intersect: any two car-sized rectangles are disjoint
    // when their centers stay this far apart, checked at every frame.
    const MIN_SEPARATION_M: f64 = 5.1;

    let total = config.static_objects + config.dynamic_objects;
    let mut objects = Vec::with_capacity(total);
    let mut tracks_xy: Vec<Vec<(f64, f64)>> = Vec::with_capacity(total);
    for i in 0..total {
        // dynamic objects first so their whole corridor reserves space
        let is_dynamic = i < config.dynamic_objects;
        let length = rng.random_range(3.6..4.6);
        let width = rng.random_range(1.6..2.0);
        let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);

        let mut placed = None;
        'attempts: for _ in 0..400 {
            let x0 = rng.random_range(-config.world_radius_m..config.world_radius_m);
            let y0 = rng.random_range(-config.world_radius_m..config.world_radius_m);
            let motion = if is_dynamic {
                let speed = rng.random_range(1.5..3.0);
                let heading = rng.random_range(0.0..std::f64::consts::TAU);
                MotionKind::Linear { vx_mps: speed * heading.cos(), vy_mps: speed * heading.sin() }
            } else {
                MotionKind::Static
            };
            let mut xy = Vec::with_capacity(frames);
            for f in 0..frames {
                let t = f as f64 * dt;
                let p = match motion {
                    MotionKind::Static => (x0, y0),
                    MotionKind::Linear { vx_mps, vy_mps } => (x0 + vx_mps * t, y0 + vy_mps * t),
                    MotionKind::Turning { speed_mps, yaw_rate_rps } => {
                        let th = yaw + yaw_rate_rps * t;
                        (x0 + speed_mps * t * th.cos(), y0 + speed_mps * t * th.sin())
                    }
                };
                if p.0.hypot(p.1) > config.world_radius_m {
                    continue 'attempts;
                }
                for other in &tracks_xy {
                    let (ox, oy) = other[f];
                    if (p.0 - ox).hypot(p.1 - oy) < MIN_SEPARATION_M {
                        continue 'attempts;
                    }
                }
                xy.push(p);
            }
            placed = Some((xy, motion));
            break;
        }
        let Some((xy, motion)) = placed else {
            return Err(Error::Generation(format!(
                "could not place object {i} inside radius {} with {MIN_SEPARATION_M} m separation",
                config.world_radius_m
            )));
        };
        tracks_xy.push(xy.clone());

        let poses = (0..frames)
            .map(|f| {
                let (x, y) = xy[f];
                let th = match motion {
                    MotionKind::Turning { yaw_rate_rps, .. } => yaw + yaw_rate_rps * f as f64 * dt,
                    _ => yaw,
                };
                Pose::planar(T::c(x), T::c(y), T::c(th), f as u32)
            })
            .collect();
        objects.push(ObjectTrack {
            id: i as u32,
            motion,
            length_m: T::c(length),
            width_m: T::c(width),
            poses,
        });
    }

    let scenario = Scenario {
        version: SCENARIO_VERSION,
        grid: config.grid,
        frame_period_s: T::c(dt),
        frames: config.frames,
        seed,
        agents,
        objects,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Hand-built collaboration-critical scenario: objects sit outside the
/// ego's sensing range but inside a helper's, so single-agent perception
/// must miss them while any working fusion path detects them. One of the
/// helper-only objects moves, which is what gives transmission latency and
/// token loss something to degrade.
pub fn occlusion_scenario<T: Real>(frames: u32) -> Scenario<T> {
    let grid = GridSpec { height: 48, width: 48, channels: 16, resolution: 0.5 };
    let mk_agent = |id: u16, x: f64, y: f64, range: f64| AgentTrack {
        id,
        kind: if id == 0 { AgentKind::Vehicle } else { AgentKind::Infrastructure },
        sensing_range_m: T::c(range),
        latency_ms: T::zero(),
        poses: (0..frames)
            .map(|f| Pose::planar(T::c(x), T::c(y), T::zero(), f))
            .collect(),
    };
    let mk_static = |id: u32, x: f64, y: f64, yaw: f64, l: f64, w: f64| ObjectTrack {
        id,
        motion: MotionKind::Static,
        length_m: T::c(l),
        width_m: T::c(w),
        poses: (0..frames)
            .map(|f| Pose::planar(T::c(x), T::c(y), T::c(yaw), f))
            .collect(),
    };
    let moving = ObjectTrack {
        id: 2,
        motion: MotionKind::Linear { vx_mps: 2.5, vy_mps: 0.0 },
        length_m: T::c(4.2),
        width_m: T::c(1.8),
        poses: (0..frames)
            .map(|f| Pose::planar(T::c(8.5 + 2.5 * 0.1 * f as f64), T::c(3.2), T::zero(), f))
            .collect(),
    };
    Scenario {
        version: SCENARIO_VERSION,
        grid,
        frame_period_s: T::c(0.1),
        frames,
        seed: 7,
        agents: vec![mk_agent(0, 0.0, 0.0, 8.0), mk_agent(1, 9.0, 0.0, 8.0)],
        objects: vec![
            // hidden from the ego (11 m away, range 8) but 2 m from the helper
            mk_static(0, 11.0, 0.0, 0.3, 4.2, 1.8),
            // visible to the ego so single-agent detection has work to do
            mk_static(1, 3.0, 2.5, -0.6, 4.0, 1.8),
            // helper-only and moving: latency shows up as a stale box
            moving,
        ],
    }
}

/// Robustness fault-injection parameters. All zero means a clean run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec<T> {
    /// Std of the Gaussian added to the transmitted pose's x, y, z (meters).
    pub pos_std_m: T,
    /// Std of the Gaussian added to roll, yaw, pitch (radians).
    pub rot_std_rad: T,
    /// Injected transmission latency in milliseconds.
    pub latency_ms: u32,
    /// Probability that each transmitted token entry is lost.
    pub token_drop_prob: T,
    pub seed: u64,
}

impl<T: Real> Default for NoiseSpec<T> {
    fn default() -> Self {
        NoiseSpec {
            pos_std_m: T::zero(),
            rot_std_rad: T::zero(),
            latency_ms: 0,
            token_drop_prob: T::zero(),
            seed: 0,
        }
    }
}

impl<T: Real> NoiseSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if self.pos_std_m < T::zero() || self.rot_std_rad < T::zero() {
            return Err(Error::config("noise stds must be >= 0"));
        }
        if self.token_drop_prob < T::zero() || self.token_drop_prob > T::one() {
            return Err(Error::config("drop probability must be in [0, 1]"));
        }
        Ok(())
    }

    pub fn is_clean(&self) -> bool {
        self.pos_std_m == T::zero()
            && self.rot_std_rad == T::zero()
            && self.latency_ms == 0
            && self.token_drop_prob == T::zero()
    }
}

/// Independent RNG-stream domains, so parallel order never changes results.
#[derive(Debug, Clone, Copy)]
pub enum Domain {
    Generate,
    Raster,
    PoseNoise,
    TokenDrop,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Seeded stream keyed by (seed, domain, agent, frame).
pub fn stream(seed: u64, domain: Domain, agent: u64, frame: u64) -> ChaCha8Rng {
    let d = match domain {
        Domain::Generate => 1u64,
        Domain::Raster => 2,
        Domain::PoseNoise => 3,
        Domain::TokenDrop => 4,
    };
    let mixed = splitmix64(seed ^ splitmix64(d ^ splitmix64(agent ^ splitmix64(frame))));
    ChaCha8Rng::seed_from_u64(mixed)
}

/// Add zero-mean Gaussian noise to a pose: `pos_std_m` on (x, y, z),
/// `rot_std_rad` on (roll, yaw, pitch), angles re-normalized. Zero stds
/// return the pose bit-identically. This is applied to the pose attached to
/// transmitted messages, never to the world's true geometry.
pub fn inject_pose_noise<T: Real>(
    pose: &Pose<T>,
    spec: &NoiseSpec<T>,
    rng: &mut ChaCha8Rng,
) -> Pose<T> {
    let mut out = *pose;
    if spec.pos_std_m > T::zero() {
        let n = Normal::new(0.0, spec.pos_std_m.as_f64()).expect("valid std");
        out.x += T::c(n.sample(rng));
        out.y += T::c(n.sample(rng));
        out.z += T::c(n.sample(rng));
    }
    if spec.rot_std_rad > T::zero() {
        let n = Normal::new(0.0, spec.rot_std_rad.as_f64()).expect("valid std");
        out.roll = normalize_angle(out.roll + T::c(n.sample(rng)));
        out.yaw = normalize_angle(out.yaw + T::c(n.sample(rng)));
        out.pitch = normalize_angle(out.pitch + T::c(n.sample(rng)));
    }
    out
}

/// Frame whose transmission the ego consumes under a fixed latency:
/// `max(0, frame - round(latency / period))`.
pub fn stale_frame<T: Real>(frame: u32, latency_ms: u32, frame_period_s: T) -> u32 {
    if latency_ms == 0 {
        return frame;
    }
    let period_ms = frame_period_s.as_f64() * 1000.0;
    let shift = (latency_ms as f64 / period_ms).round() as u32;
    frame.saturating_sub(shift)
}

/// Drop each token entry independently with the given probability; the
/// header stays intact.
pub fn drop_tokens<T: Real>(
    tokens: &SparseTokenSet,
    prob: T,
    rng: &mut ChaCha8Rng,
) -> SparseTokenSet {
    if prob <= T::zero() {
        return tokens.clone();
    }
    let p = prob.as_f64();
    let mut out = tokens.clone();
    out.entries.retain(|_| rng.random::<f64>() >= p);
    out
}
