//! Seeded synthetic traffic: mixed classes on an unmarked road along +x,
//! car-following with class-specific dynamics, scripted braking and cut-in
//! events, and lateral avoidance of slow or intruding agents ahead.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use traphic_tensor::rng::{seeded, split_seed, Prng};

use crate::ingest::{class_dims, write_traf_csv, AgentClass, AgentTrack, TrackPoint};
use crate::{Error, Result};

/// Minimum center distance in the published (noisy) tracks.
pub const MIN_SEPARATION: f64 = 0.3;
/// Simulation sub-steps per output frame.
const SUBSTEPS: usize = 4;
/// Standard-bumper gap the car-following law keeps at standstill (m).
const JAM_GAP: f64 = 1.0;
/// Desired time headway (s).
const HEADWAY: f64 = 1.0;
/// Comfortable deceleration (m/s²).
const COMFORT_DECEL: f64 = 2.5;
const MAX_DECEL: f64 = 8.0;
/// Extra lateral clearance (m) used for lane-overlap tests.
const LATERAL_MARGIN: f64 = 0.3;
/// Longest bumper gap (m) at which a spawn counts as being followed.
const FOLLOW_REACH: f64 = 40.0;
/// Agent ids of consecutive scenes are offset by this much.
pub const SCENE_ID_STRIDE: i64 = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub agents: usize,
    /// Class proportions; must sum to 1.
    pub class_mix: Vec<(AgentClass, f64)>,
    /// Road (length, width) in meters.
    pub extent: (f64, f64),
    pub frame_rate: f64,
    /// Seconds per scene.
    pub duration: f64,
    pub scenes: usize,
    /// Blank frames between consecutive scenes on the shared clock.
    pub scene_gap_frames: u64,
    pub cut_in_prob: f64,
    pub braking_prob: f64,
    /// Position noise standard deviation (m), truncated at 3σ.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            agents: 20,
            class_mix: vec![
                (AgentClass::Car, 0.30),
                (AgentClass::Motorcycle, 0.10),
                (AgentClass::Scooter, 0.05),
                (AgentClass::Rickshaw, 0.10),
                (AgentClass::Bus, 0.05),
                (AgentClass::Truck, 0.05),
                (AgentClass::Pedestrian, 0.25),
                (AgentClass::Bicycle, 0.10),
            ],
            extent: (100.0, 10.5),
            frame_rate: 10.0,
            duration: 20.0,
            scenes: 1,
            scene_gap_frames: 100,
            cut_in_prob: 0.2,
            braking_prob: 0.2,
            noise: 0.02,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.agents == 0 || self.scenes == 0 {
            return Err(Error::Config(
                "synthetic scenes need at least one agent".into(),
            ));
        }
        let total: f64 = self.class_mix.iter().map(|c| c.1).sum();
        if self.class_mix.iter().any(|c| c.1.is_nan() || c.1 < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "class proportions must sum to 1, got {total}"
            )));
        }
        for (name, p) in [("cut-in", self.cut_in_prob), ("braking", self.braking_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!(
                    "{name} probability {p} outside [0, 1]"
                )));
            }
        }
        if !(self.frame_rate > 0.0 && self.duration > 0.0 && self.noise >= 0.0) {
            return Err(Error::Config(
                "frame rate and duration must be positive, noise non-negative".into(),
            ));
        }
        if !(self.extent.0 > 0.0 && self.extent.1 > 1.0) {
            return Err(Error::Config(format!(
                "road extent {:?} too small",
                self.extent
            )));
        }
        Ok(())
    }

    pub fn frames_per_scene(&self) -> u64 {
        (self.duration * self.frame_rate).round() as u64
    }
}

/// Absolute speed cap per class (m/s).
pub fn speed_cap(class: AgentClass) -> f64 {
    match class {
        AgentClass::Pedestrian => 2.0,
        AgentClass::Bicycle | AgentClass::Other => 6.0,
        _ => 15.0,
    }
}

/// Range the desired cruising speed is drawn from.
fn cruise_range(class: AgentClass) -> (f64, f64) {
    match class {
        AgentClass::Pedestrian => (1.0, 1.8),
        AgentClass::Bicycle => (3.5, 5.5),
        AgentClass::Other => (2.0, 5.0),
        AgentClass::Rickshaw => (6.0, 9.0),
        AgentClass::Bus | AgentClass::Truck => (7.0, 11.0),
        _ => (8.0, 13.0),
    }
}

fn max_accel(class: AgentClass) -> f64 {
    match class {
        AgentClass::Pedestrian | AgentClass::Other => 1.0,
        AgentClass::Bicycle | AgentClass::Bus | AgentClass::Truck => 1.0,
        AgentClass::Rickshaw => 1.5,
        AgentClass::Car | AgentClass::Scooter => 2.0,
        AgentClass::Motorcycle => 2.5,
    }
}

fn lateral_cap(class: AgentClass) -> f64 {
    match class {
        AgentClass::Pedestrian => 0.8,
        AgentClass::Bus | AgentClass::Truck => 1.0,
        _ => 1.5,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spawn {
    pub class: AgentClass,
    pub pos: [f64; 2],
    pub speed: f64,
    pub desired_speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Event {
    /// From `time`, the agent's desired speed drops to `factor` of its cruise
    /// speed for `duration` seconds; it decelerates hard to get there.
    Brake {
        agent: usize,
        time: f64,
        factor: f64,
        duration: f64,
    },
    /// From `time`, the agent steers to lateral position `target_y`.
    CutIn {
        agent: usize,
        time: f64,
        target_y: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Scenario {
    pub spawns: Vec<Spawn>,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone)]
struct Agent {
    class: AgentClass,
    dims: (f64, f64),
    x: f64,
    y: f64,
    v: f64,
    vy: f64,
    cruise: f64,
    target_y: f64,
    brake_until: f64,
    brake_factor: f64,
}

fn overlaps_laterally(a: &Agent, b: &Agent) -> bool {
    (a.y - b.y).abs() < 0.5 * (a.dims.1 + b.dims.1) + LATERAL_MARGIN
}

/// Nearest agent ahead in the same lateral band: `(index, bumper gap)`.
fn leader(agents: &[Agent], i: usize) -> Option<(usize, f64)> {
    let me = &agents[i];
    agents
        .iter()
        .enumerate()
        .filter(|(j, o)| *j != i && o.x > me.x && overlaps_laterally(me, o))
        .map(|(j, o)| (j, o.x - me.x - 0.5 * (me.dims.0 + o.dims.0)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
}

/// Is the lateral corridor at `y` free of agents near `me` longitudinally?
fn lane_clear(agents: &[Agent], i: usize, y: f64) -> bool {
    let me = &agents[i];
    agents.iter().enumerate().all(|(j, o)| {
        j == i
            || (o.y - y).abs() >= 0.5 * (me.dims.1 + o.dims.1) + LATERAL_MARGIN
            || (o.x - me.x).abs() >= 0.5 * (me.dims.0 + o.dims.0) + JAM_GAP
    })
}

/// Free-road acceleration towards `desired`, overridden by a braking term
/// only once the dynamic safe gap exceeds the actual gap. Agents at their
/// desired speed behind equal-or-faster leaders therefore cruise exactly.
fn follow_accel(me: &Agent, desired: f64, lead: Option<(f64, f64)>) -> f64 {
    let a = max_accel(me.class);
    // scripted slow-downs are comfortable, not emergency stops
    let mut acc = if desired > 0.0 {
        (a * (1.0 - (me.v / desired).powi(4))).max(-COMFORT_DECEL)
    } else {
        -COMFORT_DECEL
    };
    if let Some((gap, lead_v)) = lead {
        let s_star =
            JAM_GAP + me.v * HEADWAY + me.v * (me.v - lead_v) / (2.0 * (a * COMFORT_DECEL).sqrt());
        let s = gap.max(0.1);
        if s_star > s {
            acc = acc.min(a * (1.0 - (s_star / s).powi(2)));
        }
    }
    acc.max(-MAX_DECEL)
}

/// Runs one scripted scene; tracks are noise-free.
pub fn simulate_clean(cfg: &SynthConfig, scenario: &Scenario) -> Vec<Vec<[f64; 2]>> {
    let width = cfg.extent.1;
    let mut agents: Vec<Agent> = scenario
        .spawns
        .iter()
        .map(|s| Agent {
            class: s.class,
            dims: class_dims(s.class),
            x: s.pos[0],
            y: s.pos[1],
            v: s.speed.min(speed_cap(s.class)),
            vy: 0.0,
            cruise: s.desired_speed.min(speed_cap(s.class)),
            target_y: s.pos[1],
            brake_until: f64::NEG_INFINITY,
            brake_factor: 1.0,
        })
        .collect();
    let frames = cfg.frames_per_scene();
    let dt = 1.0 / (cfg.frame_rate * SUBSTEPS as f64);
    let mut out: Vec<Vec<[f64; 2]>> = agents.iter().map(|a| vec![[a.x, a.y]]).collect();
    let mut events = scenario.events.clone();
    events.sort_by(|a, b| event_time(a).total_cmp(&event_time(b)));
    let mut next_event = 0;

    for frame in 1..=frames {
        for sub in 0..SUBSTEPS {
            let t = ((frame - 1) as f64 + sub as f64 / SUBSTEPS as f64) / cfg.frame_rate;
            while next_event < events.len() && event_time(&events[next_event]) <= t {
                match events[next_event] {
                    Event::Brake {
                        agent,
                        factor,
                        duration,
                        time,
                    } => {
                        if let Some(a) = agents.get_mut(agent) {
                            a.brake_until = time + duration;
                            a.brake_factor = factor;
                        }
                    }
                    Event::CutIn {
                        agent, target_y, ..
                    } => {
                        if let Some(a) = agents.get_mut(agent) {
                            a.target_y = target_y.clamp(0.5 * a.dims.1, width - 0.5 * a.dims.1);
                        }
                    }
                }
                next_event += 1;
            }
            step(&mut agents, t, dt, width);
        }
        for (a, track) in agents.iter().zip(out.iter_mut()) {
            track.push([a.x, a.y]);
        }
    }
    out
}

fn event_time(e: &Event) -> f64 {
    match e {
        Event::Brake { time, .. } | Event::CutIn { time, .. } => *time,
    }
}

fn step(agents: &mut [Agent], t: f64, dt: f64, width: f64) {
    let n = agents.len();
    let mut accel = vec![0.0; n];
    let mut targets: Vec<f64> = agents.iter().map(|a| a.target_y).collect();
    for i in 0..n {
        let me = &agents[i];
        let desired = if t < me.brake_until {
            me.cruise * me.brake_factor
        } else {
            me.cruise
        };
        let lead = leader(agents, i);
        accel[i] = follow_accel(me, desired, lead.map(|(j, gap)| (gap, agents[j].v)));

        // Steer around a blocking agent ahead when it is markedly slower or
        // drifting into our band, provided the side corridor is free.
        if let Some((j, gap)) = lead {
            let o = &agents[j];
            let closing = me.v - o.v;
            let intruding = o.vy != 0.0 && (o.y - me.y) * o.vy < 0.0;
            let reach = (2.0 * me.v).max(4.0);
            if gap < reach && (closing > 0.5 || intruding) && (me.target_y - me.y).abs() < 0.05 {
                let shift = 0.5 * (me.dims.1 + o.dims.1) + 2.0 * LATERAL_MARGIN;
                let first = if me.y >= o.y { 1.0 } else { -1.0 };
                for side in [first, -first] {
                    let y = o.y + side * shift;
                    let lo = 0.5 * me.dims.1;
                    if y >= lo && y <= width - lo && lane_clear(agents, i, y) {
                        targets[i] = y;
                        break;
                    }
                }
            }
        }
    }
    for (i, a) in agents.iter_mut().enumerate() {
        a.target_y = targets[i];
        let lat = lateral_cap(a.class);
        let err = a.target_y - a.y;
        a.vy = if err.abs() < 1e-3 {
            0.0
        } else {
            (1.5 * err).clamp(-lat, lat)
        };
        let cap = speed_cap(a.class);
        let vx_cap = (cap * cap - a.vy * a.vy).max(0.0).sqrt();
        let v_new = (a.v + accel[i] * dt).clamp(0.0, vx_cap);
        a.x += 0.5 * (a.v + v_new) * dt;
        a.v = v_new;
        a.y += a.vy * dt;
        if err.abs() < 1e-3 {
            a.y = a.target_y;
        }
    }
}

/// Draws a scene's spawns and events.
pub fn random_scenario(cfg: &SynthConfig, rng: &mut Prng) -> Scenario {
    let (length, width) = cfg.extent;
    let mut spawns: Vec<Spawn> = Vec::with_capacity(cfg.agents);
    let mut attempts = 0;
    while spawns.len() < cfg.agents && attempts < 10_000 {
        attempts += 1;
        let class = pick_class(&cfg.class_mix, rng);
        let (l, w) = class_dims(class);
        let pos = [
            rng.random_range(0.0..length),
            rng.random_range(0.5 * w..width - 0.5 * w),
        ];
        let clash = spawns.iter().any(|s| {
            let (ol, ow) = class_dims(s.class);
            (s.pos[0] - pos[0]).abs() < 0.5 * (l + ol) + JAM_GAP + 4.0
                && (s.pos[1] - pos[1]).abs() < 0.5 * (w + ow) + LATERAL_MARGIN
        });
        if clash {
            continue;
        }
        // Within a shared lateral band the rear agent may not be faster than
        // the one ahead (initial gap at least the headway gap), so nobody
        // interacts unless an event makes them.
        let (mut lo, mut hi) = cruise_range(class);
        let mut ok = true;
        for s in &spawns {
            let (ol, ow) = class_dims(s.class);
            if (s.pos[1] - pos[1]).abs() >= 0.5 * (w + ow) + LATERAL_MARGIN {
                continue;
            }
            let gap = (s.pos[0] - pos[0]).abs() - 0.5 * (l + ol);
            if s.pos[0] > pos[0] {
                hi = hi.min(s.desired_speed);
                ok &= gap >= JAM_GAP + hi * HEADWAY;
            } else {
                lo = lo.max(s.desired_speed);
                ok &= gap >= JAM_GAP + s.desired_speed * HEADWAY;
            }
        }
        if !ok || lo >= hi {
            continue;
        }
        let desired = rng.random_range(lo..hi);
        spawns.push(Spawn {
            class,
            pos,
            speed: desired,
            desired_speed: desired,
        });
    }

    let mut events = Vec::new();
    for i in 0..spawns.len() {
        // only agents with someone behind them in their band brake, so every
        // slow-down propagates to a follower
        let me = spawns[i];
        let followed = spawns.iter().enumerate().any(|(j, s)| {
            let (l, w) = class_dims(me.class);
            let (ol, ow) = class_dims(s.class);
            j != i
                && s.pos[0] < me.pos[0]
                && me.pos[0] - s.pos[0] - 0.5 * (l + ol) < FOLLOW_REACH
                && (s.pos[1] - me.pos[1]).abs() < 0.5 * (w + ow) + LATERAL_MARGIN
        });
        if rng.random_bool(cfg.braking_prob) && followed {
            events.push(Event::Brake {
                agent: i,
                time: rng.random_range(0.15..0.85) * cfg.duration,
                factor: rng.random_range(0.4..0.7),
                duration: rng.random_range(2.0..4.0),
            });
        }
        if rng.random_bool(cfg.cut_in_prob) {
            // move into the band of the nearest agent behind within reach
            let victim = spawns
                .iter()
                .enumerate()
                .filter(|(j, s)| {
                    *j != i
                        && s.pos[0] < me.pos[0]
                        && me.pos[0] - s.pos[0] < 30.0
                        && (s.pos[1] - me.pos[1]).abs() > 1.5
                })
                .min_by(|a, b| (me.pos[0] - a.1.pos[0]).total_cmp(&(me.pos[0] - b.1.pos[0])));
            let target_y = match victim {
                Some((_, s)) => s.pos[1],
                None => rng.random_range(1.0..width - 1.0),
            };
            events.push(Event::CutIn {
                agent: i,
                time: rng.random_range(0.15..0.85) * cfg.duration,
                target_y,
            });
        }
    }
    Scenario { spawns, events }
}

fn pick_class(mix: &[(AgentClass, f64)], rng: &mut Prng) -> AgentClass {
    let r: f64 = rng.random();
    let mut acc = 0.0;
    for (c, p) in mix {
        acc += p;
        if r < acc {
            return *c;
        }
    }
    mix.last().map_or(AgentClass::Car, |c| c.0)
}

fn truncated_normal(rng: &mut Prng) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 3.0 {
            return z;
        }
    }
}

/// Simulates one scene and publishes it: agents whose clean trajectory ever
/// comes within `0.3 m + 6σ` of another are removed, then truncated noise is
/// added. `first_frame` places the scene on the shared clock.
pub fn simulate(
    cfg: &SynthConfig,
    scenario: &Scenario,
    first_frame: u64,
    first_id: i64,
    rng: &mut Prng,
) -> Vec<AgentTrack> {
    let clean = simulate_clean(cfg, scenario);
    let keep = separated(&clean, MIN_SEPARATION + 6.0 * cfg.noise);
    let mut tracks = Vec::new();
    for (i, traj) in clean.iter().enumerate() {
        if !keep[i] {
            log::debug!("dropping synthetic agent {i}: separation violated");
            continue;
        }
        let samples = traj
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let mut pos = *p;
                if cfg.noise > 0.0 {
                    pos[0] += cfg.noise * truncated_normal(rng);
                    pos[1] += cfg.noise * truncated_normal(rng);
                }
                TrackPoint {
                    t: (first_frame + k as u64) as f64 / cfg.frame_rate,
                    pos,
                }
            })
            .collect();
        tracks.push(AgentTrack::new(
            first_id + i as i64,
            scenario.spawns[i].class,
            samples,
        ));
    }
    tracks
}

/// Greedy filter: walks agents in index order and keeps each one that stays
/// at least `min_dist` away from every agent kept so far.
fn separated(trajs: &[Vec<[f64; 2]>], min_dist: f64) -> Vec<bool> {
    let mut keep = vec![false; trajs.len()];
    for i in 0..trajs.len() {
        keep[i] = (0..i).filter(|&j| keep[j]).all(|j| {
            trajs[i]
                .iter()
                .zip(&trajs[j])
                .all(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1]) >= min_dist)
        });
    }
    keep
}

/// All scenes, each from its own split seed, laid out one after another on
/// the shared frame clock.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<AgentTrack>> {
    cfg.validate()?;
    let per_scene = cfg.frames_per_scene() + 1 + cfg.scene_gap_frames;
    let mut out = Vec::new();
    for scene in 0..cfg.scenes {
        let mut rng = seeded(split_seed(cfg.seed, scene as u64));
        let scenario = random_scenario(cfg, &mut rng);
        out.extend(simulate(
            cfg,
            &scenario,
            scene as u64 * per_scene,
            scene as i64 * SCENE_ID_STRIDE,
            &mut rng,
        ));
    }
    Ok(out)
}

pub fn write_dataset<W: Write>(writer: W, tracks: &[AgentTrack], frame_rate: f64) -> Result<()> {
    write_traf_csv(writer, tracks, frame_rate)
}
