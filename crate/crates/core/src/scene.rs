//! Ego-centric spatial analysis of one window: heading, elliptical
//! neighborhood, frontal horizon, local concentration and per-agent state.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::ingest::{AgentClass, SceneWindow};
use crate::{Error, Result};

/// Displacement below this norm (m) is treated as no motion.
const MIN_DISPLACEMENT: f64 = 0.05;
/// Frames used for the short-range heading estimate.
const HEADING_SPAN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialConfig {
    /// Neighborhood semi-axis along the heading (m).
    pub neighbor_a: f64,
    /// Neighborhood semi-axis across the heading (m).
    pub neighbor_b: f64,
    pub horizon_a: f64,
    pub horizon_b: f64,
    pub k_nb: usize,
    pub k_hz: usize,
    /// Concentration cell edge (m), same along both axes.
    pub cell: f64,
}

impl Default for SpatialConfig {
    fn default() -> Self {
        Self {
            neighbor_a: 2.0,
            neighbor_b: 2.0,
            horizon_a: 2.0,
            horizon_b: 1.5,
            k_nb: 8,
            k_hz: 4,
            cell: 2.0,
        }
    }
}

impl SpatialConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.neighbor_a,
            self.neighbor_b,
            self.horizon_a,
            self.horizon_b,
            self.cell,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(format!(
                "spatial extents must be positive: {self:?}"
            )));
        }
        if self.k_nb == 0 || self.k_hz == 0 {
            return Err(Error::Config(
                "neighbor/horizon capacities must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    Full,
    PositionOnly,
}

impl FeatureMode {
    /// Values per history frame.
    pub fn frame_width(self) -> usize {
        match self {
            FeatureMode::Full => 7 + AgentClass::ALL.len(),
            FeatureMode::PositionOnly => 4,
        }
    }
}

/// Unit heading from a position history (oldest first).
pub fn heading(history: &[[f64; 2]]) -> [f64; 2] {
    let n = history.len();
    if n >= 2 {
        let recent = &history[n.saturating_sub(HEADING_SPAN)..];
        for (a, b) in [
            (recent[0], recent[recent.len() - 1]),
            (history[0], history[n - 1]),
        ] {
            let d = [b[0] - a[0], b[1] - a[1]];
            let norm = d[0].hypot(d[1]);
            if norm >= MIN_DISPLACEMENT {
                return [d[0] / norm, d[1] / norm];
            }
        }
    }
    [0.0, 1.0]
}

/// Maps world coordinates into the frame where `origin` is zero and
/// `heading` points along +y. Returns `(lateral, along)`.
pub fn to_ego_frame(p: [f64; 2], origin: [f64; 2], heading: [f64; 2]) -> [f64; 2] {
    let r = [p[0] - origin[0], p[1] - origin[1]];
    [
        r[0] * heading[1] - r[1] * heading[0],
        r[0] * heading[0] + r[1] * heading[1],
    ]
}

/// Inverse of [`to_ego_frame`].
pub fn from_ego_frame(q: [f64; 2], origin: [f64; 2], heading: [f64; 2]) -> [f64; 2] {
    [
        origin[0] + q[0] * heading[1] + q[1] * heading[0],
        origin[1] - q[0] * heading[0] + q[1] * heading[1],
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Member {
    /// Index into the agent list the query ran over.
    pub index: usize,
    pub agent_id: i64,
    /// Ego-frame `(lateral, along)` offset at the reference frame.
    pub local: [f64; 2],
    pub distance: f64,
}

impl Member {
    /// Offset along the heading.
    pub fn u(&self) -> f64 {
        self.local[1]
    }

    /// Lateral offset.
    pub fn v(&self) -> f64 {
        self.local[0]
    }
}

/// One agent at the reference frame, as seen by the region queries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub agent_id: i64,
    pub pos: [f64; 2],
}

fn inside_ellipse(local: [f64; 2], a: f64, b: f64) -> bool {
    let (u, v) = (local[1] / a, local[0] / b);
    u * u + v * v <= 1.0
}

fn member(ego: &Point, heading: [f64; 2], index: usize, p: &Point) -> Member {
    let rel = [p.pos[0] - ego.pos[0], p.pos[1] - ego.pos[1]];
    Member {
        index,
        agent_id: p.agent_id,
        local: to_ego_frame(p.pos, ego.pos, heading),
        distance: rel[0].hypot(rel[1]),
    }
}

fn rank(mut members: Vec<Member>, k: usize) -> Vec<Member> {
    members.sort_by(|x, y| {
        x.distance
            .total_cmp(&y.distance)
            .then(x.agent_id.cmp(&y.agent_id))
    });
    members.truncate(k);
    members
}

/// Uniform bucket grid over agent positions for radius-limited queries.
pub struct SpatialIndex {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl SpatialIndex {
    pub fn new(points: &[Point], cell: f64) -> Self {
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(Self::key(p.pos, cell)).or_default().push(i);
        }
        Self { cell, buckets }
    }

    fn key(p: [f64; 2], cell: f64) -> (i64, i64) {
        ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64)
    }

    /// Indices of every point within Euclidean `radius` of `center`, plus
    /// possibly a few beyond it; callers apply the exact test.
    pub fn candidates(&self, center: [f64; 2], radius: f64) -> Vec<usize> {
        // slack so boundary points survive rounding in the bucket keys
        let radius = radius * (1.0 + 1e-9) + 1e-9;
        let lo = Self::key([center[0] - radius, center[1] - radius], self.cell);
        let hi = Self::key([center[0] + radius, center[1] + radius], self.cell);
        let mut out = Vec::new();
        for i in lo.0..=hi.0 {
            for j in lo.1..=hi.1 {
                if let Some(b) = self.buckets.get(&(i, j)) {
                    out.extend_from_slice(b);
                }
            }
        }
        out
    }
}

/// Queries both regions around one ego.
pub struct RegionQuery<'a> {
    pub points: &'a [Point],
    pub index: &'a SpatialIndex,
    pub ego: usize,
    pub heading: [f64; 2],
}

impl RegionQuery<'_> {
    fn collect(&self, a: f64, b: f64, front_only: bool) -> Vec<Member> {
        let ego = &self.points[self.ego];
        self.index
            .candidates(ego.pos, a.max(b))
            .into_iter()
            .filter(|&i| i != self.ego)
            .map(|i| member(ego, self.heading, i, &self.points[i]))
            .filter(|m| inside_ellipse(m.local, a, b) && (!front_only || m.u() > 0.0))
            .collect()
    }

    pub fn neighborhood(&self, a: f64, b: f64, k: usize) -> Vec<Member> {
        rank(self.collect(a, b, false), k)
    }

    pub fn horizon(&self, a: f64, b: f64, k: usize) -> Vec<Member> {
        rank(self.collect(a, b, true), k)
    }
}

/// Nearest `k` agents inside the ellipse with semi-axes `a` (along heading)
/// and `b` (lateral), ties broken by ascending id.
pub fn neighborhood(
    points: &[Point],
    ego: usize,
    heading: [f64; 2],
    a: f64,
    b: f64,
    k: usize,
) -> Vec<Member> {
    let index = SpatialIndex::new(points, a.max(b));
    RegionQuery {
        points,
        index: &index,
        ego,
        heading,
    }
    .neighborhood(a, b, k)
}

/// As [`neighborhood`], restricted to agents strictly in front of the ego.
pub fn horizon(
    points: &[Point],
    ego: usize,
    heading: [f64; 2],
    a: f64,
    b: f64,
    k: usize,
) -> Vec<Member> {
    let index = SpatialIndex::new(points, a.max(b));
    RegionQuery {
        points,
        index: &index,
        ego,
        heading,
    }
    .horizon(a, b, k)
}

/// Agent counts on a grid of half-open `cell × cell` squares anchored at the
/// origin of whatever frame the positions are given in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationGrid {
    pub cell: f64,
    /// When set, only cells with `|i|, |j| <= half_extent` are tracked.
    pub half_extent: Option<i64>,
    pub counts: BTreeMap<(i64, i64), u32>,
}

impl ConcentrationGrid {
    pub fn new(cell: f64, half_extent: Option<i64>) -> Self {
        Self {
            cell,
            half_extent,
            counts: BTreeMap::new(),
        }
    }

    pub fn build(positions: &[[f64; 2]], cell: f64, half_extent: Option<i64>) -> Self {
        let mut g = Self::new(cell, half_extent);
        for p in positions {
            if let Some(key) = g.cell_of(*p) {
                *g.counts.entry(key).or_insert(0) += 1;
            }
        }
        g
    }

    /// Cell containing `p`, or `None` outside the tracked extent.
    pub fn cell_of(&self, p: [f64; 2]) -> Option<(i64, i64)> {
        let key = ((p[0] / self.cell).floor(), (p[1] / self.cell).floor());
        if !(key.0.is_finite() && key.1.is_finite()) {
            return None;
        }
        let key = (key.0 as i64, key.1 as i64);
        match self.half_extent {
            Some(e) if key.0.abs() > e || key.1.abs() > e => None,
            _ => Some(key),
        }
    }

    pub fn count_at(&self, p: [f64; 2]) -> u32 {
        self.cell_of(p)
            .and_then(|k| self.counts.get(&k).copied())
            .unwrap_or(0)
    }

    pub fn total(&self) -> u32 {
        self.counts.values().sum()
    }
}

/// Number of `positions` in the cell containing `query`.
pub fn concentration(positions: &[[f64; 2]], query: [f64; 2], cell: f64) -> u32 {
    ConcentrationGrid::build(positions, cell, None).count_at(query)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub agent_id: i64,
    pub agent_class: AgentClass,
    /// Ego-frame positions, oldest first.
    pub positions: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
    pub concentration: Vec<f64>,
    pub dims: (f64, f64),
}

impl AgentState {
    /// Row-major `h × width` feature matrix. Positions and velocities are
    /// divided by `scale`.
    pub fn features(&self, mode: FeatureMode, scale: f64) -> Vec<f64> {
        let h = self.positions.len();
        let mut out = Vec::with_capacity(h * mode.frame_width());
        for k in 0..h {
            let (p, v) = (self.positions[k], self.velocities[k]);
            out.extend_from_slice(&[p[0] / scale, p[1] / scale, v[0] / scale, v[1] / scale]);
            if mode == FeatureMode::Full {
                out.push(self.concentration[k]);
                out.push(self.dims.0);
                out.push(self.dims.1);
                let mut onehot = [0.0; 9];
                onehot[self.agent_class.index()] = 1.0;
                out.extend_from_slice(&onehot);
            }
        }
        out
    }
}

/// Everything the predictor needs about one (window, ego) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpace {
    pub reference_frame: i64,
    pub dt: f64,
    pub ego_id: i64,
    /// Index of the ego in `agents`.
    pub ego: usize,
    /// World-frame origin and heading of the ego frame.
    pub origin: [f64; 2],
    pub heading: [f64; 2],
    pub agents: Vec<AgentState>,
    pub neighbors: Vec<Member>,
    pub horizon: Vec<Member>,
    /// Ego-frame ground-truth future.
    pub future: Vec<[f64; 2]>,
}

impl StateSpace {
    pub fn ego_state(&self) -> &AgentState {
        &self.agents[self.ego]
    }

    pub fn history_len(&self) -> usize {
        self.ego_state().positions.len()
    }
}

/// Normalizes a window around `ego` (an index into `window.agents`).
pub fn build_state_space(
    window: &SceneWindow,
    ego: usize,
    cfg: &SpatialConfig,
) -> Result<StateSpace> {
    let ego_agent = window
        .agents
        .get(ego)
        .ok_or(Error::NotEgoCandidate(ego as i64))?;
    let future = ego_agent
        .future
        .as_ref()
        .ok_or(Error::NotEgoCandidate(ego_agent.agent_id))?;
    let origin = ego_agent.position_at_reference();
    let dir = heading(&ego_agent.history);
    let h = ego_agent.history.len();

    let local: Vec<Vec<[f64; 2]>> = window
        .agents
        .iter()
        .map(|a| {
            a.history
                .iter()
                .map(|p| to_ego_frame(*p, origin, dir))
                .collect()
        })
        .collect();

    let grids: Vec<ConcentrationGrid> = (0..h)
        .map(|k| {
            let frame: Vec<[f64; 2]> = local.iter().map(|traj| traj[k]).collect();
            ConcentrationGrid::build(&frame, cfg.cell, None)
        })
        .collect();

    let agents = window
        .agents
        .iter()
        .zip(&local)
        .map(|(a, positions)| AgentState {
            agent_id: a.agent_id,
            agent_class: a.agent_class,
            velocities: velocities(positions, window.dt),
            concentration: positions
                .iter()
                .zip(&grids)
                .map(|(p, g)| f64::from(g.count_at(*p)))
                .collect(),
            positions: positions.clone(),
            dims: a.dims,
        })
        .collect();

    let points: Vec<Point> = window
        .agents
        .iter()
        .map(|a| Point {
            agent_id: a.agent_id,
            pos: a.position_at_reference(),
        })
        .collect();
    let reach = cfg
        .neighbor_a
        .max(cfg.neighbor_b)
        .max(cfg.horizon_a)
        .max(cfg.horizon_b);
    let index = SpatialIndex::new(&points, reach);
    let query = RegionQuery {
        points: &points,
        index: &index,
        ego,
        heading: dir,
    };
    Ok(StateSpace {
        reference_frame: window.reference_frame,
        dt: window.dt,
        ego_id: ego_agent.agent_id,
        ego,
        origin,
        heading: dir,
        agents,
        neighbors: query.neighborhood(cfg.neighbor_a, cfg.neighbor_b, cfg.k_nb),
        horizon: query.horizon(cfg.horizon_a, cfg.horizon_b, cfg.k_hz),
        future: future
            .iter()
            .map(|p| to_ego_frame(*p, origin, dir))
            .collect(),
    })
}

/// Backward differences; the first frame copies the second.
pub fn velocities(positions: &[[f64; 2]], dt: f64) -> Vec<[f64; 2]> {
    let n = positions.len();
    let mut v = vec![[0.0; 2]; n];
    for k in 1..n {
        v[k] = [
            (positions[k][0] - positions[k - 1][0]) / dt,
            (positions[k][1] - positions[k - 1][1]) / dt,
        ];
    }
    if n >= 2 {
        v[0] = v[1];
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberDump {
    pub agent_id: i64,
    pub distance: f64,
    pub local: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDump {
    pub cell: [i64; 2],
    pub count: u32,
}

/// Human-readable snapshot of one ego's scene analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDump {
    pub reference_frame: i64,
    pub ego_id: i64,
    pub heading: [f64; 2],
    pub neighbors: Vec<MemberDump>,
    pub horizon: Vec<MemberDump>,
    /// Ego-frame concentration at the reference frame.
    pub concentration: Vec<CellDump>,
    pub cell: f64,
}

impl SceneDump {
    pub fn new(state: &StateSpace, cell: f64) -> Self {
        let dump = |ms: &[Member]| {
            ms.iter()
                .map(|m| MemberDump {
                    agent_id: m.agent_id,
                    distance: m.distance,
                    local: m.local,
                })
                .collect()
        };
        let last: Vec<[f64; 2]> = state
            .agents
            .iter()
            .map(|a| a.positions[a.positions.len() - 1])
            .collect();
        let grid = ConcentrationGrid::build(&last, cell, None);
        Self {
            reference_frame: state.reference_frame,
            ego_id: state.ego_id,
            heading: state.heading,
            neighbors: dump(&state.neighbors),
            horizon: dump(&state.horizon),
            concentration: grid
                .counts
                .iter()
                .map(|(k, c)| CellDump {
                    cell: [k.0, k.1],
                    count: *c,
                })
                .collect(),
            cell,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::WindowAgent;

    fn pts(list: &[(i64, f64, f64)]) -> Vec<Point> {
        list.iter()
            .map(|&(id, x, y)| Point {
                agent_id: id,
                pos: [x, y],
            })
            .collect()
    }

    #[test]
    fn heading_cases() {
        assert_eq!(heading(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]), [1.0, 0.0]);
        assert_eq!(heading(&[[3.0, 3.0]; 6]), [0.0, 1.0]);
        let d = heading(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((d[0] - r).abs() < 1e-15 && (d[1] - r).abs() < 1e-15);
        // jitter in the last frames, drift over the full history
        let hist = [
            [0.0, 0.0],
            [0.2, 0.0],
            [0.4, 0.0],
            [0.4, 0.0],
            [0.41, 0.0],
            [0.4, 0.0],
            [0.4, 0.01],
            [0.4, 0.0],
        ];
        assert_eq!(heading(&hist), [1.0, 0.0]);
    }

    #[test]
    fn ego_frame_round_trip() {
        let h = heading(&[[0.0, 0.0], [3.0, 4.0]]);
        let o = [10.0, -2.0];
        let p = [11.5, 7.25];
        let q = to_ego_frame(p, o, h);
        let back = from_ego_frame(q, o, h);
        assert!((back[0] - p[0]).abs() < 1e-12 && (back[1] - p[1]).abs() < 1e-12);
        // along-heading point maps to +y
        let ahead = to_ego_frame([13.0, 2.0], o, h);
        assert!(ahead[0].abs() < 1e-12 && (ahead[1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn region_examples() {
        let up = [0.0, 1.0];
        assert!(neighborhood(&pts(&[(1, 0.0, 0.0)]), 0, up, 2.0, 2.0, 8).is_empty());
        let scene = pts(&[(1, 0.0, 0.0), (2, 0.0, 1.0), (3, 0.0, -1.0)]);
        let nb = neighborhood(&scene, 0, up, 2.0, 2.0, 8);
        assert_eq!(
            nb.iter().map(|m| m.agent_id).collect::<Vec<_>>(),
            vec![2, 3]
        );
        let hz = horizon(&scene, 0, up, 2.0, 1.5, 4);
        assert_eq!(hz.len(), 1);
        assert_eq!(hz[0].agent_id, 2);
        assert_eq!(hz[0].local, [0.0, 1.0]);
    }

    #[test]
    fn capacity_and_tie_order() {
        let scene = pts(&[
            (0, 0.0, 0.0),
            (9, 1.0, 0.0),
            (4, -1.0, 0.0),
            (7, 0.0, 1.0),
            (8, 0.0, 0.5),
        ]);
        let nb = neighborhood(&scene, 0, [0.0, 1.0], 2.0, 2.0, 3);
        assert_eq!(
            nb.iter().map(|m| m.agent_id).collect::<Vec<_>>(),
            vec![8, 4, 7]
        );
    }

    #[test]
    fn concentration_cases() {
        assert_eq!(concentration(&[[0.5, 0.5]], [0.5, 0.5], 2.0), 1);
        let k = [[0.1, 0.1], [1.9, 0.2], [1.0, 1.99], [0.0, 0.0]];
        assert_eq!(concentration(&k, [1.0, 1.0], 2.0), 4);
        // upper boundary belongs to the next cell
        assert_eq!(concentration(&[[2.0, 0.5]], [1.0, 0.5], 2.0), 0);
        assert_eq!(concentration(&[[2.0, 0.5]], [2.5, 0.5], 2.0), 1);
        let bounded = ConcentrationGrid::build(&[[0.0, 0.0], [100.0, 0.0]], 2.0, Some(3));
        assert_eq!(bounded.total(), 1);
    }

    fn window(agents: Vec<(i64, Vec<[f64; 2]>, bool)>) -> SceneWindow {
        SceneWindow {
            reference_frame: 10,
            dt: 0.5,
            agents: agents
                .into_iter()
                .map(|(id, history, ego)| WindowAgent {
                    agent_id: id,
                    agent_class: AgentClass::Car,
                    dims: (4.5, 1.8),
                    future: ego.then(|| vec![history[history.len() - 1]; 3]),
                    history,
                })
                .collect(),
        }
    }

    #[test]
    fn state_space_normalization() {
        let ego: Vec<[f64; 2]> = (0..4).map(|k| [k as f64 * 1.0, 5.0]).collect();
        let other: Vec<[f64; 2]> = (0..4).map(|k| [k as f64 * 1.0 + 0.5, 5.0]).collect();
        let w = window(vec![(1, ego, true), (2, other, false)]);
        let s = build_state_space(&w, 0, &SpatialConfig::default()).unwrap();
        assert_eq!(s.ego_state().positions[3], [0.0, 0.0]);
        // 2 m/s along the heading (1 m per 0.5 s)
        for v in &s.ego_state().velocities {
            assert_eq!(*v, [0.0, 2.0]);
        }
        assert_eq!(s.neighbors.len(), 1);
        assert_eq!(s.horizon[0].local, [0.0, 0.5]);
        // both agents share a 2 m cell at every frame
        assert!(s
            .agents
            .iter()
            .all(|a| a.concentration.iter().all(|c| *c == 2.0)));
        assert!(build_state_space(&w, 1, &SpatialConfig::default()).is_err());
    }

    #[test]
    fn feature_layout() {
        let ego: Vec<[f64; 2]> = (0..3).map(|k| [0.0, k as f64]).collect();
        let w = window(vec![(1, ego, true)]);
        let s = build_state_space(&w, 0, &SpatialConfig::default()).unwrap();
        let full = s.ego_state().features(FeatureMode::Full, 1.0);
        assert_eq!(full.len(), 3 * 16);
        assert_eq!(&full[16..23], &[0.0, -1.0, 0.0, 2.0, 1.0, 4.5, 1.8]);
        assert_eq!(full[23 + AgentClass::Car.index()], 1.0);
        let pos = s.ego_state().features(FeatureMode::PositionOnly, 2.0);
        assert_eq!(
            pos,
            vec![0.0, -1.0, 0.0, 1.0, 0.0, -0.5, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]
        );
    }
}
