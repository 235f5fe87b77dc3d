//! The pixel-wise diffusion MDP.
//!
//! Every pixel is an agent choosing one of nine actions per step: do nothing,
//! or replace its value by the average of itself and one of its eight
//! neighbors. All agents read the current state and write the next one
//! (synchronous update), so a step is a linear, row-stochastic map of the
//! state. The reward of an agent is the decrease of its squared error against
//! the ground truth.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::image::{ImageGrid, NeighborOffset, PixelCoord};

pub const NUM_ACTIONS: usize = 9;

/// Action index in `0..9`.
///
/// 0 is "do nothing"; 1..=8 average with the neighbor at
/// E(0,+1), NE(−1,+1), N(−1,0), NW(−1,−1), W(0,−1), SW(+1,−1), S(+1,0),
/// SE(+1,+1), where the first coordinate is the row offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DiffusionAction(u8);

const OFFSETS: [(i8, i8); NUM_ACTIONS] = [
    (0, 0),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
];

const NAMES: [&str; NUM_ACTIONS] = ["none", "E", "NE", "N", "NW", "W", "SW", "S", "SE"];

impl DiffusionAction {
    pub const DO_NOTHING: DiffusionAction = DiffusionAction(0);

    pub fn new(index: usize) -> Result<Self> {
        if index >= NUM_ACTIONS {
            return Err(Error::Argument(format!("action index {index} not in 0..9")));
        }
        Ok(DiffusionAction(index as u8))
    }

    pub fn all() -> impl Iterator<Item = DiffusionAction> {
        (0..NUM_ACTIONS as u8).map(DiffusionAction)
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Neighbor offset; `None` for do-nothing.
    #[inline]
    pub fn offset(self) -> Option<NeighborOffset> {
        if self.0 == 0 {
            None
        } else {
            let (di, dj) = OFFSETS[self.0 as usize];
            Some(NeighborOffset { di, dj })
        }
    }

    pub fn name(self) -> &'static str {
        NAMES[self.0 as usize]
    }
}

impl fmt::Display for DiffusionAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.0, self.name())
    }
}

/// How an averaging action pointing off the grid behaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundaryMode {
    /// Average with the clamped coordinate (the pixel itself or its edge
    /// neighbor).
    #[default]
    Replicate,
    /// Off-grid averaging degrades to do-nothing.
    Mask,
}

impl fmt::Display for BoundaryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundaryMode::Replicate => "replicate",
            BoundaryMode::Mask => "mask",
        })
    }
}

impl std::str::FromStr for BoundaryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "replicate" => Ok(BoundaryMode::Replicate),
            "mask" => Ok(BoundaryMode::Mask),
            _ => Err(Error::Argument(format!("unknown boundary mode `{s}`"))),
        }
    }
}

/// One joint action: an action index per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionMap {
    height: usize,
    width: usize,
    actions: Vec<u8>,
}

const ACTION_MAP_MAGIC: &[u8; 4] = b"RDAM";

impl ActionMap {
    pub fn filled(height: usize, width: usize, action: DiffusionAction) -> Self {
        Self {
            height,
            width,
            actions: vec![action.0; height * width],
        }
    }

    pub fn from_indices(height: usize, width: usize, actions: Vec<u8>) -> Result<Self> {
        if actions.len() != height * width {
            return Err(Error::Argument(format!(
                "action map length {} does not match {height}x{width}",
                actions.len()
            )));
        }
        if let Some(&bad) = actions.iter().find(|&&a| a as usize >= NUM_ACTIONS) {
            return Err(Error::Argument(format!("action index {bad} not in 0..9")));
        }
        Ok(Self {
            height,
            width,
            actions,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> DiffusionAction,
    ) -> Self {
        let mut actions = Vec::with_capacity(height * width);
        for x in 0..height {
            for y in 0..width {
                actions.push(f(x, y).0);
            }
        }
        Self {
            height,
            width,
            actions,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> DiffusionAction {
        DiffusionAction(self.actions[x * self.width + y])
    }

    pub fn set(&mut self, x: usize, y: usize, a: DiffusionAction) {
        self.actions[x * self.width + y] = a.0;
    }

    pub fn indices(&self) -> &[u8] {
        &self.actions
    }

    /// Per-action pixel counts.
    pub fn histogram(&self) -> [usize; NUM_ACTIONS] {
        let mut h = [0; NUM_ACTIONS];
        for &a in &self.actions {
            h[a as usize] += 1;
        }
        h
    }

    /// Writes the 16-byte header (magic `RDAM`, then height, width and step
    /// as little-endian `u32`) followed by one byte per pixel, row-major.
    pub fn write_to(&self, step: u32, mut w: impl Write) -> Result<()> {
        w.write_all(ACTION_MAP_MAGIC)?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        w.write_all(&step.to_le_bytes())?;
        w.write_all(&self.actions)?;
        Ok(())
    }

    /// Inverse of [`ActionMap::write_to`]; returns the map and its step index.
    pub fn read_from(mut r: impl Read) -> Result<(Self, u32)> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)
            .map_err(|_| Error::Format("action map header truncated".into()))?;
        if &header[..4] != ACTION_MAP_MAGIC {
            return Err(Error::Format("bad action map magic".into()));
        }
        let field = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
        let (height, width, step) = (field(4) as usize, field(8) as usize, field(12));
        let mut actions = vec![0u8; height * width];
        r.read_exact(&mut actions)
            .map_err(|_| Error::Format("action map payload truncated".into()))?;
        Ok((Self::from_indices(height, width, actions)?, step))
    }
}

/// Per-pixel rewards of one transition.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardMap(pub ImageGrid);

impl RewardMap {
    pub fn grid(&self) -> &ImageGrid {
        &self.0
    }
}

fn ensure_action_shape(u: &ImageGrid, a: &ActionMap) -> Result<()> {
    if u.shape() != a.shape() {
        return Err(Error::Dimension {
            expected: u.shape(),
            actual: a.shape(),
        });
    }
    Ok(())
}

/// Source pixel averaged with `(x, y)` under action `a`, or `None` when the
/// pixel keeps its value.
#[inline]
fn partner(
    u_shape: (usize, usize),
    x: usize,
    y: usize,
    a: DiffusionAction,
    boundary: BoundaryMode,
) -> Option<(usize, usize)> {
    let o = a.offset()?;
    let nx = x as isize + o.di as isize;
    let ny = y as isize + o.dj as isize;
    let (h, w) = (u_shape.0 as isize, u_shape.1 as isize);
    let inside = (0..h).contains(&nx) && (0..w).contains(&ny);
    match (inside, boundary) {
        (true, _) => Some((nx as usize, ny as usize)),
        (false, BoundaryMode::Mask) => None,
        (false, BoundaryMode::Replicate) => {
            Some((nx.clamp(0, h - 1) as usize, ny.clamp(0, w - 1) as usize))
        }
    }
}

/// Synchronous transition with replicate boundaries.
pub fn apply_actions(u: &ImageGrid, a: &ActionMap) -> Result<ImageGrid> {
    apply_actions_with(u, a, BoundaryMode::Replicate)
}

pub fn apply_actions_with(
    u: &ImageGrid,
    a: &ActionMap,
    boundary: BoundaryMode,
) -> Result<ImageGrid> {
    ensure_action_shape(u, a)?;
    let shape = u.shape();
    Ok(ImageGrid::from_fn(shape.0, shape.1, |x, y| {
        let v = u.get(x, y);
        match partner(shape, x, y, a.get(x, y), boundary) {
            Some((px, py)) => 0.5 * v + 0.5 * u.get(px, py),
            None => v,
        }
    }))
}

/// `(f − u_prev)² − (f − u_next)²` per pixel.
pub fn reward_map(f: &ImageGrid, u_prev: &ImageGrid, u_next: &ImageGrid) -> Result<RewardMap> {
    f.ensure_same_shape(u_prev)?;
    f.ensure_same_shape(u_next)?;
    let data = f
        .data()
        .iter()
        .zip(u_prev.data())
        .zip(u_next.data())
        .map(|((&t, &p), &n)| (t - p) * (t - p) - (t - n) * (t - n))
        .collect();
    Ok(RewardMap(ImageGrid::new(f.height(), f.width(), data)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub state: ImageGrid,
    pub actions: ActionMap,
    /// Absent when the episode runs without ground truth.
    pub rewards: Option<RewardMap>,
}

/// Recorded rollout from `initial` over `steps.len()` transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub initial: ImageGrid,
    pub truth: Option<ImageGrid>,
    pub steps: Vec<TraceStep>,
    pub final_state: ImageGrid,
    pub boundary: BoundaryMode,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// State before step `t`; `t == len()` gives the final state.
    pub fn state(&self, t: usize) -> &ImageGrid {
        if t == self.steps.len() {
            &self.final_state
        } else {
            &self.steps[t].state
        }
    }

    pub fn action_maps(&self) -> impl Iterator<Item = &ActionMap> {
        self.steps.iter().map(|s| &s.actions)
    }

    pub fn rewards(&self) -> Result<Vec<&RewardMap>> {
        self.steps
            .iter()
            .map(|s| {
                s.rewards
                    .as_ref()
                    .ok_or_else(|| Error::Argument("trace has no rewards (no ground truth)".into()))
            })
            .collect()
    }

    /// Re-applies the recorded action maps to the initial state.
    pub fn replay(&self) -> Result<ImageGrid> {
        let mut u = self.initial.clone();
        for s in &self.steps {
            u = apply_actions_with(&u, &s.actions, self.boundary)?;
        }
        Ok(u)
    }
}

/// Rolls out `t_max` transitions from `g`, asking `policy` for an action map
/// given the step index and current state. Rewards are recorded when `truth`
/// is supplied.
pub fn run_episode<P>(
    g: &ImageGrid,
    truth: Option<&ImageGrid>,
    t_max: usize,
    boundary: BoundaryMode,
    mut policy: P,
) -> Result<EpisodeTrace>
where
    P: FnMut(usize, &ImageGrid) -> Result<ActionMap>,
{
    if t_max == 0 {
        return Err(Error::Argument("episode length must be at least 1".into()));
    }
    if let Some(f) = truth {
        g.ensure_same_shape(f)?;
    }
    let mut steps = Vec::with_capacity(t_max);
    let mut u = g.clone();
    for t in 0..t_max {
        let actions = policy(t, &u)?;
        let next = apply_actions_with(&u, &actions, boundary)?;
        let rewards = truth.map(|f| reward_map(f, &u, &next)).transpose()?;
        steps.push(TraceStep {
            state: std::mem::replace(&mut u, next),
            actions,
            rewards,
        });
    }
    Ok(EpisodeTrace {
        initial: g.clone(),
        truth: truth.cloned(),
        steps,
        final_state: u,
        boundary,
    })
}

/// Exact linear weights mapping the initial state to one pixel of the final
/// state.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeKernel {
    pub anchor: PixelCoord,
    pub weights: BTreeMap<PixelCoord, f64>,
}

impl CompositeKernel {
    pub fn apply(&self, g: &ImageGrid) -> f64 {
        self.weights
            .iter()
            .map(|(p, w)| w * g.get(p.x as usize, p.y as usize))
            .sum()
    }

    pub fn total(&self) -> f64 {
        self.weights.values().sum()
    }

    /// Largest Chebyshev distance from the anchor to a supported pixel.
    pub fn radius(&self) -> usize {
        self.weights
            .keys()
            .map(|p| p.chebyshev(self.anchor))
            .max()
            .unwrap_or(0)
    }

    /// Inclusive bounding box `(min, max)` of the support.
    pub fn bounding_box(&self) -> (PixelCoord, PixelCoord) {
        let mut lo = self.anchor;
        let mut hi = self.anchor;
        for p in self.weights.keys() {
            lo = PixelCoord::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = PixelCoord::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        (lo, hi)
    }
}

/// Composes the per-step action matrices backwards from each anchor.
///
/// With `anchors == None` a kernel is produced for every pixel in row-major
/// order.
pub fn composite_kernels(
    trace: &EpisodeTrace,
    anchors: Option<&[PixelCoord]>,
) -> Result<Vec<CompositeKernel>> {
    let shape = trace.initial.shape();
    let all: Vec<PixelCoord>;
    let anchors = match anchors {
        Some(a) => a,
        None => {
            all = (0..shape.0)
                .flat_map(|x| (0..shape.1).map(move |y| PixelCoord::new(x as isize, y as isize)))
                .collect();
            &all
        }
    };
    anchors
        .iter()
        .map(|&anchor| {
            if !trace.initial.contains(anchor) {
                return Err(Error::Argument(format!(
                    "kernel anchor ({}, {}) outside {}x{} grid",
                    anchor.x, anchor.y, shape.0, shape.1
                )));
            }
            let mut weights = BTreeMap::from([(anchor, 1.0)]);
            for step in trace.steps.iter().rev() {
                let mut prev = BTreeMap::new();
                for (p, w) in weights {
                    let (x, y) = (p.x as usize, p.y as usize);
                    match partner(shape, x, y, step.actions.get(x, y), trace.boundary) {
                        Some((px, py)) => {
                            *prev.entry(p).or_insert(0.0) += 0.5 * w;
                            *prev
                                .entry(PixelCoord::new(px as isize, py as isize))
                                .or_insert(0.0) += 0.5 * w;
                        }
                        None => *prev.entry(p).or_insert(0.0) += w,
                    }
                }
                weights = prev;
            }
            Ok(CompositeKernel { anchor, weights })
        })
        .collect()
}
