use serde::{Deserialize, Serialize};

use crate::envs::Transition;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// U-maze geometry and episode parameters. The free space is the union of
/// three axis-aligned rectangles: two vertical arms joined by a bottom
/// corridor. All lengths are in world units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MazeConfig {
    pub corridor_width: f64,
    /// Height of each arm (including the overlap with the bottom corridor).
    pub arm_height: f64,
    /// Horizontal gap between the arms.
    pub inner_gap: f64,
    pub max_step: f64,
    pub horizon: usize,
    /// Coverage bin side length. Keep it a divisor of the wall coordinates
    /// so bins never straddle a wall.
    pub bin_size: f64,
}

impl Default for MazeConfig {
    fn default() -> Self {
        Self {
            corridor_width: 2.0,
            arm_height: 10.0,
            inner_gap: 8.0,
            max_step: 0.25,
            horizon: 200,
            bin_size: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Rect {
    #[inline]
    fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

/// Continuous 2-D U-corridor with collision-clipped movement and grid-bin
/// coverage. Pure exploration: the external reward is always zero.
#[derive(Debug, Clone)]
pub struct MazeEnv<S: Scalar> {
    config: MazeConfig,
    rects: Vec<Rect>,
    position: (f64, f64),
    start: (f64, f64),
    steps_taken: usize,
    done: bool,
    /// World-extent scale used for the model encoding.
    encode_scale: f64,
    bins_x: usize,
    bins_y: usize,
    free_bins: Vec<bool>,
    visited_bins: Vec<bool>,
    clamped_actions: usize,
    _marker: std::marker::PhantomData<S>,
}

impl<S: Scalar> MazeEnv<S> {
    pub fn new(config: MazeConfig) -> Result<Self> {
        if config.corridor_width <= 0.0
            || config.arm_height <= config.corridor_width
            || config.inner_gap <= 0.0
            || config.max_step <= 0.0
            || config.bin_size <= 0.0
            || config.horizon == 0
        {
            return Err(Error::InvalidArgument("bad maze configuration".into()));
        }
        let w = config.corridor_width;
        let h = config.arm_height;
        let span = 2.0 * w + config.inner_gap;
        let rects = vec![
            Rect { x0: 0.0, x1: w, y0: 0.0, y1: h },            // left arm
            Rect { x0: 0.0, x1: span, y0: 0.0, y1: w },         // bottom corridor
            Rect { x0: span - w, x1: span, y0: 0.0, y1: h },    // right arm
        ];
        let start = (w / 2.0, h - w / 2.0);
        let bins_x = (span / config.bin_size).round() as usize;
        let bins_y = (h / config.bin_size).round() as usize;
        let mut free_bins = vec![false; bins_x * bins_y];
        for by in 0..bins_y {
            for bx in 0..bins_x {
                let cx = (bx as f64 + 0.5) * config.bin_size;
                let cy = (by as f64 + 0.5) * config.bin_size;
                free_bins[by * bins_x + bx] = rects.iter().any(|r| r.contains(cx, cy));
            }
        }
        let encode_scale = span.max(h);
        let mut env = Self {
            config,
            rects,
            position: start,
            start,
            steps_taken: 0,
            done: false,
            encode_scale,
            bins_x,
            bins_y,
            free_bins,
            visited_bins: vec![false; bins_x * bins_y],
            clamped_actions: 0,
            _marker: std::marker::PhantomData,
        };
        env.mark_visited();
        Ok(env)
    }

    #[inline]
    pub fn config(&self) -> &MazeConfig {
        &self.config
    }

    #[inline]
    pub fn position(&self) -> (f64, f64) {
        self.position
    }

    #[inline]
    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    #[inline]
    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Number of actions whose components had to be clamped into [-1, 1].
    #[inline]
    pub fn clamped_actions(&self) -> usize {
        self.clamped_actions
    }

    pub fn inside(&self, x: f64, y: f64) -> bool {
        self.rects.iter().any(|r| r.contains(x, y))
    }

    pub fn total_free_bins(&self) -> usize {
        self.free_bins.iter().filter(|&&b| b).count()
    }

    fn bin_index(&self, x: f64, y: f64) -> usize {
        let bx = ((x / self.config.bin_size) as usize).min(self.bins_x - 1);
        let by = ((y / self.config.bin_size) as usize).min(self.bins_y - 1);
        by * self.bins_x + bx
    }

    fn mark_visited(&mut self) {
        let idx = self.bin_index(self.position.0, self.position.1);
        self.visited_bins[idx] = true;
    }

    /// Maximal free interval of `x` values at height `y` containing `x`
    /// (merges overlapping rectangles).
    fn free_x_interval(&self, x: f64, y: f64) -> (f64, f64) {
        let mut spans: Vec<(f64, f64)> = self
            .rects
            .iter()
            .filter(|r| y >= r.y0 && y <= r.y1)
            .map(|r| (r.x0, r.x1))
            .collect();
        spans.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (a, b) in spans {
            match merged.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => merged.push((a, b)),
            }
        }
        merged
            .into_iter()
            .find(|&(a, b)| x >= a && x <= b)
            .expect("position inside free space")
    }

    fn free_y_interval(&self, x: f64, y: f64) -> (f64, f64) {
        let mut spans: Vec<(f64, f64)> = self
            .rects
            .iter()
            .filter(|r| x >= r.x0 && x <= r.x1)
            .map(|r| (r.y0, r.y1))
            .collect();
        spans.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (a, b) in spans {
            match merged.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => merged.push((a, b)),
            }
        }
        merged
            .into_iter()
            .find(|&(a, b)| y >= a && y <= b)
            .expect("position inside free space")
    }

    /// Axis-decomposed collision clipping: the x component moves first and
    /// stops at the wall, then the y component. Walls are axis-aligned so
    /// this slides along them instead of sticking.
    fn clipped_move(&self, dx: f64, dy: f64) -> (f64, f64) {
        let (x, y) = self.position;
        let (lo, hi) = self.free_x_interval(x, y);
        let nx = (x + dx).clamp(lo, hi);
        let (lo, hi) = self.free_y_interval(nx, y);
        let ny = (y + dy).clamp(lo, hi);
        (nx, ny)
    }

    /// Scaled state encoding handed to dynamics models, in [0, 1]^2.
    pub fn encode_position(&self, pos: (f64, f64)) -> Vec<S> {
        vec![
            S::from_f64(pos.0 / self.encode_scale),
            S::from_f64(pos.1 / self.encode_scale),
        ]
    }

    /// Inverse of [`Self::encode_position`].
    pub fn decode_position(&self, enc: &[S]) -> (f64, f64) {
        (enc[0].to_f64() * self.encode_scale, enc[1].to_f64() * self.encode_scale)
    }

    #[inline]
    pub fn state_dim(&self) -> usize {
        2
    }

    #[inline]
    pub fn action_dim(&self) -> usize {
        2
    }

    #[inline]
    pub fn model_input_dim(&self) -> usize {
        4
    }

    /// Dynamics-model input: scaled position ++ raw action in [-1, 1]^2.
    pub fn model_input(&self, pos: (f64, f64), action: [f64; 2]) -> Vec<S> {
        let mut input = self.encode_position(pos);
        input.push(S::from_f64(action[0]));
        input.push(S::from_f64(action[1]));
        input
    }

    /// Start a new episode at the top of the left arm. The per-run visited
    /// bins persist.
    pub fn reset(&mut self) -> Vec<S> {
        self.position = self.start;
        self.steps_taken = 0;
        self.done = false;
        self.mark_visited();
        self.encode_position(self.position)
    }

    /// Apply a bounded action. Components outside [-1, 1] are clamped and
    /// counted in [`Self::clamped_actions`]. The displacement is
    /// `max_step * action`, clipped against the walls.
    pub fn step(&mut self, action: [f64; 2]) -> Result<Transition<S>> {
        if self.done {
            return Err(Error::Environment("stepping a finished maze episode".into()));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("maze action".into()));
        }
        let mut a = action;
        if a.iter().any(|v| v.abs() > 1.0) {
            a = [a[0].clamp(-1.0, 1.0), a[1].clamp(-1.0, 1.0)];
            self.clamped_actions += 1;
        }
        let before = self.position;
        let next = self.clipped_move(self.config.max_step * a[0], self.config.max_step * a[1]);
        self.position = next;
        self.steps_taken += 1;
        self.done = self.steps_taken == self.config.horizon;
        self.mark_visited();
        Ok(Transition {
            state: self.encode_position(before),
            action: vec![S::from_f64(a[0]), S::from_f64(a[1])],
            next_state: self.encode_position(next),
            external_reward: S::zero(),
            done: self.done,
        })
    }

    /// Occupied bins over total free bins.
    pub fn coverage(&self) -> f64 {
        let visited = self
            .visited_bins
            .iter()
            .zip(&self.free_bins)
            .filter(|&(&v, &f)| v && f)
            .count();
        visited as f64 / self.total_free_bins() as f64
    }
}
