//! Uniform 1D codebook shared by the x and y axes, and the token-sequence
//! layout of a trajectory (`x1, y1, x2, y2, ...`).

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;

/// Index into the codebook.
pub type Token = u32;

/// Default spatial half-extent in meters.
pub const DEFAULT_HALF_RANGE: f64 = 100.0;
/// Default grid step in meters.
pub const DEFAULT_RESOLUTION: f64 = 0.5;

/// Grid `a_i = -M + i * step` for `i in 0..vocab_size`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Codebook {
    half_range: f64,
    resolution: f64,
    vocab_size: usize,
}

impl Default for Codebook {
    fn default() -> Self {
        Codebook::new(DEFAULT_HALF_RANGE, DEFAULT_RESOLUTION).expect("default codebook")
    }
}

impl Codebook {
    /// `2 * half_range` must be an integer multiple of `resolution`.
    pub fn new(half_range: f64, resolution: f64) -> Result<Self> {
        if !(half_range.is_finite() && half_range > 0.0) {
            return Err(Error::InvalidCodebook("half range must be positive and finite"));
        }
        if !(resolution.is_finite() && resolution > 0.0) {
            return Err(Error::InvalidCodebook("resolution must be positive and finite"));
        }
        let cells = 2.0 * half_range / resolution;
        let rounded = cells.round();
        if (cells - rounded).abs() > 1e-9 * rounded.max(1.0) {
            return Err(Error::InvalidCodebook("2 * half range must be a multiple of the resolution"));
        }
        if rounded < 1.0 || rounded >= u32::MAX as f64 {
            return Err(Error::InvalidCodebook("vocabulary size out of bounds"));
        }
        Ok(Self { half_range, resolution, vocab_size: rounded as usize + 1 })
    }

    pub fn half_range(&self) -> f64 {
        self.half_range
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Token whose value is closest to zero.
    pub fn center_token(&self) -> Token {
        ((self.vocab_size - 1) / 2) as Token
    }

    pub fn contains_value(&self, value: f64) -> bool {
        value >= -self.half_range && value <= self.half_range
    }

    #[inline]
    pub(crate) fn value_unchecked(&self, token: Token) -> f64 {
        -self.half_range + token as f64 * self.resolution
    }

    /// Coordinate of `token`.
    pub fn dequantize(&self, token: Token) -> Result<f64> {
        if (token as usize) < self.vocab_size {
            Ok(self.value_unchecked(token))
        } else {
            Err(Error::TokenOutOfRange { token, vocab_size: self.vocab_size })
        }
    }

    /// Nearest token to `value`; an exact midpoint goes to the smaller index.
    /// Values outside `[-M, M]` are rejected rather than clamped.
    pub fn quantize(&self, value: f64) -> Result<Token> {
        if !self.contains_value(value) {
            return Err(Error::OutOfRange { value, half_range: self.half_range });
        }
        let last = (self.vocab_size - 1) as i64;
        let guess = ((value + self.half_range) / self.resolution).floor() as i64;
        let lo = (guess - 1).clamp(0, last);
        let hi = (guess + 2).clamp(0, last);
        let mut best = lo as Token;
        let mut best_dist = (self.value_unchecked(best) - value).abs();
        for i in lo + 1..=hi {
            let d = (self.value_unchecked(i as Token) - value).abs();
            if d < best_dist {
                best = i as Token;
                best_dist = d;
            }
        }
        Ok(best)
    }

    /// Nearest token after clamping into range, for callers that have
    /// already decided clamping is acceptable.
    pub fn quantize_clamped(&self, value: f64) -> Token {
        let v = value.clamp(-self.half_range, self.half_range);
        self.quantize(v).unwrap_or(0)
    }
}

/// Token pair of one waypoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TokenPair {
    pub x: Token,
    pub y: Token,
}

impl TokenPair {
    pub const fn new(x: Token, y: Token) -> Self {
        Self { x, y }
    }

    pub fn manhattan(self, other: TokenPair) -> u32 {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

/// Flattened token sequence of `2N` entries, interleaved x then y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenTrajectory {
    tokens: Vec<Token>,
    dt: f64,
}

impl TokenTrajectory {
    pub fn new(tokens: Vec<Token>, dt: f64) -> Result<Self> {
        if tokens.is_empty() || !tokens.len().is_multiple_of(2) {
            return Err(Error::OddTokenCount(tokens.len()));
        }
        Ok(Self { tokens, dt })
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.tokens.len() / 2
    }

    pub fn pair(&self, waypoint: usize) -> TokenPair {
        TokenPair::new(self.tokens[2 * waypoint], self.tokens[2 * waypoint + 1])
    }

    pub fn set_pair(&mut self, waypoint: usize, pair: TokenPair) {
        self.tokens[2 * waypoint] = pair.x;
        self.tokens[2 * waypoint + 1] = pair.y;
    }

    pub fn with_pair(&self, waypoint: usize, pair: TokenPair) -> Self {
        let mut out = self.clone();
        out.set_pair(waypoint, pair);
        out
    }

    pub fn dequantize(&self, cb: &Codebook) -> Result<ContinuousTrajectory> {
        let waypoints = self
            .tokens
            .chunks_exact(2)
            .map(|p| Ok(Vec2::new(cb.dequantize(p[0])?, cb.dequantize(p[1])?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(ContinuousTrajectory { waypoints, dt: self.dt })
    }
}

/// Waypoints in the ego frame at t = 0. Waypoint `j` is reached at
/// `(j + 1) * dt`; the ego itself sits at the origin at t = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousTrajectory {
    pub waypoints: Vec<Vec2>,
    pub dt: f64,
}

impl ContinuousTrajectory {
    pub fn new(waypoints: Vec<Vec2>, dt: f64) -> Self {
        Self { waypoints, dt }
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn time_of(&self, waypoint: usize) -> f64 {
        (waypoint + 1) as f64 * self.dt
    }

    pub fn quantize(&self, cb: &Codebook) -> Result<TokenTrajectory> {
        quantize_trajectory(self, cb)
    }
}

/// Per-coordinate nearest-token quantization. Fails on the first waypoint
/// that leaves the codebook range.
pub fn quantize_trajectory(traj: &ContinuousTrajectory, cb: &Codebook) -> Result<TokenTrajectory> {
    if traj.waypoints.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let mut tokens = Vec::with_capacity(traj.waypoints.len() * 2);
    for (index, p) in traj.waypoints.iter().enumerate() {
        for (axis, value) in [('x', p.x), ('y', p.y)] {
            let t = cb.quantize(value).map_err(|_| Error::WaypointOutOfRange { index, axis, value })?;
            tokens.push(t);
        }
    }
    TokenTrajectory::new(tokens, traj.dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn brute_force_nearest(cb: &Codebook, v: f64) -> Token {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for i in 0..cb.vocab_size() as Token {
            let d = (cb.dequantize(i).unwrap() - v).abs();
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }

    #[test]
    fn default_codebook_has_401_tokens() {
        let cb = Codebook::default();
        assert_eq!(cb.vocab_size(), 401);
        assert_eq!(cb.center_token(), 200);
    }

    #[test]
    fn quantize_examples() {
        let cb = Codebook::default();
        assert_eq!(cb.quantize(0.0).unwrap(), 200);
        assert_eq!(cb.quantize(100.0).unwrap(), 400);
        assert_eq!(cb.quantize(-100.0).unwrap(), 0);
        assert_eq!(cb.quantize(0.26).unwrap(), brute_force_nearest(&cb, 0.26));
        assert_eq!(cb.quantize(0.26).unwrap(), 201);
    }

    #[test]
    fn midpoint_ties_go_to_smaller_index() {
        let cb = Codebook::default();
        assert_eq!(cb.quantize(0.25).unwrap(), 200);
        assert_eq!(cb.quantize(-0.25).unwrap(), 199);
    }

    #[test]
    fn out_of_range_is_an_error_not_a_clamp() {
        let cb = Codebook::default();
        assert!(matches!(cb.quantize(100.01), Err(Error::OutOfRange { .. })));
        assert!(matches!(cb.quantize(f64::NAN), Err(Error::OutOfRange { .. })));
        assert_eq!(cb.quantize_clamped(150.0), 400);
    }

    #[test]
    fn dequantize_examples() {
        let cb = Codebook::default();
        assert_eq!(cb.dequantize(200).unwrap(), 0.0);
        assert_eq!(cb.dequantize(0).unwrap(), -100.0);
        assert_eq!(cb.dequantize(201).unwrap(), 0.5);
        assert!(matches!(cb.dequantize(401), Err(Error::TokenOutOfRange { .. })));
    }

    #[test]
    fn invalid_codebooks_rejected() {
        assert!(Codebook::new(100.0, 0.3).is_err());
        assert!(Codebook::new(0.0, 0.5).is_err());
        assert!(Codebook::new(100.0, -0.5).is_err());
        assert_eq!(Codebook::new(10.0, 1.0).unwrap().vocab_size(), 21);
    }

    #[test]
    fn quantize_trajectory_interleaves() {
        let cb = Codebook::default();
        let traj = ContinuousTrajectory::new(vec![Vec2::new(0.0, 0.0), Vec2::new(0.5, 1.0)], 0.25);
        let tokens = quantize_trajectory(&traj, &cb).unwrap();
        assert_eq!(tokens.tokens(), &[200, 200, 201, 202]);
        assert_eq!(tokens.horizon(), 2);
        assert_eq!(tokens.pair(1), TokenPair::new(201, 202));
    }

    #[test]
    fn quantize_trajectory_rejects_empty_and_reports_waypoint() {
        let cb = Codebook::default();
        let empty = ContinuousTrajectory::new(vec![], 0.25);
        assert_eq!(quantize_trajectory(&empty, &cb), Err(Error::EmptyTrajectory));
        let bad = ContinuousTrajectory::new(vec![Vec2::ZERO, Vec2::new(1.0, -120.0)], 0.25);
        assert!(matches!(quantize_trajectory(&bad, &cb), Err(Error::WaypointOutOfRange { index: 1, axis: 'y', .. })));
    }

    #[test]
    fn odd_token_sequences_rejected() {
        assert!(TokenTrajectory::new(vec![1, 2, 3], 0.25).is_err());
        assert!(TokenTrajectory::new(vec![], 0.25).is_err());
    }
}
