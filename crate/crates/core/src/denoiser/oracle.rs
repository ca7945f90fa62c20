//! Scene-aware oracle: logits fall off linearly with the distance between a
//! token's value and the reference coordinate of each slot.

use alloc::vec::Vec;

use crate::codebook::{Codebook, ContinuousTrajectory};
use crate::diffusion::{Condition, Denoiser, DenoiserOutput, NoisySequence, Step};
use crate::error::{Error, Result};
use crate::scene::kinematic_reference;

/// Logit assigned to every token other than the current one at an unmasked slot.
const PEAK_FLOOR: f64 = -1.0e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleDenoiser {
    codebook: Codebook,
    sharpness: f64,
}

impl OracleDenoiser {
    /// `sharpness` is the temperature `T` in meters; smaller is peakier.
    pub fn new(codebook: Codebook, sharpness: f64) -> Result<Self> {
        if !(sharpness.is_finite() && sharpness > 0.0) {
            return Err(Error::InvalidArgument("oracle sharpness must be positive".into()));
        }
        Ok(Self { codebook, sharpness })
    }

    pub fn sharpness(&self) -> f64 {
        self.sharpness
    }

    fn reference(&self, cond: &Condition<'_>) -> Result<ContinuousTrajectory> {
        match cond.goal {
            Some(goal) => kinematic_reference(cond.scene, goal),
            None => Ok(cond.scene.reference_trajectory.clone()),
        }
    }
}

impl Denoiser for OracleDenoiser {
    fn vocab_size(&self) -> usize {
        self.codebook.vocab_size()
    }

    fn denoise(&self, noisy: &NoisySequence, cond: &Condition<'_>, _step: Step) -> Result<DenoiserOutput> {
        let vocab = self.vocab_size();
        let len = noisy.len();
        if cond.null {
            return Ok(DenoiserOutput::zeros(len, vocab));
        }
        let reference = self.reference(cond)?;
        if reference.len() * 2 != len {
            return Err(Error::Shape(alloc::format!("reference has {} waypoints for {len} slots", reference.len())));
        }
        let values: Vec<f64> = (0..vocab).map(|a| self.codebook.value_unchecked(a as u32)).collect();
        let mut out = DenoiserOutput::zeros(len, vocab);
        for slot in 0..len {
            let row = out.row_mut(slot);
            match noisy.token(slot) {
                Some(current) => {
                    row.fill(PEAK_FLOOR);
                    row[current as usize] = 0.0;
                }
                None => {
                    let p = reference.waypoints[slot / 2];
                    let target = if slot % 2 == 0 { p.x } else { p.y };
                    for (r, v) in row.iter_mut().zip(&values) {
                        *r = -(v - target).abs() / self.sharpness;
                    }
                }
            }
        }
        Ok(out)
    }
}
