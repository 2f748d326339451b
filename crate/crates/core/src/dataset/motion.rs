use std::f64::consts::PI;

use autograd::ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffusion::MotionSequence;
use crate::error::{Error, Result};

use super::spec::{Action, Connective, Direction, Side, ToyMotionSpec};

pub const CHANNELS: usize = 8;
pub const MIN_FRAMES: usize = 16;
pub const JITTER: f64 = 0.05;

/// Channel layout of a toy motion.
pub mod channel {
    pub const FORWARD_VELOCITY: usize = 0;
    pub const LATERAL_VELOCITY: usize = 1;
    pub const LEFT_ARM: usize = 2;
    pub const RIGHT_ARM: usize = 3;
    pub const VERTICAL: usize = 4;
    pub const HEADING_RATE: usize = 5;
    pub const PHASE: usize = 6;
    pub const COUNT_ENVELOPE: usize = 7;
}

/// `c` raised-cosine bumps over `u ∈ [0, 1]`, each peaking at 1.
pub fn envelope(count: u8, u: f64) -> f64 {
    0.5 * (1.0 - (2.0 * PI * count as f64 * u).cos())
}

fn sign(d: Direction) -> f64 {
    match d {
        Direction::Forward => 1.0,
        Direction::Backward => -1.0,
        Direction::None => 0.0,
    }
}

fn arm(side: Side) -> Option<usize> {
    match side {
        Side::Left => Some(channel::LEFT_ARM),
        Side::Right => Some(channel::RIGHT_ARM),
        Side::None => None,
    }
}

/// Adds one action's channel signature at segment position `u`.
fn add_action(out: &mut [f64; CHANNELS], action: Action, direction: Direction, side: Side, count: u8, u: f64) {
    use channel::*;
    let env = envelope(count, u);
    let d = sign(direction);
    match action {
        Action::Walk => {
            out[FORWARD_VELOCITY] += d * (0.4 + 0.4 * env);
            out[VERTICAL] += 0.15 * env;
            out[PHASE] += 0.5 * (2.0 * PI * 2.0 * count as f64 * u).sin();
        }
        Action::Jump => {
            out[VERTICAL] += env;
            out[FORWARD_VELOCITY] += d * 0.3 * env;
            out[PHASE] += 0.3 * (2.0 * PI * count as f64 * u).sin();
        }
        Action::Wave => {
            let swing = 0.4 * (2.0 * PI * 2.0 * count as f64 * u).sin();
            match arm(side) {
                Some(c) => out[c] += 0.8 + swing,
                None => {
                    out[LEFT_ARM] += 0.4 + 0.5 * swing;
                    out[RIGHT_ARM] += 0.4 + 0.5 * swing;
                }
            }
        }
        Action::Turn => match side {
            Side::None => out[HEADING_RATE] += 0.5 * (2.0 * PI * u).sin(),
            _ => {
                let s = if side == Side::Left { 1.0 } else { -1.0 };
                out[HEADING_RATE] += s * (0.3 + 0.6 * env);
                out[LATERAL_VELOCITY] += s * 0.2 * env;
                out[arm(side).unwrap()] += 0.3;
            }
        },
    }
}

/// Noiseless channel values at frame `f` of `frames`.
fn frame_values(spec: &ToyMotionSpec, f: usize, frames: usize) -> [f64; CHANNELS] {
    let u = f as f64 / frames as f64;
    let mut out = [0.0; CHANNELS];
    let primary = |out: &mut [f64; CHANNELS], u: f64| {
        add_action(out, spec.action, spec.direction, spec.side, spec.count, u);
        out[channel::COUNT_ENVELOPE] += envelope(spec.count, u);
    };
    let secondary = |out: &mut [f64; CHANNELS], u: f64| {
        if let Some(a) = spec.second_action {
            add_action(out, a, Direction::None, Side::None, 1, u);
        }
    };
    match spec.connective {
        Connective::None => primary(&mut out, u),
        Connective::While => {
            primary(&mut out, u);
            secondary(&mut out, u);
        }
        Connective::Then => {
            if u < 0.5 {
                primary(&mut out, 2.0 * u);
            } else {
                secondary(&mut out, 2.0 * u - 1.0);
            }
        }
    }
    out
}

/// Motion whose channel statistics encode the spec, plus Gaussian jitter of
/// standard deviation `jitter`.
pub fn synth_motion_with_jitter<R: Rng + ?Sized>(
    spec: &ToyMotionSpec,
    frames: usize,
    jitter: f64,
    rng: &mut R,
) -> Result<MotionSequence> {
    spec.validate()?;
    if frames < MIN_FRAMES {
        return Err(Error::Contract(format!("need at least {MIN_FRAMES} frames, got {frames}")));
    }
    let mut data = Array2::<f32>::zeros((frames, CHANNELS));
    for f in 0..frames {
        let v = frame_values(spec, f, frames);
        for c in 0..CHANNELS {
            let noise = if jitter > 0.0 {
                jitter * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            data[[f, c]] = (v[c] + noise) as f32;
        }
    }
    MotionSequence::new(data)
}

pub fn synth_motion<R: Rng + ?Sized>(spec: &ToyMotionSpec, frames: usize, rng: &mut R) -> Result<MotionSequence> {
    synth_motion_with_jitter(spec, frames, JITTER, rng)
}

/// Counts bumps by hysteresis: a peak is a rise above `high` after the
/// signal was last below `low`.
pub fn count_peaks(signal: &[f32], low: f32, high: f32) -> usize {
    let mut armed = true;
    let mut peaks = 0;
    for &v in signal {
        if armed && v > high {
            peaks += 1;
            armed = false;
        } else if !armed && v < low {
            armed = true;
        }
    }
    peaks
}

/// Peaks of the count-envelope channel with thresholds suited to the jitter level.
pub fn envelope_peaks(motion: &MotionSequence) -> usize {
    let ch: Vec<f32> = motion.data.column(channel::COUNT_ENVELOPE).to_vec();
    count_peaks(&ch, 0.3, 0.7)
}
