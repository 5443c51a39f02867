//! Feature visualization by gradient ascent on the input image.

pub mod pnm;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netgraph::{Compiled, LayerGraph, NetError, UnitRef, INPUT_LAYER};
use crate::tensorcore::{NodeId, Tensor};

#[derive(Debug, Error)]
pub enum VizError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("invalid visualization config: {0}")]
    Config(String),
    #[error("start image has shape {actual:?}, expected {expected:?}")]
    StartShape { expected: Vec<usize>, actual: Vec<usize> },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<crate::tensorcore::TensorError> for VizError {
    fn from(e: crate::tensorcore::TensorError) -> Self {
        VizError::Net(e.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VizConfig {
    pub steps: usize,
    /// Steps (1-based) after which the image is recorded.
    pub thresholds: Vec<usize>,
    pub lr: f64,
    /// Maximum per-step shift in pixels (wrap-around).
    pub jitter: usize,
    pub seed: u64,
    /// Half-width of the uniform noise around 0.5 used for the start image.
    pub init_scale: f64,
    /// Keep the normalized gradient of every step.
    pub record_gradients: bool,
}

impl Default for VizConfig {
    fn default() -> Self {
        Self {
            steps: 512,
            thresholds: vec![1, 8, 32, 128, 512],
            lr: 0.05,
            jitter: 2,
            seed: 0,
            init_scale: 0.01,
            record_gradients: false,
        }
    }
}

impl VizConfig {
    pub fn validate(&self) -> Result<(), VizError> {
        if self.steps == 0 {
            return Err(VizError::Config("steps must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(VizError::Config(format!("learning rate {}", self.lr)));
        }
        if !(self.init_scale > 0.0 && self.init_scale <= 0.5) {
            return Err(VizError::Config(format!("init scale {}", self.init_scale)));
        }
        if self.thresholds.is_empty()
            || self.thresholds[0] == 0
            || self.thresholds.windows(2).any(|w| w[0] >= w[1])
            || *self.thresholds.last().expect("non-empty") > self.steps
        {
            return Err(VizError::Config(format!(
                "thresholds {:?} must increase strictly within 1..={}",
                self.thresholds, self.steps
            )));
        }
        Ok(())
    }
}

/// `count` distinct steps in `1..=steps`, evenly spaced in log scale and
/// always including the last step.
pub fn log_spaced_thresholds(steps: usize, count: usize) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(count);
    if steps == 0 || count == 0 {
        return out;
    }
    let count = count.min(steps);
    let top = (steps as f64).ln();
    for i in 0..count {
        let t = if count == 1 { 1.0 } else { i as f64 / (count - 1) as f64 };
        let mut s = (top * t).exp().round() as usize;
        s = s.clamp(1, steps);
        let floor = out.last().map_or(1, |&p| p + 1);
        // Leave room for the remaining picks.
        let ceil = steps - (count - 1 - i);
        out.push(s.max(floor).min(ceil));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub unit: UnitRef,
    pub thresholds: Vec<usize>,
    /// `[1, C, H, W]` per threshold.
    pub images: Vec<Tensor>,
    pub activations: Vec<f64>,
    pub start: Tensor,
    pub start_activation: f64,
    /// Normalized gradient of every step (zero when the raw gradient vanished).
    pub gradients: Option<Vec<Tensor>>,
}

impl Trajectory {
    pub fn final_image(&self) -> &Tensor {
        self.images.last().expect("at least one threshold")
    }

    pub fn final_activation(&self) -> f64 {
        *self.activations.last().expect("at least one threshold")
    }
}

/// A network compiled for batch one with a scalar objective node.
pub struct Objective<'g> {
    graph: &'g LayerGraph,
    compiled: Compiled,
    node: NodeId,
}

impl<'g> Objective<'g> {
    pub fn new(graph: &'g LayerGraph, unit: &UnitRef) -> Result<Self, VizError> {
        let mut compiled = graph.compile(1)?;
        let node = graph.objective_node(&mut compiled, unit)?;
        Ok(Self { graph, compiled, node })
    }

    pub fn value(&self, image: &Tensor) -> Result<f64, VizError> {
        let eval = self.graph.run(&self.compiled, image)?;
        Ok(eval.value(self.node).data()[0])
    }

    /// Objective value and its gradient with respect to the image.
    pub fn value_and_grad(&self, image: &Tensor) -> Result<(f64, Tensor), VizError> {
        let eval = self.graph.run(&self.compiled, image)?;
        let value = eval.value(self.node).data()[0];
        let seed = Tensor::scalar(1.0);
        let input = self.compiled.graph.input_id(INPUT_LAYER).expect("input node");
        let grad = self.compiled.graph.backward(&eval, self.node, &seed, &[input])?.remove(0);
        Ok((value, grad))
    }
}

/// The scalar objective for `unit` at `image` (`[1, C, H, W]` or `[C, H, W]`).
pub fn objective_value(graph: &LayerGraph, unit: &UnitRef, image: &Tensor) -> Result<f64, VizError> {
    let image = as_batch(graph, image)?;
    Objective::new(graph, unit)?.value(&image)
}

fn as_batch(graph: &LayerGraph, image: &Tensor) -> Result<Tensor, VizError> {
    let [c, h, w] = graph.input_shape();
    let expected = vec![1, c, h, w];
    if image.shape() == expected.as_slice() || image.shape() == &expected[1..] {
        Ok(image.clone().reshape(expected)?)
    } else {
        Err(VizError::StartShape {
            expected,
            actual: image.shape().to_vec(),
        })
    }
}

/// Cyclic shift of every channel plane by `(dy, dx)`.
fn roll(image: &Tensor, dy: isize, dx: isize) -> Tensor {
    if dy == 0 && dx == 0 {
        return image.clone();
    }
    let s = image.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let planes = image.len() / (h * w);
    let mut out = vec![0.0; image.len()];
    for p in 0..planes {
        let src = &image.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            let ty = (y as isize + dy).rem_euclid(h as isize) as usize;
            for x in 0..w {
                let tx = (x as isize + dx).rem_euclid(w as isize) as usize;
                dst[ty * w + tx] = src[y * w + x];
            }
        }
    }
    Tensor::new(s.to_vec(), out).expect("same shape")
}

/// Gradient ascent on the input: each step rolls the image by a random
/// offset within the jitter radius, takes the gradient there, rolls it back,
/// normalizes it to unit L2 norm, moves every pixel by `lr` in the
/// root-mean-square sense and clamps to `[0, 1]`.
pub fn maximize_unit(
    graph: &LayerGraph,
    unit: &UnitRef,
    config: &VizConfig,
    start: Option<&Tensor>,
) -> Result<Trajectory, VizError> {
    config.validate()?;
    graph.validate_unit(unit)?;
    let [c, h, w] = graph.input_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut x = match start {
        Some(s) => as_batch(graph, s)?.clamp(0.0, 1.0),
        None => {
            let data = (0..c * h * w)
                .map(|_| 0.5 + rng.gen_range(-config.init_scale..config.init_scale))
                .collect();
            Tensor::new(vec![1, c, h, w], data)?
        }
    };
    let objective = Objective::new(graph, unit)?;
    let start_activation = objective.value(&x)?;
    let start_image = x.clone();
    let r = config.jitter as isize;
    // `lr` is the root-mean-square per-pixel change of one step.
    let rms_scale = ((c * h * w) as f64).sqrt();
    let mut images = Vec::with_capacity(config.thresholds.len());
    let mut activations = Vec::with_capacity(config.thresholds.len());
    let mut gradients = config.record_gradients.then(|| Vec::with_capacity(config.steps));
    let mut next = 0;
    for step in 1..=config.steps {
        let (dy, dx) = if r > 0 {
            (rng.gen_range(-r..=r), rng.gen_range(-r..=r))
        } else {
            (0, 0)
        };
        let (_, grad) = objective.value_and_grad(&roll(&x, dy, dx))?;
        let grad = roll(&grad, -dy, -dx);
        let norm = grad.norm();
        let unit_grad = if norm > 0.0 { grad.scale(1.0 / norm) } else { grad };
        if norm > 0.0 {
            x = x.axpy(config.lr * rms_scale, &unit_grad).clamp(0.0, 1.0);
        }
        if let Some(g) = gradients.as_mut() {
            g.push(unit_grad);
        }
        if next < config.thresholds.len() && config.thresholds[next] == step {
            activations.push(objective.value(&x)?);
            images.push(x.clone());
            next += 1;
        }
    }
    Ok(Trajectory {
        unit: unit.clone(),
        thresholds: config.thresholds.clone(),
        images,
        activations,
        start: start_image,
        start_activation,
        gradients,
    })
}

#[derive(Serialize)]
struct TrajectoryMeta<'a> {
    unit: &'a UnitRef,
    config: &'a VizConfig,
    init: String,
    start_activation: f64,
    steps: Vec<StepMeta>,
}

#[derive(Serialize)]
struct StepMeta {
    step: usize,
    activation: f64,
    file: String,
}

/// Writes one PGM/PPM per recorded step (`step_0512.pgm`), the start image
/// and a `trajectory.json` with the unit, config and activations.
pub fn export_trajectory(traj: &Trajectory, config: &VizConfig, dir: &Path) -> Result<(), VizError> {
    std::fs::create_dir_all(dir)?;
    let ext = if traj.start.shape()[1] == 3 { "ppm" } else { "pgm" };
    pnm::write_pnm(&dir.join(format!("start.{ext}")), &traj.start)?;
    let mut steps = Vec::new();
    for ((&step, img), &act) in traj.thresholds.iter().zip(&traj.images).zip(&traj.activations) {
        let file = format!("step_{step:04}.{ext}");
        pnm::write_pnm(&dir.join(&file), img)?;
        steps.push(StepMeta {
            step,
            activation: act,
            file,
        });
    }
    let meta = TrajectoryMeta {
        unit: &traj.unit,
        config,
        init: format!("uniform 0.5 +/- {}", config.init_scale),
        start_activation: traj.start_activation,
        steps,
    };
    let text = serde_json::to_string_pretty(&meta).map_err(|e| VizError::Config(e.to_string()))?;
    std::fs::write(dir.join("trajectory.json"), text + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_thresholds_are_strict() {
        let t = log_spaced_thresholds(512, 15);
        assert_eq!(t.len(), 15);
        assert_eq!(t[0], 1);
        assert_eq!(*t.last().unwrap(), 512);
        assert!(t.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(log_spaced_thresholds(5, 15), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn roll_wraps_and_inverts() {
        let img = Tensor::new(vec![1, 1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let r = roll(&img, 1, 1);
        assert_eq!(r.data(), &[6.0, 4.0, 5.0, 3.0, 1.0, 2.0]);
        assert_eq!(roll(&r, -1, -1), img);
    }

    #[test]
    fn config_rejects_bad_thresholds() {
        let mut c = VizConfig::default();
        c.thresholds = vec![8, 8];
        assert!(c.validate().is_err());
        c.thresholds = vec![0, 8];
        assert!(c.validate().is_err());
        c.thresholds = vec![600];
        assert!(c.validate().is_err());
    }
}
