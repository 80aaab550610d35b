use crate::control::Controller;
use crate::pensim::PenSimConfig;

/// Piecewise-constant segments per feed input in the PenSim search space.
pub const PROFILE_SEGMENTS: usize = 6;

/// Open-loop controller replaying a piecewise-constant input profile.
///
/// Parameters are segment-major: entry `s * action_dim + j` is input `j`
/// during segment `s`. Step `k` of an episode of `max_steps` falls in segment
/// `k * segments / max_steps`.
#[derive(Debug, Clone)]
pub struct ProfileController {
    params: Vec<f64>,
    action_dim: usize,
    segments: usize,
    max_steps: usize,
    step: usize,
}

impl ProfileController {
    pub fn new(params: Vec<f64>, action_dim: usize, segments: usize, max_steps: usize) -> Self {
        assert!(action_dim > 0 && segments > 0 && max_steps > 0, "profile dimensions must be positive");
        assert_eq!(params.len(), action_dim * segments, "profile length must be segments x inputs");
        Self { params, action_dim, segments, max_steps, step: 0 }
    }

    /// Search box for a profile whose every segment spans the action box.
    pub fn search_box(action_low: &[f64], action_high: &[f64], segments: usize) -> (Vec<f64>, Vec<f64>) {
        (action_low.repeat(segments), action_high.repeat(segments))
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn segment(&self, step: usize) -> usize {
        (step * self.segments / self.max_steps).min(self.segments - 1)
    }
}

impl Controller for ProfileController {
    fn name(&self) -> &str {
        "bo"
    }

    fn reset(&mut self, _seed: u64) {
        self.step = 0;
    }

    fn act(&mut self, _obs: &[f64]) -> Vec<f64> {
        let s = self.segment(self.step);
        self.step += 1;
        self.params[s * self.action_dim..(s + 1) * self.action_dim].to_vec()
    }
}

/// Per-input bounds the PenSim baseline searches: from the action floor up to
/// twice the nominal flow, widened to at least a tenth of the action range
/// and clipped to the action box.
///
/// Most profiles drawn from the full action box overfeed substrate or
/// overflow the vessel long before the batch ends; this box keeps the search
/// where complete batches are common.
pub fn pensim_input_box(cfg: &PenSimConfig) -> (Vec<f64>, Vec<f64>) {
    let low = cfg.action_low.to_vec();
    let high = (0..low.len())
        .map(|i| {
            let range = cfg.action_high[i] - low[i];
            (low[i] + 2.0 * (cfg.nominal_action[i] - low[i])).max(low[i] + 0.1 * range).min(cfg.action_high[i])
        })
        .collect();
    (low, high)
}
