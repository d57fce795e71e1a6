use std::fmt::Write as _;

use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

/// Held-out fidelity in normalized value space.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRecord {
    pub step: usize,
    pub psnr: f64,
    pub rel_l2: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainSummary {
    pub total_steps: usize,
    pub final_loss: Option<f64>,
    pub wall_seconds: f64,
    /// Mean of the first (up to) 100 step times, times the step count.
    pub estimated_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    pub summary: TrainSummary,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss).collect()
    }

    pub fn finish(&mut self, wall_seconds: f64) {
        let head = &self.steps[..self.steps.len().min(100)];
        let mean = if head.is_empty() {
            0.0
        } else {
            head.iter().map(|s| s.seconds).sum::<f64>() / head.len() as f64
        };
        self.summary = TrainSummary {
            total_steps: self.steps.len(),
            final_loss: self.steps.last().map(|s| s.loss),
            wall_seconds,
            estimated_seconds: mean * self.steps.len() as f64,
        };
    }

    /// One row per step; eval columns filled on evaluation steps.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss,lr,seconds,eval_psnr,eval_rel_l2\n");
        let mut evals = self.evals.iter().peekable();
        for s in &self.steps {
            write!(out, "{},{},{},{}", s.step, s.loss, s.lr, s.seconds).unwrap();
            match evals.peek() {
                Some(e) if e.step == s.step => {
                    writeln!(out, ",{},{}", e.psnr, e.rel_l2).unwrap();
                    evals.next();
                }
                _ => out.push_str(",,\n"),
            }
        }
        out
    }
}
