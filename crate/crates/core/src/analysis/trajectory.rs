use serde::{Deserialize, Serialize};

use crate::corpus::tokenize;
use crate::error::{Error, Result};
use crate::models::{Generator, TextPair};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub train_loss: f64,
    pub eval_loss: Option<f64>,
    pub ppl: Option<f64>,
}

/// Append-only series with strictly increasing steps.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub points: Vec<TrajectoryPoint>,
}

impl TrajectoryLog {
    pub fn push(&mut self, point: TrajectoryPoint) -> Result<()> {
        if let Some(last) = self.points.last() {
            if point.step <= last.step {
                return Err(Error::InvalidArgument(format!(
                    "trajectory step {} does not follow {}",
                    point.step, last.step
                )));
            }
        }
        if matches!(point.ppl, Some(p) if !(p > 0.0)) {
            return Err(Error::InvalidArgument("perplexity must be positive".into()));
        }
        self.points.push(point);
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("step,train_loss,eval_loss,ppl\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.step,
                p.train_loss,
                opt(p.eval_loss),
                opt(p.ppl)
            ));
        }
        out
    }
}

/// `exp(nll_sum / tokens)`.
pub fn perplexity(nll_sum: f64, tokens: usize) -> Result<f64> {
    if tokens == 0 {
        return Err(Error::InvalidArgument("perplexity over zero tokens".into()));
    }
    Ok((nll_sum / tokens as f64).exp())
}

/// Summed negative log-likelihood of the questions given their passages, and
/// the number of predicted tokens (question tokens plus end of sequence).
pub fn generator_nll(generator: &dyn Generator, pairs: &[TextPair]) -> Result<(f64, usize)> {
    let mut nll = 0.0;
    let mut tokens = 0;
    for p in pairs {
        nll -= generator.score(&p.passage, &p.question)?;
        tokens += tokenize(&p.question).len() + 1;
    }
    Ok((nll, tokens))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steps_must_increase() {
        let mut log = TrajectoryLog::default();
        let pt = |step| TrajectoryPoint {
            step,
            train_loss: 1.0,
            eval_loss: None,
            ppl: Some(2.0),
        };
        log.push(pt(1)).unwrap();
        assert!(log.push(pt(1)).is_err());
        log.push(pt(3)).unwrap();
        assert_eq!(
            log.to_csv(),
            "step,train_loss,eval_loss,ppl\n1,1,,2\n3,1,,2\n"
        );
    }

    #[test]
    fn perplexity_of_uniform_choice() {
        let ppl = perplexity(4.0 * 10f64.ln(), 4).unwrap();
        assert!((ppl - 10.0).abs() < 1e-9);
        assert!(perplexity(1.0, 0).is_err());
    }
}
