//! FedSGD over the simulated link.
//!
//! Each round every device computes a minibatch gradient at the shared model,
//! the link aggregates the gradients, and every device applies the same
//! momentum update to the broadcast estimate. Device states therefore stay
//! identical and the loop keeps a single parameter vector.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::model::{Model, ModelSpec};
use crate::error::{Error, Result};
use crate::link::{oac_round, LinkConfig};
use crate::rng::{self, Domain};

/// How the codec range `v_max` is chosen each round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VmaxPolicy {
    /// Keep the link's `v_max`; larger coordinates are clipped.
    Fixed,
    /// Use the previous round's largest |gradient| over all devices
    /// (the current round's in round 0).
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub rounds: usize,
    pub model: ModelSpec,
    pub vmax: VmaxPolicy,
    /// Evaluate test accuracy every this many rounds (and after the last).
    pub eval_every: usize,
    /// Final accuracy averages this many trailing evaluations.
    pub final_window: usize,
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 64,
            momentum: 0.9,
            rounds: 200,
            model: ModelSpec::default(),
            vmax: VmaxPolicy::Fixed,
            eval_every: 10,
            final_window: 3,
        }
    }
}

impl LearningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be positive (η > 0)"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        if self.eval_every == 0 || self.final_window == 0 {
            return Err(Error::config("eval_every and final_window must be positive"));
        }
        Ok(())
    }
}

/// Per-round diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    /// Mean minibatch loss over devices at the start of the round.
    pub loss: f64,
    /// `‖ḡ‖₂` of the true average gradient.
    pub grad_norm: f64,
    /// `‖ĝ - ḡ‖₂`.
    pub oac_error: f64,
    /// `‖q̄ - ḡ‖₂`, the error with perfect vote detection.
    pub quantization_error: f64,
    pub clipped: usize,
    pub v_max: f64,
    /// Test accuracy, present on evaluation rounds.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub rounds: Vec<RoundReport>,
    pub final_accuracy: f64,
    pub parameters: usize,
}

/// `g_k = (1/n_b) Σ ∇f(w; x, y)` over each device's batch, computed in parallel.
/// Returns the gradients and the per-device mean losses.
pub fn local_gradients(
    model: &dyn Model,
    w: &[f64],
    data: &Dataset,
    batches: &[Vec<usize>],
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if let Some(k) = batches.iter().position(|b| b.is_empty()) {
        return Err(Error::config(format!("device {k} has an empty batch")));
    }
    let out: Vec<(Vec<f64>, f64)> = batches
        .par_iter()
        .map(|batch| {
            let mut g = vec![0.0; w.len()];
            let mut loss = 0.0;
            for &i in batch {
                loss += model.accumulate(w, data.row(i), data.label(i), &mut g);
            }
            let n = batch.len() as f64;
            g.iter_mut().for_each(|v| *v /= n);
            (g, loss / n)
        })
        .collect();
    Ok(out.into_iter().unzip())
}

/// Draw each device's minibatch for `round` without replacement.
pub fn draw_batches(parts: &[Vec<usize>], batch: usize, round: usize, seed: u64) -> Vec<Vec<usize>> {
    parts
        .iter()
        .enumerate()
        .map(|(k, p)| {
            if batch >= p.len() {
                return p.clone();
            }
            let mut r = rng::stream(seed, Domain::Batch, &[round as u64, k as u64]);
            sample(&mut r, p.len(), batch).into_iter().map(|j| p[j]).collect()
        })
        .collect()
}

pub fn accuracy(model: &dyn Model, w: &[f64], data: &Dataset) -> f64 {
    let hits: usize = (0..data.len())
        .into_par_iter()
        .filter(|&i| model.predict(w, data.row(i)) == data.label(i))
        .count();
    hits as f64 / data.len().max(1) as f64
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// Train for `cfg.rounds` rounds. `parts[k]` lists device `k`'s sample indices.
pub fn train(
    cfg: &LearningConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    parts: &[Vec<usize>],
    link: &LinkConfig,
    seed: u64,
) -> Result<TrainReport> {
    cfg.validate()?;
    crate::error::check_len("devices", link.channel.devices, parts.len())?;
    let model = cfg.model.build(train_set.dim(), train_set.classes())?;
    let mut w = model.init(rng::derive(seed, Domain::Init, 0));
    let mut velocity = vec![0.0; w.len()];
    let mut prev_max: Option<f64> = None;
    let mut rounds = Vec::with_capacity(cfg.rounds);

    for t in 0..cfg.rounds {
        let batches = draw_batches(parts, cfg.batch_size, t, seed);
        let (grads, losses) = local_gradients(model.as_ref(), &w, train_set, &batches)?;
        let loss = losses.iter().sum::<f64>() / losses.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                round: t,
                detail: format!("non-finite training loss {loss}"),
            });
        }
        if let Some(k) = grads.iter().position(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::Divergence {
                round: t,
                detail: format!("non-finite local gradient at device {k}"),
            });
        }
        let max_abs = grads.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut round_link = *link;
        if cfg.vmax == VmaxPolicy::Adaptive {
            let v = prev_max.unwrap_or(max_abs);
            round_link.codec = link.codec.with_v_max(if v > 0.0 { v } else { link.codec.v_max() })?;
        }
        prev_max = Some(max_abs);

        let out = oac_round(&grads, &round_link, rng::derive(seed, Domain::Round, t as u64))?;
        if let Some(q) = out.estimate.iter().position(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                round: t,
                detail: format!("non-finite aggregate at coordinate {q}"),
            });
        }
        for ((v, p), g) in velocity.iter_mut().zip(w.iter_mut()).zip(&out.estimate) {
            *v = cfg.momentum * *v + g;
            *p -= cfg.learning_rate * *v;
        }

        let last = t + 1 == cfg.rounds;
        let acc = ((t + 1) % cfg.eval_every == 0 || last).then(|| accuracy(model.as_ref(), &w, test_set));
        rounds.push(RoundReport {
            round: t,
            loss,
            grad_norm: norm(out.true_average.iter().copied()),
            oac_error: norm(out.estimate.iter().zip(&out.true_average).map(|(a, b)| a - b)),
            quantization_error: norm(out.quantized_average.iter().zip(&out.true_average).map(|(a, b)| a - b)),
            clipped: out.clipped,
            v_max: round_link.codec.v_max(),
            accuracy: acc,
        });
    }

    let evals: Vec<f64> = rounds.iter().filter_map(|r| r.accuracy).collect();
    let tail = &evals[evals.len().saturating_sub(cfg.final_window)..];
    let final_accuracy = if tail.is_empty() {
        accuracy(model.as_ref(), &w, test_set)
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    };
    Ok(TrainReport {
        rounds,
        final_accuracy,
        parameters: model.num_params(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelConfig;
    use crate::codec::BalancedConfig;
    use crate::feel::data::{synthetic_blobs, BlobSpec};
    use crate::feel::model::Mlp;
    use crate::feel::partition::{partition, PartitionMode, PartitionSpec};
    use crate::link::AggregationMode;

    fn small() -> (Dataset, Dataset) {
        let spec = BlobSpec {
            train: 1000,
            test: 300,
            dim: 6,
            classes: 4,
            separation: 1.5,
        };
        synthetic_blobs(&spec, 9).unwrap()
    }

    fn link(devices: usize, mode: AggregationMode) -> LinkConfig {
        let codec = BalancedConfig::new(5, 2, 0.1).unwrap();
        LinkConfig::new(codec, 1200, ChannelConfig::new(devices, 1, 0.01).unwrap()).with_mode(mode)
    }

    #[test]
    fn identical_batches_give_identical_gradients() {
        let (tr, _) = small();
        let m = Mlp::new(6, 5, 4).unwrap();
        let w = m.init(1);
        let b = vec![(0..20).collect::<Vec<_>>(); 3];
        let (g, _) = local_gradients(&m, &w, &tr, &b).unwrap();
        assert_eq!(g[0], g[1]);
        assert_eq!(g[1], g[2]);
        assert!(local_gradients(&m, &w, &tr, &[vec![]]).is_err());
    }

    #[test]
    fn full_batch_equals_local_gradient() {
        let (tr, _) = small();
        let m = Mlp::new(6, 0, 4).unwrap();
        let w = m.init(2);
        let part: Vec<usize> = (0..50).collect();
        let batches = draw_batches(&[part.clone()], 64, 0, 1);
        assert_eq!(batches[0], part);
        let (g, _) = local_gradients(&m, &w, &tr, &batches).unwrap();
        let mut direct = vec![0.0; w.len()];
        for &i in &part {
            m.accumulate(&w, tr.row(i), tr.label(i), &mut direct);
        }
        for (a, b) in g[0].iter().zip(&direct) {
            assert!((a - b / 50.0).abs() < 1e-15);
        }
    }

    #[test]
    fn training_learns_and_is_reproducible() {
        let (tr, te) = small();
        let parts = partition(
            &PartitionSpec {
                mode: PartitionMode::Homogeneous,
                devices: 5,
            },
            tr.labels(),
            4,
            3,
        )
        .unwrap();
        let cfg = LearningConfig {
            learning_rate: 0.05,
            rounds: 30,
            batch_size: 16,
            ..LearningConfig::default()
        };
        let l = link(5, AggregationMode::OverTheAir);
        let a = train(&cfg, &tr, &te, &parts, &l, 11).unwrap();
        let b = train(&cfg, &tr, &te, &parts, &l, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.final_accuracy > 0.6, "accuracy {}", a.final_accuracy);
        for r in &a.rounds {
            assert!(r.oac_error >= 0.0 && r.quantization_error >= 0.0);
        }
    }

    #[test]
    fn bypassed_link_error_is_quantization_error() {
        let (tr, te) = small();
        let parts = partition(
            &PartitionSpec {
                mode: PartitionMode::Homogeneous,
                devices: 4,
            },
            tr.labels(),
            4,
            5,
        )
        .unwrap();
        let cfg = LearningConfig {
            learning_rate: 0.05,
            rounds: 5,
            vmax: VmaxPolicy::Adaptive,
            ..LearningConfig::default()
        };
        let r = train(&cfg, &tr, &te, &parts, &link(4, AggregationMode::Quantized), 2).unwrap();
        assert_eq!(r.rounds[0].clipped, 0);
        for rep in &r.rounds {
            assert!((rep.oac_error - rep.quantization_error).abs() < 1e-12);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let (tr, te) = small();
        let parts = vec![(0..100).collect::<Vec<_>>(), (100..200).collect()];
        let cfg = LearningConfig {
            learning_rate: 1e300,
            rounds: 10,
            momentum: 0.0,
            vmax: VmaxPolicy::Adaptive,
            ..LearningConfig::default()
        };
        let err = train(&cfg, &tr, &te, &parts, &link(2, AggregationMode::Exact), 0).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err:?}");
        assert_eq!(err.exit_code(), 4);
    }
}
