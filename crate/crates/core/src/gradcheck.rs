//! Finite-difference certification of every differentiable path on randomly
//! drawn configurations.
//!
//! A draw whose ReLU pre-activations come within `KINK_MARGIN` of zero is
//! discarded and redrawn, because central differences straddling a kink do
//! not estimate the one-sided derivative. Draws whose gradient is too small for
//! central differences to resolve are redrawn as well; see `resolvable`.

use rand::Rng as _;

use crate::encoding::{va_loss_and_grad, VaEncoder, VaPair};
use crate::hypernet::{HyperSpec, Hypernet};
use crate::learner::{td_loss_and_grad_with_targets, LearnerParams, QNet, Transition};
use crate::memory::{aux_kink_margin, retrieval_aux_loss, EpisodicMemory, Metric, RetrievalParams};
use crate::numerics::{finite_diff_grad, mlp_backward, mlp_forward, relative_error, Activation, MlpSpec, OutputHead};
use crate::rng::{self, Rng};
use crate::{MrdgError, Result};

pub const PATHS: [&str; 4] = ["mlp", "va_loss", "retrieval_aux_loss", "hypernet_td"];
pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;
pub const KINK_MARGIN: f64 = 1e-4;
const MAX_REDRAWS: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct PathReport {
    pub path: String,
    pub trials: usize,
    pub redraws: usize,
    pub worst_error: f64,
}

impl PathReport {
    pub fn passed(&self) -> bool {
        self.worst_error < TOLERANCE
    }
}

/// Whether central differences at `STEP` resolve a gradient this small: the
/// roundoff of the estimate, `eps * max(|loss|, 1) * sqrt(P) / STEP` in norm,
/// must stay below a tenth of `TOLERANCE` relative to the gradient norm.
fn resolvable(loss: f64, grad: &[f64]) -> bool {
    let roundoff = f64::EPSILON * loss.abs().max(1.0) * (grad.len() as f64).sqrt() / STEP;
    let norm = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
    roundoff <= 0.1 * TOLERANCE * norm
}

fn uniform_vec(r: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()
}

fn activation(r: &mut Rng) -> Activation {
    [Activation::Relu, Activation::Tanh, Activation::Identity][r.gen_range(0..3)]
}

fn random_spec(r: &mut Rng, input: usize, output: usize, act: Activation, head: OutputHead) -> Result<MlpSpec> {
    let mut sizes = vec![input];
    for _ in 0..r.gen_range(1..=3) {
        sizes.push(r.gen_range(1..=6));
    }
    sizes.push(output);
    MlpSpec::new(sizes, act, head)
}

/// One trial: `Ok(Some(err))`, or `Ok(None)` when the draw must be redrawn.
fn trial(path: &str, r: &mut Rng) -> Result<Option<f64>> {
    match path {
        "mlp" => {
            let act = activation(r);
            let head = if r.gen_bool(0.5) { OutputHead::Linear } else { OutputHead::Softmax };
            let input_w = r.gen_range(1..=5);
            let out_w = r.gen_range(1..=4);
            let spec = random_spec(r, input_w, out_w, act, head)?;
            let params = uniform_vec(r, spec.param_count());
            let x = uniform_vec(r, input_w);
            let up = uniform_vec(r, spec.output_width());
            let (_, tape) = mlp_forward(&spec, &params, &x)?;
            if tape.kink_margin(act) < KINK_MARGIN {
                return Ok(None);
            }
            let (pg, ig) = mlp_backward(&spec, &params, &tape, &up)?;
            let dot = |o: Vec<f64>| o.iter().zip(&up).map(|(a, b)| a * b).sum::<f64>();
            let mut analytic = pg;
            analytic.extend(ig);
            if !resolvable(dot(tape.output().to_vec()), &analytic) {
                return Ok(None);
            }
            let mut joint = params.clone();
            joint.extend(&x);
            let fd = finite_diff_grad(
                |z| dot(mlp_forward(&spec, &z[..params.len()], &z[params.len()..]).expect("shapes fixed").0),
                &joint,
                STEP,
            )?;
            Ok(Some(relative_error(&analytic, &fd)))
        }
        "va_loss" => {
            let act = activation(r);
            let obs_w = r.gen_range(1..=6);
            let out_w = r.gen_range(1..=4);
            let spec = random_spec(r, obs_w, out_w, act, OutputHead::Linear)?;
            let enc = VaEncoder::new(1, spec.clone(), uniform_vec(r, spec.param_count()))?;
            let batch: Vec<VaPair> = (0..r.gen_range(1..=4))
                .map(|_| (uniform_vec(r, obs_w), uniform_vec(r, obs_w)))
                .collect();
            for (a, b) in &batch {
                for o in [a, b] {
                    if mlp_forward(&spec, &enc.params, o)?.1.kink_margin(act) < KINK_MARGIN {
                        return Ok(None);
                    }
                }
            }
            let (loss, g) = va_loss_and_grad(&enc, &batch)?;
            if !resolvable(loss, &g) {
                return Ok(None);
            }
            let fd = finite_diff_grad(
                |p| {
                    let e = VaEncoder { params: p.to_vec(), ..enc.clone() };
                    va_loss_and_grad(&e, &batch).expect("shapes fixed").0
                },
                &enc.params,
                STEP,
            )?;
            Ok(Some(relative_error(&g, &fd)))
        }
        "retrieval_aux_loss" => {
            let act = if r.gen_bool(0.5) { Activation::Relu } else { Activation::Tanh };
            let emb_w = r.gen_range(1..=5);
            let out_w = r.gen_range(1..=4);
            let spec = random_spec(r, emb_w, out_w, act, OutputHead::Linear)?;
            let metric = if r.gen_bool(0.5) { Metric::Euclidean } else { Metric::Cosine };
            let retr = RetrievalParams::new(spec.clone(), uniform_vec(r, spec.param_count()), metric)?;
            let n_actions = r.gen_range(2..=4);
            let mut memory = EpisodicMemory::new(emb_w, 64)?;
            for t in 0..r.gen_range(1..=8) {
                memory.append(2, uniform_vec(r, emb_w), r.gen_range(0..n_actions), t)?;
            }
            let query = uniform_vec(r, emb_w);
            let max_entries = r.gen_range(1..=8);
            if aux_kink_margin(&retr, &memory, 2, &query, max_entries)? < KINK_MARGIN {
                return Ok(None);
            }
            if metric == Metric::Cosine {
                // The cosine distance is not differentiable at a zero projection.
                let too_small = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-3;
                if too_small(&retr.project(&query)?) {
                    return Ok(None);
                }
                for e in memory.entries(2) {
                    if too_small(&retr.project(&e.embedding)?) {
                        return Ok(None);
                    }
                }
            }
            let action = r.gen_range(0..n_actions);
            let (loss, g) = retrieval_aux_loss(&retr, &memory, 2, &query, action, n_actions, max_entries)?;
            // Nearly flat draws (a single stored action, collinear projections
            // under the cosine metric) are common on this path.
            if !resolvable(loss, &g) {
                return Ok(None);
            }
            let fd = finite_diff_grad(
                |p| {
                    let rp = RetrievalParams { params: p.to_vec(), ..retr.clone() };
                    retrieval_aux_loss(&rp, &memory, 2, &query, action, n_actions, max_entries)
                        .expect("shapes fixed")
                        .0
                },
                &retr.params,
                STEP,
            )?;
            Ok(Some(relative_error(&g, &fd)))
        }
        "hypernet_td" => {
            let act = if r.gen_bool(0.5) { Activation::Relu } else { Activation::Tanh };
            let obs_w = r.gen_range(1..=5);
            let n_actions = r.gen_range(2..=3);
            let sizes = vec![obs_w, r.gen_range(1..=5), r.gen_range(1..=5), n_actions];
            let q_spec = MlpSpec::new(sizes, act, OutputHead::Linear)?;
            let lp = LearnerParams::init(q_spec, &[1], r.gen())?;
            let agg_w = 2 * r.gen_range(1..=2);
            let hs = HyperSpec {
                input_width: agg_w,
                hidden: vec![r.gen_range(1..=5), r.gen_range(1..=5)],
                output_width: lp.hype_len(),
            };
            let h_spec = hs.mlp()?;
            let hyper = Hypernet::new(h_spec.clone(), uniform_vec(r, h_spec.param_count()))?;
            let online = QNet::new(lp, Some(hyper))?;
            let aggs: Vec<Vec<f64>> = (0..r.gen_range(1..=3)).map(|_| uniform_vec(r, agg_w)).collect();
            let batch: Vec<Transition> = (0..r.gen_range(1..=6))
                .map(|_| {
                    let agg = aggs[r.gen_range(0..aggs.len())].clone();
                    Transition {
                        obs: uniform_vec(r, obs_w),
                        action: r.gen_range(0..n_actions),
                        partner_actions: vec![],
                        reward: r.gen_range(-1.0..4.0),
                        next_obs: uniform_vec(r, obs_w),
                        done: false,
                        hyper_input: agg.clone(),
                        next_hyper_input: agg,
                    }
                })
                .collect();
            let refs: Vec<&Transition> = batch.iter().collect();
            let targets: Vec<f64> = (0..refs.len()).map(|_| r.gen_range(-1.0..4.0)).collect();
            let res = td_loss_and_grad_with_targets(&online, &refs, &targets)?;
            if res.kink_margin < KINK_MARGIN {
                return Ok(None);
            }
            let ranges = online.params.marl_ranges();
            let mut analytic: Vec<f64> = ranges.iter().flat_map(|rg| res.learner_grad[rg.clone()].iter().copied()).collect();
            analytic.extend(res.hyper_grad.clone().expect("hypernet present"));
            if !resolvable(res.loss, &analytic) {
                return Ok(None);
            }
            let m_len = online.params.marl_len();
            let mut x0 = online.params.marl();
            x0.extend(&online.hyper.as_ref().expect("hypernet present").params);
            let fd = finite_diff_grad(
                |x| {
                    let mut net = online.clone();
                    net.params.set_marl(&x[..m_len]).expect("shapes fixed");
                    net.hyper.as_mut().expect("hypernet present").params.copy_from_slice(&x[m_len..]);
                    td_loss_and_grad_with_targets(&net, &refs, &targets).expect("shapes fixed").loss
                },
                &x0,
                STEP,
            )?;
            Ok(Some(relative_error(&analytic, &fd)))
        }
        other => Err(MrdgError::Config(format!("unknown gradient path {other:?}"))),
    }
}

/// Runs `trials` accepted draws of one path.
pub fn check_path(path: &str, seed: u64, trials: usize) -> Result<PathReport> {
    if trials == 0 {
        return Err(MrdgError::Config("gradient check needs at least one trial".into()));
    }
    let mut r = rng::stream(seed, &format!("gradcheck/{path}"));
    let mut worst: f64 = 0.0;
    let mut redraws = 0;
    let mut done = 0;
    while done < trials {
        match trial(path, &mut r)? {
            Some(err) => {
                worst = worst.max(if err.is_nan() { f64::INFINITY } else { err });
                done += 1;
            }
            None => {
                redraws += 1;
                if redraws > MAX_REDRAWS * trials {
                    return Err(MrdgError::Config(format!("{path}: too many draws rejected (kinks or unresolvable gradients)")));
                }
            }
        }
    }
    Ok(PathReport {
        path: path.to_string(),
        trials,
        redraws,
        worst_error: worst,
    })
}

pub fn check_all(seed: u64, trials: usize) -> Result<Vec<PathReport>> {
    PATHS.iter().map(|p| check_path(p, seed, trials)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_path_passes_a_few_trials() {
        let reports = check_all(11, 10).unwrap();
        assert_eq!(reports.len(), 4);
        for r in &reports {
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn zero_trials_is_an_error() {
        assert!(check_path("mlp", 0, 0).is_err());
        assert!(check_path("bogus", 0, 1).is_err());
    }
}
