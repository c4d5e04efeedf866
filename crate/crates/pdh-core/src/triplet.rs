//! Triplet sampling, the relaxed hinge triplet loss with its gradients,
//! and the per-network training loop.
//!
//! The loss uses the squared L2 distance on relaxed codes:
//! L(a, p, n) = max(0, margin - (||a-n||^2 - ||a-p||^2)), margin = 1.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::netcore::{HashNet, Tensor};

pub const DEFAULT_MARGIN: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone)]
pub struct TripletBatch {
    pub triplets: Vec<Triplet>,
    pub seed: u64,
}

/// Per-epoch loss summary.
#[derive(Debug, Clone, Copy)]
pub struct LossReport {
    pub mean_loss: f64,
    /// fraction of triplets with a nonzero loss
    pub active_fraction: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub margin: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.05,
            weight_decay: 1e-4,
            margin: DEFAULT_MARGIN,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight decay must be non-negative".into()));
        }
        if !(self.margin > 0.0) {
            return Err(Error::Config("margin must be positive".into()));
        }
        Ok(())
    }
}

/// splitmix64 step, used to derive per-batch sampling seeds.
fn mix_seed(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, epoch: usize, batch: usize) -> u64 {
    mix_seed(base ^ mix_seed(epoch as u64) ^ mix_seed((batch as u64) << 20))
}

/// Draw `count` uniform triplets: anchor uniform over images whose identity
/// has at least one other image, positive uniform over those others,
/// negative uniform over all different-identity images.
pub fn sample_triplets(labels: &[u32], count: usize, seed: u64) -> Result<TripletBatch> {
    if count == 0 {
        return Err(Error::Config("triplet count must be positive".into()));
    }
    let mut by_id: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
    for (i, &id) in labels.iter().enumerate() {
        by_id.entry(id).or_default().push(i);
    }
    let eligible: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|(_, id)| by_id[id].len() >= 2)
        .map(|(i, _)| i)
        .collect();
    if eligible.is_empty() || by_id.len() < 2 {
        return Err(Error::InfeasibleSampling(
            "need at least two identities and one identity with two or more images".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triplets = Vec::with_capacity(count);
    for _ in 0..count {
        let anchor = eligible[rng.gen_range(0..eligible.len())];
        let same = &by_id[&labels[anchor]];
        let positive = loop {
            let p = same[rng.gen_range(0..same.len())];
            if p != anchor {
                break p;
            }
        };
        let negative = loop {
            let n = rng.gen_range(0..labels.len());
            if labels[n] != labels[anchor] {
                break n;
            }
        };
        triplets.push(Triplet { anchor, positive, negative });
    }
    Ok(TripletBatch { triplets, seed })
}

fn check_same_len(a: &[f64], p: &[f64], n: &[f64]) -> Result<()> {
    if a.len() != p.len() || a.len() != n.len() {
        return Err(Error::Dimension(format!(
            "triplet code lengths differ: {} / {} / {}",
            a.len(),
            p.len(),
            n.len()
        )));
    }
    Ok(())
}

fn squared_l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// D(a,n) - D(a,p); the loss hinges on margin minus this.
pub fn inner_term(a: &[f64], p: &[f64], n: &[f64]) -> Result<f64> {
    check_same_len(a, p, n)?;
    Ok(squared_l2(a, n) - squared_l2(a, p))
}

pub fn triplet_loss_margin(a: &[f64], p: &[f64], n: &[f64], margin: f64) -> Result<f64> {
    Ok((margin - inner_term(a, p, n)?).max(0.0))
}

pub fn triplet_loss(a: &[f64], p: &[f64], n: &[f64]) -> Result<f64> {
    triplet_loss_margin(a, p, n, DEFAULT_MARGIN)
}

/// Gradients of the loss w.r.t. (a, p, n). Zero when the hinge is inactive,
/// including exactly at the boundary (subgradient choice).
pub fn triplet_loss_grads_margin(
    a: &[f64],
    p: &[f64],
    n: &[f64],
    margin: f64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    check_same_len(a, p, n)?;
    let q = a.len();
    if margin - inner_term(a, p, n)? <= 0.0 {
        return Ok((vec![0.0; q], vec![0.0; q], vec![0.0; q]));
    }
    let grad_a: Vec<f64> = (0..q).map(|i| 2.0 * (n[i] - p[i])).collect();
    let grad_p: Vec<f64> = (0..q).map(|i| 2.0 * (p[i] - a[i])).collect();
    let grad_n: Vec<f64> = (0..q).map(|i| 2.0 * (a[i] - n[i])).collect();
    Ok((grad_a, grad_p, grad_n))
}

pub fn triplet_loss_grads(
    a: &[f64],
    p: &[f64],
    n: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    triplet_loss_grads_margin(a, p, n, DEFAULT_MARGIN)
}

/// A labeled training set of flattened images.
pub struct TrainSet<'a> {
    pub samples: &'a [Vec<f64>],
    pub labels: &'a [u32],
}

impl<'a> TrainSet<'a> {
    pub fn new(samples: &'a [Vec<f64>], labels: &'a [u32]) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} samples but {} labels",
                samples.len(),
                labels.len()
            )));
        }
        Ok(TrainSet { samples, labels })
    }
}

/// Train `net` in place with uniform triplet batches; returns the per-epoch
/// loss history. Fully deterministic given the net seed and config seed.
pub fn train_hashnet(
    net: &mut HashNet,
    set: &TrainSet,
    config: &TrainConfig,
) -> Result<Vec<LossReport>> {
    config.validate()?;
    if set.samples.is_empty() {
        return Err(Error::InfeasibleSampling("empty training set".into()));
    }
    // surface infeasible label sets before the first epoch
    sample_triplets(set.labels, 1, config.seed)?;

    let feat = net.input_dims().flat_len();
    for (i, s) in set.samples.iter().enumerate() {
        if s.len() != feat {
            return Err(Error::Dimension(format!(
                "sample {i} has {} values, network expects {feat}",
                s.len()
            )));
        }
    }

    let q = net.hash_bits();
    let batches = set.samples.len().div_ceil(config.batch_size);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut loss_sum = 0.0;
        let mut active = 0usize;
        let mut total = 0usize;
        for batch_idx in 0..batches {
            let seed = derive_seed(config.seed, epoch, batch_idx);
            let batch = sample_triplets(set.labels, config.batch_size, seed)?;
            let b = batch.triplets.len();

            // rows [0,b) anchors, [b,2b) positives, [2b,3b) negatives
            let mut data = Vec::with_capacity(3 * b * feat);
            for pick in [|t: &Triplet| t.anchor, |t: &Triplet| t.positive, |t: &Triplet| t.negative]
            {
                for t in &batch.triplets {
                    data.extend_from_slice(&set.samples[pick(t)]);
                }
            }
            let input = Tensor::new(vec![3 * b, feat], data)?;
            let out = net.forward_training(&input)?;
            let rows = out.data();

            let mut grad = Tensor::zeros(vec![3 * b, q]);
            let scale = 1.0 / b as f64;
            for i in 0..b {
                let a = &rows[i * q..(i + 1) * q];
                let p = &rows[(b + i) * q..(b + i + 1) * q];
                let n = &rows[(2 * b + i) * q..(2 * b + i + 1) * q];
                let loss = triplet_loss_margin(a, p, n, config.margin)?;
                if !loss.is_finite() {
                    return Err(Error::Divergence(format!(
                        "non-finite triplet loss in epoch {epoch}"
                    )));
                }
                loss_sum += loss;
                total += 1;
                if loss > 0.0 {
                    active += 1;
                }
                let (ga, gp, gn) = triplet_loss_grads_margin(a, p, n, config.margin)?;
                let g = grad.data_mut();
                for j in 0..q {
                    g[i * q + j] = ga[j] * scale;
                    g[(b + i) * q + j] = gp[j] * scale;
                    g[(2 * b + i) * q + j] = gn[j] * scale;
                }
            }
            let grads = net.backward(&grad)?;
            net.sgd_step(&grads, config.learning_rate, config.weight_decay)?;
        }
        let report = LossReport {
            mean_loss: loss_sum / total as f64,
            active_fraction: active as f64 / total as f64,
        };
        if !report.mean_loss.is_finite() {
            return Err(Error::Divergence(format!("non-finite mean loss in epoch {epoch}")));
        }
        history.push(report);
    }
    Ok(history)
}

/// Loss history as CSV: epoch, mean_loss, active_fraction.
pub fn loss_history_csv(history: &[LossReport]) -> String {
    let mut out = String::from("epoch,mean_loss,active_fraction\n");
    for (i, r) in history.iter().enumerate() {
        out.push_str(&format!("{},{:.9},{:.6}\n", i, r.mean_loss, r.active_fraction));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{mlp_arch, Dims, LayerSpec};

    #[test]
    fn loss_hand_cases() {
        let v = [0.3, 0.7];
        assert_eq!(triplet_loss(&v, &v, &v).unwrap(), 1.0);

        // a=p, D(a,n)=1 puts the hinge exactly at zero
        let a = [0.0, 0.0];
        let n = [1.0, 0.0];
        assert_eq!(triplet_loss(&a, &a, &n).unwrap(), 0.0);

        let a = [1.0, 0.0, 0.0, 0.0];
        let p = [0.0, 0.0, 0.0, 0.0];
        let n = [1.0, 1.0, 1.0, 1.0];
        assert_eq!(triplet_loss(&a, &p, &n).unwrap(), 0.0);
        let n2 = [1.0, 1.0, 0.0, 0.0];
        assert_eq!(triplet_loss(&a, &p, &n2).unwrap(), 1.0);
    }

    #[test]
    fn loss_length_mismatch() {
        assert!(matches!(
            triplet_loss(&[0.1], &[0.1, 0.2], &[0.3]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn grads_zero_when_inactive_and_at_coincident_points() {
        let a = [0.0, 0.0];
        let n = [1.0, 1.0];
        let (ga, gp, gn) = triplet_loss_grads(&a, &a, &n).unwrap();
        assert!(ga.iter().chain(&gp).chain(&gn).all(|&g| g == 0.0));

        let v = [0.4, 0.6];
        let (ga, gp, gn) = triplet_loss_grads(&v, &v, &v).unwrap();
        assert!(ga.iter().chain(&gp).chain(&gn).all(|&g| g == 0.0));
    }

    #[test]
    fn grads_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let h = 1e-6;
        for _ in 0..20 {
            let q = 5;
            let mut v: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..q).map(|_| rng.gen::<f64>()).collect())
                .collect();
            if triplet_loss(&v[0], &v[1], &v[2]).unwrap() == 0.0 {
                continue;
            }
            let (ga, gp, gn) = triplet_loss_grads(&v[0], &v[1], &v[2]).unwrap();
            let analytic = [ga, gp, gn];
            for which in 0..3 {
                for i in 0..q {
                    let orig = v[which][i];
                    v[which][i] = orig + h;
                    let up = triplet_loss(&v[0], &v[1], &v[2]).unwrap();
                    v[which][i] = orig - h;
                    let down = triplet_loss(&v[0], &v[1], &v[2]).unwrap();
                    v[which][i] = orig;
                    let fd = (up - down) / (2.0 * h);
                    assert!(
                        (fd - analytic[which][i]).abs() < 1e-6,
                        "fd {fd} vs analytic {}",
                        analytic[which][i]
                    );
                }
            }
        }
    }

    #[test]
    fn inner_term_antisymmetric_in_p_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let v: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..4).map(|_| rng.gen::<f64>()).collect())
                .collect();
            let fwd = inner_term(&v[0], &v[1], &v[2]).unwrap();
            let rev = inner_term(&v[0], &v[2], &v[1]).unwrap();
            assert!((fwd + rev).abs() < 1e-12);
        }
    }

    #[test]
    fn hinge_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let v: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..6).map(|_| rng.gen::<f64>()).collect())
                .collect();
            let loss = triplet_loss(&v[0], &v[1], &v[2]).unwrap();
            let dap = squared_l2(&v[0], &v[1]);
            let dan = squared_l2(&v[0], &v[2]);
            assert!(loss >= 0.0 && loss <= 1.0 + dap + 1e-12);
            if dan >= 1.0 + dap {
                assert_eq!(loss, 0.0);
            }
        }
    }

    #[test]
    fn sampling_only_legal_configuration() {
        let labels = [0, 0, 1];
        let batch = sample_triplets(&labels, 4, 123).unwrap();
        for t in &batch.triplets {
            assert!(t.anchor < 2 && t.positive < 2 && t.anchor != t.positive);
            assert_eq!(t.negative, 2);
        }
    }

    #[test]
    fn sampling_infeasible_without_positive_pair() {
        assert!(matches!(
            sample_triplets(&[0, 1], 1, 0),
            Err(Error::InfeasibleSampling(_))
        ));
        assert!(matches!(
            sample_triplets(&[0, 0, 0], 1, 0),
            Err(Error::InfeasibleSampling(_))
        ));
    }

    #[test]
    fn sampling_deterministic_and_valid() {
        let labels: Vec<u32> = (0..40).map(|i| i / 4).collect();
        let a = sample_triplets(&labels, 100, 7).unwrap();
        let b = sample_triplets(&labels, 100, 7).unwrap();
        assert_eq!(a.triplets, b.triplets);
        for t in &a.triplets {
            assert_eq!(labels[t.anchor], labels[t.positive]);
            assert_ne!(t.anchor, t.positive);
            assert_ne!(labels[t.anchor], labels[t.negative]);
        }
    }

    #[test]
    fn anchor_identities_uniform_within_three_sigma() {
        // 10 identities x 4 images, every image eligible as anchor
        let labels: Vec<u32> = (0..40).map(|i| i / 4).collect();
        let count = 10_000;
        let batch = sample_triplets(&labels, count, 7).unwrap();
        let mut hist = [0usize; 10];
        for t in &batch.triplets {
            hist[labels[t.anchor] as usize] += 1;
        }
        let p = 0.1;
        let mean = count as f64 * p;
        let sigma = (count as f64 * p * (1.0 - p)).sqrt();
        for (id, &h) in hist.iter().enumerate() {
            assert!(
                (h as f64 - mean).abs() <= 3.0 * sigma,
                "identity {id} drawn {h} times, expected {mean} +- {}",
                3.0 * sigma
            );
        }
    }

    fn toy_net(q: usize, feat: usize, seed: u64) -> HashNet {
        HashNet::new(
            Dims::Flat(feat),
            vec![
                LayerSpec::FullyConnected { fan_in: feat, fan_out: 8 },
                LayerSpec::Relu,
                LayerSpec::SigmoidHashHead { fan_in: 8, bits: q },
            ],
            seed,
        )
        .unwrap()
    }

    #[test]
    fn zero_epochs_leaves_parameters_unchanged() {
        let mut net = toy_net(4, 6, 1);
        let before: Vec<_> = net.parameters().to_vec();
        let samples: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 / 8.0; 6]).collect();
        let labels: Vec<u32> = (0..8).map(|i| i / 2).collect();
        let set = TrainSet::new(&samples, &labels).unwrap();
        let config = TrainConfig { epochs: 0, ..Default::default() };
        let history = train_hashnet(&mut net, &set, &config).unwrap();
        assert!(history.is_empty());
        assert_eq!(net.parameters(), before.as_slice());
    }

    #[test]
    fn separable_toy_set_loss_decreases() {
        let mut net = toy_net(4, 6, 3);
        let mut samples = Vec::new();
        let mut labels = Vec::new();
        for i in 0..4 {
            let v = if i < 2 { vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0] } else { vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0] };
            samples.push(v);
            labels.push(i / 2);
        }
        let set = TrainSet::new(&samples, &labels).unwrap();
        let config = TrainConfig { epochs: 20, batch_size: 8, ..Default::default() };
        let history = train_hashnet(&mut net, &set, &config).unwrap();
        assert!(history.last().unwrap().mean_loss < history[0].mean_loss);
    }

    #[test]
    fn identical_identities_pin_loss_at_one() {
        let mut net = toy_net(4, 6, 3);
        let v = vec![0.25; 6];
        let samples = vec![v.clone(), v.clone(), v.clone(), v];
        let labels = vec![0, 0, 1, 1];
        let set = TrainSet::new(&samples, &labels).unwrap();
        let config = TrainConfig { epochs: 5, batch_size: 4, ..Default::default() };
        let history = train_hashnet(&mut net, &set, &config).unwrap();
        for r in history {
            assert!((r.mean_loss - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let samples: Vec<Vec<f64>> = (0..12)
            .map(|i| (0..6).map(|j| ((i * 7 + j * 3) % 10) as f64 / 10.0).collect())
            .collect();
        let labels: Vec<u32> = (0..12).map(|i| i / 3).collect();
        let set = TrainSet::new(&samples, &labels).unwrap();
        let config = TrainConfig { epochs: 3, ..Default::default() };
        let mut net1 = toy_net(4, 6, 9);
        let mut net2 = toy_net(4, 6, 9);
        train_hashnet(&mut net1, &set, &config).unwrap();
        train_hashnet(&mut net2, &set, &config).unwrap();
        assert_eq!(net1.parameters(), net2.parameters());
    }

    #[test]
    fn mlp_arch_shapes_agree() {
        let specs = mlp_arch(3, 8, 4, 16, 12);
        let net = HashNet::new(
            Dims::Spatial { channels: 3, height: 8, width: 4 },
            specs,
            0,
        )
        .unwrap();
        assert_eq!(net.hash_bits(), 12);
    }
}
