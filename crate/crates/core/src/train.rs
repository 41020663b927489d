//! Mini-batch training and evaluation of [`ShredModel`] on sensor datasets.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{mse, AdamConfig};
use crate::error::{Error, Result};
use crate::gyre::{apply_noise, sample_rng, NoiseMode, NoiseSpec, SensorDataset, Split};
use crate::model::{ModelConfig, ShredModel};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Seeds the shuffling and any training-time noise.
    pub seed: u64,
    /// Corruption applied to training inputs on the fly.
    pub train_noise: NoiseSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            adam: AdamConfig::default(),
            seed: 0,
            train_noise: NoiseSpec::clean(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the mini-batch losses seen during the epoch.
    pub train_loss: f64,
    pub val_rmse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub train_rmse: f64,
    pub val_rmse: f64,
}

/// Errors of one split under one noise mode, in standardized target units.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub mode: NoiseMode,
    pub mse: f64,
    pub rmse: f64,
    /// RMSE on the final evaluated step only.
    pub rmse_last: f64,
    /// Mean absolute error per grid point, averaged over samples and steps.
    pub point_abs_error: Vec<f64>,
}

/// Model shape implied by a dataset.
pub fn config_for(ds: &SensorDataset, robust: bool) -> ModelConfig {
    let (i, o) = (ds.header.feature_dim, ds.header.output_dim());
    if robust {
        ModelConfig::rs4d(i, o)
    } else {
        ModelConfig::s4d(i, o)
    }
}

/// Zero-padded inputs (`B·seq_len × features`) and targets
/// (`B·t_eval × points`) of the given samples. With `noise`, the measurement
/// feature of each sample is corrupted from its own seeded stream.
pub fn build_batch(
    ds: &SensorDataset,
    split: Split,
    indices: &[usize],
    noise: Option<(&NoiseSpec, u64, u64)>,
) -> (Array2<f64>, Array2<f64>) {
    let h = &ds.header;
    let (f, out) = (h.feature_dim, h.output_dim());
    let mut x = Array2::zeros((indices.len() * h.seq_len, f));
    let mut y = Array2::zeros((indices.len() * h.t_eval, out));
    for (b, &i) in indices.iter().enumerate() {
        let src = ds.sample_inputs(split, i);
        let mut meas: Vec<f64> = src.iter().step_by(f).map(|v| *v as f64).collect();
        if let Some((spec, seed, purpose)) = noise {
            apply_noise(&mut meas, spec, &mut sample_rng(seed, split, i, purpose));
        }
        for k in 0..h.real_len {
            let row = b * h.seq_len + k;
            x[(row, 0)] = meas[k];
            for c in 1..f {
                x[(row, c)] = src[k * f + c] as f64;
            }
        }
        let tgt = ds.sample_targets(split, i);
        for k in 0..h.t_eval {
            for p in 0..out {
                y[(b * h.t_eval + k, p)] = tgt[k * out + p] as f64;
            }
        }
    }
    (x, y)
}

fn noise_purpose(mode: NoiseMode) -> u64 {
    match mode {
        NoiseMode::Clean => 2,
        NoiseMode::Noisy => 3,
        NoiseMode::Disturbed => 4,
    }
}

fn check_shapes(model: &ShredModel, ds: &SensorDataset) -> Result<()> {
    let c = &model.config;
    if c.input_dim != ds.header.feature_dim || c.output_dim != ds.header.output_dim() {
        return Err(Error::Config(format!(
            "model maps {} features to {} points, dataset has {} and {}",
            c.input_dim,
            c.output_dim,
            ds.header.feature_dim,
            ds.header.output_dim()
        )));
    }
    Ok(())
}

fn nan_diagnostic(model: &ShredModel, what: &str) -> Error {
    let norms: Vec<String> = model
        .tape
        .params()
        .iter()
        .map(|p| {
            let v = p.value.iter().map(|x| x * x).sum::<f64>().sqrt();
            let g = p.grad.iter().map(|x| x * x).sum::<f64>().sqrt();
            format!("{}: |value| {v:.6e} |grad| {g:.6e}", p.name)
        })
        .collect();
    Error::Numerical(format!("{what}; parameter norms:\n{}", norms.join("\n")))
}

/// Evaluates `split` with inputs corrupted per `noise` (noise streams seeded
/// by `noise_seed`).
pub fn evaluate(
    model: &mut ShredModel,
    ds: &SensorDataset,
    split: Split,
    noise: &NoiseSpec,
    noise_seed: u64,
    batch_size: usize,
) -> Result<Evaluation> {
    check_shapes(model, ds)?;
    let h = ds.header;
    let out = h.output_dim();
    let count = ds.split(split).count;
    let mut sq = 0.0;
    let mut sq_last = 0.0;
    let mut abs = vec![0.0; out];
    let indices: Vec<usize> = (0..count).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let corrupt = (noise.mode != NoiseMode::Clean).then_some((noise, noise_seed, noise_purpose(noise.mode)));
        let (x, y) = build_batch(ds, split, chunk, corrupt);
        let p = model.forward(&x, chunk.len(), h.seq_len, h.real_len, h.t_eval)?;
        for (r, (pr, yr)) in p.rows().into_iter().zip(y.rows()).enumerate() {
            let last = r % h.t_eval == h.t_eval - 1;
            for (k, (a, b)) in pr.iter().zip(yr.iter()).enumerate() {
                let d = a - b;
                sq += d * d;
                if last {
                    sq_last += d * d;
                }
                abs[k] += d.abs();
            }
        }
    }
    let n = (count * h.t_eval * out) as f64;
    let mse = sq / n;
    if !mse.is_finite() {
        return Err(nan_diagnostic(model, &format!("non-finite {} error on {}", noise.mode, split.name())));
    }
    for a in abs.iter_mut() {
        *a /= (count * h.t_eval) as f64;
    }
    Ok(Evaluation {
        mode: noise.mode,
        mse,
        rmse: mse.sqrt(),
        rmse_last: (sq_last / (count * out) as f64).sqrt(),
        point_abs_error: abs,
    })
}

/// Trains in place, calling `on_epoch` after every epoch. Aborts with a
/// parameter-norm dump on a non-finite loss.
pub fn train(
    model: &mut ShredModel,
    ds: &SensorDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    check_shapes(model, ds)?;
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let h = ds.header;
    let count = ds.split(Split::Train).count;
    let mut order: Vec<usize> = (0..count).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let clean = NoiseSpec::clean();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let corrupt = (cfg.train_noise.mode != NoiseMode::Clean).then_some((
                &cfg.train_noise,
                cfg.seed ^ ((epoch as u64) << 32 | bi as u64),
                5,
            ));
            let (x, y) = build_batch(ds, Split::Train, chunk, corrupt);
            let p = model.forward(&x, chunk.len(), h.seq_len, h.real_len, h.t_eval)?;
            let (loss, g) = mse(p.as_slice().expect("contiguous"), y.as_slice().expect("contiguous"))?;
            if !loss.is_finite() {
                return Err(nan_diagnostic(model, &format!("non-finite loss at epoch {epoch}, batch {bi}")));
            }
            model.tape.zero_grad();
            model.backward(&Array2::from_shape_vec(p.raw_dim(), g).expect("same shape"))?;
            if !model.tape.all_finite() {
                return Err(nan_diagnostic(model, &format!("non-finite gradient at epoch {epoch}, batch {bi}")));
            }
            model.tape.adam_step(&cfg.adam);
            model.s4dc_update()?;
            total += loss;
            batches += 1;
        }
        let val = evaluate(model, ds, Split::Val, &clean, 0, cfg.batch_size)?;
        let rec = EpochRecord {
            epoch: epoch + 1,
            train_loss: total / batches.max(1) as f64,
            val_rmse: val.rmse,
        };
        on_epoch(&rec);
        epochs.push(rec);
    }
    let train_rmse = evaluate(model, ds, Split::Train, &clean, 0, cfg.batch_size)?.rmse;
    let val_rmse = match epochs.last() {
        Some(r) => r.val_rmse,
        None => evaluate(model, ds, Split::Val, &clean, 0, cfg.batch_size)?.rmse,
    };
    Ok(TrainReport {
        epochs,
        train_rmse,
        val_rmse,
    })
}

/// RMSE of predicting the train-set global target mean everywhere.
pub fn constant_mean_rmse(ds: &SensorDataset, split: Split) -> f64 {
    // targets are standardized with train statistics, so the mean is 0
    let t = &ds.split(split).targets;
    (t.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / t.len() as f64).sqrt()
}

/// RMSE of predicting each grid point's train-set mean.
pub fn point_mean_rmse(ds: &SensorDataset, split: Split) -> f64 {
    let out = ds.header.output_dim();
    let train = &ds.split(Split::Train).targets;
    let mut mean = vec![0.0; out];
    for row in train.chunks(out) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += *v as f64;
        }
    }
    let rows = (train.len() / out) as f64;
    for m in mean.iter_mut() {
        *m /= rows;
    }
    let t = &ds.split(split).targets;
    let sq: f64 = t
        .chunks(out)
        .flat_map(|row| row.iter().zip(&mean).map(|(v, m)| (*v as f64 - m).powi(2)))
        .sum();
    (sq / t.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gyre::{make_dataset, DatasetSpec, GyreParams};
    use crate::init::InitKind;
    use crate::kernel::{discretize_zoh, run_recurrence};

    fn tiny_dataset() -> SensorDataset {
        let spec = DatasetSpec {
            gyre: GyreParams {
                nx: 6,
                ny: 4,
                ..GyreParams::default()
            },
            counts: [24, 8, 8],
            horizon: 0.3,
            dt_sample: 0.005,
            substeps: 4,
            t_eval: 6,
            seq_len: 64,
            seed: 3,
        };
        make_dataset(&spec, &NoiseSpec::clean()).unwrap()
    }

    fn tiny_model(ds: &SensorDataset, robust: bool) -> ShredModel {
        let config = ModelConfig {
            hidden: 6,
            state: 8,
            decoder_hidden: vec![16],
            ..config_for(ds, robust)
        };
        ShredModel::new(config, 11).unwrap()
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 8,
            adam: AdamConfig {
                lr_dense: 3e-3,
                lr_ssm: 1e-3,
                ..AdamConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn batch_layout_and_padding() {
        let ds = tiny_dataset();
        let (x, y) = build_batch(&ds, Split::Val, &[2, 5], None);
        let h = ds.header;
        assert_eq!(x.dim(), (2 * 64, 3));
        assert_eq!(y.dim(), (2 * 6, 24));
        let src = ds.sample_inputs(Split::Val, 5);
        assert_eq!(x[(64 + 10, 1)], src[31] as f64);
        assert!(x.row(64 + h.real_len).iter().all(|v| *v == 0.0));
        assert_eq!(y[(6 + 3, 7)], ds.sample_targets(Split::Val, 5)[3 * 24 + 7] as f64);
    }

    #[test]
    fn training_is_deterministic_and_reproduces_train_rmse() {
        let ds = tiny_dataset();
        let run = || {
            let mut m = tiny_model(&ds, true);
            let mut seen = Vec::new();
            let rep = train(&mut m, &ds, &quick(), |r| seen.push(*r)).unwrap();
            (m, rep, seen)
        };
        let (mut m, a, seen) = run();
        let (_, b, _) = run();
        assert_eq!(a, b);
        assert_eq!(seen, a.epochs);
        assert!(a.epochs.iter().all(|r| r.train_loss.is_finite()));
        let again = evaluate(&mut m, &ds, Split::Train, &NoiseSpec::clean(), 0, 5).unwrap();
        assert!((again.rmse - a.train_rmse).abs() < 1e-6);
        assert!(m.is_stable());
    }

    #[test]
    fn training_lowers_loss() {
        let ds = tiny_dataset();
        let mut m = tiny_model(&ds, false);
        let cfg = TrainConfig { epochs: 8, ..quick() };
        let rep = train(&mut m, &ds, &cfg, |_| {}).unwrap();
        assert!(rep.epochs.last().unwrap().train_loss < rep.epochs[0].train_loss);
    }

    #[test]
    fn disturbance_only_touches_final_step() {
        let ds = tiny_dataset();
        let mut m = tiny_model(&ds, false);
        let clean = evaluate(&mut m, &ds, Split::Test, &NoiseSpec::clean(), 0, 8).unwrap();
        let dist = evaluate(&mut m, &ds, Split::Test, &NoiseSpec::with_mode(NoiseMode::Disturbed), 0, 8).unwrap();
        assert_eq!(clean.point_abs_error.len(), 24);
        assert!(dist.rmse_last != clean.rmse_last);
        // the model is causal, so only the last evaluated step can move
        let d = (dist.mse - clean.mse) * 6.0;
        let dl = dist.rmse_last.powi(2) - clean.rmse_last.powi(2);
        assert!((d - dl).abs() < 1e-9 * (1.0 + dl.abs()));
    }

    #[test]
    fn butterworth_front_layer_damps_final_spike() {
        let ds = tiny_dataset();
        let spike = NoiseSpec::with_mode(NoiseMode::Disturbed);
        let shift = |robust: bool| {
            let mut m = tiny_model(&ds, robust);
            let c = evaluate(&mut m, &ds, Split::Test, &NoiseSpec::clean(), 0, 8).unwrap();
            let d = evaluate(&mut m, &ds, Split::Test, &spike, 0, 8).unwrap();
            (d.rmse_last - c.rmse_last).abs()
        };
        // residues of a filter with relative degree >= 2 sum to zero, so the
        // first kernel tap is tiny
        assert!(shift(true) < 1e-6 * shift(false));
    }

    #[test]
    fn baselines() {
        let ds = tiny_dataset();
        let c = constant_mean_rmse(&ds, Split::Train);
        assert!((c - 1.0).abs() < 1e-4);
        assert!(point_mean_rmse(&ds, Split::Train) <= c + 1e-9);
        assert!(constant_mean_rmse(&ds, Split::Val) > 0.0);
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let ds = tiny_dataset();
        let mut m = ShredModel::new(
            ModelConfig {
                hidden: 2,
                state: 2,
                decoder_hidden: vec![],
                ..ModelConfig::s4d(3, 5)
            },
            0,
        )
        .unwrap();
        assert!(matches!(
            evaluate(&mut m, &ds, Split::Val, &NoiseSpec::clean(), 0, 4),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn trained_layer_convolution_matches_recurrence() {
        let ds = tiny_dataset();
        let mut m = tiny_model(&ds, true);
        train(&mut m, &ds, &quick(), |_| {}).unwrap();
        assert_eq!(m.config.layers[0], InitKind::Bw);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for layer in 0..2 {
            let sys = m.ssm(layer, 1);
            let u: Vec<f64> = (0..64).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
            let conv = crate::model::ssm_bank_apply(&sys, &u).unwrap();
            let d = discretize_zoh(&sys, sys.dt()).unwrap();
            let rec = run_recurrence(&d, &u).unwrap();
            for (a, b) in conv[0].iter().zip(&rec[0]) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
