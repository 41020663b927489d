//! Subcommand implementations. Each writes its reports and a manifest of
//! the resolved configuration into `out_dir`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use s4sense::autodiff::read_checkpoint;
use s4sense::gyre::{make_dataset, read_dataset, read_dataset_header, write_dataset, NoiseMode, SensorDataset, Split};
use s4sense::hippo::{build_hippo, nplr_decompose, to_dplr};
use s4sense::init::{bode_grid, bode_response, h2_norm, init_diagonal, InitKind, InitSpec};
use s4sense::kernel::{
    discretize_bilinear, dplr_c_tilde, kernel_dplr_genfun, kernel_naive, kernel_vandermonde, ContinuousSsm,
};
use s4sense::model::ShredModel;
use s4sense::numerics::{CMatrix, Complex};
use s4sense::train::{constant_mean_rmse, evaluate, point_mean_rmse, train};
use s4sense::{Error, Result};

use crate::config::RunConfig;

/// Schema version of the plain-text metrics reports.
pub const REPORT_SCHEMA: u32 = 1;

/// Whether every checked tolerance held.
pub type Passed = bool;

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn prepare(cfg: &RunConfig, command: &str) -> Result<PathBuf> {
    let dir = cfg.out_dir();
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    write_file(&dir.join(format!("{command}.manifest")), &cfg.manifest(command))?;
    Ok(dir)
}

fn split_of(name: &str) -> Result<Split> {
    Split::ALL
        .into_iter()
        .find(|s| s.name() == name)
        .ok_or_else(|| Error::Config(format!("key 'eval_split': unknown split '{name}'")))
}

pub fn gen_data(cfg: &RunConfig) -> Result<Passed> {
    prepare(cfg, "gen-data")?;
    let spec = cfg.dataset_spec()?;
    let ds = make_dataset(&spec, &cfg.noise("noise_mode")?)?;
    let path = cfg.path("data");
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    write_dataset(&path, &ds)?;
    emit(&format!("wrote {}\n{}\n", path.display(), ds.header));
    Ok(true)
}

pub fn describe(path: &Path) -> Result<Passed> {
    emit(&format!("{}\n", read_dataset_header(path)?));
    Ok(true)
}

pub fn kernel_check(cfg: &RunConfig) -> Result<Passed> {
    let dir = prepare(cfg, "kernel-check")?;
    let tol_v: f64 = cfg.get("kc_tol_vandermonde")?;
    let tol_g: f64 = cfg.get("kc_tol_genfun")?;
    let seed: u64 = cfg.get("seed")?;
    let mut csv = String::from("n,L,init,path_a,path_b,max_abs_diff\n");
    let mut ok = true;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for kind in cfg.list::<InitKind>("kc_inits")? {
        for n in cfg.list::<usize>("kc_sizes")? {
            for l in cfg.list::<usize>("kc_lengths")? {
                let sys = init_diagonal(&InitSpec::new(kind, n), &mut rng)?;
                let d = discretize_bilinear(&ContinuousSsm::from(&sys), sys.dt())?;
                let diff = kernel_naive(&d, l)?.max_abs_diff(&kernel_vandermonde(&d, l)?);
                ok &= diff < tol_v;
                let _ = writeln!(csv, "{n},{l},{},vandermonde,naive,{diff:.6e}", kind.name());
            }
        }
    }
    for n in cfg.list::<usize>("kc_dplr_sizes")? {
        for l in cfg.list::<usize>("kc_dplr_lengths")? {
            let mut sys = to_dplr(&nplr_decompose(&build_hippo(n)?))?;
            sys.c = CMatrix::from_fn(1, n, |_, _| {
                Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            });
            let dt = 1e-2;
            let naive = kernel_naive(&discretize_bilinear(&ContinuousSsm::from(&sys), dt)?, l)?;
            let mut gen = sys.clone();
            gen.c = dplr_c_tilde(&sys, dt, l)?;
            let diff = naive.max_abs_diff(&kernel_dplr_genfun(&gen, dt, l)?);
            ok &= diff < tol_g;
            let _ = writeln!(csv, "{n},{l},hippo_dplr,genfun,naive,{diff:.6e}");
        }
    }
    write_file(&dir.join("kernel_check.csv"), &csv)?;
    emit(&csv);
    emit(if ok { "kernel-check: all paths agree\n" } else { "kernel-check: tolerance violated\n" });
    Ok(ok)
}

fn load_data(cfg: &RunConfig) -> Result<SensorDataset> {
    read_dataset(&cfg.path("data"))
}

/// Builds the configured model with the input/output sizes stored in the
/// checkpoint and loads its parameters.
fn load_model(cfg: &RunConfig) -> Result<ShredModel> {
    let path = cfg.path("checkpoint");
    let blocks = read_checkpoint(&path)?;
    let dims = |name: &str| {
        blocks
            .iter()
            .find(|b| b.name == name)
            .map(|b| b.shape.clone())
            .ok_or_else(|| Error::Config(format!("checkpoint {} has no block {name}", path.display())))
    };
    let input_dim = dims("enc.w")?[1];
    let last = blocks
        .iter()
        .filter(|b| b.name.starts_with("dec") && b.name.ends_with(".w"))
        .next_back()
        .ok_or_else(|| Error::Config(format!("checkpoint {} has no decoder", path.display())))?;
    let mut model = ShredModel::new(cfg.model_config(input_dim, last.shape[0])?, cfg.get("seed")?)?;
    model.tape.load(&path)?;
    Ok(model)
}

fn layer_summary(model: &ShredModel) -> Result<String> {
    let mut s = String::new();
    for (li, h2) in model.layer_h2()?.iter().enumerate() {
        let _ = writeln!(s, "layer{li}_{}_mean_h2 = {h2:.9e}", model.config.layers[li].name());
    }
    Ok(s)
}

pub fn train_cmd(cfg: &RunConfig) -> Result<Passed> {
    let start = Instant::now();
    let dir = prepare(cfg, "train")?;
    let ds = load_data(cfg)?;
    let config = cfg.model_config(ds.header.feature_dim, ds.header.output_dim())?;
    let mut model = ShredModel::new(config, cfg.get("seed")?)?;
    let tc = cfg.train_config()?;
    let mut csv = String::from("epoch,train_loss,val_rmse\n");
    let report = train(&mut model, &ds, &tc, |r| {
        emit(&format!("epoch {:>3}  train_loss {:.6e}  val_rmse {:.6e}\n", r.epoch, r.train_loss, r.val_rmse));
        let _ = writeln!(csv, "{},{:.12e},{:.12e}", r.epoch, r.train_loss, r.val_rmse);
    })?;
    write_file(&dir.join("loss.csv"), &csv)?;
    model.tape.save(&cfg.path("checkpoint"))?;
    let mut m = format!("schema = {REPORT_SCHEMA}\ncommand = train\nmodel = {}\n", cfg.raw("model"));
    let _ = writeln!(m, "epochs = {}", report.epochs.len());
    let _ = writeln!(m, "train_rmse = {:.9e}", report.train_rmse);
    let _ = writeln!(m, "val_rmse = {:.9e}", report.val_rmse);
    let _ = writeln!(m, "val_constant_mean_rmse = {:.9e}", constant_mean_rmse(&ds, Split::Val));
    let _ = writeln!(m, "val_point_mean_rmse = {:.9e}", point_mean_rmse(&ds, Split::Val));
    m.push_str(&layer_summary(&model)?);
    write_file(&dir.join("train_metrics.txt"), &m)?;
    emit(&m);
    eprintln!("wall_clock_s = {:.3}", start.elapsed().as_secs_f64());
    Ok(true)
}

pub fn eval_cmd(cfg: &RunConfig) -> Result<Passed> {
    let start = Instant::now();
    let dir = prepare(cfg, "eval")?;
    let ds = load_data(cfg)?;
    let mut model = load_model(cfg)?;
    let split = split_of(cfg.raw("eval_split"))?;
    let seed: u64 = cfg.get("seed")?;
    let batch: usize = cfg.get("batch_size")?;
    let base = cfg.noise("noise_mode")?;
    let mut evals = Vec::new();
    for mode in NoiseMode::ALL {
        let spec = s4sense::gyre::NoiseSpec { mode, ..base };
        evals.push(evaluate(&mut model, &ds, split, &spec, seed, batch)?);
    }
    let mut csv = String::from("mode,rmse,rmse_last,mse\n");
    for e in &evals {
        let _ = writeln!(csv, "{},{:.9e},{:.9e},{:.9e}", e.mode, e.rmse, e.rmse_last, e.mse);
    }
    write_file(&dir.join("eval.csv"), &csv)?;
    let h = ds.header;
    let mut hist = String::from("point,x,y");
    for e in &evals {
        let _ = write!(hist, ",{}", e.mode);
    }
    hist.push('\n');
    for i in 0..h.nx {
        for j in 0..h.ny {
            let p = i * h.ny + j;
            let x = 2.0 * i as f64 / (h.nx - 1) as f64;
            let y = j as f64 / (h.ny - 1) as f64;
            let _ = write!(hist, "{p},{x:.6},{y:.6}");
            for e in &evals {
                let _ = write!(hist, ",{:.9e}", e.point_abs_error[p]);
            }
            hist.push('\n');
        }
    }
    write_file(&dir.join("abs_error_hist.csv"), &hist)?;
    let mut m = format!("schema = {REPORT_SCHEMA}\ncommand = eval\nsplit = {}\n", split.name());
    for e in &evals {
        let _ = writeln!(m, "{}_rmse = {:.9e}", e.mode, e.rmse);
        let _ = writeln!(m, "{}_rmse_last = {:.9e}", e.mode, e.rmse_last);
    }
    let _ = writeln!(m, "constant_mean_rmse = {:.9e}", constant_mean_rmse(&ds, split));
    let _ = writeln!(m, "point_mean_rmse = {:.9e}", point_mean_rmse(&ds, split));
    m.push_str(&layer_summary(&model)?);
    write_file(&dir.join("eval_metrics.txt"), &m)?;
    emit(&m);
    eprintln!("wall_clock_s = {:.3}", start.elapsed().as_secs_f64());
    Ok(true)
}

fn h2_rows(model: &ShredModel) -> Result<(String, String)> {
    let mut per = String::from("layer_index,ssm_index,h2\n");
    let mut mean = String::from("layer_index,init,mean_h2\n");
    for li in 0..model.num_layers() {
        let mut acc = 0.0;
        for h in 0..model.config.hidden {
            let v = h2_norm(&model.ssm(li, h))?.norm_sq;
            acc += v;
            let _ = writeln!(per, "{li},{h},{v:.9e}");
        }
        let _ = writeln!(
            mean,
            "{li},{},{:.9e}",
            model.config.layers[li].name(),
            acc / model.config.hidden as f64
        );
    }
    Ok((per, mean))
}

pub fn bode_cmd(cfg: &RunConfig) -> Result<Passed> {
    let dir = prepare(cfg, "bode")?;
    let model = load_model(cfg)?;
    let grid = bode_grid(cfg.get("bode_lo")?, cfg.get("bode_hi")?, cfg.get("bode_per_decade")?)?;
    let ch = model.config.channels;
    let mut csv = String::from("omega,magnitude_db,phase_deg,layer_index,ssm_index\n");
    let mut eig = String::from("layer_index,ssm_index,state_index,re,im\n");
    for li in 0..model.num_layers() {
        for h in 0..model.config.hidden {
            let sys = model.ssm(li, h);
            for c in 0..ch {
                for s in bode_response(&sys, c, &grid)? {
                    let _ = writeln!(
                        csv,
                        "{:.9e},{:.9e},{:.9e},{li},{}",
                        s.omega,
                        s.magnitude_db,
                        s.phase_deg,
                        h * ch + c
                    );
                }
            }
            for (k, a) in sys.a.iter().enumerate() {
                let _ = writeln!(eig, "{li},{h},{k},{:.12e},{:.12e}", a.re, a.im);
            }
        }
    }
    let (_, mean) = h2_rows(&model)?;
    write_file(&dir.join("bode.csv"), &csv)?;
    write_file(&dir.join("eigenvalues.csv"), &eig)?;
    write_file(&dir.join("h2_mean.csv"), &mean)?;
    emit(&mean);
    Ok(true)
}

pub fn h2_report(cfg: &RunConfig) -> Result<Passed> {
    let dir = prepare(cfg, "h2-report")?;
    let model = load_model(cfg)?;
    let (per, mean) = h2_rows(&model)?;
    write_file(&dir.join("h2_report.csv"), &per)?;
    write_file(&dir.join("h2_mean.csv"), &mean)?;
    emit(&mean);
    Ok(true)
}
