use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use anyhow::{anyhow, Context};
use log::info;
use vfl_core::data::{apply_minmax, fit_minmax, synth_generate, write_pgm, write_tabular_csv, SynthConfig};
use vfl_core::eval::{loadings_csv, metrics_csv, pca2, projections_csv, ConfusionMatrix, MetricsRecord};
use vfl_core::protocol::{guest_session, host_session, loopback_pair, Tcp};
use vfl_core::train::standalone;

use crate::exit::{CmdResult, OrExit, DATA, TRANSPORT, USAGE};
use crate::job::{load_image_set, load_tabular, JobConfig};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const PROJECTIONS_FILE: &str = "pca_projections.csv";
pub const LOADINGS_FILE: &str = "pca_loadings.csv";

fn write(path: &Path, contents: &str) -> CmdResult {
    fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .or_exit(DATA)
}

fn create_dir(path: &Path) -> CmdResult {
    fs::create_dir_all(path)
        .with_context(|| format!("creating {}", path.display()))
        .or_exit(DATA)
}

/// Metrics CSV always; the confusion matrix only if an epoch ran.
fn write_results(dir: &Path, metrics: &[MetricsRecord], confusion: Option<&ConfusionMatrix>) -> CmdResult {
    create_dir(dir)?;
    write(&dir.join(METRICS_FILE), &metrics_csv(metrics))?;
    if let Some(cm) = confusion {
        write(&dir.join(CONFUSION_FILE), &cm.to_csv())?;
    }
    info!("results written to {}", dir.display());
    Ok(())
}

pub fn gen_data(seed: u64, n_per_class: usize, image_size: usize, out: &Path) -> CmdResult {
    let cfg = SynthConfig {
        seed,
        n_per_class,
        image_size,
        ..SynthConfig::default()
    };
    let (tab, img) = synth_generate(&cfg).or_exit(USAGE)?;
    let images_dir = out.join("images");
    create_dir(&images_dir)?;
    write_tabular_csv(&out.join("tabular.csv"), &tab).or_exit(DATA)?;
    let mut manifest = String::from("id,path\n");
    let plane = image_size * image_size;
    for (i, id) in img.ids.iter().enumerate() {
        let rel = format!("images/{id}.pgm");
        write_pgm(&out.join(&rel), &img.images.data()[i * plane..(i + 1) * plane], image_size, image_size)
            .or_exit(DATA)?;
        manifest.push_str(&format!("{id},{rel}\n"));
    }
    write(&out.join("manifest.csv"), &manifest)?;
    println!(
        "wrote {} samples ({n_per_class} per class, {} classes), {} tabular features, {image_size}x{image_size} images to {}",
        tab.len(),
        cfg.classes,
        tab.num_features(),
        out.display()
    );
    Ok(())
}

pub fn guest(job: &JobConfig, listen: Option<&str>) -> CmdResult {
    let tabular = load_tabular(job).or_exit(DATA)?;
    let addr = listen.unwrap_or(&job.transport.guest_listen);
    info!("guest waiting for the host on {addr}");
    let transport = Tcp::listen(addr, job.transport.timeout()).or_exit(TRANSPORT)?;
    let run = guest_session(transport, &job.session, &tabular, |_, _, _| {})?;
    write_results(&job.output.dir, &run.outcome.metrics, run.outcome.confusion.as_ref())
}

pub fn host(job: &JobConfig, connect: Option<&str>) -> CmdResult {
    let images = load_image_set(job).or_exit(DATA)?;
    let addr = connect.unwrap_or(&job.transport.host_connect);
    info!("host connecting to the guest at {addr}");
    let transport = Tcp::connect(addr, job.transport.timeout()).or_exit(TRANSPORT)?;
    let run = host_session(transport, &job.session, &images, |_, _, _| {})?;
    info!(
        "host finished: {} epochs, {} training rows",
        run.metrics.len(),
        run.partition.train.len()
    );
    Ok(())
}

pub fn standalone_cmd(job: &JobConfig, param_digests: Option<&Path>) -> CmdResult {
    let tabular = load_tabular(job).or_exit(DATA)?;
    let images = load_image_set(job).or_exit(DATA)?;
    let mut digests = String::from("epoch,batch,image_bottom,tabular_bottom,interactive,top\n");
    let track = param_digests.is_some();
    let run = standalone(&job.session, &tabular, &images, |epoch, batch, model| {
        if track {
            let s = model.to_split().expect("reference parameters split cleanly");
            digests.push_str(&format!(
                "{epoch},{batch},{},{},{},{}\n",
                hex::encode(s.image_bottom.digest()),
                hex::encode(s.tabular_bottom.digest()),
                hex::encode(s.interactive.digest()),
                hex::encode(s.top.digest())
            ));
        }
    })?;
    if let Some(path) = param_digests {
        write(path, &digests)?;
    }
    write_results(&job.output.dir, &run.outcome.metrics, run.outcome.confusion.as_ref())
}

/// Both parties in one process over an in-memory transport.
pub fn loopback(job: &JobConfig) -> CmdResult {
    let tabular = load_tabular(job).or_exit(DATA)?;
    let images = load_image_set(job).or_exit(DATA)?;
    let (host_end, guest_end) = loopback_pair(job.transport.timeout());
    let cfg = job.session.clone();
    let host = thread::spawn(move || host_session(host_end, &cfg, &images, |_, _, _| {}).map(|_| ()));
    let guest = guest_session(guest_end, &job.session, &tabular, |_, _, _| {});
    let host = host.join().map_err(|_| anyhow!("host thread panicked")).or_exit(DATA)?;
    let run = guest?;
    host?;
    write_results(&job.output.dir, &run.outcome.metrics, run.outcome.confusion.as_ref())
}

/// Min-max scales every row, then writes PC scores and loadings.
pub fn analyze(job: &JobConfig, pca_out: Option<PathBuf>) -> CmdResult {
    let tabular = load_tabular(job).or_exit(DATA)?;
    let scaled = fit_minmax(&tabular)
        .and_then(|s| apply_minmax(&s, &tabular))
        .or_exit(DATA)?;
    let pca = pca2(&scaled.features).or_exit(DATA)?;
    let dir = pca_out.unwrap_or_else(|| job.output.dir.clone());
    create_dir(&dir)?;
    write(&dir.join(PROJECTIONS_FILE), &projections_csv(&scaled.ids, &pca))?;
    write(&dir.join(LOADINGS_FILE), &loadings_csv(&scaled.feature_names, &pca))?;
    println!(
        "explained variance {:.6} / {:.6}; wrote {} and {} to {}",
        pca.explained_variance[0],
        pca.explained_variance[1],
        PROJECTIONS_FILE,
        LOADINGS_FILE,
        dir.display()
    );
    Ok(())
}
