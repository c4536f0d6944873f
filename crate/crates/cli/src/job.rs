//! Job files: the digested session parameters plus party-local paths and
//! endpoints. Relative paths resolve against the job file's directory.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use vfl_core::config::SessionConfig;
use vfl_core::data::{load_images, load_tabular_csv, ImageDataset, TabularDataset, TabularSchema};

fn default_id_column() -> String {
    "id".into()
}

fn default_label_column() -> String {
    "group".into()
}

fn default_endpoint() -> String {
    "127.0.0.1:47100".into()
}

fn default_timeout() -> f64 {
    30.0
}

fn default_out() -> PathBuf {
    "out".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Tabular CSV (guest, standalone, analyze).
    pub tabular: Option<PathBuf>,
    #[serde(default = "default_id_column")]
    pub id_column: String,
    #[serde(default = "default_label_column")]
    pub label_column: String,
    #[serde(default)]
    pub ignore_columns: Vec<String>,
    /// `id,path` image manifest (host, standalone); image paths resolve
    /// against the manifest's directory.
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportConfig {
    /// Address the guest binds.
    #[serde(default = "default_endpoint")]
    pub guest_listen: String,
    /// Address the host dials.
    #[serde(default = "default_endpoint")]
    pub host_connect: String,
    /// Connect, accept and per-message timeout.
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            guest_listen: default_endpoint(),
            host_connect: default_endpoint(),
            timeout_secs: default_timeout(),
        }
    }
}

impl TransportConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_out() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    /// Only this table takes part in the handshake digest.
    pub session: SessionConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub transport: TransportConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl JobConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut job: JobConfig = toml::from_str(text)?;
        job.session.validate()?;
        if !(job.transport.timeout_secs > 0.0 && job.transport.timeout_secs.is_finite()) {
            bail!("transport.timeout_secs must be positive");
        }
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = job.data.tabular.as_mut() {
            resolve(p);
        }
        if let Some(p) = job.data.manifest.as_mut() {
            resolve(p);
        }
        resolve(&mut job.output.dir);
        Ok(job)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).with_context(|| format!("invalid job file {}", path.display()))
    }

    pub fn tabular_path(&self) -> Result<&Path> {
        self.data.tabular.as_deref().context("job file has no data.tabular")
    }

    pub fn manifest_path(&self) -> Result<&Path> {
        self.data.manifest.as_deref().context("job file has no data.manifest")
    }
}

pub fn load_tabular(job: &JobConfig) -> Result<TabularDataset> {
    let path = job.tabular_path()?;
    let schema = TabularSchema {
        id_column: job.data.id_column.clone(),
        label_column: Some(job.data.label_column.clone()),
        ignore: job.data.ignore_columns.clone(),
    };
    let load = load_tabular_csv(path, &schema)?;
    if load.dropped > 0 {
        log::warn!("dropped {} rows with missing values from {}", load.dropped, path.display());
    }
    let want = job.session.model.tabular_in;
    if load.dataset.num_features() != want {
        bail!(
            "{} has {} feature columns, the model expects {want}",
            path.display(),
            load.dataset.num_features()
        );
    }
    Ok(load.dataset)
}

pub fn load_image_set(job: &JobConfig) -> Result<ImageDataset> {
    let manifest = job.manifest_path()?;
    let dir = manifest.parent().unwrap_or(Path::new("."));
    Ok(load_images(dir, manifest, job.session.model.image_shape)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[session]
epochs = 2
shuffle_seed = 7
model_seed = 1
order_seed = 3
salt = "00112233445566778899aabbccddeeff"
optimizer = { learning_rate = 0.05, momentum = 0.9 }
split = { train = 10, val = 5 }

[data]
tabular = "data/tabular.csv"
manifest = "/abs/manifest.csv"
"#;

    #[test]
    fn paths_resolve_against_the_job_file() {
        let job = JobConfig::parse(SAMPLE, Path::new("/jobs")).unwrap();
        assert_eq!(job.data.tabular.unwrap(), Path::new("/jobs/data/tabular.csv"));
        assert_eq!(job.data.manifest.unwrap(), Path::new("/abs/manifest.csv"));
        assert_eq!(job.output.dir, Path::new("/jobs/out"));
        assert_eq!(job.session.batch_size, 32);
        assert_eq!(job.transport.timeout(), Duration::from_secs(30));
    }

    #[test]
    fn endpoints_and_paths_do_not_change_the_digest() {
        let a = JobConfig::parse(SAMPLE, Path::new("/a")).unwrap();
        let other = SAMPLE.replace("data/tabular.csv", "x.csv") + "\n[transport]\nhost_connect = \"10.0.0.2:9\"\n";
        let b = JobConfig::parse(&other, Path::new("/b")).unwrap();
        assert_eq!(a.session.digest(), b.session.digest());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(JobConfig::parse(&SAMPLE.replace("epochs", "epoch"), Path::new(".")).is_err());
        assert!(JobConfig::parse(&format!("{SAMPLE}\n[extra]\n"), Path::new(".")).is_err());
    }
}
