//! Run configuration: defaults, `key = value` files and flag overrides.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use sharpen_core::train::TrainConfig;

pub const CONFIG_ECHO: &str = "config.txt";

/// Everything a command needs besides its own positional inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub out: PathBuf,
    /// Forces the label mode instead of inferring it from the labels file.
    pub multi_label: Option<bool>,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            test_data: None,
            out: PathBuf::from("out"),
            multi_label: None,
            train: TrainConfig::default(),
        }
    }
}

/// Invalid value or unknown key; reported as a usage error.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| UsageError(format!("config key {key}: cannot parse {value:?}")).into())
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| parse(key, t))
        .collect()
}

fn join(values: &[usize]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Applies one setting. Keys match the resolved-config echo.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let value = value.trim();
        match key {
            "data" => self.data = Some(PathBuf::from(value)),
            "test_data" => self.test_data = Some(PathBuf::from(value)),
            "out" => self.out = PathBuf::from(value),
            "multi_label" => self.multi_label = Some(parse(key, value)?),
            "seed" => t.seed = parse(key, value)?,
            "baseline" => t.baseline = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "schedule" => t.schedule = value.parse().map_err(|e| UsageError(format!("config key {key}: {e}")))?,
            "milestones" => t.milestones = parse_list(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "momentum" => t.sgd.momentum = parse(key, value)?,
            "weight_decay" => t.sgd.weight_decay = parse(key, value)?,
            "attention_warmup" => t.attention_warmup = parse(key, value)?,
            "flip" => t.flip = parse(key, value)?,
            "channels" => t.model.channels = parse_list(key, value)?,
            "kernel_size" => t.model.kernel_size = parse(key, value)?,
            "mechanism" => t.icasc.mechanism = value.parse().map_err(|e| UsageError(format!("config key {key}: {e}")))?,
            "omega" => t.icasc.omega = parse(key, value)?,
            "sigma_factor" => t.icasc.sigma_factor = parse(key, value)?,
            "theta" => t.icasc.theta = parse(key, value)?,
            "epsilon" => t.icasc.epsilon = parse(key, value)?,
            "skip_threshold" => t.icasc.skip_threshold = parse(key, value)?,
            "clamp_lac" => t.icasc.clamp_lac = parse(key, value)?,
            "weight_classification" => t.icasc.weights.classification = parse(key, value)?,
            "weight_separation_inner" => t.icasc.weights.separation_inner = parse(key, value)?,
            "weight_separation_last" => t.icasc.weights.separation_last = parse(key, value)?,
            "weight_consistency" => t.icasc.weights.consistency = parse(key, value)?,
            _ => bail!(UsageError(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a `key = value` file; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!(UsageError(format!("{origin}:{}: expected key = value", i + 1)));
            };
            self.set(key.trim(), value)
                .with_context(|| format!("{origin}:{}", i + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// The fully resolved configuration in the file format.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let i = &t.icasc;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        if let Some(d) = &self.data {
            put("data", d.display().to_string());
        }
        if let Some(d) = &self.test_data {
            put("test_data", d.display().to_string());
        }
        put("out", self.out.display().to_string());
        if let Some(m) = self.multi_label {
            put("multi_label", m.to_string());
        }
        put("seed", t.seed.to_string());
        put("baseline", t.baseline.to_string());
        put("epochs", t.epochs.to_string());
        put("lr", t.lr.to_string());
        put("schedule", t.schedule.as_str().to_string());
        put("milestones", join(&t.milestones));
        put("batch_size", t.batch_size.to_string());
        put("momentum", t.sgd.momentum.to_string());
        put("weight_decay", t.sgd.weight_decay.to_string());
        put("attention_warmup", t.attention_warmup.to_string());
        put("flip", t.flip.to_string());
        put("channels", join(&t.model.channels));
        put("kernel_size", t.model.kernel_size.to_string());
        put("mechanism", i.mechanism.to_string());
        put("omega", i.omega.to_string());
        put("sigma_factor", i.sigma_factor.to_string());
        put("theta", i.theta.to_string());
        put("epsilon", i.epsilon.to_string());
        put("skip_threshold", i.skip_threshold.to_string());
        put("clamp_lac", i.clamp_lac.to_string());
        put("weight_classification", i.weights.classification.to_string());
        put("weight_separation_inner", i.weights.separation_inner.to_string());
        put("weight_separation_last", i.weights.separation_last.to_string());
        put("weight_consistency", i.weights.consistency.to_string());
        s
    }

    pub fn write_echo(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(CONFIG_ECHO);
        std::fs::write(&path, self.to_text()).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
