//! Flat `key = value` run configuration. Every key has a default; unknown
//! keys are rejected.

use sspc_core::{ModelDims, PartitionParams, SceneSpec, TrainConfig};

use crate::error::Error;

/// Paper-scale supervision: 0.002% of the points, clamped to one per class.
pub const DEFAULT_RATE: f64 = 2e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    /// `dims.classes` is filled in from the clouds at run time.
    pub train: TrainConfig,
    pub partition: PartitionParams,
    pub knn: usize,
    pub rate: f64,
    /// Layout used by `gen`.
    pub scene: SceneSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::new(0),
            partition: PartitionParams::default(),
            knn: 5,
            rate: DEFAULT_RATE,
            scene: SceneSpec::default(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "epochs",
    "lr",
    "beta1",
    "beta2",
    "adam_eps",
    "batch_size",
    "lambda1",
    "lambda2",
    "tau",
    "drop_fraction",
    "interval_m",
    "propagate",
    "attention",
    "seed",
    "hidden",
    "embed",
    "gnn_steps",
    "voxel_size",
    "normal_angle_tol",
    "color_tol",
    "min_sp_size",
    "knn",
    "rate",
    "num_objects",
    "points_per_object",
    "extent",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("`{key}`: cannot parse `{v}`"))
}

fn flag(key: &str, v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(format!("`{key}`: expected true or false, got `{v}`")),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let t = &mut self.train;
        match key {
            "epochs" => t.epochs = num(key, v)?,
            "lr" => t.lr = num(key, v)?,
            "beta1" => t.beta1 = num(key, v)?,
            "beta2" => t.beta2 = num(key, v)?,
            "adam_eps" => t.adam_eps = num(key, v)?,
            "batch_size" => t.batch_size = num(key, v)?,
            "lambda1" => t.lambda1 = num(key, v)?,
            "lambda2" => t.lambda2 = num(key, v)?,
            "tau" => t.propagation.tau = num(key, v)?,
            "drop_fraction" => t.propagation.drop_fraction = num(key, v)?,
            "interval_m" => t.propagation.interval_m = num(key, v)?,
            "propagate" => t.propagate = flag(key, v)?,
            "attention" => t.attention = flag(key, v)?,
            "seed" => t.seed = num(key, v)?,
            "hidden" => t.dims.hidden = num(key, v)?,
            "embed" => t.dims.embed = num(key, v)?,
            "gnn_steps" => t.dims.gnn_steps = num(key, v)?,
            "voxel_size" => self.partition.voxel_size = num(key, v)?,
            "normal_angle_tol" => self.partition.normal_angle_tol = num(key, v)?,
            "color_tol" => self.partition.color_tol = num(key, v)?,
            "min_sp_size" => self.partition.min_sp_size = num(key, v)?,
            "knn" => self.knn = num(key, v)?,
            "rate" => self.rate = num(key, v)?,
            "num_objects" => self.scene.num_objects = num(key, v)?,
            "points_per_object" => self.scene.points_per_object = num(key, v)?,
            "extent" => self.scene.extent = num(key, v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        Some(match key {
            "epochs" => t.epochs.to_string(),
            "lr" => t.lr.to_string(),
            "beta1" => t.beta1.to_string(),
            "beta2" => t.beta2.to_string(),
            "adam_eps" => t.adam_eps.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "lambda1" => t.lambda1.to_string(),
            "lambda2" => t.lambda2.to_string(),
            "tau" => t.propagation.tau.to_string(),
            "drop_fraction" => t.propagation.drop_fraction.to_string(),
            "interval_m" => t.propagation.interval_m.to_string(),
            "propagate" => t.propagate.to_string(),
            "attention" => t.attention.to_string(),
            "seed" => t.seed.to_string(),
            "hidden" => t.dims.hidden.to_string(),
            "embed" => t.dims.embed.to_string(),
            "gnn_steps" => t.dims.gnn_steps.to_string(),
            "voxel_size" => self.partition.voxel_size.to_string(),
            "normal_angle_tol" => self.partition.normal_angle_tol.to_string(),
            "color_tol" => self.partition.color_tol.to_string(),
            "min_sp_size" => self.partition.min_sp_size.to_string(),
            "knn" => self.knn.to_string(),
            "rate" => self.rate.to_string(),
            "num_objects" => self.scene.num_objects.to_string(),
            "points_per_object" => self.scene.points_per_object.to_string(),
            "extent" => self.scene.extent.to_string(),
            _ => return None,
        })
    }

    /// Every key with its effective value, in [`KEYS`] order.
    pub fn entries(&self) -> Vec<(String, String)> {
        KEYS.iter().map(|k| (k.to_string(), self.get(k).expect("listed key"))).collect()
    }

    /// Applies `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, Error> {
        let mut cfg = Self::default();
        let mut seen = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| Error::Config(format!("line {}: {msg}", idx + 1));
            let (k, v) = line.split_once('=').ok_or_else(|| at(format!("expected `key = value`, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if seen.contains(&k) {
                return Err(at(format!("duplicate key `{k}`")));
            }
            seen.push(k);
            cfg.set(k, v).map_err(at)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.rate > 0.0 && self.rate <= 1.0) {
            return bad("rate must lie in (0, 1]");
        }
        if self.knn == 0 {
            return bad("knn must be at least 1");
        }
        if !(self.partition.voxel_size > 0.0 && self.partition.voxel_size.is_finite()) {
            return bad("voxel_size must be positive");
        }
        if self.train.epochs == 0 {
            return bad("epochs must be positive");
        }
        Ok(())
    }

    /// Training settings for clouds with `classes` classes.
    pub fn train_config(&self, classes: usize) -> TrainConfig {
        let mut t = self.train;
        t.dims = ModelDims { classes, ..t.dims };
        t
    }
}
