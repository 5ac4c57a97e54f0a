//! Flat training configuration with defaults and validation.

use crate::dgcnn::DgcnnConfig;
use crate::error::{config, Result};
use crate::memory::Aggregation;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Memory embeddings plus subgraph labels, scored by DGCNN.
    #[default]
    TgnSeal,
    /// Identity embeddings scored by the MLP decoder.
    TgnId,
    /// Time-projection embeddings scored by the MLP decoder.
    TgnTime,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::TgnSeal => "tgn_seal",
            ModelKind::TgnId => "tgn_id",
            ModelKind::TgnTime => "tgn_time",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    Identity,
    TimeProjection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: ModelKind,
    /// Embedding for `tgn_seal`; the baselines fix their own.
    pub embedding: EmbeddingKind,
    pub k: usize,
    pub cap: usize,
    pub l_max: usize,
    pub d_mem: usize,
    pub d_time: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub train_frac: f64,
    pub val_frac: f64,
    pub unseen_frac: f64,
    pub neg_per_pos: usize,
    pub aggregation: Aggregation,
    /// Backpropagate the decoder loss through each node's latest memory
    /// update into the GRU weights. Off: memory is a constant input.
    pub train_memory: bool,
    /// Seconds per unit of elapsed time in the time projection. `None` uses the
    /// mean per-node gap between consecutive training events.
    pub time_scale: Option<f64>,
    /// `None` picks the size from the first epoch's training subgraphs.
    pub sortpool_k: Option<usize>,
    pub sortpool_quantile: f64,
    pub dgcnn_channels: Vec<usize>,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub conv2_kernel: usize,
    pub pool_width: usize,
    pub dense_units: usize,
    pub dropout: f64,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::TgnSeal,
            embedding: EmbeddingKind::Identity,
            k: 2,
            cap: 20,
            l_max: 10,
            d_mem: 32,
            d_time: 16,
            batch_size: 100,
            lr: 1e-4,
            epochs: 50,
            patience: 5,
            seed: 0,
            train_frac: 0.70,
            val_frac: 0.15,
            unseen_frac: 0.10,
            neg_per_pos: 1,
            aggregation: Aggregation::MostRecent,
            train_memory: false,
            time_scale: None,
            sortpool_k: None,
            sortpool_quantile: 0.6,
            dgcnn_channels: vec![32, 32, 32, 1],
            conv1_filters: 16,
            conv2_filters: 32,
            conv2_kernel: 5,
            pool_width: 2,
            dense_units: 128,
            dropout: 0.5,
            threads: 1,
        }
    }
}

/// Smallest SortPooling size the convolution head accepts with default widths.
pub const MIN_SORTPOOL_K: usize = 10;

impl TrainConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Embedding actually used by the configured model.
    pub fn effective_embedding(&self) -> EmbeddingKind {
        match self.model {
            ModelKind::TgnSeal => self.embedding,
            ModelKind::TgnId => EmbeddingKind::Identity,
            ModelKind::TgnTime => EmbeddingKind::TimeProjection,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cap", self.cap),
            ("l_max", self.l_max),
            ("d_mem", self.d_mem),
            ("d_time", self.d_time),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("patience", self.patience),
            ("neg_per_pos", self.neg_per_pos),
            ("conv1_filters", self.conv1_filters),
            ("conv2_filters", self.conv2_filters),
            ("conv2_kernel", self.conv2_kernel),
            ("pool_width", self.pool_width),
            ("dense_units", self.dense_units),
            ("threads", self.threads),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(config(format!("{name} must be positive")));
            }
        }
        if !(1..=3).contains(&self.k) {
            return Err(config(format!("k={} must be 1, 2 or 3", self.k)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config(format!("lr={} must be positive", self.lr)));
        }
        if !(self.train_frac > 0.0 && self.val_frac > 0.0 && self.train_frac + self.val_frac < 1.0) {
            return Err(config(format!(
                "train_frac={} and val_frac={} must be positive and leave a test region",
                self.train_frac, self.val_frac
            )));
        }
        if !(0.0..1.0).contains(&self.unseen_frac) {
            return Err(config(format!("unseen_frac={} outside [0, 1)", self.unseen_frac)));
        }
        if let Some(ts) = self.time_scale {
            if !(ts > 0.0 && ts.is_finite()) {
                return Err(config(format!("time_scale={ts} must be positive")));
            }
        }
        if !(self.sortpool_quantile > 0.0 && self.sortpool_quantile <= 1.0) {
            return Err(config(format!(
                "sortpool_quantile={} outside (0, 1]",
                self.sortpool_quantile
            )));
        }
        if self.dgcnn_channels.is_empty() || self.dgcnn_channels.contains(&0) {
            return Err(config("dgcnn_channels must be non-empty and positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(config(format!("dropout={} outside [0, 1)", self.dropout)));
        }
        if let Some(k) = self.sortpool_k {
            self.dgcnn_config(k).validate()?;
        }
        Ok(())
    }

    pub fn dgcnn_config(&self, sortpool_k: usize) -> DgcnnConfig {
        DgcnnConfig {
            in_dim: self.d_mem + self.l_max + 1,
            channels: self.dgcnn_channels.clone(),
            sortpool_k,
            conv1_filters: self.conv1_filters,
            conv2_filters: self.conv2_filters,
            conv2_kernel: self.conv2_kernel,
            pool_width: self.pool_width,
            dense_units: self.dense_units,
            dropout: self.dropout,
        }
    }

    /// Smallest SortPooling size the head accepts for this configuration.
    pub fn min_sortpool_k(&self) -> usize {
        MIN_SORTPOOL_K.max(self.pool_width * self.conv2_kernel)
    }

    /// Overrides keys from a flat JSON object, re-validating the result.
    pub fn with_overrides(&self, overrides: &serde_json::Map<String, serde_json::Value>) -> Result<Self> {
        let mut value = serde_json::to_value(self)?;
        let obj = value.as_object_mut().expect("config serializes to an object");
        for (k, v) in overrides {
            if !obj.contains_key(k) {
                return Err(config(format!("unknown config key `{k}`")));
            }
            obj.insert(k.clone(), v.clone());
        }
        let cfg: Self = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
