//! The normal-filtering network: multi-scale feature embedding over a patch
//! of facet normals, cascaded residual refinement units, and regression heads
//! that output unit normals, plus the deeply-supervised training losses.

use crate::engine::{load_checkpoint, save_checkpoint, Graph, Real, Tensor, Val};
use crate::{Error, Result};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Per-face neighbor lists for one patch, row-major n x k, nearest first.
/// Built by the patching layer; consumed by the grouping layers, which only
/// ever read a prefix of each row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborTable {
    n: usize,
    k: usize,
    idx: Vec<usize>,
}

impl NeighborTable {
    pub fn new(n: usize, k: usize, idx: Vec<usize>) -> Result<Self> {
        if idx.len() != n * k || k == 0 {
            return Err(Error::ShapeMismatch {
                op: "neighbor_table",
                lhs: vec![n, k],
                rhs: vec![idx.len()],
            });
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::ShapeMismatch {
                op: "neighbor_table",
                lhs: vec![n],
                rhs: vec![bad],
            });
        }
        Ok(NeighborTable { n, k, idx })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rows(&self) -> &[usize] {
        &self.idx
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.idx[i * self.k..(i + 1) * self.k]
    }

    /// First `k` neighbors of every row, flattened.
    pub fn truncated(&self, k: usize) -> Vec<usize> {
        assert!(k <= self.k, "cannot take {k} neighbors from a k={} table", self.k);
        let mut out = Vec::with_capacity(self.n * k);
        for i in 0..self.n {
            out.extend_from_slice(&self.idx[i * self.k..i * self.k + k]);
        }
        out
    }
}

/// Architecture hyperparameters. The grouping scales must be strictly
/// increasing and fit inside the neighbor table (k1 < k2 < k3 <= K).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Channel width C of every feature map.
    pub channels: usize,
    pub k1: usize,
    pub k2: usize,
    pub k3: usize,
    /// Feature-space KNN size inside each residual unit.
    pub k_res: usize,
    pub num_res_units: usize,
    /// Weight of the residual regularization term in the total loss.
    pub alpha: f64,
    /// Supervise the intermediate normal predictions as well as the final one.
    pub supervise_intermediate: bool,
    /// Group (neighbor - center) residual features; off stores raw neighbors.
    pub grouping_subtraction: bool,
    /// Channel-attention bottleneck ratio r (hidden width = Cin/r, min 1).
    pub attention_reduction: usize,
    pub fusion_hidden: usize,
    pub head_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::paper_synthetic()
    }
}

impl ModelConfig {
    /// Scales used for training on synthetic-noise datasets: small patches,
    /// grouping radii 10/30/50.
    pub fn paper_synthetic() -> Self {
        ModelConfig {
            channels: 128,
            k1: 10,
            k2: 30,
            k3: 50,
            k_res: 20,
            num_res_units: 2,
            alpha: 0.5,
            supervise_intermediate: true,
            grouping_subtraction: true,
            attention_reduction: 4,
            fusion_hidden: 256,
            head_hidden: 128,
        }
    }

    /// Scales used for scanned data: wider grouping radii 50/100/150.
    pub fn paper_real() -> Self {
        ModelConfig {
            k1: 50,
            k2: 100,
            k3: 150,
            ..Self::paper_synthetic()
        }
    }

    /// Tiny configuration for fast CPU runs and CI.
    pub fn desk() -> Self {
        ModelConfig {
            channels: 32,
            k1: 8,
            k2: 16,
            k3: 24,
            k_res: 8,
            fusion_hidden: 64,
            head_hidden: 32,
            ..Self::paper_synthetic()
        }
    }

    /// Validity of the config itself; the k3 <= K part needs the table size.
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0
            || self.fusion_hidden == 0
            || self.head_hidden == 0
            || self.attention_reduction == 0
            || self.k_res == 0
        {
            return Err(Error::Config("model widths must be positive".into()));
        }
        if self.num_res_units == 0 {
            return Err(Error::Config("at least one residual unit".into()));
        }
        if self.alpha < 0.0 {
            return Err(Error::Config("alpha must be nonnegative".into()));
        }
        if !(self.k1 < self.k2 && self.k2 < self.k3) {
            return Err(Error::Config(format!(
                "grouping scales must increase strictly: {} {} {}",
                self.k1, self.k2, self.k3
            )));
        }
        Ok(())
    }

    pub fn validate_against_table(&self, k: usize) -> Result<()> {
        self.validate()?;
        if self.k3 > k {
            return Err(Error::Config(format!(
                "k3 = {} exceeds neighbor table width {k}",
                self.k3
            )));
        }
        Ok(())
    }

    fn attention_hidden(&self, cin: usize) -> usize {
        (cin / self.attention_reduction).max(1)
    }

    fn intermediate_head_count(&self) -> usize {
        if self.num_res_units == 1 {
            1
        } else {
            self.num_res_units - 1
        }
    }
}

fn linear_spec(out: &mut Vec<(String, Vec<usize>)>, name: &str, cin: usize, cout: usize) {
    out.push((format!("{name}.w"), vec![cin, cout]));
    out.push((format!("{name}.b"), vec![cout]));
}

fn extraction_specs(out: &mut Vec<(String, Vec<usize>)>, prefix: &str, cin: usize, cfg: &ModelConfig) {
    let hid = cfg.attention_hidden(cin);
    linear_spec(out, &format!("{prefix}.att1"), cin, hid);
    linear_spec(out, &format!("{prefix}.att2"), hid, cin);
    linear_spec(out, &format!("{prefix}.proj"), cin, cfg.channels);
}

/// Every parameter tensor's name and shape, in the fixed registration order.
pub fn parameter_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let c = cfg.channels;
    let mut v = Vec::new();
    extraction_specs(&mut v, "embed.l1", 6, cfg);
    extraction_specs(&mut v, "embed.l2", 2 * c, cfg);
    extraction_specs(&mut v, "embed.l3", 2 * c, cfg);
    linear_spec(&mut v, "embed.fuse1", 3 + 3 * c, cfg.fusion_hidden);
    linear_spec(&mut v, "embed.fuse2", cfg.fusion_hidden, c);
    for u in 1..=cfg.num_res_units {
        linear_spec(&mut v, &format!("unit{u}.mlp1"), 2 * c, c);
        linear_spec(&mut v, &format!("unit{u}.mlp2"), c, c);
    }
    for u in 1..=cfg.intermediate_head_count() {
        linear_spec(&mut v, &format!("head.inter{u}.h"), c, cfg.head_hidden);
        linear_spec(&mut v, &format!("head.inter{u}.out"), cfg.head_hidden, 3);
    }
    linear_spec(&mut v, "head.final.h", c, cfg.head_hidden);
    linear_spec(&mut v, "head.final.out", cfg.head_hidden, 3);
    v
}

/// All trainable tensors plus the config that determines their shapes.
#[derive(Debug, Clone)]
pub struct ModelParams<R> {
    pub config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor<R>>,
}

impl<R: Real> ModelParams<R> {
    /// Seeded init: weights uniform in +-sqrt(6/fan_in), biases zero.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, dims) in parameter_specs(&config) {
            let tensor = if dims.len() == 2 {
                let bound = (6.0 / dims[0] as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound)
                    .expect("valid uniform bounds");
                let data = (0..dims[0] * dims[1])
                    .map(|_| R::from_f64(dist.sample(&mut rng)))
                    .collect();
                Tensor::new(dims, data)?
            } else {
                Tensor::zeros(dims)
            };
            names.push(name);
            tensors.push(tensor);
        }
        Ok(ModelParams {
            config,
            names,
            tensors,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<R>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<R>] {
        &mut self.tensors
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn convert<T: Real>(&self) -> ModelParams<T> {
        ModelParams {
            config: self.config.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.map_to()).collect(),
        }
    }

    /// Write a checkpoint: config as a TOML header, tensors as f32.
    pub fn save<P: AsRef<std::path::Path>>(&self, path: P) -> Result<()> {
        let header = toml::to_string(&self.config)
            .map_err(|e| Error::Config(format!("config serialization failed: {e}")))?;
        let tensors: Vec<(String, Tensor<f32>)> = self
            .names
            .iter()
            .cloned()
            .zip(self.tensors.iter().map(|t| t.map_to()))
            .collect();
        save_checkpoint(path, &header, &tensors)
    }

    /// Load a checkpoint and validate every tensor against the shapes the
    /// stored config implies.
    pub fn load<P: AsRef<std::path::Path>>(path: P) -> Result<Self> {
        let ckpt = load_checkpoint(path)?;
        let config: ModelConfig = toml::from_str(&ckpt.header)
            .map_err(|e| Error::DataFormat(format!("bad checkpoint header: {e}")))?;
        config.validate()?;
        let specs = parameter_specs(&config);
        if specs.len() != ckpt.tensors.len() {
            return Err(Error::DataFormat(format!(
                "checkpoint has {} tensors, config implies {}",
                ckpt.tensors.len(),
                specs.len()
            )));
        }
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for ((want_name, want_dims), (name, tensor)) in specs.into_iter().zip(ckpt.tensors) {
            if want_name != name || want_dims != tensor.dims() {
                return Err(Error::DataFormat(format!(
                    "checkpoint tensor {name} {:?} does not match expected {want_name} {want_dims:?}",
                    tensor.dims()
                )));
            }
            names.push(name);
            tensors.push(tensor.map_to());
        }
        Ok(ModelParams {
            config,
            names,
            tensors,
        })
    }

    /// Register every tensor on a tape; gradients are read back by index.
    pub fn bind(&self, g: &mut Graph<R>) -> BoundParams {
        let mut vals = Vec::with_capacity(self.tensors.len());
        let mut map = HashMap::new();
        for (name, tensor) in self.names.iter().zip(&self.tensors) {
            let val = g.param(tensor.clone());
            vals.push(val);
            map.insert(name.clone(), val);
        }
        BoundParams { vals, map }
    }
}

/// Parameter handles inside one tape, by registration order and by name.
pub struct BoundParams {
    pub vals: Vec<Val>,
    map: HashMap<String, Val>,
}

impl BoundParams {
    fn val(&self, name: &str) -> Val {
        *self
            .map
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }
}

fn lin<R: Real>(g: &mut Graph<R>, bp: &BoundParams, name: &str, x: Val) -> Result<Val> {
    g.linear(x, bp.val(&format!("{name}.w")), bp.val(&format!("{name}.b")))
}

/// Pack each face's normal with its k1 nearest neighbors' normals: N x k1 x 6,
/// center copy in channels 0..3, neighbor in channels 3..6.
pub fn normal_grouping<R: Real>(
    g: &mut Graph<R>,
    normals: Val,
    table: &NeighborTable,
    k1: usize,
) -> Result<Val> {
    let center = g.expand_mid(normals, k1)?;
    let nbrs = g.gather_rows(normals, &table.truncated(k1), k1)?;
    g.concat(&[center, nbrs], 2)
}

/// Pack each face's feature row with its k neighbors: N x k x 2C. With
/// subtraction on, the neighbor half stores (neighbor - center).
pub fn feature_grouping<R: Real>(
    g: &mut Graph<R>,
    features: Val,
    table: &NeighborTable,
    k: usize,
    subtraction: bool,
) -> Result<Val> {
    let center = g.expand_mid(features, k)?;
    let nbrs = g.gather_rows(features, &table.truncated(k), k)?;
    let second = if subtraction {
        g.sub(nbrs, center)?
    } else {
        nbrs
    };
    g.concat(&[center, second], 2)
}

/// Channel attention plus shared projection, pooled over the neighbor axis.
pub fn feature_extraction<R: Real>(
    g: &mut Graph<R>,
    grouped: Val,
    bp: &BoundParams,
    prefix: &str,
) -> Result<Val> {
    let dims = g.value(grouped).dims().to_vec();
    if dims.len() != 3 {
        return Err(Error::ShapeMismatch {
            op: "feature_extraction",
            lhs: dims,
            rhs: vec![],
        });
    }
    let k = dims[1];
    let mean = g.reduce_mean(grouped, 1)?;
    let maxed = g.reduce_max(grouped, 1)?;
    let att = |g: &mut Graph<R>, x: Val| -> Result<Val> {
        let h = lin(g, bp, &format!("{prefix}.att1"), x)?;
        let h = g.relu(h);
        lin(g, bp, &format!("{prefix}.att2"), h)
    };
    let a1 = att(g, mean)?;
    let a2 = att(g, maxed)?;
    let summed = g.add(a1, a2)?;
    let gate = g.sigmoid(summed);
    let gate_k = g.expand_mid(gate, k)?;
    let gated = g.mul(grouped, gate_k)?;
    let proj = lin(g, bp, &format!("{prefix}.proj"), gated)?;
    let proj = g.relu(proj);
    g.reduce_max(proj, 1)
}

/// Three grouping/extraction levels at growing scales, fused with the raw
/// normals into the patch feature map F (N x C).
pub fn multiscale_embedding<R: Real>(
    g: &mut Graph<R>,
    normals: Val,
    table: &NeighborTable,
    bp: &BoundParams,
    cfg: &ModelConfig,
) -> Result<Val> {
    let g1 = normal_grouping(g, normals, table, cfg.k1)?;
    let e1 = feature_extraction(g, g1, bp, "embed.l1")?;
    let g2 = feature_grouping(g, e1, table, cfg.k2, cfg.grouping_subtraction)?;
    let e2 = feature_extraction(g, g2, bp, "embed.l2")?;
    let g3 = feature_grouping(g, e2, table, cfg.k3, cfg.grouping_subtraction)?;
    let e3 = feature_extraction(g, g3, bp, "embed.l3")?;
    let cat = g.concat(&[normals, e1, e2, e3], 1)?;
    let f = lin(g, bp, "embed.fuse1", cat)?;
    let f = g.relu(f);
    let f = lin(g, bp, "embed.fuse2", f)?;
    Ok(g.relu(f))
}

/// k_res nearest rows in feature space for each row: squared Euclidean
/// distance, self excluded, ties to the smaller index; short rows (n-1 <
/// k_res) repeat the farthest pick.
pub fn feature_knn<R: Real>(features: &Tensor<R>, k_res: usize) -> Vec<usize> {
    let dims = features.dims();
    let (n, c) = (dims[0], dims[1]);
    assert!(n >= 2, "feature KNN needs at least two rows");
    let data = features.data();
    let mut idx = Vec::with_capacity(n * k_res);
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        scored.clear();
        let a = &data[i * c..(i + 1) * c];
        for j in 0..n {
            if j == i {
                continue;
            }
            let b = &data[j * c..(j + 1) * c];
            let mut d = 0.0f64;
            for (x, y) in a.iter().zip(b) {
                let diff = x.to_f64() - y.to_f64();
                d += diff * diff;
            }
            scored.push((d, j));
        }
        scored.sort_unstable_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let take = k_res.min(scored.len());
        for s in &scored[..take] {
            idx.push(s.1);
        }
        for _ in take..k_res {
            idx.push(scored[take - 1].1);
        }
    }
    idx
}

/// One residual learning unit: KNN grouping in feature space, two shared
/// MLPs, max-pool -> the predicted feature residual dF (N x C).
pub fn residual_unit<R: Real>(
    g: &mut Graph<R>,
    features: Val,
    bp: &BoundParams,
    prefix: &str,
    k_res: usize,
) -> Result<Val> {
    let knn = feature_knn(g.value(features), k_res);
    let center = g.expand_mid(features, k_res)?;
    let nbrs = g.gather_rows(features, &knn, k_res)?;
    let cat = g.concat(&[center, nbrs], 2)?;
    let h = lin(g, bp, &format!("{prefix}.mlp1"), cat)?;
    let h = g.relu(h);
    let h = lin(g, bp, &format!("{prefix}.mlp2"), h)?;
    let h = g.relu(h);
    g.reduce_max(h, 1)
}

fn regression_head<R: Real>(
    g: &mut Graph<R>,
    features: Val,
    bp: &BoundParams,
    prefix: &str,
) -> Result<Val> {
    let h = lin(g, bp, &format!("{prefix}.h"), features)?;
    let h = g.relu(h);
    let y = lin(g, bp, &format!("{prefix}.out"), h)?;
    g.row_normalize(y, 1e-12)
}

/// Everything the forward pass produces for one patch. All handles live in
/// the tape that ran the pass.
pub struct ForwardOutput {
    /// F: the fused multi-scale embedding.
    pub features: Val,
    /// dF per residual unit, in cascade order.
    pub residuals: Vec<Val>,
    /// F~ after each subtraction, same order.
    pub denoised: Vec<Val>,
    /// Unit-normal predictions from the intermediate heads.
    pub intermediate_normals: Vec<Val>,
    /// Unit-normal prediction from the final head.
    pub final_normals: Val,
}

/// Full forward pass over one patch of facet normals.
pub fn forward<R: Real>(
    g: &mut Graph<R>,
    normals: Val,
    table: &NeighborTable,
    bp: &BoundParams,
    cfg: &ModelConfig,
) -> Result<ForwardOutput> {
    let nd = g.value(normals).dims().to_vec();
    if nd.len() != 2 || nd[1] != 3 {
        return Err(Error::ShapeMismatch {
            op: "forward",
            lhs: nd,
            rhs: vec![0, 3],
        });
    }
    if nd[0] != table.n() {
        return Err(Error::ShapeMismatch {
            op: "forward",
            lhs: nd,
            rhs: vec![table.n(), table.k()],
        });
    }
    if nd[0] < 2 {
        return Err(Error::Mismatch("a patch needs at least two faces".into()));
    }
    cfg.validate_against_table(table.k())?;

    let features = multiscale_embedding(g, normals, table, bp, cfg)?;
    let mut residuals = Vec::new();
    let mut denoised = Vec::new();
    let mut current = features;
    for u in 1..=cfg.num_res_units {
        let delta = residual_unit(g, current, bp, &format!("unit{u}"), cfg.k_res)?;
        current = g.sub(current, delta)?;
        residuals.push(delta);
        denoised.push(current);
    }

    let mut intermediate_normals = Vec::new();
    for u in 1..=cfg.intermediate_head_count() {
        // With a single unit the intermediate head reads the same features as
        // the final head; otherwise head u reads the u-th cascade stage.
        let src = if cfg.num_res_units == 1 {
            denoised[0]
        } else {
            denoised[u - 1]
        };
        intermediate_normals.push(regression_head(g, src, bp, &format!("head.inter{u}"))?);
    }
    let final_normals = regression_head(g, *denoised.last().unwrap(), bp, "head.final")?;

    Ok(ForwardOutput {
        features,
        residuals,
        denoised,
        intermediate_normals,
        final_normals,
    })
}

/// Per-patch supervised loss: mean squared normal error of the final head,
/// plus the same for each intermediate head when supervision is on.
pub fn loss_deep<R: Real>(
    g: &mut Graph<R>,
    final_normals: Val,
    intermediates: &[Val],
    gt_normals: Val,
    supervise_intermediate: bool,
) -> Result<Val> {
    let n = g.value(gt_normals).dims()[0] as f64;
    let d = g.sub(gt_normals, final_normals)?;
    let ss = g.sum_squares(d);
    let mut total = g.scale(ss, 1.0 / n);
    if supervise_intermediate {
        for &inter in intermediates {
            let d = g.sub(gt_normals, inter)?;
            let ss = g.sum_squares(d);
            let term = g.scale(ss, 1.0 / n);
            total = g.add(total, term)?;
        }
    }
    Ok(total)
}

/// Per-patch residual regularization: mean squared entry of every dF.
pub fn loss_residual<R: Real>(g: &mut Graph<R>, residuals: &[Val]) -> Result<Val> {
    assert!(!residuals.is_empty(), "at least one residual unit");
    let mut total: Option<Val> = None;
    for &r in residuals {
        let dims = g.value(r).dims();
        let count = (dims[0] * dims[1]) as f64;
        let ss = g.sum_squares(r);
        let term = g.scale(ss, 1.0 / count);
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    Ok(total.unwrap())
}

/// deep + alpha * residual.
pub fn loss_total<R: Real>(g: &mut Graph<R>, deep: Val, residual: Val, alpha: f64) -> Result<Val> {
    let weighted = g.scale(residual, alpha);
    g.add(deep, weighted)
}
