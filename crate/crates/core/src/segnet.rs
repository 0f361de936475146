//! Tiny convolutional segmentation network with patch-wise latent projectors.
//!
//! Encoder: `S` stages of `3×3` stride-2 convolutions with ReLU. The last
//! stage feeds a `1×1` classifier that is bilinearly upsampled to the input
//! resolution and softmax-normalized. Selected stages additionally feed a
//! projector: average pooling over each patch's feature rectangle followed by
//! a two-layer perceptron.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::{Bindings, GraphBuilder, GraphError, NodeId, Tensor};
use crate::grid::{GridError, PatchGrid};

pub const CHECKPOINT_MAGIC: &str = "patchwise-checkpoint v1";

#[derive(Debug, Error)]
pub enum SegNetError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("image shape {got:?}, network expects {want:?}")]
    ImageShape { got: Vec<usize>, want: Vec<usize> },
    #[error("parameter `{0}` missing or misshapen")]
    Param(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("checkpoint line {line}: {reason}")]
    Checkpoint { line: usize, reason: String },
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegNetConfig {
    pub image_width: usize,
    pub image_height: usize,
    pub num_classes: usize,
    /// Output channels of each stride-2 stage.
    pub channels: Vec<usize>,
    /// 1-based stage indices that carry a latent projector.
    pub latent_stages: Vec<usize>,
    pub hidden: usize,
    pub latent_dim: usize,
}

impl Default for SegNetConfig {
    fn default() -> Self {
        SegNetConfig {
            image_width: 128,
            image_height: 64,
            num_classes: 5,
            channels: vec![16, 32, 64],
            latent_stages: vec![2, 3],
            hidden: 64,
            latent_dim: 32,
        }
    }
}

impl SegNetConfig {
    pub fn validate(&self) -> Result<(), SegNetError> {
        let bad = |m: &str| Err(SegNetError::Config(m.to_string()));
        if self.channels.is_empty() || self.channels.contains(&0) {
            return bad("channel widths must be positive and at least one stage given");
        }
        if self.num_classes < 2 || self.num_classes > 255 {
            return bad("num_classes must be in 2..=255");
        }
        if self.hidden == 0 || self.latent_dim == 0 {
            return bad("projector widths must be positive");
        }
        if self
            .latent_stages
            .iter()
            .any(|&s| s == 0 || s > self.channels.len())
        {
            return bad("latent stage index out of range");
        }
        let stride = self.stride(self.channels.len());
        if self.image_width % stride != 0 || self.image_height % stride != 0 {
            return bad("image size must be divisible by the total encoder stride");
        }
        Ok(())
    }

    /// Downsampling factor after 1-based stage `s`.
    pub fn stride(&self, stage: usize) -> usize {
        1 << stage
    }

    /// Check every projector stage sees at least one feature cell per patch.
    pub fn check_grid(&self, grid: &PatchGrid) -> Result<(), SegNetError> {
        if grid.image_size() != (self.image_width, self.image_height) {
            return Err(SegNetError::Config(format!(
                "grid image size {:?} differs from network input {}x{}",
                grid.image_size(),
                self.image_width,
                self.image_height
            )));
        }
        for &s in &self.latent_stages {
            grid.feature_regions(self.stride(s))?;
        }
        Ok(())
    }

    /// Lowercase hex sha256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        hex_sha256(&self.to_toml())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Names and shapes of every parameter tensor, in a fixed order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut prev = 3;
        for (i, &c) in self.channels.iter().enumerate() {
            out.push((format!("enc{}.w", i + 1), vec![c, prev, 3, 3]));
            out.push((format!("enc{}.b", i + 1), vec![c]));
            prev = c;
        }
        out.push(("head.w".into(), vec![self.num_classes, prev, 1, 1]));
        out.push(("head.b".into(), vec![self.num_classes]));
        for &s in &self.latent_stages {
            let c = self.channels[s - 1];
            out.push((format!("proj{s}.w1"), vec![c, self.hidden]));
            out.push((format!("proj{s}.b1"), vec![self.hidden]));
            out.push((format!("proj{s}.w2"), vec![self.hidden, self.latent_dim]));
            out.push((format!("proj{s}.b2"), vec![self.latent_dim]));
        }
        out
    }
}

pub(crate) fn hex_sha256(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// All trainable tensors plus the config that shaped them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: SegNetConfig,
    tensors: BTreeMap<String, Tensor>,
}

/// Weights uniform in `±sqrt(6 / fan_in)`, biases zero.
pub fn init_params(config: &SegNetConfig, seed: u64) -> Result<ModelParams, SegNetError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = BTreeMap::new();
    for (name, shape) in config.param_shapes() {
        let t = if shape.len() == 1 {
            Tensor::zeros(&shape)
        } else {
            let fan_in: usize = if shape.len() == 4 {
                shape[1..].iter().product()
            } else {
                shape[0]
            };
            let bound = (6.0 / fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
            Tensor::new(shape, data)?
        };
        tensors.insert(name, t);
    }
    Ok(ModelParams {
        config: config.clone(),
        tensors,
    })
}

impl ModelParams {
    pub fn from_tensors(
        config: SegNetConfig,
        tensors: BTreeMap<String, Tensor>,
    ) -> Result<Self, SegNetError> {
        config.validate()?;
        let shapes = config.param_shapes();
        if tensors.len() != shapes.len() {
            return Err(SegNetError::Param(format!(
                "expected {} tensors, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for (name, shape) in &shapes {
            match tensors.get(name) {
                Some(t) if t.shape() == shape.as_slice() && t.all_finite() => {}
                _ => return Err(SegNetError::Param(name.clone())),
            }
        }
        Ok(ModelParams { config, tensors })
    }

    pub fn config(&self) -> &SegNetConfig {
        &self.config
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    /// Mutable access for optimizers; shapes must be preserved.
    pub fn tensors_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Parameter values as graph bindings keyed by parameter name.
    pub fn bindings(&self) -> Bindings {
        self.tensors
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), SegNetError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_checkpoint(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SegNetError> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_checkpoint(f)
    }

    /// Text format:
    ///
    /// ```text
    /// patchwise-checkpoint v1
    /// config-sha256 <hex>
    /// config-lines <n>
    /// <n lines of TOML>
    /// tensor <name> <d0>x<d1>...
    /// <space-separated values>
    /// ...
    /// ```
    ///
    /// Values are written with round-trip precision.
    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> Result<(), SegNetError> {
        let toml = self.config.to_toml();
        writeln!(w, "{CHECKPOINT_MAGIC}")?;
        writeln!(w, "config-sha256 {}", hex_sha256(&toml))?;
        writeln!(w, "config-lines {}", toml.lines().count())?;
        for line in toml.lines() {
            writeln!(w, "{line}")?;
        }
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            writeln!(w, "tensor {name} {}", dims.join("x"))?;
            let vals: Vec<String> = t.data().iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{}", vals.join(" "))?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(r: R) -> Result<Self, SegNetError> {
        let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| -> Result<(usize, String), SegNetError> {
            match lines.next() {
                Some((n, l)) => Ok((n, l?)),
                None => Err(SegNetError::Checkpoint {
                    line: 0,
                    reason: format!("unexpected end of file, expected {what}"),
                }),
            }
        };
        let fail = |line: usize, reason: &str| SegNetError::Checkpoint {
            line,
            reason: reason.to_string(),
        };
        let (n, magic) = next("header")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(fail(n, "not a patchwise checkpoint"));
        }
        let (n, hash_line) = next("config hash")?;
        let hash = hash_line
            .strip_prefix("config-sha256 ")
            .ok_or_else(|| fail(n, "expected config-sha256"))?
            .to_string();
        let (n, count_line) = next("config line count")?;
        let count: usize = count_line
            .strip_prefix("config-lines ")
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| fail(n, "expected config-lines <n>"))?;
        let mut toml_text = String::new();
        for _ in 0..count {
            let (_, l) = next("config")?;
            toml_text.push_str(&l);
            toml_text.push('\n');
        }
        if hex_sha256(&toml_text) != hash {
            return Err(fail(n, "config hash mismatch"));
        }
        let config: SegNetConfig =
            toml::from_str(&toml_text).map_err(|e| fail(n, &format!("bad config: {e}")))?;
        let mut tensors = BTreeMap::new();
        while let Some((n, head)) = lines.next() {
            let head = head?;
            if head.is_empty() {
                continue;
            }
            let parts: Vec<&str> = head.split(' ').collect();
            let [tag, name, dims] = parts.as_slice() else {
                return Err(fail(n, "expected `tensor <name> <dims>`"));
            };
            if *tag != "tensor" {
                return Err(fail(n, "expected `tensor <name> <dims>`"));
            }
            let shape: Vec<usize> = dims
                .split('x')
                .map(|d| d.parse())
                .collect::<Result<_, _>>()
                .map_err(|_| fail(n, "bad dimensions"))?;
            let Some((n, body)) = lines.next() else {
                return Err(fail(n, "missing tensor values"));
            };
            let data: Vec<f64> = body?
                .split(' ')
                .map(|v| v.parse())
                .collect::<Result<_, _>>()
                .map_err(|_| fail(n, "bad tensor value"))?;
            let t = Tensor::new(shape, data).map_err(|e| fail(n, &e.to_string()))?;
            tensors.insert(name.to_string(), t);
        }
        Self::from_tensors(config, tensors)
    }
}

/// Graph nodes for one image's forward pass.
#[derive(Clone, Debug)]
pub struct ForwardNodes {
    /// `[N_c, H, W]` class probabilities.
    pub probs: NodeId,
    /// One `[N_p, d_z]` latent matrix per projector stage, in stage order.
    pub latents: Vec<NodeId>,
}

/// Parameter leaves registered in a graph under their parameter names.
#[derive(Clone, Debug)]
pub struct ParamNodes {
    nodes: BTreeMap<String, NodeId>,
}

impl ParamNodes {
    pub fn register(b: &mut GraphBuilder, config: &SegNetConfig) -> Result<Self, SegNetError> {
        let mut nodes = BTreeMap::new();
        for (name, shape) in config.param_shapes() {
            nodes.insert(name.clone(), b.leaf(&name, &shape)?);
        }
        Ok(ParamNodes { nodes })
    }

    fn get(&self, name: &str) -> Result<NodeId, SegNetError> {
        self.nodes
            .get(name)
            .copied()
            .ok_or_else(|| SegNetError::Param(name.to_string()))
    }
}

/// Add one image's forward pass to `b`. Projector outputs are built only
/// when `grid` is given, so inference skips them.
pub fn build_forward(
    b: &mut GraphBuilder,
    config: &SegNetConfig,
    params: &ParamNodes,
    image: NodeId,
    grid: Option<&PatchGrid>,
) -> Result<ForwardNodes, SegNetError> {
    let want = vec![3, config.image_height, config.image_width];
    if b.shape(image) != want.as_slice() {
        return Err(SegNetError::ImageShape {
            got: b.shape(image).to_vec(),
            want,
        });
    }
    let mut x = image;
    let mut latents = Vec::new();
    for stage in 1..=config.channels.len() {
        let w = params.get(&format!("enc{stage}.w"))?;
        let bias = params.get(&format!("enc{stage}.b"))?;
        let conv = b.conv2d(x, w, bias, 2, 1)?;
        x = b.relu(conv);
        if let Some(grid) = grid {
            if config.latent_stages.contains(&stage) {
                let regions = grid.feature_regions(config.stride(stage))?;
                let pooled = b.avg_pool_regions(x, regions)?;
                let h = b.matmul(pooled, params.get(&format!("proj{stage}.w1"))?)?;
                let h = b.add_bias(h, params.get(&format!("proj{stage}.b1"))?)?;
                let h = b.relu(h);
                let z = b.matmul(h, params.get(&format!("proj{stage}.w2"))?)?;
                latents.push(b.add_bias(z, params.get(&format!("proj{stage}.b2"))?)?);
            }
        }
    }
    let logits = b.conv2d(x, params.get("head.w")?, params.get("head.b")?, 1, 0)?;
    let up = b.upsample_bilinear(logits, config.image_height, config.image_width)?;
    let probs = b.softmax(up, 0)?;
    Ok(ForwardNodes { probs, latents })
}

/// Result of a standalone forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub probs: Tensor,
    /// Per projector stage, `N_p` latent vectors indexed by patch.
    pub latents: Vec<Vec<Vec<f64>>>,
    pub conv_evals: usize,
}

/// One shared encoder pass producing the segmentation and, with a grid,
/// the patch latents.
pub fn forward(
    params: &ModelParams,
    image: &Tensor,
    grid: Option<&PatchGrid>,
) -> Result<Forward, SegNetError> {
    let config = params.config();
    if let Some(g) = grid {
        config.check_grid(g)?;
    }
    let mut b = GraphBuilder::new();
    let pn = ParamNodes::register(&mut b, config)?;
    let want = vec![3, config.image_height, config.image_width];
    if image.shape() != want.as_slice() {
        return Err(SegNetError::ImageShape {
            got: image.shape().to_vec(),
            want,
        });
    }
    let x = b.constant(image.clone());
    let out = build_forward(&mut b, config, &pn, x, grid)?;
    let g = b.build(out.probs);
    let eval = g.evaluate(&params.bindings())?;
    let latents = out
        .latents
        .iter()
        .map(|&id| {
            let t = eval.value(id);
            t.data().chunks(t.shape()[1]).map(<[f64]>::to_vec).collect()
        })
        .collect();
    Ok(Forward {
        probs: eval.value(out.probs).clone(),
        latents,
        conv_evals: eval.stats.conv_evals,
    })
}

/// `[N_c, H, W]` per-pixel class distribution.
pub fn segment(params: &ModelParams, image: &Tensor) -> Result<Tensor, SegNetError> {
    Ok(forward(params, image, None)?.probs)
}

/// Per projector stage, the `N_p` patch latent vectors.
pub fn project_latent(
    params: &ModelParams,
    image: &Tensor,
    grid: &PatchGrid,
) -> Result<Vec<Vec<Vec<f64>>>, SegNetError> {
    Ok(forward(params, image, Some(grid))?.latents)
}
