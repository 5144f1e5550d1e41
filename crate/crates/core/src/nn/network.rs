use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{relu_backward, relu_in_place, Array4, BatchNorm2d, BnCache, Conv2d, Linear, Mode, NnError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnSpec {
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
    pub embedding: usize,
}

impl Default for CnnSpec {
    fn default() -> Self {
        Self {
            conv1: ConvSpec {
                channels: 16,
                kernel: [8, 8],
                stride: [4, 4],
            },
            conv2: ConvSpec {
                channels: 32,
                kernel: [4, 4],
                stride: [2, 2],
            },
            embedding: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpSpec {
    /// Hidden widths; empty means the flattened input is the embedding.
    pub hidden: Vec<usize>,
}

impl Default for MlpSpec {
    fn default() -> Self {
        Self { hidden: vec![256, 256] }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ExtractorSpec {
    Cnn(CnnSpec),
    Mlp(MlpSpec),
}

fn default_true() -> bool {
    true
}
fn default_log_std_init() -> f64 {
    0.5f64.ln()
}
fn default_log_std_min() -> f64 {
    -5.0
}
fn default_log_std_max() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_height: usize,
    pub input_width: usize,
    pub action_dim: usize,
    pub extractor: ExtractorSpec,
    /// Policy and value heads read one extractor when true.
    #[serde(default = "default_true")]
    pub shared_trunk: bool,
    #[serde(default = "default_log_std_init")]
    pub log_std_init: f64,
    #[serde(default = "default_log_std_min")]
    pub log_std_min: f64,
    #[serde(default = "default_log_std_max")]
    pub log_std_max: f64,
}

impl NetworkSpec {
    pub fn new(input_height: usize, input_width: usize, action_dim: usize, extractor: ExtractorSpec) -> Self {
        Self {
            input_height,
            input_width,
            action_dim,
            extractor,
            shared_trunk: true,
            log_std_init: default_log_std_init(),
            log_std_min: default_log_std_min(),
            log_std_max: default_log_std_max(),
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::InvalidSpec(m));
        if self.input_height == 0 || self.input_width == 0 {
            return bad(format!("input {}x{} is empty", self.input_height, self.input_width));
        }
        if self.action_dim == 0 {
            return bad("action_dim must be at least 1".into());
        }
        if !(self.log_std_min.is_finite() && self.log_std_max.is_finite() && self.log_std_min < self.log_std_max) {
            return bad(format!(
                "log-std bounds [{}, {}] are not an interval",
                self.log_std_min, self.log_std_max
            ));
        }
        if !(self.log_std_min..=self.log_std_max).contains(&self.log_std_init) {
            return bad(format!(
                "log_std_init {} outside [{}, {}]",
                self.log_std_init, self.log_std_min, self.log_std_max
            ));
        }
        match &self.extractor {
            ExtractorSpec::Cnn(c) => {
                CnnShapes::trace(c, self.input_height, self.input_width)?;
            }
            ExtractorSpec::Mlp(m) => {
                if m.hidden.contains(&0) {
                    return bad("MLP hidden widths must be positive".into());
                }
            }
        }
        Ok(())
    }
}

/// Per-layer activation shapes `(channels, height, width)` of a CNN extractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CnnShapes {
    pub input: [usize; 3],
    pub conv1: [usize; 3],
    pub conv2: [usize; 3],
    pub flattened: usize,
    pub embedding: usize,
}

impl CnnShapes {
    pub fn trace(spec: &CnnSpec, height: usize, width: usize) -> Result<Self, NnError> {
        for (name, c) in [("conv1", &spec.conv1), ("conv2", &spec.conv2)] {
            if c.channels == 0 || c.kernel.contains(&0) || c.stride.contains(&0) {
                return Err(NnError::InvalidSpec(format!(
                    "{name} needs positive channels, kernel and stride"
                )));
            }
        }
        if spec.embedding == 0 {
            return Err(NnError::InvalidSpec("embedding width must be positive".into()));
        }
        let c1 = Conv2d::zeros(1, spec.conv1.channels, spec.conv1.kernel, spec.conv1.stride);
        let (h1, w1) = c1.output_dims(height, width)?;
        let c2 = Conv2d::zeros(
            spec.conv1.channels,
            spec.conv2.channels,
            spec.conv2.kernel,
            spec.conv2.stride,
        );
        let (h2, w2) = c2.output_dims(h1, w1)?;
        Ok(Self {
            input: [1, height, width],
            conv1: [spec.conv1.channels, h1, w1],
            conv2: [spec.conv2.channels, h2, w2],
            flattened: spec.conv2.channels * h2 * w2,
            embedding: spec.embedding,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorKind {
    /// Trained by gradient descent.
    Param,
    /// Carried state such as batch-norm running statistics.
    Buffer,
}

#[derive(Debug)]
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: TensorKind,
    pub data: &'a [f64],
}

#[derive(Debug)]
pub struct TensorMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: TensorKind,
    pub data: &'a mut [f64],
}

fn param<'a>(name: String, shape: Vec<usize>, data: &'a [f64]) -> TensorRef<'a> {
    TensorRef {
        name,
        shape,
        kind: TensorKind::Param,
        data,
    }
}

fn param_mut<'a>(name: String, shape: Vec<usize>, data: &'a mut [f64]) -> TensorMut<'a> {
    TensorMut {
        name,
        shape,
        kind: TensorKind::Param,
        data,
    }
}

fn conv_tensors<'a>(p: &str, c: &'a Conv2d) -> Vec<TensorRef<'a>> {
    let ws = vec![c.out_channels, c.in_channels, c.kernel[0], c.kernel[1]];
    vec![
        param(format!("{p}.weight"), ws, &c.weight),
        param(format!("{p}.bias"), vec![c.out_channels], &c.bias),
    ]
}

fn conv_tensors_mut<'a>(p: &str, c: &'a mut Conv2d) -> Vec<TensorMut<'a>> {
    let ws = vec![c.out_channels, c.in_channels, c.kernel[0], c.kernel[1]];
    let oc = c.out_channels;
    vec![
        param_mut(format!("{p}.weight"), ws, &mut c.weight),
        param_mut(format!("{p}.bias"), vec![oc], &mut c.bias),
    ]
}

fn bn_tensors<'a>(p: &str, b: &'a BatchNorm2d) -> Vec<TensorRef<'a>> {
    let s = vec![b.channels()];
    let buffer = |name: &str, data: &'a [f64]| TensorRef {
        name: format!("{p}.{name}"),
        shape: s.clone(),
        kind: TensorKind::Buffer,
        data,
    };
    vec![
        param(format!("{p}.gamma"), s.clone(), &b.gamma),
        param(format!("{p}.beta"), s.clone(), &b.beta),
        buffer("running_mean", &b.running_mean),
        buffer("running_var", &b.running_var),
    ]
}

fn bn_tensors_mut<'a>(p: &str, b: &'a mut BatchNorm2d) -> Vec<TensorMut<'a>> {
    let s = vec![b.channels()];
    let buffer = |name: &str, data: &'a mut [f64]| TensorMut {
        name: format!("{p}.{name}"),
        shape: s.clone(),
        kind: TensorKind::Buffer,
        data,
    };
    vec![
        param_mut(format!("{p}.gamma"), s.clone(), &mut b.gamma),
        param_mut(format!("{p}.beta"), s.clone(), &mut b.beta),
        buffer("running_mean", &mut b.running_mean),
        buffer("running_var", &mut b.running_var),
    ]
}

fn linear_tensors<'a>(p: &str, l: &'a Linear) -> Vec<TensorRef<'a>> {
    vec![
        param(format!("{p}.weight"), vec![l.out_features, l.in_features], &l.weight),
        param(format!("{p}.bias"), vec![l.out_features], &l.bias),
    ]
}

fn linear_tensors_mut<'a>(p: &str, l: &'a mut Linear) -> Vec<TensorMut<'a>> {
    let (o, i) = (l.out_features, l.in_features);
    vec![
        param_mut(format!("{p}.weight"), vec![o, i], &mut l.weight),
        param_mut(format!("{p}.bias"), vec![o], &mut l.bias),
    ]
}

/// conv1 -> BN -> ReLU -> conv2 -> BN -> ReLU -> flatten -> linear -> ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnExtractor {
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
    pub fc: Linear,
    shapes: CnnShapes,
}

#[derive(Debug, Clone)]
pub struct CnnCache {
    input: Array4,
    bn1: BnCache,
    a1: Array4,
    bn2: BnCache,
    /// Post-ReLU conv2 activations, flattened.
    flat: Array4,
    embedding: Array4,
}

impl CnnExtractor {
    pub fn zeros(spec: &CnnSpec, height: usize, width: usize) -> Result<Self, NnError> {
        let shapes = CnnShapes::trace(spec, height, width)?;
        Ok(Self {
            conv1: Conv2d::zeros(1, spec.conv1.channels, spec.conv1.kernel, spec.conv1.stride),
            bn1: BatchNorm2d::new(spec.conv1.channels),
            conv2: Conv2d::zeros(
                spec.conv1.channels,
                spec.conv2.channels,
                spec.conv2.kernel,
                spec.conv2.stride,
            ),
            bn2: BatchNorm2d::new(spec.conv2.channels),
            fc: Linear::zeros(shapes.flattened, spec.embedding),
            shapes,
        })
    }

    pub fn shapes(&self) -> CnnShapes {
        self.shapes
    }

    pub fn forward(&self, x: &Array4, mode: Mode) -> Result<(Array4, CnnCache), NnError> {
        let [n, c, h, w] = x.shape();
        if [c, h, w] != self.shapes.input {
            return Err(NnError::Shape(format!(
                "CNN extractor expects (batch, {:?}), got {:?}",
                self.shapes.input,
                x.shape()
            )));
        }
        let z1 = self.conv1.forward(x)?;
        z1.ensure_finite("conv1")?;
        let (mut a1, bn1) = self.bn1.forward(&z1, mode)?;
        a1.ensure_finite("bn1")?;
        relu_in_place(&mut a1);
        let z2 = self.conv2.forward(&a1)?;
        z2.ensure_finite("conv2")?;
        let (mut a2, bn2) = self.bn2.forward(&z2, mode)?;
        a2.ensure_finite("bn2")?;
        relu_in_place(&mut a2);
        let flat = a2.reshape([n, self.shapes.flattened, 1, 1])?;
        let mut embedding = self.fc.forward(&flat)?;
        embedding.ensure_finite("fc")?;
        relu_in_place(&mut embedding);
        let cache = CnnCache {
            input: x.clone(),
            bn1,
            a1,
            bn2,
            flat,
            embedding: embedding.clone(),
        };
        Ok((embedding, cache))
    }

    /// Parameter gradients in [`CnnExtractor::tensors`] parameter order.
    pub fn backward(&self, cache: &CnnCache, grad_embedding: &Array4) -> Result<Vec<Vec<f64>>, NnError> {
        let g_h = relu_backward(&cache.embedding, grad_embedding)?;
        let (g_flat, fc) = self.fc.backward(&cache.flat, &g_h)?;
        let g_flat = relu_backward(&cache.flat, &g_flat)?;
        let [c2, h2, w2] = self.shapes.conv2;
        let g_y2 = g_flat.reshape([cache.flat.batch(), c2, h2, w2])?;
        let (g_z2, bn2) = self.bn2.backward(&cache.bn2, &g_y2)?;
        let (g_a1, conv2) = self.conv2.backward(&cache.a1, &g_z2)?;
        let g_y1 = relu_backward(&cache.a1, &g_a1)?;
        let (g_z1, bn1) = self.bn1.backward(&cache.bn1, &g_y1)?;
        let (_, conv1) = self.conv1.backward_with(&cache.input, &g_z1, false)?;
        Ok(vec![
            conv1.weight,
            conv1.bias,
            bn1.gamma,
            bn1.beta,
            conv2.weight,
            conv2.bias,
            bn2.gamma,
            bn2.beta,
            fc.weight,
            fc.bias,
        ])
    }

    pub fn commit(&mut self, cache: &CnnCache) {
        self.bn1.commit(&cache.bn1);
        self.bn2.commit(&cache.bn2);
    }

    pub fn tensors(&self, p: &str) -> Vec<TensorRef<'_>> {
        let mut v = conv_tensors(&format!("{p}.conv1"), &self.conv1);
        v.extend(bn_tensors(&format!("{p}.bn1"), &self.bn1));
        v.extend(conv_tensors(&format!("{p}.conv2"), &self.conv2));
        v.extend(bn_tensors(&format!("{p}.bn2"), &self.bn2));
        v.extend(linear_tensors(&format!("{p}.fc"), &self.fc));
        v
    }

    pub fn tensors_mut(&mut self, p: &str) -> Vec<TensorMut<'_>> {
        let mut v = conv_tensors_mut(&format!("{p}.conv1"), &mut self.conv1);
        v.extend(bn_tensors_mut(&format!("{p}.bn1"), &mut self.bn1));
        v.extend(conv_tensors_mut(&format!("{p}.conv2"), &mut self.conv2));
        v.extend(bn_tensors_mut(&format!("{p}.bn2"), &mut self.bn2));
        v.extend(linear_tensors_mut(&format!("{p}.fc"), &mut self.fc));
        v
    }
}

impl CnnCache {
    fn relu_signature(&self, out: &mut Vec<bool>) {
        for a in [&self.a1, &self.flat, &self.embedding] {
            out.extend(a.data().iter().map(|v| *v > 0.0));
        }
    }
}

/// Flatten, then `hidden.len()` linear + ReLU layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpExtractor {
    pub layers: Vec<Linear>,
    input_len: usize,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input of each layer followed by the final output.
    activations: Vec<Array4>,
}

impl MlpExtractor {
    pub fn zeros(spec: &MlpSpec, input_len: usize) -> Self {
        let mut layers = Vec::with_capacity(spec.hidden.len());
        let mut prev = input_len;
        for &h in &spec.hidden {
            layers.push(Linear::zeros(prev, h));
            prev = h;
        }
        Self { layers, input_len }
    }

    pub fn embedding_len(&self) -> usize {
        self.layers.last().map_or(self.input_len, |l| l.out_features)
    }

    pub fn forward(&self, x: &Array4) -> Result<(Array4, MlpCache), NnError> {
        if x.item_len() != self.input_len {
            return Err(NnError::Shape(format!(
                "MLP extractor expects {} inputs per item, got {}",
                self.input_len,
                x.item_len()
            )));
        }
        let mut cur = x.clone().reshape([x.batch(), self.input_len, 1, 1])?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = layer.forward(&cur)?;
            next.ensure_finite(&format!("mlp.layer{i}"))?;
            relu_in_place(&mut next);
            activations.push(cur);
            cur = next;
        }
        activations.push(cur.clone());
        Ok((cur, MlpCache { activations }))
    }

    pub fn backward(&self, cache: &MlpCache, grad_embedding: &Array4) -> Result<Vec<Vec<f64>>, NnError> {
        let mut grads = vec![Vec::new(); 2 * self.layers.len()];
        let mut g = grad_embedding.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let g_pre = relu_backward(&cache.activations[i + 1], &g)?;
            let (gx, lg) = layer.backward_with(&cache.activations[i], &g_pre, i > 0)?;
            grads[2 * i] = lg.weight;
            grads[2 * i + 1] = lg.bias;
            if let Some(gx) = gx {
                g = gx;
            }
        }
        Ok(grads)
    }

    pub fn tensors(&self, p: &str) -> Vec<TensorRef<'_>> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| linear_tensors(&format!("{p}.layer{i}"), l))
            .collect()
    }

    pub fn tensors_mut(&mut self, p: &str) -> Vec<TensorMut<'_>> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| linear_tensors_mut(&format!("{p}.layer{i}"), l))
            .collect()
    }
}

impl MlpCache {
    fn relu_signature(&self, out: &mut Vec<bool>) {
        for a in self.activations.iter().skip(1) {
            out.extend(a.data().iter().map(|v| *v > 0.0));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Extractor {
    Cnn(CnnExtractor),
    Mlp(MlpExtractor),
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum ExtractorCache {
    Cnn(CnnCache),
    Mlp(MlpCache),
}

impl ExtractorCache {
    fn relu_signature(&self, out: &mut Vec<bool>) {
        match self {
            ExtractorCache::Cnn(c) => c.relu_signature(out),
            ExtractorCache::Mlp(c) => c.relu_signature(out),
        }
    }
}

impl Extractor {
    pub fn zeros(spec: &ExtractorSpec, height: usize, width: usize) -> Result<Self, NnError> {
        Ok(match spec {
            ExtractorSpec::Cnn(c) => Extractor::Cnn(CnnExtractor::zeros(c, height, width)?),
            ExtractorSpec::Mlp(m) => Extractor::Mlp(MlpExtractor::zeros(m, height * width)),
        })
    }

    pub fn embedding_len(&self) -> usize {
        match self {
            Extractor::Cnn(c) => c.shapes.embedding,
            Extractor::Mlp(m) => m.embedding_len(),
        }
    }

    pub fn forward(&self, x: &Array4, mode: Mode) -> Result<(Array4, ExtractorCache), NnError> {
        match self {
            Extractor::Cnn(c) => c.forward(x, mode).map(|(e, k)| (e, ExtractorCache::Cnn(k))),
            Extractor::Mlp(m) => m.forward(x).map(|(e, k)| (e, ExtractorCache::Mlp(k))),
        }
    }

    pub fn backward(&self, cache: &ExtractorCache, grad: &Array4) -> Result<Vec<Vec<f64>>, NnError> {
        match (self, cache) {
            (Extractor::Cnn(e), ExtractorCache::Cnn(c)) => e.backward(c, grad),
            (Extractor::Mlp(e), ExtractorCache::Mlp(c)) => e.backward(c, grad),
            _ => Err(NnError::Shape(
                "extractor cache is from a different extractor kind".into(),
            )),
        }
    }

    pub fn commit(&mut self, cache: &ExtractorCache) {
        if let (Extractor::Cnn(e), ExtractorCache::Cnn(c)) = (self, cache) {
            e.commit(c);
        }
    }

    pub fn tensors(&self, p: &str) -> Vec<TensorRef<'_>> {
        match self {
            Extractor::Cnn(e) => e.tensors(p),
            Extractor::Mlp(e) => e.tensors(p),
        }
    }

    pub fn tensors_mut(&mut self, p: &str) -> Vec<TensorMut<'_>> {
        match self {
            Extractor::Cnn(e) => e.tensors_mut(p),
            Extractor::Mlp(e) => e.tensors_mut(p),
        }
    }
}

/// Diagonal-Gaussian policy mean, state-independent log-std and value estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub batch: usize,
    /// `(batch, action_dim)` row-major.
    pub mean: Vec<f64>,
    /// Clamped log standard deviation, one per action dimension.
    pub log_std: Vec<f64>,
    pub value: Vec<f64>,
}

impl PolicyOutput {
    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn mean_row(&self, i: usize) -> &[f64] {
        let d = self.action_dim();
        &self.mean[i * d..(i + 1) * d]
    }
}

/// Loss gradients with respect to each field of a [`PolicyOutput`].
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrads {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    pub value: Vec<f64>,
}

impl OutputGrads {
    pub fn zeros_like(out: &PolicyOutput) -> Self {
        Self {
            mean: vec![0.0; out.mean.len()],
            log_std: vec![0.0; out.log_std.len()],
            value: vec![0.0; out.value.len()],
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    trunk: ExtractorCache,
    value_trunk: Option<ExtractorCache>,
    embedding: Array4,
    value_embedding: Option<Array4>,
}

impl ForwardCache {
    /// On/off pattern of every ReLU, used to detect kink crossings.
    pub fn relu_signature(&self) -> Vec<bool> {
        let mut out = Vec::new();
        self.trunk.relu_signature(&mut out);
        if let Some(v) = &self.value_trunk {
            v.relu_signature(&mut out);
        }
        out
    }
}

/// One gradient buffer per trainable tensor, in network parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub names: Vec<String>,
    pub buffers: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(net: &ActorCritic) -> Self {
        let (names, buffers) = net
            .tensors()
            .into_iter()
            .filter(|t| t.kind == TensorKind::Param)
            .map(|t| (t.name, vec![0.0; t.data.len()]))
            .unzip();
        Self { names, buffers }
    }

    pub fn matches(&self, net: &ActorCritic) -> bool {
        let params: Vec<_> = net
            .tensors()
            .into_iter()
            .filter(|t| t.kind == TensorKind::Param)
            .collect();
        params.len() == self.buffers.len()
            && params
                .iter()
                .zip(self.names.iter().zip(&self.buffers))
                .all(|(t, (n, b))| &t.name == n && t.data.len() == b.len())
    }

    pub fn global_norm(&self) -> f64 {
        self.buffers.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.buffers.iter_mut().flatten().for_each(|g| *g *= factor);
    }

    pub fn ensure_finite(&self) -> Result<(), NnError> {
        for (name, b) in self.names.iter().zip(&self.buffers) {
            if let Some(index) = b.iter().position(|v| !v.is_finite()) {
                return Err(NnError::NonFinite {
                    layer: format!("grad {name}"),
                    index,
                });
            }
        }
        Ok(())
    }
}

/// Extractor trunk(s) with a Gaussian policy head and a scalar value head.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    spec: NetworkSpec,
    pub trunk: Extractor,
    pub value_trunk: Option<Extractor>,
    pub policy: Linear,
    pub log_std: Vec<f64>,
    pub value: Linear,
}

impl ActorCritic {
    /// All-zero weights; see [`init_params`] for a trainable start.
    pub fn zeros(spec: &NetworkSpec) -> Result<Self, NnError> {
        spec.validate()?;
        let trunk = Extractor::zeros(&spec.extractor, spec.input_height, spec.input_width)?;
        let value_trunk = (!spec.shared_trunk)
            .then(|| Extractor::zeros(&spec.extractor, spec.input_height, spec.input_width))
            .transpose()?;
        let e = trunk.embedding_len();
        Ok(Self {
            spec: spec.clone(),
            policy: Linear::zeros(e, spec.action_dim),
            log_std: vec![spec.log_std_init; spec.action_dim],
            value: Linear::zeros(e, 1),
            trunk,
            value_trunk,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn action_dim(&self) -> usize {
        self.spec.action_dim
    }

    pub fn input_shape(&self) -> (usize, usize) {
        (self.spec.input_height, self.spec.input_width)
    }

    pub fn clamped_log_std(&self) -> Vec<f64> {
        self.log_std
            .iter()
            .map(|v| v.clamp(self.spec.log_std_min, self.spec.log_std_max))
            .collect()
    }

    /// Clamps the raw log-std parameters into their configured bounds.
    pub fn clamp_log_std(&mut self) {
        let (lo, hi) = (self.spec.log_std_min, self.spec.log_std_max);
        self.log_std.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
    }

    /// Stacks flat windows into a `(n, 1, height, width)` batch.
    pub fn batch_input<'a>(&self, windows: impl IntoIterator<Item = &'a [f64]>) -> Result<Array4, NnError> {
        let (h, w) = self.input_shape();
        let mut data = Vec::new();
        let mut n = 0;
        for win in windows {
            if win.len() != h * w {
                return Err(NnError::Shape(format!(
                    "network expects {h}x{w} windows ({} values), got {} values",
                    h * w,
                    win.len()
                )));
            }
            data.extend_from_slice(win);
            n += 1;
        }
        Array4::from_vec([n, 1, h, w], data)
    }

    pub fn forward(&self, x: &Array4, mode: Mode) -> Result<(PolicyOutput, ForwardCache), NnError> {
        let [n, c, h, w] = x.shape();
        if (c, h, w) != (1, self.spec.input_height, self.spec.input_width) {
            return Err(NnError::Shape(format!(
                "network expects input (batch, 1, {}, {}), got {:?}",
                self.spec.input_height,
                self.spec.input_width,
                x.shape()
            )));
        }
        let (embedding, trunk) = self.trunk.forward(x, mode)?;
        let mean = self.policy.forward(&embedding)?;
        mean.ensure_finite("policy head")?;
        let (value_embedding, value_trunk) = match &self.value_trunk {
            Some(vt) => {
                let (e, c) = vt.forward(x, mode)?;
                (Some(e), Some(c))
            }
            None => (None, None),
        };
        let value = self.value.forward(value_embedding.as_ref().unwrap_or(&embedding))?;
        value.ensure_finite("value head")?;
        let out = PolicyOutput {
            batch: n,
            mean: mean.into_vec(),
            log_std: self.clamped_log_std(),
            value: value.into_vec(),
        };
        Ok((
            out,
            ForwardCache {
                trunk,
                value_trunk,
                embedding,
                value_embedding,
            },
        ))
    }

    /// Inference-mode forward pass; never touches running statistics.
    pub fn infer(&self, x: &Array4) -> Result<PolicyOutput, NnError> {
        self.forward(x, Mode::Inference).map(|(o, _)| o)
    }

    pub fn backward(&self, cache: &ForwardCache, grads: &OutputGrads) -> Result<GradientSet, NnError> {
        let n = cache.embedding.batch();
        let d = self.spec.action_dim;
        if grads.mean.len() != n * d || grads.value.len() != n || grads.log_std.len() != d {
            return Err(NnError::Shape(format!(
                "output gradients ({}, {}, {}) do not match batch {n} x action_dim {d}",
                grads.mean.len(),
                grads.log_std.len(),
                grads.value.len()
            )));
        }
        let g_mean = Array4::from_rows(n, d, grads.mean.clone())?;
        let g_value = Array4::from_rows(n, 1, grads.value.clone())?;
        let (g_emb_p, policy) = self.policy.backward(&cache.embedding, &g_mean)?;
        let value_in = cache.value_embedding.as_ref().unwrap_or(&cache.embedding);
        let (g_emb_v, value) = self.value.backward(value_in, &g_value)?;

        let mut buffers = Vec::new();
        match (&self.value_trunk, &cache.value_trunk) {
            (None, None) => {
                let mut g = g_emb_p;
                g.data_mut().iter_mut().zip(g_emb_v.data()).for_each(|(a, b)| *a += b);
                buffers.extend(self.trunk.backward(&cache.trunk, &g)?);
            }
            (Some(vt), Some(vc)) => {
                buffers.extend(self.trunk.backward(&cache.trunk, &g_emb_p)?);
                buffers.extend(vt.backward(vc, &g_emb_v)?);
            }
            _ => return Err(NnError::Shape("forward cache does not match trunk layout".into())),
        }
        let (lo, hi) = (self.spec.log_std_min, self.spec.log_std_max);
        let g_log_std = self
            .log_std
            .iter()
            .zip(&grads.log_std)
            .map(|(&v, &g)| if v > lo && v < hi { g } else { 0.0 })
            .collect();
        buffers.extend([policy.weight, policy.bias, g_log_std, value.weight, value.bias]);
        let names = self
            .tensors()
            .into_iter()
            .filter(|t| t.kind == TensorKind::Param)
            .map(|t| t.name)
            .collect();
        let set = GradientSet { names, buffers };
        set.ensure_finite()?;
        Ok(set)
    }

    /// Applies train-mode batch statistics from `cache` to the running averages.
    /// True when the extractor carries batch-norm running statistics.
    pub fn has_batch_norm(&self) -> bool {
        matches!(self.trunk, Extractor::Cnn(_))
    }

    pub fn commit_running_stats(&mut self, cache: &ForwardCache) {
        self.trunk.commit(&cache.trunk);
        if let (Some(vt), Some(vc)) = (self.value_trunk.as_mut(), cache.value_trunk.as_ref()) {
            vt.commit(vc);
        }
    }

    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut v = self.trunk.tensors("trunk");
        if let Some(vt) = &self.value_trunk {
            v.extend(vt.tensors("value_trunk"));
        }
        v.extend(linear_tensors("policy", &self.policy));
        v.push(TensorRef {
            name: "log_std".into(),
            shape: vec![self.log_std.len()],
            kind: TensorKind::Param,
            data: &self.log_std,
        });
        v.extend(linear_tensors("value", &self.value));
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut v = self.trunk.tensors_mut("trunk");
        if let Some(vt) = &mut self.value_trunk {
            v.extend(vt.tensors_mut("value_trunk"));
        }
        v.extend(linear_tensors_mut("policy", &mut self.policy));
        let d = self.log_std.len();
        v.push(TensorMut {
            name: "log_std".into(),
            shape: vec![d],
            kind: TensorKind::Param,
            data: &mut self.log_std,
        });
        v.extend(linear_tensors_mut("value", &mut self.value));
        v
    }

    pub fn param_count(&self) -> usize {
        self.tensors()
            .iter()
            .filter(|t| t.kind == TensorKind::Param)
            .map(|t| t.data.len())
            .sum()
    }
}

/// Scale applied to the policy-mean head's initial weights so that a fresh
/// policy starts with actions near zero rather than saturated.
pub const POLICY_HEAD_GAIN: f64 = 0.01;

/// Deterministic initialization: fan-in normal weights with std `sqrt(2 / fan_in)`
/// (times [`POLICY_HEAD_GAIN`] for the policy-mean head), zero biases, unit BN
/// gain, log-std at the configured initial value.
pub fn init_params(seed: u64, spec: &NetworkSpec) -> Result<ActorCritic, NnError> {
    let mut net = ActorCritic::zeros(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in net.tensors_mut() {
        if t.kind == TensorKind::Param && t.name.ends_with(".weight") {
            let fan_in: usize = t.shape[1..].iter().product();
            let gain = if t.name == "policy.weight" {
                POLICY_HEAD_GAIN
            } else {
                1.0
            };
            let normal = Normal::new(0.0, gain * (2.0 / fan_in as f64).sqrt())
                .map_err(|e| NnError::InvalidSpec(e.to_string()))?;
            t.data.iter_mut().for_each(|w| *w = normal.sample(&mut rng));
        }
    }
    Ok(net)
}
