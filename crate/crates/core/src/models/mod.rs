//! Backbone registry with torchvision-compatible parameter names.
//!
//! Every backbone is split into `features` (ending at the layer Grad-CAM
//! reads) and `head` (pooling, dropout and the replaced classification
//! layer). Pretrained weights are read from `<weights_dir>/<name>.safetensors`,
//! a torchvision state dict exported by `scripts/export_torchvision.py`; the
//! classification layer is always freshly initialized.

pub mod layers;

mod classic;
mod densenet;
mod inception;
mod mobile;
mod resnet;
mod squeezenet;
mod tiny;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Shape, Tensor, Var};
use candle_nn::var_builder::SimpleBackend;
use candle_nn::{Init, VarBuilder, VarMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::multitask::HeadLayout;
use layers::{Dropout, SharedRng};

/// Environment variable naming the pretrained weights directory.
pub const WEIGHTS_ENV: &str = "CVTK_WEIGHTS_DIR";

pub trait Backbone: Send + Sync {
    /// Final convolutional feature maps, `(N, C, H, W)`.
    fn features(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor>;
    /// Logits from the feature maps.
    fn head(&self, features: &Tensor, train: bool) -> candle_core::Result<Tensor>;
}

/// Head settings shared by all architectures.
pub struct HeadOptions {
    pub num_outputs: usize,
    /// Overrides the architecture's dropout before the classification layer.
    pub dropout: Option<f32>,
    pub rng: SharedRng,
}

impl HeadOptions {
    fn dropout(&self, default: f32) -> Dropout {
        Dropout::new(self.dropout.unwrap_or(default), self.rng.clone())
    }
}

#[derive(Debug, Serialize)]
pub struct BackboneInfo {
    pub name: &'static str,
    pub display: &'static str,
    /// Depth in the architecture's name (Table-style "# layers").
    pub nominal_layers: usize,
    /// Canonical pretraining resolution.
    pub input_size: usize,
    /// Smallest square input the architecture accepts.
    pub min_input_size: usize,
    /// Parameter prefixes of the replaced classification layer(s).
    pub head_prefixes: &'static [&'static str],
    /// Layer whose output Grad-CAM reads.
    pub cam_layer: &'static str,
}

pub const REGISTRY: [BackboneInfo; 11] = [
    info("resnet18", "ResNet18", 18, 224, 32, &["fc."], "layer4"),
    info("resnet50", "ResNet50", 50, 224, 32, &["fc."], "layer4"),
    info("resnet101", "ResNet101", 101, 224, 32, &["fc."], "layer4"),
    info("alexnet", "AlexNet", 8, 224, 63, &["classifier.6."], "features.11"),
    info("vgg16", "VGG16", 16, 224, 32, &["classifier.6."], "features.29"),
    info("densenet121", "DenseNet (121)", 121, 224, 32, &["classifier."], "features.norm5 + ReLU"),
    info("squeezenet", "SqueezeNet", 18, 224, 32, &["classifier.1."], "features.12"),
    info("inception_v3", "InceptionNet (v3)", 42, 299, 75, &["fc.", "AuxLogits.fc."], "Mixed_7c"),
    info("mobilenet_v2", "MobileNet (v2)", 20, 224, 32, &["classifier.1."], "features.18"),
    info("efficientnet_b1", "EfficientNet (b1)", 25, 224, 32, &["classifier.1."], "features.8"),
    info("tinycnn", "TinyCNN", 4, 32, 4, &["fc."], "block3"),
];

const fn info(
    name: &'static str,
    display: &'static str,
    nominal_layers: usize,
    input_size: usize,
    min_input_size: usize,
    head_prefixes: &'static [&'static str],
    cam_layer: &'static str,
) -> BackboneInfo {
    BackboneInfo { name, display, nominal_layers, input_size, min_input_size, head_prefixes, cam_layer }
}

/// Resolves a backbone name; case, `-` and common aliases are accepted.
pub fn lookup(name: &str) -> Result<&'static BackboneInfo> {
    let key = name.trim().to_ascii_lowercase().replace(['-', ' '], "_").replace(['(', ')'], "");
    let key = match key.as_str() {
        "squeezenet1_0" => "squeezenet",
        "inception" | "inceptionnet_v3" | "inceptionv3" | "inceptionnet" => "inception_v3",
        "mobilenetv2" | "mobilenet" => "mobilenet_v2",
        "efficientnet" | "efficientnetb1" | "efficientnet__b1" => "efficientnet_b1",
        "densenet" | "densenet_121" => "densenet121",
        other => other,
    };
    REGISTRY.iter().find(|b| b.name == key).ok_or_else(|| Error::UnknownBackbone {
        name: name.to_string(),
        supported: REGISTRY.iter().map(|b| b.name).collect::<Vec<_>>().join(", "),
    })
}

fn construct(
    info: &BackboneInfo,
    vb: VarBuilder,
    head: &HeadOptions,
    pretrained: bool,
) -> candle_core::Result<Box<dyn Backbone>> {
    Ok(match info.name {
        "resnet18" => Box::new(resnet::ResNet::new(vb, 18, head)?),
        "resnet50" => Box::new(resnet::ResNet::new(vb, 50, head)?),
        "resnet101" => Box::new(resnet::ResNet::new(vb, 101, head)?),
        "alexnet" => Box::new(classic::AlexNet::new(vb, head)?),
        "vgg16" => Box::new(classic::Vgg16::new(vb, head)?),
        "densenet121" => Box::new(densenet::DenseNet::new121(vb, head)?),
        "squeezenet" => Box::new(squeezenet::SqueezeNet::new(vb, head)?),
        "inception_v3" => Box::new(inception::InceptionV3::new(vb, head, pretrained)?),
        "mobilenet_v2" => Box::new(mobile::MobileNetV2::new(vb, head)?),
        "efficientnet_b1" => Box::new(mobile::EfficientNet::b1(vb, head)?),
        "tinycnn" => Box::new(tiny::TinyCnn::new(vb, head)?),
        other => candle_core::bail!("no constructor for {other}"),
    })
}

fn is_buffer(name: &str) -> bool {
    name.ends_with("running_mean") || name.ends_with("running_var") || name.ends_with("num_batches_tracked")
}

/// Records requested tensors without allocating them.
#[derive(Default)]
struct ShapeRecorder {
    seen: Mutex<Vec<(String, Vec<usize>)>>,
}

struct RecorderBackend(Arc<ShapeRecorder>);

impl SimpleBackend for RecorderBackend {
    fn get(&self, s: Shape, name: &str, _h: Init, dtype: DType, dev: &Device) -> candle_core::Result<Tensor> {
        self.0.seen.lock().expect("recorder lock").push((name.to_string(), s.dims().to_vec()));
        Tensor::zeros((), dtype, dev)?.broadcast_as(s)
    }

    fn get_unchecked(&self, name: &str, _dtype: DType, _dev: &Device) -> candle_core::Result<Tensor> {
        candle_core::bail!("shape recorder cannot resolve {name} without a shape")
    }

    fn contains_tensor(&self, _name: &str) -> bool {
        false
    }
}

/// Names and shapes of every tensor of a backbone with an `num_outputs`-way
/// head, including batch-norm running statistics, in construction order.
pub fn parameter_shapes(backbone: &str, num_outputs: usize) -> Result<Vec<(String, Vec<usize>)>> {
    let info = lookup(backbone)?;
    let recorder = Arc::new(ShapeRecorder::default());
    let vb = VarBuilder::from_backend(Box::new(RecorderBackend(recorder.clone())), DType::F32, Device::Cpu);
    let head = HeadOptions { num_outputs, dropout: None, rng: Arc::new(Mutex::new(ChaCha8Rng::seed_from_u64(0))) };
    construct(info, vb, &head, false)?;
    let seen = recorder.seen.lock().expect("recorder lock").clone();
    Ok(seen)
}

/// Trainable parameter count (running statistics excluded).
pub fn count_parameters(backbone: &str, num_outputs: usize) -> Result<usize> {
    Ok(parameter_shapes(backbone, num_outputs)?
        .iter()
        .filter(|(n, _)| !is_buffer(n))
        .map(|(_, s)| s.iter().product::<usize>())
        .sum())
}

#[derive(Clone, Debug, Serialize)]
pub struct ComplexityRow {
    pub backbone: String,
    pub display: String,
    pub layers: usize,
    pub params: usize,
    /// Parameter storage in MB at 32-bit precision.
    pub param_mb: f64,
}

impl ComplexityRow {
    pub fn params_millions(&self) -> f64 {
        self.params as f64 / 1e6
    }
}

/// Layer and parameter counts for the listed backbones (all pretrained
/// backbones when empty) with an `num_outputs`-way classification layer.
pub fn complexity_report(backbones: &[&str], num_outputs: usize) -> Result<Vec<ComplexityRow>> {
    let names: Vec<&str> = if backbones.is_empty() {
        REGISTRY.iter().filter(|b| b.name != "tinycnn").map(|b| b.name).collect()
    } else {
        backbones.to_vec()
    };
    names
        .into_iter()
        .map(|n| {
            let info = lookup(n)?;
            let params = count_parameters(info.name, num_outputs)?;
            Ok(ComplexityRow {
                backbone: info.name.to_string(),
                display: info.display.to_string(),
                layers: info.nominal_layers,
                params,
                param_mb: params as f64 * 4.0 / (1024.0 * 1024.0),
            })
        })
        .collect()
}

pub fn render_complexity(rows: &[ComplexityRow]) -> String {
    let mut s = format!("{:<20} {:>8} {:>12} {:>12}\n", "Model", "# Layer", "# Param (M)", "Params (MB)");
    for r in rows {
        s.push_str(&format!("{:<20} {:>8} {:>12.2} {:>12.2}\n", r.display, r.layers, r.params_millions(), r.param_mb));
    }
    s
}

#[derive(Clone, Debug, Default)]
pub struct BuildOptions {
    /// Load backbone weights from the weights directory.
    pub pretrained: bool,
    /// Defaults to `$CVTK_WEIGHTS_DIR`, then `./weights`.
    pub weights_dir: Option<PathBuf>,
    pub seed: u64,
    /// Dropout before the classification layer; `None` keeps the architecture default.
    pub dropout: Option<f32>,
    /// Square input side; `None` uses the canonical resolution.
    pub image_size: Option<usize>,
}

impl BuildOptions {
    pub fn weights_dir(&self) -> PathBuf {
        self.weights_dir
            .clone()
            .or_else(|| std::env::var_os(WEIGHTS_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("weights"))
    }
}

/// A backbone with a replaced head, owning its variables.
pub struct Model {
    info: &'static BackboneInfo,
    layout: HeadLayout,
    image_size: usize,
    varmap: VarMap,
    net: Box<dyn Backbone>,
    noise_rng: SharedRng,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("backbone", &self.info.name)
            .field("layout", &self.layout)
            .field("image_size", &self.image_size)
            .finish()
    }
}

/// Seed offset separating the dropout stream from the initialization stream.
const NOISE_STREAM: u64 = 0x6e6f_6973_65;

/// Builds `backbone` with a classification layer sized for `layout`.
pub fn build_model(backbone: &str, layout: HeadLayout, opts: &BuildOptions) -> Result<Model> {
    let info = lookup(backbone)?;
    let image_size = opts.image_size.unwrap_or(info.input_size);
    if image_size < info.min_input_size {
        return Err(Error::invalid(format!(
            "{} needs inputs of at least {}px, got {image_size}",
            info.name, info.min_input_size
        )));
    }
    let varmap = VarMap::new();
    let vb = VarBuilder::from_varmap(&varmap, DType::F32, &Device::Cpu);
    let noise_rng = Arc::new(Mutex::new(ChaCha8Rng::seed_from_u64(opts.seed ^ NOISE_STREAM)));
    let head = HeadOptions { num_outputs: layout.total_outputs(), dropout: opts.dropout, rng: noise_rng.clone() };
    let net = construct(info, vb, &head, opts.pretrained)?;
    let model = Model { info, layout, image_size, varmap, net, noise_rng };
    model.init_weights(opts.seed)?;
    if opts.pretrained {
        let path = opts.weights_dir().join(format!("{}.safetensors", info.name));
        let loaded = model.load_pretrained(&path)?;
        log::info!("loaded {loaded} pretrained tensors from {}", path.display());
    }
    Ok(model)
}

impl Model {
    pub fn info(&self) -> &'static BackboneInfo {
        self.info
    }

    pub fn backbone(&self) -> &'static str {
        self.info.name
    }

    pub fn layout(&self) -> &HeadLayout {
        &self.layout
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn features(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        Ok(self.net.features(x, train)?)
    }

    pub fn head(&self, features: &Tensor, train: bool) -> Result<Tensor> {
        Ok(self.net.head(features, train)?)
    }

    /// Concatenated logits, `(N, total_outputs)`.
    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.head(&self.features(x, train)?, train)
    }

    /// All variables sorted by name, running statistics included.
    pub fn named_vars(&self) -> Vec<(String, Var)> {
        let data = self.varmap.data().lock().expect("varmap lock");
        let mut v: Vec<(String, Var)> = data.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    }

    /// Variables updated by the optimizer.
    pub fn trainable_vars(&self) -> Vec<(String, Var)> {
        self.named_vars().into_iter().filter(|(n, _)| !is_buffer(n)).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.trainable_vars().iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// Reseeds the dropout / stochastic-depth stream.
    pub fn reseed_noise(&self, seed: u64) {
        *self.noise_rng.lock().expect("rng lock") = ChaCha8Rng::seed_from_u64(seed ^ NOISE_STREAM);
    }

    /// Uniform ±1/√fan_in for weight matrices and kernels, ones for
    /// normalization scales, zeros for biases; drawn in name order.
    fn init_weights(&self, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, var) in self.named_vars() {
            let dims = var.dims().to_vec();
            let n: usize = dims.iter().product();
            let values: Vec<f32> = if name.ends_with("running_var") {
                vec![1.0; n]
            } else if name.ends_with("running_mean") || name.ends_with("bias") {
                vec![0.0; n]
            } else if dims.len() == 1 {
                vec![1.0; n]
            } else {
                let fan_in: usize = dims[1..].iter().product();
                let bound = 1.0 / (fan_in as f32).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            };
            var.set(&Tensor::from_vec(values, dims, &Device::Cpu)?)?;
        }
        Ok(())
    }

    fn is_head(&self, name: &str) -> bool {
        self.info.head_prefixes.iter().any(|p| name.starts_with(p))
    }

    /// Copies every non-head tensor from a torchvision-style safetensors file.
    /// Missing or mis-shaped backbone tensors are an error.
    pub fn load_pretrained(&self, path: &Path) -> Result<usize> {
        if !path.exists() {
            return Err(Error::invalid(format!(
                "pretrained weights not found at {}; export them with scripts/export_torchvision.py \
                 or set {WEIGHTS_ENV}",
                path.display()
            )));
        }
        let tensors = candle_core::safetensors::load(path, &Device::Cpu)?;
        let mut loaded = 0;
        let mut problems = Vec::new();
        for (name, var) in self.named_vars() {
            if self.is_head(&name) {
                continue;
            }
            match tensors.get(&name) {
                Some(t) if t.dims() == var.dims() => {
                    var.set(&t.to_dtype(DType::F32)?)?;
                    loaded += 1;
                }
                Some(t) => problems.push(format!("{name}: shape {:?} vs {:?}", t.dims(), var.dims())),
                None => problems.push(format!("{name}: missing")),
            }
        }
        if !problems.is_empty() {
            let shown: Vec<_> = problems.iter().take(5).cloned().collect();
            return Err(Error::invalid(format!(
                "{} incompatible with {} ({} problems, e.g. {})",
                path.display(),
                self.info.name,
                problems.len(),
                shown.join("; ")
            )));
        }
        Ok(loaded)
    }

    /// Detached copies of all variables.
    pub fn state_dict(&self) -> Result<BTreeMap<String, Tensor>> {
        self.named_vars()
            .into_iter()
            .map(|(n, v)| Ok((n, v.as_tensor().detach().copy()?)))
            .collect()
    }

    /// Restores variables; every model variable must be present.
    pub fn load_state_dict(&self, state: &HashMap<String, Tensor>) -> Result<()> {
        for (name, var) in self.named_vars() {
            let t = state.get(&name).ok_or_else(|| Error::invalid(format!("state is missing {name}")))?;
            if t.dims() != var.dims() {
                return Err(Error::invalid(format!("{name}: shape {:?} vs {:?}", t.dims(), var.dims())));
            }
            var.set(&t.to_dtype(DType::F32)?)?;
        }
        Ok(())
    }

    pub fn save_weights(&self, path: &Path) -> Result<()> {
        let state: HashMap<String, Tensor> = self.state_dict()?.into_iter().collect();
        candle_core::safetensors::save(&state, path).map_err(Error::from)
    }

    pub fn load_weights(&self, path: &Path) -> Result<()> {
        if !path.exists() {
            return Err(Error::invalid(format!("weights file {} not found", path.display())));
        }
        self.load_state_dict(&candle_core::safetensors::load(path, &Device::Cpu)?)
    }
}
