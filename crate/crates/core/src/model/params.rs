use super::config::{FusionMode, ModelConfig};
use crate::error::{Error, Result};
use crate::scene::{BaseSensor, ModalityTable};
use crate::tensor::{Real, SeededRng, Tensor};

/// Width of the per-query feature vector fed to encoders and renderers.
pub const FEATURE_DIM: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    Encoder,
    Renderer,
    Inference,
}

/// Indices of a weight `[fan_in, fan_out]` and bias `[fan_out]` in the store.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dense {
    pub w: usize,
    pub b: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Gated recurrent expert: `gates` maps `[x, h]` to update and candidate
/// pre-activations; `head` maps the new state to mean and log precision.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cell {
    pub gates: Dense,
    pub head: Dense,
    pub input_dim: usize,
    pub width: usize,
}

/// Where every trainable tensor lives; a pure function of config and modality table.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub encoders: Vec<Mlp>,
    pub renderers: Vec<Mlp>,
    /// One cell for baseline and amortized fusion, one per modality otherwise.
    pub cells: Vec<Cell>,
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
    pub components: Vec<Component>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct ParamCount {
    pub encoders: usize,
    pub renderers: usize,
    pub inference: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.encoders + self.renderers + self.inference
    }
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    components: Vec<Component>,
}

impl Builder {
    fn dense(&mut self, prefix: &str, fan_in: usize, fan_out: usize, comp: Component) -> Dense {
        let w = self.names.len();
        self.names.push(format!("{prefix}.w"));
        self.shapes.push(vec![fan_in, fan_out]);
        self.components.push(comp);
        self.names.push(format!("{prefix}.b"));
        self.shapes.push(vec![fan_out]);
        self.components.push(comp);
        Dense { w, b: w + 1, fan_in, fan_out }
    }

    fn mlp(&mut self, prefix: &str, dims: &[usize], comp: Component) -> Mlp {
        let layers =
            dims.windows(2).enumerate().map(|(i, d)| self.dense(&format!("{prefix}.l{i}"), d[0], d[1], comp)).collect();
        Mlp { layers }
    }

    fn cell(&mut self, prefix: &str, input_dim: usize, width: usize, latent: usize) -> Cell {
        let gates = self.dense(&format!("{prefix}.gates"), input_dim + width, 2 * width, Component::Inference);
        let head = self.dense(&format!("{prefix}.head"), width, 2 * latent, Component::Inference);
        Cell { gates, head, input_dim, width }
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig, table: &ModalityTable) -> Result<Self> {
        cfg.validate()?;
        if table.is_empty() {
            return Err(Error::Config("modality table is empty".into()));
        }
        let mut b = Builder { names: Vec::new(), shapes: Vec::new(), components: Vec::new() };
        let h = cfg.hidden;
        let encoders = table
            .modalities
            .iter()
            .map(|d| b.mlp(&format!("enc.{}", d.name), &[FEATURE_DIM + d.sense_dim, h, h, cfg.r_dim], Component::Encoder))
            .collect();
        let z_all = cfg.draw_steps * cfg.latent_dim;
        let renderers = table
            .modalities
            .iter()
            .map(|d| b.mlp(&format!("dec.{}", d.name), &[z_all + FEATURE_DIM, h, h, d.sense_dim], Component::Renderer))
            .collect();
        let plain_in = cfg.r_dim + cfg.latent_dim;
        let cells = match cfg.fusion {
            FusionMode::BaselineSum => vec![b.cell("inf", plain_in, cfg.cell_width, cfg.latent_dim)],
            FusionMode::Poe => table
                .modalities
                .iter()
                .map(|d| b.cell(&format!("inf.{}", d.name), plain_in, cfg.cell_width, cfg.latent_dim))
                .collect(),
            FusionMode::Apoe => {
                vec![b.cell("inf.shared", plain_in + table.len(), cfg.cell_width, cfg.latent_dim)]
            }
        };
        Ok(Self { encoders, renderers, cells, names: b.names, shapes: b.shapes, components: b.components })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn count(&self) -> ParamCount {
        let mut c = ParamCount::default();
        for (s, comp) in self.shapes.iter().zip(&self.components) {
            let n: usize = s.iter().product();
            match comp {
                Component::Encoder => c.encoders += n,
                Component::Renderer => c.renderers += n,
                Component::Inference => c.inference += n,
            }
        }
        c
    }
}

/// Closed-form parameter count from layer shapes alone.
pub fn param_count(cfg: &ModelConfig, table: &ModalityTable) -> ParamCount {
    let dense = |i: usize, o: usize| i * o + o;
    let mlp = |dims: [usize; 4]| dims.windows(2).map(|d| dense(d[0], d[1])).sum::<usize>();
    let h = cfg.hidden;
    let z_all = cfg.draw_steps * cfg.latent_dim;
    let mut c = ParamCount::default();
    for d in &table.modalities {
        c.encoders += mlp([FEATURE_DIM + d.sense_dim, h, h, cfg.r_dim]);
        c.renderers += mlp([z_all + FEATURE_DIM, h, h, d.sense_dim]);
    }
    let w = cfg.cell_width;
    let cell = |input: usize| dense(input + w, 2 * w) + dense(w, 2 * cfg.latent_dim);
    let plain = cfg.r_dim + cfg.latent_dim;
    c.inference = match cfg.fusion {
        FusionMode::BaselineSum => cell(plain),
        FusionMode::Poe => table.len() * cell(plain),
        FusionMode::Apoe => cell(plain + table.len()),
    };
    c
}

/// Trainable tensors plus the layout that names them.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore<F> {
    pub config: ModelConfig,
    pub table: ModalityTable,
    pub layout: Layout,
    pub tensors: Vec<Tensor<F>>,
}

impl<F: Real> ParameterStore<F> {
    /// Glorot-uniform weights, zero biases; each tensor has its own random stream.
    pub fn init(config: &ModelConfig, table: &ModalityTable, seed: u64) -> Result<Self> {
        let layout = Layout::new(config, table)?;
        let tensors = layout
            .shapes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if s.len() == 1 {
                    return Tensor::zeros(s);
                }
                let a = (6.0 / (s[0] + s[1]) as f64).sqrt();
                let mut rng = SeededRng::for_keys(seed, &[0x1a17, i as u64]);
                let data = (0..s[0] * s[1]).map(|_| F::from_f64_lossy(rng.uniform_in(-a, a))).collect();
                Tensor::new(s.clone(), data).expect("layout shapes are positive")
            })
            .collect();
        Ok(Self { config: config.clone(), table: table.clone(), layout, tensors })
    }

    /// Adopts tensors loaded from elsewhere, checking them against the layout.
    pub fn from_tensors(config: &ModelConfig, table: &ModalityTable, tensors: Vec<Tensor<F>>) -> Result<Self> {
        let layout = Layout::new(config, table)?;
        if tensors.len() != layout.len() {
            return Err(Error::Data(format!("expected {} tensors, got {}", layout.len(), tensors.len())));
        }
        for (i, (t, s)) in tensors.iter().zip(&layout.shapes).enumerate() {
            if t.shape() != s.as_slice() {
                return Err(Error::Data(format!("tensor {} has shape {:?}, expected {s:?}", layout.names[i], t.shape())));
            }
        }
        Ok(Self { config: config.clone(), table: table.clone(), layout, tensors })
    }

    pub fn count(&self) -> ParamCount {
        self.layout.count()
    }

    pub fn cast<G: Real>(&self) -> ParameterStore<G> {
        ParameterStore {
            config: self.config.clone(),
            table: self.table.clone(),
            layout: self.layout.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }

    pub fn sigma(&self, modality: usize) -> f64 {
        match self.table.modalities[modality].base() {
            BaseSensor::Image => self.config.sigma_image,
            BaseSensor::Haptic => self.config.sigma_haptic,
        }
    }
}
