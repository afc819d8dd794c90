//! Layer-wise construction of a TRF-net, classifier head, fine-tuning,
//! evaluation and the text model container.
//!
//! Seeds: layer `k` (0-based) of a build uses `master_seed + k` for its
//! center selection, weight init, data order and corruption draws. The head
//! is initialized from `master_seed + depth`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;

use crate::dae::{project, train_dae, CorruptionConfig, CorruptionKind, DaeHyper};
use crate::data::{discretize, Dataset, DiscretizationPolicy};
use crate::nn::{
    dropout, l1_penalty_grad, multitask_bce, softmax_cross_entropy, Activation, AdamConfig,
    DenseLayer, MaskedLayer, OptimizerState, Param,
};
use crate::receptive_field::{build_masks, ReceptiveFieldPlan};
use crate::rng::{self, Stream};
use crate::tree::chow_liu_binary;
use crate::{Error, Result};

const FORMAT_MAGIC: &str = "trfnet-model";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct BuildConfig {
    /// One radius per layer, or a single value reused for every layer.
    pub radius: Vec<usize>,
    /// One stride per layer, or a single value reused for every layer.
    pub stride: Vec<usize>,
    pub depth: usize,
    pub global_fraction: f64,
    /// `None` picks [`DiscretizationPolicy::default_for`] the input.
    pub policy: Option<DiscretizationPolicy>,
    pub dae: DaeHyper,
    /// `None` picks [`CorruptionKind::default_for`] the input.
    pub corruption: Option<CorruptionKind>,
    pub seed: u64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            radius: vec![3],
            stride: vec![3],
            depth: 2,
            global_fraction: 0.1,
            policy: None,
            dae: DaeHyper::default(),
            corruption: None,
            seed: 0,
        }
    }
}

impl BuildConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::Argument("depth must be at least 1".into()));
        }
        for (name, list) in [("radius", &self.radius), ("stride", &self.stride)] {
            if list.len() != 1 && list.len() != self.depth {
                return Err(Error::Argument(format!(
                    "{name} list has {} entries for depth {}",
                    list.len(),
                    self.depth
                )));
            }
        }
        if self.stride.contains(&0) {
            return Err(Error::Argument("stride must be at least 1".into()));
        }
        if !(self.global_fraction >= 0.0 && self.global_fraction.is_finite()) {
            return Err(Error::Argument(format!("global fraction {} must be >= 0", self.global_fraction)));
        }
        if let Some(p) = &self.policy {
            p.validate()?;
        }
        if let Some(c) = &self.corruption {
            c.validate()?;
        }
        Ok(())
    }

    pub fn radius_at(&self, layer: usize) -> usize {
        self.radius[layer.min(self.radius.len() - 1)]
    }

    pub fn stride_at(&self, layer: usize) -> usize {
        self.stride[layer.min(self.stride.len() - 1)]
    }

    pub fn layer_seed(&self, layer: usize) -> u64 {
        self.seed.wrapping_add(layer as u64)
    }
}

fn join<T: ToString>(xs: &[T], sep: &str) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(sep)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// One softmax over C classes.
    Softmax,
    /// Independent sigmoid outputs, one per binary task.
    MultiSigmoid,
}

impl HeadKind {
    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Softmax => "softmax",
            HeadKind::MultiSigmoid => "multisigmoid",
        }
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(HeadKind::Softmax),
            "multisigmoid" => Ok(HeadKind::MultiSigmoid),
            _ => Err(Error::Format(format!("unknown head kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub kind: HeadKind,
    /// Linear layer producing logits.
    pub layer: DenseLayer,
}

/// A stack of masked layers with an optional dense classifier head.
#[derive(Debug, Clone, PartialEq)]
pub struct TrfNetwork {
    layers: Vec<MaskedLayer>,
    head: Option<Head>,
    plans: Vec<Option<ReceptiveFieldPlan>>,
    provenance: Vec<(String, String)>,
}

impl TrfNetwork {
    /// Assemble a network, checking that widths chain and masks hold.
    pub fn new(
        layers: Vec<MaskedLayer>,
        plans: Vec<Option<ReceptiveFieldPlan>>,
        provenance: Vec<(String, String)>,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::EmptyStructure("a network needs at least one layer".into()));
        }
        if plans.len() != layers.len() {
            return Err(Error::Shape(format!("{} plans for {} layers", plans.len(), layers.len())));
        }
        for k in 1..layers.len() {
            if layers[k].visible() != layers[k - 1].hidden() {
                return Err(Error::Shape(format!(
                    "layer {k} reads {} inputs but layer {} has {} units",
                    layers[k].visible(),
                    k - 1,
                    layers[k - 1].hidden()
                )));
            }
        }
        for (k, (l, p)) in layers.iter().zip(&plans).enumerate() {
            if !l.mask_respected() {
                return Err(Error::MaskViolation(format!("layer {k}")));
            }
            if let Some(p) = p {
                if p.hidden_count() != l.hidden() || p.node_count != l.visible() {
                    return Err(Error::Shape(format!("plan of layer {k} does not match its mask")));
                }
            }
        }
        Ok(TrfNetwork {
            layers,
            head: None,
            plans,
            provenance,
        })
    }

    pub fn layers(&self) -> &[MaskedLayer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [MaskedLayer] {
        &mut self.layers
    }

    pub fn plans(&self) -> &[Option<ReceptiveFieldPlan>] {
        &self.plans
    }

    pub fn head(&self) -> Option<&Head> {
        self.head.as_ref()
    }

    pub fn provenance(&self) -> &[(String, String)] {
        &self.provenance
    }

    pub fn provenance_value(&self, key: &str) -> Option<&str> {
        self.provenance.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Insert or replace a provenance entry.
    pub fn set_provenance(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.provenance.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.provenance.push((key.to_string(), value)),
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].visible()
    }

    pub fn top_width(&self) -> usize {
        self.layers[self.layers.len() - 1].hidden()
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_width())
            .chain(self.layers.iter().map(MaskedLayer::hidden))
            .collect()
    }

    /// Replace the head with a freshly initialized one.
    pub fn set_head(&mut self, kind: HeadKind, outputs: usize, seed: u64) -> Result<()> {
        let min = match kind {
            HeadKind::Softmax => 2,
            HeadKind::MultiSigmoid => 1,
        };
        if outputs < min {
            return Err(Error::Argument(format!("{} head needs at least {min} outputs", kind.name())));
        }
        let layer = DenseLayer::new(
            outputs,
            self.top_width(),
            Activation::Identity,
            &mut rng::stream(seed, Stream::Init),
        );
        self.head = Some(Head { kind, layer });
        Ok(())
    }

    /// Softmax head over `classes` classes.
    pub fn attach_head(&mut self, classes: usize, seed: u64) -> Result<()> {
        self.set_head(HeadKind::Softmax, classes, seed)
    }

    pub fn set_activation(&mut self, act: Activation) {
        for l in &mut self.layers {
            l.activation = act;
        }
    }

    pub fn hidden_connections(&self) -> usize {
        self.layers.iter().map(MaskedLayer::nnz).sum()
    }

    pub fn dense_connections(&self) -> usize {
        self.layers.iter().map(|l| l.hidden() * l.visible()).sum()
    }

    /// Hidden-layer connections over the fully connected count.
    pub fn sparsity(&self) -> f64 {
        self.hidden_connections() as f64 / self.dense_connections() as f64
    }

    /// Fraction of hidden-layer connections whose weight magnitude is at
    /// least `threshold`, relative to the fully connected count.
    pub fn effective_sparsity(&self, threshold: f64) -> f64 {
        let kept: usize = self
            .layers
            .iter()
            .map(|l| l.weights().iter().filter(|w| w.abs() >= threshold).count())
            .sum();
        kept as f64 / self.dense_connections() as f64
    }

    /// Mask entries, hidden biases and the head. Decoder biases are only
    /// used in pretraining and are not counted.
    pub fn parameter_count(&self) -> usize {
        let hidden: usize = self.layers.iter().map(|l| l.nnz() + l.hidden()).sum();
        hidden + self.head.as_ref().map_or(0, |h| h.layer.parameter_count())
    }

    pub fn mask_respected(&self) -> bool {
        self.layers.iter().all(MaskedLayer::mask_respected)
    }

    /// Activations of every hidden layer, in order, without dropout.
    pub fn hidden_activations(&self, x: &Array2<f64>) -> Result<Vec<Array2<f64>>> {
        let mut out: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let a = l.forward(out.last().unwrap_or(x))?;
            out.push(a);
        }
        Ok(out)
    }

    pub fn top_activations(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.hidden_activations(x)?.pop().expect("at least one layer"))
    }

    /// Head logits for a batch.
    pub fn logits(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let head = self.require_head()?;
        head.layer.pre_activation(&self.top_activations(x)?)
    }

    fn require_head(&self) -> Result<&Head> {
        self.head
            .as_ref()
            .ok_or_else(|| Error::Argument("the network has no classifier head".into()))
    }

    /// Canonical text serialization.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{FORMAT_MAGIC} {FORMAT_VERSION}");
        let _ = writeln!(out, "provenance {}", self.provenance.len());
        for (k, v) in &self.provenance {
            let _ = writeln!(out, "{k}\t{v}");
        }
        let _ = writeln!(out, "layers {}", self.layers.len());
        for (k, (l, plan)) in self.layers.iter().zip(&self.plans).enumerate() {
            let _ = writeln!(
                out,
                "layer {k} {} {} {}",
                l.hidden(),
                l.visible(),
                l.activation.name()
            );
            for row in l.mask().outer_iter() {
                out.extend(row.iter().map(|&b| if b { '1' } else { '0' }));
                out.push('\n');
            }
            for (row, mrow) in l.weights().outer_iter().zip(l.mask().outer_iter()) {
                let vals: Vec<String> = row
                    .iter()
                    .zip(mrow)
                    .filter(|(_, &m)| m)
                    .map(|(w, _)| format!("{w:?}"))
                    .collect();
                let _ = writeln!(out, "{}", vals.join(" "));
            }
            let _ = writeln!(out, "{}", fmt_floats(l.bias_hidden().iter()));
            let _ = writeln!(out, "{}", fmt_floats(l.bias_visible().iter()));
            match plan {
                None => out.push_str("plan none\n"),
                Some(p) => {
                    let _ = writeln!(
                        out,
                        "plan {} {} {} {} {}",
                        p.radius,
                        p.stride,
                        p.node_count,
                        p.centers.len(),
                        p.global_count
                    );
                    for i in 0..p.centers.len() {
                        let _ = writeln!(
                            out,
                            "{} : {} : {}",
                            p.centers[i],
                            join(&p.fields[i], " "),
                            join(&p.patched[i], " ")
                        );
                    }
                }
            }
        }
        match &self.head {
            None => out.push_str("head none\n"),
            Some(h) => {
                let _ = writeln!(out, "head {} {} {}", h.kind.name(), h.layer.outputs(), h.layer.inputs());
                for row in h.layer.weights().outer_iter() {
                    let _ = writeln!(out, "{}", fmt_floats(row.iter()));
                }
                let _ = writeln!(out, "{}", fmt_floats(h.layer.bias().iter()));
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = Reader::new(text);
        let magic = r.words()?;
        if magic.len() != 2 || magic[0] != FORMAT_MAGIC {
            return Err(Error::Format("not a trfnet model file".into()));
        }
        let version: u32 = parse_tok(magic[1], "version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "model format version {version}, this build reads {FORMAT_VERSION}"
            )));
        }
        let n_prov = r.keyword_count("provenance")?;
        let mut provenance = Vec::with_capacity(n_prov);
        for _ in 0..n_prov {
            let line = r.line()?;
            let (k, v) = line
                .split_once('\t')
                .ok_or_else(|| r.err("provenance entry without a tab"))?;
            provenance.push((k.to_string(), v.to_string()));
        }
        let n_layers = r.keyword_count("layers")?;
        let mut layers = Vec::with_capacity(n_layers);
        let mut plans = Vec::with_capacity(n_layers);
        for k in 0..n_layers {
            let hdr = r.words()?;
            if hdr.len() != 5 || hdr[0] != "layer" || hdr[1] != k.to_string() {
                return Err(r.err(&format!("expected header of layer {k}")));
            }
            let h: usize = parse_tok(hdr[2], "hidden width")?;
            let v: usize = parse_tok(hdr[3], "visible width")?;
            let act = Activation::from_str(hdr[4]).map_err(|e| Error::Format(e.to_string()))?;
            let mut mask = Array2::from_elem((h, v), false);
            for i in 0..h {
                let line = r.line()?;
                if line.len() != v {
                    return Err(r.err("mask row has the wrong width"));
                }
                for (j, c) in line.bytes().enumerate() {
                    mask[[i, j]] = match c {
                        b'1' => true,
                        b'0' => false,
                        _ => return Err(r.err("mask rows hold only 0 and 1")),
                    };
                }
            }
            let mut weights = Array2::zeros((h, v));
            for i in 0..h {
                let vals = r.floats()?;
                let cols: Vec<usize> = (0..v).filter(|&j| mask[[i, j]]).collect();
                if vals.len() != cols.len() {
                    return Err(r.err("weight row does not match its mask"));
                }
                for (j, w) in cols.into_iter().zip(vals) {
                    weights[[i, j]] = w;
                }
            }
            let bh = r.float_row(h)?;
            let bv = r.float_row(v)?;
            let layer = MaskedLayer::from_parts(mask, weights, bh, bv, act)
                .map_err(|e| Error::Format(format!("layer {k}: {e}")))?;
            layers.push(layer);

            let ph = r.words()?;
            let plan = match ph.as_slice() {
                ["plan", "none"] => None,
                ["plan", radius, stride, nodes, centers, globals] => {
                    let n_centers: usize = parse_tok(centers, "center count")?;
                    let mut p = ReceptiveFieldPlan {
                        radius: parse_tok(radius, "radius")?,
                        stride: parse_tok(stride, "stride")?,
                        node_count: parse_tok(nodes, "node count")?,
                        centers: Vec::with_capacity(n_centers),
                        fields: Vec::with_capacity(n_centers),
                        patched: Vec::with_capacity(n_centers),
                        global_count: parse_tok(globals, "global count")?,
                    };
                    for _ in 0..n_centers {
                        let line = r.line()?;
                        let parts: Vec<&str> = line.split(':').collect();
                        if parts.len() != 3 {
                            return Err(r.err("plan row is not 'center : field : patched'"));
                        }
                        p.centers.push(parse_tok(parts[0].trim(), "center")?);
                        p.fields.push(parse_list(parts[1])?);
                        p.patched.push(parse_list(parts[2])?);
                    }
                    Some(p)
                }
                _ => return Err(r.err("expected a plan line")),
            };
            plans.push(plan);
        }
        let hh = r.words()?;
        let head = match hh.as_slice() {
            ["head", "none"] => None,
            ["head", kind, outputs, inputs] => {
                let kind = HeadKind::from_str(kind)?;
                let c: usize = parse_tok(outputs, "head outputs")?;
                let h: usize = parse_tok(inputs, "head inputs")?;
                let mut w = Array2::zeros((c, h));
                for i in 0..c {
                    w.row_mut(i).assign(&r.float_row(h)?);
                }
                let b = r.float_row(c)?;
                let layer = DenseLayer::from_parts(w, b, Activation::Identity)
                    .map_err(|e| Error::Format(e.to_string()))?;
                Some(Head { kind, layer })
            }
            _ => return Err(r.err("expected a head line")),
        };
        if r.line()? != "end" {
            return Err(r.err("expected end marker"));
        }
        let mut net = TrfNetwork::new(layers, plans, provenance).map_err(|e| Error::Format(e.to_string()))?;
        if let Some(h) = &head {
            if h.layer.inputs() != net.top_width() {
                return Err(Error::Format("head width does not match the top layer".into()));
            }
        }
        net.head = head;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn fmt_floats<'a>(xs: impl Iterator<Item = &'a f64>) -> String {
    xs.map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
}

fn parse_tok<T: FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Format(format!("cannot read {what} from {s:?}")))
}

fn parse_list(s: &str) -> Result<Vec<usize>> {
    s.split_whitespace().map(|t| parse_tok(t, "node index")).collect()
}

struct Reader<'a> {
    lines: std::str::Lines<'a>,
    line_no: usize,
}

impl<'a> Reader<'a> {
    fn new(text: &'a str) -> Self {
        Reader {
            lines: text.lines(),
            line_no: 0,
        }
    }

    fn err(&self, msg: &str) -> Error {
        Error::Format(format!("line {}: {msg}", self.line_no))
    }

    fn line(&mut self) -> Result<&'a str> {
        self.line_no += 1;
        self.lines
            .next()
            .ok_or_else(|| Error::Format(format!("truncated model file at line {}", self.line_no)))
    }

    fn words(&mut self) -> Result<Vec<&'a str>> {
        Ok(self.line()?.split_whitespace().collect())
    }

    fn keyword_count(&mut self, keyword: &str) -> Result<usize> {
        let w = self.words()?;
        match w.as_slice() {
            [k, n] if *k == keyword => parse_tok(n, keyword),
            _ => Err(self.err(&format!("expected '{keyword} <count>'"))),
        }
    }

    fn floats(&mut self) -> Result<Vec<f64>> {
        let vals: Vec<f64> = self
            .line()?
            .split_whitespace()
            .map(|t| parse_tok(t, "number"))
            .collect::<Result<_>>()?;
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(self.err("non-finite parameter"));
        }
        Ok(vals)
    }

    fn float_row(&mut self, n: usize) -> Result<Array1<f64>> {
        let vals = self.floats()?;
        if vals.len() != n {
            return Err(self.err(&format!("expected {n} numbers, found {}", vals.len())));
        }
        Ok(Array1::from(vals))
    }
}

/// Run the layer-wise procedure and return the stacked network (no head)
/// together with each layer's pretraining loss curve.
pub fn build_trf_net_logged(d: &Dataset, cfg: &BuildConfig) -> Result<(TrfNetwork, Vec<Vec<f64>>)> {
    cfg.validate()?;
    let policy = cfg.policy.unwrap_or_else(|| DiscretizationPolicy::default_for(d));
    let corruption = cfg.corruption.unwrap_or_else(|| CorruptionKind::default_for(d));
    let mut binary = discretize(d, policy)?;
    let mut projected: Option<Dataset> = None;
    let mut layers = Vec::with_capacity(cfg.depth);
    let mut plans = Vec::with_capacity(cfg.depth);
    let mut logs = Vec::with_capacity(cfg.depth);
    for k in 0..cfg.depth {
        let seed = cfg.layer_seed(k);
        let current = projected.as_ref().unwrap_or(d);
        let tree = chow_liu_binary(&binary);
        let (plan, mask) = build_masks(&tree, cfg.radius_at(k), cfg.stride_at(k), cfg.global_fraction, seed)?;
        if mask.rows() == 0 {
            return Err(Error::EmptyStructure(format!("layer {k} has no hidden units")));
        }
        log::info!(
            "layer {k}: {} inputs, {} centers, {} global units, {} connections",
            mask.cols(),
            plan.centers.len(),
            plan.global_count,
            mask.nnz()
        );
        let model = train_dae(
            &mask,
            current,
            &CorruptionConfig { kind: corruption, seed },
            &DaeHyper { seed, ..cfg.dae },
        )?;
        if k + 1 < cfg.depth {
            if model.layer.hidden() < 2 {
                return Err(Error::EmptyStructure(format!(
                    "layer {k} has a single unit, no tree can be learned over it"
                )));
            }
            let (p, b) = project(&model, current)?;
            projected = Some(p);
            binary = b;
        }
        logs.push(model.training_log);
        layers.push(model.layer);
        plans.push(Some(plan));
    }
    let provenance = vec![
        ("kind".to_string(), "trf".to_string()),
        ("radius".to_string(), join(&cfg.radius, ",")),
        ("stride".to_string(), join(&cfg.stride, ",")),
        ("depth".to_string(), cfg.depth.to_string()),
        ("globals".to_string(), cfg.global_fraction.to_string()),
        ("policy".to_string(), policy.to_string()),
        ("corruption".to_string(), corruption.to_string()),
        ("dae_epochs".to_string(), cfg.dae.epochs.to_string()),
        ("dae_batch".to_string(), cfg.dae.batch_size.to_string()),
        ("dae_step".to_string(), cfg.dae.adam.step_size.to_string()),
        (
            "dae_family".to_string(),
            cfg.dae.family.map_or("auto", |f| f.name()).to_string(),
        ),
        ("seed".to_string(), cfg.seed.to_string()),
    ];
    Ok((TrfNetwork::new(layers, plans, provenance)?, logs))
}

pub fn build_trf_net(d: &Dataset, cfg: &BuildConfig) -> Result<TrfNetwork> {
    Ok(build_trf_net_logged(d, cfg)?.0)
}

/// Attach a head matching the labels in `d` (softmax for class labels,
/// per-task sigmoids for task labels).
pub fn attach_head_for(net: &mut TrfNetwork, d: &Dataset, seed: u64) -> Result<()> {
    if let Some(t) = d.task_labels() {
        net.set_head(HeadKind::MultiSigmoid, t.ncols(), seed)
    } else if let Some(c) = d.n_classes() {
        net.attach_head(c.max(2), seed)
    } else {
        Err(Error::Argument("data has no labels to size a classifier head".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneHyper {
    pub max_epochs: usize,
    /// Stop after this many epochs without a validation improvement.
    pub patience: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Dropout on hidden-layer outputs during training.
    pub dropout: f64,
    /// Activation of the hidden layers in the classifier.
    pub activation: Activation,
    /// L1 strength on all weights (biases excluded).
    pub l1: f64,
    /// Re-initialize hidden weights instead of keeping pretrained ones.
    pub reinit: bool,
    pub seed: u64,
}

impl Default for FinetuneHyper {
    fn default() -> Self {
        FinetuneHyper {
            max_epochs: 100,
            patience: 10,
            batch_size: 128,
            adam: AdamConfig {
                step_size: 3e-3,
                ..AdamConfig::default()
            },
            dropout: 0.5,
            activation: Activation::Relu,
            l1: 0.0,
            reinit: false,
            seed: 0,
        }
    }
}

impl FinetuneHyper {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs < 1 || self.batch_size < 1 {
            return Err(Error::Argument("epochs and batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Argument(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        if !(self.l1 >= 0.0 && self.l1.is_finite()) {
            return Err(Error::Argument(format!("L1 strength {} must be >= 0", self.l1)));
        }
        Ok(())
    }
}

enum Targets<'a> {
    Classes(&'a [usize]),
    Tasks(&'a Array2<f64>),
}

fn targets<'a>(net: &TrfNetwork, d: &'a Dataset) -> Result<Targets<'a>> {
    let head = net.require_head()?;
    match head.kind {
        HeadKind::Softmax => {
            let labels = d
                .labels()
                .ok_or_else(|| Error::Argument("class labels are required".into()))?;
            if let Some(&y) = labels.iter().find(|&&y| y >= head.layer.outputs()) {
                return Err(Error::Argument(format!(
                    "label {y} but the head has {} classes",
                    head.layer.outputs()
                )));
            }
            Ok(Targets::Classes(labels))
        }
        HeadKind::MultiSigmoid => {
            let t = d
                .task_labels()
                .ok_or_else(|| Error::Argument("task labels are required".into()))?;
            if t.ncols() != head.layer.outputs() {
                return Err(Error::Shape(format!(
                    "{} task columns for a head of {}",
                    t.ncols(),
                    head.layer.outputs()
                )));
            }
            Ok(Targets::Tasks(t))
        }
    }
}

/// Train every parameter against the labels with masks enforced on each
/// step. Early stopping keeps the snapshot with the best validation score;
/// the report is that snapshot evaluated on `valid`.
pub fn finetune(
    net: &TrfNetwork,
    train: &Dataset,
    valid: &Dataset,
    hyper: &FinetuneHyper,
) -> Result<(TrfNetwork, EvalReport)> {
    hyper.validate()?;
    let mut net = net.clone();
    net.set_activation(hyper.activation);
    if hyper.reinit {
        for (k, l) in net.layers.iter_mut().enumerate() {
            let act = l.activation;
            *l = MaskedLayer::new(
                l.mask().clone(),
                act,
                &mut rng::stream(hyper.seed.wrapping_add(k as u64), Stream::Init),
            );
        }
    }
    for d in [train, valid] {
        if d.n_features() != net.input_width() {
            return Err(Error::Shape(format!(
                "data has {} features, network reads {}",
                d.n_features(),
                net.input_width()
            )));
        }
    }
    let train_targets = targets(&net, train)?;
    targets(&net, valid)?;

    let mut sizes = Vec::new();
    for l in &net.layers {
        sizes.push(l.hidden() * l.visible());
        sizes.push(l.hidden());
    }
    let head = net.require_head()?;
    sizes.push(head.layer.outputs() * head.layer.inputs());
    sizes.push(head.layer.outputs());
    let mut opt = OptimizerState::new(hyper.adam, &sizes);
    let mut shuffle_rng = rng::stream(hyper.seed, Stream::Shuffle);
    let mut drop_rng = rng::stream(hyper.seed, Stream::Dropout);

    let mut order: Vec<usize> = (0..train.n_samples()).collect();
    let mut best = (f64::NEG_INFINITY, net.clone(), 0usize);
    let mut stale = 0;
    let mut epochs_run = 0;
    for epoch in 1..=hyper.max_epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(hyper.batch_size) {
            let x = train.values().select(Axis(0), batch);
            train_step(&mut net, &x, &train_targets, batch, hyper, &mut opt, &mut drop_rng)?;
        }
        epochs_run = epoch;
        if !net.mask_respected() {
            return Err(Error::MaskViolation(format!("after fine-tuning epoch {epoch}")));
        }
        let score = evaluate(&net, valid)?.score();
        log::debug!("finetune epoch {epoch}: validation score {score}");
        if score > best.0 {
            best = (score, net.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= hyper.patience {
                break;
            }
        }
    }
    let (_, mut best_net, best_epoch) = best;
    best_net.set_provenance("finetune_epochs", epochs_run);
    best_net.set_provenance("finetune_best_epoch", best_epoch);
    best_net.set_provenance("finetune_dropout", hyper.dropout);
    best_net.set_provenance("finetune_step", hyper.adam.step_size);
    best_net.set_provenance("finetune_l1", hyper.l1);
    best_net.set_provenance("finetune_reinit", hyper.reinit);
    best_net.set_provenance("finetune_seed", hyper.seed);
    let mut report = evaluate(&best_net, valid)?;
    report.epochs_run = Some(epochs_run);
    report.best_epoch = Some(best_epoch);
    Ok((best_net, report))
}


/// Targets of one minibatch.
#[derive(Debug, Clone, PartialEq)]
pub enum BatchTargets {
    Classes(Vec<usize>),
    /// One column per task; `NaN` marks a missing label.
    Tasks(Array2<f64>),
}

impl BatchTargets {
    fn select(t: &Targets<'_>, rows: &[usize]) -> Self {
        match t {
            Targets::Classes(y) => BatchTargets::Classes(rows.iter().map(|&i| y[i]).collect()),
            Targets::Tasks(m) => BatchTargets::Tasks(m.select(Axis(0), rows)),
        }
    }
}

/// Gradients of the data loss for every hidden layer (weights, hidden bias)
/// followed by the head (weights, bias).
pub type NetworkGrads = Vec<(Array2<f64>, Array1<f64>)>;

/// Data loss of one minibatch and its gradient with respect to every
/// trained parameter. With `training` set, dropout at `dropout_rate` is
/// applied to each hidden layer's output.
pub fn batch_loss_and_grads(
    net: &TrfNetwork,
    x: &Array2<f64>,
    targets: &BatchTargets,
    dropout_rate: f64,
    drop_rng: &mut rng::Rng,
    training: bool,
) -> Result<(f64, NetworkGrads)> {
    let head = net.require_head()?;
    let mut inputs = Vec::with_capacity(net.layers.len());
    let mut cache = Vec::with_capacity(net.layers.len());
    let mut a = x.clone();
    for l in &net.layers {
        let pre = l.pre_activation(&a)?;
        let post = l.activation.apply(&pre);
        let (dropped, scale) = dropout(&post, dropout_rate, drop_rng, training)?;
        inputs.push(a);
        cache.push((pre, post, scale));
        a = dropped;
    }
    let logits = head.layer.pre_activation(&a)?;
    let (loss, dlogits) = match targets {
        BatchTargets::Classes(y) => softmax_cross_entropy(&logits, y)?,
        BatchTargets::Tasks(t) => multitask_bce(&logits, t)?,
    };
    let (hg, mut g) = head.layer.backward(&a, &logits, &logits, dlogits);
    let mut grads = Vec::with_capacity(net.layers.len() + 1);
    for (k, l) in net.layers.iter().enumerate().rev() {
        let (pre, post, scale) = &cache[k];
        if let Some(s) = scale {
            g *= s;
        }
        let (gw, gb, gx) = l.backward(&inputs[k], pre, post, g, k > 0);
        grads.push((gw, gb));
        g = gx.unwrap_or_default();
    }
    grads.reverse();
    grads.push((hg.weights, hg.bias));
    Ok((loss, grads))
}

fn train_step(
    net: &mut TrfNetwork,
    x: &Array2<f64>,
    targets: &Targets<'_>,
    rows: &[usize],
    hyper: &FinetuneHyper,
    opt: &mut OptimizerState,
    drop_rng: &mut rng::Rng,
) -> Result<()> {
    let batch = BatchTargets::select(targets, rows);
    let (_, mut grads) = batch_loss_and_grads(net, x, &batch, hyper.dropout, drop_rng, true)?;
    if hyper.l1 > 0.0 {
        for (k, l) in net.layers.iter().enumerate() {
            grads[k].0 += &l1_penalty_grad(l.weights(), hyper.l1);
        }
        let last = grads.len() - 1;
        grads[last].0 += &l1_penalty_grad(net.require_head()?.layer.weights(), hyper.l1);
    }
    let head = net.head.as_mut().expect("checked above");
    let mut params = Vec::with_capacity(grads.len() * 2);
    for (l, (gw, gb)) in net.layers.iter_mut().zip(&grads) {
        let (w, bh, _, mask) = l.params_mut();
        params.push(Param::masked(w, gw.as_slice().expect("standard layout"), mask));
        params.push(Param::new(bh, gb.as_slice().expect("standard layout")));
    }
    let (hw, hb) = head.layer.params_mut();
    let (gw, gb) = &grads[grads.len() - 1];
    params.push(Param::new(hw, gw.as_slice().expect("standard layout")));
    params.push(Param::new(hb, gb.as_slice().expect("standard layout")));
    opt.step(&mut params)
}

/// Metrics of a network on one dataset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub model: String,
    pub n_samples: usize,
    /// Single-task accuracy.
    pub accuracy: Option<f64>,
    /// Multi-task per-task AUC (`NaN` when a task has one class only).
    pub task_auc: Vec<f64>,
    pub mean_auc: Option<f64>,
    pub parameter_count: usize,
    pub hidden_connections: usize,
    pub dense_connections: usize,
    pub sparsity: f64,
    /// Fraction of hidden weights with magnitude at least 0.001.
    pub effective_sparsity: Option<f64>,
    pub widths: Vec<usize>,
    pub epochs_run: Option<usize>,
    pub best_epoch: Option<usize>,
    /// Wall-clock seconds per phase. Not part of the report file, so that
    /// reruns produce identical files.
    pub timings: Vec<(String, f64)>,
}

impl EvalReport {
    /// Accuracy for single-task models, mean AUC otherwise.
    pub fn score(&self) -> f64 {
        self.accuracy.or(self.mean_auc).unwrap_or(f64::NAN)
    }

    /// Line-oriented `key<TAB>value` records.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k}\t{v}");
        };
        put("model", self.model.clone());
        put("n_samples", self.n_samples.to_string());
        if let Some(a) = self.accuracy {
            put("accuracy", a.to_string());
        }
        if let Some(m) = self.mean_auc {
            put("mean_auc", m.to_string());
            put("task_auc", join(&self.task_auc, ","));
        }
        put("parameter_count", self.parameter_count.to_string());
        put("hidden_connections", self.hidden_connections.to_string());
        put("dense_connections", self.dense_connections.to_string());
        put("sparsity", self.sparsity.to_string());
        if let Some(e) = self.effective_sparsity {
            put("effective_sparsity", e.to_string());
        }
        put("widths", join(&self.widths, ","));
        if let Some(e) = self.epochs_run {
            put("epochs_run", e.to_string());
        }
        if let Some(e) = self.best_epoch {
            put("best_epoch", e.to_string());
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut r = EvalReport::default();
        let mut seen_sparsity = false;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Format(format!("report line {}: {what}", i + 1));
            let (k, v) = line.split_once('\t').ok_or_else(|| bad("missing tab"))?;
            let num = |v: &str| v.parse::<f64>().map_err(|_| bad("bad number"));
            let int = |v: &str| v.parse::<usize>().map_err(|_| bad("bad integer"));
            let list = |v: &str, f: &dyn Fn(&str) -> Result<f64>| -> Result<Vec<f64>> {
                if v.is_empty() {
                    Ok(vec![])
                } else {
                    v.split(',').map(f).collect()
                }
            };
            match k {
                "model" => r.model = v.to_string(),
                "n_samples" => r.n_samples = int(v)?,
                "accuracy" => r.accuracy = Some(num(v)?),
                "mean_auc" => r.mean_auc = Some(num(v)?),
                "task_auc" => r.task_auc = list(v, &num)?,
                "parameter_count" => r.parameter_count = int(v)?,
                "hidden_connections" => r.hidden_connections = int(v)?,
                "dense_connections" => r.dense_connections = int(v)?,
                "sparsity" => {
                    r.sparsity = num(v)?;
                    seen_sparsity = true;
                }
                "effective_sparsity" => r.effective_sparsity = Some(num(v)?),
                "widths" => {
                    r.widths = v.split(',').filter(|s| !s.is_empty()).map(int).collect::<Result<_>>()?
                }
                "epochs_run" => r.epochs_run = Some(int(v)?),
                "best_epoch" => r.best_epoch = Some(int(v)?),
                _ => return Err(bad(&format!("unknown key {k:?}"))),
            }
        }
        if !seen_sparsity {
            return Err(Error::Format("report has no sparsity record".into()));
        }
        Ok(r)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text)
    }

    /// Human-readable summary.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "model            {}", self.model);
        let _ = writeln!(out, "samples          {}", self.n_samples);
        if let Some(a) = self.accuracy {
            let _ = writeln!(out, "accuracy         {:.2}%", 100.0 * a);
        }
        if let Some(m) = self.mean_auc {
            let _ = writeln!(out, "mean AUC         {m:.4}");
        }
        let _ = writeln!(out, "parameters       {}", self.parameter_count);
        let _ = writeln!(out, "sparsity         {:.2}%", 100.0 * self.sparsity);
        if let Some(e) = self.effective_sparsity {
            let _ = writeln!(out, "eff. sparsity    {:.2}%", 100.0 * e);
        }
        let _ = writeln!(out, "widths           {}", join(&self.widths, "-"));
        out
    }
}

/// Area under the ROC curve by the rank-sum statistic with midranks for
/// ties. `NaN` labels are skipped; returns `NaN` if either class is absent.
pub fn auc(scores: &[f64], labels: &[f64]) -> f64 {
    let mut pairs: Vec<(f64, bool)> = scores
        .iter()
        .zip(labels)
        .filter(|(_, y)| !y.is_nan())
        .map(|(&s, &y)| (s, y > 0.5))
        .collect();
    let pos = pairs.iter().filter(|p| p.1).count();
    let neg = pairs.len() - pos;
    if pos == 0 || neg == 0 {
        return f64::NAN;
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        while j + 1 < pairs.len() && pairs[j + 1].0 == pairs[i].0 {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean.
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * pairs[i..=j].iter().filter(|p| p.1).count() as f64;
        i = j + 1;
    }
    let p = pos as f64;
    (rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64)
}

/// Index of the first maximum of each row.
pub fn argmax_rows(m: &Array2<f64>) -> Vec<usize> {
    m.outer_iter()
        .map(|r| {
            let mut best = 0;
            for (j, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Evaluate a network with a head on labeled data (no dropout).
pub fn evaluate(net: &TrfNetwork, d: &Dataset) -> Result<EvalReport> {
    let t = targets(net, d)?;
    let logits = net.logits(d.values())?;
    let mut r = EvalReport {
        model: net.provenance_value("kind").unwrap_or("network").to_string(),
        n_samples: d.n_samples(),
        parameter_count: net.parameter_count(),
        hidden_connections: net.hidden_connections(),
        dense_connections: net.dense_connections(),
        sparsity: net.sparsity(),
        widths: net.widths(),
        ..EvalReport::default()
    };
    match t {
        Targets::Classes(y) => {
            let pred = argmax_rows(&logits);
            let hits = pred.iter().zip(y).filter(|(p, y)| p == y).count();
            r.accuracy = Some(hits as f64 / y.len() as f64);
        }
        Targets::Tasks(m) => {
            r.task_auc = (0..m.ncols())
                .map(|j| {
                    auc(
                        &logits.column(j).to_vec(),
                        &m.column(j).to_vec(),
                    )
                })
                .collect();
            let defined: Vec<f64> = r.task_auc.iter().copied().filter(|a| a.is_finite()).collect();
            r.mean_auc = Some(if defined.is_empty() {
                f64::NAN
            } else {
                defined.iter().sum::<f64>() / defined.len() as f64
            });
        }
    }
    Ok(r)
}
