use crate::encoder::RepresentationBundle;
use crate::error::{Error, Result};
use crate::rng::{keyed_rng, stream, Rng};

use super::nn::{self, Act, Dense, Group, Layout, TensorSpec, Trace};
use super::{hinge_loss, RankerConfig};

/// All learnable weights in one flat vector, with named tensors over it.
#[derive(Debug, Clone)]
pub struct RankerModel {
    config: RankerConfig,
    classifier_width: Option<usize>,
    layout: Layout,
    params: Vec<f64>,
    string: Vec<Dense>,
    context: Vec<Dense>,
    final_: Vec<Dense>,
    invariant: Option<Dense>,
    classifier: Vec<Dense>,
}

/// λ-weighted language-classifier term added to a training example's loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierTerm {
    pub lambda: f64,
    /// One-hot language label the classifier outputs are scored against.
    pub label: [f64; 2],
}

/// Loss components of one training example.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub hinge: f64,
    /// `MSE(p_M, N) + MSE(p_E, N)`, unweighted; 0 without a classifier term.
    pub classifier: f64,
    pub lambda: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        if self.lambda == 0.0 {
            self.hinge
        } else {
            self.hinge + self.lambda * self.classifier
        }
    }
}

struct ScoreTrace {
    score: f64,
    inv_m: Option<Trace>,
    inv_e: Option<Trace>,
    /// `h_s0` outputs (or the raw inputs without the layer).
    m_s: Vec<f64>,
    e_s: Vec<f64>,
    string: Vec<Trace>,
    context: Vec<Trace>,
    final_: Vec<Trace>,
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

/// Mean squared error over the two components.
pub(crate) fn mse2(p: &[f64], label: &[f64; 2]) -> f64 {
    ((p[0] - label[0]).powi(2) + (p[1] - label[1]).powi(2)) / 2.0
}

impl RankerModel {
    /// Builds the architecture with all parameters zero.
    pub fn zeros(config: RankerConfig, classifier_width: Option<usize>) -> Result<Self> {
        config.validate()?;
        if classifier_width.is_some() && !config.invariant_layer {
            return Err(Error::Config("the language classifier requires the invariant layer".into()));
        }
        if classifier_width == Some(0) {
            return Err(Error::Config("classifier width must be at least 1".into()));
        }
        let d = config.input_dim;
        let mut layout = Layout::default();
        let tower = |layout: &mut Layout, prefix: &str, inp: usize, widths: &[usize], group: Group| {
            let mut layers = Vec::new();
            let mut prev = inp;
            for (i, &w) in widths.iter().enumerate() {
                layers.push(layout.dense(prefix, i, prev, w, group, Act::Relu, true));
                prev = w;
            }
            layers
        };
        let string = tower(&mut layout, "string", 2 * d, &config.string_layers, Group::String);
        let context = tower(&mut layout, "context", 2 * d, &config.context_layers, Group::Context);
        let w_s = *config.string_layers.last().unwrap();
        let w_c = *config.context_layers.last().unwrap();
        let final_in = w_s + w_c + usize::from(config.use_popularity);
        let mut final_ = tower(&mut layout, "final", final_in, &config.final_layers, Group::Final);
        let prev = config.final_layers.last().copied().unwrap_or(final_in);
        final_.push(layout.dense("final", config.final_layers.len(), prev, 1, Group::Final, Act::Identity, false));
        let invariant = config.invariant_layer.then(|| layout.dense("invariant", 0, d, d, Group::Invariant, Act::Relu, false));
        let classifier = match classifier_width {
            Some(w) => vec![
                layout.dense("classifier", 0, d, w, Group::Classifier, Act::Relu, false),
                layout.dense("classifier", 1, w, 2, Group::Classifier, Act::Identity, false),
            ],
            None => Vec::new(),
        };
        let params = vec![0.0; layout.total];
        Ok(RankerModel { config, classifier_width, layout, params, string, context, final_, invariant, classifier })
    }

    /// Fan-in-scaled uniform initialization, deterministic per seed.
    pub fn init(config: RankerConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config, None)?;
        let mut rng = crate::rng::stream_rng(seed, stream::INIT);
        let layers: Vec<Dense> = model.dense_layers().cloned().collect();
        for l in &layers {
            nn::init_dense(&mut model.params, l, &mut rng);
        }
        Ok(model)
    }

    /// Adds the language classifier `h_adv` (hidden width `width`, two
    /// logits). Existing parameters are untouched.
    pub fn attach_language_classifier(self, width: usize, seed: u64) -> Result<Self> {
        if self.has_classifier() {
            return Err(Error::Config("model already has a language classifier".into()));
        }
        let old = self.params;
        let mut model = Self::zeros(self.config, Some(width))?;
        model.params[..old.len()].copy_from_slice(&old);
        let mut rng = keyed_rng(seed, stream::INIT, &[1]);
        for l in model.classifier.clone() {
            nn::init_dense(&mut model.params, &l, &mut rng);
        }
        Ok(model)
    }

    fn dense_layers(&self) -> impl Iterator<Item = &Dense> {
        self.string.iter().chain(&self.context).chain(&self.final_).chain(self.invariant.iter()).chain(&self.classifier)
    }

    pub fn config(&self) -> &RankerConfig {
        &self.config
    }

    pub fn classifier_width(&self) -> Option<usize> {
        self.classifier_width
    }

    pub fn has_classifier(&self) -> bool {
        !self.classifier.is_empty()
    }

    pub fn has_invariant_layer(&self) -> bool {
        self.invariant.is_some()
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.layout.tensors
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.len()
    }

    /// Parameters of the tensors in `group`, concatenated in layout order.
    pub fn group_parameters(&self, group: Group) -> Vec<f64> {
        self.layout.tensors.iter().filter(|t| t.group == group).flat_map(|t| self.params[t.range()].iter().copied()).collect()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.tensors.iter().find(|t| t.name == name).map(|t| &self.params[t.range()])
    }

    pub fn check_finite(&self) -> Result<()> {
        for t in &self.layout.tensors {
            if self.params[t.range()].iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("parameter tensor {}", t.name)));
            }
        }
        Ok(())
    }

    fn check_bundle(&self, b: &RepresentationBundle) -> Result<()> {
        let d = self.config.input_dim;
        for (what, v) in [("m_s", &b.m_s), ("e_s", &b.e_s), ("m_c", &b.m_c), ("e_c", &b.e_c)] {
            if v.len() != d {
                return Err(Error::DimMismatch { what, expected: d, found: v.len() });
            }
        }
        Ok(())
    }

    fn check_text(&self, t: &[f32]) -> Result<()> {
        if t.len() != self.config.input_dim {
            return Err(Error::DimMismatch { what: "text representation", expected: self.config.input_dim, found: t.len() });
        }
        Ok(())
    }

    fn invariant_forward(&self, v: &[f32]) -> (Vec<f64>, Option<Trace>) {
        match &self.invariant {
            Some(l) => {
                let (y, t) = nn::forward(&self.params, l, widen(v), &mut None);
                (y, Some(t))
            }
            None => (widen(v), None),
        }
    }

    fn forward_trace(&self, b: &RepresentationBundle, rng: Option<&mut Rng>) -> Result<ScoreTrace> {
        self.check_bundle(b)?;
        let p = self.config.dropout;
        let mut dropout = rng.map(|r| (r, p));
        let (m_s, inv_m) = self.invariant_forward(&b.m_s);
        let (e_s, inv_e) = self.invariant_forward(&b.e_s);
        let (r_s, string) = nn::forward_stack(&self.params, &self.string, concat(&m_s, &e_s), &mut dropout);
        let (r_c, context) = nn::forward_stack(&self.params, &self.context, concat(&widen(&b.m_c), &widen(&b.e_c)), &mut dropout);
        let mut h = concat(&r_s, &r_c);
        if self.config.use_popularity {
            h.push(b.popularity);
        }
        let (z, final_) = nn::forward_stack(&self.params, &self.final_, h, &mut dropout);
        Ok(ScoreTrace { score: z[0].tanh(), inv_m, inv_e, m_s, e_s, string, context, final_ })
    }

    /// Score in `[-1, 1]`. Dropout is active only when an rng is supplied.
    pub fn forward_score(&self, b: &RepresentationBundle, dropout: Option<&mut Rng>) -> Result<f64> {
        Ok(self.forward_trace(b, dropout)?.score)
    }

    /// Backpropagates `dL/dscore`; returns `dL/d h_s0(m_s)` and `dL/d h_s0(e_s)`
    /// without pushing them through the invariant layer.
    fn backward_score(&self, t: &ScoreTrace, dscore: f64, grad: &mut [f64]) -> (Vec<f64>, Vec<f64>) {
        let dz = dscore * (1.0 - t.score * t.score);
        let dh = nn::backward_stack(&self.params, &self.final_, &t.final_, vec![dz], grad);
        let w_s = *self.config.string_layers.last().unwrap();
        let w_c = *self.config.context_layers.last().unwrap();
        let (dr_s, dr_c) = (&dh[..w_s], &dh[w_s..w_s + w_c]);
        nn::backward_stack(&self.params, &self.context, &t.context, dr_c.to_vec(), grad);
        let ds = nn::backward_stack(&self.params, &self.string, &t.string, dr_s.to_vec(), grad);
        let d = self.config.input_dim;
        (ds[..d].to_vec(), ds[d..].to_vec())
    }

    fn invariant_backward(&self, trace: &Option<Trace>, dy: &[f64], grad: &mut [f64]) {
        if let (Some(l), Some(t)) = (&self.invariant, trace) {
            nn::backward(&self.params, l, t, dy, grad);
        }
    }

    fn classify_trace(&self, h: Vec<f64>) -> Result<(Vec<f64>, Vec<Trace>)> {
        if !self.has_classifier() {
            return Err(Error::Config("model has no language classifier".into()));
        }
        let (z, traces) = nn::forward_stack(&self.params, &self.classifier, h, &mut None);
        Ok((nn::softmax(&z), traces))
    }

    /// Classifier term gradient w.r.t. the classifier input; accumulates
    /// classifier parameter gradients scaled by `scale`.
    fn classifier_backward(&self, p: &[f64], traces: &[Trace], label: &[f64; 2], scale: f64, grad: &mut [f64]) -> Vec<f64> {
        let dp: Vec<f64> = p.iter().zip(label).map(|(pi, li)| scale * (pi - li)).collect();
        let dz = nn::softmax_backward(p, &dp);
        nn::backward_stack(&self.params, &self.classifier, traces, dz, grad)
    }

    /// Language likelihoods `softmax(h_adv(h_s0(t)))`.
    pub fn language_probs(&self, t: &[f32]) -> Result<[f64; 2]> {
        self.check_text(t)?;
        let (h, _) = self.invariant_forward(t);
        let (p, _) = self.classify_trace(h)?;
        Ok([p[0], p[1]])
    }

    /// `MSE(softmax(h_adv(h_s0(t))), label)`; gradients (if requested) cover
    /// both `h_adv` and `h_s0`.
    pub fn classifier_loss_grad(&self, t: &[f32], label: &[f64; 2], grad: Option<&mut [f64]>) -> Result<f64> {
        self.check_text(t)?;
        let (h, inv) = self.invariant_forward(t);
        let (p, traces) = self.classify_trace(h)?;
        let loss = mse2(&p, label);
        if let Some(grad) = grad {
            let dh = self.classifier_backward(&p, &traces, label, 1.0, grad);
            self.invariant_backward(&inv, &dh, grad);
        }
        Ok(loss)
    }

    /// Loss of one training example: hinge over `pos` and `negs`, plus the
    /// optional classifier term on `h_s0(m_s)` and `h_s0(e_s)` of `pos`.
    /// Adds the gradient into `grad` when given.
    ///
    /// The dropout rng, if any, is consumed by the positive pass and then by
    /// each negative in order.
    pub fn example_loss_grad(
        &self,
        pos: &RepresentationBundle,
        negs: &[RepresentationBundle],
        cls: Option<ClassifierTerm>,
        mut dropout: Option<&mut Rng>,
        grad: Option<&mut [f64]>,
    ) -> Result<LossParts> {
        if negs.is_empty() {
            return Err(Error::Invalid("training example needs at least one negative".into()));
        }
        let pt = self.forward_trace(pos, dropout.as_deref_mut())?;
        let mut nts = Vec::with_capacity(negs.len());
        for n in negs {
            nts.push(self.forward_trace(n, dropout.as_deref_mut())?);
        }
        let neg_scores: Vec<f64> = nts.iter().map(|t| t.score).collect();
        let hinge = hinge_loss(pt.score, &neg_scores, self.config.margin)?;

        let cls = cls.filter(|c| c.lambda != 0.0);
        let mut parts = LossParts { hinge, classifier: 0.0, lambda: cls.map_or(0.0, |c| c.lambda) };
        let cls_fw = match cls {
            Some(c) => {
                let (pm, tm) = self.classify_trace(pt.m_s.clone())?;
                let (pe, te) = self.classify_trace(pt.e_s.clone())?;
                parts.classifier = mse2(&pm, &c.label) + mse2(&pe, &c.label);
                Some((c, pm, tm, pe, te))
            }
            None => None,
        };
        let Some(grad) = grad else {
            return Ok(parts);
        };

        let (mut dm, mut de) = (vec![0.0; self.config.input_dim], vec![0.0; self.config.input_dim]);
        if hinge > 0.0 {
            let (a, b) = self.backward_score(&pt, -1.0, grad);
            dm = a;
            de = b;
        }
        if let Some((c, pm, tm, pe, te)) = cls_fw {
            let gm = self.classifier_backward(&pm, &tm, &c.label, c.lambda, grad);
            let ge = self.classifier_backward(&pe, &te, &c.label, c.lambda, grad);
            dm.iter_mut().zip(&gm).for_each(|(a, b)| *a += b);
            de.iter_mut().zip(&ge).for_each(|(a, b)| *a += b);
        }
        if self.invariant.is_some() {
            self.invariant_backward(&pt.inv_m, &dm, grad);
            self.invariant_backward(&pt.inv_e, &de, grad);
        }
        if hinge > 0.0 {
            // first maximal negative carries the gradient
            let mut arg = 0;
            for (i, &s) in neg_scores.iter().enumerate() {
                if s > neg_scores[arg] {
                    arg = i;
                }
            }
            let nt = &nts[arg];
            let (dm, de) = self.backward_score(nt, 1.0, grad);
            self.invariant_backward(&nt.inv_m, &dm, grad);
            self.invariant_backward(&nt.inv_e, &de, grad);
        }
        Ok(parts)
    }
}
