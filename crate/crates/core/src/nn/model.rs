use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LayerKind, ModelSchema, NnError, Result, Tensor};

/// Gradients aligned with `Model::params`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub grads: Vec<Tensor>,
}

impl GradientSet {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            grads: model
                .params
                .iter()
                .map(|p| Tensor::zeros(p.shape().to_vec()))
                .collect(),
        }
    }

    /// All entries concatenated in parameter order.
    pub fn flatten(&self) -> Vec<f64> {
        self.grads
            .iter()
            .flat_map(|g| g.data().iter().copied())
            .collect()
    }

    pub fn norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, k: f64) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
}

/// Schema plus trainable tensors (weights then bias for each dense/conv layer).
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    schema: ModelSchema,
    params: Vec<Tensor>,
    /// Index of each layer's first parameter tensor.
    offsets: Vec<usize>,
}

fn param_offsets(schema: &ModelSchema) -> Vec<usize> {
    let mut next = 0;
    schema
        .layers()
        .iter()
        .map(|l| {
            let at = next;
            next += l.kind.param_shapes().len();
            at
        })
        .collect()
}

impl Model {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
    pub fn init(schema: ModelSchema, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for layer in schema.layers() {
            let fan_in = match layer.kind {
                LayerKind::Dense { inputs, .. } => inputs,
                LayerKind::Conv3x3 { in_channels, .. } => in_channels * 9,
                _ => continue,
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            for shape in layer.kind.param_shapes() {
                let n = shape.iter().product();
                let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                params.push(Tensor::new(shape, data).expect("shape product"));
            }
        }
        let offsets = param_offsets(&schema);
        Self {
            schema,
            params,
            offsets,
        }
    }

    pub fn zeros(schema: ModelSchema) -> Self {
        let params = schema
            .param_shapes()
            .into_iter()
            .map(Tensor::zeros)
            .collect();
        let offsets = param_offsets(&schema);
        Self {
            schema,
            params,
            offsets,
        }
    }

    pub fn from_params(schema: ModelSchema, params: Vec<Tensor>) -> Result<Self> {
        let shapes = schema.param_shapes();
        if shapes.len() != params.len() {
            return Err(NnError::Shape(format!(
                "schema has {} parameter tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for (i, (s, p)) in shapes.iter().zip(&params).enumerate() {
            if s.as_slice() != p.shape() {
                return Err(NnError::Shape(format!(
                    "parameter {i}: expected {s:?}, got {:?}",
                    p.shape()
                )));
            }
            if !p.is_finite() {
                return Err(NnError::NonFinite);
            }
        }
        let offsets = param_offsets(&schema);
        Ok(Self {
            schema,
            params,
            offsets,
        })
    }

    pub fn schema(&self) -> &ModelSchema {
        &self.schema
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn param_mut(&mut self, index: usize) -> &mut [f64] {
        self.params[index].data_mut()
    }

    pub fn num_tensors(&self) -> usize {
        self.params.len()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Parameter tensor `index` as a row-major vector.
    pub fn flatten_layer(&self, index: usize) -> Result<Vec<f64>> {
        self.params
            .get(index)
            .map(|p| p.data().to_vec())
            .ok_or(NnError::Index(index))
    }

    pub fn unflatten_layer(&mut self, index: usize, flat: &[f64]) -> Result<()> {
        self.params
            .get_mut(index)
            .ok_or(NnError::Index(index))?
            .set_data(flat)
    }

    /// Replaces every tensor; lengths must match.
    pub fn set_layers(&mut self, layers: &[Vec<f64>]) -> Result<()> {
        if layers.len() != self.params.len() {
            return Err(NnError::Shape(format!(
                "expected {} tensors, got {}",
                self.params.len(),
                layers.len()
            )));
        }
        for (p, l) in self.params.iter_mut().zip(layers) {
            p.set_data(l)?;
        }
        Ok(())
    }

    pub fn layers_flat(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| p.data().to_vec()).collect()
    }

    fn check_inputs(&self, inputs: &Tensor) -> Result<usize> {
        let features = self.schema.input_size();
        let shape = inputs.shape();
        let batch = shape.first().copied().unwrap_or(0);
        let row: usize = shape.iter().skip(1).product();
        if shape.len() < 2 || row != features {
            return Err(NnError::Shape(format!(
                "input shape {shape:?} does not match {features} features"
            )));
        }
        if !inputs.is_finite() {
            return Err(NnError::NonFinite);
        }
        Ok(batch)
    }

    /// Logits of shape `(batch, classes)`.
    pub fn forward(&self, inputs: &Tensor) -> Result<Tensor> {
        let batch = self.check_inputs(inputs)?;
        let acts = self.forward_raw(inputs.data(), batch);
        Tensor::new(
            vec![batch, self.schema.classes()],
            acts.into_iter().last().unwrap(),
        )
    }

    /// Mean softmax cross-entropy and its parameter gradients.
    pub fn loss_and_grad(&self, inputs: &Tensor, labels: &[usize]) -> Result<(f64, GradientSet)> {
        let (loss, grads, _) = self.loss_grad_impl(inputs, labels, false)?;
        Ok((loss, grads))
    }

    /// As `loss_and_grad`, also returning d(loss)/d(inputs).
    pub fn loss_grad_input(
        &self,
        inputs: &Tensor,
        labels: &[usize],
    ) -> Result<(f64, GradientSet, Tensor)> {
        let (loss, grads, dx) = self.loss_grad_impl(inputs, labels, true)?;
        Ok((
            loss,
            grads,
            Tensor::new(inputs.shape().to_vec(), dx.unwrap())?,
        ))
    }

    fn loss_grad_impl(
        &self,
        inputs: &Tensor,
        labels: &[usize],
        want_input: bool,
    ) -> Result<(f64, GradientSet, Option<Vec<f64>>)> {
        let batch = self.check_inputs(inputs)?;
        if batch == 0 {
            return Err(NnError::EmptyBatch);
        }
        if labels.len() != batch {
            return Err(NnError::Shape(format!(
                "{batch} inputs but {} labels",
                labels.len()
            )));
        }
        let classes = self.schema.classes();
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(NnError::Label(bad, classes));
        }
        let mut grads = GradientSet::zeros_like(self);
        let (loss, dx) = self.backprop(inputs.data(), labels, &mut grads, want_input);
        Ok((loss, grads, dx))
    }

    /// Activations after every layer; element 0 is the input itself.
    pub(crate) fn forward_raw(&self, input: &[f64], batch: usize) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.schema.layers().len() + 1);
        acts.push(input.to_vec());
        for (l, layer) in self.schema.layers().iter().enumerate() {
            let x = acts.last().unwrap();
            let mut y = vec![0.0; batch * layer.kind.output_size()];
            let p = &self.params[self.offsets[l]..];
            match layer.kind {
                LayerKind::Dense { inputs, outputs } => {
                    dense_forward(p[0].data(), p[1].data(), x, &mut y, inputs, outputs, batch)
                }
                LayerKind::Relu { .. } => {
                    for (o, &i) in y.iter_mut().zip(x) {
                        *o = i.max(0.0);
                    }
                }
                LayerKind::Conv3x3 {
                    in_channels,
                    out_channels,
                    height,
                    width,
                } => conv_forward(
                    p[0].data(),
                    p[1].data(),
                    x,
                    &mut y,
                    [in_channels, out_channels, height, width],
                    batch,
                ),
                LayerKind::MaxPool2 {
                    channels,
                    height,
                    width,
                } => pool_forward(x, &mut y, channels * batch, height, width),
                LayerKind::SoftmaxXent { .. } => y.copy_from_slice(x),
            }
            acts.push(y);
        }
        acts
    }

    /// Accumulates parameter gradients of the mean loss into `grads`.
    pub(crate) fn backprop(
        &self,
        input: &[f64],
        labels: &[usize],
        grads: &mut GradientSet,
        want_input: bool,
    ) -> (f64, Option<Vec<f64>>) {
        let batch = labels.len();
        let acts = self.forward_raw(input, batch);
        let classes = self.schema.classes();
        let logits = acts.last().unwrap();
        let mut delta = vec![0.0; batch * classes];
        let mut loss = 0.0;
        let inv = 1.0 / batch as f64;
        for b in 0..batch {
            let z = &logits[b * classes..(b + 1) * classes];
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
            let lse = m + sum.ln();
            loss += lse - z[labels[b]];
            let d = &mut delta[b * classes..(b + 1) * classes];
            for (k, dk) in d.iter_mut().enumerate() {
                *dk = (z[k] - lse).exp() * inv;
            }
            d[labels[b]] -= inv;
        }
        loss *= inv;

        let layers = self.schema.layers();
        for l in (0..layers.len()).rev() {
            let x = &acts[l];
            let need_dx = l > 0 || want_input;
            if !need_dx && layers[l].kind.param_shapes().is_empty() {
                break;
            }
            let mut dx = if need_dx {
                vec![0.0; x.len()]
            } else {
                Vec::new()
            };
            let off = self.offsets[l];
            match layers[l].kind {
                LayerKind::Dense { inputs, outputs } => {
                    let (gw, gb) = grad_pair(grads, off);
                    dense_backward(
                        self.params[off].data(),
                        x,
                        &delta,
                        gw,
                        gb,
                        need_dx.then_some(dx.as_mut_slice()),
                        inputs,
                        outputs,
                        batch,
                    );
                }
                LayerKind::Relu { .. } => {
                    for ((d, &i), &g) in dx.iter_mut().zip(x).zip(&delta) {
                        *d = if i > 0.0 { g } else { 0.0 };
                    }
                }
                LayerKind::Conv3x3 {
                    in_channels,
                    out_channels,
                    height,
                    width,
                } => {
                    let (gw, gb) = grad_pair(grads, off);
                    conv_backward(
                        self.params[off].data(),
                        x,
                        &delta,
                        gw,
                        gb,
                        need_dx.then_some(dx.as_mut_slice()),
                        [in_channels, out_channels, height, width],
                        batch,
                    );
                }
                LayerKind::MaxPool2 {
                    channels,
                    height,
                    width,
                } => pool_backward(x, &delta, &mut dx, channels * batch, height, width),
                LayerKind::SoftmaxXent { .. } => dx = delta.clone(),
            }
            delta = dx;
        }
        (loss, want_input.then_some(delta))
    }
}

fn grad_pair(grads: &mut GradientSet, off: usize) -> (&mut [f64], &mut [f64]) {
    let (a, b) = grads.grads[off..].split_at_mut(1);
    (a[0].data_mut(), b[0].data_mut())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn dense_forward(
    w: &[f64],
    bias: &[f64],
    x: &[f64],
    y: &mut [f64],
    inputs: usize,
    outputs: usize,
    batch: usize,
) {
    for o in 0..outputs {
        let row = &w[o * inputs..(o + 1) * inputs];
        for b in 0..batch {
            y[b * outputs + o] = bias[o] + dot(row, &x[b * inputs..(b + 1) * inputs]);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn dense_backward(
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    mut dx: Option<&mut [f64]>,
    inputs: usize,
    outputs: usize,
    batch: usize,
) {
    for o in 0..outputs {
        let grow = &mut gw[o * inputs..(o + 1) * inputs];
        let wrow = &w[o * inputs..(o + 1) * inputs];
        for b in 0..batch {
            let g = dy[b * outputs + o];
            if g == 0.0 {
                continue;
            }
            gb[o] += g;
            axpy(grow, g, &x[b * inputs..(b + 1) * inputs]);
            if let Some(dx) = dx.as_deref_mut() {
                axpy(&mut dx[b * inputs..(b + 1) * inputs], g, wrow);
            }
        }
    }
}

/// Zero-padded 3x3 patches of one sample, `[h*w][ci*9]`, in the kernel's `[ci][ky][kx]` order.
fn im2col(x: &[f64], ci_n: usize, h: usize, w: usize, out: &mut Vec<f64>) {
    let row = ci_n * 9;
    out.clear();
    out.resize(h * w * row, 0.0);
    for yy in 0..h {
        for xx in 0..w {
            let patch = &mut out[(yy * w + xx) * row..(yy * w + xx + 1) * row];
            for ci in 0..ci_n {
                let xp = &x[ci * h * w..(ci + 1) * h * w];
                for ky in 0..3 {
                    let Some(iy) = (yy + ky).checked_sub(1).filter(|&v| v < h) else {
                        continue;
                    };
                    for kx in 0..3 {
                        if let Some(ix) = (xx + kx).checked_sub(1).filter(|&v| v < w) {
                            patch[ci * 9 + ky * 3 + kx] = xp[iy * w + ix];
                        }
                    }
                }
            }
        }
    }
}

/// Adds patch gradients back onto the input positions they were read from.
fn col2im(cols: &[f64], ci_n: usize, h: usize, w: usize, dx: &mut [f64]) {
    let row = ci_n * 9;
    for yy in 0..h {
        for xx in 0..w {
            let patch = &cols[(yy * w + xx) * row..(yy * w + xx + 1) * row];
            for ci in 0..ci_n {
                for ky in 0..3 {
                    let Some(iy) = (yy + ky).checked_sub(1).filter(|&v| v < h) else {
                        continue;
                    };
                    for kx in 0..3 {
                        if let Some(ix) = (xx + kx).checked_sub(1).filter(|&v| v < w) {
                            dx[ci * h * w + iy * w + ix] += patch[ci * 9 + ky * 3 + kx];
                        }
                    }
                }
            }
        }
    }
}

/// `dims` = [in_channels, out_channels, height, width].
fn conv_forward(k: &[f64], bias: &[f64], x: &[f64], y: &mut [f64], dims: [usize; 4], batch: usize) {
    let [ci_n, co_n, h, w] = dims;
    let (plane, row) = (h * w, ci_n * 9);
    let mut cols = Vec::new();
    for b in 0..batch {
        im2col(
            &x[b * ci_n * plane..(b + 1) * ci_n * plane],
            ci_n,
            h,
            w,
            &mut cols,
        );
        for co in 0..co_n {
            let kr = &k[co * row..(co + 1) * row];
            let yp = &mut y[(b * co_n + co) * plane..(b * co_n + co + 1) * plane];
            for (pix, out) in yp.iter_mut().enumerate() {
                *out = bias[co] + dot(kr, &cols[pix * row..(pix + 1) * row]);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    k: &[f64],
    x: &[f64],
    dy: &[f64],
    gk: &mut [f64],
    gb: &mut [f64],
    mut dx: Option<&mut [f64]>,
    dims: [usize; 4],
    batch: usize,
) {
    let [ci_n, co_n, h, w] = dims;
    let (plane, row) = (h * w, ci_n * 9);
    let mut cols = Vec::new();
    let mut dcols = vec![0.0; if dx.is_some() { plane * row } else { 0 }];
    for b in 0..batch {
        im2col(
            &x[b * ci_n * plane..(b + 1) * ci_n * plane],
            ci_n,
            h,
            w,
            &mut cols,
        );
        dcols.fill(0.0);
        for co in 0..co_n {
            let dyp = &dy[(b * co_n + co) * plane..(b * co_n + co + 1) * plane];
            gb[co] += dyp.iter().sum::<f64>();
            let kr = &k[co * row..(co + 1) * row];
            let gkr = &mut gk[co * row..(co + 1) * row];
            for (pix, &g) in dyp.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                axpy(gkr, g, &cols[pix * row..(pix + 1) * row]);
                if !dcols.is_empty() {
                    axpy(&mut dcols[pix * row..(pix + 1) * row], g, kr);
                }
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            col2im(
                &dcols,
                ci_n,
                h,
                w,
                &mut dx[b * ci_n * plane..(b + 1) * ci_n * plane],
            );
        }
    }
}

fn pool_argmax(xp: &[f64], w: usize, y: usize, x: usize) -> usize {
    let mut best = (2 * y) * w + 2 * x;
    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
        let at = (2 * y + dy) * w + 2 * x + dx;
        if xp[at] > xp[best] {
            best = at;
        }
    }
    best
}

fn pool_forward(x: &[f64], y: &mut [f64], planes: usize, h: usize, w: usize) {
    let (oh, ow) = (h / 2, w / 2);
    for p in 0..planes {
        let xp = &x[p * h * w..(p + 1) * h * w];
        for yy in 0..oh {
            for xx in 0..ow {
                y[p * oh * ow + yy * ow + xx] = xp[pool_argmax(xp, w, yy, xx)];
            }
        }
    }
}

fn pool_backward(x: &[f64], dy: &[f64], dx: &mut [f64], planes: usize, h: usize, w: usize) {
    let (oh, ow) = (h / 2, w / 2);
    for p in 0..planes {
        let xp = &x[p * h * w..(p + 1) * h * w];
        for yy in 0..oh {
            for xx in 0..ow {
                dx[p * h * w + pool_argmax(xp, w, yy, xx)] += dy[p * oh * ow + yy * ow + xx];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerSpec, ModelSchema};

    fn batch(rows: &[&[f64]]) -> Tensor {
        Tensor::new(
            vec![rows.len(), rows[0].len()],
            rows.iter().flat_map(|r| r.iter().copied()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_give_zero_logits_and_ln_c_loss() {
        let m = Model::zeros(ModelSchema::mlp(&[5, 4, 3]).unwrap());
        let x = batch(&[&[1.0, -2.0, 3.0, 0.5, 9.0]]);
        assert!(m.forward(&x).unwrap().data().iter().all(|&v| v == 0.0));
        let (loss, _) = m.loss_and_grad(&x, &[2]).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let schema = ModelSchema::mlp(&[3, 3]).unwrap();
        let mut m = Model::zeros(schema);
        m.unflatten_layer(0, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
            .unwrap();
        let x = batch(&[&[0.25, -1.0, 7.0]]);
        assert_eq!(m.forward(&x).unwrap().data(), x.data());
    }

    #[test]
    fn forward_is_deterministic() {
        let m = Model::init(ModelSchema::mlp(&[6, 5, 4, 3]).unwrap(), 11);
        let x = batch(&[&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6], &[-1.0; 6]]);
        let a = m.forward(&x).unwrap();
        let b = Model::init(ModelSchema::mlp(&[6, 5, 4, 3]).unwrap(), 11)
            .forward(&x)
            .unwrap();
        assert_eq!(a.shape(), &[2, 3]);
        assert_eq!(a, b);
    }

    #[test]
    fn input_errors() {
        let m = Model::zeros(ModelSchema::mlp(&[2, 2]).unwrap());
        assert!(matches!(
            m.forward(&batch(&[&[1.0, 2.0, 3.0]])),
            Err(NnError::Shape(_))
        ));
        assert!(matches!(
            m.forward(&batch(&[&[1.0, f64::NAN]])),
            Err(NnError::NonFinite)
        ));
        let empty = Tensor::new(vec![0, 2], vec![]).unwrap();
        assert!(matches!(
            m.loss_and_grad(&empty, &[]),
            Err(NnError::EmptyBatch)
        ));
        assert!(matches!(
            m.loss_and_grad(&batch(&[&[1.0, 2.0]]), &[2]),
            Err(NnError::Label(2, 2))
        ));
    }

    #[test]
    fn duplicated_sample_matches_single() {
        let m = Model::init(ModelSchema::mlp(&[4, 3, 2]).unwrap(), 2);
        let row = [0.3, -0.7, 1.1, 0.05];
        let (l1, g1) = m.loss_and_grad(&batch(&[&row]), &[1]).unwrap();
        let (l2, g2) = m.loss_and_grad(&batch(&[&row, &row]), &[1, 1]).unwrap();
        assert!((l1 - l2).abs() < 1e-15);
        for (a, b) in g1.flatten().iter().zip(g2.flatten()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn flatten_layout_and_guard() {
        let mut m = Model::zeros(ModelSchema::mlp(&[3, 2]).unwrap());
        let flat = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        m.unflatten_layer(0, &flat).unwrap();
        assert_eq!(m.params()[0].shape(), &[2, 3]);
        assert_eq!(m.flatten_layer(0).unwrap(), flat);
        assert!(m.unflatten_layer(0, &flat[..5]).is_err());
        assert!(m.flatten_layer(9).is_err());
        let before = m.clone();
        for i in 0..m.num_tensors() {
            let f = m.flatten_layer(i).unwrap();
            m.unflatten_layer(i, &f).unwrap();
        }
        assert_eq!(m, before);
    }

    #[test]
    fn from_params_checks_shapes() {
        let schema = ModelSchema::new(vec![
            LayerSpec {
                name: "fc".into(),
                kind: LayerKind::Dense {
                    inputs: 2,
                    outputs: 2,
                },
            },
            LayerSpec {
                name: "head".into(),
                kind: LayerKind::SoftmaxXent { classes: 2 },
            },
        ])
        .unwrap();
        let good = vec![Tensor::zeros(vec![2, 2]), Tensor::zeros(vec![2])];
        assert!(Model::from_params(schema.clone(), good).is_ok());
        let bad = vec![Tensor::zeros(vec![4]), Tensor::zeros(vec![2])];
        assert!(Model::from_params(schema, bad).is_err());
    }
}
