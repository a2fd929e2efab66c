//! Conditional VAE over latent activations. The encoder consumes the
//! classifier's cut activations (the shared feature extractor produces
//! them); the decoder is conditioned by a one-hot class vector concatenated
//! to z and ends in a ReLU so reconstructions stay in the activation range.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{seeded_rng, Array, Graph, NodeId};
use crate::classifier::{ClassifierParams, DenseLayer};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GeneratorParams {
    /// Encoder: cut -> hidden -> (mu, logvar).
    pub enc_hidden: DenseLayer,
    pub enc_mu: DenseLayer,
    pub enc_logvar: DenseLayer,
    /// Decoder: (z ++ one-hot) -> hidden -> cut, final ReLU.
    pub dec_hidden: DenseLayer,
    pub dec_out: DenseLayer,
    pub z_dim: usize,
    pub num_classes: usize,
    /// KL weight in the total loss.
    pub beta: f64,
    /// Classification-loss weight in the total loss.
    pub eta: f64,
}

impl GeneratorParams {
    pub fn init(
        cut_width: usize,
        enc_hidden: usize,
        dec_hidden: usize,
        z_dim: usize,
        num_classes: usize,
        beta: f64,
        eta: f64,
        seed: u64,
    ) -> Result<Self> {
        if z_dim == 0 {
            return Err(Error::InvalidArgument("z_dim must be > 0".to_string()));
        }
        if beta < 0.0 {
            return Err(Error::BadLossWeight(format!("beta = {beta}")));
        }
        if eta < 0.0 {
            return Err(Error::BadLossWeight(format!("eta = {eta}")));
        }
        let mut rng = seeded_rng(seed);
        Ok(GeneratorParams {
            enc_hidden: DenseLayer::init(cut_width, enc_hidden, &mut rng),
            enc_mu: DenseLayer::init(enc_hidden, z_dim, &mut rng),
            enc_logvar: DenseLayer::init(enc_hidden, z_dim, &mut rng),
            dec_hidden: DenseLayer::init(z_dim + num_classes, dec_hidden, &mut rng),
            dec_out: DenseLayer::init(dec_hidden, cut_width, &mut rng),
            z_dim,
            num_classes,
            beta,
            eta,
        })
    }

    pub fn cut_width(&self) -> usize {
        self.dec_out.out_width()
    }

    /// Ordered parameter tensors; the index is the optimizer key.
    pub fn param_order(&self) -> [&'static str; 10] {
        [
            "enc_hidden.w",
            "enc_hidden.b",
            "enc_mu.w",
            "enc_mu.b",
            "enc_logvar.w",
            "enc_logvar.b",
            "dec_hidden.w",
            "dec_hidden.b",
            "dec_out.w",
            "dec_out.b",
        ]
    }

    pub fn param(&self, key: usize) -> &Array {
        match key {
            0 => &self.enc_hidden.w,
            1 => &self.enc_hidden.b,
            2 => &self.enc_mu.w,
            3 => &self.enc_mu.b,
            4 => &self.enc_logvar.w,
            5 => &self.enc_logvar.b,
            6 => &self.dec_hidden.w,
            7 => &self.dec_hidden.b,
            8 => &self.dec_out.w,
            9 => &self.dec_out.b,
            _ => panic!("generator has 10 parameter tensors"),
        }
    }

    pub fn param_mut(&mut self, key: usize) -> &mut Array {
        match key {
            0 => &mut self.enc_hidden.w,
            1 => &mut self.enc_hidden.b,
            2 => &mut self.enc_mu.w,
            3 => &mut self.enc_mu.b,
            4 => &mut self.enc_logvar.w,
            5 => &mut self.enc_logvar.b,
            6 => &mut self.dec_hidden.w,
            7 => &mut self.dec_hidden.b,
            8 => &mut self.dec_out.w,
            9 => &mut self.dec_out.b,
            _ => panic!("generator has 10 parameter tensors"),
        }
    }

    /// Per-pattern Gaussian parameters (mu, logvar), each `[n, z_dim]`.
    pub fn encode(&self, latent_batch: &Array) -> Result<(Array, Array)> {
        let mut g = Graph::new();
        let x = g.constant(latent_batch.clone());
        let (_, mu, logvar) = self.graph_encode(&mut g, x, false)?;
        Ok((g.value(mu).clone(), g.value(logvar).clone()))
    }

    /// Decode `z` rows conditioned on class ids; output is nonnegative and
    /// cut-wide.
    pub fn decode(&self, z: &Array, labels: &[usize]) -> Result<Array> {
        decode_with(
            &self.dec_hidden,
            &self.dec_out,
            self.num_classes,
            z,
            labels,
        )
    }

    /// Decoder-only copy used to generate replay for the next experience.
    pub fn snapshot(&self) -> GeneratorSnapshot {
        GeneratorSnapshot {
            dec_hidden: self.dec_hidden.clone(),
            dec_out: self.dec_out.clone(),
            z_dim: self.z_dim,
            num_classes: self.num_classes,
        }
    }

    /// Encoder subgraph. Returns bound parameter leaves when trainable.
    pub fn graph_encode(
        &self,
        g: &mut Graph,
        latent: NodeId,
        trainable: bool,
    ) -> Result<(Vec<(usize, NodeId)>, NodeId, NodeId)> {
        let mut bound = Vec::new();
        let mut leaf = |g: &mut Graph, key: usize, value: &Array| {
            if trainable {
                let n = g.parameter(value.clone());
                bound.push((key, n));
                n
            } else {
                g.constant(value.clone())
            }
        };
        let hw = leaf(g, 0, &self.enc_hidden.w);
        let hb = leaf(g, 1, &self.enc_hidden.b);
        let mw = leaf(g, 2, &self.enc_mu.w);
        let mb = leaf(g, 3, &self.enc_mu.b);
        let lw = leaf(g, 4, &self.enc_logvar.w);
        let lb = leaf(g, 5, &self.enc_logvar.b);
        let h = g.matmul(latent, hw)?;
        let h = g.add_row(h, hb)?;
        let h = g.relu(h)?;
        let mu = g.matmul(h, mw)?;
        let mu = g.add_row(mu, mb)?;
        let logvar = g.matmul(h, lw)?;
        let logvar = g.add_row(logvar, lb)?;
        Ok((bound, mu, logvar))
    }

    /// Decoder subgraph from a z node plus fixed one-hot conditioning.
    pub fn graph_decode(
        &self,
        g: &mut Graph,
        z: NodeId,
        labels: &[usize],
        trainable: bool,
    ) -> Result<(Vec<(usize, NodeId)>, NodeId)> {
        let onehot = one_hot(labels, self.num_classes)?;
        let cond = g.constant(onehot);
        let zin = g.concat_cols(z, cond)?;
        let mut bound = Vec::new();
        let mut leaf = |g: &mut Graph, key: usize, value: &Array| {
            if trainable {
                let n = g.parameter(value.clone());
                bound.push((key, n));
                n
            } else {
                g.constant(value.clone())
            }
        };
        let hw = leaf(g, 6, &self.dec_hidden.w);
        let hb = leaf(g, 7, &self.dec_hidden.b);
        let ow = leaf(g, 8, &self.dec_out.w);
        let ob = leaf(g, 9, &self.dec_out.b);
        let h = g.matmul(zin, hw)?;
        let h = g.add_row(h, hb)?;
        let h = g.relu(h)?;
        let out = g.matmul(h, ow)?;
        let out = g.add_row(out, ob)?;
        let out = g.relu(out)?;
        Ok((bound, out))
    }
}

/// Decoder weights frozen at the end of the previous experience.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSnapshot {
    pub dec_hidden: DenseLayer,
    pub dec_out: DenseLayer,
    pub z_dim: usize,
    pub num_classes: usize,
}

impl GeneratorSnapshot {
    pub fn decode(&self, z: &Array, labels: &[usize]) -> Result<Array> {
        decode_with(&self.dec_hidden, &self.dec_out, self.num_classes, z, labels)
    }
}

/// Decoder to sample from: the live model or a previous-experience copy.
#[derive(Debug, Clone, Copy)]
pub enum DecoderSource<'a> {
    Live(&'a GeneratorParams),
    Snapshot(&'a GeneratorSnapshot),
}

impl DecoderSource<'_> {
    pub fn z_dim(&self) -> usize {
        match self {
            DecoderSource::Live(g) => g.z_dim,
            DecoderSource::Snapshot(s) => s.z_dim,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            DecoderSource::Live(g) => g.num_classes,
            DecoderSource::Snapshot(s) => s.num_classes,
        }
    }

    pub fn decode(&self, z: &Array, labels: &[usize]) -> Result<Array> {
        match self {
            DecoderSource::Live(g) => g.decode(z, labels),
            DecoderSource::Snapshot(s) => s.decode(z, labels),
        }
    }
}

fn decode_with(
    dec_hidden: &DenseLayer,
    dec_out: &DenseLayer,
    num_classes: usize,
    z: &Array,
    labels: &[usize],
) -> Result<Array> {
    if z.ndim() != 2 || z.shape()[0] != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "decode",
            detail: format!("z {:?} with {} labels", z.shape(), labels.len()),
        });
    }
    let onehot = one_hot(labels, num_classes)?;
    let mut g = Graph::new();
    let zn = g.constant(z.clone());
    let cn = g.constant(onehot);
    let zin = g.concat_cols(zn, cn)?;
    let hw = g.constant(dec_hidden.w.clone());
    let hb = g.constant(dec_hidden.b.clone());
    let ow = g.constant(dec_out.w.clone());
    let ob = g.constant(dec_out.b.clone());
    let h = g.matmul(zin, hw)?;
    let h = g.add_row(h, hb)?;
    let h = g.relu(h)?;
    let out = g.matmul(h, ow)?;
    let out = g.add_row(out, ob)?;
    let out = g.relu(out)?;
    Ok(g.value(out).clone())
}

fn one_hot(labels: &[usize], num_classes: usize) -> Result<Array> {
    for &l in labels {
        if l >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: l,
                classes: num_classes,
            });
        }
    }
    let mut values = vec![0.0; labels.len() * num_classes];
    for (i, &l) in labels.iter().enumerate() {
        values[i * num_classes + l] = 1.0;
    }
    Array::new(vec![labels.len(), num_classes], values)
}

/// Closed-form KL(N(mu, sigma^2) || N(0, 1)): 0.5 * sum(sigma^2 + mu^2 - 1
/// - log sigma^2) per row, averaged over the batch.
pub fn kl_gaussian(mu: &Array, logvar: &Array) -> Result<f64> {
    if mu.shape() != logvar.shape() {
        return Err(Error::ShapeMismatch {
            op: "kl_gaussian",
            detail: format!("{:?} vs {:?}", mu.shape(), logvar.shape()),
        });
    }
    let n = mu.rows() as f64;
    let total: f64 = mu
        .values()
        .iter()
        .zip(logvar.values())
        .map(|(&m, &lv)| 0.5 * (lv.exp() + m * m - 1.0 - lv))
        .sum();
    Ok(total / n)
}

/// The three loss components and their weighted total.
#[derive(Debug, Clone, Copy, Default)]
pub struct GenLossParts {
    pub recon: f64,
    pub kl: f64,
    pub class: f64,
    pub total: f64,
}

/// Node handles for the generator loss graph: parameter leaves plus the
/// scalar loss nodes.
pub struct GenLossGraph {
    pub params: Vec<(usize, NodeId)>,
    pub total: NodeId,
    pub recon: NodeId,
    pub kl: NodeId,
    pub class: NodeId,
}

/// Build the full generator objective on `g`:
/// recon (mean squared L2 of latent vs reconstruction through a
/// reparameterized sample) + beta * KL + eta * class NLL under the frozen
/// classifier head applied to the reconstruction.
/// `noise` must be `[n, z_dim]`; passing the same noise reproduces the
/// graph bit-for-bit (common random numbers).
pub fn build_generator_loss(
    g: &mut Graph,
    gen: &GeneratorParams,
    classifier: &ClassifierParams,
    latent_batch: &Array,
    labels: &[usize],
    noise: &Array,
) -> Result<GenLossGraph> {
    if gen.beta < 0.0 {
        return Err(Error::BadLossWeight(format!("beta = {}", gen.beta)));
    }
    if gen.eta < 0.0 {
        return Err(Error::BadLossWeight(format!("eta = {}", gen.eta)));
    }
    let n = latent_batch.rows();
    if labels.len() != n || noise.shape() != [n, gen.z_dim] {
        return Err(Error::ShapeMismatch {
            op: "generator_loss",
            detail: format!(
                "latent {:?}, {} labels, noise {:?}",
                latent_batch.shape(),
                labels.len(),
                noise.shape()
            ),
        });
    }
    let x = g.constant(latent_batch.clone());
    let (mut params, mu, logvar) = gen.graph_encode(g, x, true)?;
    let z = g.gaussian_sample(mu, logvar, noise.values())?;
    let (dec_params, recon_x) = gen.graph_decode(g, z, labels, true)?;
    params.extend(dec_params);

    // recon: mean over rows of the squared L2 distance
    let diff = g.sub(recon_x, x)?;
    let sq = g.mul(diff, diff)?;
    let sse = g.sum(sq)?;
    let recon = g.scale(sse, 1.0 / n as f64)?;

    // KL against N(0, 1), composed from primitives so gradients flow
    let mu2 = g.mul(mu, mu)?;
    let var = g.exp(logvar)?;
    let inner = g.add(var, mu2)?;
    let inner = g.add_const(inner, -1.0)?;
    let inner = g.sub(inner, logvar)?;
    let kl_sum = g.sum(inner)?;
    let kl = g.scale(kl_sum, 0.5 / n as f64)?;

    // class NLL: frozen classifier head applied directly to the
    // reconstruction (it lives at the cut)
    let (_, logits) = classifier.graph_head(g, recon_x, false)?;
    let class = g.softmax_cross_entropy(logits, labels, None)?;

    let kl_w = g.scale(kl, gen.beta)?;
    let class_w = g.scale(class, gen.eta)?;
    let total = g.add(recon, kl_w)?;
    let total = g.add(total, class_w)?;
    Ok(GenLossGraph {
        params,
        total,
        recon,
        kl,
        class,
    })
}

/// Evaluate the generator objective (forward only) with seeded noise.
pub fn generator_loss(
    gen: &GeneratorParams,
    classifier: &ClassifierParams,
    latent_batch: &Array,
    labels: &[usize],
    seed: u64,
) -> Result<(f64, GenLossParts)> {
    let noise = standard_normal(latent_batch.rows(), gen.z_dim, seed);
    let mut g = Graph::new();
    let built = build_generator_loss(&mut g, gen, classifier, latent_batch, labels, &noise)?;
    let parts = GenLossParts {
        recon: g.value(built.recon).scalar_value(),
        kl: g.value(built.kl).scalar_value(),
        class: g.value(built.class).scalar_value(),
        total: g.value(built.total).scalar_value(),
    };
    Ok((parts.total, parts))
}

/// `[rows, cols]` of N(0,1) draws from a dedicated seeded stream.
pub fn standard_normal(rows: usize, cols: usize, seed: u64) -> Array {
    let mut rng = seeded_rng(seed);
    let values: Vec<f64> = (0..rows * cols)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Array::new(vec![rows, cols], values).expect("normal draws are finite")
}

/// Sample z ~ N(0,1) per label and decode with the chosen decoder.
/// Deterministic per seed.
pub fn generate_batch(src: DecoderSource, labels: &[usize], seed: u64) -> Result<Array> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument(
            "generate_batch needs at least one label".to_string(),
        ));
    }
    let z = standard_normal(labels.len(), src.z_dim(), seed);
    src.decode(&z, labels)
}
