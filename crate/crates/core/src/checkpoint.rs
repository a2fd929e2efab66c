//! Binary checkpoint blobs: a versioned header followed by named tensors
//! (name, rank, shape dims as u64 LE, values as raw f64 LE bits). Writing
//! and reading round-trip parameters exactly.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::autodiff::Array;
use crate::classifier::{ClassifierParams, DenseLayer};
use crate::error::{Error, Result};
use crate::generator::GeneratorParams;

const MAGIC: &[u8; 8] = b"NEGREPCK";
const VERSION: u32 = 1;

pub struct TensorBlob {
    pub name: String,
    pub data: Array,
}

pub fn write_tensors(path: &Path, tensors: &[TensorBlob]) -> Result<()> {
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for t in tensors {
        let name = t.name.as_bytes();
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(t.data.shape().len() as u64).to_le_bytes());
        for &d in t.data.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data.values() {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

pub fn read_tensors(path: &Path) -> Result<Vec<TensorBlob>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = 0usize;
    let take = |cur: &mut usize, n: usize| -> Result<&[u8]> {
        if *cur + n > bytes.len() {
            return Err(Error::Checkpoint("unexpected end of file".to_string()));
        }
        let s = &bytes[*cur..*cur + n];
        *cur += n;
        Ok(s)
    };
    let read_u64 = |cur: &mut usize| -> Result<u64> {
        let s = take(cur, 8)?;
        Ok(u64::from_le_bytes(s.try_into().unwrap()))
    };
    if take(&mut cur, 8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".to_string()));
    }
    let version = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u64(&mut cur)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u64(&mut cur)? as usize;
        let name = String::from_utf8(take(&mut cur, name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".to_string()))?;
        let rank = read_u64(&mut cur)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut cur)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut values = Vec::with_capacity(numel);
        for _ in 0..numel {
            values.push(f64::from_bits(read_u64(&mut cur)?));
        }
        tensors.push(TensorBlob {
            name,
            data: Array::new(shape, values)?,
        });
    }
    if cur != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".to_string()));
    }
    Ok(tensors)
}

fn layer_blobs(prefix: &str, layer: &DenseLayer) -> [TensorBlob; 2] {
    [
        TensorBlob {
            name: format!("{prefix}.w"),
            data: layer.w.clone(),
        },
        TensorBlob {
            name: format!("{prefix}.b"),
            data: layer.b.clone(),
        },
    ]
}

fn find(tensors: &[TensorBlob], name: &str) -> Result<Array> {
    tensors
        .iter()
        .find(|t| t.name == name)
        .map(|t| t.data.clone())
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor '{name}'")))
}

fn find_layer(tensors: &[TensorBlob], prefix: &str) -> Result<DenseLayer> {
    Ok(DenseLayer {
        w: find(tensors, &format!("{prefix}.w"))?,
        b: find(tensors, &format!("{prefix}.b"))?,
    })
}

pub fn save_classifier(params: &ClassifierParams, path: &Path) -> Result<()> {
    let mut tensors = Vec::new();
    tensors.push(TensorBlob {
        name: "meta.pre_layers".to_string(),
        data: Array::scalar(params.pre.len() as f64)?,
    });
    tensors.push(TensorBlob {
        name: "meta.post_layers".to_string(),
        data: Array::scalar(params.post.len() as f64)?,
    });
    tensors.push(TensorBlob {
        name: "meta.frozen_below_cut".to_string(),
        data: Array::scalar(if params.frozen_below_cut { 1.0 } else { 0.0 })?,
    });
    for (i, layer) in params.pre.iter().enumerate() {
        tensors.extend(layer_blobs(&format!("pre.{i}"), layer));
    }
    for (i, layer) in params.post.iter().enumerate() {
        tensors.extend(layer_blobs(&format!("post.{i}"), layer));
    }
    tensors.extend(layer_blobs("head", &params.head));
    write_tensors(path, &tensors)
}

pub fn load_classifier(path: &Path) -> Result<ClassifierParams> {
    let tensors = read_tensors(path)?;
    let n_pre = find(&tensors, "meta.pre_layers")?.scalar_value() as usize;
    let n_post = find(&tensors, "meta.post_layers")?.scalar_value() as usize;
    let frozen = find(&tensors, "meta.frozen_below_cut")?.scalar_value() != 0.0;
    let mut pre = Vec::with_capacity(n_pre);
    for i in 0..n_pre {
        pre.push(find_layer(&tensors, &format!("pre.{i}"))?);
    }
    let mut post = Vec::with_capacity(n_post);
    for i in 0..n_post {
        post.push(find_layer(&tensors, &format!("post.{i}"))?);
    }
    Ok(ClassifierParams {
        pre,
        post,
        head: find_layer(&tensors, "head")?,
        frozen_below_cut: frozen,
    })
}

pub fn save_generator(params: &GeneratorParams, path: &Path) -> Result<()> {
    let mut tensors = vec![
        TensorBlob {
            name: "meta.z_dim".to_string(),
            data: Array::scalar(params.z_dim as f64)?,
        },
        TensorBlob {
            name: "meta.num_classes".to_string(),
            data: Array::scalar(params.num_classes as f64)?,
        },
        TensorBlob {
            name: "meta.beta".to_string(),
            data: Array::scalar(params.beta)?,
        },
        TensorBlob {
            name: "meta.eta".to_string(),
            data: Array::scalar(params.eta)?,
        },
    ];
    tensors.extend(layer_blobs("enc_hidden", &params.enc_hidden));
    tensors.extend(layer_blobs("enc_mu", &params.enc_mu));
    tensors.extend(layer_blobs("enc_logvar", &params.enc_logvar));
    tensors.extend(layer_blobs("dec_hidden", &params.dec_hidden));
    tensors.extend(layer_blobs("dec_out", &params.dec_out));
    write_tensors(path, &tensors)
}

pub fn load_generator(path: &Path) -> Result<GeneratorParams> {
    let tensors = read_tensors(path)?;
    Ok(GeneratorParams {
        enc_hidden: find_layer(&tensors, "enc_hidden")?,
        enc_mu: find_layer(&tensors, "enc_mu")?,
        enc_logvar: find_layer(&tensors, "enc_logvar")?,
        dec_hidden: find_layer(&tensors, "dec_hidden")?,
        dec_out: find_layer(&tensors, "dec_out")?,
        z_dim: find(&tensors, "meta.z_dim")?.scalar_value() as usize,
        num_classes: find(&tensors, "meta.num_classes")?.scalar_value() as usize,
        beta: find(&tensors, "meta.beta")?.scalar_value(),
        eta: find(&tensors, "meta.eta")?.scalar_value(),
    })
}
