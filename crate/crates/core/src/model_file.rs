//! Model persistence.
//!
//! A model file is a text header of `key=value` lines terminated by `end`,
//! followed by little-endian binary blocks in the order the `blocks` key
//! lists them. Floats in the header use Rust's shortest round-trip
//! formatting, so every stored number reloads bit-for-bit. The `checksum`
//! line holds the SHA-256 of every other header line plus the payload.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::active_set::{ActiveSetModel, PassConfig, SelectionMode};
use crate::data::Scaling;
use crate::ep::{EpConfig, EpState};
use crate::error::{Error, Result};
use crate::hyperopt::OptimizerConfig;
use crate::kernels::{gram, KernelFamily, KernelSpec};

const MAGIC: &str = "passgp-model";
const VERSION: u32 = 1;

/// A trained binary classifier plus what is needed to apply it to raw data.
#[derive(Debug, Clone)]
pub struct SavedModel {
    pub model: ActiveSetModel,
    /// Feature scaling fitted on the training data, applied to queries.
    pub scaling: Option<Scaling>,
    /// Class treated as positive when trained one-vs-rest.
    pub target_class: Option<i64>,
    pub n_train: usize,
}

fn join(v: &[f64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn header_lines(m: &SavedModel, blocks: &str) -> Vec<String> {
    let model = &m.model;
    let k = model.kernel();
    let c = model.config();
    let st = model.ep_state();
    let mut h = vec![
        format!("{MAGIC} {VERSION}"),
        format!("kernel={}", k.family()),
        format!("log_theta={}", join(k.log_theta())),
        format!("jitter_disabled={}", k.jitter_disabled()),
        format!("n_active={}", model.active_idx().len()),
        format!("dim={}", model.x_active().ncols()),
        format!("n_train={}", m.n_train),
        format!("jitter_added={}", st.jitter_added()),
        format!("n_sweeps={}", st.n_sweeps()),
        format!("converged={}", st.converged()),
        format!("log_z_ep={}", st.log_z_ep()),
        format!("mode={}", c.mode),
        format!("n_init={}", c.n_init),
        format!("n_sub={}", c.n_sub),
        format!("n_pass={}", c.n_pass),
        format!("p_inc={}", c.p_inc),
        format!("p_del={}", c.p_del),
        format!("m_budget={}", c.m_budget),
        format!("p_exc={}", c.p_exc),
        format!("hyperopt_every={}", c.hyperopt_every),
        format!("fixed_theta={}", c.fixed_theta),
        format!("seed={}", c.seed),
        format!("ep_tol={}", c.ep.tol),
        format!("ep_max_sweeps={}", c.ep.max_sweeps),
        format!("ep_damping={}", c.ep.damping),
        format!("ep_seed={}", c.ep.seed),
        format!("opt_max_evals={}", c.optimizer.max_evals),
        format!("opt_grad_tol={}", c.optimizer.grad_tol),
        format!("opt_warm_start={}", c.optimizer.warm_start),
    ];
    if let Some(s) = m.scaling {
        h.push(format!(
            "scaling={}",
            join(&[s.src_min, s.src_max, s.lo, s.hi])
        ));
    }
    if let Some(t) = m.target_class {
        h.push(format!("target_class={t}"));
    }
    h.push(format!("blocks={blocks}"));
    h
}

fn digest(lines: &[String], payload: &[u8]) -> String {
    let mut hasher = Sha256::new();
    for l in lines {
        hasher.update(l.as_bytes());
        hasher.update(b"\n");
    }
    hasher.update(payload);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn push_f64(out: &mut Vec<u8>, v: impl IntoIterator<Item = f64>) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

/// Serializes a model to bytes.
pub fn to_bytes(m: &SavedModel) -> Vec<u8> {
    let model = &m.model;
    let st = model.ep_state();
    let x = model.x_active();
    let mut payload = Vec::new();
    for &i in model.active_idx() {
        payload.extend_from_slice(&(i as u64).to_le_bytes());
    }
    // row-major so a block reads like the data file it came from
    push_f64(
        &mut payload,
        x.row_iter()
            .flat_map(|r| r.iter().copied().collect::<Vec<_>>()),
    );
    push_f64(&mut payload, model.y_active().iter().copied());
    push_f64(&mut payload, st.site_precision().iter().copied());
    push_f64(&mut payload, st.site_shift().iter().copied());
    let blocks = "active_idx:u64,x_active:f64,y_active:f64,site_precision:f64,site_shift:f64";
    let lines = header_lines(m, blocks);
    let sum = digest(&lines, &payload);
    let mut out = Vec::new();
    for l in &lines {
        out.extend_from_slice(l.as_bytes());
        out.push(b'\n');
    }
    out.extend_from_slice(format!("checksum=sha256:{sum}\nend\n").as_bytes());
    out.extend_from_slice(&payload);
    out
}

pub fn save(path: &Path, m: &SavedModel) -> Result<()> {
    fs::write(path, to_bytes(m)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<SavedModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

fn bad(msg: impl Into<String>) -> Error {
    Error::ModelFormat(msg.into())
}

struct Header {
    lines: Vec<String>,
    kv: BTreeMap<String, String>,
    checksum: String,
}

impl Header {
    fn get(&self, key: &str) -> Result<&str> {
        self.kv
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| bad(format!("missing key `{key}`")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| bad(format!("bad value `{v}` for `{key}`")))
    }

    fn floats(&self, key: &str) -> Result<Vec<f64>> {
        let v = self.get(key)?;
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|t| {
                t.parse()
                    .map_err(|_| bad(format!("bad number `{t}` in `{key}`")))
            })
            .collect()
    }
}

fn split_header(bytes: &[u8]) -> Result<(Header, &[u8])> {
    let mut lines = Vec::new();
    let mut kv = BTreeMap::new();
    let mut checksum = None;
    let mut pos = 0;
    loop {
        let nl = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("header is not terminated by `end`"))?;
        let line =
            std::str::from_utf8(&bytes[pos..pos + nl]).map_err(|_| bad("header is not UTF-8"))?;
        pos += nl + 1;
        if line == "end" {
            break;
        }
        if lines.is_empty() && kv.is_empty() {
            let expected = format!("{MAGIC} {VERSION}");
            if line != expected {
                if line.starts_with(MAGIC) {
                    return Err(bad(format!("unsupported version line `{line}`")));
                }
                return Err(bad("not a model file"));
            }
            lines.push(line.to_string());
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("malformed header line `{line}`")))?;
        if k == "checksum" {
            checksum = Some(
                v.strip_prefix("sha256:")
                    .ok_or_else(|| bad("unknown checksum kind"))?
                    .to_string(),
            );
            continue;
        }
        kv.insert(k.to_string(), v.to_string());
        lines.push(line.to_string());
    }
    let checksum = checksum.ok_or_else(|| bad("missing checksum"))?;
    Ok((
        Header {
            lines,
            kv,
            checksum,
        },
        &bytes[pos..],
    ))
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.buf.len() < n * 8 {
            return Err(bad(format!("payload too short for `{what}`")));
        }
        let (head, rest) = self.buf.split_at(n * 8);
        self.buf = rest;
        Ok(head)
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        Ok(self
            .take(n, what)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }

    fn u64s(&mut self, n: usize, what: &str) -> Result<Vec<u64>> {
        Ok(self
            .take(n, what)?
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<SavedModel> {
    let (h, payload) = split_header(bytes)?;
    if digest(&h.lines, payload) != h.checksum {
        return Err(bad("checksum mismatch"));
    }
    let family: KernelFamily = h.parse("kernel")?;
    let kernel = KernelSpec::new(family, h.floats("log_theta")?)?
        .with_jitter_disabled(h.parse("jitter_disabled")?)?;
    let n: usize = h.parse("n_active")?;
    let d: usize = h.parse("dim")?;

    let mut r = Reader { buf: payload };
    let active: Vec<usize> = r
        .u64s(n, "active_idx")?
        .into_iter()
        .map(|v| v as usize)
        .collect();
    let x = DMatrix::from_row_slice(n, d, &r.f64s(n * d, "x_active")?);
    let y = r.f64s(n, "y_active")?;
    let tau = DVector::from_vec(r.f64s(n, "site_precision")?);
    let nu = DVector::from_vec(r.f64s(n, "site_shift")?);
    if !r.buf.is_empty() {
        return Err(bad("trailing bytes after the last block"));
    }

    let config = PassConfig {
        mode: h.parse::<SelectionMode>("mode")?,
        n_init: h.parse("n_init")?,
        n_sub: h.parse("n_sub")?,
        n_pass: h.parse("n_pass")?,
        p_inc: h.parse("p_inc")?,
        p_del: h.parse("p_del")?,
        m_budget: h.parse("m_budget")?,
        p_exc: h.parse("p_exc")?,
        hyperopt_every: h.parse("hyperopt_every")?,
        fixed_theta: h.parse("fixed_theta")?,
        seed: h.parse("seed")?,
        ep: EpConfig {
            tol: h.parse("ep_tol")?,
            max_sweeps: h.parse("ep_max_sweeps")?,
            damping: h.parse("ep_damping")?,
            seed: h.parse("ep_seed")?,
        },
        optimizer: OptimizerConfig {
            max_evals: h.parse("opt_max_evals")?,
            grad_tol: h.parse("opt_grad_tol")?,
            warm_start: h.parse("opt_warm_start")?,
        },
    };
    let k = gram(&kernel, &x)?;
    let state = EpState::from_sites(
        &k,
        &y,
        tau,
        nu,
        h.parse("jitter_added")?,
        h.parse("n_sweeps")?,
        h.parse("converged")?,
    )?;
    let scaling = match h.kv.get("scaling") {
        None => None,
        Some(_) => {
            let s = h.floats("scaling")?;
            if s.len() != 4 {
                return Err(bad("scaling needs four numbers"));
            }
            Some(Scaling {
                src_min: s[0],
                src_max: s[1],
                lo: s[2],
                hi: s[3],
            })
        }
    };
    let target_class = match h.kv.get("target_class") {
        None => None,
        Some(_) => Some(h.parse("target_class")?),
    };
    Ok(SavedModel {
        model: ActiveSetModel::from_parts(active, x, y, state, kernel, config)?,
        scaling,
        target_class,
        n_train: h.parse("n_train")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::active_set::fit_on_indices;

    fn sample() -> SavedModel {
        let x = DMatrix::from_fn(9, 2, |i, j| ((i * 3 + j) as f64 * 0.37).sin());
        let y: Vec<f64> = (0..9)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let k = KernelSpec::se_jitter(1.3, 0.7, 0.02).unwrap();
        let model =
            fit_on_indices(&x, &y, vec![0, 1, 3, 4, 8], &k, &PassConfig::default()).unwrap();
        SavedModel {
            model,
            scaling: Some(Scaling {
                src_min: 0.0,
                src_max: 255.0,
                lo: -1.0,
                hi: 1.0,
            }),
            target_class: Some(3),
            n_train: 9,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = sample();
        let bytes = to_bytes(&m);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back.model.active_idx(), m.model.active_idx());
        assert_eq!(back.model.kernel(), m.model.kernel());
        assert_eq!(back.model.config(), m.model.config());
        assert_eq!(back.scaling, m.scaling);
        assert_eq!(back.target_class, Some(3));
        let q = DMatrix::from_fn(6, 2, |i, j| (i as f64 - 2.0) * 0.3 + j as f64 * 0.1);
        let a = m.model.predict_moments(&q).unwrap();
        let b = back.model.predict_moments(&q).unwrap();
        for ((m1, v1), (m2, v2)) in a.iter().zip(&b) {
            assert_eq!(m1.to_bits(), m2.to_bits());
            assert_eq!(v1.to_bits(), v2.to_bits());
        }
        assert_eq!(
            back.model.log_z_ep_a().to_bits(),
            m.model.log_z_ep_a().to_bits()
        );
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = to_bytes(&sample());
        let last = bytes.len() - 3;
        bytes[last] ^= 1;
        assert!(matches!(from_bytes(&bytes), Err(Error::ModelFormat(_))));
        assert!(from_bytes(b"hello\nend\n").is_err());
        assert!(from_bytes(b"passgp-model 9\nend\n").is_err());
    }
}
