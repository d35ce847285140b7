//! Persisted models.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic    8 bytes  "BCASTMDL"
//! version  u32
//! count    u32      number of sections
//! section  tag [u8; 4], length u64, payload
//! ```
//!
//! Sections appear in the order `CONF`, `META`, `S2SQ`, then optionally
//! `PRED` and `NOIS`:
//!
//! - `CONF`: the run configuration in its canonical UTF-8 text form.
//! - `META`: pre-training epoch losses then prediction-network epoch losses,
//!   each as `u32` count + `f64` values.
//! - `S2SQ`: `u32` window, `u32` horizon, `u32` layer count, the encoder
//!   layers, the decoder layers, then the projection dense layer.
//! - `PRED`: `u8` feature set, `u8` embedding source, `u32` layer count,
//!   dense layers.
//! - `NOIS`: `f64` eta2, `u64` validation size.
//!
//! An LSTM layer is `u32` input size, `u32` hidden size, then input
//! weights (`4H x I`), recurrent weights (`4H x H`) and bias (`4H`), row
//! major, gates ordered input, forget, candidate, output. A dense layer is
//! `u32` in, `u32` out, `u8` activation (0 tanh, 1 identity), weights
//! (`out x in`) and bias.

use std::path::Path;

use ndarray::{Array1, Array2};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::forecast::{FeatureSet, PredictionNetwork};
use crate::io::write_atomic;
use crate::nn::dense::{Activation, DenseLayer};
use crate::nn::lstm::LstmLayer;
use crate::nn::mlp::DenseStack;
use crate::seq2seq::{EmbeddingSource, Seq2SeqModel};
use crate::uncertainty::NoiseEstimate;

pub const MAGIC: &[u8; 8] = b"BCASTMDL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingMeta {
    pub pretrain_losses: Vec<f64>,
    pub train_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub config: RunConfig,
    pub meta: TrainingMeta,
    pub seq2seq: Seq2SeqModel,
    pub prediction: Option<PredictionNetwork>,
    pub noise: Option<NoiseEstimate>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0
            .extend_from_slice(&u32::try_from(v).expect("size fits u32").to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s<'a>(&mut self, vs: impl IntoIterator<Item = &'a f64>) {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
    fn losses(&mut self, vs: &[f64]) {
        self.u32(vs.len());
        self.f64s(vs);
    }
    fn lstm(&mut self, l: &LstmLayer) {
        self.u32(l.input_size());
        self.u32(l.hidden_size());
        self.f64s(l.input_weights().iter());
        self.f64s(l.recurrent_weights().iter());
        self.f64s(l.bias().iter());
    }
    fn dense(&mut self, l: &DenseLayer) {
        self.u32(l.in_size());
        self.u32(l.out_size());
        self.u8(match l.activation() {
            Activation::Tanh => 0,
            Activation::Identity => 1,
        });
        self.f64s(l.weights().iter());
        self.f64s(l.bias().iter());
    }
    fn section(&mut self, tag: &[u8; 4], payload: Writer) {
        self.0.extend_from_slice(tag);
        self.u64(payload.0.len() as u64);
        self.0.extend_from_slice(&payload.0);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::Format(format!("truncated {} section", self.what)));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| Error::Format(format!("oversized array in {} section", self.what)))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format(format!("oversized matrix in {} section", self.what)))?;
        Ok(Array2::from_shape_vec((rows, cols), self.f64s(n)?).expect("sized"))
    }
    fn losses(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()?;
        self.f64s(n)
    }
    fn lstm(&mut self) -> Result<LstmLayer> {
        let (i, h) = (self.u32()?, self.u32()?);
        let wx = self.matrix(4 * h, i)?;
        let wh = self.matrix(4 * h, h)?;
        let b = Array1::from(self.f64s(4 * h)?);
        LstmLayer::new(wx, wh, b).map_err(|e| Error::Format(format!("bad LSTM layer: {e}")))
    }
    fn dense(&mut self) -> Result<DenseLayer> {
        let (i, o) = (self.u32()?, self.u32()?);
        let act = match self.u8()? {
            0 => Activation::Tanh,
            1 => Activation::Identity,
            t => return Err(Error::Format(format!("unknown activation tag {t}"))),
        };
        let w = self.matrix(o, i)?;
        let b = Array1::from(self.f64s(o)?);
        DenseLayer::new(w, b, act).map_err(|e| Error::Format(format!("bad dense layer: {e}")))
    }
    fn finish(self) -> Result<()> {
        if !self.bytes.is_empty() {
            return Err(Error::Format(format!(
                "{} trailing bytes in {} section",
                self.bytes.len(),
                self.what
            )));
        }
        Ok(())
    }
}

fn feature_tag(f: FeatureSet) -> u8 {
    match f {
        FeatureSet::Calendar => 0,
        FeatureSet::NoHoliday => 1,
        FeatureSet::None => 2,
    }
}

impl ModelBundle {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Writer(MAGIC.to_vec());
        out.0.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let count = 3 + usize::from(self.prediction.is_some()) + usize::from(self.noise.is_some());
        out.u32(count);

        out.section(b"CONF", Writer(self.config.to_text().into_bytes()));

        let mut meta = Writer(Vec::new());
        meta.losses(&self.meta.pretrain_losses);
        meta.losses(&self.meta.train_losses);
        out.section(b"META", meta);

        let m = &self.seq2seq;
        let mut s = Writer(Vec::new());
        s.u32(m.window());
        s.u32(m.horizon());
        s.u32(m.encoder().len());
        for l in m.encoder().iter().chain(m.decoder()) {
            s.lstm(l);
        }
        s.dense(m.projection());
        out.section(b"S2SQ", s);

        if let Some(net) = &self.prediction {
            let mut p = Writer(Vec::new());
            p.u8(feature_tag(net.features()));
            p.u8(match net.embedding_source() {
                EmbeddingSource::Last => 0,
                EmbeddingSource::Both => 1,
            });
            p.u32(net.mlp().layers().len());
            for l in net.mlp().layers() {
                p.dense(l);
            }
            out.section(b"PRED", p);
        }
        if let Some(noise) = &self.noise {
            let mut n = Writer(Vec::new());
            n.f64s([&noise.eta2]);
            n.u64(noise.validation_size as u64);
            out.section(b"NOIS", n);
        }
        out.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader {
            bytes,
            what: "header",
        };
        if r.take(8)
            .map_err(|_| Error::Format("file too short for a bundle".into()))?
            != MAGIC
        {
            return Err(Error::Format("bad magic bytes; not a model bundle".into()));
        }
        let version = r.u32()? as u32;
        if version > FORMAT_VERSION || version == 0 {
            return Err(Error::Version {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let count = r.u32()?;
        let mut sections = Vec::new();
        for _ in 0..count {
            let tag: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
            let len =
                usize::try_from(r.u64()?).map_err(|_| Error::Format("section too large".into()))?;
            sections.push((tag, r.take(len)?));
        }
        r.finish()?;

        let mut it = sections.into_iter().peekable();
        let mut expect = |tag: &[u8; 4], what: &'static str| -> Result<Reader<'_>> {
            match it.next() {
                Some((t, bytes)) if &t == tag => Ok(Reader { bytes, what }),
                Some((t, _)) => Err(Error::Format(format!(
                    "expected section {} but found {}",
                    String::from_utf8_lossy(tag),
                    String::from_utf8_lossy(&t)
                ))),
                None if tag == b"S2SQ" => Err(Error::Format(
                    "bundle has no encoder; run `pretrain` first".into(),
                )),
                None => Err(Error::Format(format!(
                    "missing section {}",
                    String::from_utf8_lossy(tag)
                ))),
            }
        };

        let conf = expect(b"CONF", "CONF")?;
        let text = std::str::from_utf8(conf.bytes)
            .map_err(|_| Error::Format("configuration is not UTF-8".into()))?;
        let config = RunConfig::parse(text, Path::new("<bundle>"))
            .map_err(|e| Error::Format(format!("embedded configuration: {e}")))?;

        let mut m = expect(b"META", "META")?;
        let meta = TrainingMeta {
            pretrain_losses: m.losses()?,
            train_losses: m.losses()?,
        };
        m.finish()?;

        let mut s = expect(b"S2SQ", "S2SQ")?;
        let (window, horizon, layers) = (s.u32()?, s.u32()?, s.u32()?);
        let encoder = (0..layers).map(|_| s.lstm()).collect::<Result<Vec<_>>>()?;
        let decoder = (0..layers).map(|_| s.lstm()).collect::<Result<Vec<_>>>()?;
        let projection = s.dense()?;
        s.finish()?;
        let seq2seq = Seq2SeqModel::from_parts(encoder, decoder, projection, window, horizon)
            .map_err(|e| Error::Format(format!("inconsistent encoder-decoder: {e}")))?;

        let mut prediction = None;
        let mut noise = None;
        for (tag, bytes) in it {
            match &tag {
                b"PRED" if prediction.is_none() && noise.is_none() => {
                    let mut p = Reader {
                        bytes,
                        what: "PRED",
                    };
                    let features = match p.u8()? {
                        0 => FeatureSet::Calendar,
                        1 => FeatureSet::NoHoliday,
                        2 => FeatureSet::None,
                        t => return Err(Error::Format(format!("unknown feature-set tag {t}"))),
                    };
                    let source = match p.u8()? {
                        0 => EmbeddingSource::Last,
                        1 => EmbeddingSource::Both,
                        t => return Err(Error::Format(format!("unknown embedding tag {t}"))),
                    };
                    let n = p.u32()?;
                    let layers = (0..n).map(|_| p.dense()).collect::<Result<Vec<_>>>()?;
                    p.finish()?;
                    let stack =
                        DenseStack::new(layers).map_err(|e| Error::Format(e.to_string()))?;
                    let net = PredictionNetwork::new(stack, features, source)
                        .map_err(|e| Error::Format(e.to_string()))?;
                    net.check_encoder(&seq2seq).map_err(|e| {
                        Error::Format(format!("prediction network does not fit encoder: {e}"))
                    })?;
                    prediction = Some(net);
                }
                b"NOIS" if noise.is_none() => {
                    let mut n = Reader {
                        bytes,
                        what: "NOIS",
                    };
                    let eta2 = n.f64s(1)?[0];
                    let validation_size = n.u64()? as usize;
                    n.finish()?;
                    if !(eta2.is_finite() && eta2 >= 0.0) || validation_size == 0 {
                        return Err(Error::Format("invalid noise estimate".into()));
                    }
                    noise = Some(NoiseEstimate {
                        eta2,
                        validation_size,
                    });
                }
                _ => {
                    return Err(Error::Format(format!(
                        "unexpected section {}",
                        String::from_utf8_lossy(&tag)
                    )))
                }
            }
        }
        Ok(Self {
            config,
            meta,
            seq2seq,
            prediction,
            noise,
        })
    }
}

pub fn save_bundle(path: impl AsRef<Path>, bundle: &ModelBundle) -> Result<()> {
    write_atomic(path, &bundle.to_bytes())
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<ModelBundle> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelBundle::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::PredictionNetworkConfig;
    use crate::nn::rng::SeededRng;
    use crate::seq2seq::Seq2SeqConfig;

    fn sample_bundle() -> ModelBundle {
        let cfg = Seq2SeqConfig {
            hidden_sizes: vec![5, 3],
            window: 10,
            horizon: 4,
        };
        let mut rng = SeededRng::new(9, 1);
        let seq2seq = Seq2SeqModel::new(&cfg, &mut rng).unwrap();
        let pcfg = PredictionNetworkConfig {
            hidden_sizes: vec![6, 4],
            ..Default::default()
        };
        let net = PredictionNetwork::init(3, &pcfg, &mut rng).unwrap();
        ModelBundle {
            config: RunConfig::default(),
            meta: TrainingMeta {
                pretrain_losses: vec![0.5, 0.25],
                train_losses: vec![0.1],
            },
            seq2seq,
            prediction: Some(net),
            noise: Some(NoiseEstimate {
                eta2: 0.1 + 0.2,
                validation_size: 17,
            }),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let b = sample_bundle();
        let bytes = b.to_bytes();
        let back = ModelBundle::from_bytes(&bytes).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.to_bytes(), bytes);
        let partial = ModelBundle {
            prediction: None,
            noise: None,
            ..b
        };
        assert_eq!(
            ModelBundle::from_bytes(&partial.to_bytes()).unwrap(),
            partial
        );
    }

    #[test]
    fn corrupted_magic_rejected() {
        let mut bytes = sample_bundle().to_bytes();
        bytes[0] ^= 0xff;
        assert!(matches!(
            ModelBundle::from_bytes(&bytes),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn newer_version_rejected() {
        let mut bytes = sample_bundle().to_bytes();
        bytes[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
        match ModelBundle::from_bytes(&bytes) {
            Err(Error::Version { found, supported }) => {
                assert_eq!((found, supported), (FORMAT_VERSION + 1, FORMAT_VERSION));
            }
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_detected() {
        let bytes = sample_bundle().to_bytes();
        for cut in [4, 12, 40, bytes.len() - 1] {
            assert!(ModelBundle::from_bytes(&bytes[..cut]).is_err(), "cut {cut}");
        }
    }
}
