//! On-disk formats: EMB1 matrices, label CSVs, `DIRT` teacher checkpoints,
//! JSON configs and run manifests with FNV-1a file digests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, Split};
use crate::error::{DireError, Result};
use crate::matrix::Matrix;
use crate::synthesis::RunConfig;
use crate::teacher::{Dense, Mlp, TeacherModel, TrainMeta};

pub const EMB_MAGIC: &[u8; 4] = b"EMB1";
pub const EMB_VERSION: u16 = 1;
/// magic + version + rows + cols
pub const EMB_HEADER_LEN: usize = 4 + 2 + 4 + 4;

pub const TEACHER_MAGIC: &[u8; 4] = b"DIRT";
pub const TEACHER_VERSION: u16 = 1;

pub fn encode_emb(m: &Matrix) -> Result<Vec<u8>> {
    if let Some(i) = m.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(DireError::param(format!(
            "refusing to write non-finite value at row {}, column {}",
            i / m.cols().max(1),
            i % m.cols().max(1)
        )));
    }
    let rows = u32::try_from(m.rows()).map_err(|_| DireError::param("too many rows for EMB1"))?;
    let cols = u32::try_from(m.cols()).map_err(|_| DireError::param("too many columns for EMB1"))?;
    let mut out = Vec::with_capacity(EMB_HEADER_LEN + 8 * m.as_slice().len());
    out.extend_from_slice(EMB_MAGIC);
    out.extend_from_slice(&EMB_VERSION.to_le_bytes());
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Little-endian reader that reports the byte offset of every failure.
struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(DireError::format(
                self.buf.len() as u64,
                format!("truncated while reading {what}: need {n} bytes at offset {}", self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(DireError::format(
                0,
                format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(got), String::from_utf8_lossy(expected)),
            ));
        }
        Ok(())
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let at = self.pos;
        let v = f64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        if !v.is_finite() {
            return Err(DireError::format(at as u64, format!("non-finite {what}")));
        }
        Ok(v)
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| DireError::format(self.pos as u64, format!("{what} length overflows")))?;
        let start = self.pos;
        let raw = self.take(bytes, what)?;
        let out: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(DireError::format((start + 8 * i) as u64, format!("non-finite value in {what}")));
        }
        Ok(out)
    }

    fn version(&mut self, expected: u16) -> Result<()> {
        let at = self.pos;
        let v = self.u16("version")?;
        if v != expected {
            return Err(DireError::format(at as u64, format!("unsupported format version {v}, expected {expected}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(DireError::format(
                self.pos as u64,
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

pub fn decode_emb(bytes: &[u8]) -> Result<Matrix> {
    let mut c = Cursor::new(bytes);
    c.magic(EMB_MAGIC)?;
    c.version(EMB_VERSION)?;
    let rows = c.u32("row count")? as usize;
    let cols = c.u32("column count")? as usize;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| DireError::format(6, "row × column count overflows"))?;
    let data = c.f64s(n, "payload")?;
    c.finish()?;
    Matrix::from_vec(rows, cols, data)
}

pub fn write_emb(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    fs::write(path, encode_emb(m)?)?;
    Ok(())
}

pub fn read_emb(path: impl AsRef<Path>) -> Result<Matrix> {
    decode_emb(&fs::read(path)?)
}

pub fn encode_labels(labels: &[usize]) -> String {
    let mut s = String::from("label\n");
    for l in labels {
        s.push_str(&l.to_string());
        s.push('\n');
    }
    s
}

pub fn decode_labels(text: &str) -> Result<Vec<usize>> {
    let mut offset = 0u64;
    let mut out = Vec::new();
    for (i, line) in text.split_inclusive('\n').enumerate() {
        let field = line.trim();
        if i == 0 {
            if field != "label" {
                return Err(DireError::format(0, format!("expected header `label`, got {field:?}")));
            }
        } else if !field.is_empty() {
            let v = field
                .parse()
                .map_err(|_| DireError::format(offset, format!("line {}: {field:?} is not a class label", i + 1)))?;
            out.push(v);
        }
        offset += line.len() as u64;
    }
    if offset == 0 {
        return Err(DireError::format(0, "empty label file"));
    }
    Ok(out)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    fs::write(path, encode_labels(labels))?;
    Ok(())
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let bytes = fs::read(path)?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| DireError::format(e.valid_up_to() as u64, "label file is not UTF-8"))?;
    decode_labels(text)
}

/// File names of a dataset written under `prefix`.
pub fn dataset_paths(prefix: &Path, split: Split) -> (PathBuf, PathBuf) {
    let tag = match split {
        Split::Train => "train",
        Split::Test => "test",
    };
    let base = prefix.as_os_str().to_string_lossy();
    (
        PathBuf::from(format!("{base}.{tag}.emb")),
        PathBuf::from(format!("{base}.{tag}.labels.csv")),
    )
}

pub fn write_dataset(prefix: &Path, ds: &LabeledDataset) -> Result<Vec<PathBuf>> {
    let (emb, labels) = dataset_paths(prefix, ds.split);
    write_emb(&emb, &ds.points)?;
    write_labels(&labels, &ds.labels)?;
    Ok(vec![emb, labels])
}

/// Reads the train and test splits written by [`write_dataset`]. The class
/// count is one more than the largest label seen in either split.
pub fn read_dataset(prefix: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
    let load = |split| -> Result<(Matrix, Vec<usize>)> {
        let (e, l) = dataset_paths(prefix, split);
        Ok((read_emb(e)?, read_labels(l)?))
    };
    let (tp, tl) = load(Split::Train)?;
    let (sp, sl) = load(Split::Test)?;
    let classes = tl.iter().chain(&sl).max().map_or(0, |m| m + 1);
    Ok((
        LabeledDataset::new(tp, tl, classes, Split::Train)?,
        LabeledDataset::new(sp, sl, classes, Split::Test)?,
    ))
}

pub fn encode_teacher(t: &TeacherModel) -> Vec<u8> {
    let mut out = Vec::new();
    let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    out.extend_from_slice(TEACHER_MAGIC);
    out.extend_from_slice(&TEACHER_VERSION.to_le_bytes());
    u32le(&mut out, t.net.layers.len());
    for layer in &t.net.layers {
        u32le(&mut out, layer.weights.rows());
        u32le(&mut out, layer.weights.cols());
        for v in layer.weights.as_slice().iter().chain(&layer.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    u32le(&mut out, t.feature_level);
    u32le(&mut out, t.feature_mean.len());
    for v in t.feature_mean.iter().chain(&t.feature_var) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(t.meta.epochs as u64).to_le_bytes());
    out.extend_from_slice(&t.meta.lr.to_le_bytes());
    out.extend_from_slice(&t.meta.seed.to_le_bytes());
    out.extend_from_slice(&t.meta.train_accuracy.to_le_bytes());
    out
}

pub fn decode_teacher(bytes: &[u8]) -> Result<TeacherModel> {
    let mut c = Cursor::new(bytes);
    c.magic(TEACHER_MAGIC)?;
    c.version(TEACHER_VERSION)?;
    let at = c.pos as u64;
    let n_layers = c.u32("layer count")? as usize;
    if n_layers < 2 {
        return Err(DireError::format(at, format!("teacher needs at least 2 layers, file has {n_layers}")));
    }
    let mut layers = Vec::with_capacity(n_layers);
    let mut prev_out: Option<usize> = None;
    for i in 0..n_layers {
        let at = c.pos as u64;
        let fan_in = c.u32("layer input size")? as usize;
        let fan_out = c.u32("layer output size")? as usize;
        if fan_in == 0 || fan_out == 0 || prev_out.is_some_and(|p| p != fan_in) {
            return Err(DireError::format(at, format!("layer {i} has inconsistent shape {fan_in}×{fan_out}")));
        }
        let n = fan_in
            .checked_mul(fan_out)
            .ok_or_else(|| DireError::format(at, "layer size overflows"))?;
        let weights = Matrix::from_vec(fan_in, fan_out, c.f64s(n, "layer weights")?)?;
        let bias = c.f64s(fan_out, "layer bias")?;
        layers.push(Dense { weights, bias });
        prev_out = Some(fan_out);
    }
    let at = c.pos as u64;
    let feature_level = c.u32("feature level")? as usize;
    if feature_level == 0 || feature_level >= n_layers {
        return Err(DireError::format(at, format!("feature level {feature_level} out of range")));
    }
    let at = c.pos as u64;
    let f = c.u32("feature dimension")? as usize;
    if f != layers[feature_level - 1].weights.cols() {
        return Err(DireError::format(at, format!("feature statistics have dimension {f}, layer has {}", layers[feature_level - 1].weights.cols())));
    }
    let feature_mean = c.f64s(f, "feature mean")?;
    let feature_var = c.f64s(f, "feature variance")?;
    let meta = TrainMeta {
        epochs: c.u64("epoch count")? as usize,
        lr: c.f64("learning rate")?,
        seed: c.u64("seed")?,
        train_accuracy: c.f64("train accuracy")?,
    };
    c.finish()?;
    Ok(TeacherModel {
        net: Mlp { layers },
        feature_level,
        feature_mean,
        feature_var,
        meta,
    })
}

pub fn write_teacher(path: impl AsRef<Path>, t: &TeacherModel) -> Result<()> {
    fs::write(path, encode_teacher(t))?;
    Ok(())
}

pub fn read_teacher(path: impl AsRef<Path>) -> Result<TeacherModel> {
    decode_teacher(&fs::read(path)?)
}

/// 64-bit FNV-1a. An integrity check, not a cryptographic hash.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes.iter().fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    Ok(format!("{:016x}", fnv1a64(&fs::read(path)?)))
}

/// Parses a JSON object into `T`, rejecting unknown keys and naming the
/// offending key on any failure.
pub fn parse_json_config<T>(text: &str) -> Result<T>
where
    T: DeserializeOwned + Serialize + Default,
{
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| DireError::config("<document>", format!("malformed JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| DireError::config("<document>", "expected a JSON object"))?;
    let known = serde_json::to_value(T::default()).map_err(|e| DireError::config("<document>", e.to_string()))?;
    for (key, v) in obj {
        if known.get(key).is_none() {
            return Err(DireError::config(key.clone(), "unknown key"));
        }
        let single = serde_json::Value::Object([(key.clone(), v.clone())].into_iter().collect());
        serde_json::from_value::<T>(single).map_err(|e| DireError::config(key.clone(), e.to_string()))?;
    }
    serde_json::from_value(value).map_err(|e| DireError::config("<document>", e.to_string()))
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = parse_json_config(text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DireError::config("<file>", format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

pub fn dump_config(cfg: &RunConfig) -> String {
    serde_json::to_string_pretty(cfg).expect("config serializes")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub digest: String,
}

impl FileRecord {
    pub fn of(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Ok(Self {
            path: path.display().to_string(),
            digest: file_digest(path)?,
        })
    }
}

/// Everything needed to re-run one CLI invocation and check its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub argv: Vec<String>,
    /// Working directory that relative paths in `argv` resolve against.
    pub cwd: String,
    pub config: serde_json::Value,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub wall_seconds: f64,
}

impl Manifest {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self).expect("manifest serializes") + "\n")?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| DireError::format(0, format!("bad manifest: {e}")))
    }

    /// Outputs whose current digest differs from the recorded one; relative
    /// paths resolve against `cwd`.
    pub fn mismatched_outputs(&self) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for rec in &self.outputs {
            match file_digest(Path::new(&self.cwd).join(&rec.path)) {
                Ok(d) if d == rec.digest => {}
                _ => bad.push(rec.path.clone()),
            }
        }
        Ok(bad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_normal, Rng};

    #[test]
    fn emb_round_trip_bitwise() {
        let m = rng_normal(&mut Rng::new(3), 3, 5, 0.0, 1.0).unwrap();
        let back = decode_emb(&encode_emb(&m).unwrap()).unwrap();
        assert_eq!(
            m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            back.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(back.shape(), (3, 5));
    }

    #[test]
    fn empty_matrix_is_header_only() {
        let bytes = encode_emb(&Matrix::zeros(0, 0)).unwrap();
        assert_eq!(bytes.len(), EMB_HEADER_LEN);
        assert_eq!(decode_emb(&bytes).unwrap().shape(), (0, 0));
    }

    #[test]
    fn emb_rejects_bad_input() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let bytes = encode_emb(&m).unwrap();
        match decode_emb(&bytes[..bytes.len() - 3]) {
            Err(DireError::Format { offset, .. }) => assert_eq!(offset, bytes.len() as u64 - 3),
            other => panic!("{other:?}"),
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_emb(&bad), Err(DireError::Format { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_emb(&bad), Err(DireError::Format { offset: 4, .. })));
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode_emb(&long).is_err());
        assert!(decode_emb(&[]).is_err());
        let nan = Matrix::from_rows(&[[f64::NAN]]).unwrap();
        assert!(encode_emb(&nan).is_err());
    }

    #[test]
    fn labels_round_trip() {
        let l = vec![0, 3, 3, 1];
        assert_eq!(decode_labels(&encode_labels(&l)).unwrap(), l);
        assert_eq!(decode_labels("label\n").unwrap(), Vec::<usize>::new());
        match decode_labels("label\n1\nx\n") {
            Err(DireError::Format { offset, .. }) => assert_eq!(offset, 8),
            other => panic!("{other:?}"),
        }
        assert!(decode_labels("lbl\n1\n").is_err());
        assert!(decode_labels("").is_err());
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn config_defaults_and_errors() {
        assert_eq!(parse_config("{}").unwrap(), RunConfig::default());
        let key = |text: &str| match parse_config(text) {
            Err(DireError::Config { key, .. }) => key,
            other => panic!("{other:?}"),
        };
        assert_eq!(key(r#"{"lr": -1}"#), "lr");
        assert_eq!(key(r#"{"lrr": 0.1}"#), "lrr");
        assert_eq!(key(r#"{"ipc": "ten"}"#), "ipc");
        assert_eq!(key(r#"{"components": "cd,xyz"}"#), "components");
        assert_eq!(key("[1]"), "<document>");
        assert_eq!(key("{"), "<document>");
        let c = parse_config(r#"{"ipc": 3, "components": "cd,edm", "optimizer": {"kind": "momentum", "beta": 0.9}}"#).unwrap();
        assert_eq!(c.ipc, 3);
        assert_eq!(c.components.label(), "cd+edm");
        assert_eq!(parse_config(&dump_config(&c)).unwrap(), c);
    }
}
