//! Artifact formats: metrics and embedding CSVs, flat key=value
//! manifests, the binary model dump, and the textual architecture
//! descriptor. Column orders and formats here are the tool's stable
//! interface — change them only with a version bump.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write as _};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::layers::{Architecture, LayerSpec};
use crate::losses::ClassifierState;
use crate::tensor::{slice_norm, Tensor};
use crate::trainer::{MetricsRecord, Model};

pub const METRICS_HEADER: &str =
    "iter,split,base_loss,incay_loss,total_loss,accuracy,mean_feature_norm";
pub const EMBEDDINGS_HEADER: &str = "iter,index,label,f0,f1,norm";

/// Shortest decimal form with at most six significant digits, in the
/// style of C's %.6g (scientific notation outside [1e-4, 1e6)).
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".to_string()
        } else if x > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        };
    }
    let sci = format!("{:.5e}", x);
    let epos = sci.find('e').expect("{:e} always contains an exponent");
    let exp: i32 = sci[epos + 1..].parse().expect("exponent is an integer");
    if exp < -4 || exp >= 6 {
        let mantissa = trim_decimal_zeros(&sci[..epos]);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", mantissa, sign, exp.abs())
    } else {
        let decimals = (5 - exp).max(0) as usize;
        trim_decimal_zeros(&format!("{:.*}", decimals, x))
    }
}

fn trim_decimal_zeros(s: &str) -> String {
    if !s.contains('.') {
        return s.to_string();
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn metrics_row(r: &MetricsRecord) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        r.iter,
        r.split.name(),
        format_sig6(r.base_loss),
        format_sig6(r.incay_loss),
        format_sig6(r.total_loss),
        format_sig6(r.accuracy),
        format_sig6(r.mean_feature_norm),
    )
}

/// Streaming CSV sink: header on open, one row per record, LF endings.
pub struct CsvWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CsvWriter {
    pub fn create(path: &Path, header: &str) -> Result<CsvWriter> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{header}").map_err(|e| Error::io(path, e))?;
        Ok(CsvWriter {
            path: path.to_path_buf(),
            out,
        })
    }

    pub fn write_line(&mut self, line: &str) -> Result<()> {
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn write_metrics(&mut self, record: &MetricsRecord) -> Result<()> {
        self.write_line(&metrics_row(record))
    }

    /// Appends the rows for one evaluation point of 2-d features.
    pub fn write_embeddings(
        &mut self,
        features: &Tensor,
        labels: &[usize],
        iter: usize,
    ) -> Result<()> {
        let (n, d) = features.dims2()?;
        if d != 2 {
            return Err(Error::invalid(format!(
                "embeddings require feature dimension 2, got {d}"
            )));
        }
        if labels.len() != n {
            return Err(Error::invalid(format!(
                "{n} feature rows but {} labels",
                labels.len()
            )));
        }
        for i in 0..n {
            let row = features.row(i)?;
            self.write_line(&format!(
                "{},{},{},{},{},{}",
                iter,
                i,
                labels[i],
                format_sig6(row[0]),
                format_sig6(row[1]),
                format_sig6(slice_norm(row)),
            ))?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// One-shot metrics file (header plus all records).
pub fn emit_metrics_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut w = CsvWriter::create(path, METRICS_HEADER)?;
    for r in records {
        w.write_metrics(r)?;
    }
    w.flush()
}

/// One-shot embeddings file for a single evaluation point.
pub fn emit_embeddings(
    path: &Path,
    features: &Tensor,
    labels: &[usize],
    iter: usize,
) -> Result<()> {
    let mut w = CsvWriter::create(path, EMBEDDINGS_HEADER)?;
    w.write_embeddings(features, labels, iter)?;
    w.flush()
}

/// Inverse of `emit_metrics_csv`, for round-trip checks and tooling.
pub fn parse_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .transpose()
        .map_err(|e| Error::io(path, e))?
        .unwrap_or_default();
    if header != METRICS_HEADER {
        return Err(Error::invalid(format!("unexpected metrics header {header:?}")));
    }
    let mut records = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::invalid(format!(
                "metrics line {} has {} fields",
                lineno + 2,
                fields.len()
            )));
        }
        let bad = |what: &str| Error::invalid(format!("bad {what} on line {}", lineno + 2));
        records.push(MetricsRecord {
            iter: fields[0].parse().map_err(|_| bad("iter"))?,
            split: crate::data::Split::parse(fields[1])?,
            base_loss: fields[2].parse().map_err(|_| bad("base_loss"))?,
            incay_loss: fields[3].parse().map_err(|_| bad("incay_loss"))?,
            total_loss: fields[4].parse().map_err(|_| bad("total_loss"))?,
            accuracy: fields[5].parse().map_err(|_| bad("accuracy"))?,
            mean_feature_norm: fields[6].parse().map_err(|_| bad("mean_feature_norm"))?,
        });
    }
    Ok(records)
}

// ---------------------------------------------------------------------
// Manifest: flat key=value lines, order-preserving for byte stability.
// ---------------------------------------------------------------------

pub fn write_manifest(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (k, v) in entries {
        if k.contains('=') || k.contains('\n') || v.contains('\n') {
            return Err(Error::MalformedManifest(format!(
                "key or value not representable: {k:?}"
            )));
        }
        writeln!(out, "{k}={v}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<(String, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((k, v)) = trimmed.split_once('=') else {
            return Err(Error::MalformedManifest(format!(
                "line {} has no '=': {trimmed:?}",
                lineno + 1
            )));
        };
        entries.push((k.to_string(), v.to_string()));
    }
    Ok(entries)
}

pub fn manifest_get<'a>(entries: &'a [(String, String)], key: &str) -> Option<&'a str> {
    entries
        .iter()
        .rev()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
}

// ---------------------------------------------------------------------
// Architecture descriptor: compact text form stored in manifests and
// model files, e.g. "input=1x28x28;layers=conv(20,5,0),relu,pool,
// flatten,fc(2);classes=10".
// ---------------------------------------------------------------------

pub fn arch_to_string(arch: &Architecture) -> String {
    let input = arch
        .input_shape
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x");
    let layers = arch
        .layers
        .iter()
        .map(|l| match *l {
            LayerSpec::Conv {
                out_channels,
                kernel,
                padding,
            } => format!("conv({out_channels},{kernel},{padding})"),
            LayerSpec::MaxPool => "pool".to_string(),
            LayerSpec::Relu => "relu".to_string(),
            LayerSpec::Flatten => "flatten".to_string(),
            LayerSpec::Fc { out_dim } => format!("fc({out_dim})"),
        })
        .collect::<Vec<_>>()
        .join(",");
    format!("input={input};layers={layers};classes={}", arch.num_classes)
}

pub fn arch_from_string(s: &str) -> Result<Architecture> {
    let bad = |msg: String| Error::invalid(format!("architecture descriptor: {msg}"));
    let mut input_shape: Option<Vec<usize>> = None;
    let mut layers: Option<Vec<LayerSpec>> = None;
    let mut classes: Option<usize> = None;
    for part in s.split(';') {
        let Some((key, value)) = part.split_once('=') else {
            return Err(bad(format!("segment {part:?} has no '='")));
        };
        match key {
            "input" => {
                let dims = value
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| bad(format!("bad input shape {value:?}")))?;
                input_shape = Some(dims);
            }
            "layers" => {
                let mut parsed = Vec::new();
                for item in value.split(',') {
                    parsed.push(parse_layer_spec(item, value)?);
                }
                layers = Some(merge_layer_args(parsed, value)?);
            }
            "classes" => {
                classes = Some(
                    value
                        .parse()
                        .map_err(|_| bad(format!("bad class count {value:?}")))?,
                );
            }
            other => return Err(bad(format!("unknown key {other:?}"))),
        }
    }
    let input_shape = input_shape.ok_or_else(|| bad("missing input=".into()))?;
    let layers = layers.ok_or_else(|| bad("missing layers=".into()))?;
    let num_classes = classes.ok_or_else(|| bad("missing classes=".into()))?;
    // the feature dimension comes from the last fc layer; a trailing
    // activation (relu on the feature layer) is allowed and keeps it
    let feature_dim = match layers
        .iter()
        .rev()
        .find(|l| !matches!(l, LayerSpec::Relu))
    {
        Some(LayerSpec::Fc { out_dim }) => *out_dim,
        _ => return Err(bad("last parameterized layer must be fc".into())),
    };
    let arch = Architecture {
        input_shape,
        layers,
        feature_dim,
        num_classes,
    };
    arch.layer_shapes()?; // validate geometry
    Ok(arch)
}

/// Splitting `layers=` on ',' also splits inside "conv(20,5,0)"; this
/// pair of helpers reassembles those pieces.
#[derive(Debug)]
enum PartialSpec {
    Done(LayerSpec),
    Pending(String),
}

fn parse_layer_spec(item: &str, context: &str) -> Result<PartialSpec> {
    let bad = || Error::invalid(format!("architecture descriptor: bad layer list {context:?}"));
    Ok(match item {
        "pool" => PartialSpec::Done(LayerSpec::MaxPool),
        "relu" => PartialSpec::Done(LayerSpec::Relu),
        "flatten" => PartialSpec::Done(LayerSpec::Flatten),
        _ => {
            if let Some(rest) = item.strip_prefix("fc(") {
                let out_dim = rest
                    .strip_suffix(')')
                    .and_then(|d| d.parse().ok())
                    .ok_or_else(bad)?;
                PartialSpec::Done(LayerSpec::Fc { out_dim })
            } else if item.starts_with("conv(") || !item.contains('(') {
                PartialSpec::Pending(item.to_string())
            } else {
                return Err(bad());
            }
        }
    })
}

fn merge_layer_args(parts: Vec<PartialSpec>, context: &str) -> Result<Vec<LayerSpec>> {
    let bad = || Error::invalid(format!("architecture descriptor: bad layer list {context:?}"));
    let mut out = Vec::new();
    let mut pending: Vec<String> = Vec::new();
    for part in parts {
        match part {
            PartialSpec::Done(spec) => {
                if !pending.is_empty() {
                    return Err(bad());
                }
                out.push(spec);
            }
            PartialSpec::Pending(piece) => {
                pending.push(piece);
                if pending.last().unwrap().ends_with(')') {
                    let joined = pending.join(",");
                    pending.clear();
                    let args = joined
                        .strip_prefix("conv(")
                        .and_then(|r| r.strip_suffix(')'))
                        .ok_or_else(bad)?;
                    let nums: Vec<usize> = args
                        .split(',')
                        .map(|a| a.parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad())?;
                    let [out_channels, kernel, padding] = nums[..] else {
                        return Err(bad());
                    };
                    out.push(LayerSpec::Conv {
                        out_channels,
                        kernel,
                        padding,
                    });
                }
            }
        }
    }
    if !pending.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

// ---------------------------------------------------------------------
// Model file: magic + version + architecture descriptor + named,
// length-prefixed f64 tensors (little-endian throughout).
// ---------------------------------------------------------------------

const MODEL_MAGIC: &[u8; 8] = b"INCAYMDL";
const MODEL_VERSION: u32 = 1;

fn named_tensors(model: &Model) -> Vec<(String, &Tensor)> {
    let mut out = Vec::new();
    for (i, p) in model.network.params.iter().enumerate() {
        if let Some(p) = p {
            out.push((format!("layer{i}.weights"), &p.weights));
            if let Some(b) = &p.bias {
                out.push((format!("layer{i}.bias"), b));
            }
        }
    }
    out.push(("classifier.weights".to_string(), &model.classifier.weights));
    if let Some(c) = &model.classifier.centers {
        out.push(("classifier.centers".to_string(), c));
    }
    out
}

pub fn save_model(path: &Path, model: &Model) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let ioerr = |e| Error::io(path, e);
    out.write_all(MODEL_MAGIC).map_err(ioerr)?;
    out.write_all(&MODEL_VERSION.to_le_bytes()).map_err(ioerr)?;
    let arch = arch_to_string(&model.network.arch);
    write_str(&mut out, &arch).map_err(ioerr)?;
    let tensors = named_tensors(model);
    out.write_all(&(tensors.len() as u32).to_le_bytes())
        .map_err(ioerr)?;
    for (name, t) in tensors {
        write_str(&mut out, &name).map_err(ioerr)?;
        out.write_all(&(t.shape().len() as u32).to_le_bytes())
            .map_err(ioerr)?;
        for &d in t.shape() {
            out.write_all(&(d as u64).to_le_bytes()).map_err(ioerr)?;
        }
        for &v in t.data() {
            out.write_all(&v.to_le_bytes()).map_err(ioerr)?;
        }
    }
    out.flush().map_err(ioerr)
}

fn write_str(out: &mut impl std::io::Write, s: &str) -> std::io::Result<()> {
    out.write_all(&(s.len() as u32).to_le_bytes())?;
    out.write_all(s.as_bytes())
}

struct ModelReader<R> {
    inner: R,
}

impl<R: Read> ModelReader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::MalformedModel("truncated file".into()))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        if len > 1 << 20 {
            return Err(Error::MalformedModel(format!("string length {len} too large")));
        }
        String::from_utf8(self.bytes(len)?)
            .map_err(|_| Error::MalformedModel("non-UTF-8 string".into()))
    }
}

pub fn load_model(path: &Path) -> Result<Model> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = ModelReader {
        inner: BufReader::new(file),
    };
    if r.bytes(8)? != MODEL_MAGIC {
        return Err(Error::MalformedModel("bad magic".into()));
    }
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::MalformedModel(format!(
            "unsupported version {version} (expected {MODEL_VERSION})"
        )));
    }
    let arch = arch_from_string(&r.string()?)?;
    let count = r.u32()? as usize;
    if count > 10_000 {
        return Err(Error::MalformedModel(format!("{count} tensors is implausible")));
    }
    let mut tensors: Vec<(String, Tensor)> = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(Error::MalformedModel(format!("tensor rank {rank} too large")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut numel = 1usize;
        for _ in 0..rank {
            let d = r.u64()? as usize;
            numel = numel
                .checked_mul(d)
                .filter(|&n| n <= 1 << 28)
                .ok_or_else(|| Error::MalformedModel("tensor too large".into()))?;
            shape.push(d);
        }
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f64::from_le_bytes(r.bytes(8)?.try_into().unwrap()));
        }
        tensors.push((
            name,
            Tensor::new(shape, data).map_err(|e| Error::MalformedModel(e.to_string()))?,
        ));
    }
    rebuild_model(arch, tensors)
}

fn rebuild_model(arch: Architecture, tensors: Vec<(String, Tensor)>) -> Result<Model> {
    use std::collections::HashMap;
    let mut by_name: HashMap<String, Tensor> = tensors.into_iter().collect();
    // Template model gives the expected parameter slots and shapes.
    let template = Model::init(arch, crate::losses::LossKind::Softmax, 0)?;
    let mut network = template.network;
    for (i, slot) in network.params.iter_mut().enumerate() {
        let Some(p) = slot else { continue };
        let w = by_name
            .remove(&format!("layer{i}.weights"))
            .ok_or_else(|| Error::MalformedModel(format!("missing layer{i}.weights")))?;
        if w.shape() != p.weights.shape() {
            return Err(Error::MalformedModel(format!(
                "layer{i}.weights has shape {:?}, expected {:?}",
                w.shape(),
                p.weights.shape()
            )));
        }
        p.weights = w;
        if let Some(b) = &mut p.bias {
            let nb = by_name
                .remove(&format!("layer{i}.bias"))
                .ok_or_else(|| Error::MalformedModel(format!("missing layer{i}.bias")))?;
            if nb.shape() != b.shape() {
                return Err(Error::MalformedModel(format!("layer{i}.bias shape mismatch")));
            }
            *b = nb;
        }
    }
    let weights = by_name
        .remove("classifier.weights")
        .ok_or_else(|| Error::MalformedModel("missing classifier.weights".into()))?;
    let mut classifier = ClassifierState::new(weights)
        .map_err(|e| Error::MalformedModel(e.to_string()))?;
    if let Some(centers) = by_name.remove("classifier.centers") {
        if centers.shape() != classifier.weights.shape() {
            return Err(Error::MalformedModel("classifier.centers shape mismatch".into()));
        }
        classifier.centers = Some(centers);
    }
    if let Some(name) = by_name.keys().next() {
        return Err(Error::MalformedModel(format!("unexpected tensor {name:?}")));
    }
    if classifier.feature_dim() != network.arch.feature_dim
        || classifier.num_classes() != network.arch.num_classes
    {
        return Err(Error::MalformedModel(
            "classifier dimensions disagree with architecture".into(),
        ));
    }
    Ok(Model {
        network,
        classifier,
    })
}
