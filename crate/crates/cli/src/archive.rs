//! ROMF model archives.
//!
//! ```text
//! "ROMF" | u32 version | u64 manifest length | manifest (UTF-8)
//! u32 section count | sections
//! section: u32 name length | name | u8 dtype | u32 ndim | u64 dims.. | payload
//! ```
//!
//! All integers and floats are little-endian. The manifest lists every
//! section with its dtype, shape and the SHA-256 of its header and payload,
//! followed by free-form metadata and the verbatim config the run used.

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use clstm_rom::clustering::ParameterPoint;
use clstm_rom::dataset::Normalizer;
use clstm_rom::linalg::{Matrix, PodBasis};
use clstm_rom::nn::{CellMode, Conv1dParams, DenseParams, LstmCellParams, Padding};
use clstm_rom::pod_pipeline::PipelineModel;
use clstm_rom::two_stage::{CLstmModel, Skip, TwoStageModel};
use clstm_rom::{Result, RomError};

pub const MAGIC: &[u8; 4] = b"ROMF";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum SectionData {
    F64(Vec<f64>),
    U64(Vec<u64>),
}

impl SectionData {
    fn dtype(&self) -> u8 {
        match self {
            SectionData::F64(_) => 1,
            SectionData::U64(_) => 2,
        }
    }

    fn len(&self) -> usize {
        match self {
            SectionData::F64(v) => v.len(),
            SectionData::U64(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: SectionData,
}

impl Section {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.name.len() as u32).to_le_bytes());
        out.extend_from_slice(self.name.as_bytes());
        self.encode_body(out);
    }

    /// Dtype, shape header and payload: the hashed part.
    fn encode_body(&self, out: &mut Vec<u8>) {
        out.push(self.data.dtype());
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &self.data {
            SectionData::F64(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            SectionData::U64(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }

    pub fn sha256(&self) -> String {
        let mut body = Vec::new();
        self.encode_body(&mut body);
        hex::encode(Sha256::digest(&body))
    }

    fn dtype_name(&self) -> &'static str {
        match self.data {
            SectionData::F64(_) => "f64",
            SectionData::U64(_) => "u64",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Archive {
    /// Ordered `key: value` metadata lines.
    pub meta: Vec<(String, String)>,
    pub config_echo: String,
    pub sections: Vec<Section>,
}

fn err(msg: impl Into<String>) -> RomError {
    RomError::Archive(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(err(format!("truncated archive at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl Archive {
    pub fn new(config_echo: impl Into<String>) -> Self {
        Self {
            config_echo: config_echo.into(),
            ..Self::default()
        }
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string().replace('\n', " ");
        match self.meta.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.meta.push((key.to_string(), value)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn push_f64(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) {
        self.push(name.into(), shape, SectionData::F64(data));
    }

    pub fn push_u64(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<u64>) {
        self.push(name.into(), shape, SectionData::U64(data));
    }

    fn push(&mut self, name: String, shape: &[usize], data: SectionData) {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "section {name}: shape and data disagree"
        );
        assert!(
            self.sections.iter().all(|s| s.name != name),
            "duplicate section {name}"
        );
        self.sections.push(Section {
            name,
            shape: shape.to_vec(),
            data,
        });
    }

    pub fn section(&self, name: &str) -> Result<&Section> {
        self.sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| err(format!("archive is missing section '{name}'")))
    }

    pub fn has_section(&self, name: &str) -> bool {
        self.sections.iter().any(|s| s.name == name)
    }

    pub fn f64s(&self, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let s = self.section(name)?;
        if s.shape != shape {
            return Err(err(format!(
                "section '{name}' has shape {:?}, expected {:?}",
                s.shape, shape
            )));
        }
        match &s.data {
            SectionData::F64(v) => Ok(v.clone()),
            SectionData::U64(_) => Err(err(format!(
                "section '{name}' holds integers, expected floats"
            ))),
        }
    }

    /// Float section of any shape.
    pub fn f64s_any(&self, name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
        let s = self.section(name)?;
        match &s.data {
            SectionData::F64(v) => Ok((s.shape.clone(), v.clone())),
            SectionData::U64(_) => Err(err(format!(
                "section '{name}' holds integers, expected floats"
            ))),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<Vec<u64>> {
        match &self.section(name)?.data {
            SectionData::U64(v) => Ok(v.clone()),
            SectionData::F64(_) => Err(err(format!(
                "section '{name}' holds floats, expected integers"
            ))),
        }
    }

    pub fn manifest(&self) -> String {
        let mut m = String::new();
        m.push_str("ROMF manifest\n");
        m.push_str(&format!("version: {VERSION}\n"));
        for (k, v) in &self.meta {
            m.push_str(&format!("meta {k}: {v}\n"));
        }
        for s in &self.sections {
            let dims: Vec<String> = s.shape.iter().map(|d| d.to_string()).collect();
            m.push_str(&format!(
                "section {} {} [{}] sha256={}\n",
                s.name,
                s.dtype_name(),
                dims.join(","),
                s.sha256()
            ));
        }
        m.push_str("config:\n");
        m.push_str(&self.config_echo);
        m
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = self.manifest();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for s in &self.sections {
            s.encode(&mut out);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)
            .map_err(|_| err("file too short to be an archive"))?
            != MAGIC
        {
            return Err(err("bad magic: not a ROMF archive"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(err(format!(
                "unsupported archive version {version} (this build reads {VERSION})"
            )));
        }
        let mlen = r.u64()? as usize;
        let manifest =
            std::str::from_utf8(r.take(mlen)?).map_err(|_| err("manifest is not UTF-8"))?;
        let (meta, listed, config_echo) = parse_manifest(manifest)?;

        let count = r.u32()? as usize;
        let mut sections = Vec::with_capacity(count);
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = String::from_utf8(r.take(nlen)?.to_vec())
                .map_err(|_| err("section name is not UTF-8"))?;
            let dtype = r.u8()?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            if n.checked_mul(8).is_none_or(|b| b > bytes.len()) {
                return Err(err(format!("section '{name}' claims an impossible size")));
            }
            let raw = r.take(n * 8)?;
            let data = match dtype {
                1 => SectionData::F64(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                2 => SectionData::U64(
                    raw.chunks_exact(8)
                        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                other => return Err(err(format!("section '{name}' has unknown dtype {other}"))),
            };
            sections.push(Section { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(err(format!(
                "{} trailing bytes after the last section",
                bytes.len() - r.pos
            )));
        }
        if listed.len() != sections.len() {
            return Err(err(format!(
                "manifest lists {} sections, file holds {}",
                listed.len(),
                sections.len()
            )));
        }
        for (s, (name, hash)) in sections.iter().zip(&listed) {
            if &s.name != name {
                return Err(err(format!(
                    "manifest lists '{name}' where the file holds '{}'",
                    s.name
                )));
            }
            if &s.sha256() != hash {
                return Err(err(format!(
                    "hash mismatch for section '{name}': archive is corrupt"
                )));
            }
        }
        Ok(Self {
            meta,
            config_echo,
            sections,
        })
    }

    /// Writes to a temporary file next to `path`, then renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

type Manifest = (Vec<(String, String)>, Vec<(String, String)>, String);

fn parse_manifest(text: &str) -> Result<Manifest> {
    let (head, echo) = text
        .split_once("config:\n")
        .ok_or_else(|| err("manifest has no config block"))?;
    let mut lines = head.lines();
    if lines.next() != Some("ROMF manifest") {
        return Err(err("manifest header missing"));
    }
    let mut meta = Vec::new();
    let mut listed = Vec::new();
    for line in lines {
        if let Some(rest) = line.strip_prefix("meta ") {
            let (k, v) = rest
                .split_once(": ")
                .ok_or_else(|| err(format!("bad meta line '{line}'")))?;
            meta.push((k.to_string(), v.to_string()));
        } else if let Some(rest) = line.strip_prefix("section ") {
            let name = rest.split(' ').next().unwrap_or_default();
            let hash = rest
                .rsplit_once("sha256=")
                .map(|(_, h)| h)
                .ok_or_else(|| err(format!("section line without hash: '{line}'")))?;
            listed.push((name.to_string(), hash.to_string()));
        } else if !line.starts_with("version: ") {
            return Err(err(format!("unexpected manifest line '{line}'")));
        }
    }
    Ok((meta, listed, echo.to_string()))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| RomError::Io(e.error))?;
    Ok(())
}

fn put_matrix(ar: &mut Archive, name: String, m: &Matrix) {
    ar.push_f64(name, &[m.rows(), m.cols()], m.as_slice().to_vec());
}

fn get_matrix(ar: &Archive, name: &str, rows: usize, cols: usize) -> Result<Matrix> {
    Matrix::from_vec(rows, cols, ar.f64s(name, &[rows, cols])?)
}

fn get_matrix_any(ar: &Archive, name: &str) -> Result<Matrix> {
    let (shape, data) = ar.f64s_any(name)?;
    if shape.len() != 2 {
        return Err(err(format!("section '{name}' is not a matrix")));
    }
    Matrix::from_vec(shape[0], shape[1], data)
}

fn u64_fields<const N: usize>(ar: &Archive, name: &str) -> Result<[usize; N]> {
    let v = ar.u64s(name)?;
    let arr: [u64; N] = v
        .try_into()
        .map_err(|_| err(format!("section '{name}' should hold {N} integers")))?;
    Ok(arr.map(|x| x as usize))
}

pub fn put_clstm(ar: &mut Archive, prefix: &str, m: &CLstmModel) {
    let c = &m.conv;
    let padding = match c.padding {
        Padding::Same => 0,
        Padding::None => 1,
    };
    let mode = match m.mode {
        CellMode::Standard => 0,
        CellMode::Linear => 1,
    };
    let (mo, z) = m.output_shape;
    ar.push_u64(
        format!("{prefix}/meta"),
        &[10],
        vec![
            c.in_channels as u64,
            c.out_channels as u64,
            c.width as u64,
            c.stride as u64,
            padding,
            m.lstm.hidden() as u64,
            mo as u64,
            z as u64,
            m.skip.code(),
            mode,
        ],
    );
    ar.push_f64(
        format!("{prefix}/conv.kernels"),
        &[c.out_channels, c.in_channels, c.width],
        c.kernels.clone(),
    );
    ar.push_f64(
        format!("{prefix}/conv.bias"),
        &[c.out_channels],
        c.bias.clone(),
    );
    let l = &m.lstm;
    for (g, w, b) in [
        ("q", &l.w_q, &l.b_q),
        ("i", &l.w_i, &l.b_i),
        ("f", &l.w_f, &l.b_f),
        ("o", &l.w_o, &l.b_o),
    ] {
        put_matrix(ar, format!("{prefix}/lstm.w_{g}"), w);
        ar.push_f64(format!("{prefix}/lstm.b_{g}"), &[b.len()], b.clone());
    }
    put_matrix(ar, format!("{prefix}/head.w"), &m.head.w);
    ar.push_f64(
        format!("{prefix}/head.b"),
        &[m.head.b.len()],
        m.head.b.clone(),
    );
    ar.push_f64(
        format!("{prefix}/out_scale"),
        &[m.out_scale.len()],
        m.out_scale.clone(),
    );
}

pub fn get_clstm(ar: &Archive, prefix: &str) -> Result<CLstmModel> {
    let [cin, cout, width, stride, padding, hidden, m, z, skip, mode] =
        u64_fields::<10>(ar, &format!("{prefix}/meta"))?;
    let padding = match padding {
        0 => Padding::Same,
        1 => Padding::None,
        p => return Err(err(format!("{prefix}: unknown padding code {p}"))),
    };
    let mut conv = Conv1dParams::zeros(cin, cout, width, stride, padding)?;
    conv.kernels = ar.f64s(&format!("{prefix}/conv.kernels"), &[cout, cin, width])?;
    conv.bias = ar.f64s(&format!("{prefix}/conv.bias"), &[cout])?;
    let mut lstm = LstmCellParams::zeros(cout, hidden);
    let gate = |g: &str| -> Result<(Matrix, Vec<f64>)> {
        Ok((
            get_matrix(ar, &format!("{prefix}/lstm.w_{g}"), hidden, hidden + cout)?,
            ar.f64s(&format!("{prefix}/lstm.b_{g}"), &[hidden])?,
        ))
    };
    (lstm.w_q, lstm.b_q) = gate("q")?;
    (lstm.w_i, lstm.b_i) = gate("i")?;
    (lstm.w_f, lstm.b_f) = gate("f")?;
    (lstm.w_o, lstm.b_o) = gate("o")?;
    let head = DenseParams {
        w: get_matrix(ar, &format!("{prefix}/head.w"), m * z, hidden)?,
        b: ar.f64s(&format!("{prefix}/head.b"), &[m * z])?,
    };
    let skip = Skip::from_code(skip as u64)?;
    let mut model = CLstmModel::assemble(conv, lstm, head, (m, z), skip)?;
    model.mode = match mode {
        0 => CellMode::Standard,
        1 => CellMode::Linear,
        c => return Err(err(format!("{prefix}: unknown cell mode {c}"))),
    };
    model.out_scale = ar.f64s(&format!("{prefix}/out_scale"), &[m * z])?;
    Ok(model)
}

pub fn put_two_stage(ar: &mut Archive, prefix: &str, model: &TwoStageModel) {
    let (k, z, p) = (model.k(), model.z(), model.p());
    ar.push_u64(
        format!("{prefix}/meta"),
        &[5],
        vec![k as u64, model.w as u64, model.m as u64, z as u64, p as u64],
    );
    ar.push_f64(
        format!("{prefix}/centroids"),
        &[k, p],
        model
            .centroids
            .iter()
            .flat_map(|c| c.coords().to_vec())
            .collect(),
    );
    ar.push_f64(
        format!("{prefix}/normalizer.min"),
        &[z],
        model.normalizer.min.clone(),
    );
    ar.push_f64(
        format!("{prefix}/normalizer.max"),
        &[z],
        model.normalizer.max.clone(),
    );
    ar.push_f64(
        format!("{prefix}/theta_normalizer.min"),
        &[p],
        model.theta_normalizer.min.clone(),
    );
    ar.push_f64(
        format!("{prefix}/theta_normalizer.max"),
        &[p],
        model.theta_normalizer.max.clone(),
    );
    for (i, e) in model.first_stage.iter().enumerate() {
        put_clstm(ar, &format!("{prefix}/expert{i}"), e);
    }
    put_clstm(ar, &format!("{prefix}/second_stage"), &model.second_stage);
}

pub fn get_two_stage(ar: &Archive, prefix: &str) -> Result<TwoStageModel> {
    let [k, w, m, z, p] = u64_fields::<5>(ar, &format!("{prefix}/meta"))?;
    let flat = ar.f64s(&format!("{prefix}/centroids"), &[k, p])?;
    let centroids = flat
        .chunks(p.max(1))
        .take(k)
        .map(|c| ParameterPoint(c.to_vec()))
        .collect();
    let model = TwoStageModel {
        centroids,
        first_stage: (0..k)
            .map(|i| get_clstm(ar, &format!("{prefix}/expert{i}")))
            .collect::<Result<_>>()?,
        second_stage: get_clstm(ar, &format!("{prefix}/second_stage"))?,
        normalizer: Normalizer {
            min: ar.f64s(&format!("{prefix}/normalizer.min"), &[z])?,
            max: ar.f64s(&format!("{prefix}/normalizer.max"), &[z])?,
        },
        theta_normalizer: Normalizer {
            min: ar.f64s(&format!("{prefix}/theta_normalizer.min"), &[p])?,
            max: ar.f64s(&format!("{prefix}/theta_normalizer.max"), &[p])?,
        },
        w,
        m,
    };
    model.validate()?;
    Ok(model)
}

fn put_basis(ar: &mut Archive, prefix: &str, b: &PodBasis) {
    put_matrix(ar, format!("{prefix}.modes"), &b.modes);
    ar.push_f64(
        format!("{prefix}.singular_values"),
        &[b.singular_values.len()],
        b.singular_values.clone(),
    );
    ar.push_f64(format!("{prefix}.energy_ratio"), &[1], vec![b.energy_ratio]);
}

fn get_basis(ar: &Archive, prefix: &str) -> Result<PodBasis> {
    let modes = get_matrix_any(ar, &format!("{prefix}.modes"))?;
    let (_, singular_values) = ar.f64s_any(&format!("{prefix}.singular_values"))?;
    let energy_ratio = ar.f64s(&format!("{prefix}.energy_ratio"), &[1])?[0];
    Ok(PodBasis {
        full_dim: modes.rows(),
        modes,
        singular_values,
        energy_ratio,
    })
}

pub fn put_pipeline(ar: &mut Archive, p: &PipelineModel) {
    ar.push_u64(
        "pipeline/meta",
        &[2],
        vec![p.n_i as u64, p.model_1.is_some() as u64],
    );
    put_basis(ar, "pipeline/basis_1", &p.basis_1);
    put_basis(ar, "pipeline/basis_2", &p.basis_2);
    put_matrix(ar, "pipeline/M".into(), &p.transfer);
    if let Some(m1) = &p.model_1 {
        put_two_stage(ar, "model_1", m1);
    }
    put_two_stage(ar, "model_2", &p.model_2);
}

pub fn get_pipeline(ar: &Archive) -> Result<PipelineModel> {
    let [n_i, has_1] = u64_fields::<2>(ar, "pipeline/meta")?;
    let p = PipelineModel {
        basis_1: get_basis(ar, "pipeline/basis_1")?,
        basis_2: get_basis(ar, "pipeline/basis_2")?,
        model_1: if has_1 == 1 {
            Some(get_two_stage(ar, "model_1")?)
        } else {
            None
        },
        model_2: get_two_stage(ar, "model_2")?,
        transfer: get_matrix_any(ar, "pipeline/M")?,
        n_i,
    };
    p.validate()?;
    Ok(p)
}
