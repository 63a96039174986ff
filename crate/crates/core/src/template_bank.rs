//! Templates sampled from training data and their stored transformation
//! orbits.
//!
//! Projecting an input onto every transformed copy of a template gives the
//! same set of numbers as projecting every inverse-transformed input onto the
//! template itself, so storing `g t` for all sampled `g` is enough to compute
//! orbit statistics without transforming the input.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::ConfigHash;
use crate::par::Exec;
use crate::pooling::norm;
use crate::signal_io::{DatasetManifest, ManifestEntry};
use crate::transforms::{apply_one, TransformSpec};

pub const BANK_MAGIC: &[u8; 4] = b"TBK1";
const MIN_MEMBER_NORM: f64 = 1e-12;
const NORM_TOLERANCE: f64 = 1e-9;

/// One template's unit-normalized transformed copies, stored contiguously.
#[derive(Clone, Debug, PartialEq)]
pub struct TemplateOrbit {
    template_id: usize,
    source_track: String,
    dim: usize,
    members: Vec<f64>,
    spec: TransformSpec,
}

impl TemplateOrbit {
    pub fn template_id(&self) -> usize {
        self.template_id
    }

    pub fn source_track(&self) -> &str {
        &self.source_track
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Orbit size `M`.
    pub fn len(&self) -> usize {
        self.members.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn spec(&self) -> &TransformSpec {
        &self.spec
    }

    pub fn member(&self, m: usize) -> &[f64] {
        &self.members[m * self.dim..(m + 1) * self.dim]
    }

    pub fn members(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.members.chunks_exact(self.dim)
    }

    /// Keeps only the first `count` members; used to build incomplete orbits
    /// for negative controls.
    pub fn truncated(&self, count: usize) -> Result<Self> {
        if count == 0 || count > self.len() {
            return Err(Error::InvalidParameter(format!(
                "cannot truncate a {}-member orbit to {count}",
                self.len()
            )));
        }
        let mut spec = self.spec.clone();
        spec.parameters.truncate(count);
        Ok(Self {
            members: self.members[..count * self.dim].to_vec(),
            spec,
            ..self.clone()
        })
    }

    fn check(&self) -> Result<()> {
        if self.dim == 0 || self.members.is_empty() || !self.members.len().is_multiple_of(self.dim) {
            return Err(Error::Invariant(format!(
                "orbit {} has ragged members",
                self.template_id
            )));
        }
        if self.len() != self.spec.len() {
            return Err(Error::Invariant(format!(
                "orbit {} has {} members but {} transform parameters",
                self.template_id,
                self.len(),
                self.spec.len()
            )));
        }
        for (m, member) in self.members().enumerate() {
            let n = norm(member);
            if !n.is_finite() || (n - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::Invariant(format!(
                    "orbit {} member {m} has norm {n}",
                    self.template_id
                )));
            }
        }
        Ok(())
    }
}

/// Builds an orbit from a function producing the raw (unnormalized) member
/// for each transform parameter.
pub fn build_orbit_with<F>(
    template_id: usize,
    source_track: &str,
    spec: &TransformSpec,
    member: F,
) -> Result<TemplateOrbit>
where
    F: Fn(f64) -> Result<Vec<f64>>,
{
    spec.validate()?;
    let mut members = Vec::new();
    let mut dim = None;
    for &p in &spec.parameters {
        let v = member(p)?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("transformed template"));
        }
        match dim {
            None => dim = Some(v.len()),
            Some(d) if d != v.len() => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: v.len(),
                })
            }
            _ => {}
        }
        let n = norm(&v);
        if n < MIN_MEMBER_NORM {
            return Err(Error::DegenerateTemplate {
                template: template_id,
                parameter: p,
                norm: n,
            });
        }
        members.extend(v.iter().map(|x| x / n));
    }
    let orbit = TemplateOrbit {
        template_id,
        source_track: source_track.to_owned(),
        dim: dim.unwrap_or(0),
        members,
        spec: spec.clone(),
    };
    orbit.check()?;
    Ok(orbit)
}

/// Maps a transformed template to the space its orbit lives in.
pub type Representation<'a> = &'a (dyn Fn(&[f64]) -> Result<Vec<f64>> + Sync);

/// Transforms `template` by every parameter of `spec`, optionally maps each
/// result through `representation`, and normalizes to unit length.
pub fn build_orbit(
    template_id: usize,
    source_track: &str,
    template: &[f64],
    spec: &TransformSpec,
    representation: Option<Representation<'_>>,
) -> Result<TemplateOrbit> {
    if template.is_empty() {
        return Err(Error::Empty("template"));
    }
    if template.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("template"));
    }
    if template.iter().all(|&x| x == 0.0) {
        return Err(Error::DegenerateTemplate {
            template: template_id,
            parameter: f64::NAN,
            norm: 0.0,
        });
    }
    build_orbit_with(template_id, source_track, spec, |p| {
        let transformed = apply_one(template, spec, p)?;
        match representation {
            Some(f) => f(&transformed),
            None => Ok(transformed),
        }
    })
}

/// A raw template vector and the training track it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledTemplate {
    pub source_track: String,
    pub frame_index: usize,
    pub vector: Vec<f64>,
}

/// Draws `count` templates: a training track uniformly (with replacement),
/// then one of its vectors uniformly. All-zero vectors are skipped by
/// redrawing from the same track.
///
/// Track choices come from one seeded stream and the vector choice for
/// template `j` from a stream keyed by `(seed, j)`, so the result does not
/// depend on the order in which tracks are visited.
pub fn sample_templates<P>(
    train: &DatasetManifest,
    count: usize,
    provider: P,
    seed: u64,
    exec: Exec,
) -> Result<Vec<SampledTemplate>>
where
    P: Fn(&ManifestEntry) -> Result<Vec<Vec<f64>>> + Sync + Send,
{
    if count == 0 {
        return Err(Error::InvalidParameter("template count must be at least 1".into()));
    }
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_track: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for j in 0..count {
        by_track.entry(rng.gen_range(0..train.len())).or_default().push(j);
    }
    let jobs: Vec<(usize, Vec<usize>)> = by_track.into_iter().collect();
    let picked = exec.try_map(&jobs, |(track, slots)| {
        let entry = &train.entries[*track];
        let vectors = provider(entry)?;
        if vectors.is_empty() {
            return Err(Error::Empty("provider returned no vectors for a training track"));
        }
        let usable = vectors.iter().filter(|v| v.iter().any(|&x| x != 0.0)).count();
        if usable == 0 {
            return Err(Error::DegenerateTemplate {
                template: slots[0],
                parameter: f64::NAN,
                norm: 0.0,
            });
        }
        Ok(slots
            .iter()
            .map(|&j| {
                let mut local = ChaCha8Rng::seed_from_u64(seed);
                local.set_stream(j as u64 + 1);
                loop {
                    let idx = local.gen_range(0..vectors.len());
                    if vectors[idx].iter().any(|&x| x != 0.0) {
                        return (
                            j,
                            SampledTemplate {
                                source_track: entry.track_id.clone(),
                                frame_index: idx,
                                vector: vectors[idx].clone(),
                            },
                        );
                    }
                }
            })
            .collect::<Vec<_>>())
    })?;
    let mut out: Vec<(usize, SampledTemplate)> = picked.into_iter().flatten().collect();
    out.sort_by_key(|(j, _)| *j);
    Ok(out.into_iter().map(|(_, t)| t).collect())
}

/// K orbits sharing one transform family and dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct TemplateBank {
    orbits: Vec<TemplateOrbit>,
    layer_tag: String,
    config_hash: ConfigHash,
}

impl TemplateBank {
    pub fn new(orbits: Vec<TemplateOrbit>, layer_tag: &str, config_hash: ConfigHash) -> Result<Self> {
        let bank = Self {
            orbits,
            layer_tag: layer_tag.to_owned(),
            config_hash,
        };
        bank.check()?;
        Ok(bank)
    }

    fn check(&self) -> Result<()> {
        let first = self.orbits.first().ok_or(Error::Empty("template bank"))?;
        let mut ids = std::collections::HashSet::new();
        for o in &self.orbits {
            o.check()?;
            if o.dim != first.dim {
                return Err(Error::Invariant(format!(
                    "orbit {} has dimension {} but the bank uses {}",
                    o.template_id, o.dim, first.dim
                )));
            }
            if o.spec.kind != first.spec.kind {
                return Err(Error::Invariant("orbits mix transform kinds".into()));
            }
            if !ids.insert(o.template_id) {
                return Err(Error::Invariant(format!("duplicate template id {}", o.template_id)));
            }
        }
        Ok(())
    }

    pub fn orbits(&self) -> &[TemplateOrbit] {
        &self.orbits
    }

    /// Template count `K`.
    pub fn len(&self) -> usize {
        self.orbits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orbits.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.orbits[0].dim
    }

    /// Largest orbit size; equal to every orbit's size for built banks.
    pub fn orbit_size(&self) -> usize {
        self.orbits.iter().map(TemplateOrbit::len).max().unwrap_or(0)
    }

    pub fn layer_tag(&self) -> &str {
        &self.layer_tag
    }

    pub fn config_hash(&self) -> &ConfigHash {
        &self.config_hash
    }

    pub fn spec(&self) -> &TransformSpec {
        &self.orbits[0].spec
    }

    /// Same bank with every orbit cut to its first `count` members.
    pub fn truncated(&self, count: usize) -> Result<Self> {
        let orbits = self.orbits.iter().map(|o| o.truncated(count)).collect::<Result<_>>()?;
        Self::new(orbits, &self.layer_tag, self.config_hash)
    }
}

#[derive(Serialize, Deserialize)]
struct BankHeader {
    spec: TransformSpec,
    layer_tag: String,
    templates: Vec<TemplateMeta>,
}

#[derive(Serialize, Deserialize)]
struct TemplateMeta {
    template_id: usize,
    source_track: String,
}

/// Writes `TBK1 | K | M | d | json_len | json | K*M*d f64 | hash[32]`, all
/// integers and floats little-endian.
pub fn save_bank(bank: &TemplateBank, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let m = bank.orbit_size();
    if bank.orbits.iter().any(|o| o.len() != m) {
        return Err(Error::Invariant("cannot save a bank with unequal orbit sizes".into()));
    }
    let header = BankHeader {
        spec: bank.spec().clone(),
        layer_tag: bank.layer_tag.clone(),
        templates: bank
            .orbits
            .iter()
            .map(|o| TemplateMeta {
                template_id: o.template_id,
                source_track: o.source_track.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(48 + json.len() + bank.len() * m * bank.dim() * 8);
    buf.extend_from_slice(BANK_MAGIC);
    for v in [bank.len(), m, bank.dim(), json.len()] {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    buf.extend_from_slice(&json);
    for o in &bank.orbits {
        for x in &o.members {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    buf.extend_from_slice(&bank.config_hash.0);
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    path: &'a Path,
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        match end {
            Some(end) => {
                let s = &self.data[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Corrupted {
                path: self.path.into(),
                cause: format!("truncated while reading {what}"),
            }),
        }
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Reads a bank file, checking its structure, the declared invariants and,
/// when given, the producing configuration's hash.
pub fn load_bank(path: impl AsRef<Path>, expected: Option<&ConfigHash>) -> Result<TemplateBank> {
    let path = path.as_ref();
    let mut data = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut data))
        .map_err(|e| Error::io(path, e))?;
    let corrupt = |cause: String| Error::Corrupted {
        path: path.into(),
        cause,
    };
    let mut cur = Cursor {
        path,
        data: &data,
        pos: 0,
    };
    if cur.take(4, "magic")? != BANK_MAGIC {
        return Err(corrupt("bad magic bytes".into()));
    }
    let k = cur.u64("template count")? as usize;
    let m = cur.u64("orbit size")? as usize;
    let d = cur.u64("dimension")? as usize;
    let json_len = cur.u64("header length")? as usize;
    let header: BankHeader =
        serde_json::from_slice(cur.take(json_len, "header")?).map_err(|e| corrupt(format!("header: {e}")))?;
    if header.templates.len() != k || header.spec.len() != m {
        return Err(corrupt("header disagrees with K or M".into()));
    }
    let n = k
        .checked_mul(m)
        .and_then(|x| x.checked_mul(d))
        .and_then(|x| x.checked_mul(8))
        .ok_or_else(|| corrupt("size overflow".into()))?;
    let floats = cur.take(n, "member vectors")?;
    let hash = ConfigHash(cur.take(32, "config hash")?.try_into().unwrap());
    if cur.pos != data.len() {
        return Err(corrupt(format!("{} trailing bytes", data.len() - cur.pos)));
    }
    if let Some(expected) = expected {
        hash.verify(expected)?;
    }
    let values: Vec<f64> = floats
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let orbits = header
        .templates
        .into_iter()
        .enumerate()
        .map(|(i, meta)| TemplateOrbit {
            template_id: meta.template_id,
            source_track: meta.source_track,
            dim: d,
            members: values[i * m * d..(i + 1) * m * d].to_vec(),
            spec: header.spec.clone(),
        })
        .collect();
    TemplateBank::new(orbits, &header.layer_tag, hash).map_err(|e| match e {
        Error::Invariant(cause) => corrupt(format!("invariant violated: {cause}")),
        other => other,
    })
}
