//! Model persistence: a self-describing, versioned binary container with a
//! text metadata section and length-prefixed parameter sections. Round
//! trips are bit-exact.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::corpus::RatingScale;
use crate::error::{Error, Result};
use crate::features::{FeatureScheme, GaussianNormalizer, SchemeKind};
use crate::user_bm::{BmParams, PairWeights};

const MAGIC: &[u8; 8] = b"ORDRECM\0";
pub const ARCHIVE_VERSION: u32 = 1;

/// Everything needed to reload and serve a trained model without the
/// original configuration: the feature scheme (with normalizer), dataset
/// fingerprint and graph hyperparameters, raw id maps and the parameter
/// blocks of one or both sides.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArchive {
    pub scheme: FeatureScheme,
    pub dataset_hash: u64,
    pub k_top: usize,
    pub min_overlap: usize,
    pub variant: String,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub user_side: BmParams,
    pub item_side: Option<BmParams>,
}

fn write_section(w: &mut impl Write, name: &str, payload: &[u8]) -> Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(payload.len() as u64).to_le_bytes())?;
    w.write_all(payload)?;
    Ok(())
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(buf: &mut Vec<u8>, vs: &[f64]) {
    put_u64(buf, vs.len() as u64);
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_strings(buf: &mut Vec<u8>, vs: &[String]) {
    put_u32(buf, vs.len() as u32);
    for s in vs {
        put_u32(buf, s.len() as u32);
        buf.extend_from_slice(s.as_bytes());
    }
}

fn encode_params(p: &BmParams) -> Vec<u8> {
    let mut buf = Vec::new();
    put_u32(&mut buf, p.n_entities() as u32);
    put_u32(&mut buf, p.d() as u32);
    put_u32(&mut buf, p.a() as u32);
    put_u32(&mut buf, p.pairs.b() as u32);
    put_f64s(&mut buf, &p.hidden_bias);
    put_f64s(&mut buf, &p.input_bias);
    put_f64s(&mut buf, &p.interaction);
    put_u64(&mut buf, p.pairs.n_pairs() as u64);
    for &(lo, hi) in p.pairs.pairs() {
        put_u32(&mut buf, lo);
        put_u32(&mut buf, hi);
    }
    put_f64s(&mut buf, p.pairs.values());
    buf
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    section: &'static str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::ArchiveTruncated(format!(
                "section '{}' ends early",
                self.section
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        let bytes = self.take(n * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn strings(&mut self) -> Result<Vec<String>> {
        let n = self.u32()? as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let len = self.u32()? as usize;
            let bytes = self.take(len)?;
            out.push(String::from_utf8(bytes.to_vec()).map_err(|_| {
                Error::Archive(format!("invalid utf-8 in section '{}'", self.section))
            })?);
        }
        Ok(out)
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Archive(format!(
                "trailing bytes in section '{}'",
                self.section
            )));
        }
        Ok(())
    }
}

fn decode_params(bytes: &[u8], section: &'static str) -> Result<BmParams> {
    let mut c = Cursor {
        buf: bytes,
        pos: 0,
        section,
    };
    let n_entities = c.u32()? as usize;
    let d = c.u32()? as usize;
    let a = c.u32()? as usize;
    let b = c.u32()? as usize;
    let hidden_bias = c.f64s()?;
    let input_bias = c.f64s()?;
    let interaction = c.f64s()?;
    let n_pairs = c.u64()? as usize;
    let mut pairs = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let lo = c.u32()?;
        let hi = c.u32()?;
        pairs.push((lo, hi));
    }
    let pair_values = c.f64s()?;
    c.done()?;
    if hidden_bias.len() != d
        || input_bias.len() != n_entities * a
        || interaction.len() != n_entities * d * a
        || pair_values.len() != n_pairs * b
    {
        return Err(Error::Archive(format!(
            "inconsistent dimensions in section '{section}'"
        )));
    }
    let mut pw = PairWeights::from_pairs(n_entities, pairs, b)?;
    pw.values_mut().copy_from_slice(&pair_values);
    let mut params = BmParams::zeros(n_entities, d, a, pw);
    params.hidden_bias = hidden_bias;
    params.input_bias = input_bias;
    params.interaction = interaction;
    Ok(params)
}

fn meta_text(archive: &ModelArchive) -> String {
    let mut out = String::new();
    out.push_str(&format!("scheme={}\n", archive.scheme.kind().name()));
    let values: Vec<String> = archive
        .scheme
        .scale()
        .level_values()
        .iter()
        .map(|v| v.to_string())
        .collect();
    out.push_str(&format!("level_values={}\n", values.join(",")));
    if let Some(norm) = archive.scheme.normalizer() {
        out.push_str(&format!("normalizer_mean={}\n", norm.mean()));
        out.push_str(&format!("normalizer_std={}\n", norm.std()));
    }
    out.push_str(&format!("dataset_hash={:016x}\n", archive.dataset_hash));
    out.push_str(&format!("k_top={}\n", archive.k_top));
    out.push_str(&format!("min_overlap={}\n", archive.min_overlap));
    out.push_str(&format!("variant={}\n", archive.variant));
    out.push_str(&format!(
        "has_item_side={}\n",
        archive.item_side.is_some()
    ));
    out
}

fn parse_meta(text: &str) -> Result<HashMap<String, String>> {
    let mut map = HashMap::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Archive(format!("bad metadata line '{line}'"))
        })?;
        map.insert(k.to_string(), v.to_string());
    }
    Ok(map)
}

/// Write the archive; the file is self-describing and versioned.
pub fn save_model(archive: &ModelArchive, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&ARCHIVE_VERSION.to_le_bytes())?;
    write_section(&mut w, "meta", meta_text(archive).as_bytes())?;
    let mut ids = Vec::new();
    put_strings(&mut ids, &archive.user_ids);
    write_section(&mut w, "user_ids", &ids)?;
    let mut ids = Vec::new();
    put_strings(&mut ids, &archive.item_ids);
    write_section(&mut w, "item_ids", &ids)?;
    write_section(&mut w, "user_params", &encode_params(&archive.user_side))?;
    if let Some(item_side) = &archive.item_side {
        write_section(&mut w, "item_params", &encode_params(item_side))?;
    }
    w.flush()?;
    Ok(())
}

/// Load an archive saved by `save_model`. Truncated files, corrupted
/// length fields and unsupported versions fail without returning a partial
/// model.
pub fn load_model(path: impl AsRef<Path>) -> Result<ModelArchive> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 12 {
        return Err(Error::ArchiveTruncated("file shorter than header".into()));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Archive("not a model archive".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != ARCHIVE_VERSION {
        return Err(Error::ArchiveVersion {
            found: version,
            supported: ARCHIVE_VERSION,
        });
    }

    let mut sections: HashMap<String, Vec<u8>> = HashMap::new();
    let mut pos = 12usize;
    while pos < bytes.len() {
        let take = |pos: &mut usize, n: usize, what: &str| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(Error::ArchiveTruncated(format!("{what} cut off")));
            }
            let out = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(out)
        };
        let name_len = u32::from_le_bytes(take(&mut pos, 4, "section name length")?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len, "section name")?.to_vec())
            .map_err(|_| Error::Archive("section name is not utf-8".into()))?;
        let payload_len =
            u64::from_le_bytes(take(&mut pos, 8, "section length")?.try_into().unwrap());
        if payload_len > (bytes.len() - pos) as u64 {
            return Err(Error::ArchiveTruncated(format!(
                "payload of '{name}' cut off"
            )));
        }
        let payload = take(&mut pos, payload_len as usize, "section payload")?.to_vec();
        sections.insert(name, payload);
    }

    let meta_bytes = sections
        .remove("meta")
        .ok_or_else(|| Error::Archive("missing meta section".into()))?;
    let meta = parse_meta(
        std::str::from_utf8(&meta_bytes)
            .map_err(|_| Error::Archive("meta is not utf-8".into()))?,
    )?;
    let get = |key: &str| -> Result<&String> {
        meta.get(key)
            .ok_or_else(|| Error::Archive(format!("missing metadata key '{key}'")))
    };

    let level_values: Vec<f64> = get("level_values")?
        .split(',')
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::Archive(format!("bad level value '{s}'")))
        })
        .collect::<Result<_>>()?;
    let scale = RatingScale::new(level_values)?;
    let kind: SchemeKind = get("scheme")?.parse()?;
    let scheme = match kind {
        SchemeKind::Categorical => FeatureScheme::categorical(scale),
        SchemeKind::Ordinal => FeatureScheme::ordinal(scale),
        SchemeKind::Gaussian => {
            let mean: f64 = get("normalizer_mean")?
                .parse()
                .map_err(|_| Error::Archive("bad normalizer mean".into()))?;
            let std: f64 = get("normalizer_std")?
                .parse()
                .map_err(|_| Error::Archive("bad normalizer std".into()))?;
            FeatureScheme::gaussian(scale, GaussianNormalizer::new(mean, std)?)
        }
    };
    let dataset_hash = u64::from_str_radix(get("dataset_hash")?, 16)
        .map_err(|_| Error::Archive("bad dataset hash".into()))?;
    let k_top: usize = get("k_top")?
        .parse()
        .map_err(|_| Error::Archive("bad k_top".into()))?;
    let min_overlap: usize = get("min_overlap")?
        .parse()
        .map_err(|_| Error::Archive("bad min_overlap".into()))?;
    let variant = get("variant")?.clone();
    let has_item_side = get("has_item_side")? == "true";

    let user_ids = {
        let bytes = sections
            .remove("user_ids")
            .ok_or_else(|| Error::Archive("missing user_ids section".into()))?;
        let mut c = Cursor {
            buf: &bytes,
            pos: 0,
            section: "user_ids",
        };
        let v = c.strings()?;
        c.done()?;
        v
    };
    let item_ids = {
        let bytes = sections
            .remove("item_ids")
            .ok_or_else(|| Error::Archive("missing item_ids section".into()))?;
        let mut c = Cursor {
            buf: &bytes,
            pos: 0,
            section: "item_ids",
        };
        let v = c.strings()?;
        c.done()?;
        v
    };
    let user_side = decode_params(
        &sections
            .remove("user_params")
            .ok_or_else(|| Error::Archive("missing user_params section".into()))?,
        "user_params",
    )?;
    let item_side = if has_item_side {
        Some(decode_params(
            &sections
                .remove("item_params")
                .ok_or_else(|| Error::Archive("missing item_params section".into()))?,
            "item_params",
        )?)
    } else {
        None
    };
    Ok(ModelArchive {
        scheme,
        dataset_hash,
        k_top,
        min_overlap,
        variant,
        user_ids,
        item_ids,
        user_side,
        item_side,
    })
}
