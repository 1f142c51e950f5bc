//! Dataset storage: a binary archive of named arrays plus a JSON-Lines
//! manifest, both fully determined by `(seed, config)`.
//!
//! Only the irreducible per-record data is stored — the PNG-compressed
//! render, the binary saliency masks, the 48 pose/shape parameters, τ, and
//! the scene offset. Joints, heatmaps, and flattened representation vectors
//! are pure functions of those and are regenerated on load, which keeps the
//! archive small and makes "stored" and "recomputed" ground truth identical
//! by construction.

use image::ImageEncoder;
use ndarray::{Array1, Array3, ArrayD};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::archive::{hex, Archive};
use crate::hand::Template;
use crate::repr::{flatten, unflatten, ReprKind, Unflattened};
use crate::synth::{build_records, SampleRecord, SynthConfig, SynthStats};
use crate::{Error, Result};

/// A loaded (or freshly built) dataset split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<SampleRecord>,
    pub config: SynthConfig,
    pub seed: u64,
    pub stats: SynthStats,
}

/// Stable hash of a synthesis configuration (hex SHA-256 of its canonical
/// JSON form). Stamped into archives and manifests.
pub fn config_hash(config: &SynthConfig) -> Result<String> {
    let json = serde_json::to_string(config)?;
    Ok(crate::archive::sha256_hex(json.as_bytes()))
}

/// Encodes a `[3, H, W]` image as PNG bytes (lossless).
pub fn encode_png(image: &Array3<u8>) -> Result<Vec<u8>> {
    let (c, h, w) = image.dim();
    if c != 3 {
        return Err(Error::Image(format!("expected 3 channels, got {c}")));
    }
    let mut interleaved = Vec::with_capacity(3 * h * w);
    for v in 0..h {
        for u in 0..w {
            for ch in 0..3 {
                interleaved.push(image[[ch, v, u]]);
            }
        }
    }
    let mut bytes = Vec::new();
    image::codecs::png::PngEncoder::new(&mut bytes)
        .write_image(
            &interleaved,
            w as u32,
            h as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| Error::Image(e.to_string()))?;
    Ok(bytes)
}

/// Decodes PNG bytes back into a `[3, H, W]` image.
pub fn decode_png(bytes: &[u8]) -> Result<Array3<u8>> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Image(e.to_string()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Array3::zeros((3, h, w));
    for (u, v, p) in img.enumerate_pixels() {
        for ch in 0..3 {
            out[[ch, v as usize, u as usize]] = p.0[ch];
        }
    }
    Ok(out)
}

fn record_prefix(index: u64) -> String {
    format!("r{index:06}")
}

fn insert_record(archive: &mut Archive, r: &SampleRecord, template: &Template) {
    let p = record_prefix(r.index);
    let png = encode_png(&r.image).expect("render images are always 3-channel");
    archive.insert(format!("{p}/image_png"), Array1::from_vec(png).into_dyn());
    archive.insert(format!("{p}/saliency"), r.saliency.clone().into_dyn());
    archive.insert(
        format!("{p}/params"),
        Array1::from_vec(flatten(&r.state, template, ReprKind::Params)).into_dyn(),
    );
    archive.insert(
        format!("{p}/tau"),
        Array1::from_vec(r.state.tau.to_vec()).into_dyn(),
    );
    archive.insert(
        format!("{p}/offset"),
        Array1::from_vec(r.scene_offset.to_vec()).into_dyn(),
    );
    archive.insert(
        format!("{p}/stats"),
        Array1::from_vec(vec![
            r.attempts as f64,
            r.final_depth,
            r.wrist_distance_sampled,
        ])
        .into_dyn(),
    );
}

fn extract_record(archive: &Archive, index: u64, template: &Template) -> Result<SampleRecord> {
    let p = record_prefix(index);
    let png = archive.get_u8(&format!("{p}/image_png"))?;
    let image = decode_png(png.as_slice().ok_or_else(|| {
        Error::Archive("png entry is not contiguous".into())
    })?)?;
    let saliency_d: &ArrayD<u8> = archive.get_u8(&format!("{p}/saliency"))?;
    let saliency = saliency_d
        .clone()
        .into_dimensionality::<ndarray::Ix3>()
        .map_err(|e| Error::Archive(format!("saliency entry: {e}")))?;
    let params = archive.get_f64(&format!("{p}/params"))?;
    let tau = archive.get_f64(&format!("{p}/tau"))?;
    let offset = archive.get_f64(&format!("{p}/offset"))?;
    let stats = archive.get_f64(&format!("{p}/stats"))?;
    if tau.len() != 3 || offset.len() != 3 || stats.len() != 3 {
        return Err(Error::Archive(format!("record {index} has malformed fields")));
    }
    let tau = [tau[0], tau[1], tau[2]];
    let state = match unflatten(
        ReprKind::Params,
        params.as_slice().ok_or_else(|| Error::Archive("params not contiguous".into()))?,
        tau,
    )? {
        Unflattened::Params(s) => s,
        _ => unreachable!("params kind unflattens to params"),
    };
    let _ = template;
    Ok(SampleRecord {
        state,
        scene_offset: [offset[0], offset[1], offset[2]],
        image,
        saliency,
        index,
        attempts: stats[0] as u32,
        final_depth: stats[1],
        wrist_distance_sampled: stats[2],
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ArchiveMeta {
    kind: String,
    version: u32,
    n: usize,
    seed: u64,
    config: SynthConfig,
    config_hash: String,
    stats: SynthStats,
}

/// First line of the manifest: the build summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub kind: String,
    pub version: u32,
    pub n: usize,
    pub seed: u64,
    pub config_hash: String,
    pub accepted: usize,
    pub attempts: usize,
    pub rejection_rate: f64,
    pub archive: String,
    pub archive_sha256: String,
}

/// One manifest line per record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub index: u64,
    pub attempts: u32,
    pub final_depth: f64,
    pub wrist_distance_sampled: f64,
}

/// Archive path for a dataset stem (`<stem>.bmar`).
pub fn archive_path(stem: &std::path::Path) -> std::path::PathBuf {
    stem.with_extension("bmar")
}

/// Manifest path for a dataset stem (`<stem>.jsonl`).
pub fn manifest_path(stem: &std::path::Path) -> std::path::PathBuf {
    stem.with_extension("jsonl")
}

/// Writes `<stem>.bmar` (binary arrays) and `<stem>.jsonl` (manifest).
pub fn save_dataset(stem: impl AsRef<std::path::Path>, ds: &Dataset) -> Result<()> {
    let stem = stem.as_ref();
    let template = Template::builtin();
    let mut archive = Archive::new();
    for r in &ds.records {
        insert_record(&mut archive, r, template);
    }
    let meta = ArchiveMeta {
        kind: "two-hand-dataset".into(),
        version: 1,
        n: ds.records.len(),
        seed: ds.seed,
        config: ds.config.clone(),
        config_hash: config_hash(&ds.config)?,
        stats: ds.stats,
    };
    archive.set_meta_json(&serde_json::to_value(&meta)?)?;
    archive.save(archive_path(stem))?;

    // Hash the exact bytes that landed on disk.
    let bytes = std::fs::read(archive_path(stem))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let archive_sha256 = hex(&hasher.finalize());

    let header = ManifestHeader {
        kind: "dataset-manifest".into(),
        version: 1,
        n: ds.records.len(),
        seed: ds.seed,
        config_hash: meta.config_hash.clone(),
        accepted: ds.stats.accepted,
        attempts: ds.stats.attempts,
        rejection_rate: ds.stats.rejection_rate,
        archive: archive_path(stem)
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        archive_sha256,
    };
    let mut manifest = serde_json::to_string(&header)?;
    manifest.push('\n');
    for r in &ds.records {
        manifest.push_str(&serde_json::to_string(&ManifestRecord {
            index: r.index,
            attempts: r.attempts,
            final_depth: r.final_depth,
            wrist_distance_sampled: r.wrist_distance_sampled,
        })?);
        manifest.push('\n');
    }
    std::fs::write(manifest_path(stem), manifest)?;
    Ok(())
}

/// Loads a dataset saved by [`save_dataset`] from its stem.
pub fn load_dataset(stem: impl AsRef<std::path::Path>) -> Result<Dataset> {
    let stem = stem.as_ref();
    let template = Template::builtin();
    let archive = Archive::load(archive_path(stem))?;
    let meta: ArchiveMeta = serde_json::from_value(
        archive
            .meta_json()?
            .ok_or_else(|| Error::Archive("dataset archive has no metadata".into()))?,
    )?;
    if meta.kind != "two-hand-dataset" || meta.version != 1 {
        return Err(Error::Archive(format!(
            "unsupported dataset archive: kind {} version {}",
            meta.kind, meta.version
        )));
    }
    let mut records = Vec::with_capacity(meta.n);
    for i in 0..meta.n as u64 {
        records.push(extract_record(&archive, i, template)?);
    }
    Ok(Dataset {
        records,
        config: meta.config,
        seed: meta.seed,
        stats: meta.stats,
    })
}

/// Reads the manifest header line of a saved dataset.
pub fn read_manifest_header(stem: impl AsRef<std::path::Path>) -> Result<ManifestHeader> {
    let text = std::fs::read_to_string(manifest_path(stem.as_ref()))?;
    let first = text
        .lines()
        .next()
        .ok_or_else(|| Error::Archive("empty manifest".into()))?;
    Ok(serde_json::from_str(first)?)
}

/// Builds `n` records and writes the dataset to `<stem>.bmar` +
/// `<stem>.jsonl` in one step.
pub fn build_dataset(
    n: usize,
    seed: u64,
    config: &SynthConfig,
    stem: impl AsRef<std::path::Path>,
) -> Result<Dataset> {
    let template = Template::builtin();
    let (records, stats) = build_records(n, seed, config, template)?;
    let ds = Dataset {
        records,
        config: config.clone(),
        seed,
        stats,
    };
    save_dataset(stem, &ds)?;
    Ok(ds)
}
