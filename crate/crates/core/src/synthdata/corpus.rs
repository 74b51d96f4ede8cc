use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::motion::{sample_pose_sequence, BodyShape};
use super::render::render_frame;
use super::{AttributeLabels, Ethnicity, FrameRecord, Gender, SignerSpec, SkinTone};
use crate::error::{param, Error, Result};
use crate::imageops::{mask_from_png_bytes, mask_to_png_bytes, rgb_from_png_bytes, to_png_bytes};
use crate::posekit::{read_pose_rows, write_pose_rows, PoseRow};

pub const MANIFEST_VERSION: u32 = 1;
const PARTS: [&str; 3] = ["head", "hand", "torso"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub signers: usize,
    pub frames: usize,
    pub size: usize,
    pub seed: u64,
    pub amplitude: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            signers: 32,
            frames: 64,
            size: 64,
            seed: 0,
            amplitude: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignerEntry {
    pub id: String,
    pub spec: SignerSpec,
}

/// One frame's files, relative to the corpus directory, with their digests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub signer_id: String,
    pub t: usize,
    /// Row index in `poses.jsonl`.
    pub pose_row: u64,
    pub attributes: AttributeLabels,
    pub image: String,
    pub masks: [String; 3],
    pub sha256: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub version: u32,
    pub seed: u64,
    pub config: CorpusConfig,
    pub signers: Vec<SignerEntry>,
    pub records: Vec<RecordEntry>,
    /// `attribute:value` → record count.
    pub attribute_counts: BTreeMap<String, usize>,
    pub poses_sha256: String,
}

impl CorpusManifest {
    pub fn signer(&self, id: &str) -> Option<&SignerSpec> {
        self.signers.iter().find(|s| s.id == id).map(|s| &s.spec)
    }

    /// Recomputes counts from the records.
    pub fn count_attributes(records: &[RecordEntry]) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for r in records {
            for k in r.attributes.value_keys() {
                *counts.entry(k).or_insert(0) += 1;
            }
        }
        counts
    }
}

/// Manifest plus the decoded frames, in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub frames: Vec<FrameRecord>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Keeps the records for which `keep` holds; counts are recomputed.
    pub fn filtered(&self, mut keep: impl FnMut(usize, &FrameRecord) -> bool) -> Corpus {
        let mut records = Vec::new();
        let mut frames = Vec::new();
        for (i, (r, f)) in self.manifest.records.iter().zip(&self.frames).enumerate() {
            if keep(i, f) {
                records.push(r.clone());
                frames.push(f.clone());
            }
        }
        let mut manifest = self.manifest.clone();
        manifest.attribute_counts = CorpusManifest::count_attributes(&records);
        manifest.records = records;
        Corpus { manifest, frames }
    }
}

/// Signer `i` cycles through the vocabulary: tone fastest, then gender, then
/// ethnicity. Clothing and body scale come from the signer's own stream.
pub fn signer_spec(index: usize, rng: &mut impl Rng) -> SignerSpec {
    let labels = AttributeLabels {
        skin_tone: SkinTone::ALL[index % 4],
        gender: Gender::ALL[(index / 4) % 2],
        ethnicity: Ethnicity::ALL[(index / 8) % 2],
    };
    // saturated hue, kept away from the skin palette's oranges
    let hue: f32 = rng.gen_range(150.0..330.0);
    let clothing_color = hsv(hue, rng.gen_range(0.5..0.9), rng.gen_range(0.55..0.95));
    SignerSpec {
        labels,
        clothing_color,
        body_scale: rng.gen_range(0.95..1.05),
    }
}

fn hsv(h: f32, s: f32, v: f32) -> [f32; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

pub fn signer_id(index: usize) -> String {
    format!("s{index:03}")
}

fn rel_image(signer: &str, t: usize) -> String {
    format!("frames/{signer}/{t}.png")
}

fn rel_mask(signer: &str, t: usize, part: &str) -> String {
    format!("masks/{signer}/{t}_{part}.png")
}

/// Renders the corpus in memory. Signer `i` draws from stream `i` of a
/// ChaCha8 generator keyed by the seed, so the output is bit-reproducible.
pub fn generate_corpus(config: &CorpusConfig) -> Result<Corpus> {
    if config.size < 16 {
        return Err(param(format!("corpus size {} below 16 px", config.size)));
    }
    if config.signers > 0 && config.frames == 0 {
        return Err(param("frames per signer must be at least 1"));
    }
    let mut signers = Vec::new();
    let mut records = Vec::new();
    let mut frames = Vec::new();
    for i in 0..config.signers {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(i as u64);
        let spec = signer_spec(i, &mut rng);
        let id = signer_id(i);
        let body = BodyShape::for_signer(&spec, config.size);
        let seq = sample_pose_sequence(&mut rng, config.frames, config.amplitude, &body)?;
        for (t, pose) in seq.frames().iter().enumerate() {
            let frame = render_frame(&spec, pose, &id)?;
            records.push(RecordEntry {
                signer_id: id.clone(),
                t,
                pose_row: records.len() as u64,
                attributes: spec.labels,
                image: rel_image(&id, t),
                masks: PARTS.map(|p| rel_mask(&id, t, p)),
                sha256: BTreeMap::new(),
            });
            frames.push(frame);
        }
        signers.push(SignerEntry { id, spec });
    }
    let attribute_counts = CorpusManifest::count_attributes(&records);
    let mut corpus = Corpus {
        manifest: CorpusManifest {
            version: MANIFEST_VERSION,
            seed: config.seed,
            config: *config,
            signers,
            records,
            attribute_counts,
            poses_sha256: String::new(),
        },
        frames,
    };
    fill_checksums(&mut corpus)?;
    Ok(corpus)
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn encoded_files(frame: &FrameRecord, entry: &RecordEntry) -> Result<Vec<(String, Vec<u8>)>> {
    let masks = [&frame.mask_head, &frame.mask_hand, &frame.mask_torso];
    let mut files = vec![(entry.image.clone(), to_png_bytes(&frame.image)?)];
    for (rel, m) in entry.masks.iter().zip(masks) {
        files.push((rel.clone(), mask_to_png_bytes(m)?));
    }
    Ok(files)
}

fn pose_rows(corpus: &Corpus) -> Vec<PoseRow> {
    corpus
        .manifest
        .records
        .iter()
        .zip(&corpus.frames)
        .map(|(r, f)| PoseRow::from_pose(r.pose_row, &f.pose))
        .collect()
}

fn pose_bytes(rows: &[PoseRow]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, row).map_err(|e| Error::Numerical(e.to_string()))?;
        out.push(b'\n');
    }
    Ok(out)
}

fn fill_checksums(corpus: &mut Corpus) -> Result<()> {
    for (entry, frame) in corpus.manifest.records.iter_mut().zip(&corpus.frames) {
        entry.sha256 = encoded_files(frame, entry)?
            .into_iter()
            .map(|(rel, bytes)| (rel, digest(&bytes)))
            .collect();
    }
    corpus.manifest.poses_sha256 = digest(&pose_bytes(&pose_rows(corpus))?);
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `manifest.json`, per-frame PNGs, part masks and `poses.jsonl`.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<CorpusManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (entry, frame) in corpus.manifest.records.iter().zip(&corpus.frames) {
        for (rel, bytes) in encoded_files(frame, entry)? {
            write_file(&dir.join(rel), &bytes)?;
        }
    }
    write_pose_rows(&dir.join("poses.jsonl"), &pose_rows(corpus))?;
    let json = serde_json::to_vec_pretty(&corpus.manifest).map_err(|e| Error::io(dir.join("manifest.json"), e))?;
    write_file(&dir.join("manifest.json"), &json)?;
    Ok(corpus.manifest.clone())
}

fn read_checked(dir: &Path, rel: &str, expected: Option<&String>) -> Result<(PathBuf, Vec<u8>)> {
    let path = dir.join(rel);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    match expected {
        Some(h) if *h == digest(&bytes) => Ok((path, bytes)),
        _ => Err(Error::Checksum(path)),
    }
}

pub fn read_manifest(dir: &Path) -> Result<CorpusManifest> {
    let path = dir.join("manifest.json");
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CorpusManifest = serde_json::from_slice(&bytes).map_err(|e| Error::io(&path, e))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::io(&path, format!("unsupported manifest version {}", manifest.version)));
    }
    if manifest.attribute_counts != CorpusManifest::count_attributes(&manifest.records) {
        return Err(Error::io(&path, "attribute counts disagree with records"));
    }
    Ok(manifest)
}

/// Reads and verifies every file named by the manifest.
pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let manifest = read_manifest(dir)?;
    let (pose_path, pose_bytes) = read_checked(dir, "poses.jsonl", Some(&manifest.poses_sha256))?;
    drop(pose_bytes);
    let rows: BTreeMap<u64, PoseRow> = read_pose_rows(&pose_path)?.into_iter().map(|r| (r.frame, r)).collect();
    let size = manifest.config.size;
    let mut frames = Vec::with_capacity(manifest.records.len());
    for entry in &manifest.records {
        let (path, bytes) = read_checked(dir, &entry.image, entry.sha256.get(&entry.image))?;
        let image = rgb_from_png_bytes(&bytes, &path)?;
        let mut masks = Vec::with_capacity(3);
        for rel in &entry.masks {
            let (path, bytes) = read_checked(dir, rel, entry.sha256.get(rel))?;
            masks.push(mask_from_png_bytes(&bytes, &path)?);
        }
        let row = rows
            .get(&entry.pose_row)
            .ok_or_else(|| Error::io(&pose_path, format!("missing pose row {}", entry.pose_row)))?;
        let pose = row.to_pose((size, size)).map_err(|e| Error::io(&pose_path, e))?;
        let mask_torso = masks.pop().expect("three masks");
        let mask_hand = masks.pop().expect("three masks");
        let mask_head = masks.pop().expect("three masks");
        frames.push(FrameRecord {
            image,
            pose,
            mask_head,
            mask_hand,
            mask_torso,
            attributes: entry.attributes,
            signer_id: entry.signer_id.clone(),
        });
    }
    Ok(Corpus { manifest, frames })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusConfig {
        CorpusConfig {
            signers: 3,
            frames: 2,
            size: 32,
            seed: 7,
            amplitude: 1.0,
        }
    }

    #[test]
    fn generation_is_reproducible() {
        assert_eq!(generate_corpus(&small()).unwrap(), generate_corpus(&small()).unwrap());
        let other = generate_corpus(&CorpusConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(other.frames, generate_corpus(&small()).unwrap().frames);
    }

    #[test]
    fn counts_match_records() {
        let c = generate_corpus(&small()).unwrap();
        assert_eq!(c.manifest.attribute_counts["skin_tone:tone1"], 2);
        assert_eq!(c.manifest.attribute_counts["gender_proxy:A"], 6);
        assert_eq!(c.manifest.records.len(), 6);
    }

    #[test]
    fn empty_corpus_is_valid() {
        let c = generate_corpus(&CorpusConfig { signers: 0, ..small() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_corpus(&c, dir.path()).unwrap();
        let back = read_corpus(dir.path()).unwrap();
        assert!(back.is_empty());
        assert_eq!(back, c);
    }

    #[test]
    fn round_trip_and_corruption() {
        let c = generate_corpus(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let written = write_corpus(&c, dir.path()).unwrap();
        let back = read_corpus(dir.path()).unwrap();
        assert_eq!(back.manifest, written);
        assert_eq!(back, c);

        let victim = dir.path().join(&c.manifest.records[3].image);
        let mut bytes = std::fs::read(&victim).unwrap();
        let n = bytes.len();
        bytes[n / 2] ^= 0xff;
        std::fs::write(&victim, bytes).unwrap();
        match read_corpus(dir.path()) {
            Err(Error::Checksum(p)) => assert_eq!(p, victim),
            other => panic!("expected checksum error, got {other:?}"),
        }
        std::fs::remove_file(&victim).unwrap();
        match read_corpus(dir.path()) {
            Err(Error::Io { path, .. }) => assert_eq!(path, victim),
            other => panic!("expected io error, got {other:?}"),
        }
    }
}
