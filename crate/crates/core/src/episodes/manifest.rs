use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;

use super::{parse_strokes, Episode, EpisodeError, StageSource};

pub const MANIFEST_FILE: &str = "manifest";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhotoRecord {
    pub id: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeRecord {
    pub id: String,
    pub photo_id: String,
    /// Stroke file, or a directory of `NNN.png` stage images.
    pub strokes: PathBuf,
    pub split: Split,
}

/// Gallery photos and episodes of one dataset directory. Paths are
/// relative to `root`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub photos: Vec<PhotoRecord>,
    pub episodes: Vec<EpisodeRecord>,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut out = String::from("# mgrl dataset manifest\n");
        for p in &self.photos {
            out.push_str(&format!("photo {} {}\n", p.id, p.path.display()));
        }
        for e in &self.episodes {
            out.push_str(&format!(
                "episode {} {} {} {}\n",
                e.id,
                e.photo_id,
                e.strokes.display(),
                e.split
            ));
        }
        out
    }

    pub fn parse(root: &Path, text: &str) -> Result<Self, EpisodeError> {
        let mut photos = Vec::new();
        let mut episodes = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let malformed = |reason: &str| EpisodeError::MalformedManifest {
                line: i + 1,
                reason: reason.to_string(),
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                ["photo", id, path] => photos.push(PhotoRecord {
                    id: id.to_string(),
                    path: PathBuf::from(path),
                }),
                ["episode", id, photo, strokes, split] => {
                    let split = Split::parse(split)
                        .ok_or_else(|| malformed(&format!("unknown split `{split}`")))?;
                    episodes.push(EpisodeRecord {
                        id: id.to_string(),
                        photo_id: photo.to_string(),
                        strokes: PathBuf::from(strokes),
                        split,
                    });
                }
                ["photo", ..] => return Err(malformed("expected `photo <id> <relpath>`")),
                ["episode", ..] => {
                    return Err(malformed(
                        "expected `episode <id> <photo-id> <strokes-relpath> <split>`",
                    ))
                }
                _ => return Err(malformed(&format!("unknown record `{}`", fields[0]))),
            }
        }
        Ok(DatasetManifest {
            root: root.to_path_buf(),
            photos,
            episodes,
        })
    }

    /// Structural checks: unique ids, no dangling photo ids, and no photo
    /// shared between splits.
    pub fn validate(&self) -> Result<(), EpisodeError> {
        let dup = |kind: &str, id: &str| EpisodeError::MalformedManifest {
            line: 0,
            reason: format!("duplicate {kind} id `{id}`"),
        };
        let mut photo_ids = HashSet::new();
        for p in &self.photos {
            if !photo_ids.insert(p.id.as_str()) {
                return Err(dup("photo", &p.id));
            }
        }
        let mut episode_ids = HashSet::new();
        let mut photo_split: HashMap<&str, crate::episodes::Split> = HashMap::new();
        for e in &self.episodes {
            if !episode_ids.insert(e.id.as_str()) {
                return Err(dup("episode", &e.id));
            }
            if !photo_ids.contains(e.photo_id.as_str()) {
                return Err(EpisodeError::DanglingPhotoId {
                    episode: e.id.clone(),
                    photo: e.photo_id.clone(),
                });
            }
            match photo_split.insert(&e.photo_id, e.split) {
                Some(prev) if prev != e.split => {
                    return Err(EpisodeError::MalformedManifest {
                        line: 0,
                        reason: format!(
                            "photo `{}` appears in both train and test episodes",
                            e.photo_id
                        ),
                    })
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn check_assets(&self) -> Result<(), EpisodeError> {
        for p in &self.photos {
            let path = self.root.join(&p.path);
            if !path.is_file() {
                return Err(EpisodeError::MissingAsset {
                    record: p.id.clone(),
                    path,
                });
            }
        }
        for e in &self.episodes {
            let path = self.root.join(&e.strokes);
            if !path.exists() {
                return Err(EpisodeError::MissingAsset {
                    record: e.id.clone(),
                    path,
                });
            }
        }
        Ok(())
    }

    pub fn episodes_in(&self, split: Split) -> impl Iterator<Item = &EpisodeRecord> {
        self.episodes.iter().filter(move |e| e.split == split)
    }

    /// Photos referenced by episodes of `split`, in manifest order.
    pub fn photos_in(&self, split: Split) -> Vec<&PhotoRecord> {
        let used: HashSet<&str> = self
            .episodes_in(split)
            .map(|e| e.photo_id.as_str())
            .collect();
        self.photos
            .iter()
            .filter(|p| used.contains(p.id.as_str()))
            .collect()
    }

    pub fn photo(&self, id: &str) -> Option<&PhotoRecord> {
        self.photos.iter().find(|p| p.id == id)
    }

    pub fn photo_path(&self, record: &PhotoRecord) -> PathBuf {
        self.root.join(&record.path)
    }

    /// Reads an episode's strokes or enumerates its stage images.
    pub fn load_episode(&self, record: &EpisodeRecord) -> Result<Episode, EpisodeError> {
        let path = self.root.join(&record.strokes);
        let source = if path.is_dir() {
            let mut stages: BTreeMap<u32, PathBuf> = BTreeMap::new();
            let entries = fs::read_dir(&path).map_err(|source| EpisodeError::Io {
                path: path.clone(),
                source,
            })?;
            for entry in entries {
                let entry = entry.map_err(|source| EpisodeError::Io {
                    path: path.clone(),
                    source,
                })?;
                let p = entry.path();
                let is_png = p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
                let index = p
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .and_then(|s| s.parse::<u32>().ok());
                if let (true, Some(index)) = (is_png, index) {
                    stages.insert(index, p);
                }
            }
            if stages.is_empty() {
                return Err(EpisodeError::MissingAsset {
                    record: record.id.clone(),
                    path,
                });
            }
            StageSource::Pngs(stages.into_values().collect())
        } else {
            let text = fs::read_to_string(&path).map_err(|source| EpisodeError::Io {
                path: path.clone(),
                source,
            })?;
            let strokes =
                parse_strokes(&text).map_err(|(line, reason)| EpisodeError::MalformedStrokes {
                    path: path.clone(),
                    line,
                    reason,
                })?;
            if strokes.is_empty() {
                return Err(EpisodeError::MalformedStrokes {
                    path,
                    line: 0,
                    reason: "episode has no strokes".into(),
                });
            }
            StageSource::Strokes(strokes)
        };
        Ok(Episode {
            id: record.id.clone(),
            photo_id: record.photo_id.clone(),
            split: record.split,
            source,
        })
    }

    pub fn load_episodes(&self, split: Split) -> Result<Vec<Episode>, EpisodeError> {
        self.episodes_in(split)
            .map(|e| self.load_episode(e))
            .collect()
    }

    pub fn write(&self) -> Result<(), EpisodeError> {
        let path = self.root.join(MANIFEST_FILE);
        fs::write(&path, self.to_text()).map_err(|source| EpisodeError::Io { path, source })
    }
}

/// Reads and validates `<root>/manifest`.
pub fn load_dataset(root: &Path) -> Result<DatasetManifest, EpisodeError> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|source| EpisodeError::Io { path, source })?;
    let manifest = DatasetManifest::parse(root, &text)?;
    manifest.validate()?;
    manifest.check_assets()?;
    Ok(manifest)
}

pub fn load_photo(
    manifest: &DatasetManifest,
    record: &PhotoRecord,
) -> Result<RgbImage, EpisodeError> {
    let path = manifest.photo_path(record);
    let img = image::open(&path).map_err(|source| EpisodeError::Image { path, source })?;
    Ok(img.to_rgb8())
}

const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";

/// PNG bytes of a gallery photo. PNG files are passed through untouched,
/// other formats are re-encoded.
pub fn photo_png(
    manifest: &DatasetManifest,
    record: &PhotoRecord,
) -> Result<Vec<u8>, EpisodeError> {
    let path = manifest.photo_path(record);
    let bytes = fs::read(&path).map_err(|source| EpisodeError::Io {
        path: path.clone(),
        source,
    })?;
    if bytes.starts_with(PNG_MAGIC) {
        return Ok(bytes);
    }
    let img = load_photo(manifest, record)?;
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|source| EpisodeError::Image { path, source })?;
    Ok(out.into_inner())
}
