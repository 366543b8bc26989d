//! Dataset manifests.
//!
//! One record per line, tab separated:
//!
//! ```text
//! video_id <TAB> class_name <TAB> group <TAB> split_tags <TAB> relative_path
//! ```
//!
//! Lines starting with `#` and blank lines are ignored. `group` and
//! `split_tags` may be empty or `-`. A line `@classes <TAB> name0 <TAB> name1 ...`
//! pins the class table (index = position); without it classes are indexed in
//! order of first appearance.
//!
//! `split_tags` is a comma-separated list. `name:train` / `name:test` place the
//! video in predefined split `name`; a bare `name` means "test in `name`, train
//! in every other split".

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::data::feature_file::read_feature_file;
use crate::error::{Error, Result};
use crate::fsio::read_all;
use crate::model::{ConvPooling, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitTag {
    pub name: String,
    /// `None` for a bare tag.
    pub role: Option<Role>,
}

impl SplitTag {
    fn render(&self) -> String {
        match self.role {
            None => self.name.clone(),
            Some(Role::Train) => format!("{}:train", self.name),
            Some(Role::Test) => format!("{}:test", self.name),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub video_id: String,
    pub class_name: String,
    pub class_index: usize,
    pub group: Option<String>,
    pub split_tags: Vec<SplitTag>,
    /// As written in the manifest.
    pub relative_path: String,
}

impl ManifestEntry {
    /// Role of this entry in predefined split `name`, if it takes part.
    pub fn role_in(&self, name: &str) -> Option<Role> {
        if let Some(t) = self.split_tags.iter().find(|t| t.name == name) {
            return Some(t.role.unwrap_or(Role::Test));
        }
        self.split_tags.iter().any(|t| t.role.is_none()).then_some(Role::Train)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: Vec<String>,
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths are resolved against.
    pub root: PathBuf,
}

fn optional(field: &str) -> Option<String> {
    let f = field.trim();
    (!f.is_empty() && f != "-").then(|| f.to_owned())
}

impl Dataset {
    /// Parses manifest text without touching the referenced files.
    pub fn parse(text: &str, root: &Path, source: &Path) -> Result<Self> {
        let err = |line: usize, reason: String| Error::Manifest {
            path: source.to_path_buf(),
            line,
            reason,
        };
        let mut pinned: Option<Vec<String>> = None;
        let mut classes: Vec<String> = Vec::new();
        let mut class_ix: HashMap<String, usize> = HashMap::new();
        let mut seen = HashSet::new();
        let mut entries = Vec::new();

        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields[0] == "@classes" {
                if pinned.is_some() || !entries.is_empty() {
                    return Err(err(line_no, "@classes must appear once, before any entry".into()));
                }
                let names: Vec<String> = fields[1..].iter().map(|s| s.trim().to_owned()).collect();
                if names.len() < 2 || names.iter().any(|s| s.is_empty()) {
                    return Err(err(line_no, "@classes needs at least two non-empty names".into()));
                }
                for (i, name) in names.iter().enumerate() {
                    if class_ix.insert(name.clone(), i).is_some() {
                        return Err(err(line_no, format!("class {name:?} listed twice")));
                    }
                }
                classes = names.clone();
                pinned = Some(names);
                continue;
            }
            if fields.len() != 5 {
                return Err(err(
                    line_no,
                    format!("expected 5 tab-separated fields, found {}", fields.len()),
                ));
            }
            let video_id = fields[0].trim().to_owned();
            let class_name = fields[1].trim().to_owned();
            if video_id.is_empty() || class_name.is_empty() || fields[4].trim().is_empty() {
                return Err(err(line_no, "video id, class and path are required".into()));
            }
            if !seen.insert(video_id.clone()) {
                return Err(Error::DuplicateId(video_id));
            }
            let class_index = match class_ix.get(&class_name) {
                Some(&i) => i,
                None if pinned.is_some() => {
                    return Err(err(line_no, format!("unknown class {class_name:?}")));
                }
                None => {
                    classes.push(class_name.clone());
                    class_ix.insert(class_name.clone(), classes.len() - 1);
                    classes.len() - 1
                }
            };
            let split_tags = optional(fields[3])
                .map(|s| {
                    s.split(',')
                        .map(|t| {
                            let t = t.trim();
                            let (name, role) = match t.split_once(':') {
                                None => (t, None),
                                Some((n, "train")) => (n, Some(Role::Train)),
                                Some((n, "test")) => (n, Some(Role::Test)),
                                Some((_, r)) => return Err(err(line_no, format!("unknown split role {r:?}"))),
                            };
                            if name.is_empty() {
                                return Err(err(line_no, "empty split tag".into()));
                            }
                            Ok(SplitTag {
                                name: name.to_owned(),
                                role,
                            })
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .transpose()?
                .unwrap_or_default();
            entries.push(ManifestEntry {
                video_id,
                class_name,
                class_index,
                group: optional(fields[2]),
                split_tags,
                relative_path: fields[4].trim().to_owned(),
            });
        }
        Ok(Self {
            classes,
            entries,
            root: root.to_path_buf(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn path_of(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.relative_path)
    }

    pub fn index_of(&self, video_id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.video_id == video_id)
    }

    /// Reads every feature file (in parallel, results in manifest order) and
    /// cross-checks each file's id and label against its entry.
    pub fn load_samples(&self, pooling: ConvPooling) -> Result<Vec<Sample>> {
        self.entries
            .par_iter()
            .map(|e| {
                let path = self.path_of(e);
                let file = read_feature_file(&path)?;
                if file.label as usize != e.class_index || file.video_id != e.video_id {
                    return Err(Error::Sample {
                        video_id: e.video_id.clone(),
                        source: Box::new(Error::Consistency(format!(
                            "{} holds ({:?}, label {}) but the manifest says ({:?}, label {})",
                            path.display(),
                            file.video_id,
                            file.label,
                            e.video_id,
                            e.class_index
                        ))),
                    });
                }
                file.to_sample(pooling)
            })
            .collect()
    }

    /// Renders back to manifest text, with an `@classes` line.
    pub fn to_manifest_string(&self) -> String {
        let mut out = String::from("# video_id\tclass\tgroup\tsplit_tags\tpath\n@classes");
        for c in &self.classes {
            out.push('\t');
            out.push_str(c);
        }
        out.push('\n');
        for e in &self.entries {
            let tags: Vec<String> = e.split_tags.iter().map(SplitTag::render).collect();
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                e.video_id,
                e.class_name,
                e.group.as_deref().unwrap_or("-"),
                if tags.is_empty() {
                    "-".to_owned()
                } else {
                    tags.join(",")
                },
                e.relative_path
            );
        }
        out
    }
}

/// Parses a manifest file and checks that every referenced feature file exists.
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let bytes = read_all(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::Manifest {
        path: path.to_path_buf(),
        line: 0,
        reason: "not valid UTF-8".into(),
    })?;
    let root = path.parent().unwrap_or(Path::new("."));
    let ds = Dataset::parse(&text, root, path)?;
    let missing: Vec<String> = ds
        .entries
        .iter()
        .filter(|e| !ds.path_of(e).is_file())
        .map(|e| format!("{} ({})", e.video_id, e.relative_path))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingFiles(missing));
    }
    Ok(ds)
}
