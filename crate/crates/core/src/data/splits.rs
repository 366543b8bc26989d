//! Train/test fold planning.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::data::manifest::{Dataset, Role};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitScheme {
    /// One fold per video.
    LoocvVideo,
    /// One fold per group id; the whole group is held out together.
    LoocvGroup,
    /// One fold per split tag found in the manifest.
    Predefined,
}

impl SplitScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitScheme::LoocvVideo => "loocv_video",
            SplitScheme::LoocvGroup => "loocv_group",
            SplitScheme::Predefined => "predefined",
        }
    }
}

impl fmt::Display for SplitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loocv_video" | "loocv" => Ok(SplitScheme::LoocvVideo),
            "loocv_group" => Ok(SplitScheme::LoocvGroup),
            "predefined" => Ok(SplitScheme::Predefined),
            _ => Err(Error::Config(format!(
                "unknown split scheme {s:?} (expected loocv_video, loocv_group or predefined)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Fold {
    /// Held-out video id, group id, or split tag.
    pub name: String,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SplitPlan {
    pub scheme: SplitScheme,
    pub folds: Vec<Fold>,
}

impl SplitPlan {
    /// Per fold train and test are disjoint and non-empty test; for the LOOCV
    /// schemes every id is tested exactly once across the plan.
    pub fn check(&self, dataset: &Dataset) -> Result<()> {
        let fail = |reason: String| {
            Err(Error::Scheme {
                scheme: self.scheme.to_string(),
                reason,
            })
        };
        let mut tested: BTreeMap<&str, usize> = BTreeMap::new();
        for f in &self.folds {
            let train: HashSet<&str> = f.train.iter().map(String::as_str).collect();
            if f.test.is_empty() {
                return fail(format!("fold {} has an empty test set", f.name));
            }
            if let Some(id) = f.test.iter().find(|id| train.contains(id.as_str())) {
                return fail(format!("fold {}: {id} is in both train and test", f.name));
            }
            for id in &f.test {
                *tested.entry(id).or_default() += 1;
            }
        }
        if self.scheme != SplitScheme::Predefined {
            if let Some((id, n)) = tested.iter().find(|(_, &n)| n != 1) {
                return fail(format!("{id} tested {n} times"));
            }
            if tested.len() != dataset.len() {
                return fail(format!("{} of {} videos tested", tested.len(), dataset.len()));
            }
        }
        Ok(())
    }
}

pub fn make_splits(dataset: &Dataset, scheme: SplitScheme) -> Result<SplitPlan> {
    let scheme_err = |reason: String| Error::Scheme {
        scheme: scheme.to_string(),
        reason,
    };
    if dataset.is_empty() {
        return Err(scheme_err("dataset is empty".into()));
    }
    let ids = || dataset.entries.iter().map(|e| e.video_id.clone());
    let folds = match scheme {
        SplitScheme::LoocvVideo => {
            let mut held: Vec<String> = ids().collect();
            held.sort();
            held.into_iter()
                .map(|h| Fold {
                    train: ids().filter(|id| *id != h).collect(),
                    test: vec![h.clone()],
                    name: h,
                })
                .collect()
        }
        SplitScheme::LoocvGroup => {
            if let Some(e) = dataset.entries.iter().find(|e| e.group.is_none()) {
                return Err(scheme_err(format!("{} has no group id", e.video_id)));
            }
            let groups: BTreeSet<&str> = dataset.entries.iter().filter_map(|e| e.group.as_deref()).collect();
            groups
                .into_iter()
                .map(|g| {
                    let (test, train): (Vec<_>, Vec<_>) =
                        dataset.entries.iter().partition(|e| e.group.as_deref() == Some(g));
                    Fold {
                        name: g.to_owned(),
                        train: train.into_iter().map(|e| e.video_id.clone()).collect(),
                        test: test.into_iter().map(|e| e.video_id.clone()).collect(),
                    }
                })
                .collect()
        }
        SplitScheme::Predefined => {
            if let Some(e) = dataset.entries.iter().find(|e| e.split_tags.is_empty()) {
                return Err(scheme_err(format!("{} has no split tag", e.video_id)));
            }
            let names: BTreeSet<&str> = dataset
                .entries
                .iter()
                .flat_map(|e| e.split_tags.iter().map(|t| t.name.as_str()))
                .collect();
            names
                .into_iter()
                .map(|n| {
                    let pick = |role| {
                        dataset
                            .entries
                            .iter()
                            .filter(|e| e.role_in(n) == Some(role))
                            .map(|e| e.video_id.clone())
                            .collect()
                    };
                    Fold {
                        name: n.to_owned(),
                        train: pick(Role::Train),
                        test: pick(Role::Test),
                    }
                })
                .collect()
        }
    };
    let plan = SplitPlan { scheme, folds };
    plan.check(dataset)?;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use std::path::Path;

    use super::*;

    fn ds(text: &str) -> Dataset {
        Dataset::parse(text, Path::new("."), Path::new("m")).unwrap()
    }

    #[test]
    fn loocv_video_five() {
        let d = ds("e\ta\t-\t-\tp\nb\ta\t-\t-\tp\nc\tb\t-\t-\tp\nd\tb\t-\t-\tp\na\ta\t-\t-\tp\n");
        let plan = make_splits(&d, SplitScheme::LoocvVideo).unwrap();
        assert_eq!(plan.folds.len(), 5);
        assert!(plan.folds.iter().all(|f| f.test.len() == 1 && f.train.len() == 4));
        let order: Vec<&str> = plan.folds.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(order, ["a", "b", "c", "d", "e"]);
    }

    #[test]
    fn loocv_group_three() {
        let d = ds(
            "v1\ta\tg2\t-\tp\nv2\ta\tg1\t-\tp\nv3\tb\tg3\t-\tp\nv4\tb\tg1\t-\tp\nv5\ta\tg3\t-\tp\nv6\tb\tg2\t-\tp\n",
        );
        let plan = make_splits(&d, SplitScheme::LoocvGroup).unwrap();
        assert_eq!(plan.folds.len(), 3);
        assert_eq!(plan.folds[0].test, ["v2", "v4"]);
        assert_eq!(plan.folds[1].test, ["v1", "v6"]);
        assert_eq!(plan.folds[2].test, ["v3", "v5"]);
    }

    #[test]
    fn missing_metadata() {
        let d = ds("v1\ta\tg\t-\tp\nv2\ta\t-\t-\tp\n");
        assert!(matches!(
            make_splits(&d, SplitScheme::LoocvGroup),
            Err(Error::Scheme { .. })
        ));
        assert!(matches!(
            make_splits(&d, SplitScheme::Predefined),
            Err(Error::Scheme { .. })
        ));
    }

    #[test]
    fn predefined_three_splits() {
        let d = ds("v1\ta\t-\tsplit1\tp\nv2\tb\t-\tsplit2\tp\nv3\ta\t-\tsplit3\tp\nv4\tb\t-\tsplit1\tp\nv5\ta\t-\tsplit2\tp\nv6\tb\t-\tsplit3\tp\n");
        let plan = make_splits(&d, SplitScheme::Predefined).unwrap();
        assert_eq!(plan.folds.len(), 3);
        assert_eq!(plan.folds[0].name, "split1");
        assert_eq!(plan.folds[0].test, ["v1", "v4"]);
        assert_eq!(plan.folds[0].train, ["v2", "v3", "v5", "v6"]);
    }
}
