//! Line-oriented dataset manifest: one JSON record per line. Clip paths are
//! relative to the manifest's directory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

pub const MIN_DURATION_S: f64 = 3.0;
pub const MAX_DURATION_S: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Vocal,
    Accompaniment,
    Solo,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Vocal => "vocal",
            Role::Accompaniment => "accompaniment",
            Role::Solo => "solo",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub clip_path: PathBuf,
    pub role: Role,
    pub pair_id: u64,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub melody_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timbre_label: Option<String>,
}

/// A vocal clip and the accompaniment it is paired with.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair<'m> {
    pub vocal: &'m ManifestRecord,
    pub accompaniment: &'m ManifestRecord,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    /// Checks durations and pair links. Paths are checked on load.
    pub fn validate(&self) -> anyhow::Result<()> {
        let mut roles: BTreeMap<u64, Vec<Role>> = BTreeMap::new();
        for r in &self.records {
            if !(MIN_DURATION_S..=MAX_DURATION_S).contains(&r.duration_s) {
                bail!(
                    "{}: duration {} s outside [{MIN_DURATION_S}, {MAX_DURATION_S}]",
                    r.clip_path.display(),
                    r.duration_s
                );
            }
            roles.entry(r.pair_id).or_default().push(r.role);
        }
        for (id, mut rs) in roles {
            rs.sort();
            let ok = matches!(rs.as_slice(), [Role::Vocal, Role::Accompaniment] | [Role::Solo]);
            if !ok {
                bail!("pair {id} has roles {rs:?}; expected one vocal with one accompaniment, or one solo clip");
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serialises"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("manifest line {}", i + 1)))
            .collect::<anyhow::Result<_>>()?;
        let m = Manifest { records };
        m.validate()?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        self.validate()?;
        std::fs::write(path, self.to_jsonl()).with_context(|| format!("writing {}", path.display()))
    }

    /// Reads and validates a manifest, requiring every clip to exist.
    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let m = Self::parse(&text).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for r in &m.records {
            let p = base.join(&r.clip_path);
            if !p.is_file() {
                bail!("manifest {} lists missing clip {}", path.display(), p.display());
            }
        }
        Ok(m)
    }

    /// Vocal/accompaniment pairs ordered by pair id.
    pub fn pairs(&self) -> Vec<Pair<'_>> {
        let mut by_id: BTreeMap<u64, (Option<&ManifestRecord>, Option<&ManifestRecord>)> = BTreeMap::new();
        for r in &self.records {
            let e = by_id.entry(r.pair_id).or_default();
            match r.role {
                Role::Vocal => e.0 = Some(r),
                Role::Accompaniment => e.1 = Some(r),
                Role::Solo => {}
            }
        }
        by_id
            .into_values()
            .filter_map(|(v, a)| Some(Pair { vocal: v?, accompaniment: a? }))
            .collect()
    }

    /// Clips carrying a melody on their own: vocals and solos.
    pub fn melody_clips(&self) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(|r| r.role != Role::Accompaniment)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(path: &str, role: Role, pair_id: u64, duration_s: f64) -> ManifestRecord {
        ManifestRecord {
            clip_path: path.into(),
            role,
            pair_id,
            duration_s,
            melody_label: Some("m0".into()),
            timbre_label: None,
        }
    }

    fn sample() -> Manifest {
        Manifest {
            records: vec![
                record("v0.wav", Role::Vocal, 0, 3.0),
                record("a0.wav", Role::Accompaniment, 0, 3.0),
                record("s1.wav", Role::Solo, 1, 30.0),
            ],
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let m = sample();
        let text = m.to_jsonl();
        assert_eq!(text.lines().count(), 3);
        assert!(!text.contains("timbre_label"));
        assert_eq!(Manifest::parse(&text).unwrap(), m);
    }

    #[test]
    fn rejects_bad_durations_and_links() {
        let mut m = sample();
        m.records[2].duration_s = 2.5;
        assert!(m.validate().is_err());
        let mut m = sample();
        m.records[1].pair_id = 5;
        assert!(m.validate().is_err());
        let mut m = sample();
        m.records.push(record("v9.wav", Role::Vocal, 0, 3.0));
        assert!(m.validate().is_err());
    }

    #[test]
    fn pairs_and_melody_clips() {
        let m = sample();
        let pairs = m.pairs();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].vocal.clip_path, PathBuf::from("v0.wav"));
        assert_eq!(m.melody_clips().count(), 2);
    }
}
