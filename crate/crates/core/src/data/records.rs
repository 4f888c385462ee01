use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest absolute yaw, in degrees, still counted as frontal.
pub const FRONTAL_TOLERANCE: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Thermal,
    Visible,
}

impl Domain {
    /// Domain label for the classifier: visible is 1, thermal is 0.
    pub fn label(self) -> f64 {
        match self {
            Domain::Visible => 1.0,
            Domain::Thermal => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Thermal => "thermal",
            Domain::Visible => "visible",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "thermal" => Ok(Domain::Thermal),
            "visible" => Ok(Domain::Visible),
            other => Err(format!("unknown domain `{other}` (expected thermal or visible)")),
        }
    }
}

/// One manifest row. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FaceRecord {
    pub path: PathBuf,
    pub identity: String,
    pub domain: Domain,
    pub pose: f64,
    pub frontal: bool,
    pub landmarks: Option<PathBuf>,
}

impl FaceRecord {
    pub fn is_profile(&self) -> bool {
        !self.frontal
    }
}

/// Record indices of one identity.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IdentityRecords {
    pub visible_frontal: Vec<usize>,
    pub visible_profile: Vec<usize>,
    pub thermal_frontal: Vec<usize>,
    pub thermal_profile: Vec<usize>,
}

impl IdentityRecords {
    /// Every thermal record, frontal first.
    pub fn thermal(&self) -> Vec<usize> {
        self.thermal_frontal
            .iter()
            .chain(&self.thermal_profile)
            .copied()
            .collect()
    }
}

/// A parsed, validated manifest.
#[derive(Clone, Debug)]
pub struct Manifest {
    pub path: PathBuf,
    pub records: Vec<FaceRecord>,
    pub identities: BTreeMap<String, IdentityRecords>,
}

impl Manifest {
    /// Directory that record paths are relative to.
    pub fn root(&self) -> &Path {
        self.path.parent().unwrap_or(Path::new("."))
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root().join(rel)
    }

    pub fn num_identities(&self) -> usize {
        self.identities.len()
    }

    /// Builds the per-identity index and checks the pairing invariant.
    pub fn from_records(path: PathBuf, records: Vec<FaceRecord>) -> Result<Self> {
        let mut identities: BTreeMap<String, IdentityRecords> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            let entry = identities.entry(r.identity.clone()).or_default();
            match (r.domain, r.frontal) {
                (Domain::Visible, true) => entry.visible_frontal.push(i),
                (Domain::Visible, false) => entry.visible_profile.push(i),
                (Domain::Thermal, true) => entry.thermal_frontal.push(i),
                (Domain::Thermal, false) => entry.thermal_profile.push(i),
            }
        }
        let unpaired: Vec<String> = identities
            .iter()
            .filter(|(_, ids)| !ids.thermal_profile.is_empty() && ids.visible_frontal.is_empty())
            .map(|(name, _)| name.clone())
            .collect();
        if !unpaired.is_empty() {
            return Err(Error::Unpaired(unpaired));
        }
        Ok(Self {
            path,
            records,
            identities,
        })
    }

    /// Writes the records as CSV with the standard header.
    pub fn write(path: &Path, records: &[FaceRecord]) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        for r in records {
            w.serialize(r).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::Manifest {
            path: path.to_path_buf(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

/// Header every manifest must carry.
pub const MANIFEST_HEADER: [&str; 6] = ["path", "identity", "domain", "pose", "frontal", "landmarks"];

/// Parses and validates a CSV manifest.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            line: 1,
            message: format!("header must be `{}`", MANIFEST_HEADER.join(",")),
        });
    }
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let bad = |message: String| Error::Manifest {
            path: path.to_path_buf(),
            line,
            message,
        };
        let field = |i: usize| row.get(i).unwrap_or("").trim();
        let domain: Domain = field(2).parse().map_err(bad)?;
        let pose: f64 = field(3)
            .parse()
            .map_err(|e| bad(format!("bad pose `{}`: {e}", field(3))))?;
        let frontal: bool = field(4)
            .parse()
            .map_err(|_| bad(format!("bad frontal flag `{}` (expected true or false)", field(4))))?;
        if !pose.is_finite() || pose.abs() > 90.0 {
            return Err(bad(format!("pose {pose} outside [-90, 90]")));
        }
        if frontal != (pose.abs() <= FRONTAL_TOLERANCE) {
            return Err(bad(format!(
                "frontal flag {frontal} contradicts pose {pose} (frontal means |pose| <= {FRONTAL_TOLERANCE})"
            )));
        }
        if field(0).is_empty() || field(1).is_empty() {
            return Err(bad("path and identity must be nonempty".into()));
        }
        let lm = field(5);
        records.push(FaceRecord {
            path: PathBuf::from(field(0)),
            identity: field(1).to_string(),
            domain,
            pose,
            frontal,
            landmarks: (!lm.is_empty()).then(|| PathBuf::from(lm)),
        });
    }
    Manifest::from_records(path.to_path_buf(), records)
}
