use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::FacilityError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndpointRole {
    Beamline,
    Compute,
}

/// A storage endpoint: a named directory tree playing either the beamline
/// (data producer) or compute (data consumer) role.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Endpoint {
    pub id: String,
    pub root: PathBuf,
    pub role: EndpointRole,
}

/// Simulated link characteristics between two endpoints.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LinkModel {
    /// Bytes per second; must be positive.
    pub bandwidth_bytes_per_s: f64,
    /// One-way startup latency added to every transfer, in seconds.
    pub latency_s: f64,
}

impl LinkModel {
    /// Wire time for `bytes` over this link.
    pub fn duration_s(&self, bytes: u64) -> f64 {
        self.latency_s + bytes as f64 / self.bandwidth_bytes_per_s
    }
}

/// A directed link entry in the deployment config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkSpec {
    pub src: String,
    pub dst: String,
    pub bandwidth_bytes_per_s: f64,
    pub latency_s: f64,
}

/// Deployment description: the set of endpoints, the links between them and
/// the static bearer token every endpoint accepts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Deployment {
    pub endpoints: Vec<Endpoint>,
    pub links: Vec<LinkSpec>,
    pub token: String,
}

impl Deployment {
    pub fn load(path: &Path) -> Result<Self, FacilityError> {
        let text = fs::read_to_string(path).map_err(|e| FacilityError::io(path, e))?;
        let deployment: Deployment = serde_json::from_str(&text)
            .map_err(|e| FacilityError::Config(format!("{}: {e}", path.display())))?;
        deployment.validate()?;
        Ok(deployment)
    }

    pub fn save(&self, path: &Path) -> Result<(), FacilityError> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| FacilityError::io(path, e))
    }

    pub fn validate(&self) -> Result<(), FacilityError> {
        if self.endpoints.is_empty() {
            return Err(FacilityError::Config("no endpoints declared".into()));
        }
        for (i, e) in self.endpoints.iter().enumerate() {
            if e.id.is_empty() {
                return Err(FacilityError::Config(format!("endpoint {i} has an empty id")));
            }
            if self.endpoints[..i].iter().any(|prev| prev.id == e.id) {
                return Err(FacilityError::Config(format!("duplicate endpoint id '{}'", e.id)));
            }
        }
        for link in &self.links {
            for end in [&link.src, &link.dst] {
                if !self.endpoints.iter().any(|e| &e.id == end) {
                    return Err(FacilityError::Config(format!(
                        "link {} -> {} references unknown endpoint '{end}'",
                        link.src, link.dst
                    )));
                }
            }
            if !(link.bandwidth_bytes_per_s > 0.0) {
                return Err(FacilityError::Config(format!(
                    "link {} -> {} must have positive bandwidth",
                    link.src, link.dst
                )));
            }
            if !(link.latency_s >= 0.0) {
                return Err(FacilityError::Config(format!(
                    "link {} -> {} has negative latency",
                    link.src, link.dst
                )));
            }
        }
        Ok(())
    }

    /// Create every endpoint root that does not exist yet.
    pub fn ensure_roots(&self) -> Result<(), FacilityError> {
        for e in &self.endpoints {
            fs::create_dir_all(&e.root).map_err(|err| FacilityError::io(&e.root, err))?;
        }
        Ok(())
    }

    pub fn endpoint(&self, id: &str) -> Result<&Endpoint, FacilityError> {
        self.endpoints
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| FacilityError::UnknownEndpoint(id.to_string()))
    }

    /// Link model for a directed pair. Falls back to the reverse direction,
    /// then to an effectively instant link, so transfers inside deployments
    /// that never declared links still work.
    pub fn link_between(&self, src: &str, dst: &str) -> LinkModel {
        let pick = |a: &str, b: &str| {
            self.links
                .iter()
                .find(|l| l.src == a && l.dst == b)
                .map(|l| LinkModel {
                    bandwidth_bytes_per_s: l.bandwidth_bytes_per_s,
                    latency_s: l.latency_s,
                })
        };
        pick(src, dst).or_else(|| pick(dst, src)).unwrap_or(LinkModel {
            bandwidth_bytes_per_s: 1e12,
            latency_s: 0.0,
        })
    }

    pub fn check_token(&self, presented: &str) -> bool {
        presented == self.token
    }
}
