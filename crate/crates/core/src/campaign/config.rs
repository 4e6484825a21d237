use std::io::BufRead;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::rules::Thresholds;
use super::CampaignError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignConfig {
    pub eta1: usize,
    pub eta2: usize,
    pub rng_seed: u64,
    /// Advisory rate passed to the prober.
    pub max_pps: u32,
    pub max_ttl: u8,
    pub alias_file: Option<PathBuf>,
    pub pfx2as_file: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    pub spoof_check: bool,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            eta1: 16,
            eta2: 256,
            rng_seed: 0,
            max_pps: 10_000,
            max_ttl: 32,
            alias_file: None,
            pfx2as_file: None,
            checkpoint_dir: None,
            spoof_check: true,
        }
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T, CampaignError> {
    value.parse().map_err(|_| CampaignError::Config {
        line,
        message: format!("{key}: cannot parse {value:?}"),
    })
}

impl CampaignConfig {
    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            eta1: self.eta1,
            eta2: self.eta2,
        }
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<(), CampaignError> {
        match key {
            "eta1" => self.eta1 = parse_num(line, key, value)?,
            "eta2" => self.eta2 = parse_num(line, key, value)?,
            "rng_seed" => self.rng_seed = parse_num(line, key, value)?,
            "max_pps" => self.max_pps = parse_num(line, key, value)?,
            "max_ttl" => self.max_ttl = parse_num(line, key, value)?,
            "alias_file" => self.alias_file = Some(value.into()),
            "pfx2as_file" => self.pfx2as_file = Some(value.into()),
            "checkpoint_dir" => self.checkpoint_dir = Some(value.into()),
            "spoof_check" => self.spoof_check = parse_num(line, key, value)?,
            _ => {
                return Err(CampaignError::Config {
                    line,
                    message: format!("unknown key {key:?}"),
                })
            }
        }
        Ok(())
    }

    /// Reads `key=value` lines over the current values. `#` starts a comment.
    pub fn merge_file<R: BufRead>(&mut self, reader: R) -> Result<(), CampaignError> {
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| CampaignError::Config {
                line: idx + 1,
                message: e.to_string(),
            })?;
            let text = line.split('#').next().unwrap_or_default().trim();
            if text.is_empty() {
                continue;
            }
            let Some((k, v)) = text.split_once('=') else {
                return Err(CampaignError::Config {
                    line: idx + 1,
                    message: format!("expected key=value, got {text:?}"),
                });
            };
            self.set(k.trim(), v.trim(), idx + 1)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CampaignError> {
        if self.max_ttl == 0 {
            return Err(CampaignError::Argument("max_ttl must be positive".into()));
        }
        if self.max_pps == 0 {
            return Err(CampaignError::Argument("max_pps must be positive".into()));
        }
        Ok(())
    }
}
