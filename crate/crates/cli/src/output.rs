//! Files a run leaves behind.
//!
//! ```text
//! <out_dir>/config.json        every setting, defaults included
//! <out_dir>/env.json           constants of the environment
//! <out_dir>/curve.csv          one row per finished iteration
//! <out_dir>/policy.json        latest policy
//! <out_dir>/value.json         latest value function
//! <out_dir>/checkpoints/policy_<iter>.json, value_<iter>.json
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use awr::algorithm::{write_curve, TrainRecord};
use awr::{Mlp, PolicyHead};
use serde::Serialize;

/// Writes `bytes` to a sibling temp file and renames it over `path`, so a
/// reader never sees a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    f.write_all(bytes).with_context(|| format!("writing {}", tmp.display()))?;
    f.sync_all().with_context(|| format!("syncing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming {} to {}", tmp.display(), path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub struct RunDir {
    root: PathBuf,
    checkpoint_every: usize,
}

impl RunDir {
    pub fn create(root: PathBuf, checkpoint_every: usize) -> anyhow::Result<Self> {
        fs::create_dir_all(root.join("checkpoints")).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self { root, checkpoint_every })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write_curve(&self, records: &[TrainRecord]) -> anyhow::Result<()> {
        let mut bytes = Vec::new();
        write_curve(records, &mut bytes)?;
        write_atomic(&self.root.join("curve.csv"), &bytes)
    }

    /// Refreshes the latest networks, and keeps a numbered copy when `iter`
    /// falls on the checkpoint interval.
    pub fn checkpoint(&self, iter: usize, policy: &PolicyHead, value: &Mlp, last: bool) -> anyhow::Result<()> {
        write_json(&self.root.join("policy.json"), policy)?;
        write_json(&self.root.join("value.json"), value)?;
        let numbered = self.checkpoint_every > 0 && (iter % self.checkpoint_every == 0 || last);
        if numbered {
            let dir = self.root.join("checkpoints");
            write_json(&dir.join(format!("policy_{iter:06}.json")), policy)?;
            write_json(&dir.join(format!("value_{iter:06}.json")), value)?;
        }
        Ok(())
    }
}
