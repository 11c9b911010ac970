//! Dataset file: CSV with a header row and one row per (user, step), users
//! in ascending order and steps `0..len` within each user.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{simulate_all, SimConfig, Step, Trajectory, CHANNELS, DEVICES, TIME_BUCKETS};
use crate::error::{Error, Result};

pub const DATASET_HEADER: [&str; 16] = [
    "user",
    "step",
    "item",
    "topic",
    "regime",
    "switch",
    "time_bucket",
    "device",
    "clicks",
    "searches",
    "likes",
    "shares",
    "skips",
    "comments",
    "saves",
    "replays",
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub user: usize,
    pub step: usize,
    pub item: usize,
    pub topic: usize,
    pub regime: usize,
    pub switch: u8,
    pub time_bucket: usize,
    pub device: usize,
    pub clicks: u32,
    pub searches: u32,
    pub likes: u32,
    pub shares: u32,
    pub skips: u32,
    pub comments: u32,
    pub saves: u32,
    pub replays: u32,
}

impl DatasetRow {
    fn from_step(user: usize, step: usize, s: &Step) -> Self {
        let c = s.counts;
        Self {
            user,
            step,
            item: s.item,
            topic: s.topic,
            regime: s.regime,
            switch: u8::from(s.switched),
            time_bucket: s.time_bucket,
            device: s.device,
            clicks: c[0],
            searches: c[1],
            likes: c[2],
            shares: c[3],
            skips: c[4],
            comments: c[5],
            saves: c[6],
            replays: c[7],
        }
    }

    fn to_step(&self) -> Step {
        Step {
            item: self.item,
            topic: self.topic,
            regime: self.regime,
            switched: self.switch == 1,
            time_bucket: self.time_bucket,
            device: self.device,
            counts: [
                self.clicks,
                self.searches,
                self.likes,
                self.shares,
                self.skips,
                self.comments,
                self.saves,
                self.replays,
            ],
        }
    }
}

const _: () = assert!(DATASET_HEADER.len() == 8 + CHANNELS.len());

pub fn write_dataset(path: &Path, trajectories: &[Trajectory]) -> Result<usize> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut rows = 0;
    for traj in trajectories {
        for (t, s) in traj.steps.iter().enumerate() {
            writer.serialize(DatasetRow::from_step(traj.user, t, s))?;
            rows += 1;
        }
    }
    writer.flush()?;
    Ok(rows)
}

/// Reads a dataset back, checking the header, the row order and every field
/// against `config`.
pub fn read_dataset(path: &Path, config: &SimConfig) -> Result<Vec<Trajectory>> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != DATASET_HEADER {
        return Err(Error::Dataset(format!("{}: header must be {}", path.display(), DATASET_HEADER.join(","))));
    }
    let mut out: Vec<Trajectory> = Vec::new();
    for (line, row) in reader.deserialize::<DatasetRow>().enumerate() {
        let row = row?;
        let bad = |msg: &str| Err(Error::Dataset(format!("{} row {}: {msg}", path.display(), line + 1)));
        if row.item >= config.catalog_size {
            return bad("item outside the catalog");
        }
        if row.topic != config.topic_of(row.item) {
            return bad("topic does not match item");
        }
        if row.regime >= config.n_intents() || row.time_bucket >= TIME_BUCKETS || row.device >= DEVICES {
            return bad("regime, time_bucket or device out of range");
        }
        if row.switch > 1 {
            return bad("switch must be 0 or 1");
        }
        match out.last_mut() {
            Some(traj) if traj.user == row.user => {
                if row.step != traj.len() {
                    return bad("steps must be consecutive");
                }
                traj.steps.push(row.to_step());
            }
            last => {
                if row.step != 0 || last.is_some_and(|t| row.user <= t.user) {
                    return bad("users must ascend and start at step 0");
                }
                out.push(Trajectory { user: row.user, steps: vec![row.to_step()] });
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Dataset(format!("{}: no rows", path.display())));
    }
    Ok(out)
}

/// Simulates every user of `config` and writes the dataset. Returns the row
/// count.
pub fn generate_dataset(config: &SimConfig, path: &Path) -> Result<usize> {
    let trajectories = simulate_all(config)?;
    write_dataset(path, &trajectories)
}
