//! Task generation and task files.

use std::io::{BufRead, Write};
use std::path::Path;

use super::{AgentPose, GridError, Heading, FIELD};
use crate::rng::{self, Purpose};

pub const COLOR_PROBABILITY: f64 = 0.1;

/// One board: colored field mask plus start pose, regenerable from `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TaskSpec {
    pub seed: u64,
    pub colored: u32,
    pub start_pose: AgentPose,
}

impl TaskSpec {
    pub fn colored_count(&self) -> u32 {
        self.colored.count_ones()
    }

    /// Colored tiles as field coordinates `(r, c)`.
    pub fn colored_cells(&self) -> impl Iterator<Item = (i32, i32)> + '_ {
        (0..FIELD * FIELD).filter(|i| self.colored >> i & 1 == 1).map(|i| (i / FIELD, i % FIELD))
    }
}

/// The 20 walkway cells that touch exactly one wall, each facing the field.
pub fn start_poses() -> [AgentPose; 20] {
    let mut out = [AgentPose { row: 0, col: 0, heading: Heading::North }; 20];
    for i in 0..5 {
        let k = 2 + i as i32;
        out[i] = AgentPose { row: 1, col: k, heading: Heading::South };
        out[5 + i] = AgentPose { row: 7, col: k, heading: Heading::North };
        out[10 + i] = AgentPose { row: k, col: 1, heading: Heading::East };
        out[15 + i] = AgentPose { row: k, col: 7, heading: Heading::West };
    }
    out
}

/// Draws 25 Bernoulli(0.1) tiles in row-major order from the task stream,
/// redrawing whole boards until one is colored, then one start pose.
pub fn generate_task(seed: u64) -> TaskSpec {
    generate_task_counted(seed).0
}

/// [`generate_task`] plus the number of boards drawn (1 when no redraw).
pub fn generate_task_counted(seed: u64) -> (TaskSpec, usize) {
    let mut rng = rng::stream(seed, Purpose::Task);
    let mut boards = 0;
    let colored = loop {
        boards += 1;
        let mut mask = 0u32;
        for i in 0..FIELD * FIELD {
            if rng::bernoulli(&mut rng, COLOR_PROBABILITY) {
                mask |= 1 << i;
            }
        }
        if mask != 0 {
            break mask;
        }
    };
    let start_pose = start_poses()[rng::below(&mut rng, 20)];
    (TaskSpec { seed, colored, start_pose }, boards)
}

pub fn write_task_file(path: &Path, tasks: &[TaskSpec]) -> Result<(), GridError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for t in tasks {
        writeln!(w, "seed={}", t.seed)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `seed=<u64>` lines; blank lines and `#` comments are skipped.
pub fn read_task_file(path: &Path) -> Result<Vec<TaskSpec>, GridError> {
    let r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut tasks = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: &str| GridError::TaskFile { line: i + 1, msg: msg.to_string() };
        let value = line.strip_prefix("seed=").ok_or_else(|| bad("expected seed=<u64>"))?;
        let seed = value.trim().parse::<u64>().map_err(|_| bad("seed is not a u64"))?;
        tasks.push(generate_task(seed));
    }
    Ok(tasks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_task() {
        for seed in 0..50 {
            assert_eq!(generate_task(seed), generate_task(seed));
        }
    }

    #[test]
    fn start_poses_face_the_field_from_the_ring() {
        for p in start_poses() {
            let (r, c) = p.ahead();
            assert!(super::super::field_bit(r, c).is_some(), "{p:?}");
        }
    }

    #[test]
    fn task_file_round_trip() {
        let dir = std::env::temp_dir().join(format!("bp-tasks-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("tasks.txt");
        let tasks: Vec<_> = [3u64, 99, u64::MAX].iter().map(|&s| generate_task(s)).collect();
        write_task_file(&path, &tasks).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), format!("seed=3\nseed=99\nseed={}\n", u64::MAX));
        assert_eq!(read_task_file(&path).unwrap(), tasks);
        std::fs::write(&path, "seed=1\nseed=x\n").unwrap();
        let err = read_task_file(&path).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        std::fs::remove_dir_all(&dir).ok();
    }
}
