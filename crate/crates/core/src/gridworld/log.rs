//! Episode logs as CSV: one row per action, then a `return,success` footer.
//!
//! ```text
//! step,action,reward,terminal
//! 1,forward,-0.04,false
//! ...
//! return,success
//! 0.92,true
//! ```

use std::io::Write;

use super::{Action, GridError};

/// Undiscounted sum, accumulated left to right.
pub fn episode_return(rewards: &[f64]) -> f64 {
    rewards.iter().sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoggedStep {
    pub action: Action,
    pub reward: f64,
    pub terminal: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeLog {
    pub steps: Vec<LoggedStep>,
    pub success: bool,
}

impl EpisodeLog {
    pub fn push(&mut self, action: Action, reward: f64, terminal: bool) {
        self.steps.push(LoggedStep { action, reward, terminal });
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn total(&self) -> f64 {
        episode_return(&self.rewards())
    }

    pub fn write_csv(&self, w: impl Write) -> Result<(), GridError> {
        let mut out = csv::WriterBuilder::new().flexible(true).from_writer(w);
        let csv_err = |e: csv::Error| GridError::Io(e.into());
        out.write_record(["step", "action", "reward", "terminal"]).map_err(csv_err)?;
        for (i, s) in self.steps.iter().enumerate() {
            out.write_record([
                (i + 1).to_string(),
                s.action.name().to_string(),
                s.reward.to_string(),
                s.terminal.to_string(),
            ])
            .map_err(csv_err)?;
        }
        out.write_record(["return", "success"]).map_err(csv_err)?;
        out.write_record([self.total().to_string(), self.success.to_string()]).map_err(csv_err)?;
        out.flush()?;
        Ok(())
    }

    pub fn read_csv(r: impl std::io::Read) -> Result<EpisodeLog, GridError> {
        let mut input = csv::ReaderBuilder::new().flexible(true).has_headers(true).from_reader(r);
        let bad = |line: usize, msg: &str| GridError::TaskFile { line, msg: msg.to_string() };
        let mut log = EpisodeLog::default();
        let mut records = input.records();
        let mut line = 1;
        while let Some(rec) = records.next() {
            line += 1;
            let rec = rec.map_err(|e| bad(line, &e.to_string()))?;
            if rec.get(0) == Some("return") {
                let footer = records.next().ok_or_else(|| bad(line + 1, "missing footer values"))?;
                let footer = footer.map_err(|e| bad(line + 1, &e.to_string()))?;
                log.success = footer.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| bad(line + 1, "bad success"))?;
                return Ok(log);
            }
            let field = |i: usize| rec.get(i).ok_or_else(|| bad(line, "short row"));
            let action = Action::parse(field(1)?)?;
            let reward = field(2)?.parse().map_err(|_| bad(line, "bad reward"))?;
            let terminal = field(3)?.parse().map_err(|_| bad(line, "bad terminal flag"))?;
            log.push(action, reward, terminal);
        }
        Err(bad(line, "missing return,success footer"))
    }
}
