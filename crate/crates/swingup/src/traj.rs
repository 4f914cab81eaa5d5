//! Closed-loop trajectory records and their CSV interchange format.
//!
//! Each row holds the state at a control tick, the torque the controller
//! commanded there, the torque actually applied to the plant (they differ
//! only under perturbation wrappers), and which controller was active.
//! Floats are printed with 17 significant digits so a written file reads
//! back bitwise identical.

use crate::dynamics::State;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

/// Exact column header of the trajectory CSV.
pub const CSV_HEADER: &str = "t,p1,p2,v1,v2,tau1_cmd,tau2_cmd,tau1_app,tau2_app,ctrl";

#[derive(Debug, thiserror::Error)]
pub enum TrajError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("expected header {CSV_HEADER:?}, got {got:?}")]
    BadHeader { got: String },
    #[error("trajectory needs at least two rows, got {0}")]
    TooShort(usize),
    #[error("row arrays have mismatched lengths")]
    LengthMismatch,
    #[error("time grid is not uniformly spaced at row {row}: step {got}, expected {expected}")]
    NonUniformTime { row: usize, got: f64, expected: f64 },
}

/// Which controller produced a row's command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerTag {
    Sac,
    Lqr,
}

impl fmt::Display for ControllerTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ControllerTag::Sac => "SAC",
            ControllerTag::Lqr => "LQR",
        })
    }
}

impl FromStr for ControllerTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "SAC" => Ok(ControllerTag::Sac),
            "LQR" => Ok(ControllerTag::Lqr),
            other => Err(format!("unknown controller tag {other:?}")),
        }
    }
}

/// A sampled closed-loop run on a uniform time grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub tau_cmd: Vec<[f64; 2]>,
    pub tau_app: Vec<[f64; 2]>,
    pub tags: Vec<ControllerTag>,
    /// Set when the producing rollout aborted on a non-finite state; the
    /// recorded rows are the finite prefix. Not part of the CSV format.
    pub diverged: bool,
}

impl Trajectory {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            times: Vec::with_capacity(n),
            states: Vec::with_capacity(n),
            tau_cmd: Vec::with_capacity(n),
            tau_app: Vec::with_capacity(n),
            tags: Vec::with_capacity(n),
            diverged: false,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn push(
        &mut self,
        t: f64,
        x: State,
        tau_cmd: [f64; 2],
        tau_app: [f64; 2],
        tag: ControllerTag,
    ) {
        self.times.push(t);
        self.states.push(x);
        self.tau_cmd.push(tau_cmd);
        self.tau_app.push(tau_app);
        self.tags.push(tag);
    }

    /// Check row-array consistency and the uniform time grid; returns the
    /// grid spacing.
    pub fn validate(&self) -> Result<f64, TrajError> {
        let n = self.times.len();
        if self.states.len() != n
            || self.tau_cmd.len() != n
            || self.tau_app.len() != n
            || self.tags.len() != n
        {
            return Err(TrajError::LengthMismatch);
        }
        if n < 2 {
            return Err(TrajError::TooShort(n));
        }
        let dt = self.times[1] - self.times[0];
        if !(dt.is_finite() && dt > 0.0) {
            return Err(TrajError::NonUniformTime {
                row: 1,
                got: dt,
                expected: f64::NAN,
            });
        }
        for i in 1..n {
            let step = self.times[i] - self.times[i - 1];
            if (step - dt).abs() > 1e-9 * dt.max(1e-9) {
                return Err(TrajError::NonUniformTime {
                    row: i,
                    got: step,
                    expected: dt,
                });
            }
        }
        Ok(dt)
    }

    /// Grid spacing after validation.
    pub fn dt(&self) -> Result<f64, TrajError> {
        self.validate()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), TrajError> {
        self.validate()?;
        writeln!(w, "{CSV_HEADER}")?;
        for i in 0..self.len() {
            let x = self.states[i];
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                self.times[i],
                x.p1,
                x.p2,
                x.v1,
                x.v2,
                self.tau_cmd[i][0],
                self.tau_cmd[i][1],
                self.tau_app[i][0],
                self.tau_app[i][1],
                self.tags[i],
            )?;
        }
        Ok(())
    }

    pub fn save_csv<P: AsRef<Path>>(&self, path: P) -> Result<(), TrajError> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(std::fs::write(path, buf)?)
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, TrajError> {
        let reader = BufReader::new(r);
        let mut lines = reader.lines().enumerate();
        let header = match lines.next() {
            Some((_, line)) => line?,
            None => return Err(TrajError::BadHeader { got: String::new() }),
        };
        if header.trim_end() != CSV_HEADER {
            return Err(TrajError::BadHeader { got: header });
        }
        let mut traj = Trajectory::default();
        for (idx, line) in lines {
            let line = line?;
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 10 {
                return Err(TrajError::Parse {
                    line: lineno,
                    msg: format!("expected 10 fields, got {}", fields.len()),
                });
            }
            let num = |i: usize| -> Result<f64, TrajError> {
                fields[i].trim().parse::<f64>().map_err(|e| TrajError::Parse {
                    line: lineno,
                    msg: format!("field {}: {e}", i + 1),
                })
            };
            let tag = fields[9]
                .trim()
                .parse::<ControllerTag>()
                .map_err(|msg| TrajError::Parse { line: lineno, msg })?;
            traj.push(
                num(0)?,
                State::new(num(1)?, num(2)?, num(3)?, num(4)?),
                [num(5)?, num(6)?],
                [num(7)?, num(8)?],
                tag,
            );
        }
        traj.validate()?;
        Ok(traj)
    }

    pub fn load_csv<P: AsRef<Path>>(path: P) -> Result<Self, TrajError> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trajectory {
        let mut t = Trajectory::default();
        t.push(
            0.0,
            State::new(0.1, -0.2, 0.3, -0.4),
            [1.25, 0.0],
            [1.25, 0.0],
            ControllerTag::Sac,
        );
        t.push(
            0.002,
            State::new(0.1 + 1e-13, std::f64::consts::PI, -7.5, 0.0),
            [-5.0, 0.0],
            [-4.987654321098765, 0.0],
            ControllerTag::Sac,
        );
        t.push(
            0.004,
            State::new(3.0, 3.1, 0.001, 2.0e-17),
            [0.0, 0.0],
            [0.0, 0.0],
            ControllerTag::Lqr,
        );
        t
    }

    #[test]
    fn csv_round_trip_is_bitwise_exact() {
        let traj = sample();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let back = Trajectory::read_csv(&buf[..]).unwrap();
        assert_eq!(traj, back);
    }

    #[test]
    fn csv_header_and_field_shape() {
        let mut buf = Vec::new();
        sample().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        let row = lines.next().unwrap();
        assert_eq!(row.split(',').count(), 10);
        assert!(row.ends_with("SAC"));
        assert!(row.split(',').next().unwrap().contains('e'));
    }

    #[test]
    fn save_and_load_via_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.csv");
        let traj = sample();
        traj.save_csv(&path).unwrap();
        assert_eq!(Trajectory::load_csv(&path).unwrap(), traj);
    }

    #[test]
    fn rejects_malformed_input() {
        let bad_header = "time,stuff\n0,0,0,0,0,0,0,0,0,SAC\n";
        assert!(matches!(
            Trajectory::read_csv(bad_header.as_bytes()),
            Err(TrajError::BadHeader { .. })
        ));

        let short_row = format!("{CSV_HEADER}\n0.0,1.0\n");
        assert!(matches!(
            Trajectory::read_csv(short_row.as_bytes()),
            Err(TrajError::Parse { line: 2, .. })
        ));

        let bad_tag = format!(
            "{CSV_HEADER}\n0,0,0,0,0,0,0,0,0,PID\n1,0,0,0,0,0,0,0,0,SAC\n"
        );
        assert!(matches!(
            Trajectory::read_csv(bad_tag.as_bytes()),
            Err(TrajError::Parse { line: 2, .. })
        ));

        let bad_float = format!(
            "{CSV_HEADER}\n0,zero,0,0,0,0,0,0,0,SAC\n1,0,0,0,0,0,0,0,0,SAC\n"
        );
        assert!(matches!(
            Trajectory::read_csv(bad_float.as_bytes()),
            Err(TrajError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn validation_rejects_bad_grids() {
        let mut traj = sample();
        traj.times[2] = 0.005;
        assert!(matches!(
            traj.validate(),
            Err(TrajError::NonUniformTime { row: 2, .. })
        ));

        let mut traj = sample();
        traj.tags.pop();
        assert!(matches!(traj.validate(), Err(TrajError::LengthMismatch)));

        let mut traj = Trajectory::default();
        traj.push(
            0.0,
            State::new(0.0, 0.0, 0.0, 0.0),
            [0.0; 2],
            [0.0; 2],
            ControllerTag::Sac,
        );
        assert!(matches!(traj.validate(), Err(TrajError::TooShort(1))));
    }

    #[test]
    fn dt_reports_grid_spacing() {
        assert!((sample().dt().unwrap() - 0.002).abs() < 1e-15);
    }
}
