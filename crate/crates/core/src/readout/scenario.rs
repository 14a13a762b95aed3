//! Line-oriented scenario files:
//!
//! ```text
//! # three presses forming a rectangle with an untouched fourth corner
//! law 50000 500 1
//! adc 10000
//! press 2 3 98
//! press 2 7 98
//! press 5 3 98
//! ```
//!
//! `law <r_open> <r_min> <f0>` and `adc <r_ref>` default to [`FsrLaw::default`]
//! and [`AdcModel::default`]. `lead <ohm>` sets the electrode series
//! resistance (default 0). Blank lines and `#` comments are ignored.

use std::fmt::Write as _;

use super::{frame_from_press_map, AdcModel, Error, FsrLaw, Press, ResistorGrid, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scenario {
    pub presses: Vec<Press>,
    pub law: FsrLaw,
    pub adc: AdcModel,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sc = Scenario::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |message: String| Error::Scenario { line, message };
            let mut words = content.split_whitespace();
            let directive = words.next().unwrap_or_default();
            let args: Vec<&str> = words.collect();
            let nums = |n: usize| -> Result<Vec<f64>> {
                if args.len() != n {
                    return Err(err(format!("`{directive}` takes {n} arguments, got {}", args.len())));
                }
                args.iter()
                    .map(|a| a.parse::<f64>().map_err(|_| err(format!("not a number: {a:?}"))))
                    .collect()
            };
            match directive {
                "press" => {
                    if args.len() != 3 {
                        return Err(err(format!("`press` takes 3 arguments, got {}", args.len())));
                    }
                    let row = args[0].parse::<usize>().map_err(|_| err(format!("bad row {:?}", args[0])))?;
                    let col = args[1].parse::<usize>().map_err(|_| err(format!("bad column {:?}", args[1])))?;
                    let force = args[2].parse::<f64>().map_err(|_| err(format!("bad force {:?}", args[2])))?;
                    if row >= 32 || col >= 32 {
                        return Err(err(format!("crossing ({row}, {col}) outside the 32x32 grid")));
                    }
                    if force.is_nan() || force < 0.0 {
                        return Err(err(format!("negative force {force}")));
                    }
                    sc.presses.push(Press::new(row, col, force));
                }
                "law" => {
                    let v = nums(3)?;
                    sc.law = FsrLaw::new(v[0], v[1], v[2]).map_err(|e| err(e.to_string()))?;
                }
                "adc" => {
                    let v = nums(1)?;
                    let lead = sc.adc.lead_ohm;
                    sc.adc = AdcModel::new(v[0]).map_err(|e| err(e.to_string()))?;
                    sc.adc.lead_ohm = lead;
                }
                "lead" => {
                    let v = nums(1)?;
                    if !(v[0].is_finite() && v[0] >= 0.0) {
                        return Err(err(format!("lead resistance {} must be >= 0", v[0])));
                    }
                    sc.adc.lead_ohm = v[0];
                }
                other => return Err(err(format!("unknown directive {other:?}"))),
            }
        }
        Ok(sc)
    }

    pub fn grid(&self) -> Result<ResistorGrid> {
        frame_from_press_map(&self.presses, &self.law)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "law {} {} {}", self.law.r_open_ohm, self.law.r_min_ohm, self.law.f0_newton);
        let _ = writeln!(s, "adc {}", self.adc.r_ref_ohm);
        if self.adc.lead_ohm != 0.0 {
            let _ = writeln!(s, "lead {}", self.adc.lead_ohm);
        }
        for p in &self.presses {
            let _ = writeln!(s, "press {} {} {}", p.row, p.col, p.force_newton);
        }
        s
    }
}
