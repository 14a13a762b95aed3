//! Scripted sessions. A script is one command per line:
//!
//! ```text
//! # t_ms  command
//! 0       r
//! 500     p
//! 2000    button
//! ```
//!
//! Commands are `r`, `p`, `button` (toggles like the board's push button:
//! start when idle, stop otherwise) or any raw byte as `0xNN`. Times are in
//! milliseconds, may carry a fraction down to 1 µs, and must not decrease.

use super::{Device, DeviceState, Emitted, Error, FrameSource, PacketKind, Result, CMD_START, CMD_STOP};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScriptCommand {
    Byte(u8),
    Button,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Script {
    pub commands: Vec<(u64, ScriptCommand)>,
}

impl Script {
    pub fn new(commands: Vec<(u64, ScriptCommand)>) -> Result<Self> {
        if let Some(w) = commands.windows(2).find(|w| w[1].0 < w[0].0) {
            return Err(Error::Script { line: 0, message: format!("time {} us before {} us", w[1].0, w[0].0) });
        }
        Ok(Script { commands })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut commands: Vec<(u64, ScriptCommand)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |message: String| Error::Script { line, message };
            let words: Vec<&str> = content.split_whitespace().collect();
            let [t, cmd] = words[..] else {
                return Err(err(format!("expected `<t_ms> <command>`, got {content:?}")));
            };
            let ms: f64 = t.parse().map_err(|_| err(format!("bad time {t:?}")))?;
            if !(ms.is_finite() && ms >= 0.0) {
                return Err(err(format!("time {ms} must be a non-negative number of milliseconds")));
            }
            let us = (ms * 1000.0).round() as u64;
            let cmd = match cmd {
                "r" => ScriptCommand::Byte(CMD_START),
                "p" => ScriptCommand::Byte(CMD_STOP),
                "button" => ScriptCommand::Button,
                hex if hex.starts_with("0x") => ScriptCommand::Byte(
                    u8::from_str_radix(&hex[2..], 16).map_err(|_| err(format!("bad byte {hex:?}")))?,
                ),
                other => return Err(err(format!("unknown command {other:?} (r|p|button|0xNN)"))),
            };
            if let Some(&(prev, _)) = commands.last() {
                if us < prev {
                    return Err(err(format!("time {ms} ms goes backwards")));
                }
            }
            commands.push((us, cmd));
        }
        Ok(Script { commands })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub packets: Vec<Emitted>,
    /// Initial state and every transition with its time.
    pub states: Vec<(u64, DeviceState)>,
    pub final_state: DeviceState,
    pub duration_us: u64,
}

impl Transcript {
    pub fn count(&self, kind: PacketKind) -> usize {
        self.packets.iter().filter(|e| e.packet.kind() == kind).count()
    }

    /// Everything the device sent, as it would appear on the UART.
    pub fn wire_bytes(&self) -> Vec<u8> {
        self.packets.iter().flat_map(|e| e.packet.encode()).collect()
    }
}

/// Replays `script` against `device` over `[0, duration_us]`. Commands after
/// the end of the session are not delivered.
pub fn run_session(
    device: &mut Device,
    script: &Script,
    source: &mut dyn FrameSource,
    duration_us: u64,
) -> Result<Transcript> {
    let mut packets = Vec::new();
    for &(t, cmd) in script.commands.iter().take_while(|(t, _)| *t <= duration_us) {
        let byte = match cmd {
            ScriptCommand::Byte(b) => b,
            ScriptCommand::Button => {
                // the button samples the state after timers due by now
                packets.extend(device.tick(source, t)?);
                if device.state().is_active() {
                    CMD_STOP
                } else {
                    CMD_START
                }
            }
        };
        packets.extend(device.command(source, byte, t)?);
    }
    packets.extend(device.tick(source, duration_us)?);
    Ok(Transcript {
        packets,
        states: device.state_log().to_vec(),
        final_state: device.state(),
        duration_us,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{DeviceConfig, DevicePacket, Mode, StaticSource, SyntheticImu};
    use crate::tactile::TactileFrame;

    fn run(mode: Mode, target: usize, script: &str, duration_us: u64) -> Transcript {
        let cfg = DeviceConfig { mode, collect_target: target, ..Default::default() };
        let mut d = Device::new(cfg, Box::new(SyntheticImu::new(2)), None).unwrap();
        let mut src = StaticSource::new(TactileFrame::filled(300, 0, 0));
        run_session(&mut d, &Script::parse(script).unwrap(), &mut src, duration_us).unwrap()
    }

    #[test]
    fn parse_scripts() {
        let s = Script::parse("# demo\n0 r\n500.5 p\n\n900 button # toggle\n1000 0x78\n").unwrap();
        assert_eq!(
            s.commands,
            vec![
                (0, ScriptCommand::Byte(b'r')),
                (500_500, ScriptCommand::Byte(b'p')),
                (900_000, ScriptCommand::Button),
                (1_000_000, ScriptCommand::Byte(b'x')),
            ]
        );
        assert!(matches!(Script::parse("10 r\n5 p\n"), Err(Error::Script { line: 2, .. })));
        assert!(matches!(Script::parse("10 q\n"), Err(Error::Script { line: 1, .. })));
        assert!(matches!(Script::parse("r\n"), Err(Error::Script { line: 1, .. })));
        assert!(Script::new(vec![(5, ScriptCommand::Button), (4, ScriptCommand::Button)]).is_err());
    }

    #[test]
    fn empty_script_stays_idle() {
        let t = run(Mode::Visualize, 10, "", 5_000_000);
        assert!(t.packets.is_empty());
        assert_eq!(t.final_state, DeviceState::Idle);
        assert_eq!(t.states, vec![(0, DeviceState::Idle)]);
    }

    #[test]
    fn start_stop_visualization() {
        let t = run(Mode::Visualize, 10, "0 r\n500 p\n", 2_000_000);
        assert_eq!(t.count(PacketKind::Frame), 5);
        assert_eq!(t.count(PacketKind::Ack), 2);
        assert_eq!(t.final_state, DeviceState::Idle);
    }

    #[test]
    fn collection_ends_with_dump_and_idle() {
        let t = run(Mode::Collect, 100, "0 r\n", 3_000_000);
        assert_eq!(t.count(PacketKind::Dump), 100);
        assert_eq!(t.count(PacketKind::Frame), 0);
        assert!(matches!(t.packets.last().unwrap().packet, DevicePacket::Dump { index: 99, total: 100, .. }));
        assert_eq!(t.final_state, DeviceState::Idle);
        assert_eq!(t.states.last(), Some(&(1_000_000, DeviceState::Idle)));
    }

    #[test]
    fn button_toggles() {
        let t = run(Mode::Visualize, 10, "0 button\n300 button\n600 button\n", 1_000_000);
        assert_eq!(t.count(PacketKind::Frame), 3 + 4);
        assert_eq!(t.count(PacketKind::Ack), 3);
        assert_eq!(t.final_state, DeviceState::Visualizing);
    }

    #[test]
    fn sessions_are_deterministic() {
        let a = run(Mode::Collect, 30, "0 r\n", 1_000_000);
        let b = run(Mode::Collect, 30, "0 r\n", 1_000_000);
        assert_eq!(a, b);
        assert_eq!(a.wire_bytes(), b.wire_bytes());
    }
}
