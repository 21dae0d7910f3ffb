//! Reference child for the wire protocol: answers every predict with the
//! previous mask. Fault modes exercise the host's error handling.

use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::time::Duration;

use super::wire::{ChildMessage, HostMessage};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum EchoFault {
    #[default]
    None,
    /// Reply to predict with run lengths that do not sum to the mask size.
    MalformedCounts,
    /// Never answer predict.
    Hang,
    /// Exit on the first predict.
    Crash,
    /// Exit on the first predict unless the marker file exists; creates it.
    CrashOnce(PathBuf),
    /// Reply to predict with an error message.
    ErrorReply,
}

/// Outcome of [`run_echo_child`]; `Crashed` asks the caller to exit nonzero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EchoExit {
    InputClosed,
    Crashed,
}

fn reply(out: &mut impl Write, msg: &ChildMessage) -> std::io::Result<()> {
    writeln!(out, "{}", msg.to_line())?;
    out.flush()
}

pub fn run_echo_child(input: impl BufRead, mut output: impl Write, fault: &EchoFault) -> std::io::Result<EchoExit> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let msg = match HostMessage::from_line(&line) {
            Ok(m) => m,
            Err(e) => {
                reply(&mut output, &ChildMessage::Error { message: e.to_string() })?;
                continue;
            }
        };
        let answer = match msg {
            HostMessage::Hello { .. } => ChildMessage::Ready,
            HostMessage::Prepare { tensors, .. } => match tensors.values().try_for_each(|r| r.decode().map(drop)) {
                Ok(()) => ChildMessage::Prepared,
                Err(message) => ChildMessage::Error { message },
            },
            HostMessage::Predict { prev_mask, .. } => match fault {
                EchoFault::None => ChildMessage::Mask { mask: prev_mask },
                EchoFault::MalformedCounts => {
                    let mut mask = prev_mask;
                    mask.counts.push(1);
                    ChildMessage::Mask { mask }
                }
                EchoFault::Hang => loop {
                    std::thread::sleep(Duration::from_secs(3600));
                },
                EchoFault::Crash => return Ok(EchoExit::Crashed),
                EchoFault::CrashOnce(marker) => {
                    if !marker.exists() {
                        std::fs::write(marker, b"crashed")?;
                        return Ok(EchoExit::Crashed);
                    }
                    ChildMessage::Mask { mask: prev_mask }
                }
                EchoFault::ErrorReply => ChildMessage::Error { message: "scripted failure".into() },
            },
        };
        reply(&mut output, &answer)?;
    }
    Ok(EchoExit::InputClosed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{BinaryMask, Click};
    use crate::predictor::PredictRequest;

    #[test]
    fn in_process_echo_session() {
        let req = PredictRequest {
            image_id: "a".into(),
            surface: 1,
            clicks: vec![Click::positive(0, 1)],
            prev_mask: BinaryMask::from_fn(3, 3, |r, c| r == c).unwrap(),
        };
        let hello = HostMessage::Hello { resolution: [3, 3], modalities: vec![] };
        let input = format!("{}\n{}\n", hello.to_line(), HostMessage::predict(&req).to_line());
        let mut out = Vec::new();
        let exit = run_echo_child(input.as_bytes(), &mut out, &EchoFault::None).unwrap();
        assert_eq!(exit, EchoExit::InputClosed);
        let lines: Vec<&str> = std::str::from_utf8(&out).unwrap().lines().collect();
        assert_eq!(lines[0], r#"{"type":"ready"}"#);
        let ChildMessage::Mask { mask } = super::super::wire::decode_child_line(lines[1]).unwrap() else {
            panic!("expected a mask reply");
        };
        assert_eq!(mask.decode().unwrap(), req.prev_mask);
    }
}
