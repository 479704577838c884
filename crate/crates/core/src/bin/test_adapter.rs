//! Minimal adapter for exercising the external segmenter protocol.
//!
//! The first argument picks a behaviour; the default answers every request
//! with the built-in prior-oracle result.

use std::io::{self, BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::thread;
use std::time::Duration;

use artseg::nifti::{write_mask, write_volume, Dtype};
use artseg::segmenter::external::{Capability, Message};
use artseg::segmenter::{PriorOracle, Prompts, SegmentationRequest, Segmenter};
use artseg::Volume;

fn say(out: &mut impl Write, msg: &Message) {
    out.write_all(msg.to_line().as_bytes()).unwrap();
    out.flush().unwrap();
}

fn oracle(
    case_id: String,
    inputs: artseg::segmenter::Inputs,
    prompts: Prompts,
    out_dir: PathBuf,
) -> Result<(PathBuf, f64, artseg::BinaryMask), String> {
    let req = SegmentationRequest {
        case_id,
        inputs,
        prompts,
        out_dir: out_dir.clone(),
        options: Default::default(),
    };
    let res = PriorOracle.segment(&req).map_err(|e| e.to_string())?;
    Ok((out_dir.join("mask.nii"), res.confidence, res.mask))
}

fn main() -> ExitCode {
    let mode = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "prior-oracle".into());
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    let mut lines = stdin.lock().lines();

    match lines.next() {
        Some(Ok(l)) => match Message::from_line(&l) {
            Ok(Message::Hello { version: 1 }) => {}
            Ok(Message::Hello { version }) => {
                say(
                    &mut out,
                    &Message::Error {
                        case_id: None,
                        message: format!("unsupported version {version}"),
                    },
                );
                return ExitCode::from(1);
            }
            _ => return ExitCode::from(1),
        },
        _ => return ExitCode::from(1),
    }
    match mode.as_str() {
        "silent" => {
            thread::sleep(Duration::from_secs(60));
            return ExitCode::SUCCESS;
        }
        "reject-version" => {
            say(
                &mut out,
                &Message::Error {
                    case_id: None,
                    message: "only version 2 is supported".into(),
                },
            );
            return ExitCode::from(1);
        }
        "quit-early" => {
            eprintln!("adapter: missing model weights");
            return ExitCode::from(4);
        }
        _ => {}
    }
    say(
        &mut out,
        &Message::Ready {
            name: format!("test-adapter/{mode}"),
            capabilities: vec![Capability::Bbox, Capability::Mask, Capability::Prior],
            version: (mode == "ready-version2").then_some(2),
        },
    );

    for line in lines {
        let Ok(line) = line else { break };
        let msg = match Message::from_line(&line) {
            Ok(m) => m,
            Err(e) => {
                eprintln!("adapter: {e}");
                return ExitCode::from(1);
            }
        };
        let (case_id, inputs, prompts, out_dir) = match msg {
            Message::Bye => return ExitCode::SUCCESS,
            Message::Segment {
                case_id,
                inputs,
                prompts,
                out_dir,
            } => {
                let bbox = match prompts.bbox() {
                    Ok(b) => b,
                    Err(e) => {
                        say(
                            &mut out,
                            &Message::Error {
                                case_id: Some(case_id),
                                message: e.to_string(),
                            },
                        );
                        continue;
                    }
                };
                (
                    case_id,
                    inputs,
                    Prompts {
                        bbox,
                        mask: prompts.mask,
                    },
                    out_dir,
                )
            }
            other => {
                eprintln!("adapter: unexpected {other:?}");
                return ExitCode::from(1);
            }
        };
        match mode.as_str() {
            "crash" => {
                eprintln!("adapter: segmentation fault while handling {case_id}");
                return ExitCode::from(3);
            }
            "garbage" => {
                writeln!(out, "this is not json").unwrap();
                out.flush().unwrap();
                continue;
            }
            "wrong-case" => {
                say(
                    &mut out,
                    &Message::Result {
                        case_id: format!("{case_id}-x"),
                        mask: PathBuf::from("nowhere.nii"),
                        confidence: 1.0,
                    },
                );
                continue;
            }
            "slow" => thread::sleep(Duration::from_secs(30)),
            _ => {}
        }
        let reply = match oracle(case_id.clone(), inputs, prompts, out_dir) {
            Ok((path, confidence, mask)) => {
                let written = if mode == "nonbinary" {
                    let mut v: Volume = mask.to_volume();
                    v.data.iter_mut().for_each(|x| *x *= 2.0);
                    write_volume(&path, &v, Dtype::Uint8, false)
                } else {
                    write_mask(&path, &mask)
                };
                match written {
                    Ok(()) => Message::Result {
                        case_id,
                        mask: path,
                        confidence,
                    },
                    Err(e) => Message::Error {
                        case_id: Some(case_id),
                        message: e.to_string(),
                    },
                }
            }
            Err(message) => Message::Error {
                case_id: Some(case_id),
                message,
            },
        };
        say(&mut out, &reply);
    }
    ExitCode::SUCCESS
}
