//! Reference segmenter backend speaking `axiseg-seg/1` on stdin/stdout.
//!
//! `uniform` answers every pixel with equal probabilities. `oracle` answers
//! with the (optionally noisy) ground-truth slice; the request id doubles as
//! the slice index because the parent sends slices in order starting at 0.
//! `--fault` injects one misbehaviour for testing the parent side.

use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use axiseg::error::{Error, Result};
use axiseg::io::read_labels;
use axiseg::segmenter::protocol::{
    accept_handshake, read_line, read_request, write_f32s, write_json_line, write_response,
    ResponseHeader,
};
use axiseg::segmenter::external::AXIS_ENV;
use axiseg::segmenter::{NoiseConfig, OracleSegmenter, SliceSegmenter};
use axiseg::volume::{Grid2, ProbMap};
use axiseg::Axis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Fault {
    /// Reply to the handshake with a line that is not JSON.
    Handshake,
    /// Answer with an id one past the request's.
    WrongId,
    /// Send a response header and only half the payload, then exit.
    ShortRead,
    /// Exit with status 1 without answering.
    Crash,
    /// Answer with probabilities that do not sum to one.
    BadProbs,
}

#[derive(Debug, Parser)]
#[command(name = "axiseg-backend", about = "Reference axiseg-seg/1 backend")]
struct Args {
    #[command(subcommand)]
    mode: Mode,
    #[arg(long, value_enum, global = true)]
    fault: Option<Fault>,
    /// Zero-based request at which the fault fires.
    #[arg(long, default_value_t = 0, global = true)]
    fault_at: u64,
}

#[derive(Debug, Subcommand)]
enum Mode {
    Uniform,
    Oracle {
        /// Ground-truth labels (RVOL).
        #[arg(long)]
        labels: PathBuf,
        /// Defaults to the value of AXISEG_AXIS.
        #[arg(long)]
        axis: Option<Axis>,
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("axiseg-backend: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(args: &Args) -> Result<()> {
    let oracle = match &args.mode {
        Mode::Uniform => None,
        Mode::Oracle { labels, axis, eps, seed } => {
            let axis = match axis {
                Some(a) => *a,
                None => std::env::var(AXIS_ENV)
                    .map_err(|_| Error::Config(format!("no --axis given and {AXIS_ENV} is unset")))?
                    .parse()?,
            };
            let gt = Arc::new(read_labels(labels)?);
            let mut noise = NoiseConfig::uniform(0.0, *seed);
            noise.epsilon.insert(axis, *eps);
            Some(OracleSegmenter::new(gt, axis, &noise)?)
        }
    };
    let supported = oracle.as_ref().map(|o| o.classes().count());

    let stdin = io::stdin();
    let mut input = BufReader::new(stdin.lock());
    let stdout = io::stdout();
    let mut output = BufWriter::new(stdout.lock());

    if args.fault == Some(Fault::Handshake) {
        let _ = read_line(&mut input);
        eprintln!("axiseg-backend: fault: garbled handshake");
        writeln!(output, "hello?").and_then(|_| output.flush()).map_err(io_err)?;
        return Ok(());
    }
    let classes = accept_handshake(&mut input, &mut output, supported)?;

    let mut served = 0u64;
    while let Some((id, image)) = read_request(&mut input)? {
        let map = match &oracle {
            Some(o) => ProbMap::one_hot(&o.labels(id as usize, image.h(), image.w())?, classes),
            None => uniform(classes, &image)?,
        };
        let fault = args.fault.filter(|_| served == args.fault_at);
        match fault {
            None | Some(Fault::Handshake) => write_response(&mut output, id, &map)?,
            Some(Fault::WrongId) => {
                eprintln!("axiseg-backend: fault: answering request {id} as {}", id + 1);
                write_response(&mut output, id + 1, &map)?;
            }
            Some(Fault::ShortRead) => {
                eprintln!("axiseg-backend: fault: truncating response {id}");
                let half = &map.data()[..map.data().len() / 2];
                write_json_line(&mut output, &ResponseHeader { id })
                    .and_then(|_| write_f32s(&mut output, half))
                    .and_then(|_| output.flush())
                    .map_err(io_err)?;
                return Ok(());
            }
            Some(Fault::Crash) => {
                eprintln!("axiseg-backend: fault: crashing on request {id}");
                std::process::exit(1);
            }
            Some(Fault::BadProbs) => {
                eprintln!("axiseg-backend: fault: unnormalized response {id}");
                let bad = ProbMap::new(classes, image.h(), image.w(), vec![0.9; map.data().len()])?;
                write_response(&mut output, id, &bad)?;
            }
        }
        served += 1;
    }
    Ok(())
}

fn uniform(classes: usize, image: &Grid2<f32>) -> Result<ProbMap> {
    let p = 1.0 / classes as f32;
    ProbMap::new(classes, image.h(), image.w(), vec![p; classes * image.h() * image.w()])
}

fn io_err(e: io::Error) -> Error {
    Error::Backend { message: format!("writing stdout: {e}"), stderr_tail: String::new() }
}
