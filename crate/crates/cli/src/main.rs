//! `sketchforge`: fit pen strokes to an image, render them, and plan them for a plotter.
//!
//! Exit codes: 0 on success, 2 for invalid input (arguments, files, formats,
//! geometry), 3 when optimisation hits a non-finite value.

mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;
use sketchforge_core::{par, Error};

use args::{Cli, Command};

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = cli
        .threads
        .map_or(Ok(()), par::set_threads)
        .and_then(|()| match &cli.command {
            Command::Fit(a) => commands::fit(a),
            Command::Plot(a) => commands::plot(a),
            Command::Render(a) => commands::render_cmd(a),
        });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
