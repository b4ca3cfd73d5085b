mod args;
mod commands;
mod manifest;
mod report;
mod settings;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("bad arguments");
            eprintln!("error[InvalidArgument]: {}", line.trim_start_matches("error: "));
            std::process::exit(2);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::TrainPrior(a) => commands::train_prior(a),
        Command::Adapt(a) => commands::adapt_cmd(a),
        Command::Lift(a) => commands::lift_cmd(a),
        Command::Augment(a) => commands::augment_cmd(a),
        Command::Eval(a) => commands::eval_cmd(a),
        Command::Stats(a) => commands::stats_cmd(a),
    };
    if let Err(e) = result {
        let msg = e.to_string().replace('\n', " ");
        eprintln!("error[{}]: {msg}", e.class());
        std::process::exit(1);
    }
}
