use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use skystream_cli::cli::Cli;
use skystream_core::stream::StopSignal;

fn init_logging(level: &str) {
    env_logger::Builder::new()
        .parse_filters(level)
        .format(|buf, rec| {
            let msg = rec.args().to_string().replace('\\', "\\\\").replace('"', "\\\"");
            writeln!(buf, "ts={} level={} target={} msg=\"{msg}\"", buf.timestamp_millis(), rec.level(), rec.target())
        })
        .target(env_logger::Target::Stderr)
        .init();
}

/// Raises `stop` on Ctrl-C.
fn watch_interrupt(stop: StopSignal) {
    std::thread::spawn(move || {
        let Ok(rt) = tokio::runtime::Builder::new_current_thread().enable_all().build() else { return };
        if rt.block_on(tokio::signal::ctrl_c()).is_ok() {
            log::info!("interrupted, finishing up");
            stop.stop();
        }
    });
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match cli.resolve_config(std::env::vars().collect()) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("skystream: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if cli.print_config {
        print!("{}", cfg.to_toml());
        return ExitCode::SUCCESS;
    }
    init_logging(&cfg.log_level);
    let stop = StopSignal::new();
    if cli.stops_on_interrupt() {
        watch_interrupt(stop.clone());
    }
    match cli.run(&cfg, &stop) {
        Ok(report) => {
            let mut out = std::io::stdout().lock();
            let _ = report.write_to(&mut out);
            match report.failure {
                Some(why) => {
                    log::error!("{why}");
                    ExitCode::from(1)
                }
                None => ExitCode::SUCCESS,
            }
        }
        Err(e) => {
            eprintln!("skystream: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
